#include "atlasreg/loss.hpp"

#include <cmath>

namespace atlasreg {

namespace {

// Sums below this are treated as zero variance. Constant inputs can land a
// hair above exact zero when the mean itself rounds.
constexpr double kVarianceFloor = 1e-24;

struct PearsonParts {
    double mean_m = 0.0, mean_w = 0.0;
    double smw = 0.0;  // sum of centered products
    double smm = 0.0;  // sum of squared centered m
    double sww = 0.0;  // sum of squared centered w
    bool degenerate = false;
};

// Sequential accumulation keeps losses bit-reproducible across thread counts.
PearsonParts pearson_parts(const Volume3 &m, const Volume3 &w) {
    require_same_dims(m.dims, w.dims, "ncc");
    const std::size_t n = m.data.size();
    if (n == 0)
        throw ArgumentError("ncc: empty volumes");
    PearsonParts p;
    double sm = 0.0, sw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sm += m.data[i];
        sw += w.data[i];
    }
    p.mean_m = sm / static_cast<double>(n);
    p.mean_w = sw / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = m.data[i] - p.mean_m;
        const double b = w.data[i] - p.mean_w;
        p.smw += a * b;
        p.smm += a * a;
        p.sww += b * b;
    }
    p.degenerate = (p.smm <= kVarianceFloor || p.sww <= kVarianceFloor);
    return p;
}

}  // namespace

NccResult ncc(const Volume3 &m, const Volume3 &w) {
    const PearsonParts p = pearson_parts(m, w);
    NccResult r;
    r.degenerate = p.degenerate;
    if (!p.degenerate)
        r.similarity = p.smw / std::sqrt(p.smm * p.sww);
    return r;
}

NccGradResult ncc_loss_and_grad(const Volume3 &m, const Volume3 &w) {
    const PearsonParts p = pearson_parts(m, w);
    NccGradResult r;
    r.degenerate = p.degenerate;
    r.dloss_dw.assign(w.data.size(), 0.0);
    if (p.degenerate) {
        r.similarity = 0.0;
        r.loss = 0.0;
        return r;
    }
    const double denom = std::sqrt(p.smm * p.sww);
    r.similarity = p.smw / denom;
    r.loss = -r.similarity;
    // d(similarity)/dw_i = (mc_i - (smw/sww) * wc_i) / denom; centering terms
    // drop out because the centered sums are zero.
    const double ratio = p.smw / p.sww;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        const double mc = m.data[i] - p.mean_m;
        const double wc = w.data[i] - p.mean_w;
        r.dloss_dw[i] = -(mc - ratio * wc) / denom;
    }
    return r;
}

namespace {

std::size_t smoothness_term_count(const Dims3 &d) {
    return static_cast<std::size_t>(d.nx - 1) * d.ny * d.nz +
           static_cast<std::size_t>(d.nx) * (d.ny - 1) * d.nz +
           static_cast<std::size_t>(d.nx) * d.ny * (d.nz - 1);
}

}  // namespace

double grad_smoothness(const DispField &u, GdReduction reduction) {
    const Dims3 d = u.dims;
    const std::size_t nterms = smoothness_term_count(d);
    if (nterms == 0) return 0.0;

    double acc = 0.0;
    const int steps[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int axis = 0; axis < 3; ++axis) {
        const int ex = steps[axis][0], ey = steps[axis][1], ez = steps[axis][2];
        for (int z = 0; z + ez < d.nz; ++z)
            for (int y = 0; y + ey < d.ny; ++y)
                for (int x = 0; x + ex < d.nx; ++x) {
                    const std::size_t a = d.idx(x, y, z) * 3;
                    const std::size_t b = d.idx(x + ex, y + ey, z + ez) * 3;
                    const double d0 = u.data[b] - u.data[a];
                    const double d1 = u.data[b + 1] - u.data[a + 1];
                    const double d2 = u.data[b + 2] - u.data[a + 2];
                    acc += d0 * d0 + d1 * d1 + d2 * d2;
                }
    }
    if (reduction == GdReduction::mean)
        acc /= static_cast<double>(nterms);
    return acc;
}

DispField grad_smoothness_grad(const DispField &u, GdReduction reduction) {
    const Dims3 d = u.dims;
    DispField g(d, u.spacing);
    const std::size_t nterms = smoothness_term_count(d);
    if (nterms == 0) return g;

    const double scale =
        (reduction == GdReduction::mean) ? 2.0 / static_cast<double>(nterms) : 2.0;
    const int steps[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int axis = 0; axis < 3; ++axis) {
        const int ex = steps[axis][0], ey = steps[axis][1], ez = steps[axis][2];
        for (int z = 0; z + ez < d.nz; ++z)
            for (int y = 0; y + ey < d.ny; ++y)
                for (int x = 0; x + ex < d.nx; ++x) {
                    const std::size_t a = d.idx(x, y, z) * 3;
                    const std::size_t b = d.idx(x + ex, y + ey, z + ez) * 3;
                    for (int c = 0; c < 3; ++c) {
                        const double diff = u.data[b + c] - u.data[a + c];
                        g.data[b + c] += scale * diff;
                        g.data[a + c] -= scale * diff;
                    }
                }
    }
    return g;
}

namespace {

double band_sum_checked(const Volume3 &w, const Mask3 &beta, const Mask3 &mu) {
    require_same_dims(w.dims, beta.dims, "levelset_loss");
    require_same_dims(w.dims, mu.dims, "levelset_loss");
    std::size_t sum_mu = 0;
    for (std::size_t i = 0; i < mu.data.size(); ++i) {
        if (beta.data[i] && !mu.data[i])
            throw ArgumentError("levelset_loss: mu does not contain beta");
        sum_mu += mu.data[i];
    }
    if (sum_mu == 0)
        throw ArgumentError("levelset_loss: band mu is empty");
    return static_cast<double>(sum_mu);
}

}  // namespace

double levelset_loss(const Volume3 &w, const Mask3 &beta, const Mask3 &mu) {
    const double sum_mu = band_sum_checked(w, beta, mu);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        if (!mu.data[i]) continue;
        acc += w.data[i] * (beta.data[i] ? 1.0 : -1.0);
    }
    return -acc / sum_mu;
}

std::vector<double> levelset_grad(const Volume3 &w, const Mask3 &beta, const Mask3 &mu) {
    const double sum_mu = band_sum_checked(w, beta, mu);
    std::vector<double> g(w.data.size(), 0.0);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        if (!mu.data[i]) continue;
        g[i] = -(beta.data[i] ? 1.0 : -1.0) / sum_mu;
    }
    return g;
}

LossBreakdown total_loss(const Volume3 &m, const Volume3 &p, const DispField &u,
                         const Mask3 &beta, const Mask3 &mu, const LossWeights &weights,
                         GdReduction reduction) {
    weights.validate();
    require_same_dims(m.dims, u.dims, "total_loss");

    const PullbackResult pb = pullback(p, u);

    LossBreakdown out;
    const NccGradResult cc = ncc_loss_and_grad(m, pb.warped);
    out.cc_similarity = cc.similarity;
    out.cc = cc.loss;
    out.cc_degenerate = cc.degenerate;

    out.gd = grad_smoothness(u, reduction);
    out.gd_degenerate = (smoothness_term_count(u.dims) == 0);

    out.ls = levelset_loss(pb.warped, beta, mu);
    const std::vector<double> ls_grad_w = levelset_grad(pb.warped, beta, mu);

    out.total = weights.lambda_cc * out.cc + weights.lambda_gd * out.gd + weights.lambda_ls * out.ls;
    if (!std::isfinite(out.total))
        throw NumericError("total_loss: non-finite loss");

    // Chain d/dw terms through the sample Jacobian; the smoothness term acts
    // on u directly.
    std::vector<double> dw(pb.warped.data.size());
    for (std::size_t i = 0; i < dw.size(); ++i)
        dw[i] = weights.lambda_cc * cc.dloss_dw[i] + weights.lambda_ls * ls_grad_w[i];
    out.grad_u = pullback_grad(dw, pb.jac);

    const DispField gd_grad = grad_smoothness_grad(u, reduction);
    for (std::size_t i = 0; i < out.grad_u.data.size(); ++i)
        out.grad_u.data[i] += weights.lambda_gd * gd_grad.data[i];
    return out;
}

}  // namespace atlasreg
