#pragma once

#include "atlasreg/types.hpp"
#include "atlasreg/xform.hpp"

namespace atlasreg {

struct LossWeights {
    double lambda_cc = 0.1;
    double lambda_gd = 0.85;
    double lambda_ls = 0.05;

    void validate() const {
        if (lambda_cc < 0 || lambda_gd < 0 || lambda_ls < 0)
            throw ArgumentError("LossWeights: weights must be non-negative");
        if (lambda_cc == 0 && lambda_gd == 0 && lambda_ls == 0)
            throw ArgumentError("LossWeights: at least one weight must be > 0");
    }
};

enum class GdReduction : std::uint8_t { sum, mean };

struct NccResult {
    double similarity = 0.0;  // Pearson correlation in [-1, 1]
    bool degenerate = false;  // a constant argument makes the correlation undefined
};

// Whole-volume Pearson correlation of the two images. Degenerate inputs
// (zero variance on either side) return similarity 0 with the flag set
// instead of throwing, so training on pathological crops can continue.
NccResult ncc(const Volume3 &m, const Volume3 &w);

struct NccGradResult {
    double loss = 0.0;             // -similarity, the minimized term
    double similarity = 0.0;
    bool degenerate = false;
    std::vector<double> dloss_dw;  // per-voxel
};
NccGradResult ncc_loss_and_grad(const Volume3 &m, const Volume3 &w);

// Sum over forward differences of squared Euclidean norms of the 3-vector
// displacement differences, all three axes. Mean reduction divides by the
// number of difference terms. Axes of length 1 contribute no terms.
double grad_smoothness(const DispField &u, GdReduction reduction);
DispField grad_smoothness_grad(const DispField &u, GdReduction reduction);

// -sum(w * mu * (2*beta - 1)) / sum(mu): decreases as intensities inside beta
// rise above intensities in the band mu\beta.
double levelset_loss(const Volume3 &w, const Mask3 &beta, const Mask3 &mu);
std::vector<double> levelset_grad(const Volume3 &w, const Mask3 &beta, const Mask3 &mu);

struct LossBreakdown {
    double cc_similarity = 0.0;  // raw Pearson correlation
    double cc = 0.0;             // signed term, -similarity
    double gd = 0.0;
    double ls = 0.0;
    double total = 0.0;
    bool cc_degenerate = false;
    bool gd_degenerate = false;  // all axes length 1, no difference terms
    DispField grad_u;            // d(total)/du
};

// Composes pullback with the three losses and chains the full analytic
// gradient back onto the displacement field.
LossBreakdown total_loss(const Volume3 &m, const Volume3 &p, const DispField &u,
                         const Mask3 &beta, const Mask3 &mu, const LossWeights &weights,
                         GdReduction reduction = GdReduction::mean);

}  // namespace atlasreg
