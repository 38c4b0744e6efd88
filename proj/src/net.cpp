#include "atlasreg/net.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "atlasreg/rng.hpp"

namespace atlasreg {

void NetConfig::validate() const {
    if (base_channels < 1)
        throw ArgumentError("NetConfig: base_channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
        throw ArgumentError("NetConfig: kernel must be odd and positive");
    if (!(bn_eps > 0))
        throw ArgumentError("NetConfig: bn_eps must be > 0");
    if (!(bn_momentum > 0 && bn_momentum < 1))
        throw ArgumentError("NetConfig: bn_momentum must be in (0,1)");
}

std::string NetConfig::canonical() const {
    char buf[256];
    std::string bn;
    for (auto b : encoder_bn) bn += (b ? '1' : '0');
    std::snprintf(buf, sizeof(buf),
                  "base=%d;kernel=%d;slope=%.17g;bn=%s;bn_eps=%.17g;bn_mom=%.17g;final=%.17g;seed=%llu",
                  base_channels, kernel, leaky_slope, bn.c_str(), bn_eps, bn_momentum,
                  final_init_scale, static_cast<unsigned long long>(seed));
    return buf;
}

std::uint64_t NetConfig::hash() const {
    // FNV-1a 64.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : canonical()) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    return h;
}

PaddingPlan PaddingPlan::for_dims(const Dims3 &d) {
    require_positive_dims(d, "PaddingPlan");
    PaddingPlan p;
    p.original = d;
    const int dims_in[3] = {d.nx, d.ny, d.nz};
    int dims_out[3];
    for (int a = 0; a < 3; ++a) {
        const int n = dims_in[a];
        const int padded = ((n + 7) / 8) * 8;
        dims_out[a] = padded;
        p.lo[a] = (padded - n) / 2;
        p.hi[a] = padded - n - p.lo[a];
    }
    p.padded = {dims_out[0], dims_out[1], dims_out[2]};
    return p;
}

Tensor4 pad_to_tensor(const Volume3 &v, const PaddingPlan &plan) {
    if (v.dims != plan.original)
        throw DimsError("pad_to_tensor: volume dims do not match plan");
    Tensor4 t(1, plan.padded);
    for (int z = 0; z < v.dims.nz; ++z)
        for (int y = 0; y < v.dims.ny; ++y) {
            const double *src = v.data.data() + v.dims.idx(0, y, z);
            double *dst = t.d.data() + plan.padded.idx(plan.lo[0], y + plan.lo[1], z + plan.lo[2]);
            std::memcpy(dst, src, sizeof(double) * static_cast<std::size_t>(v.dims.nx));
        }
    return t;
}

Volume3 crop_to_volume(const Tensor4 &t, const PaddingPlan &plan, const Vec3 &spacing) {
    if (t.c != 1 || t.sd != plan.padded)
        throw DimsError("crop_to_volume: tensor shape does not match plan");
    Volume3 v(plan.original, spacing);
    for (int z = 0; z < v.dims.nz; ++z)
        for (int y = 0; y < v.dims.ny; ++y) {
            const double *src = t.d.data() + plan.padded.idx(plan.lo[0], y + plan.lo[1], z + plan.lo[2]);
            double *dst = v.data.data() + v.dims.idx(0, y, z);
            std::memcpy(dst, src, sizeof(double) * static_cast<std::size_t>(v.dims.nx));
        }
    return v;
}

DispField crop_to_field(const Tensor4 &t, const PaddingPlan &plan, const Vec3 &spacing) {
    if (t.c != 3 || t.sd != plan.padded)
        throw DimsError("crop_to_field: expected a 3-channel tensor matching the plan");
    DispField u(plan.original, spacing);
    for (int c = 0; c < 3; ++c) {
        const double *src_ch = t.ch(c);
        for (int z = 0; z < u.dims.nz; ++z)
            for (int y = 0; y < u.dims.ny; ++y)
                for (int x = 0; x < u.dims.nx; ++x)
                    u.data[u.dims.idx(x, y, z) * 3 + c] =
                        src_ch[plan.padded.idx(x + plan.lo[0], y + plan.lo[1], z + plan.lo[2])];
    }
    return u;
}

Tensor4 pad_field_grad(const DispField &g, const PaddingPlan &plan) {
    if (g.dims != plan.original)
        throw DimsError("pad_field_grad: field dims do not match plan");
    Tensor4 t(3, plan.padded);
    for (int c = 0; c < 3; ++c) {
        double *dst_ch = t.ch(c);
        for (int z = 0; z < g.dims.nz; ++z)
            for (int y = 0; y < g.dims.ny; ++y)
                for (int x = 0; x < g.dims.nx; ++x)
                    dst_ch[plan.padded.idx(x + plan.lo[0], y + plan.lo[1], z + plan.lo[2])] =
                        g.data[g.dims.idx(x, y, z) * 3 + c];
    }
    return t;
}

namespace {

std::size_t conv_w_size(int in_c, int out_c, int k) {
    return static_cast<std::size_t>(out_c) * in_c * k * k * k;
}

}  // namespace

Network::Network(const NetConfig &cfg) : cfg_(cfg) {
    cfg_.validate();
    const int C = cfg_.base_channels;
    const int k = cfg_.kernel;

    // Channel plan. Encoder: two convs per level, pool between levels.
    // Decoder: three convs per upsampled level, then a linear head.
    struct Plan {
        int in_c, out_c;
        bool act;
    };
    const int C2 = 2 * C, C4 = 4 * C, C8 = 8 * C;
    const std::vector<Plan> enc_plan = {
        {1, C, true},  {C, C, true},
        {C, C2, true}, {C2, C2, true},
        {C2, C4, true}, {C4, C4, true},
        {C4, C8, true}, {C8, C8, true},
    };
    const std::vector<Plan> dec_plan = {
        {C8 + C4, C4, true}, {C4, C4, true}, {C4, C4, true},
        {C4 + C2, C2, true}, {C2, C2, true}, {C2, C2, true},
        {C2 + C, C, true},   {C, C, true},   {C, C, true},
        {C, 3, false},
    };

    auto add_block = [&](const Plan &p, bool bn, const std::string &name) {
        Block blk;
        blk.in_c = p.in_c;
        blk.out_c = p.out_c;
        blk.has_act = p.act;
        blk.has_bn = bn;
        params_.emplace_back(name + ".w", conv_w_size(p.in_c, p.out_c, k));
        blk.w = static_cast<int>(params_.size()) - 1;
        params_.emplace_back(name + ".b", static_cast<std::size_t>(p.out_c));
        blk.b = static_cast<int>(params_.size()) - 1;
        if (bn) {
            params_.emplace_back(name + ".bn_gamma", static_cast<std::size_t>(p.out_c), 1.0);
            blk.gamma = static_cast<int>(params_.size()) - 1;
            params_.emplace_back(name + ".bn_shift", static_cast<std::size_t>(p.out_c), 0.0);
            blk.shift = static_cast<int>(params_.size()) - 1;
            BnRunning run;
            run.mean.assign(p.out_c, 0.0);
            run.var.assign(p.out_c, 1.0);
            bn_.push_back(std::move(run));
            blk.bn_slot = static_cast<int>(bn_.size()) - 1;
        }
        return blk;
    };

    for (std::size_t i = 0; i < enc_plan.size(); ++i)
        enc_.push_back(add_block(enc_plan[i], cfg_.encoder_bn[i] != 0, "enc" + std::to_string(i)));
    for (std::size_t i = 0; i < dec_plan.size(); ++i)
        dec_.push_back(add_block(dec_plan[i], false, "dec" + std::to_string(i)));

    // Seeded init: He-uniform for hidden convs (leaky-aware gain), small
    // normal for the final conv so training starts near the identity warp.
    const double gain_denom = 1.0 + cfg_.leaky_slope * cfg_.leaky_slope;
    auto init_block = [&](Block &blk, std::size_t salt, bool final_layer) {
        Rng rng(Rng::mix(cfg_.seed, 0xC0DE0000 + salt));
        auto &w = params_[blk.w].val;
        if (final_layer) {
            for (auto &x : w) x = rng.normal() * cfg_.final_init_scale;
        } else {
            const double fan_in = static_cast<double>(blk.in_c) * k * k * k;
            const double bound = std::sqrt(6.0 / (gain_denom * fan_in));
            for (auto &x : w) x = rng.uniform(-bound, bound);
        }
        // biases, bn gamma/shift keep their fill values (0 / 1 / 0)
    };
    for (std::size_t i = 0; i < enc_.size(); ++i) init_block(enc_[i], i, false);
    for (std::size_t i = 0; i < dec_.size(); ++i)
        init_block(dec_[i], 100 + i, i + 1 == dec_.size());
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto &p : params_) n += p.val.size();
    return n;
}

Tensor4 Network::run_block(Block &blk, Tensor4 x, NetMode mode) {
    const bool train = (mode == NetMode::train);
    if (train) blk.in = x;
    Tensor4 y = conv3d_forward(x, params_[blk.w].val, params_[blk.b].val, blk.out_c, cfg_.kernel);
    if (blk.has_bn) {
        if (train) blk.convout = y;
        auto &run = bn_[blk.bn_slot];
        Tensor4 z = batchnorm_forward(y, params_[blk.gamma].val, params_[blk.shift].val,
                                      run.mean, run.var, train, cfg_.bn_eps, cfg_.bn_momentum,
                                      train ? &blk.bn_cache : nullptr);
        y = std::move(z);
    }
    if (blk.has_act) {
        if (train) blk.preact = y;
        y = leaky_relu_forward(y, cfg_.leaky_slope);
    }
    return y;
}

Tensor4 Network::block_backward(Block &blk, const Tensor4 &gout) {
    Tensor4 g = gout;
    if (blk.has_act)
        g = leaky_relu_backward(blk.preact, g, cfg_.leaky_slope);
    if (blk.has_bn)
        g = batchnorm_backward(blk.convout, params_[blk.gamma].val, blk.bn_cache, g,
                               &params_[blk.gamma].grad, &params_[blk.shift].grad);
    Tensor4 dx(blk.in_c, blk.in.sd);
    conv3d_backward(blk.in, params_[blk.w].val, blk.out_c, cfg_.kernel, g, &dx,
                    &params_[blk.w].grad, &params_[blk.b].grad);
    return dx;
}

DispField Network::forward(const Volume3 &p, NetMode mode) {
    plan_ = PaddingPlan::for_dims(p.dims);
    in_spacing_ = p.spacing;
    const bool train = (mode == NetMode::train);
    cache_valid_ = false;

    Tensor4 x = pad_to_tensor(p, plan_);

    // Encoder.
    x = run_block(enc_[0], std::move(x), mode);
    Tensor4 skip0 = run_block(enc_[1], std::move(x), mode);
    skip_channels_[0] = skip0.c;

    Tensor4 t = maxpool_forward(skip0, pool_cache_[0]);
    t = run_block(enc_[2], std::move(t), mode);
    Tensor4 skip1 = run_block(enc_[3], std::move(t), mode);
    skip_channels_[1] = skip1.c;

    t = maxpool_forward(skip1, pool_cache_[1]);
    t = run_block(enc_[4], std::move(t), mode);
    Tensor4 skip2 = run_block(enc_[5], std::move(t), mode);
    skip_channels_[2] = skip2.c;

    t = maxpool_forward(skip2, pool_cache_[2]);
    t = run_block(enc_[6], std::move(t), mode);
    t = run_block(enc_[7], std::move(t), mode);

    // Decoder.
    up_in_dims_[0] = t.sd;
    t = upsample2x_forward(t);
    t = concat_forward(t, skip2);
    if (!train) { skip2 = Tensor4(); }
    t = run_block(dec_[0], std::move(t), mode);
    t = run_block(dec_[1], std::move(t), mode);
    t = run_block(dec_[2], std::move(t), mode);

    up_in_dims_[1] = t.sd;
    t = upsample2x_forward(t);
    t = concat_forward(t, skip1);
    if (!train) { skip1 = Tensor4(); }
    t = run_block(dec_[3], std::move(t), mode);
    t = run_block(dec_[4], std::move(t), mode);
    t = run_block(dec_[5], std::move(t), mode);

    up_in_dims_[2] = t.sd;
    t = upsample2x_forward(t);
    t = concat_forward(t, skip0);
    if (!train) { skip0 = Tensor4(); }
    t = run_block(dec_[6], std::move(t), mode);
    t = run_block(dec_[7], std::move(t), mode);
    t = run_block(dec_[8], std::move(t), mode);
    t = run_block(dec_[9], std::move(t), mode);

    cache_valid_ = train;
    return crop_to_field(t, plan_, in_spacing_);
}

void Network::backward(const DispField &field_grad) {
    if (!cache_valid_)
        throw StateError("Network::backward: no cached train-mode forward");
    if (field_grad.dims != plan_.original)
        throw DimsError("Network::backward: field gradient dims do not match forward");

    Tensor4 g = pad_field_grad(field_grad, plan_);

    g = block_backward(dec_[9], g);
    g = block_backward(dec_[8], g);
    g = block_backward(dec_[7], g);
    g = block_backward(dec_[6], g);
    Tensor4 gup2(g.c - skip_channels_[0], g.sd), gskip0(skip_channels_[0], g.sd);
    concat_backward(g, gup2, gskip0);
    g = upsample2x_backward(gup2, up_in_dims_[2]);

    g = block_backward(dec_[5], g);
    g = block_backward(dec_[4], g);
    g = block_backward(dec_[3], g);
    Tensor4 gup1(g.c - skip_channels_[1], g.sd), gskip1(skip_channels_[1], g.sd);
    concat_backward(g, gup1, gskip1);
    g = upsample2x_backward(gup1, up_in_dims_[1]);

    g = block_backward(dec_[2], g);
    g = block_backward(dec_[1], g);
    g = block_backward(dec_[0], g);
    Tensor4 gup0(g.c - skip_channels_[2], g.sd), gskip2(skip_channels_[2], g.sd);
    concat_backward(g, gup0, gskip2);
    g = upsample2x_backward(gup0, up_in_dims_[0]);

    g = block_backward(enc_[7], g);
    g = block_backward(enc_[6], g);
    g = maxpool_backward(pool_cache_[2], g);
    for (std::size_t i = 0; i < g.size(); ++i) g.d[i] += gskip2.d[i];

    g = block_backward(enc_[5], g);
    g = block_backward(enc_[4], g);
    g = maxpool_backward(pool_cache_[1], g);
    for (std::size_t i = 0; i < g.size(); ++i) g.d[i] += gskip1.d[i];

    g = block_backward(enc_[3], g);
    g = block_backward(enc_[2], g);
    g = maxpool_backward(pool_cache_[0], g);
    for (std::size_t i = 0; i < g.size(); ++i) g.d[i] += gskip0.d[i];

    g = block_backward(enc_[1], g);
    block_backward(enc_[0], g);
}

void Network::zero_grad() {
    for (auto &p : params_)
        std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void Network::adam_step(const AdamConfig &opt) {
    if (!(opt.lr > 0))
        throw ArgumentError("adam_step: learning rate must be > 0");
    ++step_;
    const double corr1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_));
    const double corr2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_));
    for (auto &p : params_) {
        for (std::size_t i = 0; i < p.val.size(); ++i) {
            const double g = p.grad[i];
            p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
            p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
            const double mhat = p.m[i] / corr1;
            const double vhat = p.v[i] / corr2;
            p.val[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

// Checkpoint layout: ASCII header, then raw little-endian f64 in registry
// order -- all parameter values, then all Adam first moments, then all second
// moments, then the batch-norm running means and variances.
void Network::save_checkpoint(const std::string &path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorClass::internal, "cannot open for writing: " + path);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg_.hash()));
    f << "MNET1\n"
      << "confighash " << hex << "\n"
      << "step " << step_ << "\n"
      << "tensors " << params_.size() << "\n"
      << "bn " << bn_.size() << "\n\n";
    auto put = [&](const std::vector<double> &v) {
        f.write(reinterpret_cast<const char *>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    for (const auto &p : params_) put(p.val);
    for (const auto &p : params_) put(p.m);
    for (const auto &p : params_) put(p.v);
    for (const auto &b : bn_) {
        put(b.mean);
        put(b.var);
    }
    if (!f)
        throw Error(ErrorClass::internal, "write failed: " + path);
}

void Network::load_checkpoint(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw MissingFileError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "MNET1")
        throw FormatError(path + ": bad checkpoint magic");
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(cfg_.hash()));
    if (!std::getline(f, line) || line != std::string("confighash ") + hex)
        throw FormatError(path + ": checkpoint config hash does not match this network config");
    long step = 0;
    {
        if (!std::getline(f, line))
            throw FormatError(path + ": truncated header");
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> step) || key != "step")
            throw FormatError(path + ": malformed step line");
    }
    std::size_t ntensors = 0, nbn = 0;
    {
        if (!std::getline(f, line))
            throw FormatError(path + ": truncated header");
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> ntensors) || key != "tensors")
            throw FormatError(path + ": malformed tensors line");
    }
    {
        if (!std::getline(f, line))
            throw FormatError(path + ": truncated header");
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> nbn) || key != "bn")
            throw FormatError(path + ": malformed bn line");
    }
    if (!std::getline(f, line) || !line.empty())
        throw FormatError(path + ": expected blank line before payload");
    if (ntensors != params_.size() || nbn != bn_.size())
        throw FormatError(path + ": tensor table does not match this network config");

    auto get = [&](std::vector<double> &v) {
        f.read(reinterpret_cast<char *>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (static_cast<std::size_t>(f.gcount()) != v.size() * sizeof(double))
            throw FormatError(path + ": checkpoint payload truncated");
        for (double x : v)
            if (!std::isfinite(x))
                throw FormatError(path + ": non-finite checkpoint value");
    };
    for (auto &p : params_) get(p.val);
    for (auto &p : params_) get(p.m);
    for (auto &p : params_) get(p.v);
    for (auto &b : bn_) {
        get(b.mean);
        get(b.var);
    }
    char extra;
    if (f.read(&extra, 1))
        throw FormatError(path + ": trailing bytes after checkpoint payload");
    step_ = step;
    cache_valid_ = false;
    zero_grad();
}

}  // namespace atlasreg
