#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "atlasreg/net_ops.hpp"
#include "atlasreg/types.hpp"

namespace atlasreg {

// Encoder-decoder shape: eight encoder convs (two per level, four levels)
// with three 2x max-pools between levels, then ten decoder convs with three
// trilinear 2x upsamplings and skip concatenations at equal resolution.
// Channels double at each pool: C, 2C, 4C, 8C. The last decoder conv is
// linear and emits the 3 displacement components.
struct NetConfig {
    int base_channels = 16;
    int kernel = 3;
    double leaky_slope = 0.2;
    std::array<std::uint8_t, 8> encoder_bn{1, 1, 1, 1, 1, 1, 1, 1};
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    double final_init_scale = 1e-5;
    std::uint64_t seed = 0;

    void validate() const;
    std::string canonical() const;
    std::uint64_t hash() const;
};

// Spatial dims padded up to multiples of 8 so three poolings stay even.
struct PaddingPlan {
    Dims3 original;
    Dims3 padded;
    int lo[3] = {0, 0, 0};
    int hi[3] = {0, 0, 0};

    static PaddingPlan for_dims(const Dims3 &d);
};

Tensor4 pad_to_tensor(const Volume3 &v, const PaddingPlan &plan);
Volume3 crop_to_volume(const Tensor4 &t, const PaddingPlan &plan, const Vec3 &spacing);
DispField crop_to_field(const Tensor4 &t, const PaddingPlan &plan, const Vec3 &spacing);
Tensor4 pad_field_grad(const DispField &g, const PaddingPlan &plan);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One learnable buffer plus its gradient and Adam moments.
struct ParamBuf {
    std::string name;
    std::vector<double> val, grad, m, v;

    explicit ParamBuf(std::string n, std::size_t size, double fill = 0.0)
        : name(std::move(n)), val(size, fill), grad(size, 0.0), m(size, 0.0), v(size, 0.0) {}
};

enum class NetMode : std::uint8_t { train, infer };

class Network {
  public:
    explicit Network(const NetConfig &cfg);

    // Pads the input per the plan for its dims, runs the net, crops the
    // 3-channel output back to the original dims. Train mode retains the
    // activation caches needed by backward.
    DispField forward(const Volume3 &p, NetMode mode);

    // Accumulates parameter gradients from d(loss)/d(field). Requires a
    // preceding train-mode forward; caches stay valid until the next forward.
    void backward(const DispField &field_grad);

    void zero_grad();
    void adam_step(const AdamConfig &opt);

    std::size_t param_count() const;
    std::vector<ParamBuf> &params() { return params_; }
    const std::vector<ParamBuf> &params() const { return params_; }
    const NetConfig &config() const { return cfg_; }
    long step_count() const { return step_; }

    void save_checkpoint(const std::string &path) const;
    void load_checkpoint(const std::string &path);

    // Running batch-norm statistics, checkpointed but not optimized.
    struct BnRunning {
        std::vector<double> mean, var;
    };
    const std::vector<BnRunning> &bn_running() const { return bn_; }

  private:
    struct Block {
        int w = -1, b = -1;           // indices into params_
        int gamma = -1, shift = -1;   // indices into params_ when bn
        int bn_slot = -1;             // index into bn_ when bn
        int in_c = 0, out_c = 0;
        bool has_bn = false;
        bool has_act = true;
        // caches (train mode)
        Tensor4 in, convout, preact;
        BnCache bn_cache;
    };

    Tensor4 run_block(Block &blk, Tensor4 x, NetMode mode);
    Tensor4 block_backward(Block &blk, const Tensor4 &gout);

    NetConfig cfg_;
    std::vector<ParamBuf> params_;
    std::vector<BnRunning> bn_;
    std::vector<Block> enc_;      // 8
    std::vector<Block> dec_;      // 10
    long step_ = 0;

    // forward caches
    bool cache_valid_ = false;
    PaddingPlan plan_;
    Vec3 in_spacing_{1, 1, 1};
    PoolCache pool_cache_[3];
    Dims3 up_in_dims_[3];
    int skip_channels_[3] = {0, 0, 0};
};

}  // namespace atlasreg
