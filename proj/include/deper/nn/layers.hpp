// Parameter registry, fused attention ops, and the standard pre-norm
// residual blocks every module is assembled from.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deper/nn/autograd.hpp"
#include "deper/rng.hpp"

namespace deper::nn {

// Named parameter leaves in deterministic insertion order. Names are
// hierarchical ("enc.layer0.text.self.wq") so whole modules can be selected
// by prefix for freezing and checkpointing.
class ParamStore {
public:
    // init_std < 0 selects Xavier (sqrt(2/(fan_in+fan_out))); 0 gives zeros.
    Var add(const std::string& name, int rows, int cols, double init_std, Rng& rng);
    Var add_fill(const std::string& name, int rows, int cols, double fill);

    Var get(const std::string& name) const;
    bool has(const std::string& name) const { return map_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    std::size_t element_count() const;
    std::size_t element_count_with_prefix(const std::string& prefix) const;
    std::uint64_t content_hash() const;
    void zero_grads();

private:
    std::vector<std::string> names_;
    std::map<std::string, Var> map_;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update to `trainable`, then clears every gradient in the
    // store (frozen parameters included, so stale gradients never leak).
    void step(ParamStore& store, const std::vector<std::string>& trainable);

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    Mat& moment_m(const std::string& name, const Var& p);
    Mat& moment_v(const std::string& name, const Var& p);
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Mat> m_, v_;
};

// ----- fused attention -----

struct AttentionParams {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    static AttentionParams create(ParamStore& store, const std::string& prefix, int dim,
                                  Rng& rng);
    static std::size_t param_count(int dim) {
        return 4u * static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim) +
               4u * static_cast<std::size_t>(dim);
    }
};

// Standard multi-head attention as a single graph node. key_mask entries of 0
// remove the key from every softmax exactly (the weight underflows to 0).
Var multihead_attention(const Var& q_in, const Var& kv_in, const AttentionParams& p, int heads,
                        const Vec* key_mask = nullptr);

struct PoolAttentionParams {
    Var wq, bq, wk, bk;
    static PoolAttentionParams create(ParamStore& store, const std::string& prefix, int dim,
                                      Rng& rng);
    static std::size_t param_count(int dim) {
        return 2u * static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim) +
               2u * static_cast<std::size_t>(dim);
    }
};

// Single-query attention whose output is a convex combination of the raw
// context rows (values unprojected). Throws Error on a fully masked context.
Var pooled_attention(const Var& query, const Var& context, const PoolAttentionParams& p,
                     const Vec* key_mask = nullptr);

// ----- blocks -----

struct LayerNormParams {
    Var gain, bias;
    static LayerNormParams create(ParamStore& store, const std::string& prefix, int dim);
    static std::size_t param_count(int dim) { return 2u * static_cast<std::size_t>(dim); }
};

struct FfnParams {
    Var w1, b1, w2, b2;
    static FfnParams create(ParamStore& store, const std::string& prefix, int dim, int mult,
                            Rng& rng);
    static std::size_t param_count(int dim, int mult) {
        const auto d = static_cast<std::size_t>(dim);
        const auto h = static_cast<std::size_t>(dim * mult);
        return d * h + h + h * d + d;
    }
};

struct SublayerParams {
    LayerNormParams ln;
    AttentionParams attn;
};

struct FfnSublayerParams {
    LayerNormParams ln;
    FfnParams ffn;
};

// x + MHA(LN(x), LN(x))
Var self_attention_block(const Var& x, const SublayerParams& p, int heads,
                         const Vec* mask = nullptr);
// x + MHA(LN(x), ctx)
Var cross_attention_block(const Var& x, const Var& ctx, const SublayerParams& p, int heads,
                          const Vec* ctx_mask = nullptr);
// x + W2 relu(LN(x) W1 + b1) + b2
Var ffn_block(const Var& x, const FfnSublayerParams& p);

// Causal self-attention: position i attends to positions <= i.
Var causal_self_attention_block(const Var& x, const SublayerParams& p, int heads);

// Sinusoidal position encoding for arbitrary real positions.
Mat sinusoidal_encoding(const std::vector<double>& positions, int dim);

}  // namespace deper::nn
