// Trajectory decoder: M box queries reconstruct the attention trajectory in
// parallel, steered per layer by the trajectory latent (single-key cross
// attention) and modulated by the subject embedding through FiLM.
#pragma once

#include <vector>

#include "deper/dual_encoder.hpp"
#include "deper/nn/layers.hpp"
#include "deper/types.hpp"

namespace deper::traj_decoder {

struct LayerWeights {
    nn::SublayerParams self_attn;
    nn::SublayerParams cross_latent;
    nn::SublayerParams cross_ctx;
    nn::Var film_wg, film_bg;  // z_s -> gamma
    nn::Var film_wb, film_bb;  // z_s -> beta
    nn::FfnSublayerParams ffn;
};

struct Weights {
    nn::Var traj_query;   // 1 x d, yields z_traj from Z_dual
    nn::Var box_queries;  // m_max x d
    nn::PoolAttentionParams latent_pool;
    nn::Var w_ctx_img, b_ctx_img;  // img_dim -> d, decoder-side image projection
    std::vector<LayerWeights> layers;
    nn::Var head_w, head_b;  // d -> 5 (4 coords + validity), sigmoid-squashed

    static Weights create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
    static std::size_t param_count(const ModelConfig& cfg);
};

struct Prediction {
    nn::Var boxes;     // M x 4 in [0,1]
    nn::Var validity;  // M x 1 in [0,1]
};

// Single-query cross-attention of q_traj over Z_dual. Callers substitute z_s
// when cfg.use_traj_latent is off.
nn::Var extract_latent(const dual_encoder::Streams& zdual, const Weights& w);

// Per layer: Q <- Cross(Self(Q), z_traj); Q <- FFN(FiLM(Cross(Q, [V; L0]), z_s)).
// FiLM applies (1 + gamma) * h + beta, so zero-initialized maps start as the
// identity; with use_film=false the step is skipped entirely.
Prediction decode(const nn::Var& z_traj, const nn::Var& z_s, const ImageFeatures& img,
                  const nn::Var& text0, const nn::Vec& text_mask, const Weights& w,
                  const ModelConfig& cfg);

// (sum_i v_i SL1(b_i, target_i)) / (sum_i v_i + eps), SL1 summed over coords.
nn::Var box_loss(const Prediction& pred, const AttentionTrajectory& target, double eps = 1e-6);

// mean BCE over all M validity logits, probabilities clamped at 1e-7.
nn::Var validity_loss(const Prediction& pred, const AttentionTrajectory& target);

// Discretizes a prediction (validity threshold 0.5) back into the trajectory
// schema for export and reports.
AttentionTrajectory to_trajectory(const Prediction& pred, double threshold = 0.5);

}  // namespace deper::traj_decoder
