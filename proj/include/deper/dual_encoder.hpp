// Dual-context encoder: a text stream and a trajectory stream exchange
// information through cross-attention over shared image patch features.
// Per layer (synchronous update, both sides read the previous layer):
//   T' = FFN(Cross(Self(T), [V; L]))
//   L' = FFN(Cross(Self(L), [V; T]))
#pragma once

#include <vector>

#include "deper/nn/layers.hpp"
#include "deper/types.hpp"

namespace deper::dual_encoder {

struct StreamLayerWeights {
    nn::SublayerParams self_attn;
    nn::SublayerParams cross_attn;
    nn::FfnSublayerParams ffn;
};

struct Weights {
    nn::Var w_img, b_img;    // img_dim -> d, shared attention context projection
    nn::Var w_geom, b_geom;  // 4 -> d, box coordinates
    nn::Var w_pool, b_pool;  // img_dim -> d, pooled in-box patch feature
    nn::Var token_embedding; // vocab x d
    std::vector<StreamLayerWeights> text_layers;
    std::vector<StreamLayerWeights> traj_layers;

    static Weights create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
    // Parameter count is a pure function of the config (golden-count tested).
    static std::size_t param_count(const ModelConfig& cfg);
};

// Both streams plus their key masks. With use_traj_input=false the traj
// stream is undefined and its mask empty.
struct Streams {
    nn::Var text;
    nn::Vec text_mask;
    nn::Var traj;
    nn::Vec traj_mask;

    bool has_traj() const { return traj.defined(); }
};

nn::Var project_image(const ImageFeatures& img, const Weights& w);

// Per-box feature: geometry projection + projected mean of the patch
// features whose centers fall inside the box (nearest center if none, ties
// to the lowest patch index) + sinusoidal encodings of the box index and of
// the duration share. With use_traj_dynamics=false both encodings are
// omitted. Padded rows are zero.
nn::Var embed_trajectory(const AttentionTrajectory& traj, const ImageFeatures& img,
                         const Weights& w, const ModelConfig& cfg);

// Learned token embedding + sinusoidal position encoding. Throws on ids
// outside the vocabulary.
nn::Var embed_text(const TokenizedDescription& desc, const Weights& w, const ModelConfig& cfg);

// The averaging weights over patches for each valid box row (exposed so the
// nearest-center fallback can be checked against brute force).
Mat patch_pooling_matrix(const AttentionTrajectory& traj, const ImageFeatures& img);

Streams forward(const nn::Var& v_proj, const nn::Var& text0, const nn::Vec& text_mask,
                const nn::Var& traj0, const nn::Vec& traj_mask, const Weights& w,
                const ModelConfig& cfg);

// Convenience: embed + forward for one triplet.
Streams encode_triplet(const Triplet& t, const Weights& w, const ModelConfig& cfg);

}  // namespace deper::dual_encoder
