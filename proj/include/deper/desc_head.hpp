// Personalized description generation: a single-linear adapter maps z_s into
// the language-model token space, the adapted vector replaces the prompt's
// subject-slot embedding, and a small trainable causal decoder stands in for
// the frozen VLM. The integration surface (assemble_input, generate) stays
// backbone-agnostic.
#pragma once

#include <string>
#include <vector>

#include "deper/nn/layers.hpp"
#include "deper/types.hpp"
#include "deper/vocab.hpp"

namespace deper::desc_head {

struct Weights {
    nn::Var adapter_w, adapter_b;  // hidden_dim -> lm_dim, exactly one linear layer
    nn::Var token_embedding;       // vocab x lm_dim; output head is weight-tied
    nn::Var w_visual, b_visual;    // img_dim -> lm_dim visual prefix projection
    struct Layer {
        nn::SublayerParams self_attn;
        nn::FfnSublayerParams ffn;
    };
    std::vector<Layer> layers;
    nn::LayerNormParams final_ln;

    static Weights create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);
    static std::size_t param_count(const ModelConfig& cfg);
};

nn::Var adapt(const nn::Var& z_s, const Weights& w);

struct AssembledInput {
    nn::Var seq;                  // (P + R + N) x lm_dim, position encodings added
    nn::Vec loss_mask;            // 1 on description positions
    std::vector<int> target_ids;  // aligned with seq rows; valid where mask is 1
    int desc_offset = 0;          // row of the first description token
};

// [projected visual prefix] ++ [prompt embeddings, slot replaced by subj_vec]
// ++ [description embeddings]. Throws if the prompt slot is missing or
// duplicated.
AssembledInput assemble_input(const ImageFeatures& img, const PromptTemplate& prompt,
                              const nn::Var& subj_vec, const TokenizedDescription& desc,
                              const Weights& w, const ModelConfig& cfg);

// Causal layers + final norm over an assembled sequence.
nn::Var lm_hidden(const nn::Var& seq, const Weights& w, const ModelConfig& cfg);

// Teacher-forced NLL summed (not averaged) over masked description
// positions, each predicted from the preceding row.
nn::Var description_loss(const AssembledInput& in, const Weights& w, const ModelConfig& cfg);

// Per-description-position NLL (diagnostics and the causality check).
std::vector<double> per_position_nll(const AssembledInput& in, const Weights& w,
                                     const ModelConfig& cfg);

enum class DecodeMode { Greedy, Sample };

// Greedy decoding is deterministic; ties go to the lowest token id. The end
// sentinel is appended when max_len cuts generation short.
TokenizedDescription generate(const ImageFeatures& img, const PromptTemplate& prompt,
                              const nn::Var& subj_vec, const Weights& w, const Vocabulary& vocab,
                              const ModelConfig& cfg, int max_len,
                              DecodeMode mode = DecodeMode::Greedy, Rng* rng = nullptr);

}  // namespace deper::desc_head
