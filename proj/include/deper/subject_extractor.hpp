// Distills Z_dual into the subject embedding z_s via a learnable subject
// query, supervised by classification and supervised-contrastive losses.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deper/dual_encoder.hpp"
#include "deper/nn/layers.hpp"
#include "deper/types.hpp"

namespace deper::subject_extractor {

struct SubjectEmbedding {
    Eigen::VectorXd values;
    std::optional<std::string> subject_id;
    int n_sources = 1;

    Json to_json() const;
    static SubjectEmbedding from_json(const Json& j);
};

struct Weights {
    nn::Var subject_query;  // 1 x d
    struct Layer {
        nn::PoolAttentionParams pool;
        nn::FfnSublayerParams ffn;
    };
    std::vector<Layer> layers;
    nn::Var head_w, head_b;  // d x S classification head over seen subjects

    static Weights create(nn::ParamStore& store, const ModelConfig& cfg, int n_subjects, Rng& rng);
    static std::size_t param_count(const ModelConfig& cfg, int n_subjects);
};

// z_s = FFN(Cross(q_s, [L'; T'])), masks respected. The cross step is a
// convex combination of the raw context rows; constant context rows pass
// through unchanged whatever the logits. Throws on a fully masked context.
nn::Var extract(const dual_encoder::Streams& zdual, const Weights& w, const ModelConfig& cfg);

// Mean cross-entropy of head(z) against subject labels.
nn::Var classification_loss(const nn::Var& z_batch, const std::vector<int>& labels,
                            const Weights& w);

// SupCon on L2-normalized embeddings: anchors average over their positives,
// the denominator runs over every other sample; mean over anchors that have
// at least one positive. Throws "degenerate contrastive batch" otherwise.
nn::Var supcon_loss(const nn::Var& z_batch, const std::vector<int>& labels, double temperature);

}  // namespace deper::subject_extractor
