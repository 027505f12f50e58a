#include "deper/subject_extractor.hpp"

#include "deper/errors.hpp"

namespace deper::subject_extractor {

Json SubjectEmbedding::to_json() const {
    Json values_json = Json::array();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        values_json.push_back(values(i));
    }
    return Json{{"subject_id", subject_id ? Json(*subject_id) : Json(nullptr)},
                {"dim", values.size()},
                {"values", values_json},
                {"n_sources", n_sources}};
}

SubjectEmbedding SubjectEmbedding::from_json(const Json& j) {
    SubjectEmbedding e;
    if (!j.at("subject_id").is_null()) {
        e.subject_id = j.at("subject_id").get<std::string>();
    }
    const auto& vals = j.at("values");
    e.values.resize(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        e.values(static_cast<Eigen::Index>(i)) = vals[i].get<double>();
    }
    if (j.at("dim").get<int>() != static_cast<int>(vals.size())) {
        throw Error("subject embedding dim/values mismatch");
    }
    e.n_sources = j.at("n_sources").get<int>();
    return e;
}

Weights Weights::create(nn::ParamStore& store, const ModelConfig& cfg, int n_subjects, Rng& rng) {
    Weights w;
    w.subject_query = store.add("ext.subject_query", 1, cfg.hidden_dim, 0.1, rng);
    for (int l = 0; l < cfg.extractor_layers; ++l) {
        const std::string prefix = "ext.layer" + std::to_string(l);
        Layer layer;
        layer.pool = nn::PoolAttentionParams::create(store, prefix + ".pool", cfg.hidden_dim, rng);
        layer.ffn = {nn::LayerNormParams::create(store, prefix + ".ffn.ln", cfg.hidden_dim),
                     nn::FfnParams::create(store, prefix + ".ffn", cfg.hidden_dim, cfg.ffn_mult, rng)};
        w.layers.push_back(layer);
    }
    w.head_w = store.add("ext.head.w", cfg.hidden_dim, n_subjects, -1.0, rng);
    w.head_b = store.add("ext.head.b", 1, n_subjects, 0.0, rng);
    return w;
}

std::size_t Weights::param_count(const ModelConfig& cfg, int n_subjects) {
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    std::size_t n = d;  // subject query
    n += static_cast<std::size_t>(cfg.extractor_layers) *
         (nn::PoolAttentionParams::param_count(cfg.hidden_dim) +
          nn::LayerNormParams::param_count(cfg.hidden_dim) +
          nn::FfnParams::param_count(cfg.hidden_dim, cfg.ffn_mult));
    n += d * static_cast<std::size_t>(n_subjects) + static_cast<std::size_t>(n_subjects);
    return n;
}

nn::Var extract(const dual_encoder::Streams& zdual, const Weights& w, const ModelConfig& cfg) {
    nn::Var ctx;
    nn::Vec mask;
    if (zdual.has_traj()) {
        ctx = nn::concat_rows({zdual.text, zdual.traj});
        mask.resize(zdual.text.rows() + zdual.traj.rows());
        mask << zdual.text_mask, zdual.traj_mask;
    } else {
        ctx = zdual.text;
        mask = zdual.text_mask;
    }
    nn::Var h = w.subject_query;
    for (const auto& layer : w.layers) {
        h = nn::pooled_attention(h, ctx, layer.pool, &mask);
        h = nn::ffn_block(h, layer.ffn);
    }
    return h;
}

nn::Var classification_loss(const nn::Var& z_batch, const std::vector<int>& labels,
                            const Weights& w) {
    const int n_subjects = w.head_w.cols();
    for (int label : labels) {
        if (label < 0 || label >= n_subjects) {
            throw Error("subject label " + std::to_string(label) + " out of range");
        }
    }
    nn::Var logits = nn::add_rowvec(nn::matmul(z_batch, w.head_w), w.head_b);
    return nn::mean_all(nn::nll_rows(logits, labels));
}

nn::Var supcon_loss(const nn::Var& z_batch, const std::vector<int>& labels, double temperature) {
    const int b = z_batch.rows();
    if (static_cast<int>(labels.size()) != b) {
        throw Error("supcon: label count mismatch");
    }
    // positives per anchor
    std::vector<std::vector<int>> positives(static_cast<std::size_t>(b));
    int anchors_with_positives = 0;
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < b; ++j) {
            if (i != j && labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                positives[static_cast<std::size_t>(i)].push_back(j);
            }
        }
        if (!positives[static_cast<std::size_t>(i)].empty()) {
            ++anchors_with_positives;
        }
    }
    if (anchors_with_positives == 0) {
        throw Error("degenerate contrastive batch");
    }

    nn::Var zn = nn::l2_normalize_rows(z_batch);
    nn::Var sims = nn::scale(nn::matmul_nt(zn, zn), 1.0 / temperature);
    // exclude self-similarity from the log-sum-exp denominator
    Mat diag_mask = Mat::Zero(b, b);
    for (int i = 0; i < b; ++i) {
        diag_mask(i, i) = -1e30;
    }
    nn::Var lse = nn::logsumexp_rows(nn::add(sims, nn::Var::constant(diag_mask)));

    // loss = sum_ip C_ip (lse_i - sims_ip), C_ip = 1/(|P(i)| * A)
    Mat coeff = Mat::Zero(b, b);
    Mat row_coeff = Mat::Zero(b, 1);
    const double inv_anchors = 1.0 / static_cast<double>(anchors_with_positives);
    for (int i = 0; i < b; ++i) {
        const auto& pos = positives[static_cast<std::size_t>(i)];
        if (pos.empty()) {
            continue;
        }
        const double c = inv_anchors / static_cast<double>(pos.size());
        for (int p : pos) {
            coeff(i, p) = c;
        }
        row_coeff(i, 0) = inv_anchors;
    }
    return nn::add(nn::weighted_sum(lse, row_coeff), nn::scale(nn::weighted_sum(sims, coeff), -1.0));
}

}  // namespace deper::subject_extractor
