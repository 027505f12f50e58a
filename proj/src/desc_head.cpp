#include "deper/desc_head.hpp"

#include <algorithm>
#include <cmath>

#include "deper/errors.hpp"

namespace deper::desc_head {

Weights Weights::create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    Weights w;
    w.adapter_w = store.add("lm.adapter.w", cfg.hidden_dim, cfg.lm_dim, -1.0, rng);
    w.adapter_b = store.add("lm.adapter.b", 1, cfg.lm_dim, 0.0, rng);
    w.token_embedding = store.add("lm.token_embedding", cfg.vocab_size, cfg.lm_dim, 0.1, rng);
    w.w_visual = store.add("lm.visual.w", cfg.img_dim, cfg.lm_dim, -1.0, rng);
    w.b_visual = store.add("lm.visual.b", 1, cfg.lm_dim, 0.0, rng);
    for (int l = 0; l < cfg.lm_layers; ++l) {
        const std::string prefix = "lm.layer" + std::to_string(l);
        Layer layer;
        layer.self_attn = {nn::LayerNormParams::create(store, prefix + ".self.ln", cfg.lm_dim),
                           nn::AttentionParams::create(store, prefix + ".self.attn", cfg.lm_dim, rng)};
        layer.ffn = {nn::LayerNormParams::create(store, prefix + ".ffn.ln", cfg.lm_dim),
                     nn::FfnParams::create(store, prefix + ".ffn", cfg.lm_dim, cfg.ffn_mult, rng)};
        w.layers.push_back(layer);
    }
    w.final_ln = nn::LayerNormParams::create(store, "lm.final_ln", cfg.lm_dim);
    return w;
}

std::size_t Weights::param_count(const ModelConfig& cfg) {
    const auto dl = static_cast<std::size_t>(cfg.lm_dim);
    std::size_t n = static_cast<std::size_t>(cfg.hidden_dim) * dl + dl;  // adapter
    n += static_cast<std::size_t>(cfg.vocab_size) * dl;                  // token table (tied head)
    n += static_cast<std::size_t>(cfg.img_dim) * dl + dl;                // visual projection
    n += static_cast<std::size_t>(cfg.lm_layers) *
         (nn::AttentionParams::param_count(cfg.lm_dim) +
          nn::LayerNormParams::param_count(cfg.lm_dim) * 2 +
          nn::FfnParams::param_count(cfg.lm_dim, cfg.ffn_mult));
    n += nn::LayerNormParams::param_count(cfg.lm_dim);  // final norm
    return n;
}

nn::Var adapt(const nn::Var& z_s, const Weights& w) {
    return nn::add_rowvec(nn::matmul(z_s, w.adapter_w), w.adapter_b);
}

AssembledInput assemble_input(const ImageFeatures& img, const PromptTemplate& prompt,
                              const nn::Var& subj_vec, const TokenizedDescription& desc,
                              const Weights& w, const ModelConfig& cfg) {
    int slots = 0;
    for (int id : prompt.tokens) {
        slots += id == Vocabulary::kSubjSlot;
    }
    if (slots != 1 || prompt.slot_index < 0 ||
        prompt.tokens[static_cast<std::size_t>(prompt.slot_index)] != Vocabulary::kSubjSlot) {
        throw Error("prompt must contain exactly one subject slot");
    }
    if (subj_vec.rows() != 1 || subj_vec.cols() != cfg.lm_dim) {
        throw Error("subject vector shape mismatch");
    }

    const int p = img.patch_count();
    const int r = static_cast<int>(prompt.tokens.size());
    const int n = desc.length();

    nn::Var prefix = nn::add_rowvec(nn::matmul(nn::Var::constant(img.patches), w.w_visual), w.b_visual);

    std::vector<nn::Var> prompt_parts;
    if (prompt.slot_index > 0) {
        std::vector<int> head(prompt.tokens.begin(), prompt.tokens.begin() + prompt.slot_index);
        prompt_parts.push_back(nn::gather_rows(w.token_embedding, head));
    }
    prompt_parts.push_back(subj_vec);
    if (prompt.slot_index + 1 < r) {
        std::vector<int> tail(prompt.tokens.begin() + prompt.slot_index + 1, prompt.tokens.end());
        prompt_parts.push_back(nn::gather_rows(w.token_embedding, tail));
    }

    nn::Var desc_emb = nn::gather_rows(w.token_embedding, desc.tokens);

    std::vector<nn::Var> parts{prefix};
    for (auto& part : prompt_parts) {
        parts.push_back(part);
    }
    parts.push_back(desc_emb);
    nn::Var seq = nn::concat_rows(parts);

    std::vector<double> positions(static_cast<std::size_t>(p + r + n));
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<double>(i);
    }
    seq = nn::add(seq, nn::Var::constant(nn::sinusoidal_encoding(positions, cfg.lm_dim)));

    AssembledInput in;
    in.seq = seq;
    in.desc_offset = p + r;
    in.loss_mask = nn::Vec::Zero(p + r + n);
    in.target_ids.assign(static_cast<std::size_t>(p + r + n), -1);
    for (int i = 0; i < n; ++i) {
        in.loss_mask(p + r + i) = 1.0;
        in.target_ids[static_cast<std::size_t>(p + r + i)] = desc.tokens[static_cast<std::size_t>(i)];
    }
    return in;
}

nn::Var lm_hidden(const nn::Var& seq, const Weights& w, const ModelConfig& cfg) {
    nn::Var h = seq;
    for (const auto& layer : w.layers) {
        h = nn::causal_self_attention_block(h, layer.self_attn, cfg.heads);
        h = nn::ffn_block(h, layer.ffn);
    }
    return nn::layer_norm(h, w.final_ln.gain, w.final_ln.bias);
}

namespace {

// Rows whose next position is supervised, with the matching targets.
std::pair<std::vector<int>, std::vector<int>> prediction_rows(const AssembledInput& in) {
    std::vector<int> rows, targets;
    for (Eigen::Index pos = 0; pos < in.loss_mask.size(); ++pos) {
        if (in.loss_mask(pos) == 1.0) {
            if (pos == 0) {
                throw Error("description cannot start the sequence");
            }
            rows.push_back(static_cast<int>(pos) - 1);
            targets.push_back(in.target_ids[static_cast<std::size_t>(pos)]);
        }
    }
    return {rows, targets};
}

}  // namespace

nn::Var description_loss(const AssembledInput& in, const Weights& w, const ModelConfig& cfg) {
    auto [rows, targets] = prediction_rows(in);
    if (rows.empty()) {
        return nn::Var::scalar(0.0);
    }
    nn::Var h = lm_hidden(in.seq, w, cfg);
    nn::Var picked = nn::gather_rows(h, rows);
    nn::Var logits = nn::matmul_nt(picked, w.token_embedding);
    return nn::sum_all(nn::nll_rows(logits, targets));
}

std::vector<double> per_position_nll(const AssembledInput& in, const Weights& w,
                                     const ModelConfig& cfg) {
    auto [rows, targets] = prediction_rows(in);
    std::vector<double> out;
    if (rows.empty()) {
        return out;
    }
    nn::Var h = lm_hidden(in.seq, w, cfg);
    nn::Var logits = nn::matmul_nt(nn::gather_rows(h, rows), w.token_embedding);
    nn::Var nll = nn::nll_rows(logits, targets);
    out.resize(static_cast<std::size_t>(nll.rows()));
    for (Eigen::Index i = 0; i < nll.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = nll.value()(i, 0);
    }
    return out;
}

TokenizedDescription generate(const ImageFeatures& img, const PromptTemplate& prompt,
                              const nn::Var& subj_vec, const Weights& w, const Vocabulary& vocab,
                              const ModelConfig& cfg, int max_len, DecodeMode mode, Rng* rng) {
    if (max_len < 1) {
        throw Error("max_len must be >= 1");
    }
    if (mode == DecodeMode::Sample && rng == nullptr) {
        throw Error("sampling requires an rng");
    }
    std::vector<int> generated;
    for (int step = 0; step < max_len; ++step) {
        TokenizedDescription sofar;
        sofar.tokens.push_back(Vocabulary::kBegin);
        sofar.tokens.insert(sofar.tokens.end(), generated.begin(), generated.end());
        AssembledInput in = assemble_input(img, prompt, subj_vec, sofar, w, cfg);
        nn::Var h = lm_hidden(in.seq, w, cfg);
        nn::Var last = nn::slice_rows(h, h.rows() - 1, 1);
        Mat logits = (last.value() * w.token_embedding.value().transpose());

        int next = 0;
        if (mode == DecodeMode::Greedy) {
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < logits.cols(); ++j) {
                if (logits(0, j) > best) {
                    best = logits(0, j);
                    next = static_cast<int>(j);
                }
            }
        } else {
            const double mx = logits.row(0).maxCoeff();
            Eigen::ArrayXd probs = (logits.row(0).array() - mx).exp().transpose();
            probs /= probs.sum();
            double u = rng->uniform();
            next = static_cast<int>(logits.cols()) - 1;
            double acc = 0.0;
            for (Eigen::Index j = 0; j < logits.cols(); ++j) {
                acc += probs(j);
                if (u < acc) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (next == Vocabulary::kEnd) {
            break;
        }
        generated.push_back(next);
    }
    TokenizedDescription out;
    out.tokens.push_back(Vocabulary::kBegin);
    out.tokens.insert(out.tokens.end(), generated.begin(), generated.end());
    out.tokens.push_back(Vocabulary::kEnd);
    out.raw_text = vocab.decode(out.tokens);
    return out;
}

}  // namespace deper::desc_head
