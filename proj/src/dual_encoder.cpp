#include "deper/dual_encoder.hpp"

#include <cmath>

#include "deper/errors.hpp"

namespace deper::dual_encoder {

namespace {

StreamLayerWeights make_layer(nn::ParamStore& store, const std::string& prefix,
                              const ModelConfig& cfg, Rng& rng) {
    StreamLayerWeights w;
    w.self_attn = {nn::LayerNormParams::create(store, prefix + ".self.ln", cfg.hidden_dim),
                   nn::AttentionParams::create(store, prefix + ".self.attn", cfg.hidden_dim, rng)};
    w.cross_attn = {nn::LayerNormParams::create(store, prefix + ".cross.ln", cfg.hidden_dim),
                    nn::AttentionParams::create(store, prefix + ".cross.attn", cfg.hidden_dim, rng)};
    w.ffn = {nn::LayerNormParams::create(store, prefix + ".ffn.ln", cfg.hidden_dim),
             nn::FfnParams::create(store, prefix + ".ffn", cfg.hidden_dim, cfg.ffn_mult, rng)};
    return w;
}

}  // namespace

Weights Weights::create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    Weights w;
    w.w_img = store.add("enc.in.img.w", cfg.img_dim, cfg.hidden_dim, -1.0, rng);
    w.b_img = store.add("enc.in.img.b", 1, cfg.hidden_dim, 0.0, rng);
    w.w_geom = store.add("enc.in.geom.w", 4, cfg.hidden_dim, -1.0, rng);
    w.b_geom = store.add("enc.in.geom.b", 1, cfg.hidden_dim, 0.0, rng);
    w.w_pool = store.add("enc.in.pool.w", cfg.img_dim, cfg.hidden_dim, -1.0, rng);
    w.b_pool = store.add("enc.in.pool.b", 1, cfg.hidden_dim, 0.0, rng);
    w.token_embedding = store.add("enc.in.token_embedding", cfg.vocab_size, cfg.hidden_dim, 0.1, rng);
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        w.text_layers.push_back(make_layer(store, "enc.layer" + std::to_string(l) + ".text", cfg, rng));
        w.traj_layers.push_back(make_layer(store, "enc.layer" + std::to_string(l) + ".traj", cfg, rng));
    }
    return w;
}

std::size_t Weights::param_count(const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    std::size_t n = 0;
    n += static_cast<std::size_t>(cfg.img_dim) * d + d;  // img projection
    n += 4u * d + d;                                     // geometry projection
    n += static_cast<std::size_t>(cfg.img_dim) * d + d;  // pooled patch projection
    n += static_cast<std::size_t>(cfg.vocab_size) * d;   // token table
    const std::size_t per_stream_layer = nn::AttentionParams::param_count(cfg.hidden_dim) * 2 +
                                         nn::LayerNormParams::param_count(cfg.hidden_dim) * 3 +
                                         nn::FfnParams::param_count(cfg.hidden_dim, cfg.ffn_mult);
    n += 2u * static_cast<std::size_t>(cfg.encoder_layers) * per_stream_layer;
    return n;
}

nn::Var project_image(const ImageFeatures& img, const Weights& w) {
    return nn::add_rowvec(nn::matmul(nn::Var::constant(img.patches), w.w_img), w.b_img);
}

Mat patch_pooling_matrix(const AttentionTrajectory& traj, const ImageFeatures& img) {
    const int m = traj.length();
    const int p = img.patch_count();
    Mat pool = Mat::Zero(m, p);
    for (int i = 0; i < m; ++i) {
        if (!traj.validity[static_cast<std::size_t>(i)]) {
            continue;
        }
        const BBox& box = traj.boxes[static_cast<std::size_t>(i)];
        std::vector<int> inside;
        for (int j = 0; j < p; ++j) {
            const auto& c = img.patch_centers[static_cast<std::size_t>(j)];
            if (box.contains(c[0], c[1])) {
                inside.push_back(j);
            }
        }
        if (inside.empty()) {
            // nearest patch center, ties to the lowest index
            const auto bc = box.center();
            int best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (int j = 0; j < p; ++j) {
                const auto& c = img.patch_centers[static_cast<std::size_t>(j)];
                const double d2 = (c[0] - bc[0]) * (c[0] - bc[0]) + (c[1] - bc[1]) * (c[1] - bc[1]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = j;
                }
            }
            inside.push_back(best);
        }
        const double share = 1.0 / static_cast<double>(inside.size());
        for (int j : inside) {
            pool(i, j) = share;
        }
    }
    return pool;
}

nn::Var embed_trajectory(const AttentionTrajectory& traj, const ImageFeatures& img,
                         const Weights& w, const ModelConfig& cfg) {
    const int m = traj.length();
    Mat geom(m, 4);
    for (int i = 0; i < m; ++i) {
        const BBox& b = traj.boxes[static_cast<std::size_t>(i)];
        geom.row(i) << b.x_min, b.y_min, b.x_max, b.y_max;
    }
    const Mat pooled = patch_pooling_matrix(traj, img) * img.patches;  // m x img_dim

    nn::Var feat = nn::add(nn::add_rowvec(nn::matmul(nn::Var::constant(geom), w.w_geom), w.b_geom),
                           nn::add_rowvec(nn::matmul(nn::Var::constant(pooled), w.w_pool), w.b_pool));

    if (cfg.use_traj_dynamics) {
        std::vector<double> indices(static_cast<std::size_t>(m));
        std::vector<double> duration_pos(static_cast<std::size_t>(m), 0.0);
        const double total = traj.total_valid_duration();
        for (int i = 0; i < m; ++i) {
            indices[static_cast<std::size_t>(i)] = static_cast<double>(i);
            if (traj.validity[static_cast<std::size_t>(i)] && total > 0.0) {
                // duration share of the whole scan, scaled onto the sinusoid's
                // useful range; scale-free across recording devices
                duration_pos[static_cast<std::size_t>(i)] =
                    traj.durations[static_cast<std::size_t>(i)] / total * 100.0;
            }
        }
        feat = nn::add(feat, nn::Var::constant(nn::sinusoidal_encoding(indices, cfg.hidden_dim)));
        feat = nn::add(feat, nn::Var::constant(nn::sinusoidal_encoding(duration_pos, cfg.hidden_dim)));
    }

    nn::Vec keep(m);
    for (int i = 0; i < m; ++i) {
        keep(i) = traj.validity[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return nn::mask_rows(feat, keep);
}

nn::Var embed_text(const TokenizedDescription& desc, const Weights& w, const ModelConfig& cfg) {
    for (int id : desc.tokens) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw Error("unknown token id " + std::to_string(id));
        }
    }
    nn::Var emb = nn::gather_rows(w.token_embedding, desc.tokens);
    std::vector<double> positions(desc.tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<double>(i);
    }
    return nn::add(emb, nn::Var::constant(nn::sinusoidal_encoding(positions, cfg.hidden_dim)));
}

Streams forward(const nn::Var& v_proj, const nn::Var& text0, const nn::Vec& text_mask,
                const nn::Var& traj0, const nn::Vec& traj_mask, const Weights& w,
                const ModelConfig& cfg) {
    Streams s;
    s.text = text0;
    s.text_mask = text_mask;
    if (cfg.use_traj_input) {
        if (!traj0.defined()) {
            throw Error("trajectory stream required when use_traj_input is set");
        }
        s.traj = traj0;
        s.traj_mask = traj_mask;
    }

    const nn::Vec ones_img = nn::Vec::Ones(v_proj.rows());
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const auto& tw = w.text_layers[static_cast<std::size_t>(l)];
        nn::Var text_prev = s.text;
        nn::Var text_next = nn::self_attention_block(text_prev, tw.self_attn, cfg.heads, &s.text_mask);
        if (cfg.use_dual_context) {
            nn::Var ctx;
            nn::Vec ctx_mask;
            if (s.has_traj()) {
                ctx = nn::concat_rows({v_proj, s.traj});
                ctx_mask.resize(v_proj.rows() + s.traj.rows());
                ctx_mask << ones_img, s.traj_mask;
            } else {
                ctx = v_proj;
                ctx_mask = ones_img;
            }
            text_next = nn::cross_attention_block(text_next, ctx, tw.cross_attn, cfg.heads, &ctx_mask);
        }
        text_next = nn::ffn_block(text_next, tw.ffn);

        if (s.has_traj()) {
            const auto& jw = w.traj_layers[static_cast<std::size_t>(l)];
            nn::Var traj_next = nn::self_attention_block(s.traj, jw.self_attn, cfg.heads, &s.traj_mask);
            if (cfg.use_dual_context) {
                nn::Var ctx = nn::concat_rows({v_proj, text_prev});  // previous layer's text
                nn::Vec ctx_mask(v_proj.rows() + text_prev.rows());
                ctx_mask << ones_img, s.text_mask;
                traj_next = nn::cross_attention_block(traj_next, ctx, jw.cross_attn, cfg.heads, &ctx_mask);
            }
            s.traj = nn::ffn_block(traj_next, jw.ffn);
        }
        s.text = text_next;
    }
    return s;
}

Streams encode_triplet(const Triplet& t, const Weights& w, const ModelConfig& cfg) {
    nn::Var v_proj = project_image(t.image, w);
    nn::Var text0 = embed_text(t.description, w, cfg);
    nn::Vec text_mask = nn::Vec::Ones(text0.rows());
    nn::Var traj0;
    nn::Vec traj_mask;
    if (cfg.use_traj_input) {
        const AttentionTrajectory padded = pad_or_truncate(t.trajectory, cfg.m_max);
        traj0 = embed_trajectory(padded, t.image, w, cfg);
        traj_mask.resize(padded.length());
        for (int i = 0; i < padded.length(); ++i) {
            traj_mask(i) = padded.validity[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        }
    }
    return forward(v_proj, text0, text_mask, traj0, traj_mask, w, cfg);
}

}  // namespace deper::dual_encoder
