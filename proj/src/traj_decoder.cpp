#include "deper/traj_decoder.hpp"

#include <algorithm>

#include "deper/errors.hpp"

namespace deper::traj_decoder {

Weights Weights::create(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    Weights w;
    w.traj_query = store.add("dec.traj_query", 1, cfg.hidden_dim, 0.1, rng);
    w.box_queries = store.add("dec.box_queries", cfg.m_max, cfg.hidden_dim, 0.1, rng);
    w.latent_pool = nn::PoolAttentionParams::create(store, "dec.latent_pool", cfg.hidden_dim, rng);
    w.w_ctx_img = store.add("dec.ctx_img.w", cfg.img_dim, cfg.hidden_dim, -1.0, rng);
    w.b_ctx_img = store.add("dec.ctx_img.b", 1, cfg.hidden_dim, 0.0, rng);
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        const std::string prefix = "dec.layer" + std::to_string(l);
        LayerWeights lw;
        lw.self_attn = {nn::LayerNormParams::create(store, prefix + ".self.ln", cfg.hidden_dim),
                        nn::AttentionParams::create(store, prefix + ".self.attn", cfg.hidden_dim, rng)};
        lw.cross_latent = {nn::LayerNormParams::create(store, prefix + ".latent.ln", cfg.hidden_dim),
                           nn::AttentionParams::create(store, prefix + ".latent.attn", cfg.hidden_dim, rng)};
        lw.cross_ctx = {nn::LayerNormParams::create(store, prefix + ".ctx.ln", cfg.hidden_dim),
                        nn::AttentionParams::create(store, prefix + ".ctx.attn", cfg.hidden_dim, rng)};
        lw.film_wg = store.add(prefix + ".film.wg", cfg.hidden_dim, cfg.hidden_dim, 0.0, rng);
        lw.film_bg = store.add(prefix + ".film.bg", 1, cfg.hidden_dim, 0.0, rng);
        lw.film_wb = store.add(prefix + ".film.wb", cfg.hidden_dim, cfg.hidden_dim, 0.0, rng);
        lw.film_bb = store.add(prefix + ".film.bb", 1, cfg.hidden_dim, 0.0, rng);
        lw.ffn = {nn::LayerNormParams::create(store, prefix + ".ffn.ln", cfg.hidden_dim),
                  nn::FfnParams::create(store, prefix + ".ffn", cfg.hidden_dim, cfg.ffn_mult, rng)};
        w.layers.push_back(lw);
    }
    w.head_w = store.add("dec.head.w", cfg.hidden_dim, 5, -1.0, rng);
    w.head_b = store.add("dec.head.b", 1, 5, 0.0, rng);
    return w;
}

std::size_t Weights::param_count(const ModelConfig& cfg) {
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    std::size_t n = d;                                  // traj query
    n += static_cast<std::size_t>(cfg.m_max) * d;       // box queries
    n += nn::PoolAttentionParams::param_count(cfg.hidden_dim);
    n += static_cast<std::size_t>(cfg.img_dim) * d + d;  // context image projection
    const std::size_t per_layer = 3u * (nn::AttentionParams::param_count(cfg.hidden_dim) +
                                        nn::LayerNormParams::param_count(cfg.hidden_dim)) +
                                  2u * (d * d + d) +  // FiLM gamma/beta affine maps
                                  nn::LayerNormParams::param_count(cfg.hidden_dim) +
                                  nn::FfnParams::param_count(cfg.hidden_dim, cfg.ffn_mult);
    n += static_cast<std::size_t>(cfg.decoder_layers) * per_layer;
    n += d * 5u + 5u;  // output head
    return n;
}

nn::Var extract_latent(const dual_encoder::Streams& zdual, const Weights& w) {
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
    return nn::pooled_attention(w.traj_query, ctx, w.latent_pool, &mask);
}

Prediction decode(const nn::Var& z_traj, const nn::Var& z_s, const ImageFeatures& img,
                  const nn::Var& text0, const nn::Vec& text_mask, const Weights& w,
                  const ModelConfig& cfg) {
    if (z_traj.rows() != 1 || z_s.rows() != 1) {
        throw Error("decode expects single-row latents");
    }
    nn::Var v_ctx = nn::add_rowvec(nn::matmul(nn::Var::constant(img.patches), w.w_ctx_img), w.b_ctx_img);
    nn::Var ctx = nn::concat_rows({v_ctx, text0});
    nn::Vec ctx_mask(v_ctx.rows() + text0.rows());
    ctx_mask << nn::Vec::Ones(v_ctx.rows()), text_mask;

    nn::Var ones = nn::Var::constant(Mat::Ones(1, cfg.hidden_dim));
    nn::Var q = w.box_queries;
    for (const auto& layer : w.layers) {
        q = nn::self_attention_block(q, layer.self_attn, cfg.heads);
        q = nn::cross_attention_block(q, z_traj, layer.cross_latent, cfg.heads);
        q = nn::cross_attention_block(q, ctx, layer.cross_ctx, cfg.heads, &ctx_mask);
        if (cfg.use_film) {
            nn::Var gamma = nn::add_rowvec(nn::matmul(z_s, layer.film_wg), layer.film_bg);
            nn::Var beta = nn::add_rowvec(nn::matmul(z_s, layer.film_wb), layer.film_bb);
            q = nn::add_rowvec(nn::mul_rowvec(q, nn::add(gamma, ones)), beta);
        }
        q = nn::ffn_block(q, layer.ffn);
    }
    nn::Var head = nn::sigmoid(nn::add_rowvec(nn::matmul(q, w.head_w), w.head_b));
    Prediction pred;
    pred.boxes = nn::slice_cols(head, 0, 4);
    pred.validity = nn::slice_cols(head, 4, 1);
    return pred;
}

namespace {

void check_lengths(const Prediction& pred, const AttentionTrajectory& target) {
    if (pred.boxes.rows() != target.length()) {
        throw Error("prediction length " + std::to_string(pred.boxes.rows()) +
                    " != target length " + std::to_string(target.length()));
    }
}

}  // namespace

nn::Var box_loss(const Prediction& pred, const AttentionTrajectory& target, double eps) {
    check_lengths(pred, target);
    const int m = target.length();
    Mat target_boxes(m, 4);
    double valid_sum = 0.0;
    for (int i = 0; i < m; ++i) {
        const BBox& b = target.boxes[static_cast<std::size_t>(i)];
        target_boxes.row(i) << b.x_min, b.y_min, b.x_max, b.y_max;
        valid_sum += target.validity[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    Mat weights = Mat::Zero(m, 4);
    for (int i = 0; i < m; ++i) {
        if (target.validity[static_cast<std::size_t>(i)]) {
            weights.row(i).setConstant(1.0 / (valid_sum + eps));
        }
    }
    return nn::weighted_sum(nn::smooth_l1(pred.boxes, target_boxes), weights);
}

nn::Var validity_loss(const Prediction& pred, const AttentionTrajectory& target) {
    check_lengths(pred, target);
    const int m = target.length();
    Mat target_v(m, 1);
    for (int i = 0; i < m; ++i) {
        target_v(i, 0) = target.validity[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return nn::mean_all(nn::bce(pred.validity, target_v));
}

AttentionTrajectory to_trajectory(const Prediction& pred, double threshold) {
    AttentionTrajectory out;
    const Mat& boxes = pred.boxes.value();
    const Mat& validity = pred.validity.value();
    for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
        if (validity(i, 0) < threshold) {
            continue;
        }
        BBox b{boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)};
        if (b.x_min > b.x_max) {
            std::swap(b.x_min, b.x_max);
        }
        if (b.y_min > b.y_max) {
            std::swap(b.y_min, b.y_max);
        }
        out.boxes.push_back(b);
        out.durations.push_back(1.0);  // durations are not reconstructed
        out.validity.push_back(1);
    }
    return out;
}

}  // namespace deper::traj_decoder
