#include "deper/nn/layers.hpp"

#include <cmath>

#include "deper/errors.hpp"
#include "deper/json_util.hpp"

namespace deper::nn {

namespace {
constexpr double kMaskLogit = -1e30;

Mat masked_softmax_rows(Mat scores, const Vec* key_mask) {
    if (key_mask) {
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            if ((*key_mask)(j) == 0.0) {
                scores.col(j).array() += kMaskLogit;
            }
        }
    }
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
    }
    return scores;
}
}  // namespace

// ----- ParamStore -----

Var ParamStore::add(const std::string& name, int rows, int cols, double init_std, Rng& rng) {
    if (map_.count(name)) {
        throw Error("duplicate parameter name: " + name);
    }
    Mat v(rows, cols);
    if (init_std == 0.0) {
        v.setZero();
    } else {
        const double sd = init_std < 0.0 ? std::sqrt(2.0 / (rows + cols)) : init_std;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v(i) = rng.normal(0.0, sd);
        }
    }
    Var p = Var::param(std::move(v));
    names_.push_back(name);
    map_.emplace(name, p);
    return p;
}

Var ParamStore::add_fill(const std::string& name, int rows, int cols, double fill) {
    if (map_.count(name)) {
        throw Error("duplicate parameter name: " + name);
    }
    Var p = Var::param(Mat::Constant(rows, cols, fill));
    names_.push_back(name);
    map_.emplace(name, p);
    return p;
}

Var ParamStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) {
        throw Error("unknown parameter: " + name);
    }
    return it->second;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& n : names_) {
        if (n.rfind(prefix, 0) == 0) {
            out.push_back(n);
        }
    }
    return out;
}

std::size_t ParamStore::element_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : map_) {
        (void)name;
        n += static_cast<std::size_t>(p.value().size());
    }
    return n;
}

std::size_t ParamStore::element_count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& name : names_with_prefix(prefix)) {
        n += static_cast<std::size_t>(get(name).value().size());
    }
    return n;
}

std::uint64_t ParamStore::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& name : names_) {
        h = fnv1a64(name.data(), name.size(), h);
        const Mat& v = map_.at(name).value();
        h = fnv1a64(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()), h);
    }
    return h;
}

void ParamStore::zero_grads() {
    for (auto& [name, p] : map_) {
        (void)name;
        const_cast<Var&>(p).zero_grad();
    }
}

// ----- Adam -----

Mat& Adam::moment_m(const std::string& name, const Var& p) {
    auto it = m_.find(name);
    if (it == m_.end()) {
        it = m_.emplace(name, Mat::Zero(p.value().rows(), p.value().cols())).first;
    }
    return it->second;
}

Mat& Adam::moment_v(const std::string& name, const Var& p) {
    auto it = v_.find(name);
    if (it == v_.end()) {
        it = v_.emplace(name, Mat::Zero(p.value().rows(), p.value().cols())).first;
    }
    return it->second;
}

void Adam::step(ParamStore& store, const std::vector<std::string>& trainable) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& name : trainable) {
        Var p = store.get(name);
        const Mat& g = p.grad();
        Mat& m = moment_m(name, p);
        Mat& v = moment_v(name, p);
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        p.value().array() -=
            lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
    }
    store.zero_grads();
}

// ----- attention parameter bundles -----

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix, int dim,
                                        Rng& rng) {
    AttentionParams p;
    p.wq = store.add(prefix + ".wq", dim, dim, -1.0, rng);
    p.bq = store.add(prefix + ".bq", 1, dim, 0.0, rng);
    p.wk = store.add(prefix + ".wk", dim, dim, -1.0, rng);
    p.bk = store.add(prefix + ".bk", 1, dim, 0.0, rng);
    p.wv = store.add(prefix + ".wv", dim, dim, -1.0, rng);
    p.bv = store.add(prefix + ".bv", 1, dim, 0.0, rng);
    p.wo = store.add(prefix + ".wo", dim, dim, -1.0, rng);
    p.bo = store.add(prefix + ".bo", 1, dim, 0.0, rng);
    return p;
}

PoolAttentionParams PoolAttentionParams::create(ParamStore& store, const std::string& prefix,
                                                int dim, Rng& rng) {
    PoolAttentionParams p;
    p.wq = store.add(prefix + ".wq", dim, dim, -1.0, rng);
    p.bq = store.add(prefix + ".bq", 1, dim, 0.0, rng);
    p.wk = store.add(prefix + ".wk", dim, dim, -1.0, rng);
    p.bk = store.add(prefix + ".bk", 1, dim, 0.0, rng);
    return p;
}

LayerNormParams LayerNormParams::create(ParamStore& store, const std::string& prefix, int dim) {
    LayerNormParams p;
    p.gain = store.add_fill(prefix + ".gain", 1, dim, 1.0);
    p.bias = store.add_fill(prefix + ".bias", 1, dim, 0.0);
    return p;
}

FfnParams FfnParams::create(ParamStore& store, const std::string& prefix, int dim, int mult,
                            Rng& rng) {
    FfnParams p;
    p.w1 = store.add(prefix + ".w1", dim, dim * mult, -1.0, rng);
    p.b1 = store.add(prefix + ".b1", 1, dim * mult, 0.0, rng);
    p.w2 = store.add(prefix + ".w2", dim * mult, dim, -1.0, rng);
    p.b2 = store.add(prefix + ".b2", 1, dim, 0.0, rng);
    return p;
}

// ----- fused multi-head attention -----

namespace {

Var make_node(Mat value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    bool rg = false;
    for (const Var& p : parents) {
        rg = rg || p.requires_grad();
    }
    auto node = std::make_shared<Node>(std::move(value), rg);
    if (rg) {
        for (const Var& p : parents) {
            node->parents.push_back(p.node());
        }
        node->backward_fn = std::move(fn);
    }
    return Var(node);
}

}  // namespace

Var multihead_attention(const Var& q_in, const Var& kv_in, const AttentionParams& p, int heads,
                        const Vec* key_mask) {
    const int d = q_in.cols();
    if (d % heads != 0) {
        throw Error("attention width not divisible by head count");
    }
    if (kv_in.cols() != d) {
        throw Error("attention query/context width mismatch");
    }
    if (key_mask && key_mask->size() != kv_in.rows()) {
        throw Error("attention mask length mismatch");
    }
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat q = q_in.value() * p.wq.value();
    q.rowwise() += p.bq.value().row(0);
    Mat k = kv_in.value() * p.wk.value();
    k.rowwise() += p.bk.value().row(0);
    Mat v = kv_in.value() * p.wv.value();
    v.rowwise() += p.bv.value().row(0);

    std::vector<Mat> probs(static_cast<std::size_t>(heads));
    Mat mixed(q.rows(), d);
    for (int h = 0; h < heads; ++h) {
        Mat scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * inv_sqrt;
        probs[static_cast<std::size_t>(h)] =
            masked_softmax_rows(std::move(scores), key_mask);
        mixed.middleCols(h * dh, dh) =
            probs[static_cast<std::size_t>(h)] * v.middleCols(h * dh, dh);
    }
    Mat out = mixed * p.wo.value();
    out.rowwise() += p.bo.value().row(0);

    return make_node(
        std::move(out), {q_in, kv_in, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo},
        [q = std::move(q), k = std::move(k), v = std::move(v), probs = std::move(probs),
         mixed = std::move(mixed), heads, dh, inv_sqrt](Node& n) {
            Node* pq_in = n.parents[0].get();
            Node* pkv_in = n.parents[1].get();
            Node* pwq = n.parents[2].get();
            Node* pbq = n.parents[3].get();
            Node* pwk = n.parents[4].get();
            Node* pbk = n.parents[5].get();
            Node* pwv = n.parents[6].get();
            Node* pbv = n.parents[7].get();
            Node* pwo = n.parents[8].get();
            Node* pbo = n.parents[9].get();

            const Mat& g = n.grad;
            if (pwo->requires_grad) {
                pwo->grad.noalias() += mixed.transpose() * g;
            }
            if (pbo->requires_grad) {
                pbo->grad.row(0) += g.colwise().sum();
            }
            Mat d_mixed = g * pwo->value.transpose();

            Mat dq = Mat::Zero(q.rows(), q.cols());
            Mat dk = Mat::Zero(k.rows(), k.cols());
            Mat dv = Mat::Zero(v.rows(), v.cols());
            for (int h = 0; h < heads; ++h) {
                const Mat& ph = probs[static_cast<std::size_t>(h)];
                const auto d_oh = d_mixed.middleCols(h * dh, dh);
                Mat dp = d_oh * v.middleCols(h * dh, dh).transpose();
                dv.middleCols(h * dh, dh).noalias() += ph.transpose() * d_oh;
                Mat ds(ph.rows(), ph.cols());
                for (Eigen::Index i = 0; i < ph.rows(); ++i) {
                    const double dot = dp.row(i).dot(ph.row(i));
                    ds.row(i) = (ph.row(i).array() * (dp.row(i).array() - dot)).matrix();
                }
                dq.middleCols(h * dh, dh).noalias() +=
                    ds * k.middleCols(h * dh, dh) * inv_sqrt;
                dk.middleCols(h * dh, dh).noalias() +=
                    ds.transpose() * q.middleCols(h * dh, dh) * inv_sqrt;
            }
            if (pwq->requires_grad) {
                pwq->grad.noalias() += pq_in->value.transpose() * dq;
            }
            if (pbq->requires_grad) {
                pbq->grad.row(0) += dq.colwise().sum();
            }
            if (pq_in->requires_grad) {
                pq_in->grad.noalias() += dq * pwq->value.transpose();
            }
            if (pwk->requires_grad) {
                pwk->grad.noalias() += pkv_in->value.transpose() * dk;
            }
            if (pbk->requires_grad) {
                pbk->grad.row(0) += dk.colwise().sum();
            }
            if (pwv->requires_grad) {
                pwv->grad.noalias() += pkv_in->value.transpose() * dv;
            }
            if (pbv->requires_grad) {
                pbv->grad.row(0) += dv.colwise().sum();
            }
            if (pkv_in->requires_grad) {
                pkv_in->grad.noalias() += dk * pwk->value.transpose();
                pkv_in->grad.noalias() += dv * pwv->value.transpose();
            }
        });
}

Var pooled_attention(const Var& query, const Var& context, const PoolAttentionParams& p,
                     const Vec* key_mask) {
    const int d = query.cols();
    if (query.rows() != 1) {
        throw Error("pooled_attention expects a single query row");
    }
    if (key_mask) {
        if (key_mask->size() != context.rows()) {
            throw Error("pooled_attention mask length mismatch");
        }
        if (key_mask->maxCoeff() == 0.0) {
            throw Error("empty context");
        }
    }
    if (context.rows() == 0) {
        throw Error("empty context");
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

    Mat qt = query.value() * p.wq.value();
    qt.rowwise() += p.bq.value().row(0);
    Mat kt = context.value() * p.wk.value();
    kt.rowwise() += p.bk.value().row(0);
    Mat alpha = masked_softmax_rows(qt * kt.transpose() * inv_sqrt, key_mask);  // 1 x C
    Mat out = alpha * context.value();

    return make_node(std::move(out), {query, context, p.wq, p.bq, p.wk, p.bk},
                     [qt = std::move(qt), kt = std::move(kt), alpha = std::move(alpha),
                      inv_sqrt](Node& n) {
                         Node* pq = n.parents[0].get();
                         Node* pc = n.parents[1].get();
                         Node* pwq = n.parents[2].get();
                         Node* pbq = n.parents[3].get();
                         Node* pwk = n.parents[4].get();
                         Node* pbk = n.parents[5].get();

                         const Mat& g = n.grad;  // 1 x d
                         Mat dalpha = g * pc->value.transpose();  // 1 x C
                         const double dot = dalpha.row(0).dot(alpha.row(0));
                         Mat ds =
                             (alpha.row(0).array() * (dalpha.row(0).array() - dot)).matrix();
                         Mat dqt = ds * kt * inv_sqrt;           // 1 x d
                         Mat dkt = ds.transpose() * qt * inv_sqrt;  // C x d

                         if (pc->requires_grad) {
                             pc->grad.noalias() += alpha.transpose() * g;
                             pc->grad.noalias() += dkt * pwk->value.transpose();
                         }
                         if (pq->requires_grad) {
                             pq->grad.noalias() += dqt * pwq->value.transpose();
                         }
                         if (pwq->requires_grad) {
                             pwq->grad.noalias() += pq->value.transpose() * dqt;
                         }
                         if (pbq->requires_grad) {
                             pbq->grad.row(0) += dqt.row(0);
                         }
                         if (pwk->requires_grad) {
                             pwk->grad.noalias() += pc->value.transpose() * dkt;
                         }
                         if (pbk->requires_grad) {
                             pbk->grad.row(0) += dkt.colwise().sum();
                         }
                     });
}

// ----- blocks -----

Var self_attention_block(const Var& x, const SublayerParams& p, int heads, const Vec* mask) {
    Var u = layer_norm(x, p.ln.gain, p.ln.bias);
    return add(x, multihead_attention(u, u, p.attn, heads, mask));
}

Var cross_attention_block(const Var& x, const Var& ctx, const SublayerParams& p, int heads,
                          const Vec* ctx_mask) {
    Var u = layer_norm(x, p.ln.gain, p.ln.bias);
    return add(x, multihead_attention(u, ctx, p.attn, heads, ctx_mask));
}

Var ffn_block(const Var& x, const FfnSublayerParams& p) {
    Var u = layer_norm(x, p.ln.gain, p.ln.bias);
    Var h = relu(add_rowvec(matmul(u, p.ffn.w1), p.ffn.b1));
    return add(x, add_rowvec(matmul(h, p.ffn.w2), p.ffn.b2));
}

namespace {

// Dedicated causal variant: builds the strictly-future mask once per call.
Var causal_multihead_attention(const Var& x, const AttentionParams& p, int heads) {
    const int d = x.cols();
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index rows = x.rows();

    Mat q = x.value() * p.wq.value();
    q.rowwise() += p.bq.value().row(0);
    Mat k = x.value() * p.wk.value();
    k.rowwise() += p.bk.value().row(0);
    Mat v = x.value() * p.wv.value();
    v.rowwise() += p.bv.value().row(0);

    std::vector<Mat> probs(static_cast<std::size_t>(heads));
    Mat mixed(rows, d);
    for (int h = 0; h < heads; ++h) {
        Mat scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * inv_sqrt;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = i + 1; j < rows; ++j) {
                scores(i, j) += kMaskLogit;
            }
        }
        probs[static_cast<std::size_t>(h)] = masked_softmax_rows(std::move(scores), nullptr);
        mixed.middleCols(h * dh, dh) =
            probs[static_cast<std::size_t>(h)] * v.middleCols(h * dh, dh);
    }
    Mat out = mixed * p.wo.value();
    out.rowwise() += p.bo.value().row(0);

    return make_node(
        std::move(out), {x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo},
        [q = std::move(q), k = std::move(k), v = std::move(v), probs = std::move(probs),
         mixed = std::move(mixed), heads, dh, inv_sqrt](Node& n) {
            Node* px = n.parents[0].get();
            Node* pwq = n.parents[1].get();
            Node* pbq = n.parents[2].get();
            Node* pwk = n.parents[3].get();
            Node* pbk = n.parents[4].get();
            Node* pwv = n.parents[5].get();
            Node* pbv = n.parents[6].get();
            Node* pwo = n.parents[7].get();
            Node* pbo = n.parents[8].get();

            const Mat& g = n.grad;
            if (pwo->requires_grad) {
                pwo->grad.noalias() += mixed.transpose() * g;
            }
            if (pbo->requires_grad) {
                pbo->grad.row(0) += g.colwise().sum();
            }
            Mat d_mixed = g * pwo->value.transpose();

            Mat dq = Mat::Zero(q.rows(), q.cols());
            Mat dk = Mat::Zero(k.rows(), k.cols());
            Mat dv = Mat::Zero(v.rows(), v.cols());
            for (int h = 0; h < heads; ++h) {
                const Mat& ph = probs[static_cast<std::size_t>(h)];
                const auto d_oh = d_mixed.middleCols(h * dh, dh);
                Mat dp = d_oh * v.middleCols(h * dh, dh).transpose();
                dv.middleCols(h * dh, dh).noalias() += ph.transpose() * d_oh;
                Mat ds(ph.rows(), ph.cols());
                for (Eigen::Index i = 0; i < ph.rows(); ++i) {
                    const double dot = dp.row(i).dot(ph.row(i));
                    ds.row(i) = (ph.row(i).array() * (dp.row(i).array() - dot)).matrix();
                }
                dq.middleCols(h * dh, dh).noalias() +=
                    ds * k.middleCols(h * dh, dh) * inv_sqrt;
                dk.middleCols(h * dh, dh).noalias() +=
                    ds.transpose() * q.middleCols(h * dh, dh) * inv_sqrt;
            }
            if (pwq->requires_grad) {
                pwq->grad.noalias() += px->value.transpose() * dq;
            }
            if (pbq->requires_grad) {
                pbq->grad.row(0) += dq.colwise().sum();
            }
            if (pwk->requires_grad) {
                pwk->grad.noalias() += px->value.transpose() * dk;
            }
            if (pbk->requires_grad) {
                pbk->grad.row(0) += dk.colwise().sum();
            }
            if (pwv->requires_grad) {
                pwv->grad.noalias() += px->value.transpose() * dv;
            }
            if (pbv->requires_grad) {
                pbv->grad.row(0) += dv.colwise().sum();
            }
            if (px->requires_grad) {
                px->grad.noalias() += dq * pwq->value.transpose();
                px->grad.noalias() += dk * pwk->value.transpose();
                px->grad.noalias() += dv * pwv->value.transpose();
            }
        });
}

}  // namespace

Var causal_self_attention_block(const Var& x, const SublayerParams& p, int heads) {
    Var u = layer_norm(x, p.ln.gain, p.ln.bias);
    return add(x, causal_multihead_attention(u, p.attn, heads));
}

Mat sinusoidal_encoding(const std::vector<double>& positions, int dim) {
    Mat pe(static_cast<Eigen::Index>(positions.size()), dim);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (int j = 0; j < dim; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / dim);
            pe(static_cast<Eigen::Index>(i), j) = std::sin(positions[i] * freq);
            if (j + 1 < dim) {
                pe(static_cast<Eigen::Index>(i), j + 1) = std::cos(positions[i] * freq);
            }
        }
    }
    return pe;
}

}  // namespace deper::nn
