#include <doctest.h>

#include "deper/errors.hpp"

#include <cmath>

#include "deper/nn/autograd.hpp"
#include "deper/nn/layers.hpp"
#include "deper/rng.hpp"
#include "support/gradcheck.hpp"

using namespace deper;
using namespace deper::nn;
using deper::testing::grad_check;

namespace {

Mat random_mat(int r, int c, Rng& rng, double sd = 0.5) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = rng.normal(0.0, sd);
    }
    return m;
}

}  // namespace

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(43);
    CHECK(c.next_u64() != Rng(42).next_u64());
    CHECK(Rng::derive(1, {2, 3}) != Rng::derive(1, {3, 2}));

    // state round-trip resumes the exact stream
    Rng d(7);
    d.normal();
    const auto st = d.state();
    const double next = d.uniform();
    Rng e(0);
    e.set_state(st);
    CHECK(e.uniform() == next);
}

TEST_CASE("rng uniform int stays in range") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
    }
}

TEST_CASE("basic op forwards") {
    Var a = Var::param((Mat(2, 2) << 1.0, 2.0, 3.0, 4.0).finished());
    Var b = Var::param((Mat(2, 2) << 0.5, -1.0, 2.0, 0.0).finished());
    CHECK(add(a, b).value()(0, 1) == doctest::Approx(1.0));
    CHECK(matmul(a, b).value()(0, 0) == doctest::Approx(4.5));
    CHECK(matmul_nt(a, transpose(b)).value()(0, 0) == doctest::Approx(4.5));
    CHECK(sum_all(a).item() == doctest::Approx(10.0));
    CHECK(mean_all(a).item() == doctest::Approx(2.5));

    Var sm = softmax_rows(Var::constant(Mat::Zero(1, 4)));
    CHECK(sm.value()(0, 2) == doctest::Approx(0.25));
}

TEST_CASE("gradient accumulates over shared subexpressions") {
    Var x = Var::param(Mat::Constant(1, 1, 3.0));
    Var y = add(cmul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 7
    backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("finite differences agree for composed elementwise ops") {
    Rng rng(11);
    Var a = Var::param(random_mat(3, 4, rng));
    Var b = Var::param(random_mat(3, 4, rng));
    auto loss = [&] {
        return mean_all(cmul(sigmoid(a), relu(add(b, scale(a, 0.5)))));
    };
    auto res = grad_check(loss, {{"a", a}, {"b", b}});
    CHECK(res.ok);
}

TEST_CASE("finite differences agree for matmul chain with softmax") {
    Rng rng(12);
    Var a = Var::param(random_mat(3, 5, rng));
    Var w = Var::param(random_mat(5, 4, rng));
    auto loss = [&] { return mean_all(softmax_rows(matmul(a, w))); };
    auto res = grad_check(loss, {{"a", a}, {"w", w}});
    CHECK(res.ok);
}

TEST_CASE("finite differences agree for layer norm") {
    Rng rng(13);
    Var x = Var::param(random_mat(4, 6, rng));
    Var g = Var::param(random_mat(1, 6, rng, 0.2));
    Var b = Var::param(random_mat(1, 6, rng, 0.2));
    auto loss = [&] { return mean_all(cmul(layer_norm(x, g, b), x)); };
    auto res = grad_check(loss, {{"x", x}, {"g", g}, {"b", b}});
    CHECK(res.ok);
}

TEST_CASE("finite differences agree for reductions and losses") {
    Rng rng(14);
    Var logits = Var::param(random_mat(5, 7, rng));
    std::vector<int> targets{0, 3, 6, 2, 2};
    Mat weights = Mat::Constant(5, 1, 0.2);
    auto loss = [&] { return weighted_sum(nll_rows(logits, targets), weights); };
    CHECK(grad_check(loss, {{"logits", logits}}).ok);

    Var pred = Var::param(random_mat(4, 4, rng, 0.6));
    Mat target = random_mat(4, 4, rng, 0.4);
    auto sl1 = [&] { return mean_all(smooth_l1(pred, target)); };
    CHECK(grad_check(sl1, {{"pred", pred}}).ok);

    Var probs = Var::param((Mat(3, 1) << 0.3, 0.6, 0.9).finished());
    Mat tgt = (Mat(3, 1) << 1.0, 0.0, 1.0).finished();
    auto bce_loss = [&] { return mean_all(bce(probs, tgt)); };
    CHECK(grad_check(bce_loss, {{"probs", probs}}).ok);

    Var z = Var::param(random_mat(3, 8, rng));
    auto lse = [&] { return mean_all(logsumexp_rows(z)); };
    CHECK(grad_check(lse, {{"z", z}}).ok);

    Var nrm = Var::param(random_mat(3, 5, rng));
    auto l2 = [&] { return mean_all(cmul(l2_normalize_rows(nrm), nrm)); };
    CHECK(grad_check(l2, {{"nrm", nrm}}).ok);
}

TEST_CASE("finite differences agree for structural ops") {
    Rng rng(15);
    Var a = Var::param(random_mat(3, 4, rng));
    Var b = Var::param(random_mat(2, 4, rng));
    Var t = Var::param(random_mat(6, 4, rng));
    std::vector<int> ids{1, 4, 1};
    auto loss = [&] {
        Var cat = concat_rows({a, b, gather_rows(t, ids)});
        Var s = slice_cols(cat, 1, 2);
        return mean_all(cmul(s, s));
    };
    CHECK(grad_check(loss, {{"a", a}, {"b", b}, {"t", t}}).ok);
}

TEST_CASE("multihead attention matches explicit softmax oracle") {
    Rng rng(21);
    const int d = 8, heads = 2, dh = d / heads;
    ParamStore store;
    auto p = AttentionParams::create(store, "attn", d, rng);
    Var q_in = Var::constant(random_mat(3, d, rng));
    Var kv_in = Var::constant(random_mat(5, d, rng));
    Vec mask(5);
    mask << 1, 1, 0, 1, 1;

    Var out = multihead_attention(q_in, kv_in, p, heads, &mask);

    // independent path: plain loops, no library softmax/matmul helpers
    Mat q = q_in.value() * p.wq.value();
    q.rowwise() += p.bq.value().row(0);
    Mat k = kv_in.value() * p.wk.value();
    k.rowwise() += p.bk.value().row(0);
    Mat v = kv_in.value() * p.wv.value();
    v.rowwise() += p.bv.value().row(0);
    Mat mixed = Mat::Zero(3, d);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < 3; ++i) {
            std::vector<double> w(5, 0.0);
            double denom = 0.0;
            for (int j = 0; j < 5; ++j) {
                if (mask(j) == 0.0) {
                    continue;
                }
                double dot = 0.0;
                for (int c = 0; c < dh; ++c) {
                    dot += q(i, h * dh + c) * k(j, h * dh + c);
                }
                w[static_cast<std::size_t>(j)] = std::exp(dot / std::sqrt(double(dh)));
                denom += w[static_cast<std::size_t>(j)];
            }
            for (int j = 0; j < 5; ++j) {
                for (int c = 0; c < dh; ++c) {
                    mixed(i, h * dh + c) += w[static_cast<std::size_t>(j)] / denom * v(j, h * dh + c);
                }
            }
        }
    }
    Mat expect = mixed * p.wo.value();
    expect.rowwise() += p.bo.value().row(0);
    CHECK((out.value() - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("multihead attention gradients match finite differences") {
    Rng rng(22);
    const int d = 8, heads = 2;
    ParamStore store;
    auto p = AttentionParams::create(store, "attn", d, rng);
    Var q_in = Var::param(random_mat(3, d, rng));
    Var kv_in = Var::param(random_mat(4, d, rng));
    Vec mask(4);
    mask << 1, 0, 1, 1;
    Mat probe = random_mat(3, d, rng);
    auto loss = [&] {
        return weighted_sum(multihead_attention(q_in, kv_in, p, heads, &mask), probe);
    };
    std::vector<std::pair<std::string, Var>> params{{"q_in", q_in}, {"kv_in", kv_in}};
    for (const auto& name : store.names()) {
        params.emplace_back(name, store.get(name));
    }
    auto res = grad_check(loss, params);
    INFO(res.worst, " rel err ", res.max_rel_err);
    CHECK(res.ok);
}

TEST_CASE("masked keys receive exactly zero attention and zero gradient") {
    Rng rng(23);
    const int d = 4;
    ParamStore store;
    auto p = AttentionParams::create(store, "attn", d, rng);
    Var q_in = Var::constant(random_mat(2, d, rng));
    Mat kv = random_mat(3, d, rng);
    Var kv_var = Var::param(kv);
    Vec mask(3);
    mask << 1, 0, 1;
    Var out = multihead_attention(q_in, kv_var, p, 2, &mask);
    backward(sum_all(out));
    CHECK(kv_var.grad().row(1).cwiseAbs().maxCoeff() == 0.0);

    // dropping the masked key entirely gives the same output
    Mat kv2(2, d);
    kv2.row(0) = kv.row(0);
    kv2.row(1) = kv.row(2);
    Vec mask2 = Vec::Ones(2);
    Var out2 = multihead_attention(q_in, Var::constant(kv2), p, 2, &mask2);
    CHECK((out.value() - out2.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pooled attention over identical rows returns the row itself") {
    Rng rng(24);
    const int d = 6;
    ParamStore store;
    auto p = PoolAttentionParams::create(store, "pool", d, rng);
    Mat u = random_mat(1, d, rng);
    Mat ctx(4, d);
    for (int i = 0; i < 4; ++i) {
        ctx.row(i) = u.row(0);
    }
    Var out = pooled_attention(Var::constant(random_mat(1, d, rng)), Var::constant(ctx), p);
    CHECK((out.value() - u).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pooled attention rejects fully masked context") {
    Rng rng(25);
    ParamStore store;
    auto p = PoolAttentionParams::create(store, "pool", 4, rng);
    Vec mask = Vec::Zero(3);
    CHECK_THROWS_WITH_AS(
        pooled_attention(Var::constant(random_mat(1, 4, rng)),
                         Var::constant(random_mat(3, 4, rng)), p, &mask),
        "empty context", deper::Error);
}

TEST_CASE("pooled attention gradients match finite differences") {
    Rng rng(26);
    const int d = 6;
    ParamStore store;
    auto p = PoolAttentionParams::create(store, "pool", d, rng);
    Var q = Var::param(random_mat(1, d, rng));
    Var ctx = Var::param(random_mat(5, d, rng));
    Vec mask(5);
    mask << 1, 1, 0, 1, 1;
    Mat probe = random_mat(1, d, rng);
    auto loss = [&] { return weighted_sum(pooled_attention(q, ctx, p, &mask), probe); };
    std::vector<std::pair<std::string, Var>> params{{"q", q}, {"ctx", ctx}};
    for (const auto& name : store.names()) {
        params.emplace_back(name, store.get(name));
    }
    CHECK(grad_check(loss, params).ok);
}

TEST_CASE("causal attention blocks future positions") {
    Rng rng(27);
    const int d = 8;
    ParamStore store;
    SublayerParams p{LayerNormParams::create(store, "cs.ln", d),
                     AttentionParams::create(store, "cs.attn", d, rng)};
    Mat x = random_mat(5, d, rng);
    Var out1 = causal_self_attention_block(Var::constant(x), p, 2);
    Mat x2 = x;
    x2.row(4).setConstant(9.0);  // perturb the last position
    Var out2 = causal_self_attention_block(Var::constant(x2), p, 2);
    CHECK((out1.value().topRows(4) - out2.value().topRows(4)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out1.value().row(4) - out2.value().row(4)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("transformer blocks pass finite differences end to end") {
    Rng rng(28);
    const int d = 8;
    ParamStore store;
    SublayerParams self_p{LayerNormParams::create(store, "b.self.ln", d),
                          AttentionParams::create(store, "b.self.attn", d, rng)};
    SublayerParams cross_p{LayerNormParams::create(store, "b.cross.ln", d),
                           AttentionParams::create(store, "b.cross.attn", d, rng)};
    FfnSublayerParams ffn_p{LayerNormParams::create(store, "b.ffn.ln", d),
                            FfnParams::create(store, "b.ffn", d, 2, rng)};
    Var x = Var::param(random_mat(3, d, rng));
    Var ctx = Var::param(random_mat(4, d, rng));
    Vec cmask(4);
    cmask << 1, 1, 1, 0;
    Mat probe = random_mat(3, d, rng);
    auto loss = [&] {
        Var h = self_attention_block(x, self_p, 2);
        h = cross_attention_block(h, ctx, cross_p, 2, &cmask);
        h = ffn_block(h, ffn_p);
        return weighted_sum(h, probe);
    };
    std::vector<std::pair<std::string, Var>> params{{"x", x}, {"ctx", ctx}};
    for (const auto& name : store.names()) {
        params.emplace_back(name, store.get(name));
    }
    auto res = grad_check(loss, params);
    INFO(res.worst, " rel err ", res.max_rel_err);
    CHECK(res.ok);
}

TEST_CASE("adam decreases a quadratic and clears gradients") {
    Rng rng(31);
    ParamStore store;
    Var w = store.add("w", 2, 2, -1.0, rng);
    Adam opt(0.05);
    const Mat target = (Mat(2, 2) << 1.0, -2.0, 0.5, 3.0).finished();
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        Var diff = sub(w, Var::constant(target));
        Var loss = mean_all(cmul(diff, diff));
        if (i == 0) {
            first = loss.item();
        }
        last = loss.item();
        backward(loss);
        opt.step(store, store.names());
        CHECK(w.grad().cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(last < 0.01 * first);
}

TEST_CASE("param store counts and hashing") {
    Rng rng(32);
    ParamStore store;
    store.add("enc.a", 3, 4, -1.0, rng);
    store.add("enc.b", 1, 4, 0.0, rng);
    store.add("dec.c", 2, 2, -1.0, rng);
    CHECK(store.element_count() == 3 * 4 + 4 + 2 * 2);
    CHECK(store.element_count_with_prefix("enc.") == 16);
    const auto h = store.content_hash();
    store.get("dec.c").value()(0, 0) += 1e-12;
    CHECK(store.content_hash() != h);
}

TEST_CASE("sinusoidal encoding basic identities") {
    Mat pe = sinusoidal_encoding({0.0, 1.0, 2.0}, 8);
    CHECK(pe(0, 0) == doctest::Approx(0.0));
    CHECK(pe(0, 1) == doctest::Approx(1.0));
    CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(pe.rows() == 3);
    CHECK(pe.cols() == 8);
}
