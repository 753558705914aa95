// SPDX-License-Identifier: MIT
// Numerical kernels against hand arithmetic and a naive attention reference.
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "unilm/nn.hpp"

using namespace unilm;

namespace {

// Reference attention, written straight from the softmax(q·kᵀ·scale)·v
// definition with no shortcuts. Key/value heads are expanded up front so the
// body is plain multi-head attention. Double precision throughout.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                       double scale) {
    std::size_t t = q.shape[0], heads = q.shape[1], d = q.shape[2];
    std::size_t s = k.shape[0], kv = k.shape[1];
    std::size_t group = heads / kv;

    // Expand kv heads so head h uses keys[h] directly.
    auto expand = [&](const Tensor& src) {
        std::vector<std::vector<std::vector<double>>> e(
            s, std::vector<std::vector<double>>(heads, std::vector<double>(d)));
        for (std::size_t j = 0; j < s; ++j)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t c = 0; c < d; ++c)
                    e[j][h][c] = src.data[(j * kv + h / group) * d + c];
        return e;
    };
    auto ke = expand(k), ve = expand(v);

    Tensor out = Tensor::zeros({t, heads, d});
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> w(s, 0.0);
            double denom = 0.0;
            double mx = -1e300;
            for (std::size_t j = 0; j < s; ++j) {
                if (causal && j > i + (s - t)) continue;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c)
                    dot += static_cast<double>(q.data[(i * heads + h) * d + c]) * ke[j][h][c];
                w[j] = dot * scale;
                mx = std::max(mx, w[j]);
            }
            for (std::size_t j = 0; j < s; ++j) {
                if (causal && j > i + (s - t)) {
                    w[j] = 0.0;
                    continue;
                }
                w[j] = std::exp(w[j] - mx);
                denom += w[j];
            }
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < s; ++j) acc += w[j] * ve[j][h][c];
                out.data[(i * heads + h) * d + c] = static_cast<float>(acc / denom);
            }
        }
    }
    return out;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, float lo = -1.0f,
                     float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& x : t.data) x = dist(rng);
    return t;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape == b.shape);
    float m = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

} // namespace

TEST_CASE("linear_nobias identity and zeros") {
    Tensor eye = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at2(i, i) = 1.0f;
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor y = linear_nobias(x, eye);
    CHECK(y.data == x.data);

    Tensor z = linear_nobias(Tensor::zeros({4, 3}), eye);
    for (float v : z.data) CHECK(v == 0.0f);
}

TEST_CASE("linear_nobias hand example") {
    // x = [1,2], W = [[1,1],[0,1]] -> y = [1*1+2*1, 1*0+2*1] = [3,2]
    Tensor x({2}, {1, 2});
    Tensor w({2, 2}, {1, 1, 0, 1});
    Tensor y = linear_nobias(x, w);
    REQUIRE(y.shape == std::vector<std::size_t>{2});
    CHECK(y.data[0] == doctest::Approx(3.0f));
    CHECK(y.data[1] == doctest::Approx(2.0f));
}

TEST_CASE("linear_nobias shape errors") {
    Tensor x({3}, {1, 2, 3});
    Tensor w({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(linear_nobias(x, w), Error);
    try {
        linear_nobias(x, w);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("linear_nobias is pure") {
    std::mt19937 rng(7);
    Tensor x = random_tensor({4, 8}, rng);
    Tensor w = random_tensor({5, 8}, rng);
    Tensor a = linear_nobias(x, w);
    Tensor b = linear_nobias(x, w);
    CHECK(a.data == b.data);
}

TEST_CASE("rms_norm ones and zeros") {
    Tensor x = Tensor::full({6}, 1.0f);
    Tensor w = Tensor::full({6}, 1.0f);
    Tensor y = rms_norm(x, w, 1e-5f);
    for (float v : y.data) CHECK(v == doctest::Approx(1.0f).epsilon(1e-5));

    Tensor z = rms_norm(Tensor::zeros({2, 6}), w, 1e-5f);
    for (float v : z.data) CHECK(v == 0.0f);
    // eps = 0 with a zero vector must stay finite (and zero).
    Tensor z0 = rms_norm(Tensor::zeros({6}), w, 0.0f);
    for (float v : z0.data) CHECK(v == 0.0f);
}

TEST_CASE("rms_norm hand example") {
    // x=[3,4], eps=0: rms = sqrt((9+16)/2) = sqrt(12.5) = 3.5355339
    Tensor x({2}, {3, 4});
    Tensor w({2}, {1, 1});
    Tensor y = rms_norm(x, w, 0.0f);
    CHECK(y.data[0] == doctest::Approx(0.8485281f).epsilon(1e-6));
    CHECK(y.data[1] == doctest::Approx(1.1313708f).epsilon(1e-6));
}

TEST_CASE("rms_norm scale invariance at eps 0") {
    std::mt19937 rng(11);
    Tensor x = random_tensor({3, 16}, rng);
    Tensor w = random_tensor({16}, rng, 0.5f, 1.5f);
    Tensor base = rms_norm(x, w, 0.0f);
    for (float c : {0.5f, 3.0f, 1000.0f}) {
        Tensor xs = x;
        for (float& v : xs.data) v *= c;
        Tensor ys = rms_norm(xs, w, 0.0f);
        for (std::size_t i = 0; i < base.numel(); ++i)
            CHECK(ys.data[i] == doctest::Approx(base.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("rms_norm shape error") {
    CHECK_THROWS_AS(rms_norm(Tensor::zeros({4}), Tensor::zeros({3}), 1e-5f), Error);
}

TEST_CASE("rope zero position is identity") {
    std::mt19937 rng(3);
    Tensor q = random_tensor({1, 2, 8}, rng);
    Tensor k = random_tensor({1, 1, 8}, rng);
    std::vector<std::size_t> pos{0};
    auto [q2, k2] = apply_rope(q, k, pos, 10000.0f);
    CHECK(max_abs_diff(q, q2) <= 1e-7f);
    CHECK(max_abs_diff(k, k2) <= 1e-7f);
}

TEST_CASE("rope hand trig") {
    // head_dim 2, theta 10000, position 1, vector [1, 0]: angle is exactly 1
    // radian, so the pair becomes [cos 1, sin 1].
    Tensor q({1, 1, 2}, {1, 0});
    Tensor k({1, 1, 2}, {1, 0});
    std::vector<std::size_t> pos{1};
    auto [q2, k2] = apply_rope(q, k, pos, 10000.0f);
    CHECK(q2.data[0] == doctest::Approx(0.5403023f).epsilon(1e-6));
    CHECK(q2.data[1] == doctest::Approx(0.8414710f).epsilon(1e-6));
}

TEST_CASE("rope preserves pair norms") {
    std::mt19937 rng(5);
    Tensor q = random_tensor({4, 3, 16}, rng);
    Tensor k = random_tensor({4, 2, 16}, rng);
    std::vector<std::size_t> pos{0, 7, 13, 64};
    auto [q2, k2] = apply_rope(q, k, pos, 10000.0f);
    for (std::size_t i = 0; i + 1 < q.numel(); i += 2) {
        double before = std::hypot(q.data[i], q.data[i + 1]);
        double after = std::hypot(q2.data[i], q2.data[i + 1]);
        CHECK(std::fabs(before - after) <= 1e-6);
    }
}

TEST_CASE("rope shift invariance of dot products") {
    // dot(q'(m), k'(n)) depends only on m - n.
    std::mt19937 rng(17);
    std::uniform_int_distribution<std::size_t> mdist(0, 40);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor q = random_tensor({1, 1, 8}, rng);
        Tensor k = random_tensor({1, 1, 8}, rng);
        std::size_t m = mdist(rng), n = mdist(rng);
        std::size_t shift = 1 + (mdist(rng) % 20);
        auto rot = [&](const Tensor& x, std::size_t p) {
            std::vector<std::size_t> pos{p};
            return apply_rope(x, x, pos, 10000.0f).first;
        };
        auto dot = [](const Tensor& a, const Tensor& b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < a.numel(); ++i)
                acc += static_cast<double>(a.data[i]) * b.data[i];
            return acc;
        };
        double d1 = dot(rot(q, m), rot(k, n));
        double d2 = dot(rot(q, m + shift), rot(k, n + shift));
        CHECK(std::fabs(d1 - d2) <= 1e-6);
    }
}

TEST_CASE("rope odd head_dim rejected") {
    Tensor q = Tensor::zeros({1, 1, 3});
    Tensor k = Tensor::zeros({1, 1, 3});
    std::vector<std::size_t> pos{0};
    try {
        apply_rope(q, k, pos, 10000.0f);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OddHeadDim);
    }
}

TEST_CASE("attention with one query and one key returns v") {
    std::mt19937 rng(23);
    Tensor q = random_tensor({1, 4, 8}, rng);
    Tensor k = random_tensor({1, 2, 8}, rng);
    Tensor v = random_tensor({1, 2, 8}, rng);
    Tensor out = gqa_attention(q, k, v, true);
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t c = 0; c < 8; ++c)
            CHECK(out.data[h * 8 + c] == doctest::Approx(v.data[(h / 2) * 8 + c]).epsilon(1e-6));
}

TEST_CASE("attention matches naive reference when kv == heads") {
    std::mt19937 rng(29);
    std::uniform_int_distribution<std::size_t> sz(1, 16);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t t = sz(rng), s = sz(rng), heads = 1 + (sz(rng) % 4), d = 2 * (1 + sz(rng) % 4);
        bool causal = (trial % 2 == 0);
        if (causal && s < t) std::swap(s, t);
        Tensor q = random_tensor({t, heads, d}, rng);
        Tensor k = random_tensor({s, heads, d}, rng);
        Tensor v = random_tensor({s, heads, d}, rng);
        Tensor got = gqa_attention(q, k, v, causal);
        Tensor want = naive_attention(q, k, v, causal, 1.0 / std::sqrt(static_cast<double>(d)));
        CHECK(max_abs_diff(got, want) <= 1e-6f);
    }
}

TEST_CASE("grouped attention matches expanded-head reference") {
    std::mt19937 rng(31);
    std::uniform_int_distribution<std::size_t> sz(1, 12);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t kv = 1 + sz(rng) % 3;
        std::size_t heads = kv * (1 + sz(rng) % 3);
        std::size_t t = sz(rng), s = sz(rng), d = 4;
        bool causal = (trial % 2 == 1);
        if (causal && s < t) std::swap(s, t);
        Tensor q = random_tensor({t, heads, d}, rng);
        Tensor k = random_tensor({s, kv, d}, rng);
        Tensor v = random_tensor({s, kv, d}, rng);
        Tensor got = gqa_attention(q, k, v, causal);
        Tensor want = naive_attention(q, k, v, causal, 1.0 / std::sqrt(static_cast<double>(d)));
        CHECK(max_abs_diff(got, want) <= 1e-6f);
    }
}

TEST_CASE("identical keys average the visible values") {
    // Equal scores make softmax uniform over the allowed prefix.
    std::mt19937 rng(37);
    std::size_t t = 3, s = 5, d = 4;
    Tensor q = random_tensor({t, 2, d}, rng);
    Tensor k = Tensor::zeros({s, 1, d});
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t c = 0; c < d; ++c) k.data[j * d + c] = 0.25f * (c + 1);
    Tensor v = random_tensor({s, 1, d}, rng);
    Tensor out = gqa_attention(q, k, v, true);
    for (std::size_t i = 0; i < t; ++i) {
        std::size_t visible = i + (s - t) + 1;
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t c = 0; c < d; ++c) {
                double mean = 0.0;
                for (std::size_t j = 0; j < visible; ++j) mean += v.data[j * d + c];
                mean /= static_cast<double>(visible);
                CHECK(out.data[(i * 2 + h) * d + c] == doctest::Approx(mean).epsilon(1e-5));
            }
    }
}

TEST_CASE("attention outputs stay inside the value range") {
    std::mt19937 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t t = 4, s = 6, kv = 2, heads = 4, d = 4;
        Tensor q = random_tensor({t, heads, d}, rng, -2.0f, 2.0f);
        Tensor k = random_tensor({s, kv, d}, rng, -2.0f, 2.0f);
        Tensor v = random_tensor({s, kv, d}, rng, -2.0f, 2.0f);
        Tensor out = gqa_attention(q, k, v, false);
        for (std::size_t h = 0; h < heads; ++h) {
            std::size_t kvh = h / (heads / kv);
            for (std::size_t c = 0; c < d; ++c) {
                float lo = 1e30f, hi = -1e30f;
                for (std::size_t j = 0; j < s; ++j) {
                    float val = v.data[(j * kv + kvh) * d + c];
                    lo = std::min(lo, val);
                    hi = std::max(hi, val);
                }
                for (std::size_t i = 0; i < t; ++i) {
                    float got = out.data[(i * heads + h) * d + c];
                    CHECK(got >= lo - 1e-5f);
                    CHECK(got <= hi + 1e-5f);
                }
            }
        }
    }
}

TEST_CASE("causal masking ignores future keys") {
    std::mt19937 rng(43);
    std::size_t t = 5, s = 5, d = 4;
    Tensor q = random_tensor({t, 2, d}, rng);
    Tensor k = random_tensor({s, 2, d}, rng);
    Tensor v = random_tensor({s, 2, d}, rng);
    Tensor base = gqa_attention(q, k, v, true);
    // Clobber the last key/value row; only the last query row may change.
    Tensor k2 = k, v2 = v;
    for (std::size_t c = 0; c < 2 * d; ++c) {
        k2.data[(s - 1) * 2 * d + c] = 99.0f;
        v2.data[(s - 1) * 2 * d + c] = -99.0f;
    }
    Tensor moved = gqa_attention(q, k2, v2, true);
    for (std::size_t i = 0; i + 1 < t; ++i)
        for (std::size_t c = 0; c < 2 * d; ++c)
            CHECK(moved.data[i * 2 * d + c] == base.data[i * 2 * d + c]);
}

TEST_CASE("attention error cases") {
    Tensor q = Tensor::zeros({2, 3, 4});
    Tensor k = Tensor::zeros({2, 2, 4});
    Tensor v = Tensor::zeros({2, 2, 4});
    try {
        gqa_attention(q, k, v, false);
        FAIL("expected grouping error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::GroupingError);
    }
    // Causal with S < T leaves early queries without any visible key.
    Tensor q2 = Tensor::zeros({3, 2, 4});
    try {
        gqa_attention(q2, k, v, true);
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("swiglu zeros stay zero") {
    std::mt19937 rng(47);
    Tensor wg = random_tensor({6, 4}, rng);
    Tensor wu = random_tensor({6, 4}, rng);
    Tensor wd = random_tensor({4, 6}, rng);
    Tensor y = swiglu_ffn(Tensor::zeros({3, 4}), wg, wu, wd);
    for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("swiglu hand example") {
    // h = f = 1, all weights 1, x = 1: silu(1) * 1 = 1 / (1 + e^-1) = 0.7310586
    Tensor x({1}, {1});
    Tensor one({1, 1}, {1});
    Tensor y = swiglu_ffn(x, one, one, one);
    CHECK(y.data[0] == doctest::Approx(0.7310586f).epsilon(1e-6));
    CHECK(silu(1.0f) == doctest::Approx(0.7310586f).epsilon(1e-6));
}

TEST_CASE("swiglu production shape") {
    // hidden 2048 -> intermediate 5632 -> hidden 2048
    std::mt19937 rng(53);
    Tensor x = random_tensor({1, 2048}, rng, -0.1f, 0.1f);
    Tensor wg = random_tensor({5632, 2048}, rng, -0.01f, 0.01f);
    Tensor wu = random_tensor({5632, 2048}, rng, -0.01f, 0.01f);
    Tensor wd = random_tensor({2048, 5632}, rng, -0.01f, 0.01f);
    Tensor y = swiglu_ffn(x, wg, wu, wd);
    CHECK(y.shape == std::vector<std::size_t>{1, 2048});
    for (float v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("attention geometry validation") {
    AttentionGeometry good{4, 2, 16, 10000.0f};
    CHECK_NOTHROW(good.validate(64));
    AttentionGeometry bad_group{4, 3, 16, 10000.0f};
    CHECK_THROWS_AS(bad_group.validate(64), Error);
    AttentionGeometry odd{4, 2, 15, 10000.0f};
    CHECK_THROWS_AS(odd.validate(60), Error);
}
