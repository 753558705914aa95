// SPDX-License-Identifier: MIT
#include "unilm/nn.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "unilm/threads.hpp"

namespace unilm {

namespace {

void check(bool ok, ErrorCode code, const char* msg) {
    if (!ok) raise(code, msg);
}

// Work below this output-element threshold runs serially; thread startup
// would dominate.
constexpr std::size_t kParallelGrain = std::size_t{1} << 15;

} // namespace

void AttentionGeometry::validate(std::size_t hidden_size) const {
    check(n_heads > 0 && n_kv_heads > 0 && head_dim > 0, ErrorCode::ShapeMismatch,
          "attention geometry has a zero dimension");
    check(n_heads % n_kv_heads == 0, ErrorCode::GroupingError,
          "n_heads must be a multiple of n_kv_heads");
    check(head_dim % 2 == 0, ErrorCode::OddHeadDim, "head_dim must be even");
    check(n_heads * head_dim == hidden_size, ErrorCode::ShapeMismatch,
          "n_heads * head_dim must equal hidden_size");
}

float silu(float z) { return z / (1.0f + std::exp(-z)); }

void softmax_inplace(std::span<float> v) {
    if (v.empty()) return;
    float mx = v[0];
    for (float x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (float& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (float& x : v) x = static_cast<float>(x / sum);
}

Tensor linear_nobias(const Tensor& x, const Tensor& W) {
    check(W.rank() == 2, ErrorCode::ShapeMismatch, "weight must be rank 2 [out, in]");
    check(x.rank() >= 1, ErrorCode::ShapeMismatch, "input must have rank >= 1");
    std::size_t in = x.shape.back();
    check(in == W.shape[1], ErrorCode::ShapeMismatch, "inner dimensions do not match");
    std::size_t out = W.shape[0];
    std::size_t batch = in == 0 ? 0 : x.numel() / in;

    std::vector<std::size_t> oshape = x.shape;
    oshape.back() = out;
    Tensor y = Tensor::zeros(std::move(oshape));

    auto one_row = [&](std::size_t b) {
        const float* xb = x.data.data() + b * in;
        float* yb = y.data.data() + b * out;
        for (std::size_t o = 0; o < out; ++o) {
            const float* w = W.data.data() + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(xb[i]) * w[i];
            yb[o] = static_cast<float>(acc);
        }
    };
    auto one_out_col = [&](std::size_t o) {
        const float* w = W.data.data() + o * in;
        for (std::size_t b = 0; b < batch; ++b) {
            const float* xb = x.data.data() + b * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(xb[i]) * w[i];
            y.data[b * out + o] = static_cast<float>(acc);
        }
    };

    std::size_t work = batch * out * (in == 0 ? 1 : in);
    std::size_t threads = static_cast<std::size_t>(num_threads());
    if (work >= kParallelGrain && threads > 1) {
        if (batch >= 2 * threads) parallel_for(0, batch, one_row);
        else parallel_for(0, out, one_out_col);
    } else {
        for (std::size_t b = 0; b < batch; ++b) one_row(b);
    }
    return y;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
    check(weight.rank() == 1, ErrorCode::ShapeMismatch, "rms_norm weight must be rank 1");
    check(x.rank() >= 1, ErrorCode::ShapeMismatch, "input must have rank >= 1");
    std::size_t h = x.shape.back();
    check(h == weight.shape[0] && h > 0, ErrorCode::ShapeMismatch,
          "rms_norm weight length must equal the trailing dimension");
    check(eps >= 0.0f, ErrorCode::InvalidConfig, "eps must be non-negative");

    Tensor y = Tensor::zeros(x.shape);
    std::size_t rows = x.numel() / h;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data.data() + r * h;
        float* yr = y.data.data() + r * h;
        double ms = 0.0;
        for (std::size_t i = 0; i < h; ++i) ms += static_cast<double>(xr[i]) * xr[i];
        ms /= static_cast<double>(h);
        double denom = std::sqrt(ms + static_cast<double>(eps));
        if (denom == 0.0) continue; // all-zero row with eps 0 stays zero
        for (std::size_t i = 0; i < h; ++i)
            yr[i] = static_cast<float>(xr[i] / denom * weight.data[i]);
    }
    return y;
}

std::pair<Tensor, Tensor> apply_rope(const Tensor& q, const Tensor& k,
                                     std::span<const std::size_t> positions, float theta) {
    check(q.rank() == 3 && k.rank() == 3, ErrorCode::ShapeMismatch,
          "rope inputs must be [T, heads, head_dim]");
    std::size_t t = q.shape[0], hd = q.shape[2];
    check(k.shape[0] == t && k.shape[2] == hd, ErrorCode::ShapeMismatch,
          "q and k disagree on T or head_dim");
    check(hd % 2 == 0, ErrorCode::OddHeadDim, "head_dim must be even for rope pairs");
    check(positions.size() == t, ErrorCode::ShapeMismatch, "positions length must equal T");
    check(theta > 0.0f, ErrorCode::InvalidConfig, "theta must be positive");

    auto rotate = [&](const Tensor& src) {
        Tensor dst = src;
        std::size_t heads = src.shape[1];
        for (std::size_t i = 0; i < t; ++i) {
            double pos = static_cast<double>(positions[i]);
            for (std::size_t hh = 0; hh < heads; ++hh) {
                float* row = dst.data.data() + (i * heads + hh) * hd;
                for (std::size_t j = 0; j < hd / 2; ++j) {
                    double freq = std::pow(static_cast<double>(theta),
                                           -2.0 * static_cast<double>(j) / static_cast<double>(hd));
                    double angle = pos * freq;
                    double c = std::cos(angle), s = std::sin(angle);
                    double x0 = row[2 * j], x1 = row[2 * j + 1];
                    row[2 * j] = static_cast<float>(x0 * c - x1 * s);
                    row[2 * j + 1] = static_cast<float>(x0 * s + x1 * c);
                }
            }
        }
        return dst;
    };
    return {rotate(q), rotate(k)};
}

Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                     std::optional<float> scale) {
    check(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, ErrorCode::ShapeMismatch,
          "attention inputs must be rank 3");
    std::size_t t = q.shape[0], heads = q.shape[1], d = q.shape[2];
    std::size_t s = k.shape[0], kv = k.shape[1];
    check(k.shape[2] == d && v.shape[2] == d, ErrorCode::ShapeMismatch,
          "head_dim mismatch between q, k, v");
    check(v.shape[0] == s && v.shape[1] == kv, ErrorCode::ShapeMismatch,
          "k and v must share [S, n_kv_heads]");
    check(kv > 0 && heads % kv == 0, ErrorCode::GroupingError,
          "n_heads must be a multiple of n_kv_heads");
    check(t > 0 && s > 0 && d > 0, ErrorCode::ShapeMismatch, "empty attention input");
    // With fewer keys than queries the earliest queries would see no key at all.
    check(!causal || s >= t, ErrorCode::ShapeMismatch, "causal attention requires S >= T");

    double sc = scale ? static_cast<double>(*scale) : 1.0 / std::sqrt(static_cast<double>(d));
    std::size_t group = heads / kv;
    Tensor out = Tensor::zeros({t, heads, d});

    auto one_head = [&](std::size_t hh) {
        std::size_t kvh = hh / group;
        std::vector<double> scores(s);
        for (std::size_t i = 0; i < t; ++i) {
            std::size_t limit = causal ? i + (s - t) + 1 : s; // exclusive
            const float* qrow = q.data.data() + (i * heads + hh) * d;
            double mx = -1e300;
            for (std::size_t j = 0; j < limit; ++j) {
                const float* krow = k.data.data() + (j * kv + kvh) * d;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(qrow[c]) * krow[c];
                scores[j] = dot * sc;
                mx = std::max(mx, scores[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                sum += scores[j];
            }
            float* orow = out.data.data() + (i * heads + hh) * d;
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < limit; ++j) {
                    const float* vrow = v.data.data() + (j * kv + kvh) * d;
                    acc += scores[j] * vrow[c];
                }
                orow[c] = static_cast<float>(acc / sum);
            }
        }
    };

    std::size_t work = t * heads * s * d;
    if (work >= kParallelGrain && num_threads() > 1) parallel_for(0, heads, one_head);
    else
        for (std::size_t hh = 0; hh < heads; ++hh) one_head(hh);
    return out;
}

Tensor swiglu_ffn(const Tensor& x, const Tensor& w_gate, const Tensor& w_up,
                  const Tensor& w_down) {
    check(w_gate.rank() == 2 && w_up.rank() == 2 && w_down.rank() == 2, ErrorCode::ShapeMismatch,
          "ffn weights must be rank 2");
    std::size_t h = x.shape.empty() ? 0 : x.shape.back();
    std::size_t f = w_gate.shape[0];
    check(w_gate.shape[1] == h && w_up.shape[0] == f && w_up.shape[1] == h,
          ErrorCode::ShapeMismatch, "gate/up weights must be [f, h]");
    check(w_down.shape[0] == h && w_down.shape[1] == f, ErrorCode::ShapeMismatch,
          "down weight must be [h, f]");

    Tensor gate = linear_nobias(x, w_gate);
    Tensor up = linear_nobias(x, w_up);
    for (std::size_t i = 0; i < gate.numel(); ++i) gate.data[i] = silu(gate.data[i]) * up.data[i];
    return linear_nobias(gate, w_down);
}

} // namespace unilm
