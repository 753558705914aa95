// SPDX-License-Identifier: MIT
#include "unilm/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>

#include "io_util.hpp"
#include "rng.hpp"
#include "unilm/error.hpp"
#include "unilm/threads.hpp"

namespace unilm {

namespace {

constexpr std::uint64_t kKmeansSeed = 42;
constexpr int kRestarts = 8;
constexpr int kMaxIters = 50;
constexpr double kMoveTol = 1e-7;

std::size_t nearest(const std::vector<double>& centroids, double x) {
    std::size_t best = 0;
    double bd = std::abs(x - centroids[0]);
    for (std::size_t j = 1; j < centroids.size(); ++j) {
        double d = std::abs(x - centroids[j]);
        if (d < bd) {
            bd = d;
            best = j;
        }
    }
    return best;
}

// Extends `c` to k centroids with k-means++ draws: each new centroid is a
// data point picked with probability proportional to its squared distance
// from the nearest centroid so far.
void kmeanspp_extend(const std::vector<double>& pts, std::vector<double>& c, std::size_t k,
                     detail::GaussianRng& rng) {
    if (c.empty()) {
        std::size_t idx = std::min(pts.size() - 1,
                                   static_cast<std::size_t>(rng.uniform() * pts.size()));
        c.push_back(pts[idx]);
    }
    std::vector<double> d2(pts.size());
    while (c.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double d = pts[i] - c[nearest(c, pts[i])];
            d2[i] = d * d;
            total += d2[i];
        }
        if (total == 0.0) {
            // Every point already coincides with a centroid; duplicates are
            // harmless padding.
            c.push_back(c.back());
            continue;
        }
        double u = rng.uniform() * total;
        double cum = 0.0;
        std::size_t pick = pts.size() - 1;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            cum += d2[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        c.push_back(pts[pick]);
    }
}

// Lloyd iterations in place; returns the converged MSE. The assignment step
// never increases cost, so the result is at least as good as the initial
// centroid set scored as-is.
double lloyd(const std::vector<double>& pts, std::vector<double>& c) {
    std::size_t k = c.size();
    std::vector<double> sums(k);
    std::vector<std::size_t> counts(k);
    for (int iter = 0; iter < kMaxIters; ++iter) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0u);
        for (double p : pts) {
            std::size_t j = nearest(c, p);
            sums[j] += p;
            counts[j] += 1;
        }
        double move = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue; // empty cluster keeps its centroid
            double nc = sums[j] / static_cast<double>(counts[j]);
            move = std::max(move, std::abs(nc - c[j]));
            c[j] = nc;
        }
        if (move < kMoveTol) break;
    }
    double mse = 0.0;
    for (double p : pts) {
        double d = p - c[nearest(c, p)];
        mse += d * d;
    }
    return mse / static_cast<double>(pts.size());
}

// Exact 1-D k-means: optimal clusters are contiguous runs of the sorted
// values, so dynamic programming over split points finds the global optimum.
// O(n^2 k), fine at palette group sizes.
std::vector<double> optimal_partition_centroids(const std::vector<double>& pts, std::size_t k) {
    std::vector<double> sorted(pts);
    std::sort(sorted.begin(), sorted.end());
    std::size_t n = sorted.size();
    std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        s1[i + 1] = s1[i] + sorted[i];
        s2[i + 1] = s2[i] + sorted[i] * sorted[i];
    }
    auto sse = [&](std::size_t a, std::size_t b) {
        double len = static_cast<double>(b - a);
        double s = s1[b] - s1[a];
        return (s2[b] - s2[a]) - s * s / len;
    };

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> cost(k + 1, std::vector<double>(n + 1, kInf));
    std::vector<std::vector<std::size_t>> from(k + 1, std::vector<std::size_t>(n + 1, 0));
    for (std::size_t i = 1; i <= n; ++i) cost[1][i] = sse(0, i);
    for (std::size_t j = 2; j <= k; ++j) {
        for (std::size_t i = j; i <= n; ++i) {
            for (std::size_t a = j - 1; a < i; ++a) {
                double c = cost[j - 1][a] + sse(a, i);
                if (c < cost[j][i]) {
                    cost[j][i] = c;
                    from[j][i] = a;
                }
            }
        }
    }
    std::vector<double> centroids(k);
    std::size_t end = n;
    for (std::size_t j = k; j >= 1; --j) {
        std::size_t start = j == 1 ? 0 : from[j][end];
        centroids[j - 1] = (s1[end] - s1[start]) / static_cast<double>(end - start);
        end = start;
    }
    return centroids;
}

// Best of several Lloyd runs: k-means++ restarts from a fixed seed, plus one
// run seeded with the exact contiguous-partition optimum (a Lloyd fixed
// point, so the result is never worse than the global 1-D optimum). Passing
// the converged 2-bit centroids as `anchor` makes every 16-centroid restart
// start at least as good as the 2-bit solution.
std::vector<double> best_centroids(const std::vector<double>& pts, std::size_t k,
                                   const std::vector<double>& anchor) {
    detail::GaussianRng rng(kKmeansSeed);
    std::vector<double> best = optimal_partition_centroids(pts, k);
    double best_mse = lloyd(pts, best);
    for (int r = 0; r < kRestarts; ++r) {
        std::vector<double> c = anchor;
        kmeanspp_extend(pts, c, k, rng);
        double mse = lloyd(pts, c);
        if (mse < best_mse) {
            best_mse = mse;
            best = std::move(c);
        }
    }
    return best;
}

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d)
            raise(ErrorCode::MalformedFile, "shape overflows");
        n *= d;
    }
    return n;
}

std::size_t group_count_for(std::size_t numel, std::size_t group_size) {
    return (numel + group_size - 1) / group_size;
}

std::size_t group_length(std::size_t numel, std::size_t group_size, std::size_t g) {
    return std::min(group_size, numel - g * group_size);
}

void validate_palettized(const PalettizedTensor& p, ErrorCode code) {
    if (p.group_size == 0) raise(code, "group size must be positive");
    std::size_t numel = shape_numel(p.original_shape);
    if (p.groups.size() != group_count_for(numel, p.group_size))
        raise(code, "group count does not match shape");
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const PalettizedGroup& grp = p.groups[g];
        if (grp.bits != 2 && grp.bits != 4) raise(code, "group bits must be 2 or 4");
        std::size_t k = std::size_t(1) << grp.bits;
        if (grp.codebook.size() != k) raise(code, "codebook size does not match bits");
        for (float v : grp.codebook)
            if (!std::isfinite(v)) raise(code, "codebook entry is not finite");
        if (grp.indices.size() != group_length(numel, p.group_size, g))
            raise(code, "group length does not match shape");
        for (std::uint8_t idx : grp.indices)
            if (idx >= k) raise(code, "index outside codebook");
    }
}

} // namespace

std::pair<std::vector<float>, std::vector<std::uint8_t>> palettize_group(
    std::span<const float> values, int bits) {
    if (values.empty()) raise(ErrorCode::EmptyGroup, "cannot palettize an empty group");
    if (bits != 2 && bits != 4)
        raise(ErrorCode::InvalidConfig, "palette width must be 2 or 4 bits");
    std::size_t k = std::size_t(1) << bits;

    std::vector<float> distinct(values.begin(), values.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<float> codebook;
    if (distinct.size() <= k) {
        // Few enough distinct values to represent exactly; pad with copies.
        codebook = distinct;
        codebook.resize(k, distinct.back());
    } else {
        std::vector<double> pts(values.begin(), values.end());
        std::vector<double> centroids;
        if (bits == 2) {
            centroids = best_centroids(pts, k, {});
        } else {
            std::vector<double> two_bit = best_centroids(pts, 4, {});
            centroids = best_centroids(pts, k, two_bit);
        }
        std::sort(centroids.begin(), centroids.end());
        codebook.reserve(k);
        for (double c : centroids) codebook.push_back(static_cast<float>(c));
    }

    std::vector<std::uint8_t> indices(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::size_t best = 0;
        float bd = std::abs(values[i] - codebook[0]);
        for (std::size_t j = 1; j < k; ++j) {
            float d = std::abs(values[i] - codebook[j]);
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        indices[i] = static_cast<std::uint8_t>(best);
    }
    return {std::move(codebook), std::move(indices)};
}

MixedPrecisionPlan plan_mixed_precision(std::span<const double> group_sensitivities,
                                        double target_avg_bits) {
    if (group_sensitivities.empty())
        raise(ErrorCode::EmptyGroup, "plan needs at least one group");
    if (!(target_avg_bits >= 2.0 && target_avg_bits <= 4.0))
        raise(ErrorCode::TargetOutOfRange, "target average bits must lie in [2, 4]");

    std::size_t n = group_sensitivities.size();
    double fraction = (target_avg_bits - 2.0) / 2.0;
    auto n4 = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    n4 = std::min(n4, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return group_sensitivities[a] > group_sensitivities[b];
    });

    MixedPrecisionPlan plan;
    plan.bits_per_group.assign(n, 2);
    for (std::size_t i = 0; i < n4; ++i) plan.bits_per_group[order[i]] = 4;
    plan.target_avg_bits = target_avg_bits;
    plan.achieved_avg_bits =
        (4.0 * static_cast<double>(n4) + 2.0 * static_cast<double>(n - n4)) /
        static_cast<double>(n);
    return plan;
}

std::vector<double> group_sensitivities(const Tensor& t, std::size_t group_size) {
    if (group_size == 0) raise(ErrorCode::InvalidConfig, "group size must be positive");
    std::size_t numel = t.numel();
    std::size_t n = group_count_for(numel, group_size);
    std::vector<double> sens(n);
    for (std::size_t g = 0; g < n; ++g) {
        std::size_t len = group_length(numel, group_size, g);
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i)
            acc += std::abs(static_cast<double>(t.data[g * group_size + i]));
        sens[g] = acc / static_cast<double>(len);
    }
    return sens;
}

PalettizedTensor palettize_tensor(const Tensor& t, std::size_t group_size,
                                  const MixedPrecisionPlan& plan) {
    if (group_size == 0) raise(ErrorCode::InvalidConfig, "group size must be positive");
    if (t.numel() == 0) raise(ErrorCode::EmptyGroup, "cannot palettize an empty tensor");
    std::size_t n = group_count_for(t.numel(), group_size);
    if (plan.bits_per_group.size() != n)
        raise(ErrorCode::PlanLengthMismatch,
              "plan covers " + std::to_string(plan.bits_per_group.size()) + " groups, tensor has " +
                  std::to_string(n));

    PalettizedTensor out;
    out.original_shape = t.shape;
    out.group_size = group_size;
    out.groups.resize(n);
    parallel_for(0, n, [&](std::size_t g) {
        std::size_t len = group_length(t.numel(), group_size, g);
        auto [codebook, indices] = palettize_group(
            std::span<const float>(t.data.data() + g * group_size, len), plan.bits_per_group[g]);
        out.groups[g] = PalettizedGroup{plan.bits_per_group[g], std::move(codebook),
                                        std::move(indices)};
    });
    return out;
}

Tensor depalettize(const PalettizedTensor& p) {
    validate_palettized(p, ErrorCode::CorruptIndices);
    Tensor t = Tensor::zeros(p.original_shape);
    std::size_t pos = 0;
    for (const PalettizedGroup& grp : p.groups)
        for (std::uint8_t idx : grp.indices) t.data[pos++] = grp.codebook[idx];
    return t;
}

QuantReport quantization_report(const Tensor& original, const PalettizedTensor& p) {
    if (original.shape != p.original_shape)
        raise(ErrorCode::ShapeMismatch, "original and palettized shapes differ");
    Tensor recon = depalettize(p);

    QuantReport rep;
    double bit_sum = 0.0;
    double codebook_bits = 0.0;
    for (const PalettizedGroup& grp : p.groups) {
        bit_sum += static_cast<double>(grp.bits) * static_cast<double>(grp.indices.size());
        codebook_bits += 32.0 * static_cast<double>(grp.codebook.size());
    }
    auto n = static_cast<double>(original.numel());
    for (std::size_t i = 0; i < original.numel(); ++i) {
        double d = static_cast<double>(original.data[i]) - static_cast<double>(recon.data[i]);
        rep.mse += d * d;
        rep.max_abs_err = std::max(rep.max_abs_err, std::abs(d));
    }
    rep.mse /= n;
    rep.avg_bits = bit_sum / n;
    rep.compression_ratio = 32.0 / (rep.avg_bits + codebook_bits / n);
    return rep;
}

namespace {

constexpr char kQuantMagic[4] = {'U', 'N', 'L', 'Q'};
constexpr char kBundleMagic[4] = {'U', 'N', 'L', 'B'};
constexpr std::uint32_t kQuantVersion = 1;

void write_packed_indices(detail::ByteWriter& w, const PalettizedGroup& grp) {
    std::size_t bits = grp.bits;
    std::vector<std::uint8_t> packed((grp.indices.size() * bits + 7) / 8, 0);
    for (std::size_t j = 0; j < grp.indices.size(); ++j) {
        std::size_t bit = j * bits;
        packed[bit / 8] |= static_cast<std::uint8_t>(grp.indices[j] << (bit % 8));
    }
    for (std::uint8_t b : packed) w.u8(b);
}

// Body shared by the single-tensor file and bundle entries: group size,
// shape, then per-group palette and packed codes.
void write_palettized_body(detail::ByteWriter& w, const PalettizedTensor& p) {
    w.u32(static_cast<std::uint32_t>(p.group_size));
    w.u8(static_cast<std::uint8_t>(p.original_shape.size()));
    for (std::size_t d : p.original_shape) w.u64(d);
    w.u64(p.groups.size());
    for (const PalettizedGroup& grp : p.groups) {
        w.u8(grp.bits);
        for (float c : grp.codebook) w.f32(c);
        write_packed_indices(w, grp);
    }
}

PalettizedTensor read_palettized_body(detail::ByteReader& r) {
    PalettizedTensor p;
    p.group_size = r.u32();
    if (p.group_size == 0) raise(ErrorCode::MalformedFile, "group size must be positive");
    std::uint8_t rank = r.u8();
    for (std::uint8_t i = 0; i < rank; ++i) p.original_shape.push_back(r.u64());
    std::size_t numel = checked_numel(p.original_shape);
    std::uint64_t count = r.u64();
    if (count != group_count_for(numel, p.group_size))
        raise(ErrorCode::MalformedFile, "group count does not match shape");
    p.groups.resize(count);
    for (std::size_t g = 0; g < count; ++g) {
        PalettizedGroup& grp = p.groups[g];
        grp.bits = r.u8();
        if (grp.bits != 2 && grp.bits != 4)
            raise(ErrorCode::MalformedFile, "group bits must be 2 or 4");
        std::size_t k = std::size_t(1) << grp.bits;
        grp.codebook.resize(k);
        for (std::size_t j = 0; j < k; ++j) grp.codebook[j] = r.f32();
        std::size_t len = group_length(numel, p.group_size, g);
        std::string packed = r.bytes((len * grp.bits + 7) / 8);
        grp.indices.resize(len);
        for (std::size_t j = 0; j < len; ++j) {
            std::size_t bit = j * grp.bits;
            grp.indices[j] = static_cast<std::uint8_t>(
                (static_cast<std::uint8_t>(packed[bit / 8]) >> (bit % 8)) & (k - 1));
        }
    }
    return p;
}

} // namespace

std::string serialize_palettized(const PalettizedTensor& p) {
    validate_palettized(p, ErrorCode::CorruptIndices);
    detail::ByteWriter w;
    w.bytes(std::string(kQuantMagic, 4));
    w.u32(kQuantVersion);
    write_palettized_body(w, p);
    return w.buf;
}

PalettizedTensor parse_palettized(const std::string& bytes) {
    detail::ByteReader r(bytes, ErrorCode::MalformedFile);
    if (r.bytes(4) != std::string(kQuantMagic, 4))
        raise(ErrorCode::MalformedFile, "bad magic, not a palette file");
    std::uint32_t version = r.u32();
    if (version != kQuantVersion)
        raise(ErrorCode::UnsupportedVersion,
              "palette file version " + std::to_string(version) + " not supported");
    PalettizedTensor p = read_palettized_body(r);
    r.expect_consumed();
    return p;
}

void save_palettized(const PalettizedTensor& p, const std::string& path) {
    detail::write_file_bytes(path, serialize_palettized(p));
}

PalettizedTensor load_palettized(const std::string& path) {
    return parse_palettized(detail::read_file_bytes(path));
}

QuantizedModel quantize_model(const Checkpoint& ckpt, const ModelQuantOptions& opts) {
    ckpt.config.validate();
    validate_checkpoint(ckpt);
    if (opts.group_size == 0) raise(ErrorCode::InvalidConfig, "group size must be positive");
    if (!(opts.target_avg_bits >= 2.0 && opts.target_avg_bits <= 4.0))
        raise(ErrorCode::TargetOutOfRange, "target average bits must lie in [2, 4]");

    QuantizedModel qm;
    qm.config = ckpt.config;
    qm.options = opts;

    // Weight matrices compete in one global sensitivity ranking; norms (and
    // by default the embedding table) stay full precision.
    std::vector<std::string> covered;
    for (const auto& [name, t] : ckpt.tensors) {
        bool is_embed = name == "embed.weight";
        if (t.rank() == 2 && (!is_embed || opts.include_embeddings))
            covered.push_back(name);
        else
            qm.raw.emplace(name, t);
    }

    std::vector<double> all_sens;
    std::vector<std::size_t> counts;
    for (const auto& name : covered) {
        auto sens = group_sensitivities(ckpt.tensors.at(name), opts.group_size);
        counts.push_back(sens.size());
        all_sens.insert(all_sens.end(), sens.begin(), sens.end());
    }
    MixedPrecisionPlan global = plan_mixed_precision(all_sens, opts.target_avg_bits);

    std::size_t offset = 0;
    for (std::size_t i = 0; i < covered.size(); ++i) {
        MixedPrecisionPlan slice;
        slice.bits_per_group.assign(global.bits_per_group.begin() + offset,
                                    global.bits_per_group.begin() + offset + counts[i]);
        slice.target_avg_bits = opts.target_avg_bits;
        double sum = 0.0;
        for (std::uint8_t b : slice.bits_per_group) sum += b;
        slice.achieved_avg_bits = sum / static_cast<double>(counts[i]);
        qm.palettized.emplace(
            covered[i], palettize_tensor(ckpt.tensors.at(covered[i]), opts.group_size, slice));
        offset += counts[i];
    }
    return qm;
}

Checkpoint dequantize_model(const QuantizedModel& qm) {
    Checkpoint ckpt;
    ckpt.config = qm.config;
    for (const auto& [name, t] : qm.raw) ckpt.tensors.emplace(name, t);
    for (const auto& [name, p] : qm.palettized) ckpt.tensors.emplace(name, depalettize(p));
    validate_checkpoint(ckpt);
    return ckpt;
}

double average_bits(const QuantizedModel& qm) {
    double bit_sum = 0.0;
    double n = 0.0;
    for (const auto& [name, p] : qm.palettized) {
        (void)name;
        for (const PalettizedGroup& grp : p.groups) {
            bit_sum += static_cast<double>(grp.bits) * static_cast<double>(grp.indices.size());
            n += static_cast<double>(grp.indices.size());
        }
    }
    return n == 0.0 ? 0.0 : bit_sum / n;
}

void save_quantized_model(const QuantizedModel& qm, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(std::string(kBundleMagic, 4));
    w.u32(kQuantVersion);

    nlohmann::json meta;
    meta["config"] = detail::model_config_to_json(qm.config);
    meta["group_size"] = qm.options.group_size;
    meta["target_avg_bits"] = qm.options.target_avg_bits;
    meta["include_embeddings"] = qm.options.include_embeddings;
    std::string mj = meta.dump();
    w.u64(mj.size());
    w.bytes(mj);

    w.u32(static_cast<std::uint32_t>(qm.raw.size() + qm.palettized.size()));
    std::vector<std::string> names;
    for (const auto& [name, t] : qm.raw) {
        (void)t;
        names.push_back(name);
    }
    for (const auto& [name, p] : qm.palettized) {
        (void)p;
        names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        detail::ByteWriter blob;
        auto raw_it = qm.raw.find(name);
        if (raw_it != qm.raw.end()) {
            w.u8(0);
            const Tensor& t = raw_it->second;
            blob.u8(static_cast<std::uint8_t>(t.shape.size()));
            for (std::size_t d : t.shape) blob.u64(d);
            for (float v : t.data) blob.f32(v);
        } else {
            w.u8(1);
            write_palettized_body(blob, qm.palettized.at(name));
        }
        w.u64(blob.buf.size());
        w.bytes(blob.buf);
    }
    detail::write_file_bytes(path, w.buf);
}

QuantizedModel load_quantized_model(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, ErrorCode::MalformedFile);
    if (r.bytes(4) != std::string(kBundleMagic, 4))
        raise(ErrorCode::MalformedFile, "bad magic, not a palette bundle");
    std::uint32_t version = r.u32();
    if (version != kQuantVersion)
        raise(ErrorCode::UnsupportedVersion,
              "bundle version " + std::to_string(version) + " not supported");

    std::uint64_t mlen = r.u64();
    if (mlen > r.remaining()) raise(ErrorCode::MalformedFile, "file truncated");
    nlohmann::json meta = nlohmann::json::parse(r.bytes(mlen), nullptr, false);
    if (meta.is_discarded()) raise(ErrorCode::MalformedFile, "metadata is not valid JSON");
    if (!meta.contains("config") || !meta.contains("group_size") ||
        !meta["group_size"].is_number_unsigned() || !meta.contains("target_avg_bits") ||
        !meta["target_avg_bits"].is_number() || !meta.contains("include_embeddings") ||
        !meta["include_embeddings"].is_boolean())
        raise(ErrorCode::MalformedFile, "metadata is missing required fields");

    QuantizedModel qm;
    qm.config = detail::model_config_from_json(meta["config"], ErrorCode::MalformedFile);
    qm.options.group_size = meta["group_size"].get<std::size_t>();
    qm.options.target_avg_bits = meta["target_avg_bits"].get<double>();
    qm.options.include_embeddings = meta["include_embeddings"].get<bool>();

    std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u16());
        std::uint8_t kind = r.u8();
        std::uint64_t blen = r.u64();
        if (blen > r.remaining()) raise(ErrorCode::MalformedFile, "file truncated");
        std::string blob = r.bytes(blen);
        detail::ByteReader br(blob, ErrorCode::MalformedFile);
        if (qm.raw.count(name) || qm.palettized.count(name))
            raise(ErrorCode::MalformedFile, "duplicate entry: " + name);
        if (kind == 0) {
            std::uint8_t rank = br.u8();
            std::vector<std::size_t> shape;
            for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(br.u64());
            std::size_t numel = checked_numel(shape);
            Tensor t = Tensor::zeros(shape);
            if (br.remaining() != numel * 4)
                raise(ErrorCode::MalformedFile, "tensor payload length mismatch: " + name);
            for (std::size_t j = 0; j < numel; ++j) t.data[j] = br.f32();
            qm.raw.emplace(name, std::move(t));
        } else if (kind == 1) {
            qm.palettized.emplace(name, read_palettized_body(br));
            br.expect_consumed();
        } else {
            raise(ErrorCode::MalformedFile, "unknown entry kind");
        }
    }
    r.expect_consumed();
    return qm;
}

} // namespace unilm
