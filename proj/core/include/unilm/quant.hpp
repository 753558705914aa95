// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unilm/model.hpp"
#include "unilm/tensor.hpp"

namespace unilm {

// One palette group: every value is replaced by an index into a codebook of
// 2^bits entries. Indices are stored one per value in memory; bit packing
// happens only in the file format.
struct PalettizedGroup {
    std::uint8_t bits = 0; // 2 or 4
    std::vector<float> codebook;
    std::vector<std::uint8_t> indices;
};

struct PalettizedTensor {
    std::vector<std::size_t> original_shape;
    std::size_t group_size = 0; // last group may be short
    std::vector<PalettizedGroup> groups;
};

struct MixedPrecisionPlan {
    std::vector<std::uint8_t> bits_per_group;
    double achieved_avg_bits = 0.0;
    double target_avg_bits = 0.0;
};

struct QuantReport {
    double mse = 0.0;
    double max_abs_err = 0.0;
    double avg_bits = 0.0;
    // 32 / (avg_bits + codebook bits amortized per weight); always below the
    // payload-only bound 32/avg_bits.
    double compression_ratio = 0.0;
};

// k-means codebook for one group. k = 2^bits centroids, k-means++ seeding
// with a fixed seed plus deterministic restarts, at most 50 Lloyd iterations
// or movement below 1e-7. Groups with at most k distinct values reconstruct
// exactly. The 4-bit search starts from the 2-bit solution's centroids, so
// 4-bit error never exceeds 2-bit error on the same group.
std::pair<std::vector<float>, std::vector<std::uint8_t>> palettize_group(
    std::span<const float> values, int bits);

// Gives 4 bits to the round(f*N) most sensitive groups, f = (target-2)/2,
// ties broken toward the lower group index. TargetOutOfRange outside [2,4].
MixedPrecisionPlan plan_mixed_precision(std::span<const double> group_sensitivities,
                                        double target_avg_bits);

// Mean |value| per row-major group; the sensitivity proxy the planner ranks.
std::vector<double> group_sensitivities(const Tensor& t, std::size_t group_size);

// Cuts the tensor into row-major groups of group_size and palettizes each
// with its planned bit width. PlanLengthMismatch when the plan does not have
// exactly one entry per group.
PalettizedTensor palettize_tensor(const Tensor& t, std::size_t group_size,
                                  const MixedPrecisionPlan& plan);

// Index -> codebook lookup, original shape restored. CorruptIndices on any
// structural damage (bad bits, short groups, index outside the codebook).
Tensor depalettize(const PalettizedTensor& p);

QuantReport quantization_report(const Tensor& original, const PalettizedTensor& p);

// Single-tensor palette container. Indices are packed LSB-first, 2 or 4 bits
// each; group lengths are implied by the stored shape and group size.
std::string serialize_palettized(const PalettizedTensor& p);
PalettizedTensor parse_palettized(const std::string& bytes);
void save_palettized(const PalettizedTensor& p, const std::string& path);
PalettizedTensor load_palettized(const std::string& path);

struct ModelQuantOptions {
    std::size_t group_size = 64;
    double target_avg_bits = 3.5;
    bool include_embeddings = false; // norms always stay full precision
};

// A checkpoint with its weight matrices palettized. Sensitivity ranking is
// global: groups from every covered tensor compete for the 4-bit budget.
struct QuantizedModel {
    ModelConfig config;
    ModelQuantOptions options;
    std::map<std::string, Tensor> raw;
    std::map<std::string, PalettizedTensor> palettized;
};

QuantizedModel quantize_model(const Checkpoint& ckpt, const ModelQuantOptions& opts);
Checkpoint dequantize_model(const QuantizedModel& qm);

// Average assigned bits over all palettized weights.
double average_bits(const QuantizedModel& qm);

// Whole-model bundle: config plus a mix of raw and palettized tensors.
void save_quantized_model(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_quantized_model(const std::string& path);

} // namespace unilm
