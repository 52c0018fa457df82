#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckmerge/errors.hpp"
#include "ckmerge/quantile.hpp"
#include "ckmerge/tensor_map.hpp"

namespace ckmerge {

/// Scope over which softmax normalization feeds threshold statistics: one
/// tensor at a time, or the model's whole flattened parameter vector.
enum class Granularity : std::uint8_t { PerTensor, Global };

inline std::string_view granularity_name(Granularity g) {
  return g == Granularity::PerTensor ? "tensor" : "global";
}

struct FusionParams {
  double lambda = 1.5;     // threshold balance coefficient
  double epsilon = 1e-8;   // additive softmax floor
  Granularity granularity = Granularity::PerTensor;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0)
      throw ValidationError("lambda must be finite and >= 0, got " + std::to_string(lambda));
    if (!std::isfinite(epsilon) || epsilon <= 0.0)
      throw ValidationError("epsilon must be finite and > 0, got " + std::to_string(epsilon));
  }
};

/// Softmax over the flattened values with an additive floor:
///   out_i = exp(v_i - max_j v_j) / sum_k exp(v_k - max) + epsilon
/// Computed in F64 with sequential sum accumulation; every output >= epsilon.
inline std::vector<double> softmax_normalize(std::span<const float> values, double epsilon) {
  if (values.empty()) throw ValidationError("softmax_normalize: empty input");
  if (!(epsilon >= 0.0))
    throw ValidationError("softmax_normalize: epsilon must be >= 0");
  float vmax = values[0];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw ValidationError("softmax_normalize: non-finite element at index " +
                            std::to_string(i));
    if (values[i] > vmax) vmax = values[i];
  }
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(static_cast<double>(values[i]) - static_cast<double>(vmax));
    sum += out[i];
  }
  for (double& v : out) v = v / sum + epsilon;
  return out;
}

/// Per-element KL contributions d_i = p_i * ln(p_i / q_i). Entries must be
/// strictly positive (the softmax epsilon guarantees this upstream).
inline std::vector<double> elementwise_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ValidationError("elementwise_kl: length mismatch, " + std::to_string(p.size()) +
                          " vs " + std::to_string(q.size()));
  std::vector<double> d(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(q[i] > 0.0))
      throw ValidationError("elementwise_kl: non-positive entry at index " + std::to_string(i));
    d[i] = p[i] * std::log(p[i] / q[i]);
  }
  return d;
}

/// Importance of each parameter position: the KL contribution between the
/// softmax-normalized left/right vectors times the raw parameter delta.
/// Identical inputs (and common shifts that survive F32 addition exactly)
/// yield exactly zero scores.
inline std::vector<double> importance_scores(std::span<const float> left,
                                             std::span<const float> right,
                                             const FusionParams& params) {
  if (left.size() != right.size())
    throw ValidationError("importance_scores: length mismatch, " + std::to_string(left.size()) +
                          " vs " + std::to_string(right.size()));
  const std::vector<double> p = softmax_normalize(left, params.epsilon);
  const std::vector<double> q = softmax_normalize(right, params.epsilon);
  std::vector<double> scores = elementwise_kl(p, q);
  for (std::size_t i = 0; i < scores.size(); ++i)
    scores[i] *= static_cast<double>(left[i]) - static_cast<double>(right[i]);
  return scores;
}

/// Binary per-element selection: right where the importance score is strictly
/// above the threshold, left otherwise. Never blends values.
inline std::vector<float> selective_merge(std::span<const float> left,
                                          std::span<const float> right,
                                          std::span<const double> importance,
                                          double threshold) {
  if (left.size() != right.size() || left.size() != importance.size())
    throw ValidationError("selective_merge: length mismatch");
  std::vector<float> out(left.size());
  for (std::size_t i = 0; i < left.size(); ++i)
    out[i] = importance[i] > threshold ? right[i] : left[i];
  return out;
}

/// Per-tensor fusion telemetry. Quartile fields are absent for zero-element
/// tensors and for runs with a fixed threshold override.
struct TensorFuseStats {
  std::string name;
  std::uint64_t elements = 0;
  bool has_quartiles = false;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double threshold = 0.0;
  std::uint64_t updated = 0;

  double update_ratio() const {
    return elements ? static_cast<double>(updated) / static_cast<double>(elements) : 0.0;
  }
};

struct FuseValuesResult {
  std::vector<float> merged;
  TensorFuseStats stats;
};

/// Fuses two aligned F32 value vectors. Without an external threshold the
/// selection threshold comes from this vector's own importance quartiles;
/// with one (global granularity or a fixed override) it is used as given.
inline FuseValuesResult fuse_values(std::string name, std::span<const float> left,
                                    std::span<const float> right, const FusionParams& params,
                                    std::optional<double> external_threshold = {}) {
  params.validate();
  FuseValuesResult result;
  result.stats.name = std::move(name);
  result.stats.elements = left.size();
  if (left.empty() && right.empty()) return result;  // zero-element tensors pass through

  const std::vector<double> importance = importance_scores(left, right, params);
  double threshold;
  if (external_threshold) {
    threshold = *external_threshold;
  } else {
    const ImportanceStats stats = dynamic_threshold(importance, params.lambda, result.stats.name);
    result.stats.has_quartiles = true;
    result.stats.median = stats.median;
    result.stats.q1 = stats.q1;
    result.stats.q3 = stats.q3;
    result.stats.iqr = stats.iqr;
    threshold = stats.threshold;
  }
  result.stats.threshold = threshold;
  result.merged = selective_merge(left, right, importance, threshold);
  for (double s : importance)
    if (s > threshold) ++result.stats.updated;
  return result;
}

/// Record-level fusion: converts both sides to F32 working precision, fuses,
/// and narrows back to the input dtype. Requires matching name, shape, and
/// dtype.
inline std::pair<TensorRecord, TensorFuseStats> fuse_tensors(
    const TensorRecord& left, const TensorRecord& right, const FusionParams& params,
    std::optional<double> external_threshold = {}) {
  if (left.name != right.name || left.shape != right.shape || left.dtype != right.dtype)
    throw ValidationError("fuse_tensors: \"" + left.name + "\" and \"" + right.name +
                          "\" differ in name, shape, or dtype");
  const std::vector<float> lv = left.to_f32();
  const std::vector<float> rv = right.to_f32();
  FuseValuesResult fused = fuse_values(left.name, lv, rv, params, external_threshold);
  TensorRecord out;
  out.name = left.name;
  out.dtype = left.dtype;
  out.shape = left.shape;
  out.data = from_f32(fused.merged, left.dtype);
  return {std::move(out), std::move(fused.stats)};
}

}  // namespace ckmerge
