#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ckmerge/errors.hpp"
#include "ckmerge/tensor_map.hpp"

namespace ckmerge {

enum class BaselineMethod : std::uint8_t { Linear, TaskArithmetic };

struct BaselineParams {
  BaselineMethod method = BaselineMethod::Linear;
  std::vector<double> weights;       // Linear: convex weights; TaskArithmetic: per-expert scales
  std::optional<std::string> base;   // TaskArithmetic only
};

inline void validate_linear_weights(std::span<const double> weights, std::size_t models) {
  if (weights.size() != models)
    throw ValidationError("linear merge: " + std::to_string(models) + " models but " +
                          std::to_string(weights.size()) + " weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0)
      throw ValidationError("linear merge: weights must be finite and non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError("linear merge: weights sum to " + std::to_string(sum) +
                          ", expected 1 within 1e-9");
}

/// out_i = sum_k w_k * input_k[i], accumulated in F64, one narrowing to F32.
/// Zero weights contribute nothing, so a one-hot weight vector reproduces the
/// selected input bit-for-bit.
inline std::vector<float> linear_combine(std::span<const std::span<const float>> inputs,
                                         std::span<const double> weights) {
  const std::size_t n = inputs.empty() ? 0 : inputs[0].size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    bool first = true;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (weights[k] == 0.0) continue;
      const double term = weights[k] * static_cast<double>(inputs[k][i]);
      acc = first ? term : acc + term;
      first = false;
    }
    out[i] = first ? 0.0f : static_cast<float>(acc);
  }
  return out;
}

/// out_i = base_i + sum_k s_k * (expert_k[i] - base_i), F64 accumulation.
inline std::vector<float> task_arithmetic_combine(
    std::span<const float> base, std::span<const std::span<const float>> experts,
    std::span<const double> scales) {
  std::vector<float> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    double acc = static_cast<double>(base[i]);
    for (std::size_t k = 0; k < experts.size(); ++k) {
      if (scales[k] == 0.0) continue;
      acc += scales[k] * (static_cast<double>(experts[k][i]) - static_cast<double>(base[i]));
    }
    out[i] = static_cast<float>(acc);
  }
  return out;
}

namespace detail {

inline void require_mutually_compatible(std::span<const TensorMap* const> models) {
  for (std::size_t k = 1; k < models.size(); ++k) {
    const CompatReport report = validate_compat(*models[0], *models[k]);
    if (!report.compatible())
      throw ValidationError("models 0 and " + std::to_string(k) +
                            " are incompatible:\n" + report.to_string());
  }
}

}  // namespace detail

inline TensorMap linear_merge(std::span<const TensorMap* const> models,
                              std::span<const double> weights) {
  if (models.size() < 2) throw ValidationError("linear merge: need at least 2 models");
  validate_linear_weights(weights, models.size());
  detail::require_mutually_compatible(models);
  TensorMap out;
  out.metadata = models[0]->metadata;
  for (const auto& [name, first] : models[0]->tensors) {
    std::vector<std::vector<float>> values;
    std::vector<std::span<const float>> spans;
    for (const TensorMap* m : models) {
      values.push_back(m->tensors.at(name).to_f32());
      spans.emplace_back(values.back());
    }
    out.add(make_record(name, first.dtype, first.shape, linear_combine(spans, weights)));
  }
  return out;
}

inline TensorMap task_arithmetic_merge(const TensorMap& base,
                                       std::span<const TensorMap* const> experts,
                                       std::span<const double> scales) {
  if (experts.empty()) throw ValidationError("task arithmetic: need at least 1 expert");
  if (scales.size() != experts.size())
    throw ValidationError("task arithmetic: " + std::to_string(experts.size()) +
                          " experts but " + std::to_string(scales.size()) + " scales");
  for (double s : scales)
    if (!std::isfinite(s)) throw ValidationError("task arithmetic: non-finite scale");
  std::vector<const TensorMap*> all{&base};
  all.insert(all.end(), experts.begin(), experts.end());
  detail::require_mutually_compatible(all);
  TensorMap out;
  out.metadata = base.metadata;
  for (const auto& [name, base_rec] : base.tensors) {
    const std::vector<float> base_values = base_rec.to_f32();
    std::vector<std::vector<float>> values;
    std::vector<std::span<const float>> spans;
    for (const TensorMap* e : experts) {
      values.push_back(e->tensors.at(name).to_f32());
      spans.emplace_back(values.back());
    }
    out.add(make_record(name, base_rec.dtype, base_rec.shape,
                        task_arithmetic_combine(base_values, spans, scales)));
  }
  return out;
}

}  // namespace ckmerge
