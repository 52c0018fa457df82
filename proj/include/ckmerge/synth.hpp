#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckmerge/dtype.hpp"
#include "ckmerge/errors.hpp"
#include "ckmerge/parallel.hpp"
#include "ckmerge/philox.hpp"
#include "ckmerge/tensor_map.hpp"

namespace ckmerge {

struct Distribution {
  enum class Kind : std::uint8_t { Normal, Uniform };
  Kind kind = Kind::Normal;
  double a = 0.0;  // Normal: mean,   Uniform: lo
  double b = 1.0;  // Normal: stddev, Uniform: hi

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(b))
      throw ValidationError("distribution parameters must be finite");
    if (kind == Kind::Normal && b < 0.0)
      throw ValidationError("normal stddev must be >= 0, got " + std::to_string(b));
    if (kind == Kind::Uniform && a > b)
      throw ValidationError("uniform lo " + std::to_string(a) + " exceeds hi " +
                            std::to_string(b));
  }
};

struct SynthTensorSpec {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::int64_t> shape;
  Distribution dist;
};

/// Deterministic model description: the same spec always produces the same
/// bytes, regardless of thread count or platform (the uniform bit streams are
/// exact; normal draws additionally go through libm sqrt/log/cos).
struct SynthSpec {
  std::uint64_t seed = 0;
  std::vector<SynthTensorSpec> tensors;
};

// ---------------------------------------------------------------------------
// Manifest parsing (same JSON notation as recipes):
// {"seed": 7, "tensors": [{"name": "w", "shape": [2,2], "dtype": "F32",
//   "distribution": {"type": "normal", "mean": 0.0, "stddev": 1.0}}]}
// Uniform uses {"type": "uniform", "lo": ..., "hi": ...}.
// ---------------------------------------------------------------------------

inline SynthSpec parse_synth_spec(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("synth spec: document must be a JSON object");
  SynthSpec spec;
  bool have_tensors = false;
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") {
      if (!value.is_number_integer())
        throw ValidationError("synth spec: seed must be an integer");
      spec.seed = value.get<std::uint64_t>();
    } else if (key == "tensors") {
      if (!value.is_array()) throw ValidationError("synth spec: tensors must be an array");
      have_tensors = true;
      for (std::size_t t = 0; t < value.size(); ++t) {
        const auto& entry = value[t];
        const std::string where = "synth spec: tensors[" + std::to_string(t) + "]";
        if (!entry.is_object()) throw ValidationError(where + " must be an object");
        SynthTensorSpec ts;
        bool have_name = false, have_shape = false, have_dist = false;
        for (const auto& [fk, fv] : entry.items()) {
          if (fk == "name") {
            if (!fv.is_string() || fv.get<std::string>().empty())
              throw ValidationError(where + ".name must be a non-empty string");
            ts.name = fv.get<std::string>();
            have_name = true;
          } else if (fk == "dtype") {
            if (!fv.is_string()) throw ValidationError(where + ".dtype must be a string");
            try {
              ts.dtype = parse_dtype(fv.get<std::string>());
            } catch (const FormatError& e) {
              throw ValidationError(where + ": " + e.what());
            }
          } else if (fk == "shape") {
            if (!fv.is_array()) throw ValidationError(where + ".shape must be an array");
            for (const auto& dim : fv) {
              if (!dim.is_number_integer() || dim.get<std::int64_t>() < 0)
                throw ValidationError(where + ".shape has a non-natural dimension");
              ts.shape.push_back(dim.get<std::int64_t>());
            }
            have_shape = true;
          } else if (fk == "distribution") {
            if (!fv.is_object()) throw ValidationError(where + ".distribution must be an object");
            std::string type;
            bool have_type = false;
            for (const auto& [dk, dv] : fv.items()) {
              if (dk == "type") {
                if (!dv.is_string())
                  throw ValidationError(where + ".distribution.type must be a string");
                type = dv.get<std::string>();
                have_type = true;
              } else if (dk == "mean" || dk == "lo") {
                if (!dv.is_number()) throw ValidationError(where + ".distribution." + dk +
                                                           " must be a number");
                ts.dist.a = dv.get<double>();
              } else if (dk == "stddev" || dk == "hi") {
                if (!dv.is_number()) throw ValidationError(where + ".distribution." + dk +
                                                           " must be a number");
                ts.dist.b = dv.get<double>();
              } else {
                throw ValidationError(where + ".distribution has unknown key \"" + dk + "\"");
              }
            }
            if (!have_type) throw ValidationError(where + ".distribution.type is required");
            if (type == "normal") ts.dist.kind = Distribution::Kind::Normal;
            else if (type == "uniform") ts.dist.kind = Distribution::Kind::Uniform;
            else
              throw ValidationError(where + ".distribution.type must be \"normal\" or \"uniform\"");
            have_dist = true;
          } else {
            throw ValidationError(where + " has unknown key \"" + fk + "\"");
          }
        }
        if (!have_name) throw ValidationError(where + ".name is required");
        if (!have_shape) throw ValidationError(where + ".shape is required");
        if (!have_dist) throw ValidationError(where + ".distribution is required");
        ts.dist.validate();
        spec.tensors.push_back(std::move(ts));
      }
    } else {
      throw ValidationError("synth spec: unknown key \"" + key + "\"");
    }
  }
  if (!have_tensors) throw ValidationError("synth spec: tensors is required");
  std::vector<std::string> names;
  for (const auto& t : spec.tensors) names.push_back(t.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw ValidationError("synth spec: duplicate tensor name \"" +
                          *std::adjacent_find(names.begin(), names.end()) + "\"");
  return spec;
}

inline SynthSpec parse_synth_spec(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synth spec: not valid JSON: ") + e.what());
  }
  return parse_synth_spec(doc);
}

namespace detail {

inline double sample(const Distribution& dist, const CounterRng& rng, std::uint64_t index) {
  if (dist.kind == Distribution::Kind::Normal)
    return dist.a + dist.b * rng.normal(index);
  return dist.a + (dist.b - dist.a) * rng.uniform01(index);
}

inline void store_sample(std::byte* out, Dtype dtype, double value) {
  switch (dtype) {
    case Dtype::F32: {
      const float f = static_cast<float>(value);
      std::memcpy(out, &f, 4);
      break;
    }
    case Dtype::F16: {
      const std::uint16_t h = f32_to_f16(static_cast<float>(value));
      std::memcpy(out, &h, 2);
      break;
    }
    case Dtype::BF16: {
      const std::uint16_t h = f32_to_bf16(static_cast<float>(value));
      std::memcpy(out, &h, 2);
      break;
    }
    case Dtype::F64:
      std::memcpy(out, &value, 8);
      break;
  }
}

inline constexpr std::uint64_t kGenChunk = 1u << 16;

}  // namespace detail

/// Fills every tensor from its distribution using Philox draws keyed by
/// (seed, tensor name, element index). Chunks parallelize without changing a
/// single byte of the result.
inline TensorMap generate_synthetic_checkpoint(const SynthSpec& spec, unsigned threads = 0) {
  for (const auto& ts : spec.tensors) ts.dist.validate();
  TensorMap map;
  for (const auto& ts : spec.tensors) {
    TensorRecord rec;
    rec.name = ts.name;
    rec.dtype = ts.dtype;
    rec.shape = ts.shape;
    const std::uint64_t n = rec.elements();
    const std::size_t width = byte_width(ts.dtype);
    rec.data.resize(n * width);
    const CounterRng rng = CounterRng::for_tensor(spec.seed, ts.name, kPurposeValues);
    const std::uint64_t chunks = (n + detail::kGenChunk - 1) / detail::kGenChunk;
    std::byte* out = rec.data.data();
    parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
      const std::uint64_t begin = static_cast<std::uint64_t>(c) * detail::kGenChunk;
      const std::uint64_t end = std::min(n, begin + detail::kGenChunk);
      for (std::uint64_t i = begin; i < end; ++i)
        detail::store_sample(out + i * width, ts.dtype, detail::sample(ts.dist, rng, i));
    });
    map.add(std::move(rec));
  }
  return map;
}

/// Derives a synthetic "domain expert": per tensor, selects
/// ceil(fraction * elements) positions via a seeded mask stream and adds
/// Normal(0, magnitude) noise to them. Untouched positions stay bit-identical
/// to the base.
inline TensorMap perturb_expert(const TensorMap& base, std::uint64_t seed, double fraction,
                                double magnitude, unsigned threads = 0) {
  if (!std::isfinite(fraction) || fraction <= 0.0 || fraction > 1.0)
    throw ValidationError("perturb_expert: fraction must be in (0, 1], got " +
                          std::to_string(fraction));
  if (!std::isfinite(magnitude) || magnitude <= 0.0)
    throw ValidationError("perturb_expert: magnitude must be > 0, got " +
                          std::to_string(magnitude));
  TensorMap out;
  out.metadata = base.metadata;
  for (const auto& [name, rec] : base.tensors) {
    rec.validate();
    TensorRecord copy = rec;  // untouched bytes stay identical
    const std::uint64_t n = rec.elements();
    if (n > 0) {
      const auto k = static_cast<std::uint64_t>(
          std::ceil(fraction * static_cast<double>(n)));
      const std::uint64_t count = std::min(k, n);

      // rank the positions by their mask draw and take the `count` smallest
      const CounterRng mask_rng = CounterRng::for_tensor(seed, name, kPurposeMask);
      std::vector<std::uint64_t> order(n);
      for (std::uint64_t i = 0; i < n; ++i) order[i] = i;
      auto mask_key = [&](std::uint64_t i) { return std::pair(mask_rng.bits64(i), i); };
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - 1),
                       order.end(),
                       [&](std::uint64_t x, std::uint64_t y) { return mask_key(x) < mask_key(y); });
      order.resize(count);

      const CounterRng noise_rng = CounterRng::for_tensor(seed, name, kPurposeNoise);
      const std::size_t width = byte_width(rec.dtype);
      std::byte* data = copy.data.data();
      parallel_for(order.size(), threads, [&](std::size_t j) {
        const std::uint64_t i = order[j];
        const float old = load_f32_element(rec.dtype, rec.data.data() + i * width);
        const double next = static_cast<double>(old) + magnitude * noise_rng.normal(i);
        detail::store_sample(data + i * width, rec.dtype, next);
      });
    }
    out.add(std::move(copy));
  }
  return out;
}

}  // namespace ckmerge
