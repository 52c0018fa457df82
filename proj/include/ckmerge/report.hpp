#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckmerge/fusion.hpp"
#include "ckmerge/recipe.hpp"
#include "ckmerge/version.hpp"

namespace ckmerge {

struct InputDigest {
  std::string name;
  std::string path;
  std::string sha256;
};

struct StageStats {
  std::string left;
  std::string right;   // empty for single-stage baseline merges
  std::string result;
  double seconds = 0.0;
  std::uint64_t elements = 0;
  std::uint64_t updated = 0;  // fusion only
  bool fusion = true;

  double update_ratio() const {
    return elements ? static_cast<double>(updated) / static_cast<double>(elements) : 0.0;
  }
};

/// Telemetry for one merge run: recipe echo, input digests, per-stage
/// aggregates, and per-tensor rows for the final stage.
struct MergeReport {
  std::string tool_version = kVersion;
  MergeMethod method = MergeMethod::Fusion;
  FusionParams fusion;
  std::optional<double> fixed_threshold;
  bool swap_roles = false;
  nlohmann::json plan = nlohmann::json::array();
  std::optional<Dtype> output_dtype;
  std::vector<double> weights;
  std::vector<double> scales;
  std::optional<std::string> base;

  std::vector<InputDigest> inputs;
  std::vector<StageStats> stages;
  std::vector<TensorFuseStats> tensors;  // final stage, lexicographic by name

  std::uint64_t total_elements = 0;
  std::uint64_t total_updated = 0;
  double seconds = 0.0;

  double update_ratio() const {
    return total_elements ? static_cast<double>(total_updated) /
                                static_cast<double>(total_elements)
                          : 0.0;
  }

  /// Timing fields carry wall-clock noise; excluding them yields a
  /// deterministic document for byte comparison across runs.
  nlohmann::json to_json(bool include_timings = true) const {
    nlohmann::json doc;
    doc["tool"] = "ckmerge";
    doc["version"] = tool_version;
    nlohmann::json recipe;
    recipe["method"] = std::string(method_name(method));
    recipe["plan"] = plan;
    if (method == MergeMethod::Fusion) {
      recipe["lambda"] = fusion.lambda;
      recipe["epsilon"] = fusion.epsilon;
      recipe["granularity"] = std::string(granularity_name(fusion.granularity));
      recipe["swap_roles"] = swap_roles;
      if (fixed_threshold) recipe["fixed_threshold"] = *fixed_threshold;
    }
    if (!weights.empty()) recipe["weights"] = weights;
    if (!scales.empty()) recipe["scales"] = scales;
    if (base) recipe["base"] = *base;
    if (output_dtype) recipe["output_dtype"] = std::string(dtype_name(*output_dtype));
    doc["recipe"] = std::move(recipe);

    doc["inputs"] = nlohmann::json::array();
    for (const InputDigest& input : inputs)
      doc["inputs"].push_back({{"name", input.name}, {"path", input.path},
                               {"sha256", input.sha256}});

    doc["stages"] = nlohmann::json::array();
    for (const StageStats& stage : stages) {
      nlohmann::json s;
      s["left"] = stage.left;
      if (!stage.right.empty()) s["right"] = stage.right;
      s["result"] = stage.result;
      s["elements"] = stage.elements;
      if (stage.fusion) {
        s["updated"] = stage.updated;
        s["update_ratio"] = stage.update_ratio();
      }
      if (include_timings) s["seconds"] = stage.seconds;
      doc["stages"].push_back(std::move(s));
    }

    doc["tensors"] = nlohmann::json::array();
    for (const TensorFuseStats& row : tensors) {
      nlohmann::json t;
      t["name"] = row.name;
      t["elements"] = row.elements;
      if (method == MergeMethod::Fusion) {
        if (row.elements) t["threshold"] = row.threshold;
        if (row.has_quartiles) {
          t["median"] = row.median;
          t["q1"] = row.q1;
          t["q3"] = row.q3;
          t["iqr"] = row.iqr;
        }
        t["updated"] = row.updated;
        t["update_ratio"] = row.update_ratio();
      }
      doc["tensors"].push_back(std::move(t));
    }

    nlohmann::json agg;
    agg["total_elements"] = total_elements;
    if (method == MergeMethod::Fusion) {
      agg["total_updated"] = total_updated;
      agg["update_ratio"] = update_ratio();
    }
    if (include_timings) agg["seconds"] = seconds;
    doc["aggregate"] = std::move(agg);
    return doc;
  }

  /// Human-readable aligned per-tensor table.
  std::string to_table() const {
    std::ostringstream os;
    std::size_t name_width = 4;
    for (const TensorFuseStats& row : tensors)
      name_width = std::max(name_width, row.name.size());
    os << std::left << std::setw(static_cast<int>(name_width)) << "name" << std::right
       << std::setw(12) << "elements";
    if (method == MergeMethod::Fusion)
      os << std::setw(14) << "median" << std::setw(14) << "iqr" << std::setw(14) << "threshold"
         << std::setw(12) << "updated" << std::setw(9) << "ratio";
    os << "\n";
    for (const TensorFuseStats& row : tensors) {
      os << std::left << std::setw(static_cast<int>(name_width)) << row.name << std::right
         << std::setw(12) << row.elements;
      if (method == MergeMethod::Fusion) {
        if (row.has_quartiles)
          os << std::setw(14) << std::setprecision(5) << std::scientific << row.median
             << std::setw(14) << row.iqr;
        else
          os << std::setw(14) << "-" << std::setw(14) << "-";
        if (row.elements)
          os << std::setw(14) << std::setprecision(5) << std::scientific << row.threshold;
        else
          os << std::setw(14) << "-";
        os << std::setw(12) << row.updated << std::setw(8) << std::fixed
           << std::setprecision(3) << row.update_ratio() * 100.0 << "%";
        os.unsetf(std::ios::floatfield);
      }
      os << "\n";
    }
    return os.str();
  }
};

}  // namespace ckmerge
