#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ckmerge/checkpoint_io.hpp"
#include "ckmerge/baselines.hpp"
#include "ckmerge/digest.hpp"
#include "ckmerge/errors.hpp"
#include "ckmerge/fusion.hpp"
#include "ckmerge/parallel.hpp"
#include "ckmerge/quantile.hpp"
#include "ckmerge/recipe.hpp"
#include "ckmerge/report.hpp"

namespace ckmerge {

// ---------------------------------------------------------------------------
// Working representation: every stage operates on F32 value vectors; results
// narrow to the storage dtype exactly once, at the final write.
// ---------------------------------------------------------------------------

struct WorkingTensor {
  Dtype dtype = Dtype::F32;  // storage dtype carried through for the final write
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

struct WorkingModel {
  std::map<std::string, WorkingTensor> tensors;
  std::map<std::string, std::string> metadata;
};

inline WorkingModel load_working_model(const std::filesystem::path& path) {
  CheckpointReader reader(path);
  WorkingModel model;
  model.metadata = reader.metadata();
  for (const TensorInfo& info : reader.tensors()) {
    WorkingTensor wt;
    wt.dtype = info.dtype;
    wt.shape = info.shape;
    const std::vector<std::byte> raw = reader.read_data(info);
    wt.values = to_f32(info.dtype, raw);
    model.tensors.emplace(info.name, std::move(wt));
  }
  return model;
}

inline WorkingModel to_working_model(const TensorMap& map) {
  WorkingModel model;
  model.metadata = map.metadata;
  for (const auto& [name, rec] : map.tensors) {
    rec.validate();
    model.tensors.emplace(name, WorkingTensor{rec.dtype, rec.shape, rec.to_f32()});
  }
  return model;
}

inline CompatReport validate_compat(const WorkingModel& left, const WorkingModel& right) {
  CompatReport report;
  for (const auto& [name, lt] : left.tensors) {
    auto it = right.tensors.find(name);
    if (it == right.tensors.end()) {
      report.issues.push_back({CompatIssue::Kind::MissingRight, name, ""});
      continue;
    }
    if (lt.shape != it->second.shape)
      report.issues.push_back({CompatIssue::Kind::ShapeMismatch, name,
                               shape_string(lt.shape) + " vs " + shape_string(it->second.shape)});
    else if (lt.dtype != it->second.dtype)
      report.issues.push_back({CompatIssue::Kind::DtypeMismatch, name,
                               std::string(dtype_name(lt.dtype)) + " vs " +
                                   std::string(dtype_name(it->second.dtype))});
  }
  for (const auto& [name, rt] : right.tensors)
    if (!left.tensors.count(name))
      report.issues.push_back({CompatIssue::Kind::MissingLeft, name, ""});
  return report;
}

// ---------------------------------------------------------------------------
// Final-stage sinks: values flow either into a checkpoint file (streaming,
// bounded memory) or into an in-memory TensorMap. Both narrow identically, so
// the produced bytes match.
// ---------------------------------------------------------------------------

class StageSink {
 public:
  virtual ~StageSink() = default;
  virtual void begin(const std::vector<TensorInfo>& layout,
                     const std::map<std::string, std::string>& metadata) = 0;
  /// Thread-safe for distinct indices.
  virtual void put(std::size_t index, std::vector<float>&& values) = 0;
  virtual void end() = 0;
};

class FileStageSink final : public StageSink {
 public:
  explicit FileStageSink(std::filesystem::path path) : path_(std::move(path)) {}

  void begin(const std::vector<TensorInfo>& layout,
             const std::map<std::string, std::string>& metadata) override {
    layout_ = layout;
    writer_.emplace(path_, layout, metadata);
  }

  void put(std::size_t index, std::vector<float>&& values) override {
    const std::vector<std::byte> bytes = from_f32(values, layout_[index].dtype);
    values = {};
    writer_->write_tensor(index, bytes);
  }

  void end() override { writer_->finish(); }

 private:
  std::filesystem::path path_;
  std::vector<TensorInfo> layout_;
  std::optional<CheckpointWriter> writer_;
};

class MapStageSink final : public StageSink {
 public:
  void begin(const std::vector<TensorInfo>& layout,
             const std::map<std::string, std::string>& metadata) override {
    layout_ = layout;
    map_.metadata = metadata;
  }

  void put(std::size_t index, std::vector<float>&& values) override {
    const TensorInfo& info = layout_[index];
    TensorRecord rec;
    rec.name = info.name;
    rec.dtype = info.dtype;
    rec.shape = info.shape;
    rec.data = from_f32(values, info.dtype);
    values = {};
    std::lock_guard lock(mutex_);
    map_.add(std::move(rec));
  }

  void end() override {}

  TensorMap take() { return std::move(map_); }

 private:
  std::vector<TensorInfo> layout_;
  TensorMap map_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<TensorInfo> stage_layout(const WorkingModel& model,
                                            std::optional<Dtype> dtype_override) {
  std::vector<TensorInfo> layout;
  for (const auto& [name, wt] : model.tensors)
    layout.push_back({name, dtype_override.value_or(wt.dtype), wt.shape, 0, 0});
  return layout;
}

struct StageOutcome {
  WorkingModel merged;  // filled only when no sink was given
  StageStats stats;
  std::vector<TensorFuseStats> rows;
};

/// One pairwise fusion fold. Consumes both inputs (releasing each tensor as
/// soon as it is fused). With a sink, merged values stream straight out and
/// never accumulate.
inline StageOutcome fuse_stage(WorkingModel&& left, WorkingModel&& right,
                               const FusionParams& params,
                               std::optional<double> fixed_threshold, unsigned threads,
                               StageSink* sink, std::optional<Dtype> dtype_override) {
  const auto t0 = std::chrono::steady_clock::now();
  const CompatReport compat = validate_compat(left, right);
  if (!compat.compatible())
    throw ValidationError("incompatible models:\n" + compat.to_string());

  std::vector<std::pair<WorkingTensor*, WorkingTensor*>> pairs;
  std::vector<std::string> names;
  {
    auto lit = left.tensors.begin();
    auto rit = right.tensors.begin();
    for (; lit != left.tensors.end(); ++lit, ++rit) {
      names.push_back(lit->first);
      pairs.emplace_back(&lit->second, &rit->second);
    }
  }

  // Global granularity: one threshold from the quartiles of every tensor's
  // importance scores, computed exactly as on the concatenated vector.
  std::optional<double> external = fixed_threshold;
  if (!external && params.granularity == Granularity::Global) {
    std::vector<std::vector<double>> parts(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
      if (!pairs[i].first->values.empty())
        parts[i] = importance_scores(pairs[i].first->values, pairs[i].second->values, params);
    });
    std::uint64_t total = 0;
    for (const auto& part : parts) total += part.size();
    if (total > 0) {
      const Quartiles q = global_quartiles(parts);
      const double iqr = q.q3 - q.q1;
      external = q.median + params.lambda * iqr;
    } else {
      external = 0.0;  // nothing to score; selection never runs
    }
  }

  StageOutcome outcome;
  outcome.rows.resize(pairs.size());
  if (sink) sink->begin(stage_layout(left, dtype_override), left.metadata);

  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    WorkingTensor& lt = *pairs[i].first;
    WorkingTensor& rt = *pairs[i].second;
    FuseValuesResult fused = fuse_values(names[i], lt.values, rt.values, params, external);
    outcome.rows[i] = std::move(fused.stats);
    if (sink) {
      sink->put(i, std::move(fused.merged));
      lt.values = std::vector<float>();
    } else {
      lt.values = std::move(fused.merged);
    }
    rt.values = std::vector<float>();
  });

  if (sink) {
    sink->end();
  } else {
    outcome.merged.metadata = std::move(left.metadata);
    outcome.merged.tensors = std::move(left.tensors);
  }

  for (const TensorFuseStats& row : outcome.rows) {
    outcome.stats.elements += row.elements;
    outcome.stats.updated += row.updated;
  }
  outcome.stats.fusion = true;
  outcome.stats.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return outcome;
}

/// Pass a model through to a sink unchanged (single-leaf plans and baseline
/// outputs); values still narrow per the layout dtype.
inline std::vector<TensorFuseStats> passthrough_stage(WorkingModel&& model, unsigned threads,
                                                      StageSink& sink,
                                                      std::optional<Dtype> dtype_override) {
  std::vector<WorkingTensor*> tensors;
  std::vector<TensorFuseStats> rows;
  for (auto& [name, wt] : model.tensors) {
    tensors.push_back(&wt);
    TensorFuseStats row;
    row.name = name;
    row.elements = wt.values.size();
    rows.push_back(std::move(row));
  }
  sink.begin(stage_layout(model, dtype_override), model.metadata);
  parallel_for(tensors.size(), threads, [&](std::size_t i) {
    sink.put(i, std::move(tensors[i]->values));
    tensors[i]->values = std::vector<float>();
  });
  sink.end();
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Recipe execution
// ---------------------------------------------------------------------------

struct ExecuteResult {
  TensorMap output;
  MergeReport report;
};

namespace detail {

class EngineRun {
 public:
  EngineRun(const MergeRecipe& recipe, unsigned threads)
      : recipe_(recipe), threads_(threads) {
    report_.method = recipe.method;
    report_.fusion = recipe.fusion;
    report_.fixed_threshold = recipe.fixed_threshold;
    report_.swap_roles = recipe.swap_roles;
    report_.plan = recipe.plan.to_json();
    report_.output_dtype = recipe.output_dtype;
    report_.weights = recipe.weights;
    report_.scales = recipe.scales;
    report_.base = recipe.base;
  }

  MergeReport run(StageSink& sink) {
    const auto t0 = std::chrono::steady_clock::now();
    if (recipe_.method == MergeMethod::Fusion) {
      run_fusion(sink);
    } else {
      run_baseline(sink);
    }
    for (const auto& [name, digest] : digests_) report_.inputs.push_back(digest);
    for (const TensorFuseStats& row : report_.tensors) {
      report_.total_elements += row.elements;
      report_.total_updated += row.updated;
    }
    report_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return std::move(report_);
  }

 private:
  void run_fusion(StageSink& sink) {
    if (recipe_.plan.is_leaf()) {
      WorkingModel model = load_leaf(recipe_.plan.leaf);
      report_.tensors =
          passthrough_stage(std::move(model), threads_, sink, recipe_.output_dtype);
      return;
    }
    evaluate(recipe_.plan, &sink);
  }

  WorkingModel evaluate(const PlanNode& node, StageSink* sink) {
    if (node.is_leaf()) return load_leaf(node.leaf);
    WorkingModel left = evaluate(node.kids[0], nullptr);
    WorkingModel right = evaluate(node.kids[1], nullptr);
    std::size_t left_kid = 0, right_kid = 1;
    if (recipe_.swap_roles) {
      std::swap(left, right);
      std::swap(left_kid, right_kid);
    }
    StageOutcome outcome;
    try {
      outcome = fuse_stage(std::move(left), std::move(right), recipe_.fusion,
                           recipe_.fixed_threshold, threads_, sink,
                           sink ? recipe_.output_dtype : std::nullopt);
    } catch (const ValidationError& e) {
      throw ValidationError("at fold " + node.label() + ": " + e.what());
    }
    outcome.stats.left = node.kids[left_kid].label();
    outcome.stats.right = node.kids[right_kid].label();
    outcome.stats.result = node.label();
    report_.stages.push_back(outcome.stats);
    if (sink) report_.tensors = std::move(outcome.rows);
    return std::move(outcome.merged);
  }

  void run_baseline(StageSink& sink) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<WorkingModel> models;
    for (const PlanNode& leaf : recipe_.plan.kids) models.push_back(load_leaf(leaf.leaf));
    WorkingModel base;
    if (recipe_.method == MergeMethod::TaskArithmetic) base = load_leaf(*recipe_.base);

    const WorkingModel& reference =
        recipe_.method == MergeMethod::TaskArithmetic ? base : models[0];
    for (std::size_t k = 0; k < models.size(); ++k) {
      const CompatReport compat = validate_compat(reference, models[k]);
      if (!compat.compatible())
        throw ValidationError("model \"" + recipe_.plan.kids[k].leaf +
                              "\" is incompatible:\n" + compat.to_string());
    }

    std::vector<std::string> names;
    for (const auto& [name, wt] : reference.tensors) names.push_back(name);

    StageStats stage;
    stage.fusion = false;
    stage.left = recipe_.plan.label();
    stage.result = recipe_.plan.label();

    sink.begin(stage_layout(reference, recipe_.output_dtype), reference.metadata);
    std::vector<TensorFuseStats> rows(names.size());
    parallel_for(names.size(), threads_, [&](std::size_t i) {
      const std::string& name = names[i];
      std::vector<std::span<const float>> spans;
      for (const WorkingModel& m : models) spans.emplace_back(m.tensors.at(name).values);
      std::vector<float> merged;
      if (recipe_.method == MergeMethod::Linear) {
        merged = linear_combine(spans, recipe_.weights);
      } else {
        merged = task_arithmetic_combine(base.tensors.at(name).values, spans, recipe_.scales);
      }
      rows[i].name = name;
      rows[i].elements = merged.size();
      sink.put(i, std::move(merged));
    });
    sink.end();
    report_.tensors = std::move(rows);
    for (const TensorFuseStats& row : report_.tensors) stage.elements += row.elements;
    stage.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report_.stages.push_back(stage);
  }

  WorkingModel load_leaf(const std::string& name) {
    const std::string& path = recipe_.models.at(name);
    WorkingModel model = load_working_model(path);
    digests_.emplace(name, InputDigest{name, path, sha256_file(path)});
    return model;
  }

  const MergeRecipe& recipe_;
  unsigned threads_;
  MergeReport report_;
  std::map<std::string, InputDigest> digests_;
};

}  // namespace detail

/// Runs a recipe with the final stage streaming straight to the output file;
/// peak memory stays near the two largest in-flight models.
inline MergeReport execute_to_file(const MergeRecipe& recipe, unsigned threads = 0) {
  FileStageSink sink(recipe.output);
  detail::EngineRun run(recipe, threads);
  return run.run(sink);
}

/// Runs a recipe, returning the merged model as well as writing it to the
/// recipe's output path. Byte-identical to execute_to_file.
inline ExecuteResult execute(const MergeRecipe& recipe, unsigned threads = 0) {
  MapStageSink sink;
  detail::EngineRun run(recipe, threads);
  MergeReport report = run.run(sink);
  ExecuteResult result{sink.take(), std::move(report)};
  write_checkpoint(result.output, recipe.output);
  return result;
}

// ---------------------------------------------------------------------------
// Plan comparison (fold-sequence ablations)
// ---------------------------------------------------------------------------

struct PlanComparison {
  struct Entry {
    std::string plan;
    std::string output;
    double update_ratio = 0.0;
  };
  std::vector<Entry> plans;
  // pairwise counts of elements whose stored bytes differ
  std::vector<std::vector<std::uint64_t>> diff_counts;
};

/// Counts elements whose stored bytes differ between two structurally equal
/// maps.
inline std::uint64_t count_differing_elements(const TensorMap& a, const TensorMap& b) {
  const CompatReport compat = validate_compat(a, b);
  if (!compat.compatible())
    throw ValidationError("cannot count differences of incompatible maps:\n" +
                          compat.to_string());
  std::uint64_t count = 0;
  for (const auto& [name, ra] : a.tensors) {
    const TensorRecord& rb = b.tensors.at(name);
    const std::size_t width = byte_width(ra.dtype);
    const std::uint64_t n = ra.elements();
    for (std::uint64_t i = 0; i < n; ++i)
      if (std::memcmp(ra.data.data() + i * width, rb.data.data() + i * width, width) != 0)
        ++count;
  }
  return count;
}

inline PlanComparison compare_plans(std::span<const MergeRecipe> recipes, unsigned threads = 0) {
  if (recipes.size() < 2)
    throw ValidationError("compare_plans: need at least 2 recipes, got " +
                          std::to_string(recipes.size()));
  for (std::size_t i = 1; i < recipes.size(); ++i)
    if (recipes[i].models != recipes[0].models)
      throw ValidationError("compare_plans: recipe " + std::to_string(i) +
                            " declares a different model set than recipe 0");
  PlanComparison comparison;
  std::vector<TensorMap> outputs;
  for (const MergeRecipe& recipe : recipes) {
    ExecuteResult result = execute(recipe, threads);
    comparison.plans.push_back({recipe.plan.label(), recipe.output,
                                result.report.update_ratio()});
    outputs.push_back(std::move(result.output));
  }
  comparison.diff_counts.assign(outputs.size(), std::vector<std::uint64_t>(outputs.size(), 0));
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (std::size_t j = i + 1; j < outputs.size(); ++j) {
      const std::uint64_t d = count_differing_elements(outputs[i], outputs[j]);
      comparison.diff_counts[i][j] = d;
      comparison.diff_counts[j][i] = d;
    }
  return comparison;
}

}  // namespace ckmerge
