#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ckmerge/baselines.hpp"
#include "ckmerge/dtype.hpp"
#include "ckmerge/errors.hpp"
#include "ckmerge/fusion.hpp"

namespace ckmerge {

enum class MergeMethod : std::uint8_t { Fusion, Linear, TaskArithmetic };

inline std::string_view method_name(MergeMethod m) {
  switch (m) {
    case MergeMethod::Fusion: return "fusion";
    case MergeMethod::Linear: return "linear";
    case MergeMethod::TaskArithmetic: return "task_arithmetic";
  }
  return "?";
}

/// Fold expression over declared model names. Fusion plans are full binary
/// trees (leaf name or [sub, sub]); baseline plans are flat leaf lists.
struct PlanNode {
  std::string leaf;             // non-empty iff this is a leaf
  std::vector<PlanNode> kids;   // 2 for fusion folds, >= 2 for baseline lists

  bool is_leaf() const { return kids.empty(); }

  std::string label() const {
    if (is_leaf()) return leaf;
    std::string s = "(";
    for (std::size_t i = 0; i < kids.size(); ++i) {
      if (i) s += "&";
      s += kids[i].label();
    }
    return s + ")";
  }

  void collect_leaves(std::vector<std::string>& out) const {
    if (is_leaf()) out.push_back(leaf);
    for (const PlanNode& kid : kids) kid.collect_leaves(out);
  }

  nlohmann::json to_json() const {
    if (is_leaf()) return leaf;
    nlohmann::json arr = nlohmann::json::array();
    for (const PlanNode& kid : kids) arr.push_back(kid.to_json());
    return arr;
  }
};

/// Declarative description of one merge run.
struct MergeRecipe {
  std::map<std::string, std::string> models;  // name -> checkpoint path
  MergeMethod method = MergeMethod::Fusion;
  PlanNode plan;
  FusionParams fusion;
  std::optional<double> fixed_threshold;  // overrides the dynamic threshold
  bool swap_roles = false;                // swap left/right at every fold node
  std::vector<double> weights;            // linear
  std::vector<double> scales;             // task_arithmetic
  std::optional<std::string> base;        // task_arithmetic
  std::string output;
  std::optional<Dtype> output_dtype;
};

namespace detail {

inline PlanNode parse_fusion_plan(const nlohmann::json& node) {
  PlanNode out;
  if (node.is_string()) {
    out.leaf = node.get<std::string>();
    if (out.leaf.empty()) throw ValidationError("plan: empty model name");
    return out;
  }
  if (!node.is_array())
    throw ValidationError("plan: fusion nodes must be model names or two-element arrays");
  if (node.size() != 2)
    throw ValidationError("plan: fusion folds are pairwise; got a node with " +
                          std::to_string(node.size()) + " children");
  out.kids.push_back(parse_fusion_plan(node[0]));
  out.kids.push_back(parse_fusion_plan(node[1]));
  return out;
}

inline PlanNode parse_flat_plan(const nlohmann::json& node, std::string_view method) {
  if (!node.is_array())
    throw ValidationError("plan: " + std::string(method) + " expects a flat array of model names");
  PlanNode out;
  for (const auto& entry : node) {
    if (!entry.is_string())
      throw ValidationError("plan: " + std::string(method) + " plans cannot nest");
    PlanNode leaf;
    leaf.leaf = entry.get<std::string>();
    if (leaf.leaf.empty()) throw ValidationError("plan: empty model name");
    out.kids.push_back(std::move(leaf));
  }
  return out;
}

inline double number_field(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path + " must be a number");
  return v.get<double>();
}

}  // namespace detail

inline MergeRecipe parse_recipe(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("recipe: document must be a JSON object");

  MergeRecipe recipe;
  nlohmann::json plan_json;
  bool have_models = false, have_plan = false, have_output = false;
  bool have_weights = false, have_scales = false;

  for (const auto& [key, value] : doc.items()) {
    if (key == "models") {
      if (!value.is_object() || value.empty())
        throw ValidationError("models must be a non-empty name -> path object");
      for (const auto& [name, path] : value.items()) {
        if (!path.is_string())
          throw ValidationError("models[\"" + name + "\"] must be a path string");
        recipe.models[name] = path.get<std::string>();
      }
      have_models = true;
    } else if (key == "method") {
      if (!value.is_string()) throw ValidationError("method must be a string");
      const auto m = value.get<std::string>();
      if (m == "fusion") recipe.method = MergeMethod::Fusion;
      else if (m == "linear") recipe.method = MergeMethod::Linear;
      else if (m == "task_arithmetic") recipe.method = MergeMethod::TaskArithmetic;
      else
        throw ValidationError("method must be fusion, linear, or task_arithmetic; got \"" +
                              m + "\"");
    } else if (key == "plan") {
      plan_json = value;
      have_plan = true;
    } else if (key == "lambda") {
      recipe.fusion.lambda = detail::number_field(value, "lambda");
    } else if (key == "epsilon") {
      recipe.fusion.epsilon = detail::number_field(value, "epsilon");
    } else if (key == "granularity") {
      if (!value.is_string()) throw ValidationError("granularity must be a string");
      const auto g = value.get<std::string>();
      if (g == "tensor") recipe.fusion.granularity = Granularity::PerTensor;
      else if (g == "global") recipe.fusion.granularity = Granularity::Global;
      else throw ValidationError("granularity must be \"tensor\" or \"global\"; got \"" + g + "\"");
    } else if (key == "fixed_threshold") {
      const double thr = detail::number_field(value, "fixed_threshold");
      if (!std::isfinite(thr)) throw ValidationError("fixed_threshold must be finite");
      recipe.fixed_threshold = thr;
    } else if (key == "swap_roles") {
      if (!value.is_boolean()) throw ValidationError("swap_roles must be a boolean");
      recipe.swap_roles = value.get<bool>();
    } else if (key == "weights") {
      if (!value.is_array()) throw ValidationError("weights must be an array of numbers");
      for (const auto& w : value) recipe.weights.push_back(detail::number_field(w, "weights[]"));
      have_weights = true;
    } else if (key == "scales") {
      if (!value.is_array()) throw ValidationError("scales must be an array of numbers");
      for (const auto& s : value) recipe.scales.push_back(detail::number_field(s, "scales[]"));
      have_scales = true;
    } else if (key == "base") {
      if (!value.is_string()) throw ValidationError("base must be a model name string");
      recipe.base = value.get<std::string>();
    } else if (key == "output") {
      if (!value.is_string() || value.get<std::string>().empty())
        throw ValidationError("output must be a non-empty path string");
      recipe.output = value.get<std::string>();
      have_output = true;
    } else if (key == "output_dtype") {
      if (!value.is_string()) throw ValidationError("output_dtype must be a string");
      try {
        recipe.output_dtype = parse_dtype(value.get<std::string>());
      } catch (const FormatError& e) {
        throw ValidationError(std::string("output_dtype: ") + e.what());
      }
    } else {
      throw ValidationError("recipe has unknown key \"" + key + "\"");
    }
  }

  if (!have_models) throw ValidationError("recipe: models is required");
  if (!have_plan) throw ValidationError("recipe: plan is required");
  if (!have_output) throw ValidationError("recipe: output is required");

  if (recipe.method == MergeMethod::Fusion) {
    recipe.plan = detail::parse_fusion_plan(plan_json);
    recipe.fusion.validate();
    if (have_weights) throw ValidationError("weights is only valid with method linear");
    if (have_scales) throw ValidationError("scales is only valid with method task_arithmetic");
    if (recipe.base) throw ValidationError("base is only valid with method task_arithmetic");
  } else {
    recipe.plan = detail::parse_flat_plan(plan_json, method_name(recipe.method));
    if (recipe.fixed_threshold)
      throw ValidationError("fixed_threshold is only valid with method fusion");
    if (recipe.method == MergeMethod::Linear) {
      if (recipe.plan.kids.size() < 2)
        throw ValidationError("plan: linear merge needs at least 2 models");
      if (have_scales || recipe.base)
        throw ValidationError("scales/base are only valid with method task_arithmetic");
      validate_linear_weights(recipe.weights, recipe.plan.kids.size());
    } else {
      if (!recipe.base) throw ValidationError("task_arithmetic requires a base model");
      if (have_weights) throw ValidationError("weights is only valid with method linear");
      if (recipe.plan.kids.empty())
        throw ValidationError("plan: task_arithmetic needs at least 1 expert");
      if (recipe.scales.size() != recipe.plan.kids.size())
        throw ValidationError("scales must list one scale per planned expert");
      for (double s : recipe.scales)
        if (!std::isfinite(s)) throw ValidationError("scales must be finite");
      if (!recipe.models.count(*recipe.base))
        throw ValidationError("base references undeclared model \"" + *recipe.base + "\"");
    }
  }

  // every plan leaf must be declared and used at most once
  std::vector<std::string> leaves;
  recipe.plan.collect_leaves(leaves);
  std::set<std::string> seen;
  for (const std::string& leaf : leaves) {
    if (!recipe.models.count(leaf))
      throw ValidationError("plan references undeclared model \"" + leaf + "\"");
    if (!seen.insert(leaf).second)
      throw ValidationError("plan uses model \"" + leaf + "\" more than once");
  }
  if (recipe.base && seen.count(*recipe.base))
    throw ValidationError("base model \"" + *recipe.base + "\" cannot also appear in the plan");

  return recipe;
}

inline MergeRecipe parse_recipe(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("recipe: not valid JSON: ") + e.what());
  }
  return parse_recipe(doc);
}

inline MergeRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open recipe \"" + path.string() + "\"");
  std::ostringstream text;
  text << file.rdbuf();
  return parse_recipe(text.str());
}

}  // namespace ckmerge
