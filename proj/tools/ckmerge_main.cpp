// ckmerge: checkpoint merging toolkit.
//
// Subcommands: merge (recipe execution), fuse (single-pair fusion), inspect,
// diff, synth. Structured output goes to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 validation/compat error (or differences found by
// diff), 2 I/O or file-format error, 3 internal error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ckmerge/checkpoint_io.hpp"
#include "ckmerge/engine.hpp"
#include "ckmerge/errors.hpp"
#include "ckmerge/recipe.hpp"
#include "ckmerge/report.hpp"
#include "ckmerge/synth.hpp"
#include "ckmerge/version.hpp"

namespace {

using namespace ckmerge;

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open \"" + path.string() + "\" for writing");
  file << text;
  if (!file) throw IoError("write failed for \"" + path.string() + "\"");
}

void print_run_summary(const MergeReport& report, const std::string& output,
                       bool table) {
  for (const StageStats& stage : report.stages) {
    std::cout << "stage " << stage.result << ": ";
    if (stage.fusion)
      std::cout << "updated " << stage.updated << "/" << stage.elements << " ("
                << std::fixed << std::setprecision(4) << stage.update_ratio() * 100.0
                << "%) ";
    else
      std::cout << stage.elements << " elements ";
    std::cout << "in " << std::setprecision(3) << stage.seconds << "s\n";
    std::cout.unsetf(std::ios::floatfield);
  }
  if (report.method == MergeMethod::Fusion)
    std::cout << "aggregate update ratio: " << std::setprecision(17)
              << report.update_ratio() << "\n";
  std::cout << "wrote " << output << "\n";
  if (table) std::cout << report.to_table();
}

int cmd_merge(const std::string& recipe_path, unsigned threads, bool table) {
  const MergeRecipe recipe = load_recipe(recipe_path);
  const MergeReport report = execute_to_file(recipe, threads);
  const std::string report_path = recipe.output + ".report.json";
  write_text_file(report_path, report.to_json().dump(2) + "\n");
  print_run_summary(report, recipe.output, table);
  std::cout << "report " << report_path << "\n";
  return 0;
}

int cmd_fuse(const std::string& left, const std::string& right, const std::string& out,
             double lambda, double epsilon, const std::string& granularity,
             std::optional<double> fixed_threshold, const std::string& report_path,
             unsigned threads, bool table) {
  MergeRecipe recipe;
  recipe.models = {{"left", left}, {"right", right}};
  PlanNode l, r;
  l.leaf = "left";
  r.leaf = "right";
  recipe.plan.kids.push_back(std::move(l));
  recipe.plan.kids.push_back(std::move(r));
  recipe.fusion.lambda = lambda;
  recipe.fusion.epsilon = epsilon;
  if (granularity == "tensor") recipe.fusion.granularity = Granularity::PerTensor;
  else if (granularity == "global") recipe.fusion.granularity = Granularity::Global;
  else throw ValidationError("granularity must be \"tensor\" or \"global\"");
  recipe.fusion.validate();
  if (fixed_threshold && !std::isfinite(*fixed_threshold))
    throw ValidationError("fixed threshold must be finite");
  recipe.fixed_threshold = fixed_threshold;
  recipe.output = out;

  const MergeReport report = execute_to_file(recipe, threads);
  if (!report_path.empty()) write_text_file(report_path, report.to_json().dump(2) + "\n");
  print_run_summary(report, out, table);
  if (!report_path.empty()) std::cout << "report " << report_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& path, bool as_json) {
  CheckpointReader reader(path);
  std::uint64_t total_elements = 0;
  std::uint64_t total_bytes = 0;
  for (const TensorInfo& info : reader.tensors()) {
    total_elements += info.elements();
    total_bytes += info.bytes();
  }
  if (as_json) {
    nlohmann::json doc;
    doc["path"] = path;
    doc["tensors"] = nlohmann::json::array();
    for (const TensorInfo& info : reader.tensors())
      doc["tensors"].push_back({{"name", info.name},
                                {"dtype", std::string(dtype_name(info.dtype))},
                                {"shape", info.shape},
                                {"elements", info.elements()},
                                {"data_offsets", {info.begin, info.end}}});
    doc["metadata"] = reader.metadata();
    doc["total_elements"] = total_elements;
    doc["data_bytes"] = total_bytes;
    std::cout << doc.dump(2) << "\n";
    return 0;
  }
  std::size_t name_width = 4;
  for (const TensorInfo& info : reader.tensors())
    name_width = std::max(name_width, info.name.size());
  std::cout << std::left << std::setw(static_cast<int>(name_width)) << "name"
            << "  dtype  " << std::right << std::setw(16) << "shape" << std::setw(12)
            << "elements" << "  byte range\n";
  for (const TensorInfo& info : reader.tensors())
    std::cout << std::left << std::setw(static_cast<int>(name_width)) << info.name << "  "
              << std::setw(5) << dtype_name(info.dtype) << "  " << std::right
              << std::setw(16) << shape_string(info.shape) << std::setw(12)
              << info.elements() << "  [" << info.begin << ", " << info.end << ")\n";
  for (const auto& [key, value] : reader.metadata())
    std::cout << "metadata " << key << " = " << value << "\n";
  std::cout << reader.tensors().size() << " tensors, " << total_elements << " elements, "
            << total_bytes << " data bytes\n";
  return 0;
}

int cmd_diff(const std::string& left_path, const std::string& right_path, double tolerance) {
  if (!(tolerance >= 0.0)) throw ValidationError("tolerance must be >= 0");
  CheckpointReader left(left_path);
  CheckpointReader right(right_path);

  std::map<std::string, const TensorInfo*> left_infos, right_infos;
  for (const TensorInfo& info : left.tensors()) left_infos[info.name] = &info;
  for (const TensorInfo& info : right.tensors()) right_infos[info.name] = &info;

  bool any_difference = false;
  std::uint64_t total_differing = 0;
  for (const auto& [name, linfo] : left_infos) {
    auto it = right_infos.find(name);
    if (it == right_infos.end()) {
      std::cout << name << ": only in " << left_path << "\n";
      any_difference = true;
      continue;
    }
    const TensorInfo* rinfo = it->second;
    if (linfo->shape != rinfo->shape) {
      std::cout << name << ": shape mismatch " << shape_string(linfo->shape) << " vs "
                << shape_string(rinfo->shape) << "\n";
      any_difference = true;
      continue;
    }
    if (linfo->dtype != rinfo->dtype) {
      std::cout << name << ": dtype mismatch " << dtype_name(linfo->dtype) << " vs "
                << dtype_name(rinfo->dtype) << "\n";
      any_difference = true;
      continue;
    }
    const std::vector<float> lv = to_f32(linfo->dtype, left.read_data(*linfo));
    const std::vector<float> rv = to_f32(rinfo->dtype, right.read_data(*rinfo));
    std::uint64_t differing = 0;
    if (tolerance == 0.0) {
      for (std::size_t i = 0; i < lv.size(); ++i)
        if (std::bit_cast<std::uint32_t>(lv[i]) != std::bit_cast<std::uint32_t>(rv[i]))
          ++differing;
    } else {
      for (std::size_t i = 0; i < lv.size(); ++i)
        if (!(std::abs(static_cast<double>(lv[i]) - static_cast<double>(rv[i])) <= tolerance))
          ++differing;
    }
    if (differing) {
      std::cout << name << ": " << differing << "/" << lv.size()
                << " elements differ\n";
      any_difference = true;
      total_differing += differing;
    }
  }
  for (const auto& [name, rinfo] : right_infos)
    if (!left_infos.count(name)) {
      std::cout << name << ": only in " << right_path << "\n";
      any_difference = true;
    }
  if (!any_difference) {
    std::cout << "identical (tolerance " << tolerance << ")\n";
    return 0;
  }
  std::cout << "total differing elements: " << total_differing << "\n";
  return 1;
}

int cmd_synth(const std::string& spec_path, const std::string& out, unsigned threads) {
  std::ifstream file(spec_path);
  if (!file) throw IoError("cannot open spec \"" + spec_path + "\"");
  std::ostringstream text;
  text << file.rdbuf();
  const SynthSpec spec = parse_synth_spec(text.str());
  const TensorMap map = generate_synthetic_checkpoint(spec, threads);
  write_checkpoint(map, out);
  std::cout << "wrote " << out << " (" << map.tensors.size() << " tensors, "
            << map.total_elements() << " elements)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"checkpoint merging toolkit"};
  app.set_version_flag("--version", ckmerge::kVersion);
  app.require_subcommand(1);

  // merge
  std::string recipe_path;
  unsigned merge_threads = 0;
  bool merge_table = false;
  CLI::App* merge = app.add_subcommand("merge", "execute a merge recipe");
  merge->add_option("recipe", recipe_path, "recipe manifest (JSON)")->required();
  merge->add_option("--threads", merge_threads, "parallelism bound (0 = auto)");
  merge->add_flag("--table", merge_table, "print the per-tensor table");

  // fuse
  std::string fuse_left, fuse_right, fuse_out, fuse_report;
  double fuse_lambda = 1.5, fuse_epsilon = 1e-8;
  std::string fuse_granularity = "tensor";
  double fuse_fixed_threshold = 0.0;
  unsigned fuse_threads = 0;
  bool fuse_table = false;
  CLI::App* fuse = app.add_subcommand("fuse", "fuse two checkpoints");
  fuse->add_option("left", fuse_left, "left (kept by default) checkpoint")->required();
  fuse->add_option("right", fuse_right, "right checkpoint")->required();
  fuse->add_option("--out", fuse_out, "output checkpoint path")->required();
  fuse->add_option("--lambda", fuse_lambda, "threshold balance coefficient");
  fuse->add_option("--epsilon", fuse_epsilon, "softmax additive floor");
  fuse->add_option("--granularity", fuse_granularity, "tensor|global");
  CLI::Option* fixed_opt =
      fuse->add_option("--fixed-threshold", fuse_fixed_threshold,
                       "bypass the dynamic threshold with a fixed value");
  fuse->add_option("--report", fuse_report, "write the merge report JSON here");
  fuse->add_option("--threads", fuse_threads, "parallelism bound (0 = auto)");
  fuse->add_flag("--table", fuse_table, "print the per-tensor table");

  // inspect
  std::string inspect_path;
  bool inspect_json = false;
  CLI::App* inspect = app.add_subcommand("inspect", "show checkpoint contents");
  inspect->add_option("checkpoint", inspect_path, "checkpoint path")->required();
  inspect->add_flag("--json", inspect_json, "machine-readable output");

  // diff
  std::string diff_left, diff_right;
  double diff_tolerance = 0.0;
  CLI::App* diff = app.add_subcommand("diff", "compare two checkpoints");
  diff->add_option("left", diff_left, "first checkpoint")->required();
  diff->add_option("right", diff_right, "second checkpoint")->required();
  diff->add_option("--tolerance", diff_tolerance,
                   "count elements differing by more than this (0 = bit-exact)");

  // synth
  std::string synth_spec, synth_out;
  unsigned synth_threads = 0;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic checkpoint");
  synth->add_option("spec", synth_spec, "synthesis spec (JSON)")->required();
  synth->add_option("--out", synth_out, "output checkpoint path")->required();
  synth->add_option("--threads", synth_threads, "parallelism bound (0 = auto)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*merge) return cmd_merge(recipe_path, merge_threads, merge_table);
    if (*fuse)
      return cmd_fuse(fuse_left, fuse_right, fuse_out, fuse_lambda, fuse_epsilon,
                      fuse_granularity,
                      fixed_opt->count() ? std::optional<double>(fuse_fixed_threshold)
                                         : std::nullopt,
                      fuse_report, fuse_threads, fuse_table);
    if (*inspect) return cmd_inspect(inspect_path, inspect_json);
    if (*diff) return cmd_diff(diff_left, diff_right, diff_tolerance);
    if (*synth) return cmd_synth(synth_spec, synth_out, synth_threads);
  } catch (const ckmerge::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ckmerge::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ckmerge::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 3;  // unreachable: a subcommand is required
}
