#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cirlab/ablation.hpp"
#include "cirlab/checks.hpp"
#include "cirlab/config.hpp"
#include "cirlab/model.hpp"
#include "cirlab/rng.hpp"
#include "cirlab/stream.hpp"
#include "cirlab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string preset;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_root;
};

std::string resolve_out_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CIRLAB_OUT")) return env;
  return "out";
}

cirlab::RunConfig build_config(const CommonOpts& opts) {
  cirlab::RunConfig cfg;
  if (!opts.preset.empty()) cirlab::apply_preset(cfg, opts.preset);
  if (!opts.config_path.empty()) cirlab::apply_config_file(cfg, opts.config_path);
  for (const std::string& kv : opts.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cirlab::apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

fs::path make_out_dir(const std::string& root, const std::string& name) {
  fs::path dir = fs::path(root) / name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

int cmd_run(const CommonOpts& opts, std::string name, bool checkpoints) {
  cirlab::RunConfig cfg = build_config(opts);
  if (name.empty()) name = opts.preset.empty() ? "run" : opts.preset;
  name += "-s" + std::to_string(cfg.seed);
  const fs::path dir = make_out_dir(resolve_out_root(opts.out_root), name);

  {
    std::ofstream f(dir / "config.resolved");
    f << cirlab::dump_config(cfg);
  }
  cirlab::Trainer trainer(cfg);
  if (checkpoints) {
    trainer.experience_observer = [&](std::size_t t) {
      const std::string tag = "exp" + std::to_string(t);
      cirlab::save_model((dir / ("model_" + tag + ".bin")).string(), trainer.model());
      trainer.buffer().save((dir / ("buffer_" + tag + ".bin")).string());
      trainer.pool().save((dir / ("pool_" + tag + ".bin")).string());
    };
  }
  cirlab::RunMetrics metrics = trainer.run();
  cirlab::write_metrics_csv((dir / "metrics.csv").string(), metrics);

  json summary;
  summary["final_accuracy"] = metrics.final_accuracy;
  json accs = json::array(), wall = json::array();
  for (const auto& e : metrics.experiences) accs.push_back(e.accuracy);
  for (double w : metrics.wall_ms) wall.push_back(w);
  summary["per_experience_accuracy"] = accs;
  summary["wall_ms"] = wall;
  summary["seed"] = cfg.seed;
  summary["preset"] = opts.preset.empty() ? "custom" : opts.preset;
  {
    std::ofstream f(dir / "summary.json");
    f << summary.dump(2) << "\n";
  }
  std::cout << "run '" << name << "' finished: final accuracy " << metrics.final_accuracy << "\n"
            << "artifacts in " << dir.string() << "\n";
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) seeds.push_back(std::stoull(part));
  if (seeds.empty()) throw std::invalid_argument("--seeds expects a comma list like 1,2,3");
  return seeds;
}

int cmd_ablate(const CommonOpts& opts, int table, const std::string& seeds_csv, std::string name) {
  // Tables start from the desk-scale base; --config/--set still apply on top.
  cirlab::RunConfig base = cirlab::desk_ablation_config();
  if (!opts.preset.empty()) cirlab::apply_preset(base, opts.preset);
  if (!opts.config_path.empty()) cirlab::apply_config_file(base, opts.config_path);
  for (const std::string& kv : opts.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cirlab::apply_config_value(base, kv.substr(0, eq), kv.substr(eq + 1));
  }
  const auto seeds = parse_seeds(seeds_csv);
  cirlab::AblationReport report = cirlab::run_ablation(table, base, seeds);
  if (name.empty()) name = "table" + std::to_string(table);
  const fs::path dir = make_out_dir(resolve_out_root(opts.out_root), name);
  {
    std::ofstream f(dir / ("ablation_table" + std::to_string(table) + ".csv"));
    f << report.csv();
  }
  {
    std::ofstream f(dir / "config.resolved");
    f << cirlab::dump_config(base);
  }
  std::cout << report.to_string() << "artifacts in " << dir.string() << "\n";
  return report.orderings_hold() ? 0 : 2;
}

int cmd_check(const std::string& what, std::uint64_t seed, std::size_t instances, double tolerance) {
  std::vector<cirlab::CheckResult> results;
  if (what == "gradients") {
    results = cirlab::run_gradient_checks(seed, instances, tolerance);
  } else if (what == "invariants") {
    results = cirlab::run_invariant_checks(seed);
  } else {
    throw std::invalid_argument("check expects 'gradients' or 'invariants', got '" + what + "'");
  }
  std::cout << cirlab::format_results(results);
  return cirlab::all_pass(results) ? 0 : 2;
}

int cmd_gen_data(const std::string& out, std::size_t classes, std::size_t per_class, std::size_t side,
                 std::uint64_t seed) {
  std::vector<std::pair<cirlab::Tensor, int>> records;
  records.reserve(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i)
      records.emplace_back(
          cirlab::synth_image(static_cast<int>(c), cirlab::mix_seed(seed, c, i), side),
          static_cast<int>(c));
  cirlab::write_dataset(out, records, side, classes);
  std::cout << "wrote " << records.size() << " records (" << classes << " classes, side " << side << ") to "
            << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual-learning lab: CIR streams, multi-teacher distillation, rotation SSL, replay"};
  app.require_subcommand(1);

  CommonOpts run_opts, abl_opts;
  std::string run_name, abl_name, abl_seeds = "1,2,3,4,5";
  int abl_table = 1;

  auto add_common = [](CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--preset", o.preset, "ablation preset name");
    cmd->add_option("--config", o.config_path, "key=value config file");
    cmd->add_option("--set", o.overrides, "override, e.g. --set schedule.c=0.5")->take_all();
    cmd->add_option("--out-root", o.out_root, "output root (default $CIRLAB_OUT or ./out)");
  };

  bool run_checkpoints = false;
  std::string run_seed;
  CLI::App* run = app.add_subcommand("run", "train one configuration over its stream");
  add_common(run, run_opts);
  run->add_option("--name", run_name, "run name (output subdirectory)");
  run->add_option("--seed", run_seed, "shorthand for --set seed=<n>");
  run->add_flag("--checkpoints", run_checkpoints, "save model/buffer/pool after every experience");

  CLI::App* ablate = app.add_subcommand("ablate", "run a comparison table over seeds");
  add_common(ablate, abl_opts);
  ablate->add_option("--table", abl_table, "table id: 1, 2, 3 or 4")->required();
  ablate->add_option("--seeds", abl_seeds, "comma list of seeds (default 1,2,3,4,5)");
  ablate->add_option("--name", abl_name, "report name (output subdirectory)");

  std::string check_what = "gradients";
  std::uint64_t check_seed = 1;
  std::size_t check_instances = 50;
  double check_tolerance = 1e-4;
  CLI::App* check = app.add_subcommand("check", "run gradient or invariant suites");
  check->add_option("what", check_what, "gradients | invariants")->required();
  check->add_option("--seed", check_seed, "base seed");
  check->add_option("--instances", check_instances, "random instances per operation");
  check->add_option("--tolerance", check_tolerance, "relative tolerance");

  std::string gen_out = "data.cird";
  std::size_t gen_classes = 16, gen_per_class = 64, gen_side = 16;
  std::uint64_t gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic CIRD dataset file");
  gen->add_option("--out", gen_out, "output path");
  gen->add_option("--classes", gen_classes, "number of classes");
  gen->add_option("--per-class", gen_per_class, "images per class");
  gen->add_option("--side", gen_side, "image side length");
  gen->add_option("--seed", gen_seed, "generation seed");

  try {
    app.parse(argc, argv);
    if (run->parsed()) {
      if (!run_seed.empty()) run_opts.overrides.push_back("seed=" + run_seed);
      return cmd_run(run_opts, run_name, run_checkpoints);
    }
    if (ablate->parsed()) return cmd_ablate(abl_opts, abl_table, abl_seeds, abl_name);
    if (check->parsed()) return cmd_check(check_what, check_seed, check_instances, check_tolerance);
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_classes, gen_per_class, gen_side, gen_seed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
