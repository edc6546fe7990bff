#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "localtb/pipeline.hpp"

namespace {

enum Exit { kPass = 0, kToleranceFail = 1, kConfigError = 2, kInternalError = 3 };

struct Common {
  std::string config;
  int depth = 0;
  int dim = 0;
  std::string kernel;
  long long seed = -1;
  std::string out;
  std::string stage;
};

void add_common(CLI::App* sub, Common& c, bool with_stage) {
  sub->add_option("--config", c.config, "JSON run configuration")->envname("LOCALTB_CONFIG");
  sub->add_option("--depth", c.depth, "finest depth N (N+1 is run as well)")->envname("LOCALTB_DEPTH");
  sub->add_option("--dim", c.dim, "dimension, 1 or 2")->envname("LOCALTB_DIM");
  sub->add_option("--kernel", c.kernel, "kernel name")->envname("LOCALTB_KERNEL");
  sub->add_option("--seed", c.seed, "random seed")->envname("LOCALTB_SEED");
  sub->add_option("--out", c.out, "output directory")->envname("LOCALTB_OUT");
  if (with_stage) sub->add_option("--stage", c.stage, "last pipeline stage to run")->envname("LOCALTB_STAGE");
}

localtb::RunConfig make_config(const Common& c, const std::vector<std::string>& stages) {
  localtb::RunConfig cfg = c.config.empty() ? localtb::RunConfig{} : localtb::load_config(c.config);
  if (c.depth != 0) cfg.depth = c.depth;
  if (c.dim != 0) cfg.dim = c.dim;
  if (!c.kernel.empty()) cfg.kernel.name = c.kernel;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.stage.empty()) {
    cfg.stages = localtb::stages_through(c.stage);
  } else if (!stages.empty()) {
    cfg.stages = stages;
  }
  // A kernel given on the command line without a dimension picks its own.
  if (c.dim == 0 && !c.kernel.empty() && c.kernel.rfind("riesz", 0) == 0) cfg.dim = 2;
  if (cfg.dim == 2 && c.depth == 0 && c.config.empty()) cfg.depth = 5;
  return cfg;
}

void print_table(const localtb::VerificationReport& rep) {
  std::printf("depths %d/%d  kernel %s  d=%d\n", rep.depth_n, rep.depth_n1, rep.config.kernel.name.c_str(),
              rep.config.dim);
  for (const auto& r : rep.records)
    std::printf("%s  %-12s %-44s %-9s %14.6g %14.6g  ratio %.4f\n", r.pass ? "PASS" : "FAIL", r.stage.c_str(),
                r.name.c_str(), localtb::to_string(r.check).c_str(), r.at_n, r.at_n1, r.ratio);
  std::printf("%zu record(s), %zu failure(s)\n", rep.records.size(), rep.failures());
}

int run_stages(const Common& c, const std::vector<std::string>& stages) {
  const auto cfg = make_config(c, stages);
  const auto rep = localtb::run_pipeline(cfg);
  localtb::write_outputs(rep, cfg.out_dir);
  print_table(rep);
  std::printf("report written to %s\n", (std::filesystem::path(cfg.out_dir) / "report.json").string().c_str());
  return rep.pass() ? kPass : kToleranceFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical verification of the local Tb machinery on dyadic grids"};
  app.require_subcommand(1);

  const std::map<std::string, std::vector<std::string>> stage_sets{
      {"verify-kernel", {"kernel", "preparatory"}},
      {"decompose", {"decompose"}},
      {"stopping", {"stopping"}},
      {"suppress", {"suppress"}},
      {"martingale", {"martingale"}},
      {"bilinear", {"bilinear", "wbp", "baby_tb"}},
      {"pipeline", {}},
  };
  const std::map<std::string, std::string> help{
      {"verify-kernel", "kernel estimates, Cotlar, Hardy and off-diagonal certificates"},
      {"decompose", "Calderon-Zygmund decomposition of the top test function"},
      {"stopping", "stopping forests and the suppression profile"},
      {"suppress", "suppressed operator and its sparse system"},
      {"martingale", "adapted martingale differences, square functions, Carleson norms"},
      {"bilinear", "pairing decomposition, coefficient kernels, weak boundedness, baby Tb"},
      {"pipeline", "the full chain from rough systems to indicator testing"},
  };
  std::map<std::string, Common> opts;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, stages] : stage_sets) {
    subs[name] = app.add_subcommand(name, help.at(name));
    add_common(subs[name], opts[name], name == "pipeline");
  }
  auto* report = app.add_subcommand("report", "merge report.json files into one summary of worst constants");
  std::vector<std::string> merge;
  std::string report_out;
  report->add_option("--merge", merge, "report files")->required();
  report->add_option("--out", report_out, "directory for summary.json")->envname("LOCALTB_OUT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    for (const auto& [name, stages] : stage_sets)
      if (subs[name]->parsed()) return run_stages(opts[name], stages);
    if (report->parsed()) {
      for (const auto& p : merge)
        if (!std::filesystem::exists(p)) throw localtb::ConfigError("report file not found: " + p);
      const auto summary = localtb::merge_reports(merge);
      std::cout << summary.dump(2) << '\n';
      if (!report_out.empty()) {
        std::filesystem::create_directories(report_out);
        std::ofstream out(std::filesystem::path(report_out) / "summary.json");
        if (!out) throw localtb::Error("cannot write summary in " + report_out);
        out << summary.dump(2) << '\n';
      }
      return summary.at("pass").get<bool>() ? kPass : kToleranceFail;
    }
  } catch (const localtb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}
