// Command-line front end: clustering, grouping, corpus generation, toy
// training and gradient checks.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "fsa/experiment.hpp"
#include "fsa/gradcheck.hpp"
#include "fsa/grouping.hpp"
#include "fsa/io.hpp"
#include "fsa/ssf.hpp"

namespace fs = std::filesystem;
using namespace fsa;

namespace {

enum ExitCode { kOk = 0, kValidationFailure = 1, kBadInput = 2, kInternalError = 3 };

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

Level log_level() {
  const char* v = std::getenv("FSA_LOG");
  if (v == nullptr) return Level::kInfo;
  const std::string s(v);
  if (s == "error") return Level::kError;
  if (s == "debug") return Level::kDebug;
  return Level::kInfo;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

// Timestamps live only in this sidecar so every other output is reproducible.
class SidecarLog {
 public:
  explicit SidecarLog(const fs::path& path) : out_(path, std::ios::app) {}

  void note(const std::string& msg) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out_ << stamp << ' ' << msg << '\n';
  }

 private:
  std::ofstream out_;
};

struct ClusterArgs {
  std::string points, out, lifetime_csv;
  std::optional<double> sigma0;
  double k = 1.05;
  double epsilon = 0.01;
};

int cmd_cluster(const ClusterArgs& a) {
  const auto points = io::read_points_csv(a.points);
  ssf::ScaleSweepConfig cfg;
  cfg.sigma0 = a.sigma0;
  cfg.k = a.k;
  cfg.epsilon = a.epsilon;
  try {
    ssf::validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw io::InputError(e.what());
  }
  const auto result = ssf::cluster(points, cfg);
  log(Level::kInfo, "clustered " + std::to_string(points.size()) + " points into K=" +
                        std::to_string(result.model.k()) + " at sigma*=" + fmt(result.model.sigma_star));
  if (result.sweep.truncated) log(Level::kInfo, "scale sweep hit max_scales before reaching K=1");
  io::write_text(a.out, io::clustering_to_json(result).dump(2) + "\n");
  if (!a.lifetime_csv.empty()) io::write_text(a.lifetime_csv, io::lifetime_csv(result, cfg));
  return kOk;
}

int cmd_group(const std::string& proposals, const std::string& out) {
  const auto set = io::proposals_from_json(io::read_json(proposals));
  const auto result = grouping::cluster_proposals_or_single_group(set, {});
  log(Level::kInfo, "image '" + set.image_id + "': " + std::to_string(result.groups.size()) + " groups, " +
                        std::to_string(result.outliers.size()) + " outliers");
  io::write_text(out, io::grouping_to_json(result).dump(2) + "\n");
  return kOk;
}

int cmd_datagen(const std::string& spec, int n, std::uint64_t seed, const fs::path& out) {
  if (n < 1) throw io::InputError("--n must be >= 1");
  const auto cfg = experiment::config_from_json(io::read_json(spec));
  const std::pair<const char*, experiment::SplitKind> splits[] = {
      {"source", experiment::SplitKind::kTrainSource}, {"target", experiment::SplitKind::kTrainTarget}};
  for (const auto& [name, kind] : splits) {
    ensure_dir(out / "images" / name);
    ensure_dir(out / "labels" / name);
    ensure_dir(out / "proposals" / name);
    const auto split = experiment::build_split(cfg, seed, kind, n);
    for (int i = 0; i < n; ++i) {
      const std::string id = std::to_string(i);
      const auto& s = split.samples[static_cast<std::size_t>(i)];
      io::write_ppm(out / "images" / name / (id + ".ppm"), s.rgb());
      io::write_text(out / "labels" / name / (id + ".json"),
                     io::annotations_to_json(s.evaluation_annotations()).dump(2) + "\n");
      io::write_text(out / "proposals" / name / (id + ".json"),
                     io::proposals_to_json(split.proposals[static_cast<std::size_t>(i)]).dump(2) + "\n");
    }
    log(Level::kInfo, "wrote " + std::to_string(n) + " " + name + " samples");
  }
  return kOk;
}

int cmd_train_toy(const std::string& config, const fs::path& out_dir) {
  const auto cfg = experiment::config_from_json(io::read_json(config));
  ensure_dir(out_dir);
  SidecarLog sidecar(out_dir / "run.log");
  sidecar.note("train-toy start, config " + config);
  io::write_text(out_dir / "config.json", experiment::config_to_json(cfg).dump(2) + "\n");

  io::Json per_seed = io::Json::array();
  double probe_adapted = 0.0, probe_source = 0.0, match_adapted = 0.0, match_source = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    const auto corpus = experiment::build_corpus(cfg, seed);
    auto run = [&](nn::TrainMode mode, const std::string& name) {
      std::ofstream csv(out_dir / ("losses_" + name + "_" + tag + ".csv"), std::ios::binary);
      nn::write_loss_header(csv);
      auto net = experiment::train(cfg, corpus, seed, mode, [&](const nn::StepMetrics& m) {
        nn::write_loss_row(csv, m);
        if ((m.step + 1) % 100 == 0) {
          log(Level::kDebug, name + " " + tag + " step " + std::to_string(m.step + 1) + " total " + fmt(m.total));
        }
      });
      sidecar.note(name + " " + tag + " finished");
      return net;
    };

    io::Json entry;
    entry["seed"] = seed;
    auto adapted = run(nn::TrainMode::kAdapted, "adapted");
    io::write_checkpoint(out_dir / ("checkpoint_" + tag + ".bin"), out_dir / ("checkpoint_" + tag + ".json"), adapted);
    const auto ma = experiment::evaluate(cfg, adapted, corpus);
    entry["adapted"] = {{"probe_accuracy", ma.probe_accuracy},
                        {"target_match_rate", ma.target_match_rate},
                        {"source_match_rate", ma.source_match_rate}};
    probe_adapted += ma.probe_accuracy;
    match_adapted += ma.target_match_rate;
    log(Level::kInfo, tag + " adapted: probe " + fmt(ma.probe_accuracy) + ", target match " + fmt(ma.target_match_rate));
    if (cfg.run_source_only) {
      auto baseline = run(nn::TrainMode::kSourceOnly, "source_only");
      const auto mb = experiment::evaluate(cfg, baseline, corpus);
      entry["source_only"] = {{"probe_accuracy", mb.probe_accuracy},
                              {"target_match_rate", mb.target_match_rate},
                              {"source_match_rate", mb.source_match_rate}};
      probe_source += mb.probe_accuracy;
      match_source += mb.target_match_rate;
      log(Level::kInfo, tag + " source-only: probe " + fmt(mb.probe_accuracy) + ", target match " +
                            fmt(mb.target_match_rate));
    }
    per_seed.push_back(entry);
  }

  const double n = static_cast<double>(cfg.seeds.size());
  io::Json metrics;
  metrics["probe_accuracy_adapted"] = probe_adapted / n;
  metrics["target_match_rate"] = match_adapted / n;
  if (cfg.run_source_only) {
    metrics["probe_accuracy_source_only"] = probe_source / n;
    metrics["target_match_rate_source_only"] = match_source / n;
  } else {
    metrics["probe_accuracy_source_only"] = nullptr;
    metrics["target_match_rate_source_only"] = nullptr;
  }
  metrics["seeds"] = cfg.seeds;
  metrics["per_seed"] = per_seed;
  io::write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
  sidecar.note("train-toy done");
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, int seeds, bool inject_wrong_sign) {
  bool all_passed = true;
  for (int i = 0; i < seeds; ++i) {
    nn::GradcheckConfig cfg;
    cfg.seed = seed + static_cast<std::uint64_t>(i);
    cfg.inject_wrong_sign = inject_wrong_sign;
    const auto report = nn::finite_difference_check(cfg);
    std::printf("seed %llu\n", static_cast<unsigned long long>(cfg.seed));
    for (const auto& b : report.branches) {
      std::printf("  %-10s max_rel_error=%.3e checked=%d skipped_nonsmooth=%d worst_layer=%s %s\n",
                  nn::branch_name(b.branch).c_str(), b.max_rel_error, b.checked, b.skipped_nonsmooth,
                  b.worst_layer.empty() ? "-" : b.worst_layer.c_str(), b.passed ? "PASS" : "FAIL");
    }
    std::printf("  grl_sign_exact=%s\n", report.grl_sign_exact ? "yes" : "no");
    std::printf("  %s\n", report.passed ? "PASS" : "FAIL");
    all_passed = all_passed && report.passed;
  }
  return all_passed ? kOk : kValidationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-space region grouping and domain-adaptive toy detector"};
  app.require_subcommand(1);

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster", "Scale-space clustering of 2-D points");
  cluster->add_option("--points", ca.points, "CSV with header x,y")->required();
  cluster->add_option("--sigma0", ca.sigma0, "Initial blur scale (default: derived from the data)");
  cluster->add_option("--k", ca.k, "Scale multiplier")->capture_default_str();
  cluster->add_option("--epsilon", ca.epsilon, "Lifetime constant")->capture_default_str();
  cluster->add_option("--out", ca.out, "Output JSON")->required();
  cluster->add_option("--lifetime-csv", ca.lifetime_csv, "Per-scale sigma,K,lifetime CSV");

  std::string proposals, group_out;
  auto* group = app.add_subcommand("group", "Group region proposals of one image");
  group->add_option("--proposals", proposals, "Proposal JSON")->required();
  group->add_option("--out", group_out, "Output JSON")->required();

  std::string spec, data_out;
  int n = 0;
  std::uint64_t data_seed = 0;
  auto* datagen = app.add_subcommand("datagen", "Write a synthetic two-domain corpus");
  datagen->add_option("--spec", spec, "JSON with scene/shift/proposals settings")->required();
  datagen->add_option("--n", n, "Images per domain")->required();
  datagen->add_option("--seed", data_seed, "Corpus seed")->capture_default_str();
  datagen->add_option("--out", data_out, "Output directory")->required();

  std::string config, out_dir;
  auto* train = app.add_subcommand("train-toy", "Train adapted and source-only toy detectors");
  train->add_option("--config", config, "Experiment JSON")->required();
  train->add_option("--out-dir", out_dir, "Output directory")->required();

  std::uint64_t gc_seed = 0;
  int gc_seeds = 1;
  bool wrong_sign = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss branch");
  gradcheck->add_option("--seed", gc_seed, "First seed")->capture_default_str();
  gradcheck->add_option("--seeds", gc_seeds, "Number of consecutive seeds")->capture_default_str();
  gradcheck->add_flag("--inject-wrong-sign", wrong_sign, "Negate one layer's gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*cluster) return cmd_cluster(ca);
    if (*group) return cmd_group(proposals, group_out);
    if (*datagen) return cmd_datagen(spec, n, data_seed, data_out);
    if (*train) return cmd_train_toy(config, out_dir);
    if (*gradcheck) {
      if (gc_seeds < 1) throw io::InputError("--seeds must be >= 1");
      return cmd_gradcheck(gc_seed, gc_seeds, wrong_sign);
    }
  } catch (const io::InputError& e) {
    log(Level::kError, std::string("bad input: ") + e.what());
    return kBadInput;
  } catch (const nn::NonFiniteError& e) {
    log(Level::kError, std::string("non-finite value: ") + e.what());
    return kValidationFailure;
  } catch (const std::exception& e) {
    log(Level::kError, std::string("internal error: ") + e.what());
    return kInternalError;
  }
  return kInternalError;
}
