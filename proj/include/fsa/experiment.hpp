#pragma once

// End-to-end toy experiment: deterministic two-domain corpus, adapted and
// source-only training runs, and the evaluation metrics of both.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fsa/io.hpp"
#include "fsa/network.hpp"
#include "fsa/ssf.hpp"
#include "fsa/synth.hpp"
#include "fsa/trainer.hpp"

namespace fsa::experiment {

/// Training settings of the toy experiment. Unlike the TrainConfig defaults,
/// these use a larger learning rate, per-pixel reconstruction loss and a
/// stronger reversal; with 2000 steps the plain defaults barely move the
/// detector.
nn::TrainConfig toy_train_config();

struct ExperimentConfig {
  nn::NetworkSpec network;
  nn::TrainConfig train = toy_train_config();
  synth::SceneSpec scene;
  synth::DomainShiftSpec shift = synth::default_shift();
  synth::ProposalNoiseSpec noise;
  ssf::ScaleSweepConfig ssf;
  nn::ProbeConfig probe;
  /// Pool sizes per domain.
  int train_images = 64;
  int eval_images = 64;
  int probe_fit_images = 32;
  int probe_test_images = 32;
  std::vector<std::uint64_t> seeds{0};
  /// Also train the source-only baseline for comparison.
  bool run_source_only = true;
};

void validate(const ExperimentConfig& cfg);

/// Fields missing from `j` keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const io::Json& j);
io::Json config_to_json(const ExperimentConfig& cfg);

/// SplitMix64 mix of (seed, stream, index) into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

struct Split {
  std::vector<synth::Sample> samples;
  std::vector<grouping::ProposalSet> proposals;
  std::vector<nn::PreparedImage> prepared;
};

struct Corpus {
  Split train_source, train_target;
  Split eval_source, eval_target;
  Split probe_fit, probe_test;  // both domains, interleaved source/target
};

enum class SplitKind { kTrainSource, kTrainTarget, kEvalSource, kEvalTarget, kProbeFit, kProbeTest };

/// Scenes of one split; target samples are shifted copies of independent
/// scenes, so no source image has a target twin.
Split build_split(const ExperimentConfig& cfg, std::uint64_t seed, SplitKind kind, int count);
Corpus build_corpus(const ExperimentConfig& cfg, std::uint64_t seed);

using StepCallback = std::function<void(const nn::StepMetrics&)>;

/// Trains a fresh network for cfg.train.iterations steps; each step draws
/// one source and one target image from the training pools.
nn::Network train(const ExperimentConfig& cfg, const Corpus& corpus, std::uint64_t seed,
                  nn::TrainMode mode, const StepCallback& on_step = {});

struct RunMetrics {
  double probe_accuracy = 0.0;
  double target_match_rate = 0.0;
  double source_match_rate = 0.0;
};

RunMetrics evaluate(const ExperimentConfig& cfg, const nn::Network& net, const Corpus& corpus);

struct SeedResult {
  std::uint64_t seed = 0;
  RunMetrics adapted;
  std::optional<RunMetrics> source_only;
};

}  // namespace fsa::experiment
