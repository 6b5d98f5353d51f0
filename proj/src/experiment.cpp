#include "fsa/experiment.hpp"

#include <random>
#include <set>
#include <string>

namespace fsa::experiment {
namespace {

using io::InputError;
using io::Json;

enum Stream : std::uint64_t {
  kSceneStream = 1,
  kShiftStream = 2,
  kProposalStream = 3,
  kInitStream = 100,
  kOrderStream = 101,
};

class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InputError(where_ + " must be an object");
    for (const auto& item : j_.items()) unread_.insert(item.key());
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    unread_.erase(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw InputError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    unread_.erase(key);
    return &j_.at(key);
  }

  void finish() const {
    if (!unread_.empty()) throw InputError(where_ + ": unknown key '" + *unread_.begin() + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> unread_;
};

synth::Sample make_sample(const ExperimentConfig& cfg, std::uint64_t seed, SplitKind kind, int i,
                          synth::Domain domain) {
  const auto k = static_cast<std::uint64_t>(kind);
  const std::uint64_t index = (k << 32) | static_cast<std::uint32_t>(i);
  synth::Sample s = synth::generate_scene(cfg.scene, derive_seed(seed, kSceneStream, index));
  if (domain == synth::Domain::kTarget) {
    s = synth::apply_domain_shift(s, cfg.shift, derive_seed(seed, kShiftStream, index));
  }
  return s;
}

}  // namespace

nn::TrainConfig toy_train_config() {
  nn::TrainConfig t;
  t.lr_initial = 0.02;
  t.lr_after_decay = 0.002;
  t.iterations = 2000;
  t.normalize_reconstruction = true;
  t.weights.lambda = 1.5;
  return t;
}

void validate(const ExperimentConfig& cfg) {
  nn::validate(cfg.network);
  nn::validate(cfg.train);
  synth::validate(cfg.scene);
  ssf::validate(cfg.ssf);
  if (cfg.scene.height != cfg.network.image_height || cfg.scene.width != cfg.network.image_width) {
    throw std::invalid_argument("scene canvas must match the network input size");
  }
  if (cfg.train_images < 1 || cfg.eval_images < 1 || cfg.probe_fit_images < 1 ||
      cfg.probe_test_images < 1) {
    throw std::invalid_argument("every split needs at least one image");
  }
  if (cfg.seeds.empty()) throw std::invalid_argument("no seeds given");
  if (cfg.probe.iterations < 1 || !(cfg.probe.learning_rate > 0.0) || cfg.probe.l2 < 0.0) {
    throw std::invalid_argument("invalid probe settings");
  }
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  Reader top(j, "config");
  if (const Json* n = top.child("network")) {
    Reader r(*n, "network");
    r.get("image_height", cfg.network.image_height);
    r.get("image_width", cfg.network.image_width);
    r.get("channels", cfg.network.channels);
    r.get("domain_hidden", cfg.network.domain_hidden);
    r.get("instance_hidden", cfg.network.instance_hidden);
    r.get("head_hidden", cfg.network.head_hidden);
    r.finish();
  }
  if (const Json* t = top.child("train")) {
    Reader r(*t, "train");
    r.get("lr_initial", cfg.train.lr_initial);
    r.get("lr_after_decay", cfg.train.lr_after_decay);
    r.get("iterations", cfg.train.iterations);
    int decay = -1;
    r.get("decay_step", decay);
    if (decay >= 0) cfg.train.decay_step = decay;
    r.get("momentum", cfg.train.momentum);
    r.get("beta", cfg.train.weights.beta);
    r.get("lambda", cfg.train.weights.lambda);
    r.get("gamma", cfg.train.weights.gamma);
    r.get("normalize_reconstruction", cfg.train.normalize_reconstruction);
    std::string mode;
    r.get("difference_mode", mode);
    if (mode == "batch_matrix") {
      cfg.train.difference_mode = losses::DifferenceMode::kBatchMatrix;
    } else if (!mode.empty() && mode != "per_sample") {
      throw InputError("train.difference_mode must be 'per_sample' or 'batch_matrix'");
    }
    r.finish();
  }
  if (const Json* s = top.child("scene")) {
    Reader r(*s, "scene");
    r.get("height", cfg.scene.height);
    r.get("width", cfg.scene.width);
    r.get("min_objects", cfg.scene.min_objects);
    r.get("max_objects", cfg.scene.max_objects);
    r.get("min_size", cfg.scene.min_size);
    r.get("max_size", cfg.scene.max_size);
    r.get("spacing", cfg.scene.spacing);
    r.finish();
  }
  if (const Json* s = top.child("shift")) {
    Reader r(*s, "shift");
    r.get("color_shift", cfg.shift.color_shift);
    r.get("fog_alpha", cfg.shift.fog_alpha);
    r.get("blur_radius", cfg.shift.blur_radius);
    r.get("noise_std", cfg.shift.noise_std);
    r.finish();
  }
  if (const Json* s = top.child("proposals")) {
    Reader r(*s, "proposals");
    r.get("jitter_std", cfg.noise.jitter_std);
    r.get("size_jitter", cfg.noise.size_jitter);
    r.get("redundancy", cfg.noise.redundancy);
    r.get("background_count", cfg.noise.background_count);
    r.get("background_margin", cfg.noise.background_margin);
    r.finish();
  }
  if (const Json* s = top.child("data")) {
    Reader r(*s, "data");
    r.get("train_images", cfg.train_images);
    r.get("eval_images", cfg.eval_images);
    r.get("probe_fit_images", cfg.probe_fit_images);
    r.get("probe_test_images", cfg.probe_test_images);
    r.finish();
  }
  if (const Json* s = top.child("probe")) {
    Reader r(*s, "probe");
    r.get("iterations", cfg.probe.iterations);
    r.get("learning_rate", cfg.probe.learning_rate);
    r.get("l2", cfg.probe.l2);
    r.finish();
  }
  top.get("seeds", cfg.seeds);
  top.get("run_source_only", cfg.run_source_only);
  top.finish();
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["network"] = {{"image_height", cfg.network.image_height},
                  {"image_width", cfg.network.image_width},
                  {"channels", cfg.network.channels},
                  {"domain_hidden", cfg.network.domain_hidden},
                  {"instance_hidden", cfg.network.instance_hidden},
                  {"head_hidden", cfg.network.head_hidden}};
  j["train"] = {{"lr_initial", cfg.train.lr_initial},
                {"lr_after_decay", cfg.train.lr_after_decay},
                {"iterations", cfg.train.iterations},
                {"momentum", cfg.train.momentum},
                {"beta", cfg.train.weights.beta},
                {"lambda", cfg.train.weights.lambda},
                {"gamma", cfg.train.weights.gamma},
                {"normalize_reconstruction", cfg.train.normalize_reconstruction},
                {"difference_mode", cfg.train.difference_mode == losses::DifferenceMode::kBatchMatrix
                                        ? "batch_matrix"
                                        : "per_sample"}};
  if (cfg.train.decay_step) j["train"]["decay_step"] = *cfg.train.decay_step;
  j["scene"] = {{"height", cfg.scene.height},       {"width", cfg.scene.width},
                {"min_objects", cfg.scene.min_objects}, {"max_objects", cfg.scene.max_objects},
                {"min_size", cfg.scene.min_size},   {"max_size", cfg.scene.max_size},
                {"spacing", cfg.scene.spacing}};
  j["shift"] = {{"color_shift", cfg.shift.color_shift},
                {"fog_alpha", cfg.shift.fog_alpha},
                {"blur_radius", cfg.shift.blur_radius},
                {"noise_std", cfg.shift.noise_std}};
  j["proposals"] = {{"jitter_std", cfg.noise.jitter_std},
                    {"size_jitter", cfg.noise.size_jitter},
                    {"redundancy", cfg.noise.redundancy},
                    {"background_count", cfg.noise.background_count},
                    {"background_margin", cfg.noise.background_margin}};
  j["data"] = {{"train_images", cfg.train_images},
               {"eval_images", cfg.eval_images},
               {"probe_fit_images", cfg.probe_fit_images},
               {"probe_test_images", cfg.probe_test_images}};
  j["probe"] = {{"iterations", cfg.probe.iterations},
                {"learning_rate", cfg.probe.learning_rate},
                {"l2", cfg.probe.l2}};
  j["seeds"] = cfg.seeds;
  j["run_source_only"] = cfg.run_source_only;
  return j;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

Split build_split(const ExperimentConfig& cfg, std::uint64_t seed, SplitKind kind, int count) {
  Split split;
  const bool mixed = kind == SplitKind::kProbeFit || kind == SplitKind::kProbeTest;
  const int total = mixed ? 2 * count : count;
  for (int i = 0; i < total; ++i) {
    synth::Domain domain = synth::Domain::kSource;
    if (kind == SplitKind::kTrainTarget || kind == SplitKind::kEvalTarget || (mixed && i % 2 == 1)) {
      domain = synth::Domain::kTarget;
    }
    synth::Sample s = make_sample(cfg, seed, kind, i, domain);
    const std::uint64_t index = (static_cast<std::uint64_t>(kind) << 32) | static_cast<std::uint32_t>(i);
    grouping::ProposalSet props = synth::generate_proposals(s, cfg.noise, derive_seed(seed, kProposalStream, index));
    props.image_id = std::to_string(i);
    split.prepared.push_back(nn::prepare_image(s, props, cfg.ssf));
    split.samples.push_back(std::move(s));
    split.proposals.push_back(std::move(props));
  }
  return split;
}

Corpus build_corpus(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Corpus c;
  c.train_source = build_split(cfg, seed, SplitKind::kTrainSource, cfg.train_images);
  c.train_target = build_split(cfg, seed, SplitKind::kTrainTarget, cfg.train_images);
  c.eval_source = build_split(cfg, seed, SplitKind::kEvalSource, cfg.eval_images);
  c.eval_target = build_split(cfg, seed, SplitKind::kEvalTarget, cfg.eval_images);
  c.probe_fit = build_split(cfg, seed, SplitKind::kProbeFit, cfg.probe_fit_images);
  c.probe_test = build_split(cfg, seed, SplitKind::kProbeTest, cfg.probe_test_images);
  return c;
}

nn::Network train(const ExperimentConfig& cfg, const Corpus& corpus, std::uint64_t seed,
                  nn::TrainMode mode, const StepCallback& on_step) {
  nn::Network net(cfg.network, derive_seed(seed, kInitStream, 0));
  nn::Trainer trainer(net, cfg.train, mode);
  std::mt19937_64 order(derive_seed(seed, kOrderStream, 0));
  std::uniform_int_distribution<std::size_t> pick_s(0, corpus.train_source.prepared.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_t(0, corpus.train_target.prepared.size() - 1);
  for (int step = 0; step < cfg.train.iterations; ++step) {
    const std::size_t si = pick_s(order);
    const std::size_t ti = pick_t(order);
    const nn::StepMetrics m = trainer.step(corpus.train_source.prepared[si], corpus.train_target.prepared[ti]);
    if (on_step) on_step(m);
  }
  return net;
}

RunMetrics evaluate(const ExperimentConfig& cfg, const nn::Network& net, const Corpus& corpus) {
  RunMetrics m;
  m.target_match_rate = nn::proposal_match_rate(net, corpus.eval_target.prepared, corpus.eval_target.samples);
  m.source_match_rate = nn::proposal_match_rate(net, corpus.eval_source.prepared, corpus.eval_source.samples);
  m.probe_accuracy = nn::probe_domain_accuracy(net, corpus.probe_fit.prepared, corpus.probe_test.prepared, cfg.probe);
  return m;
}

}  // namespace fsa::experiment
