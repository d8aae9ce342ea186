#pragma once

#include "motiongrpo/contrastive.hpp"
#include "motiongrpo/grpo.hpp"
#include "motiongrpo/metrics.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

inline constexpr const char* kVersion = "0.1.0";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
  std::size_t count = 200;
  std::size_t frames = 32;
  double fps = 30.0;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
};

struct ScheduleConfig {
  std::size_t steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct PretrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  bool resume = false;
};

struct ScorerConfig {
  std::size_t latent = 32;
  std::size_t blocks = 2;
  std::size_t steps = 400;
  std::size_t negatives = 15;
  double temperature = 0.07;
  double learning_rate = 1e-3;
};

struct EvalConfig {
  std::string split = "test";
  std::string checkpoint = "policy";  // "denoiser", "policy" or a file path
  double eta = 0.0;
  std::size_t steps = 16;
  double contact_threshold = 0.02;
  std::string rotation_mode = "l1";  // or "geodesic"
  bool oracle = false;
};

struct StudyConfig {
  std::vector<double> lambdas{0.0, 0.05, 0.1};
  std::size_t groups = 20;
  std::size_t seeds = 3;
};

struct PathsConfig {
  std::string dataset;
  std::string denoiser;
  std::string scorer;
  std::string policy;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 4;
  DataConfig data;
  ScheduleConfig schedule;
  std::vector<std::size_t> hidden{256, 256};
  PretrainConfig pretrain;
  ScorerConfig scorer;
  RewardWeights rewards;
  GrpoConfig grpo;
  EvalConfig eval;
  StudyConfig study;
  PathsConfig paths;

  void validate() const {
    if (threads == 0) throw ConfigError("threads must be >= 1");
    if (data.count == 0) throw ConfigError("data.count must be >= 1");
    if (data.frames < 4) throw ConfigError("data.frames must be >= 4");
    if (!(data.fps > 0.0)) throw ConfigError("data.fps must be > 0");
    try {
      validate_split_fractions(data.fractions);
      (void)build_schedule(schedule.steps, schedule.beta_min, schedule.beta_max);
      rewards.validate();
      grpo.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (grpo.steps > schedule.steps) throw ConfigError("grpo.steps exceeds schedule.steps");
    if (!(grpo.eta > 0.0 && grpo.eta <= 1.0)) throw ConfigError("grpo.eta must be in (0, 1]");
    if (pretrain.batch == 0) throw ConfigError("pretrain.batch must be >= 1");
    if (scorer.latent == 0 || scorer.negatives == 0) throw ConfigError("scorer.latent and scorer.negatives must be >= 1");
    if (!(scorer.temperature > 0.0)) throw ConfigError("scorer.temperature must be > 0");
    if (eval.steps == 0 || eval.steps > schedule.steps) throw ConfigError("eval.steps out of range");
    if (!(eval.eta >= 0.0 && eval.eta <= 1.0)) throw ConfigError("eval.eta must be in [0, 1]");
    if (!(eval.contact_threshold > 0.0)) throw ConfigError("eval.contact_threshold must be > 0");
    if (eval.rotation_mode != "l1" && eval.rotation_mode != "geodesic") {
      throw ConfigError("eval.rotation_mode must be l1 or geodesic");
    }
    try {
      (void)parse_split(eval.split);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("eval.split: ") + e.what());
    }
    if (study.groups == 0 || study.seeds == 0) throw ConfigError("study.groups and study.seeds must be >= 1");
    for (double l : study.lambdas) {
      if (!(l >= 0.0)) throw ConfigError("study.lambdas must be >= 0");
    }
  }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data"] = {{"count", c.data.count}, {"frames", c.data.frames}, {"fps", c.data.fps}, {"fractions", c.data.fractions}};
  j["schedule"] = {{"steps", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}};
  j["denoiser"] = {{"hidden", c.hidden}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch", c.pretrain.batch},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"resume", c.pretrain.resume}};
  j["scorer"] = {{"latent", c.scorer.latent},       {"blocks", c.scorer.blocks},
                 {"steps", c.scorer.steps},         {"negatives", c.scorer.negatives},
                 {"temperature", c.scorer.temperature}, {"learning_rate", c.scorer.learning_rate}};
  j["rewards"] = {{"vis", c.rewards.vis},
                  {"rot", c.rewards.rot},
                  {"pos", c.rewards.pos},
                  {"pos_aligned", c.rewards.pos_aligned},
                  {"vel", c.rewards.vel}};
  const GrpoConfig& g = c.grpo;
  j["grpo"] = {{"group_size", g.group_size},
               {"steps", g.steps},
               {"eta", g.eta},
               {"clip_epsilon", g.clip_epsilon},
               {"clip", g.clip},
               {"std_guard", g.std_guard},
               {"aggregation", aggregation_name(g.aggregation)},
               {"lambda", g.perlin_lambda},
               {"frequency", g.perlin_frequency},
               {"learning_rate", g.learning_rate},
               {"iterations", g.iterations},
               {"inner_epochs", g.inner_epochs},
               {"batch_size", g.batch_size}};
  j["eval"] = {{"split", c.eval.split},
               {"checkpoint", c.eval.checkpoint},
               {"eta", c.eval.eta},
               {"steps", c.eval.steps},
               {"contact_threshold", c.eval.contact_threshold},
               {"rotation_mode", c.eval.rotation_mode},
               {"oracle", c.eval.oracle}};
  j["study"] = {{"lambdas", c.study.lambdas}, {"groups", c.study.groups}, {"seeds", c.study.seeds}};
  j["paths"] = {{"dataset", c.paths.dataset},
                {"denoiser", c.paths.denoiser},
                {"scorer", c.paths.scorer},
                {"policy", c.paths.policy}};
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<std::size_t>();
    const auto& d = j.at("data");
    c.data.count = d.at("count").get<std::size_t>();
    c.data.frames = d.at("frames").get<std::size_t>();
    c.data.fps = d.at("fps").get<double>();
    c.data.fractions = d.at("fractions").get<std::array<double, 3>>();
    const auto& s = j.at("schedule");
    c.schedule.steps = s.at("steps").get<std::size_t>();
    c.schedule.beta_min = s.at("beta_min").get<double>();
    c.schedule.beta_max = s.at("beta_max").get<double>();
    c.hidden = j.at("denoiser").at("hidden").get<std::vector<std::size_t>>();
    const auto& p = j.at("pretrain");
    c.pretrain.steps = p.at("steps").get<std::size_t>();
    c.pretrain.batch = p.at("batch").get<std::size_t>();
    c.pretrain.learning_rate = p.at("learning_rate").get<double>();
    c.pretrain.resume = p.at("resume").get<bool>();
    const auto& sc = j.at("scorer");
    c.scorer.latent = sc.at("latent").get<std::size_t>();
    c.scorer.blocks = sc.at("blocks").get<std::size_t>();
    c.scorer.steps = sc.at("steps").get<std::size_t>();
    c.scorer.negatives = sc.at("negatives").get<std::size_t>();
    c.scorer.temperature = sc.at("temperature").get<double>();
    c.scorer.learning_rate = sc.at("learning_rate").get<double>();
    const auto& r = j.at("rewards");
    c.rewards.vis = r.at("vis").get<double>();
    c.rewards.rot = r.at("rot").get<double>();
    c.rewards.pos = r.at("pos").get<double>();
    c.rewards.pos_aligned = r.at("pos_aligned").get<double>();
    c.rewards.vel = r.at("vel").get<double>();
    const auto& g = j.at("grpo");
    c.grpo.group_size = g.at("group_size").get<std::size_t>();
    c.grpo.steps = g.at("steps").get<std::size_t>();
    c.grpo.eta = g.at("eta").get<double>();
    c.grpo.clip_epsilon = g.at("clip_epsilon").get<double>();
    c.grpo.clip = g.at("clip").get<bool>();
    c.grpo.std_guard = g.at("std_guard").get<double>();
    c.grpo.aggregation = parse_aggregation(g.at("aggregation").get<std::string>());
    c.grpo.perlin_lambda = g.at("lambda").get<double>();
    c.grpo.perlin_frequency = g.at("frequency").get<double>();
    c.grpo.learning_rate = g.at("learning_rate").get<double>();
    c.grpo.iterations = g.at("iterations").get<std::size_t>();
    c.grpo.inner_epochs = g.at("inner_epochs").get<std::size_t>();
    c.grpo.batch_size = g.at("batch_size").get<std::size_t>();
    const auto& e = j.at("eval");
    c.eval.split = e.at("split").get<std::string>();
    c.eval.checkpoint = e.at("checkpoint").get<std::string>();
    c.eval.eta = e.at("eta").get<double>();
    c.eval.steps = e.at("steps").get<std::size_t>();
    c.eval.contact_threshold = e.at("contact_threshold").get<double>();
    c.eval.rotation_mode = e.at("rotation_mode").get<std::string>();
    c.eval.oracle = e.at("oracle").get<bool>();
    const auto& st = j.at("study");
    c.study.lambdas = st.at("lambdas").get<std::vector<double>>();
    c.study.groups = st.at("groups").get<std::size_t>();
    c.study.seeds = st.at("seeds").get<std::size_t>();
    const auto& pa = j.at("paths");
    c.paths.dataset = pa.at("dataset").get<std::string>();
    c.paths.denoiser = pa.at("denoiser").get<std::string>();
    c.paths.scorer = pa.at("scorer").get<std::string>();
    c.paths.policy = pa.at("policy").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.threads = std::max<std::size_t>(1, c.threads);
  c.grpo.threads = c.threads;
  return c;
}

/// Overlays `patch` on `base`; every key in `patch` must already exist in `base`.
inline void merge_known(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw ConfigError("config: expected an object at '" + prefix + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

/// KEY=VALUE with a dotted key. VALUE is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("--set: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("--set: '" + key + "' names a section, not a value");
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (node->is_string() && !value.is_string()) value = raw;
  *node = value;
}

inline ExperimentConfig load_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                                    std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j = config_to_json(ExperimentConfig{});
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config '" + *path + "'");
    nlohmann::json file = nlohmann::json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config '" + *path + "' is not valid JSON");
    merge_known(j, file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  ExperimentConfig c = config_from_json(j);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Hashing and provenance
// ---------------------------------------------------------------------------

inline std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(detail::fnv1a(text)));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return hash_hex(config_to_json(c).dump()); }

/// Hashes of the settings each artifact depends on, chained through its inputs.
struct Lineage {
  std::string data, denoiser_arch, denoiser, scorer, policy;
};

inline Lineage lineage(const ExperimentConfig& c) {
  const auto j = config_to_json(c);
  Lineage l;
  l.data = hash_hex(nlohmann::json{{"seed", c.seed}, {"data", j["data"]}}.dump());
  nlohmann::json arch{{"up", l.data},
                      {"schedule", j["schedule"]},
                      {"denoiser", j["denoiser"]},
                      {"batch", c.pretrain.batch},
                      {"lr", c.pretrain.learning_rate}};
  l.denoiser_arch = hash_hex(arch.dump());
  l.denoiser = hash_hex(nlohmann::json{{"up", l.denoiser_arch}, {"steps", c.pretrain.steps}}.dump());
  l.scorer = hash_hex(nlohmann::json{{"up", l.denoiser}, {"scorer", j["scorer"]},
                                     {"sampler", {j["grpo"]["steps"], j["grpo"]["eta"]}}}.dump());
  nlohmann::json grpo = j["grpo"];
  l.policy = hash_hex(nlohmann::json{{"up", l.scorer}, {"rewards", j["rewards"]}, {"grpo", grpo}}.dump());
  return l;
}

struct ArtifactMeta {
  std::string stage;
  std::string lineage;
  std::string resume_key;
  std::size_t steps = 0;
};

inline std::string meta_path(const std::string& artifact) { return artifact + ".meta.json"; }

inline void write_meta(const std::string& artifact, const ArtifactMeta& m) {
  std::ofstream out(meta_path(artifact), std::ios::trunc);
  out << nlohmann::json{{"stage", m.stage}, {"lineage", m.lineage}, {"resume_key", m.resume_key}, {"steps", m.steps}}
             .dump(2)
      << '\n';
  if (!out) throw std::runtime_error("failed writing '" + meta_path(artifact) + "'");
}

inline ArtifactMeta read_meta(const std::string& artifact) {
  std::ifstream in(meta_path(artifact));
  if (!in) throw std::runtime_error("missing provenance file '" + meta_path(artifact) + "'");
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("provenance file '" + meta_path(artifact) + "' is not valid JSON");
  return {j.value("stage", ""), j.value("lineage", ""), j.value("resume_key", ""), j.value("steps", std::size_t{0})};
}

/// Refuses artifacts produced under a different configuration.
inline void require_lineage(const std::string& artifact, const std::string& expected) {
  const ArtifactMeta m = read_meta(artifact);
  if (m.lineage != expected) {
    throw ConfigError("'" + artifact + "' was produced under a different configuration (lineage " + m.lineage +
                      ", expected " + expected + "); rerun the producing stage");
  }
}

// ---------------------------------------------------------------------------
// Run context
// ---------------------------------------------------------------------------

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;

  std::string artifact(const std::string& configured, const char* fallback) const {
    return configured.empty() ? (out / fallback).string() : configured;
  }
  std::string dataset_path() const { return artifact(config.paths.dataset, "dataset.jsonl"); }
  std::string denoiser_path() const { return artifact(config.paths.denoiser, "denoiser.mgrp"); }
  std::string scorer_path() const { return artifact(config.paths.scorer, "scorer.mgrp"); }
  std::string policy_path() const { return artifact(config.paths.policy, "policy.mgrp"); }
  Rng rng(const char* stage) const { return Rng(config.seed).child(stage); }
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  out << s;
  if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

/// Writes config_<command>.json and manifest_<command>.json into the output directory.
inline void write_manifest(const RunContext& ctx, const std::string& command, double wall_seconds,
                           const std::vector<std::string>& outputs) {
  write_text(ctx.out / ("config_" + command + ".json"), config_to_json(ctx.config).dump(2) + "\n");
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = config_hash(ctx.config);
  m["seed"] = ctx.config.seed;
  m["versions"] = {{"motiongrpo", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"compiler", __VERSION__}};
  m["wall_time_seconds"] = wall_seconds;
  m["outputs"] = outputs;
  write_text(ctx.out / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared stage helpers
// ---------------------------------------------------------------------------

inline NoiseSchedule schedule_of(const ExperimentConfig& c) {
  return build_schedule(c.schedule.steps, c.schedule.beta_min, c.schedule.beta_max);
}

inline Dataset load_checked_dataset(const RunContext& ctx) {
  const std::string path = ctx.dataset_path();
  require_lineage(path, lineage(ctx.config).data);
  Dataset ds = load_dataset(path);
  for (const auto& r : ds.records) {
    if (r.motion.frames() != ctx.config.data.frames || r.motion.joints != Skeleton::desk().joint_count()) {
      throw ConfigError("dataset shape does not match data.frames or the desk skeleton");
    }
  }
  return ds;
}

inline Denoiser load_denoiser(const std::string& path, const std::string& expected_lineage) {
  require_lineage(path, expected_lineage);
  return Denoiser::from_checkpoint(read_checkpoint(path));
}

inline TrainingBatch make_batch(std::span<const Record* const> pool, std::size_t batch, Rng& rng) {
  const Record& first = *pool.front();
  const auto dim = static_cast<Eigen::Index>(motion_vector_dim(first.motion.frames(), first.motion.joints));
  const auto cdim = static_cast<Eigen::Index>(first.motion.frames() * ConditionFeatures::kDim);
  TrainingBatch b{RowMatrix(static_cast<Eigen::Index>(batch), dim), RowMatrix(static_cast<Eigen::Index>(batch), cdim)};
  for (std::size_t i = 0; i < batch; ++i) {
    const Record& rec = *pool[rng.below(pool.size())];
    b.x0.row(static_cast<Eigen::Index>(i)) = encode_motion(rec.motion, canonical_frame(rec.head)).flat().transpose();
    b.cond.row(static_cast<Eigen::Index>(i)) = condition_row(invariant_condition(rec.head));
  }
  return b;
}

inline CheckpointData adam_checkpoint(const AdamState& opt) {
  CheckpointData ck;
  ck.dims = {static_cast<std::uint32_t>(opt.step_count())};
  for (const auto* moments : {&opt.first_moment(), &opt.second_moment()}) {
    for (const auto& t : *moments) ck.weights.insert(ck.weights.end(), t.data().begin(), t.data().end());
  }
  return ck;
}

inline void restore_adam(AdamState& opt, const CheckpointData& ck, const ParamRefs& params) {
  const std::size_t n = parameter_count(params);
  if (ck.dims.size() != 1 || ck.weights.size() != 2 * n) throw CheckpointError("optimizer state does not match model");
  Gradients m = zero_gradients(params), v = zero_gradients(params);
  std::size_t off = 0;
  for (auto* moments : {&m, &v}) {
    for (auto& t : *moments) {
      std::copy_n(ck.weights.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
      off += t.size();
    }
  }
  opt.restore(ck.dims[0], std::move(m), std::move(v));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenDataResult {
  std::string path;
  std::size_t records = 0;
};

inline GenDataResult cmd_gen_data(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Dataset ds = build_dataset(c.data.count, c.data.frames, c.data.fps, c.seed, c.data.fractions);
  GenDataResult r{ctx.dataset_path(), ds.records.size()};
  save_dataset(ds, r.path);
  write_meta(r.path, {"gen-data", lineage(c).data, "", ds.records.size()});
  return r;
}

struct PretrainResult {
  std::string checkpoint;
  std::vector<double> losses;  // this invocation only
  std::size_t first_step = 0;
};

inline constexpr const char* kLossCsvHeader = "step,loss";

inline PretrainResult cmd_pretrain(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Lineage lin = lineage(c);
  const Dataset ds = load_checked_dataset(ctx);
  const auto pool = ds.split(Split::kTrain);
  if (pool.empty()) throw ConfigError("pretrain: dataset has no training records");
  const NoiseSchedule sched = schedule_of(c);
  PretrainResult r{ctx.denoiser_path(), {}, 0};
  const std::string adam_path = r.checkpoint + ".adam";

  Denoiser den;
  AdamState opt(AdamConfig{c.pretrain.learning_rate});
  const std::filesystem::path csv_path = ctx.out / "pretrain_loss.csv";
  std::string csv;
  if (c.pretrain.resume) {
    const ArtifactMeta meta = read_meta(r.checkpoint);
    if (meta.resume_key != lin.denoiser_arch) {
      throw ConfigError("pretrain: refusing to resume '" + r.checkpoint + "' trained under a different configuration");
    }
    if (meta.steps > c.pretrain.steps) throw ConfigError("pretrain: checkpoint is already past pretrain.steps");
    den = Denoiser::from_checkpoint(read_checkpoint(r.checkpoint));
    restore_adam(opt, read_checkpoint(adam_path), den.parameters());
    r.first_step = meta.steps;
    std::ifstream prev(csv_path, std::ios::binary);
    std::ostringstream ss;
    ss << prev.rdbuf();
    csv = ss.str();
  } else {
    Rng init = ctx.rng("denoiser-init");
    den = Denoiser(c.data.frames, Skeleton::desk().joint_count(), c.hidden, &init);
    csv = std::string(kLossCsvHeader) + "\n";
  }
  const Rng rng = ctx.rng("pretrain");
  for (std::size_t step = r.first_step; step < c.pretrain.steps; ++step) {
    Rng sr = rng.child(step);
    const TrainingBatch batch = make_batch(pool, c.pretrain.batch, sr);
    const double loss = pretrain_step(den, batch, sched, sr, opt);
    r.losses.push_back(loss);
    csv += std::to_string(step) + "," + csv_number(loss) + "\n";
  }
  write_checkpoint(r.checkpoint, den.to_checkpoint());
  write_checkpoint(adam_path, adam_checkpoint(opt));
  write_meta(r.checkpoint, {"pretrain", lin.denoiser, lin.denoiser_arch, c.pretrain.steps});
  write_text(csv_path, csv);
  return r;
}

struct TrainScorerResult {
  std::string checkpoint;
  std::vector<double> losses;
};

inline SamplerConfig rollout_sampler(const ExperimentConfig& c) { return {c.grpo.steps, c.grpo.eta, false, false}; }

inline TrainScorerResult cmd_train_scorer(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Lineage lin = lineage(c);
  const Dataset ds = load_checked_dataset(ctx);
  const Denoiser den = load_denoiser(ctx.denoiser_path(), lin.denoiser);
  const NoiseSchedule sched = schedule_of(c);
  Rng init = ctx.rng("scorer-init");
  PerceptualScorer scorer(c.data.frames, Skeleton::desk().joint_count(), c.scorer.latent, c.scorer.blocks, &init);
  AdamState opt(AdamConfig{c.scorer.learning_rate});
  TrainScorerResult r{ctx.scorer_path(), {}};
  r.losses = train_scorer(scorer, ds, den, Skeleton::desk(), sched, rollout_sampler(c),
                          {c.scorer.steps, c.scorer.negatives, c.scorer.temperature}, ctx.rng("scorer"), opt);
  write_checkpoint(r.checkpoint, scorer.to_checkpoint());
  write_meta(r.checkpoint, {"train-scorer", lin.scorer, "", c.scorer.steps});
  std::string csv = std::string(kLossCsvHeader) + "\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) csv += std::to_string(i) + "," + csv_number(r.losses[i]) + "\n";
  write_text(ctx.out / "scorer_loss.csv", csv);
  return r;
}

inline PerceptualScorer load_scorer(const RunContext& ctx) {
  require_lineage(ctx.scorer_path(), lineage(ctx.config).scorer);
  return PerceptualScorer::from_checkpoint(read_checkpoint(ctx.scorer_path()));
}

struct GrpoResult {
  std::string checkpoint;
  std::vector<IterationLog> logs;
};

inline std::string iteration_csv(std::span<const IterationLog> logs) {
  std::string csv = std::string(kIterationCsvHeader) + "\n";
  for (const auto& l : logs) {
    csv += std::to_string(l.iteration) + "," + csv_number(l.mean_total_reward) + "," +
           csv_number(l.mean_visual_reward) + "," + csv_number(l.mean_joint_reward) + "," + csv_number(l.diversity) +
           "," + csv_number(l.grad_norm) + "," + csv_number(l.clipped_fraction) + "\n";
  }
  return csv;
}

inline GrpoResult cmd_grpo(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Lineage lin = lineage(c);
  const Dataset ds = load_checked_dataset(ctx);
  Denoiser den = load_denoiser(ctx.denoiser_path(), lin.denoiser);
  const PerceptualScorer scorer = load_scorer(ctx);
  const Skeleton skel = Skeleton::desk();
  const RewardContext rctx{&scorer, &skel, c.rewards};
  AdamState opt(AdamConfig{c.grpo.learning_rate});
  GrpoResult r{ctx.policy_path(), {}};
  r.logs = train_grpo(den, rctx, ds, c.grpo, schedule_of(c), ctx.rng("grpo"), opt);
  write_checkpoint(r.checkpoint, den.to_checkpoint());
  write_meta(r.checkpoint, {"grpo", lin.policy, "", c.grpo.iterations});
  write_text(ctx.out / "grpo_iterations.csv", iteration_csv(r.logs));
  return r;
}

/// Deterministic reconstruction of every record in `records`; initial noise is keyed by
/// record index so different checkpoints see the same draws.
inline std::vector<MotionSequence> reconstruct(const Denoiser& den, std::span<const Record* const> records,
                                               const NoiseSchedule& sched, const SamplerConfig& sampler,
                                               const Rng& rng, std::size_t threads) {
  std::vector<MotionSequence> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const Record& rec = *records[i];
    Rng noise_rng = rng.child(i).child("init");
    Eigen::RowVectorXd noise(static_cast<Eigen::Index>(den.motion_dim()));
    for (Eigen::Index k = 0; k < noise.size(); ++k) noise[k] = noise_rng.normal();
    Rng step_rng = rng.child(i).child("sampler");
    const DenoiseTrajectory tr =
        sample_trajectory(den, condition_row(invariant_condition(rec.head)), sampler, sched, noise, step_rng);
    out[i] = decode_motion(std::span<const double>(tr.final_sample.data(), static_cast<std::size_t>(tr.final_sample.size())),
                           den.frames(), den.joints(), rec.motion.fps, canonical_frame(rec.head));
  });
  return out;
}

struct EvalResult {
  std::string label;
  EvalReport report;
};

inline EvalResult cmd_eval(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Lineage lin = lineage(c);
  const Dataset ds = load_checked_dataset(ctx);
  const auto records = ds.split(parse_split(c.eval.split));
  if (records.empty()) throw ConfigError("eval: split '" + c.eval.split + "' is empty");
  const Skeleton skel = Skeleton::desk();
  EvalResult r;
  std::vector<MotionSequence> preds;
  if (c.eval.oracle) {
    r.label = "oracle";
    for (const auto* rec : records) preds.push_back(rec->motion);
  } else {
    std::string path;
    if (c.eval.checkpoint == "denoiser") {
      path = ctx.denoiser_path();
      require_lineage(path, lin.denoiser);
      r.label = "denoiser";
    } else if (c.eval.checkpoint == "policy") {
      path = ctx.policy_path();
      require_lineage(path, lin.policy);
      r.label = "policy";
    } else {
      path = c.eval.checkpoint;
      r.label = std::filesystem::path(path).stem().string();
    }
    const Denoiser den = Denoiser::from_checkpoint(read_checkpoint(path));
    const SamplerConfig sampler{c.eval.steps, c.eval.eta, false, false};
    preds = reconstruct(den, records, schedule_of(c), sampler, ctx.rng("eval"), c.threads);
  }
  const RotationErrorMode mode =
      c.eval.rotation_mode == "geodesic" ? RotationErrorMode::kGeodesicDegrees : RotationErrorMode::kMatrixL1;
  std::vector<SequenceMetrics> seqs(records.size());
  parallel_for(records.size(), c.threads, [&](std::size_t i) {
    seqs[i] = evaluate_sequence(preds[i], records[i]->motion, skel, c.eval.contact_threshold, mode);
  });
  r.report = EvalReport::aggregate(std::move(seqs));
  std::ostringstream mean, per;
  r.report.write_csv(mean);
  r.report.write_per_sequence_csv(per);
  write_text(ctx.out / ("eval_" + r.label + ".csv"), mean.str());
  write_text(ctx.out / ("eval_" + r.label + "_per_sequence.csv"), per.str());
  return r;
}

inline constexpr const char* kStudyCsvHeader = "seed,lambda,mean_diversity,mean_grad_norm,guard_fraction";

struct StudyResult {
  std::vector<std::vector<DiversityRow>> per_seed;
};

inline StudyResult cmd_diversity_study(const RunContext& ctx) {
  const auto& c = ctx.config;
  const Lineage lin = lineage(c);
  const Dataset ds = load_checked_dataset(ctx);
  Denoiser den = load_denoiser(ctx.denoiser_path(), lin.denoiser);
  const PerceptualScorer scorer = load_scorer(ctx);
  const Skeleton skel = Skeleton::desk();
  const RewardContext rctx{&scorer, &skel, c.rewards};
  StudyResult r;
  std::string csv = std::string(kStudyCsvHeader) + "\n";
  const Rng rng = ctx.rng("study");
  for (std::size_t s = 0; s < c.study.seeds; ++s) {
    r.per_seed.push_back(diversity_study(den, rctx, ds, c.grpo, schedule_of(c), c.study.lambdas, c.study.groups, rng.child(s)));
    for (const auto& row : r.per_seed.back()) {
      csv += std::to_string(s) + "," + csv_number(row.lambda) + "," + csv_number(row.mean_diversity) + "," +
             csv_number(row.mean_grad_norm) + "," + csv_number(row.guard_fraction) + "\n";
    }
  }
  write_text(ctx.out / "diversity_study.csv", csv);
  return r;
}

}  // namespace mgrpo
