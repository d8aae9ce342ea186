#pragma once

#include "motiongrpo/adam.hpp"
#include "motiongrpo/diffusion.hpp"
#include "motiongrpo/metrics.hpp"
#include "motiongrpo/parallel.hpp"
#include "motiongrpo/rewards.hpp"
#include "motiongrpo/scorer.hpp"
#include "motiongrpo/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

enum class AdvantageAggregation { kSum, kMean };

inline AdvantageAggregation parse_aggregation(const std::string& s) {
  if (s == "sum") return AdvantageAggregation::kSum;
  if (s == "mean") return AdvantageAggregation::kMean;
  throw std::invalid_argument("unknown advantage aggregation '" + s + "' (expected sum or mean)");
}

inline const char* aggregation_name(AdvantageAggregation a) { return a == AdvantageAggregation::kSum ? "sum" : "mean"; }

struct GrpoConfig {
  std::size_t group_size = 16;
  std::size_t steps = 16;
  double eta = 0.7;
  double clip_epsilon = 0.2;
  bool clip = true;
  double std_guard = 1e-4;
  AdvantageAggregation aggregation = AdvantageAggregation::kSum;
  double perlin_lambda = 0.1;
  double perlin_frequency = 0.1;
  double learning_rate = 3e-6;
  std::size_t iterations = 100;
  std::size_t inner_epochs = 1;
  std::size_t batch_size = 8;  // head trajectories (groups) per iteration
  std::size_t threads = 1;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("grpo: group_size must be >= 2");
    if (steps < 1) throw std::invalid_argument("grpo: steps must be >= 1");
    if (!(perlin_lambda >= 0.0)) throw std::invalid_argument("grpo: perlin_lambda must be >= 0");
    if (!(perlin_frequency > 0.0)) throw std::invalid_argument("grpo: perlin_frequency must be > 0");
    if (!(clip_epsilon >= 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("grpo: clip_epsilon must be in [0, 1)");
    if (!(std_guard >= 0.0)) throw std::invalid_argument("grpo: std_guard must be >= 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("grpo: learning_rate must be >= 0");
    if (inner_epochs < 1) throw std::invalid_argument("grpo: inner_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("grpo: batch_size must be >= 1");
  }

  SamplerConfig sampler() const { return {steps, eta, true, false}; }
};

// ---------------------------------------------------------------------------
// Perlin condition perturbation
// ---------------------------------------------------------------------------

inline double perlin_fade(double f) { return f * f * f * (f * (f * 6.0 - 15.0) + 10.0); }

/// One lattice cell: gradients g0 at the left corner, g1 at the right, f in [0, 1].
inline double perlin_cell(double g0, double g1, double f) {
  const double a = g0 * f;
  const double b = g1 * (f - 1.0);
  return a + perlin_fade(f) * (b - a);
}

/// Three independent 1-D gradient-noise channels. Lattice gradients are hashed from
/// (seed, axis, cell) so the lattice is unbounded and needs no storage.
struct PerlinNoise1D {
  std::uint64_t seed = 0;
  double frequency = 0.1;  // lattice cells per frame

  double gradient(std::size_t axis, std::int64_t cell) const {
    Rng r = Rng(seed).child(axis).child(static_cast<std::uint64_t>(cell));
    return r.uniform(-1.0, 1.0);
  }

  /// x is in lattice units.
  double sample(std::size_t axis, double x) const {
    const double cell = std::floor(x);
    const auto i = static_cast<std::int64_t>(cell);
    return perlin_cell(gradient(axis, i), gradient(axis, i + 1), x - cell);
  }
};

inline Vec3 perlin_sample(const PerlinNoise1D& noise, double x) {
  return {noise.sample(0, x), noise.sample(1, x), noise.sample(2, x)};
}

/// Rotations untouched; translation at frame t moves by lambda * P(t * frequency).
inline HeadTrajectory perturb_condition(const HeadTrajectory& h, double lambda, const PerlinNoise1D& noise) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("perturb_condition: lambda must be >= 0");
  HeadTrajectory out = h;
  if (lambda == 0.0) return out;
  for (std::size_t t = 0; t < out.pose.size(); ++t) {
    out.pose[t].translation += lambda * perlin_sample(noise, static_cast<double>(t) * noise.frequency);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

struct Advantages {
  RowMatrix per_component;           // G x K
  std::vector<double> aggregated;    // G
  std::vector<bool> guarded;         // K, true where std fell below the guard
};

/// rewards is G x K. Population std; components under the guard get zero advantage.
inline Advantages compute_advantages(const RowMatrix& rewards, double std_guard, AdvantageAggregation agg) {
  const auto g = rewards.rows();
  const auto k = rewards.cols();
  if (g < 2) throw std::invalid_argument("compute_advantages: need at least two group members");
  Advantages a;
  a.per_component = RowMatrix::Zero(g, k);
  a.guarded.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double mean = rewards.col(c).mean();
    const double var = (rewards.col(c).array() - mean).square().sum() / static_cast<double>(g);
    const double sd = std::sqrt(var);
    if (!(sd >= std_guard) || sd == 0.0) {
      a.guarded[c] = true;
      continue;
    }
    a.per_component.col(c) = (rewards.col(c).array() - mean) / sd;
  }
  a.aggregated.resize(static_cast<std::size_t>(g));
  for (Eigen::Index i = 0; i < g; ++i) {
    double s = a.per_component.row(i).sum();
    if (agg == AdvantageAggregation::kMean) s /= static_cast<double>(k);
    a.aggregated[i] = s;
  }
  return a;
}

inline Advantages compute_advantages(const RowMatrix& rewards, const GrpoConfig& cfg) {
  return compute_advantages(rewards, cfg.std_guard, cfg.aggregation);
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct GroupRollout {
  RowMatrix cond;  // 1 x cond_dim, after perturbation
  Eigen::RowVectorXd init_noise;
  std::vector<DenoiseTrajectory> trajectories;
  std::vector<RewardBreakdown> rewards;
  Advantages advantages;
  double diversity = 0.0;

  RowMatrix reward_matrix() const {
    RowMatrix r(static_cast<Eigen::Index>(rewards.size()), static_cast<Eigen::Index>(RewardBreakdown::kComponents));
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      const auto c = rewards[i].components();
      for (std::size_t k = 0; k < c.size(); ++k) r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[k];
    }
    return r;
  }
};

/// Everything rollout_group needs that stays fixed for a run.
struct RewardContext {
  const PerceptualScorer* scorer = nullptr;
  const Skeleton* skel = nullptr;
  RewardWeights weights;
};

inline RewardBreakdown score_sample(const Eigen::RowVectorXd& sample, const MotionSequence& gt,
                                    const HeadTrajectory& head, const RewardContext& ctx, std::size_t frames,
                                    std::size_t joints) {
  const MotionSequence pred = decode_motion(std::span<const double>(sample.data(), static_cast<std::size_t>(sample.size())),
                                            frames, joints, gt.fps, canonical_frame(head));
  const double s = ctx.scorer->score(skeleton_features(*ctx.skel, pred), head);
  return combine_rewards(s, joint_rewards(pred, gt, *ctx.skel, ctx.weights), ctx.weights);
}

/// One shared initial noise, one Perlin-perturbed condition, G independently sampled
/// trajectories. Rewards use the unperturbed head and the ground-truth motion.
inline GroupRollout rollout_group(const Denoiser& denoiser, const HeadTrajectory& head, const MotionSequence& gt,
                                  const RewardContext& ctx, const GrpoConfig& cfg, const SamplerConfig& sampler,
                                  const NoiseSchedule& sched, const Rng& rng) {
  if (!ctx.scorer || !ctx.skel) throw std::invalid_argument("rollout_group: reward context is incomplete");
  GroupRollout out;
  const PerlinNoise1D noise{rng.child("perlin").key(), cfg.perlin_frequency};
  out.cond = condition_row(invariant_condition(perturb_condition(head, cfg.perlin_lambda, noise)));
  Rng init_rng = rng.child("init");
  out.init_noise.resize(static_cast<Eigen::Index>(denoiser.motion_dim()));
  for (Eigen::Index c = 0; c < out.init_noise.size(); ++c) out.init_noise[c] = init_rng.normal();
  std::vector<Rng> members;
  members.reserve(cfg.group_size);
  for (std::size_t i = 0; i < cfg.group_size; ++i) members.push_back(rng.child("member").child(i));
  out.trajectories = sample_group(denoiser, out.cond, sampler, sched, RowMatrix(out.init_noise), members);

  out.rewards.resize(cfg.group_size);
  parallel_for(cfg.group_size, cfg.threads, [&](std::size_t i) {
    out.rewards[i] = score_sample(out.trajectories[i].final_sample, gt, head, ctx, denoiser.frames(), denoiser.joints());
  });
  out.advantages = compute_advantages(out.reward_matrix(), cfg);
  std::vector<Eigen::RowVectorXd> finals;
  finals.reserve(cfg.group_size);
  for (const auto& t : out.trajectories) finals.push_back(t.final_sample);
  out.diversity = diversity(finals);
  return out;
}

// ---------------------------------------------------------------------------
// Clipped policy-ratio objective
// ---------------------------------------------------------------------------

struct SurrogateTerm {
  double value = 0.0;
  bool clipped = false;  // gradient blocked by the clip
};

inline SurrogateTerm clipped_surrogate(double ratio, double advantage, double epsilon, bool clip = true) {
  const double unclipped = ratio * advantage;
  if (!clip) return {unclipped, false};
  const double bounded = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage;
  if (bounded < unclipped) return {bounded, true};
  return {unclipped, false};
}

struct GrpoGradient {
  double objective = 0.0;
  Gradients grads;  // of the objective (ascent direction)
  double clipped_fraction = 0.0;
  std::size_t skipped = 0;  // non-finite ratios
};

/// Objective and its gradient over every step of every trajectory in the batch:
/// J = mean over groups, members and steps of min(rho A, clip(rho) A).
inline GrpoGradient grpo_gradient(Denoiser& denoiser, std::span<const GroupRollout> batch, const GrpoConfig& cfg,
                                  const SamplerConfig& sampler, const NoiseSchedule& sched) {
  GrpoGradient out;
  out.grads = zero_gradients(denoiser.parameters());
  std::size_t terms = 0;
  for (const auto& r : batch) terms += r.trajectories.size() * sampler.steps;
  if (terms == 0) return out;
  const double inv_terms = 1.0 / static_cast<double>(terms);
  std::size_t clipped = 0;
  for (const auto& rollout : batch) {
    if (rollout.advantages.aggregated.size() != rollout.trajectories.size()) {
      throw DimensionError("grpo: advantages and trajectories differ in count");
    }
    std::vector<const DenoiseTrajectory*> ptrs;
    for (const auto& t : rollout.trajectories) ptrs.push_back(&t);
    const ReplayPass pass = replay_forward(denoiser, ptrs, rollout.cond, sampler, sched);
    RowMatrix dx0 = RowMatrix::Zero(pass.means.rows(), pass.means.cols());
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < rollout.trajectories.size(); ++i) {
      const double adv = rollout.advantages.aggregated[i];
      for (const auto& step : rollout.trajectories[i].steps) {
        const double ratio = std::exp(pass.log_prob[row] - step.log_prob);
        if (!std::isfinite(ratio)) {
          ++out.skipped;
          ++row;
          continue;
        }
        const SurrogateTerm term = clipped_surrogate(ratio, adv, cfg.clip_epsilon, cfg.clip);
        out.objective += term.value * inv_terms;
        const Transition& tr = pass.transitions[row];
        if (term.clipped) {
          ++clipped;
        } else if (adv != 0.0 && tr.std > 0.0) {
          // d(rho A)/d x0_hat = rho A * x0_coef * (a - mu) / std^2
          const double scale = ratio * adv * inv_terms * tr.x0_coef / (tr.std * tr.std);
          dx0.row(row) = scale * (pass.actions.row(row) - pass.means.row(row));
        }
        ++row;
      }
    }
    denoiser.net().backward_tape(pass.tape, dx0, out.grads);
  }
  out.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(terms);
  return out;
}

struct GrpoUpdate {
  double objective = 0.0;
  double grad_norm = 0.0;  // first inner epoch, before the step
  double clipped_fraction = 0.0;
  std::size_t skipped = 0;
};

/// Inner epochs of Adam ascent on the batch. The stored log-probabilities play pi_old.
inline GrpoUpdate grpo_update(Denoiser& denoiser, std::span<const GroupRollout> batch, const GrpoConfig& cfg,
                              const SamplerConfig& sampler, const NoiseSchedule& sched, AdamState& opt) {
  GrpoUpdate result;
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    GrpoGradient g = grpo_gradient(denoiser, batch, cfg, sampler, sched);
    if (epoch == 0) {
      result.objective = g.objective;
      result.grad_norm = gradient_norm(g.grads);
      result.clipped_fraction = g.clipped_fraction;
    }
    result.skipped += g.skipped;
    for (auto& t : g.grads) t.flat() *= -1.0;
    opt.step(denoiser.parameters(), g.grads);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct IterationLog {
  std::size_t iteration = 0;
  double mean_total_reward = 0.0;
  double mean_visual_reward = 0.0;
  double mean_joint_reward = 0.0;
  double diversity = 0.0;
  double grad_norm = 0.0;
  double clipped_fraction = 0.0;
  double guard_fraction = 0.0;  // share of (group, component) pairs with zero advantage
};

inline constexpr const char* kIterationCsvHeader =
    "iteration,mean_total_reward,mean_visual_reward,mean_joint_reward,diversity,grad_norm,clipped_fraction";

inline void write_iteration_row(std::ostream& os, const IterationLog& l) {
  os << l.iteration << ',' << l.mean_total_reward << ',' << l.mean_visual_reward << ',' << l.mean_joint_reward << ','
     << l.diversity << ',' << l.grad_norm << ',' << l.clipped_fraction << '\n';
}

/// Rolls out one batch of groups from records chosen by `rng`.
inline std::vector<GroupRollout> rollout_batch(const Denoiser& denoiser, std::span<const Record* const> pool,
                                               const RewardContext& ctx, const GrpoConfig& cfg,
                                               const NoiseSchedule& sched, const Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("grpo: no training records");
  std::vector<GroupRollout> batch(cfg.batch_size);
  Rng pick = rng.child("batch");
  std::vector<const Record*> chosen;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) chosen.push_back(pool[pick.below(pool.size())]);
  const SamplerConfig sampler = cfg.sampler();
  GrpoConfig inner = cfg;
  inner.threads = 1;
  parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t b) {
    batch[b] = rollout_group(denoiser, chosen[b]->head, chosen[b]->motion, ctx, inner, sampler, sched,
                             rng.child("group").child(b));
  });
  return batch;
}

inline IterationLog summarize(std::size_t iteration, std::span<const GroupRollout> batch, const GrpoUpdate& upd) {
  IterationLog log;
  log.iteration = iteration;
  std::size_t samples = 0, guarded = 0, components = 0;
  for (const auto& r : batch) {
    for (const auto& rb : r.rewards) {
      log.mean_total_reward += rb.total;
      log.mean_visual_reward += rb.vis;
      log.mean_joint_reward += rb.joint();
      ++samples;
    }
    log.diversity += r.diversity;
    for (bool g : r.advantages.guarded) guarded += g ? 1 : 0;
    components += r.advantages.guarded.size();
  }
  if (samples > 0) {
    log.mean_total_reward /= static_cast<double>(samples);
    log.mean_visual_reward /= static_cast<double>(samples);
    log.mean_joint_reward /= static_cast<double>(samples);
  }
  if (!batch.empty()) log.diversity /= static_cast<double>(batch.size());
  if (components > 0) log.guard_fraction = static_cast<double>(guarded) / static_cast<double>(components);
  log.grad_norm = upd.grad_norm;
  log.clipped_fraction = upd.clipped_fraction;
  return log;
}

/// Sample heads, perturb, roll out, normalise, update; pi_old is refreshed every batch.
inline std::vector<IterationLog> train_grpo(Denoiser& denoiser, const RewardContext& ctx, const Dataset& data,
                                           const GrpoConfig& cfg, const NoiseSchedule& sched, const Rng& rng,
                                           AdamState& opt,
                                           const std::function<void(const IterationLog&)>& on_iteration = {}) {
  cfg.validate();
  std::vector<IterationLog> logs;
  if (cfg.iterations == 0) return logs;
  const auto pool = data.split(Split::kTrain);
  const SamplerConfig sampler = cfg.sampler();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto batch = rollout_batch(denoiser, pool, ctx, cfg, sched, rng.child(it));
    const GrpoUpdate upd = grpo_update(denoiser, batch, cfg, sampler, sched, opt);
    logs.push_back(summarize(it, batch, upd));
    if (on_iteration) on_iteration(logs.back());
  }
  return logs;
}

// ---------------------------------------------------------------------------
// Noise-intensity study
// ---------------------------------------------------------------------------

struct DiversityRow {
  double lambda = 0.0;
  double mean_diversity = 0.0;
  double mean_grad_norm = 0.0;
  double guard_fraction = 0.0;
};

/// Same groups, seeds and Perlin lattices for every lambda; only the intensity changes.
/// The gradient-norm column is the norm of the objective gradient at the fixed policy.
inline std::vector<DiversityRow> diversity_study(Denoiser& denoiser, const RewardContext& ctx, const Dataset& data,
                                                 GrpoConfig cfg, const NoiseSchedule& sched,
                                                 std::span<const double> lambdas, std::size_t groups, const Rng& rng) {
  const auto pool = data.split(Split::kTrain);
  if (pool.empty()) throw std::invalid_argument("diversity study: no training records");
  const SamplerConfig sampler = cfg.sampler();
  std::vector<DiversityRow> rows;
  for (double lambda : lambdas) {
    cfg.perlin_lambda = lambda;
    cfg.validate();
    DiversityRow row{lambda};
    std::size_t guarded = 0, components = 0;
    std::vector<GroupRollout> rollouts(groups);
    GrpoConfig inner = cfg;
    inner.threads = 1;
    parallel_for(groups, cfg.threads, [&](std::size_t g) {
      const Record& rec = *pool[g % pool.size()];
      rollouts[g] = rollout_group(denoiser, rec.head, rec.motion, ctx, inner, sampler, sched, rng.child("group").child(g));
    });
    for (const auto& r : rollouts) {
      row.mean_diversity += r.diversity;
      row.mean_grad_norm += gradient_norm(grpo_gradient(denoiser, std::span<const GroupRollout>(&r, 1), cfg, sampler, sched).grads);
      for (bool b : r.advantages.guarded) guarded += b ? 1 : 0;
      components += r.advantages.guarded.size();
    }
    if (groups > 0) {
      row.mean_diversity /= static_cast<double>(groups);
      row.mean_grad_norm /= static_cast<double>(groups);
      row.guard_fraction = static_cast<double>(guarded) / static_cast<double>(components);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mgrpo
