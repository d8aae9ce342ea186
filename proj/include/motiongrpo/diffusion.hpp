#pragma once

#include "motiongrpo/adam.hpp"
#include "motiongrpo/checkpoint.hpp"
#include "motiongrpo/kinematics.hpp"
#include "motiongrpo/mlp.hpp"
#include "motiongrpo/rng.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

// ---------------------------------------------------------------------------
// Noise schedule and forward corruption
// ---------------------------------------------------------------------------

/// Linear variance schedule. Vectors are indexed by t-1 for t in [1, steps].
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_std;  // DDPM ancestral std for t -> t-1

  std::size_t steps() const noexcept { return beta.size(); }
  /// alpha_bar(0) is the clean-data level 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
};

inline NoiseSchedule build_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps == 0) throw std::invalid_argument("schedule: steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  s.posterior_std.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = beta_min + frac * (beta_max - beta_min);
    const double prev = prod;
    prod *= 1.0 - s.beta[i];
    s.alpha_bar[i] = prod;
    s.posterior_std[i] = std::sqrt((1.0 - prev) / (1.0 - prod) * s.beta[i]);
  }
  return s;
}

inline Tensor forward_diffuse(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) {
    throw std::out_of_range("forward_diffuse: t=" + std::to_string(t) + " outside [1, " +
                            std::to_string(sched.steps()) + "]");
  }
  if (x0.shape() != eps.shape()) throw DimensionError("forward_diffuse: noise shape differs from x0");
  const double ab = sched.alpha_bar_at(t);
  Tensor xt(x0.shape());
  xt.flat() = std::sqrt(ab) * x0.flat() + std::sqrt(1.0 - ab) * eps.flat();
  return xt;
}

// ---------------------------------------------------------------------------
// Motion <-> flat vector
// ---------------------------------------------------------------------------

/// Per frame: root quaternion (w,x,y,z), root translation, then one quaternion per joint.
inline std::size_t motion_vector_dim(std::size_t frames, std::size_t joints) { return frames * (4 * joints + 7); }

/// Flattens `m` after expressing its root track in `frame` coordinates.
inline Tensor encode_motion(const MotionSequence& m, const SE3& frame = {}) {
  const std::size_t per_frame = 4 * m.joints + 7;
  Tensor v({1, motion_vector_dim(m.frames(), m.joints)});
  const SE3 to_local = frame.inverse();
  for (std::size_t t = 0; t < m.frames(); ++t) {
    double* row = &v[t * per_frame];
    const SE3 r = to_local * m.root[t];
    row[0] = r.rotation.w();
    row[1] = r.rotation.x();
    row[2] = r.rotation.y();
    row[3] = r.rotation.z();
    row[4] = r.translation.x();
    row[5] = r.translation.y();
    row[6] = r.translation.z();
    for (std::size_t j = 0; j < m.joints; ++j) {
      const Quat& q = m.local(t, j);
      row[7 + 4 * j] = q.w();
      row[8 + 4 * j] = q.x();
      row[9 + 4 * j] = q.y();
      row[10 + 4 * j] = q.z();
    }
  }
  return v;
}

namespace detail {
inline Quat quat_from(const double* p) {
  Quat q(p[0], p[1], p[2], p[3]);
  if (!(q.norm() > 1e-12) || !std::isfinite(q.norm())) return Quat::Identity();
  return canonical(q);
}
}  // namespace detail

/// Inverse of encode_motion; quaternions are renormalised here and only here.
inline MotionSequence decode_motion(std::span<const double> v, std::size_t frames, std::size_t joints, double fps,
                                    const SE3& frame = {}) {
  const std::size_t per_frame = 4 * joints + 7;
  if (v.size() != frames * per_frame) {
    throw DimensionError("decode_motion: vector length " + std::to_string(v.size()) + " does not match " +
                         std::to_string(frames) + " frames x " + std::to_string(joints) + " joints");
  }
  MotionSequence m(frames, joints, fps);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = v.data() + t * per_frame;
    const SE3 local{detail::quat_from(row), Vec3(row[4], row[5], row[6])};
    m.root[t] = frame * local;
    for (std::size_t j = 0; j < joints; ++j) m.local(t, j) = detail::quat_from(row + 7 + 4 * j);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

inline constexpr std::size_t kTimeEmbeddingDim = 16;

inline void timestep_embedding(double t, std::span<double> out) {
  const std::size_t half = out.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(1000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
}

/// Predicts the clean motion vector from [x_t | time embedding | condition features].
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(std::size_t frames, std::size_t joints, const std::vector<std::size_t>& hidden, Rng* init = nullptr)
      : frames_(frames), joints_(joints) {
    std::vector<std::size_t> dims{input_dim()};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(motion_dim());
    net_ = init ? Mlp::random(dims, *init, 0.1) : Mlp(dims);
  }

  /// Rebuilds from checkpoint layer widths.
  static Denoiser from_checkpoint(const CheckpointData& ck) {
    if (ck.dims.size() < 2) throw CheckpointError("denoiser checkpoint needs at least two layer widths");
    const std::size_t in = ck.dims.front(), out = ck.dims.back();
    // in = out + 16 + 9 * frames, out = frames * (4 * joints + 7)
    if (in <= out + kTimeEmbeddingDim || (in - out - kTimeEmbeddingDim) % ConditionFeatures::kDim != 0) {
      throw CheckpointError("checkpoint widths do not describe a denoiser");
    }
    const std::size_t frames = (in - out - kTimeEmbeddingDim) / ConditionFeatures::kDim;
    if (frames == 0 || out % frames != 0 || (out / frames) < 7 || (out / frames - 7) % 4 != 0) {
      throw CheckpointError("checkpoint widths do not describe a denoiser");
    }
    const std::size_t joints = (out / frames - 7) / 4;
    std::vector<std::size_t> hidden(ck.dims.begin() + 1, ck.dims.end() - 1);
    Denoiser d(frames, joints, hidden);
    assign_parameters(d.net_.parameters(), ck.weights);
    return d;
  }

  CheckpointData to_checkpoint() {
    CheckpointData ck;
    for (auto w : net_.dims()) ck.dims.push_back(static_cast<std::uint32_t>(w));
    ck.weights = flatten_parameters(net_.parameters());
    return ck;
  }

  std::size_t frames() const noexcept { return frames_; }
  std::size_t joints() const noexcept { return joints_; }
  std::size_t motion_dim() const noexcept { return motion_vector_dim(frames_, joints_); }
  std::size_t cond_dim() const noexcept { return frames_ * ConditionFeatures::kDim; }
  std::size_t input_dim() const noexcept { return motion_dim() + kTimeEmbeddingDim + cond_dim(); }

  Mlp& net() noexcept { return net_; }
  const Mlp& net() const noexcept { return net_; }
  ParamRefs parameters() { return net_.parameters(); }

  /// `t` holds one timestep per row; `cond` has one row (broadcast) or one per row.
  RowMatrix build_input(const RowMatrix& x_t, std::span<const std::size_t> t, const RowMatrix& cond) const {
    const auto rows = x_t.rows();
    if (static_cast<std::size_t>(x_t.cols()) != motion_dim()) {
      throw DimensionError("denoiser: state width " + std::to_string(x_t.cols()) + ", expected " +
                           std::to_string(motion_dim()));
    }
    if (static_cast<std::size_t>(cond.cols()) != cond_dim() || (cond.rows() != 1 && cond.rows() != rows)) {
      throw DimensionError("denoiser: condition shape does not match");
    }
    if (t.size() != static_cast<std::size_t>(rows)) throw DimensionError("denoiser: one timestep per row required");
    RowMatrix in(rows, static_cast<Eigen::Index>(input_dim()));
    const auto md = static_cast<Eigen::Index>(motion_dim());
    in.leftCols(md) = x_t;
    for (Eigen::Index r = 0; r < rows; ++r) {
      timestep_embedding(static_cast<double>(t[r]), std::span<double>(&in(r, md), kTimeEmbeddingDim));
      in.row(r).rightCols(static_cast<Eigen::Index>(cond_dim())) = cond.row(cond.rows() == 1 ? 0 : r);
    }
    return in;
  }

  RowMatrix predict(const RowMatrix& x_t, std::span<const std::size_t> t, const RowMatrix& cond) const {
    return net_.forward(build_input(x_t, t, cond));
  }

 private:
  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  Mlp net_;
};

inline RowMatrix condition_row(const ConditionFeatures& c) {
  RowMatrix row(1, static_cast<Eigen::Index>(c.values.size()));
  row.row(0) = c.values.flat().transpose();
  return row;
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

struct TrainingBatch {
  RowMatrix x0;    // B x motion_dim
  RowMatrix cond;  // B x cond_dim
};

/// One Adam step on mean_b ||denoiser(x_t, t, c) - x0||^2 with uniform t and w_t = 1.
inline double pretrain_step(Denoiser& denoiser, const TrainingBatch& batch, const NoiseSchedule& sched, Rng& rng,
                            AdamState& opt) {
  const auto rows = batch.x0.rows();
  if (rows == 0) throw std::invalid_argument("pretrain_step: empty batch");
  std::vector<std::size_t> ts(static_cast<std::size_t>(rows));
  RowMatrix xt(rows, batch.x0.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    ts[r] = 1 + rng.below(sched.steps());
    const double ab = sched.alpha_bar_at(ts[r]);
    for (Eigen::Index c = 0; c < xt.cols(); ++c) {
      xt(r, c) = std::sqrt(ab) * batch.x0(r, c) + std::sqrt(1.0 - ab) * rng.normal();
    }
  }
  const MlpTape tape = denoiser.net().forward_tape(denoiser.build_input(xt, ts, batch.cond));
  const RowMatrix diff = tape.activations.back() - batch.x0;
  const double loss = diff.squaredNorm() / static_cast<double>(rows);
  if (!std::isfinite(loss)) throw NumericError("pretrain_step: non-finite loss, step aborted");
  Gradients grads = zero_gradients(denoiser.parameters());
  denoiser.net().backward_tape(tape, (2.0 / static_cast<double>(rows)) * diff, grads);
  opt.step(denoiser.parameters(), grads);
  return loss;
}

// ---------------------------------------------------------------------------
// DDIM-eta sampling with Gaussian transition densities
// ---------------------------------------------------------------------------

struct SamplerConfig {
  std::size_t steps = 16;
  double eta = 0.7;
  bool record_logprobs = true;
  /// Test-only: allow eta = 0 while recording; such steps report log_prob 0.
  bool allow_degenerate = false;

  void validate(const NoiseSchedule& sched) const {
    if (steps == 0 || steps > sched.steps()) {
      throw std::invalid_argument("sampler: steps must be in [1, " + std::to_string(sched.steps()) + "]");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("sampler: eta must be in [0, 1]");
    if (eta == 0.0 && record_logprobs && !allow_degenerate) {
      throw std::invalid_argument("degenerate policy density: eta = 0 cannot record log-probabilities");
    }
  }
};

/// Descending timesteps [tau_n, ..., tau_1, 0] with tau_k = round(k * T / n).
inline std::vector<std::size_t> sampling_timesteps(const SamplerConfig& cfg, const NoiseSchedule& sched) {
  std::vector<std::size_t> ts;
  ts.reserve(cfg.steps + 1);
  for (std::size_t k = cfg.steps; k >= 1; --k) {
    const double tau = std::round(static_cast<double>(k) * static_cast<double>(sched.steps()) /
                                  static_cast<double>(cfg.steps));
    ts.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(tau)));
  }
  ts.push_back(0);
  return ts;
}

/// mean = x0_coef * x0_hat + xt_coef * x_t, sample = mean + std * z.
struct Transition {
  double x0_coef = 0.0;
  double xt_coef = 0.0;
  double std = 0.0;
};

/// Ancestral std for t -> s. Landing on clean data (s = 0) the posterior collapses, so the
/// boundary step takes its variance from the first noisy level, alpha_bar(1), while the
/// mean still targets alpha_bar(0) = 1.
inline double ancestral_std(const NoiseSchedule& sched, std::size_t t, std::size_t s) {
  const double ab_t = sched.alpha_bar_at(t);
  const double ab_s = sched.alpha_bar_at(s == 0 ? 1 : s);
  if (s == 0 && t == 1) return std::sqrt(1.0 - ab_t);
  return std::sqrt(std::max(0.0, (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s)));
}

inline Transition transition(const NoiseSchedule& sched, std::size_t t, std::size_t s, double eta) {
  if (!(t > s)) throw std::invalid_argument("transition: need t > t_prev");
  const double ab_t = sched.alpha_bar_at(t);
  const double ab_s = sched.alpha_bar_at(s);
  Transition tr;
  tr.std = eta * ancestral_std(sched, t, s);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_s - tr.std * tr.std));
  const double inv = 1.0 / std::sqrt(1.0 - ab_t);
  tr.x0_coef = std::sqrt(ab_s) - dir * std::sqrt(ab_t) * inv;
  tr.xt_coef = dir * inv;
  return tr;
}

/// Sum over dimensions of log N(sample; mean, std^2 I).
template <typename A, typename B>
double gaussian_log_prob(const Eigen::MatrixBase<A>& sample, const Eigen::MatrixBase<B>& mean, double std) {
  const double n = static_cast<double>(sample.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * std * std) -
         (sample - mean).squaredNorm() / (2.0 * std * std);
}

struct StepResult {
  RowMatrix sample;
  RowMatrix mean;
  RowMatrix x0_pred;
  double std = 0.0;
  std::vector<double> log_prob;  // one per row
};

/// One reverse step for a batch of rows. rngs[r] drives row r's noise.
inline StepResult sample_step(const Denoiser& denoiser, const RowMatrix& x_t, std::size_t t, std::size_t t_prev,
                              const RowMatrix& cond, const SamplerConfig& cfg, const NoiseSchedule& sched,
                              std::span<Rng> rngs) {
  cfg.validate(sched);
  if (rngs.size() != static_cast<std::size_t>(x_t.rows())) throw DimensionError("sample_step: one rng per row");
  const Transition tr = transition(sched, t, t_prev, cfg.eta);
  std::vector<std::size_t> ts(rngs.size(), t);
  StepResult out;
  out.x0_pred = denoiser.predict(x_t, ts, cond);
  out.mean = tr.x0_coef * out.x0_pred + tr.xt_coef * x_t;
  out.std = tr.std;
  out.sample = out.mean;
  if (tr.std > 0.0) {
    for (Eigen::Index r = 0; r < out.sample.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.sample.cols(); ++c) out.sample(r, c) += tr.std * rngs[r].normal();
    }
  }
  if (cfg.record_logprobs) {
    out.log_prob.resize(rngs.size(), 0.0);
    if (tr.std > 0.0) {
      for (Eigen::Index r = 0; r < out.sample.rows(); ++r) {
        out.log_prob[r] = gaussian_log_prob(out.sample.row(r), out.mean.row(r), tr.std);
      }
    }
  }
  return out;
}

struct DenoiseStep {
  std::size_t t = 0;
  std::size_t t_prev = 0;
  Eigen::RowVectorXd state;
  Eigen::RowVectorXd action;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd x0_pred;
  double std = 0.0;
  double log_prob = 0.0;
};

struct DenoiseTrajectory {
  std::vector<DenoiseStep> steps;
  Eigen::RowVectorXd init_noise;
  Eigen::RowVectorXd final_sample;
};

/// Rolls out one trajectory per rng. `init_noise` is either a single row shared by
/// every member or one row per member; `cond` likewise.
inline std::vector<DenoiseTrajectory> sample_group(const Denoiser& denoiser, const RowMatrix& cond,
                                                   const SamplerConfig& cfg, const NoiseSchedule& sched,
                                                   const RowMatrix& init_noise, std::span<Rng> rngs) {
  cfg.validate(sched);
  const auto g = static_cast<Eigen::Index>(rngs.size());
  if (static_cast<std::size_t>(init_noise.cols()) != denoiser.motion_dim() ||
      (init_noise.rows() != 1 && init_noise.rows() != g)) {
    throw DimensionError("sample_group: init noise shape does not match denoiser and group");
  }
  const auto ts = sampling_timesteps(cfg, sched);
  std::vector<DenoiseTrajectory> out(rngs.size());
  RowMatrix x = init_noise.rows() == 1 ? RowMatrix(init_noise.replicate(g, 1)) : init_noise;
  for (Eigen::Index i = 0; i < g; ++i) {
    out[i].init_noise = x.row(i);
    out[i].steps.reserve(cfg.steps);
  }
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    StepResult step = sample_step(denoiser, x, ts[k], ts[k + 1], cond, cfg, sched, rngs);
    for (Eigen::Index i = 0; i < g; ++i) {
      DenoiseStep rec;
      rec.t = ts[k];
      rec.t_prev = ts[k + 1];
      rec.state = x.row(i);
      rec.action = step.sample.row(i);
      rec.mean = step.mean.row(i);
      rec.x0_pred = step.x0_pred.row(i);
      rec.std = step.std;
      rec.log_prob = cfg.record_logprobs ? step.log_prob[i] : 0.0;
      out[i].steps.push_back(std::move(rec));
    }
    x = std::move(step.sample);
  }
  for (Eigen::Index i = 0; i < g; ++i) out[i].final_sample = x.row(i);
  return out;
}

inline DenoiseTrajectory sample_trajectory(const Denoiser& denoiser, const RowMatrix& cond, const SamplerConfig& cfg,
                                           const NoiseSchedule& sched, const Eigen::RowVectorXd& init_noise, Rng& rng) {
  auto group = sample_group(denoiser, cond, cfg, sched, RowMatrix(init_noise), std::span<Rng>(&rng, 1));
  return std::move(group.front());
}

/// Stacked re-evaluation of recorded transitions under the current parameters.
struct ReplayPass {
  MlpTape tape;
  std::vector<Transition> transitions;  // one per row
  RowMatrix actions;
  RowMatrix means;
  std::vector<double> log_prob;
};

inline ReplayPass replay_forward(const Denoiser& denoiser, std::span<const DenoiseTrajectory* const> trajectories,
                                 const RowMatrix& cond, const SamplerConfig& cfg, const NoiseSchedule& sched) {
  std::size_t rows = 0;
  for (const auto* tr : trajectories) {
    if (tr->steps.size() != cfg.steps) throw DimensionError("replay: trajectory length differs from sampler config");
    rows += tr->steps.size();
  }
  const auto d = static_cast<Eigen::Index>(denoiser.motion_dim());
  RowMatrix states(static_cast<Eigen::Index>(rows), d);
  ReplayPass pass;
  pass.actions.resize(static_cast<Eigen::Index>(rows), d);
  std::vector<std::size_t> ts;
  ts.reserve(rows);
  Eigen::Index r = 0;
  for (const auto* tr : trajectories) {
    for (const auto& step : tr->steps) {
      if (step.state.size() != d) throw DimensionError("replay: recorded state width does not match denoiser");
      states.row(r) = step.state;
      pass.actions.row(r) = step.action;
      ts.push_back(step.t);
      pass.transitions.push_back(transition(sched, step.t, step.t_prev, cfg.eta));
      ++r;
    }
  }
  pass.tape = denoiser.net().forward_tape(denoiser.build_input(states, ts, cond));
  const RowMatrix& x0 = pass.tape.activations.back();
  pass.means.resize(states.rows(), d);
  pass.log_prob.assign(rows, 0.0);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Transition& tr = pass.transitions[i];
    pass.means.row(i) = tr.x0_coef * x0.row(i) + tr.xt_coef * states.row(i);
    if (tr.std > 0.0) pass.log_prob[i] = gaussian_log_prob(pass.actions.row(i), pass.means.row(i), tr.std);
  }
  return pass;
}

inline std::vector<double> replay_log_prob(const Denoiser& denoiser, const DenoiseTrajectory& trajectory,
                                           const RowMatrix& cond, const SamplerConfig& cfg,
                                           const NoiseSchedule& sched) {
  const DenoiseTrajectory* ptr = &trajectory;
  return replay_forward(denoiser, std::span<const DenoiseTrajectory* const>(&ptr, 1), cond, cfg, sched).log_prob;
}

}  // namespace mgrpo
