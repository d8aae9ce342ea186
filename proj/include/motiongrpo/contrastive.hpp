#pragma once

#include "motiongrpo/adam.hpp"
#include "motiongrpo/diffusion.hpp"
#include "motiongrpo/scorer.hpp"
#include "motiongrpo/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mgrpo {

struct InfoNceResult {
  double loss = 0.0;
  double d_positive = 0.0;
  std::vector<double> d_negatives;
};

/// -log softmax of the positive among {positive, negatives} at temperature delta.
inline InfoNceResult infonce(double positive, std::span<const double> negatives, double delta) {
  if (negatives.empty()) throw std::invalid_argument("infonce: need at least one negative");
  if (!(delta > 0.0)) throw std::invalid_argument("infonce: temperature must be > 0");
  double top = positive / delta;
  for (double s : negatives) top = std::max(top, s / delta);
  double denom = std::exp(positive / delta - top);
  for (double s : negatives) denom += std::exp(s / delta - top);
  InfoNceResult r;
  r.loss = -(positive / delta - top - std::log(denom));
  r.d_positive = (std::exp(positive / delta - top) / denom - 1.0) / delta;
  r.d_negatives.reserve(negatives.size());
  for (double s : negatives) r.d_negatives.push_back(std::exp(s / delta - top) / denom / delta);
  return r;
}

struct ScoredPair {
  const SkeletonFeatures* body;
  const HeadTrajectory* head;
};

inline double infonce_loss(const PerceptualScorer& scorer, const ScoredPair& positive,
                           std::span<const ScoredPair> negatives, double delta) {
  std::vector<double> neg;
  neg.reserve(negatives.size());
  for (const auto& p : negatives) neg.push_back(scorer.score(*p.body, *p.head));
  return infonce(scorer.score(*positive.body, *positive.head), neg, delta).loss;
}

struct HardNegatives {
  std::vector<SkeletonFeatures> features;
  std::vector<MotionSequence> motions;
  std::vector<std::size_t> step_index;  // which sampler step's x0 prediction was decoded
};

/// For each head track, samples the policy from fresh noise and decodes its clean
/// prediction at one of the last three sampler steps, chosen uniformly.
/// `forced_step` pins the step index (counted from the start of the trajectory).
inline HardNegatives make_hard_negatives(const Denoiser& denoiser, std::span<const HeadTrajectory> heads,
                                         const Skeleton& skel, const NoiseSchedule& sched, SamplerConfig cfg,
                                         Rng rng, std::optional<std::size_t> forced_step = std::nullopt,
                                         double fps = 30.0) {
  cfg.record_logprobs = false;
  const std::size_t count = heads.size();
  HardNegatives out;
  if (count == 0) return out;
  const auto d = static_cast<Eigen::Index>(denoiser.motion_dim());
  RowMatrix cond(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(denoiser.cond_dim()));
  RowMatrix init(static_cast<Eigen::Index>(count), d);
  std::vector<Rng> rngs;
  rngs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng member = rng.child(i);
    Rng noise = member.child("init");
    for (Eigen::Index c = 0; c < d; ++c) init(static_cast<Eigen::Index>(i), c) = noise.normal();
    cond.row(static_cast<Eigen::Index>(i)) = condition_row(invariant_condition(heads[i]));
    rngs.push_back(member.child("sampler"));
  }
  const auto trajectories = sample_group(denoiser, cond, cfg, sched, init, rngs);
  const std::size_t n = cfg.steps;
  const std::size_t window = std::min<std::size_t>(3, n);
  for (std::size_t i = 0; i < count; ++i) {
    Rng pick = rng.child(i).child("pick");
    const std::size_t k = forced_step ? std::min(*forced_step, n - 1) : n - window + pick.below(window);
    const auto& x0 = trajectories[i].steps[k].x0_pred;
    MotionSequence m = decode_motion(std::span<const double>(x0.data(), static_cast<std::size_t>(x0.size())),
                                     denoiser.frames(), denoiser.joints(), fps, canonical_frame(heads[i]));
    out.features.push_back(skeleton_features(skel, m));
    out.motions.push_back(std::move(m));
    out.step_index.push_back(k);
  }
  return out;
}

struct ScorerTrainingConfig {
  std::size_t steps = 400;
  std::size_t negatives = 15;
  double temperature = 0.07;
};

/// Online contrastive training: each step pairs one ground-truth motion with
/// freshly generated hard negatives under the same head track.
inline std::vector<double> train_scorer(PerceptualScorer& scorer, const Dataset& data, const Denoiser& denoiser,
                                        const Skeleton& skel, const NoiseSchedule& sched, const SamplerConfig& sampler,
                                        const ScorerTrainingConfig& cfg, const Rng& rng, AdamState& opt) {
  const auto train = data.split(Split::kTrain);
  std::vector<double> curve;
  if (cfg.steps == 0) return curve;
  if (train.empty()) throw std::invalid_argument("train_scorer: dataset has no training records");
  curve.reserve(cfg.steps);
  ParamRefs params = scorer.parameters();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng step_rng = rng.child(step);
    const Record& rec = *train[step_rng.below(train.size())];
    const std::vector<HeadTrajectory> heads(cfg.negatives, rec.head);
    const HardNegatives neg = make_hard_negatives(denoiser, heads, skel, sched, sampler, step_rng.child("negatives"),
                                                  std::nullopt, rec.motion.fps);
    const SkeletonFeatures pos = skeleton_features(skel, rec.motion);
    const RowMatrix head = head_features(rec.head);

    PerceptualScorer::Tape pos_tape;
    std::vector<PerceptualScorer::Tape> neg_tapes(cfg.negatives);
    const double s_pos = scorer.forward(pos.values, head, &pos_tape);
    std::vector<double> s_neg(cfg.negatives);
    for (std::size_t k = 0; k < cfg.negatives; ++k) s_neg[k] = scorer.forward(neg.features[k].values, head, &neg_tapes[k]);
    const InfoNceResult r = infonce(s_pos, s_neg, cfg.temperature);
    if (!std::isfinite(r.loss)) throw NumericError("train_scorer: non-finite contrastive loss");

    Gradients grads = zero_gradients(params);
    scorer.backward(pos_tape, r.d_positive, grads);
    for (std::size_t k = 0; k < cfg.negatives; ++k) scorer.backward(neg_tapes[k], r.d_negatives[k], grads);
    opt.step(params, grads);
    curve.push_back(r.loss);
  }
  return curve;
}

}  // namespace mgrpo
