#include "motiongrpo/metrics.hpp"
#include "motiongrpo/synthdata.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace mgrpo;

namespace {

GlobalPose blank_pose(std::size_t frames, std::size_t joints, double height = 1.0) {
  GlobalPose p;
  p.frames = frames;
  p.joints = joints;
  p.position.assign(frames * joints, Vec3(0, 0, height));
  p.rotation.assign(frames * joints, Quat::Identity());
  return p;
}

MotionSequence walk(std::uint64_t seed, std::size_t frames = 32) {
  Rng rng(seed);
  return generate_walk(sample_gait(rng), frames, 30.0);
}

}  // namespace

TEST(PositionMetrics, UniformOffsetIsRemovedByAlignment) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence gt = walk(1);
  const MotionSequence pred = transform_motion({Quat::Identity(), Vec3(0.1, 0, 0)}, gt);
  const PositionMetrics m = position_metrics(pred, gt, skel);
  EXPECT_NEAR(m.mpjpe, 100.0, 1e-9);
  EXPECT_LT(m.pa_mpjpe, 1e-6);
}

TEST(PositionMetrics, ScaledPoseAlignsExactly) {
  const Skeleton skel = Skeleton::desk();
  const GlobalPose gt = forward_kinematics(skel, walk(2));
  GlobalPose pred = gt;
  for (auto& p : pred.position) p *= 1.1;
  const PositionMetrics m = position_metrics(pred, gt);
  EXPECT_GT(m.mpjpe, 1.0);
  EXPECT_LT(m.pa_mpjpe, 1e-6);
}

TEST(PositionMetrics, AlignedNeverWorse) {
  const Skeleton skel = Skeleton::desk();
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const MotionSequence gt = walk(10 + trial, 8);
    MotionSequence pred = gt;
    for (auto& q : pred.local_rot) q = canonical(q * axis_angle(Vec3(rng.normal(), rng.normal(), rng.normal()), 0.3 * rng.normal()));
    const PositionMetrics m = position_metrics(pred, gt, skel);
    ASSERT_LE(m.pa_mpjpe, m.mpjpe + 1e-9);
  }
}

TEST(PositionMetrics, AgreesWithPositionReward) {
  const Skeleton skel = Skeleton::desk();
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const MotionSequence gt = walk(30 + trial, 8);
    MotionSequence pred = gt;
    for (auto& r : pred.root) r.translation += 0.05 * Vec3(rng.normal(), rng.normal(), rng.normal());
    RewardWeights w;
    w.pos = 1.0;
    const double mpjpe_m = position_metrics(pred, gt, skel).mpjpe / 1000.0;
    ASSERT_NEAR(joint_rewards(pred, gt, skel, w).pos, std::exp(-mpjpe_m), 1e-12);
  }
}

TEST(PositionMetrics, ShapeMismatchThrows) {
  EXPECT_THROW(position_metrics(blank_pose(4, 8), blank_pose(5, 8)), DimensionError);
}

TEST(DynamicsMetrics, JitterOfCubicTrack) {
  std::vector<Vec3> track;
  for (int t = 0; t < 10; ++t) track.emplace_back(static_cast<double>(t * t * t), 0, 0);
  EXPECT_NEAR(jitter(track, 10, 1, 1.0), 6.0, 1e-12);
  EXPECT_NEAR(jitter(track, 10, 1, 2.0), 48.0, 1e-12);
  EXPECT_THROW(jitter(std::span<const Vec3>(track.data(), 3), 3, 1, 1.0), std::invalid_argument);
}

TEST(DynamicsMetrics, LinearTrackHasNoJitter) {
  std::vector<Vec3> track;
  for (int t = 0; t < 12; ++t) {
    for (int j = 0; j < 3; ++j) track.emplace_back(0.3 * t + j, -0.1 * t, 0.02 * t);
  }
  EXPECT_NEAR(jitter(track, 12, 3, 30.0), 0.0, 1e-9);
}

TEST(DynamicsMetrics, ZeroOnIdenticalMotion) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence m = walk(5);
  const DynamicsMetrics d = dynamics_metrics(m, m, skel, 30.0);
  EXPECT_EQ(d.mpjve, 0.0);
  EXPECT_EQ(d.mpjre, 0.0);
  EXPECT_GT(d.jitter, 0.0);
  EXPECT_EQ(dynamics_metrics(m, m, skel, 30.0, RotationErrorMode::kGeodesicDegrees).mpjre, 0.0);
}

TEST(DynamicsMetrics, GeodesicModeMeasuresDegrees) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence gt = walk(6, 8);
  MotionSequence pred = gt;
  for (std::size_t t = 0; t < pred.frames(); ++t) pred.local(t, 3) = canonical(pred.local(t, 3) * axis_angle(Vec3::UnitX(), std::numbers::pi / 18));
  const DynamicsMetrics d = dynamics_metrics(pred, gt, skel, 30.0, RotationErrorMode::kGeodesicDegrees);
  EXPECT_NEAR(d.mpjre, 10.0 / 8.0, 1e-9);
}

TEST(DynamicsMetrics, VelocityErrorScaledToMillimetresPerSecond) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence gt = walk(7, 8);
  MotionSequence pred = gt;
  for (std::size_t t = 0; t < pred.frames(); ++t) pred.root[t].translation.x() += 0.001 * static_cast<double>(t);
  EXPECT_NEAR(dynamics_metrics(pred, gt, skel, 30.0).mpjve, 30.0, 1e-9);
}

TEST(Plausibility, SinglePenetratingJoint) {
  const Skeleton skel = Skeleton::desk();
  GlobalPose p = blank_pose(6, 8);
  p.pos(2, 3) = Vec3(0, 0, -0.05);
  EXPECT_NEAR(plausibility_metrics(p, skel).gp, 0.05, 1e-15);
  EXPECT_EQ(plausibility_metrics(p, skel).fs, 0.0);
}

TEST(Plausibility, SlidingFootAccumulates) {
  const Skeleton skel = Skeleton::desk();
  GlobalPose p = blank_pose(5, 8);
  for (std::size_t t = 0; t < 5; ++t) p.pos(t, 5) = Vec3(0.02 * static_cast<double>(t), 0, 0.01);
  const PlausibilityMetrics m = plausibility_metrics(p, skel);
  EXPECT_NEAR(m.fs, 0.10, 1e-12);
  EXPECT_EQ(m.gp, 0.0);
  // Same slide above the contact threshold is not skating.
  for (std::size_t t = 0; t < 5; ++t) p.pos(t, 5).z() = 0.05;
  EXPECT_EQ(plausibility_metrics(p, skel).fs, 0.0);
  EXPECT_THROW(plausibility_metrics(p, skel, 0.0), std::invalid_argument);
}

TEST(Plausibility, SyntheticWalksStayAboveGround) {
  const Skeleton skel = Skeleton::desk();
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_EQ(plausibility_metrics(walk(s), skel).gp, 0.0);
}

TEST(Diversity, PairExample) {
  Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(6), b = Eigen::RowVectorXd::Zero(6);
  b[0] = 3;
  b[1] = 4;
  const std::vector<Eigen::RowVectorXd> g{a, b};
  EXPECT_DOUBLE_EQ(diversity(g), 5.0);
  EXPECT_THROW(diversity(std::span<const Eigen::RowVectorXd>(g.data(), 1)), std::invalid_argument);
}

TEST(Diversity, MatchesOracleAndIsHomogeneous) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 2 + rng.below(10);
    std::vector<Eigen::RowVectorXd> group;
    std::vector<std::vector<double>> raw;
    for (std::size_t i = 0; i < g; ++i) {
      Eigen::RowVectorXd v(5);
      for (Eigen::Index c = 0; c < 5; ++c) v[c] = rng.normal();
      group.push_back(v);
      raw.emplace_back(v.data(), v.data() + 5);
    }
    const double d = diversity(group);
    ASSERT_NEAR(d, oracle::pairwise_mean(raw), 1e-12);
    const double c = std::exp(rng.normal());
    Eigen::RowVectorXd shift(5);
    for (Eigen::Index k = 0; k < 5; ++k) shift[k] = 10.0 * rng.normal();
    auto scaled = group, moved = group;
    for (auto& v : scaled) v *= c;
    for (auto& v : moved) v += shift;
    ASSERT_NEAR(diversity(scaled), c * d, 1e-9 * c * d);
    ASSERT_NEAR(diversity(moved), d, 1e-9);
  }
}

TEST(Accuracy, CountsInversions) {
  std::vector<std::pair<double, double>> scores;
  for (int i = 0; i < 100; ++i) scores.emplace_back(i < 7 ? 0.2 : 0.8, i < 7 ? 0.6 : 0.3);
  const AccuracyResult r = accuracy_from_scores(scores);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.93);
  EXPECT_EQ(r.wrong, 7u);
}

TEST(Accuracy, TiesAreWrong) {
  const std::vector<std::pair<double, double>> ties(10, {0.5, 0.5});
  const AccuracyResult r = accuracy_from_scores(ties);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_EQ(r.wrong, 10u);
  EXPECT_THROW(accuracy_from_scores(std::vector<std::pair<double, double>>{}), std::invalid_argument);
}

TEST(Accuracy, ZeroScorerGetsNothingRight) {
  const Skeleton skel = Skeleton::desk();
  const PerceptualScorer zero(16, 8, 8, 1);
  std::vector<AccuracyEntry> pool;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const MotionSequence gt = walk(s, 16), other = walk(s + 100, 16);
    pool.push_back({skeleton_features(skel, gt), skeleton_features(skel, other), derive_head_trajectory(skel, gt)});
  }
  const AccuracyResult r = scorer_accuracy(zero, pool);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_EQ(r.wrong, 5u);
}

TEST(EvalReport, HeaderAndMeans) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence gt = walk(9);
  const MotionSequence pred = transform_motion({Quat::Identity(), Vec3(0.1, 0, 0)}, gt);
  const EvalReport r = EvalReport::aggregate({evaluate_sequence(gt, gt, skel), evaluate_sequence(pred, gt, skel)});
  EXPECT_EQ(std::string(EvalReport::kHeader), "MPJPE,PA-MPJPE,MPJVE,MPJRE,Jitter,GP,FS");
  EXPECT_NEAR(r.mpjpe, 50.0, 1e-9);
  EXPECT_EQ(r.per_sequence.size(), 2u);
  std::ostringstream os;
  r.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), EvalReport::kHeader);
  const EvalReport same = EvalReport::aggregate({evaluate_sequence(gt, gt, skel)});
  EXPECT_EQ(same.mpjpe, 0.0);
  EXPECT_LT(same.pa_mpjpe, 1e-6);
  EXPECT_EQ(same.mpjve, 0.0);
  EXPECT_EQ(same.mpjre, 0.0);
}
