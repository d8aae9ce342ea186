#include "motiongrpo/kinematics.hpp"
#include "motiongrpo/synthdata.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace mgrpo;

namespace {

constexpr double kPi = std::numbers::pi;

MotionSequence random_motion(Rng& rng, std::size_t frames, const Skeleton& skel) {
  MotionSequence m(frames, skel.joint_count(), 30.0);
  for (auto& r : m.root) {
    r.rotation = canonical(Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
    r.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  for (auto& q : m.local_rot) q = canonical(Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
  return m;
}

HeadTrajectory random_trajectory(Rng& rng, std::size_t frames) {
  HeadTrajectory h;
  for (std::size_t t = 0; t < frames; ++t) {
    h.pose.push_back({canonical(Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal())),
                      Vec3(rng.normal(), rng.normal(), 1.0 + 0.2 * rng.normal())});
  }
  return h;
}

double max_abs_diff(const Tensor& a, const Tensor& b) { return (a.flat() - b.flat()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Kinematics, RestPoseAccumulatesOffsets) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence m(1, skel.joint_count(), 30.0);
  const GlobalPose pose = forward_kinematics(skel, m);
  for (std::size_t j = 0; j < skel.joint_count(); ++j) {
    Vec3 expected = Vec3::Zero();
    for (int k = static_cast<int>(j); k >= 0; k = skel.parent[k]) expected += skel.offset[k];
    EXPECT_LT((pose.pos(0, j) - expected).norm(), 1e-15) << skel.names[j];
  }
  EXPECT_NEAR(pose.pos(0, 3).z(), 0.65, 1e-15);
}

TEST(Kinematics, RootYawRotatesChild) {
  Skeleton s;
  s.parent = {-1, 0};
  s.offset = {Vec3::Zero(), Vec3(1, 0, 0)};
  s.names = {"root", "child"};
  s.head_index = 1;
  s.foot_indices = {1, 1};
  MotionSequence m(1, 2, 30.0);
  m.root[0].rotation = yaw_rotation(kPi / 2);
  const GlobalPose pose = forward_kinematics(s, m);
  const Vec3 expected = oracle::rodrigues(Vec3::UnitZ(), kPi / 2, Vec3(1, 0, 0));
  EXPECT_LT((pose.pos(0, 1) - Vec3(0, 1, 0)).norm(), 1e-12);
  EXPECT_LT((pose.pos(0, 1) - expected).norm(), 1e-12);
}

TEST(Kinematics, TwoLinkPitch) {
  Skeleton s;
  s.parent = {-1, 0, 1};
  s.offset = {Vec3::Zero(), Vec3(0, 0, 1), Vec3(0, 0, 1)};
  s.names = {"base", "middle", "tip"};
  s.head_index = 2;
  s.foot_indices = {2, 2};
  MotionSequence m(1, 3, 30.0);
  m.local(0, 1) = pitch_rotation(kPi / 2);
  const GlobalPose pose = forward_kinematics(s, m);
  const Vec3 oracle_tip = Vec3(0, 0, 1) + oracle::rodrigues(Vec3::UnitY(), kPi / 2, Vec3(0, 0, 1));
  EXPECT_LT((pose.pos(0, 2) - Vec3(1, 0, 1)).norm(), 1e-12);
  EXPECT_LT((pose.pos(0, 2) - oracle_tip).norm(), 1e-12);
}

TEST(Kinematics, JointCountMismatchThrows) {
  const Skeleton skel = Skeleton::desk();
  EXPECT_THROW(forward_kinematics(skel, MotionSequence(4, 3, 30.0)), DimensionError);
}

TEST(Kinematics, SkeletonValidation) {
  Skeleton s = Skeleton::desk();
  EXPECT_NO_THROW(s.validate());
  s.parent[2] = 5;
  EXPECT_THROW(s.validate(), DimensionError);
  s = Skeleton::desk();
  s.head_index = 99;
  EXPECT_THROW(s.validate(), DimensionError);
}

TEST(Kinematics, FkTranslationLinearity) {
  Rng rng(1);
  const Skeleton skel = Skeleton::desk();
  for (int trial = 0; trial < 20; ++trial) {
    const MotionSequence m = random_motion(rng, 5, skel);
    const Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const GlobalPose a = forward_kinematics(skel, m);
    const GlobalPose b = forward_kinematics(skel, transform_motion({Quat::Identity(), v}, m));
    for (std::size_t i = 0; i < a.position.size(); ++i) EXPECT_LT((b.position[i] - a.position[i] - v).norm(), 1e-12);
  }
}

TEST(Kinematics, FkRotationEquivariance) {
  Rng rng(2);
  const Skeleton skel = Skeleton::desk();
  for (int trial = 0; trial < 20; ++trial) {
    const MotionSequence m = random_motion(rng, 5, skel);
    const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    const double angle = rng.uniform(-kPi, kPi);
    const GlobalPose a = forward_kinematics(skel, m);
    const GlobalPose b = forward_kinematics(skel, transform_motion({axis_angle(axis, angle), Vec3::Zero()}, m));
    const Mat3 r = oracle::rotation_matrix(axis, angle);
    for (std::size_t i = 0; i < a.position.size(); ++i) EXPECT_LT((b.position[i] - r * a.position[i]).norm(), 1e-9);
  }
}

TEST(Kinematics, CanonicalIsIdempotent) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Quat once = canonical(q);
    const Quat twice = canonical(once);
    EXPECT_LT((once.coeffs() - twice.coeffs()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(once.norm(), 1.0, 1e-12);
    EXPECT_GE(once.w(), 0.0);
  }
}

TEST(Kinematics, HeadTrajectoryFollowsFk) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence rest(3, skel.joint_count(), 30.0);
  const HeadTrajectory h = derive_head_trajectory(skel, rest);
  for (const auto& p : h.pose) {
    EXPECT_LT((p.translation - Vec3(0, 0, 0.65)).norm(), 1e-15);
    EXPECT_NEAR(std::abs(p.rotation.w()), 1.0, 1e-15);
  }
  const HeadTrajectory shifted = derive_head_trajectory(skel, transform_motion({Quat::Identity(), Vec3(1, 2, 0)}, rest));
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_LT((shifted.pose[t].translation - h.pose[t].translation - Vec3(1, 2, 0)).norm(), 1e-15);
  }
}

TEST(Kinematics, WalkHeadHeightStaysNearRest) {
  const Skeleton skel = Skeleton::desk();
  const MotionSequence walk = generate_walk(GaitParams{}, 32, 30.0, skel);
  const HeadTrajectory h = derive_head_trajectory(skel, walk);
  const double rest = kStandingPelvisHeight + 0.65;
  for (const auto& p : h.pose) {
    EXPECT_GE(p.translation.z(), 0.9 * rest);
    EXPECT_LE(p.translation.z(), 1.1 * rest);
  }
  const Dataset ds = build_dataset(20, 32, 30.0, 7, {0.8, 0.1, 0.1}, skel);
  for (const auto& rec : ds.records) {
    for (const auto& p : rec.head.pose) {
      EXPECT_GE(p.translation.z(), 0.9 * rest);
      EXPECT_LE(p.translation.z(), 1.1 * rest);
    }
  }
}

TEST(Condition, IdentityTrajectoryFirstFrame) {
  HeadTrajectory h;
  h.pose.assign(4, SE3{Quat::Identity(), Vec3(0, 0, 1.5)});
  const ConditionFeatures c = invariant_condition(h);
  ASSERT_EQ(c.values.cols(), 9u);
  const double expected[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1.5};
  for (int k = 0; k < 9; ++k) EXPECT_NEAR(c.values.at(0, k), expected[k], 1e-15);
}

TEST(Condition, YawAndShiftInvariance) {
  Rng rng(4);
  const HeadTrajectory h = random_trajectory(rng, 10);
  const SE3 g{yaw_rotation(37.0 * kPi / 180.0), Vec3(5, -3, 0)};
  EXPECT_LT(max_abs_diff(invariant_condition(h).values, invariant_condition(transform_trajectory(g, h)).values), 1e-9);
}

TEST(Condition, PitchIsNotQuotiented) {
  Rng rng(5);
  const HeadTrajectory h = random_trajectory(rng, 10);
  const SE3 g{pitch_rotation(10.0 * kPi / 180.0), Vec3::Zero()};
  EXPECT_GT(max_abs_diff(invariant_condition(h).values, invariant_condition(transform_trajectory(g, h)).values), 1e-3);
}

TEST(Condition, InvariancePropertyOverRandomTransforms) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const HeadTrajectory h = random_trajectory(rng, 8);
    const SE3 g{yaw_rotation(rng.uniform(-kPi, kPi)), Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), 0)};
    ASSERT_LT(max_abs_diff(invariant_condition(h).values, invariant_condition(transform_trajectory(g, h)).values), 1e-9)
        << "trial " << trial;
  }
}
