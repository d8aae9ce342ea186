#pragma once

#include "motiongrpo/tensor.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace mgrpo {

using Quat = Eigen::Quaterniond;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit norm with w >= 0. Idempotent.
inline Quat canonical(const Quat& q) {
  Quat r = q.normalized();
  if (r.w() < 0.0) r.coeffs() = -r.coeffs();
  return r;
}

inline Quat axis_angle(const Vec3& axis, double angle) {
  return canonical(Quat(Eigen::AngleAxisd(angle, axis.normalized())));
}
inline Quat yaw_rotation(double angle) { return axis_angle(Vec3::UnitZ(), angle); }
inline Quat pitch_rotation(double angle) { return axis_angle(Vec3::UnitY(), angle); }

/// Heading of the body x-axis projected onto the ground plane.
inline double yaw_of(const Quat& q) {
  const Mat3 r = q.toRotationMatrix();
  return std::atan2(r(1, 0), r(0, 0));
}

struct SE3 {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  SE3 operator*(const SE3& rhs) const {
    return {canonical(rotation * rhs.rotation), rotation * rhs.translation + translation};
  }
  SE3 inverse() const {
    const Quat inv = rotation.conjugate();
    return {canonical(inv), -(inv * translation)};
  }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Joint hierarchy in topological order (parent index < child index, root parent = -1).
struct Skeleton {
  std::vector<int> parent;
  std::vector<Vec3> offset;
  std::vector<std::string> names;
  int head_index = 0;
  std::array<int, 2> foot_indices{0, 0};

  std::size_t joint_count() const noexcept { return parent.size(); }

  void validate() const {
    const auto n = static_cast<int>(parent.size());
    if (n == 0) throw DimensionError("skeleton has no joints");
    if (offset.size() != parent.size()) throw DimensionError("skeleton offsets do not match joint count");
    int roots = 0;
    for (int j = 0; j < n; ++j) {
      if (parent[j] < 0) {
        ++roots;
      } else if (parent[j] >= j) {
        throw DimensionError("skeleton joint " + std::to_string(j) + " is not topologically sorted");
      }
    }
    if (roots != 1 || parent[0] >= 0) throw DimensionError("skeleton must have exactly one root at index 0");
    auto valid = [n](int i) { return i >= 0 && i < n; };
    if (!valid(head_index) || !valid(foot_indices[0]) || !valid(foot_indices[1])) {
      throw DimensionError("skeleton head or foot index out of range");
    }
  }

  /// Eight-joint desk skeleton: pelvis, spine, neck, head, l_hip, l_foot, r_hip, r_foot.
  static Skeleton desk() {
    Skeleton s;
    s.names = {"pelvis", "spine", "neck", "head", "l_hip", "l_foot", "r_hip", "r_foot"};
    s.parent = {-1, 0, 1, 2, 0, 4, 0, 6};
    s.offset = {Vec3::Zero(),          Vec3(0, 0, 0.25),  Vec3(0, 0, 0.25),   Vec3(0, 0, 0.15),
                Vec3(0.12, 0, 0),      Vec3(0, 0, -0.85), Vec3(-0.12, 0, 0), Vec3(0, 0, -0.85)};
    s.head_index = 3;
    s.foot_indices = {5, 7};
    return s;
  }
};

/// Root transform plus per-joint local rotations for T frames.
///
/// The root joint's global rotation is root[t].rotation * local(t, 0).
struct MotionSequence {
  double fps = 30.0;
  std::vector<SE3> root;
  std::vector<Quat> local_rot;  // frames x joints, row-major
  std::size_t joints = 0;

  MotionSequence() = default;
  MotionSequence(std::size_t frames, std::size_t joint_count, double fps_)
      : fps(fps_), root(frames), local_rot(frames * joint_count, Quat::Identity()), joints(joint_count) {}

  std::size_t frames() const noexcept { return root.size(); }
  Quat& local(std::size_t t, std::size_t j) { return local_rot[t * joints + j]; }
  const Quat& local(std::size_t t, std::size_t j) const { return local_rot[t * joints + j]; }

  void validate() const {
    if (frames() < 4) throw DimensionError("motion needs at least 4 frames, got " + std::to_string(frames()));
    if (local_rot.size() != frames() * joints) throw DimensionError("motion rotation table has wrong size");
  }
};

struct HeadTrajectory {
  std::vector<SE3> pose;
  std::size_t frames() const noexcept { return pose.size(); }
};

/// Per-frame canonicalised head pose: first two rotation-matrix columns, then translation.
struct ConditionFeatures {
  static constexpr std::size_t kDim = 9;
  Tensor values;  // frames x 9
  std::size_t frames() const noexcept { return values.rows(); }
};

/// Global joint transforms per frame, frames x joints row-major.
struct GlobalPose {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<Vec3> position;
  std::vector<Quat> rotation;

  const Vec3& pos(std::size_t t, std::size_t j) const { return position[t * joints + j]; }
  Vec3& pos(std::size_t t, std::size_t j) { return position[t * joints + j]; }
  const Quat& rot(std::size_t t, std::size_t j) const { return rotation[t * joints + j]; }
};

inline GlobalPose forward_kinematics(const Skeleton& skel, const MotionSequence& motion) {
  if (motion.joints != skel.joint_count()) {
    throw DimensionError("forward kinematics: motion has " + std::to_string(motion.joints) +
                         " joints, skeleton has " + std::to_string(skel.joint_count()));
  }
  GlobalPose out;
  out.frames = motion.frames();
  out.joints = motion.joints;
  out.position.resize(out.frames * out.joints);
  out.rotation.resize(out.frames * out.joints);
  for (std::size_t t = 0; t < out.frames; ++t) {
    const std::size_t base = t * out.joints;
    for (std::size_t j = 0; j < out.joints; ++j) {
      const int p = skel.parent[j];
      if (p < 0) {
        out.rotation[base + j] = canonical(motion.root[t].rotation * motion.local(t, j));
        out.position[base + j] = motion.root[t].translation;
      } else {
        const Quat& parent_rot = out.rotation[base + p];
        out.rotation[base + j] = canonical(parent_rot * motion.local(t, j));
        out.position[base + j] = out.position[base + p] + parent_rot * skel.offset[j];
      }
    }
  }
  return out;
}

inline HeadTrajectory derive_head_trajectory(const Skeleton& skel, const MotionSequence& motion) {
  const GlobalPose pose = forward_kinematics(skel, motion);
  HeadTrajectory head;
  head.pose.reserve(pose.frames);
  const auto h = static_cast<std::size_t>(skel.head_index);
  for (std::size_t t = 0; t < pose.frames; ++t) head.pose.push_back({pose.rot(t, h), pose.pos(t, h)});
  return head;
}

/// Yaw and horizontal position of the first head pose, as a rigid transform.
inline SE3 canonical_frame(const HeadTrajectory& h) {
  if (h.pose.empty()) return {};
  const SE3& first = h.pose.front();
  return {yaw_rotation(yaw_of(first.rotation)), Vec3(first.translation.x(), first.translation.y(), 0.0)};
}

inline ConditionFeatures invariant_condition(const HeadTrajectory& h) {
  const SE3 to_canonical = canonical_frame(h).inverse();
  ConditionFeatures c{Tensor({h.frames(), ConditionFeatures::kDim})};
  for (std::size_t t = 0; t < h.frames(); ++t) {
    const SE3 local = to_canonical * h.pose[t];
    const Mat3 r = local.rotation.toRotationMatrix();
    double* row = &c.values.at(t, 0);
    for (int k = 0; k < 3; ++k) {
      row[k] = r(k, 0);
      row[3 + k] = r(k, 1);
      row[6 + k] = local.translation[k];
    }
  }
  return c;
}

/// Applies `g` on the left of every root transform, moving the whole body rigidly.
inline MotionSequence transform_motion(const SE3& g, const MotionSequence& m) {
  MotionSequence out = m;
  for (auto& r : out.root) r = g * r;
  return out;
}

inline HeadTrajectory transform_trajectory(const SE3& g, const HeadTrajectory& h) {
  HeadTrajectory out = h;
  for (auto& p : out.pose) p = g * p;
  return out;
}

}  // namespace mgrpo
