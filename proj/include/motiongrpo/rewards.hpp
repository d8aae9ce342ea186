#pragma once

#include "motiongrpo/kinematics.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

// ---------------------------------------------------------------------------
// Umeyama similarity alignment
// ---------------------------------------------------------------------------

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct Alignment {
  SimilarityTransform transform;
  std::vector<Vec3> aligned;
  double residual = 0.0;  // sum of squared distances after alignment
  bool degenerate = false;
};

/// Least-squares s, R, t minimising sum ||s R pred + t - gt||^2 with det(R) = +1.
///
/// Collinear or coincident `pred` sets have no unique rotation; they come back
/// with the identity transform and `degenerate` set.
inline Alignment umeyama_align(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size()) throw DimensionError("umeyama: point counts differ");
  const std::size_t n = pred.size();
  Alignment out;
  auto finish = [&] {
    out.aligned.resize(n);
    out.residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out.aligned[i] = out.transform.apply(pred[i]);
      out.residual += (out.aligned[i] - gt[i]).squaredNorm();
    }
    return out;
  };
  if (n < 3) {
    out.degenerate = true;
    return finish();
  }
  Vec3 mu_p = Vec3::Zero(), mu_g = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_p += pred[i];
    mu_g += gt[i];
  }
  mu_p /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  Mat3 scatter = Mat3::Zero();
  double var_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 dp = pred[i] - mu_p;
    cov += (gt[i] - mu_g) * dp.transpose();
    scatter += dp * dp.transpose();
    var_p += dp.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_p /= static_cast<double>(n);

  const Eigen::SelfAdjointEigenSolver<Mat3> spread(scatter);
  const Vec3 ev = spread.eigenvalues();  // ascending
  if (!(var_p > 1e-18) || ev(1) <= 1e-12 * ev(2)) {
    out.degenerate = true;
    return finish();
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sign = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;
  out.transform.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  out.transform.scale = svd.singularValues().dot(sign) / var_p;
  out.transform.translation = mu_g - out.transform.scale * (out.transform.rotation * mu_p);
  return finish();
}

// ---------------------------------------------------------------------------
// Joint-level rewards
// ---------------------------------------------------------------------------

struct RewardWeights {
  double vis = 1.0;
  double rot = 1.0;
  double pos = 1.0;
  double pos_aligned = 0.5;
  double vel = 1.0;

  void validate() const {
    for (double w : {vis, rot, pos, pos_aligned, vel}) {
      if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("reward weights must be finite and >= 0");
    }
  }
};

/// Rotation the reward and MPJRE compare per joint: the root's global orientation, local elsewhere.
inline Mat3 joint_rotation_matrix(const MotionSequence& m, std::size_t t, std::size_t j) {
  if (j == 0) return canonical(m.root[t].rotation * m.local(t, 0)).toRotationMatrix();
  return m.local(t, j).toRotationMatrix();
}

/// Backward differences per frame; the first frame copies the second.
inline std::vector<Vec3> joint_velocities(const GlobalPose& pose) {
  std::vector<Vec3> v(pose.position.size(), Vec3::Zero());
  if (pose.frames < 2) return v;
  for (std::size_t t = 1; t < pose.frames; ++t) {
    for (std::size_t j = 0; j < pose.joints; ++j) v[t * pose.joints + j] = pose.pos(t, j) - pose.pos(t - 1, j);
  }
  for (std::size_t j = 0; j < pose.joints; ++j) v[j] = v[pose.joints + j];
  return v;
}

/// Per-frame-averaged error terms inside the joint reward exponentials.
struct JointErrors {
  double rot = 0.0;
  double pos = 0.0;
  double pos_aligned = 0.0;
  double vel = 0.0;
};

inline void check_same_shape(const MotionSequence& pred, const MotionSequence& gt) {
  if (pred.frames() != gt.frames() || pred.joints != gt.joints) {
    throw DimensionError("prediction has " + std::to_string(pred.frames()) + "x" + std::to_string(pred.joints) +
                         " frames x joints, ground truth " + std::to_string(gt.frames()) + "x" +
                         std::to_string(gt.joints));
  }
}

inline JointErrors joint_errors(const MotionSequence& pred, const MotionSequence& gt, const Skeleton& skel) {
  check_same_shape(pred, gt);
  const GlobalPose pp = forward_kinematics(skel, pred);
  const GlobalPose gp = forward_kinematics(skel, gt);
  const auto pv = joint_velocities(pp);
  const auto gv = joint_velocities(gp);
  const std::size_t frames = pred.frames(), joints = pred.joints;
  JointErrors e;
  for (std::size_t t = 0; t < frames; ++t) {
    double rot = 0.0, pos = 0.0, vel = 0.0, aligned = 0.0;
    const std::span<const Vec3> pred_frame(&pp.position[t * joints], joints);
    const std::span<const Vec3> gt_frame(&gp.position[t * joints], joints);
    const Alignment al = umeyama_align(pred_frame, gt_frame);
    for (std::size_t j = 0; j < joints; ++j) {
      rot += (joint_rotation_matrix(pred, t, j) - joint_rotation_matrix(gt, t, j)).cwiseAbs().sum();
      pos += (pred_frame[j] - gt_frame[j]).norm();
      aligned += (al.aligned[j] - gt_frame[j]).norm();
      vel += (pv[t * joints + j] - gv[t * joints + j]).norm();
    }
    e.rot += rot / static_cast<double>(joints);
    e.pos += pos / static_cast<double>(joints);
    e.pos_aligned += aligned / static_cast<double>(joints);
    e.vel += vel / static_cast<double>(joints);
  }
  const double inv_t = 1.0 / static_cast<double>(frames);
  e.rot *= inv_t;
  e.pos *= inv_t;
  e.pos_aligned *= inv_t;
  e.vel *= inv_t;
  return e;
}

struct JointRewards {
  double rot = 1.0;
  double pos = 1.0;
  double pos_aligned = 1.0;
  double vel = 1.0;
};

inline JointRewards rewards_from_errors(const JointErrors& e, const RewardWeights& w) {
  return {std::exp(-w.rot * e.rot), std::exp(-w.pos * e.pos), std::exp(-w.pos_aligned * e.pos_aligned),
          std::exp(-w.vel * e.vel)};
}

inline JointRewards joint_rewards(const MotionSequence& pred, const MotionSequence& gt, const Skeleton& skel,
                                  const RewardWeights& w) {
  return rewards_from_errors(joint_errors(pred, gt, skel), w);
}

inline double visual_reward(double score, const RewardWeights& w) { return std::exp(w.vis * score); }

struct RewardBreakdown {
  static constexpr std::size_t kComponents = 5;

  double vis = 1.0;
  double rot = 1.0;
  double pos = 1.0;
  double pos_aligned = 1.0;
  double vel = 1.0;
  double total = 5.0;

  double joint() const { return rot + pos + pos_aligned + vel; }
  std::array<double, kComponents> components() const { return {vis, rot, pos, pos_aligned, vel}; }
};

inline RewardBreakdown combine_rewards(double score, const JointRewards& jr, const RewardWeights& w) {
  RewardBreakdown r;
  r.vis = visual_reward(score, w);
  r.rot = jr.rot;
  r.pos = jr.pos;
  r.pos_aligned = jr.pos_aligned;
  r.vel = jr.vel;
  r.total = r.vis + r.joint();
  return r;
}

}  // namespace mgrpo
