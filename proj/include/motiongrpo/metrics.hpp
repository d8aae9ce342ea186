#pragma once

#include "motiongrpo/rewards.hpp"
#include "motiongrpo/scorer.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

struct PositionMetrics {
  double mpjpe = 0.0;     // mm
  double pa_mpjpe = 0.0;  // mm
};

inline PositionMetrics position_metrics(const GlobalPose& pred, const GlobalPose& gt) {
  if (pred.frames != gt.frames || pred.joints != gt.joints) throw DimensionError("position_metrics: shape mismatch");
  PositionMetrics m;
  for (std::size_t t = 0; t < pred.frames; ++t) {
    const std::span<const Vec3> p(&pred.position[t * pred.joints], pred.joints);
    const std::span<const Vec3> g(&gt.position[t * gt.joints], gt.joints);
    const Alignment al = umeyama_align(p, g);
    for (std::size_t j = 0; j < pred.joints; ++j) {
      m.mpjpe += (p[j] - g[j]).norm();
      m.pa_mpjpe += (al.aligned[j] - g[j]).norm();
    }
  }
  const double scale = 1000.0 / static_cast<double>(pred.frames * pred.joints);
  m.mpjpe *= scale;
  m.pa_mpjpe *= scale;
  return m;
}

inline PositionMetrics position_metrics(const MotionSequence& pred, const MotionSequence& gt, const Skeleton& skel) {
  check_same_shape(pred, gt);
  return position_metrics(forward_kinematics(skel, pred), forward_kinematics(skel, gt));
}

enum class RotationErrorMode { kMatrixL1, kGeodesicDegrees };

struct DynamicsMetrics {
  double mpjve = 0.0;   // mm/s
  double mpjre = 0.0;   // L1 over rotation-matrix entries, or degrees in geodesic mode
  double jitter = 0.0;  // m/s^3, prediction only
};

/// Mean norm of the third forward difference scaled by fps^3.
inline double jitter(std::span<const Vec3> positions, std::size_t frames, std::size_t joints, double fps) {
  if (frames < 4) throw std::invalid_argument("jitter: need at least 4 frames");
  double sum = 0.0;
  for (std::size_t t = 0; t + 3 < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      auto p = [&](std::size_t k) -> const Vec3& { return positions[(t + k) * joints + j]; };
      sum += (p(3) - 3.0 * p(2) + 3.0 * p(1) - p(0)).norm();
    }
  }
  return sum * fps * fps * fps / static_cast<double>((frames - 3) * joints);
}

inline DynamicsMetrics dynamics_metrics(const MotionSequence& pred, const MotionSequence& gt, const Skeleton& skel,
                                        double fps, RotationErrorMode mode = RotationErrorMode::kMatrixL1) {
  check_same_shape(pred, gt);
  if (pred.frames() < 4) throw std::invalid_argument("dynamics_metrics: need at least 4 frames");
  const GlobalPose pp = forward_kinematics(skel, pred);
  const GlobalPose gp = forward_kinematics(skel, gt);
  const auto pv = joint_velocities(pp);
  const auto gv = joint_velocities(gp);
  const std::size_t frames = pred.frames(), joints = pred.joints;
  DynamicsMetrics m;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      m.mpjve += (pv[t * joints + j] - gv[t * joints + j]).norm();
      const Mat3 rp = joint_rotation_matrix(pred, t, j);
      const Mat3 rg = joint_rotation_matrix(gt, t, j);
      if (mode == RotationErrorMode::kMatrixL1) {
        m.mpjre += (rp - rg).cwiseAbs().sum();
      } else {
        const double c = std::clamp(((rp.transpose() * rg).trace() - 1.0) / 2.0, -1.0, 1.0);
        m.mpjre += std::acos(c) * 180.0 / std::numbers::pi;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(frames * joints);
  m.mpjve *= inv * fps * 1000.0;
  m.mpjre *= inv;
  m.jitter = jitter(pp.position, frames, joints, fps);
  return m;
}

struct PlausibilityMetrics {
  double gp = 0.0;  // m
  double fs = 0.0;  // m
};

/// GP sums below-floor depth over all joints and frames. FS accumulates the horizontal
/// per-frame displacement of each foot over frames where it is below the contact threshold,
/// with the same velocity convention as the rewards (frame 0 copies frame 1).
inline PlausibilityMetrics plausibility_metrics(const GlobalPose& pose, const Skeleton& skel,
                                                double contact_threshold = 0.02) {
  if (!(contact_threshold > 0.0)) throw std::invalid_argument("plausibility: contact threshold must be > 0");
  PlausibilityMetrics m;
  for (const Vec3& p : pose.position) m.gp += std::max(0.0, -p.z());
  const auto vel = joint_velocities(pose);
  for (int foot : skel.foot_indices) {
    const auto f = static_cast<std::size_t>(foot);
    for (std::size_t t = 0; t < pose.frames; ++t) {
      if (pose.pos(t, f).z() < contact_threshold) m.fs += vel[t * pose.joints + f].head<2>().norm();
    }
  }
  return m;
}

inline PlausibilityMetrics plausibility_metrics(const MotionSequence& pred, const Skeleton& skel,
                                                double contact_threshold = 0.02) {
  return plausibility_metrics(forward_kinematics(skel, pred), skel, contact_threshold);
}

/// Mean pairwise Euclidean distance over ordered pairs i != j.
inline double diversity(std::span<const Eigen::RowVectorXd> group) {
  const std::size_t g = group.size();
  if (g < 2) throw std::invalid_argument("diversity: need at least two samples");
  double sum = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = i + 1; j < g; ++j) sum += 2.0 * (group[i] - group[j]).norm();
  }
  return sum / static_cast<double>(g * (g - 1));
}

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t wrong = 0;
};

/// Fraction of (s_gt, s_gen) pairs with s_gt strictly greater. Ties count as wrong.
inline AccuracyResult accuracy_from_scores(std::span<const std::pair<double, double>> scores) {
  if (scores.empty()) throw std::invalid_argument("scorer accuracy: empty pool");
  std::size_t correct = 0;
  for (const auto& [gt, gen] : scores) correct += gt > gen ? 1 : 0;
  return {static_cast<double>(correct) / static_cast<double>(scores.size()), scores.size() - correct};
}

struct AccuracyEntry {
  SkeletonFeatures gt;
  SkeletonFeatures generated;
  HeadTrajectory head;
};

inline AccuracyResult scorer_accuracy(const PerceptualScorer& scorer, std::span<const AccuracyEntry> pool) {
  std::vector<std::pair<double, double>> scores;
  scores.reserve(pool.size());
  for (const auto& e : pool) scores.emplace_back(scorer.score(e.gt, e.head), scorer.score(e.generated, e.head));
  return accuracy_from_scores(scores);
}

struct SequenceMetrics {
  PositionMetrics position;
  DynamicsMetrics dynamics;
  PlausibilityMetrics plausibility;
};

inline SequenceMetrics evaluate_sequence(const MotionSequence& pred, const MotionSequence& gt, const Skeleton& skel,
                                         double contact_threshold = 0.02,
                                         RotationErrorMode mode = RotationErrorMode::kMatrixL1) {
  return {position_metrics(pred, gt, skel), dynamics_metrics(pred, gt, skel, pred.fps, mode),
          plausibility_metrics(pred, skel, contact_threshold)};
}

struct EvalReport {
  static constexpr const char* kHeader = "MPJPE,PA-MPJPE,MPJVE,MPJRE,Jitter,GP,FS";

  double mpjpe = 0.0, pa_mpjpe = 0.0, mpjve = 0.0, mpjre = 0.0, jitter = 0.0, gp = 0.0, fs = 0.0;
  std::vector<SequenceMetrics> per_sequence;

  static EvalReport aggregate(std::vector<SequenceMetrics> seqs) {
    EvalReport r;
    if (seqs.empty()) return r;
    for (const auto& s : seqs) {
      r.mpjpe += s.position.mpjpe;
      r.pa_mpjpe += s.position.pa_mpjpe;
      r.mpjve += s.dynamics.mpjve;
      r.mpjre += s.dynamics.mpjre;
      r.jitter += s.dynamics.jitter;
      r.gp += s.plausibility.gp;
      r.fs += s.plausibility.fs;
    }
    const double inv = 1.0 / static_cast<double>(seqs.size());
    for (double* v : {&r.mpjpe, &r.pa_mpjpe, &r.mpjve, &r.mpjre, &r.jitter, &r.gp, &r.fs}) *v *= inv;
    r.per_sequence = std::move(seqs);
    return r;
  }

  static std::string row(const SequenceMetrics& s) {
    return format_row({s.position.mpjpe, s.position.pa_mpjpe, s.dynamics.mpjve, s.dynamics.mpjre, s.dynamics.jitter,
                       s.plausibility.gp, s.plausibility.fs});
  }

  std::string mean_row() const { return format_row({mpjpe, pa_mpjpe, mpjve, mpjre, jitter, gp, fs}); }

  void write_csv(std::ostream& os) const { os << kHeader << '\n' << mean_row() << '\n'; }

  void write_per_sequence_csv(std::ostream& os) const {
    os << "sequence," << kHeader << '\n';
    for (std::size_t i = 0; i < per_sequence.size(); ++i) os << i << ',' << row(per_sequence[i]) << '\n';
  }

 private:
  static std::string format_row(std::initializer_list<double> values) {
    std::ostringstream os;
    os << std::setprecision(10);
    bool first = true;
    for (double v : values) {
      if (!first) os << ',';
      os << v;
      first = false;
    }
    return os.str();
  }
};

}  // namespace mgrpo
