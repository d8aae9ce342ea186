#pragma once

#include "motiongrpo/checkpoint.hpp"
#include "motiongrpo/kinematics.hpp"
#include "motiongrpo/layers.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace mgrpo {

/// Per-frame per-joint global quaternion (w,x,y,z) and global position; rows are t * joints + j.
struct SkeletonFeatures {
  static constexpr std::size_t kDim = 7;
  std::size_t frames = 0;
  std::size_t joints = 0;
  RowMatrix values;
};

inline SkeletonFeatures skeleton_features(const Skeleton& skel, const MotionSequence& motion) {
  const GlobalPose pose = forward_kinematics(skel, motion);
  SkeletonFeatures f{pose.frames, pose.joints, RowMatrix(static_cast<Eigen::Index>(pose.frames * pose.joints), 7)};
  for (std::size_t i = 0; i < pose.position.size(); ++i) {
    const Quat& q = pose.rotation[i];
    const Vec3& p = pose.position[i];
    f.values.row(static_cast<Eigen::Index>(i)) << q.w(), q.x(), q.y(), q.z(), p.x(), p.y(), p.z();
  }
  return f;
}

inline RowMatrix head_features(const HeadTrajectory& head) {
  RowMatrix h(static_cast<Eigen::Index>(head.frames()), 7);
  for (std::size_t t = 0; t < head.frames(); ++t) {
    const auto& p = head.pose[t];
    h.row(static_cast<Eigen::Index>(t)) << p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
        p.translation.x(), p.translation.y(), p.translation.z();
  }
  return h;
}

/// Trajectory-conditioned plausibility scorer.
///
/// Body joints and the head track are embedded per token, fused with per-joint
/// cross-attention over time, refined by `blocks` rounds of token MLP, spatial
/// attention across joints and temporal attention across frames, mean-pooled
/// and squashed to (0, 1).
class PerceptualScorer {
 public:
  PerceptualScorer() = default;

  PerceptualScorer(std::size_t frames, std::size_t joints, std::size_t latent = 32, std::size_t blocks = 2,
                   Rng* init = nullptr)
      : frames_(frames),
        joints_(joints),
        latent_(latent),
        body_embed_(SkeletonFeatures::kDim, latent),
        body_key_({joints, latent}),
        head_embed_(7, latent),
        head_key_({joints, latent}),
        cross_(latent),
        score_hidden_(latent, latent),
        score_out_(latent, 1) {
    for (std::size_t b = 0; b < blocks; ++b) {
      blocks_.push_back({Linear(latent, latent), Linear(latent, latent), Attention(latent), Attention(latent)});
    }
    build_frame_encoding();
    if (init) initialize(*init);
  }

  std::size_t frames() const noexcept { return frames_; }
  std::size_t joints() const noexcept { return joints_; }
  std::size_t latent() const noexcept { return latent_; }
  std::size_t blocks() const noexcept { return blocks_.size(); }

  ParamRefs parameters() {
    ParamRefs p{&body_embed_.weight, &body_embed_.bias, &body_key_, &head_embed_.weight, &head_embed_.bias,
                &head_key_,          &cross_.wq,        &cross_.wk, &cross_.wv,          &cross_.wo};
    for (auto& b : blocks_) {
      for (Tensor* t : {&b.mlp_in.weight, &b.mlp_in.bias, &b.mlp_out.weight, &b.mlp_out.bias, &b.spatial.wq,
                        &b.spatial.wk, &b.spatial.wv, &b.spatial.wo, &b.temporal.wq, &b.temporal.wk,
                        &b.temporal.wv, &b.temporal.wo}) {
        p.push_back(t);
      }
    }
    for (Tensor* t : {&score_hidden_.weight, &score_hidden_.bias, &score_out_.weight, &score_out_.bias}) {
      p.push_back(t);
    }
    return p;
  }

  // dims: [feature D, frames, joints, latent, blocks]
  CheckpointData to_checkpoint() {
    CheckpointData ck;
    for (std::size_t v : {SkeletonFeatures::kDim, frames_, joints_, latent_, blocks_.size()}) {
      ck.dims.push_back(static_cast<std::uint32_t>(v));
    }
    ck.weights = flatten_parameters(parameters());
    return ck;
  }

  static PerceptualScorer from_checkpoint(const CheckpointData& ck) {
    if (ck.dims.size() != 5 || ck.dims[0] != SkeletonFeatures::kDim) {
      throw CheckpointError("checkpoint widths do not describe a perceptual scorer");
    }
    PerceptualScorer s(ck.dims[1], ck.dims[2], ck.dims[3], ck.dims[4]);
    assign_parameters(s.parameters(), ck.weights);
    return s;
  }

  struct Tape {
    RowMatrix body_in, head_in;
    RowMatrix fused_in;  // token features entering cross-attention
    RowMatrix head_tokens;
    std::vector<Attention::Tape> cross;
    struct Block {
      RowMatrix in, hidden, after_mlp, after_spatial;
      std::vector<Attention::Tape> spatial, temporal;
    };
    std::vector<Block> blocks;
    RowMatrix pooled, score_hidden;
    double score = 0.5;
  };

  double score(const SkeletonFeatures& body, const HeadTrajectory& head) const {
    return forward(body.values, head_features(head), nullptr);
  }

  /// Returns the sigmoid score; records activations into `tape` when given.
  double forward(const RowMatrix& body, const RowMatrix& head, Tape* tape) const {
    check_inputs(body, head);
    const auto tokens = static_cast<Eigen::Index>(frames_ * joints_);
    Tape local;
    Tape& tp = tape ? *tape : local;
    tp.body_in = head_local(body, head);
    tp.head_in = head;

    RowMatrix x = body_embed_.forward(tp.body_in);
    const RowMatrix head_frame = head_embed_.forward(head);
    tp.head_tokens.resize(tokens, static_cast<Eigen::Index>(latent_));
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t j = 0; j < joints_; ++j) {
        const auto r = static_cast<Eigen::Index>(t * joints_ + j);
        x.row(r) += body_key_.matrix().row(static_cast<Eigen::Index>(j)) + frame_encoding_.row(t);
        tp.head_tokens.row(r) = head_frame.row(static_cast<Eigen::Index>(t)) +
                                head_key_.matrix().row(static_cast<Eigen::Index>(j)) + frame_encoding_.row(t);
      }
    }
    tp.fused_in = x;
    tp.cross.assign(joints_, {});
    for (std::size_t j = 0; j < joints_; ++j) {
      const auto rows = joint_rows(j);
      const RowMatrix q = tp.fused_in(rows, Eigen::all);
      const RowMatrix kv = tp.head_tokens(rows, Eigen::all);
      x(rows, Eigen::all) += cross_.forward(q, kv, tp.cross[j]);
    }

    tp.blocks.assign(blocks_.size(), {});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      auto& bt = tp.blocks[b];
      bt.in = x;
      bt.hidden = blk.mlp_in.forward(x).array().tanh();
      x += blk.mlp_out.forward(bt.hidden);
      bt.after_mlp = x;
      bt.spatial.assign(frames_, {});
      for (std::size_t t = 0; t < frames_; ++t) {
        const auto rows = Eigen::seqN(static_cast<Eigen::Index>(t * joints_), static_cast<Eigen::Index>(joints_));
        const RowMatrix in = bt.after_mlp(rows, Eigen::all);
        x(rows, Eigen::all) += blk.spatial.forward(in, in, bt.spatial[t]);
      }
      bt.after_spatial = x;
      bt.temporal.assign(joints_, {});
      for (std::size_t j = 0; j < joints_; ++j) {
        const auto rows = joint_rows(j);
        const RowMatrix in = bt.after_spatial(rows, Eigen::all);
        x(rows, Eigen::all) += blk.temporal.forward(in, in, bt.temporal[j]);
      }
    }

    tp.pooled = x.colwise().mean();
    tp.score_hidden = score_hidden_.forward(tp.pooled).array().tanh();
    const double logit = score_out_.forward(tp.score_hidden)(0, 0);
    tp.score = 1.0 / (1.0 + std::exp(-logit));
    return tp.score;
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(score).
  void backward(const Tape& tp, double dscore, Gradients& grads) const {
    const double dlogit = dscore * tp.score * (1.0 - tp.score);
    RowMatrix dlog(1, 1);
    dlog(0, 0) = dlogit;
    const std::size_t tail = grads.size() - 4;
    RowMatrix dh = score_out_.backward(tp.score_hidden, dlog, grads[tail + 2], grads[tail + 3]);
    dh.array() *= 1.0 - tp.score_hidden.array().square();
    const RowMatrix dpool = score_hidden_.backward(tp.pooled, dh, grads[tail], grads[tail + 1]);

    const auto tokens = static_cast<Eigen::Index>(frames_ * joints_);
    RowMatrix dx = dpool.replicate(tokens, 1) / static_cast<double>(tokens);

    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const auto& blk = blocks_[b];
      const auto& bt = tp.blocks[b];
      Tensor* g = &grads[10 + 12 * b];
      // temporal attention residual
      RowMatrix d_after_spatial = dx;
      for (std::size_t j = 0; j < joints_; ++j) {
        const auto rows = joint_rows(j);
        RowMatrix dq, dkv;
        blk.temporal.backward(bt.temporal[j], dx(rows, Eigen::all), g + 8, dq, dkv);
        d_after_spatial(rows, Eigen::all) += dq + dkv;
      }
      // spatial attention residual
      RowMatrix d_after_mlp = d_after_spatial;
      for (std::size_t t = 0; t < frames_; ++t) {
        const auto rows = Eigen::seqN(static_cast<Eigen::Index>(t * joints_), static_cast<Eigen::Index>(joints_));
        RowMatrix dq, dkv;
        blk.spatial.backward(bt.spatial[t], d_after_spatial(rows, Eigen::all), g + 4, dq, dkv);
        d_after_mlp(rows, Eigen::all) += dq + dkv;
      }
      // token MLP residual
      RowMatrix dhid = blk.mlp_out.backward(bt.hidden, d_after_mlp, g[2], g[3]);
      dhid.array() *= 1.0 - bt.hidden.array().square();
      dx = d_after_mlp + blk.mlp_in.backward(bt.in, dhid, g[0], g[1]);
    }

    // cross-attention residual
    RowMatrix d_fused = dx;
    RowMatrix d_head_tokens = RowMatrix::Zero(tokens, static_cast<Eigen::Index>(latent_));
    for (std::size_t j = 0; j < joints_; ++j) {
      const auto rows = joint_rows(j);
      RowMatrix dq, dkv;
      cross_.backward(tp.cross[j], dx(rows, Eigen::all), &grads[6], dq, dkv);
      d_fused(rows, Eigen::all) += dq;
      d_head_tokens(rows, Eigen::all) = dkv;
    }

    RowMatrix d_head_frame = RowMatrix::Zero(static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(latent_));
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t j = 0; j < joints_; ++j) {
        const auto r = static_cast<Eigen::Index>(t * joints_ + j);
        grads[2].matrix().row(static_cast<Eigen::Index>(j)) += d_fused.row(r);
        grads[5].matrix().row(static_cast<Eigen::Index>(j)) += d_head_tokens.row(r);
        d_head_frame.row(static_cast<Eigen::Index>(t)) += d_head_tokens.row(r);
      }
    }
    body_embed_.backward(tp.body_in, d_fused, grads[0], grads[1]);
    head_embed_.backward(tp.head_in, d_head_frame, grads[3], grads[4]);
  }

 private:
  struct Block {
    Linear mlp_in, mlp_out;
    Attention spatial, temporal;
  };

  /// Re-expresses joints in the yaw frame of the head at the same frame.
  RowMatrix head_local(const RowMatrix& body, const RowMatrix& head) const {
    RowMatrix out(body.rows(), body.cols());
    for (std::size_t t = 0; t < frames_; ++t) {
      const auto h = head.row(static_cast<Eigen::Index>(t));
      const Quat inv = yaw_rotation(-yaw_of(Quat(h[0], h[1], h[2], h[3])));
      const Vec3 origin(h[4], h[5], h[6]);
      for (std::size_t j = 0; j < joints_; ++j) {
        const auto r = static_cast<Eigen::Index>(t * joints_ + j);
        const auto b = body.row(r);
        const Quat q = canonical(inv * Quat(b[0], b[1], b[2], b[3]));
        const Vec3 p = kPositionScale * (inv * (Vec3(b[4], b[5], b[6]) - origin));
        out.row(r) << q.w(), q.x(), q.y(), q.z(), p.x(), p.y(), p.z();
      }
    }
    return out;
  }

  static constexpr double kPositionScale = 10.0;  // metres to decimetres
  static constexpr double kEmbedGain = 1.0;
  static constexpr double kFrameAmplitude = 0.5;
  static constexpr double kResidualGain = 0.1;

  void initialize(Rng& rng) {
    body_embed_.init(rng, kEmbedGain);
    head_embed_.init(rng, kEmbedGain);
    for (double& v : body_key_.data()) v = 0.1 * rng.normal();
    for (double& v : head_key_.data()) v = 0.1 * rng.normal();
    cross_.init(rng, kResidualGain);
    for (auto& b : blocks_) {
      b.mlp_in.init(rng);
      b.mlp_out.init(rng, kResidualGain);
      b.spatial.init(rng, kResidualGain);
      b.temporal.init(rng, kResidualGain);
    }
    score_hidden_.init(rng, 0.3);
    score_out_.init(rng, 0.1);
  }

  void build_frame_encoding() {
    frame_encoding_ = RowMatrix::Zero(static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(latent_));
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t i = 0; i + 1 < latent_; i += 2) {
        const double freq = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(latent_));
        frame_encoding_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = kFrameAmplitude * std::sin(t * freq);
        frame_encoding_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i + 1)) = kFrameAmplitude * std::cos(t * freq);
      }
    }
  }

  Eigen::ArithmeticSequence<Eigen::Index, Eigen::Index, Eigen::Index> joint_rows(std::size_t j) const {
    return Eigen::seqN(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(frames_),
                       static_cast<Eigen::Index>(joints_));
  }

  void check_inputs(const RowMatrix& body, const RowMatrix& head) const {
    if (static_cast<std::size_t>(body.rows()) != frames_ * joints_ ||
        static_cast<std::size_t>(body.cols()) != SkeletonFeatures::kDim) {
      throw DimensionError("scorer: skeleton features must be " + std::to_string(frames_ * joints_) + " x 7, got " +
                           std::to_string(body.rows()) + " x " + std::to_string(body.cols()));
    }
    if (static_cast<std::size_t>(head.rows()) != frames_ || head.cols() != 7) {
      throw DimensionError("scorer: head trajectory must be " + std::to_string(frames_) + " x 7");
    }
  }

  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  std::size_t latent_ = 0;
  Linear body_embed_;
  Tensor body_key_;
  Linear head_embed_;
  Tensor head_key_;
  Attention cross_;
  std::vector<Block> blocks_;
  Linear score_hidden_;
  Linear score_out_;
  RowMatrix frame_encoding_;
};

}  // namespace mgrpo
