#pragma once

#include "motiongrpo/kinematics.hpp"
#include "motiongrpo/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgrpo {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GaitParams {
  double stride_frequency = 1.0;  // cycles per second
  double stride_amplitude = 0.4;  // hip swing, radians
  double forward_speed = 1.0;     // m/s
  double turn_rate = 0.0;         // rad/s
  double bob_amplitude = 0.02;    // m
  double phase_left = 0.0;
  double phase_right = std::numbers::pi;

  void validate() const {
    if (!(stride_frequency > 0.0)) throw std::invalid_argument("gait: stride_frequency must be > 0");
    if (!(stride_amplitude >= 0.0)) throw std::invalid_argument("gait: stride_amplitude must be >= 0");
    if (!(bob_amplitude >= 0.0)) throw std::invalid_argument("gait: bob_amplitude must be >= 0");
    if (!std::isfinite(forward_speed) || !std::isfinite(turn_rate)) {
      throw std::invalid_argument("gait: speed and turn rate must be finite");
    }
  }
};

/// Pelvis height at full leg extension; 5 mm above the floor so feet never penetrate.
inline constexpr double kStandingPelvisHeight = 0.855;

/// Procedural walk on the desk skeleton. Root starts at the origin facing +x.
inline MotionSequence generate_walk(const GaitParams& p, std::size_t frames, double fps,
                                    const Skeleton& skel = Skeleton::desk()) {
  p.validate();
  if (frames < 4) throw std::invalid_argument("gait: need at least 4 frames");
  if (!(fps > 0.0)) throw std::invalid_argument("gait: fps must be > 0");
  skel.validate();
  const std::array<int, 2> hips{skel.parent[skel.foot_indices[0]], skel.parent[skel.foot_indices[1]]};

  MotionSequence m(frames, skel.joint_count(), fps);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < frames; ++t) {
    const double s = static_cast<double>(t) / fps;
    const double yaw = p.turn_rate * s;
    double x, y;
    if (std::abs(p.turn_rate) < 1e-12) {
      x = p.forward_speed * s;
      y = 0.0;
    } else {
      x = p.forward_speed / p.turn_rate * std::sin(yaw);
      y = p.forward_speed / p.turn_rate * (1.0 - std::cos(yaw));
    }
    const double gait_phase = two_pi * p.stride_frequency * s;
    const double z = kStandingPelvisHeight +
                     p.bob_amplitude * 0.5 * (1.0 - std::cos(2.0 * gait_phase + 2.0 * p.phase_left));
    m.root[t] = {yaw_rotation(yaw), Vec3(x, y, z)};
    m.local(t, hips[0]) = pitch_rotation(p.stride_amplitude * std::sin(gait_phase + p.phase_left));
    m.local(t, hips[1]) = pitch_rotation(p.stride_amplitude * std::sin(gait_phase + p.phase_right));
  }
  return m;
}

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ParseError("unknown split '" + s + "'");
}

struct Record {
  MotionSequence motion;
  HeadTrajectory head;
  Split split = Split::kTrain;
};

struct Dataset {
  std::vector<Record> records;
  std::uint64_t seed = 0;

  std::vector<const Record*> split(Split s) const {
    std::vector<const Record*> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(&r);
    }
    return out;
  }
};

struct GaitRanges {
  double frequency_lo = 0.6, frequency_hi = 1.4;
  double amplitude_lo = 0.2, amplitude_hi = 0.6;
  double speed_lo = 0.4, speed_hi = 1.4;
  double turn_lo = -0.5, turn_hi = 0.5;
  double bob_lo = 0.01, bob_hi = 0.04;
};

inline GaitParams sample_gait(Rng& rng, const GaitRanges& r = {}) {
  GaitParams p;
  p.stride_frequency = rng.uniform(r.frequency_lo, r.frequency_hi);
  p.stride_amplitude = rng.uniform(r.amplitude_lo, r.amplitude_hi);
  p.forward_speed = rng.uniform(r.speed_lo, r.speed_hi);
  p.turn_rate = rng.uniform(r.turn_lo, r.turn_hi);
  p.bob_amplitude = rng.uniform(r.bob_lo, r.bob_hi);
  p.phase_left = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.phase_right = p.phase_left + std::numbers::pi;
  return p;
}

inline void validate_split_fractions(const std::array<double, 3>& f) {
  for (double v : f) {
    if (!(v >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
}

inline Dataset build_dataset(std::size_t count, std::size_t frames, double fps, std::uint64_t seed,
                             const std::array<double, 3>& fractions,
                             const Skeleton& skel = Skeleton::desk()) {
  validate_split_fractions(fractions);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(count)));
  const auto n_val = std::min(count - std::min(count, n_train),
                              static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(count))));
  Dataset ds;
  ds.seed = seed;
  ds.records.resize(count);
  const Rng root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.child(i);
    Record& rec = ds.records[i];
    rec.motion = generate_walk(sample_gait(rng), frames, fps, skel);
    rec.head = derive_head_trajectory(skel, rec.motion);
    rec.split = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
  }
  return ds;
}

namespace detail {

inline nlohmann::json pose_row(const SE3& p) {
  const Quat& q = p.rotation;
  return {q.w(), q.x(), q.y(), q.z(), p.translation.x(), p.translation.y(), p.translation.z()};
}

inline SE3 parse_pose(const nlohmann::json& row) {
  if (!row.is_array() || row.size() != 7) throw ParseError("pose row must have 7 numbers");
  auto v = row.get<std::vector<double>>();
  return {Quat(v[0], v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])};
}

}  // namespace detail

inline std::string record_to_json(const Record& rec, std::uint64_t seed) {
  nlohmann::json j;
  j["fps"] = rec.motion.fps;
  j["frames"] = rec.motion.frames();
  j["joints"] = rec.motion.joints;
  j["seed"] = seed;
  j["split"] = split_name(rec.split);
  auto& root = j["root"] = nlohmann::json::array();
  auto& local = j["local_rot"] = nlohmann::json::array();
  auto& head = j["head"] = nlohmann::json::array();
  for (std::size_t t = 0; t < rec.motion.frames(); ++t) {
    root.push_back(detail::pose_row(rec.motion.root[t]));
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < rec.motion.joints; ++k) {
      const Quat& q = rec.motion.local(t, k);
      row.insert(row.end(), {q.w(), q.x(), q.y(), q.z()});
    }
    local.push_back(std::move(row));
  }
  for (const auto& p : rec.head.pose) head.push_back(detail::pose_row(p));
  return j.dump();
}

inline Record record_from_json(const std::string& line, std::uint64_t* seed = nullptr) {
  const auto j = nlohmann::json::parse(line);
  const auto frames = j.at("frames").get<std::size_t>();
  const auto joints = j.at("joints").get<std::size_t>();
  Record rec;
  rec.motion = MotionSequence(frames, joints, j.at("fps").get<double>());
  rec.split = parse_split(j.at("split").get<std::string>());
  if (seed) *seed = j.at("seed").get<std::uint64_t>();
  const auto& root = j.at("root");
  const auto& local = j.at("local_rot");
  const auto& head = j.at("head");
  if (root.size() != frames || local.size() != frames || head.size() != frames) {
    throw ParseError("frame count mismatch");
  }
  for (std::size_t t = 0; t < frames; ++t) {
    rec.motion.root[t] = detail::parse_pose(root[t]);
    auto row = local[t].get<std::vector<double>>();
    if (row.size() != 4 * joints) throw ParseError("local_rot row has wrong length");
    for (std::size_t k = 0; k < joints; ++k) {
      rec.motion.local(t, k) = Quat(row[4 * k], row[4 * k + 1], row[4 * k + 2], row[4 * k + 3]);
    }
    rec.head.pose.push_back(detail::parse_pose(head[t]));
  }
  return rec;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& rec : ds.records) out << record_to_json(rec, ds.seed) << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  Dataset ds;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      ds.records.push_back(record_from_json(line, &ds.seed));
    } catch (const std::exception& e) {
      const std::string last =
          index == 0 ? std::string("none") : std::to_string(index - 1);
      throw ParseError("dataset '" + path + "': record " + std::to_string(index) +
                       " is malformed (" + e.what() + "); last complete record: " + last);
    }
    ++index;
  }
  return ds;
}

}  // namespace mgrpo
