#pragma once

// Independent reference computations used by the tests. Nothing here calls into
// the library's own arithmetic for the quantity being checked.

#include "motiongrpo/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

using mgrpo::Gradients;
using mgrpo::ParamRefs;

struct FdReport {
  double worst_relative = 0.0;
  std::size_t checked = 0;
};

/// Central differences on every parameter entry (or every `stride`-th one).
/// Relative error uses an absolute floor so near-zero gradients do not blow up.
inline FdReport finite_difference(const ParamRefs& params, const Gradients& analytic,
                                  const std::function<double()>& loss, double h = 1e-5, double floor = 1e-8,
                                  std::size_t stride = 1) {
  FdReport r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p]->data();
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss();
      data[i] = saved - h;
      const double down = loss();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic[p].data()[i];
      const double err = std::abs(numeric - exact) / std::max({std::abs(numeric), std::abs(exact), floor});
      if (std::abs(numeric - exact) > floor) r.worst_relative = std::max(r.worst_relative, err);
      ++r.checked;
    }
  }
  return r;
}

/// Rodrigues rotation of v about a unit axis.
inline Eigen::Vector3d rodrigues(const Eigen::Vector3d& axis, double angle, const Eigen::Vector3d& v) {
  const Eigen::Vector3d k = axis.normalized();
  return v * std::cos(angle) + k.cross(v) * std::sin(angle) + k * k.dot(v) * (1.0 - std::cos(angle));
}

inline Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis, double angle) {
  Eigen::Matrix3d m;
  for (int c = 0; c < 3; ++c) m.col(c) = rodrigues(axis, angle, Eigen::Vector3d::Unit(c));
  return m;
}

/// log N(x; mu, s^2) summed over entries, written from the density directly.
inline double gaussian_log_density(const std::vector<double>& x, const std::vector<double>& mu, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mu[i]) / s;
    acc += std::log(std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi)));
  }
  return acc;
}

/// -log softmax of logits[0], computed in long double without shifting.
inline double infonce(double pos, const std::vector<double>& neg, double delta) {
  long double denom = std::exp(static_cast<long double>(pos) / delta);
  for (double s : neg) denom += std::exp(static_cast<long double>(s) / delta);
  return static_cast<double>(-(static_cast<long double>(pos) / delta - std::log(denom)));
}

/// Two-pass mean and population standard deviation in long double.
inline std::pair<double, double> population_stats(const std::vector<double>& v) {
  long double mean = 0.0L;
  for (double x : v) mean += x;
  mean /= static_cast<long double>(v.size());
  long double var = 0.0L;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<long double>(v.size());
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(var))};
}

/// Classic 1-D gradient noise in a cell, written out from the textbook form.
inline double perlin(double g0, double g1, double f) {
  const double fade = 6 * std::pow(f, 5) - 15 * std::pow(f, 4) + 10 * std::pow(f, 3);
  const double a = g0 * f;
  const double b = g1 * (f - 1.0);
  return (1.0 - fade) * a + fade * b;
}

/// Euclidean norm of every ordered pair, averaged.
inline double pairwise_mean(const std::vector<std::vector<double>>& group) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (std::size_t j = 0; j < group.size(); ++j) {
      if (i == j) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < group[i].size(); ++k) d += (group[i][k] - group[j][k]) * (group[i][k] - group[j][k]);
      s += std::sqrt(d);
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

}  // namespace oracle
