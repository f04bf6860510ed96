// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpsum/accountant.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dpsum/common.h"

namespace dpsum {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double LogBinomial(int64_t n, int64_t k) {
  k = std::min(k, n - k);
  long double acc = 0.0L;
  for (int64_t i = 1; i <= k; ++i) {
    acc += std::log(static_cast<long double>(n - k + i) /
                    static_cast<long double>(i));
  }
  return static_cast<double>(acc);
}

// log(exp(x) - 1) for x > 0.
double LogExpm1(double x) {
  if (x > 30.0) return x + std::log1p(-std::exp(-x));
  return std::log(std::expm1(x));
}

// log(1 + exp(z)).
double Softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

bool IsInteger(double x) { return std::floor(x) == x; }

}  // namespace

void PrivacySpec::Validate() const {
  if (!(target_epsilon > 0.0)) {
    throw DomainError(fmt::format("target epsilon must be positive, got {}",
                                  target_epsilon));
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw DomainError(fmt::format("delta must lie in (0, 1), got {}", delta));
  }
  if (!(sample_rate >= 0.0 && sample_rate <= 1.0)) {
    throw DomainError(
        fmt::format("sample rate must lie in [0, 1], got {}", sample_rate));
  }
  if (steps < 1) {
    throw DomainError(fmt::format("steps must be >= 1, got {}", steps));
  }
  if (!(noise_multiplier >= 0.0)) {
    throw DomainError(fmt::format("noise multiplier must be >= 0, got {}",
                                  noise_multiplier));
  }
  if (!(clipping_norm > 0.0)) {
    throw DomainError(
        fmt::format("clipping norm must be positive, got {}", clipping_norm));
  }
}

void RdpCurve::Validate() const {
  if (orders.size() != epsilons.size()) {
    throw DomainError(fmt::format("RDP curve has {} orders but {} epsilons",
                                  orders.size(), epsilons.size()));
  }
  for (size_t i = 0; i < orders.size(); ++i) {
    if (!(orders[i] > 1.0)) {
      throw DomainError(fmt::format("RDP order {} is not > 1", orders[i]));
    }
    if (i > 0 && !(orders[i] > orders[i - 1])) {
      throw DomainError("RDP orders must be strictly increasing");
    }
    if (!(epsilons[i] >= 0.0)) {
      throw DomainError(fmt::format("negative RDP epsilon {} at order {}",
                                    epsilons[i], orders[i]));
    }
  }
}

const std::vector<double>& DefaultOrders() {
  static const std::vector<double> orders = [] {
    std::vector<double> o;
    for (int a = 2; a <= 64; ++a) o.push_back(a);
    o.push_back(128);
    o.push_back(256);
    return o;
  }();
  return orders;
}

double DefaultDelta(int64_t dataset_size) {
  if (dataset_size < 1) {
    throw DomainError(
        fmt::format("dataset size must be >= 1, got {}", dataset_size));
  }
  return 1.0 / (2.0 * static_cast<double>(dataset_size));
}

int64_t StepsFor(int64_t dataset_size, int64_t batch_size, int64_t epochs) {
  if (dataset_size < 1 || batch_size < 1 || epochs < 1) {
    throw DomainError(fmt::format(
        "dataset size, batch size and epochs must be >= 1 (got {}, {}, {})",
        dataset_size, batch_size, epochs));
  }
  return epochs * ((dataset_size + batch_size - 1) / batch_size);
}

double RdpGaussian(double order, double sigma) {
  if (!(order > 1.0)) {
    throw DomainError(fmt::format("RDP order must be > 1, got {}", order));
  }
  if (!(sigma > 0.0)) {
    throw DomainError(fmt::format("sigma must be positive, got {}", sigma));
  }
  return order / (2.0 * sigma * sigma);
}

double RdpSubsampledGaussian(double order, double sample_rate, double sigma) {
  if (!(order >= 2.0) || !IsInteger(order)) {
    throw DomainError(
        fmt::format("subsampled RDP needs an integer order >= 2, got {}", order));
  }
  if (!(sample_rate >= 0.0 && sample_rate <= 1.0)) {
    throw DomainError(
        fmt::format("sample rate must lie in [0, 1], got {}", sample_rate));
  }
  if (!(sigma > 0.0)) {
    throw DomainError(fmt::format("sigma must be positive, got {}", sigma));
  }
  if (sample_rate == 0.0) return 0.0;
  if (sample_rate == 1.0) return RdpGaussian(order, sigma);

  // The k = 0 and k = 1 terms have exponent 0, so the series equals
  // 1 + S with S = sum_{k>=2} C(a,k) (1-q)^(a-k) q^k expm1(k(k-1)/(2s^2)).
  // Every term of S is positive, which avoids the cancellation in
  // log(1 + tiny) that a direct log-sum-exp over all terms suffers when q is
  // small or sigma large.
  const auto a = static_cast<int64_t>(order);
  const double log_q = std::log(sample_rate);
  const double log_1mq = std::log1p(-sample_rate);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> logs;
  logs.reserve(static_cast<size_t>(a));
  for (int64_t k = 2; k <= a; ++k) {
    const double x = static_cast<double>(k * (k - 1)) * inv_two_var;
    if (x == 0.0) continue;
    logs.push_back(LogBinomial(a, k) + static_cast<double>(a - k) * log_1mq +
                   static_cast<double>(k) * log_q + LogExpm1(x));
  }
  if (logs.empty()) return 0.0;
  const double mx = *std::max_element(logs.begin(), logs.end());
  if (mx == kNegInf) return 0.0;
  double s = 0.0;
  for (double l : logs) s += std::exp(l - mx);
  const double log_s = mx + std::log(s);
  return Softplus(log_s) / (order - 1.0);
}

RdpCurve ComputeRdp(double sample_rate, double sigma,
                    std::span<const double> orders) {
  RdpCurve curve;
  curve.orders.assign(orders.begin(), orders.end());
  for (double a : orders) {
    curve.epsilons.push_back(RdpSubsampledGaussian(a, sample_rate, sigma));
  }
  curve.Validate();
  return curve;
}

RdpCurve Compose(const RdpCurve& per_step, int64_t steps) {
  if (steps < 1) {
    throw DomainError(fmt::format("steps must be >= 1, got {}", steps));
  }
  RdpCurve out = per_step;
  for (double& e : out.epsilons) e *= static_cast<double>(steps);
  return out;
}

DpGuarantee ToDp(const RdpCurve& curve, double delta) {
  if (curve.orders.empty()) throw DomainError("empty RDP curve");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw DomainError(fmt::format("delta must lie in (0, 1), got {}", delta));
  }
  curve.Validate();
  const double log_inv_delta = std::log(1.0 / delta);
  DpGuarantee best{std::numeric_limits<double>::infinity(), 0.0};
  for (size_t i = 0; i < curve.orders.size(); ++i) {
    const double a = curve.orders[i];
    const double eps = curve.epsilons[i] + log_inv_delta / (a - 1.0);
    if (eps < best.epsilon) best = {eps, a};
  }
  return best;
}

DpGuarantee Account(double sample_rate, double sigma, int64_t steps,
                    double delta, std::span<const double> orders) {
  return ToDp(Compose(ComputeRdp(sample_rate, sigma, orders), steps), delta);
}

double CalibrateNoiseMultiplier(double target_epsilon, double delta,
                                double sample_rate, int64_t steps) {
  PrivacySpec spec;
  spec.target_epsilon = target_epsilon;
  spec.delta = delta;
  spec.sample_rate = sample_rate;
  spec.steps = steps;
  spec.Validate();
  auto eps_at = [&](double sigma) {
    return Account(sample_rate, sigma, steps, delta).epsilon;
  };
  double lo = kSigmaBracketLow;
  double hi = kSigmaBracketHigh;
  if (eps_at(lo) <= target_epsilon) return lo;
  double eps_hi = eps_at(hi);
  if (eps_hi > target_epsilon) {
    throw CalibrationError(fmt::format(
        "target epsilon {} is unreachable for sigma in [{}, {}]: epsilon at "
        "sigma={} is {}",
        target_epsilon, kSigmaBracketLow, kSigmaBracketHigh, hi, eps_hi));
  }
  // Invariant: eps(lo) > target >= eps(hi).
  for (int iter = 0; iter < 200; ++iter) {
    if (target_epsilon - eps_hi <= kCalibrationTolerance) break;
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double eps_mid = eps_at(mid);
    if (eps_mid <= target_epsilon) {
      hi = mid;
      eps_hi = eps_mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace dpsum
