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

// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//
// Per-step RDP at integer order a with sampling rate q and noise multiplier s
// is
//
//   eps(a) = log( sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1) / (2 s^2)) ) / (a-1)
//
// Steps compose additively and the curve converts to (eps, delta)-DP via
// min_a eps(a) + log(1/delta) / (a-1). All functions are pure.

#ifndef DPSUM_ACCOUNTANT_H_
#define DPSUM_ACCOUNTANT_H_

#include <cstdint>
#include <span>
#include <vector>

namespace dpsum {

inline constexpr double kSigmaBracketLow = 0.3;
inline constexpr double kSigmaBracketHigh = 100.0;
inline constexpr double kCalibrationTolerance = 1e-3;

// Budget and mechanism parameters shared by the training loop and the
// accountant.
struct PrivacySpec {
  double target_epsilon = 8.0;
  double delta = 1e-5;
  double sample_rate = 0.0;  // batch size / |D_train|
  int64_t steps = 1;         // epochs * batches per epoch
  double noise_multiplier = 0.0;
  double clipping_norm = 0.1;

  // Throws DomainError on any violated range constraint.
  void Validate() const;
};

struct RdpCurve {
  std::vector<double> orders;    // strictly increasing, all > 1
  std::vector<double> epsilons;  // same length, all >= 0

  void Validate() const;
};

struct DpGuarantee {
  double epsilon = 0.0;
  double best_order = 0.0;
};

// Integers 2..64 followed by 128 and 256.
const std::vector<double>& DefaultOrders();

// delta = 1 / (2 |D_train|).
double DefaultDelta(int64_t dataset_size);

// Steps for `epochs` passes of ceil(dataset_size / batch_size) batches.
int64_t StepsFor(int64_t dataset_size, int64_t batch_size, int64_t epochs);

// a / (2 s^2). Requires order > 1 and sigma > 0.
double RdpGaussian(double order, double sigma);

// Requires an integer order >= 2, q in [0, 1] and sigma > 0.
double RdpSubsampledGaussian(double order, double sample_rate, double sigma);

RdpCurve ComputeRdp(double sample_rate, double sigma,
                    std::span<const double> orders = DefaultOrders());

RdpCurve Compose(const RdpCurve& per_step, int64_t steps);

// Ties between orders resolve to the smallest order.
DpGuarantee ToDp(const RdpCurve& curve, double delta);

// Epsilon after `steps` compositions of the subsampled Gaussian.
DpGuarantee Account(double sample_rate, double sigma, int64_t steps,
                    double delta,
                    std::span<const double> orders = DefaultOrders());

// Smallest-found sigma in [kSigmaBracketLow, kSigmaBracketHigh] whose
// accounted epsilon lies in [target - kCalibrationTolerance, target]. Returns
// the lower bracket end when it already meets the target (e.g. q = 0). Throws
// CalibrationError when even the upper bracket end overshoots the target.
double CalibrateNoiseMultiplier(double target_epsilon, double delta,
                                double sample_rate, int64_t steps);

}  // namespace dpsum

#endif  // DPSUM_ACCOUNTANT_H_
