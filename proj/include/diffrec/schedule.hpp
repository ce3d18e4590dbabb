#pragma once

#include <vector>

#include "diffrec/matrix.hpp"

namespace diffrec {

// Linear corruption schedule over T steps. The cumulative noise level
// 1 - abar_t interpolates linearly between s*alpha_min (t=1) and s*alpha_max
// (t=T); the per-step quantities alpha_t, beta_t and the posterior variance
// are derived from it. Arrays are indexed t = 1..T with abar[0] := 1.
// s = 0 is the supported noise-free degenerate mode: corruption is the
// identity and the step-dependent loss weights collapse to plain MSE.
struct NoiseSchedule {
  int T = 0;
  double s = 0.0;
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  std::vector<double> one_minus_abar;  // [T+1], index 0 unused (0.0)
  std::vector<double> abar;            // [T+1], abar[0] = 1
  std::vector<double> alpha;           // [T+1], index 0 unused (1.0)
  std::vector<double> beta;            // [T+1], index 0 unused (0.0)
  std::vector<double> posterior_var;   // [T+1], posterior_var[1] = 0

  bool noiseless() const { return s == 0.0; }
};

// Validates 0 <= s <= 1, 0 < alpha_min < alpha_max < 1, T >= 1.
NoiseSchedule build_schedule(double s, double alpha_min, double alpha_max, int T);

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, with eps ~ N(0, I)
// supplied by the caller. eps must match x0's shape.
DenseMatrix q_sample(const NoiseSchedule& sched, const DenseMatrix& x0, int t,
                     const DenseMatrix& eps);

// Mean of the corruption posterior q(x_{t-1} | x_t, x0). Defined for t >= 2
// and s > 0; callers route the t = 1 reconstruction step and the noise-free
// mode around the degenerate denominators.
DenseMatrix posterior_mean(const NoiseSchedule& sched, const DenseMatrix& x_t,
                           const DenseMatrix& x0, int t);

// The two coefficients of posterior_mean: out = c_xt * x_t + c_x0 * x0.
void posterior_coeffs(const NoiseSchedule& sched, int t, double& c_xt, double& c_x0);

}  // namespace diffrec
