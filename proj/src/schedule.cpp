#include "diffrec/schedule.hpp"

#include <cmath>

#include "diffrec/errors.hpp"

namespace diffrec {

NoiseSchedule build_schedule(double s, double alpha_min, double alpha_max, int T) {
  if (!(s >= 0.0 && s <= 1.0))
    throw ConfigError("noise scale s must be in [0, 1], got " + std::to_string(s));
  if (!(0.0 < alpha_min && alpha_min < alpha_max && alpha_max < 1.0))
    throw ConfigError("need 0 < noise_min < noise_max < 1");
  if (T < 1) throw ConfigError("step count T must be >= 1");

  NoiseSchedule sc;
  sc.T = T;
  sc.s = s;
  sc.alpha_min = alpha_min;
  sc.alpha_max = alpha_max;
  sc.one_minus_abar.assign(T + 1, 0.0);
  sc.abar.assign(T + 1, 1.0);
  sc.alpha.assign(T + 1, 1.0);
  sc.beta.assign(T + 1, 0.0);
  sc.posterior_var.assign(T + 1, 0.0);

  for (int t = 1; t <= T; ++t) {
    double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    sc.one_minus_abar[t] = s * (alpha_min + frac * (alpha_max - alpha_min));
    sc.abar[t] = 1.0 - sc.one_minus_abar[t];
    sc.alpha[t] = sc.abar[t] / sc.abar[t - 1];
    sc.beta[t] = 1.0 - sc.alpha[t];
    if (t >= 2 && s > 0.0)
      sc.posterior_var[t] =
          (1.0 - sc.alpha[t]) * sc.one_minus_abar[t - 1] / sc.one_minus_abar[t];
  }
  for (int t = 1; t <= T; ++t) {
    check_finite(sc.abar[t], "schedule abar");
    if (!(sc.abar[t] > 0.0 && sc.abar[t] <= 1.0))
      throw ConfigError("schedule produced abar outside (0, 1]");
  }
  return sc;
}

static void check_t(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T)
    throw UsageError("step index " + std::to_string(t) + " outside 1.." +
                     std::to_string(sched.T));
}

DenseMatrix q_sample(const NoiseSchedule& sched, const DenseMatrix& x0, int t,
                     const DenseMatrix& eps) {
  check_t(sched, t);
  if (!eps.same_shape(x0))
    throw ConfigError("q_sample: eps shape " + eps.shape_str() +
                      " does not match x0 " + x0.shape_str());
  double a = std::sqrt(sched.abar[t]);
  double b = std::sqrt(sched.one_minus_abar[t]);
  DenseMatrix out = x0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = a * out.data[i] + b * eps.data[i];
  return out;
}

void posterior_coeffs(const NoiseSchedule& sched, int t, double& c_xt, double& c_x0) {
  check_t(sched, t);
  if (t < 2) throw UsageError("posterior mean undefined at t = 1; use the reconstruction step");
  if (sched.noiseless())
    throw UsageError("posterior mean undefined for the noise-free schedule");
  double denom = sched.one_minus_abar[t];
  c_xt = std::sqrt(sched.alpha[t]) * sched.one_minus_abar[t - 1] / denom;
  c_x0 = std::sqrt(sched.abar[t - 1]) * sched.beta[t] / denom;
}

DenseMatrix posterior_mean(const NoiseSchedule& sched, const DenseMatrix& x_t,
                           const DenseMatrix& x0, int t) {
  if (!x_t.same_shape(x0))
    throw ConfigError("posterior_mean: shape mismatch " + x_t.shape_str() + " vs " +
                      x0.shape_str());
  double c_xt, c_x0;
  posterior_coeffs(sched, t, c_xt, c_x0);
  DenseMatrix out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = c_xt * out.data[i] + c_x0 * x0.data[i];
  return out;
}

}  // namespace diffrec
