#pragma once

#include <string>
#include <vector>

namespace ternclip {

// Degradation law  delta(C, q) = alpha * C^-beta_s * (1 - q)^-gamma_s + c.
struct ScalingLawParams {
  double alpha = 0.0;
  double beta_s = 0.0;
  double gamma_s = 0.0;
  double c = 0.0;
};

struct DegradationSample {
  double C = 0.0;  // training budget, samples seen
  double q = 0.0;  // quantized proportion, [0, 1)
  double delta = 0.0;
};

struct ScalingFit {
  ScalingLawParams params;
  double residual_norm = 0.0;  // sqrt of the summed squared residuals
  std::size_t grid_points = 0;
};

struct ScalingFitOptions {
  double exponent_min = 0.05;
  double exponent_max = 3.0;
  std::size_t grid_size = 64;  // per exponent, log-spaced
};

/// Throws NumericError unless C > 0 and 0 <= q < 1.
double scaling_predict(const ScalingLawParams& p, double C, double q);

/// Least squares on delta. Every (beta_s, gamma_s) grid point gets the closed
/// form (alpha, c); points with alpha <= 0 are skipped and the first minimum
/// in grid order wins. Nelder-Mead over the log exponents then refines it.
/// Throws FormatError for fewer than 4 samples, fewer than 2 distinct C or q,
/// or samples outside the domain.
ScalingFit scaling_fit(const std::vector<DegradationSample>& samples, const ScalingFitOptions& opts = {});

/// Reads "C,q,delta" rows; a non-numeric first line is taken as a header.
std::vector<DegradationSample> parse_degradation_csv(const std::string& text);

std::string scaling_fit_text(const ScalingFit& fit, std::size_t samples);
std::string scaling_fit_csv(const ScalingFit& fit, std::size_t samples);

}  // namespace ternclip
