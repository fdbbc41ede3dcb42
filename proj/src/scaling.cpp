#include "ternclip/scaling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ternclip/error.hpp"

namespace ternclip {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct InnerFit {
  double alpha = 0.0;
  double c = 0.0;
  double sse = kInf;
};

// Best (alpha, c) for fixed exponents; sse stays infinite when alpha <= 0 or
// the design is singular.
InnerFit solve_linear(const std::vector<DegradationSample>& s, double beta_s, double gamma_s) {
  const auto n = static_cast<double>(s.size());
  std::vector<double> x(s.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    x[i] = std::pow(s[i].C, -beta_s) * std::pow(1.0 - s[i].q, -gamma_s);
    mx += x[i];
    my += s[i].delta;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (s[i].delta - my);
  }
  InnerFit f;
  if (!(sxx > 0.0) || !std::isfinite(sxx)) return f;
  f.alpha = sxy / sxx;
  f.c = my - f.alpha * mx;
  if (!(f.alpha > 0.0)) return f;
  double sse = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double r = f.alpha * x[i] + f.c - s[i].delta;
    sse += r * r;
  }
  f.sse = std::isfinite(sse) ? sse : kInf;
  return f;
}

void validate_samples(const std::vector<DegradationSample>& samples) {
  if (samples.size() < 4) throw FormatError("scaling_fit: need at least 4 samples, got " + std::to_string(samples.size()));
  std::set<double> cs, qs;
  for (const auto& s : samples) {
    if (!(s.C > 0.0) || !std::isfinite(s.C)) throw FormatError("scaling_fit: C must be finite and > 0");
    if (!(s.q >= 0.0 && s.q < 1.0)) throw FormatError("scaling_fit: q must lie in [0, 1)");
    if (!std::isfinite(s.delta)) throw FormatError("scaling_fit: delta must be finite");
    cs.insert(s.C);
    qs.insert(s.q);
  }
  if (cs.size() < 2) throw FormatError("scaling_fit: degenerate samples, need at least 2 distinct C");
  if (qs.size() < 2) throw FormatError("scaling_fit: degenerate samples, need at least 2 distinct q");
}

using Point = std::array<double, 2>;

// Nelder-Mead with standard coefficients over (log beta_s, log gamma_s).
template <typename F>
Point nelder_mead(F&& f, Point start, double step, int max_iter) {
  std::array<Point, 3> x{start, start, start};
  x[1][0] += step;
  x[2][1] += step;
  std::array<double, 3> fx{f(x[0]), f(x[1]), f(x[2])};
  for (int it = 0; it < max_iter; ++it) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    const int best = idx[0], mid = idx[1], worst = idx[2];
    if (std::abs(fx[worst] - fx[best]) <= 1e-30 + 1e-15 * std::abs(fx[best]) &&
        std::max(std::abs(x[worst][0] - x[best][0]), std::abs(x[worst][1] - x[best][1])) < 1e-12) {
      break;
    }
    Point centroid{(x[best][0] + x[mid][0]) / 2.0, (x[best][1] + x[mid][1]) / 2.0};
    auto along = [&](double t) {
      return Point{centroid[0] + t * (x[worst][0] - centroid[0]), centroid[1] + t * (x[worst][1] - centroid[1])};
    };
    const Point r = along(-1.0);
    const double fr = f(r);
    if (fr < fx[best]) {
      const Point e = along(-2.0);
      const double fe = f(e);
      if (fe < fr) {
        x[worst] = e;
        fx[worst] = fe;
      } else {
        x[worst] = r;
        fx[worst] = fr;
      }
      continue;
    }
    if (fr < fx[mid]) {
      x[worst] = r;
      fx[worst] = fr;
      continue;
    }
    const Point k = fr < fx[worst] ? along(-0.5) : along(0.5);
    const double fk = f(k);
    if (fk < std::min(fr, fx[worst])) {
      x[worst] = k;
      fx[worst] = fk;
      continue;
    }
    for (int i : {mid, worst}) {
      x[i] = Point{x[best][0] + 0.5 * (x[i][0] - x[best][0]), x[best][1] + 0.5 * (x[i][1] - x[best][1])};
      fx[i] = f(x[i]);
    }
  }
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    if (fx[i] < fx[best]) best = i;
  }
  return x[best];
}

}  // namespace

double scaling_predict(const ScalingLawParams& p, double C, double q) {
  if (!(C > 0.0)) throw NumericError("scaling_predict: C must be > 0");
  if (!(q >= 0.0 && q < 1.0)) throw NumericError("scaling_predict: q must lie in [0, 1)");
  return p.alpha * std::pow(C, -p.beta_s) * std::pow(1.0 - q, -p.gamma_s) + p.c;
}

ScalingFit scaling_fit(const std::vector<DegradationSample>& samples, const ScalingFitOptions& opts) {
  validate_samples(samples);
  if (!(opts.exponent_min > 0.0) || !(opts.exponent_max > opts.exponent_min) || opts.grid_size < 2) {
    throw ConfigError("scaling_fit: bad grid options");
  }
  const double lo = std::log(opts.exponent_min), hi = std::log(opts.exponent_max);
  const double h = (hi - lo) / static_cast<double>(opts.grid_size - 1);

  double best_sse = kInf;
  Point best{};
  for (std::size_t i = 0; i < opts.grid_size; ++i) {
    for (std::size_t j = 0; j < opts.grid_size; ++j) {
      const Point p{lo + h * static_cast<double>(i), lo + h * static_cast<double>(j)};
      const double sse = solve_linear(samples, std::exp(p[0]), std::exp(p[1])).sse;
      if (sse < best_sse) {
        best_sse = sse;
        best = p;
      }
    }
  }
  if (!std::isfinite(best_sse)) throw NumericError("scaling_fit: no grid point gives a positive alpha");

  auto objective = [&](const Point& p) {
    if (std::abs(p[0]) > 10.0 || std::abs(p[1]) > 10.0) return kInf;
    return solve_linear(samples, std::exp(p[0]), std::exp(p[1])).sse;
  };
  Point refined = best;
  for (int restart = 0; restart < 4; ++restart) refined = nelder_mead(objective, refined, h / 2.0, 4000);
  if (objective(refined) > best_sse) refined = best;

  ScalingFit fit;
  fit.params.beta_s = std::exp(refined[0]);
  fit.params.gamma_s = std::exp(refined[1]);
  const InnerFit inner = solve_linear(samples, fit.params.beta_s, fit.params.gamma_s);
  fit.params.alpha = inner.alpha;
  fit.params.c = inner.c;
  fit.residual_norm = std::sqrt(inner.sse);
  fit.grid_points = opts.grid_size * opts.grid_size;
  return fit;
}

std::vector<DegradationSample> parse_degradation_csv(const std::string& text) {
  std::vector<DegradationSample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::array<double, 3> v{};
    std::istringstream fields(line);
    std::string cell;
    std::size_t n = 0;
    bool numeric = true;
    while (std::getline(fields, cell, ',')) {
      if (n == 3) throw FormatError("line " + std::to_string(lineno) + ": expected 3 columns C,q,delta");
      try {
        std::size_t used = 0;
        v[n] = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      ++n;
    }
    if (!numeric && out.empty() && lineno == 1) continue;
    if (!numeric || n != 3) throw FormatError("line " + std::to_string(lineno) + ": expected 3 numeric columns C,q,delta");
    out.push_back({v[0], v[1], v[2]});
  }
  return out;
}

std::string scaling_fit_text(const ScalingFit& fit, std::size_t samples) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "delta(C, q) = alpha * C^-beta_s * (1 - q)^-gamma_s + c\n"
                "samples        %zu\n"
                "alpha          %.9g\n"
                "beta_s         %.9g\n"
                "gamma_s        %.9g\n"
                "c              %.9g\n"
                "residual_norm  %.9g\n",
                samples, fit.params.alpha, fit.params.beta_s, fit.params.gamma_s, fit.params.c, fit.residual_norm);
  return buf;
}

std::string scaling_fit_csv(const ScalingFit& fit, std::size_t samples) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "samples,alpha,beta_s,gamma_s,c,residual_norm\n%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                samples, fit.params.alpha, fit.params.beta_s, fit.params.gamma_s, fit.params.c, fit.residual_norm);
  return buf;
}

}  // namespace ternclip
