#include "rulens/metrics.hpp"

#include "rulens/error.hpp"

#include <cmath>
#include <numbers>

namespace rulens {

namespace {

void check_pair(ConstVectorRef a, ConstVectorRef b) {
  if (a.size() < 1 || a.size() != b.size()) {
    throw ArgumentError("metric inputs must have equal nonzero length");
  }
}

}  // namespace

std::string_view to_string(ScoreConvention convention) {
  return convention == ScoreConvention::paper ? "paper" : "classic";
}

ScoreConvention score_convention_from_string(std::string_view text) {
  if (text == "paper") return ScoreConvention::paper;
  if (text == "classic") return ScoreConvention::classic;
  throw ArgumentError("unknown score convention '" + std::string(text) +
                      "' (expected paper or classic)");
}

double rmse(ConstVectorRef predictions, ConstVectorRef targets) {
  check_pair(predictions, targets);
  return std::sqrt((predictions - targets).squaredNorm() / static_cast<double>(targets.size()));
}

double nasa_score(ConstVectorRef predictions, ConstVectorRef targets, double a1, double a2,
                  ScoreConvention convention) {
  check_pair(predictions, targets);
  if (!(a1 > 0.0) || !(a2 > 0.0)) throw ArgumentError("score constants must be positive");
  const double early = convention == ScoreConvention::paper ? a1 : a2;
  const double late = convention == ScoreConvention::paper ? a2 : a1;
  double score = 0.0;
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    const double d = predictions(i) - targets(i);
    score += d < 0.0 ? std::expm1(-d / early) : std::expm1(d / late);
  }
  return score;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("normal_quantile needs 0 < p < 1");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement; the residual uses the upper tail above the median so
  // that p close to 1 keeps its precision.
  const double e = p <= 0.5 ? 0.5 * std::erfc(-x / std::numbers::sqrt2) - p
                            : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

IntervalBounds interval_bounds(ConstVectorRef mu, ConstVectorRef var, double alpha) {
  check_pair(mu, var);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("alpha must lie in (0, 1)");
  if ((var.array() <= 0.0).any()) throw ArgumentError("interval variances must be positive");
  const double z = normal_quantile(0.5 * (1.0 + alpha));
  const Eigen::VectorXd half = z * var.cwiseSqrt();
  return {mu - half, mu + half};
}

double picp(const IntervalBounds& bounds, ConstVectorRef targets) {
  check_pair(bounds.lower, targets);
  check_pair(bounds.upper, targets);
  Eigen::Index covered = 0;
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    if (bounds.lower(i) <= targets(i) && targets(i) <= bounds.upper(i)) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(targets.size());
}

double nmpiw(const IntervalBounds& bounds, ConstVectorRef targets) {
  check_pair(bounds.lower, targets);
  check_pair(bounds.upper, targets);
  const double range = targets.maxCoeff() - targets.minCoeff();
  if (!(range > 0.0)) throw ArgumentError("nmpiw is undefined for constant targets");
  return (bounds.upper - bounds.lower).mean() / range;
}

DensityCurve kde(ConstVectorRef values, Eigen::Index grid_size) {
  const Eigen::Index n = values.size();
  if (n < 2) throw ArgumentError("kde needs at least two values");
  if (grid_size < 2) throw ArgumentError("kde grid needs at least two points");
  const double mean = values.mean();
  const double sd = std::sqrt((values.array() - mean).square().sum() / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw ArgumentError("kde sample is degenerate (all values equal)");

  DensityCurve curve;
  curve.bandwidth = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
  const double h = curve.bandwidth;
  curve.grid = Eigen::VectorXd::LinSpaced(grid_size, values.minCoeff() - 4.0 * h,
                                          values.maxCoeff() + 4.0 * h);
  curve.density.resize(grid_size);
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  for (Eigen::Index g = 0; g < grid_size; ++g) {
    curve.density(g) =
        norm * (-0.5 * ((values.array() - curve.grid(g)) / h).square()).exp().sum();
  }
  return curve;
}

MetricReport evaluate_predictions(ConstVectorRef mu, ConstVectorRef var, ConstVectorRef targets,
                                  double alpha, ScoreConvention convention) {
  check_pair(mu, targets);
  MetricReport report;
  report.n = targets.size();
  report.alpha = alpha;
  report.convention = convention;
  report.rmse = rmse(mu, targets);
  report.score = nasa_score(mu, targets, 10.0, 13.0, convention);
  const IntervalBounds bounds = interval_bounds(mu, var, alpha);
  report.picp = picp(bounds, targets);
  if (targets.maxCoeff() > targets.minCoeff()) report.nmpiw = nmpiw(bounds, targets);
  return report;
}

std::vector<UnitPrediction> predict_units(const EnsembleModel& model,
                                          std::span<const FeatureSeries> units) {
  std::vector<UnitPrediction> out;
  out.reserve(units.size());
  for (const auto& unit : units) {
    if (!unit.true_final_rul) {
      throw ArgumentError("test unit " + std::to_string(unit.unit_id) + " has no true RUL");
    }
    out.push_back({unit.unit_id, static_cast<double>(*unit.true_final_rul),
                   last_step_view(predict_ensemble(model, unit.values))});
  }
  return out;
}

MetricReport evaluate_on_test(const EnsembleModel& model, std::span<const FeatureSeries> units,
                              double alpha, ScoreConvention convention) {
  if (units.empty()) throw ArgumentError("evaluation needs at least one test unit");
  const auto predictions = predict_units(model, units);
  const auto n = static_cast<Eigen::Index>(predictions.size());
  Eigen::VectorXd mu(n), var(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = predictions[static_cast<std::size_t>(i)];
    mu(i) = p.last.mu_star;
    var(i) = p.last.var_star;
    y(i) = p.true_rul;
  }
  return evaluate_predictions(mu, var, y, alpha, convention);
}

}  // namespace rulens
