#pragma once

#include "rulens/ensemble.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string_view>

namespace rulens {

using ConstVectorRef = const Eigen::Ref<const Eigen::VectorXd>&;

// `paper`: exp(-d/a1) - 1 for d < 0 and exp(d/a2) - 1 for d >= 0.
// `classic`: the benchmark's usual assignment, a1 and a2 swapped.
enum class ScoreConvention { paper, classic };
std::string_view to_string(ScoreConvention convention);
ScoreConvention score_convention_from_string(std::string_view text);

double rmse(ConstVectorRef predictions, ConstVectorRef targets);

// d = prediction - target, summed over samples.
double nasa_score(ConstVectorRef predictions, ConstVectorRef targets, double a1 = 10.0,
                  double a2 = 13.0, ScoreConvention convention = ScoreConvention::paper);

// Standard normal quantile. Acklam's rational approximation (relative error
// below 1.2e-9) followed by one Halley step against std::erfc.
double normal_quantile(double p);

struct IntervalBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Central interval mu +/- z sigma with z = quantile((1 + alpha) / 2).
IntervalBounds interval_bounds(ConstVectorRef mu, ConstVectorRef var, double alpha);

// Fraction of targets with lower <= y <= upper.
double picp(const IntervalBounds& bounds, ConstVectorRef targets);

// Mean width over (max(y) - min(y)); throws when the targets are constant.
double nmpiw(const IntervalBounds& bounds, ConstVectorRef targets);

struct DensityCurve {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
  double bandwidth = 0.0;
};

// Gaussian kernel, Silverman bandwidth 1.06 * sd * N^(-1/5) with the
// sample (N - 1) standard deviation, grid over [min - 4h, max + 4h].
DensityCurve kde(ConstVectorRef values, Eigen::Index grid_size = 512);

struct MetricReport {
  double rmse = 0.0;
  double score = 0.0;
  double picp = 0.0;
  // Undefined (empty) when every target is equal, e.g. a single test unit.
  std::optional<double> nmpiw;
  Eigen::Index n = 0;
  double alpha = 0.95;
  ScoreConvention convention = ScoreConvention::paper;
};

MetricReport evaluate_predictions(ConstVectorRef mu, ConstVectorRef var, ConstVectorRef targets,
                                  double alpha = 0.95,
                                  ScoreConvention convention = ScoreConvention::paper);

struct UnitPrediction {
  int unit_id = 0;
  double true_rul = 0.0;
  LastStepView last;
};

// Last-step ensemble predictions for every unit; units must carry
// true_final_rul.
std::vector<UnitPrediction> predict_units(const EnsembleModel& model,
                                          std::span<const FeatureSeries> units);

MetricReport evaluate_on_test(const EnsembleModel& model, std::span<const FeatureSeries> units,
                              double alpha = 0.95,
                              ScoreConvention convention = ScoreConvention::paper);

}  // namespace rulens
