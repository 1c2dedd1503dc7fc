#pragma once

#include "rulens/nn.hpp"

#include <Eigen/Dense>

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rulens {

inline constexpr int kSettingCount = 3;
inline constexpr int kSensorCount = 21;
inline constexpr int kCmapssColumns = 2 + kSettingCount + kSensorCount;

// One engine unit as it appears in a CMAPSS text file.
struct UnitSeries {
  int unit_id = 0;
  Eigen::VectorXi cycles;       // 1, 2, ..., T
  Eigen::MatrixXd op_settings;  // T x 3
  Eigen::MatrixXd sensors;      // T x 21
  // Test sets only: cycles remaining after the last recorded cycle.
  std::optional<int> true_final_rul;

  Eigen::Index length() const { return cycles.size(); }
};

// Column names of a feature matrix; op settings first, then sensors in
// ascending index.
struct FeatureLayout {
  std::vector<std::string> names;
  std::vector<int> dropped_sensors;
  std::vector<int> dropped_settings;

  Eigen::Index size() const { return static_cast<Eigen::Index>(names.size()); }
  bool operator==(const FeatureLayout&) const = default;
};

// A unit after feature selection (and possibly normalization).
struct FeatureSeries {
  int unit_id = 0;
  Eigen::MatrixXd values;  // T x n_features
  std::optional<int> true_final_rul;

  Eigen::Index length() const { return values.rows(); }
};

struct FeatureSet {
  FeatureLayout layout;
  std::vector<FeatureSeries> units;
};

struct NormStats {
  std::vector<std::string> names;
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // population convention, strictly positive
};

struct WindowSample {
  int unit_id = 0;
  int end_cycle = 0;
  Eigen::MatrixXd inputs;   // window_length x n_features
  Eigen::VectorXd targets;  // window_length
};

// Parses whitespace-separated 26-column CMAPSS rows. `source_name` is only
// used in error messages. Units come back in ascending id order.
std::vector<UnitSeries> parse_cmapss(std::istream& in,
                                     const std::string& source_name = "<input>");
std::vector<UnitSeries> parse_cmapss_file(const std::string& path);

// Writes units back in the 26-column layout with round-trip precision.
void write_cmapss(std::ostream& out, const std::vector<UnitSeries>& units);

// Assigns one ground-truth RUL line per unit, in unit order.
void load_true_rul(std::istream& in, std::vector<UnitSeries>& units,
                   const std::string& source_name = "<input>");
void load_true_rul_file(const std::string& path, std::vector<UnitSeries>& units);

inline const std::vector<int>& default_dropped_sensors() {
  static const std::vector<int> kDropped{1, 5, 10, 16, 18, 19};
  return kDropped;
}

// Removes the listed sensors (1-based, 1..21) and operating settings (1..3)
// and flattens what remains into one feature matrix per unit.
FeatureSet drop_sensors(const std::vector<UnitSeries>& units,
                        const std::vector<int>& dropped_sensors,
                        const std::vector<int>& dropped_settings = {});

NormStats fit_norm_stats(const FeatureSet& train);
FeatureSet apply_norm(const FeatureSet& set, const NormStats& stats);
FeatureSet invert_norm(const FeatureSet& set, const NormStats& stats);

// Piecewise-linear target: min(rul_cap, final_rul + (T - 1 - t)) for row t.
// `final_rul` is zero for run-to-failure units.
Eigen::VectorXd make_rul_targets(Eigen::Index length, int rul_cap,
                                 int final_rul = 0);

// Row offsets 0, stride, 2*stride, ... of every full-length window.
std::vector<Eigen::Index> window_offsets(Eigen::Index length,
                                         Eigen::Index window_length,
                                         Eigen::Index stride);

// Materializes the windows of one run-to-failure unit.
std::vector<WindowSample> window_slices(const FeatureSeries& unit,
                                        Eigen::Index window_length,
                                        Eigen::Index stride, int rul_cap);

// Windows of every run-to-failure unit with length >= window_length; shorter
// units are skipped and reported through `log`.
TrainingSet make_training_set(const FeatureSet& train, Eigen::Index window_length,
                              Eigen::Index stride, int rul_cap, const LogSink& log = {});

// Stable fingerprint (hex CRC-32) of the normalization reference.
std::string norm_fingerprint(const NormStats& stats);

}  // namespace rulens
