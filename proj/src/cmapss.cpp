#include "rulens/cmapss.hpp"

#include "rulens/error.hpp"
#include "rulens/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace rulens {

namespace {

bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

bool as_integer(double value, int& out) {
  if (value != std::floor(value) || std::abs(value) > 1e9) return false;
  out = static_cast<int>(value);
  return true;
}

// Splits on blanks and tabs; returns the number of tokens written, stopping
// one past `tokens.size()` so callers can detect overflow.
std::size_t split_fields(std::string_view line,
                         std::array<std::string_view, kCmapssColumns>& tokens) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
    if (count == tokens.size()) return count + 1;
    tokens[count++] = line.substr(pos, end - pos);
    pos = end;
  }
  return count;
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace

std::vector<UnitSeries> parse_cmapss(std::istream& in, const std::string& source_name) {
  struct Row {
    int cycle;
    std::size_t line;
    std::array<double, kSettingCount + kSensorCount> values;
  };
  std::map<int, std::vector<Row>> rows_by_unit;

  std::string line;
  std::size_t line_no = 0;
  std::array<std::string_view, kCmapssColumns> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const std::size_t n = split_fields(line, tokens);
    if (n != static_cast<std::size_t>(kCmapssColumns)) {
      throw ParseError(source_name, line_no,
                       "expected " + std::to_string(kCmapssColumns) + " fields, found " +
                           (n > tokens.size() ? std::string("more") : std::to_string(n)));
    }
    std::array<double, kCmapssColumns> numbers{};
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (!parse_double(tokens[k], numbers[k])) {
        throw ParseError(source_name, line_no,
                         "field " + std::to_string(k + 1) + " is not numeric: '" +
                             std::string(tokens[k]) + "'");
      }
    }
    int unit = 0;
    int cycle = 0;
    if (!as_integer(numbers[0], unit) || unit < 1) {
      throw ParseError(source_name, line_no, "unit id must be a positive integer");
    }
    if (!as_integer(numbers[1], cycle)) {
      throw ParseError(source_name, line_no, "cycle must be an integer");
    }
    Row row{cycle, line_no, {}};
    std::copy(numbers.begin() + 2, numbers.end(), row.values.begin());
    rows_by_unit[unit].push_back(row);
  }

  std::vector<UnitSeries> units;
  units.reserve(rows_by_unit.size());
  for (const auto& [unit_id, rows] : rows_by_unit) {
    const auto T = static_cast<Eigen::Index>(rows.size());
    UnitSeries unit;
    unit.unit_id = unit_id;
    unit.cycles.resize(T);
    unit.op_settings.resize(T, kSettingCount);
    unit.sensors.resize(T, kSensorCount);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Row& row = rows[static_cast<std::size_t>(t)];
      if (row.cycle != t + 1) {
        throw IntegrityError(source_name + ":" + std::to_string(row.line) + ": unit " +
                             std::to_string(unit_id) + " expected cycle " +
                             std::to_string(t + 1) + ", found " + std::to_string(row.cycle));
      }
      unit.cycles(t) = row.cycle;
      for (int k = 0; k < kSettingCount; ++k) unit.op_settings(t, k) = row.values[k];
      for (int k = 0; k < kSensorCount; ++k)
        unit.sensors(t, k) = row.values[kSettingCount + k];
    }
    units.push_back(std::move(unit));
  }
  return units;
}

std::vector<UnitSeries> parse_cmapss_file(const std::string& path) {
  auto in = open_or_throw(path);
  return parse_cmapss(in, path);
}

void write_cmapss(std::ostream& out, const std::vector<UnitSeries>& units) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& unit : units) {
    for (Eigen::Index t = 0; t < unit.length(); ++t) {
      out << unit.unit_id << ' ' << unit.cycles(t);
      for (int k = 0; k < kSettingCount; ++k) out << ' ' << unit.op_settings(t, k);
      for (int k = 0; k < kSensorCount; ++k) out << ' ' << unit.sensors(t, k);
      out << '\n';
    }
  }
  out.precision(old_precision);
}

void load_true_rul(std::istream& in, std::vector<UnitSeries>& units,
                   const std::string& source_name) {
  std::vector<int> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    std::string extra;
    double value = 0.0;
    int rul = 0;
    if (!parse_double(token, value) || !as_integer(value, rul) || rul < 0 || (fields >> extra)) {
      throw ParseError(source_name, line_no, "expected one nonnegative integer RUL");
    }
    values.push_back(rul);
  }
  if (values.size() != units.size()) {
    throw IntegrityError(source_name + ": " + std::to_string(values.size()) +
                         " RUL values for " + std::to_string(units.size()) + " units");
  }
  for (std::size_t k = 0; k < units.size(); ++k) units[k].true_final_rul = values[k];
}

void load_true_rul_file(const std::string& path, std::vector<UnitSeries>& units) {
  auto in = open_or_throw(path);
  load_true_rul(in, units, path);
}

namespace {

std::set<int> checked_index_set(const std::vector<int>& indices, int upper, const char* what) {
  std::set<int> out;
  for (int k : indices) {
    if (k < 1 || k > upper) {
      throw ArgumentError(std::string(what) + " index " + std::to_string(k) + " outside 1.." +
                          std::to_string(upper));
    }
    out.insert(k);
  }
  return out;
}

}  // namespace

FeatureSet drop_sensors(const std::vector<UnitSeries>& units,
                        const std::vector<int>& dropped_sensors,
                        const std::vector<int>& dropped_settings) {
  const auto sensors_out = checked_index_set(dropped_sensors, kSensorCount, "sensor");
  const auto settings_out = checked_index_set(dropped_settings, kSettingCount, "setting");

  FeatureSet set;
  set.layout.dropped_sensors.assign(sensors_out.begin(), sensors_out.end());
  set.layout.dropped_settings.assign(settings_out.begin(), settings_out.end());
  std::vector<int> kept_settings;
  std::vector<int> kept_sensors;
  for (int k = 1; k <= kSettingCount; ++k) {
    if (settings_out.count(k)) continue;
    kept_settings.push_back(k);
    set.layout.names.push_back("setting" + std::to_string(k));
  }
  for (int k = 1; k <= kSensorCount; ++k) {
    if (sensors_out.count(k)) continue;
    kept_sensors.push_back(k);
    set.layout.names.push_back("s" + std::to_string(k));
  }

  const Eigen::Index width = set.layout.size();
  set.units.reserve(units.size());
  for (const auto& unit : units) {
    FeatureSeries series;
    series.unit_id = unit.unit_id;
    series.true_final_rul = unit.true_final_rul;
    series.values.resize(unit.length(), width);
    Eigen::Index col = 0;
    for (int k : kept_settings) series.values.col(col++) = unit.op_settings.col(k - 1);
    for (int k : kept_sensors) series.values.col(col++) = unit.sensors.col(k - 1);
    set.units.push_back(std::move(series));
  }
  return set;
}

NormStats fit_norm_stats(const FeatureSet& train) {
  const Eigen::Index width = train.layout.size();
  Eigen::Index rows = 0;
  for (const auto& unit : train.units) rows += unit.length();
  if (rows < 2) throw ArgumentError("need at least 2 training rows to fit normalization");

  NormStats stats;
  stats.names = train.layout.names;
  stats.mean = Eigen::VectorXd::Zero(width);
  for (const auto& unit : train.units) stats.mean += unit.values.colwise().sum().transpose();
  stats.mean /= static_cast<double>(rows);

  Eigen::VectorXd sq = Eigen::VectorXd::Zero(width);
  for (const auto& unit : train.units) {
    sq += (unit.values.rowwise() - stats.mean.transpose()).array().square().matrix().colwise().sum().transpose();
  }
  stats.std = (sq / static_cast<double>(rows)).cwiseSqrt();

  for (Eigen::Index k = 0; k < width; ++k) {
    // Relative threshold: rounding noise on a constant column is ~1e-16 * |mean|.
    const double floor = 1e-12 * std::max(1.0, std::abs(stats.mean(k)));
    if (!(stats.std(k) > floor)) {
      throw IntegrityError("feature '" + stats.names[static_cast<std::size_t>(k)] +
                           "' is constant in the training data; add it to the drop list");
    }
  }
  return stats;
}

namespace {

void check_layout(const FeatureSet& set, const NormStats& stats) {
  if (set.layout.names != stats.names) {
    throw IntegrityError("feature layout does not match normalization statistics");
  }
}

}  // namespace

FeatureSet apply_norm(const FeatureSet& set, const NormStats& stats) {
  check_layout(set, stats);
  FeatureSet out = set;
  for (auto& unit : out.units) {
    unit.values = ((unit.values.rowwise() - stats.mean.transpose()).array().rowwise() /
                   stats.std.transpose().array())
                      .matrix();
  }
  return out;
}

FeatureSet invert_norm(const FeatureSet& set, const NormStats& stats) {
  check_layout(set, stats);
  FeatureSet out = set;
  for (auto& unit : out.units) {
    unit.values = ((unit.values.array().rowwise() * stats.std.transpose().array()).rowwise() +
                   stats.mean.transpose().array())
                      .matrix();
  }
  return out;
}

Eigen::VectorXd make_rul_targets(Eigen::Index length, int rul_cap, int final_rul) {
  Eigen::VectorXd targets(length);
  for (Eigen::Index t = 0; t < length; ++t) {
    const double remaining = static_cast<double>(final_rul) + static_cast<double>(length - 1 - t);
    targets(t) = std::min(static_cast<double>(rul_cap), remaining);
  }
  return targets;
}

std::vector<Eigen::Index> window_offsets(Eigen::Index length, Eigen::Index window_length,
                                         Eigen::Index stride) {
  if (window_length < 1 || stride < 1) {
    throw ArgumentError("window_length and stride must be >= 1");
  }
  std::vector<Eigen::Index> offsets;
  for (Eigen::Index start = 0; start + window_length <= length; start += stride) {
    offsets.push_back(start);
  }
  return offsets;
}

std::vector<WindowSample> window_slices(const FeatureSeries& unit, Eigen::Index window_length,
                                        Eigen::Index stride, int rul_cap) {
  const Eigen::VectorXd targets = make_rul_targets(unit.length(), rul_cap);
  std::vector<WindowSample> windows;
  for (Eigen::Index start : window_offsets(unit.length(), window_length, stride)) {
    WindowSample w;
    w.unit_id = unit.unit_id;
    w.end_cycle = static_cast<int>(start + window_length);
    w.inputs = unit.values.middleRows(start, window_length);
    w.targets = targets.segment(start, window_length);
    windows.push_back(std::move(w));
  }
  return windows;
}

TrainingSet make_training_set(const FeatureSet& train, Eigen::Index window_length,
                              Eigen::Index stride, int rul_cap, const LogSink& log) {
  TrainingSet set;
  set.window_length = window_length;
  for (const auto& unit : train.units) {
    const auto offsets = window_offsets(unit.length(), window_length, stride);
    if (offsets.empty()) {
      if (log) {
        log("skipping training unit " + std::to_string(unit.unit_id) + ": " +
            std::to_string(unit.length()) + " cycles < window length " +
            std::to_string(window_length));
      }
      continue;
    }
    const std::size_t series = set.inputs.size();
    set.inputs.push_back(unit.values);
    set.targets.push_back(make_rul_targets(unit.length(), rul_cap));
    for (Eigen::Index start : offsets) set.windows.push_back({series, start});
  }
  return set;
}

std::string norm_fingerprint(const NormStats& stats) {
  std::uint32_t crc = 0;
  for (const auto& name : stats.names) crc = io::crc32(name + '\n', crc);
  crc = io::crc32(std::span<const double>(stats.mean.data(), static_cast<std::size_t>(stats.mean.size())), crc);
  crc = io::crc32(std::span<const double>(stats.std.data(), static_cast<std::size_t>(stats.std.size())), crc);
  return io::hex32(crc);
}

}  // namespace rulens
