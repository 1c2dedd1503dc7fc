#pragma once

#include "rulens/metrics.hpp"
#include "rulens/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rulens {

struct DataPaths {
  std::string train_file;
  std::string test_file;
  std::string rul_file;
};

struct PreprocessConfig {
  Eigen::Index window_length = 100;
  Eigen::Index stride = 1;
  int rul_cap = 128;
  std::vector<int> dropped_sensors{1, 5, 10, 16, 18, 19};
  // Operating setting 3 never varies in FD001.
  std::vector<int> dropped_settings{3};

  bool operator==(const PreprocessConfig&) const = default;
};

struct NetworkConfig {
  std::vector<Eigen::Index> recurrent_layers{32, 16};
  std::vector<Eigen::Index> dense_layers{2};
  double output_scale = 1.0;

  Architecture architecture(Eigen::Index input_dim) const;
};

struct EnsembleConfig {
  int members = 15;
  std::uint64_t base_seed = 237;
};

struct EvaluationConfig {
  double alpha = 0.95;
  ScoreConvention score_convention = ScoreConvention::paper;
  bool last_step_only = true;
};

struct UncertaintyDataset {
  std::string name;
  std::string test_file;
};

struct UncertaintyConfig {
  std::vector<UncertaintyDataset> datasets;
  bool per_window = false;
  Eigen::Index grid_size = 512;
};

// Everything a run needs. Defaults reproduce the published experiment.
struct RunConfig {
  std::string profile = "paper";
  DataPaths data;
  PreprocessConfig preprocessing;
  NetworkConfig network;
  TrainConfig training;
  EnsembleConfig ensemble;
  EvaluationConfig evaluation;
  UncertaintyConfig uncertainty;
  std::string output_dir = "rulens_out";
  int threads = 1;

  void validate() const;
};

inline constexpr int kConfigSchemaVersion = 1;

// Unknown keys are rejected; missing keys keep their defaults. Relative data
// and output paths are resolved against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

nlohmann::json to_json(const Architecture& architecture);
Architecture architecture_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PreprocessConfig& config);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);

}  // namespace rulens
