#pragma once

// On-disk formats: the ingested dataset archive and ensemble checkpoints.
//
// Dataset archive directory:
//   manifest.json       format "rulens-dataset", version, preprocessing echo,
//                       source files, feature names, norm stats, per-unit row
//                       counts (and true RUL for test units), CRC-32 of each
//                       array file, data and normalization fingerprints
//   train_features.f64  normalized training rows, unit after unit, row-major
//   test_features.f64   normalized test rows, same layout
//
// Ensemble checkpoint directory:
//   manifest.json       format "rulens-ensemble", version, member list and
//                       seeds, architecture, training config, normalization
//                       reference, data fingerprint, checkpoint fingerprint
//   member_NNN/manifest.json  format "rulens-member": architecture, seed,
//                       training config, history, parameter layout, CRC-32
//   member_NNN/params.f64     flat parameters in declared layer order
//
// *.f64 files are raw little-endian doubles.

#include "rulens/cmapss.hpp"
#include "rulens/config.hpp"
#include "rulens/ensemble.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace rulens {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

struct DatasetArchive {
  PreprocessConfig preprocessing;
  DataPaths sources;
  NormStats norm_stats;
  FeatureSet train;  // normalized
  FeatureSet test;   // normalized, true_final_rul set
  std::string data_fingerprint;
  std::string norm_fingerprint;
};

// Parses, selects features, fits train statistics and normalizes both splits.
DatasetArchive build_dataset(const DataPaths& paths, const PreprocessConfig& preprocessing);

void save_dataset(const std::filesystem::path& dir, const DatasetArchive& archive);
DatasetArchive load_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const NormStats& stats, const FeatureLayout& layout);
std::pair<NormStats, FeatureLayout> norm_stats_from_json(const nlohmann::json& j);

struct MemberCheckpoint {
  PnnParams params;
  TrainHistory history;
  TrainConfig training;
  std::string data_fingerprint;
};

void save_member(const std::filesystem::path& dir, const MemberCheckpoint& member);
MemberCheckpoint load_member(const std::filesystem::path& dir);

// Everything needed to apply a trained ensemble to raw CMAPSS files.
struct EnsembleCheckpoint {
  EnsembleModel model;
  TrainConfig training;
  PreprocessConfig preprocessing;
  NormStats norm_stats;
  FeatureLayout layout;
  std::uint64_t base_seed = 0;
  std::string data_fingerprint;
  std::string norm_fingerprint;
  std::string fingerprint;  // over parameters, seeds, architecture and references
};

std::string member_dir_name(std::size_t index);
std::string checkpoint_fingerprint(const EnsembleCheckpoint& checkpoint);

void save_ensemble(const std::filesystem::path& dir, EnsembleCheckpoint& checkpoint);
EnsembleCheckpoint load_ensemble(const std::filesystem::path& dir);

}  // namespace rulens
