#include "rulens/store.hpp"

#include "rulens/error.hpp"
#include "rulens/io.hpp"

#include <cstdio>

namespace rulens {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_manifest(const fs::path& path, const char* format, int version) {
  if (!fs::exists(path)) throw IoError("missing manifest " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != format) {
    throw IntegrityError(path.string() + ": not a " + std::string(format) + " manifest");
  }
  if (j.value("version", 0) != version) {
    throw IntegrityError(path.string() + ": unsupported version " +
                         std::to_string(j.value("version", 0)));
  }
  return j;
}

void write_manifest(const fs::path& path, const json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

// Rows of every unit stacked, row-major, into one flat array.
std::vector<double> flatten_rows(const FeatureSet& set) {
  std::vector<double> flat;
  for (const auto& unit : set.units) {
    for (Eigen::Index t = 0; t < unit.values.rows(); ++t) {
      for (Eigen::Index k = 0; k < unit.values.cols(); ++k) flat.push_back(unit.values(t, k));
    }
  }
  return flat;
}

json units_json(const FeatureSet& set) {
  json units = json::array();
  for (const auto& u : set.units) {
    json e = {{"unit_id", u.unit_id}, {"rows", u.length()}};
    if (u.true_final_rul) e["true_final_rul"] = *u.true_final_rul;
    units.push_back(e);
  }
  return units;
}

FeatureSet unflatten(const json& units, const std::vector<double>& flat, const FeatureLayout& layout,
                     const std::string& what) {
  FeatureSet set;
  set.layout = layout;
  const Eigen::Index width = layout.size();
  std::size_t pos = 0;
  for (const auto& e : units) {
    FeatureSeries s;
    s.unit_id = e.at("unit_id").get<int>();
    const auto rows = e.at("rows").get<Eigen::Index>();
    if (e.contains("true_final_rul")) s.true_final_rul = e.at("true_final_rul").get<int>();
    if (pos + static_cast<std::size_t>(rows * width) > flat.size()) {
      throw IntegrityError(what + ": array shorter than the manifest's row counts");
    }
    s.values.resize(rows, width);
    for (Eigen::Index t = 0; t < rows; ++t)
      for (Eigen::Index k = 0; k < width; ++k) s.values(t, k) = flat[pos++];
    set.units.push_back(std::move(s));
  }
  if (pos != flat.size()) throw IntegrityError(what + ": array longer than the manifest's row counts");
  return set;
}

std::string data_fingerprint_of(const std::vector<double>& train_flat,
                                const PreprocessConfig& preprocessing, const FeatureLayout& layout) {
  std::uint32_t crc = io::crc32(to_json(preprocessing).dump());
  for (const auto& name : layout.names) crc = io::crc32(name + '\n', crc);
  crc = io::crc32(std::span<const double>(train_flat), crc);
  return io::hex32(crc);
}

std::vector<double> read_checked(const fs::path& path, const json& manifest_entry) {
  const auto values = io::read_f64(path);
  const std::string expected = manifest_entry.get<std::string>();
  if (io::hex32(io::crc32(std::span<const double>(values))) != expected) {
    throw IntegrityError(path.string() + ": checksum mismatch");
  }
  return values;
}

}  // namespace

json to_json(const NormStats& stats, const FeatureLayout& layout) {
  return {{"names", stats.names},
          {"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
          {"std", std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size())},
          {"dropped_sensors", layout.dropped_sensors},
          {"dropped_settings", layout.dropped_settings}};
}

std::pair<NormStats, FeatureLayout> norm_stats_from_json(const json& j) {
  NormStats stats;
  FeatureLayout layout;
  stats.names = j.at("names").get<std::vector<std::string>>();
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != stats.names.size() || sd.size() != stats.names.size()) {
    throw IntegrityError("normalization statistics have inconsistent lengths");
  }
  stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  stats.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  layout.names = stats.names;
  layout.dropped_sensors = j.at("dropped_sensors").get<std::vector<int>>();
  layout.dropped_settings = j.at("dropped_settings").get<std::vector<int>>();
  return {stats, layout};
}

// ---------------------------------------------------------------------------
// Dataset archive

DatasetArchive build_dataset(const DataPaths& paths, const PreprocessConfig& preprocessing) {
  for (const auto* p : {&paths.train_file, &paths.test_file, &paths.rul_file}) {
    if (p->empty()) throw ArgumentError("config must name train_file, test_file and rul_file");
    if (!fs::exists(*p)) throw IoError("input file not found: " + *p);
  }
  auto train_units = parse_cmapss_file(paths.train_file);
  auto test_units = parse_cmapss_file(paths.test_file);
  load_true_rul_file(paths.rul_file, test_units);

  DatasetArchive archive;
  archive.preprocessing = preprocessing;
  archive.sources = paths;
  const FeatureSet train =
      drop_sensors(train_units, preprocessing.dropped_sensors, preprocessing.dropped_settings);
  archive.norm_stats = fit_norm_stats(train);
  archive.train = apply_norm(train, archive.norm_stats);
  archive.test = apply_norm(
      drop_sensors(test_units, preprocessing.dropped_sensors, preprocessing.dropped_settings),
      archive.norm_stats);
  archive.norm_fingerprint = norm_fingerprint(archive.norm_stats);
  archive.data_fingerprint =
      data_fingerprint_of(flatten_rows(archive.train), preprocessing, archive.train.layout);
  return archive;
}

void save_dataset(const fs::path& dir, const DatasetArchive& archive) {
  fs::create_directories(dir);
  const auto train_flat = flatten_rows(archive.train);
  const auto test_flat = flatten_rows(archive.test);
  io::write_f64(dir / "train_features.f64", train_flat);
  io::write_f64(dir / "test_features.f64", test_flat);

  std::size_t windows = 0;
  for (const auto& u : archive.train.units) {
    windows += window_offsets(u.length(), archive.preprocessing.window_length,
                              archive.preprocessing.stride)
                   .size();
  }
  const json manifest = {
      {"format", "rulens-dataset"},
      {"version", kDatasetFormatVersion},
      {"preprocessing", to_json(archive.preprocessing)},
      {"sources",
       {{"train_file", archive.sources.train_file},
        {"test_file", archive.sources.test_file},
        {"rul_file", archive.sources.rul_file}}},
      {"norm_stats", to_json(archive.norm_stats, archive.train.layout)},
      {"train",
       {{"units", units_json(archive.train)},
        {"features_file", "train_features.f64"},
        {"crc32", io::hex32(io::crc32(std::span<const double>(train_flat)))},
        {"window_count", windows}}},
      {"test",
       {{"units", units_json(archive.test)},
        {"features_file", "test_features.f64"},
        {"crc32", io::hex32(io::crc32(std::span<const double>(test_flat)))}}},
      {"data_fingerprint", archive.data_fingerprint},
      {"norm_fingerprint", archive.norm_fingerprint},
  };
  write_manifest(dir / "manifest.json", manifest);
}

DatasetArchive load_dataset(const fs::path& dir) {
  const json m = read_manifest(dir / "manifest.json", "rulens-dataset", kDatasetFormatVersion);
  DatasetArchive archive;
  try {
    archive.preprocessing = preprocess_config_from_json(m.at("preprocessing"));
    const auto& src = m.at("sources");
    archive.sources = {src.at("train_file").get<std::string>(), src.at("test_file").get<std::string>(),
                       src.at("rul_file").get<std::string>()};
    auto [stats, layout] = norm_stats_from_json(m.at("norm_stats"));
    archive.norm_stats = std::move(stats);
    const auto train_flat = read_checked(dir / "train_features.f64", m.at("train").at("crc32"));
    const auto test_flat = read_checked(dir / "test_features.f64", m.at("test").at("crc32"));
    archive.train = unflatten(m.at("train").at("units"), train_flat, layout, "train_features.f64");
    archive.test = unflatten(m.at("test").at("units"), test_flat, layout, "test_features.f64");
    archive.data_fingerprint = m.at("data_fingerprint").get<std::string>();
    archive.norm_fingerprint = m.at("norm_fingerprint").get<std::string>();
  } catch (const json::exception& e) {
    throw IntegrityError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (norm_fingerprint(archive.norm_stats) != archive.norm_fingerprint) {
    throw IntegrityError(dir.string() + ": normalization fingerprint mismatch");
  }
  return archive;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json history_json(const TrainHistory& h) {
  return {{"epoch_loss", h.epoch_loss},
          {"stop_epoch", h.stop_epoch},
          {"best_epoch", h.best_epoch},
          {"stop_reason", std::string(to_string(h.stop_reason))},
          {"clipped_steps", h.clipped_steps}};
}

TrainHistory history_from_json(const json& j) {
  TrainHistory h;
  h.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  h.stop_epoch = j.at("stop_epoch").get<int>();
  h.best_epoch = j.at("best_epoch").get<int>();
  h.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
  h.clipped_steps = j.at("clipped_steps").get<std::int64_t>();
  return h;
}

json layout_json(const Architecture& a) {
  json layers = json::array();
  Eigen::Index in = a.input_dim;
  for (std::size_t k = 0; k < a.recurrent_layers.size(); ++k) {
    const auto h = a.recurrent_layers[k];
    const std::string p = "lstm" + std::to_string(k);
    layers.push_back({{"name", p + ".input_weights"}, {"shape", {4 * h, in}}});
    layers.push_back({{"name", p + ".recurrent_weights"}, {"shape", {4 * h, h}}});
    layers.push_back({{"name", p + ".bias"}, {"shape", {4 * h}}});
    in = h;
  }
  for (std::size_t k = 0; k < a.dense_layers.size(); ++k) {
    const auto n = a.dense_layers[k];
    const std::string p = "dense" + std::to_string(k);
    layers.push_back({{"name", p + ".weights"}, {"shape", {n, in}}});
    layers.push_back({{"name", p + ".bias"}, {"shape", {n}}});
    in = n;
  }
  return layers;
}

std::uint32_t params_crc(const PnnParams& p) {
  return io::crc32(std::span<const double>(p.values().data(), static_cast<std::size_t>(p.size())));
}

}  // namespace

void save_member(const fs::path& dir, const MemberCheckpoint& member) {
  fs::create_directories(dir);
  const PnnParams& p = member.params;
  io::write_f64(dir / "params.f64",
                std::span<const double>(p.values().data(), static_cast<std::size_t>(p.size())));
  const json manifest = {
      {"format", "rulens-member"},
      {"version", kCheckpointFormatVersion},
      {"seed", p.seed()},
      {"architecture", to_json(p.architecture())},
      {"training", to_json(member.training)},
      {"history", history_json(member.history)},
      {"data_fingerprint", member.data_fingerprint},
      {"parameter_count", p.size()},
      {"layout", layout_json(p.architecture())},
      {"params_file", "params.f64"},
      {"crc32", io::hex32(params_crc(p))},
  };
  write_manifest(dir / "manifest.json", manifest);
}

MemberCheckpoint load_member(const fs::path& dir) {
  const json m = read_manifest(dir / "manifest.json", "rulens-member", kCheckpointFormatVersion);
  try {
    const Architecture arch = architecture_from_json(m.at("architecture"));
    MemberCheckpoint member{PnnParams(arch, m.at("seed").get<std::uint64_t>()),
                            history_from_json(m.at("history")),
                            train_config_from_json(m.at("training")),
                            m.at("data_fingerprint").get<std::string>()};
    const auto values = read_checked(dir / "params.f64", m.at("crc32"));
    if (static_cast<Eigen::Index>(values.size()) != member.params.size()) {
      throw IntegrityError(dir.string() + ": parameter count does not match architecture");
    }
    member.params.values() =
        Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    if (!member.params.all_finite()) throw IntegrityError(dir.string() + ": non-finite parameters");
    return member;
  } catch (const json::exception& e) {
    throw IntegrityError((dir / "manifest.json").string() + ": " + e.what());
  }
}

std::string member_dir_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "member_%03zu", index);
  return buf;
}

std::string checkpoint_fingerprint(const EnsembleCheckpoint& c) {
  std::uint32_t crc = io::crc32(to_json(c.model.architecture).dump());
  crc = io::crc32(to_json(c.training).dump(), crc);
  crc = io::crc32(c.data_fingerprint + c.norm_fingerprint, crc);
  for (std::size_t k = 0; k < c.model.size(); ++k) {
    crc = io::crc32(std::to_string(c.model.member_seeds[k]) + ":", crc);
    const auto& v = c.model.members[k].values();
    crc = io::crc32(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), crc);
  }
  return io::hex32(crc);
}

void save_ensemble(const fs::path& dir, EnsembleCheckpoint& c) {
  c.model.validate();
  fs::create_directories(dir);
  json members = json::array();
  for (std::size_t k = 0; k < c.model.size(); ++k) {
    const fs::path member_dir = dir / member_dir_name(k);
    save_member(member_dir, {c.model.members[k], c.model.histories[k], c.training, c.data_fingerprint});
    members.push_back({{"dir", member_dir_name(k)},
                       {"seed", c.model.member_seeds[k]},
                       {"crc32", io::hex32(params_crc(c.model.members[k]))}});
  }
  c.fingerprint = checkpoint_fingerprint(c);
  const json manifest = {
      {"format", "rulens-ensemble"},
      {"version", kCheckpointFormatVersion},
      {"member_count", c.model.size()},
      {"base_seed", c.base_seed},
      {"members", members},
      {"architecture", to_json(c.model.architecture)},
      {"training", to_json(c.training)},
      {"preprocessing", to_json(c.preprocessing)},
      {"norm_stats", to_json(c.norm_stats, c.layout)},
      {"data_fingerprint", c.data_fingerprint},
      {"norm_fingerprint", c.norm_fingerprint},
      {"fingerprint", c.fingerprint},
  };
  write_manifest(dir / "manifest.json", manifest);
}

EnsembleCheckpoint load_ensemble(const fs::path& dir) {
  const json m = read_manifest(dir / "manifest.json", "rulens-ensemble", kCheckpointFormatVersion);
  EnsembleCheckpoint c;
  try {
    c.model.architecture = architecture_from_json(m.at("architecture"));
    c.training = train_config_from_json(m.at("training"));
    c.preprocessing = preprocess_config_from_json(m.at("preprocessing"));
    auto [stats, layout] = norm_stats_from_json(m.at("norm_stats"));
    c.norm_stats = std::move(stats);
    c.layout = std::move(layout);
    c.base_seed = m.at("base_seed").get<std::uint64_t>();
    c.data_fingerprint = m.at("data_fingerprint").get<std::string>();
    c.norm_fingerprint = m.at("norm_fingerprint").get<std::string>();
    for (const auto& e : m.at("members")) {
      MemberCheckpoint member = load_member(dir / e.at("dir").get<std::string>());
      if (member.params.seed() != e.at("seed").get<std::uint64_t>()) {
        throw IntegrityError(dir.string() + ": member seed differs from ensemble manifest");
      }
      c.model.member_seeds.push_back(member.params.seed());
      c.model.members.push_back(std::move(member.params));
      c.model.histories.push_back(std::move(member.history));
    }
    c.model.validate();
    c.fingerprint = checkpoint_fingerprint(c);
    if (c.fingerprint != m.at("fingerprint").get<std::string>()) {
      throw IntegrityError(dir.string() + ": checkpoint fingerprint mismatch");
    }
    if (norm_fingerprint(c.norm_stats) != c.norm_fingerprint) {
      throw IntegrityError(dir.string() + ": normalization fingerprint mismatch");
    }
  } catch (const json::exception& e) {
    throw IntegrityError((dir / "manifest.json").string() + ": " + e.what());
  }
  return c;
}

}  // namespace rulens
