#include "rulens/config.hpp"

#include "rulens/error.hpp"
#include "rulens/io.hpp"

#include <set>

namespace rulens {

using nlohmann::json;

namespace {

// Reads optional keys from one JSON object and rejects unknown ones.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ArgumentError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ArgumentError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ArgumentError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

}  // namespace

Architecture NetworkConfig::architecture(Eigen::Index input_dim) const {
  Architecture a;
  a.input_dim = input_dim;
  a.recurrent_layers = recurrent_layers;
  a.dense_layers = dense_layers;
  a.output_scale = output_scale;
  return a;
}

void RunConfig::validate() const {
  if (preprocessing.window_length < 1 || preprocessing.stride < 1) {
    throw ArgumentError("preprocessing.window_length and stride must be >= 1");
  }
  if (preprocessing.rul_cap < 0) throw ArgumentError("preprocessing.rul_cap must be >= 0");
  if (ensemble.members < 1) throw ArgumentError("ensemble.members must be >= 1");
  if (!(evaluation.alpha > 0.0 && evaluation.alpha < 1.0)) {
    throw ArgumentError("evaluation.alpha must lie in (0, 1)");
  }
  if (training.batch_size < 1 || training.max_epochs < 1 || training.patience < 1) {
    throw ArgumentError("training.batch_size, max_epochs and patience must be >= 1");
  }
  if (!(training.adam.learning_rate > 0.0)) throw ArgumentError("training.learning_rate must be > 0");
  if (uncertainty.grid_size < 2) throw ArgumentError("uncertainty.grid_size must be >= 2");
  if (threads < 1) throw ArgumentError("threads must be >= 1");
  network.architecture(1).validate();
}

json to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"recurrent_layers", a.recurrent_layers},
          {"dense_layers", a.dense_layers},
          {"output_scale", a.output_scale}};
}

Architecture architecture_from_json(const json& j) {
  Architecture a;
  ObjectReader r(j, "architecture");
  r.get("input_dim", a.input_dim);
  r.get("recurrent_layers", a.recurrent_layers);
  r.get("dense_layers", a.dense_layers);
  r.get("output_scale", a.output_scale);
  r.finish();
  a.validate();
  return a;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"max_epochs", c.max_epochs},
          {"early_stopping", c.early_stopping ? "train_loss" : "none"},
          {"early_stop_start", c.early_stop_start},
          {"patience", c.patience},
          {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "training");
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.adam.learning_rate);
  r.get("beta1", c.adam.beta1);
  r.get("beta2", c.adam.beta2);
  r.get("epsilon", c.adam.epsilon);
  r.get("max_epochs", c.max_epochs);
  std::string monitor = "train_loss";
  r.get("early_stopping", monitor);
  if (monitor != "train_loss" && monitor != "none") {
    throw ArgumentError("training.early_stopping must be 'train_loss' or 'none'");
  }
  c.early_stopping = monitor == "train_loss";
  r.get("early_stop_start", c.early_stop_start);
  r.get("patience", c.patience);
  r.get("clip_norm", c.clip_norm);
  r.finish();
  return c;
}

json to_json(const PreprocessConfig& c) {
  return {{"window_length", c.window_length},
          {"stride", c.stride},
          {"rul_cap", c.rul_cap},
          {"dropped_sensors", c.dropped_sensors},
          {"dropped_settings", c.dropped_settings}};
}

PreprocessConfig preprocess_config_from_json(const json& j) {
  PreprocessConfig c;
  ObjectReader r(j, "preprocessing");
  r.get("window_length", c.window_length);
  r.get("stride", c.stride);
  r.get("rul_cap", c.rul_cap);
  r.get("dropped_sensors", c.dropped_sensors);
  r.get("dropped_settings", c.dropped_settings);
  r.finish();
  return c;
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  ObjectReader root(j, "config");
  int version = kConfigSchemaVersion;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ArgumentError("unsupported config schema_version " + std::to_string(version));
  }
  root.get("profile", c.profile);
  root.get("output_dir", c.output_dir);
  root.get("threads", c.threads);

  if (const json* d = root.child("data")) {
    ObjectReader r(*d, "data");
    r.get("train_file", c.data.train_file);
    r.get("test_file", c.data.test_file);
    r.get("rul_file", c.data.rul_file);
    r.finish();
  }
  if (const json* p = root.child("preprocessing")) c.preprocessing = preprocess_config_from_json(*p);
  if (const json* n = root.child("network")) {
    ObjectReader r(*n, "network");
    r.get("recurrent_layers", c.network.recurrent_layers);
    r.get("dense_layers", c.network.dense_layers);
    r.get("output_scale", c.network.output_scale);
    r.finish();
  }
  if (const json* t = root.child("training")) c.training = train_config_from_json(*t);
  if (const json* e = root.child("ensemble")) {
    ObjectReader r(*e, "ensemble");
    r.get("members", c.ensemble.members);
    r.get("base_seed", c.ensemble.base_seed);
    r.finish();
  }
  if (const json* e = root.child("evaluation")) {
    ObjectReader r(*e, "evaluation");
    r.get("alpha", c.evaluation.alpha);
    std::string convention = "paper";
    r.get("score_convention", convention);
    c.evaluation.score_convention = score_convention_from_string(convention);
    r.get("last_step_only", c.evaluation.last_step_only);
    r.finish();
  }
  if (const json* u = root.child("uncertainty")) {
    ObjectReader r(*u, "uncertainty");
    if (const json* list = r.child("datasets")) {
      if (!list->is_array()) throw ArgumentError("uncertainty.datasets must be an array");
      for (const auto& item : *list) {
        UncertaintyDataset ds;
        ObjectReader dr(item, "uncertainty.datasets[]");
        dr.get("name", ds.name);
        dr.get("test_file", ds.test_file);
        dr.finish();
        if (ds.name.empty() || ds.test_file.empty()) {
          throw ArgumentError("uncertainty datasets need a name and a test_file");
        }
        c.uncertainty.datasets.push_back(std::move(ds));
      }
    }
    r.get("per_window", c.uncertainty.per_window);
    r.get("grid_size", c.uncertainty.grid_size);
    r.finish();
  }
  root.finish();

  c.data.train_file = resolve(c.data.train_file, base_dir);
  c.data.test_file = resolve(c.data.test_file, base_dir);
  c.data.rul_file = resolve(c.data.rul_file, base_dir);
  for (auto& ds : c.uncertainty.datasets) ds.test_file = resolve(ds.test_file, base_dir);
  c.output_dir = resolve(c.output_dir, base_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ArgumentError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

json to_json(const RunConfig& c) {
  json datasets = json::array();
  for (const auto& ds : c.uncertainty.datasets) {
    datasets.push_back({{"name", ds.name}, {"test_file", ds.test_file}});
  }
  return {
      {"schema_version", kConfigSchemaVersion},
      {"profile", c.profile},
      {"data",
       {{"train_file", c.data.train_file},
        {"test_file", c.data.test_file},
        {"rul_file", c.data.rul_file}}},
      {"preprocessing", to_json(c.preprocessing)},
      {"network",
       {{"recurrent_layers", c.network.recurrent_layers},
        {"dense_layers", c.network.dense_layers},
        {"output_scale", c.network.output_scale}}},
      {"training", to_json(c.training)},
      {"ensemble", {{"members", c.ensemble.members}, {"base_seed", c.ensemble.base_seed}}},
      {"evaluation",
       {{"alpha", c.evaluation.alpha},
        {"score_convention", std::string(to_string(c.evaluation.score_convention))},
        {"last_step_only", c.evaluation.last_step_only}}},
      {"uncertainty",
       {{"datasets", datasets},
        {"per_window", c.uncertainty.per_window},
        {"grid_size", c.uncertainty.grid_size}}},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
  };
}

}  // namespace rulens
