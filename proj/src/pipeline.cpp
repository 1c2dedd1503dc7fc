#include "rulens/pipeline.hpp"

#include "rulens/error.hpp"
#include "rulens/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace rulens {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kReportFormatVersion = 1;

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

// Comment block that opens every delimited and key-value artifact.
std::string provenance(std::string_view kind, const RunConfig& config,
                       const std::string& checkpoint_fp, const std::string& data_fp) {
  std::string s = "# rulens " + std::string(kind) + "\n";
  s += "# config: " + to_json(config).dump() + "\n";
  s += "# checkpoint: " + checkpoint_fp + "\n";
  s += "# data: " + data_fp + "\n";
  return s;
}

json provenance_json(std::string_view format, const RunConfig& config,
                     const EnsembleCheckpoint& ckpt) {
  return {{"format", std::string(format)},
          {"version", kReportFormatVersion},
          {"config", to_json(config)},
          {"checkpoint_fingerprint", ckpt.fingerprint},
          {"data_fingerprint", ckpt.data_fingerprint},
          {"members", ckpt.model.size()}};
}

DatasetArchive require_dataset(const OutputLayout& out) {
  if (!fs::exists(out.dataset() / "manifest.json")) {
    throw IoError("no dataset archive at " + out.dataset().string() + "; run ingest first");
  }
  return load_dataset(out.dataset());
}

EnsembleCheckpoint require_checkpoint(const OutputLayout& out) {
  if (!fs::exists(out.checkpoint() / "manifest.json")) {
    throw IoError("no ensemble checkpoint at " + out.checkpoint().string() + "; run train first");
  }
  return load_ensemble(out.checkpoint());
}

// Raw CMAPSS units through the checkpoint's feature selection and statistics.
FeatureSet normalize_with(const std::vector<UnitSeries>& units, const EnsembleCheckpoint& ckpt) {
  const FeatureSet selected =
      drop_sensors(units, ckpt.layout.dropped_sensors, ckpt.layout.dropped_settings);
  return apply_norm(selected, ckpt.norm_stats);
}

double mean_of(const std::vector<UncertaintyRow>& rows, double UncertaintyDecomposition::*field) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(r.values.*field);
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

}  // namespace

RunConfig apply_overrides(RunConfig config, const CommandOptions& options) {
  if (options.out) config.output_dir = *options.out;
  if (options.members) config.ensemble.members = *options.members;
  if (options.threads) config.threads = *options.threads;
  config.validate();
  return config;
}

// ---------------------------------------------------------------------------

DatasetArchive cmd_ingest(const RunConfig& config, const CommandOptions& options,
                          std::ostream& stdout_sink, const LogSink& log) {
  const OutputLayout out{config.output_dir};
  if (fs::exists(out.dataset() / "manifest.json") && !options.force) {
    throw ArgumentError("dataset archive already exists at " + out.dataset().string() +
                        "; pass --force to rebuild it");
  }
  emit(log, "reading " + config.data.train_file);
  DatasetArchive archive = build_dataset(config.data, config.preprocessing);
  if (options.force) fs::remove_all(out.dataset());
  save_dataset(out.dataset(), archive);

  std::size_t windows = 0;
  std::size_t skipped = 0;
  for (const auto& u : archive.train.units) {
    const auto n = window_offsets(u.length(), config.preprocessing.window_length,
                                  config.preprocessing.stride)
                       .size();
    windows += n;
    skipped += n == 0;
  }
  stdout_sink << archive.train.units.size() << " train units, " << archive.test.units.size()
              << " test units\n"
              << archive.train.layout.size() << " features, " << windows << " training windows";
  if (skipped) stdout_sink << " (" << skipped << " units shorter than the window)";
  stdout_sink << "\narchive " << out.dataset().string() << " data " << archive.data_fingerprint
              << " norm " << archive.norm_fingerprint << "\n";
  return archive;
}

// ---------------------------------------------------------------------------

EnsembleCheckpoint cmd_train(const RunConfig& config, const CommandOptions& options,
                             std::ostream& stdout_sink, const LogSink& log) {
  const OutputLayout out{config.output_dir};
  const DatasetArchive archive = require_dataset(out);
  const fs::path dir = out.checkpoint();

  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (options.force) {
      fs::remove_all(dir);
    } else if (!options.resume) {
      throw ArgumentError("checkpoint directory " + dir.string() +
                          " is not empty; pass --resume to continue or --force to retrain");
    }
  }

  const TrainingSet data =
      make_training_set(archive.train, config.preprocessing.window_length,
                        config.preprocessing.stride, config.preprocessing.rul_cap, log);
  if (data.windows.empty()) throw ArgumentError("no training windows; every unit is too short");
  const Architecture arch = config.network.architecture(archive.train.layout.size());
  arch.validate();
  const auto members = static_cast<std::size_t>(config.ensemble.members);
  emit(log, "training " + std::to_string(members) + " members on " +
                std::to_string(data.windows.size()) + " windows, " +
                std::to_string(arch.parameter_count()) + " parameters each");

  EnsembleTrainOptions opts;
  opts.threads = config.threads;
  opts.log = log;
  if (options.resume) {
    opts.reuse = [&](std::size_t k, std::uint64_t seed) -> std::optional<TrainedPnn> {
      const fs::path member_dir = dir / member_dir_name(k);
      if (!fs::exists(member_dir / "manifest.json")) return std::nullopt;
      MemberCheckpoint m = load_member(member_dir);
      if (m.params.seed() != seed || !(m.params.architecture() == arch) ||
          !(m.training == config.training) || m.data_fingerprint != archive.data_fingerprint) {
        emit(log, "member " + std::to_string(k) + ": stored checkpoint does not match, retraining");
        return std::nullopt;
      }
      emit(log, "member " + std::to_string(k) + ": reusing stored checkpoint");
      return TrainedPnn{std::move(m.params), std::move(m.history)};
    };
  }
  opts.on_member = [&](std::size_t k, const TrainedPnn& trained) {
    save_member(dir / member_dir_name(k),
                {trained.params, trained.history, config.training, archive.data_fingerprint});
    const auto& h = trained.history;
    emit(log, "member " + std::to_string(k) + " seed " + std::to_string(trained.params.seed()) +
                  ": " + std::string(to_string(h.stop_reason)) + " at epoch " +
                  std::to_string(h.stop_epoch) + ", best epoch " + std::to_string(h.best_epoch) +
                  " loss " + num(h.epoch_loss.at(static_cast<std::size_t>(h.best_epoch - 1))));
  };

  EnsembleCheckpoint ckpt;
  ckpt.model = train_ensemble(arch, data, config.training, config.ensemble.base_seed, members, opts);
  ckpt.training = config.training;
  ckpt.preprocessing = config.preprocessing;
  ckpt.norm_stats = archive.norm_stats;
  ckpt.layout = archive.train.layout;
  ckpt.base_seed = config.ensemble.base_seed;
  ckpt.data_fingerprint = archive.data_fingerprint;
  ckpt.norm_fingerprint = archive.norm_fingerprint;
  save_ensemble(dir, ckpt);

  // Members beyond the requested count (from an earlier, larger run) go away.
  for (std::size_t k = members;; ++k) {
    const fs::path extra = dir / member_dir_name(k);
    if (!fs::exists(extra)) break;
    fs::remove_all(extra);
  }
  stdout_sink << members << " members saved to " << dir.string() << " fingerprint "
              << ckpt.fingerprint << "\n";
  return ckpt;
}

// ---------------------------------------------------------------------------

MetricReport cmd_evaluate(const RunConfig& config, std::ostream& stdout_sink,
                          const LogSink& log) {
  const OutputLayout out{config.output_dir};
  const EnsembleCheckpoint ckpt = require_checkpoint(out);
  const DatasetArchive archive = require_dataset(out);
  if (archive.norm_fingerprint != ckpt.norm_fingerprint) {
    throw IntegrityError("normalization fingerprint of " + out.dataset().string() + " (" +
                         archive.norm_fingerprint + ") differs from the checkpoint's (" +
                         ckpt.norm_fingerprint + "); refusing to evaluate");
  }
  if (archive.data_fingerprint != ckpt.data_fingerprint) {
    emit(log, "warning: dataset fingerprint differs from the one the checkpoint was trained on");
  }
  const auto& units = archive.test.units;
  if (units.empty()) throw ArgumentError("test split is empty");
  const double alpha = config.evaluation.alpha;
  const auto convention = config.evaluation.score_convention;

  const auto per_unit = predict_units(ckpt.model, units);
  MetricReport report;
  if (config.evaluation.last_step_only) {
    report = evaluate_on_test(ckpt.model, units, alpha, convention);
  } else {
    // Every step of every unit against the uncapped true RUL trajectory.
    std::vector<double> mu, var, y;
    for (const auto& unit : units) {
      const EnsemblePrediction p = predict_ensemble(ckpt.model, unit.values);
      const Eigen::VectorXd target = make_rul_targets(
          unit.length(), std::numeric_limits<int>::max(), unit.true_final_rul.value_or(0));
      for (Eigen::Index t = 0; t < p.steps(); ++t) {
        mu.push_back(p.mu_star(t));
        var.push_back(p.var_star(t));
        y.push_back(target(t));
      }
    }
    const auto n = static_cast<Eigen::Index>(mu.size());
    report = evaluate_predictions(Eigen::Map<Eigen::VectorXd>(mu.data(), n),
                                  Eigen::Map<Eigen::VectorXd>(var.data(), n),
                                  Eigen::Map<Eigen::VectorXd>(y.data(), n), alpha, convention);
  }
  const std::string scope = config.evaluation.last_step_only ? "last_step" : "all_steps";

  const std::string head = provenance("metrics", config, ckpt.fingerprint, ckpt.data_fingerprint);
  std::string txt = head;
  txt += "profile=" + config.profile + "\n";
  txt += "members=" + std::to_string(ckpt.model.size()) + "\n";
  txt += "scope=" + scope + "\n";
  txt += "n=" + std::to_string(report.n) + "\n";
  txt += "alpha=" + num(report.alpha) + "\n";
  txt += "score_convention=" + std::string(to_string(report.convention)) + "\n";
  txt += "rmse=" + num(report.rmse) + "\n";
  txt += "score=" + num(report.score) + "\n";
  txt += "picp=" + num(report.picp) + "\n";
  txt += "nmpiw=" + (report.nmpiw ? num(*report.nmpiw) : std::string("undefined")) + "\n";

  json j = provenance_json("rulens-metrics", config, ckpt);
  j["metrics"] = {{"scope", scope},
                  {"n", report.n},
                  {"alpha", report.alpha},
                  {"score_convention", std::string(to_string(report.convention))},
                  {"rmse", report.rmse},
                  {"score", report.score},
                  {"picp", report.picp},
                  {"nmpiw", report.nmpiw ? json(*report.nmpiw) : json(nullptr)}};

  std::string csv = provenance("unit predictions", config, ckpt.fingerprint, ckpt.data_fingerprint);
  csv += "unit_id,true_rul,mu,sigma,lower,upper,u_al,u_ep,u_tot\n";
  const double z = normal_quantile(0.5 * (1.0 + alpha));
  for (const auto& p : per_unit) {
    const double sigma = std::sqrt(p.last.var_star);
    csv += std::to_string(p.unit_id) + "," + num(p.true_rul) + "," + num(p.last.mu_star) + "," +
           num(sigma) + "," + num(p.last.mu_star - z * sigma) + "," +
           num(p.last.mu_star + z * sigma) + "," + num(p.last.uncertainty.u_al) + "," +
           num(p.last.uncertainty.u_ep) + "," + num(p.last.uncertainty.u_tot) + "\n";
  }

  io::write_text_atomic(out.reports() / "metrics.txt", txt);
  io::write_text_atomic(out.reports() / "metrics.json", j.dump(2) + "\n");
  io::write_text_atomic(out.reports() / "predictions.csv", csv);

  stdout_sink << "rmse " << num(report.rmse) << "  score " << num(report.score) << " ("
              << to_string(report.convention) << ")  picp " << num(report.picp) << "  nmpiw "
              << (report.nmpiw ? num(*report.nmpiw) : std::string("undefined")) << "  n "
              << report.n << "\n";
  return report;
}

// ---------------------------------------------------------------------------

bool OrderingCheck::holds() const {
  return fd002_above_fd001 && fd003_between.value_or(true) && fd002_gap_larger.value_or(true);
}

UncertaintyReport cmd_uncertainty(const RunConfig& config, std::ostream& stdout_sink,
                                  const LogSink& log) {
  const OutputLayout out{config.output_dir};
  const EnsembleCheckpoint ckpt = require_checkpoint(out);

  std::vector<UncertaintyDataset> datasets = config.uncertainty.datasets;
  if (datasets.empty()) datasets.push_back({"test", config.data.test_file});
  const Eigen::Index window = config.uncertainty.per_window ? ckpt.preprocessing.window_length : 0;

  UncertaintyReport report;
  const fs::path dir = out.reports() / "uncertainty";
  for (const auto& ds : datasets) {
    if (!fs::exists(ds.test_file)) throw IoError("input file not found: " + ds.test_file);
    emit(log, "profiling " + ds.name + " (" + ds.test_file + ")");
    const auto raw = parse_cmapss_file(ds.test_file);
    const FeatureSet set = normalize_with(raw, ckpt);

    DatasetUncertainty result;
    result.name = ds.name;
    for (std::size_t u = 0; u < set.units.size(); ++u) {
      const auto& unit = set.units[u];
      const auto values = dataset_uncertainty_profile(ckpt.model, {&unit, 1}, window);
      const auto offsets =
          window > 0 ? window_offsets(unit.length(), window, 1) : std::vector<Eigen::Index>{};
      for (std::size_t k = 0; k < values.size(); ++k) {
        const Eigen::Index last = window > 0 ? offsets[k] + window - 1 : unit.length() - 1;
        result.rows.push_back({unit.unit_id, raw[u].cycles(last), values[k]});
      }
    }
    result.mean_u_al = mean_of(result.rows, &UncertaintyDecomposition::u_al);
    result.mean_u_ep = mean_of(result.rows, &UncertaintyDecomposition::u_ep);
    result.mean_u_tot = mean_of(result.rows, &UncertaintyDecomposition::u_tot);

    const std::string head =
        provenance("uncertainty " + ds.name, config, ckpt.fingerprint, ckpt.data_fingerprint);
    std::string csv = head + "unit_id,end_cycle,u_al,u_ep,u_tot\n";
    for (const auto& r : result.rows) {
      csv += std::to_string(r.unit_id) + "," + std::to_string(r.end_cycle) + "," +
             num(r.values.u_al) + "," + num(r.values.u_ep) + "," + num(r.values.u_tot) + "\n";
    }
    io::write_text_atomic(dir / (ds.name + "_values.csv"), csv);

    for (auto [label, field] : {std::pair{"u_al", &UncertaintyDecomposition::u_al},
                                std::pair{"u_ep", &UncertaintyDecomposition::u_ep}}) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(result.rows.size()));
      for (std::size_t i = 0; i < result.rows.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = result.rows[i].values.*field;
      }
      const fs::path path = dir / (ds.name + "_kde_" + label + ".csv");
      DensityCurve curve;
      try {
        curve = kde(v, config.uncertainty.grid_size);
      } catch (const ArgumentError& e) {
        emit(log, "warning: no density for " + ds.name + " " + label + ": " + e.what());
        fs::remove(path);
        continue;
      }
      std::string kcsv = head + "# bandwidth: " + num(curve.bandwidth) + "\ngrid,density\n";
      for (Eigen::Index i = 0; i < curve.grid.size(); ++i) {
        kcsv += num(curve.grid(i)) + "," + num(curve.density(i)) + "\n";
      }
      io::write_text_atomic(path, kcsv);
    }
    stdout_sink << ds.name << ": " << result.rows.size() << " samples, mean u_al "
                << num(result.mean_u_al) << ", mean u_ep " << num(result.mean_u_ep) << "\n";
    report.datasets.push_back(std::move(result));
  }

  std::map<std::string, const DatasetUncertainty*> by_name;
  for (const auto& d : report.datasets) by_name[d.name] = &d;
  if (by_name.count("FD001") && by_name.count("FD002")) {
    const double e1 = by_name["FD001"]->mean_u_ep;
    const double e2 = by_name["FD002"]->mean_u_ep;
    OrderingCheck check;
    check.fd002_above_fd001 = e2 > e1;
    if (by_name.count("FD003")) {
      const double e3 = by_name["FD003"]->mean_u_ep;
      check.fd003_between = e2 > e3 && e3 >= e1;
      check.fd002_gap_larger = (e2 - e1) > (e3 - e1);
    }
    report.ordering = check;
  }

  json j = provenance_json("rulens-uncertainty", config, ckpt);
  j["per_window"] = config.uncertainty.per_window;
  json list = json::array();
  std::string txt = provenance("uncertainty summary", config, ckpt.fingerprint,
                               ckpt.data_fingerprint);
  for (const auto& d : report.datasets) {
    list.push_back({{"name", d.name},
                    {"n", d.rows.size()},
                    {"mean_u_al", d.mean_u_al},
                    {"mean_u_ep", d.mean_u_ep},
                    {"mean_u_tot", d.mean_u_tot}});
    txt += d.name + ".n=" + std::to_string(d.rows.size()) + "\n";
    txt += d.name + ".mean_u_al=" + num(d.mean_u_al) + "\n";
    txt += d.name + ".mean_u_ep=" + num(d.mean_u_ep) + "\n";
    txt += d.name + ".mean_u_tot=" + num(d.mean_u_tot) + "\n";
  }
  j["datasets"] = list;
  if (report.ordering) {
    const auto& o = *report.ordering;
    json oj = {{"fd002_above_fd001", o.fd002_above_fd001}, {"holds", o.holds()}};
    txt += "ordering.fd002_above_fd001=" + std::string(o.fd002_above_fd001 ? "yes" : "no") + "\n";
    if (o.fd003_between) {
      oj["fd003_between"] = *o.fd003_between;
      oj["fd002_gap_larger"] = *o.fd002_gap_larger;
      txt += "ordering.fd003_between=" + std::string(*o.fd003_between ? "yes" : "no") + "\n";
      txt += "ordering.fd002_gap_larger=" + std::string(*o.fd002_gap_larger ? "yes" : "no") + "\n";
    }
    txt += "ordering=" + std::string(o.holds() ? "holds" : "violated") + "\n";
    j["ordering"] = oj;
    stdout_sink << "epistemic ordering " << (o.holds() ? "holds" : "violated") << "\n";
  }
  io::write_text_atomic(dir / "summary.json", j.dump(2) + "\n");
  io::write_text_atomic(dir / "summary.txt", txt);
  return report;
}

// ---------------------------------------------------------------------------

Split split_from_string(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw ArgumentError("split must be 'train' or 'test', got '" + std::string(text) + "'");
}

std::vector<TraceRow> cmd_predict(const RunConfig& config, int unit_id, Split split,
                                  std::ostream& stdout_sink, const LogSink& log) {
  const OutputLayout out{config.output_dir};
  const EnsembleCheckpoint ckpt = require_checkpoint(out);
  const std::string& file = split == Split::train ? config.data.train_file : config.data.test_file;
  if (!fs::exists(file)) throw IoError("input file not found: " + file);
  auto raw = parse_cmapss_file(file);
  bool targets_known = split == Split::train;
  if (split == Split::test && !config.data.rul_file.empty() && fs::exists(config.data.rul_file)) {
    load_true_rul_file(config.data.rul_file, raw);
    targets_known = true;
  }

  auto it = std::find_if(raw.begin(), raw.end(), [&](const UnitSeries& u) { return u.unit_id == unit_id; });
  if (it == raw.end()) {
    std::string ids;
    for (const auto& u : raw) ids += (ids.empty() ? "" : " ") + std::to_string(u.unit_id);
    throw ArgumentError("unit " + std::to_string(unit_id) + " not found in " + file +
                        "; available: " + ids);
  }
  const std::vector<UnitSeries> selected{*it};
  const FeatureSet set = normalize_with(selected, ckpt);
  const FeatureSeries& unit = set.units.front();
  emit(log, "predicting unit " + std::to_string(unit_id) + " (" + std::to_string(unit.length()) +
                " cycles)");

  const EnsemblePrediction p = predict_ensemble(ckpt.model, unit.values);
  const IntervalBounds bounds = interval_bounds(p.mu_star, p.var_star, config.evaluation.alpha);
  Eigen::VectorXd target;
  if (targets_known) {
    target = make_rul_targets(unit.length(), ckpt.preprocessing.rul_cap,
                              it->true_final_rul.value_or(0));
  }

  std::vector<TraceRow> rows;
  const std::string split_name = split == Split::train ? "train" : "test";
  std::string csv = provenance("trace " + split_name + " unit " + std::to_string(unit_id), config,
                               ckpt.fingerprint, ckpt.data_fingerprint);
  csv += "step,cycle,target,mu,sigma,lower,upper\n";
  for (Eigen::Index t = 0; t < p.steps(); ++t) {
    TraceRow r;
    r.step = static_cast<int>(t) + 1;
    r.cycle = it->cycles(t);
    if (targets_known) r.target = target(t);
    r.mu = p.mu_star(t);
    r.sigma = std::sqrt(p.var_star(t));
    r.lower = bounds.lower(t);
    r.upper = bounds.upper(t);
    csv += std::to_string(r.step) + "," + std::to_string(r.cycle) + "," +
           (r.target ? num(*r.target) : std::string()) + "," + num(r.mu) + "," + num(r.sigma) +
           "," + num(r.lower) + "," + num(r.upper) + "\n";
    rows.push_back(r);
  }
  const fs::path path =
      out.reports() / ("trace_" + split_name + "_unit" + std::to_string(unit_id) + ".csv");
  io::write_text_atomic(path, csv);
  stdout_sink << rows.size() << " steps written to " << path.string() << "\n";
  return rows;
}

}  // namespace rulens
