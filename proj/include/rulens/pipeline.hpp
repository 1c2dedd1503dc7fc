#pragma once

// The five CLI commands as library calls. Each reads the resolved run config,
// works under `<output_dir>/{dataset,checkpoint,reports}` and writes every
// artifact atomically with the config and fingerprints embedded.

#include "rulens/config.hpp"
#include "rulens/metrics.hpp"
#include "rulens/store.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rulens {

// Flag overrides; anything set here wins over the config file.
struct CommandOptions {
  std::optional<std::string> out;
  std::optional<int> members;
  std::optional<int> threads;
  bool force = false;
  bool resume = false;
};

RunConfig apply_overrides(RunConfig config, const CommandOptions& options);

struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint"; }
  std::filesystem::path reports() const { return root / "reports"; }
};

// `stdout_sink` receives the short human summary, `log` the progress lines.
DatasetArchive cmd_ingest(const RunConfig& config, const CommandOptions& options,
                          std::ostream& stdout_sink, const LogSink& log = {});

EnsembleCheckpoint cmd_train(const RunConfig& config, const CommandOptions& options,
                             std::ostream& stdout_sink, const LogSink& log = {});

MetricReport cmd_evaluate(const RunConfig& config, std::ostream& stdout_sink,
                          const LogSink& log = {});

struct UncertaintyRow {
  int unit_id = 0;
  int end_cycle = 0;
  UncertaintyDecomposition values;
};

struct DatasetUncertainty {
  std::string name;
  std::vector<UncertaintyRow> rows;
  double mean_u_al = 0.0;
  double mean_u_ep = 0.0;
  double mean_u_tot = 0.0;
};

// Verdict on the expected epistemic ordering across FD001/FD002/FD003; empty
// unless at least FD001 and FD002 were profiled.
struct OrderingCheck {
  bool fd002_above_fd001 = false;
  std::optional<bool> fd003_between;      // FD002 > FD003 >= FD001
  std::optional<bool> fd002_gap_larger;   // FD002 - FD001 > FD003 - FD001
  bool holds() const;
};

struct UncertaintyReport {
  std::vector<DatasetUncertainty> datasets;
  std::optional<OrderingCheck> ordering;
};

UncertaintyReport cmd_uncertainty(const RunConfig& config, std::ostream& stdout_sink,
                                  const LogSink& log = {});

enum class Split { train, test };
Split split_from_string(std::string_view text);

struct TraceRow {
  int step = 0;
  int cycle = 0;
  std::optional<double> target;  // capped RUL when known
  double mu = 0.0;
  double sigma = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Full-history trace of one unit; writes reports/trace_<split>_unit<id>.csv.
std::vector<TraceRow> cmd_predict(const RunConfig& config, int unit_id, Split split,
                                  std::ostream& stdout_sink, const LogSink& log = {});

}  // namespace rulens
