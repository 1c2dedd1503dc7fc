// rulens: ingest CMAPSS files, train a deep ensemble, evaluate it and emit
// uncertainty profiles and per-unit prediction traces.

#include "rulens/error.hpp"
#include "rulens/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <mutex>

namespace {

std::mutex log_mutex;

void log_line(std::string_view line) {
  std::lock_guard lock(log_mutex);
  std::cerr << "rulens: " << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic remaining-useful-life prediction with LSTM deep ensembles"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  int members = 0;
  int threads = 0;
  rulens::CommandOptions options;
  app.add_option("--config", config_path, "Run config (JSON); built-in defaults when omitted")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory, overrides output_dir");
  app.add_option("--members", members, "Ensemble size, overrides ensemble.members")
      ->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "Member training workers")->check(CLI::PositiveNumber);
  app.add_flag("--force", options.force, "Overwrite an existing archive or checkpoint");
  app.add_flag("--resume", options.resume, "Reuse finished members of an interrupted run");

  auto* ingest = app.add_subcommand("ingest", "Parse, select features, normalize and archive");
  auto* train = app.add_subcommand("train", "Train the ensemble on the archived dataset");
  auto* evaluate = app.add_subcommand("evaluate", "Point and interval metrics on the test split");
  auto* uncertainty =
      app.add_subcommand("uncertainty", "Aleatoric/epistemic profiles and densities per dataset");
  auto* predict = app.add_subcommand("predict", "Per-cycle prediction trace for one unit");
  int unit = 0;
  std::string split = "test";
  predict->add_option("--unit", unit, "Unit id")->required();
  predict->add_option("--split", split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  for (auto* sub : {ingest, train, evaluate, uncertainty, predict}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!out.empty()) options.out = out;
    if (members > 0) options.members = members;
    if (threads > 0) options.threads = threads;
    rulens::RunConfig config =
        config_path.empty() ? rulens::RunConfig{} : rulens::load_run_config(config_path);
    config = rulens::apply_overrides(std::move(config), options);

    const rulens::LogSink log = log_line;
    if (ingest->parsed()) rulens::cmd_ingest(config, options, std::cout, log);
    if (train->parsed()) rulens::cmd_train(config, options, std::cout, log);
    if (evaluate->parsed()) rulens::cmd_evaluate(config, std::cout, log);
    if (uncertainty->parsed()) rulens::cmd_uncertainty(config, std::cout, log);
    if (predict->parsed()) {
      rulens::cmd_predict(config, unit, rulens::split_from_string(split), std::cout, log);
    }
  } catch (const rulens::Error& e) {
    log_line(std::string("error: ") + e.what());
    return e.user_error() ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    log_line(std::string("error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log_line(std::string("internal error: ") + e.what());
    return 1;
  }
  return 0;
}
