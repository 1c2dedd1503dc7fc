#include "rulens/ensemble.hpp"

#include "rulens/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace rulens {

namespace {

// anchor + mean of sorted (x_i - anchor). Anchoring at the minimum makes
// identical inputs return themselves exactly; sorting makes the rounding
// independent of input order.
double shifted_mean(std::vector<double>& scratch, double anchor) {
  for (double& x : scratch) x -= anchor;
  std::sort(scratch.begin(), scratch.end());
  double sum = 0.0;
  for (double x : scratch) sum += x;
  return anchor + sum / static_cast<double>(scratch.size());
}

double stable_mean(std::span<const double> values) {
  std::vector<double> scratch(values.begin(), values.end());
  return shifted_mean(scratch, *std::min_element(scratch.begin(), scratch.end()));
}

}  // namespace

void EnsembleModel::validate() const {
  if (members.empty()) throw IntegrityError("ensemble has no members");
  if (member_seeds.size() != members.size()) {
    throw IntegrityError("ensemble member seed list does not match member count");
  }
  std::set<std::uint64_t> seen;
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (!(members[k].architecture() == architecture)) {
      throw IntegrityError("ensemble member " + std::to_string(k) + " has a different architecture");
    }
    if (!seen.insert(member_seeds[k]).second) {
      throw IntegrityError("ensemble member seeds are not distinct");
    }
  }
}

std::pair<double, double> mixture_moments(std::span<const double> means,
                                          std::span<const double> vars) {
  if (means.empty() || means.size() != vars.size()) {
    throw ArgumentError("mixture_moments needs equal nonzero member counts");
  }
  const double mu_star = stable_mean(means);
  // mean(var_i + mu_i^2) - mu*^2 == mean(var_i) + mean((mu_i - mu*)^2)
  std::vector<double> spread(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    const double d = means[i] - mu_star;
    spread[i] = d * d;
  }
  std::sort(spread.begin(), spread.end());
  double spread_sum = 0.0;
  for (double s : spread) spread_sum += s;
  const double var_star = stable_mean(vars) + spread_sum / static_cast<double>(means.size());
  return {mu_star, var_star};
}

EnsemblePrediction aggregate(const Eigen::MatrixXd& member_means,
                             const Eigen::MatrixXd& member_vars) {
  if (member_means.rows() < 1 || member_means.rows() != member_vars.rows() ||
      member_means.cols() != member_vars.cols()) {
    throw ArgumentError("member mean/variance matrices must be nonempty and equally shaped");
  }
  const Eigen::Index T = member_means.cols();
  EnsemblePrediction out;
  out.member_means = member_means;
  out.member_vars = member_vars;
  out.mu_star.resize(T);
  out.var_star.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::VectorXd m = member_means.col(t);
    const Eigen::VectorXd v = member_vars.col(t);
    const auto [mu, var] = mixture_moments({m.data(), static_cast<std::size_t>(m.size())},
                                           {v.data(), static_cast<std::size_t>(v.size())});
    out.mu_star(t) = mu;
    out.var_star(t) = var;
  }
  return out;
}

EnsemblePrediction predict_ensemble(const EnsembleModel& model, const Eigen::MatrixXd& inputs) {
  if (model.members.empty()) throw ArgumentError("ensemble has no members");
  const auto M = static_cast<Eigen::Index>(model.members.size());
  Eigen::MatrixXd means(M, inputs.rows());
  Eigen::MatrixXd vars(M, inputs.rows());
  for (Eigen::Index i = 0; i < M; ++i) {
    const GaussianSeqPrediction p = forward(model.members[static_cast<std::size_t>(i)], inputs);
    means.row(i) = p.means.transpose();
    vars.row(i) = p.variances.transpose();
  }
  return aggregate(means, vars);
}

UncertaintyDecomposition decompose_uncertainty(std::span<const double> member_vars,
                                               double var_star) {
  if (member_vars.empty()) throw ArgumentError("decompose_uncertainty needs at least one member");
  if (!(var_star > 0.0)) throw ArgumentError("mixture variance must be positive");
  std::vector<double> logs(member_vars.size());
  for (std::size_t i = 0; i < member_vars.size(); ++i) {
    if (!(member_vars[i] > 0.0)) throw ArgumentError("member variances must be positive");
    logs[i] = std::log(member_vars[i]);
  }
  UncertaintyDecomposition d;
  d.u_al = stable_mean(logs);
  d.u_tot = std::log(var_star);
  d.u_ep = d.u_tot - d.u_al;
  return d;
}

std::vector<UncertaintyDecomposition> decompose_uncertainty(const EnsemblePrediction& prediction) {
  std::vector<UncertaintyDecomposition> out;
  out.reserve(static_cast<std::size_t>(prediction.steps()));
  for (Eigen::Index t = 0; t < prediction.steps(); ++t) {
    const Eigen::VectorXd v = prediction.member_vars.col(t);
    out.push_back(decompose_uncertainty({v.data(), static_cast<std::size_t>(v.size())},
                                        prediction.var_star(t)));
  }
  return out;
}

LastStepView last_step_view(const EnsemblePrediction& prediction) {
  const Eigen::Index T = prediction.steps();
  if (T < 1) throw ArgumentError("prediction has no time steps");
  const Eigen::VectorXd v = prediction.member_vars.col(T - 1);
  return {prediction.mu_star(T - 1), prediction.var_star(T - 1),
          decompose_uncertainty({v.data(), static_cast<std::size_t>(v.size())},
                                prediction.var_star(T - 1))};
}

std::vector<UncertaintyDecomposition> dataset_uncertainty_profile(
    const EnsembleModel& model, std::span<const FeatureSeries> units, Eigen::Index window_length) {
  std::vector<UncertaintyDecomposition> profile;
  for (const auto& unit : units) {
    if (window_length > 0) {
      for (Eigen::Index start : window_offsets(unit.length(), window_length, 1)) {
        const Eigen::MatrixXd window = unit.values.middleRows(start, window_length);
        profile.push_back(last_step_view(predict_ensemble(model, window)).uncertainty);
      }
    } else {
      profile.push_back(last_step_view(predict_ensemble(model, unit.values)).uncertainty);
    }
  }
  return profile;
}

EnsembleModel train_ensemble(const Architecture& architecture, const TrainingSet& data,
                             const TrainConfig& config, std::uint64_t base_seed,
                             std::size_t member_count, const EnsembleTrainOptions& options) {
  if (member_count < 1) throw ArgumentError("ensemble needs at least one member");

  EnsembleModel model;
  model.architecture = architecture;
  model.members.resize(member_count);
  model.histories.resize(member_count);
  for (std::size_t k = 0; k < member_count; ++k) {
    model.member_seeds.push_back(member_seed(base_seed, k));
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mutex;
  std::exception_ptr first_error;
  std::size_t failed_member = 0;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= member_count) return;
      const std::uint64_t seed = model.member_seeds[k];
      try {
        std::optional<TrainedPnn> trained;
        if (options.reuse) trained = options.reuse(k, seed);
        if (!trained) trained = train_pnn(architecture, data, config, seed, options.log);
        std::lock_guard lock(mutex);
        if (options.on_member) options.on_member(k, *trained);
        model.members[k] = std::move(trained->params);
        model.histories[k] = std::move(trained->history);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!first_error) {
          first_error = std::current_exception();
          failed_member = k;
        }
        failed.store(true);
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::max(1, options.threads));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, member_count); ++t) pool.emplace_back(worker);
  }

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const NumericError& e) {
      throw NumericError("ensemble member " + std::to_string(failed_member) + ": " + e.what());
    } catch (const Error& e) {
      throw IntegrityError("ensemble member " + std::to_string(failed_member) + ": " + e.what());
    }
  }
  return model;
}

}  // namespace rulens
