#pragma once

#include "rulens/cmapss.hpp"
#include "rulens/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace rulens {

struct EnsembleModel {
  Architecture architecture;
  std::vector<PnnParams> members;
  std::vector<std::uint64_t> member_seeds;
  std::vector<TrainHistory> histories;

  std::size_t size() const { return members.size(); }
  void validate() const;
};

// Member predictions and their uniform-mixture moments, per time step.
struct EnsemblePrediction {
  Eigen::VectorXd mu_star;        // [T]
  Eigen::VectorXd var_star;       // [T]
  Eigen::MatrixXd member_means;   // [M x T]
  Eigen::MatrixXd member_vars;    // [M x T]

  Eigen::Index steps() const { return mu_star.size(); }
};

// Log-variance uncertainties in nats, entropy constants dropped:
// u_al = mean_i log var_i, u_tot = log var_star, u_ep = u_tot - u_al.
struct UncertaintyDecomposition {
  double u_al = 0.0;
  double u_ep = 0.0;
  double u_tot = 0.0;
};

struct LastStepView {
  double mu_star = 0.0;
  double var_star = 0.0;
  UncertaintyDecomposition uncertainty;
};

inline std::uint64_t member_seed(std::uint64_t base_seed, std::size_t index) {
  return base_seed + index;
}

// Mixture mean and variance of one time step:
//   mu* = mean(mu_i),  var* = mean(var_i + mu_i^2) - mu*^2.
// Evaluated as shifted, order-independent sums so that identical members
// reproduce their own moments exactly and member order never matters.
std::pair<double, double> mixture_moments(std::span<const double> means,
                                          std::span<const double> vars);

EnsemblePrediction aggregate(const Eigen::MatrixXd& member_means,
                             const Eigen::MatrixXd& member_vars);

EnsemblePrediction predict_ensemble(const EnsembleModel& model, const Eigen::MatrixXd& inputs);

UncertaintyDecomposition decompose_uncertainty(std::span<const double> member_vars,
                                               double var_star);
std::vector<UncertaintyDecomposition> decompose_uncertainty(const EnsemblePrediction& prediction);

LastStepView last_step_view(const EnsemblePrediction& prediction);

// One last-step decomposition per unit (full history as one sequence), or,
// with `window_length > 0`, one per sliding window of that length.
std::vector<UncertaintyDecomposition> dataset_uncertainty_profile(
    const EnsembleModel& model, std::span<const FeatureSeries> units,
    Eigen::Index window_length = 0);

struct EnsembleTrainOptions {
  int threads = 1;
  LogSink log;
  // Returns an already-trained member to reuse (resume), or nullopt.
  std::function<std::optional<TrainedPnn>(std::size_t index, std::uint64_t seed)> reuse;
  // Called once per finished member, serialized across workers.
  std::function<void(std::size_t index, const TrainedPnn&)> on_member;
};

EnsembleModel train_ensemble(const Architecture& architecture, const TrainingSet& data,
                             const TrainConfig& config, std::uint64_t base_seed,
                             std::size_t member_count, const EnsembleTrainOptions& options = {});

}  // namespace rulens
