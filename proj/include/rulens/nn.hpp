#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rulens {

// Stacked LSTM layers, then dense layers whose last one is the 2-unit
// Gaussian head (raw mean, raw scale). Hidden dense layers use tanh.
struct Architecture {
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> recurrent_layers{32, 16};
  std::vector<Eigen::Index> dense_layers{2};
  // The head emits mean = scale * raw_mean and
  // variance = scale^2 * (softplus(raw_scale) + 1e-6).
  double output_scale = 1.0;

  void validate() const;
  Eigen::Index parameter_count() const;
  bool operator==(const Architecture&) const = default;
};

inline constexpr double kVarianceFloor = 1e-6;

// All learnable parameters of one network, stored as one flat vector in
// declared layer order (per LSTM layer: W, U, b; per dense layer: W, b).
// Matrices are column-major views into that vector. Gradients use the same
// type so they mirror the parameter shapes exactly.
class PnnParams {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  PnnParams() = default;
  // Zero-initialized parameters.
  explicit PnnParams(Architecture architecture, std::uint64_t seed = 0);

  PnnParams(const PnnParams&) = default;
  PnnParams(PnnParams&&) noexcept = default;
  PnnParams& operator=(const PnnParams&) = default;
  PnnParams& operator=(PnnParams&&) noexcept = default;

  const Architecture& architecture() const { return arch_; }
  std::uint64_t seed() const { return seed_; }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }

  // LSTM layer k: input weights [4h x in], recurrent weights [4h x h],
  // bias [4h]. Gate blocks are ordered input, forget, cell, output.
  MatrixMap lstm_input_weights(std::size_t k) { return matrix(lstm_blocks_[k][0]); }
  MatrixMap lstm_recurrent_weights(std::size_t k) { return matrix(lstm_blocks_[k][1]); }
  VectorMap lstm_bias(std::size_t k) { return vector(lstm_blocks_[k][2]); }
  ConstMatrixMap lstm_input_weights(std::size_t k) const { return matrix(lstm_blocks_[k][0]); }
  ConstMatrixMap lstm_recurrent_weights(std::size_t k) const { return matrix(lstm_blocks_[k][1]); }
  ConstVectorMap lstm_bias(std::size_t k) const { return vector(lstm_blocks_[k][2]); }

  MatrixMap dense_weights(std::size_t k) { return matrix(dense_blocks_[k][0]); }
  VectorMap dense_bias(std::size_t k) { return vector(dense_blocks_[k][1]); }
  ConstMatrixMap dense_weights(std::size_t k) const { return matrix(dense_blocks_[k][0]); }
  ConstVectorMap dense_bias(std::size_t k) const { return vector(dense_blocks_[k][1]); }

  bool all_finite() const { return values_.allFinite(); }

 private:
  struct Block {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
  };

  MatrixMap matrix(const Block& b) { return {values_.data() + b.offset, b.rows, b.cols}; }
  ConstMatrixMap matrix(const Block& b) const { return {values_.data() + b.offset, b.rows, b.cols}; }
  VectorMap vector(const Block& b) { return {values_.data() + b.offset, b.rows}; }
  ConstVectorMap vector(const Block& b) const { return {values_.data() + b.offset, b.rows}; }

  Architecture arch_;
  std::uint64_t seed_ = 0;
  Eigen::VectorXd values_;
  std::vector<std::array<Block, 3>> lstm_blocks_;
  std::vector<std::array<Block, 2>> dense_blocks_;
};

struct GaussianSeqPrediction {
  Eigen::VectorXd means;      // [T]
  Eigen::VectorXd variances;  // [T], strictly positive
};

struct SequenceExample {
  Eigen::MatrixXd inputs;   // T x n_features
  Eigen::VectorXd targets;  // T
};

// Equal-length sequences packed time-major: column t * size + b holds step t
// of sequence b.
struct SequenceBatch {
  Eigen::Index steps = 0;
  Eigen::Index size = 0;
  Eigen::MatrixXd inputs;      // n_features x (steps * size)
  Eigen::RowVectorXd targets;  // steps * size
};

SequenceBatch make_batch(std::span<const SequenceExample> examples);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const AdamConfig& cfg, Eigen::Index parameter_count)
      : config(cfg),
        first_moment(Eigen::VectorXd::Zero(parameter_count)),
        second_moment(Eigen::VectorXd::Zero(parameter_count)) {}
};

struct GradResult {
  PnnParams gradient;
  double loss = 0.0;  // mean NLL over the batch
};

PnnParams init_params(const Architecture& architecture, std::uint64_t seed);

GaussianSeqPrediction forward(const PnnParams& params, const Eigen::MatrixXd& inputs);

// Mean over time steps of 1/2 log v + (y - mu)^2 / (2 v) + 1/2 log(2 pi).
double gaussian_nll(const GaussianSeqPrediction& prediction, const Eigen::VectorXd& targets);

// Mean NLL of a batch (each sequence weighted equally, each step within a
// sequence weighted equally).
double batch_loss(const PnnParams& params, const SequenceBatch& batch);

// Exact reverse-mode gradient of `batch_loss`.
GradResult grad(const PnnParams& params, const SequenceBatch& batch);

void adam_step(PnnParams& params, const PnnParams& gradient, OptimizerState& state);

// Max over coordinates of |a - n| / max(1e-8, |a| + |n|), with n the central
// difference (f(x + eps) - f(x - eps)) / (2 eps).
double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& analytic, const Eigen::VectorXd& x,
                         double epsilon);
double finite_diff_check(const PnnParams& params, const SequenceBatch& batch,
                         double epsilon = 1e-5);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  Eigen::Index batch_size = 32;
  AdamConfig adam;
  int max_epochs = 100;
  bool early_stopping = true;
  int early_stop_start = 35;
  int patience = 3;
  double clip_norm = 5.0;  // <= 0 disables clipping

  bool operator==(const TrainConfig&) const;
};

// Training windows as (series, start row) references into shared series.
struct TrainingSet {
  struct Window {
    std::size_t series = 0;
    Eigen::Index start = 0;
  };

  Eigen::Index window_length = 0;
  std::vector<Eigen::MatrixXd> inputs;   // per series, T_i x n_features
  std::vector<Eigen::VectorXd> targets;  // per series, T_i
  std::vector<Window> windows;

  Eigen::Index feature_count() const { return inputs.empty() ? 0 : inputs.front().cols(); }
  SequenceBatch gather(std::span<const std::size_t> window_indices) const;
};

enum class StopReason { early_stop, max_epochs };
std::string_view to_string(StopReason reason);
StopReason stop_reason_from_string(std::string_view text);

struct TrainHistory {
  std::vector<double> epoch_loss;
  int stop_epoch = 0;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;
  std::int64_t clipped_steps = 0;

  bool operator==(const TrainHistory&) const = default;
};

struct TrainedPnn {
  PnnParams params;
  TrainHistory history;
};

using LogSink = std::function<void(std::string_view)>;

// Deterministic for a given (architecture, data, config, seed). Returns the
// parameters at the end of the best-loss epoch.
TrainedPnn train_pnn(const Architecture& architecture, const TrainingSet& data,
                     const TrainConfig& config, std::uint64_t seed,
                     const LogSink& log = {});

}  // namespace rulens
