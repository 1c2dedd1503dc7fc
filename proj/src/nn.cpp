#include "rulens/nn.hpp"

#include "rulens/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace rulens {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Vectorized activations. exp overflow saturates to exactly 0 or 1.
template <typename Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& x) {
  return (1.0 + (-x).exp()).inverse();
}

template <typename Derived>
auto tanh_array(const Eigen::ArrayBase<Derived>& x) {
  return 2.0 * (1.0 + (-2.0 * x).exp()).inverse() - 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture / parameters

void Architecture::validate() const {
  if (input_dim < 1) throw ArgumentError("architecture input_dim must be >= 1");
  for (auto h : recurrent_layers)
    if (h < 1) throw ArgumentError("recurrent layer sizes must be >= 1");
  if (dense_layers.empty() || dense_layers.back() != 2) {
    throw ArgumentError("dense layers must end in the 2-unit Gaussian head");
  }
  for (auto n : dense_layers)
    if (n < 1) throw ArgumentError("dense layer sizes must be >= 1");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) {
    throw ArgumentError("output_scale must be positive and finite");
  }
}

Eigen::Index Architecture::parameter_count() const {
  Eigen::Index count = 0;
  Eigen::Index in = input_dim;
  for (auto h : recurrent_layers) {
    count += 4 * h * in + 4 * h * h + 4 * h;
    in = h;
  }
  for (auto n : dense_layers) {
    count += n * in + n;
    in = n;
  }
  return count;
}

PnnParams::PnnParams(Architecture architecture, std::uint64_t seed)
    : arch_(std::move(architecture)), seed_(seed) {
  arch_.validate();
  Eigen::Index offset = 0;
  auto take = [&offset](Eigen::Index rows, Eigen::Index cols) {
    Block b{offset, rows, cols};
    offset += rows * cols;
    return b;
  };
  Eigen::Index in = arch_.input_dim;
  for (auto h : arch_.recurrent_layers) {
    lstm_blocks_.push_back({take(4 * h, in), take(4 * h, h), take(4 * h, 1)});
    in = h;
  }
  for (auto n : arch_.dense_layers) {
    dense_blocks_.push_back({take(n, in), take(n, 1)});
    in = n;
  }
  values_ = Eigen::VectorXd::Zero(offset);
}

PnnParams init_params(const Architecture& architecture, std::uint64_t seed) {
  PnnParams params(architecture, seed);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto&& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  };
  for (std::size_t k = 0; k < architecture.recurrent_layers.size(); ++k) {
    const Eigen::Index h = architecture.recurrent_layers[k];
    fill(params.lstm_input_weights(k));
    fill(params.lstm_recurrent_weights(k));
    params.lstm_bias(k).segment(h, h).setOnes();
  }
  for (std::size_t k = 0; k < architecture.dense_layers.size(); ++k) {
    fill(params.dense_weights(k));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Batches

SequenceBatch make_batch(std::span<const SequenceExample> examples) {
  if (examples.empty()) throw ArgumentError("batch must be nonempty");
  const Eigen::Index T = examples.front().inputs.rows();
  const Eigen::Index F = examples.front().inputs.cols();
  const auto B = static_cast<Eigen::Index>(examples.size());
  SequenceBatch batch;
  batch.steps = T;
  batch.size = B;
  batch.inputs.resize(F, T * B);
  batch.targets.resize(T * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& ex = examples[static_cast<std::size_t>(b)];
    if (ex.inputs.rows() != T || ex.inputs.cols() != F || ex.targets.size() != T) {
      throw ArgumentError("batch sequences must share length and feature count");
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      batch.inputs.col(t * B + b) = ex.inputs.row(t).transpose();
      batch.targets(t * B + b) = ex.targets(t);
    }
  }
  return batch;
}

SequenceBatch TrainingSet::gather(std::span<const std::size_t> window_indices) const {
  if (window_indices.empty()) throw ArgumentError("batch must be nonempty");
  const Eigen::Index T = window_length;
  const auto B = static_cast<Eigen::Index>(window_indices.size());
  SequenceBatch batch;
  batch.steps = T;
  batch.size = B;
  batch.inputs.resize(feature_count(), T * B);
  batch.targets.resize(T * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Window& w = windows[window_indices[static_cast<std::size_t>(b)]];
    const auto& x = inputs[w.series];
    const auto& y = targets[w.series];
    for (Eigen::Index t = 0; t < T; ++t) {
      batch.inputs.col(t * B + b) = x.row(w.start + t).transpose();
      batch.targets(t * B + b) = y(w.start + t);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LstmTrace {
  Eigen::MatrixXd gates;  // 4h x TB, activated (i, f, g, o)
  Eigen::MatrixXd cell;   // h x TB
  Eigen::MatrixXd cell_tanh;
  Eigen::MatrixXd hidden;
};

struct ForwardTrace {
  std::vector<LstmTrace> lstm;
  std::vector<Eigen::MatrixXd> dense;  // activations of every dense layer
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd variance;
};

void run_lstm(const PnnParams& params, std::size_t k, const Eigen::MatrixXd& x, Eigen::Index T,
              Eigen::Index B, LstmTrace& out) {
  const auto W = params.lstm_input_weights(k);
  const auto U = params.lstm_recurrent_weights(k);
  const auto bias = params.lstm_bias(k);
  const Eigen::Index h = U.cols();

  out.gates.noalias() = W * x;
  out.gates.colwise() += bias;
  out.cell.resize(h, T * B);
  out.cell_tanh.resize(h, T * B);
  out.hidden.resize(h, T * B);

  for (Eigen::Index t = 0; t < T; ++t) {
    auto z = out.gates.middleCols(t * B, B);
    if (t > 0) z.noalias() += U * out.hidden.middleCols((t - 1) * B, B);
    z.topRows(2 * h) = sigmoid_array(z.topRows(2 * h).array()).matrix();
    z.middleRows(2 * h, h) = tanh_array(z.middleRows(2 * h, h).array()).matrix();
    z.bottomRows(h) = sigmoid_array(z.bottomRows(h).array()).matrix();

    auto c = out.cell.middleCols(t * B, B);
    c = z.topRows(h).cwiseProduct(z.middleRows(2 * h, h));
    if (t > 0) c += z.middleRows(h, h).cwiseProduct(out.cell.middleCols((t - 1) * B, B));
    out.cell_tanh.middleCols(t * B, B) = tanh_array(c.array()).matrix();
    out.hidden.middleCols(t * B, B) =
        z.bottomRows(h).cwiseProduct(out.cell_tanh.middleCols(t * B, B));
  }
}

ForwardTrace run_forward(const PnnParams& params, const Eigen::MatrixXd& x, Eigen::Index T,
                         Eigen::Index B) {
  const Architecture& arch = params.architecture();
  if (x.rows() != arch.input_dim) {
    throw ArgumentError("input has " + std::to_string(x.rows()) + " features, network expects " +
                        std::to_string(arch.input_dim));
  }
  ForwardTrace trace;
  trace.lstm.resize(arch.recurrent_layers.size());
  const Eigen::MatrixXd* layer_in = &x;
  for (std::size_t k = 0; k < trace.lstm.size(); ++k) {
    run_lstm(params, k, *layer_in, T, B, trace.lstm[k]);
    layer_in = &trace.lstm[k].hidden;
  }
  trace.dense.resize(arch.dense_layers.size());
  for (std::size_t k = 0; k < trace.dense.size(); ++k) {
    auto& a = trace.dense[k];
    a.noalias() = params.dense_weights(k) * (*layer_in);
    a.colwise() += params.dense_bias(k);
    if (k + 1 < trace.dense.size()) a = tanh_array(a.array()).matrix();
    layer_in = &a;
  }
  const double scale = arch.output_scale;
  const auto& head = trace.dense.back();
  trace.mean = scale * head.row(0);
  trace.variance = head.row(1).unaryExpr([scale](double s) {
    return scale * scale * (softplus(s) + kVarianceFloor);
  });
  return trace;
}

// Per-sample (over time) mean NLL; checks finiteness with sample index.
double traced_loss(const ForwardTrace& trace, const SequenceBatch& batch) {
  const Eigen::Index T = batch.steps;
  const Eigen::Index B = batch.size;
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    double sample = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::Index j = t * B + b;
      const double v = trace.variance(j);
      const double r = batch.targets(j) - trace.mean(j);
      sample += 0.5 * std::log(v) + r * r / (2.0 * v) + kHalfLog2Pi;
    }
    sample /= static_cast<double>(T);
    if (!std::isfinite(sample)) {
      throw NumericError("non-finite loss for batch sample " + std::to_string(b));
    }
    total += sample;
  }
  return total / static_cast<double>(B);
}

void check_batch(const PnnParams& params, const SequenceBatch& batch) {
  if (batch.size < 1 || batch.steps < 1) throw ArgumentError("batch must be nonempty");
  if (batch.inputs.rows() != params.architecture().input_dim ||
      batch.inputs.cols() != batch.steps * batch.size ||
      batch.targets.size() != batch.steps * batch.size) {
    throw ArgumentError("batch shape does not match the network");
  }
}

}  // namespace

GaussianSeqPrediction forward(const PnnParams& params, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() < 1) throw ArgumentError("forward needs at least one time step");
  if (!inputs.allFinite()) throw NumericError("forward input contains non-finite values");
  const Eigen::MatrixXd x = inputs.transpose();
  const ForwardTrace trace = run_forward(params, x, inputs.rows(), 1);
  return {trace.mean.transpose(), trace.variance.transpose()};
}

double gaussian_nll(const GaussianSeqPrediction& prediction, const Eigen::VectorXd& targets) {
  if (prediction.means.size() != targets.size() || targets.size() == 0) {
    throw ArgumentError("prediction and targets must have equal nonzero length");
  }
  const Eigen::ArrayXd v = prediction.variances.array();
  const Eigen::ArrayXd r = targets.array() - prediction.means.array();
  return (0.5 * v.log() + r.square() / (2.0 * v)).mean() + kHalfLog2Pi;
}

double batch_loss(const PnnParams& params, const SequenceBatch& batch) {
  check_batch(params, batch);
  return traced_loss(run_forward(params, batch.inputs, batch.steps, batch.size), batch);
}

GradResult grad(const PnnParams& params, const SequenceBatch& batch) {
  check_batch(params, batch);
  const Architecture& arch = params.architecture();
  const Eigen::Index T = batch.steps;
  const Eigen::Index B = batch.size;
  const ForwardTrace trace = run_forward(params, batch.inputs, T, B);

  GradResult result{PnnParams(arch, params.seed()), traced_loss(trace, batch)};
  PnnParams& g = result.gradient;

  // Head: d loss / d (raw mean, raw scale), each cell weighted 1 / (T B).
  const double w = 1.0 / static_cast<double>(T * B);
  const double scale = arch.output_scale;
  const auto& head = trace.dense.back();
  Eigen::MatrixXd delta(2, T * B);
  for (Eigen::Index j = 0; j < T * B; ++j) {
    const double v = trace.variance(j);
    const double r = batch.targets(j) - trace.mean(j);
    delta(0, j) = w * scale * (-r / v);
    delta(1, j) = w * scale * scale * sigmoid(head(1, j)) * (0.5 / v - r * r / (2.0 * v * v));
  }

  // Dense layers, top down.
  const auto n_dense = arch.dense_layers.size();
  const auto n_lstm = arch.recurrent_layers.size();
  for (std::size_t kk = n_dense; kk-- > 0;) {
    const Eigen::MatrixXd& below =
        kk > 0 ? trace.dense[kk - 1] : (n_lstm > 0 ? trace.lstm.back().hidden : batch.inputs);
    g.dense_weights(kk).noalias() = delta * below.transpose();
    g.dense_bias(kk) = delta.rowwise().sum();
    if (kk == 0 && n_lstm == 0) break;
    Eigen::MatrixXd d_below = params.dense_weights(kk).transpose() * delta;
    if (kk > 0) d_below.array() *= 1.0 - below.array().square();
    delta = std::move(d_below);
  }

  // LSTM layers, top down, each by backpropagation through time. `delta`
  // holds d loss / d hidden for the current layer.
  for (std::size_t k = n_lstm; k-- > 0;) {
    const LstmTrace& tr = trace.lstm[k];
    const Eigen::MatrixXd& x = k > 0 ? trace.lstm[k - 1].hidden : batch.inputs;
    const auto U = params.lstm_recurrent_weights(k);
    const Eigen::Index h = U.cols();

    Eigen::MatrixXd dz(4 * h, T * B);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, B);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, B);
    Eigen::MatrixXd dh(h, B);
    Eigen::MatrixXd dc(h, B);
    for (Eigen::Index t = T; t-- > 0;) {
      const auto z = tr.gates.middleCols(t * B, B);
      const auto gi = z.topRows(h).array();
      const auto gf = z.middleRows(h, h).array();
      const auto gg = z.middleRows(2 * h, h).array();
      const auto go = z.bottomRows(h).array();
      const auto tc = tr.cell_tanh.middleCols(t * B, B).array();

      dh = delta.middleCols(t * B, B) + dh_next;
      dc = dc_next.array() + dh.array() * go * (1.0 - tc.square());

      auto dzt = dz.middleCols(t * B, B);
      dzt.topRows(h) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
      if (t > 0) {
        dzt.middleRows(h, h) =
            (dc.array() * tr.cell.middleCols((t - 1) * B, B).array() * gf * (1.0 - gf)).matrix();
      } else {
        dzt.middleRows(h, h).setZero();
      }
      dzt.middleRows(2 * h, h) = (dc.array() * gi * (1.0 - gg.square())).matrix();
      dzt.bottomRows(h) = (dh.array() * tc * go * (1.0 - go)).matrix();

      dh_next.noalias() = U.transpose() * dzt;
      dc_next = (dc.array() * gf).matrix();
    }

    g.lstm_input_weights(k).noalias() = dz * x.transpose();
    if (T > 1) {
      g.lstm_recurrent_weights(k).noalias() =
          dz.rightCols((T - 1) * B) * tr.hidden.leftCols((T - 1) * B).transpose();
    }
    g.lstm_bias(k) = dz.rowwise().sum();
    if (k > 0) delta.noalias() = params.lstm_input_weights(k).transpose() * dz;
  }
  return result;
}

void adam_step(PnnParams& params, const PnnParams& gradient, OptimizerState& state) {
  if (gradient.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ArgumentError("adam_step: parameter, gradient and state sizes differ");
  }
  const AdamConfig& c = state.config;
  const auto& g = gradient.values().array();
  state.step += 1;
  state.first_moment = c.beta1 * state.first_moment.array() + (1.0 - c.beta1) * g;
  state.second_moment = c.beta2 * state.second_moment.array() + (1.0 - c.beta2) * g.square();
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.values().array() -= c.learning_rate * (state.first_moment.array() / bias1) /
                             ((state.second_moment.array() / bias2).sqrt() + c.epsilon);
}

double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& analytic, const Eigen::VectorXd& x,
                         double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ArgumentError("finite difference step must be positive");
  }
  if (x.size() > 10000) throw ArgumentError("finite_diff_check is limited to 10000 coordinates");
  if (analytic.size() != x.size()) throw ArgumentError("gradient and point sizes differ");
  Eigen::VectorXd probe = x;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe(k) = x(k) + epsilon;
    const double up = f(probe);
    probe(k) = x(k) - epsilon;
    const double down = f(probe);
    probe(k) = x(k);
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err =
        std::abs(analytic(k) - numeric) / std::max(1e-8, std::abs(analytic(k)) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check(const PnnParams& params, const SequenceBatch& batch, double epsilon) {
  const GradResult analytic = grad(params, batch);
  PnnParams probe = params;
  auto loss_at = [&](const Eigen::VectorXd& theta) {
    probe.values() = theta;
    return batch_loss(probe, batch);
  };
  return finite_diff_check(loss_at, analytic.gradient.values(), params.values(), epsilon);
}

// ---------------------------------------------------------------------------
// Training

bool TrainConfig::operator==(const TrainConfig& o) const {
  return batch_size == o.batch_size && adam.learning_rate == o.adam.learning_rate &&
         adam.beta1 == o.adam.beta1 && adam.beta2 == o.adam.beta2 &&
         adam.epsilon == o.adam.epsilon && max_epochs == o.max_epochs &&
         early_stopping == o.early_stopping && early_stop_start == o.early_stop_start &&
         patience == o.patience && clip_norm == o.clip_norm;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::early_stop ? "early_stop" : "max_epochs";
}

StopReason stop_reason_from_string(std::string_view text) {
  if (text == "early_stop") return StopReason::early_stop;
  if (text == "max_epochs") return StopReason::max_epochs;
  throw ArgumentError("unknown stop reason '" + std::string(text) + "'");
}

TrainedPnn train_pnn(const Architecture& architecture, const TrainingSet& data,
                     const TrainConfig& config, std::uint64_t seed, const LogSink& log) {
  if (data.windows.empty()) throw ArgumentError("training set has no windows");
  if (config.batch_size < 1 || config.max_epochs < 1 || config.patience < 1) {
    throw ArgumentError("batch_size, max_epochs and patience must be >= 1");
  }
  if (data.feature_count() != architecture.input_dim) {
    throw ArgumentError("training data feature count does not match architecture input_dim");
  }

  PnnParams params = init_params(architecture, seed);
  OptimizerState state(config.adam, params.size());
  // Shuffle stream kept apart from the initialization stream.
  std::seed_seq shuffle_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                             0x5eedu};
  std::mt19937_64 shuffle_rng(shuffle_seed);

  std::vector<std::size_t> order(data.windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainedPnn best{params, {}};
  TrainHistory& history = best.history;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  const auto n = order.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t clipped = 0;
    for (std::size_t first = 0; first < n; first += batch_size) {
      const std::size_t count = std::min(batch_size, n - first);
      const SequenceBatch batch =
          data.gather(std::span<const std::size_t>(order.data() + first, count));
      GradResult step;
      try {
        step = grad(params, batch);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      loss_sum += step.loss * static_cast<double>(count);
      if (config.clip_norm > 0.0) {
        const double norm = step.gradient.values().norm();
        if (norm > config.clip_norm) {
          step.gradient.values() *= config.clip_norm / norm;
          ++clipped;
        }
      }
      adam_step(params, step.gradient, state);
    }
    const double epoch_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(epoch_loss) || !params.all_finite()) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    history.epoch_loss.push_back(epoch_loss);
    history.clipped_steps += clipped;
    history.stop_epoch = epoch;

    if (log) {
      std::ostringstream msg;
      msg.precision(6);
      msg << "seed " << seed << " epoch " << epoch << " loss " << epoch_loss;
      if (clipped > 0) msg << " (gradient clipped on " << clipped << " steps)";
      log(msg.str());
    }

    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best.params = params;
      history.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (config.early_stopping && epoch >= config.early_stop_start && since_best >= config.patience) {
      history.stop_reason = StopReason::early_stop;
      return best;
    }
  }
  history.stop_reason = StopReason::max_epochs;
  return best;
}

}  // namespace rulens
