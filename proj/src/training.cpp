#include "stmrgnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "stmrgnn/csv.hpp"
#include "stmrgnn/errors.hpp"

namespace stmrgnn {

Normalizer Normalizer::fit(const std::vector<DemandPanel>& panels, std::size_t train_end) {
  Normalizer n;
  for (const auto& p : panels) {
    if (train_end < 2 || train_end > p.steps()) {
      throw ContractError("normalizer: training split needs at least 2 steps");
    }
    std::array<Range, kChannels> r;
    for (std::size_t c = 0; c < kChannels; ++c) {
      r[c].min = r[c].max = p.at(0, 0, c);
      for (std::size_t t = 0; t < train_end; ++t) {
        for (std::size_t i = 0; i < p.nodes(); ++i) {
          r[c].min = std::min(r[c].min, p.at(t, i, c));
          r[c].max = std::max(r[c].max, p.at(t, i, c));
        }
      }
    }
    n.ranges_.push_back(r);
  }
  return n;
}

double Normalizer::transform(double v, std::size_t mode, std::size_t channel) const {
  const Range& r = range(mode, channel);
  if (r.degenerate()) return 0.0;
  return (v - r.min) / (r.max - r.min);
}

double Normalizer::inverse(double v, std::size_t mode, std::size_t channel) const {
  const Range& r = range(mode, channel);
  if (r.degenerate()) return r.min;
  return v * (r.max - r.min) + r.min;
}

DemandPanel Normalizer::transform(const DemandPanel& panel, std::size_t mode) const {
  DemandPanel out = panel;
  for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] = transform(out.values[k], mode, k % kChannels);
  return out;
}

DemandPanel Normalizer::inverse(const DemandPanel& panel, std::size_t mode) const {
  DemandPanel out = panel;
  for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] = inverse(out.values[k], mode, k % kChannels);
  return out;
}

std::size_t Normalizer::degenerate_channels() const {
  std::size_t n = 0;
  for (const auto& m : ranges_) {
    for (const auto& r : m) n += r.degenerate() ? 1 : 0;
  }
  return n;
}

// ---------------------------------------------------------------------------

void SplitSpec::validate() const {
  if (!(train > 0.0 && val > 0.0 && test > 0.0)) throw ConfigError("split: fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
}

SplitSpec::Bounds SplitSpec::bounds(std::size_t steps) const {
  validate();
  Bounds b;
  b.steps = steps;
  b.train_end = static_cast<std::size_t>(std::floor(train * static_cast<double>(steps)));
  b.val_end = static_cast<std::size_t>(std::floor((train + val) * static_cast<double>(steps)));
  b.val_end = std::min(b.val_end, steps);
  return b;
}

// ---------------------------------------------------------------------------

namespace {

Tensor gather_rows(const std::vector<double>& src, std::size_t row_size, const std::vector<std::size_t>& rows,
                   Shape tail) {
  std::vector<double> v(rows.size() * row_size);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[r] * row_size), row_size,
                v.begin() + static_cast<std::ptrdiff_t>(r * row_size));
  }
  tail.insert(tail.begin(), rows.size());
  return Tensor::from(std::move(tail), std::move(v));
}

}  // namespace

std::vector<Tensor> WindowSet::batch_inputs(const std::vector<std::size_t>& rows) const {
  std::vector<Tensor> out;
  for (std::size_t m = 0; m < node_counts.size(); ++m) {
    const std::size_t n = node_counts[m];
    out.push_back(gather_rows(inputs[m], n * kChannels * window, rows, {n, kChannels, window}));
  }
  return out;
}

std::vector<Tensor> WindowSet::batch_targets(const std::vector<std::size_t>& rows) const {
  std::vector<Tensor> out;
  for (std::size_t m = 0; m < node_counts.size(); ++m) {
    const std::size_t n = node_counts[m];
    out.push_back(gather_rows(targets[m], n * kChannels, rows, {n, kChannels}));
  }
  return out;
}

WindowSet make_windows(const std::vector<DemandPanel>& panels, std::size_t begin, std::size_t end, std::size_t T,
                       std::string* warning) {
  if (T == 0) throw ContractError("make_windows: window length must be positive");
  if (begin > end) throw ContractError("make_windows: empty range");
  WindowSet w;
  w.window = T;
  w.first_step = begin;
  for (const auto& p : panels) {
    if (end > p.steps()) throw ContractError("make_windows: range exceeds panel length");
    w.node_counts.push_back(p.nodes());
  }
  w.inputs.resize(panels.size());
  w.targets.resize(panels.size());
  const std::size_t len = end - begin;
  if (len <= T) {
    if (warning) {
      *warning = "range of " + std::to_string(len) + " steps is not longer than the window (" + std::to_string(T) +
                 "); no samples";
    }
    return w;
  }
  const std::size_t count = len - T;
  for (std::size_t s = 0; s < count; ++s) w.target_steps.push_back(begin + s + T);
  for (std::size_t m = 0; m < panels.size(); ++m) {
    const DemandPanel& p = panels[m];
    const std::size_t n = p.nodes();
    auto& in = w.inputs[m];
    auto& tg = w.targets[m];
    in.resize(count * n * kChannels * T);
    tg.resize(count * n * kChannels);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t t0 = begin + s;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < kChannels; ++c) {
          for (std::size_t tau = 0; tau < T; ++tau) {
            in[((s * n + i) * kChannels + c) * T + tau] = p.at(t0 + tau, i, c);
          }
          tg[(s * n + i) * kChannels + c] = p.at(t0 + T, i, c);
        }
      }
    }
  }
  return w;
}

WindowSet make_windows(const DemandPanel& panel, std::size_t T, std::string* warning) {
  return make_windows(std::vector<DemandPanel>{panel}, 0, panel.steps(), T, warning);
}

// ---------------------------------------------------------------------------

std::string_view to_string(LossNorm n) { return n == LossNorm::l1 ? "l1" : "l2"; }

LossNorm parse_loss_norm(std::string_view name) {
  if (name == "l1") return LossNorm::l1;
  if (name == "l2") return LossNorm::l2;
  throw ConfigError("unknown loss norm '" + std::string(name) + "' (expected l1 or l2)");
}

Tensor multimode_loss(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets,
                      const std::vector<double>& weights, LossNorm norm) {
  if (predictions.size() != targets.size() || predictions.size() != weights.size() || predictions.empty()) {
    throw ContractError("multimode_loss: need one prediction, target and weight per mode");
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("multimode_loss: mode weights must sum to 1");
  Tensor loss;
  for (std::size_t m = 0; m < predictions.size(); ++m) {
    if (predictions[m].shape() != targets[m].shape() || predictions[m].ndim() != 3) {
      throw DimensionError("multimode_loss: prediction " + shape_str(predictions[m].shape()) + " vs target " +
                           shape_str(targets[m].shape()));
    }
    const auto batch = static_cast<double>(predictions[m].dim(0));
    const Tensor diff = sub(predictions[m], targets[m]);
    const Tensor per_node = norm == LossNorm::l1 ? sum(abs(diff)) : sum(l2_norm_last_axis(diff));
    const Tensor term = scale(per_node, weights[m] / batch);
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate(std::size_t modes) const {
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (patience == 0) throw ConfigError("train: patience must be positive");
  if (!loss_weights.empty()) {
    if (loss_weights.size() != modes) {
      throw ConfigError("train: " + std::to_string(loss_weights.size()) + " loss weights for " +
                        std::to_string(modes) + " modes");
    }
    double total = 0.0;
    for (double w : loss_weights) {
      if (!(w >= 0.0)) throw ConfigError("train: loss weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("train: loss weights must sum to 1");
  }
}

std::vector<double> TrainConfig::resolved_weights(std::size_t modes) const {
  if (!loss_weights.empty()) return loss_weights;
  return std::vector<double>(modes, 1.0 / static_cast<double>(modes));
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  if (!any_ || val_loss < best_) {
    any_ = true;
    best_ = val_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

double evaluate_loss(const STMRGNN& model, const WindowSet& windows, const TrainConfig& config) {
  if (windows.empty()) throw ContractError("evaluate_loss: no windows");
  NoGradGuard guard;
  const auto weights = config.resolved_weights(windows.node_counts.size());
  double total = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += config.batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < std::min(windows.size(), start + config.batch_size); ++r) rows.push_back(r);
    const auto pred = model.forward(windows.batch_inputs(rows), false);
    const double l = multimode_loss(pred, windows.batch_targets(rows), weights, config.loss_norm).item();
    total += l * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(windows.size());
}

TrainResult train(STMRGNN& model, const WindowSet& train_set, const WindowSet& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  const std::size_t k = model.relations().k();
  config.validate(k);
  if (train_set.empty() || val_set.empty()) throw ContractError("train: training and validation windows required");
  const auto weights = config.resolved_weights(k);

  auto& params = model.parameters().tensors();
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.weight_decay = config.weight_decay;
  AdamState state = make_adam_state(params, opts);

  Rng dropout_rng(Rng::derive(config.seed, 0x44524f50ull));
  EarlyStopping stopper(config.patience);
  TrainResult result;
  auto best = model.parameters().snapshot();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::derive(config.seed, epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    double train_total = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(order.size(), start + config.batch_size)));
        zero_grads(params);
        const auto pred = model.forward(train_set.batch_inputs(rows), true, &dropout_rng);
        const Tensor loss = multimode_loss(pred, train_set.batch_targets(rows), weights, config.loss_norm);
        backward(loss);
        adam_step(params, state);
        train_total += loss.item() * static_cast<double>(rows.size());
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = train_total / static_cast<double>(order.size());
      rec.val_loss = evaluate_loss(model, val_set, config);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) throw NumericError("non-finite loss");
      result.log.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (stopper.update(epoch, rec.val_loss)) best = model.parameters().snapshot();
      if (stopper.should_stop()) {
        result.stopped_early = true;
        break;
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.diagnostic = "training diverged in epoch " + std::to_string(epoch) + ": " + e.what() +
                          "; parameters reset to epoch " + std::to_string(stopper.best_epoch());
      break;
    }
  }
  model.parameters().restore(best);
  zero_grads(params);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

void write_training_log(const std::filesystem::path& path, const TrainResult& result) {
  auto out = csv::open_output(path);
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& r : result.log) {
    out << r.epoch << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.val_loss) << ','
        << csv::format_double(r.seconds) << '\n';
  }
}

}  // namespace stmrgnn
