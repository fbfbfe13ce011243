#pragma once

// Normalization, chronological splits, windowing, the multi-mode loss and the
// mini-batch training loop with early stopping.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stmrgnn/model.hpp"
#include "stmrgnn/optim.hpp"
#include "stmrgnn/panel.hpp"

namespace stmrgnn {

// Per mode and channel min/max of the training split.
class Normalizer {
 public:
  struct Range {
    double min = 0.0;
    double max = 0.0;
    bool degenerate() const { return !(max > min); }
  };

  // Statistics over steps [0, train_end) of every panel.
  static Normalizer fit(const std::vector<DemandPanel>& panels, std::size_t train_end);

  DemandPanel transform(const DemandPanel& panel, std::size_t mode) const;
  DemandPanel inverse(const DemandPanel& panel, std::size_t mode) const;
  double transform(double v, std::size_t mode, std::size_t channel) const;
  double inverse(double v, std::size_t mode, std::size_t channel) const;

  const Range& range(std::size_t mode, std::size_t channel) const { return ranges_.at(mode).at(channel); }
  std::size_t modes() const { return ranges_.size(); }
  // Channels with max == min; they are mapped to 0.
  std::size_t degenerate_channels() const;

 private:
  std::vector<std::array<Range, kChannels>> ranges_;
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const;
  struct Bounds {
    std::size_t train_end = 0;  // train = [0, train_end)
    std::size_t val_end = 0;    // val = [train_end, val_end), test = [val_end, steps)
    std::size_t steps = 0;
  };
  Bounds bounds(std::size_t steps) const;
};

// Stride-1 windows over one contiguous range, all modes aligned.
struct WindowSet {
  std::size_t window = 0;
  std::size_t first_step = 0;  // absolute index of the range start
  std::vector<std::size_t> node_counts;
  // inputs[m]: [count x N_m x 2 x T], targets[m]: [count x N_m x 2], row-major.
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> targets;
  std::vector<std::size_t> target_steps;  // absolute step index of each target

  std::size_t size() const { return target_steps.size(); }
  bool empty() const { return target_steps.empty(); }
  std::vector<Tensor> batch_inputs(const std::vector<std::size_t>& rows) const;
  std::vector<Tensor> batch_targets(const std::vector<std::size_t>& rows) const;
};

// Windows over steps [begin, end) of the (already normalized) panels. A range
// of length <= T yields an empty set; `warning`, when given, receives a note.
WindowSet make_windows(const std::vector<DemandPanel>& panels, std::size_t begin, std::size_t end, std::size_t T,
                       std::string* warning = nullptr);
WindowSet make_windows(const DemandPanel& panel, std::size_t T, std::string* warning = nullptr);

enum class LossNorm { l1, l2 };
std::string_view to_string(LossNorm n);
LossNorm parse_loss_norm(std::string_view name);

// sum_m eps_m * mean over batch of sum_i ||pred - target||, per node 2-vector.
Tensor multimode_loss(const std::vector<Tensor>& predictions, const std::vector<Tensor>& targets,
                      const std::vector<double>& weights, LossNorm norm = LossNorm::l1);

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  double weight_decay = 1e-5;
  std::vector<double> loss_weights;  // empty: 1/k each
  std::size_t patience = 20;
  LossNorm loss_norm = LossNorm::l1;
  std::uint64_t seed = 1;

  // Throws ConfigError. `modes` fixes the expected number of loss weights.
  void validate(std::size_t modes) const;
  std::vector<double> resolved_weights(std::size_t modes) const;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  // Returns true when `val_loss` improves on the best so far.
  bool update(std::size_t epoch, double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
  bool any_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  bool diverged = false;
  std::string diagnostic;
};

// Mean loss over a window set, evaluation mode, batched.
double evaluate_loss(const STMRGNN& model, const WindowSet& windows, const TrainConfig& config);

// Leaves the best-validation parameters in `model`. On divergence the model is
// reset to the last good parameters and `diverged` is set.
TrainResult train(STMRGNN& model, const WindowSet& train_set, const WindowSet& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_training_log(const std::filesystem::path& path, const TrainResult& result);

}  // namespace stmrgnn
