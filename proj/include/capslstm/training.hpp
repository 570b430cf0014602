#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capslstm/data.hpp"
#include "capslstm/loss.hpp"
#include "capslstm/model.hpp"

namespace capslstm {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// SGD: p -= lr * g. Adam: bias-corrected first/second moments,
// p -= lr * m_hat / (sqrt(v_hat) + eps). All gradients are checked for
// finiteness before any parameter changes.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(std::span<const ParamRef<T>> params);

  std::uint64_t steps() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> recall;  // absent without FAKE examples
  std::optional<double> auc;     // absent unless both classes are present
  std::size_t true_positive = 0, false_positive = 0, true_negative = 0, false_negative = 0;
};

// Mann-Whitney AUC of `scores` for the FAKE class; tied pairs count 0.5.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const Label> labels);

// probs [N,2]. Prediction = argmax (ties -> lower index); FAKE is positive.
template <typename T>
Metrics compute_metrics(const Tensor<T>& probs, std::span<const Label> labels);

struct SplitMetrics {
  double loss = 0.0;
  Metrics metrics;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  SplitMetrics train;
  std::optional<SplitMetrics> validation;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation_accuracy = -1.0;
  double best_validation_loss = 0.0;  // tie-break between equally accurate epochs
  double wall_seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;  // drives the per-epoch shuffle of the training clips
  std::size_t workers = 1;
  // When set, the weights of the best validation-accuracy epoch (lower
  // validation loss among ties) are written here; without validation clips,
  // the final weights.
  std::optional<std::filesystem::path> checkpoint;
};

struct Evaluation {
  Tensor<float> probs;  // [N,2], clip order
  std::vector<Label> labels;
  SplitMetrics result;
};

Evaluation evaluate(const Model<float>& model, std::span<const ClipRecord> clips, std::size_t batch_size = 4,
                    std::size_t workers = 1);

// Epoch loop: shuffled training pass (forward, loss, backward, optimizer
// step), then a validation pass without updates. Training metrics are taken
// from the forward pass that preceded each update.
TrainHistory train_loop(Model<float>& model, std::span<const ClipRecord> train,
                        std::span<const ClipRecord> validation, const TrainConfig& config);

// "epoch,split,metric,value" rows; absent metrics are omitted.
std::string history_csv(const TrainHistory& history);
std::string history_summary_json(const TrainHistory& history);

}  // namespace capslstm
