#include "capslstm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "capslstm/weights.hpp"

namespace capslstm {

template <typename T>
void Optimizer<T>::step(std::span<const ParamRef<T>> params) {
  for (const auto& p : params) {
    for (T g : p.param->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + p.name + "'");
    }
  }
  ++steps_;
  const T lr = static_cast<T>(config_.learning_rate);
  if (config_.kind == OptimizerKind::Sgd) {
    for (const auto& p : params) {
      auto& value = p.param->value;
      const auto& grad = p.param->grad;
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * grad[i];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.param->value.shape());
      v_.emplace_back(p.param->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("optimizer parameter set changed between steps");
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  const T eps = static_cast<T>(config_.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k].param->value;
    const auto& grad = params[k].param->grad;
    m_[k].require_same_shape(value, "adam first moment");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
      v[i] = b2 * v[i] + (T{1} - b2) * grad[i] * grad[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

std::optional<double> roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw DimensionError("AUC: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank-sum form of the Mann-Whitney statistic with midranks for ties.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Label::Fake) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

template <typename T>
Metrics compute_metrics(const Tensor<T>& probs, std::span<const Label> labels) {
  if (probs.rank() != 2 || probs.extent(1) != kClassCount || probs.extent(0) != labels.size()) {
    throw DimensionError("metrics need probabilities [N,2] matching " + std::to_string(labels.size()) +
                         " labels, got " + shape_string(probs.shape()));
  }
  Metrics m;
  std::vector<double> scores(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T real = probs[i * kClassCount], fake = probs[i * kClassCount + 1];
    const bool predicted_fake = fake > real;
    const bool is_fake = labels[i] == Label::Fake;
    if (predicted_fake && is_fake) ++m.true_positive;
    if (predicted_fake && !is_fake) ++m.false_positive;
    if (!predicted_fake && !is_fake) ++m.true_negative;
    if (!predicted_fake && is_fake) ++m.false_negative;
    scores[i] = static_cast<double>(fake);
  }
  m.accuracy = static_cast<double>(m.true_positive + m.true_negative) / static_cast<double>(labels.size());
  if (m.true_positive + m.false_negative > 0) {
    m.recall = static_cast<double>(m.true_positive) / static_cast<double>(m.true_positive + m.false_negative);
  }
  m.auc = roc_auc(scores, labels);
  return m;
}

template Metrics compute_metrics(const Tensor<float>&, std::span<const Label>);
template Metrics compute_metrics(const Tensor<double>&, std::span<const Label>);

namespace {

// Mean cross-entropy of [N,2] probabilities, summed in clip order.
double mean_loss(const Tensor<float>& probs, std::span<const Label> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float p = probs[i * kClassCount + static_cast<std::size_t>(labels[i])];
    total -= std::log(static_cast<double>(p) + kCrossEntropyEpsilon);
  }
  return total / static_cast<double>(labels.size());
}

SplitMetrics summarize(const Tensor<float>& probs, std::span<const Label> labels) {
  return {mean_loss(probs, labels), compute_metrics(probs, labels)};
}

std::vector<Label> labels_of(std::span<const ClipRecord> clips) {
  std::vector<Label> out;
  for (const auto& c : clips) out.push_back(c.label);
  return out;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

Evaluation evaluate(const Model<float>& model, std::span<const ClipRecord> clips, std::size_t batch_size,
                    std::size_t workers) {
  if (clips.empty()) throw DatasetError("evaluation set is empty");
  const ModelConfig& cfg = model.config();
  Evaluation ev{Tensor<float>({clips.size(), kClassCount}), labels_of(clips), {}};
  BatchIterator batches({clips.begin(), clips.end()}, batch_size, cfg.height, cfg.width, workers);
  std::size_t row = 0;
  while (auto batch = batches.next()) {
    const Tensor<float> probs = model.forward(batch->clips);
    std::copy(probs.data().begin(), probs.data().end(), ev.probs.ptr() + row * kClassCount);
    row += batch->labels.size();
  }
  ev.result = summarize(ev.probs, ev.labels);
  return ev;
}

TrainHistory train_loop(Model<float>& model, std::span<const ClipRecord> train,
                        std::span<const ClipRecord> validation, const TrainConfig& config) {
  if (train.empty()) throw ConfigError("training segment is empty");
  if (config.epochs == 0) throw ConfigError("epochs must be positive");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  const auto started = std::chrono::steady_clock::now();
  const ModelConfig& cfg = model.config();
  Optimizer<float> optimizer(config.optimizer);
  const std::vector<Label> train_labels = labels_of(train);
  std::optional<std::vector<Tensor<float>>> best;
  TrainHistory history;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(derive_seed(config.seed, epoch));
    shuffle(std::span<std::size_t>(order), rng);
    std::vector<ClipRecord> shuffled;
    for (std::size_t i : order) shuffled.push_back(train[i]);

    // Probabilities land at each clip's canonical index, so epoch metrics do
    // not depend on the shuffle.
    Tensor<float> train_probs({train.size(), kClassCount});
    BatchIterator batches(std::move(shuffled), config.batch_size, cfg.height, cfg.width, config.workers);
    std::size_t position = 0, batch_index = 0;
    while (auto batch = batches.next()) {
      model.zero_grad();
      const auto result = model.train_batch(batch->clips, batch->onehot);
      if (!std::isfinite(result.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      optimizer.step(model.parameters());
      for (std::size_t b = 0; b < batch->labels.size(); ++b, ++position) {
        std::copy_n(result.probs.ptr() + b * kClassCount, kClassCount, train_probs.ptr() + order[position] * kClassCount);
      }
      ++batch_index;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train = summarize(train_probs, train_labels);
    if (!validation.empty()) {
      record.validation = evaluate(model, validation, config.batch_size, config.workers).result;
      const double acc = record.validation->metrics.accuracy;
      const double loss = record.validation->loss;
      if (acc > history.best_validation_accuracy ||
          (acc == history.best_validation_accuracy && loss < history.best_validation_loss)) {
        history.best_validation_accuracy = acc;
        history.best_validation_loss = loss;
        history.best_epoch = epoch;
        best.emplace();
        for (const auto& p : model.parameters()) best->push_back(p.param->value);
      }
    }
    history.epochs.push_back(std::move(record));
  }

  if (config.checkpoint) {
    if (best) {
      Model<float> snapshot = model;
      auto params = snapshot.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = (*best)[i];
      save_weights(snapshot, *config.checkpoint);
    } else {
      save_weights(model, *config.checkpoint);
    }
  }
  history.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return history;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,split,metric,value\n";
  auto emit = [&out](std::size_t epoch, const char* split, const SplitMetrics& s) {
    auto row = [&](const char* metric, double v) {
      out += std::to_string(epoch) + "," + split + "," + metric + "," + format_value(v) + "\n";
    };
    row("loss", s.loss);
    row("accuracy", s.metrics.accuracy);
    if (s.metrics.recall) row("recall", *s.metrics.recall);
    if (s.metrics.auc) row("auc", *s.metrics.auc);
  };
  for (const auto& e : history.epochs) {
    emit(e.epoch, "train", e.train);
    if (e.validation) emit(e.epoch, "validation", *e.validation);
  }
  return out;
}

std::string history_summary_json(const TrainHistory& history) {
  auto metrics_json = [](const SplitMetrics& s) {
    nlohmann::json j{{"loss", s.loss}, {"accuracy", s.metrics.accuracy}};
    j["recall"] = s.metrics.recall ? nlohmann::json(*s.metrics.recall) : nlohmann::json(nullptr);
    j["auc"] = s.metrics.auc ? nlohmann::json(*s.metrics.auc) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json j;
  j["epochs"] = history.epochs.size();
  j["wall_seconds"] = history.wall_seconds;
  if (history.best_epoch) {
    j["best_epoch"] = history.best_epoch;
    j["best_validation_accuracy"] = history.best_validation_accuracy;
  }
  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    j["final"]["train"] = metrics_json(last.train);
    if (last.validation) j["final"]["validation"] = metrics_json(*last.validation);
  }
  return j.dump(2) + "\n";
}

}  // namespace capslstm
