#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "capslstm/error.hpp"
#include "capslstm/grad_check.hpp"
#include "capslstm/kernels.hpp"
#include "capslstm/loss.hpp"
#include "capslstm/training.hpp"
#include "capslstm/weights.hpp"
#include "doctest.h"
#include "../support/oracles.hpp"
#include "../support/random.hpp"
#include "../support/toy_data.hpp"

using namespace capslstm;
namespace fs = std::filesystem;
using testing_support::random_tensor;

namespace {

struct Scalar {
  Parameter<double> p{"x", Tensor<double>({1}), Tensor<double>({1})};
  std::vector<ParamRef<double>> refs() { return {{"x", &p}}; }
};

std::vector<ClipRecord> toy_records(const fs::path& root, std::size_t n, std::uint64_t seed) {
  const auto cfg = ModelConfig::scaled_down();
  const auto clips = toy::planted_set(cfg, n, seed);
  fs::remove_all(root);
  toy::write_dataset(root, clips);
  std::vector<ClipRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(toy::record(root, i, clips[i].label));
  return out;
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / "capslstm_training_test" / name; }

}  // namespace

TEST_CASE("cross-entropy values") {
  const auto perfect = categorical_cross_entropy(Tensor<double>({1, 2}, {0, 1}), Tensor<double>({1, 2}, {0, 1}));
  CHECK(perfect.loss == doctest::Approx(0.0).epsilon(1e-11));
  const auto half = categorical_cross_entropy(Tensor<double>({1, 2}, {0.5, 0.5}), Tensor<double>({1, 2}, {1, 0}));
  CHECK(half.loss == doctest::Approx(-std::log(0.5 + kCrossEntropyEpsilon)).epsilon(1e-14));
  CHECK(half.grad_logits.values() == std::vector<double>{-0.5, 0.5});
  CHECK_THROWS_AS(categorical_cross_entropy(Tensor<double>({1, 2}, {0.7, 0.7}), Tensor<double>({1, 2}, {1, 0})),
                  ArgumentError);
  CHECK_THROWS_AS(categorical_cross_entropy(Tensor<double>({1, 2}, {0.5, 0.5}), Tensor<double>({2, 2})),
                  DimensionError);
}

TEST_CASE("cross-entropy logit gradient matches finite differences") {
  const auto logits = random_tensor({4, 2}, 3, -2, 2);
  Tensor<double> onehot({4, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  auto f = [&](const Tensor<double>& z) {
    return categorical_cross_entropy(softmax_axis(z, 1), onehot).loss;
  };
  auto g = [&](const Tensor<double>& z) {
    return categorical_cross_entropy(softmax_axis(z, 1), onehot).grad_logits;
  };
  CHECK(grad_check(f, g, logits) < 1e-5);
}

TEST_CASE("sgd and adam updates") {
  Scalar s;
  s.p.grad[0] = 1.0;
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::Sgd;
  sgd.learning_rate = 0.1;
  Optimizer<double> o(sgd);
  auto refs = s.refs();
  o.step(refs);
  CHECK(s.p.value[0] == doctest::Approx(-0.1));

  // Zero gradient leaves parameters unchanged under both rules.
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Scalar z;
    z.p.value[0] = 3.0;
    OptimizerConfig c;
    c.kind = kind;
    Optimizer<double> opt(c);
    auto r = z.refs();
    for (int i = 0; i < 5; ++i) opt.step(r);
    CHECK(z.p.value[0] == 3.0);
  }
}

TEST_CASE("adam minimizes x^2 from 5") {
  Scalar s;
  s.p.value[0] = 5.0;
  OptimizerConfig c;
  c.learning_rate = 0.01;
  Optimizer<double> o(c);
  auto refs = s.refs();
  int steps = 0;
  while (std::abs(s.p.value[0]) >= 0.01 && steps < 2000) {
    s.p.grad[0] = 2.0 * s.p.value[0];
    o.step(refs);
    ++steps;
  }
  CHECK(std::abs(s.p.value[0]) < 0.01);
  CHECK(steps <= 2000);
}

TEST_CASE("non-finite gradient names the tensor and changes nothing") {
  Parameter<double> a{"a", Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {0.5, 0.5})};
  Parameter<double> b{"b", Tensor<double>({1}, {4}), Tensor<double>({1}, {std::nan("")})};
  std::vector<ParamRef<double>> refs{{"layer/a", &a}, {"layer/b", &b}};
  Optimizer<double> o({});
  try {
    o.step(refs);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer/b") != std::string::npos);
  }
  CHECK(a.value.values() == std::vector<double>{1, 2});
}

TEST_CASE("auc worked example") {
  const std::vector<double> scores{0.9, 0.8, 0.3, 0.1};
  const std::vector<Label> labels{Label::Fake, Label::Real, Label::Fake, Label::Real};
  CHECK(roc_auc(scores, labels).value() == 0.75);
  const std::vector<double> tied{0.5, 0.5};
  const std::vector<Label> both{Label::Fake, Label::Real};
  CHECK(roc_auc(tied, both).value() == 0.5);
  const std::vector<Label> one_class{Label::Fake, Label::Fake};
  CHECK(!roc_auc(tied, one_class).has_value());
}

TEST_CASE("auc equals pair counting on 50 randomized sets") {
  SeededRng rng(31337);
  for (int set = 0; set < 50; ++set) {
    const std::size_t n = 2 + rng.below(99);
    std::vector<double> scores(n);
    std::vector<Label> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      scores[i] = static_cast<double>(rng.below(set % 2 ? 5 : 1000)) / 4.0;
      labels[i] = rng.below(2) ? Label::Fake : Label::Real;
    }
    labels[0] = Label::Fake;
    labels[1] = Label::Real;
    CHECK(roc_auc(scores, labels).value() == oracle::pair_count_auc(scores, labels));
  }
}

TEST_CASE("metrics from probabilities") {
  Tensor<double> probs({5, 2}, {0.2, 0.8, 0.6, 0.4, 0.5, 0.5, 0.1, 0.9, 0.7, 0.3});
  const std::vector<Label> labels{Label::Fake, Label::Fake, Label::Fake, Label::Real, Label::Real};
  const Metrics m = compute_metrics(probs, labels);
  // Row 2 ties and goes to REAL.
  CHECK(m.true_positive == 1);
  CHECK(m.false_negative == 2);
  CHECK(m.false_positive == 1);
  CHECK(m.true_negative == 1);
  CHECK(m.accuracy == doctest::Approx(0.4));
  CHECK(m.recall.value() == doctest::Approx(1.0 / 3.0));
  CHECK(m.auc.value() == oracle::pair_count_auc(std::vector<double>{0.8, 0.4, 0.5, 0.9, 0.3}, labels));

  const std::vector<Label> reals{Label::Real, Label::Real, Label::Real, Label::Real, Label::Real};
  const Metrics r = compute_metrics(probs, reals);
  CHECK(!r.recall.has_value());
  CHECK(!r.auc.has_value());
}

TEST_CASE("training is reproducible and lr 0 leaves weights unchanged") {
  const auto records = toy_records(scratch("repro"), 6, 17);
  const std::vector<ClipRecord> train(records.begin(), records.begin() + 4);
  const std::vector<ClipRecord> val(records.begin() + 4, records.end());

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  tc.seed = 9;
  tc.optimizer.learning_rate = 1e-3;

  auto run = [&](std::size_t workers, const fs::path& ckpt) {
    Model<float> m(ModelConfig::scaled_down());
    m.initialize(4);
    TrainConfig c = tc;
    c.workers = workers;
    c.checkpoint = ckpt;
    const TrainHistory h = train_loop(m, train, val, c);
    return std::make_pair(history_csv(h), m.parameters()[0].param->value);
  };
  fs::create_directories(scratch(""));
  const auto [csv1, w1] = run(1, scratch("a.capw"));
  const auto [csv2, w2] = run(3, scratch("b.capw"));
  CHECK(csv1 == csv2);
  CHECK(w1 == w2);
  std::ifstream fa(scratch("a.capw"), std::ios::binary), fb(scratch("b.capw"), std::ios::binary);
  const std::string ba{std::istreambuf_iterator<char>(fa), {}}, bb{std::istreambuf_iterator<char>(fb), {}};
  CHECK(!ba.empty());
  CHECK(ba == bb);

  CHECK(csv1.rfind("epoch,split,metric,value\n1,train,loss,", 0) == 0);
  CHECK(csv1.find("2,validation,accuracy,") != std::string::npos);

  Model<float> frozen(ModelConfig::scaled_down());
  frozen.initialize(4);
  std::vector<Tensor<float>> before;
  for (const auto& p : frozen.parameters()) before.push_back(p.param->value);
  TrainConfig zero = tc;
  zero.optimizer.kind = OptimizerKind::Sgd;
  zero.optimizer.learning_rate = 0.0;
  const TrainHistory h = train_loop(frozen, train, val, zero);
  const auto after = frozen.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].param->value == before[i]);
  // Same weights every epoch, so the validation loss repeats.
  CHECK(h.epochs[0].validation->loss == h.epochs[1].validation->loss);
}

TEST_CASE("non-finite loss aborts with the epoch") {
  const auto records = toy_records(scratch("nan"), 2, 3);
  Model<float> m(ModelConfig::scaled_down());
  m.initialize(1);
  m.parameters().back().param->value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  try {
    train_loop(m, records, {}, tc);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("evaluate reports every clip in order") {
  const auto records = toy_records(scratch("eval"), 4, 8);
  Model<float> m(ModelConfig::scaled_down());
  m.initialize(2);
  const Evaluation ev = evaluate(m, records, 3);
  CHECK(ev.probs.shape() == Shape{4, 2});
  CHECK(ev.labels.size() == 4);
  CHECK(ev.labels[1] == Label::Fake);
  CHECK(ev.result.metrics.auc.has_value());
  const auto x = load_clip(records[3], 32, 32).reshaped({1, 5, 32, 32, 3});
  const auto single = m.forward(x);
  CHECK(single[1] == ev.probs[7]);
  CHECK_THROWS_AS(evaluate(m, std::vector<ClipRecord>{}), DatasetError);
}
