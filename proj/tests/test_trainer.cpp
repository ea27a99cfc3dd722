#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "sinckws/trainer.hpp"
#include "support/micro_dataset.hpp"

using namespace sinckws;

namespace {

// Structurally complete but narrow model so whole training epochs run in
// milliseconds on one-second clips.
ModelConfig narrow_config() {
  ModelConfig cfg;
  cfg.variant = Variant::grouped;
  cfg.sinc.n_filters = 4;
  cfg.sinc.kernel_length = 9;
  cfg.sinc.stride = 4;
  cfg.blocks.resize(5);
  cfg.blocks[0].conv = {4, 6, 5, 2, 1};
  const int pattern[4] = {2, 3, 2, 3};
  for (int i = 1; i < 5; ++i)
    cfg.blocks[static_cast<std::size_t>(i)].conv = {6, 6, 3, 1, pattern[i - 1]};
  return cfg;
}

// All logits constant: the model always predicts `winner`.
Model<double> constant_model(int winner) {
  auto m = build_model<double>(narrow_config(), 4);
  for (auto& v : m.head_weight->values) v = 0.0;
  for (auto& v : m.head_bias->values) v = 0.0;
  m.head_bias->values[static_cast<std::size_t>(winner)] = 1.0;
  for (auto& b : m.blocks) b.bn.updates = 1;
  return m;
}

}  // namespace

TEST_CASE("learning rate schedule: pinned step decay") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == 0.001);
  CHECK(lr_at(9, cfg) == 0.001);
  CHECK(lr_at(10, cfg) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(lr_at(20, cfg) == doctest::Approx(0.00025).epsilon(1e-15));
  CHECK(lr_at(59, cfg) == doctest::Approx(0.001 * std::pow(0.5, 5)).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr_decay = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.silence_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("adam: zero gradients leave parameters alone but advance the step") {
  auto p = make_tensor<double>({3}, {1.0, -2.0, 0.5});
  p->ensure_grad();
  std::vector<std::pair<std::string, TensorPtr<double>>> params = {{"p", p}};
  AdamState<double> state(params);
  TrainConfig cfg;
  adam_step(params, state, cfg, lr_at(0, cfg));
  CHECK(p->values == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step == 1);
}

TEST_CASE("adam: the first step moves by almost exactly the learning rate") {
  auto p = make_tensor<double>({2}, {1.0, 1.0});
  p->ensure_grad();
  p->grad = {0.5, -3.0};
  std::vector<std::pair<std::string, TensorPtr<double>>> params = {{"p", p}};
  AdamState<double> state(params);
  TrainConfig cfg;
  adam_step(params, state, cfg, 0.001);
  // Bias correction makes m_hat / sqrt(v_hat) = sign(g) on step one.
  CHECK(p->values[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-9));
  CHECK(p->values[1] == doctest::Approx(1.0 + 0.001).epsilon(1e-9));

  // Second step with the same gradient: still roughly lr, same direction.
  p->grad = {0.5, -3.0};
  adam_step(params, state, cfg, 0.001);
  CHECK(p->values[0] == doctest::Approx(1.0 - 0.002).epsilon(1e-6));
  CHECK(state.step == 2);
}

TEST_CASE("adam: bad gradients abort before touching anything") {
  auto a = make_tensor<double>({2}, {1.0, 2.0});
  auto b = make_tensor<double>({1}, {3.0});
  a->ensure_grad();
  a->grad = {0.1, 0.2};
  std::vector<std::pair<std::string, TensorPtr<double>>> params = {{"a", a}, {"b", b}};
  AdamState<double> state(params);
  TrainConfig cfg;

  // b never received a gradient.
  CHECK_THROWS_WITH_AS(adam_step(params, state, cfg, 0.001),
                       doctest::Contains("missing gradient for b"), std::invalid_argument);

  b->ensure_grad();
  b->grad = {std::numeric_limits<double>::infinity()};
  CHECK_THROWS_WITH_AS(adam_step(params, state, cfg, 0.001),
                       doctest::Contains("non-finite gradient in b"), numeric_error);
  CHECK(a->values == std::vector<double>{1.0, 2.0});
  CHECK(b->values == std::vector<double>{3.0});
  CHECK(state.step == 0);

  std::vector<std::pair<std::string, TensorPtr<double>>> fewer = {{"a", a}};
  CHECK_THROWS_AS(adam_step(fewer, state, cfg, 0.001), std::invalid_argument);
}

TEST_CASE("history csv carries one row per epoch") {
  std::ostringstream os;
  write_history_csv(os, {{0, 2.5, 0.25, 0.001}, {1, 1.75, 0.5, 0.001}});
  const std::string text = os.str();
  CHECK(text.rfind("epoch,train_loss,val_accuracy,lr\n", 0) == 0);
  CHECK(text.find("\n0,2.5,0.25,0.001\n") != std::string::npos);
  CHECK(text.find("\n1,1.75,0.5,0.001\n") != std::string::npos);
}

TEST_CASE("evaluation against a constant predictor has closed-form results") {
  const auto root = testsupport::scratch_dir("eval");
  const auto ds = testsupport::make_micro_dataset(root);

  auto always_yes = constant_model(0);
  const auto res = evaluate(always_yes, ds.manifest, Split::val, 8);
  // Validation split: 5 yes, 5 no, 2 silence.
  CHECK(res.total == 12);
  CHECK(res.correct == 5);
  CHECK(res.accuracy == doctest::Approx(5.0 / 12.0).epsilon(1e-12));
  CHECK(res.confusion[0][0] == 5);
  CHECK(res.confusion[1][0] == 5);
  CHECK(res.confusion[static_cast<std::size_t>(kSilenceClass)][0] == 2);

  // Row sums count the true-class populations; the trace counts hits.
  long long trace = 0;
  for (int c = 0; c < 12; ++c) {
    long long row = 0;
    for (int p = 0; p < 12; ++p) row += res.confusion[static_cast<std::size_t>(c)]
                                              [static_cast<std::size_t>(p)];
    trace += res.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    if (c == 0 || c == 1) CHECK(row == 5);
  }
  CHECK(trace == res.correct);

  auto always_silence = constant_model(kSilenceClass);
  CHECK(evaluate(always_silence, ds.manifest, Split::val, 8).accuracy ==
        doctest::Approx(2.0 / 12.0).epsilon(1e-12));

  // Evaluation is pure: running it twice changes nothing.
  const auto res2 = evaluate(always_yes, ds.manifest, Split::val, 8);
  CHECK(res2.accuracy == res.accuracy);
  CHECK(res2.confusion == res.confusion);

  std::ostringstream os;
  write_confusion_csv(os, res);
  const std::string text = os.str();
  CHECK(text.rfind("true_class,pred_yes,pred_no", 0) == 0);
  CHECK(text.find("\nsilence,2,0,0,0,0,0,0,0,0,0,0,0\n") != std::string::npos);
  std::size_t lines = 0;
  for (const char ch : text) lines += ch == '\n';
  CHECK(lines == 13);

  std::filesystem::remove_all(root);
}

TEST_CASE("training runs, records history, and keeps the best checkpoint") {
  const auto root = testsupport::scratch_dir("train");
  const auto ds = testsupport::make_micro_dataset(root);
  const auto ckpt = root + "/best.skws";

  auto model = build_model<double>(narrow_config(), 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 11;
  cfg.checkpoint_path = ckpt;

  const auto result = train(model, ds.manifest, cfg);
  REQUIRE(result.history.size() == 2);
  for (const auto& row : result.history) {
    CHECK(std::isfinite(row.train_loss));
    CHECK(row.train_loss > 0.0);
    CHECK(row.lr == lr_at(row.epoch, cfg));
    CHECK(row.val_accuracy >= 0.0);
    CHECK(row.val_accuracy <= 1.0);
  }
  CHECK(result.best_epoch >= 0);
  CHECK(result.best_val_accuracy == doctest::Approx(result.history[static_cast<std::size_t>(
                                        result.best_epoch)].val_accuracy));
  CHECK(!result.stopped_early);

  REQUIRE(std::filesystem::exists(ckpt));
  auto best = load_checkpoint<double>(ckpt);
  CHECK(best.epoch == result.best_epoch);
  CHECK(best.best_val_accuracy == doctest::Approx(result.best_val_accuracy));
  CHECK(best.config.variant == Variant::grouped);

  std::filesystem::remove_all(root);
}

TEST_CASE("same seeds, same data: training is bit-for-bit reproducible") {
  const auto root = testsupport::scratch_dir("repro");
  const auto ds = testsupport::make_micro_dataset(root);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 21;

  auto a = build_model<double>(narrow_config(), 9);
  auto b = build_model<double>(narrow_config(), 9);
  const auto ra = train(a, ds.manifest, cfg);
  const auto rb = train(b, ds.manifest, cfg);

  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_accuracy == rb.history[i].val_accuracy);
  }
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].second->values == pb[i].second->values);

  // A different training seed must change the trajectory.
  auto c = build_model<double>(narrow_config(), 9);
  cfg.seed = 22;
  const auto rc = train(c, ds.manifest, cfg);
  CHECK(rc.history[0].train_loss != ra.history[0].train_loss);

  std::filesystem::remove_all(root);
}

TEST_CASE("training stops early once train accuracy clears the bar") {
  const auto root = testsupport::scratch_dir("earlystop");
  const auto ds = testsupport::make_micro_dataset(root);

  auto model = build_model<double>(narrow_config(), 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.seed = 2;
  cfg.stop_at_train_accuracy = 0.01;  // any hit at all clears this

  const auto result = train(model, ds.manifest, cfg);
  CHECK(result.stopped_early);
  CHECK(result.history.size() < static_cast<std::size_t>(cfg.epochs));

  std::filesystem::remove_all(root);
}

TEST_CASE("training logs one line per epoch with the shared field layout") {
  const auto root = testsupport::scratch_dir("trainlog");
  const auto ds = testsupport::make_micro_dataset(root);

  auto model = build_model<double>(narrow_config(), 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 11;
  std::ostringstream log;
  (void)train(model, ds.manifest, cfg, &log);
  const std::string text = log.str();
  CHECK(text.rfind("epoch 0 train_loss ", 0) == 0);
  CHECK(text.find(" train_accuracy ") != std::string::npos);
  CHECK(text.find(" val_accuracy ") != std::string::npos);
  CHECK(text.find(" lr 0.001") != std::string::npos);

  std::filesystem::remove_all(root);
}
