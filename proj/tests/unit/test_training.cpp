#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "clisa/training/training.hpp"

using namespace clisa;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("clisa_test_training_" + name);
  fs::remove_all(p);
  return p;
}

TrainConfig tiny_config(LossMode loss = LossMode::LovaszAdversarial) {
  TrainConfig c;
  c.generator.input_channels = c.discriminator.input_channels = 3;
  c.generator.base_channels = 4;
  c.generator.depth = 2;
  c.discriminator.base_channels = 4;
  c.discriminator.blocks = 2;
  c.loss = loss;
  c.batch = 4;
  c.lr = 1e-3;
  c.seed = 5;
  return c;
}

std::vector<PatchPair> tiny_set(std::size_t n, std::uint64_t seed) {
  SceneConfig sc;
  sc.size = 16;
  sc.bands = 3;
  std::vector<PatchPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(sc, mix_seed(seed, i)));
  return out;
}

template <typename Model>
std::vector<Tensor<float>> snapshot(Model& m) {
  std::vector<Tensor<float>> out;
  m.visit([&](const std::string&, Tensor<float>& t) { out.push_back(t); });
  return out;
}

std::vector<Tensor<float>> buffers(Discriminator<float>& d) {
  std::vector<Tensor<float>> out;
  d.visit_buffers([&](const std::string&, Tensor<float>& t) { out.push_back(t); });
  return out;
}

}  // namespace

TEST_CASE("Adam", "[training]") {
  SECTION("zero gradients leave parameters alone") {
    Tensor<double> p({3}, 0.7);
    AdamState<double> s;
    for (int i = 0; i < 3; ++i) adam_update<double>({&p}, {Tensor<double>::zeros({3})}, s, 0.1);
    for (double v : p.data()) CHECK(v == 0.7);
  }
  SECTION("first step moves by lr against the gradient sign") {
    Tensor<double> p({4});
    Tensor<double> g({4});
    g[0] = 3, g[1] = -0.2, g[2] = 1e-3, g[3] = -50;
    AdamState<double> s;
    adam_update<double>({&p}, {g}, s, 0.01);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == Approx(-0.01 * (g[i] > 0 ? 1 : -1)).epsilon(1e-4));
  }
  SECTION("matches a scalar recursion over 10 steps") {
    Tensor<double> p({2});
    p[0] = 1.0, p[1] = -2.0;
    AdamState<double> s;
    double x[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 10; ++t) {
      Tensor<double> g({2});
      for (int i = 0; i < 2; ++i) {
        const double gi = 2 * x[i] + std::sin(double(t));  // gradient of x^2 plus a wobble
        g[std::size_t(i)] = gi;
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi * gi;
        x[i] -= lr * (m[i] / (1 - std::pow(b1, t))) / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
      }
      adam_update<double>({&p}, {g}, s, lr);
    }
    CHECK(p[0] == Approx(x[0]).epsilon(1e-14));
    CHECK(p[1] == Approx(x[1]).epsilon(1e-14));
    CHECK(s.t == 10);
  }
  SECTION("mismatches") {
    Tensor<double> p({2});
    AdamState<double> s;
    CHECK_THROWS_AS(adam_update<double>({&p}, {}, s, 0.1), ContractError);
    CHECK_THROWS_AS(adam_update<double>({&p}, {Tensor<double>::zeros({3})}, s, 0.1), DimensionError);
  }
}

TEST_CASE("schedule and batches", "[training]") {
  TrainConfig c;
  c.batch = 4;
  c.lr = 1e-3;
  CHECK(learning_rate(c, 0, 10) == 1e-3);
  CHECK(learning_rate(c, 2, 10) == 1e-3);
  CHECK(learning_rate(c, 3, 10) == Approx(0.97e-3));
  CHECK(learning_rate(c, 7, 10) == Approx(0.97 * 0.97e-3));
  // Each epoch visits every index once when the batch divides the split.
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(12, 0);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i : batch_indices(9, epoch * 3 + s, 12, 4)) ++seen[i];
    for (int k : seen) CHECK(k == 1);
  }
  CHECK(batch_indices(9, 0, 12, 4) != batch_indices(9, 3, 12, 4));
  CHECK(batch_indices(9, 1, 12, 4) == batch_indices(9, 1, 12, 4));
  CHECK(batch_indices(9, 0, 3, 5).size() == 5);
}

TEST_CASE("training steps", "[training]") {
  const auto data = tiny_set(16, 1);
  std::vector<std::size_t> all(16);
  std::iota(all.begin(), all.end(), 0);
  auto [x, y] = stack_batch<float>(data, all);

  SECTION("L2 term is the plain sum of squares") {
    auto s = TrainerState<float>::init(tiny_config());
    double direct = 0;
    for (const auto& t : snapshot(s.g))
      for (float v : t.data()) direct += double(v) * double(v);
    Tape<float> tape;
    CHECK(double(l2_penalty(tape, s.g).value().item()) == Approx(direct).epsilon(1e-5));
  }
  SECTION("gradient isolation") {
    auto cfg = tiny_config();
    cfg.weights.adv = 0;
    auto s = TrainerState<float>::init(cfg);
    train_step(s, x, y, cfg, 1e-3);  // warm both optimizers
    const auto d_params = snapshot(s.d), d_buffers = buffers(s.d), g_params = snapshot(s.g);
    StepReport r;
    generator_step(s, x, y, cfg, 1e-3, r);
    CHECK(snapshot(s.d) == d_params);
    CHECK(buffers(s.d) == d_buffers);
    CHECK_FALSE(snapshot(s.g) == g_params);
    cfg.weights.adv = 0.1;
    const auto g_after = snapshot(s.g);
    generator_step(s, x, y, cfg, 1e-3, r);
    CHECK(snapshot(s.d) == d_params);
    CHECK(buffers(s.d) == d_buffers);
    const auto g_now = snapshot(s.g);
    discriminator_step(s, x, y, cfg, 1e-3, r);
    CHECK(snapshot(s.g) == g_now);
    CHECK_FALSE(snapshot(s.d) == d_params);
    CHECK_FALSE(g_now == g_after);
  }
  SECTION("non-adversarial modes never touch D") {
    auto cfg = tiny_config(LossMode::Lovasz);
    auto s = TrainerState<float>::init(cfg);
    const auto d0 = snapshot(s.d);
    auto r = train_step(s, x, y, cfg, 1e-3);
    CHECK(snapshot(s.d) == d0);
    CHECK(r.adv == 0);
    CHECK(r.d_loss == 0);
    CHECK(s.step == 1);
  }
  SECTION("overfits 16 samples within 50 steps") {
    auto cfg = tiny_config();
    cfg.batch = 16;
    cfg.lr = 3e-3;
    auto s = TrainerState<float>::init(cfg);
    const double first = train_step(s, x, y, cfg, cfg.lr).g_total;
    double last = first;
    for (int i = 1; i < 50; ++i) last = train_step(s, x, y, cfg, cfg.lr).g_total;
    CHECK(last < 0.5 * first);
  }
  SECTION("same seed, same trajectory") {
    auto cfg = tiny_config();
    auto run = [&] {
      auto s = TrainerState<float>::init(cfg);
      std::vector<double> losses;
      TrainHooks h;
      h.on_step = [&](const StepReport& r) {
        losses.push_back(r.g_total);
        losses.push_back(r.d_loss);
      };
      cfg.iterations = 6;
      train_loop(s, cfg, data, {}, h);
      return losses;
    };
    const auto a = run(), b = run();
    CHECK(a == b);
    cfg.seed = 6;
    CHECK_FALSE(run() == a);
  }
  SECTION("non-finite losses abort with the component and iteration") {
    auto cfg = tiny_config(LossMode::Lovasz);
    auto s = TrainerState<float>::init(cfg);
    s.step = 17;
    s.g.head.bias[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step(s, x, y, cfg, 1e-3);
      FAIL("expected TrainingAbort");
    } catch (const TrainingAbort& e) {
      CHECK(e.iteration() == 17);
      CHECK_FALSE(e.component().empty());
    }
    cfg.loss = LossMode::LovaszAdversarial;
    try {
      train_step(s, x, y, cfg, 1e-3);
      FAIL("expected TrainingAbort");
    } catch (const TrainingAbort& e) {
      CHECK(e.component() == "discriminator");
    }
  }
}

TEST_CASE("evaluation", "[training]") {
  const auto data = tiny_set(5, 2);
  auto s = TrainerState<float>::init(tiny_config());
  const MetricsReport m = evaluate_pairs(s.g, data, 30, 2);
  std::vector<std::size_t> all{0, 1, 2, 3, 4};
  auto [x, y] = stack_batch<float>(data, all);
  CHECK(m.miou_percent == Approx(confusion_metrics(predict_labels(s.g, x), y).miou_percent));
  CHECK(m.oa >= 0);
  CHECK(m.oa <= 1);
  CHECK(evaluate_pairs(s.g, data, 30, 2, 2).miou_percent >= 0);
  CHECK_THROWS_AS(evaluate_pairs(s.g, {}, 30), ContractError);
}

TEST_CASE("run directories", "[training][io]") {
  auto data = scratch("data");
  DatasetConfig dc;
  dc.count = 24;
  dc.scene.size = 16;
  dc.scene.bands = 3;
  dc.scene.seed = 3;
  dc.val_fraction = 0.2;
  dc.test_fraction = 0.2;
  write_dataset(data, dc);

  auto cfg = tiny_config();
  cfg.iterations = 6;
  cfg.eval_every = 2;
  cfg.checkpoint_every = 3;

  auto full = scratch("full");
  const auto res = run_experiment(cfg, data, full);
  CHECK(res.steps == 6);
  for (const char* f : {"config.json", "curves.csv", "eval.csv", "metrics.json", "model/manifest.json"})
    CHECK(fs::exists(full / f));
  for (std::size_t st : {0, 3, 6}) CHECK(fs::exists(checkpoint_dir(full, st) / "state.json"));
  CHECK(latest_checkpoint(full) == checkpoint_dir(full, 6));

  SECTION("resume reproduces the uninterrupted run") {
    auto part = scratch("part");
    auto first = cfg;
    first.iterations = 3;
    run_experiment(first, data, part);
    fs::remove_all(part / "model");
    run_experiment(cfg, data, part, true);
    auto a = load_generator<float>(full / "model"), b = load_generator<float>(part / "model");
    CHECK(snapshot(a) == snapshot(b));
    CHECK(ctns::read_bytes(full / "curves.csv") == ctns::read_bytes(part / "curves.csv"));
    CHECK(ctns::read_bytes(full / "eval.csv") == ctns::read_bytes(part / "eval.csv"));
  }
  SECTION("config round trip and strictness") {
    const TrainConfig back = train_config_from(read_json_file(full / "config.json"));
    CHECK(to_json(back) == to_json(cfg));
    CHECK_THROWS_AS(train_config_from(json{{"learning_rate", 1}}), ParseError);
    CHECK_THROWS_AS(train_config_from(json{{"loss", "hinge"}}), ContractError);
    CHECK_THROWS_AS(train_config_from(json{{"batch", 0}}), ContractError);
    const TrainConfig d = train_config_from(json{{"generator", {{"input_channels", 11}}}, {"discriminator", {{"blocks", 2}}}});
    CHECK(d.discriminator.input_channels == 11);
    CHECK(d.discriminator.blocks == 2);
  }
  SECTION("missing dataset and band mismatch") {
    CHECK_THROWS_AS(run_experiment(cfg, scratch("nothing"), scratch("x")), IoError);
    auto wrong = cfg;
    wrong.generator.input_channels = wrong.discriminator.input_channels = 4;
    CHECK_THROWS_AS(run_experiment(wrong, data, scratch("y")), ContractError);
  }
}
