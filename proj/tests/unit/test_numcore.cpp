#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "clisa/numcore/numcore.hpp"
#include "../support/gradcheck.hpp"

using namespace clisa;
using Catch::Approx;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("tensor invariants", "[numcore]") {
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("matmul", "[numcore]") {
  Rng rng(1);
  Tape<double> tape;
  SECTION("identity") {
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1;
    auto a = Tensor<double>::uniform({3, 4}, rng);
    auto out = matmul(tape.constant(eye), tape.constant(a));
    CHECK(out.value() == a);
  }
  SECTION("zeros") {
    auto out = matmul(tape.constant(Tensor<double>::zeros({2, 3})),
                      tape.constant(Tensor<double>::uniform({3, 4}, rng)));
    CHECK(out.value() == Tensor<double>::zeros({2, 4}));
  }
  SECTION("random 4x4 against naive triple loop") {
    auto a = Tensor<double>::uniform({4, 4}, rng), b = Tensor<double>::uniform({4, 4}, rng);
    auto out = matmul(tape.constant(a), tape.constant(b));
    CHECK(max_abs_diff(out.value(), naive_matmul(a, b)) < 1e-12);
  }
  SECTION("shape mismatch names both shapes") {
    auto a = tape.constant(Tensor<double>({2, 3})), b = tape.constant(Tensor<double>({4, 2}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
      CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
  }
  SECTION("batched matches per-slice naive") {
    auto a = Tensor<double>::uniform({3, 2, 5}, rng), b = Tensor<double>::uniform({3, 5, 4}, rng);
    auto out = matmul(tape.constant(a), tape.constant(b)).value();
    for (std::size_t s = 0; s < 3; ++s) {
      Tensor<double> as({2, 5}), bs({5, 4});
      std::copy_n(a.ptr() + s * 10, 10, as.ptr());
      std::copy_n(b.ptr() + s * 20, 20, bs.ptr());
      auto ref = naive_matmul(as, bs);
      for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(out[s * 8 + i] - ref[i]) < 1e-12);
    }
  }
}

TEST_CASE("softmax", "[numcore]") {
  Tape<double> tape;
  auto sm = [&](std::vector<double> v) {
    return softmax(tape.constant(Tensor<double>({v.size()}, v)), 0).value();
  };
  auto u = sm({0, 0, 0});
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == Approx(1.0 / 3).margin(1e-15));
  auto big = sm({1000, 0});
  CHECK(std::abs(big[0] - 1) < 1e-9);
  CHECK(std::abs(big[1]) < 1e-9);
  auto r = sm({1, 2, 3});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r[i] - std::exp(i + 1.0) / z) < 1e-15);

  SECTION("rows sum to one along any axis") {
    Rng rng(7);
    auto x = Tensor<double>::uniform({3, 4, 5}, rng, -50, 50);
    for (long axis = 0; axis < 3; ++axis) {
      auto y = softmax(tape.constant(x), axis).value();
      auto sums = reduce_sum(tape.constant(y), axis).value();
      for (double s : sums.data()) CHECK(std::abs(s - 1) < 1e-9);
      for (double v : y.data()) CHECK(v >= 0);
    }
  }
}

TEST_CASE("elementwise basics", "[numcore]") {
  Tape<double> tape;
  auto s = tape.constant(Tensor<double>::scalar(0));
  CHECK(sigmoid(s).value().item() == 0.5);
  CHECK(gelu(s).value().item() == 0.0);
  Rng rng(3);
  auto x = Tensor<double>::uniform({4, 5, 3}, rng);
  auto rt = reshape(reshape(tape.constant(x), {20, 3}), {4, 5, 3});
  CHECK(rt.value() == x);
  CHECK_THROWS_AS(reshape(tape.constant(x), {7, 3}), DimensionError);
  // Broadcasting a per-channel gate.
  auto gate = tape.constant(Tensor<double>({1, 1, 3}, {1, 2, 3}));
  auto y = mul(tape.constant(x), gate).value();
  CHECK(y.at({2, 3, 1}) == 2 * x.at({2, 3, 1}));
  CHECK_THROWS_AS(add(tape.constant(x), tape.constant(Tensor<double>({4, 2, 3}))), DimensionError);
}

TEST_CASE("backward", "[numcore]") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1, 2}));
  tape.backward(reduce_sum(x));
  CHECK(tape.grad_of(x) == Tensor<double>::ones({2}));
  tape.backward(reduce_sum(square(x)));
  CHECK(tape.grad_of(x) == Tensor<double>({2}, {2, 4}));
  CHECK_THROWS_AS(tape.backward(square(x)), ContractError);
  Tape<double> empty;
  Var<double> dangling(&empty, 0);
  CHECK_THROWS(empty.backward(dangling, Tensor<double>::scalar(1)));
}

TEST_CASE("finite-difference gradient check of primitive ops", "[numcore][gradcheck]") {
  using testing::grad_check;
  using testing::weighted_sum;
  using V = Var<double>;
  using Args = const std::vector<V>&;
  Rng rng(11);
  auto u = [&](Shape s) { return Tensor<double>::uniform(std::move(s), rng); };
  auto pos = [&](Shape s) { return Tensor<double>::uniform(std::move(s), rng, 0.2, 2.0); };
  struct Case {
    const char* name;
    testing::TapeFn fn;
    std::vector<Tensor<double>> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [](Tape<double>&, Args a) { return weighted_sum(matmul(a[0], a[1]), 1); }, {u({3, 4}), u({4, 2})}},
      {"bmm", [](Tape<double>&, Args a) { return weighted_sum(matmul(a[0], a[1]), 2); }, {u({2, 3, 4}), u({2, 4, 2})}},
      {"softmax", [](Tape<double>&, Args a) { return weighted_sum(softmax(a[0], 1), 3); }, {u({3, 5, 2})}},
      {"sigmoid", [](Tape<double>&, Args a) { return weighted_sum(sigmoid(a[0]), 4); }, {u({6})}},
      {"gelu", [](Tape<double>&, Args a) { return weighted_sum(gelu(a[0]), 5); }, {u({6})}},
      {"tanh", [](Tape<double>&, Args a) { return weighted_sum(tanh(a[0]), 6); }, {u({6})}},
      {"exp", [](Tape<double>&, Args a) { return weighted_sum(exp(a[0]), 7); }, {u({6})}},
      {"log", [](Tape<double>&, Args a) { return weighted_sum(log(a[0]), 8); }, {pos({6})}},
      {"softplus", [](Tape<double>&, Args a) { return weighted_sum(softplus(a[0]), 9); }, {u({6})}},
      {"leaky_relu", [](Tape<double>&, Args a) { return weighted_sum(leaky_relu(a[0], 0.2), 10); }, {u({6})}},
      {"broadcast mul", [](Tape<double>&, Args a) { return weighted_sum(mul(a[0], a[1]), 11); }, {u({2, 3, 4}), u({1, 3, 1})}},
      {"broadcast add/sub", [](Tape<double>&, Args a) { return weighted_sum(sub(add(a[0], a[1]), a[1]), 12); }, {u({2, 3}), u({2, 1})}},
      {"div", [](Tape<double>&, Args a) { return weighted_sum(div(a[0], a[1]), 13); }, {u({5}), pos({5})}},
      {"permute", [](Tape<double>&, Args a) { return weighted_sum(permute(a[0], {2, 0, 1}), 14); }, {u({2, 3, 4})}},
      {"transpose", [](Tape<double>&, Args a) { return weighted_sum(transpose(a[0]), 15); }, {u({3, 4})}},
      {"concat", [](Tape<double>&, Args a) { return weighted_sum(concat(std::vector<V>{a[0], a[1]}, 1), 16); }, {u({2, 3, 2}), u({2, 1, 2})}},
      {"reduce_sum axis", [](Tape<double>&, Args a) { return weighted_sum(reduce_sum(a[0], 1), 17); }, {u({2, 3, 4})}},
      {"reduce_mean", [](Tape<double>&, Args a) { return reduce_mean(square(a[0])); }, {u({2, 3})}},
      {"reduce_max", [](Tape<double>&, Args a) { return reduce_max(a[0]); }, {u({7})}},
      {"reduce_min", [](Tape<double>&, Args a) { return reduce_min(a[0]); }, {u({7})}},
      {"sum_squares", [](Tape<double>&, Args a) { return sum_squares(a[0]); }, {u({7})}},
  };
  for (auto& c : cases) {
    INFO(c.name);
    CHECK(grad_check(c.fn, c.inputs).ok());
  }
}

TEST_CASE("CTNS container", "[numcore][io]") {
  Rng rng(5);
  auto t = Tensor<double>::uniform({2, 3, 4}, rng);
  auto bytes = ctns::encode(t);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "CTNS0001");
  CHECK(bytes[8] == 2);
  CHECK(bytes[9] == 3);
  CHECK(bytes[10] == 2);  // little-endian u32 dims
  CHECK(bytes[11] == 0);
  CHECK(bytes.size() == 10 + 12 + 24 * 8);
  CHECK(ctns::decode<double>(bytes) == t);

  SECTION("f32 widens exactly") {
    auto f = t.cast<float>();
    auto wide = ctns::decode<double>(ctns::encode(f));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(wide[i] == static_cast<double>(f[i]));
  }
  SECTION("truncation and bad magic are parse errors") {
    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(ctns::decode<double>(cut), ParseError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(ctns::decode<double>(bad), ParseError);
  }
  SECTION("known bytes for a tiny f32 tensor") {
    auto one = ctns::encode(Tensor<float>({1}, {1.0f}));
    const std::vector<std::uint8_t> expected = {'C', 'T', 'N', 'S', '0', '0', '0', '1', 1, 1,
                                                1,   0,   0,   0,   0x00, 0x00, 0x80, 0x3f};
    CHECK(one == expected);
  }
}

TEST_CASE("determinism", "[numcore]") {
  auto run = [] {
    Rng rng(99);
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>::uniform({5, 6}, rng));
    auto b = tape.constant(Tensor<double>::uniform({6, 3}, rng));
    return softmax(matmul(a, b), 1).value();
  };
  CHECK(run() == run());
}
