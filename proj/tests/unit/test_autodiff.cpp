#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "ftrack/adam.hpp"
#include "ftrack/autodiff.hpp"
#include "ftrack/error.hpp"
#include "ftrack/layers.hpp"
#include "ftrack/rng.hpp"
#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"

using namespace ftrack;
using namespace ftrack::ad;
using ftrack::testing::grad_check;
using ftrack::testing::weighted_sum;

namespace {

Parameter& random_param(ParameterSet& ps, const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                        double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return ps.add(name, std::move(t));
}

constexpr double kOpTolerance = 1e-6;

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("elementwise ops pass gradient checks") {
  Rng rng(11);
  ParameterSet ps;
  auto& a = random_param(ps, "a", {5}, rng);
  auto& b = random_param(ps, "b", {5}, rng, 0.5, 2.0);
  auto& s = random_param(ps, "s", {1}, rng, 0.5, 2.0);
  using Op = std::function<Var(Tape&, Var, Var, Var)>;
  const std::pair<const char*, Op> ops[] = {
      {"add", [](Tape& t, Var x, Var y, Var) { return add(t, x, y); }},
      {"sub", [](Tape& t, Var x, Var y, Var) { return sub(t, x, y); }},
      {"mul", [](Tape& t, Var x, Var y, Var) { return mul(t, x, y); }},
      {"scale", [](Tape& t, Var x, Var, Var) { return scale(t, x, -1.7); }},
      {"scale_by", [](Tape& t, Var x, Var, Var c) { return scale_by(t, x, c); }},
      {"divide_by", [](Tape& t, Var x, Var, Var c) { return divide_by(t, x, c); }},
      {"add_scalar_var", [](Tape& t, Var x, Var, Var c) { return add_scalar_var(t, x, c); }},
      {"tanh", [](Tape& t, Var x, Var, Var) { return ad::tanh(t, x); }},
      {"sigmoid", [](Tape& t, Var x, Var, Var) { return sigmoid(t, x); }},
      {"relu", [](Tape& t, Var x, Var y, Var) { return relu(t, mul(t, x, y)); }},
      {"add_n", [](Tape& t, Var x, Var y, Var) {
         const Var xs[] = {x, y, x};
         return add_n(t, xs);
       }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    const auto r = grad_check(ps, [&](Tape& t) {
      return weighted_sum(t, op(t, t.param(a), t.param(b), t.param(s)));
    });
    CHECK(r.max_rel_error < kOpTolerance);
  }
}

TEST_CASE("linear algebra ops pass gradient checks") {
  Rng rng(12);
  ParameterSet ps;
  auto& w = random_param(ps, "w", {3, 4}, rng);
  auto& x = random_param(ps, "x", {4}, rng);
  auto& b = random_param(ps, "b", {3}, rng);
  auto& m = random_param(ps, "m", {5, 4}, rng);
  SUBCASE("matvec") {
    auto r = grad_check(ps, [&](Tape& t) { return weighted_sum(t, matvec(t, t.param(w), t.param(x))); });
    CHECK(r.max_rel_error < kOpTolerance);
  }
  SUBCASE("affine") {
    auto r = grad_check(ps, [&](Tape& t) { return weighted_sum(t, affine(t, t.param(w), t.param(x), t.param(b))); });
    CHECK(r.max_rel_error < kOpTolerance);
  }
  SUBCASE("matmul_nt") {
    auto r = grad_check(ps, [&](Tape& t) { return weighted_sum(t, matmul_nt(t, t.param(m), t.param(w))); });
    CHECK(r.max_rel_error < kOpTolerance);
  }
  SUBCASE("dense with every activation") {
    for (auto act : {Activation::kIdentity, Activation::kTanh, Activation::kSigmoid, Activation::kRelu}) {
      auto r = grad_check(ps, [&](Tape& t) {
        return weighted_sum(t, dense(t, t.param(x), t.param(w), t.param(b), act));
      });
      CHECK(r.max_rel_error < kOpTolerance);
    }
  }
}

TEST_CASE("structural ops pass gradient checks") {
  Rng rng(13);
  ParameterSet ps;
  auto& a = random_param(ps, "a", {4}, rng);
  auto& b = random_param(ps, "b", {3}, rng);
  auto& m = random_param(ps, "m", {3, 4}, rng);
  auto r = grad_check(ps, [&](Tape& t) {
    const Var va = t.param(a), vb = t.param(b), vm = t.param(m);
    const Var parts[] = {va, vb, row(t, vm, 1)};
    const Var rows[] = {va, row(t, vm, 2)};
    const Var terms[] = {weighted_sum(t, concat(t, parts)), weighted_sum(t, stack(t, rows)),
                         element(t, vb, 2), sum(t, va), weighted_sum(t, sum_rows(t, vm)),
                         max_element(t, vb), weighted_sum(t, slice(t, va, 1, 2))};
    return add_n(t, terms);
  });
  CHECK(r.max_rel_error < kOpTolerance);
}

TEST_CASE("embedding ops") {
  SUBCASE("identity table returns the basis vector") {
    ParameterSet ps;
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    auto& table = ps.add("table", eye);
    Tape t;
    const std::int32_t idx[] = {2};
    const Var out = embedding_lookup(t, t.param(table), idx);
    CHECK(t.value(out).data()[0] == 0.0);
    CHECK(t.value(out).data()[2] == 1.0);
  }
  SUBCASE("repeated index accumulates") {
    ParameterSet ps;
    auto& table = ps.add("table", Tensor({3, 2}, 0.5));
    ps.zero_grad();
    Tape t;
    const std::int32_t idx[] = {0, 0};
    const Var out = embedding_lookup(t, t.param(table), idx);
    t.backward(sum(t, out));
    CHECK(table.grad.at(0, 0) == 2.0);
    CHECK(table.grad.at(0, 1) == 2.0);
    CHECK(table.grad.at(1, 0) == 0.0);
  }
  SUBCASE("random lookup matches a naive gather") {
    Rng rng(5);
    ParameterSet ps;
    auto& table = random_param(ps, "table", {7, 3}, rng);
    std::vector<std::int32_t> idx = {6, 0, 3, 3, -1};
    Tape t;
    const Tensor& out = t.value(embedding_lookup(t, t.param(table), idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double want = idx[r] < 0 ? 0.0 : table.value.at(static_cast<std::size_t>(idx[r]), c);
        CHECK(out.at(r, c) == want);
      }
    }
    auto res = grad_check(ps, [&](Tape& t) {
      const std::int32_t tok[] = {1, 4, 4};
      return add(t, weighted_sum(t, embedding_lookup(t, t.param(table), idx)),
                 weighted_sum(t, embedding_sum(t, t.param(table), tok)));
    });
    CHECK(res.max_rel_error < kOpTolerance);
  }
  SUBCASE("index out of range throws") {
    ParameterSet ps;
    auto& table = ps.add("table", Tensor({3, 2}));
    Tape t;
    const std::int32_t idx[] = {3};
    CHECK_THROWS_AS(embedding_lookup(t, t.param(table), idx), ShapeError);
  }
}

TEST_CASE("gru cell") {
  SUBCASE("zero weights keep a zero state") {
    ParameterSet ps;
    auto& w = ps.add("W", Tensor({12, 3}));
    auto& u = ps.add("U", Tensor({12, 4}));
    auto& b = ps.add("b", Tensor({12}));
    Tape t;
    const Var h = gru_cell(t, t.constant(Tensor::vector({1, 2, 3})), t.constant(Tensor({4})),
                           GruWeights{t.param(w), t.param(u), t.param(b)});
    for (double v : t.value(h).data()) CHECK(v == 0.0);
  }
  SUBCASE("gradient check on a random 4x8 instance") {
    Rng rng(21);
    ParameterSet ps;
    auto& w = random_param(ps, "W", {24, 4}, rng);
    auto& u = random_param(ps, "U", {24, 8}, rng);
    auto& b = random_param(ps, "b", {24}, rng);
    auto& x = random_param(ps, "x", {4}, rng);
    auto& h = random_param(ps, "h", {8}, rng, -0.9, 0.9);
    auto r = grad_check(ps, [&](Tape& t) {
      const GruWeights g{t.param(w), t.param(u), t.param(b)};
      return weighted_sum(t, gru_cell(t, t.param(x), gru_cell(t, t.param(x), t.param(h), g), g));
    });
    CHECK(r.max_rel_error < kOpTolerance);
  }
  SUBCASE("state stays in (-1, 1) and settles under zero input") {
    Rng rng(22);
    ParameterSet ps;
    auto layer = GruLayer::create(ps, "g", 3, 6, rng);
    for (auto& v : layer.b->value.data()) v = rng.uniform(-1, 1);
    Tape t;
    const GruWeights g = layer.bind(t);
    const Var zero = t.constant(Tensor({3}));
    Tensor h0({6});
    for (auto& v : h0.data()) v = rng.uniform(-0.9, 0.9);
    Var h = t.constant(h0);
    std::vector<double> steps;
    for (int i = 0; i < 200; ++i) {
      const Var next = gru_cell(t, zero, h, g);
      double d = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        const double v = t.value(next)[k];
        CHECK(std::abs(v) < 1.0);
        d += (v - t.value(h)[k]) * (v - t.value(h)[k]);
      }
      steps.push_back(std::sqrt(d));
      h = next;
    }
    CHECK(steps[0] > 0.0);
    for (std::size_t i = 21; i < steps.size() && steps[i - 1] > 1e-12; ++i) CHECK(steps[i] <= steps[i - 1]);
    CHECK(steps.back() < 1e-6);
  }
  SUBCASE("shape mismatch throws") {
    ParameterSet ps;
    auto& w = ps.add("W", Tensor({12, 3}));
    auto& u = ps.add("U", Tensor({12, 4}));
    auto& b = ps.add("b", Tensor({12}));
    Tape t;
    CHECK_THROWS_AS(gru_cell(t, t.constant(Tensor({2})), t.constant(Tensor({4})),
                             GruWeights{t.param(w), t.param(u), t.param(b)}),
                    ShapeError);
  }
}

TEST_CASE("bidirectional gru") {
  Rng rng(31);
  ParameterSet ps;
  auto layer = GruLayer::create(ps, "g", 3, 5, rng);
  auto other = GruLayer::create(ps, "o", 3, 5, rng);
  for (auto& p : ps) {
    for (auto& v : p.value.data()) v = rng.uniform(-0.8, 0.8);
  }
  auto half_equal = [](const Tensor& v) {
    for (std::size_t i = 0; i < 5; ++i) {
      if (std::abs(v[i] - v[i + 5]) > 1e-15) return false;
    }
    return true;
  };
  SUBCASE("length-1 sequence with shared weights has equal halves") {
    Tape t;
    const GruWeights g = layer.bind(t);
    const Var seq[] = {t.constant(Tensor::vector({0.3, -0.2, 0.9}))};
    CHECK(half_equal(t.value(bigru_encode(t, seq, g, g))));
  }
  SUBCASE("palindrome with shared weights has equal halves") {
    Tape t;
    const GruWeights g = layer.bind(t);
    const Var a = t.constant(Tensor::vector({0.3, -0.2, 0.9}));
    const Var b = t.constant(Tensor::vector({-0.5, 0.1, 0.4}));
    const Var seq[] = {a, b, a};
    CHECK(half_equal(t.value(bigru_encode(t, seq, g, g))));
  }
  SUBCASE("empty sequence gives zeros") {
    Tape t;
    const Var out = bigru_encode(t, {}, layer.bind(t), other.bind(t));
    CHECK(t.value(out).size() == 10);
    for (double v : t.value(out).data()) CHECK(v == 0.0);
  }
  SUBCASE("gradient check") {
    auto& x1 = random_param(ps, "x1", {3}, rng);
    auto& x2 = random_param(ps, "x2", {3}, rng);
    auto r = grad_check(ps, [&](Tape& t) {
      const Var seq[] = {t.param(x1), t.param(x2), t.param(x1)};
      const auto fwd = layer.bind(t), bwd = other.bind(t);
      const Var enc = bigru_encode(t, seq, fwd, bwd);
      const auto states = bigru_states(t, seq, fwd, bwd);
      return add(t, weighted_sum(t, enc), weighted_sum(t, states[1]));
    });
    CHECK(r.max_rel_error < kOpTolerance);
  }
}

TEST_CASE("dense layer") {
  Tape t;
  ParameterSet ps;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  auto& w = ps.add("W", eye);
  auto& b = ps.add("b", Tensor({3}));
  auto& z = ps.add("Z", Tensor({3, 3}));
  const Var x = t.constant(Tensor::vector({0.5, -2.0, 3.0}));
  const Tensor& y = t.value(dense(t, x, t.param(w), t.param(b), Activation::kIdentity));
  CHECK(y[0] == 0.5);
  CHECK(y[1] == -2.0);
  CHECK(y[2] == 3.0);
  const Tensor& s = t.value(dense(t, t.constant(Tensor({3})), t.param(z), t.param(b), Activation::kSigmoid));
  for (double v : s.data()) CHECK(v == 0.5);
}

TEST_CASE("softmax and cross-entropy") {
  SUBCASE("equal logits") {
    Tape t;
    auto r = softmax_ce(t, t.constant(Tensor({4}, 0.3)), 2);
    for (double p : r.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(t.value(r.loss)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
  SUBCASE("large logits do not overflow") {
    Tape t;
    auto r = softmax_ce(t, t.constant(Tensor::vector({1000.0, 0.0})), 0);
    CHECK(r.probs[0] == 1.0);
    CHECK(r.probs[1] < 1e-300);
    CHECK(std::isfinite(t.value(r.loss)[0]));
  }
  SUBCASE("target out of range throws") {
    Tape t;
    CHECK_THROWS_AS(softmax_ce(t, t.constant(Tensor({3})), 3), ShapeError);
  }
  SUBCASE("random logits sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> z(rng.below(9) + 1);
      for (auto& v : z) v = rng.uniform(-50, 50);
      const auto p = softmax_values(z);
      double s = 0.0;
      for (double v : p) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("losses pass gradient checks") {
    Rng rng(4);
    ParameterSet ps;
    auto& z = random_param(ps, "z", {5}, rng, -2, 2);
    const std::size_t pool[] = {0, 3};
    const double labels[] = {1, 0, 0, 1, 0};
    auto r = grad_check(ps, [&](Tape& t) {
      const Var v = t.param(z);
      const Var terms[] = {softmax_ce(t, v, 1).loss, pooled_softmax_ce(t, v, pool), bce_with_logits(t, v, labels),
                           weighted_sum(t, softmax(t, v)), weighted_sum(t, log_softmax(t, v))};
      return add_n(t, terms);
    });
    CHECK(r.max_rel_error < kOpTolerance);
  }
}

TEST_CASE("shared parameters accumulate gradients") {
  ParameterSet ps;
  auto& w = ps.add("w", Tensor::vector({0.3, -0.7, 1.1}));
  auto& x = ps.add("x", Tensor::vector({0.2, 0.4, -0.6}));
  ps.zero_grad();
  {
    Tape t;
    t.backward(sum(t, mul(t, t.param(w), t.param(x))));
  }
  const Tensor once = w.grad;
  ps.zero_grad();
  {
    Tape t;
    const Var a = sum(t, mul(t, t.param(w), t.param(x)));
    const Var b = sum(t, mul(t, t.param(w), t.param(x)));
    t.backward(add(t, a, b));
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad[i] == 2 * once[i]);
}

TEST_CASE("adam") {
  using ftrack::testing::ScalarAdam;
  SUBCASE("first step moves each coordinate by about lr") {
    std::vector<double> x = {1.0, -2.0, 0.5};
    const std::vector<double> g = {0.3, -4.0, 1e-3};
    AdamState s;
    AdamConfig cfg;
    adam_step(x, g, s, cfg);
    const double before[] = {1.0, -2.0, 0.5};
    for (std::size_t i = 0; i < 3; ++i) {
      const double delta = x[i] - before[i];
      CHECK(std::abs(delta) <= cfg.lr * (1 + 1e-4));
      CHECK(std::abs(delta) >= cfg.lr * 0.9);
      CHECK((delta < 0) == (g[i] > 0));
    }
  }
  SUBCASE("zero gradient leaves parameters and decays moments") {
    std::vector<double> x = {1.0};
    AdamState s;
    AdamConfig cfg;
    adam_step(x, std::vector<double>{1.0}, s, cfg);
    const double m = s.m[0], v = s.v[0], after = x[0];
    std::vector<double> y = {5.0};
    AdamState z;
    adam_step(y, std::vector<double>{0.0}, z, cfg);
    CHECK(y[0] == 5.0);
    adam_step(x, std::vector<double>{0.0}, s, cfg);
    CHECK(s.m[0] == doctest::Approx(0.9 * m));
    CHECK(s.v[0] == doctest::Approx(0.999 * v));
    CHECK(x[0] != after);  // momentum still moves it
  }
  SUBCASE("minimises x^2 and matches the scalar reference") {
    std::vector<double> x = {1.0};
    AdamState s;
    AdamConfig cfg;
    cfg.lr = 0.1;
    ScalarAdam ref{0.1};
    double xr = 1.0;
    for (int i = 0; i < 200; ++i) {
      const std::vector<double> g = {2 * x[0]};
      adam_step(x, g, s, cfg);
      xr = ref.step(xr, 2 * xr);
      CHECK(x[0] == doctest::Approx(xr).epsilon(1e-12));
    }
    CHECK(std::abs(x[0]) < 1e-2);
  }
  SUBCASE("non-finite gradients are rejected") {
    std::vector<double> x = {1.0};
    AdamState s;
    CHECK_THROWS_AS(adam_step(x, std::vector<double>{NAN}, s, AdamConfig{}), TrainingDiverged);
    CHECK(x[0] == 1.0);
    ParameterSet ps;
    auto& p = ps.add("p", Tensor::vector({1.0}));
    p.grad = Tensor::vector({INFINITY});
    Adam opt(ps, AdamConfig{});
    CHECK_THROWS_AS(opt.step(), TrainingDiverged);
  }
}

TEST_CASE("parameter set json round trip") {
  Rng rng(8);
  ParameterSet a;
  random_param(a, "w", {2, 3}, rng);
  random_param(a, "b", {3}, rng);
  ParameterSet b;
  b.add("w", Tensor({2, 3}));
  b.add("b", Tensor({3}));
  b.load_json(a.to_json());
  CHECK(b.at("w").value == a.at("w").value);
  CHECK(b.at("b").value == a.at("b").value);
  ParameterSet c;
  c.add("w", Tensor({3, 2}));
  c.add("b", Tensor({3}));
  CHECK_THROWS_AS(c.load_json(a.to_json()), CheckpointMismatch);
}
