#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gns/errors.hpp"
#include "gns/tensor.hpp"
#include "support/oracles.hpp"

using namespace gns;
using namespace gns::ad;
using gns::testing::max_rel_error;
using gns::testing::numeric_grad;
using gns::testing::random_tensor;

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

/// Analytic gradient of loss() w.r.t. each input, via one recorded pass.
std::vector<std::vector<double>> tape_grads(std::vector<Tensor*> inputs, const std::function<Tensor()>& loss) {
  for (auto* t : inputs) t->zero_grad();
  Tape tape;
  {
    Tape::Recording rec(tape);
    Tensor l = loss();
    tape.backward(l);
  }
  std::vector<std::vector<double>> out;
  for (auto* t : inputs) out.push_back(to_vec(t->grad()));
  return out;
}

void check_grads(std::vector<Tensor*> inputs, const std::function<Tensor()>& loss, double tol,
                 double floor = 1e-8) {
  const auto analytic = tape_grads(inputs, loss);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto numeric = numeric_grad(*inputs[k], [&] { return loss().item(); });
    CHECK(max_rel_error(analytic[k], numeric, floor) < tol);
  }
}

}  // namespace

TEST_CASE("matmul values and errors") {
  auto id = Tensor::from_values({2, 2}, std::vector<double>{1, 0, 0, 1});
  auto col = Tensor::from_values({2, 1}, std::vector<double>{3, 4});
  auto r = matmul(id, col);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0, 0) == 3.0);
  CHECK(r.at(1, 0) == 4.0);

  auto row = Tensor::from_values({1, 2}, std::vector<double>{1, 2});
  CHECK(matmul(row, col).item() == 11.0);

  CHECK_THROWS_AS(matmul(col, col), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  auto a = random_tensor({4, 3}, 1);
  auto b = random_tensor({3, 2}, 2);
  check_grads({&a, &b}, [&] { return sum(matmul(a, b)); }, 1e-6);
}

TEST_CASE("erf kernel agrees with std::erf") {
  std::vector<double> xs;
  for (double x = -12.0; x <= 12.0; x += 0.00731) xs.push_back(x);
  xs.push_back(0.0);
  xs.push_back(0.46875);
  xs.push_back(-0.46875);
  xs.push_back(4.0);
  xs.push_back(1e-300);
  std::vector<double> ys = xs;
  erf_inplace(ys);
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::erf(xs[i]);
    worst = std::max(worst, std::abs(ys[i] - ref) / std::max(std::abs(ref), 1e-300));
  }
  CHECK(worst < 1e-14);
}

TEST_CASE("gelu values") {
  auto x = Tensor::from_values({3}, std::vector<double>{0.0, 10.0, 1.0});
  auto y = gelu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(std::abs(y.values()[1] - 10.0) < 1e-9);
  const long double oracle = 0.5L * (1.0L + gns::testing::series_erf(1.0L / std::sqrt(2.0L)));
  CHECK(std::abs(y.values()[2] - static_cast<double>(oracle)) < 1e-15);
  // 0.5·(1+erf(1/√2)) cross-checked with a 40-digit evaluation
  CHECK(std::abs(y.values()[2] - 0.8413447460685429) < 1e-15);
}

TEST_CASE("gelu gradient") {
  auto x = random_tensor({5, 7}, 3);
  for (auto& v : x.mutable_values()) v *= 4.0;
  auto target = random_tensor({5, 7}, 4, false);
  check_grads({&x}, [&] { return mse_loss(gelu(x), target); }, 1e-6);
}

TEST_CASE("layer_norm values") {
  auto gamma = Tensor::from_values({4}, std::vector<double>{1, 1, 1, 1});
  auto beta = Tensor::zeros({4});
  auto y = layer_norm(Tensor::from_values({1, 4}, std::vector<double>{5, 5, 5, 5}), gamma, beta);
  for (double v : y.values()) CHECK(v == 0.0);

  auto g2 = Tensor::from_values({2}, std::vector<double>{1, 1});
  auto y2 = layer_norm(Tensor::from_values({1, 2}, std::vector<double>{1, 3}), g2, Tensor::zeros({2}));
  CHECK(std::abs(y2.values()[0] + 1.0) < 1e-4);
  CHECK(std::abs(y2.values()[1] - 1.0) < 1e-4);
  CHECK(y2.values()[1] != 1.0);  // epsilon keeps it strictly inside

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({3, 1}), Tensor::zeros({1}), Tensor::zeros({1})), DimensionError);
}

TEST_CASE("layer_norm gradient") {
  auto x = random_tensor({3, 8}, 5);
  auto gamma = random_tensor({8}, 6);
  auto beta = random_tensor({8}, 7);
  auto target = random_tensor({3, 8}, 8, false);
  check_grads({&x, &gamma, &beta}, [&] { return mse_loss(layer_norm(x, gamma, beta), target); }, 1e-5);
}

TEST_CASE("gather_rows") {
  auto x = Tensor::from_values({3, 1}, std::vector<double>{1, 2, 3});
  std::vector<Index> idx{2, 0};
  auto g = gather_rows(x, idx);
  CHECK(to_vec(g.values()) == std::vector<double>{3, 1});

  std::vector<Index> ident{0, 1, 2};
  CHECK(to_vec(gather_rows(x, ident).values()) == to_vec(x.values()));

  std::vector<Index> bad{3};
  CHECK_THROWS_AS(gather_rows(x, bad), IndexError);

  auto p = Tensor::from_values({3, 1}, std::vector<double>{1, 2, 3}, true);
  std::vector<Index> rep{1, 1};
  auto grads = tape_grads({&p}, [&] { return sum(gather_rows(p, rep)); });
  CHECK(grads[0] == std::vector<double>{0, 2, 0});
}

TEST_CASE("scatter_mean") {
  auto m = Tensor::from_values({2, 1}, std::vector<double>{2, 4});
  std::vector<Index> r0{0, 0};
  CHECK(scatter_mean(m, r0, 1).item() == 3.0);

  std::vector<Index> r1{0, 2};
  auto s = scatter_mean(Tensor::from_values({2, 2}, std::vector<double>{1, 2, 3, 4}), r1, 3);
  CHECK(s.at(1, 0) == 0.0);
  CHECK(s.at(1, 1) == 0.0);
  CHECK(s.at(2, 1) == 4.0);

  std::vector<Index> bad{5, 0};
  CHECK_THROWS_AS(scatter_mean(m, bad, 3), IndexError);
}

TEST_CASE("scatter_mean is invariant to joint edge permutations") {
  const std::size_t e = 20, n = 5, d = 3;
  auto msgs = random_tensor({e, d}, 11, false);
  std::mt19937_64 rng(12);
  std::vector<Index> recv(e);
  for (auto& r : recv) r = static_cast<Index>(rng() % n);
  const auto base = to_vec(scatter_mean(msgs, recv, n).values());
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(e);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pv(e * d);
    std::vector<Index> pr(e);
    for (std::size_t i = 0; i < e; ++i) {
      pr[i] = recv[perm[i]];
      for (std::size_t j = 0; j < d; ++j) pv[i * d + j] = msgs.at(perm[i], j);
    }
    const auto permuted = to_vec(scatter_mean(Tensor::from_values({e, d}, pv), pr, n).values());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(base[i] - permuted[i]) < 1e-12);
  }
}

TEST_CASE("gather/scatter gradients") {
  auto x = random_tensor({4, 3}, 13);
  std::vector<Index> idx{3, 1, 1, 0, 2, 3};
  std::vector<Index> recv{0, 0, 1, 3, 3, 3};
  auto target = random_tensor({5, 3}, 14, false);
  check_grads({&x}, [&] { return mse_loss(scatter_mean(gather_rows(x, idx), recv, 5), target); }, 1e-6);
}

TEST_CASE("elementwise ops, concat, slice, linear gradients") {
  auto a = random_tensor({3, 2}, 21);
  auto b = random_tensor({3, 2}, 22);
  auto c = random_tensor({3, 3}, 23);
  auto w = random_tensor({5, 4}, 24);
  auto bias = random_tensor({4}, 25);
  auto target = random_tensor({3, 4}, 26, false);
  check_grads({&a, &b, &c, &w, &bias}, [&] {
    std::vector<Tensor> parts{add(a, scale(b, -0.5)), sub(c, slice_rows(c, 0, 3))};
    auto joined = concat_cols(parts);
    return mse_loss(linear(joined, w, bias), target);
  }, 1e-6);
  CHECK_THROWS_AS(add(a, c), DimensionError);
  std::vector<Tensor> bad{a, Tensor::zeros({2, 2})};
  CHECK_THROWS_AS(concat_cols(bad), DimensionError);
}

TEST_CASE("mse_loss") {
  auto x = Tensor::from_values({2}, std::vector<double>{0, 2});
  CHECK(mse_loss(x, x).item() == 0.0);
  CHECK(mse_loss(x, Tensor::zeros({2})).item() == 2.0);

  auto pred = random_tensor({4, 2}, 31);
  auto target = random_tensor({4, 2}, 32, false);
  auto g = tape_grads({&pred}, [&] { return mse_loss(pred, target); });
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(g[0][i] - 2.0 * (pred.values()[i] - target.values()[i]) / 8.0) < 1e-15);
  }
  check_grads({&pred}, [&] { return mse_loss(pred, target); }, 1e-6);
}

TEST_CASE("backward contract and accumulation") {
  auto x = random_tensor({2, 2}, 41);
  Tape tape;
  Tape::Recording rec(tape);
  auto y = gelu(x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);

  auto l = sum(y);
  tape.backward(l);
  const auto first = to_vec(x.grad());
  tape.backward(l);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * first[i]).epsilon(1e-15));

  Tape other;
  CHECK_THROWS_AS(other.backward(l), ContractError);
}

TEST_CASE("no tape means no recording") {
  auto x = random_tensor({2, 2}, 42);
  auto y = gelu(x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  {
    Tape::Recording rec(tape);
    auto c = Tensor::zeros({2, 2});
    auto z = gelu(c);
    CHECK_FALSE(z.requires_grad());
    CHECK(tape.size() == 0);
  }
}

TEST_CASE("non-finite values are rejected") {
  auto x = Tensor::from_values({1, 1}, std::vector<double>{1e308});
  CHECK_THROWS_AS(scale(x, 10.0), NumericalError);
}

TEST_CASE("tape replay is bitwise deterministic") {
  auto x = random_tensor({6, 4}, 51);
  auto w = random_tensor({4, 4}, 52);
  auto b = random_tensor({4}, 53);
  auto gamma = random_tensor({4}, 54);
  auto beta = random_tensor({4}, 55);
  std::vector<Index> idx{0, 5, 2, 2, 1};
  auto run = [&] {
    return tape_grads({&x, &w, &b, &gamma, &beta}, [&] {
      auto h = layer_norm(gelu(linear(x, w, b)), gamma, beta);
      return sum(scatter_mean(gather_rows(h, idx), std::vector<Index>{0, 1, 1, 2, 0}, 3));
    });
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p{Tensor::from_values({2}, std::vector<double>{0.3, -0.7}, true)};
    AdamState st(AdamHyper{}, p);
    adam_step(p, st);
    CHECK(to_vec(p[0].values()) == std::vector<double>{0.3, -0.7});
  }
  SUBCASE("first bias-corrected step moves by lr") {
    std::vector<Tensor> p{Tensor::scalar(1.0, true)};
    AdamState st(AdamHyper{0.1}, p);
    p[0].mutable_grad()[0] = 1.0;
    adam_step(p, st);
    CHECK(std::abs(p[0].item() - 0.9) < 1e-8);
  }
  SUBCASE("two-step reference trace") {
    std::vector<Tensor> p{Tensor::scalar(0.5, true)};
    AdamState st(AdamHyper{0.01}, p);
    const std::vector<double> g1{0.2}, g2{-0.1};
    std::vector<std::span<const double>> s1{g1}, s2{g2};
    adam_step(p, s1, st);
    CHECK(p[0].item() == doctest::Approx(0.4900000005).epsilon(1e-14));
    adam_step(p, s2, st);
    CHECK(p[0].item() == doctest::Approx(0.4873366302718676).epsilon(1e-14));
    CHECK(st.step == 2);
  }
}

TEST_CASE("fused_mlp2 matches the composed ops across row tiles") {
  constexpr std::size_t rows = 300, pool = 20;
  auto x0 = random_tensor({rows, 3}, 31);
  auto x1 = random_tensor({pool, 2}, 32);
  auto w1 = random_tensor({7, 5}, 33);
  auto b1 = random_tensor({5}, 34);
  auto w2 = random_tensor({5, 4}, 35);
  auto b2 = random_tensor({4}, 36);
  auto target = random_tensor({rows, 4}, 37, false);
  std::vector<Index> recv(rows), send(rows);
  std::mt19937_64 rng(38);
  for (std::size_t i = 0; i < rows; ++i) {
    recv[i] = static_cast<Index>(rng() % pool);
    send[i] = static_cast<Index>(rng() % pool);
  }
  const MlpPart parts[] = {{x1, recv}, {x0, {}}, {x1, send}};
  auto fused = [&] { return fused_mlp2(parts, rows, w1, b1, w2, b2); };
  auto composed = [&] {
    auto pre = add(gather_rows(matmul(x1, slice_rows(w1, 0, 2)), recv),
                   linear(x0, slice_rows(w1, 2, 5), b1));
    pre = add(pre, gather_rows(matmul(x1, slice_rows(w1, 5, 7)), send));
    return linear(gelu(pre), w2, b2);
  };
  const auto a = fused(), b = composed();
  REQUIRE(a.shape() == b.shape());
  CHECK(max_rel_error(a.values(), b.values(), 1e-12) < 1e-13);

  std::vector<Tensor*> inputs{&x0, &x1, &w1, &b1, &w2, &b2};
  const auto ga = tape_grads(inputs, [&] { return mse_loss(fused(), target); });
  const auto gb = tape_grads(inputs, [&] { return mse_loss(composed(), target); });
  for (std::size_t k = 0; k < inputs.size(); ++k) CHECK(max_rel_error(ga[k], gb[k], 1e-12) < 1e-10);
  check_grads({&x1, &w1, &b1, &w2}, [&] { return mse_loss(fused(), target); }, 1e-6);
}

TEST_CASE("fused_mlp2 validates shapes and indices") {
  auto x = random_tensor({4, 3}, 41);
  auto w1 = random_tensor({3, 5}, 42);
  auto b1 = random_tensor({5}, 43);
  auto w2 = random_tensor({5, 2}, 44);
  auto b2 = random_tensor({2}, 45);
  const MlpPart ok[] = {{x, {}}};
  CHECK(fused_mlp2(ok, 4, w1, b1, w2, b2).shape() == Shape{4, 2});
  CHECK_THROWS_AS(fused_mlp2(ok, 5, w1, b1, w2, b2), DimensionError);
  CHECK_THROWS_AS(fused_mlp2(ok, 4, w1, b1, w1, b2), DimensionError);
  const std::vector<Index> bad{0, 1, 9};
  const MlpPart oob[] = {{x, bad}};
  CHECK_THROWS_AS(fused_mlp2(oob, 3, w1, b1, w2, b2), IndexError);
  const MlpPart narrow[] = {{slice_rows(w1, 0, 2), {}}};
  CHECK_THROWS_AS(fused_mlp2(narrow, 2, w1, b1, w2, b2), DimensionError);
}
