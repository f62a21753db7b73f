#include <cstring>
#include <cmath>
#include <sstream>

#include "csched/error.hpp"
#include "csched/nn.hpp"
#include "doctest.h"

using namespace csched;
using namespace csched::nn;

namespace {

std::vector<Matrix> random_sequence(int steps, int rows, int cols, Rng& rng) {
  std::vector<Matrix> out;
  for (int t = 0; t < steps; ++t) {
    Matrix m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = 2.0 * uniform01(rng) - 1.0;
    out.push_back(m);
  }
  return out;
}

void randomize(ParamStore& store, Rng& rng, double scale) {
  for (double& v : store.values) v = scale * (2.0 * uniform01(rng) - 1.0);
  ++store.version;
}

// Scalar test loss: sum_t <weights_t, outputs_t>.
double probe_loss(const RecurrentNet& net, const ParamStore& store, const std::vector<Matrix>& x, const Matrix& h0,
                  const std::vector<Eigen::RowVectorXd>& keep, const std::vector<Matrix>& weights) {
  auto cache = net.forward(store, x, h0, keep);
  double loss = 0.0;
  for (int t = 0; t < cache.steps(); ++t) loss += cache.outputs[t].cwiseProduct(weights[t]).sum();
  return loss;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace

TEST_CASE("zero weights give a uniform policy and a zero value") {
  RecurrentNet actor({5, 8, 8, 8});
  auto store = actor.make_store();
  Rng rng = make_rng(1);
  auto x = random_sequence(3, 5, 2, rng);
  auto cache = actor.forward(store, x, Matrix::Zero(8, 2));
  for (const auto& out : cache.outputs) {
    Matrix p = softmax(out);
    CHECK((p.array() - 0.125).abs().maxCoeff() < 1e-15);
  }
  RecurrentNet critic({5, 8, 8, 1});
  auto cs = critic.make_store();
  auto cc = critic.forward(cs, x, Matrix::Zero(8, 2));
  for (const auto& out : cc.outputs) CHECK(out.isZero());
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  Rng rng = make_rng(2);
  RecurrentNet actor({4, 6, 6, 8});
  auto store = actor.make_store();
  actor.initialize(store, rng, 1.0);
  auto x = random_sequence(4, 4, 3, rng);
  auto cache = actor.forward(store, x, Matrix::Zero(6, 3));
  for (const auto& out : cache.outputs) {
    Matrix p = softmax(out);
    for (Eigen::Index c = 0; c < p.cols(); ++c) CHECK(std::abs(p.col(c).sum() - 1.0) < 1e-12);
    Matrix shifted = softmax(out.array() + 123.456);
    CHECK((shifted - p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("stepping with carried state equals a full-sequence pass") {
  Rng rng = make_rng(3);
  RecurrentNet net({3, 5, 7, 4});
  auto store = net.make_store();
  net.initialize(store, rng, 1.0);
  auto x = random_sequence(6, 3, 2, rng);
  Matrix h0 = Matrix::Random(7, 2) * 0.1;
  auto cache = net.forward(store, x, h0);
  Matrix h = h0;
  for (int t = 0; t < 6; ++t) {
    Matrix y = net.step(store, x[t], h);
    CHECK((y - cache.outputs[t]).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((h - cache.hidden[t]).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("analytic BPTT gradient matches central differences") {
  Rng rng = make_rng(4);
  for (int output : {8, 1}) {
    RecurrentNet net({6, 5, 4, output});
    auto store = net.make_store();
    randomize(store, rng, 0.6);
    const int steps = 8, batch = 3;
    auto x = random_sequence(steps, 6, batch, rng);
    auto w = random_sequence(steps, output, batch, rng);
    Matrix h0 = Matrix::Random(4, batch) * 0.5;
    std::vector<Eigen::RowVectorXd> keep(steps, Eigen::RowVectorXd::Ones(batch));
    keep[3](1) = 0.0;  // episode boundary inside the sequence
    keep[5](0) = 0.0;

    store.zero_grad();
    auto cache = net.forward(store, x, h0, keep);
    net.backward(store, cache, w);
    const std::vector<double> analytic(store.grads.begin(), store.grads.end());

    std::vector<double> numeric(store.size());
    const double eps = 1e-5;
    for (std::size_t k = 0; k < store.size(); ++k) {
      const double saved = store.values[k];
      store.values[k] = saved + eps;
      const double up = probe_loss(net, store, x, h0, keep, w);
      store.values[k] = saved - eps;
      const double down = probe_loss(net, store, x, h0, keep, w);
      store.values[k] = saved;
      numeric[k] = (up - down) / (2 * eps);
    }
    CHECK(relative_error(analytic, numeric) < 1e-4);
    for (std::size_t k = 0; k < store.size(); ++k) {
      if (std::abs(numeric[k]) > 1e-3) REQUIRE(std::abs(analytic[k] - numeric[k]) / std::abs(numeric[k]) < 1e-4);
    }
  }
}

TEST_CASE("backward is linear in the upstream gradient") {
  Rng rng = make_rng(5);
  RecurrentNet net({3, 4, 4, 2});
  auto store = net.make_store();
  net.initialize(store, rng, 1.0);
  auto x = random_sequence(5, 3, 2, rng);
  Matrix h0 = Matrix::Zero(4, 2);
  auto cache = net.forward(store, x, h0);

  std::vector<Matrix> zero(5, Matrix::Zero(2, 2));
  store.zero_grad();
  net.backward(store, cache, zero);
  for (double g : store.grads) CHECK(g == 0.0);

  auto a = random_sequence(5, 2, 2, rng);
  auto b = random_sequence(5, 2, 2, rng);
  std::vector<Matrix> sum;
  for (int t = 0; t < 5; ++t) sum.push_back(a[t] + b[t]);
  store.zero_grad();
  net.backward(store, cache, a);
  net.backward(store, cache, b);
  auto separate = store.grads;
  store.zero_grad();
  net.backward(store, cache, sum);
  for (std::size_t k = 0; k < separate.size(); ++k) CHECK(separate[k] == doctest::Approx(store.grads[k]).epsilon(1e-12));
}

TEST_CASE("stale cache and shape errors") {
  Rng rng = make_rng(6);
  RecurrentNet net({3, 4, 4, 2});
  auto store = net.make_store();
  net.initialize(store, rng, 1.0);
  auto x = random_sequence(2, 3, 1, rng);
  auto cache = net.forward(store, x, Matrix::Zero(4, 1));
  store.grads.assign(store.size(), 0.1);
  adam_step(store, AdamConfig{});
  std::vector<Matrix> dy(2, Matrix::Ones(2, 1));
  CHECK_THROWS_AS(net.backward(store, cache, dy), ProtocolError);
  CHECK_THROWS_AS(net.backward(store, ForwardCache{}, dy), ProtocolError);
  CHECK_THROWS_AS(net.forward(store, random_sequence(2, 5, 1, rng), Matrix::Zero(4, 1)), ArgumentError);
  CHECK_THROWS_AS(net.forward(store, x, Matrix::Zero(3, 1)), ArgumentError);
}

TEST_CASE("Adam") {
  ParamLayout layout;
  layout.add("w", 3, 1);
  AdamConfig cfg;
  cfg.lr = 0.01;

  ParamStore zero(layout);
  zero.values = {1.0, -2.0, 3.0};
  adam_step(zero, cfg);
  CHECK(zero.values == nn::Buffer{1.0, -2.0, 3.0});

  // First step with constant gradient g: m_hat = g, v_hat = g^2, so the
  // update is -lr * g / (|g| + eps).
  ParamStore one(layout);
  one.grads = {0.5, -2.0, 1e-3};
  adam_step(one, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    const double g = std::vector<double>{0.5, -2.0, 1e-3}[k];
    CHECK(one.values[k] == doctest::Approx(-cfg.lr * g / (std::abs(g) + cfg.eps)).epsilon(1e-12));
  }

  // Norm clipping scales the gradient before the moments see it.
  ParamStore clipped(layout);
  clipped.grads = {3.0, 4.0, 0.0};
  cfg.max_grad_norm = 1.0;
  CHECK(adam_step(clipped, cfg) == doctest::Approx(5.0));
  CHECK(clipped.first_moment[0] == doctest::Approx(0.1 * 0.6));
  CHECK(clipped.first_moment[1] == doctest::Approx(0.1 * 0.8));

  ParamStore bad(layout);
  bad.grads = {0.0, std::nan(""), 0.0};
  CHECK_THROWS_AS(adam_step(bad, cfg), TrainingError);
}

TEST_CASE("categorical distribution") {
  CategoricalDist uniform{std::vector<double>(8, 0.125)};
  CHECK(entropy(uniform) == doctest::Approx(std::log(8.0)));
  CategoricalDist onehot{{0.0, 1.0, 0.0, 0.0}};
  CHECK(entropy(onehot) == 0.0);
  CHECK(log_prob(onehot, 1) == 0.0);
  CHECK(log_prob(onehot, 0) == doctest::Approx(std::log(kProbFloor)));
  CHECK(mode(onehot) == 1);
  CHECK_THROWS_AS(log_prob(onehot, 4), ArgumentError);

  auto d = make_dist(std::vector<double>{0.3, -1.0, 2.0, 0.0});
  Rng rng = make_rng(7);
  std::vector<long> counts(4, 0);
  const int draws = 1'000'000;
  for (int k = 0; k < draws; ++k) counts[sample(d, rng)]++;
  for (int a = 0; a < 4; ++a) CHECK(std::abs(static_cast<double>(counts[a]) / draws - d.probs[a]) < 0.01 * d.probs[a] + 1e-3);

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(8);
    for (auto& l : logits) l = 10.0 * (2.0 * uniform01(rng) - 1.0);
    auto dist = make_dist(logits);
    const double h = entropy(dist);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(8.0) + 1e-12);
  }
}

TEST_CASE("parameter values round-trip bit for bit") {
  Rng rng = make_rng(8);
  RecurrentNet net({4, 6, 6, 8});
  auto store = net.make_store();
  net.initialize(store, rng, 1.0);
  store.values[0] = 1.0 / 3.0;
  store.values[1] = -0.0;
  store.values[2] = 1e-300;
  std::stringstream ss;
  write_values(ss, store.values);
  auto back = read_values(ss, store.size());
  REQUIRE(back.size() == store.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    REQUIRE(std::memcmp(&back[k], &store.values[k], sizeof(double)) == 0);
  }
  std::stringstream short_stream("1.0\n2.0\n");
  CHECK_THROWS_AS(read_values(short_stream, 3), ConfigError);
}
