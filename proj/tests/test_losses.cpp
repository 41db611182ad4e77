#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "dhd/losses.hpp"
#include "support.hpp"

using namespace dhd;

namespace {

constexpr double kStep = 1e-5;

std::vector<double> uniform_vector(std::size_t n, double lo, double hi, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central differences of f at x.
std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + kStep;
    const double up = f(x);
    x[i] = x0 - kStep;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * kStep);
  }
  return g;
}

void expect_gradients_agree(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  ASSERT_EQ(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i)
    EXPECT_TRUE(oracle::gradients_agree(analytic[i], numeric[i]))
        << "component " << i << ": analytic " << analytic[i] << " numeric " << numeric[i];
}

}  // namespace

TEST(Losses, SdhGradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.below(63);
    const auto teacher = uniform_vector(k, -1, 1, rng);
    const auto student = uniform_vector(k, -1, 1, rng);
    const auto r = sdh_loss(teacher, student);
    EXPECT_NEAR(r.loss, 1 - oracle::cosine(teacher, student), 1e-12);
    const auto num = numeric_gradient([&](const auto& s) { return 1 - oracle::cosine(teacher, s); }, student);
    expect_gradients_agree(r.grad_student, num);
  }
}

TEST(Losses, SdhValues) {
  const std::vector<double> a = {0.5, -0.5, 0.25}, neg = {-0.5, 0.5, -0.25}, scaled = {1.0, -1.0, 0.5};
  EXPECT_NEAR(sdh_loss(a, a).loss, 0.0, 1e-15);
  EXPECT_NEAR(sdh_loss(a, scaled).loss, 0.0, 1e-15);
  EXPECT_NEAR(sdh_loss(a, neg).loss, 2.0, 1e-15);
  const std::vector<double> zero(3, 0.0);
  EXPECT_THROW(sdh_loss(a, zero), DegenerateInput);
  EXPECT_THROW(sdh_loss(a, std::vector<double>{1.0}), InvalidInput);
}

TEST(Losses, HpGradientMatchesFiniteDifferences) {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + rng.below(20);
    const double tau = rng.uniform(0.05, 1.0);
    const auto pred = uniform_vector(c, -1, 1, rng);
    std::vector<double> y(c, 0.0);
    for (std::size_t j = 0; j < 1 + rng.below(3); ++j) y[rng.below(c)] = 1.0;
    y = normalize_multilabel(y);
    const auto r = hp_loss(y, pred, tau);
    EXPECT_NEAR(r.loss, oracle::hp(y, pred, tau), 1e-10);
    const auto num = numeric_gradient([&](const auto& p) { return oracle::hp(y, p, tau); }, pred);
    expect_gradients_agree(r.grad_pred, num);
  }
}

TEST(Losses, HpKnownValues) {
  // Uniform predictions over C classes give log C.
  const std::vector<double> y = {0, 1, 0, 0}, flat(4, 0.3);
  EXPECT_NEAR(hp_loss(y, flat, 0.2).loss, std::log(4.0), 1e-12);
  // Two classes at cosines +1 / -1, tau = 1, correct class first: log(1 + e^-2).
  const std::vector<double> y2 = {1, 0}, p2 = {1, -1};
  EXPECT_NEAR(hp_loss(y2, p2, 1.0).loss, 0.126928011042973, 1e-12);
}

TEST(Losses, HpIsShiftInvariant) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    const auto pred = uniform_vector(6, -1, 1, rng);
    std::vector<double> y(6, 0.0);
    y[rng.below(6)] = 1.0;
    auto shifted = pred;
    const double c = rng.uniform(-3, 3);
    for (double& p : shifted) p += c;
    const auto a = hp_loss(y, pred, 0.2), b = hp_loss(y, shifted, 0.2);
    EXPECT_NEAR(a.loss, b.loss, 1e-12);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.probabilities[i], b.probabilities[i], 1e-12);
  }
}

TEST(Losses, HpMultiLabelSplitsTarget) {
  const auto y = normalize_multilabel(std::vector<double>{1, 0, 1, 0});
  EXPECT_EQ(y, (std::vector<double>{0.5, 0, 0.5, 0}));
  const std::vector<double> pred = {0.9, -0.2, 0.1, 0.4};
  const auto r = hp_loss(y, pred, 0.2);
  double sum = 0;
  for (double g : r.grad_pred) sum += g;
  EXPECT_NEAR(sum, 0.0, 1e-12);
  EXPECT_THROW(normalize_multilabel(std::vector<double>{0, 0}), InvalidInput);
  EXPECT_THROW(hp_loss(y, pred, 0.0), InvalidConfig);
}

TEST(Losses, BceqGradientMatchesFiniteDifferences) {
  // Excluded: |h| < 1e-3 (label flip at 0) and |h -+ 1| < 1e-3 (clamp edge).
  Rng rng(24);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + rng.below(64);
    const double sigma = rng.uniform(0.3, 1.0);
    std::vector<double> h(k);
    for (double& x : h) {
      do x = rng.uniform(-0.999, 0.999);
      while (std::abs(x) < 1e-3);
    }
    const auto r = bceq_loss(h, sigma);
    EXPECT_NEAR(r.loss, oracle::bceq(h, sigma), 1e-12);
    const auto num = numeric_gradient([&](const auto& x) { return oracle::bceq(x, sigma); }, h);
    expect_gradients_agree(r.grad, num);
  }
}

TEST(Losses, BceqKnownValues) {
  EXPECT_NEAR(gaussian_likelihood(GaussianEstimator::positive(0.5), 0.0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(gaussian_likelihood(GaussianEstimator::negative(0.5), 0.0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(gaussian_likelihood(GaussianEstimator::positive(0.5), 1.0), 1.0, 1e-15);
  EXPECT_THROW(GaussianEstimator(1.0, 0.0), InvalidConfig);

  // At exact +-1 the matching estimator is clamped to 1 - 1e-7 and the other
  // one contributes -log(1 - e^-8).
  const double expected = -std::log1p(-std::exp(-8.0)) - std::log(1 - kLikelihoodEpsilon);
  for (const auto& h : {std::vector<double>{1, 1, 1}, std::vector<double>{-1, 1, -1}}) {
    const auto r = bceq_loss(h, 0.5);
    EXPECT_NEAR(r.loss, expected, 1e-15);
    EXPECT_NEAR(r.loss, 3.35e-4, 1e-6);
  }
}

TEST(Losses, BceqDecreasesTowardPlusMinusOne) {
  double previous = INFINITY;
  for (int i = 1; i <= 10; ++i) {
    const double t = 0.1 * i;
    const std::vector<double> h = {t, -t, t};
    const double loss = bceq_loss(h, 0.5).loss;
    EXPECT_LT(loss, previous) << "t = " << t;
    previous = loss;
  }
}

TEST(Losses, BceqIsSymmetricUnderSignFlip) {
  Rng rng(25);
  for (int t = 0; t < 50; ++t) {
    auto h = uniform_vector(16, -1, 1, rng);
    auto flipped = h;
    for (double& x : flipped) x = -x;
    const auto a = bceq_loss(h, 0.5), b = bceq_loss(flipped, 0.5);
    EXPECT_NEAR(a.loss, b.loss, 1e-12);
  }
}

TEST(Losses, ProxyPredictionGradients) {
  Rng rng(26);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.below(15), c = 2 + rng.below(6);
    auto proxies = ProxyBank::random(c, k, rng);
    const auto h = uniform_vector(k, -1, 1, rng);
    const auto weights = uniform_vector(c, -1, 1, rng);
    auto f_h = [&](const std::vector<double>& x) {
      const auto p = oracle::predictions(proxies.matrix(), x);
      double s = 0;
      for (std::size_t i = 0; i < c; ++i) s += weights[i] * p[i];
      return s;
    };
    std::vector<double> grad_h(k, 0.0);
    Matrix grad_p(c, k);
    backprop_proxy_predictions(proxies, h, weights, grad_h, &grad_p);
    expect_gradients_agree(grad_h, numeric_gradient(f_h, h));

    const std::vector<double> flat(proxies.matrix().flat().begin(), proxies.matrix().flat().end());
    auto f_p = [&](const std::vector<double>& x) {
      Matrix m(c, k);
      std::copy(x.begin(), x.end(), m.flat().begin());
      const auto p = oracle::predictions(m, h);
      double s = 0;
      for (std::size_t i = 0; i < c; ++i) s += weights[i] * p[i];
      return s;
    };
    const std::vector<double> analytic(grad_p.flat().begin(), grad_p.flat().end());
    expect_gradients_agree(analytic, numeric_gradient(f_p, flat));
  }
}

TEST(Losses, ProxyPredictionErrorsNameTheRow) {
  Matrix m(3, 4);
  for (double& v : m.flat()) v = 0.5;
  m(1, 0) = m(1, 1) = m(1, 2) = m(1, 3) = 0.0;
  const ProxyBank bank(m);
  try {
    proxy_predictions(bank, std::vector<double>{1, 1, 1, 1});
    FAIL() << "expected DegenerateInput";
  } catch (const DegenerateInput& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
  EXPECT_THROW(proxy_predictions(bank, std::vector<double>{1, 1}), ShapeError);
}

TEST(Losses, TotalLossAccounting) {
  Rng rng(27);
  LossWeights w;
  const std::size_t k = 8;
  auto proxies = ProxyBank::random(4, k, rng);
  std::vector<std::vector<double>> labels, teacher, student, preds;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> y(4, 0.0);
    y[rng.below(4)] = 1;
    labels.push_back(normalize_multilabel(y));
    teacher.push_back(uniform_vector(k, -1, 1, rng));
    student.push_back(uniform_vector(k, -1, 1, rng));
    preds.push_back(proxy_predictions(proxies, teacher.back()));
  }
  std::vector<LossSample> batch;
  for (int i = 0; i < 5; ++i) batch.push_back({labels[i], teacher[i], student[i], preds[i]});
  const auto b = total_loss(batch, w);
  EXPECT_NEAR(b.total, b.hp + w.lambda_sdh * b.sdh + w.lambda_bceq * b.bceq, 1e-12);
  double hp = 0;
  for (int i = 0; i < 5; ++i) hp += oracle::hp(labels[i], preds[i], w.temperature) / 5;
  EXPECT_NEAR(b.hp, hp, 1e-12);
  EXPECT_THROW(total_loss(std::span<const LossSample>{}, w), InvalidInput);
}

TEST(Losses, WeightValidation) {
  LossWeights w;
  w.lambda_sdh = -1;
  EXPECT_THROW(w.validate(), InvalidConfig);
  w = {};
  w.sigma = 0;
  EXPECT_THROW(w.validate(), InvalidConfig);
}
