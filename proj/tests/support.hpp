#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond plain data types: every quantity is recomputed
// with straightforward loops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dhd/codes.hpp"
#include "dhd/losses.hpp"
#include "dhd/model.hpp"
#include "dhd/random.hpp"
#include "dhd/retrieval.hpp"

namespace oracle {

using Signs = std::vector<int>;

inline Signs random_signs(std::size_t k, dhd::Rng& rng) {
  Signs s(k);
  for (int& v : s) v = rng.bernoulli(0.5) ? 1 : -1;
  return s;
}

inline dhd::BinaryCode to_code(const Signs& s) {
  std::vector<double> v(s.begin(), s.end());
  return dhd::BinaryCode::from_signs(v);
}

inline std::size_t hamming(const Signs& a, const Signs& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline double hp(const std::vector<double>& y, const std::vector<double>& pred, double tau) {
  double z = 0;
  for (double p : pred) z += std::exp(p / tau);
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) loss -= y[i] * (pred[i] / tau - std::log(z));
  return loss;
}

// Unclamped except at the same 1e-7 guard the library uses, which is far
// from any |h| <= 1 the tests draw apart from h = +-1 exactly.
inline double bceq(const std::vector<double>& h, double sigma) {
  double loss = 0;
  for (double x : h) {
    const double gp = std::clamp(std::exp(-(x - 1) * (x - 1) / (2 * sigma * sigma)), 1e-7, 1 - 1e-7);
    const double gn = std::clamp(std::exp(-(x + 1) * (x + 1) / (2 * sigma * sigma)), 1e-7, 1 - 1e-7);
    const double u = x >= 0 ? 1.0 : 0.0;
    loss += -(u * std::log(gp) + (1 - u) * std::log(1 - gp));
    loss += -((1 - u) * std::log(gn) + u * std::log(1 - gn));
  }
  return loss / static_cast<double>(h.size());
}

inline std::vector<double> predictions(const dhd::Matrix& proxies, const std::vector<double>& h) {
  std::vector<double> out(proxies.rows());
  for (std::size_t c = 0; c < proxies.rows(); ++c) {
    auto row = proxies.row(c);
    out[c] = cosine(std::vector<double>(row.begin(), row.end()), h);
  }
  return out;
}

struct Forward {
  std::vector<double> code;
  double min_abs_preactivation = INFINITY;
};

inline Forward forward(const dhd::HashModel& model, const std::vector<double>& x) {
  Forward f;
  std::vector<double> a = x;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<double> next(layers[l].weight.rows());
    for (std::size_t o = 0; o < next.size(); ++o) {
      double z = layers[l].bias[o];
      for (std::size_t i = 0; i < a.size(); ++i) z += layers[l].weight(o, i) * a[i];
      if (l + 1 < layers.size()) f.min_abs_preactivation = std::min(f.min_abs_preactivation, std::abs(z));
      next[o] = l + 1 == layers.size() ? std::tanh(z) : std::max(z, 0.0);
    }
    a = std::move(next);
  }
  f.code = std::move(a);
  return f;
}

/// Batch objective with teacher codes for SdH frozen at `frozen_teacher`.
inline double objective(const dhd::HashModel& model, const dhd::Matrix& proxies,
                        const std::vector<std::vector<double>>& teacher_x,
                        const std::vector<std::vector<double>>& student_x,
                        const std::vector<std::vector<double>>& labels, const dhd::LossWeights& w,
                        const std::vector<std::vector<double>>& frozen_teacher) {
  const double n = static_cast<double>(teacher_x.size());
  double total = 0;
  for (std::size_t i = 0; i < teacher_x.size(); ++i) {
    const auto ht = forward(model, teacher_x[i]).code;
    total += hp(labels[i], predictions(proxies, ht), w.temperature) / n;
    total += w.lambda_bceq * bceq(ht, w.sigma) / n;
    if (!student_x.empty()) {
      const auto hs = forward(model, student_x[i]).code;
      total += w.lambda_sdh * (1 - cosine(frozen_teacher[i], hs)) / n;
    }
  }
  double proxy_term = 0;
  for (std::size_t c = 0; c < proxies.rows(); ++c) {
    auto row = proxies.row(c);
    proxy_term += bceq(std::vector<double>(row.begin(), row.end()), w.sigma);
  }
  return total + w.lambda_bceq * proxy_term / static_cast<double>(proxies.rows());
}

struct BruteReport {
  double map = 0;
  std::vector<double> recall, precision;
  std::vector<double> p_at_top;
};

inline bool shares(const dhd::LabelSet& a, const dhd::LabelSet& b) {
  for (auto x : a)
    for (auto y : b)
      if (x == y) return true;
  return false;
}

/// Straight from the definitions: full sort by (distance, id), AP over the
/// top M normalized by hits, Hamming-ball PR per radius, precision at ranks.
inline BruteReport evaluate(const std::vector<Signs>& db, const std::vector<dhd::LabelSet>& db_labels,
                            const std::vector<Signs>& queries, const std::vector<dhd::LabelSet>& q_labels,
                            std::size_t m, const std::vector<std::size_t>& ranks) {
  const std::size_t k = db.front().size();
  BruteReport r;
  r.recall.assign(k + 1, 0);
  r.precision.assign(k + 1, 0);
  r.p_at_top.assign(ranks.size(), 0);
  std::vector<std::size_t> with_rel_count(k + 1, 0), with_result_count(k + 1, 0);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    for (std::size_t i = 0; i < db.size(); ++i) order.push_back({hamming(queries[q], db[i]), i});
    std::sort(order.begin(), order.end());
    double sum = 0;
    std::size_t hits = 0;
    for (std::size_t pos = 0; pos < std::min(m, order.size()); ++pos)
      if (shares(q_labels[q], db_labels[order[pos].second])) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
      }
    r.map += hits ? sum / static_cast<double>(hits) : 0.0;

    std::size_t total_rel = 0;
    for (std::size_t i = 0; i < db.size(); ++i) total_rel += shares(q_labels[q], db_labels[i]);
    for (std::size_t rad = 0; rad <= k; ++rad) {
      if (total_rel == 0) continue;
      ++with_rel_count[rad];
      std::size_t got = 0, rel = 0;
      for (std::size_t i = 0; i < db.size(); ++i)
        if (hamming(queries[q], db[i]) <= rad) {
          ++got;
          rel += shares(q_labels[q], db_labels[i]);
        }
      r.recall[rad] += static_cast<double>(rel) / static_cast<double>(total_rel);
      if (got > 0) {
        ++with_result_count[rad];
        r.precision[rad] += static_cast<double>(rel) / static_cast<double>(got);
      }
    }
    for (std::size_t t = 0; t < ranks.size(); ++t) {
      const std::size_t cut = std::min(ranks[t], db.size());
      std::size_t h = 0;
      for (std::size_t pos = 0; pos < cut; ++pos) h += shares(q_labels[q], db_labels[order[pos].second]);
      r.p_at_top[t] += static_cast<double>(h) / static_cast<double>(cut);
    }
  }
  r.map /= static_cast<double>(queries.size());
  for (std::size_t rad = 0; rad <= k; ++rad) {
    if (with_rel_count[rad]) r.recall[rad] /= static_cast<double>(with_rel_count[rad]);
    if (with_result_count[rad]) r.precision[rad] /= static_cast<double>(with_result_count[rad]);
  }
  for (double& p : r.p_at_top) p /= static_cast<double>(queries.size());
  return r;
}

/// Random labels over `classes` with 1 to `max_labels` classes per item.
inline std::vector<dhd::LabelSet> random_labels(std::size_t n, std::size_t classes, std::size_t max_labels,
                                                dhd::Rng& rng) {
  std::vector<dhd::LabelSet> out(n);
  for (auto& l : out) {
    const std::size_t count = 1 + rng.below(max_labels);
    for (std::size_t j = 0; j < count; ++j) l.push_back(static_cast<std::uint32_t>(rng.below(classes)));
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return out;
}

/// Agreement of an analytic and a numerical derivative. The floor keeps
/// components that are ~0 from turning roundoff into a large relative error.
inline bool gradients_agree(double analytic, double numeric, double rel_tol = 1e-4, double floor = 1e-4) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) <= rel_tol * scale;
}

/// A scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    dhd::Rng rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("dhd-" + tag + "-" + std::to_string(rng.next() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
