#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dhd/codes.hpp"
#include "dhd/dataset.hpp"
#include "dhd/error.hpp"
#include "json.hpp"

namespace dhd {

/// True when two label sets share at least one class.
inline bool shares_label(const LabelSet& a, const LabelSet& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j])
      ++i;
    else
      ++j;
  }
  return false;
}

struct RankedItem {
  std::size_t id = 0;
  std::size_t distance = 0;

  bool operator==(const RankedItem&) const = default;
};

/// Immutable database of binary codes with their labels. Codes are also kept
/// in one contiguous word array for the scan.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;

  std::size_t code_length() const { return code_length_; }
  std::size_t size() const { return codes_.size(); }
  bool empty() const { return codes_.empty(); }
  const std::vector<BinaryCode>& codes() const { return codes_; }
  const std::vector<LabelSet>& labels() const { return labels_; }
  std::size_t num_classes() const { return num_classes_; }

  /// Hamming distance from `query` to every database code, in id order.
  std::vector<std::size_t> distances(const BinaryCode& query) const {
    check_query(query);
    std::vector<std::size_t> out(codes_.size());
    const auto q = query.words();
    const std::size_t w = q.size();
    if (w == 1) {
      const std::uint64_t q0 = q[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::size_t>(std::popcount(words_[i] ^ q0));
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t d = 0;
        const std::uint64_t* row = words_.data() + i * w;
        for (std::size_t k = 0; k < w; ++k) d += static_cast<std::size_t>(std::popcount(row[k] ^ q[k]));
        out[i] = d;
      }
    }
    return out;
  }

  void check_query(const BinaryCode& query) const {
    if (codes_.empty()) throw InvalidInput("retrieval index is empty");
    if (query.size() != code_length_)
      throw InvalidInput("query code length " + std::to_string(query.size()) + " does not match index K " +
                         std::to_string(code_length_));
  }

 private:
  friend RetrievalIndex build_index(std::size_t, std::vector<BinaryCode>, std::vector<LabelSet>, std::size_t);

  std::size_t code_length_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<BinaryCode> codes_;
  std::vector<LabelSet> labels_;
  std::vector<std::uint64_t> words_;
};

inline RetrievalIndex build_index(std::size_t code_length, std::vector<BinaryCode> codes, std::vector<LabelSet> labels,
                                  std::size_t num_classes = 0) {
  if (code_length == 0) throw InvalidInput("build_index: K must be >= 1");
  if (codes.size() != labels.size()) throw InvalidInput("build_index: codes and labels differ in length");
  RetrievalIndex index;
  index.code_length_ = code_length;
  const std::size_t w = BinaryCode::word_count(code_length);
  index.words_.reserve(codes.size() * w);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].size() != code_length)
      throw InvalidInput("build_index: code " + std::to_string(i) + " has length " + std::to_string(codes[i].size()));
    for (auto word : codes[i].words()) index.words_.push_back(word);
    for (auto c : labels[i]) num_classes = std::max<std::size_t>(num_classes, c + 1);
  }
  index.num_classes_ = num_classes;
  index.codes_ = std::move(codes);
  index.labels_ = std::move(labels);
  return index;
}

/// Top-M by ascending Hamming distance, ties by ascending id. Distances are
/// bucketed (0..K), which yields the id tie order without a comparison sort.
inline std::vector<RankedItem> rank(const RetrievalIndex& index, const BinaryCode& query, std::size_t m) {
  const auto dist = index.distances(query);
  const std::size_t k = index.code_length();
  std::vector<std::size_t> start(k + 2, 0);
  for (std::size_t d : dist) ++start[d + 1];
  for (std::size_t b = 1; b < start.size(); ++b) start[b] += start[b - 1];
  std::vector<std::size_t> order(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) order[start[dist[i]]++] = i;
  const std::size_t take = std::min(m, order.size());
  std::vector<RankedItem> out(take);
  for (std::size_t r = 0; r < take; ++r) out[r] = {order[r], dist[order[r]]};
  return out;
}

/// AP over a ranked relevance list, normalized by the number of relevant
/// items in the list; 0 when none is relevant.
inline double average_precision(std::span<const std::uint8_t> relevant) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

struct EvalOptions {
  std::size_t top_m = 100;                  // M for mAP@M
  std::vector<std::size_t> precision_ranks = {1, 10, 50, 100, 200, 500, 1000};
  std::size_t threads = 0;                  // 0: hardware concurrency
};

struct PrPoint {
  std::size_t radius = 0;
  double recall = 0.0;
  double precision = 0.0;
  std::size_t queries_with_results = 0;
};

struct RankPrecision {
  std::size_t rank = 0;
  double precision = 0.0;
};

struct EvalReport {
  std::size_t top_m = 0;
  std::size_t num_queries = 0;
  double map_at_m = 0.0;
  std::vector<PrPoint> pr_curve;  // one point per Hamming radius 0..K
  std::vector<RankPrecision> p_at_top;
};

namespace detail {

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) body(i);
    });
  for (auto& th : pool) th.join();
}

struct QueryStats {
  double ap = 0.0;
  std::vector<std::size_t> retrieved;  // cumulative count within radius r
  std::vector<std::size_t> relevant;   // cumulative relevant within radius r
  std::size_t total_relevant = 0;
  std::vector<std::size_t> top_hits;   // relevant among top precision_ranks[i]
};

}  // namespace detail

/// mAP@M, the Hamming-radius PR curve, and precision at the configured ranks.
/// Relevance: query and item share at least one class. PR points average,
/// per radius, recall over queries with at least one relevant database item
/// and precision over those of them that retrieve something at that radius
/// (0 if none does). Queries are scored in parallel and reduced in order.
inline EvalReport evaluate(const RetrievalIndex& index, std::span<const BinaryCode> queries,
                           std::span<const LabelSet> query_labels, const EvalOptions& options = {}) {
  if (queries.empty()) throw InvalidInput("evaluate: empty query set");
  if (queries.size() != query_labels.size()) throw InvalidInput("evaluate: query codes and labels differ in length");
  if (options.top_m == 0) throw InvalidInput("evaluate: M must be >= 1");
  if (index.empty()) throw InvalidInput("evaluate: retrieval index is empty");
  const std::size_t k = index.code_length();
  const std::size_t n = index.size();

  std::vector<detail::QueryStats> per_query(queries.size());
  detail::parallel_for(queries.size(), options.threads, [&](std::size_t q) {
    auto& st = per_query[q];
    const auto ranked = rank(index, queries[q], n);
    std::vector<std::uint8_t> rel(ranked.size());
    st.retrieved.assign(k + 1, 0);
    st.relevant.assign(k + 1, 0);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      rel[r] = shares_label(query_labels[q], index.labels()[ranked[r].id]) ? 1 : 0;
      ++st.retrieved[ranked[r].distance];
      st.relevant[ranked[r].distance] += rel[r];
      st.total_relevant += rel[r];
    }
    for (std::size_t r = 1; r <= k; ++r) {
      st.retrieved[r] += st.retrieved[r - 1];
      st.relevant[r] += st.relevant[r - 1];
    }
    st.ap = average_precision(std::span(rel).first(std::min(options.top_m, rel.size())));
    std::size_t hits = 0, pos = 0;
    for (std::size_t m : options.precision_ranks) {
      const std::size_t cut = std::min(m, rel.size());
      while (pos < cut) hits += rel[pos++];
      st.top_hits.push_back(hits);
    }
  });

  EvalReport report;
  report.top_m = options.top_m;
  report.num_queries = queries.size();
  for (const auto& st : per_query) report.map_at_m += st.ap;
  report.map_at_m /= static_cast<double>(queries.size());

  for (std::size_t r = 0; r <= k; ++r) {
    PrPoint p;
    p.radius = r;
    std::size_t with_relevant = 0;
    for (const auto& st : per_query) {
      if (st.total_relevant == 0) continue;
      ++with_relevant;
      p.recall += static_cast<double>(st.relevant[r]) / static_cast<double>(st.total_relevant);
      if (st.retrieved[r] > 0) {
        ++p.queries_with_results;
        p.precision += static_cast<double>(st.relevant[r]) / static_cast<double>(st.retrieved[r]);
      }
    }
    if (with_relevant > 0) p.recall /= static_cast<double>(with_relevant);
    if (p.queries_with_results > 0) p.precision /= static_cast<double>(p.queries_with_results);
    report.pr_curve.push_back(p);
  }

  for (std::size_t i = 0; i < options.precision_ranks.size(); ++i) {
    const std::size_t m = options.precision_ranks[i];
    const double denom = static_cast<double>(std::min(m, n));
    double sum = 0.0;
    for (const auto& st : per_query) sum += static_cast<double>(st.top_hits[i]) / denom;
    report.p_at_top.push_back({m, sum / static_cast<double>(queries.size())});
  }
  return report;
}

// Persistence: codes in the binary code format, labels as a text sidecar.

inline void save_index(const RetrievalIndex& index, const std::filesystem::path& codes_path,
                       const std::filesystem::path& labels_path) {
  save_codes(codes_path, index.code_length(), index.codes());
  detail::write_file(labels_path, format_labels(index.labels(), index.num_classes()));
}

inline RetrievalIndex load_index(const std::filesystem::path& codes_path, const std::filesystem::path& labels_path) {
  auto file = load_codes(codes_path);
  auto [labels, classes] = parse_labels(detail::read_file(labels_path));
  return build_index(file.code_length, std::move(file.codes), std::move(labels), classes);
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["top_m"] = r.top_m;
  j["num_queries"] = r.num_queries;
  j["map_at_m"] = r.map_at_m;
  for (const auto& p : r.pr_curve)
    j["pr_curve"].push_back(
        {{"radius", p.radius}, {"recall", p.recall}, {"precision", p.precision},
         {"queries_with_results", p.queries_with_results}});
  for (const auto& p : r.p_at_top) j["p_at_top"].push_back({{"rank", p.rank}, {"precision", p.precision}});
  return j;
}

inline std::string pr_curve_csv(const EvalReport& r) {
  std::string out = "radius,recall,precision,queries_with_results\n";
  for (const auto& p : r.pr_curve) {
    out += std::to_string(p.radius) + ",";
    detail::append_double(out, p.recall);
    out += ",";
    detail::append_double(out, p.precision);
    out += "," + std::to_string(p.queries_with_results) + "\n";
  }
  return out;
}

inline std::string p_at_top_csv(const EvalReport& r) {
  std::string out = "rank,precision\n";
  for (const auto& p : r.p_at_top) {
    out += std::to_string(p.rank) + ",";
    detail::append_double(out, p.precision);
    out += "\n";
  }
  return out;
}

/// Writes <prefix>.json, <prefix>_pr.csv and <prefix>_ptop.csv into dir.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir, const std::string& prefix = "eval") {
  detail::write_file(dir / (prefix + ".json"), to_json(r).dump(2) + "\n");
  detail::write_file(dir / (prefix + "_pr.csv"), pr_curve_csv(r));
  detail::write_file(dir / (prefix + "_ptop.csv"), p_at_top_csv(r));
}

}  // namespace dhd
