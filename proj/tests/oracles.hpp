#ifndef FEMUR_TESTS_ORACLES_HPP_
#define FEMUR_TESTS_ORACLES_HPP_

// Brute-force reference implementations, written independently of the
// library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "femur/image.hpp"

namespace femur::oracle {

inline std::vector<std::vector<std::int64_t>> confusion(const std::vector<int>& pred,
                                                        const std::vector<int>& truth, int k) {
  std::vector<std::vector<std::int64_t>> cm(k, std::vector<std::int64_t>(k, 0));
  for (int t = 0; t < k; ++t) {
    for (int p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == t && pred[i] == p) ++cm[t][p];
      }
    }
  }
  return cm;
}

struct ClassScores {
  double accuracy, precision, recall, f1;
};

struct Metrics {
  std::vector<ClassScores> per_class;
  ClassScores macro;
  double overall_accuracy;
};

inline Metrics metrics(const std::vector<std::vector<std::int64_t>>& cm) {
  const int k = static_cast<int>(cm.size());
  double n = 0, trace = 0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) n += static_cast<double>(cm[i][j]);
    trace += static_cast<double>(cm[i][i]);
  }
  Metrics m{};
  m.macro = {0, 0, 0, 0};
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double v = static_cast<double>(cm[i][j]);
        if (i == c && j == c) tp += v;
        if (i != c && j == c) fp += v;
        if (i == c && j != c) fn += v;
      }
    }
    const double tn = n - tp - fp - fn;
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    m.per_class.push_back({(tp + tn) / n, p, r, f});
    m.macro.accuracy += (tp + tn) / n / k;
    m.macro.precision += p / k;
    m.macro.recall += r / k;
    m.macro.f1 += f / k;
  }
  m.overall_accuracy = trace / n;
  return m;
}

// Mann-Whitney: P(score of a positive > score of a negative), ties count 1/2.
inline double auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// 11-point interpolated AP of one ranked relevance list.
inline std::vector<double> interpolated_precision(const std::vector<bool>& relevant,
                                                  int total_relevant,
                                                  const std::vector<int>& k_values) {
  std::vector<double> out(11, 0.0);
  for (int level = 0; level <= 10; ++level) {
    for (int k : k_values) {
      const int cut = std::min<int>(k, static_cast<int>(relevant.size()));
      int hits = 0;
      for (int i = 0; i < cut; ++i) hits += relevant[i] ? 1 : 0;
      // recall >= level / 10, compared exactly in integers
      if (hits * 10 >= level * total_relevant) {
        out[level] = std::max(out[level], static_cast<double>(hits) / cut);
      }
    }
  }
  return out;
}

struct MapResult {
  double macro;
  double overall;
  std::map<int, double> per_class;
};

inline MapResult mean_average_precision(const std::vector<std::vector<int>>& ranked_labels,
                                        const std::vector<int>& truth,
                                        const std::map<int, int>& totals,
                                        const std::vector<int>& k_values) {
  std::map<int, std::vector<double>> ap_by_class;
  double overall = 0;
  for (std::size_t q = 0; q < ranked_labels.size(); ++q) {
    std::vector<bool> rel;
    for (int l : ranked_labels[q]) rel.push_back(l == truth[q]);
    const auto curve = interpolated_precision(rel, totals.at(truth[q]), k_values);
    double ap = 0;
    for (double v : curve) ap += v;
    ap /= 11.0;
    ap_by_class[truth[q]].push_back(ap);
    overall += ap;
  }
  MapResult r{0.0, overall / ranked_labels.size(), {}};
  for (const auto& [label, aps] : ap_by_class) {
    double s = 0;
    for (double a : aps) s += a;
    r.per_class[label] = s / aps.size();
    r.macro += r.per_class[label];
  }
  r.macro /= ap_by_class.size();
  return r;
}

// Integer-index crop of rows [r0, r0 + size) and cols [c0, c0 + size), zero
// outside the image.
inline Image slice(const Image& img, int r0, int c0, int size) {
  Image out(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const int r = r0 + i, c = c0 + j;
      out.at(i, j) = (r >= 0 && c >= 0 && r < img.height() && c < img.width()) ? img.at(r, c) : 0.0f;
    }
  }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace femur::oracle

#endif  // FEMUR_TESTS_ORACLES_HPP_
