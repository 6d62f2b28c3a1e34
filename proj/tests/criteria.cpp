#include "criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "femur/classification.hpp"
#include "femur/dataset.hpp"
#include "femur/evaluation.hpp"
#include "femur/localization.hpp"
#include "femur/retrieval.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace femur::criteria {
namespace {

using femur::testing::random_image;
using femur::testing::relative_error;
using femur::testing::uniform_int;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Tracks the worst relative error seen and the first failure.
class Tally {
 public:
  void close(const char* what, double got, double want, double tol) {
    const double e = relative_error(got, want);
    worst_ = std::max(worst_, e);
    if (e > tol) fail(what, got, want);
  }
  void fail(const char* what, double got, double want) {
    if (!first_.empty()) return;
    std::ostringstream s;
    s.precision(17);
    s << what << ": got " << got << ", want " << want;
    first_ = s.str();
  }
  bool ok() const { return first_.empty(); }
  double worst() const { return worst_; }
  const std::string& first_failure() const { return first_; }

 private:
  double worst_ = 0.0;
  std::string first_;
};

Outcome finish(const Tally& t, const Stopwatch& w, double time_limit, std::string detail) {
  Outcome o;
  o.seconds = w.seconds();
  o.pass = t.ok() && o.seconds < time_limit;
  std::ostringstream s;
  s << detail << "; worst rel err " << t.worst() << "; " << o.seconds << " s";
  if (!t.ok()) s << "; " << t.first_failure();
  if (o.seconds >= time_limit) s << "; over the " << time_limit << " s budget";
  o.detail = s.str();
  return o;
}

// Labels in [0, k) with every class present at least once.
std::vector<int> covering_labels(Rng& rng, int n, int k) {
  std::vector<int> v = femur::testing::random_labels(rng, n, k);
  for (int c = 0; c < k; ++c) v[c] = c;
  rng.shuffle(v);
  return v;
}

void check_confusion_metrics(Rng& rng, Tally& t) {
  const int k = uniform_int(rng, 2, 4);
  const int n = uniform_int(rng, k, 60);
  const auto truth = femur::testing::random_labels(rng, n, k);
  const auto pred = femur::testing::random_labels(rng, n, k);
  const auto cm = eval::confusion(pred, truth, k);
  const auto want = oracle::confusion(pred, truth, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      t.close("confusion count", static_cast<double>(cm.counts[i][j]),
              static_cast<double>(want[i][j]), 1e-12);
    }
  }
  const auto m = eval::metrics_from_confusion(cm);
  const auto o = oracle::metrics(want);
  for (int c = 0; c < k; ++c) {
    t.close("class accuracy", m.per_class[c].accuracy, o.per_class[c].accuracy, 1e-10);
    t.close("precision", m.per_class[c].precision, o.per_class[c].precision, 1e-10);
    t.close("recall", m.per_class[c].recall, o.per_class[c].recall, 1e-10);
    t.close("f1", m.per_class[c].f1, o.per_class[c].f1, 1e-10);
  }
  t.close("macro precision", m.average.precision, o.macro.precision, 1e-10);
  t.close("macro recall", m.average.recall, o.macro.recall, 1e-10);
  t.close("macro f1", m.average.f1, o.macro.f1, 1e-10);
  t.close("macro accuracy", m.average.accuracy, o.macro.accuracy, 1e-10);
  t.close("overall accuracy", m.overall_accuracy, o.overall_accuracy, 1e-10);
}

void check_auc(Rng& rng, Tally& t) {
  // Binary, with heavy score ties.
  const int n = uniform_int(rng, 2, 50);
  const auto truth = covering_labels(rng, n, 2);
  std::vector<double> scores(n);
  const int levels = uniform_int(rng, 1, 8);
  for (auto& s : scores) s = uniform_int(rng, 0, levels) / static_cast<double>(levels);
  t.close("binary auc", eval::roc_auc(scores, truth).auc, oracle::auc(scores, truth), 1e-10);

  // One-vs-rest macro AUC.
  const int k = uniform_int(rng, 2, 4);
  const int m = uniform_int(rng, k, 50);
  const auto labels = covering_labels(rng, m, k);
  std::vector<std::vector<double>> probs(m, std::vector<double>(k));
  for (auto& row : probs) {
    double sum = 0;
    for (auto& p : row) sum += (p = uniform_int(rng, 1, 6));
    for (auto& p : row) p /= sum;
  }
  const auto ovr = eval::roc_auc_ovr(probs, labels, k);
  double macro = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> col(m);
    std::vector<int> pos(m);
    for (int i = 0; i < m; ++i) {
      col[i] = probs[i][c];
      pos[i] = labels[i] == c;
    }
    const double want = oracle::auc(col, pos);
    t.close("ovr auc", ovr.per_class[c].auc, want, 1e-10);
    macro += want / k;
  }
  t.close("macro auc", ovr.macro, macro, 1e-10);
}

void check_map(Rng& rng, Tally& t) {
  const int k = uniform_int(rng, 2, 3);
  const int nq = uniform_int(rng, 1, 12);
  std::vector<RetrievalResult> results(nq);
  std::vector<std::vector<int>> ranked(nq);
  std::vector<int> truth(nq);
  std::map<int, int> totals;
  for (int q = 0; q < nq; ++q) {
    truth[q] = uniform_int(rng, 0, k - 1);
    const int len = uniform_int(rng, 1, 30);
    int hits = 0;
    for (int j = 0; j < len; ++j) {
      const int label = uniform_int(rng, 0, k - 1);
      ranked[q].push_back(label);
      results[q].items.push_back({j, "item" + std::to_string(j), static_cast<double>(j), label});
      hits += label == truth[q];
    }
    // A pool can hold more relevant items than were retrieved.
    totals[truth[q]] = std::max({totals[truth[q]], hits, 1});
  }
  for (auto& [label, total] : totals) total += uniform_int(rng, 0, 5);
  std::vector<int> k_values;
  const int nk = uniform_int(rng, 1, 6);
  for (int i = 0; i < nk; ++i) k_values.push_back(uniform_int(rng, 1, 35));

  const auto curve = eleven_point_pr(results, truth, totals, k_values);
  const auto want = oracle::mean_average_precision(ranked, truth, totals, k_values);
  t.close("macro mAP", curve.map, want.macro, 1e-10);
  t.close("overall mAP", curve.overall_map, want.overall, 1e-10);
  for (std::size_t i = 0; i < curve.classes.size(); ++i) {
    t.close("class mAP", curve.per_class_map[i], want.per_class.at(curve.classes[i]), 1e-10);
  }
  if (curve.classes.size() != want.per_class.size()) {
    t.fail("class count", static_cast<double>(curve.classes.size()),
           static_cast<double>(want.per_class.size()));
  }
}

}  // namespace

Outcome metric_oracles(int instances, std::uint64_t seed) {
  Stopwatch w;
  Tally t;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    check_confusion_metrics(rng, t);
    check_auc(rng, t);
    check_map(rng, t);
  }
  return finish(t, w, 10.0, std::to_string(instances) + " instances");
}

Outcome warp_exactness(int instances, std::uint64_t seed) {
  Stopwatch w;
  Tally t;
  Rng rng(seed);
  auto compare = [&](const char* what, const Image& got, const Image& want) {
    if (got.height() != want.height() || got.width() != want.width()) {
      t.fail(what, got.height(), want.height());
      return;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got.pixels()[i] != want.pixels()[i]) {
        t.fail(what, got.pixels()[i], want.pixels()[i]);
        return;
      }
    }
  };
  for (int n = 0; n < instances; ++n) {
    const int h = uniform_int(rng, 4, 48), wd = uniform_int(rng, 4, 48);
    const Image img = random_image(rng, h, wd);
    const int m = std::min(h, wd);

    // Integer box, possibly overhanging the border.
    const int side = uniform_int(rng, 1, m);
    const int r0 = uniform_int(rng, -side, h - 1), c0 = uniform_int(rng, -side, wd - 1);
    const ROIParams p{(r0 + side / 2.0) / h, (c0 + side / 2.0) / wd,
                      static_cast<double>(side) / m};
    compare("integer box", warp(img, p, side), oracle::slice(img, r0, c0, side));

    // Identity on a square image.
    const Image sq = random_image(rng, m, m);
    compare("identity", warp(sq, {0.5, 0.5, 1.0}, m), sq);

    // Entirely outside.
    const int far = uniform_int(rng, 1, 5);
    const ROIParams out{(h + far + side / 2.0) / h, (c0 + side / 2.0) / wd,
                        static_cast<double>(side) / m};
    compare("outside", warp(img, out, side), Image(side, side, 0.0f));
  }
  return finish(t, w, 5.0, std::to_string(instances) + " boxes");
}

Outcome loss_gradients(int instances, std::uint64_t seed, double step) {
  Stopwatch w;
  Tally t;
  Rng rng(seed);
  for (int n = 0; n < instances; ++n) {
    const int k = uniform_int(rng, 2, 3);
    std::vector<float> z(k);
    for (auto& v : z) v = static_cast<float>(2.0 * rng.normal());
    std::vector<double> y(k, 0.0);
    y[uniform_int(rng, 0, k - 1)] = 1.0;
    const auto analytic = class_loss_gradient(y, z);
    std::vector<double> numeric(k);
    for (int j = 0; j < k; ++j) {
      std::vector<double> up(z.begin(), z.end()), down(z.begin(), z.end());
      up[j] += step;
      down[j] -= step;
      numeric[j] = (class_loss(y, oracle::softmax(up)) - class_loss(y, oracle::softmax(down))) /
                   (2 * step);
    }
    for (int j = 0; j < k; ++j) t.close("class_loss gradient", analytic[j], numeric[j], 1e-4);

    const ROIParams p{rng.uniform(), rng.uniform(), rng.uniform(0.1, 2.0)};
    const ROIParams q{rng.uniform(), rng.uniform(), rng.uniform(0.1, 2.0)};
    const auto g = loc_loss_gradient(p, q);
    const auto base = q.as_array();
    for (int j = 0; j < 3; ++j) {
      auto up = base, down = base;
      up[j] += step;
      down[j] -= step;
      const double num = (loc_loss(p, {up[0], up[1], up[2]}) -
                          loc_loss(p, {down[0], down[1], down[2]})) / (2 * step);
      t.close("loc_loss gradient", g[j], num, 1e-4);
    }
  }
  return finish(t, w, 1e9, std::to_string(instances) + " instances per loss");
}

Outcome split_safety(int pairs, int patients, std::uint64_t seed) {
  Stopwatch w;
  Tally t;
  Rng rng(seed);
  std::vector<StudyRecord> records;
  for (int p = 0; p < patients; ++p) {
    const int studies = uniform_int(rng, 1, 3);
    for (int s = 0; s < studies; ++s) {
      StudyRecord r;
      r.patient_id = "P" + std::to_string(p);
      r.image_ref = r.patient_id + "_" + std::to_string(s) + ".png";
      r.side = s % 2 ? Side::kRight : Side::kLeft;
      records.push_back(r);
    }
  }
  rng.shuffle(records);
  double worst_dev = 0.0;
  for (int n = 0; n < pairs; ++n) {
    std::array<double, 3> ratios{rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0),
                                 rng.uniform(0.05, 1.0)};
    const double sum = ratios[0] + ratios[1] + ratios[2];
    for (auto& r : ratios) r /= sum;
    ratios[2] = 1.0 - ratios[0] - ratios[1];
    const std::uint64_t split_seed = rng.next();
    const auto split = split_patientwise(records, ratios, split_seed);
    const auto assigned = apply_split(records, split);
    std::map<std::string, std::set<Split>> seen;
    for (const auto& r : assigned) seen[r.patient_id].insert(*r.split);
    if (static_cast<int>(seen.size()) != patients) {
      t.fail("patients covered", static_cast<double>(seen.size()), patients);
    }
    std::array<int, 3> counts{};
    for (const auto& [id, splits] : seen) {
      if (splits.size() != 1) t.fail("splits per patient", static_cast<double>(splits.size()), 1);
      ++counts[static_cast<int>(*splits.begin())];
    }
    for (int s = 0; s < 3; ++s) {
      const double dev = std::abs(counts[s] - ratios[s] * patients);
      worst_dev = std::max(worst_dev, dev);
      if (dev > 1.0) t.fail("split count deviation", counts[s], ratios[s] * patients);
    }
  }
  std::ostringstream d;
  d << pairs << " (seed, ratio) pairs on " << patients << " patients; worst count deviation "
    << worst_dev;
  return finish(t, w, 1e9, d.str());
}

namespace {

bool json_close_at(const nlohmann::json& a, const nlohmann::json& b, double tol,
                   const std::string& path, std::string* where) {
  auto miss = [&] {
    if (where != nullptr) *where = path.empty() ? "/" : path;
    return false;
  };
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (x == y) return true;
    const double scale = std::max({1.0, std::abs(x), std::abs(y)});
    return std::abs(x - y) <= tol * scale ? true : miss();
  }
  if (a.type() != b.type()) return miss();
  if (a.is_object()) {
    if (a.size() != b.size()) return miss();
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return miss();
      if (!json_close_at(it.value(), b.at(it.key()), tol, path + "/" + it.key(), where)) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return miss();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!json_close_at(a[i], b[i], tol, path + "/" + std::to_string(i), where)) return false;
    }
    return true;
  }
  return a == b ? true : miss();
}

}  // namespace

bool json_close(const nlohmann::json& a, const nlohmann::json& b, double tol, std::string* where) {
  return json_close_at(a, b, tol, "", where);
}

}  // namespace femur::criteria
