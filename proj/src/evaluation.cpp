#include "femur/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace femur::eval {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truth,
                          int num_classes, std::vector<std::string> class_names) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("confusion: predictions and truth differ in length");
  }
  if (num_classes < 2) throw std::invalid_argument("confusion: need at least 2 classes");
  if (class_names.empty()) {
    for (int k = 0; k < num_classes; ++k) class_names.push_back("class_" + std::to_string(k));
  }
  if (static_cast<int>(class_names.size()) != num_classes) {
    throw std::invalid_argument("confusion: class name count mismatch");
  }
  ConfusionMatrix cm{std::vector<std::vector<std::int64_t>>(
                         num_classes, std::vector<std::int64_t>(num_classes, 0)),
                     std::move(class_names)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw std::invalid_argument("confusion: label out of range");
    }
    ++cm.counts[t][p];
  }
  return cm;
}

namespace {

double safe_ratio(double num, double den, bool& flag) {
  if (den == 0.0) {
    flag = true;
    return 0.0;
  }
  return num / den;
}

}  // namespace

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const int k = cm.classes();
  const std::int64_t total = cm.total();
  if (k == 0 || total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  MetricsReport rep;
  rep.class_names = cm.class_names;
  std::int64_t trace = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.counts[c][c], fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.counts[o][c];
      fn += cm.counts[c][o];
    }
    const std::int64_t tn = total - tp - fp - fn;
    trace += tp;
    ClassMetrics m;
    m.support = tp + fn;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
    m.precision = safe_ratio(tp, tp + fp, rep.zero_division);
    m.recall = safe_ratio(tp, tp + fn, rep.zero_division);
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall, rep.zero_division);
    rep.per_class.push_back(m);
  }
  for (const auto& m : rep.per_class) {
    rep.average.accuracy += m.accuracy / k;
    rep.average.precision += m.precision / k;
    rep.average.recall += m.recall / k;
    rep.average.f1 += m.f1 / k;
  }
  rep.average.support = total;
  rep.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return rep;
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size()) throw std::invalid_argument("roc: length mismatch");
  std::int64_t pos = 0, neg = 0;
  for (int t : truth) {
    if (t != 0 && t != 1) throw std::invalid_argument("roc: truth must be binary");
    (t == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocResult out;
  out.curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    // Consume every sample tied at this threshold.
    while (i < order.size() && scores[order[i]] == thr) {
      (truth[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    out.curve.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, thr});
  }
  for (std::size_t i = 1; i < out.curve.size(); ++i) {
    const auto& a = out.curve[i - 1];
    const auto& b = out.curve[i];
    out.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return out;
}

MulticlassAuc roc_auc_ovr(const std::vector<std::vector<double>>& probabilities,
                          const std::vector<int>& truth, int num_classes) {
  if (probabilities.size() != truth.size()) throw std::invalid_argument("roc: length mismatch");
  MulticlassAuc out;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> scores;
    std::vector<int> binary;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (static_cast<int>(probabilities[i].size()) != num_classes) {
        throw std::invalid_argument("roc: probability vector width mismatch");
      }
      scores.push_back(probabilities[i][c]);
      binary.push_back(truth[i] == c ? 1 : 0);
    }
    out.per_class.push_back(roc_auc(scores, binary));
  }
  if (num_classes == 2) {
    out.macro = out.per_class[1].auc;
  } else {
    for (const auto& r : out.per_class) out.macro += r.auc / num_classes;
  }
  return out;
}

void attach_auc(MetricsReport& report, const MulticlassAuc& auc) {
  std::vector<double> per;
  for (const auto& r : auc.per_class) per.push_back(r.auc);
  report.auc_per_class = per;
  report.auc = auc.macro;
}

OperatingPoints operating_points(const std::vector<int>& labels, const std::vector<int>& truth,
                                 int num_classes) {
  if (labels.size() != truth.size()) {
    throw std::invalid_argument("expert reading does not cover the ground-truth image set");
  }
  auto point_for = [&](int positive) {
    std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == positive, p = labels[i] == positive;
      if (t && p) ++tp;
      else if (t) ++fn;
      else if (p) ++fp;
      else ++tn;
    }
    bool unused = false;
    return SensSpec{safe_ratio(tp, tp + fn, unused), safe_ratio(tn, tn + fp, unused)};
  };
  OperatingPoints pts;
  if (num_classes == 2) {
    pts.push_back(point_for(1));
  } else {
    for (int c = 0; c < num_classes; ++c) pts.push_back(point_for(c));
  }
  return pts;
}

namespace {

OperatingPoints mean_points(const std::vector<const OperatingPoints*>& sets) {
  OperatingPoints out(sets.front()->size());
  for (const auto* s : sets) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].sensitivity += (*s)[i].sensitivity / sets.size();
      out[i].specificity += (*s)[i].specificity / sets.size();
    }
  }
  return out;
}

}  // namespace

ExpertPoints expert_points(const std::vector<ExpertReading>& readings,
                           const std::vector<int>& truth, int num_classes) {
  if (readings.empty()) throw std::invalid_argument("expert points: no readings");
  ExpertPoints out;
  std::map<std::string, std::map<int, std::size_t>> by_reader;
  std::vector<std::string> reader_order;
  for (const auto& r : readings) {
    if (r.reading_index != 1 && r.reading_index != 2) {
      throw std::invalid_argument("reading_index must be 1 or 2");
    }
    if (!by_reader.contains(r.reader_id)) reader_order.push_back(r.reader_id);
    if (by_reader[r.reader_id].contains(r.reading_index)) {
      throw std::invalid_argument("duplicate reading for reader " + r.reader_id);
    }
    by_reader[r.reader_id][r.reading_index] = out.readings.size();
    out.readings.push_back({r.reader_id, r.reading_index,
                            operating_points(r.labels, truth, num_classes)});
  }
  std::vector<const OperatingPoints*> reader_means;
  for (const auto& id : reader_order) {
    const auto& idx = by_reader[id];
    if (idx.size() != 2) throw std::invalid_argument("missing reading for reader " + id);
    out.readers.push_back({id, mean_points({&out.readings[idx.at(1)].points,
                                            &out.readings[idx.at(2)].points})});
  }
  for (const auto& r : out.readers) reader_means.push_back(&r.points);
  out.average = mean_points(reader_means);
  return out;
}

json to_json(const ConfusionMatrix& cm) {
  return {{"class_names", cm.class_names}, {"counts", cm.counts}};
}

namespace {

json class_metrics_json(const ClassMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1}, {"support", m.support}};
}

json points_json(const OperatingPoints& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({{"sensitivity", p.sensitivity}, {"specificity", p.specificity}});
  return arr;
}

OperatingPoints points_from_json(const json& arr) {
  OperatingPoints pts;
  for (const auto& p : arr) {
    pts.push_back({p.at("sensitivity").get<double>(), p.at("specificity").get<double>()});
  }
  return pts;
}

}  // namespace

json to_json(const MetricsReport& r) {
  json per = json::object();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    per[r.class_names[i]] = class_metrics_json(r.per_class[i]);
  }
  json j = {{"per_class", per},
            {"average", class_metrics_json(r.average)},
            {"overall_accuracy", r.overall_accuracy},
            {"zero_division", r.zero_division},
            {"accuracy_definition", "per-class accuracy is one-vs-rest"},
            {"average_definition", "macro mean over classes"}};
  if (r.auc) {
    j["auc"] = *r.auc;
    j["auc_definition"] = r.per_class.size() == 2 ? "positive class (index 1)"
                                                  : "macro one-vs-rest";
  }
  if (r.auc_per_class) j["auc_per_class"] = *r.auc_per_class;
  return j;
}

json to_json(const RocResult& roc) {
  std::vector<double> x, y, t;
  for (const auto& p : roc.curve) {
    x.push_back(p.fpr);
    y.push_back(p.tpr);
    t.push_back(std::isinf(p.threshold) ? 1e308 : p.threshold);
  }
  return {{"fpr", x}, {"tpr", y}, {"threshold", t}, {"auc", roc.auc}};
}

json to_json(const ExpertPoints& e) {
  json readings = json::array(), readers = json::array();
  for (const auto& r : e.readings) {
    readings.push_back({{"reader_id", r.reader_id}, {"reading_index", r.reading_index},
                        {"points", points_json(r.points)}});
  }
  for (const auto& r : e.readers) {
    readers.push_back({{"reader_id", r.reader_id}, {"points", points_json(r.points)}});
  }
  return {{"readings", readings}, {"readers", readers}, {"average", points_json(e.average)}};
}

RocResult roc_from_json(const json& j) {
  RocResult roc;
  const auto x = j.at("fpr").get<std::vector<double>>();
  const auto y = j.at("tpr").get<std::vector<double>>();
  const auto t = j.at("threshold").get<std::vector<double>>();
  if (x.size() != y.size() || x.size() != t.size()) {
    throw std::invalid_argument("roc arrays differ in length");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    roc.curve.push_back({x[i], y[i], t[i] >= 1e308 ? std::numeric_limits<double>::infinity() : t[i]});
  }
  roc.auc = j.at("auc").get<double>();
  return roc;
}

ExpertPoints expert_points_from_json(const json& j) {
  ExpertPoints e;
  for (const auto& r : j.at("readings")) {
    e.readings.push_back({r.at("reader_id").get<std::string>(), r.at("reading_index").get<int>(),
                          points_from_json(r.at("points"))});
  }
  for (const auto& r : j.at("readers")) {
    e.readers.push_back({r.at("reader_id").get<std::string>(), points_from_json(r.at("points"))});
  }
  e.average = points_from_json(j.at("average"));
  return e;
}

std::vector<ExpertReading> expert_readings_from_json(const json& j) {
  std::vector<ExpertReading> out;
  for (const auto& r : j.at("readings")) {
    out.push_back({r.at("reader_id").get<std::string>(), r.at("reading_index").get<int>(),
                   r.at("labels").get<std::vector<int>>()});
  }
  return out;
}

}  // namespace femur::eval
