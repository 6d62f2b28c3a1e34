#ifndef FEMUR_EVALUATION_HPP_
#define FEMUR_EVALUATION_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace femur::eval {

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::string> class_names;

  int classes() const { return static_cast<int>(counts.size()); }
  std::int64_t total() const;
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truth,
                          int num_classes, std::vector<std::string> class_names = {});

struct ClassMetrics {
  double accuracy = 0.0;  // one-vs-rest
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<ClassMetrics> per_class;
  ClassMetrics average;    // macro means; support is the sample count
  double overall_accuracy = 0.0;  // trace / total
  // Set when some precision/recall/F1 had a zero denominator and was
  // reported as 0.
  bool zero_division = false;
  std::optional<std::vector<double>> auc_per_class;  // one-vs-rest
  std::optional<double> auc;  // two-class: positive class; three-class: macro
};

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // scores >= threshold are called positive
};

struct RocResult {
  std::vector<RocPoint> curve;  // starts at (0,0), ends at (1,1)
  double auc = 0.0;
};

// Binary ROC over all distinct score thresholds; AUC by the trapezoidal rule.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& truth);

struct MulticlassAuc {
  std::vector<RocResult> per_class;  // one-vs-rest
  double macro = 0.0;
};

// probabilities[i][k] is the score of sample i for class k. For two classes
// the single reported value is the class-1 curve.
MulticlassAuc roc_auc_ovr(const std::vector<std::vector<double>>& probabilities,
                          const std::vector<int>& truth, int num_classes);

// Attach AUC values to a report: two classes use class 1, otherwise macro.
void attach_auc(MetricsReport& report, const MulticlassAuc& auc);

struct ExpertReading {
  std::string reader_id;
  int reading_index = 1;  // 1 or 2
  std::vector<int> labels;
};

struct SensSpec {
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// One point for binary tasks (positive class 1), else one per class.
using OperatingPoints = std::vector<SensSpec>;

struct ExpertPoints {
  struct Reading {
    std::string reader_id;
    int reading_index;
    OperatingPoints points;
  };
  struct Reader {
    std::string reader_id;
    OperatingPoints points;  // mean of the two readings
  };
  std::vector<Reading> readings;
  std::vector<Reader> readers;
  OperatingPoints average;  // mean over readers
};

OperatingPoints operating_points(const std::vector<int>& labels, const std::vector<int>& truth,
                                 int num_classes);
ExpertPoints expert_points(const std::vector<ExpertReading>& readings,
                           const std::vector<int>& truth, int num_classes);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const RocResult& roc);
nlohmann::json to_json(const ExpertPoints& points);
RocResult roc_from_json(const nlohmann::json& j);
ExpertPoints expert_points_from_json(const nlohmann::json& j);
// {"readings": [{"reader_id", "reading_index", "labels": [...]}, ...]}
std::vector<ExpertReading> expert_readings_from_json(const nlohmann::json& j);

}  // namespace femur::eval

#endif  // FEMUR_EVALUATION_HPP_
