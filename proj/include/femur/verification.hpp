#ifndef FEMUR_VERIFICATION_HPP_
#define FEMUR_VERIFICATION_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "femur/classification.hpp"
#include "femur/image.hpp"
#include "femur/roi.hpp"
#include "json.hpp"

namespace femur {

inline const std::vector<double>& default_scales() {
  static const std::vector<double> scales{0.75, 1.00, 1.25, 1.50, 1.75, 2.00};
  return scales;
}

// (t_r, t_c, s * factor). Throws std::invalid_argument for factor <= 0.
ROIParams scale_roi(const ROIParams& p, double factor);

struct ScaleAgreementReport {
  std::vector<double> scales;
  std::vector<int> per_scale_labels;
  int base_label = 0;  // prediction at factor 1.0
  // Fraction of scales agreeing with base_label.
  double support = 1.0;
  // Fraction of scales predicting the true label, when the truth is known.
  std::optional<int> truth;
  std::optional<double> correct_support;
};

// Labels a batch of classifier inputs.
using CropLabeler = std::function<std::vector<int>(const std::vector<const Image*>&)>;

ScaleAgreementReport scale_agreement(const CropLabeler& labeler, int crop_size,
                                     const Image& image, const ROIParams& p,
                                     const std::vector<double>& scales = default_scales(),
                                     std::optional<int> truth = std::nullopt);
ScaleAgreementReport scale_agreement(const ClassifierModel& model, const Image& image,
                                     const ROIParams& p,
                                     const std::vector<double>& scales = default_scales(),
                                     std::optional<int> truth = std::nullopt);

// support < threshold. Throws std::invalid_argument unless 0 < threshold <= 1.
bool flag_uncertain(const ScaleAgreementReport& report, double threshold = 1.0);

struct SupportSummary {
  std::string partition;  // all, correct, misclassified
  int count = 0;
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // population
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

SupportSummary summarize_support(const std::string& partition, std::vector<double> values);

// Box-plot table of correct_support over all / correct / misclassified
// cases, where "correct" means the base-scale prediction matched the truth.
// Reports without a truth are skipped.
std::vector<SupportSummary> support_table(const std::vector<ScaleAgreementReport>& reports);

struct FlagOutcome {
  int flagged = 0;
  int flagged_errors = 0;
  int unflagged = 0;
  int unflagged_errors = 0;

  double flagged_error_rate() const;
  double unflagged_error_rate() const;
};

// Error is base-scale misclassification; reports need a truth.
FlagOutcome flag_outcome(const std::vector<ScaleAgreementReport>& reports,
                         double threshold = 1.0);

nlohmann::json to_json(const ScaleAgreementReport& report);
nlohmann::json to_json(const SupportSummary& summary);
SupportSummary support_summary_from_json(const nlohmann::json& j);
std::string support_table_csv(const std::vector<SupportSummary>& table);

}  // namespace femur

#endif  // FEMUR_VERIFICATION_HPP_
