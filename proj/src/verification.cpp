#include "femur/verification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "femur/localization.hpp"

namespace femur {

using nlohmann::json;

ROIParams scale_roi(const ROIParams& p, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale factor must be positive");
  return {p.t_r, p.t_c, p.s * factor};
}

ScaleAgreementReport scale_agreement(const CropLabeler& labeler, int crop_size,
                                     const Image& image, const ROIParams& p,
                                     const std::vector<double>& scales,
                                     std::optional<int> truth) {
  if (scales.empty()) throw std::invalid_argument("scale_agreement: empty scale list");
  std::vector<Image> crops;
  crops.reserve(scales.size() + 1);
  for (double f : scales) crops.push_back(warp(image, scale_roi(p, f), crop_size));
  const auto base_it = std::find(scales.begin(), scales.end(), 1.0);
  if (base_it == scales.end()) crops.push_back(warp(image, p, crop_size));
  std::vector<const Image*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  std::vector<int> labels = labeler(ptrs);
  if (labels.size() != crops.size()) throw std::logic_error("labeler returned wrong count");

  ScaleAgreementReport r;
  r.scales = scales;
  r.base_label = base_it == scales.end() ? labels.back() : labels[base_it - scales.begin()];
  labels.resize(scales.size());
  r.per_scale_labels = labels;
  const auto n = static_cast<double>(scales.size());
  r.support = std::count(labels.begin(), labels.end(), r.base_label) / n;
  if (truth) {
    r.truth = truth;
    r.correct_support = std::count(labels.begin(), labels.end(), *truth) / n;
  }
  return r;
}

ScaleAgreementReport scale_agreement(const ClassifierModel& model, const Image& image,
                                     const ROIParams& p, const std::vector<double>& scales,
                                     std::optional<int> truth) {
  auto labeler = [&model](const std::vector<const Image*>& crops) {
    std::vector<int> labels;
    for (const auto& pred : model.predict_batch(crops)) labels.push_back(pred.label);
    return labels;
  };
  return scale_agreement(labeler, model.config().input_size, image, p, scales, truth);
}

bool flag_uncertain(const ScaleAgreementReport& report, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("flag threshold must be in (0, 1]");
  }
  return report.support < threshold;
}

namespace {

// Linear interpolation between closest ranks.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * (sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
}

}  // namespace

SupportSummary summarize_support(const std::string& partition, std::vector<double> values) {
  SupportSummary s;
  s.partition = partition;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / values.size());
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.min = values.front();
  s.max = values.back();
  return s;
}

std::vector<SupportSummary> support_table(const std::vector<ScaleAgreementReport>& reports) {
  std::vector<double> all, correct, wrong;
  for (const auto& r : reports) {
    if (!r.truth || !r.correct_support) continue;
    all.push_back(*r.correct_support);
    (r.base_label == *r.truth ? correct : wrong).push_back(*r.correct_support);
  }
  return {summarize_support("all", all), summarize_support("correct", correct),
          summarize_support("misclassified", wrong)};
}

double FlagOutcome::flagged_error_rate() const {
  return flagged == 0 ? 0.0 : static_cast<double>(flagged_errors) / flagged;
}

double FlagOutcome::unflagged_error_rate() const {
  return unflagged == 0 ? 0.0 : static_cast<double>(unflagged_errors) / unflagged;
}

FlagOutcome flag_outcome(const std::vector<ScaleAgreementReport>& reports, double threshold) {
  FlagOutcome o;
  for (const auto& r : reports) {
    if (!r.truth) throw std::invalid_argument("flag_outcome needs reports with a truth label");
    const bool error = r.base_label != *r.truth;
    if (flag_uncertain(r, threshold)) {
      ++o.flagged;
      o.flagged_errors += error;
    } else {
      ++o.unflagged;
      o.unflagged_errors += error;
    }
  }
  return o;
}

json to_json(const ScaleAgreementReport& r) {
  json j = {{"scales", r.scales},
            {"per_scale_labels", r.per_scale_labels},
            {"base_label", r.base_label},
            {"support", r.support},
            {"flag_uncertain", flag_uncertain(r)}};
  j["truth"] = r.truth ? json(*r.truth) : json(nullptr);
  j["correct_support"] = r.correct_support ? json(*r.correct_support) : json(nullptr);
  return j;
}

json to_json(const SupportSummary& s) {
  return {{"partition", s.partition}, {"count", s.count}, {"mean", s.mean},
          {"median", s.median},       {"stddev", s.stddev}, {"q1", s.q1},
          {"q3", s.q3},               {"min", s.min},       {"max", s.max}};
}

SupportSummary support_summary_from_json(const json& j) {
  SupportSummary s;
  s.partition = j.at("partition").get<std::string>();
  s.count = j.at("count").get<int>();
  s.mean = j.at("mean").get<double>();
  s.median = j.at("median").get<double>();
  s.stddev = j.at("stddev").get<double>();
  s.q1 = j.at("q1").get<double>();
  s.q3 = j.at("q3").get<double>();
  s.min = j.at("min").get<double>();
  s.max = j.at("max").get<double>();
  return s;
}

std::string support_table_csv(const std::vector<SupportSummary>& table) {
  std::ostringstream out;
  out.precision(17);
  out << "partition,count,mean,median,stddev,q1,q3,min,max\n";
  for (const auto& s : table) {
    out << s.partition << ',' << s.count << ',' << s.mean << ',' << s.median << ','
        << s.stddev << ',' << s.q1 << ',' << s.q3 << ',' << s.min << ',' << s.max << '\n';
  }
  return out.str();
}

}  // namespace femur
