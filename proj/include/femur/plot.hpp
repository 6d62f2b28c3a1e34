#ifndef FEMUR_PLOT_HPP_
#define FEMUR_PLOT_HPP_

#include <string>
#include <utility>
#include <vector>

#include "femur/evaluation.hpp"
#include "femur/retrieval.hpp"
#include "femur/tsne.hpp"
#include "femur/verification.hpp"

namespace femur::plot {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  bool markers_only = false;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
};

// Standalone SVG line / scatter chart.
std::string line_chart(const Axes& axes, const std::vector<Series>& series);

// ROC curves (x = 1 - specificity) with optional expert operating points.
std::string roc_chart(const std::vector<std::pair<std::string, eval::RocResult>>& curves,
                      const eval::ExpertPoints* experts = nullptr, int positive_class = 0);
std::string pr_chart(const ElevenPointCurve& curve, const std::vector<std::string>& label_names);
std::string tsne_chart(const std::vector<TsnePoint>& points,
                       const std::vector<std::string>& label_names);
std::string support_box_chart(const std::vector<SupportSummary>& table);

}  // namespace femur::plot

#endif  // FEMUR_PLOT_HPP_
