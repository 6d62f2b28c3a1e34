#include "femur/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace femur::plot {

namespace {

constexpr int kWidth = 640, kHeight = 480;
constexpr int kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Canvas {
 public:
  explicit Canvas(const Axes& a) : a_(a) {
    if (a_.x_max <= a_.x_min) a_.x_max = a_.x_min + 1.0;
    if (a_.y_max <= a_.y_min) a_.y_max = a_.y_min + 1.0;
    out_.precision(6);
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
         << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    frame();
  }

  double x(double v) const {
    return kLeft + (v - a_.x_min) / (a_.x_max - a_.x_min) * (kWidth - kLeft - kRight);
  }
  double y(double v) const {
    return kHeight - kBottom - (v - a_.y_min) / (a_.y_max - a_.y_min) * (kHeight - kTop - kBottom);
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [px, py] : pts) out_ << x(px) << ',' << y(py) << ' ';
    out_ << "\"/>\n";
  }
  void marker(double px, double py, const char* color, double r = 4.0) {
    out_ << "<circle cx=\"" << x(px) << "\" cy=\"" << y(py) << "\" r=\"" << r << "\" fill=\""
         << color << "\"/>\n";
  }
  void rect(double x0, double y0, double x1, double y1, const char* color) {
    out_ << "<rect x=\"" << std::min(x(x0), x(x1)) << "\" y=\"" << std::min(y(y0), y(y1))
         << "\" width=\"" << std::abs(x(x1) - x(x0)) << "\" height=\""
         << std::abs(y(y1) - y(y0)) << "\" fill=\"" << color
         << "\" fill-opacity=\"0.4\" stroke=\"black\"/>\n";
  }
  void line(double x0, double y0, double x1, double y1) {
    out_ << "<line x1=\"" << x(x0) << "\" y1=\"" << y(y0) << "\" x2=\"" << x(x1) << "\" y2=\""
         << y(y1) << "\" stroke=\"black\"/>\n";
  }
  void text(double px, double py, const std::string& s, const char* anchor = "middle") {
    out_ << "<text x=\"" << px << "\" y=\"" << py << "\" text-anchor=\"" << anchor << "\">"
         << escape(s) << "</text>\n";
  }
  void legend(int row, const std::string& name, const char* color) {
    const double lx = kWidth - kRight + 15, ly = kTop + 10 + 18 * row;
    out_ << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\""
         << color << "\"/>\n";
    text(lx + 18, ly + 2, name, "start");
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  void frame() {
    const double x0 = x(a_.x_min), x1 = x(a_.x_max), y0 = y(a_.y_min), y1 = y(a_.y_max);
    out_ << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\""
         << y0 - y1 << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
      const double vx = a_.x_min + (a_.x_max - a_.x_min) * i / 5.0;
      const double vy = a_.y_min + (a_.y_max - a_.y_min) * i / 5.0;
      std::ostringstream lx, ly;
      lx.precision(3);
      ly.precision(3);
      lx << vx;
      ly << vy;
      text(x(vx), y0 + 18, lx.str());
      text(x0 - 8, y(vy) + 4, ly.str(), "end");
    }
    text((x0 + x1) / 2, kHeight - 15, a_.x_label);
    text((x0 + x1) / 2, 22, a_.title);
    out_ << "<text transform=\"translate(18," << (y0 + y1) / 2
         << ") rotate(-90)\" text-anchor=\"middle\">" << escape(a_.y_label) << "</text>\n";
  }

  Axes a_;
  std::ostringstream out_;
};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

}  // namespace

std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
  Canvas c(axes);
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].markers_only) {
      for (const auto& [px, py] : series[i].points) c.marker(px, py, color(i));
    } else {
      c.polyline(series[i].points, color(i));
    }
    c.legend(static_cast<int>(i), series[i].name, color(i));
  }
  return c.finish();
}

std::string roc_chart(const std::vector<std::pair<std::string, eval::RocResult>>& curves,
                      const eval::ExpertPoints* experts, int positive_class) {
  std::vector<Series> series;
  for (const auto& [name, roc] : curves) {
    Series s;
    std::ostringstream label;
    label.precision(3);
    label << name << " (AUC " << roc.auc << ")";
    s.name = label.str();
    for (const auto& p : roc.curve) s.points.emplace_back(p.fpr, p.tpr);
    series.push_back(std::move(s));
  }
  if (experts != nullptr) {
    auto add = [&](const std::string& name, const eval::OperatingPoints& pts) {
      if (positive_class < 0 || positive_class >= static_cast<int>(pts.size())) return;
      const auto& p = pts[positive_class];
      series.push_back({name, {{1.0 - p.specificity, p.sensitivity}}, true});
    };
    for (const auto& r : experts->readers) add(r.reader_id, r.points);
    add("expert average", experts->average);
  }
  return line_chart({"ROC", "1 - specificity", "sensitivity"}, series);
}

std::string pr_chart(const ElevenPointCurve& curve, const std::vector<std::string>& label_names) {
  std::vector<Series> series;
  for (std::size_t i = 0; i < curve.classes.size(); ++i) {
    const int label = curve.classes[i];
    Series s;
    s.name = label >= 0 && label < static_cast<int>(label_names.size())
                 ? label_names[label]
                 : "class " + std::to_string(label);
    for (std::size_t l = 0; l < curve.recall_levels.size(); ++l) {
      s.points.emplace_back(curve.recall_levels[l], curve.per_class[i][l]);
    }
    series.push_back(std::move(s));
  }
  Series overall{"average", {}};
  for (std::size_t l = 0; l < curve.recall_levels.size(); ++l) {
    overall.points.emplace_back(curve.recall_levels[l], curve.overall[l]);
  }
  series.push_back(std::move(overall));
  std::ostringstream title;
  title.precision(3);
  title << "11-point PR (mAP " << curve.map << ")";
  return line_chart({title.str(), "recall", "precision"}, series);
}

std::string tsne_chart(const std::vector<TsnePoint>& points,
                       const std::vector<std::string>& label_names) {
  Axes axes{"t-SNE", "dim 1", "dim 2", 0, 0, 0, 0};
  if (!points.empty()) {
    axes.x_min = axes.x_max = points.front().x;
    axes.y_min = axes.y_max = points.front().y;
    for (const auto& p : points) {
      axes.x_min = std::min(axes.x_min, p.x);
      axes.x_max = std::max(axes.x_max, p.x);
      axes.y_min = std::min(axes.y_min, p.y);
      axes.y_max = std::max(axes.y_max, p.y);
    }
  }
  int max_label = 0;
  for (const auto& p : points) max_label = std::max(max_label, p.label);
  std::vector<Series> series(std::max<std::size_t>(label_names.size(), max_label + 1));
  for (std::size_t i = 0; i < series.size(); ++i) {
    series[i].name = i < label_names.size() ? label_names[i] : "class " + std::to_string(i);
    series[i].markers_only = true;
  }
  for (const auto& p : points) series[p.label].points.emplace_back(p.x, p.y);
  return line_chart(axes, series);
}

std::string support_box_chart(const std::vector<SupportSummary>& table) {
  Axes axes{"Support across scales", "", "correct support", 0.0,
            static_cast<double>(std::max<std::size_t>(table.size(), 1)), 0.0, 1.0};
  Canvas c(axes);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& s = table[i];
    const double mid = i + 0.5;
    c.text(c.x(mid), c.y(0.0) + 36, s.partition + " (n=" + std::to_string(s.count) + ")");
    if (s.count == 0) continue;
    c.line(mid, s.min, mid, s.q1);
    c.line(mid, s.q3, mid, s.max);
    c.rect(mid - 0.25, s.q1, mid + 0.25, s.q3, color(i));
    c.line(mid - 0.25, s.median, mid + 0.25, s.median);
  }
  return c.finish();
}

}  // namespace femur::plot
