#include "femur/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace femur {

using nlohmann::json;

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::kNotFractured: return "not_fractured";
    case ClassLabel::kA: return "A";
    case ClassLabel::kB: return "B";
  }
  return "?";
}

std::string_view to_string(Side side) { return side == Side::kLeft ? "left" : "right"; }
std::string_view to_string(View view) { return view == View::kAP ? "ap" : "lateral"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::string_view to_string(ClassMode mode) {
  return mode == ClassMode::kTwoClass ? "two_class" : "three_class";
}

std::optional<ClassLabel> parse_label(std::string_view text) {
  if (text == "not_fractured") return ClassLabel::kNotFractured;
  if (text == "A") return ClassLabel::kA;
  if (text == "B") return ClassLabel::kB;
  return std::nullopt;
}

std::optional<Side> parse_side(std::string_view text) {
  if (text == "left") return Side::kLeft;
  if (text == "right") return Side::kRight;
  return std::nullopt;
}

std::optional<View> parse_view(std::string_view text) {
  if (text == "ap") return View::kAP;
  if (text == "lateral") return View::kLateral;
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  return std::nullopt;
}

ClassMode parse_class_mode(std::string_view text) {
  if (text == "two_class") return ClassMode::kTwoClass;
  if (text == "three_class") return ClassMode::kThreeClass;
  throw std::invalid_argument("unknown class mode: " + std::string(text));
}

int num_classes(ClassMode mode) { return mode == ClassMode::kTwoClass ? 2 : 3; }

int class_index(ClassLabel label, ClassMode mode) {
  const int raw = static_cast<int>(label);
  if (mode == ClassMode::kTwoClass) return raw == 0 ? 0 : 1;
  return raw;
}

std::vector<std::string> class_names(ClassMode mode) {
  if (mode == ClassMode::kTwoClass) return {"not_fractured", "abnormal"};
  return {"not_fractured", "A", "B"};
}

ManifestError::ManifestError(std::string summary, std::vector<ManifestIssue> issues)
    : std::runtime_error(std::move(summary)), issues_(std::move(issues)) {}

std::filesystem::path Manifest::image_path(const StudyRecord& r) const {
  std::filesystem::path p(r.image_ref);
  return p.is_absolute() ? p : directory / p;
}

Image Manifest::load_image(const StudyRecord& r) const {
  Image img = read_png(image_path(r));
  validate_study_image(img);
  return img;
}

void validate_study_image(const Image& image) {
  if (image.height() < kMinImageSide || image.width() < kMinImageSide) {
    throw ImageError("image smaller than " + std::to_string(kMinImageSide) + " px: " +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
}

std::string record_to_json_line(const StudyRecord& r) {
  json j;
  j["patient_id"] = r.patient_id;
  j["image_ref"] = r.image_ref;
  j["side"] = to_string(r.side);
  j["view"] = to_string(r.view);
  j["label"] = to_string(r.label);
  if (r.roi) {
    j["roi"] = json::array({r.roi->t_r, r.roi->t_c, r.roi->s});
  } else {
    j["roi"] = nullptr;
  }
  if (r.split) j["split"] = to_string(*r.split);
  return j.dump();
}

StudyRecord record_from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed line: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("malformed line: expected an object");
  auto str_field = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) {
      throw std::invalid_argument(std::string("missing or non-string field '") + key + "'");
    }
    return j[key].get<std::string>();
  };
  StudyRecord r;
  r.patient_id = str_field("patient_id");
  if (r.patient_id.empty()) throw std::invalid_argument("empty patient_id");
  r.image_ref = str_field("image_ref");
  const std::string label = str_field("label");
  if (label == "C") {
    throw std::invalid_argument("label 'C': excluded class (type C fractures are not supported)");
  }
  auto parsed_label = parse_label(label);
  if (!parsed_label) throw std::invalid_argument("label outside vocabulary: '" + label + "'");
  r.label = *parsed_label;
  auto side = parse_side(str_field("side"));
  if (!side) throw std::invalid_argument("side must be 'left' or 'right'");
  r.side = *side;
  auto view = parse_view(str_field("view"));
  if (!view) throw std::invalid_argument("view must be 'ap' or 'lateral'");
  r.view = *view;
  if (j.contains("roi") && !j["roi"].is_null()) {
    const json& roi = j["roi"];
    if (!roi.is_array() || roi.size() != 3 ||
        !std::all_of(roi.begin(), roi.end(), [](const json& v) { return v.is_number(); })) {
      throw std::invalid_argument("roi must be [t_r, t_c, s] or null");
    }
    ROIParams p{roi[0].get<double>(), roi[1].get<double>(), roi[2].get<double>()};
    if (!roi_in_range(p)) {
      throw std::invalid_argument("roi outside [0,1] (center) / (0,2] (side)");
    }
    r.roi = p;
  }
  if (j.contains("split") && !j["split"].is_null()) {
    if (!j["split"].is_string()) throw std::invalid_argument("split must be a string");
    auto split = parse_split(j["split"].get<std::string>());
    if (!split) throw std::invalid_argument("split must be train, val or test");
    r.split = split;
  }
  return r;
}

Manifest load_manifest(const std::filesystem::path& path, ManifestOptions options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path.string());
  Manifest m;
  m.directory = path.parent_path();
  std::vector<ManifestIssue> issues;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    StudyRecord r;
    try {
      r = record_from_json_line(line);
    } catch (const std::invalid_argument& e) {
      issues.push_back({line_no, e.what()});
      continue;
    }
    if (options.verify_images) {
      try {
        validate_study_image(read_png(m.image_path(r)));
      } catch (const ImageError& e) {
        issues.push_back({line_no, e.what()});
        continue;
      }
    }
    m.records.push_back(std::move(r));
  }
  if (!issues.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << issues.size() << " invalid record(s)";
    for (const auto& issue : issues) msg << "\n  line " << issue.line << ": " << issue.message;
    throw ManifestError(msg.str(), std::move(issues));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<StudyRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
  if (!out) throw std::runtime_error("short write: " + path.string());
}

std::array<int, 3> SplitAssignment::patient_counts() const {
  std::array<int, 3> counts{0, 0, 0};
  for (const auto& [id, split] : assignment) ++counts[static_cast<int>(split)];
  return counts;
}

SplitAssignment split_patientwise(const std::vector<StudyRecord>& records,
                                  std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must sum to 1");
  }
  // Patients in order of first appearance.
  std::vector<std::string> patients;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.patient_id).second) patients.push_back(r.patient_id);
  }
  const int n = static_cast<int>(patients.size());
  if (n < 3) throw std::invalid_argument("need at least 3 distinct patients to split");

  // Largest-remainder apportionment keeps every count within one patient of
  // its target; ties go to the earlier split.
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = ratios[i] * n;
    counts[i] = static_cast<int>(std::floor(target));
    remainder[i] = target - counts[i];
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];

  Rng rng(seed);
  rng.shuffle(patients);
  SplitAssignment out;
  out.ratios = ratios;
  out.seed = seed;
  int idx = 0;
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < counts[s]; ++c) out.assignment[patients[idx++]] = static_cast<Split>(s);
  }
  return out;
}

std::vector<StudyRecord> apply_split(std::vector<StudyRecord> records,
                                     const SplitAssignment& split) {
  for (auto& r : records) {
    auto it = split.assignment.find(r.patient_id);
    if (it == split.assignment.end()) {
      throw std::invalid_argument("patient missing from split assignment: " + r.patient_id);
    }
    r.split = it->second;
  }
  return records;
}

std::vector<StudyRecord> select_split(const std::vector<StudyRecord>& records, Split split,
                                      bool include_lateral) {
  std::vector<StudyRecord> out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (r.view == View::kLateral && !include_lateral) continue;
    out.push_back(r);
  }
  return out;
}

std::pair<Image, Image> part_pelvis_image(const Image& image, double overlap) {
  if (image.width() < 2) throw ImageError("pelvis image must be at least 2 px wide");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("overlap must be in [0, 1)");
  const int w = image.width();
  const int half = static_cast<int>(std::ceil(w * (0.5 + overlap / 2.0)));
  return {crop_columns(image, 0, half), crop_columns(image, w - half, half)};
}

AugmentTransform sample_transform(const AugmentationParams& p, int height, int width,
                                  Rng& rng) {
  if (!(p.scale_range.first > 0.0) || !(p.scale_range.second >= p.scale_range.first)) {
    throw std::invalid_argument("augmentation scale range must be positive and ordered");
  }
  if (p.max_translation < 0.0 || p.max_rotation < 0.0) {
    throw std::invalid_argument("augmentation magnitudes must be non-negative");
  }
  AugmentTransform t;
  t.shift_row = rng.uniform(-p.max_translation, p.max_translation) * height;
  t.shift_col = rng.uniform(-p.max_translation, p.max_translation) * width;
  t.rotation_deg = rng.uniform(-p.max_rotation, p.max_rotation);
  t.scale = rng.uniform(p.scale_range.first, p.scale_range.second);
  return t;
}

Image apply_transform(const Image& image, const AugmentTransform& t) {
  if (!(t.scale > 0.0)) throw std::invalid_argument("augmentation scale must be > 0");
  if (t.is_identity()) return image;
  const double cy = (image.height() - 1) / 2.0;
  const double cx = (image.width() - 1) / 2.0;
  const double theta = t.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  Image out(image.height(), image.width());
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      // Inverse map: undo shift, rotation and scale.
      const double y = r - cy - t.shift_row;
      const double x = c - cx - t.shift_col;
      const double sy = (cs * y - sn * x) / t.scale + cy;
      const double sx = (sn * y + cs * x) / t.scale + cx;
      out.at(r, c) = sample_bilinear(image, sy, sx);
    }
  }
  return out;
}

AugmentResult augment(const Image& image, const AugmentationParams& params, Rng& rng) {
  AugmentTransform t = sample_transform(params, image.height(), image.width(), rng);
  return {apply_transform(image, t), t};
}

std::vector<StudyRecord> build_balanced_testset(const std::vector<StudyRecord>& records,
                                                std::array<int, 3> per_class_counts) {
  std::array<std::vector<const StudyRecord*>, 3> by_class;
  for (const auto& r : records) {
    if (r.split == Split::kTest) by_class[static_cast<int>(r.label)].push_back(&r);
  }
  std::vector<StudyRecord> out;
  for (int c = 0; c < 3; ++c) {
    if (per_class_counts[c] < 0) throw std::invalid_argument("negative class count");
    if (static_cast<int>(by_class[c].size()) < per_class_counts[c]) {
      throw std::invalid_argument(
          "insufficient test records of class " +
          std::string(to_string(static_cast<ClassLabel>(c))) + ": requested " +
          std::to_string(per_class_counts[c]) + ", available " +
          std::to_string(by_class[c].size()));
    }
  }
  for (const auto& r : records) {
    if (r.split != Split::kTest) continue;
    const int c = static_cast<int>(r.label);
    if (per_class_counts[c] > 0) {
      out.push_back(r);
      --per_class_counts[c];
    }
  }
  return out;
}

}  // namespace femur
