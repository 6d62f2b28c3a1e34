#include "femur/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

namespace femur::synth {

namespace {

struct Vec {
  double r, c;
};

Vec operator+(Vec a, Vec b) { return {a.r + b.r, a.c + b.c}; }
Vec operator-(Vec a, Vec b) { return {a.r - b.r, a.c - b.c}; }
Vec operator*(Vec a, double k) { return {a.r * k, a.c * k}; }
double norm(Vec a) { return std::hypot(a.r, a.c); }

double dist_to_segment(Vec p, Vec a, Vec b) {
  const Vec ab = b - a;
  const double len2 = ab.r * ab.r + ab.c * ab.c;
  double t = len2 > 0 ? ((p.r - a.r) * ab.r + (p.c - a.c) * ab.c) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + ab * t));
}

Vec rotate(Vec v, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  return {c * v.r - s * v.c, s * v.r + c * v.c};
}

Point to_point(Vec v) { return {v.r, v.c}; }
Vec to_vec(Point p) { return {p.row, p.col}; }

}  // namespace

FemurDrawing draw_femur(int height, int width, int medial, ClassLabel label, Rng& rng,
                        double visibility) {
  const double u = std::min(height, width) / 256.0;
  const double m = medial >= 0 ? 1.0 : -1.0;
  const double sc = rng.uniform(0.9, 1.1) * u;
  const Vec offset{rng.uniform(-16.0, 16.0) * u, rng.uniform(-16.0, 16.0) * u};

  const Vec head = Vec{0.33 * height, width / 2.0 + m * 28.0 * u} + offset;
  const double head_r = 22.0 * sc;
  Vec neck_dir{0.66, -m * 0.75};
  neck_dir = rotate(neck_dir, rng.uniform(-0.08, 0.08));
  neck_dir = neck_dir * (1.0 / norm(neck_dir));
  const Vec neck_base = head + neck_dir * (50.0 * sc);
  const double neck_hw = 12.0 * sc;
  const Vec greater = neck_base + Vec{-6.0 * sc, -m * 20.0 * sc};
  const double greater_r = 15.0 * sc;
  const Vec lesser = neck_base + Vec{40.0 * sc, m * 8.0 * sc};
  const double lesser_r = 8.0 * sc;
  const Vec shaft_top = neck_base + Vec{0.0, -m * 6.0 * sc};
  const Vec shaft_bottom{height + 40.0 * u, shaft_top.c - m * 10.0 * u};
  const double shaft_hw = 19.0 * sc;

  // Signed distance to the bone silhouette (negative inside).
  auto bone_sdf = [&](Vec p) {
    double d = norm(p - head) - head_r;
    d = std::min(d, dist_to_segment(p, head, neck_base) - neck_hw);
    d = std::min(d, norm(p - greater) - greater_r);
    d = std::min(d, norm(p - lesser) - lesser_r);
    d = std::min(d, dist_to_segment(p, greater, lesser) - 11.0 * sc);
    d = std::min(d, dist_to_segment(p, shaft_top, shaft_bottom) - shaft_hw);
    return d;
  };

  std::optional<BreakMotif> motif;
  if (label != ClassLabel::kNotFractured) {
    const double hw = rng.uniform(2.2, 3.2) * u;
    const double tilt = rng.uniform(-0.15, 0.15);
    Vec a, b;
    if (label == ClassLabel::kA) {
      // Intertrochanteric line from the greater to the lesser trochanter.
      a = greater + Vec{-0.3 * greater_r, -m * 0.7 * greater_r};
      b = lesser + Vec{0.4 * lesser_r, m * 0.6 * lesser_r};
    } else {
      // Subcapital line across the neck just below the head.
      const Vec p = head + neck_dir * (head_r + 3.0 * sc);
      const Vec perp{neck_dir.c, -neck_dir.r};
      a = p + perp * (neck_hw + 5.0 * sc);
      b = p - perp * (neck_hw + 5.0 * sc);
    }
    const Vec mid = (a + b) * 0.5;
    a = mid + rotate(a - mid, tilt);
    b = mid + rotate(b - mid, tilt);
    motif = BreakMotif{to_point(a), to_point(b), hw, visibility};
  }

  const double contrast = rng.uniform(0.9, 1.1);
  const double gap_level = rng.uniform(0.18, 0.28);
  Image img(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec p{r + 0.5, c + 0.5};
      const double sdf = bone_sdf(p);
      double v = 0.10 + 0.08 * r / height;
      // Soft tissue falls off away from the bone.
      v += 0.14 * std::clamp(1.0 - std::max(sdf, 0.0) / (60.0 * u), 0.0, 1.0);
      // Acetabular rim above the head.
      const Vec rel = p - head;
      const double ring = std::abs(norm(rel) - (head_r + 6.0 * sc));
      if (ring < 2.5 * sc && rel.r < 0.3 * head_r) v += 0.18;
      if (sdf < 0.0) {
        const double depth = -sdf;
        v = 0.55 + 0.25 * std::exp(-depth / (3.0 * u));
        if (motif && dist_to_segment(p, to_vec(motif->from), to_vec(motif->to)) <
                         motif->half_width) {
          v += visibility * (gap_level - v);
        }
      }
      v = v * contrast + 0.035 * rng.normal();
      img.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  // ROI: square around head, neck and trochanters.
  double top = head.r - head_r - 8.0 * sc;
  double bottom = lesser.r + lesser_r;
  double left = std::min({head.c - head_r, greater.c - greater_r, lesser.c - lesser_r});
  double right = std::max({head.c + head_r, greater.c + greater_r, lesser.c + lesser_r});
  const double margin = 10.0 * u;
  const Vec center{(top + bottom) / 2.0, (left + right) / 2.0};
  double side = std::max(bottom - top, right - left) + 2.0 * margin;
  if (motif) {
    for (Point q : {motif->from, motif->to}) {
      const Vec d = to_vec(q) - center;
      side = std::max(side, 2.0 * (std::max(std::abs(d.r), std::abs(d.c)) + motif->half_width + 1.0));
    }
  }
  ROIParams roi{center.r / height, center.c / width, side / std::min(height, width)};
  return {std::move(img), roi, motif, to_point(head)};
}

PelvisDrawing draw_pelvis(int height, int half_width, ClassLabel right_label,
                          ClassLabel left_label, Rng& rng, double visibility) {
  FemurDrawing right = draw_femur(height, half_width, +1, right_label, rng, visibility);
  FemurDrawing left = draw_femur(height, half_width, -1, left_label, rng, visibility);
  Image img(height, 2 * half_width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < half_width; ++c) {
      img.at(r, c) = right.image.at(r, c);
      img.at(r, half_width + c) = left.image.at(r, c);
    }
  }
  return {std::move(img), std::move(right), std::move(left)};
}

std::array<int, 3> class_quota(int n, const std::array<double, 3>& mix) {
  double total = 0.0;
  for (double f : mix) {
    if (f < 0.0) throw std::invalid_argument("class mix fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("class mix must sum to 1");
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<int>(std::floor(mix[i] * n));
    rem[i] = mix[i] * n - counts[i];
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

namespace {

struct GeneratedImage {
  StudyRecord record;
  std::optional<BreakMotif> motif;
  Image image;
};

void generate(const SynthConfig& cfg, const std::function<void(GeneratedImage&&)>& sink) {
  if (cfg.n_patients < 1) throw std::invalid_argument("n_patients must be >= 1");
  if (cfg.image_size < kMinImageSide) {
    throw std::invalid_argument("image_size must be >= " + std::to_string(kMinImageSide));
  }
  const auto quota = class_quota(cfg.n_patients, cfg.class_mix);
  std::vector<ClassLabel> labels;
  for (int c = 0; c < 3; ++c) labels.insert(labels.end(), quota[c], static_cast<ClassLabel>(c));
  Rng rng(cfg.seed);
  rng.shuffle(labels);

  char id[32];
  for (int i = 0; i < cfg.n_patients; ++i) {
    std::snprintf(id, sizeof(id), "P%04d", i + 1);
    const ClassLabel label = labels[i];
    double visibility = 1.0;
    if (cfg.subtle_fraction > 0.0 && label != ClassLabel::kNotFractured &&
        rng.uniform() < cfg.subtle_fraction) {
      visibility = rng.uniform(cfg.subtle_visibility.first, cfg.subtle_visibility.second);
    }
    if (!cfg.pelvis) {
      const Side side = rng.below(2) == 0 ? Side::kLeft : Side::kRight;
      FemurDrawing d = draw_femur(cfg.image_size, cfg.image_size,
                                  side == Side::kRight ? +1 : -1, label, rng, visibility);
      StudyRecord r{id, std::string("images/") + id + ".png", side, View::kAP, label, d.roi,
                    std::nullopt};
      sink({std::move(r), d.motif, std::move(d.image)});
      continue;
    }
    const bool fractured_right = rng.below(2) == 0;
    const ClassLabel right_label = fractured_right ? label : ClassLabel::kNotFractured;
    const ClassLabel left_label = fractured_right ? ClassLabel::kNotFractured : label;
    PelvisDrawing pelvis = draw_pelvis(cfg.image_size, cfg.image_size, right_label,
                                       left_label, rng, visibility);
    auto [left_half, right_half] = part_pelvis_image(pelvis.image, 0.0);
    StudyRecord rr{id, std::string("images/") + id + "_R.png", Side::kRight, View::kAP,
                   right_label, pelvis.right_femur.roi, std::nullopt};
    StudyRecord lr{id, std::string("images/") + id + "_L.png", Side::kLeft, View::kAP,
                   left_label, pelvis.left_femur.roi, std::nullopt};
    sink({std::move(rr), pelvis.right_femur.motif, std::move(left_half)});
    sink({std::move(lr), pelvis.left_femur.motif, std::move(right_half)});
  }
}

}  // namespace

std::filesystem::path synth_generate(const SynthConfig& cfg,
                                     const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create output directory: " + out_dir.string());
  std::vector<StudyRecord> records;
  generate(cfg, [&](GeneratedImage&& g) {
    write_png(g.image, out_dir / g.record.image_ref);
    records.push_back(std::move(g.record));
  });
  const auto manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, records);
  return manifest;
}

std::vector<GroundTruth> synth_ground_truth(const SynthConfig& cfg) {
  std::vector<GroundTruth> out;
  generate(cfg, [&](GeneratedImage&& g) { out.push_back({std::move(g.record), g.motif}); });
  return out;
}

}  // namespace femur::synth
