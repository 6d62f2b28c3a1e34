#ifndef FEMUR_SYNTH_HPP_
#define FEMUR_SYNTH_HPP_

// Procedural radiograph generator used as a desk-scale stand-in for clinical
// data: a femur silhouette per image, with a trochanteric (type A) or
// subcapital (type B) break motif.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "femur/dataset.hpp"
#include "femur/image.hpp"
#include "femur/rng.hpp"
#include "femur/roi.hpp"

namespace femur::synth {

struct Point {
  double row;
  double col;
};

// A break is a dark band of half-width `half_width` along [from, to].
struct BreakMotif {
  Point from;
  Point to;
  double half_width;
  // 1 draws the full gap intensity; smaller values fade the line into bone.
  double visibility = 1.0;
};

struct FemurDrawing {
  Image image;
  ROIParams roi;                    // encloses head, neck and trochanters
  std::optional<BreakMotif> motif;  // absent for not_fractured
  Point head_center;
};

// Draws one femur into a `height` x `width` canvas. `medial` is +1 when the
// femoral head points toward increasing column, -1 otherwise.
FemurDrawing draw_femur(int height, int width, int medial, ClassLabel label, Rng& rng,
                        double visibility = 1.0);

// A two-femur AP pelvis view. The patient's right femur sits in the left
// half of the image (head pointing toward the midline), as in radiographs.
struct PelvisDrawing {
  Image image;
  FemurDrawing right_femur;  // coordinates relative to the left half
  FemurDrawing left_femur;   // coordinates relative to the right half
};
PelvisDrawing draw_pelvis(int height, int half_width, ClassLabel right_label,
                          ClassLabel left_label, Rng& rng, double visibility = 1.0);

struct SynthConfig {
  int n_patients = 60;
  std::array<double, 3> class_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};  // not_fractured, A, B
  std::uint64_t seed = 0;
  int image_size = 256;
  // Draw full pelvis views and part them into one image per femur. The
  // patient's class applies to one randomly chosen side; the other is normal.
  bool pelvis = false;
  // Share of fractured patients drawn with a faint line (non-displaced
  // fractures); their visibility is uniform in subtle_visibility.
  double subtle_fraction = 0.0;
  std::pair<double, double> subtle_visibility{0.2, 0.45};
};

// Exact per-class patient counts (largest remainder).
std::array<int, 3> class_quota(int n_patients, const std::array<double, 3>& mix);

// Writes images/ and manifest.jsonl under out_dir; returns the manifest path.
// Output is a pure function of the config.
std::filesystem::path synth_generate(const SynthConfig& cfg,
                                     const std::filesystem::path& out_dir);

// Ground-truth break motifs keyed by image_ref, rebuilt from the config.
struct GroundTruth {
  StudyRecord record;
  std::optional<BreakMotif> motif;
};
std::vector<GroundTruth> synth_ground_truth(const SynthConfig& cfg);

}  // namespace femur::synth

#endif  // FEMUR_SYNTH_HPP_
