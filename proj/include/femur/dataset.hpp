#ifndef FEMUR_DATASET_HPP_
#define FEMUR_DATASET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "femur/image.hpp"
#include "femur/rng.hpp"
#include "femur/roi.hpp"

namespace femur {

enum class ClassLabel { kNotFractured = 0, kA = 1, kB = 2 };
enum class Side { kLeft, kRight };
enum class View { kAP, kLateral };
enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

// Two-class detection collapses A and B into "abnormal".
enum class ClassMode { kTwoClass, kThreeClass };

std::string_view to_string(ClassLabel label);
std::string_view to_string(Side side);
std::string_view to_string(View view);
std::string_view to_string(Split split);
std::string_view to_string(ClassMode mode);
std::optional<ClassLabel> parse_label(std::string_view text);
std::optional<Side> parse_side(std::string_view text);
std::optional<View> parse_view(std::string_view text);
std::optional<Split> parse_split(std::string_view text);
ClassMode parse_class_mode(std::string_view text);

int num_classes(ClassMode mode);
// Class index used by models in the given mode.
int class_index(ClassLabel label, ClassMode mode);
std::vector<std::string> class_names(ClassMode mode);

struct StudyRecord {
  std::string patient_id;
  std::string image_ref;  // relative to the manifest directory, or absolute
  Side side = Side::kLeft;
  View view = View::kAP;
  ClassLabel label = ClassLabel::kNotFractured;
  std::optional<ROIParams> roi;
  std::optional<Split> split;

  bool operator==(const StudyRecord&) const = default;
};

constexpr int kMinImageSide = 64;

struct ManifestIssue {
  int line;  // 1-based
  std::string message;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::string summary, std::vector<ManifestIssue> issues);
  const std::vector<ManifestIssue>& issues() const { return issues_; }

 private:
  std::vector<ManifestIssue> issues_;
};

struct Manifest {
  std::filesystem::path directory;  // base for relative image_refs
  std::vector<StudyRecord> records;

  std::filesystem::path image_path(const StudyRecord& r) const;
  Image load_image(const StudyRecord& r) const;
};

struct ManifestOptions {
  // Decode every image and check the single-channel / minimum size rule.
  bool verify_images = true;
};

// Reads one JSON object per line. All problems are collected and reported
// together (with line numbers) in a ManifestError.
Manifest load_manifest(const std::filesystem::path& path, ManifestOptions options = {});
std::string record_to_json_line(const StudyRecord& record);
StudyRecord record_from_json_line(std::string_view line);  // throws std::invalid_argument
void write_manifest(const std::filesystem::path& path, const std::vector<StudyRecord>& records);

// Throws ImageError if the image violates the study image invariants.
void validate_study_image(const Image& image);

struct SplitAssignment {
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;

  std::array<int, 3> patient_counts() const;
};

SplitAssignment split_patientwise(const std::vector<StudyRecord>& records,
                                  std::array<double, 3> ratios, std::uint64_t seed);
std::vector<StudyRecord> apply_split(std::vector<StudyRecord> records,
                                     const SplitAssignment& split);

std::vector<StudyRecord> select_split(const std::vector<StudyRecord>& records, Split split,
                                      bool include_lateral = false);

std::pair<Image, Image> part_pelvis_image(const Image& image, double overlap = 0.0);

struct AugmentationParams {
  double max_translation = 0.10;  // fraction of the image side
  double max_rotation = 15.0;     // degrees
  std::pair<double, double> scale_range{0.9, 1.1};
  std::uint64_t seed = 0;

  static AugmentationParams identity() { return {0.0, 0.0, {1.0, 1.0}, 0}; }
};

// A concrete similarity transform about the image center.
struct AugmentTransform {
  double shift_row = 0.0;  // pixels
  double shift_col = 0.0;
  double rotation_deg = 0.0;
  double scale = 1.0;

  bool is_identity() const {
    return shift_row == 0.0 && shift_col == 0.0 && rotation_deg == 0.0 && scale == 1.0;
  }
};

struct AugmentResult {
  Image image;
  AugmentTransform transform;  // what was sampled, for reproducibility logs
};

AugmentTransform sample_transform(const AugmentationParams& params, int height, int width,
                                  Rng& rng);
Image apply_transform(const Image& image, const AugmentTransform& t);
AugmentResult augment(const Image& image, const AugmentationParams& params, Rng& rng);

// First `per_class_counts[c]` test-split records of each class, in record order.
std::vector<StudyRecord> build_balanced_testset(const std::vector<StudyRecord>& records,
                                                std::array<int, 3> per_class_counts);

}  // namespace femur

#endif  // FEMUR_DATASET_HPP_
