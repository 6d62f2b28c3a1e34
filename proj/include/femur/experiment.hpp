#ifndef FEMUR_EXPERIMENT_HPP_
#define FEMUR_EXPERIMENT_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "femur/classification.hpp"
#include "femur/localization.hpp"
#include "femur/retrieval.hpp"
#include "femur/synth.hpp"
#include "femur/tsne.hpp"
#include "femur/verification.hpp"
#include "json.hpp"

namespace femur {

// The desk-scale synthetic benchmark: generate, split, train the localizer
// and both classifiers, then evaluate classification, localization, scale
// agreement and retrieval on the held-out test split.
struct BenchmarkConfig {
  synth::SynthConfig synth;
  std::array<double, 3> split_ratios{0.7, 0.1, 0.2};
  std::uint64_t split_seed = 0;
  LocalizerConfig localizer;
  ClassifierConfig classifier_three;
  ClassifierConfig classifier_two;
  // Start the two-class model from the trained three-class feature layers.
  bool two_class_from_three = true;
  std::vector<double> scales = default_scales();
  double flag_threshold = 1.0;
  std::vector<int> k_values = default_k_values();
  int precision_k = 10;
  int raw_pixel_size = 64;
  TsneConfig tsne;

  // The committed CPU profile.
  static BenchmarkConfig standard();
};

nlohmann::json to_json(const BenchmarkConfig& cfg);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);

struct BenchmarkResult {
  // Every reported number; reproducible under the same config.
  nlohmann::json report;
  // Wall-clock seconds per stage; not reproducible.
  nlohmann::json timing;
  // Relative path -> SHA-256 for every reproducible artifact.
  std::map<std::string, std::string> checksums;
};

// Layout under out_dir: data/ (images, manifest.jsonl, split_manifest.jsonl),
// models/ (localizer, classifier_three, classifier_two, index.bin,
// tsne.json), reports/ (benchmark.json, timing.json, tables and SVG plots).
BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const std::filesystem::path& out_dir,
                              std::ostream* progress = nullptr);

// Files excluded from reproducibility checksums (wall-clock content).
bool is_volatile_artifact(const std::filesystem::path& relative);
std::map<std::string, std::string> artifact_checksums(const std::filesystem::path& out_dir);

}  // namespace femur

#endif  // FEMUR_EXPERIMENT_HPP_
