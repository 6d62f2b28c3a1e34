#ifndef FEMUR_TESTS_FIXTURES_HPP_
#define FEMUR_TESTS_FIXTURES_HPP_

// Small trained models for tests that need a real network.

#include <vector>

#include "femur/classification.hpp"
#include "femur/synth.hpp"

namespace femur::testing {

struct TinyDataset {
  std::vector<synth::FemurDrawing> drawings;
  std::vector<ClassificationSample> samples;
};

// `per_class` drawings of each class on an 80 px canvas.
inline TinyDataset tiny_dataset(int per_class, std::uint64_t seed) {
  TinyDataset d;
  Rng rng(seed);
  for (int i = 0; i < per_class * 3; ++i) {
    d.drawings.push_back(
        synth::draw_femur(80, 80, i % 2 ? 1 : -1, static_cast<ClassLabel>(i % 3), rng));
  }
  for (int i = 0; i < per_class * 3; ++i) {
    d.samples.push_back({&d.drawings[i].image, static_cast<ClassLabel>(i % 3), d.drawings[i].roi});
  }
  return d;
}

inline ClassifierConfig tiny_classifier_config(int epochs = 2) {
  auto cfg = ClassifierConfig::tiny();
  cfg.input_size = 32;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = 3;
  return cfg;
}

}  // namespace femur::testing

#endif  // FEMUR_TESTS_FIXTURES_HPP_
