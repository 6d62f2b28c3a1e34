#ifndef FEMUR_TESTS_CRITERIA_HPP_
#define FEMUR_TESTS_CRITERIA_HPP_

// Randomized checks shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <string>

#include "json.hpp"

namespace femur::criteria {

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Confusion, precision/recall/F1, AUC and mAP against brute-force oracles.
Outcome metric_oracles(int instances = 100, std::uint64_t seed = 1);
// Axis-aligned integer boxes versus integer slicing, identity, zero padding.
Outcome warp_exactness(int instances = 200, std::uint64_t seed = 2);
// class_loss and loc_loss gradients versus central differences.
Outcome loss_gradients(int instances = 50, std::uint64_t seed = 3, double step = 1e-5);
// No patient in two splits; counts within one patient of target.
Outcome split_safety(int pairs = 200, int patients = 1000, std::uint64_t seed = 4);

// Same structure, equal strings and booleans, numbers within `tol`
// (absolute below 1, relative above). On mismatch `where` names the path.
bool json_close(const nlohmann::json& a, const nlohmann::json& b, double tol, std::string* where);

}  // namespace femur::criteria

#endif  // FEMUR_TESTS_CRITERIA_HPP_
