#ifndef FEMUR_TSNE_HPP_
#define FEMUR_TSNE_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "femur/kernels.hpp"
#include "json.hpp"

namespace femur {

struct TsneConfig {
  double perplexity = 30.0;  // capped at (n - 1) / 3
  int iterations = 1000;
  // <= 0 picks n / early_exaggeration, which stays stable for small n.
  double learning_rate = 0.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
  ExecutionMode execution = ExecutionMode::kReference;
};

double effective_perplexity(int n, double requested);
double effective_learning_rate(int n, const TsneConfig& cfg);

// Exact t-SNE of n row-major points of width dim. Throws for n < 4.
std::vector<std::array<double, 2>> tsne_project(const std::vector<float>& points, int n,
                                                int dim, const TsneConfig& cfg = {});
std::vector<std::array<double, 2>> tsne_project(const std::vector<std::vector<float>>& points,
                                                const TsneConfig& cfg = {});

struct TsnePoint {
  double x = 0.0;
  double y = 0.0;
  int label = 0;
  std::string side;
  std::string item_ref;
};

nlohmann::json tsne_table_json(const std::vector<TsnePoint>& points,
                               const std::vector<std::string>& label_names);
std::string tsne_table_csv(const std::vector<TsnePoint>& points);
std::vector<TsnePoint> tsne_points_from_json(const nlohmann::json& j);

}  // namespace femur

#endif  // FEMUR_TSNE_HPP_
