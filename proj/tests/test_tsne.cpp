#include <cmath>

#include "doctest.h"
#include "femur/tsne.hpp"
#include "support.hpp"

using namespace femur;

namespace {

// Two Gaussian blobs in `dim` dimensions, `per` points each, far apart.
std::vector<float> two_blobs(Rng& rng, int per, int dim) {
  std::vector<float> pts;
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < per; ++i) {
      for (int d = 0; d < dim; ++d) pts.push_back(static_cast<float>(rng.normal() + (b ? 8.0 : 0.0)));
    }
  }
  return pts;
}

// Every point's nearest embedded neighbor lies in its own blob.
bool separated(const std::vector<std::array<double, 2>>& y, int per) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    double best = INFINITY;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i == j) continue;
      const double d = std::hypot(y[i][0] - y[j][0], y[i][1] - y[j][1]);
      if (d < best) best = d, arg = j;
    }
    if ((static_cast<int>(i) < per) != (static_cast<int>(arg) < per)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("effective perplexity") {
  CHECK(effective_perplexity(100, 30.0) == 30.0);
  CHECK(effective_perplexity(31, 30.0) == 10.0);
}

TEST_CASE("shape, determinism and serial/parallel agreement") {
  Rng rng(1);
  const auto pts = two_blobs(rng, 12, 5);
  TsneConfig cfg;
  cfg.iterations = 200;
  cfg.seed = 7;
  const auto a = tsne_project(pts, 24, 5, cfg);
  REQUIRE(a.size() == 24);
  for (const auto& p : a) CHECK((std::isfinite(p[0]) && std::isfinite(p[1])));
  CHECK(tsne_project(pts, 24, 5, cfg) == a);
  cfg.execution = ExecutionMode::kParallel;
  CHECK(tsne_project(pts, 24, 5, cfg) == a);
  cfg.seed = 8;
  cfg.execution = ExecutionMode::kReference;
  CHECK(tsne_project(pts, 24, 5, cfg) != a);
  CHECK_THROWS_AS(tsne_project(std::vector<float>(9, 0.0f), 3, 3, cfg), std::invalid_argument);
}

TEST_CASE("two clusters stay separated across seeds") {
  int ok = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto pts = two_blobs(rng, 15, 8);
    TsneConfig cfg;
    cfg.iterations = 300;
    cfg.seed = seed;
    ok += separated(tsne_project(pts, 30, 8, cfg), 15);
  }
  INFO("separated in " << ok << " of 20 seeds");
  CHECK(ok >= 19);
}

TEST_CASE("table round trip") {
  std::vector<TsnePoint> pts{{1.5, -2.0, 1, "left", "a.png"}, {0.0, 3.25, 0, "right", "b.png"}};
  const auto back = tsne_points_from_json(tsne_table_json(pts, {"n", "a", "b"}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].x == 1.5);
  CHECK(back[1].item_ref == "b.png");
  CHECK(back[0].side == "left");
  CHECK(tsne_table_csv(pts).find("b.png") != std::string::npos);
}
