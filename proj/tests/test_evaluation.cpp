#include <cmath>
#include <limits>

#include "criteria.hpp"
#include "doctest.h"
#include "femur/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace femur;
using namespace femur::eval;
using doctest::Approx;

TEST_CASE("metrics agree with brute-force oracles") {
  const auto o = criteria::metric_oracles();
  INFO(o.detail);
  CHECK(o.pass);
}

TEST_CASE("hand-computed binary example") {
  ConfusionMatrix cm{{{50, 5}, {10, 35}}, {"not_fractured", "abnormal"}};
  const auto m = metrics_from_confusion(cm);
  CHECK(m.overall_accuracy == Approx(0.85));
  CHECK(m.per_class[0].precision == Approx(50.0 / 60));
  CHECK(m.per_class[0].recall == Approx(50.0 / 55));
  CHECK(m.per_class[0].f1 == Approx(100.0 / 115));
  CHECK(m.per_class[1].precision == Approx(35.0 / 40));
  CHECK(m.per_class[1].recall == Approx(35.0 / 45));
  CHECK(m.per_class[1].f1 == Approx(70.0 / 85));
  CHECK(m.per_class[0].support == 55);
  CHECK(m.average.f1 == Approx((100.0 / 115 + 70.0 / 85) / 2));
  CHECK(!m.zero_division);
}

TEST_CASE("constant predictor on balanced classes") {
  std::vector<int> truth, pred;
  for (int i = 0; i < 30; ++i) {
    truth.push_back(i % 3);
    pred.push_back(0);
  }
  const auto m = metrics_from_confusion(confusion(pred, truth, 3));
  CHECK(m.average.f1 == Approx(1.0 / 6));
  CHECK(m.overall_accuracy == Approx(1.0 / 3));
  CHECK(m.zero_division);
}

TEST_CASE("confusion input validation") {
  CHECK_THROWS_AS(confusion({0, 1}, {0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(confusion({0, 2}, {0, 1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(confusion({0}, {0}, 1), std::invalid_argument);
  CHECK_THROWS_AS(metrics_from_confusion(confusion({}, {}, 2)), std::invalid_argument);
}

TEST_CASE("roc curve shape and extremes") {
  const std::vector<int> truth{0, 0, 1, 1};
  const auto perfect = roc_auc({0.1, 0.2, 0.8, 0.9}, truth);
  CHECK(perfect.auc == 1.0);
  CHECK(perfect.curve.front().fpr == 0.0);
  CHECK(perfect.curve.front().tpr == 0.0);
  CHECK(perfect.curve.back().fpr == 1.0);
  CHECK(perfect.curve.back().tpr == 1.0);
  CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, truth).auc == 0.0);
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, truth).auc == 0.5);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auc is invariant to sample order") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = femur::testing::uniform_int(rng, 4, 40);
    std::vector<std::pair<double, int>> data(n);
    for (int i = 0; i < n; ++i) data[i] = {std::round(rng.uniform() * 5) / 5, i % 2};
    auto split = [](const auto& d) {
      std::vector<double> s;
      std::vector<int> t;
      for (const auto& [x, y] : d) {
        s.push_back(x);
        t.push_back(y);
      }
      return std::pair(s, t);
    };
    const auto [s1, t1] = split(data);
    rng.shuffle(data);
    const auto [s2, t2] = split(data);
    CHECK(roc_auc(s1, t1).auc == Approx(roc_auc(s2, t2).auc).epsilon(1e-12));
  }
}

TEST_CASE("roc json round trip keeps the infinite threshold") {
  const auto roc = roc_auc({0.3, 0.6, 0.6, 0.9}, {0, 1, 0, 1});
  const auto back = roc_from_json(to_json(roc));
  REQUIRE(back.curve.size() == roc.curve.size());
  CHECK(std::isinf(back.curve.front().threshold));
  for (std::size_t i = 0; i < roc.curve.size(); ++i) {
    CHECK(back.curve[i].fpr == roc.curve[i].fpr);
    CHECK(back.curve[i].tpr == roc.curve[i].tpr);
  }
  CHECK(back.auc == roc.auc);
}

TEST_CASE("attach auc") {
  MetricsReport two = metrics_from_confusion(confusion({0, 1, 1, 0}, {0, 1, 0, 1}, 2));
  const auto ovr2 = roc_auc_ovr({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}}, {0, 1, 0, 1}, 2);
  attach_auc(two, ovr2);
  REQUIRE(two.auc.has_value());
  CHECK(*two.auc == ovr2.per_class[1].auc);
  CHECK(*two.auc == 1.0);
}

TEST_CASE("expert operating points") {
  const std::vector<int> truth{0, 0, 1, 1};
  const auto pts = operating_points({0, 1, 1, 1}, truth, 2);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].sensitivity == 1.0);
  CHECK(pts[0].specificity == 0.5);

  const auto e = expert_points({{"r1", 1, {0, 1, 1, 1}},
                                {"r1", 2, {0, 0, 1, 0}},
                                {"r2", 1, {0, 0, 1, 1}},
                                {"r2", 2, {0, 0, 1, 1}}},
                               truth, 2);
  REQUIRE(e.readers.size() == 2);
  CHECK(e.readers[0].points[0].sensitivity == Approx(0.75));
  CHECK(e.readers[0].points[0].specificity == Approx(0.75));
  CHECK(e.average[0].sensitivity == Approx(0.875));
  CHECK(e.average[0].specificity == Approx(0.875));

  const auto back = expert_points_from_json(to_json(e));
  CHECK(back.average[0].sensitivity == e.average[0].sensitivity);
  CHECK(back.readings.size() == 4);

  CHECK_THROWS_AS(expert_points({{"r1", 1, {0, 1, 1, 1}}}, truth, 2), std::invalid_argument);
  CHECK_THROWS_AS(expert_points({{"r1", 1, {0, 1}}, {"r1", 2, {0, 1}}}, truth, 2),
                  std::invalid_argument);
  CHECK(operating_points({0, 1, 2}, {0, 1, 2}, 3).size() == 3);
}
