#include "doctest.h"
#include "femur/verification.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace femur;
using doctest::Approx;

namespace {

// Labels crops by their position in the batch.
CropLabeler by_position(std::vector<int> labels) {
  return [labels](const std::vector<const Image*>& crops) {
    std::vector<int> out;
    for (std::size_t i = 0; i < crops.size(); ++i) out.push_back(labels.at(i));
    return out;
  };
}

ScaleAgreementReport report(int base, std::vector<int> labels, int truth) {
  ScaleAgreementReport r;
  r.scales = default_scales();
  r.per_scale_labels = labels;
  r.base_label = base;
  r.support = std::count(labels.begin(), labels.end(), base) / 6.0;
  r.truth = truth;
  r.correct_support = std::count(labels.begin(), labels.end(), truth) / 6.0;
  return r;
}

}  // namespace

TEST_CASE("default scales") {
  CHECK(default_scales() == std::vector<double>{0.75, 1.00, 1.25, 1.50, 1.75, 2.00});
}

TEST_CASE("scale_roi keeps the center") {
  const auto p = scale_roi({0.3, 0.6, 0.4}, 1.5);
  CHECK(p.t_r == 0.3);
  CHECK(p.t_c == 0.6);
  CHECK(p.s == Approx(0.6));
  CHECK_THROWS_AS(scale_roi({0.3, 0.6, 0.4}, 0.0), std::invalid_argument);
}

TEST_CASE("constant labeler gives full support") {
  Rng rng(1);
  const Image img = femur::testing::random_image(rng, 40, 40);
  const auto r = scale_agreement(by_position({2, 2, 2, 2, 2, 2}), 16, img, {0.5, 0.5, 0.3},
                                 default_scales(), 2);
  CHECK(r.support == 1.0);
  CHECK(*r.correct_support == 1.0);
  CHECK(r.base_label == 2);
  CHECK(!flag_uncertain(r));
}

TEST_CASE("a flip at the largest scale gives 5/6 support") {
  Rng rng(1);
  const Image img = femur::testing::random_image(rng, 40, 40);
  const auto r = scale_agreement(by_position({1, 1, 1, 1, 1, 0}), 16, img, {0.5, 0.5, 0.3},
                                 default_scales(), 0);
  CHECK(r.base_label == 1);
  CHECK(r.support == Approx(5.0 / 6));
  CHECK(*r.correct_support == Approx(1.0 / 6));
  CHECK(flag_uncertain(r));
  CHECK(!flag_uncertain(r, 0.8));
  CHECK_THROWS_AS(flag_uncertain(r, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(flag_uncertain(r, 1.5), std::invalid_argument);
}

TEST_CASE("the base crop is added when 1.0 is not a listed scale") {
  Rng rng(1);
  const Image img = femur::testing::random_image(rng, 40, 40);
  std::size_t seen = 0;
  CropLabeler count = [&seen](const std::vector<const Image*>& crops) {
    seen = crops.size();
    std::vector<int> out(crops.size(), 0);
    out.back() = 1;
    return out;
  };
  const auto r = scale_agreement(count, 16, img, {0.5, 0.5, 0.3}, {0.8, 1.2});
  CHECK(seen == 3);
  CHECK(r.base_label == 1);
  CHECK(r.support == 0.0);
  CHECK(r.per_scale_labels.size() == 2);
}

TEST_CASE("crops follow the scaled boxes") {
  Rng rng(3);
  const Image img = femur::testing::random_image(rng, 50, 50);
  const ROIParams p{0.5, 0.5, 0.4};
  std::vector<Image> got;
  CropLabeler keep = [&got](const std::vector<const Image*>& crops) {
    for (const Image* c : crops) got.push_back(*c);
    return std::vector<int>(crops.size(), 0);
  };
  scale_agreement(keep, 12, img, p);
  REQUIRE(got.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(got[i] == warp(img, scale_roi(p, default_scales()[i]), 12));
}

TEST_CASE("support summary statistics") {
  const auto s = summarize_support("all", {1.0, 0.5, 0.0, 1.0});
  CHECK(s.count == 4);
  CHECK(s.mean == Approx(0.625));
  CHECK(s.median == Approx(0.75));
  CHECK(s.min == 0.0);
  CHECK(s.max == 1.0);
  CHECK(s.q1 == Approx(0.375));
  CHECK(s.q3 == 1.0);
  CHECK(s.stddev == Approx(std::sqrt((0.140625 + 0.015625 + 0.390625 + 0.140625) / 4)));
  CHECK(summarize_support("empty", {}).count == 0);
  const auto back = support_summary_from_json(to_json(s));
  CHECK(back.partition == "all");
  CHECK(back.q1 == s.q1);
}

TEST_CASE("support table and flag outcome") {
  const std::vector<ScaleAgreementReport> reps{
      report(0, {0, 0, 0, 0, 0, 0}, 0),  // confident, correct
      report(1, {1, 1, 1, 1, 1, 1}, 1),  // confident, correct
      report(1, {1, 1, 2, 2, 2, 2}, 2),  // flagged, wrong
      report(0, {0, 0, 0, 0, 0, 1}, 0),  // flagged, correct
  };
  const auto tab = support_table(reps);
  REQUIRE(tab.size() == 3);
  CHECK(tab[0].partition == "all");
  CHECK(tab[0].count == 4);
  CHECK(tab[1].partition == "correct");
  CHECK(tab[1].count == 3);
  CHECK(tab[2].count == 1);
  CHECK(tab[2].mean == Approx(4.0 / 6));
  const auto fo = flag_outcome(reps);
  CHECK(fo.flagged == 2);
  CHECK(fo.flagged_errors == 1);
  CHECK(fo.unflagged == 2);
  CHECK(fo.unflagged_errors == 0);
  CHECK(fo.flagged_error_rate() == 0.5);
  CHECK(fo.unflagged_error_rate() == 0.0);
  CHECK(support_table_csv(tab).find("partition") != std::string::npos);
}

TEST_CASE("scale agreement on a trained model") {
  auto data = femur::testing::tiny_dataset(2, 4);
  const auto t = train_classifier(data.samples, data.samples, femur::testing::tiny_classifier_config(1));
  const auto& d = data.drawings[0];
  const auto r = scale_agreement(t.model, d.image, d.roi, default_scales(), 0);
  CHECK(r.per_scale_labels.size() == 6);
  CHECK(r.base_label == t.model.predict(warp(d.image, d.roi, 32)).label);
  CHECK(to_json(r).contains("support"));
}
