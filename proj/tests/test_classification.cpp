#include <cmath>
#include <fstream>

#include "doctest.h"
#include "femur/classification.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace femur;
using doctest::Approx;
using femur::testing::TempDir;
using femur::testing::tiny_classifier_config;
using femur::testing::tiny_dataset;

TEST_CASE("softmax matches the double oracle and is shift invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = femur::testing::random_floats(rng, 3, 5.0);
    const auto p = softmax(z);
    const auto want = oracle::softmax(std::vector<double>(z.begin(), z.end()));
    double sum = 0;
    for (int j = 0; j < 3; ++j) {
      CHECK(p[j] == Approx(want[j]).epsilon(1e-12));
      sum += p[j];
    }
    CHECK(sum == Approx(1.0).epsilon(1e-14));
  }
  const std::vector<float> big{1000.0f, 999.0f, -1000.0f};
  const auto p = softmax(big);
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] == Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("argmax takes the lowest index on ties") {
  CHECK(argmax({0.2, 0.5, 0.3}) == 1);
  CHECK(argmax({0.4, 0.4, 0.2}) == 0);
  CHECK(argmax({0.1, 0.45, 0.45}) == 1);
}

TEST_CASE("class loss examples") {
  CHECK(class_loss({0, 1, 0}, {0.25, 0.5, 0.25}) == Approx(std::log(2.0)));
  CHECK(class_loss({1, 0}, {0.0, 1.0}) == Approx(-std::log(kProbabilityEpsilon)));
  CHECK(class_loss_batch({{1, 0}, {0, 1}}, {{0.5, 0.5}, {0.25, 0.75}}) ==
        Approx((std::log(2.0) - std::log(0.75)) / 2));
  CHECK_THROWS_AS(class_loss({1, 0}, {1.0}), std::invalid_argument);
  const std::vector<float> z{0.0f, 0.0f};
  const auto g = class_loss_gradient({1, 0}, z);
  CHECK(g[0] == Approx(-0.5));
  CHECK(g[1] == Approx(0.5));
}

TEST_CASE("config json round trip") {
  auto cfg = tiny_classifier_config(7);
  cfg.mode = ClassMode::kTwoClass;
  cfg.class_weighting = true;
  cfg.augmentation.scale_range = {0.5, 1.35};
  const auto back = classifier_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.mode == ClassMode::kTwoClass);
  CHECK(back.augmentation.scale_range.first == 0.5);
}

TEST_CASE("training, save/load and embeddings") {
  auto data = tiny_dataset(3, 5);
  const auto trained = train_classifier(data.samples, data.samples, tiny_classifier_config());
  const auto& model = trained.model;
  CHECK(trained.log.size() == 2);
  const Image crop = model.prepare(data.drawings[0].image, data.drawings[0].roi);
  CHECK(crop.height() == 32);
  const auto pred = model.predict(crop);
  CHECK(pred.probs.size() == 3);
  CHECK(pred.model_id == model.model_id());
  const auto emb = model.embed(crop);
  CHECK(emb.dim == model.embedding_dim());
  CHECK(static_cast<int>(emb.values.size()) == emb.dim);

  TempDir dir;
  model.save(dir.path(), trained.log);
  const auto loaded = ClassifierModel::load(dir.path());
  CHECK(loaded.model_id() == model.model_id());
  CHECK(loaded.predict(crop).probs == pred.probs);
  CHECK(loaded.embed(crop).values == emb.values);

  const auto again = train_classifier(data.samples, data.samples, tiny_classifier_config());
  CHECK(again.model.model_id() == model.model_id());
  auto par = tiny_classifier_config();
  par.execution = ExecutionMode::kParallel;
  CHECK(train_classifier(data.samples, data.samples, par).model.model_id() == model.model_id());
}

TEST_CASE("corrupt or mismatched artifacts are rejected") {
  TempDir dir;
  CHECK_THROWS_AS(ClassifierModel::load(dir.path()), ModelError);
  auto data = tiny_dataset(2, 6);
  const auto trained = train_classifier(data.samples, data.samples, tiny_classifier_config(1));
  trained.model.save(dir.path());
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    out << "junk";
  }
  CHECK_THROWS_AS(ClassifierModel::load(dir.path()), ModelError);
}

TEST_CASE("pretrained initialization") {
  auto data = tiny_dataset(2, 7);
  const auto three = train_classifier(data.samples, data.samples, tiny_classifier_config(1));
  auto cfg = tiny_classifier_config(1);
  cfg.mode = ClassMode::kTwoClass;
  cfg.pretrained = true;
  CHECK_THROWS_AS(train_classifier(data.samples, data.samples, cfg), std::invalid_argument);

  TempDir dir;
  three.model.save(dir.path());
  cfg.pretrained_weights = dir.path().string();
  const auto from_disk = train_classifier(data.samples, data.samples, cfg);
  const auto from_memory = train_classifier(data.samples, data.samples, cfg, &three.model);
  CHECK(from_disk.model.model_id() == from_memory.model.model_id());
  CHECK(from_disk.model.num_classes() == 2);

  cfg.architecture = "residual_small";
  CHECK_THROWS_AS(train_classifier(data.samples, data.samples, cfg, &three.model), ModelError);
}

TEST_CASE("training input checks") {
  auto data = tiny_dataset(2, 8);
  auto cfg = tiny_classifier_config(1);
  auto no_b = data.samples;
  std::erase_if(no_b, [](const auto& s) { return s.label == ClassLabel::kB; });
  CHECK_THROWS_AS(train_classifier(no_b, data.samples, cfg), std::invalid_argument);
  auto no_roi = data.samples;
  no_roi[1].roi.reset();
  CHECK_THROWS_AS(train_classifier(no_roi, data.samples, cfg), std::invalid_argument);
  cfg.input_source = InputSource::kFull;
  CHECK_NOTHROW(train_classifier(no_roi, data.samples, cfg));
}

TEST_CASE("pipeline precedence: manual box, then localizer, then full image") {
  auto data = tiny_dataset(2, 9);
  const auto cls = train_classifier(data.samples, data.samples, tiny_classifier_config(1));
  auto lcfg = LocalizerConfig::tiny();
  lcfg.epochs = 1;
  lcfg.batch_size = 2;
  std::vector<LocalizationSample> ls;
  for (auto& d : data.drawings) ls.push_back({&d.image, d.roi});
  const auto loc = train_localizer(ls, ls, lcfg);
  const Image& img = data.drawings[0].image;
  const ROIParams manual{0.5, 0.5, 0.5};

  const auto m = predict_pipeline(img, cls.model, &loc.model, manual);
  CHECK(m.roi_origin == RoiOrigin::kManual);
  CHECK(*m.roi == manual);
  CHECK(m.prediction.source == InputSource::kManualRoi);
  CHECK(m.classifier_input == warp(img, manual, 32));

  const auto a = predict_pipeline(img, cls.model, &loc.model);
  CHECK(a.roi_origin == RoiOrigin::kAuto);
  CHECK(*a.roi == loc.model.predict_roi(img));
  CHECK(a.prediction.source == InputSource::kAutoRoi);

  const auto f = predict_pipeline(img, cls.model, nullptr);
  CHECK(f.roi_origin == RoiOrigin::kNone);
  CHECK(!f.roi);
  CHECK(f.classifier_input == resize(img, 32, 32));

  auto full_cfg = tiny_classifier_config(1);
  full_cfg.input_source = InputSource::kFull;
  const auto full = train_classifier(data.samples, data.samples, full_cfg);
  CHECK_THROWS_AS(predict_pipeline(img, full.model, &loc.model), std::invalid_argument);
  CHECK_THROWS_AS(predict_pipeline(img, full.model, nullptr, manual), std::invalid_argument);
}

TEST_CASE("roi jitter") {
  Rng rng(2);
  const Image img = femur::testing::random_image(rng, 60, 60);
  const ROIParams roi{0.5, 0.5, 0.5};
  CHECK(jitter_roi_crop(img, roi, {}, 30) == warp(img, roi, 30));
  // Shifting by whole output pixels at unit pixel pitch is a pure translation.
  const Image shifted = jitter_roi_crop(img, roi, {2.0, -3.0, 0.0, 1.0}, 30);
  const Image base = warp(img, {0.5 + 2.0 / 60, 0.5 - 3.0 / 60, 0.5}, 30);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(shifted.pixels()[i] == Approx(base.pixels()[i]).epsilon(1e-6));
  }
}
