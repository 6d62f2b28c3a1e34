#include "femur/classification.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "femur/checksum.hpp"
#include "femur/evaluation.hpp"
#include "training.hpp"

namespace femur {

using nlohmann::json;

std::string_view to_string(InputSource source) {
  switch (source) {
    case InputSource::kFull: return "full";
    case InputSource::kManualRoi: return "manual_roi";
    case InputSource::kAutoRoi: return "auto_roi";
  }
  return "?";
}

InputSource parse_input_source(std::string_view text) {
  if (text == "full") return InputSource::kFull;
  if (text == "manual_roi") return InputSource::kManualRoi;
  if (text == "auto_roi") return InputSource::kAutoRoi;
  throw std::invalid_argument("unknown input source: " + std::string(text));
}

std::string_view to_string(RoiOrigin origin) {
  switch (origin) {
    case RoiOrigin::kNone: return "none";
    case RoiOrigin::kAuto: return "auto";
    case RoiOrigin::kManual: return "manual";
  }
  return "?";
}

ClassifierConfig ClassifierConfig::tiny() {
  ClassifierConfig c;
  c.architecture = "tiny_cnn";
  c.input_size = 64;
  return c;
}

json to_json(const ClassifierConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"input_source", std::string(to_string(c.input_source))},
          {"architecture", c.architecture},
          {"input_size", c.input_size},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"learning_rate", c.learning_rate},
          {"lr_decay_milestones", c.lr_schedule.milestones},
          {"lr_decay_factor", c.lr_schedule.factor},
          {"weight_decay", c.weight_decay},
          {"pretrained", c.pretrained},
          {"pretrained_weights", c.pretrained_weights},
          {"class_weighting", c.class_weighting},
          {"augment", c.augment},
          {"augmentation",
           {{"max_translation", c.augmentation.max_translation},
            {"max_rotation", c.augmentation.max_rotation},
            {"scale_range", {c.augmentation.scale_range.first, c.augmentation.scale_range.second}}}},
          {"seed", c.seed},
          {"execution", std::string(to_string(c.execution))}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.mode = parse_class_mode(j.value("mode", std::string(to_string(c.mode))));
  c.input_source = parse_input_source(j.value("input_source", std::string(to_string(c.input_source))));
  c.architecture = j.value("architecture", c.architecture);
  c.input_size = j.value("input_size", c.input_size);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_schedule.milestones = j.value("lr_decay_milestones", c.lr_schedule.milestones);
  c.lr_schedule.factor = j.value("lr_decay_factor", c.lr_schedule.factor);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.pretrained = j.value("pretrained", c.pretrained);
  c.pretrained_weights = j.value("pretrained_weights", c.pretrained_weights);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augmentation")) {
    const json& a = j["augmentation"];
    c.augmentation.max_translation = a.value("max_translation", c.augmentation.max_translation);
    c.augmentation.max_rotation = a.value("max_rotation", c.augmentation.max_rotation);
    if (a.contains("scale_range")) {
      c.augmentation.scale_range = {a["scale_range"].at(0).get<double>(),
                                    a["scale_range"].at(1).get<double>()};
    }
  }
  c.seed = j.value("seed", c.seed);
  c.augmentation.seed = c.seed;
  c.execution = parse_execution_mode(j.value("execution", std::string("reference")));
  return c;
}

std::vector<double> softmax(std::span<const float> scores) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float s : scores) mx = std::max(mx, static_cast<double>(s));
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(static_cast<double>(scores[i]) - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

int argmax(const std::vector<double>& values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

double class_loss(const std::vector<double>& y, const std::vector<double>& p) {
  if (y.size() != p.size() || y.empty()) throw std::invalid_argument("class_loss: dimension mismatch");
  double loss = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] != 0.0) loss -= y[j] * std::log(std::max(p[j], kProbabilityEpsilon));
  }
  return loss;
}

double class_loss_batch(const std::vector<std::vector<double>>& y,
                        const std::vector<std::vector<double>>& p) {
  if (y.size() != p.size() || y.empty()) throw std::invalid_argument("class_loss: batch size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += class_loss(y[i], p[i]);
  return total / y.size();
}

std::vector<double> class_loss_gradient(const std::vector<double>& y,
                                        std::span<const float> scores) {
  if (y.size() != scores.size()) throw std::invalid_argument("class_loss: dimension mismatch");
  std::vector<double> g = softmax(scores);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] -= y[j];
  return g;
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg, Normalization norm)
    : cfg_(std::move(cfg)), norm_(norm),
      net_(std::make_unique<nn::Network>(nn::make_architecture(
          cfg_.architecture, cfg_.input_size, femur::num_classes(cfg_.mode)))) {
  if (net_->embedding_width() <= 0) throw ModelError("classifier architecture has no embedding layer");
  net_->initialize(cfg_.seed);
  refresh_model_id();
}

void ClassifierModel::refresh_model_id() { model_id_ = model_id_for(net_->serialize_weights()); }

Image ClassifierModel::prepare(const Image& image, const std::optional<ROIParams>& roi) const {
  if (roi && uses_roi(cfg_.input_source)) return warp(image, *roi, cfg_.input_size);
  return resize(image, cfg_.input_size, cfg_.input_size);
}

nn::Tensor ClassifierModel::to_input(const std::vector<const Image*>& images) const {
  std::vector<Image> resized;
  resized.reserve(images.size());
  std::vector<const Image*> ptrs;
  for (const Image* img : images) {
    if (img == nullptr || img->empty()) throw std::invalid_argument("classifier input is empty");
    if (img->height() == cfg_.input_size && img->width() == cfg_.input_size) {
      ptrs.push_back(img);
    } else {
      resized.push_back(resize(*img, cfg_.input_size, cfg_.input_size));
      ptrs.push_back(nullptr);
    }
  }
  std::size_t r = 0;
  for (auto& p : ptrs) {
    if (p == nullptr) p = &resized[r++];
  }
  return to_batch(ptrs, norm_);
}

std::vector<Prediction> ClassifierModel::predict_batch(const std::vector<const Image*>& images) const {
  std::vector<Prediction> out;
  if (images.empty()) return out;
  const nn::Tensor scores = net_->infer(to_input(images), Kernels(cfg_.execution));
  for (int i = 0; i < scores.shape.n; ++i) {
    Prediction p;
    p.probs = softmax(scores.sample(i));
    p.label = argmax(p.probs);
    p.source = cfg_.input_source;
    p.model_id = model_id_;
    out.push_back(std::move(p));
  }
  return out;
}

Prediction ClassifierModel::predict(const Image& image) const {
  return predict_batch({&image}).front();
}

std::vector<EmbeddingVector> ClassifierModel::embed_batch(
    const std::vector<const Image*>& images) const {
  std::vector<EmbeddingVector> out;
  if (images.empty()) return out;
  const nn::Tensor e = net_->embed(to_input(images), Kernels(cfg_.execution));
  for (int i = 0; i < e.shape.n; ++i) {
    auto v = e.sample(i);
    out.push_back({std::vector<float>(v.begin(), v.end()), static_cast<int>(v.size()), model_id_});
  }
  return out;
}

EmbeddingVector ClassifierModel::embed(const Image& image) const {
  return embed_batch({&image}).front();
}

Prediction predict(const ClassifierModel& model, const Image& image) {
  return model.predict(image);
}

EmbeddingVector extract_embedding(const ClassifierModel& model, const Image& image) {
  return model.embed(image);
}

void ClassifierModel::save(const std::filesystem::path& dir,
                           const std::vector<TrainingLogEntry>& log) const {
  std::filesystem::create_directories(dir);
  const auto blob = net_->serialize_weights();
  write_file_bytes(dir / ArtifactFiles::kWeights, blob);
  json cfg = {{"schema_version", kArtifactSchemaVersion},
              {"kind", "classifier"},
              {"model_id", model_id_for(blob)},
              {"architecture", architecture_to_json(net_->architecture())},
              {"normalization", {{"mean", norm_.mean}, {"stddev", norm_.stddev}}},
              {"label_map", label_names()},
              {"embedding_dim", embedding_dim()},
              {"config", to_json(cfg_)}};
  write_json_file(dir / ArtifactFiles::kConfig, cfg);
  if (!log.empty()) write_training_log(dir / ArtifactFiles::kLog, log);
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& dir) {
  try {
    const json j = read_json_file(dir / ArtifactFiles::kConfig);
    if (j.at("schema_version").get<int>() != kArtifactSchemaVersion) {
      throw ModelError("unsupported artifact schema version");
    }
    if (j.at("kind").get<std::string>() != "classifier") {
      throw ModelError("artifact is not a classifier: " + dir.string());
    }
    ClassifierModel m(classifier_config_from_json(j.at("config")),
                      {j.at("normalization").at("mean").get<double>(),
                       j.at("normalization").at("stddev").get<double>()});
    if (j.at("embedding_dim").get<int>() != m.embedding_dim()) {
      throw ModelError("embedding_dim does not match the architecture");
    }
    m.net_->deserialize_weights(read_file_bytes(dir / ArtifactFiles::kWeights));
    m.refresh_model_id();
    return m;
  } catch (const ModelError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelError("corrupt classifier artifact at " + dir.string() + ": " + e.what());
  }
}

Image jitter_roi_crop(const Image& image, const ROIParams& roi, const AugmentTransform& t,
                      int out_size) {
  const double side = roi.s * std::min(image.height(), image.width());
  const double px_per_out = side / out_size;
  const ROIParams moved{roi.t_r + t.shift_row * px_per_out / image.height(),
                        roi.t_c + t.shift_col * px_per_out / image.width(), roi.s / t.scale};
  Image crop = warp(image, moved, out_size);
  if (t.rotation_deg == 0.0) return crop;
  return apply_transform(crop, {0.0, 0.0, t.rotation_deg, 1.0});
}

TrainedClassifier train_classifier(const std::vector<ClassificationSample>& train,
                                   const std::vector<ClassificationSample>& val,
                                   const ClassifierConfig& cfg,
                                   const ClassifierModel* init_from) {
  const int k = num_classes(cfg.mode);
  auto gather = [&](const std::vector<ClassificationSample>& set, const char* name) {
    std::vector<Image> inputs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& s = set[i];
      if (uses_roi(cfg.input_source)) {
        if (!s.roi) {
          throw std::invalid_argument(std::string(name) + " sample " + std::to_string(i) +
                                      " has no roi but input_source is " +
                                      std::string(to_string(cfg.input_source)));
        }
        inputs.push_back(warp(*s.image, *s.roi, cfg.input_size));
      } else {
        inputs.push_back(resize(*s.image, cfg.input_size, cfg.input_size));
      }
      labels.push_back(class_index(s.label, cfg.mode));
    }
    return std::pair(std::move(inputs), std::move(labels));
  };
  auto [train_x, train_y] = gather(train, "training");
  auto [val_x, val_y] = gather(val, "validation");

  std::vector<int> class_counts(k, 0);
  for (int y : train_y) ++class_counts[y];
  for (int c = 0; c < k; ++c) {
    if (class_counts[c] == 0) {
      throw std::invalid_argument("class '" + class_names(cfg.mode)[c] +
                                  "' is absent from the training split");
    }
  }
  std::vector<double> class_weight(k, 1.0);
  if (cfg.class_weighting) {
    for (int c = 0; c < k; ++c) {
      class_weight[c] = static_cast<double>(train_y.size()) / (k * class_counts[c]);
    }
  }

  ClassifierModel model(cfg, compute_normalization(train_x));
  if (cfg.pretrained) {
    if (init_from == nullptr && cfg.pretrained_weights.empty()) {
      throw std::invalid_argument("pretrained=true needs pretrained_weights (a classifier artifact)");
    }
    std::optional<ClassifierModel> loaded;
    if (init_from == nullptr) {
      init_from = &loaded.emplace(ClassifierModel::load(cfg.pretrained_weights));
    }
    const ClassifierModel& init = *init_from;
    if (init.config().architecture != cfg.architecture ||
        init.config().input_size != cfg.input_size) {
      throw ModelError("pretrained artifact architecture does not match");
    }
    // Feature layers transfer; the output layer is kept when the class count
    // matches and re-initialized otherwise.
    auto dst = model.network().parameters();
    auto src = init.network().parameters();
    const std::size_t keep = init.num_classes() == k ? src.size() : src.size() - 2;
    for (std::size_t t = 0; t < keep; ++t) std::copy(src[t].begin(), src[t].end(), dst[t].begin());
  }
  const Kernels kernels(cfg.execution);

  auto loss_of = [&](const nn::Tensor& out, const std::vector<int>& labels,
                     const std::vector<int>& idx, nn::Tensor* grad, bool weighted) {
    double total = 0.0;
    const double inv = 1.0 / idx.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto scores = out.sample(static_cast<int>(b));
      std::vector<double> y(k, 0.0);
      y[labels[idx[b]]] = 1.0;
      const double w = weighted ? class_weight[labels[idx[b]]] : 1.0;
      total += w * class_loss(y, softmax(scores));
      if (grad != nullptr) {
        const auto g = class_loss_gradient(y, scores);
        auto gs = grad->sample(static_cast<int>(b));
        for (int j = 0; j < k; ++j) gs[j] = static_cast<float>(w * g[j] * inv);
      }
    }
    return total * inv;
  };
  auto batch_of = [&](const std::vector<Image>& xs, const std::vector<int>& idx) {
    std::vector<const Image*> ptrs;
    for (int i : idx) ptrs.push_back(&xs[i]);
    return to_batch(ptrs, model.normalization());
  };

  detail::FitOptions opt{cfg.epochs, cfg.batch_size,
                         {cfg.learning_rate, cfg.momentum, cfg.weight_decay},
                         cfg.lr_schedule, cfg.seed};
  detail::FitHooks hooks;
  hooks.make_input = [&](const std::vector<int>& idx, Rng& rng) {
    if (!cfg.augment) return batch_of(train_x, idx);
    std::vector<Image> augmented;
    augmented.reserve(idx.size());
    for (int i : idx) {
      if (uses_roi(cfg.input_source)) {
        const AugmentTransform t =
            sample_transform(cfg.augmentation, cfg.input_size, cfg.input_size, rng);
        augmented.push_back(jitter_roi_crop(*train[i].image, *train[i].roi, t, cfg.input_size));
      } else {
        augmented.push_back(augment(train_x[i], cfg.augmentation, rng).image);
      }
    }
    std::vector<const Image*> ptrs;
    for (const auto& a : augmented) ptrs.push_back(&a);
    return to_batch(ptrs, model.normalization());
  };
  hooks.loss = [&](const nn::Tensor& out, const std::vector<int>& idx, nn::Tensor& grad) {
    return loss_of(out, train_y, idx, &grad, true);
  };
  hooks.validate = [&](const nn::Network& net) -> std::pair<double, double> {
    const auto& xs = val_x.empty() ? train_x : val_x;
    const auto& ys = val_x.empty() ? train_y : val_y;
    double total = 0.0;
    std::vector<int> preds;
    for (std::size_t first = 0; first < xs.size(); first += 32) {
      std::vector<int> idx;
      for (std::size_t i = first; i < std::min(xs.size(), first + 32); ++i) idx.push_back(static_cast<int>(i));
      const nn::Tensor out = net.infer(batch_of(xs, idx), kernels);
      total += loss_of(out, ys, idx, nullptr, false) * idx.size();
      for (int b = 0; b < out.shape.n; ++b) preds.push_back(argmax(softmax(out.sample(b))));
    }
    const auto report = eval::metrics_from_confusion(eval::confusion(preds, ys, k));
    return {total / xs.size(), report.average.f1};
  };
  hooks.better = [](const TrainingLogEntry& cand, const TrainingLogEntry& best) {
    if (cand.val_metric != best.val_metric) return cand.val_metric > best.val_metric;
    return cand.val_loss < best.val_loss;
  };
  try {
    auto log = detail::fit(model.network(), static_cast<int>(train_x.size()), opt, hooks, kernels);
    model.refresh_model_id();
    return {std::move(model), std::move(log)};
  } catch (const detail::TrainingError& e) {
    throw ModelError(std::string("classifier training failed: ") + e.what());
  }
}

PipelineResult predict_pipeline(const Image& image, const ClassifierModel& classifier,
                                const LocalizerModel* localizer,
                                const std::optional<ROIParams>& manual_roi) {
  const InputSource src = classifier.config().input_source;
  if ((localizer != nullptr || manual_roi) && !uses_roi(src)) {
    throw std::invalid_argument(
        "incompatible model pairing: classifier was trained on full radiographs "
        "but an ROI was requested");
  }
  PipelineResult out;
  if (manual_roi) {
    out.roi = *manual_roi;
    out.roi_origin = RoiOrigin::kManual;
  } else if (localizer != nullptr) {
    out.roi = localizer->predict_roi(image);
    out.roi_origin = RoiOrigin::kAuto;
  }
  out.classifier_input = out.roi ? warp(image, *out.roi, classifier.config().input_size)
                                 : resize(image, classifier.config().input_size,
                                          classifier.config().input_size);
  out.prediction = classifier.predict(out.classifier_input);
  if (out.roi_origin == RoiOrigin::kAuto) out.prediction.source = InputSource::kAutoRoi;
  if (out.roi_origin == RoiOrigin::kManual) out.prediction.source = InputSource::kManualRoi;
  if (out.roi_origin == RoiOrigin::kNone) out.prediction.source = InputSource::kFull;
  return out;
}

json to_json(const Prediction& p, const std::optional<ROIParams>& roi) {
  json j = {{"model_id", p.model_id},
            {"source", std::string(to_string(p.source))},
            {"probs", p.probs},
            {"label", p.label}};
  j["roi"] = roi ? json::array({roi->t_r, roi->t_c, roi->s}) : json(nullptr);
  return j;
}

}  // namespace femur
