#include "femur/localization.hpp"

#include <algorithm>
#include <cmath>

#include "femur/checksum.hpp"
#include "training.hpp"

namespace femur {

using nlohmann::json;

namespace {

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Image warp(const Image& image, const ROIParams& p, int out_size) {
  if (!p.finite()) throw std::invalid_argument("warp: ROI parameters must be finite");
  if (!(p.s > 0.0)) throw std::invalid_argument("warp: ROI side must be positive");
  if (out_size < 1) throw std::invalid_argument("warp: output size must be >= 1");
  if (image.empty()) throw std::invalid_argument("warp: empty image");
  const PixelBox box = to_pixels(p, image.height(), image.width());
  const double top = snap(box.top());
  const double left = snap(box.left());
  double step = box.side / out_size;
  if (std::abs(step - std::round(step)) < 1e-12) step = std::round(step);
  const int k = step > 1.0 ? static_cast<int>(std::ceil(step - 1e-9)) : 1;
  Image out(out_size, out_size);
  for (int i = 0; i < out_size; ++i) {
    for (int j = 0; j < out_size; ++j) {
      if (k == 1) {
        out.at(i, j) = sample_bilinear(image, top + (i + 0.5) * step - 0.5,
                                       left + (j + 0.5) * step - 0.5);
        continue;
      }
      double acc = 0.0;
      for (int a = 0; a < k; ++a) {
        const double y = top + (i + (a + 0.5) / k) * step - 0.5;
        for (int b = 0; b < k; ++b) {
          acc += sample_bilinear(image, y, left + (j + (b + 0.5) / k) * step - 0.5);
        }
      }
      out.at(i, j) = static_cast<float>(acc / (k * k));
    }
  }
  return out;
}

double loc_loss(const ROIParams& p, const ROIParams& q) {
  if (!p.finite() || !q.finite()) throw std::invalid_argument("loc_loss: non-finite input");
  const double dr = p.t_r - q.t_r, dc = p.t_c - q.t_c, ds = p.s - q.s;
  return 0.5 * (dr * dr + dc * dc + ds * ds);
}

std::array<double, 3> loc_loss_gradient(const ROIParams& p, const ROIParams& q) {
  return {q.t_r - p.t_r, q.t_c - p.t_c, q.s - p.s};
}

LocalizerConfig LocalizerConfig::tiny() {
  LocalizerConfig c;
  c.architecture = "tiny_localizer";
  c.input_size = 64;
  return c;
}

json to_json(const LocalizerConfig& c) {
  return {{"architecture", c.architecture},
          {"input_size", c.input_size},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"learning_rate", c.learning_rate},
          {"lr_decay_milestones", c.lr_schedule.milestones},
          {"lr_decay_factor", c.lr_schedule.factor},
          {"weight_decay", c.weight_decay},
          {"standardize_targets", c.standardize_targets},
          {"seed", c.seed},
          {"execution", std::string(to_string(c.execution))}};
}

LocalizerConfig localizer_config_from_json(const json& j) {
  LocalizerConfig c;
  c.architecture = j.value("architecture", c.architecture);
  c.input_size = j.value("input_size", c.input_size);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_schedule.milestones = j.value("lr_decay_milestones", c.lr_schedule.milestones);
  c.lr_schedule.factor = j.value("lr_decay_factor", c.lr_schedule.factor);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.standardize_targets = j.value("standardize_targets", c.standardize_targets);
  c.seed = j.value("seed", c.seed);
  c.execution = parse_execution_mode(j.value("execution", std::string("reference")));
  return c;
}

ROIParams TargetScaling::to_roi(std::span<const float> out) const {
  return {mean[0] + scale[0] * out[0], mean[1] + scale[1] * out[1], mean[2] + scale[2] * out[2]};
}

TargetScaling fit_target_scaling(const std::vector<ROIParams>& targets) {
  if (targets.empty()) throw std::invalid_argument("fit_target_scaling: no targets");
  TargetScaling t;
  for (int k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (const auto& p : targets) sum += p.as_array()[k];
    t.mean[k] = sum / targets.size();
    double ss = 0.0;
    for (const auto& p : targets) ss += (p.as_array()[k] - t.mean[k]) * (p.as_array()[k] - t.mean[k]);
    const double sd = std::sqrt(ss / targets.size());
    // Constant coordinates keep unit scale so the network can still move them.
    t.scale[k] = sd > 1e-6 ? sd : 1.0;
  }
  return t;
}

LocalizerModel::LocalizerModel(LocalizerConfig cfg, Normalization norm, TargetScaling scaling)
    : cfg_(std::move(cfg)), norm_(norm), scaling_(scaling),
      net_(std::make_unique<nn::Network>(
          nn::make_architecture(cfg_.architecture, cfg_.input_size, 3))) {
  net_->initialize(cfg_.seed);
  refresh_model_id();
}

void LocalizerModel::refresh_model_id() { model_id_ = model_id_for(net_->serialize_weights()); }

nn::Tensor LocalizerModel::prepare(const Image& image) const {
  const Image small = resize(image, cfg_.input_size, cfg_.input_size);
  return to_batch({&small}, norm_);
}

std::vector<ROIParams> LocalizerModel::raw_predict(const nn::Tensor& batch) const {
  const nn::Tensor out = net_->infer(batch, Kernels(cfg_.execution));
  std::vector<ROIParams> rois;
  for (int i = 0; i < out.shape.n; ++i) {
    rois.push_back(scaling_.to_roi(out.sample(i)));
  }
  return rois;
}

ROIParams LocalizerModel::predict_roi(const Image& image) const {
  ROIParams p = raw_predict(prepare(image)).front();
  if (!p.finite()) throw ModelError("localizer produced a non-finite box");
  p.t_r = std::clamp(p.t_r, 0.0, 1.0);
  p.t_c = std::clamp(p.t_c, 0.0, 1.0);
  p.s = std::clamp(p.s, 1e-3, 2.0);
  return p;
}

ROIParams predict_roi(const LocalizerModel& model, const Image& image) {
  return model.predict_roi(image);
}

void LocalizerModel::save(const std::filesystem::path& dir,
                          const std::vector<TrainingLogEntry>& log) const {
  std::filesystem::create_directories(dir);
  const auto blob = net_->serialize_weights();
  write_file_bytes(dir / ArtifactFiles::kWeights, blob);
  json cfg = {{"schema_version", kArtifactSchemaVersion},
              {"kind", "localizer"},
              {"model_id", model_id_for(blob)},
              {"architecture", architecture_to_json(net_->architecture())},
              {"normalization", {{"mean", norm_.mean}, {"stddev", norm_.stddev}}},
              {"outputs", {"t_r", "t_c", "s"}},
              {"target_scaling", {{"mean", scaling_.mean}, {"scale", scaling_.scale}}},
              {"config", to_json(cfg_)}};
  write_json_file(dir / ArtifactFiles::kConfig, cfg);
  if (!log.empty()) write_training_log(dir / ArtifactFiles::kLog, log);
}

LocalizerModel LocalizerModel::load(const std::filesystem::path& dir) {
  json j;
  try {
    j = read_json_file(dir / ArtifactFiles::kConfig);
    if (j.at("schema_version").get<int>() != kArtifactSchemaVersion) {
      throw ModelError("unsupported artifact schema version");
    }
    if (j.at("kind").get<std::string>() != "localizer") {
      throw ModelError("artifact is not a localizer: " + dir.string());
    }
    TargetScaling scaling;
    if (j.contains("target_scaling")) {
      scaling.mean = j["target_scaling"].at("mean").get<std::array<double, 3>>();
      scaling.scale = j["target_scaling"].at("scale").get<std::array<double, 3>>();
    }
    LocalizerModel m(localizer_config_from_json(j.at("config")),
                     {j.at("normalization").at("mean").get<double>(),
                      j.at("normalization").at("stddev").get<double>()},
                     scaling);
    m.net_->deserialize_weights(read_file_bytes(dir / ArtifactFiles::kWeights));
    m.refresh_model_id();
    return m;
  } catch (const ModelError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelError("corrupt localizer artifact at " + dir.string() + ": " + e.what());
  }
}

TrainedLocalizer train_localizer(const std::vector<LocalizationSample>& train,
                                 const std::vector<LocalizationSample>& val,
                                 const LocalizerConfig& cfg) {
  auto gather = [&](const std::vector<LocalizationSample>& set, const char* name) {
    std::vector<Image> inputs;
    std::vector<ROIParams> targets;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (!set[i].roi) {
        throw std::invalid_argument(std::string(name) + " record " + std::to_string(i) +
                                    " is missing a ground-truth roi");
      }
      inputs.push_back(resize(*set[i].image, cfg.input_size, cfg.input_size));
      targets.push_back(*set[i].roi);
    }
    return std::pair(std::move(inputs), std::move(targets));
  };
  auto [train_x, train_y] = gather(train, "training");
  auto [val_x, val_y] = gather(val, "validation");

  const TargetScaling scaling = cfg.standardize_targets ? fit_target_scaling(train_y) : TargetScaling{};
  LocalizerModel model(cfg, compute_normalization(train_x), scaling);
  const Kernels kernels(cfg.execution);

  auto batch_of = [&](const std::vector<Image>& xs, const std::vector<int>& idx) {
    std::vector<const Image*> ptrs;
    for (int i : idx) ptrs.push_back(&xs[i]);
    return to_batch(ptrs, model.normalization());
  };
  // The reported loss is loc_loss on boxes. The gradient is that of the
  // loss on standardized coordinates, i.e. each term weighted by 1/scale^2.
  auto batch_loss = [&scaling](const nn::Tensor& out, const std::vector<ROIParams>& ys,
                               const std::vector<int>& idx, nn::Tensor* grad) {
    double total = 0.0;
    const double inv = 1.0 / idx.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const ROIParams pred = scaling.to_roi(out.sample(static_cast<int>(b)));
      total += loc_loss(ys[idx[b]], pred);
      if (grad != nullptr) {
        const auto g = loc_loss_gradient(ys[idx[b]], pred);
        auto gs = grad->sample(static_cast<int>(b));
        for (int k = 0; k < 3; ++k) {
          gs[k] = static_cast<float>(g[k] / scaling.scale[k] * inv);
        }
      }
    }
    return total * inv;
  };

  detail::FitOptions opt{cfg.epochs, cfg.batch_size,
                         {cfg.learning_rate, cfg.momentum, cfg.weight_decay},
                         cfg.lr_schedule, cfg.seed};
  detail::FitHooks hooks;
  hooks.make_input = [&](const std::vector<int>& idx, Rng&) { return batch_of(train_x, idx); };
  hooks.loss = [&](const nn::Tensor& out, const std::vector<int>& idx, nn::Tensor& grad) {
    return batch_loss(out, train_y, idx, &grad);
  };
  hooks.validate = [&](const nn::Network& net) -> std::pair<double, double> {
    const auto& xs = val_x.empty() ? train_x : val_x;
    const auto& ys = val_x.empty() ? train_y : val_y;
    double total = 0.0;
    for (std::size_t first = 0; first < xs.size(); first += 32) {
      std::vector<int> idx;
      for (std::size_t i = first; i < std::min(xs.size(), first + 32); ++i) idx.push_back(static_cast<int>(i));
      total += batch_loss(net.infer(batch_of(xs, idx), kernels), ys, idx, nullptr) * idx.size();
    }
    return {total / xs.size(), 0.0};
  };
  hooks.better = [](const TrainingLogEntry& cand, const TrainingLogEntry& best) {
    return cand.val_loss < best.val_loss;
  };
  try {
    auto log = detail::fit(model.network(), static_cast<int>(train_x.size()), opt, hooks, kernels);
    model.refresh_model_id();
    return {std::move(model), std::move(log)};
  } catch (const detail::TrainingError& e) {
    throw ModelError(std::string("localizer training failed: ") + e.what());
  }
}

double containment_rate(const std::vector<ROIParams>& predictions,
                        const std::vector<ROIParams>& ground_truth,
                        const std::vector<std::pair<int, int>>& shapes) {
  if (predictions.size() != ground_truth.size()) {
    throw std::invalid_argument("containment_rate: length mismatch");
  }
  if (!shapes.empty() && shapes.size() != predictions.size()) {
    throw std::invalid_argument("containment_rate: shape list length mismatch");
  }
  if (predictions.empty()) return 0.0;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto [h, w] = shapes.empty() ? std::pair(1, 1) : shapes[i];
    const PixelBox box = to_pixels(ground_truth[i], h, w);
    const double r = predictions[i].t_r * h, c = predictions[i].t_c * w;
    if (r >= box.top() && r <= box.bottom() && c >= box.left() && c <= box.right()) ++inside;
  }
  return static_cast<double>(inside) / predictions.size();
}

}  // namespace femur
