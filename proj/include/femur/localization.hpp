#ifndef FEMUR_LOCALIZATION_HPP_
#define FEMUR_LOCALIZATION_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "femur/image.hpp"
#include "femur/kernels.hpp"
#include "femur/model.hpp"
#include "femur/nn.hpp"
#include "femur/roi.hpp"
#include "json.hpp"

namespace femur {

// Crops the square ROI and resamples it to out_size x out_size. Area outside
// the image reads as zero. Bilinear sampling at pixel centers; when the box is
// larger than the output, each output pixel averages a ceil(scale)^2 grid of
// bilinear samples so thin structures are not skipped.
Image warp(const Image& image, const ROIParams& p, int out_size);

// 1/2 * ||p - p_hat||^2 over (t_r, t_c, s).
double loc_loss(const ROIParams& p, const ROIParams& p_hat);
// d loc_loss / d p_hat = p_hat - p.
std::array<double, 3> loc_loss_gradient(const ROIParams& p, const ROIParams& p_hat);

struct LocalizerConfig {
  std::string architecture = "alexnet_like";
  int input_size = 227;
  int epochs = 200;
  int batch_size = 64;
  double momentum = 0.9;
  // Targets are normalized to [0, 1]; 1e-8 was tuned for pixel-scale targets.
  double learning_rate = 1e-3;
  nn::LrSchedule lr_schedule;
  double weight_decay = 0.0;
  // Regress per-coordinate z-scores of the training boxes. The fitted
  // mean/stddev are stored with the model and undone at prediction time.
  bool standardize_targets = true;
  std::uint64_t seed = 0;
  ExecutionMode execution = ExecutionMode::kReference;

  // CPU profile for tests and the desk-scale benchmark.
  static LocalizerConfig tiny();
};

nlohmann::json to_json(const LocalizerConfig& cfg);
LocalizerConfig localizer_config_from_json(const nlohmann::json& j);

// Network output o maps to the box mean + scale * o, per coordinate.
struct TargetScaling {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> scale{1.0, 1.0, 1.0};

  ROIParams to_roi(std::span<const float> out) const;
};

TargetScaling fit_target_scaling(const std::vector<ROIParams>& targets);

struct LocalizationSample {
  const Image* image;
  std::optional<ROIParams> roi;
};

class LocalizerModel {
 public:
  LocalizerModel(LocalizerConfig cfg, Normalization norm, TargetScaling scaling = {});

  const LocalizerConfig& config() const { return cfg_; }
  const Normalization& normalization() const { return norm_; }
  const TargetScaling& target_scaling() const { return scaling_; }
  const std::string& model_id() const { return model_id_; }
  nn::Network& network() { return *net_; }
  const nn::Network& network() const { return *net_; }

  // Network input for one image (resized to the configured input size).
  nn::Tensor prepare(const Image& image) const;

  // Clamped to t_r, t_c in [0, 1] and s in [1e-3, 2].
  ROIParams predict_roi(const Image& image) const;
  // Unclamped regression output for prepared inputs.
  std::vector<ROIParams> raw_predict(const nn::Tensor& batch) const;

  void save(const std::filesystem::path& dir,
            const std::vector<TrainingLogEntry>& log = {}) const;
  static LocalizerModel load(const std::filesystem::path& dir);

  void refresh_model_id();

 private:
  LocalizerConfig cfg_;
  Normalization norm_;
  TargetScaling scaling_;
  std::unique_ptr<nn::Network> net_;
  std::string model_id_;
};

struct TrainedLocalizer {
  LocalizerModel model;
  std::vector<TrainingLogEntry> log;
};

// Every training and validation sample needs a ground-truth roi.
TrainedLocalizer train_localizer(const std::vector<LocalizationSample>& train,
                                 const std::vector<LocalizationSample>& val,
                                 const LocalizerConfig& cfg);

ROIParams predict_roi(const LocalizerModel& model, const Image& image);

// Fraction of predicted centers inside the matching ground-truth boxes.
// `shapes` holds (height, width) per item; square images when omitted.
double containment_rate(const std::vector<ROIParams>& predictions,
                        const std::vector<ROIParams>& ground_truth,
                        const std::vector<std::pair<int, int>>& shapes = {});

}  // namespace femur

#endif  // FEMUR_LOCALIZATION_HPP_
