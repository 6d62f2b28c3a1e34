#ifndef FEMUR_CLASSIFICATION_HPP_
#define FEMUR_CLASSIFICATION_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "femur/dataset.hpp"
#include "femur/image.hpp"
#include "femur/kernels.hpp"
#include "femur/localization.hpp"
#include "femur/model.hpp"
#include "femur/nn.hpp"
#include "json.hpp"

namespace femur {

enum class InputSource { kFull, kManualRoi, kAutoRoi };

std::string_view to_string(InputSource source);
InputSource parse_input_source(std::string_view text);
inline bool uses_roi(InputSource s) { return s != InputSource::kFull; }

struct ClassifierConfig {
  ClassMode mode = ClassMode::kThreeClass;
  InputSource input_source = InputSource::kManualRoi;
  std::string architecture = "residual_small";
  int input_size = 224;
  int epochs = 80;
  int batch_size = 64;
  double momentum = 0.9;
  double learning_rate = 1e-2;
  nn::LrSchedule lr_schedule;
  double weight_decay = 0.0;
  // Initialize from an existing classifier artifact instead of random
  // weights. Requires `pretrained_weights` to name that artifact directory.
  bool pretrained = false;
  std::string pretrained_weights;
  // Weight each sample's loss by N / (K * n_class).
  bool class_weighting = false;
  bool augment = true;
  AugmentationParams augmentation;
  std::uint64_t seed = 0;
  ExecutionMode execution = ExecutionMode::kReference;

  // CPU profile for tests and the desk-scale benchmark.
  static ClassifierConfig tiny();
};

nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

struct Prediction {
  std::vector<double> probs;
  int label = 0;
  InputSource source = InputSource::kFull;
  std::string model_id;
};

struct EmbeddingVector {
  std::vector<float> values;
  int dim = 0;
  std::string model_id;
};

// Numerically stable softmax in double precision.
std::vector<double> softmax(std::span<const float> scores);
// argmax with lowest-index tie-break.
int argmax(const std::vector<double>& values);

constexpr double kProbabilityEpsilon = 1e-12;

// -sum_j y_j log(max(p_j, eps)).
double class_loss(const std::vector<double>& one_hot, const std::vector<double>& probs);
// Mean over samples.
double class_loss_batch(const std::vector<std::vector<double>>& one_hot,
                        const std::vector<std::vector<double>>& probs);
// Gradient of class_loss(y, softmax(z)) with respect to the scores z.
std::vector<double> class_loss_gradient(const std::vector<double>& one_hot,
                                        std::span<const float> scores);

class ClassifierModel {
 public:
  ClassifierModel(ClassifierConfig cfg, Normalization norm);

  const ClassifierConfig& config() const { return cfg_; }
  const Normalization& normalization() const { return norm_; }
  const std::string& model_id() const { return model_id_; }
  int num_classes() const { return femur::num_classes(cfg_.mode); }
  int embedding_dim() const { return net_->embedding_width(); }
  std::vector<std::string> label_names() const { return class_names(cfg_.mode); }
  nn::Network& network() { return *net_; }
  const nn::Network& network() const { return *net_; }

  // The classifier's input for a study image: the ROI crop for ROI-trained
  // models when `roi` is given, otherwise the resized image.
  Image prepare(const Image& image, const std::optional<ROIParams>& roi = std::nullopt) const;

  // `image` is the classifier input (full radiograph or ROI crop); it is
  // resized to the input size.
  Prediction predict(const Image& image) const;
  std::vector<Prediction> predict_batch(const std::vector<const Image*>& images) const;
  EmbeddingVector embed(const Image& image) const;
  std::vector<EmbeddingVector> embed_batch(const std::vector<const Image*>& images) const;

  void save(const std::filesystem::path& dir,
            const std::vector<TrainingLogEntry>& log = {}) const;
  static ClassifierModel load(const std::filesystem::path& dir);

  void refresh_model_id();

 private:
  nn::Tensor to_input(const std::vector<const Image*>& images) const;

  ClassifierConfig cfg_;
  Normalization norm_;
  std::unique_ptr<nn::Network> net_;
  std::string model_id_;
};

struct ClassificationSample {
  const Image* image;  // full study image
  ClassLabel label;
  std::optional<ROIParams> roi;  // required for ROI input sources
};

struct TrainedClassifier {
  ClassifierModel model;
  std::vector<TrainingLogEntry> log;
};

// Training-time augmentation for ROI inputs: the box is shifted and rescaled
// inside the full radiograph (so zooming out shows real context), then the
// crop is rotated. Shifts in `t` are in output pixels; scale > 1 zooms in.
Image jitter_roi_crop(const Image& image, const ROIParams& roi, const AugmentTransform& t,
                      int out_size);

// With cfg.pretrained, weights come from `init_from` when given, otherwise
// from the artifact at cfg.pretrained_weights.
TrainedClassifier train_classifier(const std::vector<ClassificationSample>& train,
                                   const std::vector<ClassificationSample>& val,
                                   const ClassifierConfig& cfg,
                                   const ClassifierModel* init_from = nullptr);

Prediction predict(const ClassifierModel& model, const Image& image);
EmbeddingVector extract_embedding(const ClassifierModel& model, const Image& image);

enum class RoiOrigin { kNone, kAuto, kManual };
std::string_view to_string(RoiOrigin origin);

struct PipelineResult {
  Prediction prediction;
  std::optional<ROIParams> roi;  // the box actually used
  RoiOrigin roi_origin = RoiOrigin::kNone;
  Image classifier_input;
};

// Manual box (two-click flow) > localizer prediction > full image.
PipelineResult predict_pipeline(const Image& image, const ClassifierModel& classifier,
                                const LocalizerModel* localizer,
                                const std::optional<ROIParams>& manual_roi = std::nullopt);

nlohmann::json to_json(const Prediction& p, const std::optional<ROIParams>& roi = std::nullopt);

}  // namespace femur

#endif  // FEMUR_CLASSIFICATION_HPP_
