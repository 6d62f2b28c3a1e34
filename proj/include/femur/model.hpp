#ifndef FEMUR_MODEL_HPP_
#define FEMUR_MODEL_HPP_

// Pieces shared by the localizer and the classifier: input normalization,
// the on-disk artifact layout and the training log.

#include <filesystem>
#include <string>
#include <vector>

#include "femur/image.hpp"
#include "femur/nn.hpp"
#include "json.hpp"

namespace femur {

constexpr int kArtifactSchemaVersion = 1;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};

// Mean / standard deviation over every pixel of the given images.
Normalization compute_normalization(const std::vector<Image>& images);

// Copies equally sized images into an NCHW batch, normalizing on the way.
nn::Tensor to_batch(const std::vector<const Image*>& images, const Normalization& norm);

struct TrainingLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // classifier: macro F1; localizer: unused (0)
  double lr = 0.0;
  double wall_time = 0.0;   // seconds since training start
};

void write_training_log(const std::filesystem::path& path,
                        const std::vector<TrainingLogEntry>& log);
std::vector<TrainingLogEntry> read_training_log(const std::filesystem::path& path);

nlohmann::json architecture_to_json(const nn::Architecture& arch);
nn::Architecture architecture_from_json(const nlohmann::json& j);

// Artifact directory layout:
//   config.json        schema_version, kind, model_id, architecture, normalization, ...
//   weights.bin        Network::serialize_weights()
//   training_log.jsonl one TrainingLogEntry per line
struct ArtifactFiles {
  static constexpr const char* kConfig = "config.json";
  static constexpr const char* kWeights = "weights.bin";
  static constexpr const char* kLog = "training_log.jsonl";
};

// First 16 hex digits of the SHA-256 of the weights blob.
std::string model_id_for(const std::vector<std::uint8_t>& weights_blob);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace femur

#endif  // FEMUR_MODEL_HPP_
