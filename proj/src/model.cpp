#include "femur/model.hpp"

#include <cmath>
#include <fstream>

#include "femur/checksum.hpp"

namespace femur {

using nlohmann::json;

Normalization compute_normalization(const std::vector<Image>& images) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& img : images) {
    for (float v : img.pixels()) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
    }
    n += img.size();
  }
  if (n == 0) return {};
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0);
  return {mean, std::max(std::sqrt(var), 1e-6)};
}

nn::Tensor to_batch(const std::vector<const Image*>& images, const Normalization& norm) {
  if (images.empty()) throw std::invalid_argument("empty batch");
  const int h = images.front()->height(), w = images.front()->width();
  nn::Tensor t({static_cast<int>(images.size()), 1, h, w});
  const float mean = static_cast<float>(norm.mean);
  const float inv = static_cast<float>(1.0 / norm.stddev);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height() != h || images[i]->width() != w) {
      throw std::invalid_argument("batch images differ in size");
    }
    auto dst = t.sample(static_cast<int>(i));
    auto src = images[i]->pixels();
    for (std::size_t p = 0; p < src.size(); ++p) dst[p] = (src[p] - mean) * inv;
  }
  return t;
}

void write_training_log(const std::filesystem::path& path,
                        const std::vector<TrainingLogEntry>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log: " + path.string());
  for (const auto& e : log) {
    out << json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                {"val_metric", e.val_metric}, {"lr", e.lr}, {"wall_time", e.wall_time}}
               .dump()
        << '\n';
  }
}

std::vector<TrainingLogEntry> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read training log: " + path.string());
  std::vector<TrainingLogEntry> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    log.push_back({j.at("epoch").get<int>(), j.at("train_loss").get<double>(),
                   j.at("val_loss").get<double>(), j.at("val_metric").get<double>(),
                   j.at("lr").get<double>(), j.at("wall_time").get<double>()});
  }
  return log;
}

json architecture_to_json(const nn::Architecture& arch) {
  json layers = json::array();
  for (const auto& l : arch.layers) layers.push_back(nn::to_string(l));
  return {{"name", arch.name}, {"input_size", arch.input_size}, {"layers", layers},
          {"embedding_layer", arch.embedding_layer}};
}

nn::Architecture architecture_from_json(const json& j) {
  nn::Architecture a;
  a.name = j.at("name").get<std::string>();
  a.input_size = j.at("input_size").get<int>();
  for (const auto& l : j.at("layers")) a.layers.push_back(nn::parse_layer_spec(l.get<std::string>()));
  a.embedding_layer = j.at("embedding_layer").get<int>();
  return a;
}

std::string model_id_for(const std::vector<std::uint8_t>& weights_blob) {
  return sha256_hex(weights_blob).substr(0, 16);
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace femur
