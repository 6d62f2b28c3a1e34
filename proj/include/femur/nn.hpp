#ifndef FEMUR_NN_HPP_
#define FEMUR_NN_HPP_

// Minimal convolutional network toolkit: NCHW float tensors, a handful of
// layers with hand-written backward passes, and momentum SGD.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "femur/kernels.hpp"
#include "femur/rng.hpp"

namespace femur::nn {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;
  std::size_t count() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
};

struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f) : shape(s), data(s.count(), fill) {}

  std::span<float> sample(int i) {
    return std::span(data).subspan(i * shape.per_sample(), shape.per_sample());
  }
  std::span<const float> sample(int i) const {
    return std::span(data).subspan(i * shape.per_sample(), shape.per_sample());
  }
};

enum class LayerKind { kConv, kResidual, kMaxPool, kGlobalAvgPool, kFlatten, kDense, kRelu };

struct LayerSpec {
  LayerKind kind;
  int units = 0;  // output channels (conv), output features (dense)

  bool operator==(const LayerSpec&) const = default;
};

std::string to_string(const LayerSpec& spec);
LayerSpec parse_layer_spec(const std::string& text);

struct Architecture {
  std::string name;
  int input_size = 0;
  std::vector<LayerSpec> layers;
  // Output of this layer (0-based) is the penultimate-layer embedding; -1
  // when the network exposes none.
  int embedding_layer = -1;
};

// Named profiles. `outputs` is the width of the final dense layer.
//   tiny_cnn        four conv/pool stages, CPU-friendly classifier
//   residual_small  residual classifier (stem + three residual stages)
//   tiny_localizer  five conv/pool stages, CPU-friendly regressor
//   alexnet_like    five conv stages sized for 227 px input
Architecture make_architecture(const std::string& name, int input_size, int outputs);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Shape output_shape(const Shape& in) const = 0;
  // Pure inference pass.
  virtual Tensor apply(const Tensor& in, const Kernels& k) const = 0;
  // Training pass: caches what backward needs.
  virtual Tensor forward(const Tensor& in, const Kernels& k) = 0;
  // Returns the input gradient; parameter gradients are overwritten.
  virtual Tensor backward(const Tensor& grad_out, const Kernels& k) = 0;
  virtual std::vector<std::span<float>> parameters() { return {}; }
  virtual std::vector<std::span<float>> gradients() { return {}; }
  virtual std::vector<std::span<const float>> parameters() const { return {}; }
  virtual void initialize(Rng&) {}
};

class Network {
 public:
  Network(Architecture arch, int in_channels = 1);

  const Architecture& architecture() const { return arch_; }
  Shape input_shape(int batch) const;
  int output_width() const;
  int embedding_width() const;

  void initialize(std::uint64_t seed);

  Tensor infer(const Tensor& in, const Kernels& k) const;
  // Output of the embedding layer.
  Tensor embed(const Tensor& in, const Kernels& k) const;

  Tensor forward(const Tensor& in, const Kernels& k);
  void backward(const Tensor& grad_out, const Kernels& k);

  std::vector<std::span<float>> parameters();
  std::vector<std::span<const float>> parameters() const;
  std::vector<std::span<float>> gradients();
  std::size_t parameter_count() const;

  // Flat little-endian float32 blob with a small header.
  std::vector<std::uint8_t> serialize_weights() const;
  void deserialize_weights(std::span<const std::uint8_t> blob);

 private:
  Architecture arch_;
  int in_channels_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct SgdConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

class Sgd {
 public:
  Sgd(Network& net, SgdConfig cfg);
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }
  void step();

 private:
  Network& net_;
  SgdConfig cfg_;
  std::vector<std::vector<float>> velocity_;
};

// Step decay: multiply by `factor` at each listed fraction of total epochs.
struct LrSchedule {
  std::vector<double> milestones{0.5, 0.75};
  double factor = 0.1;

  double rate_at(double base, int epoch, int total_epochs) const;
};

}  // namespace femur::nn

#endif  // FEMUR_NN_HPP_
