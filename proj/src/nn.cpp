#include "femur/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace femur::nn {

std::string to_string(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv: return "conv " + std::to_string(spec.units);
    case LayerKind::kResidual: return "residual";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense " + std::to_string(spec.units);
    case LayerKind::kRelu: return "relu";
  }
  return "?";
}

LayerSpec parse_layer_spec(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  int units = 0;
  in >> kind;
  if (kind == "conv" || kind == "dense") {
    if (!(in >> units) || units < 1) throw std::invalid_argument("bad layer spec: " + text);
    return {kind == "conv" ? LayerKind::kConv : LayerKind::kDense, units};
  }
  if (kind == "residual") return {LayerKind::kResidual, 0};
  if (kind == "maxpool") return {LayerKind::kMaxPool, 0};
  if (kind == "global_avg_pool") return {LayerKind::kGlobalAvgPool, 0};
  if (kind == "flatten") return {LayerKind::kFlatten, 0};
  if (kind == "relu") return {LayerKind::kRelu, 0};
  throw std::invalid_argument("bad layer spec: " + text);
}

Architecture make_architecture(const std::string& name, int input_size, int outputs) {
  using K = LayerKind;
  Architecture a{name, input_size, {}, -1};
  auto conv_block = [&](int ch) {
    a.layers.push_back({K::kConv, ch});
    a.layers.push_back({K::kRelu});
    a.layers.push_back({K::kMaxPool});
  };
  auto head = [&](int embed) {
    a.layers.push_back({K::kFlatten});
    a.layers.push_back({K::kDense, embed});
    a.layers.push_back({K::kRelu});
    a.embedding_layer = static_cast<int>(a.layers.size()) - 1;
    a.layers.push_back({K::kDense, outputs});
  };
  if (name == "tiny_cnn") {
    for (int ch : {8, 16, 32, 32}) conv_block(ch);
    head(64);
  } else if (name == "residual_small") {
    conv_block(16);
    for (int ch : {16, 32, 64}) {
      a.layers.push_back({K::kConv, ch});
      a.layers.push_back({K::kRelu});
      a.layers.push_back({K::kResidual});
      a.layers.push_back({K::kMaxPool});
    }
    a.layers.push_back({K::kGlobalAvgPool});
    head(64);
  } else if (name == "tiny_localizer") {
    for (int ch : {8, 16, 16, 32, 32}) conv_block(ch);
    head(64);
  } else if (name == "alexnet_like") {
    for (int ch : {32, 64, 96, 96, 64}) conv_block(ch);
    head(256);
  } else {
    throw std::invalid_argument("unknown architecture: " + name);
  }
  return a;
}

namespace {

void he_init(std::span<float> w, int fan_in, Rng& rng, double gain = 1.0) {
  const double std = gain * std::sqrt(2.0 / fan_in);
  for (float& v : w) v = static_cast<float>(rng.normal() * std);
}

class ConvLayer final : public Layer {
 public:
  ConvLayer(int in_c, int out_c, int kernel = 3)
      : in_c_(in_c), out_c_(out_c), kernel_(kernel),
        weights_(static_cast<std::size_t>(out_c) * in_c * kernel * kernel),
        bias_(out_c), grad_w_(weights_.size()), grad_b_(out_c) {}

  void set_init_gain(double g) { gain_ = g; }

  Shape output_shape(const Shape& in) const override { return {in.n, out_c_, in.h, in.w}; }

  Tensor apply(const Tensor& in, const Kernels& k) const override {
    Tensor out(output_shape(in.shape));
    k.conv2d_forward(conv_shape(in.shape), in.data, weights_, bias_, out.data);
    return out;
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    input_ = in;
    return apply(in, k);
  }

  Tensor backward(const Tensor& grad_out, const Kernels& k) override {
    const ConvShape s = conv_shape(input_.shape);
    k.conv2d_backward_params(s, input_.data, grad_out.data, grad_w_, grad_b_);
    Tensor grad_in(input_.shape);
    k.conv2d_backward_input(s, grad_out.data, weights_, grad_in.data);
    return grad_in;
  }

  std::vector<std::span<float>> parameters() override { return {weights_, bias_}; }
  std::vector<std::span<const float>> parameters() const override {
    return {weights_, bias_};
  }
  std::vector<std::span<float>> gradients() override { return {grad_w_, grad_b_}; }

  void initialize(Rng& rng) override {
    he_init(weights_, in_c_ * kernel_ * kernel_, rng, gain_);
    std::fill(bias_.begin(), bias_.end(), 0.0f);
  }

 private:
  ConvShape conv_shape(const Shape& in) const {
    if (in.c != in_c_) throw std::invalid_argument("conv input channel mismatch");
    return {in.n, in_c_, out_c_, in.h, in.w, kernel_};
  }

  int in_c_, out_c_, kernel_;
  double gain_ = 1.0;
  std::vector<float> weights_, bias_, grad_w_, grad_b_;
  Tensor input_;
};

class ReluLayer final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor apply(const Tensor& in, const Kernels&) const override {
    Tensor out = in;
    for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
    return out;
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    output_ = apply(in, k);
    return output_;
  }

  Tensor backward(const Tensor& grad_out, const Kernels&) override {
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.data.size(); ++i) {
      if (output_.data[i] <= 0.0f) grad_in.data[i] = 0.0f;
    }
    return grad_in;
  }

 private:
  Tensor output_;
};

// relu(x + conv(relu(conv(x)))) with a channel-preserving identity skip.
class ResidualLayer final : public Layer {
 public:
  explicit ResidualLayer(int channels) : conv1_(channels, channels), conv2_(channels, channels) {
    conv2_.set_init_gain(0.5);
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor apply(const Tensor& in, const Kernels& k) const override {
    Tensor a = relu_.apply(conv1_.apply(in, k), k);
    Tensor sum = conv2_.apply(a, k);
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += in.data[i];
    return relu_.apply(sum, k);
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    Tensor a = inner_relu_.forward(conv1_.forward(in, k), k);
    Tensor sum = conv2_.forward(a, k);
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += in.data[i];
    return relu_.forward(sum, k);
  }

  Tensor backward(const Tensor& grad_out, const Kernels& k) override {
    Tensor g_sum = relu_.backward(grad_out, k);
    Tensor g_in = conv1_.backward(inner_relu_.backward(conv2_.backward(g_sum, k), k), k);
    for (std::size_t i = 0; i < g_in.data.size(); ++i) g_in.data[i] += g_sum.data[i];
    return g_in;
  }

  std::vector<std::span<float>> parameters() override {
    auto p = conv1_.parameters();
    for (auto s : conv2_.parameters()) p.push_back(s);
    return p;
  }
  std::vector<std::span<const float>> parameters() const override {
    auto p = conv1_.parameters();
    for (auto s : conv2_.parameters()) p.push_back(s);
    return p;
  }
  std::vector<std::span<float>> gradients() override {
    auto g = conv1_.gradients();
    for (auto s : conv2_.gradients()) g.push_back(s);
    return g;
  }
  void initialize(Rng& rng) override {
    conv1_.initialize(rng);
    conv2_.initialize(rng);
  }

 private:
  ConvLayer conv1_, conv2_;
  ReluLayer inner_relu_, relu_;
};

class MaxPoolLayer final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override {
    return {in.n, in.c, in.h / 2, in.w / 2};
  }

  Tensor apply(const Tensor& in, const Kernels& k) const override {
    std::vector<int> argmax;
    return run(in, k, argmax);
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    input_shape_ = in.shape;
    return run(in, k, argmax_);
  }

  Tensor backward(const Tensor& grad_out, const Kernels& k) override {
    Tensor grad_in(input_shape_);
    k.maxpool2_backward(pool_shape(input_shape_), grad_out.data, argmax_, grad_in.data);
    return grad_in;
  }

 private:
  static PoolShape pool_shape(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

  Tensor run(const Tensor& in, const Kernels& k, std::vector<int>& argmax) const {
    if (in.shape.h < 2 || in.shape.w < 2) throw std::invalid_argument("maxpool input too small");
    Tensor out(output_shape(in.shape));
    argmax.assign(out.data.size(), 0);
    k.maxpool2_forward(pool_shape(in.shape), in.data, out.data, argmax);
    return out;
  }

  Shape input_shape_;
  std::vector<int> argmax_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }

  Tensor apply(const Tensor& in, const Kernels&) const override {
    Tensor out(output_shape(in.shape));
    const std::size_t plane = static_cast<std::size_t>(in.shape.h) * in.shape.w;
    for (std::size_t p = 0; p < out.data.size(); ++p) {
      float acc = 0.0f;
      for (std::size_t i = 0; i < plane; ++i) acc += in.data[p * plane + i];
      out.data[p] = acc / static_cast<float>(plane);
    }
    return out;
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    input_shape_ = in.shape;
    return apply(in, k);
  }

  Tensor backward(const Tensor& grad_out, const Kernels&) override {
    Tensor grad_in(input_shape_);
    const std::size_t plane = static_cast<std::size_t>(input_shape_.h) * input_shape_.w;
    for (std::size_t p = 0; p < grad_out.data.size(); ++p) {
      const float g = grad_out.data[p] / static_cast<float>(plane);
      for (std::size_t i = 0; i < plane; ++i) grad_in.data[p * plane + i] = g;
    }
    return grad_in;
  }

 private:
  Shape input_shape_;
};

class FlattenLayer final : public Layer {
 public:
  Shape output_shape(const Shape& in) const override {
    return {in.n, static_cast<int>(in.per_sample()), 1, 1};
  }
  Tensor apply(const Tensor& in, const Kernels&) const override {
    Tensor out = in;
    out.shape = output_shape(in.shape);
    return out;
  }
  Tensor forward(const Tensor& in, const Kernels& k) override {
    input_shape_ = in.shape;
    return apply(in, k);
  }
  Tensor backward(const Tensor& grad_out, const Kernels&) override {
    Tensor grad_in = grad_out;
    grad_in.shape = input_shape_;
    return grad_in;
  }

 private:
  Shape input_shape_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(int in_f, int out_f)
      : in_f_(in_f), out_f_(out_f), weights_(static_cast<std::size_t>(in_f) * out_f),
        bias_(out_f), grad_w_(weights_.size()), grad_b_(out_f) {}

  Shape output_shape(const Shape& in) const override { return {in.n, out_f_, 1, 1}; }

  Tensor apply(const Tensor& in, const Kernels& k) const override {
    check(in.shape);
    Tensor out(output_shape(in.shape));
    k.dense_forward({in.shape.n, in_f_, out_f_}, in.data, weights_, bias_, out.data);
    return out;
  }

  Tensor forward(const Tensor& in, const Kernels& k) override {
    input_ = in;
    return apply(in, k);
  }

  Tensor backward(const Tensor& grad_out, const Kernels& k) override {
    const DenseShape s{input_.shape.n, in_f_, out_f_};
    k.dense_backward_params(s, input_.data, grad_out.data, grad_w_, grad_b_);
    Tensor grad_in(input_.shape);
    k.dense_backward_input(s, grad_out.data, weights_, grad_in.data);
    return grad_in;
  }

  std::vector<std::span<float>> parameters() override { return {weights_, bias_}; }
  std::vector<std::span<const float>> parameters() const override {
    return {weights_, bias_};
  }
  std::vector<std::span<float>> gradients() override { return {grad_w_, grad_b_}; }

  void set_init_gain(double g) { gain_ = g; }

  void initialize(Rng& rng) override {
    he_init(weights_, in_f_, rng, gain_);
    std::fill(bias_.begin(), bias_.end(), 0.0f);
  }

 private:
  void check(const Shape& s) const {
    if (static_cast<int>(s.per_sample()) != in_f_) {
      throw std::invalid_argument("dense input width mismatch");
    }
  }

  int in_f_, out_f_;
  double gain_ = 1.0;
  std::vector<float> weights_, bias_, grad_w_, grad_b_;
  Tensor input_;
};

constexpr char kWeightsMagic[4] = {'F', 'M', 'R', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "weight blobs are stored little-endian");

}  // namespace

Network::Network(Architecture arch, int in_channels)
    : arch_(std::move(arch)), in_channels_(in_channels) {
  if (arch_.input_size < 1) throw std::invalid_argument("architecture input size must be >= 1");
  Shape shape{1, in_channels_, arch_.input_size, arch_.input_size};
  for (const LayerSpec& spec : arch_.layers) {
    std::unique_ptr<Layer> layer;
    switch (spec.kind) {
      case LayerKind::kConv: layer = std::make_unique<ConvLayer>(shape.c, spec.units); break;
      case LayerKind::kResidual: layer = std::make_unique<ResidualLayer>(shape.c); break;
      case LayerKind::kMaxPool: layer = std::make_unique<MaxPoolLayer>(); break;
      case LayerKind::kGlobalAvgPool: layer = std::make_unique<GlobalAvgPoolLayer>(); break;
      case LayerKind::kFlatten: layer = std::make_unique<FlattenLayer>(); break;
      case LayerKind::kDense: {
        auto dense = std::make_unique<DenseLayer>(static_cast<int>(shape.per_sample()), spec.units);
        // Small output layer so initial scores are near zero.
        if (&spec == &arch_.layers.back()) dense->set_init_gain(0.1);
        layer = std::move(dense);
        break;
      }
      case LayerKind::kRelu: layer = std::make_unique<ReluLayer>(); break;
    }
    shape = layer->output_shape(shape);
    if (shape.h < 1 || shape.w < 1) {
      throw std::invalid_argument("architecture " + arch_.name +
                                  " collapses the spatial size for input " +
                                  std::to_string(arch_.input_size));
    }
    layers_.push_back(std::move(layer));
  }
  if (layers_.empty()) throw std::invalid_argument("architecture has no layers");
  if (arch_.embedding_layer >= static_cast<int>(layers_.size())) {
    throw std::invalid_argument("embedding layer index out of range");
  }
}

Shape Network::input_shape(int batch) const {
  return {batch, in_channels_, arch_.input_size, arch_.input_size};
}

int Network::output_width() const {
  Shape s = input_shape(1);
  for (const auto& l : layers_) s = l->output_shape(s);
  return static_cast<int>(s.per_sample());
}

int Network::embedding_width() const {
  if (arch_.embedding_layer < 0) return 0;
  Shape s = input_shape(1);
  for (int i = 0; i <= arch_.embedding_layer; ++i) s = layers_[i]->output_shape(s);
  return static_cast<int>(s.per_sample());
}

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& l : layers_) l->initialize(rng);
}

Tensor Network::infer(const Tensor& in, const Kernels& k) const {
  Tensor x = in;
  for (const auto& l : layers_) x = l->apply(x, k);
  return x;
}

Tensor Network::embed(const Tensor& in, const Kernels& k) const {
  if (arch_.embedding_layer < 0) throw std::logic_error("network exposes no embedding");
  Tensor x = in;
  for (int i = 0; i <= arch_.embedding_layer; ++i) x = layers_[i]->apply(x, k);
  return x;
}

Tensor Network::forward(const Tensor& in, const Kernels& k) {
  Tensor x = in;
  for (auto& l : layers_) x = l->forward(x, k);
  return x;
}

void Network::backward(const Tensor& grad_out, const Kernels& k) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, k);
}

std::vector<std::span<float>> Network::parameters() {
  std::vector<std::span<float>> out;
  for (auto& l : layers_)
    for (auto s : l->parameters()) out.push_back(s);
  return out;
}

std::vector<std::span<const float>> Network::parameters() const {
  std::vector<std::span<const float>> out;
  for (const auto& l : layers_) {
    const Layer& layer = *l;
    for (auto s : layer.parameters()) out.push_back(s);
  }
  return out;
}

std::vector<std::span<float>> Network::gradients() {
  std::vector<std::span<float>> out;
  for (auto& l : layers_)
    for (auto s : l->gradients()) out.push_back(s);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    for (auto s : cl.parameters()) n += s.size();
  }
  return n;
}

std::vector<std::uint8_t> Network::serialize_weights() const {
  const std::uint64_t count = parameter_count();
  std::vector<std::uint8_t> blob(4 + 4 + 8 + count * 4);
  std::uint8_t* p = blob.data();
  std::memcpy(p, kWeightsMagic, 4);
  std::memcpy(p + 4, &kWeightsVersion, 4);
  std::memcpy(p + 8, &count, 8);
  p += 16;
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    for (auto s : cl.parameters()) {
      std::memcpy(p, s.data(), s.size() * 4);
      p += s.size() * 4;
    }
  }
  return blob;
}

void Network::deserialize_weights(std::span<const std::uint8_t> blob) {
  if (blob.size() < 16 || std::memcmp(blob.data(), kWeightsMagic, 4) != 0) {
    throw std::runtime_error("corrupt weights blob: bad header");
  }
  std::uint32_t version;
  std::uint64_t count;
  std::memcpy(&version, blob.data() + 4, 4);
  std::memcpy(&count, blob.data() + 8, 8);
  if (version != kWeightsVersion) throw std::runtime_error("unsupported weights version");
  if (count != parameter_count() || blob.size() != 16 + count * 4) {
    throw std::runtime_error("corrupt weights blob: size does not match architecture");
  }
  const std::uint8_t* p = blob.data() + 16;
  for (auto s : parameters()) {
    std::memcpy(s.data(), p, s.size() * 4);
    p += s.size() * 4;
  }
  for (auto s : parameters())
    for (float v : s)
      if (!std::isfinite(v)) throw std::runtime_error("corrupt weights blob: non-finite value");
}

Sgd::Sgd(Network& net, SgdConfig cfg) : net_(net), cfg_(cfg) {
  for (auto s : net_.parameters()) velocity_.emplace_back(s.size(), 0.0f);
}

void Sgd::step() {
  auto params = net_.parameters();
  auto grads = net_.gradients();
  const float lr = static_cast<float>(cfg_.learning_rate);
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& v = velocity_[t];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] - lr * (grads[t][i] + wd * params[t][i]);
      params[t][i] += v[i];
    }
  }
}

double LrSchedule::rate_at(double base, int epoch, int total_epochs) const {
  double rate = base;
  for (double m : milestones) {
    if (epoch >= static_cast<int>(std::floor(m * total_epochs))) rate *= factor;
  }
  return rate;
}

}  // namespace femur::nn
