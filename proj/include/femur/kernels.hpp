#ifndef FEMUR_KERNELS_HPP_
#define FEMUR_KERNELS_HPP_

// Compute kernels behind the network, the warp operator and the retrieval
// distance matrix. Each kernel has a serial reference implementation and an
// OpenMP implementation. The OpenMP versions partition work by output
// element and keep the per-element accumulation order of the reference, so
// both produce bitwise-identical results.

#include <span>
#include <string_view>

namespace femur {

enum class ExecutionMode { kReference, kParallel };

ExecutionMode parse_execution_mode(std::string_view name);
std::string_view to_string(ExecutionMode mode);

// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;  // input and output height (stride 1, "same" padding)
  int width = 1;
  int kernel = 3;  // odd

  int pad() const { return kernel / 2; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(batch) * in_channels * height * width;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(batch) * out_channels * height * width;
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

struct DenseShape {
  int batch = 1;
  int in_features = 1;
  int out_features = 1;
};

struct PoolShape {
  int batch = 1;
  int channels = 1;
  int height = 2;  // input; output is floor(h/2) x floor(w/2)
  int width = 2;

  int out_height() const { return height / 2; }
  int out_width() const { return width / 2; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(batch) * channels * height * width;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(batch) * channels * out_height() * out_width();
  }
};

namespace kernels {

#define FEMUR_KERNEL_DECLS                                                     \
  void conv2d_forward(const ConvShape& s, std::span<const float> input,        \
                      std::span<const float> weights,                          \
                      std::span<const float> bias, std::span<float> output);   \
  void conv2d_backward_input(const ConvShape& s,                               \
                             std::span<const float> grad_output,               \
                             std::span<const float> weights,                   \
                             std::span<float> grad_input);                     \
  void conv2d_backward_params(const ConvShape& s, std::span<const float> input, \
                              std::span<const float> grad_output,              \
                              std::span<float> grad_weights,                   \
                              std::span<float> grad_bias);                     \
  void dense_forward(const DenseShape& s, std::span<const float> input,        \
                     std::span<const float> weights,                           \
                     std::span<const float> bias, std::span<float> output);    \
  void dense_backward_input(const DenseShape& s,                               \
                            std::span<const float> grad_output,                \
                            std::span<const float> weights,                    \
                            std::span<float> grad_input);                      \
  void dense_backward_params(const DenseShape& s, std::span<const float> input, \
                             std::span<const float> grad_output,               \
                             std::span<float> grad_weights,                    \
                             std::span<float> grad_bias);                      \
  void maxpool2_forward(const PoolShape& s, std::span<const float> input,      \
                        std::span<float> output, std::span<int> argmax);       \
  void maxpool2_backward(const PoolShape& s, std::span<const float> grad_output, \
                         std::span<const int> argmax,                          \
                         std::span<float> grad_input);                         \
  /* Squared Euclidean distances between each query row and each pool row. */  \
  void squared_distances(int queries, int pool, int dim,                       \
                         std::span<const float> query_rows,                    \
                         std::span<const float> pool_rows,                     \
                         std::span<double> out);

// Serial reference kernels.
namespace serial {
FEMUR_KERNEL_DECLS
}  // namespace serial

// OpenMP kernels.
namespace parallel {
FEMUR_KERNEL_DECLS
}  // namespace parallel

#undef FEMUR_KERNEL_DECLS

}  // namespace kernels

// Dispatching front end used by the rest of the library.
class Kernels {
 public:
  explicit Kernels(ExecutionMode mode = ExecutionMode::kReference) : mode_(mode) {}
  ExecutionMode mode() const { return mode_; }

  void conv2d_forward(const ConvShape& s, std::span<const float> input,
                      std::span<const float> weights, std::span<const float> bias,
                      std::span<float> output) const;
  void conv2d_backward_input(const ConvShape& s, std::span<const float> grad_output,
                             std::span<const float> weights,
                             std::span<float> grad_input) const;
  void conv2d_backward_params(const ConvShape& s, std::span<const float> input,
                              std::span<const float> grad_output,
                              std::span<float> grad_weights,
                              std::span<float> grad_bias) const;
  void dense_forward(const DenseShape& s, std::span<const float> input,
                     std::span<const float> weights, std::span<const float> bias,
                     std::span<float> output) const;
  void dense_backward_input(const DenseShape& s, std::span<const float> grad_output,
                            std::span<const float> weights,
                            std::span<float> grad_input) const;
  void dense_backward_params(const DenseShape& s, std::span<const float> input,
                             std::span<const float> grad_output,
                             std::span<float> grad_weights,
                             std::span<float> grad_bias) const;
  void maxpool2_forward(const PoolShape& s, std::span<const float> input,
                        std::span<float> output, std::span<int> argmax) const;
  void maxpool2_backward(const PoolShape& s, std::span<const float> grad_output,
                         std::span<const int> argmax,
                         std::span<float> grad_input) const;
  void squared_distances(int queries, int pool, int dim,
                         std::span<const float> query_rows,
                         std::span<const float> pool_rows,
                         std::span<double> out) const;

 private:
  ExecutionMode mode_;
};

}  // namespace femur

#endif  // FEMUR_KERNELS_HPP_
