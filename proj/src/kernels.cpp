#include "femur/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace femur {

ExecutionMode parse_execution_mode(std::string_view name) {
  if (name == "reference") return ExecutionMode::kReference;
  if (name == "parallel") return ExecutionMode::kParallel;
  throw std::invalid_argument("unknown execution mode: " + std::string(name));
}

std::string_view to_string(ExecutionMode mode) {
  return mode == ExecutionMode::kReference ? "reference" : "parallel";
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace kernels {
namespace {

// Per-work-item bodies shared by both implementations. The serial kernels
// loop over the work items in order; the OpenMP kernels distribute them.

// One output plane (sample n, output channel o).
void conv_forward_plane(const ConvShape& s, int n, int o, const float* input,
                        const float* weights, const float* bias, float* output) {
  const int h = s.height, w = s.width, k = s.kernel, pad = s.pad();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* out = output + (static_cast<std::size_t>(n) * s.out_channels + o) * plane;
  std::fill(out, out + plane, bias[o]);
  for (int i = 0; i < s.in_channels; ++i) {
    const float* in = input + (static_cast<std::size_t>(n) * s.in_channels + i) * plane;
    const float* wk = weights + (static_cast<std::size_t>(o) * s.in_channels + i) * k * k;
    for (int ky = 0; ky < k; ++ky) {
      const int dy = ky - pad;
      const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
      for (int kx = 0; kx < k; ++kx) {
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        const float wv = wk[ky * k + kx];
        for (int y = y_lo; y < y_hi; ++y) {
          float* orow = out + static_cast<std::size_t>(y) * w;
          const float* irow = in + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = x_lo; x < x_hi; ++x) orow[x] += wv * irow[x];
        }
      }
    }
  }
}

// One input-gradient plane (sample n, input channel i).
void conv_backward_input_plane(const ConvShape& s, int n, int i,
                               const float* grad_output, const float* weights,
                               float* grad_input) {
  const int h = s.height, w = s.width, k = s.kernel, pad = s.pad();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* gin = grad_input + (static_cast<std::size_t>(n) * s.in_channels + i) * plane;
  std::fill(gin, gin + plane, 0.0f);
  for (int o = 0; o < s.out_channels; ++o) {
    const float* gout =
        grad_output + (static_cast<std::size_t>(n) * s.out_channels + o) * plane;
    const float* wk = weights + (static_cast<std::size_t>(o) * s.in_channels + i) * k * k;
    for (int ky = 0; ky < k; ++ky) {
      const int dy = ky - pad;
      const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
      for (int kx = 0; kx < k; ++kx) {
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        const float wv = wk[ky * k + kx];
        for (int y = y_lo; y < y_hi; ++y) {
          const float* grow = gout + static_cast<std::size_t>(y) * w;
          float* irow = gin + static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = x_lo; x < x_hi; ++x) irow[x] += wv * grow[x];
        }
      }
    }
  }
}

// Weight and bias gradients of one output channel o, summed over the batch.
void conv_backward_params_channel(const ConvShape& s, int o, const float* input,
                                  const float* grad_output, float* grad_weights,
                                  float* grad_bias) {
  const int h = s.height, w = s.width, k = s.kernel, pad = s.pad();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* gw = grad_weights + static_cast<std::size_t>(o) * s.in_channels * k * k;
  std::fill(gw, gw + static_cast<std::size_t>(s.in_channels) * k * k, 0.0f);
  std::vector<float> partial(w);
  float gb = 0.0f;
  for (int n = 0; n < s.batch; ++n) {
    const float* gout =
        grad_output + (static_cast<std::size_t>(n) * s.out_channels + o) * plane;
    for (std::size_t p = 0; p < plane; ++p) gb += gout[p];
    for (int i = 0; i < s.in_channels; ++i) {
      const float* in = input + (static_cast<std::size_t>(n) * s.in_channels + i) * plane;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - pad;
          const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
          // Column-wise partial sums keep the inner loop vectorizable.
          std::fill(partial.begin(), partial.end(), 0.0f);
          for (int y = y_lo; y < y_hi; ++y) {
            const float* grow = gout + static_cast<std::size_t>(y) * w;
            const float* irow = in + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x_lo; x < x_hi; ++x) partial[x] += grow[x] * irow[x];
          }
          float acc = 0.0f;
          for (int x = x_lo; x < x_hi; ++x) acc += partial[x];
          gw[(static_cast<std::size_t>(i) * k + ky) * k + kx] += acc;
        }
      }
    }
  }
  grad_bias[o] = gb;
}

void dense_forward_row(const DenseShape& s, int n, const float* input,
                       const float* weights, const float* bias, float* output) {
  const float* x = input + static_cast<std::size_t>(n) * s.in_features;
  float* y = output + static_cast<std::size_t>(n) * s.out_features;
  for (int o = 0; o < s.out_features; ++o) {
    const float* wrow = weights + static_cast<std::size_t>(o) * s.in_features;
    float acc = 0.0f;
    for (int i = 0; i < s.in_features; ++i) acc += wrow[i] * x[i];
    y[o] = acc + bias[o];
  }
}

void dense_backward_input_row(const DenseShape& s, int n, const float* grad_output,
                              const float* weights, float* grad_input) {
  const float* gy = grad_output + static_cast<std::size_t>(n) * s.out_features;
  float* gx = grad_input + static_cast<std::size_t>(n) * s.in_features;
  std::fill(gx, gx + s.in_features, 0.0f);
  for (int o = 0; o < s.out_features; ++o) {
    const float* wrow = weights + static_cast<std::size_t>(o) * s.in_features;
    const float g = gy[o];
    for (int i = 0; i < s.in_features; ++i) gx[i] += g * wrow[i];
  }
}

void dense_backward_params_row(const DenseShape& s, int o, const float* input,
                               const float* grad_output, float* grad_weights,
                               float* grad_bias) {
  float* gw = grad_weights + static_cast<std::size_t>(o) * s.in_features;
  std::fill(gw, gw + s.in_features, 0.0f);
  float gb = 0.0f;
  for (int n = 0; n < s.batch; ++n) {
    const float g = grad_output[static_cast<std::size_t>(n) * s.out_features + o];
    const float* x = input + static_cast<std::size_t>(n) * s.in_features;
    gb += g;
    for (int i = 0; i < s.in_features; ++i) gw[i] += g * x[i];
  }
  grad_bias[o] = gb;
}

void maxpool_forward_plane(const PoolShape& s, int plane_index, const float* input,
                           float* output, int* argmax) {
  const int oh = s.out_height(), ow = s.out_width();
  const float* in = input + static_cast<std::size_t>(plane_index) * s.height * s.width;
  float* out = output + static_cast<std::size_t>(plane_index) * oh * ow;
  int* arg = argmax + static_cast<std::size_t>(plane_index) * oh * ow;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      int best = (2 * y) * s.width + 2 * x;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int idx = (2 * y + dy) * s.width + 2 * x + dx;
          if (in[idx] > in[best]) best = idx;
        }
      }
      out[y * ow + x] = in[best];
      arg[y * ow + x] = best;
    }
  }
}

void maxpool_backward_plane(const PoolShape& s, int plane_index,
                            const float* grad_output, const int* argmax,
                            float* grad_input) {
  const std::size_t out_plane = static_cast<std::size_t>(s.out_height()) * s.out_width();
  const std::size_t in_plane = static_cast<std::size_t>(s.height) * s.width;
  float* gin = grad_input + plane_index * in_plane;
  std::fill(gin, gin + in_plane, 0.0f);
  const float* gout = grad_output + plane_index * out_plane;
  const int* arg = argmax + plane_index * out_plane;
  for (std::size_t p = 0; p < out_plane; ++p) gin[arg[p]] += gout[p];
}

void distance_row(int q, int pool, int dim, const float* query_rows,
                  const float* pool_rows, double* out) {
  const float* a = query_rows + static_cast<std::size_t>(q) * dim;
  for (int j = 0; j < pool; ++j) {
    const float* b = pool_rows + static_cast<std::size_t>(j) * dim;
    double acc = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
      acc += diff * diff;
    }
    out[static_cast<std::size_t>(q) * pool + j] = acc;
  }
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("kernel buffer size mismatch: ") + what);
}

void check_conv(const ConvShape& s, std::size_t in, std::size_t w, std::size_t out) {
  check(s.kernel % 2 == 1, "conv kernel must be odd");
  check(in == s.input_size(), "conv input");
  check(w == s.weight_size(), "conv weights");
  check(out == s.output_size(), "conv output");
}

void check_dense(const DenseShape& s, std::size_t in, std::size_t w, std::size_t out) {
  check(in == static_cast<std::size_t>(s.batch) * s.in_features, "dense input");
  check(w == static_cast<std::size_t>(s.in_features) * s.out_features, "dense weights");
  check(out == static_cast<std::size_t>(s.batch) * s.out_features, "dense output");
}

}  // namespace

namespace serial {

void conv2d_forward(const ConvShape& s, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
  check_conv(s, input.size(), weights.size(), output.size());
  for (int n = 0; n < s.batch; ++n)
    for (int o = 0; o < s.out_channels; ++o)
      conv_forward_plane(s, n, o, input.data(), weights.data(), bias.data(),
                         output.data());
}

void conv2d_backward_input(const ConvShape& s, std::span<const float> grad_output,
                           std::span<const float> weights,
                           std::span<float> grad_input) {
  check_conv(s, grad_input.size(), weights.size(), grad_output.size());
  for (int n = 0; n < s.batch; ++n)
    for (int i = 0; i < s.in_channels; ++i)
      conv_backward_input_plane(s, n, i, grad_output.data(), weights.data(),
                                grad_input.data());
}

void conv2d_backward_params(const ConvShape& s, std::span<const float> input,
                            std::span<const float> grad_output,
                            std::span<float> grad_weights,
                            std::span<float> grad_bias) {
  check_conv(s, input.size(), grad_weights.size(), grad_output.size());
  for (int o = 0; o < s.out_channels; ++o)
    conv_backward_params_channel(s, o, input.data(), grad_output.data(),
                                 grad_weights.data(), grad_bias.data());
}

void dense_forward(const DenseShape& s, std::span<const float> input,
                   std::span<const float> weights, std::span<const float> bias,
                   std::span<float> output) {
  check_dense(s, input.size(), weights.size(), output.size());
  for (int n = 0; n < s.batch; ++n)
    dense_forward_row(s, n, input.data(), weights.data(), bias.data(), output.data());
}

void dense_backward_input(const DenseShape& s, std::span<const float> grad_output,
                          std::span<const float> weights,
                          std::span<float> grad_input) {
  check_dense(s, grad_input.size(), weights.size(), grad_output.size());
  for (int n = 0; n < s.batch; ++n)
    dense_backward_input_row(s, n, grad_output.data(), weights.data(),
                             grad_input.data());
}

void dense_backward_params(const DenseShape& s, std::span<const float> input,
                           std::span<const float> grad_output,
                           std::span<float> grad_weights,
                           std::span<float> grad_bias) {
  check_dense(s, input.size(), grad_weights.size(), grad_output.size());
  for (int o = 0; o < s.out_features; ++o)
    dense_backward_params_row(s, o, input.data(), grad_output.data(),
                              grad_weights.data(), grad_bias.data());
}

void maxpool2_forward(const PoolShape& s, std::span<const float> input,
                      std::span<float> output, std::span<int> argmax) {
  check(input.size() == s.input_size() && output.size() == s.output_size() &&
            argmax.size() == s.output_size(),
        "maxpool forward");
  for (int p = 0; p < s.batch * s.channels; ++p)
    maxpool_forward_plane(s, p, input.data(), output.data(), argmax.data());
}

void maxpool2_backward(const PoolShape& s, std::span<const float> grad_output,
                       std::span<const int> argmax, std::span<float> grad_input) {
  check(grad_input.size() == s.input_size() && grad_output.size() == s.output_size() &&
            argmax.size() == s.output_size(),
        "maxpool backward");
  for (int p = 0; p < s.batch * s.channels; ++p)
    maxpool_backward_plane(s, p, grad_output.data(), argmax.data(), grad_input.data());
}

void squared_distances(int queries, int pool, int dim,
                       std::span<const float> query_rows,
                       std::span<const float> pool_rows, std::span<double> out) {
  check(query_rows.size() == static_cast<std::size_t>(queries) * dim &&
            pool_rows.size() == static_cast<std::size_t>(pool) * dim &&
            out.size() == static_cast<std::size_t>(queries) * pool,
        "squared distances");
  for (int q = 0; q < queries; ++q)
    distance_row(q, pool, dim, query_rows.data(), pool_rows.data(), out.data());
}

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
  check_conv(s, input.size(), weights.size(), output.size());
  const int items = s.batch * s.out_channels;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < items; ++t)
    conv_forward_plane(s, t / s.out_channels, t % s.out_channels, input.data(),
                       weights.data(), bias.data(), output.data());
}

void conv2d_backward_input(const ConvShape& s, std::span<const float> grad_output,
                           std::span<const float> weights,
                           std::span<float> grad_input) {
  check_conv(s, grad_input.size(), weights.size(), grad_output.size());
  const int items = s.batch * s.in_channels;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < items; ++t)
    conv_backward_input_plane(s, t / s.in_channels, t % s.in_channels,
                              grad_output.data(), weights.data(), grad_input.data());
}

void conv2d_backward_params(const ConvShape& s, std::span<const float> input,
                            std::span<const float> grad_output,
                            std::span<float> grad_weights,
                            std::span<float> grad_bias) {
  check_conv(s, input.size(), grad_weights.size(), grad_output.size());
#pragma omp parallel for schedule(dynamic)
  for (int o = 0; o < s.out_channels; ++o)
    conv_backward_params_channel(s, o, input.data(), grad_output.data(),
                                 grad_weights.data(), grad_bias.data());
}

void dense_forward(const DenseShape& s, std::span<const float> input,
                   std::span<const float> weights, std::span<const float> bias,
                   std::span<float> output) {
  check_dense(s, input.size(), weights.size(), output.size());
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n)
    dense_forward_row(s, n, input.data(), weights.data(), bias.data(), output.data());
}

void dense_backward_input(const DenseShape& s, std::span<const float> grad_output,
                          std::span<const float> weights,
                          std::span<float> grad_input) {
  check_dense(s, grad_input.size(), weights.size(), grad_output.size());
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n)
    dense_backward_input_row(s, n, grad_output.data(), weights.data(),
                             grad_input.data());
}

void dense_backward_params(const DenseShape& s, std::span<const float> input,
                           std::span<const float> grad_output,
                           std::span<float> grad_weights,
                           std::span<float> grad_bias) {
  check_dense(s, input.size(), grad_weights.size(), grad_output.size());
#pragma omp parallel for schedule(static)
  for (int o = 0; o < s.out_features; ++o)
    dense_backward_params_row(s, o, input.data(), grad_output.data(),
                              grad_weights.data(), grad_bias.data());
}

void maxpool2_forward(const PoolShape& s, std::span<const float> input,
                      std::span<float> output, std::span<int> argmax) {
  check(input.size() == s.input_size() && output.size() == s.output_size() &&
            argmax.size() == s.output_size(),
        "maxpool forward");
  const int planes = s.batch * s.channels;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p)
    maxpool_forward_plane(s, p, input.data(), output.data(), argmax.data());
}

void maxpool2_backward(const PoolShape& s, std::span<const float> grad_output,
                       std::span<const int> argmax, std::span<float> grad_input) {
  check(grad_input.size() == s.input_size() && grad_output.size() == s.output_size() &&
            argmax.size() == s.output_size(),
        "maxpool backward");
  const int planes = s.batch * s.channels;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p)
    maxpool_backward_plane(s, p, grad_output.data(), argmax.data(), grad_input.data());
}

void squared_distances(int queries, int pool, int dim,
                       std::span<const float> query_rows,
                       std::span<const float> pool_rows, std::span<double> out) {
  check(query_rows.size() == static_cast<std::size_t>(queries) * dim &&
            pool_rows.size() == static_cast<std::size_t>(pool) * dim &&
            out.size() == static_cast<std::size_t>(queries) * pool,
        "squared distances");
#pragma omp parallel for schedule(static)
  for (int q = 0; q < queries; ++q)
    distance_row(q, pool, dim, query_rows.data(), pool_rows.data(), out.data());
}

}  // namespace parallel
}  // namespace kernels

#define FEMUR_DISPATCH(name, ...)                          \
  if (mode_ == ExecutionMode::kReference) {                \
    kernels::serial::name(__VA_ARGS__);                    \
  } else {                                                 \
    kernels::parallel::name(__VA_ARGS__);                  \
  }

void Kernels::conv2d_forward(const ConvShape& s, std::span<const float> input,
                             std::span<const float> weights,
                             std::span<const float> bias,
                             std::span<float> output) const {
  FEMUR_DISPATCH(conv2d_forward, s, input, weights, bias, output)
}

void Kernels::conv2d_backward_input(const ConvShape& s,
                                    std::span<const float> grad_output,
                                    std::span<const float> weights,
                                    std::span<float> grad_input) const {
  FEMUR_DISPATCH(conv2d_backward_input, s, grad_output, weights, grad_input)
}

void Kernels::conv2d_backward_params(const ConvShape& s, std::span<const float> input,
                                     std::span<const float> grad_output,
                                     std::span<float> grad_weights,
                                     std::span<float> grad_bias) const {
  FEMUR_DISPATCH(conv2d_backward_params, s, input, grad_output, grad_weights, grad_bias)
}

void Kernels::dense_forward(const DenseShape& s, std::span<const float> input,
                            std::span<const float> weights,
                            std::span<const float> bias,
                            std::span<float> output) const {
  FEMUR_DISPATCH(dense_forward, s, input, weights, bias, output)
}

void Kernels::dense_backward_input(const DenseShape& s,
                                   std::span<const float> grad_output,
                                   std::span<const float> weights,
                                   std::span<float> grad_input) const {
  FEMUR_DISPATCH(dense_backward_input, s, grad_output, weights, grad_input)
}

void Kernels::dense_backward_params(const DenseShape& s, std::span<const float> input,
                                    std::span<const float> grad_output,
                                    std::span<float> grad_weights,
                                    std::span<float> grad_bias) const {
  FEMUR_DISPATCH(dense_backward_params, s, input, grad_output, grad_weights, grad_bias)
}

void Kernels::maxpool2_forward(const PoolShape& s, std::span<const float> input,
                               std::span<float> output, std::span<int> argmax) const {
  FEMUR_DISPATCH(maxpool2_forward, s, input, output, argmax)
}

void Kernels::maxpool2_backward(const PoolShape& s, std::span<const float> grad_output,
                                std::span<const int> argmax,
                                std::span<float> grad_input) const {
  FEMUR_DISPATCH(maxpool2_backward, s, grad_output, argmax, grad_input)
}

void Kernels::squared_distances(int queries, int pool, int dim,
                                std::span<const float> query_rows,
                                std::span<const float> pool_rows,
                                std::span<double> out) const {
  FEMUR_DISPATCH(squared_distances, queries, pool, dim, query_rows, pool_rows, out)
}

#undef FEMUR_DISPATCH

}  // namespace femur
