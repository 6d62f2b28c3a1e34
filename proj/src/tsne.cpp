#include "femur/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "femur/rng.hpp"

namespace femur {

using nlohmann::json;

double effective_perplexity(int n, double requested) {
  if (!(requested > 0.0)) throw std::invalid_argument("perplexity must be positive");
  return std::min(requested, (n - 1) / 3.0);
}

double effective_learning_rate(int n, const TsneConfig& cfg) {
  if (cfg.learning_rate > 0.0) return cfg.learning_rate;
  return n / std::max(cfg.early_exaggeration, 1.0);
}

namespace {

// Conditional P(j|i) with the Gaussian bandwidth found by bisection on beta
// so that the row entropy matches log(perplexity).
void conditional_row(const double* d2, int n, int i, double perplexity, double* row) {
  const double target = std::log(perplexity);
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    double sum = 0.0, weighted = 0.0;
    for (int j = 0; j < n; ++j) {
      row[j] = j == i ? 0.0 : std::exp(-beta * d2[j]);
      sum += row[j];
      weighted += row[j] * d2[j];
    }
    if (sum <= 0.0) {
      // Bandwidth too narrow for every neighbor; widen.
      hi = beta;
      beta = (lo + hi) / 2.0;
      continue;
    }
    const double entropy = std::log(sum) + beta * weighted / sum;
    for (int j = 0; j < n; ++j) row[j] /= sum;
    const double diff = entropy - target;
    if (std::abs(diff) < 1e-5) return;
    if (diff > 0.0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = (beta + lo) / 2.0;
    }
  }
}

// Gradient of KL(P||Q) for the current embedding. Each output row is summed
// in column order so the parallel variant matches the serial one bitwise.
void gradient(const std::vector<double>& p, const std::vector<double>& y, int n,
              double exaggeration, std::vector<double>& num, std::vector<double>& grad,
              bool parallel) {
  std::vector<double> row_sums(n, 0.0);
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double v = 0.0;
      if (i != j) {
        const double dx = y[2 * i] - y[2 * j];
        const double dy = y[2 * i + 1] - y[2 * j + 1];
        v = 1.0 / (1.0 + dx * dx + dy * dy);
      }
      num[static_cast<std::size_t>(i) * n + j] = v;
      s += v;
    }
    row_sums[i] = s;
  }
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += row_sums[i];
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n; ++i) {
    double gx = 0.0, gy = 0.0;
    for (int j = 0; j < n; ++j) {
      const double w = num[static_cast<std::size_t>(i) * n + j];
      const double m = (exaggeration * p[static_cast<std::size_t>(i) * n + j] - w / z) * w;
      gx += m * (y[2 * i] - y[2 * j]);
      gy += m * (y[2 * i + 1] - y[2 * j + 1]);
    }
    grad[2 * i] = 4.0 * gx;
    grad[2 * i + 1] = 4.0 * gy;
  }
}

}  // namespace

std::vector<std::array<double, 2>> tsne_project(const std::vector<float>& points, int n, int dim,
                                                const TsneConfig& cfg) {
  if (n < 4) throw std::invalid_argument("t-SNE needs at least 4 points, got " + std::to_string(n));
  if (dim < 1 || points.size() != static_cast<std::size_t>(n) * dim) {
    throw std::invalid_argument("t-SNE input size does not match n x dim");
  }
  if (cfg.iterations < 1) throw std::invalid_argument("t-SNE iterations must be >= 1");
  const double perplexity = effective_perplexity(n, cfg.perplexity);
  const bool parallel = cfg.execution == ExecutionMode::kParallel;
  const double learning_rate = effective_learning_rate(n, cfg);

  std::vector<double> d2(static_cast<std::size_t>(n) * n);
  Kernels(cfg.execution).squared_distances(n, n, dim, points, points, d2);

  std::vector<double> p(static_cast<std::size_t>(n) * n);
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n; ++i) {
    conditional_row(d2.data() + static_cast<std::size_t>(i) * n, n, i, perplexity,
                    p.data() + static_cast<std::size_t>(i) * n);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
      p[i * n + j] = v;
      p[j * n + i] = v;
    }
  }

  Rng rng(cfg.seed);
  std::vector<double> y(2 * static_cast<std::size_t>(n));
  for (double& v : y) v = 1e-4 * rng.normal();
  std::vector<double> update(y.size(), 0.0), gains(y.size(), 1.0), grad(y.size());
  std::vector<double> num(static_cast<std::size_t>(n) * n);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const bool early = iter < cfg.exaggeration_iterations;
    gradient(p, y, n, early ? cfg.early_exaggeration : 1.0, num, grad, parallel);
    const double momentum = early ? 0.5 : 0.8;
    for (std::size_t k = 0; k < y.size(); ++k) {
      const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = std::max(same_sign ? gains[k] * 0.8 : gains[k] + 0.2, 0.01);
      update[k] = momentum * update[k] - learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= n;
    my /= n;
    for (int i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }

  std::vector<std::array<double, 2>> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = {y[2 * i], y[2 * i + 1]};
    if (!std::isfinite(out[i][0]) || !std::isfinite(out[i][1])) {
      throw std::runtime_error("t-SNE diverged");
    }
  }
  return out;
}

std::vector<std::array<double, 2>> tsne_project(const std::vector<std::vector<float>>& points,
                                                const TsneConfig& cfg) {
  if (points.empty()) throw std::invalid_argument("t-SNE needs at least 4 points, got 0");
  const int dim = static_cast<int>(points.front().size());
  std::vector<float> flat;
  for (const auto& row : points) {
    if (static_cast<int>(row.size()) != dim) throw std::invalid_argument("t-SNE rows differ in width");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return tsne_project(flat, static_cast<int>(points.size()), dim, cfg);
}

json tsne_table_json(const std::vector<TsnePoint>& points,
                     const std::vector<std::string>& label_names) {
  json rows = json::array();
  for (const auto& p : points) {
    rows.push_back({{"x", p.x}, {"y", p.y}, {"label", p.label}, {"side", p.side},
                    {"item_ref", p.item_ref}});
  }
  return {{"label_names", label_names}, {"points", rows}};
}

std::string tsne_table_csv(const std::vector<TsnePoint>& points) {
  std::ostringstream out;
  out.precision(17);
  out << "x,y,label,side,item_ref\n";
  for (const auto& p : points) {
    out << p.x << ',' << p.y << ',' << p.label << ',' << p.side << ',' << p.item_ref << '\n';
  }
  return out.str();
}

std::vector<TsnePoint> tsne_points_from_json(const json& j) {
  std::vector<TsnePoint> out;
  for (const auto& row : j.at("points")) {
    out.push_back({row.at("x").get<double>(), row.at("y").get<double>(),
                   row.at("label").get<int>(), row.value("side", std::string()),
                   row.value("item_ref", std::string())});
  }
  return out;
}

}  // namespace femur
