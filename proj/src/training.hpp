#ifndef FEMUR_SRC_TRAINING_HPP_
#define FEMUR_SRC_TRAINING_HPP_

// Mini-batch SGD loop shared by the localizer and the classifier.

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "femur/model.hpp"
#include "femur/nn.hpp"
#include "femur/rng.hpp"

namespace femur::detail {

struct FitOptions {
  int epochs = 1;
  int batch_size = 1;
  nn::SgdConfig sgd;
  nn::LrSchedule schedule;
  std::uint64_t seed = 0;
};

struct FitHooks {
  // Network input for the given sample indices; may draw augmentation.
  std::function<nn::Tensor(const std::vector<int>&, Rng&)> make_input;
  // Mean loss of the batch; writes d(mean loss)/d(output) into grad.
  std::function<double(const nn::Tensor&, const std::vector<int>&, nn::Tensor&)> loss;
  // Validation (loss, metric) on the current weights.
  std::function<std::pair<double, double>(const nn::Network&)> validate;
  // True if `candidate` should replace `best` as the kept checkpoint.
  std::function<bool(const TrainingLogEntry&, const TrainingLogEntry&)> better;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains `net` in place and leaves it holding the best checkpoint.
inline std::vector<TrainingLogEntry> fit(nn::Network& net, int num_samples,
                                         const FitOptions& opt, const FitHooks& hooks,
                                         const Kernels& kernels) {
  if (num_samples < 1) throw TrainingError("empty training set");
  if (opt.epochs < 1 || opt.batch_size < 1) throw TrainingError("epochs and batch size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  nn::Sgd sgd(net, opt.sgd);
  Rng rng(opt.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<int> order(num_samples);
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainingLogEntry> log;
  TrainingLogEntry best;
  std::vector<std::uint8_t> best_weights;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    sgd.set_learning_rate(opt.schedule.rate_at(opt.sgd.learning_rate, epoch, opt.epochs));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (int first = 0; first < num_samples; first += opt.batch_size) {
      const int last = std::min(num_samples, first + opt.batch_size);
      std::vector<int> idx(order.begin() + first, order.begin() + last);
      nn::Tensor input = hooks.make_input(idx, rng);
      nn::Tensor out = net.forward(input, kernels);
      nn::Tensor grad(out.shape);
      const double loss = hooks.loss(out, idx, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", batch starting at " + std::to_string(first) +
                            "; try a lower learning rate");
      }
      loss_sum += loss * static_cast<double>(idx.size());
      net.backward(grad, kernels);
      sgd.step();
    }
    TrainingLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / num_samples;
    std::tie(entry.val_loss, entry.val_metric) = hooks.validate(net);
    if (!std::isfinite(entry.val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    entry.lr = sgd.learning_rate();
    entry.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(entry);
    if (best_weights.empty() || hooks.better(entry, best)) {
      best = entry;
      best_weights = net.serialize_weights();
    }
  }
  net.deserialize_weights(best_weights);
  return log;
}

}  // namespace femur::detail

#endif  // FEMUR_SRC_TRAINING_HPP_
