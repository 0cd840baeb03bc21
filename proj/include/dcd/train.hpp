#pragma once

// SGD training on a Dataset, with per-epoch metrics and checkpoints.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dcd/config.hpp"
#include "dcd/network.hpp"
#include "dcd/task.hpp"

namespace dcd {

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 is the evaluation before any update
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  bool diverged = false;
  std::size_t failed_step = 0;  // global step (1-based) whose loss was not finite
  std::string error;
  std::string metrics_path;
  std::string checkpoint_path;

  const EpochMetrics& final() const { return history.back(); }
};

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

// Eval-mode mean cross-entropy and accuracy.
Evaluation evaluate(Network& net, const Dataset& data, std::size_t batch_size = 256);

// Learning rate for global step t (0-based) within an epoch. Cosine decays per
// step to zero at total_steps; step divides by 10 every step_epochs epochs.
double learning_rate(const OptimConfig& o, std::size_t epoch, std::size_t step, std::size_t total_steps);

class Sgd {
 public:
  Sgd(std::vector<ag::Parameter*> params, double momentum, double weight_decay);
  // v = momentum * v + (g + wd * w);  w -= lr * v
  void step(const std::vector<Tensor>& grads, double lr);

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<Tensor> velocity_;
  double momentum_, weight_decay_;
};

// Trains `net` in place. Writes nothing; see run_training for the files.
// `on_epoch` (optional) sees every metrics row as it is produced.
TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set, const RunConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

// Header: epoch,train_loss,train_acc,val_loss,val_acc,lr
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// Adjusts a model spec to a task (input channels, classes, resolution for the
// small-network family).
ModelSpec fit_model_to_task(ModelSpec spec, const TaskConfig& task, std::size_t classes);

// Full run: builds data and model from cfg, trains, and writes into
// cfg.out_dir: config.txt, metrics.csv, checkpoint.dcd, summary.csv.
// A non-finite loss stops the run; summary.csv records the failing step.
TrainResult run_training(const RunConfig& cfg);

// Desk-scale comparison: the same task and schedule trained with a static
// network, a DCD network and attention-over-kernels networks at two softmax
// temperatures, for several seeds.
struct ComparisonRun {
  std::string variant;  // static | dcd | vanilla-t1 | vanilla-t30
  std::uint64_t seed = 0;
  TrainResult result;
};

struct ComparisonReport {
  std::vector<ComparisonRun> runs;

  // Mean final test accuracy of a variant over its seeds.
  double mean_val_acc(const std::string& variant) const;
  // variant,seed,status,train_loss,train_acc,val_loss,val_acc
  std::string comparison_csv() const;
  // variant,seed,epoch,train_loss,train_acc,val_loss,val_acc,lr
  std::string curves_csv() const;
};

std::vector<std::string> comparison_variants();
RunConfig comparison_config(const RunConfig& base, const std::string& variant, std::uint64_t seed);

// Each run writes into out_dir/<variant>-seed<N>; comparison.csv and
// curves.csv go to out_dir.
ComparisonReport run_comparison(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<std::string>& variants = comparison_variants());

// A trained network rebuilt from a checkpoint written by run_training. The
// checkpoint metadata carries the run config.
struct LoadedRun {
  RunConfig config;
  std::unique_ptr<Network> net;
};
LoadedRun load_run(const std::string& checkpoint_path);

// Shortest decimal form that reads back to the same double.
std::string format_number(double v);

}  // namespace dcd
