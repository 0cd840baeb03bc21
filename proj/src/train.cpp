#include "dcd/train.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "dcd/checkpoint.hpp"
#include "dcd/rng.hpp"

namespace dcd {

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    correct += best == labels[i];
  }
  return correct;
}

void check_dataset(const Network& net, const Dataset& d, const char* which) {
  if (d.size() == 0) throw ConfigError(std::string(which) + " set is empty");
  if (d.classes > net.graph().num_classes) {
    throw ConfigError(std::string(which) + " set has " + std::to_string(d.classes) + " classes but the model predicts " +
                      std::to_string(net.graph().num_classes));
  }
}

struct BatchResult {
  double loss = 0;
  std::size_t correct = 0;
  std::vector<Tensor> grads;
};

BatchResult run_batch(Network& net, const Dataset& data, std::span<const std::size_t> idx, bool update_stats) {
  ag::Tape t;
  ForwardContext ctx{t, true, update_stats, nullptr};
  const auto labels = data.labels(idx);
  const ag::Var logits = net.forward(ctx, t.constant(data.gather(idx)));
  const ag::Var loss = ag::cross_entropy(t, logits, labels);
  t.backward(loss);
  BatchResult r;
  r.loss = t.value(loss)[0];
  r.correct = count_correct(t.value(logits), labels);
  for (ag::Parameter* p : net.parameters()) r.grads.push_back(t.grad(t.param(*p)));
  return r;
}

}  // namespace

Evaluation evaluate(Network& net, const Dataset& data, std::size_t batch_size) {
  check_dataset(net, data, "evaluation");
  double loss = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    ag::Tape t;
    ForwardContext ctx{t, false, false, nullptr};
    const auto labels = data.labels(idx);
    const ag::Var logits = net.forward(ctx, t.constant(data.gather(idx)));
    loss += t.value(ag::cross_entropy(t, logits, labels))[0] * static_cast<double>(idx.size());
    correct += count_correct(t.value(logits), labels);
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

double learning_rate(const OptimConfig& o, std::size_t epoch, std::size_t step, std::size_t total_steps) {
  if (o.schedule == "constant") return o.lr;
  if (o.schedule == "step") return o.lr * std::pow(0.1, static_cast<double>(epoch / o.step_epochs));
  if (o.schedule == "cosine") {
    if (total_steps == 0) return o.lr;
    return 0.5 * o.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
  }
  throw ConfigError("unknown learning-rate schedule '" + o.schedule + "'");
}

Sgd::Sgd(std::vector<ag::Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (ag::Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::step(const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params_.size()) throw ShapeError("sgd: gradient count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i]->value;
    Tensor& v = velocity_[i];
    const Tensor& g = grads[i];
    require_shape(g, w.shape(), "sgd gradient");
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

TrainResult train(Network& net, const Dataset& train_set, const Dataset& test_set, const RunConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  check_dataset(net, train_set, "training");
  check_dataset(net, test_set, "test");
  TrainResult result;
  auto emit = [&](const EpochMetrics& m) {
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  };

  {
    const Evaluation tr = evaluate(net, train_set), te = evaluate(net, test_set);
    emit({0, tr.loss, tr.accuracy, te.loss, te.accuracy, learning_rate(cfg.optim, 0, 0, 0)});
  }

  const std::size_t n = train_set.size(), bs = cfg.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::size_t workers = std::max<std::size_t>(1, cfg.threads);
  Sgd opt(net.parameters(), cfg.optim.momentum, cfg.optim.weight_decay);
  Rng shuffle(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    const double epoch_lr = learning_rate(cfg.optim, epoch - 1, step, total_steps);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += bs, ++step) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(bs, n - start));
      BatchResult merged;
      try {
        const std::size_t shards = std::min(workers, batch.size());
        if (shards == 1) {
          merged = run_batch(net, train_set, batch, true);
        } else {
          // Contiguous shards; shard 0 alone updates the running statistics and
          // gradients are merged in shard order, weighted by shard size.
          std::vector<BatchResult> parts(shards);
          std::vector<std::exception_ptr> errors(shards);
          std::vector<std::thread> pool;
          const std::size_t per = (batch.size() + shards - 1) / shards;
          for (std::size_t s = 0; s < shards; ++s) {
            pool.emplace_back([&, s] {
              try {
                const std::size_t b = s * per, e = std::min(batch.size(), b + per);
                if (b < e) parts[s] = run_batch(net, train_set, batch.subspan(b, e - b), s == 0);
              } catch (...) {
                errors[s] = std::current_exception();
              }
            });
          }
          for (auto& th : pool) th.join();
          for (auto& e : errors)
            if (e) std::rethrow_exception(e);
          for (std::size_t s = 0; s < shards; ++s) {
            const std::size_t b = s * per, e = std::min(batch.size(), b + per);
            if (b >= e) continue;
            const double w = static_cast<double>(e - b) / static_cast<double>(batch.size());
            merged.loss += w * parts[s].loss;
            merged.correct += parts[s].correct;
            if (merged.grads.empty()) {
              for (const Tensor& g : parts[s].grads) merged.grads.push_back(scale(g, w));
            } else {
              for (std::size_t i = 0; i < merged.grads.size(); ++i) merged.grads[i] = add(merged.grads[i], scale(parts[s].grads[i], w));
            }
          }
        }
        if (!std::isfinite(merged.loss)) throw NumericError("loss is not finite");
      } catch (const NumericError& e) {
        result.diverged = true;
        result.failed_step = step + 1;
        result.error = e.what();
        return result;
      }
      opt.step(merged.grads, learning_rate(cfg.optim, epoch - 1, step, total_steps));
      loss_sum += merged.loss * static_cast<double>(batch.size());
      correct += merged.correct;
    }
    const Evaluation te = evaluate(net, test_set);
    emit({epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n), te.loss,
          te.accuracy, epoch_lr});
  }
  return result;
}

std::string metrics_csv_header() { return "epoch,train_loss,train_acc,val_loss,val_acc,lr\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + ',' + format_number(m.train_loss) + ',' + format_number(m.train_acc) + ',' +
         format_number(m.val_loss) + ',' + format_number(m.val_acc) + ',' + format_number(m.lr) + '\n';
}

ModelSpec fit_model_to_task(ModelSpec spec, const TaskConfig& task, std::size_t classes) {
  spec.num_classes = classes;
  if (spec.arch == "desk") {
    spec.desk.in_channels = task.kind == "images" ? 3 : task.channels;
    spec.resolution = task.resolution;
  } else {
    spec.resolution = task.resolution;
  }
  return spec;
}

TrainResult run_training(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  auto [train_set, test_set] = make_task(cfg.task, cfg.seed);
  if (cfg.task.kind != "images" && cfg.model.arch != "desk" && cfg.task.channels != 3) {
    throw ConfigError("zoo models take 3-channel input; set task.channels = 3 or use the images task");
  }
  const ModelSpec spec = fit_model_to_task(cfg.model, cfg.task, train_set.classes);
  Network net(build_model(spec), derive_seed(cfg.seed, "model"));

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  const std::string config_text = to_config(cfg).serialize();
  {
    std::ofstream(dir / "config.txt", std::ios::binary) << config_text;
  }
  TrainResult result;
  {
    std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw Error("cannot write " + (dir / "metrics.csv").string());
    metrics << metrics_csv_header();
    metrics.flush();
    result = train(net, train_set, test_set, cfg, [&](const EpochMetrics& m) {
      metrics << metrics_csv_row(m);
      metrics.flush();
    });
  }
  result.metrics_path = (dir / "metrics.csv").string();
  std::ofstream summary(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  summary << "status,epochs_completed,failed_step,final_train_loss,final_train_acc,final_val_loss,final_val_acc,error\n";
  const EpochMetrics& last = result.final();
  summary << (result.diverged ? "diverged" : "ok") << ',' << last.epoch << ',' << result.failed_step << ','
          << format_number(last.train_loss) << ',' << format_number(last.train_acc) << ','
          << format_number(last.val_loss) << ',' << format_number(last.val_acc) << ',' << '"' << result.error << '"'
          << '\n';
  if (!result.diverged) {
    result.checkpoint_path = (dir / "checkpoint.dcd").string();
    save_checkpoint(result.checkpoint_path, net, config_text);
  }
  return result;
}

std::vector<std::string> comparison_variants() { return {"static", "dcd", "vanilla-t1", "vanilla-t30"}; }

RunConfig comparison_config(const RunConfig& base, const std::string& variant, std::uint64_t seed) {
  if (base.model.arch != "desk") throw ConfigError("comparison runs use the desk architecture");
  RunConfig c = base;
  c.seed = seed;
  c.out_dir = (std::filesystem::path(base.out_dir) / (variant + "-seed" + std::to_string(seed))).string();
  DeskOptions& d = c.model.desk;
  if (variant == "static") {
    d.kind = DeskKind::Static;
  } else if (variant == "dcd") {
    d.kind = DeskKind::Dcd;
  } else if (variant == "vanilla-t1" || variant == "vanilla-t30") {
    d.kind = DeskKind::Vanilla;
    d.vanilla.mode = AttentionMode::Softmax;
    d.vanilla.temperature = variant == "vanilla-t1" ? 1.0 : 30.0;
  } else {
    throw ConfigError("unknown comparison variant '" + variant + "'");
  }
  return c;
}

double ComparisonReport::mean_val_acc(const std::string& variant) const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : runs)
    if (r.variant == variant) {
      sum += r.result.final().val_acc;
      ++n;
    }
  if (n == 0) throw ConfigError("no runs for variant '" + variant + "'");
  return sum / static_cast<double>(n);
}

std::string ComparisonReport::comparison_csv() const {
  std::string out = "variant,seed,status,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : runs) {
    const EpochMetrics& m = r.result.final();
    out += r.variant + ',' + std::to_string(r.seed) + ',' + (r.result.diverged ? "diverged" : "ok") + ',' +
           format_number(m.train_loss) + ',' + format_number(m.train_acc) + ',' + format_number(m.val_loss) + ',' +
           format_number(m.val_acc) + '\n';
  }
  return out;
}

std::string ComparisonReport::curves_csv() const {
  std::string out = "variant,seed," + metrics_csv_header();
  for (const auto& r : runs)
    for (const auto& m : r.result.history) out += r.variant + ',' + std::to_string(r.seed) + ',' + metrics_csv_row(m);
  return out;
}

ComparisonReport run_comparison(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<std::string>& variants) {
  ComparisonReport report;
  for (const auto& v : variants)
    for (std::uint64_t seed : seeds) report.runs.push_back({v, seed, run_training(comparison_config(base, v, seed))});
  std::filesystem::create_directories(base.out_dir);
  const std::filesystem::path dir(base.out_dir);
  std::ofstream(dir / "comparison.csv", std::ios::binary) << report.comparison_csv();
  std::ofstream(dir / "curves.csv", std::ios::binary) << report.curves_csv();
  return report;
}

LoadedRun load_run(const std::string& checkpoint_path) {
  const Checkpoint c = read_checkpoint(checkpoint_path);
  LoadedRun run;
  run.config = run_config_from(Config::parse(c.metadata, checkpoint_path + " (metadata)"));
  auto [train_set, test_set] = make_task(run.config.task, run.config.seed);
  const ModelSpec spec = fit_model_to_task(run.config.model, run.config.task, train_set.classes);
  run.net = std::make_unique<Network>(build_model(spec), derive_seed(run.config.seed, "model"));
  restore(*run.net, c);
  return run;
}

}  // namespace dcd
