#pragma once

// Plain-text configuration.
//
//   # comment
//   seed = 3
//   [train]
//   epochs = 30          # trailing comments are allowed
//   [model.desk]
//   kind = dcd           # stored as model.desk.kind
//
// Keys may themselves be dotted. Values run to the end of the line (or to a
// '#'), with surrounding whitespace and optional double quotes removed. A key
// given twice is an error.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dcd/model.hpp"

namespace dcd {

class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Every key that is not in `known` (exact match).
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  // Sectioned text that parses back to the same key set.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::string schedule = "cosine";  // cosine (per step, to zero) | step | constant
  std::size_t step_epochs = 10;     // step schedule: divide by 10 every step_epochs
};

struct TaskConfig {
  std::string kind = "context-gated";  // context-gated | separable | images
  std::size_t train_size = 2048;
  std::size_t test_size = 1024;
  std::size_t channels = 8;
  std::size_t resolution = 16;
  std::size_t contexts = 4;
  double context_amplitude = 0.3;
  double low_scale = 0.5;
  double high_scale = 1.5;
  std::string image_dir;  // images: directory of class subdirectories of PNM files
};

struct RunConfig {
  ModelSpec model;
  OptimConfig optim;
  TaskConfig task;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // > 1 shards each batch across worker threads
  std::string out_dir = "runs/default";
};

RunConfig run_config_from(const Config& c);
Config to_config(const RunConfig& r);

ModelSpec model_spec_from(const Config& c, const std::string& prefix = "model");
void write_model_spec(Config& c, const ModelSpec& m, const std::string& prefix = "model");

}  // namespace dcd
