// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fixnet::experiment {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value configuration with CLI overrides layered on top.
/// resolve() fills model-dependent defaults and validates; run() requires a
/// resolved config.
struct Config {
  std::string dataset = "mnist";        // mnist | cifar10
  std::string model = "dnn";            // dnn | cnn
  double scale = 1.0;                   // layer width / filter count factor
  std::string rounding = "stochastic";  // nearest | stochastic | float
  int wl = 16;
  int fl_weights = 14;
  int fl_outputs = -1;   // -1: dnn = fl_weights, mnist cnn = 10, cifar = 12
  int64_t batch = 100;
  double lr = -1;        // -1: dnn/mnist-cnn 0.1, cifar 0.01
  double lr_decay = -1;  // per-epoch factor; -1: mnist-cnn 0.95, else 1.0
  std::string lr_drop_epochs;  // comma list; cifar default "50,75,100"
  double lr_drop_factor = 0.5;
  double momentum = -1;      // -1: dnn 0, cnn 0.9
  double weight_decay = -1;  // -1: dnn 0, cnn 0.0005
  int epochs = 10;
  uint64_t seed = 1;
  int fine_tune_after = 0;  // widen after this epoch; 0 = off
  int fine_tune_delta = 4;
  std::string out = "run.csv";  // CSV path; sidecar <out>.config, <out>.ckpt
  std::string data_dir = "data";
  int64_t train_limit = 0, test_limit = 0;  // 0 = full split
  int threads = 0;
  bool timing = true;  // off: seconds column prints 0.000 (reproducible CSV)
  std::string init = "gaussian";  // gaussian (N(0,0.01)) | lecun (fan-in scaled)
  double init_scale = 1.0;        // multiplier on the init sigma

  static Config from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void resolve();
  std::string resolved_text() const;

  bool resolved = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_err = 0;         // percent
  double test_err = 0;          // percent
  double zero_update_frac = 0;  // fraction of update elements quantized to 0
  double seconds = 0;
};

constexpr const char* kCsvHeader = "epoch,train_err,test_err,zero_update_frac,seconds";

/// Trains per config, appending one CSV row per epoch (flushed
/// incrementally), writes the resolved config sidecar up front and the final
/// checkpoint at the end. Throws ConfigError / data::DataError /
/// DivergenceError; exit-code mapping happens at the API boundary.
std::vector<EpochRecord> run(const Config& config,
                             const std::function<void(const EpochRecord&)>& on_epoch = {});

struct CompareResult {
  int epochs = 0;
  double final_test_delta = 0;      // a.final - b.final
  double final_train_delta = 0;
  int first_divergence_epoch = -1;  // first epoch with |test_a - test_b| > threshold
};

/// Aligns two run CSVs by epoch. Errors on schema or epoch-count mismatch.
CompareResult compare_csv(const std::string& path_a, const std::string& path_b, double threshold);

std::vector<EpochRecord> read_csv(const std::string& path);

}  // namespace fixnet::experiment
