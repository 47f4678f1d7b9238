// SPDX-License-Identifier: Apache-2.0
//
// fixnet CLI: experiment runner, run comparison, dataset generation and the
// systolic-array simulator. Talks to the core exclusively through the C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fixnet.h"

namespace {

int exit_code_for(fxn_status s) {
  switch (s) {
    case FXN_OK: return 0;
    case FXN_ERR_CONFIG: return 1;
    case FXN_ERR_DATA: return 2;
    case FXN_ERR_DIVERGENCE: return 3;
    default: return 4;
  }
}

int fail(fxn_status s, const char* what) {
  std::cerr << what << ": " << fxn_status_string(s);
  if (fxn_last_error()[0]) std::cerr << " (" << fxn_last_error() << ")";
  std::cerr << "\n";
  return exit_code_for(s);
}

void print_epoch(const fxn_epoch_record* r, void*) {
  std::printf("epoch %3d  train %6.2f%%  test %6.2f%%  zero-updates %.4f  %.1fs\n", r->epoch,
              r->train_err, r->test_err, r->zero_update_frac, r->seconds);
  std::fflush(stdout);
}

struct ConfigHandle {
  fxn_config* c = nullptr;
  ConfigHandle() { fxn_config_create(&c); }
  ~ConfigHandle() { fxn_config_destroy(c); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixnet: limited-precision fixed-point training and hardware simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fxn_version()));

  // ---- run -----------------------------------------------------------------
  auto* run = app.add_subcommand("run", "train a network per config file / flags");
  std::string config_path;
  run->add_option("config", config_path, "key=value config file");
  std::map<std::string, std::string> overrides;
  bool quiet = false, no_timing = false;
  auto opt = [&](const char* flag, const char* key, const char* help) {
    run->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, help);
  };
  opt("--dataset", "dataset", "mnist | cifar10");
  opt("--model", "model", "dnn | cnn");
  opt("--rounding", "rounding", "nearest | stochastic | float");
  opt("--wl", "wl", "word length in bits");
  opt("--fl", "fl_weights", "fractional bits for weights and updates");
  opt("--fl-outputs", "fl_outputs", "fractional bits for layer outputs");
  opt("--seed", "seed", "experiment seed");
  opt("--epochs", "epochs", "training epochs");
  opt("--scale", "scale", "layer width / filter count factor");
  opt("--batch", "batch", "minibatch size");
  opt("--lr", "lr", "initial learning rate");
  opt("--lr-decay", "lr_decay", "per-epoch learning-rate factor");
  opt("--lr-drop-epochs", "lr_drop_epochs", "comma list of epochs after which lr drops");
  opt("--lr-drop-factor", "lr_drop_factor", "factor applied at each drop");
  opt("--momentum", "momentum", "momentum coefficient");
  opt("--weight-decay", "weight_decay", "weight decay coefficient");
  opt("--fine-tune-after", "fine_tune_after", "widen formats after this epoch");
  opt("--fine-tune-delta", "fine_tune_delta", "fractional bits added when widening");
  opt("--out", "out", "output CSV path (sidecar: .config, checkpoint: .ckpt)");
  opt("--data-dir", "data_dir", "dataset directory");
  opt("--train-limit", "train_limit", "cap on training samples (0 = all)");
  opt("--test-limit", "test_limit", "cap on test samples (0 = all)");
  opt("--threads", "threads", "worker threads (0 = hardware)");
  run->add_flag("--no-timing", no_timing, "zero the seconds column (reproducible CSV)");
  run->add_flag("--quiet", quiet, "suppress per-epoch progress lines");

  // ---- compare ----------------------------------------------------------------
  auto* cmp = app.add_subcommand("compare", "align two run CSVs by epoch");
  std::string csv_a, csv_b;
  double threshold = 1.0;
  cmp->add_option("a", csv_a, "first CSV")->required();
  cmp->add_option("b", csv_b, "second CSV")->required();
  cmp->add_option("--threshold", threshold, "divergence threshold in error points");

  // ---- datagen ----------------------------------------------------------------
  auto* gen = app.add_subcommand("datagen", "write a synthetic dataset in MNIST/CIFAR-10 format");
  std::string gen_kind = "mnist", gen_dir = "data";
  int64_t gen_train = 12000, gen_test = 2000;
  uint64_t gen_seed = 1;
  gen->add_option("--dataset", gen_kind, "mnist | cifar10");
  gen->add_option("--dir", gen_dir, "output directory")->required();
  gen->add_option("--train", gen_train, "training samples");
  gen->add_option("--test", gen_test, "test samples");
  gen->add_option("--seed", gen_seed, "generator seed");

  // ---- sysarray ----------------------------------------------------------------
  auto* sa = app.add_subcommand("sysarray", "simulate the systolic-array GEMM");
  fxn_sysarray_params sp{};
  sp.n = 28;
  sp.l = 256;
  sp.k = 256;
  sp.m = 256;
  sp.wl = 16;
  sp.fl_in = 14;
  sp.fl_out = 14;
  sp.lfsr_seed = 1;
  sp.l2_capacity = 1 << 19;
  sp.bandwidth_bytes_per_cycle = 38.5;
  sp.frequency_hz = 166e6;
  sp.power_w = 7.0;
  sp.data_seed = 1;
  std::string sa_csv;
  sa->add_option("--n", sp.n, "array dimension (n x n)");
  sa->add_option("--l", sp.l, "rows of A");
  sa->add_option("--k", sp.k, "inner dimension");
  sa->add_option("--m", sp.m, "columns of B");
  sa->add_option("--wl", sp.wl, "operand word length");
  sa->add_option("--fl-in", sp.fl_in, "operand fractional bits");
  sa->add_option("--fl-out", sp.fl_out, "output fractional bits");
  sa->add_option("--lfsr-width", sp.lfsr_width, "rounded-off LSBs (0 = derive)");
  sa->add_option("--lfsr-seed", sp.lfsr_seed, "LFSR seed");
  sa->add_option("--p", sp.p, "row-block multiplier (0 = derive from --l2)");
  sa->add_option("--l2", sp.l2_capacity, "on-chip capacity in elements");
  sa->add_option("--bandwidth", sp.bandwidth_bytes_per_cycle, "DDR bytes per cycle");
  sa->add_option("--freq", sp.frequency_hz, "clock frequency in Hz");
  sa->add_option("--power", sp.power_w, "power in watts");
  sa->add_option("--seed", sp.data_seed, "operand data seed");
  sa->add_option("--csv", sa_csv, "also write the report as CSV to this path");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    ConfigHandle cfg;
    if (!config_path.empty()) {
      if (auto s = fxn_config_load(cfg.c, config_path.c_str()); s != FXN_OK)
        return fail(s, "config");
    }
    for (const auto& [k, v] : overrides)
      if (auto s = fxn_config_set(cfg.c, k.c_str(), v.c_str()); s != FXN_OK)
        return fail(s, "config");
    if (no_timing) fxn_config_set(cfg.c, "timing", "off");
    auto s = fxn_experiment_run(cfg.c, quiet ? nullptr : print_epoch, nullptr);
    if (s != FXN_OK) return fail(s, "run");
    return 0;
  }

  if (cmp->parsed()) {
    fxn_compare_result r{};
    if (auto s = fxn_compare_csv(csv_a.c_str(), csv_b.c_str(), threshold, &r); s != FXN_OK)
      return fail(s, "compare");
    std::printf("epochs: %d\n", r.epochs);
    std::printf("final test error delta (a - b): %+.4f points\n", r.final_test_delta);
    std::printf("final train error delta (a - b): %+.4f points\n", r.final_train_delta);
    if (r.first_divergence_epoch >= 0)
      std::printf("curves diverge by > %.3f points first at epoch %d\n", threshold,
                  r.first_divergence_epoch);
    else
      std::printf("curves stay within %.3f points at every epoch\n", threshold);
    return 0;
  }

  if (gen->parsed()) {
    if (auto s = fxn_datagen(gen_kind.c_str(), gen_dir.c_str(), gen_train, gen_test, gen_seed);
        s != FXN_OK)
      return fail(s, "datagen");
    std::printf("wrote %s-format dataset (%lld train / %lld test) to %s\n", gen_kind.c_str(),
                static_cast<long long>(gen_train), static_cast<long long>(gen_test),
                gen_dir.c_str());
    return 0;
  }

  if (sa->parsed()) {
    fxn_sysarray_report rep{};
    std::vector<char> text(8192), csv(8192);
    if (auto s = fxn_sysarray_run(&sp, &rep, text.data(), text.size(), csv.data(), csv.size());
        s != FXN_OK)
      return fail(s, "sysarray");
    std::fputs(text.data(), stdout);
    if (!sa_csv.empty()) {
      std::ofstream out(sa_csv, std::ios::trunc);
      if (!out) {
        std::cerr << "cannot write " << sa_csv << "\n";
        return 4;
      }
      out << csv.data();
    }
    return 0;
  }
  return 0;
}
