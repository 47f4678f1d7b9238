// SPDX-License-Identifier: Apache-2.0
#include "fixnet.h"

#include <cstring>
#include <string>

#include "fixnet/data.hpp"
#include "fixnet/experiment.hpp"
#include "fixnet/fxtensor.hpp"
#include "fixnet/sysarray.hpp"

using namespace fixnet;

struct fxn_tensor {
  fxt::FxTensor t;
};
struct fxn_config {
  experiment::Config c;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
fxn_status wrap(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return FXN_OK;
  } catch (const experiment::ConfigError& e) {
    g_last_error = e.what();
    return FXN_ERR_CONFIG;
  } catch (const data::DataError& e) {
    g_last_error = e.what();
    return FXN_ERR_DATA;
  } catch (const experiment::DivergenceError& e) {
    g_last_error = e.what();
    return FXN_ERR_DIVERGENCE;
  } catch (const sysarray::SysArrayError& e) {
    g_last_error = e.what();
    return FXN_ERR_CONFIG;
  } catch (const fxt::ShapeError& e) {
    g_last_error = e.what();
    return FXN_ERR_SHAPE;
  } catch (const fxp::FormatError& e) {
    g_last_error = e.what();
    return FXN_ERR_FORMAT;
  } catch (const fxt::AccWidthError& e) {
    g_last_error = e.what();
    return FXN_ERR_OVERFLOW;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return FXN_ERR_INVALID_ARG;
  } catch (const std::out_of_range& e) {
    g_last_error = e.what();
    return FXN_ERR_INVALID_ARG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FXN_ERR_INTERNAL;
  }
}

fxn_status invalid(const char* why) {
  g_last_error = why;
  return FXN_ERR_INVALID_ARG;
}

void copy_out(char* dst, size_t cap, const std::string& s) {
  if (!dst || cap == 0) return;
  size_t n = std::min(cap - 1, s.size());
  std::memcpy(dst, s.data(), n);
  dst[n] = '\0';
}

}  // namespace

extern "C" {

const char* fxn_version(void) { return "0.1.0"; }

const char* fxn_status_string(fxn_status s) {
  switch (s) {
    case FXN_OK: return "ok";
    case FXN_ERR_CONFIG: return "configuration error";
    case FXN_ERR_DATA: return "dataset error";
    case FXN_ERR_DIVERGENCE: return "training diverged";
    case FXN_ERR_INVALID_ARG: return "invalid argument";
    case FXN_ERR_SHAPE: return "shape mismatch";
    case FXN_ERR_FORMAT: return "format violation";
    case FXN_ERR_OVERFLOW: return "accumulator overflow";
    case FXN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* fxn_last_error(void) { return g_last_error.c_str(); }

fxn_status fxn_format_range(int32_t il, int32_t fl, double* lo, double* hi, double* eps) {
  return wrap([&] {
    auto f = fxp::FxFormat::make(il, fl);
    if (lo) *lo = f.lower().to_double();
    if (hi) *hi = f.upper().to_double();
    if (eps) *eps = f.epsilon().to_double();
  });
}

fxn_status fxn_convert(double x, int32_t il, int32_t fl, fxn_rounding mode, uint64_t seed,
                       uint64_t index, double* value_out, int64_t* mantissa_out) {
  return wrap([&] {
    auto f = fxp::FxFormat::make(il, fl);
    auto m = mode == FXN_ROUND_NEAREST ? fxp::RoundingMode::Nearest
                                       : fxp::RoundingMode::Stochastic;
    fxp::FxScalar s = fxp::convert(fxp::Rational::from_double(x), f, m,
                                   fxp::RngKey{seed, fxp::hash_tag("capi/convert"), index, 0});
    if (value_out) *value_out = s.to_double();
    if (mantissa_out) *mantissa_out = s.mantissa;
  });
}

fxn_status fxn_tensor_from_doubles(const int64_t* shape, int32_t ndim, const double* values,
                                   int32_t il, int32_t fl, fxn_rounding mode, uint64_t seed,
                                   const char* tag, fxn_tensor** out) {
  if (!shape || ndim < 1 || !values || !out) return invalid("fxn_tensor_from_doubles: null argument");
  return wrap([&] {
    auto f = fxp::FxFormat::make(il, fl);
    auto m = mode == FXN_ROUND_NEAREST ? fxp::RoundingMode::Nearest
                                       : fxp::RoundingMode::Stochastic;
    std::vector<int64_t> sh(shape, shape + ndim);
    int64_t numel = fxt::numel_of(sh);
    fxt::KeyedDraws src(seed, 0);
    auto t = fxt::from_doubles(std::move(sh), std::span<const double>(values, numel), f, m, src,
                               tag ? tag : "tensor");
    *out = new fxn_tensor{std::move(t)};
  });
}

void fxn_tensor_destroy(fxn_tensor* t) { delete t; }

fxn_status fxn_tensor_numel(const fxn_tensor* t, int64_t* out) {
  if (!t || !out) return invalid("fxn_tensor_numel: null argument");
  *out = t->t.numel();
  return FXN_OK;
}

fxn_status fxn_tensor_values(const fxn_tensor* t, double* out, int64_t cap) {
  if (!t || !out) return invalid("fxn_tensor_values: null argument");
  if (cap < t->t.numel()) return invalid("fxn_tensor_values: buffer too small");
  auto v = fxt::to_doubles(t->t);
  std::memcpy(out, v.data(), v.size() * sizeof(double));
  return FXN_OK;
}

fxn_status fxn_gemm(const fxn_tensor* a, const fxn_tensor* b, int32_t out_il, int32_t out_fl,
                    fxn_rounding mode, uint64_t seed, uint64_t step, const char* out_tag,
                    fxn_tensor** out) {
  if (!a || !b || !out) return invalid("fxn_gemm: null argument");
  return wrap([&] {
    fxt::GemmSpec spec{fxp::FxFormat::make(out_il, out_fl),
                       mode == FXN_ROUND_NEAREST ? fxp::RoundingMode::Nearest
                                                 : fxp::RoundingMode::Stochastic};
    fxt::KeyedDraws src(seed, step);
    auto c = fxt::gemm(a->t, b->t, spec, src, out_tag ? out_tag : "C");
    *out = new fxn_tensor{std::move(c)};
  });
}

fxn_status fxn_config_create(fxn_config** out) {
  if (!out) return invalid("fxn_config_create: null argument");
  *out = new fxn_config{};
  return FXN_OK;
}

fxn_status fxn_config_load(fxn_config* c, const char* path) {
  if (!c || !path) return invalid("fxn_config_load: null argument");
  return wrap([&] { c->c = experiment::Config::from_file(path); });
}

fxn_status fxn_config_set(fxn_config* c, const char* key, const char* value) {
  if (!c || !key || !value) return invalid("fxn_config_set: null argument");
  return wrap([&] { c->c.set(key, value); });
}

void fxn_config_destroy(fxn_config* c) { delete c; }

fxn_status fxn_experiment_run(const fxn_config* c, fxn_epoch_callback cb, void* user) {
  if (!c) return invalid("fxn_experiment_run: null argument");
  return wrap([&] {
    experiment::run(c->c, [&](const experiment::EpochRecord& r) {
      if (!cb) return;
      fxn_epoch_record rec{r.epoch, r.train_err, r.test_err, r.zero_update_frac, r.seconds};
      cb(&rec, user);
    });
  });
}

fxn_status fxn_compare_csv(const char* csv_a, const char* csv_b, double threshold,
                           fxn_compare_result* out) {
  if (!csv_a || !csv_b || !out) return invalid("fxn_compare_csv: null argument");
  return wrap([&] {
    auto r = experiment::compare_csv(csv_a, csv_b, threshold);
    out->epochs = r.epochs;
    out->final_test_delta = r.final_test_delta;
    out->final_train_delta = r.final_train_delta;
    out->first_divergence_epoch = r.first_divergence_epoch;
  });
}

fxn_status fxn_datagen(const char* kind, const char* dir, int64_t train_n, int64_t test_n,
                       uint64_t seed) {
  if (!kind || !dir) return invalid("fxn_datagen: null argument");
  return wrap([&] {
    std::string k = kind;
    if (k == "mnist") {
      synth::write_mnist_style(dir, train_n, test_n, seed);
    } else if (k == "cifar10") {
      synth::write_cifar_style(dir, train_n, test_n, seed);
    } else {
      throw experiment::ConfigError("datagen: kind must be mnist or cifar10");
    }
  });
}

fxn_status fxn_sysarray_run(const fxn_sysarray_params* params, fxn_sysarray_report* report,
                            char* text_out, size_t text_cap, char* csv_out, size_t csv_cap) {
  if (!params || !report) return invalid("fxn_sysarray_run: null argument");
  return wrap([&] {
    auto fmt = fxp::FxFormat::make(params->wl - params->fl_in, params->fl_in);
    auto out_fmt = fxp::FxFormat::make(params->wl - params->fl_out, params->fl_out);

    // Random in-range operands, deterministic in data_seed.
    auto fill = [&](fxt::FxTensor& t, uint64_t salt) {
      fxp::SplitMix64 rng(fxp::detail::mix64(params->data_seed ^ salt));
      const uint64_t span = static_cast<uint64_t>(t.format.max_mantissa()) -
                            static_cast<uint64_t>(t.format.min_mantissa()) + 1;
      for (auto& v : t.data)
        v = static_cast<int32_t>(t.format.min_mantissa() +
                                 static_cast<int64_t>(rng.next_below(span)));
    };
    fxt::FxTensor a = fxt::FxTensor::zeros({params->l, params->k}, fmt, "A");
    fxt::FxTensor b = fxt::FxTensor::zeros({params->k, params->m}, fmt, "B");
    fill(a, 0xA);
    fill(b, 0xB);

    sysarray::SysArrayConfig cfg;
    cfg.n = params->n;
    cfg.lfsr.width = params->lfsr_width;
    cfg.lfsr.seed = params->lfsr_seed ? params->lfsr_seed : 1;
    cfg.p = params->p;
    if (params->l2_capacity > 0) cfg.l2_capacity = params->l2_capacity;
    if (params->bandwidth_bytes_per_cycle > 0)
      cfg.bandwidth_bytes_per_cycle = params->bandwidth_bytes_per_cycle;
    if (params->frequency_hz > 0) cfg.frequency_hz = params->frequency_hz;
    cfg.power_w = params->power_w;

    fxt::GemmSpec spec{out_fmt, fxp::RoundingMode::Stochastic};
    auto sim = sysarray::simulate_gemm(a, b, cfg, spec);
    auto perf = sysarray::perf_report(sim.trace, cfg.frequency_hz, cfg.power_w);

    const auto& t = sim.trace;
    report->total_cycles = t.total_cycles;
    report->compute_cycles = t.compute_cycles;
    report->stall_cycles = t.stall_cycles;
    report->macc_ops = t.macc_ops;
    report->rounding_events = t.rounding_events;
    report->tiles = t.tiles;
    report->reuse_a = t.reuse_a;
    report->reuse_b = t.reuse_b;
    report->p = t.p;
    report->dsp_macc_units = t.dsp_macc_units;
    report->dsp_round_units = t.dsp_round_units;
    report->ops_per_cycle = t.ops_per_cycle;
    report->utilization = t.utilization;
    report->round_overhead = t.round_overhead;
    report->gops = perf.gops;
    report->gops_per_watt = perf.gops_per_watt;

    copy_out(text_out, text_cap, sysarray::report_text(t, perf));
    copy_out(csv_out, csv_cap, sysarray::report_csv(t, perf));
  });
}

}  // extern "C"
