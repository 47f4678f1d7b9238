// SPDX-License-Identifier: Apache-2.0
#include "fixnet/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fixnet/checkpoint.hpp"
#include "fixnet/data.hpp"
#include "fixnet/net.hpp"
#include "fixnet/parallel.hpp"

namespace fixnet::experiment {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean value for " + key + ": '" + v + "'");
}

std::vector<int> parse_epoch_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_int("lr_drop_epochs", item)));
  }
  return out;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  Config c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
    c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  resolved = false;
  if (key == "dataset") dataset = value;
  else if (key == "model") model = value;
  else if (key == "scale") scale = parse_double(key, value);
  else if (key == "rounding") rounding = value;
  else if (key == "wl") wl = static_cast<int>(parse_int(key, value));
  else if (key == "fl_weights" || key == "fl") fl_weights = static_cast<int>(parse_int(key, value));
  else if (key == "fl_outputs") fl_outputs = static_cast<int>(parse_int(key, value));
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "lr_decay") lr_decay = parse_double(key, value);
  else if (key == "lr_drop_epochs") lr_drop_epochs = value;
  else if (key == "lr_drop_factor") lr_drop_factor = parse_double(key, value);
  else if (key == "momentum") momentum = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "epochs") epochs = static_cast<int>(parse_int(key, value));
  else if (key == "seed") seed = static_cast<uint64_t>(parse_int(key, value));
  else if (key == "fine_tune_after") fine_tune_after = static_cast<int>(parse_int(key, value));
  else if (key == "fine_tune_delta") fine_tune_delta = static_cast<int>(parse_int(key, value));
  else if (key == "out") out = value;
  else if (key == "data_dir") data_dir = value;
  else if (key == "train_limit") train_limit = parse_int(key, value);
  else if (key == "test_limit") test_limit = parse_int(key, value);
  else if (key == "threads") threads = static_cast<int>(parse_int(key, value));
  else if (key == "timing") timing = parse_bool(key, value);
  else if (key == "init") init = value;
  else if (key == "init_scale") init_scale = parse_double(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void Config::resolve() {
  if (dataset != "mnist" && dataset != "cifar10")
    throw ConfigError("config: dataset must be mnist or cifar10");
  if (model != "dnn" && model != "cnn") throw ConfigError("config: model must be dnn or cnn");
  if (model == "dnn" && dataset != "mnist")
    throw ConfigError("config: the dnn model is defined for mnist only");
  if (rounding != "nearest" && rounding != "stochastic" && rounding != "float")
    throw ConfigError("config: rounding must be nearest, stochastic or float");

  const bool mnist_cnn = (model == "cnn" && dataset == "mnist");
  const bool cifar = (dataset == "cifar10");
  if (fl_outputs < 0) fl_outputs = model == "dnn" ? fl_weights : (mnist_cnn ? 10 : 12);
  if (lr < 0) lr = cifar ? 0.01 : 0.1;
  if (lr_decay < 0) lr_decay = mnist_cnn ? 0.95 : 1.0;
  if (momentum < 0) momentum = model == "cnn" ? 0.9 : 0.0;
  if (weight_decay < 0) weight_decay = model == "cnn" ? 0.0005 : 0.0;
  if (lr_drop_epochs.empty() && cifar) lr_drop_epochs = "50,75,100";

  if (wl < 2 || wl > 31) throw ConfigError("config: wl out of range [2,31]");
  if (fl_weights < 0 || fl_weights >= wl)
    throw ConfigError("config: need 0 <= fl_weights < wl (il >= 1)");
  if (fl_outputs < 0 || fl_outputs >= wl)
    throw ConfigError("config: need 0 <= fl_outputs < wl (il >= 1)");
  if (batch < 1) throw ConfigError("config: batch must be >= 1");
  if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (scale <= 0) throw ConfigError("config: scale must be > 0");
  if (lr <= 0) throw ConfigError("config: lr must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("config: momentum must be in [0,1)");
  if (weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
  if (fine_tune_after < 0) throw ConfigError("config: fine_tune_after must be >= 0");
  if (fine_tune_after > 0 && fine_tune_delta <= 0)
    throw ConfigError("config: fine_tune_delta must be > 0");
  if (fine_tune_after > 0 && rounding == "float")
    throw ConfigError("config: fine-tuning requires a fixed-point rounding mode");
  if (train_limit < 0 || test_limit < 0) throw ConfigError("config: limits must be >= 0");
  parse_epoch_list(lr_drop_epochs);
  if (init != "gaussian" && init != "lecun")
    throw ConfigError("config: init must be gaussian or lecun");
  if (init_scale <= 0) throw ConfigError("config: init_scale must be > 0");
  if (out.empty()) throw ConfigError("config: out path must not be empty");
  resolved = true;
}

std::string Config::resolved_text() const {
  std::ostringstream os;
  os << "batch=" << batch << "\n";
  os << "data_dir=" << data_dir << "\n";
  os << "dataset=" << dataset << "\n";
  os << "epochs=" << epochs << "\n";
  os << "fine_tune_after=" << fine_tune_after << "\n";
  os << "fine_tune_delta=" << fine_tune_delta << "\n";
  os << "fl_outputs=" << fl_outputs << "\n";
  os << "fl_weights=" << fl_weights << "\n";
  os << "init=" << init << "\n";
  os << "init_scale=" << init_scale << "\n";
  os << "lr=" << lr << "\n";
  os << "lr_decay=" << lr_decay << "\n";
  os << "lr_drop_epochs=" << lr_drop_epochs << "\n";
  os << "lr_drop_factor=" << lr_drop_factor << "\n";
  os << "model=" << model << "\n";
  os << "momentum=" << momentum << "\n";
  os << "out=" << out << "\n";
  os << "rounding=" << rounding << "\n";
  os << "scale=" << scale << "\n";
  os << "seed=" << seed << "\n";
  os << "test_limit=" << test_limit << "\n";
  os << "threads=" << threads << "\n";
  os << "timing=" << (timing ? "on" : "off") << "\n";
  os << "train_limit=" << train_limit << "\n";
  os << "wl=" << wl << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {

void truncate_split(data::Dataset& ds, int64_t limit) {
  if (limit <= 0 || limit >= ds.n) return;
  ds.n = limit;
  ds.pixels.resize(static_cast<size_t>(limit * ds.image_elems()));
  ds.labels.resize(static_cast<size_t>(limit));
}

double lr_at_epoch(const Config& cfg, int epoch /*1-based*/) {
  double v = cfg.lr * std::pow(cfg.lr_decay, epoch - 1);
  for (int drop : parse_epoch_list(cfg.lr_drop_epochs))
    if (epoch > drop) v *= cfg.lr_drop_factor;
  return v;
}

std::string csv_row(const EpochRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.4f,%.4f,%.6f,%.3f", r.epoch, r.train_err, r.test_err,
                r.zero_update_frac, r.seconds);
  return buf;
}

net::NetSpec build_spec(const Config& cfg) {
  auto wf = fxp::FxFormat::make(cfg.wl - cfg.fl_weights, cfg.fl_weights);
  auto of = fxp::FxFormat::make(cfg.wl - cfg.fl_outputs, cfg.fl_outputs);
  if (cfg.model == "dnn") return net::build_mnist_dnn(cfg.scale, wf, of);
  if (cfg.dataset == "mnist") return net::build_mnist_cnn(cfg.scale, wf, of);
  return net::build_cifar_cnn(cfg.scale, wf, of);
}

template <class EvalFn>
double eval_error_percent(const data::Dataset& ds, int64_t chunk, EvalFn&& fn) {
  int64_t wrong = 0;
  std::vector<int64_t> idx;
  for (int64_t lo = 0; lo < ds.n; lo += chunk) {
    int64_t hi = std::min(ds.n, lo + chunk);
    idx.resize(static_cast<size_t>(hi - lo));
    for (int64_t i = lo; i < hi; ++i) idx[i - lo] = i;
    std::vector<int> preds = fn(idx);
    for (int64_t i = lo; i < hi; ++i)
      if (preds[i - lo] != ds.labels[i]) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.n);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw ConfigError("cannot write output file " + path);
    out_ << kCsvHeader << "\n";
    out_.flush();
  }
  void row(const EpochRecord& r) {
    out_ << csv_row(r) << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace

std::vector<EpochRecord> run(const Config& config,
                             const std::function<void(const EpochRecord&)>& on_epoch) {
  Config cfg = config;
  cfg.resolve();
  if (cfg.threads > 0) util::set_parallel_threads(cfg.threads);

  auto [train, test] = cfg.dataset == "mnist" ? data::load_mnist(cfg.data_dir)
                                              : data::load_cifar10(cfg.data_dir);
  truncate_split(train, cfg.train_limit);
  truncate_split(test, cfg.test_limit);
  if (train.n < cfg.batch) throw ConfigError("config: train split smaller than one minibatch");

  net::NetSpec spec = build_spec(cfg);

  namespace fs = std::filesystem;
  if (fs::path(cfg.out).has_parent_path()) fs::create_directories(fs::path(cfg.out).parent_path());
  {
    std::ofstream side(cfg.out + ".config", std::ios::trunc);
    if (!side) throw ConfigError("cannot write sidecar " + cfg.out + ".config");
    side << cfg.resolved_text();
  }
  CsvWriter csv(cfg.out);
  std::vector<EpochRecord> records;

  const int64_t eval_chunk = std::max<int64_t>(cfg.batch, 200);
  const bool is_float = cfg.rounding == "float";
  const auto mode = cfg.rounding == "nearest" ? fxp::RoundingMode::Nearest
                                              : fxp::RoundingMode::Stochastic;

  auto push_record = [&](EpochRecord r) {
    records.push_back(r);
    csv.row(r);
    if (on_epoch) on_epoch(r);
  };

  const auto init_scheme =
      cfg.init == "lecun" ? net::InitScheme::LeCun : net::InitScheme::Gaussian001;
  if (is_float) {
    net::RealNetState state =
        net::init_weights_real(spec, cfg.seed, init_scheme, cfg.init_scale);
    for (int e = 1; e <= cfg.epochs; ++e) {
      auto t0 = std::chrono::steady_clock::now();
      const double lr_e = lr_at_epoch(cfg, e);
      int64_t seen = 0, wrong = 0;
      for (const auto& batch : data::minibatches(train.n, cfg.batch, cfg.seed, e)) {
        fxt::RealTensor x = data::batch_real(train, batch);
        auto labels = data::batch_labels(train, batch);
        net::RealTrace tr = net::forward_real(spec, state, x);
        for (size_t i = 0; i < labels.size(); ++i) wrong += (tr.predictions[i] != labels[i]);
        seen += static_cast<int64_t>(labels.size());
        net::RealGradients g = net::backward_real(spec, state, tr, x, labels,
                                                  1.0 / static_cast<double>(cfg.batch),
                                                  cfg.weight_decay);
        if (!std::isfinite(g.loss))
          throw DivergenceError("float baseline diverged: non-finite loss at epoch " +
                                std::to_string(e));
        net::sgd_step_real(state, g, lr_e, cfg.momentum);
      }
      for (const auto& p : state.params)
        for (double v : p.w.data)
          if (!std::isfinite(v))
            throw DivergenceError("float baseline diverged: non-finite weight at epoch " +
                                  std::to_string(e));
      double test_err = eval_error_percent(test, eval_chunk, [&](std::span<const int64_t> idx) {
        return net::forward_real(spec, state, data::batch_real(test, idx)).predictions;
      });
      auto t1 = std::chrono::steady_clock::now();
      EpochRecord r;
      r.epoch = e;
      r.train_err = 100.0 * static_cast<double>(wrong) / static_cast<double>(std::max<int64_t>(seen, 1));
      r.test_err = test_err;
      r.zero_update_frac = 0.0;
      r.seconds = cfg.timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
      push_record(r);
    }
    ckpt::save(state, cfg.out + ".ckpt");
    return records;
  }

  net::NetState state = net::init_weights(spec, cfg.seed, mode, init_scheme, cfg.init_scale);
  const fxp::Dyadic inv_batch =
      fxp::Dyadic::from_rational(fxp::Rational(1, cfg.batch));
  const fxp::Dyadic decay = fxp::Dyadic::from_double(cfg.weight_decay);
  const fxp::Dyadic momentum = fxp::Dyadic::from_double(cfg.momentum);

  for (int e = 1; e <= cfg.epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    net::Hyperparams hp;
    hp.minibatch = cfg.batch;
    hp.lr = fxp::Dyadic::from_double(lr_at_epoch(cfg, e));
    hp.momentum = momentum;
    hp.weight_decay = decay;
    hp.mode = mode;

    int64_t seen = 0, wrong = 0, zeros = 0, updates = 0;
    for (const auto& batch : data::minibatches(train.n, cfg.batch, cfg.seed, e)) {
      fxt::FxTensor x = data::batch_fixed(train, batch, state.input_format);
      auto labels = data::batch_labels(train, batch);
      net::Trace tr = net::forward(spec, state, x, mode);
      for (size_t i = 0; i < labels.size(); ++i) wrong += (tr.predictions[i] != labels[i]);
      seen += static_cast<int64_t>(labels.size());
      net::Gradients g = net::backward(spec, state, tr, x, labels, mode, inv_batch, decay);
      net::StepStats st = net::sgd_step(state, g, hp);
      zeros += st.zero_updates;
      updates += st.update_elems;
    }
    // Saturation audit: stored tensors must sit inside their format ranges.
    for (const auto& p : state.params) {
      if (!p.used) continue;
      if (!p.w.in_range() || !p.b.in_range() || !p.vw.in_range() || !p.vb.in_range())
        throw std::logic_error("saturation audit failed: mantissa out of range");
    }
    double test_err = eval_error_percent(test, eval_chunk, [&](std::span<const int64_t> idx) {
      return net::forward(spec, state, data::batch_fixed(test, idx, state.input_format),
                          fxp::RoundingMode::Nearest)
          .predictions;
    });
    auto t1 = std::chrono::steady_clock::now();
    EpochRecord r;
    r.epoch = e;
    r.train_err = 100.0 * static_cast<double>(wrong) / static_cast<double>(std::max<int64_t>(seen, 1));
    r.test_err = test_err;
    r.zero_update_frac =
        updates > 0 ? static_cast<double>(zeros) / static_cast<double>(updates) : 0.0;
    r.seconds = cfg.timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
    push_record(r);

    if (cfg.fine_tune_after > 0 && e == cfg.fine_tune_after)
      net::widen_format(state, cfg.fine_tune_delta);
  }
  ckpt::save(state, cfg.out + ".ckpt");
  return records;
}

// ---------------------------------------------------------------------------
// CSV compare
// ---------------------------------------------------------------------------

std::vector<EpochRecord> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("compare: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCsvHeader)
    throw ConfigError("compare: " + path + ": unexpected CSV schema");
  std::vector<EpochRecord> rows;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.epoch, &r.train_err, &r.test_err,
                    &r.zero_update_frac, &r.seconds) != 5)
      throw ConfigError("compare: " + path + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

CompareResult compare_csv(const std::string& path_a, const std::string& path_b, double threshold) {
  auto a = read_csv(path_a), b = read_csv(path_b);
  if (a.size() != b.size())
    throw ConfigError("compare: epoch counts differ (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  CompareResult r;
  r.epochs = static_cast<int>(a.size());
  if (!a.empty()) {
    r.final_test_delta = a.back().test_err - b.back().test_err;
    r.final_train_delta = a.back().train_err - b.back().train_err;
  }
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i].test_err - b[i].test_err) > threshold) {
      r.first_divergence_epoch = a[i].epoch;
      break;
    }
  }
  return r;
}

}  // namespace fixnet::experiment
