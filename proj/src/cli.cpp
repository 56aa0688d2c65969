#include "mpq/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "mpq/data.hpp"
#include "mpq/error.hpp"
#include "mpq/layout.hpp"
#include "mpq/model_io.hpp"
#include "mpq/probe.hpp"
#include "mpq/quantizer.hpp"
#include "mpq/trainer.hpp"

namespace mpq::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

class CliError : public std::runtime_error {
 public:
  CliError(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

const char* kind_name(ExitCode c) {
  switch (c) {
    case kConfigError: return "config";
    case kDataError: return "data";
    case kModelError: return "model";
    default: return "runtime";
  }
}

/// Flags shared by the subcommands; unused ones stay at their defaults.
struct RunConfig {
  std::string command;
  std::string model;
  std::string train;
  std::string calib;
  std::string test;
  std::string gen;
  std::string levels = "8";
  double error_min = 0.0;
  double error_max = 0.1;
  double mu = 0.0;
  std::optional<double> sigma;
  std::optional<double> probe_delta;
  std::string calib_mode = "global";
  std::string scheme;
  std::string out;
  std::string report;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 0;
  // train
  std::string arch = "mlp:16,16";
  std::size_t epochs = 300;
  double lr = 0.1;
  std::size_t batch_size = 32;
  double init_scale = 0.5;
  std::size_t classes = 0;
  double noise_delta = 0.01;
};

struct DataSplits {
  std::optional<Dataset> train;
  std::optional<Dataset> calib;
  std::optional<Dataset> test;
};

Dataset load_dataset(const std::string& path) {
  try {
    if (!fs::exists(path)) throw ParseError("file not found: " + path);
    const std::string ext = fs::path(path).extension().string();
    if (ext == ".bin") return load_cifar10_binary(path);
    return load_csv(path);
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kDataError, e.what());
  }
}

/// "two_moons:n=2000:noise=0.2:seed=0"
Dataset generate(const std::string& spec) {
  std::stringstream ss(spec);
  std::string part;
  std::getline(ss, part, ':');
  if (part != "two_moons") throw CliError(kConfigError, "unknown generator '" + part + "'");
  std::size_t n = 2000;
  double noise = 0.2;
  std::uint64_t seed = 0;
  while (std::getline(ss, part, ':')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw CliError(kConfigError, "bad generator field '" + part + "'");
    const std::string key = part.substr(0, eq), value = part.substr(eq + 1);
    try {
      if (key == "n") {
        n = std::stoul(value);
      } else if (key == "noise") {
        noise = std::stod(value);
      } else if (key == "seed") {
        seed = std::stoull(value);
      } else {
        throw CliError(kConfigError, "unknown generator field '" + key + "'");
      }
    } catch (const CliError&) {
      throw;
    } catch (const std::exception&) {
      throw CliError(kConfigError, "bad value for generator field '" + key + "'");
    }
  }
  try {
    return gen_two_moons(n, noise, seed);
  } catch (const std::exception& e) {
    throw CliError(kConfigError, e.what());
  }
}

DataSplits resolve_data(const RunConfig& c) {
  DataSplits d;
  if (!c.gen.empty()) {
    if (!c.train.empty() || !c.calib.empty() || !c.test.empty()) {
      throw CliError(kConfigError, "--gen cannot be combined with --train/--calib/--test");
    }
    const Dataset all = generate(c.gen);
    ProtocolSplit s;
    try {
      s = protocol_split(all, all.size() / 4, c.seed);
    } catch (const std::exception& e) {
      throw CliError(kConfigError, e.what());
    }
    d.train = std::move(s.train);
    d.calib = std::move(s.calibration);
    d.test = std::move(s.test);
    return d;
  }
  if (!c.train.empty()) d.train = load_dataset(c.train);
  if (!c.calib.empty()) d.calib = load_dataset(c.calib);
  if (!c.test.empty()) d.test = load_dataset(c.test);
  return d;
}

Network load_model_arg(const RunConfig& c) {
  if (c.model.empty()) throw CliError(kConfigError, "--model is required");
  try {
    return load_model_file(c.model);
  } catch (const std::exception& e) {
    throw CliError(kModelError, e.what());
  }
}

std::vector<int> parse_levels(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const int b = std::stoi(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(b);
    } catch (const std::exception&) {
      throw CliError(kConfigError, "bad --levels entry '" + item + "'");
    }
  }
  if (out.empty()) throw CliError(kConfigError, "--levels is empty");
  for (int b : out) {
    if (b < kMinBits || b > kMaxBits) {
      throw CliError(kConfigError, "--levels entry " + std::to_string(b) + " outside [2,16]");
    }
  }
  return out;
}

CalibMode parse_calib_mode(const std::string& s) {
  try {
    return calib_mode_from_string(s);
  } catch (const std::exception&) {
    throw CliError(kConfigError, "--calib-mode must be global or per_batch");
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw CliError(kConfigError, what);
}

/// Files are staged in memory and written only after the command succeeded.
struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;
  void add(const std::string& path, std::string content) {
    files.emplace_back(path, std::move(content));
  }
  void write() const {
    for (const auto& [path, content] : files) {
      std::ofstream f(path, std::ios::binary);
      if (!f) throw CliError(kRuntimeError, "cannot write " + path);
      f << content;
    }
  }
};

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

double accuracy(const QuantizedEvaluator& eval, const Dataset& d) {
  if (d.labels.empty()) return std::nan("");
  const ForwardResult r = eval.forward(d);
  const std::size_t m = d.size();
  const std::size_t o = r.output.numel() / m;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < m; ++s) {
    const auto row = r.output.data().subspan(s * o, o);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == d.labels[s];
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "--out is required");
  DataSplits d = resolve_data(c);
  require(d.train.has_value(), "training data required (--train or --gen)");
  const Dataset& data = *d.train;
  std::size_t classes = c.classes;
  if (classes == 0) {
    int mx = 0;
    for (int y : data.labels) mx = std::max(mx, y);
    classes = std::max<std::size_t>(2, static_cast<std::size_t>(mx) + 1);
  }
  Network spec = [&] {
    try {
      const Shape sample = data.sample_shape();
      if (sample.size() != 1) throw DomainError("architectures need flat (rank-1) samples");
      return make_architecture(c.arch, sample[0], classes);
    } catch (const std::exception& e) {
      throw CliError(kConfigError, e.what());
    }
  }();
  TrainConfig tc;
  tc.learning_rate = c.lr;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.seed = c.seed;
  tc.weight_init = c.init_scale;
  const Network init = init_weights(spec, tc);
  TrainResult r = train(init, data, tc);

  Outputs o;
  o.add(c.out, dump(save_model(r.model)));
  if (!c.report.empty()) o.add(c.report, dump(train_report_to_json(r.report, tc)));
  o.write();
  out << "trained " << c.arch << ": final loss " << r.report.final_loss << ", grad rms "
      << r.report.grad_rms << "\n";
  return kOk;
}

int cmd_calibrate(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "--out is required");
  const Network model = load_model_arg(c);
  DataSplits d = resolve_data(c);
  require(d.calib.has_value(), "calibration data required (--calib or --gen)");
  const CalibrationStats st = calibrate(model, *d.calib, parse_calib_mode(c.calib_mode));
  ordered_json j;
  j["calib_mode"] = to_string(st.mode);
  ordered_json layers = ordered_json::array();
  for (std::size_t p = 0; p < st.inputs.size(); ++p) {
    ordered_json l;
    l["layer"] = p;
    l["kind"] = model.points()[p].kind;
    l["input_lo"] = st.inputs[p].lo;
    l["input_hi"] = st.inputs[p].hi;
    l["degenerate"] = st.inputs[p].degenerate();
    l["weight_lo"] = st.weights[p] ? json(st.weights[p]->lo) : json(nullptr);
    l["weight_hi"] = st.weights[p] ? json(st.weights[p]->hi) : json(nullptr);
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  Outputs o;
  o.add(c.out, dump(j));
  o.write();
  out << "calibrated " << st.inputs.size() << " layers\n";
  return kOk;
}

int cmd_quantize(const RunConfig& c, std::ostream& out) {
  require(!c.scheme.empty(), "--scheme (output path) is required");
  require(!c.report.empty(), "--report (output path) is required");
  AlgorithmParams p;
  p.levels = parse_levels(c.levels);
  p.error_min = c.error_min;
  p.error_max = c.error_max;
  p.mu = c.mu;
  p.sigma = c.sigma;
  p.probe_delta = c.probe_delta;
  p.calib_mode = parse_calib_mode(c.calib_mode);
  p.eval_batch = c.eval_batch;
  require(p.error_min >= 0.0 && p.error_max > 0.0 && p.error_min <= p.error_max,
          "need 0 <= --error-min <= --error-max and --error-max > 0");
  require(p.mu >= 0.0, "--mu must be >= 0");
  require(!p.probe_delta || *p.probe_delta > 0.0, "--probe-delta must be > 0");

  const Network model = load_model_arg(c);
  DataSplits d = resolve_data(c);
  require(d.calib.has_value(), "calibration data required (--calib or --gen)");
  const Dataset* test = d.test ? &*d.test : nullptr;
  const LayoutResult r = run_layout(model, *d.calib, p, test);

  Outputs o;
  o.add(c.scheme, dump(layout_scheme_to_json(r.scheme)));
  o.add(c.report, dump(layout_report_to_json(r, model)));
  o.write();
  std::size_t quantized = 0;
  for (const auto& dec : r.scheme.decisions) quantized += dec.bits.has_value();
  out << "quantized " << quantized << "/" << model.num_points() << " layers; calib loss "
      << r.losses.fp_calib << " -> " << r.losses.q_calib << "\n";
  return kOk;
}

QuantScheme load_scheme(const std::string& path) {
  try {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open scheme file " + path);
    return quant_scheme_from_json(json::parse(f));
  } catch (const std::exception& e) {
    throw CliError(kModelError, e.what());
  }
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const Network model = load_model_arg(c);
  DataSplits d = resolve_data(c);
  require(d.train || d.calib || d.test, "no evaluation data (--train/--calib/--test or --gen)");
  std::optional<QuantScheme> scheme;
  if (!c.scheme.empty()) scheme = load_scheme(c.scheme);
  const QuantizedEvaluator fp(model, {});
  std::optional<QuantizedEvaluator> q;
  if (scheme) {
    try {
      q.emplace(model, *scheme);
    } catch (const std::exception& e) {
      throw CliError(kModelError, e.what());
    }
  }
  ordered_json j;
  const auto add = [&](const char* name, const std::optional<Dataset>& ds) {
    if (!ds) return;
    ordered_json s;
    s["size"] = ds->size();
    s["fp_loss"] = baseline_loss(fp, *ds, c.eval_batch);
    s["fp_accuracy"] = accuracy(fp, *ds);
    if (q) {
      s["q_loss"] = baseline_loss(*q, *ds, c.eval_batch);
      s["q_accuracy"] = accuracy(*q, *ds);
    }
    j[name] = std::move(s);
  };
  add("train", d.train);
  add("calib", d.calib);
  add("test", d.test);
  if (!c.report.empty()) {
    Outputs o;
    o.add(c.report, dump(j));
    o.write();
  }
  out << dump(j);
  return kOk;
}

int cmd_diagnose(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "--out (CSV path) is required");
  const std::vector<int> levels = parse_levels(c.levels);
  const Network model = load_model_arg(c);
  DataSplits d = resolve_data(c);
  require(d.calib.has_value(), "calibration data required (--calib or --gen)");
  const Dataset& data = *d.calib;

  const auto stats = gradient_stats(model, data);
  const CalibrationStats cal = calibrate(model, data, parse_calib_mode(c.calib_mode));
  const double f = baseline_loss(model, data);

  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "layer,output_index,kind,k,Ep,VarP,grad_norm\n";
  ordered_json layers = ordered_json::array();
  const std::size_t n = model.num_points();
  for (const auto& s : stats) {
    const std::string& kind = model.points()[s.layer].kind;
    csv << s.layer << ',' << (n - s.layer) << ',' << kind << ',' << s.k << ',' << s.ep << ','
        << s.var_p << ',' << s.norm << '\n';
    ordered_json l;
    l["layer"] = s.layer;
    l["output_index"] = n - s.layer;
    l["kind"] = kind;
    l["k"] = s.k;
    l["Ep"] = s.ep;
    l["VarP"] = s.var_p;
    l["grad_norm"] = s.norm;
    layers.push_back(std::move(l));
  }
  ordered_json lv = ordered_json::array();
  for (int bits : levels) {
    ordered_json e;
    e["bits"] = bits;
    for (RoundingMode mode : {RoundingMode::Nearest, RoundingMode::Down, RoundingMode::Up}) {
      const QuantScheme s = make_uniform_scheme(model, cal, bits, mode);
      ordered_json r;
      r["robustness_bound"] = robustness_bound(model, data, s);
      r["measured_abs_change"] = std::abs(baseline_loss(model, data, &s) - f);
      e[to_string(mode)] = std::move(r);
    }
    lv.push_back(std::move(e));
  }
  const NoiseDecomposition nd = noise_decomposition(model, data, c.noise_delta, c.seed);
  ordered_json ndj;
  ndj["delta"] = nd.delta;
  ndj["total_input_change"] = nd.total_input_change;
  ndj["total_weight_change"] = nd.total_weight_change;
  ndj["ratio"] = nd.ratio();

  ordered_json j;
  j["fp_loss"] = f;
  j["layers"] = std::move(layers);
  j["levels"] = std::move(lv);
  j["noise_decomposition"] = std::move(ndj);
  Outputs o;
  o.add(c.out, csv.str());
  if (!c.report.empty()) o.add(c.report, dump(j));
  o.write();
  out << "diagnosed " << n << " layers\n";
  return kOk;
}

int cmd_gen(const RunConfig& c, std::ostream& out) {
  require(!c.gen.empty(), "--gen is required");
  require(!c.out.empty(), "--out (file prefix) is required");
  const DataSplits d = resolve_data(c);
  const std::string prefix = c.out;
  Outputs o;
  o.add(prefix + "_train.csv", to_csv(*d.train));
  o.add(prefix + "_calib.csv", to_csv(*d.calib));
  o.add(prefix + "_test.csv", to_csv(*d.test));
  o.write();
  out << "wrote " << prefix << "_{train,calib,test}.csv\n";
  return kOk;
}

void add_data_flags(CLI::App* app, RunConfig& c) {
  app->add_option("--train", c.train, "Training data (CSV, or CIFAR-10 .bin)");
  app->add_option("--calib", c.calib, "Calibration data (CSV, or CIFAR-10 .bin)");
  app->add_option("--test", c.test, "Test data (CSV, or CIFAR-10 .bin)");
  app->add_option("--gen", c.gen, "Generator, e.g. two_moons:n=2000:noise=0.2:seed=0");
  app->add_option("--seed", c.seed, "Seed for splits and noise");
  app->add_option("--eval-batch", c.eval_batch, "Rows per evaluation chunk (0 = all)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Mixed-precision post-training quantization lab", "mpq"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train a model with plain SGD");
  add_data_flags(train_cmd, c);
  train_cmd->add_option("--arch", c.arch, "mlp:16,16 | plain:16x4 | residual:16x4");
  train_cmd->add_option("--epochs", c.epochs, "Passes over the training set");
  train_cmd->add_option("--lr", c.lr, "Learning rate");
  train_cmd->add_option("--batch-size", c.batch_size, "Rows per SGD step");
  train_cmd->add_option("--init-scale", c.init_scale, "Weights start U(-s, s)");
  train_cmd->add_option("--classes", c.classes, "Output classes (0 = infer from labels)");
  train_cmd->add_option("--out", c.out, "Model file to write");
  train_cmd->add_option("--report", c.report, "Training report JSON");

  auto* calib_cmd = app.add_subcommand("calibrate", "Record per-layer input ranges");
  add_data_flags(calib_cmd, c);
  calib_cmd->add_option("--model", c.model, "Model JSON");
  calib_cmd->add_option("--calib-mode", c.calib_mode, "global | per_batch");
  calib_cmd->add_option("--out", c.out, "Calibration stats JSON");

  auto* quant_cmd = app.add_subcommand("quantize", "Search a mixed-precision layout");
  add_data_flags(quant_cmd, c);
  quant_cmd->add_option("--model", c.model, "Model JSON");
  quant_cmd->add_option("--levels", c.levels, "Comma-separated bit widths");
  quant_cmd->add_option("--error-min", c.error_min, "Quantize to nearest when the grid step is at most this");
  quant_cmd->add_option("--error-max", c.error_max, "Defer layers whose grid step exceeds this");
  quant_cmd->add_option("--mu", c.mu, "Minimum |secant| needed to quantize");
  quant_cmd->add_option("--sigma", c.sigma, "Recorded only");
  quant_cmd->add_option("--probe-delta", c.probe_delta, "Fixed secant step");
  quant_cmd->add_option("--calib-mode", c.calib_mode, "global | per_batch");
  quant_cmd->add_option("--scheme", c.scheme, "Scheme JSON to write");
  quant_cmd->add_option("--report", c.report, "Layout report JSON to write");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate losses, optionally under a scheme");
  add_data_flags(eval_cmd, c);
  eval_cmd->add_option("--model", c.model, "Model JSON");
  eval_cmd->add_option("--scheme", c.scheme, "Scheme JSON to apply");
  eval_cmd->add_option("--report", c.report, "Evaluation JSON to write");

  auto* diag_cmd = app.add_subcommand("diagnose", "Per-layer gradient profile");
  add_data_flags(diag_cmd, c);
  diag_cmd->add_option("--model", c.model, "Model JSON");
  diag_cmd->add_option("--levels", c.levels, "Comma-separated bit widths");
  diag_cmd->add_option("--calib-mode", c.calib_mode, "global | per_batch");
  diag_cmd->add_option("--noise-delta", c.noise_delta, "Magnitude for the noise comparison");
  diag_cmd->add_option("--out", c.out, "Per-layer CSV to write");
  diag_cmd->add_option("--report", c.report, "Diagnostics JSON to write");

  auto* gen_cmd = app.add_subcommand("gen", "Write a generated dataset as train/calib/test CSVs");
  add_data_flags(gen_cmd, c);
  gen_cmd->add_option("--out", c.out, "Output file prefix");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error[config]: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) c.command = sub->get_name();
    if (c.command == "train") return cmd_train(c, out);
    if (c.command == "calibrate") return cmd_calibrate(c, out);
    if (c.command == "quantize") return cmd_quantize(c, out);
    if (c.command == "eval") return cmd_eval(c, out);
    if (c.command == "diagnose") return cmd_diagnose(c, out);
    if (c.command == "gen") return cmd_gen(c, out);
    throw CliError(kConfigError, "unknown command");
  } catch (const CliError& e) {
    err << "error[" << kind_name(e.code()) << "]: " << e.what() << "\n";
    return e.code();
  } catch (const std::exception& e) {
    err << "error[runtime]: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace mpq::cli
