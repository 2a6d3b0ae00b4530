#include "compress/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>

#include "compress/data_io.hpp"
#include "compress/distill.hpp"
#include "compress/evaluation.hpp"

namespace compress::cli {
namespace fs = std::filesystem;

namespace {

std::string format_number(double value) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), res.ptr);
}

/// splitmix64 finalizer; separates the seed streams used for init, shuffling and evaluation.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  if (fs::is_directory(dir, ec)) return;
  if (!fs::create_directory(dir, ec) || ec)
    throw Error(Errc::Io, "cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

void require_directory(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(Errc::Io, "data directory " + dir.string() + " does not exist");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error(Errc::Io, "write failed for " + path.string());
}

int num_classes_of(const Dataset& train, const Dataset& val) {
  int c = 0;
  for (int y : train.labels) c = std::max(c, y + 1);
  for (int y : val.labels) c = std::max(c, y + 1);
  return c;
}

struct TrainOptions {
  std::string data;
  std::string method = "ours-2q";
  double tau = kDefaultTemperature;
  Index bank = kDefaultBankCapacity;
  double momentum = kDefaultKeyMomentum;
  int epochs = 30;
  int batch_size = 256;
  std::optional<double> lr;
  std::optional<int> student_dim;
  std::vector<int> hidden{128};
  double aug_fraction = 0.1;
  int cc_k = 0;
  int k_neighbors = 1;
};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--data", o.data, "Directory written by gen-data")->required();
  cmd->add_option("--method", o.method, "ours-1q, ours-2q, reg, reg-bn or cc")->capture_default_str();
  cmd->add_option("--tau", o.tau, "SoftMax temperature")->capture_default_str();
  cmd->add_option("--bank", o.bank, "Anchor queue capacity")->capture_default_str();
  cmd->add_option("--momentum", o.momentum, "EMA weight of the key encoder")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Minibatch size")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Base learning rate (default depends on method)");
  cmd->add_option("--student-dim", o.student_dim, "Student embedding size (default 64; teacher dim for ours-1q)");
  cmd->add_option("--hidden", o.hidden, "Hidden layer sizes")->delimiter(',')->capture_default_str();
  cmd->add_option("--aug-fraction", o.aug_fraction, "Noise std as a fraction of each input column's std")
      ->capture_default_str();
  cmd->add_option("--cc-k", o.cc_k, "Clusters for the cc baseline (0: four per class)")->capture_default_str();
  cmd->add_option("--k-neighbors", o.k_neighbors, "Neighbors for the NN metric")->capture_default_str();
}

struct LoadedData {
  Dataset train;
  Dataset val;
  int num_classes = 0;
};

LoadedData load_data(const std::string& dir) {
  require_directory(dir);
  LoadedData d;
  d.train = load_split(dir, "train");
  d.val = load_split(dir, "val");
  if (d.train.raw.cols() != d.val.raw.cols() || d.train.teacher_cache.dim() != d.val.teacher_cache.dim())
    throw Error(Errc::SizeMismatch, "train and val files disagree on dimensions");
  d.num_classes = num_classes_of(d.train, d.val);
  return d;
}

/// Checkpoints hold binary32 parameters; evaluate exactly what gets saved.
StudentNetwork at_checkpoint_precision(StudentNetwork net) {
  net.set_parameters(net.parameters().cast<float>().cast<double>());
  return net;
}

double nn_accuracy(const MatrixXr& train_emb, const LoadedData& d, const MatrixXr& val_emb, int k) {
  return knn_classify(train_emb, d.train.labels, val_emb, d.val.labels, k).accuracy;
}

struct TrainResult {
  StudentNetwork initial;
  StudentNetwork trained;
  std::vector<TrainRecord> records;
  double nn_acc = 0.0;
};

TrainResult train_student(const LoadedData& d, const TrainOptions& o, std::uint64_t seed) {
  const auto method = parse_method(o.method);
  if (!method) throw Error(Errc::InvalidConfig, "unknown method '" + o.method + "'");
  const Index teacher_dim = d.train.teacher_cache.dim();

  DistillConfig config;
  config.method = *method;
  config.tau = o.tau;
  config.bank_capacity = o.bank;
  config.momentum_m = o.momentum;
  config.epochs = o.epochs;
  config.batch_size = o.batch_size;
  config.seed = derive_seed(seed, 1);
  config.cc_k = o.cc_k;
  config.lr = o.lr.value_or(default_lr(*method));
  config.aug_fraction = o.aug_fraction;

  const Index student_dim = o.student_dim.value_or(*method == Method::Ours1q ? static_cast<int>(teacher_dim) : 64);
  config.validate(student_dim, teacher_dim);
  std::vector<Index> dims{d.train.raw.cols()};
  for (int h : o.hidden) {
    if (h < 1) throw Error(Errc::InvalidConfig, "hidden sizes must be positive");
    dims.push_back(h);
  }
  dims.push_back(student_dim);

  TrainResult result;
  result.initial = StudentNetwork::create(dims, derive_seed(seed, 0));
  NnProbe probe{&d.train.raw, d.train.labels, &d.val.raw, d.val.labels, o.k_neighbors};
  TrainOutput out = distill(d.train, result.initial, config, &probe, d.num_classes);
  result.trained = at_checkpoint_precision(std::move(out.net));
  result.records = std::move(out.records);
  result.nn_acc = nn_accuracy(student_embeddings(result.trained, d.train.raw), d,
                              student_embeddings(result.trained, d.val.raw), o.k_neighbors);
  return result;
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out_dir, std::ostream& out) {
  spec.validate();
  ensure_directory(out_dir);
  const SplitDataset data = generate(spec);
  save_split(out_dir, "train", data.train);
  save_split(out_dir, "val", data.val);
  const double acc =
      knn_classify(data.train.teacher_cache.data(), data.train.labels, data.val.teacher_cache.data(), data.val.labels, 1)
          .accuracy;
  out << "teacher_nn_acc=" << format_number(acc) << '\n';
  return kOk;
}

int cmd_distill(const TrainOptions& o, const std::string& out_dir, std::uint64_t seed, std::ostream& out) {
  const LoadedData d = load_data(o.data);
  ensure_directory(out_dir);
  const TrainResult r = train_student(d, o, seed);
  write_checkpoint(fs::path(out_dir) / "checkpoint.ckpt", r.trained);
  write_text(fs::path(out_dir) / "metrics.csv", metrics_csv(r.records));
  out << "final_nn_acc=" << format_number(r.nn_acc) << '\n';
  return kOk;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::string metric = "all";
  bool use_teacher = false;
  int k_neighbors = 1;
  int ca_k = 0;
  int probe_epochs = 40;
};

int cmd_eval(const EvalOptions& o, const std::string& out_dir, std::uint64_t seed, std::ostream& out) {
  const bool all = o.metric == "all";
  if (!all && o.metric != "nn" && o.metric != "ca" && o.metric != "linear")
    throw Error(Errc::InvalidConfig, "metric must be nn, ca, linear or all");
  if (!o.use_teacher && o.checkpoint.empty()) throw Error(Errc::InvalidConfig, "--checkpoint or --use-teacher required");
  const LoadedData d = load_data(o.data);

  MatrixXr train_emb, val_emb;
  if (o.use_teacher) {
    train_emb = d.train.teacher_cache.data();
    val_emb = d.val.teacher_cache.data();
  } else {
    const StudentNetwork net = read_checkpoint(o.checkpoint);
    if (net.input_dim() != d.train.raw.cols())
      throw Error(Errc::DimensionMismatch, "checkpoint input size does not match the data");
    train_emb = student_embeddings(net, d.train.raw);
    val_emb = student_embeddings(net, d.val.raw);
  }
  ensure_directory(out_dir);

  std::string csv = "metric,value\n";
  if (all || o.metric == "nn")
    csv += "nn_acc," + format_number(nn_accuracy(train_emb, d, val_emb, o.k_neighbors)) + "\n";
  if (all || o.metric == "ca") {
    const int k = o.ca_k > 0 ? o.ca_k : d.num_classes;
    csv += "ca_acc," +
           format_number(cluster_alignment_accuracy(train_emb, d.train.labels, val_emb, d.val.labels, k,
                                                    derive_seed(seed, 2))) +
           "\n";
  }
  if (all || o.metric == "linear") {
    ProbeConfig probe;
    probe.epochs = o.probe_epochs;
    probe.seed = derive_seed(seed, 3);
    csv += "linear_acc," + format_number(linear_probe(train_emb, d.train.labels, val_emb, d.val.labels, probe)) + "\n";
  }
  write_text(fs::path(out_dir) / "eval.csv", csv);
  out << csv;
  return kOk;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto b = token.find_first_not_of(" \t");
    const auto e = token.find_last_not_of(" \t");
    if (b == std::string::npos) throw Error(Errc::InvalidConfig, "empty entry in value list '" + text + "'");
    token = token.substr(b, e - b + 1);
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
      throw Error(Errc::InvalidConfig, "cannot parse '" + token + "' as a number");
    values.push_back(v);
  }
  if (values.empty()) throw Error(Errc::InvalidConfig, "value list is empty");
  return values;
}

struct AblateOptions {
  std::string axis = "temperature";
  std::string values;
  bool parallel = false;
};

std::string default_values(const std::string& axis) {
  if (axis == "temperature") return "0.02,0.04,0.1,0.5,1.0";
  if (axis == "bank") return "256,1024,2048,4096";
  if (axis == "momentum") return "0,0.5,0.999";
  throw Error(Errc::InvalidConfig, "axis must be temperature, bank or momentum");
}

int cmd_ablate(const AblateOptions& a, const TrainOptions& base, const std::string& out_dir, std::uint64_t seed,
               std::ostream& out) {
  const std::string spec = a.values.empty() ? default_values(a.axis) : a.values;
  default_values(a.axis);  // validates the axis
  const std::vector<double> values = parse_values(spec);
  std::vector<TrainOptions> runs;
  for (double v : values) {
    TrainOptions o = base;
    if (a.axis == "temperature") {
      o.tau = v;
    } else if (a.axis == "bank") {
      if (v < 1 || v != std::floor(v)) throw Error(Errc::InvalidConfig, "bank sizes must be positive integers");
      o.bank = static_cast<Index>(v);
    } else {
      o.momentum = v;
    }
    runs.push_back(std::move(o));
  }
  const LoadedData d = load_data(base.data);
  ensure_directory(out_dir);
  // Validate every run before spending time on any of them.
  for (const auto& o : runs) {
    const auto method = parse_method(o.method);
    if (!method) throw Error(Errc::InvalidConfig, "unknown method '" + o.method + "'");
    DistillConfig c;
    c.method = *method;
    c.tau = o.tau;
    c.bank_capacity = o.bank;
    c.momentum_m = o.momentum;
    c.batch_size = o.batch_size;
    c.epochs = o.epochs;
    const Index teacher_dim = d.train.teacher_cache.dim();
    c.validate(o.student_dim.value_or(*method == Method::Ours1q ? static_cast<int>(teacher_dim) : 64), teacher_dim);
  }

  std::vector<double> accs(runs.size());
  if (a.parallel) {
    std::vector<std::future<double>> jobs;
    for (const auto& o : runs)
      jobs.push_back(std::async(std::launch::async, [&d, o, seed] { return train_student(d, o, seed).nn_acc; }));
    for (std::size_t i = 0; i < jobs.size(); ++i) accs[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < runs.size(); ++i) accs[i] = train_student(d, runs[i], seed).nn_acc;
  }

  std::string csv = "value,nn_acc\n";
  for (std::size_t i = 0; i < values.size(); ++i) csv += format_number(values[i]) + "," + format_number(accs[i]) + "\n";
  write_text(fs::path(out_dir) / "ablate.csv", csv);
  out << csv;
  return kOk;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::Io:
    case Errc::BadMagic:
    case Errc::TruncatedFile:
    case Errc::SizeMismatch: return kIo;
    case Errc::InvalidConfig:
    case Errc::InvalidSpec:
    case Errc::NonPositiveTemperature: return kUsage;
    default: return kConstraint;
  }
}

/// Position of `--config` (and its value) in args, if present.
std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::Io, "cannot read config file " + path);
  std::vector<std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::InvalidConfig, path + ":" + std::to_string(line_no) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r");
      if (first == std::string::npos) return std::string();
      const auto last = s.find_last_not_of(" \t\r");
      return s.substr(first, last - first + 1);
    };
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(Errc::InvalidConfig, path + ":" + std::to_string(line_no) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

int run(const std::vector<std::string>& input_args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args = input_args;
  if (args.empty()) args.push_back("compress");

  // Config entries go right after the subcommand so explicit flags, parsed later, win.
  try {
    if (const auto config = find_config(args)) {
      const auto extra = config_arguments(*config);
      const auto sub = std::find_if(args.begin() + 1, args.end(), [](const std::string& a) { return a.rfind("-", 0) != 0; });
      if (sub == args.end()) {
        err << "--config must follow a subcommand\n";
        return kUsage;
      }
      args.insert(sub + 1, extra.begin(), extra.end());
    }
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.code());
  }

  CLI::App app{"Similarity-distribution distillation of embedding teachers into small students"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  std::string out_dir;
  std::uint64_t seed = 0;
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "Output directory (created if absent)")->required();
    cmd->add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    cmd->add_option("--config", config_path, "Flat key = value file; explicit flags override it");
  };

  SyntheticSpec spec;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with a cached teacher");
  add_common(gen);
  gen->add_option("--classes", spec.num_classes)->capture_default_str();
  gen->add_option("--train-count", spec.train_count)->capture_default_str();
  gen->add_option("--val-count", spec.val_count)->capture_default_str();
  gen->add_option("--latent-dim", spec.latent_dim)->capture_default_str();
  gen->add_option("--raw-dim", spec.raw_dim)->capture_default_str();
  gen->add_option("--teacher-dim", spec.teacher_dim)->capture_default_str();
  gen->add_option("--class-spread", spec.class_spread)->capture_default_str();
  gen->add_option("--sample-noise", spec.sample_noise)->capture_default_str();
  gen->add_option("--teacher-noise", spec.teacher_noise)->capture_default_str();

  TrainOptions train;
  auto* dist = app.add_subcommand("distill", "Train a student and write checkpoint.ckpt and metrics.csv");
  add_common(dist);
  add_train_options(dist, train);

  EvalOptions eval;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (or the teacher) and write eval.csv");
  add_common(ev);
  ev->add_option("--data", eval.data, "Directory written by gen-data")->required();
  ev->add_option("--checkpoint", eval.checkpoint, "Student checkpoint");
  ev->add_option("--metric", eval.metric, "nn, ca, linear or all")->capture_default_str();
  ev->add_flag("--use-teacher", eval.use_teacher, "Evaluate the cached teacher embeddings instead");
  ev->add_option("--k-neighbors", eval.k_neighbors)->capture_default_str();
  ev->add_option("--ca-k", eval.ca_k, "Clusters for cluster alignment (0: class count)")->capture_default_str();
  ev->add_option("--probe-epochs", eval.probe_epochs)->capture_default_str();

  AblateOptions ablate;
  TrainOptions ablate_train;
  auto* ab = app.add_subcommand("ablate", "Sweep one hyperparameter and write ablate.csv");
  add_common(ab);
  add_train_options(ab, ablate_train);
  ab->add_option("--axis", ablate.axis, "temperature, bank or momentum")->capture_default_str();
  ab->add_option("--values", ablate.values, "Comma-separated values (default depends on axis)");
  ab->add_flag("--parallel", ablate.parallel, "Run sweep values concurrently");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      spec.seed = seed;
      return cmd_gen_data(spec, out_dir, out);
    }
    if (dist->parsed()) return cmd_distill(train, out_dir, seed, out);
    if (ev->parsed()) return cmd_eval(eval, out_dir, seed, out);
    if (ab->parsed()) return cmd_ablate(ablate, ablate_train, out_dir, seed, out);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}

}  // namespace compress::cli
