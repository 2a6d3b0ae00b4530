#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "compress/cli.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using compress::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "compress");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

double value_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + key.size()));
}

/// Scratch directory removed at scope exit.
struct Scratch {
  fs::path root;
  explicit Scratch(const std::string& name) : root(fs::temp_directory_path() / ("compress_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
  std::string operator/(const std::string& sub) const { return (root / sub).string(); }
};

const std::vector<std::string> kSmallTrain{"--epochs", "2", "--batch-size", "32", "--bank", "64", "--hidden", "16",
                                           "--student-dim", "8"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void make_small_data(const std::string& dir) {
  const Result r = call({"gen-data", "--out", dir, "--train-count", "300", "--val-count", "100", "--seed", "3"});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("gen-data with defaults writes six files and a strong teacher") {
  Scratch s("gen_default");
  const Result r = call({"gen-data", "--out", s / "data"});
  REQUIRE(r.code == 0);
  for (const char* name : {"train_raw.emb", "train_labels.lbl", "train_teacher.emb", "val_raw.emb", "val_labels.lbl",
                           "val_teacher.emb"})
    CHECK(fs::exists(fs::path(s / "data") / name));
  CHECK(value_after(r.out, "teacher_nn_acc=") >= 0.95);
}

TEST_CASE("gen-data is byte-deterministic per seed") {
  Scratch s("gen_seed");
  for (const char* d : {"a", "b"}) REQUIRE(call({"gen-data", "--out", s / d, "--seed", "7", "--train-count", "200"}).code == 0);
  REQUIRE(call({"gen-data", "--out", s / "c", "--seed", "8", "--train-count", "200"}).code == 0);
  for (const char* name : {"train_raw.emb", "train_labels.lbl", "val_teacher.emb"}) {
    CHECK(slurp(fs::path(s / "a") / name) == slurp(fs::path(s / "b") / name));
  }
  CHECK(slurp(fs::path(s / "a") / "train_raw.emb") != slurp(fs::path(s / "c") / "train_raw.emb"));
}

TEST_CASE("exit codes") {
  Scratch s("exit_codes");
  CHECK(call({}).code == 2);
  CHECK(call({"train"}).code == 2);
  CHECK(call({"gen-data"}).code == 2);
  CHECK(call({"gen-data", "--out", s / "x", "--classes", "abc"}).code == 2);
  CHECK(call({"gen-data", "--out", s / "x", "--bogus", "1"}).code == 2);
  CHECK(call({"gen-data", "--out", s / "x", "--classes", "0"}).code == 2);
  CHECK(call({"gen-data", "--out", s / "missing/parent/dir"}).code == 3);

  make_small_data(s / "data");
  const auto base = concat({"distill", "--data", s / "data", "--out", s / "run"}, kSmallTrain);
  CHECK(call(concat(base, {"--method", "crd"})).code == 2);
  CHECK(call(concat(base, {"--tau", "0"})).code == 2);
  CHECK(call(concat(base, {"--method", "ours-1q", "--student-dim", "64"})).code == 4);
  CHECK(call(concat(base, {"--bank", "16"})).code == 4);
  CHECK(call({"distill", "--data", s / "nowhere", "--out", s / "run"}).code == 3);
  CHECK(call({"eval", "--data", s / "data", "--out", s / "ev", "--checkpoint", s / "none.ckpt"}).code == 3);
  CHECK(call({"eval", "--data", s / "data", "--out", s / "ev", "--use-teacher", "--metric", "recall"}).code == 2);
  CHECK(call(concat({"ablate", "--data", s / "data", "--out", s / "ab", "--values", "0.1,,x"}, kSmallTrain)).code == 2);
  CHECK(call(concat({"ablate", "--data", s / "data", "--out", s / "ab", "--axis", "depth"}, kSmallTrain)).code == 2);

  {
    std::ofstream f(fs::path(s / "data") / "val_labels.lbl", std::ios::binary | std::ios::trunc);
    f << "junk";
  }
  CHECK(call({"eval", "--data", s / "data", "--out", s / "ev", "--use-teacher"}).code == 3);
}

TEST_CASE("distill writes a checkpoint and per-epoch metrics") {
  Scratch s("distill");
  make_small_data(s / "data");
  const Result r = call(concat({"distill", "--data", s / "data", "--out", s / "run"}, kSmallTrain));
  REQUIRE(r.code == 0);
  const double acc = value_after(r.out, "final_nn_acc=");
  CHECK((acc >= 0.0 && acc <= 1.0));
  CHECK(fs::exists(fs::path(s / "run") / "checkpoint.ckpt"));
  const std::string csv = slurp(fs::path(s / "run") / "metrics.csv");
  CHECK(csv.rfind("epoch,mean_loss,nn_acc\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find('\r') == std::string::npos);

  const Result ev = call({"eval", "--data", s / "data", "--out", s / "ev", "--checkpoint",
                          (fs::path(s / "run") / "checkpoint.ckpt").string(), "--metric", "nn"});
  REQUIRE(ev.code == 0);
  CHECK(value_after(ev.out, "nn_acc,") == acc);
}

TEST_CASE("distill with zero epochs saves the initialization") {
  Scratch s("epochs0");
  make_small_data(s / "data");
  REQUIRE(call(concat({"distill", "--data", s / "data", "--out", s / "zero"}, concat(kSmallTrain, {"--epochs", "0"})))
              .code == 0);
  REQUIRE(call(concat({"distill", "--data", s / "data", "--out", s / "frozen"},
                      concat(kSmallTrain, {"--epochs", "1", "--lr", "0"})))
              .code == 0);
  CHECK(slurp(fs::path(s / "zero") / "checkpoint.ckpt") == slurp(fs::path(s / "frozen") / "checkpoint.ckpt"));
  CHECK(slurp(fs::path(s / "zero") / "metrics.csv") == "epoch,mean_loss,nn_acc\n");
}

TEST_CASE("every method runs from the CLI") {
  Scratch s("methods");
  make_small_data(s / "data");
  for (const char* m : {"ours-1q", "ours-2q", "reg", "reg-bn", "cc"}) {
    std::vector<std::string> args = concat({"distill", "--data", s / "data", "--out", s / m, "--method", m},
                                           {"--epochs", "1", "--batch-size", "32", "--bank", "64", "--hidden", "16"});
    const Result r = call(args);
    CHECK_MESSAGE(r.code == 0, m << ": " << r.err);
  }
}

TEST_CASE("eval of the teacher and of all metrics") {
  Scratch s("eval");
  REQUIRE(call({"gen-data", "--out", s / "data", "--train-count", "2000", "--val-count", "500"}).code == 0);
  const Result t = call({"eval", "--data", s / "data", "--out", s / "ev", "--use-teacher", "--probe-epochs", "5"});
  REQUIRE(t.code == 0);
  CHECK(value_after(t.out, "nn_acc,") >= 0.95);
  CHECK(t.out.rfind("metric,value\n", 0) == 0);
  CHECK(std::count(t.out.begin(), t.out.end(), '\n') == 4);
  CHECK(t.out.find("ca_acc,") != std::string::npos);
  CHECK(t.out.find("linear_acc,") != std::string::npos);
  CHECK(slurp(fs::path(s / "ev") / "eval.csv") == t.out);

  const Result again = call({"eval", "--data", s / "data", "--out", s / "ev2", "--use-teacher", "--probe-epochs", "5"});
  CHECK(again.out == t.out);
}

TEST_CASE("distill and eval are reproducible") {
  Scratch s("repro");
  make_small_data(s / "data");
  for (const char* d : {"a", "b"}) {
    REQUIRE(call(concat({"distill", "--data", s / "data", "--out", s / d, "--seed", "5"}, kSmallTrain)).code == 0);
    REQUIRE(call({"eval", "--data", s / "data", "--out", s / d, "--seed", "5", "--probe-epochs", "3", "--checkpoint",
                  (fs::path(s / d) / "checkpoint.ckpt").string()})
                .code == 0);
  }
  for (const char* f : {"metrics.csv", "checkpoint.ckpt", "eval.csv"})
    CHECK(slurp(fs::path(s / "a") / f) == slurp(fs::path(s / "b") / f));
}

TEST_CASE("config file entries are overridden by explicit flags") {
  Scratch s("config");
  const fs::path cfg = s.root / "run.cfg";
  {
    std::ofstream f(cfg);
    f << "# generator settings\n\ntrain_count = 250\nval_count=60\nclasses = 3\n";
  }
  REQUIRE(call({"gen-data", "--config", cfg.string(), "--out", s / "c1"}).code == 0);
  REQUIRE(call({"gen-data", "--out", s / "c2", "--train-count", "250", "--val-count", "60", "--classes", "3"}).code == 0);
  CHECK(slurp(fs::path(s / "c1") / "train_raw.emb") == slurp(fs::path(s / "c2") / "train_raw.emb"));

  REQUIRE(call({"gen-data", "--config", cfg.string(), "--out", s / "c3", "--classes", "4"}).code == 0);
  REQUIRE(call({"gen-data", "--out", s / "c4", "--train-count", "250", "--val-count", "60", "--classes", "4"}).code == 0);
  CHECK(slurp(fs::path(s / "c3") / "train_labels.lbl") == slurp(fs::path(s / "c4") / "train_labels.lbl"));

  const auto args = compress::cli::config_arguments(cfg.string());
  CHECK(args == std::vector<std::string>{"--train-count=250", "--val-count=60", "--classes=3"});
  CHECK(call({"gen-data", "--config", (s.root / "absent.cfg").string(), "--out", s / "c5"}).code == 3);
  {
    std::ofstream f(cfg);
    f << "classes\n";
  }
  CHECK(call({"gen-data", "--config", cfg.string(), "--out", s / "c6"}).code == 2);
}

TEST_CASE("single-value ablation equals distill followed by eval") {
  Scratch s("ablate");
  make_small_data(s / "data");
  const Result ab =
      call(concat({"ablate", "--data", s / "data", "--out", s / "ab", "--axis", "temperature", "--values", "0.1"},
                  kSmallTrain));
  REQUIRE(ab.code == 0);
  CHECK(std::count(ab.out.begin(), ab.out.end(), '\n') == 2);
  const Result d = call(concat({"distill", "--data", s / "data", "--out", s / "run", "--tau", "0.1"}, kSmallTrain));
  REQUIRE(d.code == 0);
  const Result ev = call({"eval", "--data", s / "data", "--out", s / "ev", "--metric", "nn", "--checkpoint",
                          (fs::path(s / "run") / "checkpoint.ckpt").string()});
  REQUIRE(ev.code == 0);
  CHECK(value_after(ab.out, "0.1,") == value_after(ev.out, "nn_acc,"));
  CHECK(value_after(ab.out, "0.1,") == value_after(d.out, "final_nn_acc="));
}

TEST_CASE("parallel ablation keeps rows in value order") {
  Scratch s("ablate_par");
  make_small_data(s / "data");
  const auto base = concat({"ablate", "--data", s / "data", "--axis", "momentum", "--values", "0.999,0,0.5"}, kSmallTrain);
  const Result seq = call(concat(base, {"--out", s / "seq"}));
  const Result par = call(concat(base, {"--out", s / "par", "--parallel"}));
  REQUIRE(seq.code == 0);
  REQUIRE(par.code == 0);
  CHECK(seq.out == par.out);
  CHECK(seq.out.rfind("value,nn_acc\n0.999,", 0) == 0);
  CHECK(std::count(seq.out.begin(), seq.out.end(), '\n') == 4);
  CHECK(slurp(fs::path(s / "par") / "ablate.csv") == par.out);
}
