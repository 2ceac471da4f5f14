#include "tcseg/config.hpp"
#include "tcseg/errors.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tcseg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run run_cli(const std::string& args, const std::string& env = "") {
  static const fs::path dir = scratch("tcseg_test_cli_io");
  const std::string cmd = env + " " TCSEG_BIN " " + args + " > " + (dir / "out").string() + " 2> " +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  return Run{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "out"), slurp(dir / "err")};
}

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// 16 px scenes, one labeled size, one epoch of one step per stage
const char* kTinyGrid =
    "--set data.image_size=16 data.n_total=40 data.subset_sizes=5 grid.labeled_sizes=5 model.depth=2 "
    "model.base_channels=4 deform.amplitude=250 train.stage1_epochs=1 train.finetune_epochs=1 "
    "train.steps_per_epoch=1 train.batch_size=4";

}  // namespace

TEST_CASE("config text round trips") {
  ExperimentConfig a;
  set_config_value(a, "train.lambda", "0.35");
  set_config_value(a, "grid.seeds", "3,1");
  set_config_value(a, "train.warp_gradient", "blocked");
  std::ostringstream os;
  write_config(os, a);
  ExperimentConfig b;
  std::istringstream is(os.str());
  read_config(is, b);
  for (const auto& key : config_keys()) CHECK(get_config_value(a, key) == get_config_value(b, key));
  CHECK(b.lambda == 0.35);
  CHECK(b.seeds == std::vector<std::uint64_t>{3, 1});

  ExperimentConfig c;
  std::istringstream bad("train.nonsense = 1\n");
  CHECK_THROWS_AS(read_config(bad, c), UsageError);
  CHECK_THROWS_AS(set_config_value(c, "train.batch_size", "eight"), UsageError);
  set_config_value(c, "train.batch_size", "7");
  CHECK_THROWS_AS(c.validate(), UsageError);  // semi-supervised regimes need even batches
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  const Run r = run_cli("generate --set no.such_key=1", "TCSEG_OUTPUT_ROOT=/tmp/tcseg_test_cli_unused");
  CHECK(r.code == 1);
  CHECK(r.err.find("no.such_key") != std::string::npos);
  CHECK(line_count(r.err) == 1);
  CHECK(run_cli("generate --set data.n_total=10", "TCSEG_OUTPUT_ROOT=/tmp/tcseg_test_cli_unused").code == 1);
  CHECK(run_cli("generate -c /nonexistent/tcseg.cfg").code != 0);
}

TEST_CASE("flags override the file, the file overrides defaults") {
  const fs::path dir = scratch("tcseg_test_cli_cfg");
  {
    std::ofstream f(dir / "a.cfg");
    f << "# comment\ntrain.batch_size = 4\ntrain.lambda = 0.5\n";
  }
  const Run r = run_cli("--print-config gradcheck -c " + (dir / "a.cfg").string() + " --set train.batch_size=6");
  CHECK(r.code == 0);
  CHECK(r.out.find("train.batch_size = 6\n") != std::string::npos);
  CHECK(r.out.find("train.lambda = 0.5\n") != std::string::npos);
  CHECK(r.out.find("train.patience = 8\n") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck passes on the default fixture") {
  const Run r = run_cli("gradcheck");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
}

TEST_CASE("generate writes 200 scenes reproducibly under the output root") {
  const fs::path a = scratch("tcseg_test_cli_gen_a"), b = scratch("tcseg_test_cli_gen_b");
  REQUIRE(run_cli("generate", "TCSEG_OUTPUT_ROOT=" + a.string()).code == 0);
  const std::string manifest = slurp(a / "data" / "manifest.csv");
  CHECK(line_count(manifest) == 201);
  // the flag wins over the environment
  REQUIRE(run_cli("generate -o " + b.string(), "TCSEG_OUTPUT_ROOT=" + a.string() + "/elsewhere").code == 0);
  CHECK_FALSE(fs::exists(a / "elsewhere"));
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "data")) {
    if (!e.is_regular_file()) continue;
    ++files;
    same += slurp(e.path()) == slurp(b / fs::relative(e.path(), a));
  }
  CHECK(files == 401);
  CHECK(same == files);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("training without a dataset is a data error naming the path") {
  const fs::path dir = scratch("tcseg_test_cli_empty");
  const Run r = run_cli("train", "TCSEG_OUTPUT_ROOT=" + dir.string());
  CHECK(r.code == 2);
  CHECK(r.err.find((dir / "data" / "manifest.csv").string()) != std::string::npos);
  CHECK(run_cli("table", "TCSEG_OUTPUT_ROOT=" + dir.string()).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("a small grid trains, evaluates and tabulates") {
  const fs::path dir = scratch("tcseg_test_cli_grid");
  const std::string env = "TCSEG_OUTPUT_ROOT=" + dir.string();
  const std::string grid = std::string(kTinyGrid) + " grid.regimes=semitc grid.seeds=0,1,2";
  REQUIRE(run_cli("generate " + grid, env).code == 0);
  REQUIRE(run_cli("train " + grid, env).code == 0);
  for (int s = 0; s < 3; ++s) {
    const fs::path cell = dir / "runs" / "semitc" / "n5" / ("seed" + std::to_string(s));
    CHECK(fs::exists(cell / "model.wct"));
    CHECK(fs::exists(cell / "log.csv"));
  }
  REQUIRE(run_cli("eval " + grid, env).code == 0);
  CHECK(line_count(slurp(dir / "metrics.csv")) == 1 + 3 * 3);  // one row per seed and class
  CHECK(line_count(slurp(dir / "aggregate.csv")) == 2);
  const Run t = run_cli("table " + grid, env);
  CHECK(t.code == 0);
  CHECK(t.out.rfind("regime,5\nsemitc,", 0) == 0);

  // a missing checkpoint is a data error
  fs::remove(dir / "runs" / "semitc" / "n5" / "seed1" / "model.wct");
  const Run e = run_cli("eval " + grid, env);
  CHECK(e.code == 2);
  CHECK(e.err.find("seed1") != std::string::npos);
  fs::remove_all(dir);
}
