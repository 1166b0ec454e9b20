#include <doctest.h>

#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "pnerf/cli.hpp"
#include "pnerf/error.hpp"

using namespace pnerf;

namespace {

RunConfig tiny_config(const std::filesystem::path& root) {
  RunConfig c = parse_config(R"(
seed = 5
[dataset]
width = 8
height = 8
focal = 10
n_views = 3
depth_sigma = 0.1
[train]
epochs = 4
batch_rays = 32
n_coarse = 8
n_fine = 8
chunk_rays = 8
learning_rate = 0.002
[model]
pos_frequencies = 3
dir_frequencies = 2
hidden_layers = 2
hidden_width = 12
skip_layer = 1
color_width = 8
)",
                             "tiny");
  c.dataset_dir = root / "data";
  c.out_dir = root / "data";
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PNERF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config text round trip") {
  RunConfig c = tiny_config("/tmp/x");
  c.train.gains = {1, 0.5, 0.25};
  c.train.precision = Precision::f32;
  c.eval_split = Split::train;
  c.dataset.ring.target = Vec3(0.1, -0.2, -3.5);
  const std::string text = c.to_text();
  const RunConfig back = parse_config(text);
  CHECK(back.to_text() == text);
  CHECK(back.train.gains.density == 0.5);
  CHECK(back.train.arch.hidden_width == 12);
  CHECK(back.dataset.intrinsics.width == 8);
  CHECK(back.dataset.intrinsics.principal_point.x() == 4.0);
  CHECK(back.dataset.ring.target.y() == -0.2);
  CHECK(back.train.precision == Precision::f32);
  CHECK(back.eval_split == Split::train);
}

TEST_CASE("config errors name the source line") {
  try {
    parse_config("seed = 1\n[train]\nepoks = 3\n", "run.cfg");
    FAIL("no error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:3") != std::string::npos);
    CHECK(std::string(e.what()).find("epoks") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[train]\nepochs = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nprecision = f16\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nactivation = tanh\n"), ConfigError);
  CHECK_THROWS_AS(parse_gains("1,1"), ConfigError);
  CHECK_THROWS_AS(parse_gains("1,-1,0"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
  const std::vector<std::string> keys = RunConfig::keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
}

TEST_CASE("gen is deterministic and a stereo pair has two views") {
  const auto root = testing::temp_dir("cli_gen");
  RunConfig c = tiny_config(root);
  std::ostringstream log;
  c.out_dir = root / "a";
  cmd_gen(c, log);
  std::map<std::string, std::string> first;
  for (const auto& entry : std::filesystem::directory_iterator(root / "a")) {
    first[entry.path().filename().string()] = testing::read_bytes(entry.path());
  }
  cmd_gen(c, log);
  CHECK(first.size() > 10);
  for (const auto& [name, bytes] : first) CHECK(testing::read_bytes(root / "a" / name) == bytes);
  c.dataset.n_views = 2;
  c.dataset.test_stride = 0;
  c.out_dir = root / "pair";
  cmd_gen(c, log);
  CHECK(load_dataset(root / "pair").views.size() == 2);

  std::ofstream(root / "file") << "x";
  c.out_dir = root / "file" / "sub";
  try {
    cmd_gen(c, log);
    FAIL("no error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("file/sub") != std::string::npos);
  }
}

TEST_CASE("train, render and eval") {
  const auto root = testing::temp_dir("cli_train");
  RunConfig c = tiny_config(root);
  std::ostringstream log;
  cmd_gen(c, log);
  const std::string hash = dataset_hash(c.dataset_dir);
  c.out_dir = root / "run";
  const TrainResult r = cmd_train(c, log);
  for (const char* f : {"config.txt", "history.csv", "coarse.ckpt", "fine.ckpt", "adam_coarse.state", "adam_fine.state"}) {
    CHECK(std::filesystem::exists(c.out_dir / f));
  }
  CHECK(parse_config(testing::read_bytes(c.out_dir / "config.txt")).to_text() == c.to_text());
  CHECK(dataset_hash(c.dataset_dir) == hash);

  RunConfig rc = c;
  rc.checkpoint_dir = root / "run";
  rc.poses_file = c.dataset_dir / "poses.txt";
  rc.out_dir = root / "render_a";
  cmd_render(rc, log);
  rc.out_dir = root / "render_b";
  cmd_render(rc, log);
  for (const char* f : {"render_001_rgb.pfr", "render_001_depth.pfr", "render_001_rgb.png", "render_001_depth.png"}) {
    CHECK(testing::read_bytes(root / "render_a" / f) == testing::read_bytes(root / "render_b" / f));
  }
  // A render at a training pose reproduces the final validation PSNR on that view.
  const Dataset ds = load_dataset(c.dataset_dir);
  double train_psnr = 0.0;
  for (const std::size_t v : ds.indices(Split::train)) {
    char name[32];
    std::snprintf(name, sizeof(name), "render_%03zu_rgb.pfr", v);
    train_psnr += psnr(read_pfr(root / "render_a" / name), ds.views[v].rgb) / 2.0;
  }
  CHECK(train_psnr > r.history.back().val_psnr - 0.5);

  RunConfig ec = rc;
  ec.out_dir = root / "eval";
  ec.eval_split = Split::train;
  const EvalReport report = cmd_eval(ec, log);
  CHECK(report.rows.size() == 2);
  CHECK(std::abs(report.mean().psnr - train_psnr) < 1e-9);
  CHECK(std::filesystem::exists(root / "eval" / "eval.csv"));

  std::string ckpt = testing::read_bytes(root / "run" / "fine.ckpt");
  const auto pos = ckpt.find("hidden_width");
  REQUIRE(pos != std::string::npos);
  ckpt.replace(pos, 12, "hidden_wodth");
  std::ofstream(root / "run" / "fine.ckpt", std::ios::binary) << ckpt;
  try {
    cmd_render(rc, log);
    FAIL("no error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("hidden_width") != std::string::npos);
  }
}

TEST_CASE("vacuum-initialized networks render near-black frames") {
  const auto root = testing::temp_dir("cli_vacuum");
  RunConfig c = tiny_config(root);
  std::ostringstream log;
  cmd_gen(c, log);
  c.train.epochs = 0;
  c.train.density_bias = -30.0;
  c.out_dir = root / "run";
  cmd_train(c, log);
  c.checkpoint_dir = root / "run";
  c.poses_file = c.dataset_dir / "poses.txt";
  c.out_dir = root / "render";
  cmd_render(c, log);
  CHECK(read_pfr(root / "render" / "render_000_rgb.pfr").data.abs().maxCoeff() < 1e-6);
}

TEST_CASE("ablation report") {
  const auto root = testing::temp_dir("cli_ablate");
  RunConfig c = tiny_config(root);
  std::ostringstream log;
  cmd_gen(c, log);
  c.train.epochs = 2;
  c.out_dir = root / "abl";
  const auto rows = cmd_ablate(c, log);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].arm == "photo");
  CHECK(rows[1].arm == "photo+density");
  CHECK(rows[2].arm == "photo+density+depth");
  for (const auto& row : rows) {
    CHECK(row.dataset_hash == dataset_hash(c.dataset_dir));
    CHECK(std::isfinite(row.metrics.depth_rmse));
  }
  const std::string csv = testing::read_bytes(root / "abl" / "ablation.csv");
  CHECK(csv == format_ablation_csv(rows));
  CHECK(csv.rfind("arm,gains,dataset_hash,best_epoch,psnr,ssim,depth_rmse,mean_pdf_l1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("photo+density,\"1,1,0\",") != std::string::npos);

  c.dataset.test_stride = 0;
  c.out_dir = root / "notest";
  cmd_gen(c, log);
  c.dataset_dir = root / "notest";
  c.out_dir = root / "abl2";
  CHECK_THROWS_AS(cmd_ablate(c, log), ConfigError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(UsageError("x")) == 2);
  CHECK(exit_code_for(FormatError("x")) == 3);
  CHECK(exit_code_for(IoError("x")) == 3);
  CHECK(exit_code_for(DivergenceError("x")) == 4);
  CHECK(exit_code_for(NumericError("x", 0)) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);

  const auto root = testing::temp_dir("cli_exit");
  const std::string out = (root / "data").string();
  CHECK(run_cli("gen --set dataset.width=8 --set dataset.height=8 --out " + out) == 0);
  CHECK(run_cli("gen --set dataset.nope=1 --out " + out) == 2);
  CHECK(run_cli("gen --threads 0 --out " + out) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --dataset " + (root / "missing").string() + " --out " + out) == 3);
  std::ofstream(root / "data" / "manifest.txt") << "garbage\n";
  CHECK(run_cli("eval --dataset " + out + " --checkpoint " + out + " --out " + out) == 3);
}

}
