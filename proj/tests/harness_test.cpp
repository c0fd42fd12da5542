#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "grasp/cli.hpp"
#include "test_support.hpp"

namespace grasp {
namespace {

using testing::random_image;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "grasp_test_XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Json> jsonl(const fs::path& p) {
  std::vector<Json> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) out.push_back(Json::parse(line));
  return out;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(GRASP_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A small, fast configuration on 16x16 images.
RunConfig small_run(Command c, const std::string& model, const fs::path& out) {
  RunConfig cfg;
  cfg.command = c;
  cfg.model.name = model;
  cfg.model.height = cfg.model.width = 16;
  cfg.defense.iterations = 5;
  cfg.out_dir = out.string();
  cfg.inputs = {"synthetic:3"};
  return cfg;
}

TEST(Config, ParsesFlatKeyValueText) {
  const auto kv = parse_config_text("# comment\nprojection.eta1 = 7\n\n  defense.kappa=2.5  # trailing\n", "t");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"projection.eta1", "7"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"defense.kappa", "2.5"}));
  EXPECT_THROW(parse_config_text("no equals sign\n", "t"), ConfigError);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "projection.eta9", "1"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "defense.kappa", "fast"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "defense.iterations", "-3"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "projection.enabled", "maybe"), ConfigError);
  set_config_value(cfg, "projection.eta1", "7");
  EXPECT_EQ(cfg.defense.projection.eta1, 7.0);
}

TEST(Config, ResolvedConfigRoundTrips) {
  RunConfig a;
  set_config_value(a, "projection.lambda2", "0.125");
  set_config_value(a, "losses.lf", "false");
  set_config_value(a, "robustness.battery", "rotate:90,average_blur:5");
  set_config_value(a, "sweep.values", "8,10,12");
  RunConfig b;
  for (const auto& [k, v] : resolved_config(a)) set_config_value(b, k, v);
  EXPECT_EQ(resolved_config(a), resolved_config(b));
}

TEST(Config, AblationFlagsExpressEveryRow) {
  for (const AblationRow& row : ablation_rows()) {
    RunConfig cfg;
    set_config_value(cfg, "losses.mse", detail::fmt_bool(row.losses.mse));
    set_config_value(cfg, "losses.ssim", detail::fmt_bool(row.losses.ssim));
    set_config_value(cfg, "losses.lf", detail::fmt_bool(row.losses.lf));
    set_config_value(cfg, "projection.enabled", detail::fmt_bool(row.projection));
    EXPECT_EQ(cfg.defense.losses.ssim, row.losses.ssim);
    EXPECT_EQ(cfg.defense.losses.lf, row.losses.lf);
    EXPECT_EQ(cfg.defense.projection.enabled, row.projection);
  }
}

TEST(Config, FlagsOverrideFile) {
  TempDir dir;
  write_text(dir / "run.conf", "defense.epsilon = 0.01\nprojection.eta2 = 4\nmodel.seed = 9\n");
  const std::string conf = dir / "run.conf";
  const char* argv[] = {"grasp", "defend", "--config", conf.c_str(), "--epsilon", "0.02", "x.png"};
  const CliResult r = parse_cli(7, argv);
  ASSERT_TRUE(r.config);
  EXPECT_EQ(r.config->defense.epsilon, 0.02);
  EXPECT_EQ(r.config->defense.projection.eta2, 4.0);
  EXPECT_EQ(r.config->model.seed, 9u);
  EXPECT_EQ(r.config->inputs, std::vector<std::string>{"x.png"});
}

TEST(Config, ContradictionsAreConfigErrors) {
  RunConfig cfg;
  cfg.inputs = {"synthetic:1"};
  cfg.model.name = "identity";
  cfg.model.bridge = "tcp:127.0.0.1:9";
  EXPECT_THROW(validate_config(cfg), ConfigError);

  RunConfig odd;
  odd.inputs = {"synthetic:1"};
  odd.model.height = 15;
  EXPECT_THROW(validate_config(odd), ConfigError);

  RunConfig window;
  window.inputs = {"synthetic:1"};
  window.defense.ssim.window_size = 4;
  EXPECT_THROW(validate_config(window), ConfigError);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const std::string out = dir / "out";
  EXPECT_EQ(cli("defend --out " + out + " " + (dir / "missing.png")), kExitConfig);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(cli("bogus synthetic:1 --out " + out), kExitConfig);
  EXPECT_EQ(cli("defend --model identity --bridge tcp:127.0.0.1:9 synthetic:1 --out " + out), kExitConfig);
  EXPECT_EQ(cli("defend --set nope.key=1 synthetic:1 --out " + out), kExitConfig);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(cli("defend --bridge tcp:127.0.0.1:1 synthetic:1 --out " + out), kExitProtocol);
  EXPECT_EQ(cli("--version"), kExitOk);
}

TEST(Inputs, ExpandsDirectoriesInSortedOrder) {
  TempDir dir;
  fs::create_directories(dir.path() / "imgs");
  for (const char* n : {"b.png", "a.png", "c.PNG", "notes.txt"}) write_text(dir.path() / "imgs" / n, "");
  const auto refs = expand_inputs({dir / "imgs", "synthetic:2"});
  ASSERT_EQ(refs.size(), 5u);
  EXPECT_EQ(refs[0].stem, "a");
  EXPECT_EQ(refs[1].stem, "b");
  EXPECT_EQ(refs[2].stem, "c");
  EXPECT_EQ(refs[3].label, "synthetic:1000");
  EXPECT_EQ(refs[4].synthetic_seed, 1001u);
  EXPECT_THROW(expand_inputs({dir / "imgs/a.png", dir / "imgs"}), ConfigError);
  EXPECT_THROW(expand_inputs({"synthetic:0"}), ConfigError);
}

TEST(Inputs, GrayIsReplicatedAndSizeIsConformed) {
  const ImageTensor gray = random_image({8, 8, 1}, 3);
  const LoadedInput in = conform(gray, {4, 4, 3});
  EXPECT_TRUE(in.channels_expanded);
  EXPECT_TRUE(in.resized);
  EXPECT_EQ(in.original, (Shape{8, 8, 1}));
  EXPECT_EQ(in.x.shape(), (Shape{4, 4, 3}));
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(in.x[i * 3], in.x[i * 3 + 1]);
    EXPECT_EQ(in.x[i * 3], in.x[i * 3 + 2]);
  }
  EXPECT_THROW(conform(random_image({4, 4, 3}, 1), {4, 4, 1}), ShapeError);
}

TEST(Png, RoundTripWithinQuantizationBound) {
  TempDir dir;
  for (std::size_t c : {1u, 3u}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ImageTensor x = random_image({9, 7, c}, seed);
      const std::string p = dir / "rt.png";
      save_png16(p, x);
      const ImageTensor y = load_png(p);
      ASSERT_EQ(y.shape(), x.shape());
      EXPECT_LE(max_abs_diff(x, y), 1.0 / (2.0 * 65535.0));
    }
  }
}

TEST(Png, SecondSaveIsLossless) {
  TempDir dir;
  save_png16(dir / "a.png", random_image({6, 6, 3}, 4));
  const ImageTensor once = load_png(dir / "a.png");
  save_png16(dir / "b.png", once);
  EXPECT_EQ(load_png(dir / "b.png"), once);
}

TEST(Png, RejectsUndecodableFiles) {
  TempDir dir;
  write_text(dir.path() / "junk.png", "definitely not a png");
  EXPECT_THROW(load_png(dir / "junk.png"), ImageIoError);
  EXPECT_THROW(load_png(dir / "absent.png"), ImageIoError);
}

TEST(Defend, ZeroStepIdentityReproducesInputPixels) {
  TempDir dir;
  fs::create_directories(dir.path() / "in");
  save_png16(dir / "in/face.png", random_image({64, 64, 3}, 11));
  RunConfig cfg;
  cfg.model.name = "identity";
  cfg.defense.kappa = 0.0;
  cfg.inputs = {dir / "in/face.png"};
  cfg.out_dir = dir / "out";
  ASSERT_EQ(run(cfg), kExitOk);
  EXPECT_EQ(load_png(dir / "out/adv/face.png"), load_png(dir / "in/face.png"));
  const auto rows = jsonl(dir.path() / "out/report.jsonl");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["metrics"]["psnr_in"], "INF");
  EXPECT_EQ(rows[0]["metrics"]["defense_success"], false);
}

TEST(Defend, WritesAllArtifactsAndManifest) {
  TempDir dir;
  RunConfig cfg = small_run(Command::Defend, "conv", dir.path() / "out");
  ASSERT_EQ(run(cfg), kExitOk);
  for (const char* f : {"report.jsonl", "traces.jsonl", "summary.json", "manifest.json", "adv/synthetic_1000.png"})
    EXPECT_TRUE(fs::exists(dir.path() / "out" / f)) << f;
  EXPECT_EQ(jsonl(dir.path() / "out/traces.jsonl").size(), 15u);
  const Json m = Json::parse(slurp(dir.path() / "out/manifest.json"));
  EXPECT_EQ(m["command"], "defend");
  EXPECT_EQ(m["resolved_config"]["projection.eta1"], "11");
  EXPECT_EQ(m["model"]["seed"], 42);
  EXPECT_EQ(m["inputs"].size(), 3u);
  for (const auto& a : m["artifacts"]) {
    EXPECT_EQ(a["sha256"], sha256_file(dir.path() / "out" / a["path"].get<std::string>()));
  }
}

TEST(Defend, ReportsAreReproducibleAcrossRunsAndWorkerCounts) {
  TempDir dir;
  RunConfig a = small_run(Command::Defend, "conv", dir.path() / "a");
  RunConfig b = a;
  b.out_dir = dir / "b";
  RunConfig c = a;
  c.out_dir = dir / "c";
  c.jobs = 2;
  ASSERT_EQ(run(a), kExitOk);
  ASSERT_EQ(run(b), kExitOk);
  ASSERT_EQ(run(c), kExitOk);
  const std::string ha = sha256_file(dir.path() / "a/report.jsonl");
  EXPECT_EQ(ha, sha256_file(dir.path() / "b/report.jsonl"));
  EXPECT_EQ(ha, sha256_file(dir.path() / "c/report.jsonl"));
  EXPECT_EQ(sha256_file(dir.path() / "a/traces.jsonl"), sha256_file(dir.path() / "c/traces.jsonl"));
  // Manifests differ only in the output directory they echo.
  Json ma = Json::parse(slurp(dir.path() / "a/manifest.json"));
  Json mb = Json::parse(slurp(dir.path() / "b/manifest.json"));
  EXPECT_NE(ma["resolved_config"]["run.out"], mb["resolved_config"]["run.out"]);
  ma["resolved_config"].erase("run.out");
  mb["resolved_config"].erase("run.out");
  EXPECT_EQ(ma, mb);
}

TEST(Defend, UndecodableImagesAreSkipped) {
  TempDir dir;
  fs::create_directories(dir.path() / "in");
  save_png16(dir / "in/good.png", random_image({16, 16, 3}, 1));
  write_text(dir.path() / "in/bad.png", "garbage");
  RunConfig cfg = small_run(Command::Defend, "identity", dir.path() / "out");
  cfg.inputs = {dir / "in"};
  EXPECT_EQ(run(cfg), kExitPartial);
  const auto rows = jsonl(dir.path() / "out/report.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["status"], "error");
  EXPECT_EQ(rows[1]["status"], "ok");

  cfg.inputs = {dir / "in/bad.png"};
  cfg.out_dir = dir / "out2";
  EXPECT_EQ(run(cfg), kExitPartial);
}

TEST(Defend, ReportMatchesPublishedSchema) {
  if (std::system("python3 -c 'import jsonschema' >/dev/null 2>&1") != 0) {
    GTEST_SKIP() << "python3 jsonschema not available";
  }
  TempDir dir;
  fs::create_directories(dir.path() / "in");
  save_png16(dir / "in/good.png", random_image({16, 16, 3}, 1));
  write_text(dir.path() / "in/bad.png", "garbage");
  RunConfig cfg = small_run(Command::Defend, "conv", dir.path() / "out");
  cfg.inputs = {dir / "in", "synthetic:1"};
  run(cfg);
  const std::string cmd = std::string("python3 ") + GRASP_SOURCE_DIR + "/tools/validate_report.py " +
                          (dir / "out/report.jsonl");
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(Evaluate, ReloadedPairsMatchDefendMetrics) {
  TempDir dir;
  RunConfig d = small_run(Command::Defend, "conv", dir.path() / "def");
  ASSERT_EQ(run(d), kExitOk);
  RunConfig e = d;
  e.command = Command::Evaluate;
  e.out_dir = dir / "eval";
  e.adv_dir = dir / "def/adv";
  ASSERT_EQ(run(e), kExitOk);
  const auto a = jsonl(dir.path() / "def/report.jsonl");
  const auto b = jsonl(dir.path() / "eval/report.jsonl");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i]["metrics"]["l2_out"].get<double>(), b[i]["metrics"]["l2_out"].get<double>(), 1e-4);
    EXPECT_NEAR(a[i]["metrics"]["psnr_in"].get<double>(), b[i]["metrics"]["psnr_in"].get<double>(), 0.05);
  }
}

TEST(Robustness, BatteryWritesOneRowPerTransform) {
  TempDir dir;
  RunConfig cfg = small_run(Command::Robustness, "conv", dir.path() / "out");
  cfg.battery = {Transform::parse("gaussian_blur:1"), Transform::parse("rotate:180")};
  ASSERT_EQ(run(cfg), kExitOk);
  const auto rows = jsonl(dir.path() / "out/robustness.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["transform"], "gaussian_blur:1");
  EXPECT_EQ(rows[1]["transform"], "rotate:180");
  const std::string csv = slurp(dir.path() / "out/robustness.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Sweep, ZeroBudgetAndZeroIterationsAreNoOps) {
  TempDir dir;
  RunConfig cfg = small_run(Command::Sweep, "identity", dir.path() / "eps");
  cfg.sweep_axis = "epsilon";
  cfg.sweep_values = {0.0, 0.025, 0.05};
  ASSERT_EQ(run(cfg), kExitOk);
  const Json eps = Json::parse(slurp(dir.path() / "eps/sweep.json"));
  EXPECT_EQ(eps["series"]["dsr"][0], 0.0);
  EXPECT_EQ(eps["series"]["psnr"][0], "INF");
  EXPECT_NE(eps["series"]["psnr"][1], "INF");

  cfg.out_dir = dir / "iters";
  cfg.sweep_axis = "iters";
  cfg.sweep_values = {0.0, 20.0};
  ASSERT_EQ(run(cfg), kExitOk);
  const Json it = Json::parse(slurp(dir.path() / "iters/sweep.json"));
  for (const char* s : {"dsr", "psnr", "lf", "l2_out"}) EXPECT_EQ(it["series"][s][0], eps["series"][s][0]) << s;
  const std::string csv = slurp(dir.path() / "iters/sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "axis,value,dsr,mean_psnr_in,lf_metric,mean_l2_out,mean_ssim_in");
}

TEST(Ablate, RowsFollowTheFourConfigurations) {
  TempDir dir;
  RunConfig cfg = small_run(Command::Ablate, "identity", dir.path() / "out");
  ASSERT_EQ(run(cfg), kExitOk);
  const Json rows = Json::parse(slurp(dir.path() / "out/ablation.json"))["rows"];
  ASSERT_EQ(rows.size(), 4u);
  const char* names[] = {"mse", "mse+ssim", "mse+ssim+lf", "full"};
  // Through the identity model the output distance is the input perturbation,
  // so the budget bounds it by pixels * epsilon^2.
  const double bound = 16.0 * 16.0 * 3.0 * cfg.defense.epsilon * cfg.defense.epsilon;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i]["row"], names[i]);
    EXPECT_EQ(rows[i]["projection"], i == 3);
    const double m = rows[i]["mean_final_mse"].get<double>();
    EXPECT_GT(m, 0.0);
    EXPECT_LE(m, bound * (1 + 1e-12));
  }
  const std::string csv = slurp(dir.path() / "out/ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Gradcheck, BuiltinModelsPass) {
  for (const char* m : {"identity", "affine", "conv"}) {
    TempDir dir;
    RunConfig cfg;
    cfg.command = Command::Gradcheck;
    cfg.model.name = m;
    cfg.gradcheck_seeds = 3;
    cfg.out_dir = dir / "out";
    EXPECT_EQ(run(cfg), kExitOk) << m;
    EXPECT_EQ(Json::parse(slurp(dir.path() / "out/gradcheck.json"))["all_pass"], true);
  }
}

TEST(Bridge, CliDefendsThroughChildProcess) {
  TempDir dir;
  const std::string bridge = std::string("'exec:") + GRASP_SERVER_PATH + " --model conv --size 16x16x3'";
  ASSERT_EQ(cli("defend --bridge " + bridge + " --iters 3 --out " + (dir / "remote") + " synthetic:2"), kExitOk);
  ASSERT_EQ(cli("defend --model conv --set model.height=16 --set model.width=16 --iters 3 --out " +
                (dir / "local") + " synthetic:2"),
            kExitOk);
  const auto r = jsonl(dir.path() / "remote/report.jsonl");
  const auto l = jsonl(dir.path() / "local/report.jsonl");
  ASSERT_EQ(r.size(), 2u);
  // float32 transport perturbs the trajectory only slightly.
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(r[i]["metrics"]["l2_out"].get<double>(), l[i]["metrics"]["l2_out"].get<double>(), 1e-3);
  }
}

}  // namespace
}  // namespace grasp
