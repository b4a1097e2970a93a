#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rgbmark/cli/cli.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/embedder/embedder.hpp"
#include "support.hpp"

using namespace rgbmark;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A toy checkpoint marked as trained, for plumbing tests.
std::filesystem::path toy_checkpoint(const testing::TempDir& dir) {
  WatermarkModel m(testing::toy_arch(), 2);
  m.set_stage(Stage::kStage2);
  save_checkpoint(m.to_checkpoint(), dir / "toy.ckpt");
  return dir / "toy.ckpt";
}

}  // namespace

TEST_CASE("resolve_config defaults and precedence") {
  auto c = cli::resolve_config("train", json::object(), json::object(), {});
  CHECK(c.train.weights.alpha == 0.005);
  CHECK(c.train.weights.image == 0.2);
  CHECK(c.train.weights.message == 1.0);
  CHECK(c.train.weights.adversarial == 0.001);
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.command == "train");

  json file = {{"train", {{"learning_rate", 1e-3}}}, {"seed", 9}, {"paths", {{"corpus", "from_file"}}}};
  auto f = cli::resolve_config("train", file, json::object(), {});
  CHECK(f.train.learning_rate == 1e-3);
  CHECK(f.train.seed == 9);
  auto o = cli::resolve_config("train", file, {{"train", {{"learning_rate", 1e-5}}}}, {});
  CHECK(o.train.learning_rate == 1e-5);

  // Environment beats the file for paths; the command line beats both.
  std::map<std::string, std::string> env = {{"RGBMARK_CORPUS", "from_env"}};
  CHECK(cli::resolve_config("train", file, json::object(), env).paths.corpus == "from_env");
  CHECK(cli::resolve_config("train", file, {{"paths", {{"corpus", "from_cli"}}}}, env).paths.corpus == "from_cli");
  for (const auto& [var, key] : cli::path_env_vars()) CHECK(var.rfind("RGBMARK_", 0) == 0);
}

TEST_CASE("unknown and misplaced keys are rejected by name") {
  auto expect_error = [](const json& file, const std::string& needle) {
    try {
      (void)cli::resolve_config("train", file, json::object(), {});
      FAIL("accepted " << file.dump());
    } catch (const cli::UsageError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect_error({{"train", {{"learnig_rate", 1e-3}}}}, "learnig_rate");
  expect_error({{"arch", {{"windw_size", 4}}}}, "windw_size");
  expect_error({{"paths", {{"corpse", "x"}}}}, "corpse");
  expect_error({{"sed", 1}}, "sed");
  expect_error({{"train", {{"seed", 1}}}}, "train.seed");
  expect_error({{"command", "stamp"}}, "stamp");
  expect_error({{"eval", {{"paradigm", "sideways"}}}}, "paradigm");
}

TEST_CASE("resolved config round trips") {
  json file = {{"train", {{"learning_rate", 3e-4}, {"noise_kinds", {"Identity", "GN"}}}},
               {"seed", 4},
               {"eval", {{"sweep_levels", {1, 2}}}}};
  auto c = cli::resolve_config("train", file, json::object(), {});
  auto again = cli::resolve_config("", c.to_json(), json::object(), {});
  CHECK(again == c);
}

TEST_CASE("help lists every flag of every command") {
  const std::map<std::string, std::vector<std::string>> expected = {
      {"train",
       {"--config", "--set", "--seed", "--workers", "--verbosity", "--out", "--corpus", "--stage2-corpus",
        "--validation", "--resume", "--lr", "--epochs-stage1", "--epochs-stage2", "--batch", "--noise",
        "--skip-stage1"}},
      {"make-residual", {"--checkpoint", "--template", "--message", "--format", "--out", "--seed"}},
      {"stamp", {"--residual", "--in", "--out", "--workers"}},
      {"extract", {"--checkpoint", "--in", "--message", "--format", "--out"}},
      {"eval",
       {"--checkpoint", "--corpus", "--corpus-b", "--report", "--suite", "--paradigm", "--batch-size", "--quantize",
        "--direction", "--sweep-kind", "--sweep-levels", "--out"}},
      {"attack", {"--checkpoint", "--corpus", "--suite", "--source", "--batch-size", "--quantize", "--out"}},
      {"bench", {"--residual", "--images", "--workers", "--out"}},
      {"saliency", {"--checkpoint", "--in", "--message", "--out"}},
      {"make-corpus", {"--in", "--out", "--count", "--height", "--width", "--seed"}},
  };
  CHECK(expected.size() == cli::commands().size());
  auto top = run_cli({"--help"});
  CHECK(top.code == 0);
  for (const auto& c : cli::commands()) CHECK(top.out.find(c) != std::string::npos);
  for (const auto& [cmd, flags] : expected) {
    auto r = run_cli({cmd, "--help"});
    CHECK(r.code == 0);
    for (const auto& f : flags) CHECK_MESSAGE(r.out.find(f) != std::string::npos, cmd << " " << f);
  }
}

TEST_CASE("usage errors exit with 2") {
  auto missing = run_cli({"eval", "--corpus", "x", "--out", "y"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--checkpoint") != std::string::npos);
  CHECK(missing.err.find("Usage") != std::string::npos);
  CHECK(run_cli({"eval", "--bogus"}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"train", "--set", "train.learnig_rate=1"}).code == 2);
  CHECK(run_cli({"train", "--lr", "fast"}).code == 2);
}

TEST_CASE("runtime failures exit with 1") {
  testing::TempDir dir;
  auto r = run_cli({"stamp", "--residual", (dir / "missing.bin").string(), "--in", dir.path().string(), "--out",
                    (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("io") != std::string::npos);
}

TEST_CASE("make-residual, stamp and extract through the command line") {
  testing::TempDir dir;
  const auto ckpt = toy_checkpoint(dir);
  const auto residual = dir / "r.bin";
  auto made = run_cli({"make-residual", "--checkpoint", ckpt.string(), "--message", "a5", "--out", residual.string(),
                       "--verbosity", "quiet"});
  REQUIRE(made.code == 0);
  CHECK(made.out == "a5\n");
  CHECK(std::filesystem::exists(residual.string() + ".config.json"));
  auto wm = ResidualWatermark::load(residual);
  CHECK(wm.message.to_hex() == "a5");

  std::filesystem::create_directories(dir / "in");
  for (int i = 0; i < 3; ++i) {
    save_image(testing::natural_batch(1, 16, 16, 20 + i)[0], dir / "in" / ("img" + std::to_string(i) + ".png"));
  }
  auto stamped = run_cli({"stamp", "--residual", residual.string(), "--in", (dir / "in").string(), "--out",
                          (dir / "out").string()});
  REQUIRE(stamped.code == 0);
  int outputs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "out")) outputs += e.path().extension() == ".png";
  CHECK(outputs == 3);

  // The echoed config alone reproduces the run.
  const auto echoed = dir / "out" / "resolved_config.json";
  REQUIRE(std::filesystem::exists(echoed));
  CHECK(read_json(echoed).at("command") == "stamp");
  auto again = run_cli({"stamp", "--config", echoed.string(), "--out", (dir / "out2").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir / "out" / "img1.png") == slurp(dir / "out2" / "img1.png"));

  // extract prints what the library decodes.
  auto model = WatermarkModel::load(ckpt);
  const auto file = dir / "out" / "img0.png";
  auto ex = run_cli({"extract", "--checkpoint", ckpt.string(), "--in", file.string()});
  REQUIRE(ex.code == 0);
  CHECK(ex.out == extract(model, load_image(file, {16, 16})).to_hex() + "\n");
  auto bits = run_cli({"extract", "--checkpoint", ckpt.string(), "--in", file.string(), "--format", "bits"});
  CHECK(bits.out == extract(model, load_image(file, {16, 16})).to_bit_string() + "\n");
  auto scored = run_cli({"extract", "--checkpoint", ckpt.string(), "--in", (dir / "out").string(), "--message",
                         "a5", "--out", (dir / "ex").string()});
  REQUIRE(scored.code == 0);
  CHECK(read_json(dir / "ex" / "messages.json").size() == 3);
}

TEST_CASE("eval, attack, saliency, bench and make-corpus run end to end") {
  testing::TempDir dir;
  const auto ckpt = toy_checkpoint(dir);
  auto corpus = run_cli({"make-corpus", "--in", (testing::data_dir() / "sources" / "photo").string(), "--out",
                         (dir / "corpus").string(), "--count", "6", "--height", "16", "--width", "16", "--seed", "3"});
  REQUIRE(corpus.code == 0);
  CHECK(Corpus::scan(dir / "corpus").size() == 6);

  auto ev = run_cli({"eval", "--checkpoint", ckpt.string(), "--corpus", (dir / "corpus").string(), "--out",
                     (dir / "eval").string(), "--paradigm", "latent", "--suite", "clean", "--batch-size", "4"});
  REQUIRE(ev.code == 0);
  const auto report = dir / "eval" / "report_latent.json";
  REQUIRE(std::filesystem::exists(report));
  auto re = run_cli({"eval", "--checkpoint", ckpt.string(), "--corpus", (dir / "corpus").string(), "--out",
                     (dir / "rerun").string(), "--report", report.string()});
  CHECK(re.code == 0);
  CHECK(re.out.find("identical") != std::string::npos);

  auto sweep = run_cli({"eval", "--checkpoint", ckpt.string(), "--corpus", (dir / "corpus").string(), "--out",
                        (dir / "sweep").string(), "--paradigm", "latent", "--sweep-kind", "GN", "--sweep-levels",
                        "0,10"});
  CHECK(sweep.code == 0);
  CHECK(std::filesystem::exists(dir / "sweep" / "sweep_GN_latent.json"));

  auto at = run_cli({"attack", "--checkpoint", ckpt.string(), "--corpus", (dir / "corpus").string(), "--out",
                     (dir / "attack").string(), "--suite", "clean", "--source", "same-pair"});
  CHECK(at.code == 0);
  CHECK(std::filesystem::exists(dir / "attack" / "report_attack_same-pair.json"));

  auto sal = run_cli({"saliency", "--checkpoint", ckpt.string(), "--in", (dir / "corpus" / "000000.png").string(),
                      "--out", (dir / "sal").string()});
  CHECK(sal.code == 0);
  CHECK(std::filesystem::exists(dir / "sal" / "000000_saliency.png"));

  auto bench = run_cli({"bench", "--images", "50", "--out", (dir / "bench").string()});
  CHECK(bench.code == 0);
  CHECK(read_json(dir / "bench" / "bench.json").at("images") == 50);
}

TEST_CASE("the installed binary runs") {
  const std::string cmd = std::string(RGBMARK_CLI_PATH) + " --help > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  const std::string bad = std::string(RGBMARK_CLI_PATH) + " eval > /dev/null 2>&1";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
