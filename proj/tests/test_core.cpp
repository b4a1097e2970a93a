#include <doctest.h>

#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/core/corpus.hpp"
#include "rgbmark/core/error.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/core/message.hpp"
#include "rgbmark/core/rng.hpp"
#include "support.hpp"

using namespace rgbmark;
using testing::TempDir;

namespace {

void write_png(const std::filesystem::path& p, const cv::Mat& bgr) { REQUIRE(cv::imwrite(p.string(), bgr)); }

}  // namespace

TEST_CASE("load_image: solid black and white") {
  TempDir dir;
  write_png(dir / "black.png", cv::Mat(20, 30, CV_8UC3, cv::Scalar(0, 0, 0)));
  write_png(dir / "white.png", cv::Mat(20, 30, CV_8UC3, cv::Scalar(255, 255, 255)));
  auto black = load_image(dir / "black.png", {128, 128});
  auto white = load_image(dir / "white.png", {128, 128});
  CHECK(black.sizes() == torch::IntArrayRef{3, 128, 128});
  CHECK(black.abs().max().item<float>() == 0.0f);
  CHECK(white.min().item<float>() == 1.0f);
}

TEST_CASE("load_image: ramp matches the file bytes") {
  TempDir dir;
  cv::Mat ramp(4, 4, CV_8UC3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) ramp.at<cv::Vec3b>(y, x) = cv::Vec3b(y * 16 + x, 100 + x, 255 - 7 * y);
  }
  write_png(dir / "ramp.png", ramp);
  // Independent decode of the same file.
  cv::Mat raw = cv::imread((dir / "ramp.png").string(), cv::IMREAD_UNCHANGED);
  auto img = load_image(dir / "ramp.png", {4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      auto px = raw.at<cv::Vec3b>(y, x);  // BGR
      CHECK(img[0][y][x].item<float>() == static_cast<float>(px[2]) / 255.0f);
      CHECK(img[1][y][x].item<float>() == static_cast<float>(px[1]) / 255.0f);
      CHECK(img[2][y][x].item<float>() == static_cast<float>(px[0]) / 255.0f);
    }
  }
}

TEST_CASE("load_image: grayscale replicated, missing file is an I/O error") {
  TempDir dir;
  cv::Mat gray(8, 8, CV_8UC1, cv::Scalar(77));
  write_png(dir / "g.png", gray);
  auto img = load_image(dir / "g.png", {8, 8});
  CHECK(torch::equal(img[0], img[1]));
  CHECK(torch::equal(img[1], img[2]));
  CHECK(img[0][3][3].item<float>() == 77.0f / 255.0f);
  CHECK_THROWS_AS(load_image(dir / "nope.png", {8, 8}), IoError);
}

TEST_CASE("save_image: rounding and clamping") {
  TempDir dir;
  auto img = torch::zeros({3, 2, 2});
  img[0][0][0] = 0.5;
  img[1][0][1] = 1.2;
  img[2][1][0] = -0.3;
  img[0][1][1] = 2.5 / 255.0;
  save_image(img, dir / "out.png");
  cv::Mat raw = cv::imread((dir / "out.png").string(), cv::IMREAD_UNCHANGED);
  CHECK(raw.at<cv::Vec3b>(0, 0)[2] == 128);
  CHECK(raw.at<cv::Vec3b>(0, 1)[1] == 255);
  CHECK(raw.at<cv::Vec3b>(1, 0)[0] == 0);
  CHECK(raw.at<cv::Vec3b>(1, 1)[2] == 3);  // half rounds up
  CHECK(static_cast<int>(raw.at<cv::Vec3b>(1, 1)[1]) == 0);
  CHECK_THROWS_AS(save_image(img, "/proc/definitely/not/writable.png"), IoError);
}

TEST_CASE("save then load equals quantize_roundtrip") {
  TempDir dir;
  auto x = testing::uniform({3, 16, 16}, 3, -0.1, 1.1);
  save_image(x, dir / "x.png");
  CHECK(torch::equal(load_image(dir / "x.png", {16, 16}), quantize_roundtrip(x)));
}

TEST_CASE("quantize_roundtrip") {
  auto grid = torch::arange(256, torch::kFloat32).div(255.0).view({1, 1, 256}).expand({3, 4, 256}).contiguous();
  CHECK(torch::equal(quantize_roundtrip(grid), grid));

  auto bright = torch::full({3, 2, 2}, 0.999f);
  CHECK(quantize_roundtrip(bright + 0.02f).min().item<float>() == 1.0f);

  // Exhaustive scan of one channel: every float step of [0, 1] on a fine grid.
  auto fine = torch::linspace(0.0, 1.0, 255 * 64 + 1, torch::kFloat64).to(torch::kFloat32).view({1, 1, -1});
  auto err = (quantize_roundtrip(fine).to(torch::kFloat64) - fine.to(torch::kFloat64)).abs().max().item<double>();
  CHECK(err <= 1.0 / 510.0 + 1e-7);
}

TEST_CASE("random_message") {
  CHECK(random_message(64, 5) == random_message(64, 5));
  CHECK(!(random_message(64, 5) == random_message(64, 6)));
  CHECK_THROWS_AS(random_message(0, 1), ArgumentError);
  CHECK_THROWS_AS(random_message(-3, 1), ArgumentError);
  double ones = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto m = random_message(64, s);
    for (auto b : m.bits()) ones += b;
  }
  const double mean = ones / (10000.0 * 64.0);
  CHECK(mean >= 0.48);
  CHECK(mean <= 0.52);
}

TEST_CASE("random_message_batch rows match random_message") {
  auto batch = random_message_batch(4, 16, 99);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(torch::equal(batch[i], random_message(16, derive_seed(99, {static_cast<std::uint64_t>(i)})).to_tensor()));
  }
}

TEST_CASE("Message text forms") {
  auto m = random_message(64, 11);
  CHECK(Message::from_hex(m.to_hex()) == m);
  CHECK(Message::from_bit_string(m.to_bit_string()) == m);
  CHECK(m.to_hex().size() == 16);
  CHECK(Message::from_hex("a").to_bit_string() == "1010");
  CHECK(Message::parse("1010", 4).to_hex() == "a");
  CHECK(Message::parse("F0", 8).to_bit_string() == "11110000");
  CHECK_THROWS_AS(Message::from_hex("xz"), ArgumentError);
  CHECK_THROWS_AS(Message::parse("abc", 16), ArgumentError);
  CHECK_THROWS_AS(Message(std::vector<std::uint8_t>{0, 2}), ArgumentError);
  auto logits = torch::tensor({-1.0f, 2.0f, 0.0f, 0.5f});
  CHECK(Message::from_logits(logits).to_bit_string() == "0101");
}

TEST_CASE("derive_seed and Rng are pure") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  auto g1 = make_generator(3), g2 = make_generator(3);
  CHECK(torch::equal(torch::randn({10}, g1), torch::randn({10}, g2)));
}

namespace {

ImageSet fake_set(std::int64_t n) {
  ImageSet s;
  s.images = torch::arange(n, torch::kFloat32).view({n, 1, 1, 1}).expand({n, 3, 2, 2}).contiguous();
  for (std::int64_t i = 0; i < n; ++i) s.names.push_back(std::to_string(i));
  s.corpus_id = "fake:" + std::to_string(n);
  return s;
}

}  // namespace

TEST_CASE("BatchStream: counts, coverage and pairing") {
  auto set = fake_set(10);
  BatchStream single(set, 4, PairingMode::kSingle, 1);
  CHECK(single.batches_per_epoch() == 2);
  BatchStream paired(set, 4, PairingMode::kPaired, 1);
  CHECK(paired.batches_per_epoch() == 1);

  auto b = paired.batch(0, 0);
  std::set<std::int64_t> a(b.indices.begin(), b.indices.end());
  for (auto i : b.primed_indices) CHECK(a.count(i) == 0);
  CHECK(b.cover.size(0) == 4);
  CHECK(b.cover_primed.size(0) == 4);

  auto order = single.order(3);
  std::set<std::int64_t> all(order.begin(), order.end());
  CHECK(all.size() == 10);
  CHECK(single.order(3) == BatchStream(set, 4, PairingMode::kSingle, 1).order(3));
  CHECK(single.order(3) != single.order(4));

  // Rows follow the recorded indices.
  auto s0 = single.batch(2, 1);
  for (std::size_t i = 0; i < s0.indices.size(); ++i) {
    CHECK(s0.cover[static_cast<std::int64_t>(i)][0][0][0].item<float>() == static_cast<float>(s0.indices[i]));
  }

  ImageSet empty;
  CHECK_THROWS_AS(BatchStream(empty, 4, PairingMode::kSingle, 1), ConfigError);
  CHECK_THROWS_AS(BatchStream(fake_set(5), 4, PairingMode::kPaired, 1), ConfigError);
}

TEST_CASE("load_corpus order does not depend on worker count") {
  TempDir dir;
  build_patch_corpus(testing::photo_sources(), dir.path(), 12, {16, 16}, 4);
  auto corpus = Corpus::scan(dir.path());
  CHECK(corpus.size() == 12);
  auto one = load_corpus(corpus, {16, 16}, 1);
  auto four = load_corpus(corpus, {16, 16}, 4);
  CHECK(torch::equal(one.images, four.images));
  CHECK(one.names == four.names);
  CHECK_THROWS_AS(Corpus::scan(dir / "missing"), ConfigError);

  TempDir again;
  build_patch_corpus(testing::photo_sources(), again.path(), 12, {16, 16}, 4);
  CHECK(torch::equal(load_corpus(Corpus::scan(again.path()), {16, 16}).images, one.images));
}

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.arch = {{"base_channels", 8}};
  c.stage = Stage::kStage1;
  c.seed = 42;
  c.epochs_stage1 = 3;
  c.extra = {{"note", "x"}};
  c.tensors.emplace_back("a.weight", testing::uniform({2, 3}, 1, -1, 1));
  c.tensors.emplace_back("b.bias", testing::uniform({4}, 2, -1, 1));
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  TempDir dir;
  auto c = sample_checkpoint();
  save_checkpoint(c, dir / "c.ckpt");
  auto loaded = load_checkpoint(dir / "c.ckpt");
  CHECK(loaded.stage == Stage::kStage1);
  CHECK(loaded.seed == 42);
  CHECK(loaded.epochs_stage1 == 3);
  CHECK(loaded.arch == c.arch);
  REQUIRE(loaded.tensors.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(loaded.tensors[i].first == c.tensors[i].first);
    CHECK(torch::equal(loaded.tensors[i].second, c.tensors[i].second));
  }
  save_checkpoint(loaded, dir / "d.ckpt");
  CHECK(read_file(dir / "c.ckpt") == read_file(dir / "d.ckpt"));
  CHECK(fingerprint(loaded.tensors) == fingerprint(c.tensors));
}

TEST_CASE("checkpoint rejects corrupt input") {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ConfigError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ConfigError);
  CHECK(stage_from_string(to_string(Stage::kStage2)) == Stage::kStage2);
  CHECK_THROWS_AS(stage_from_string("stage3"), ConfigError);
}
