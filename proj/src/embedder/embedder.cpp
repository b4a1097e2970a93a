#include "rgbmark/embedder/embedder.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include "rgbmark/core/corpus.hpp"
#include "rgbmark/core/error.hpp"
#include "rgbmark/core/log.hpp"
#include "rgbmark/core/rng.hpp"

namespace rgbmark {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'M', 'R', 'E', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  if (s.size() > 0xffff) throw ArgumentError("residual metadata string too long");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw IoError("residual file is truncated");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string get_string() {
    auto n = get<std::uint16_t>();
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

/// Runs fn(worker, begin, end) over `workers` contiguous chunks of [0, n).
template <typename Fn>
void parallel_chunks(std::int64_t n, int workers, Fn fn) {
  workers = static_cast<int>(std::clamp<std::int64_t>(workers, 1, std::max<std::int64_t>(n, 1)));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const auto begin = n * w / workers;
    const auto end = n * (w + 1) / workers;
    threads.emplace_back([=, &fn] { fn(w, begin, end); });
  }
  for (auto& t : threads) t.join();
}

torch::Tensor fit_to(const torch::Tensor& image, ImageSize size, const char* what) {
  if (size_of(image) == size) return image;
  log_warn(std::string(what) + ": resizing " + std::to_string(image.size(-2)) + "x" +
           std::to_string(image.size(-1)) + " input to " + std::to_string(size.height) + "x" +
           std::to_string(size.width));
  return resize_to(image, size);
}

}  // namespace

ImageSize ResidualWatermark::size() const { return size_of(epsilon); }

double ResidualWatermark::amplitude() const { return epsilon.abs().max().item<double>(); }

std::string ResidualWatermark::serialize() const {
  check_image(epsilon, "residual");
  auto eps = epsilon.to(torch::kFloat32).contiguous();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(eps.size(1)));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(eps.size(2)));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(message.size()));
  for (auto b : message.bits()) out.push_back(static_cast<char>(b));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(stage));
  put_string(out, checkpoint_hash);
  put_string(out, template_id);
  out.append(reinterpret_cast<const char*>(eps.data_ptr<float>()), eps.numel() * sizeof(float));
  return out;
}

ResidualWatermark ResidualWatermark::deserialize(const std::string& bytes) {
  Reader r{bytes};
  r.need(sizeof(kMagic));
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("not a residual file");
  r.pos = sizeof(kMagic);
  if (auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw IoError("unsupported residual file version " + std::to_string(v));
  }
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const auto l = r.get<std::uint32_t>();
  if (h == 0 || w == 0 || l == 0) throw IoError("residual file has an empty dimension");
  r.need(l);
  std::vector<std::uint8_t> bits(bytes.begin() + r.pos, bytes.begin() + r.pos + l);
  r.pos += l;
  ResidualWatermark wm;
  wm.message = Message(std::move(bits));
  const auto stage = r.get<std::uint8_t>();
  if (stage > 2) throw IoError("residual file has an invalid stage");
  wm.stage = static_cast<Stage>(stage);
  wm.checkpoint_hash = r.get_string();
  wm.template_id = r.get_string();
  const std::size_t n = 3ull * h * w;
  r.need(n * sizeof(float));
  if (r.pos + n * sizeof(float) != bytes.size()) throw IoError("residual file has trailing bytes");
  wm.epsilon = torch::empty({3, h, w}, torch::kFloat32);
  std::memcpy(wm.epsilon.data_ptr<float>(), bytes.data() + r.pos, n * sizeof(float));
  return wm;
}

void ResidualWatermark::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

ResidualWatermark ResidualWatermark::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

ResidualWatermark make_residual(WatermarkModel& model, const torch::Tensor& template_image,
                                const Message& message, const std::string& template_id) {
  if (model.stage() == Stage::kInit) throw ConfigError("make_residual needs a trained checkpoint");
  if (message.size() != model.config().message_length) {
    throw ConfigError("message has " + std::to_string(message.size()) + " bits, model expects " +
                      std::to_string(model.config().message_length));
  }
  check_image(template_image, "template");
  const ImageSize size{model.config().height, model.config().width};
  auto tmpl = fit_to(template_image.to(torch::kFloat32), size, "make_residual").unsqueeze(0);
  torch::NoGradGuard no_grad;
  auto wm = model.encode(tmpl, message.to_tensor().unsqueeze(0)).to(torch::kFloat32);
  ResidualWatermark out;
  out.epsilon = (wm - tmpl).squeeze(0).contiguous();
  out.message = message;
  out.checkpoint_hash = model.fingerprint();
  out.template_id = template_id;
  out.stage = model.stage();
  return out;
}

std::int64_t stamp_kernel(const float* in, const float* eps, float* out, std::int64_t n) {
  std::int64_t clipped = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = in[i] + eps[i];
    clipped += (v < 0.0f) | (v > 1.0f);
    out[i] = std::min(std::max(v, 0.0f), 1.0f);
  }
  return clipped;
}

StampResult stamp(const ResidualWatermark& wm, const torch::Tensor& image) {
  check_image(image, "stamp input");
  auto in = fit_to(image.to(torch::kFloat32), wm.size(), "stamp").contiguous();
  auto eps = wm.epsilon.to(torch::kFloat32).contiguous();
  StampResult r;
  r.image = torch::empty_like(in);
  r.values = in.numel();
  r.saturated = stamp_kernel(in.data_ptr<float>(), eps.data_ptr<float>(), r.image.data_ptr<float>(), r.values);
  return r;
}

std::vector<StampResult> stamp_all(const ResidualWatermark& wm, const std::vector<torch::Tensor>& images,
                                   int workers) {
  std::vector<StampResult> out(images.size());
  parallel_chunks(static_cast<std::int64_t>(images.size()), workers, [&](int, std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) out[i] = stamp(wm, images[i]);
  });
  return out;
}

namespace {

std::vector<std::filesystem::path> list_inputs(const std::filesystem::path& in, std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(in) && in.extension() == ".txt") {
    std::ifstream f(in);
    std::vector<fs::path> files;
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      fs::path p(line);
      files.push_back(p.is_relative() ? in.parent_path() / p : p);
    }
    root = in.parent_path();
    return files;
  }
  auto corpus = Corpus::scan(in);
  root = fs::is_directory(in) ? in : in.parent_path();
  return corpus.files;
}

}  // namespace

FileStampReport stamp_files(const ResidualWatermark& wm, const std::filesystem::path& in,
                            const std::filesystem::path& out, int workers) {
  namespace fs = std::filesystem;
  fs::path root;
  auto files = list_inputs(in, root);
  FileStampReport report;
  report.outputs.resize(files.size());
  std::vector<std::int64_t> saturated(files.size()), values(files.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::string first_error;
  auto work = [&] {
    for (auto i = next++; i < files.size(); i = next++) {
      try {
        auto img = load_image(files[i], wm.size());
        auto r = stamp(wm, img);
        auto rel = fs::relative(files[i], root);
        if (rel.empty() || rel.native().starts_with("..")) rel = files[i].filename();
        auto dst = out / rel;
        dst.replace_extension(".png");
        save_image(r.image, dst);
        report.outputs[i] = dst;
        saturated[i] = r.saturated;
        values[i] = r.values;
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (first_error.empty()) first_error = files[i].string() + ": " + e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(files.size())));
  std::vector<std::thread> threads;
  for (int w = 1; w < n; ++w) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (!first_error.empty()) throw IoError(first_error);
  report.images = static_cast<std::int64_t>(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    report.saturated += saturated[i];
    report.values += values[i];
  }
  return report;
}

Message extract(WatermarkModel& model, const torch::Tensor& image) {
  check_image(image, "extract input");
  return extract_batch(model, image.unsqueeze(0)).front();
}

std::vector<Message> extract_batch(WatermarkModel& model, const torch::Tensor& batch) {
  check_batch(batch, "extract input");
  const ImageSize size{model.config().height, model.config().width};
  auto x = fit_to(batch, size, "extract");
  torch::NoGradGuard no_grad;
  auto logits = model.decode(x);
  std::vector<Message> out;
  out.reserve(logits.size(0));
  for (std::int64_t i = 0; i < logits.size(0); ++i) out.push_back(Message::from_logits(logits[i]));
  return out;
}

ThroughputReport throughput_benchmark(const ResidualWatermark& wm, std::int64_t n, int workers,
                                      std::uint64_t seed) {
  if (n < 1) throw ArgumentError("throughput_benchmark needs n >= 1");
  if (workers < 1) throw ArgumentError("throughput_benchmark needs workers >= 1");
  auto eps = wm.epsilon.to(torch::kFloat32).contiguous();
  const std::int64_t len = eps.numel();
  const float* e = eps.data_ptr<float>();

  // Synthetic 8-bit-valued images; generation is not timed.
  constexpr std::int64_t kPool = 16;
  std::vector<std::vector<float>> pool(kPool, std::vector<float>(len));
  Rng rng(derive_seed(seed, {0x62656e63}));
  for (auto& img : pool) {
    for (auto& v : img) v = static_cast<float>(rng.below(256)) / 255.0f;
  }

  std::vector<std::int64_t> clipped(workers, 0);
  const auto t0 = std::chrono::steady_clock::now();
  parallel_chunks(n, workers, [&](int w, std::int64_t b, std::int64_t end) {
    std::vector<float> out(len);
    std::int64_t c = 0;
    for (auto i = b; i < end; ++i) c += stamp_kernel(pool[i % kPool].data(), e, out.data(), len);
    clipped[w] = c;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ThroughputReport r;
  r.images = n;
  r.workers = workers;
  r.seconds = secs;
  r.images_per_second = secs > 0 ? static_cast<double>(n) / secs : 0.0;
  std::int64_t total = 0;
  for (auto c : clipped) total += c;
  r.saturation_rate = static_cast<double>(total) / (static_cast<double>(n) * len);
  return r;
}

}  // namespace rgbmark
