#include "rgbmark/core/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/rng.hpp"

namespace rgbmark {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

// Fisher-Yates on the portable engine; std::shuffle is implementation-defined.
std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

}  // namespace

Corpus Corpus::scan(const fs::path& root, std::uint64_t seed, PairingMode mode) {
  if (!fs::exists(root)) throw ConfigError("corpus directory does not exist: " + root.string());
  Corpus c;
  c.root = root;
  c.seed = seed;
  c.mode = mode;
  if (fs::is_regular_file(root)) {
    c.files.push_back(root);
    return c;
  }
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) c.files.push_back(entry.path());
  }
  std::sort(c.files.begin(), c.files.end());
  return c;
}

std::string Corpus::id() const {
  return root.filename().string() + ":" + std::to_string(files.size());
}

ImageSet ImageSet::slice(std::int64_t begin, std::int64_t end) const {
  if (begin < 0 || end > size() || begin > end) throw ArgumentError("ImageSet::slice out of range");
  ImageSet out;
  out.images = images.slice(0, begin, end);
  out.names.assign(names.begin() + begin, names.begin() + end);
  out.corpus_id = corpus_id + "[" + std::to_string(begin) + ":" + std::to_string(end) + "]";
  return out;
}

ImageSet load_corpus(const Corpus& corpus, ImageSize size, int workers) {
  if (corpus.files.empty()) throw ConfigError("corpus is empty: " + corpus.root.string());
  const auto n = static_cast<std::int64_t>(corpus.files.size());
  ImageSet set;
  set.images = torch::empty({n, 3, size.height, size.width}, torch::kFloat32);
  set.corpus_id = corpus.id();
  for (const auto& f : corpus.files) set.names.push_back(fs::relative(f, corpus.root).string());

  // Each worker claims indices and writes straight into its row, so order is
  // fixed by index rather than completion time.
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::int64_t i = next++; i < n; i = next++) {
      try {
        set.images[i].copy_(load_image(corpus.files[static_cast<std::size_t>(i)], size));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, workers);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return set;
}

BatchStream::BatchStream(const ImageSet& set, std::int64_t batch_size, PairingMode mode,
                         std::uint64_t seed)
    : set_(&set), batch_size_(batch_size), mode_(mode), seed_(seed) {
  if (set.size() == 0) throw ConfigError("cannot batch an empty corpus");
  if (batch_size <= 0) throw ArgumentError("batch size must be positive");
  const std::int64_t need = mode == PairingMode::kPaired ? 2 * batch_size : batch_size;
  if (set.size() < need) {
    throw ConfigError("corpus has " + std::to_string(set.size()) + " images, need at least " +
                      std::to_string(need));
  }
}

std::int64_t BatchStream::batches_per_epoch() const {
  const std::int64_t per = mode_ == PairingMode::kPaired ? 2 * batch_size_ : batch_size_;
  return set_->size() / per;
}

std::vector<std::int64_t> BatchStream::order(std::int64_t epoch) const {
  return permutation(set_->size(), derive_seed(seed_, {static_cast<std::uint64_t>(epoch)}));
}

Batch BatchStream::batch(std::int64_t epoch, std::int64_t index) const {
  if (index < 0 || index >= batches_per_epoch()) throw ArgumentError("batch index out of range");
  const auto perm = order(epoch);
  const std::int64_t per = mode_ == PairingMode::kPaired ? 2 * batch_size_ : batch_size_;
  const auto first = perm.begin() + index * per;
  Batch b;
  b.indices.assign(first, first + batch_size_);
  b.cover = set_->images.index_select(0, torch::tensor(b.indices, torch::kInt64));
  if (mode_ == PairingMode::kPaired) {
    b.primed_indices.assign(first + batch_size_, first + per);
    b.cover_primed = set_->images.index_select(0, torch::tensor(b.primed_indices, torch::kInt64));
  }
  return b;
}

std::vector<Batch> BatchStream::epoch(std::int64_t epoch) const {
  std::vector<Batch> out;
  for (std::int64_t i = 0; i < batches_per_epoch(); ++i) out.push_back(batch(epoch, i));
  return out;
}

void build_patch_corpus(const std::vector<fs::path>& sources, const fs::path& out_dir,
                        std::int64_t count, ImageSize size, std::uint64_t seed) {
  if (sources.empty()) throw ConfigError("no source images for corpus");
  std::vector<cv::Mat> images;
  for (const auto& s : sources) {
    cv::Mat m = cv::imread(s.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw IoError("cannot read source image: " + s.string());
    images.push_back(m);
  }
  fs::create_directories(out_dir);
  Rng rng(mix64(seed));
  for (std::int64_t i = 0; i < count; ++i) {
    const cv::Mat& src = images[rng.below(images.size())];
    const int short_side = std::min(src.rows, src.cols);
    // Side between a quarter of the short side and the full short side, but
    // never below the output size unless the source itself is smaller.
    const int lo = std::min(short_side, std::max(static_cast<int>(size.height), short_side / 4));
    const int side = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(short_side - lo + 1)));
    const double aspect = static_cast<double>(size.width) / static_cast<double>(size.height);
    const int w = std::min(src.cols, static_cast<int>(std::lround(side * aspect)));
    const int h = side;
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.cols - w + 1)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.rows - h + 1)));
    cv::Mat patch;
    cv::resize(src(cv::Rect(x, y, w, h)), patch,
               cv::Size(static_cast<int>(size.width), static_cast<int>(size.height)), 0, 0,
               cv::INTER_AREA);
    if (rng.bit()) cv::flip(patch, patch, 1);
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(i));
    if (!cv::imwrite((out_dir / name).string(), patch)) {
      throw IoError("cannot write " + (out_dir / name).string());
    }
  }
}

}  // namespace rgbmark
