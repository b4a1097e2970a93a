#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rgbmark/core/image.hpp"

namespace rgbmark {

enum class PairingMode { kSingle, kPaired };

/// A directory of image files. Files are listed in sorted order so the
/// corpus is independent of directory enumeration order.
struct Corpus {
  std::filesystem::path root;
  std::vector<std::filesystem::path> files;
  std::uint64_t seed = 0;
  PairingMode mode = PairingMode::kSingle;

  /// Lists .png/.jpg/.jpeg/.bmp files under `root` (recursively).
  static Corpus scan(const std::filesystem::path& root, std::uint64_t seed = 0,
                     PairingMode mode = PairingMode::kSingle);

  std::size_t size() const { return files.size(); }
  /// Stable identifier: root name plus file count.
  std::string id() const;
};

/// Images decoded into memory as one (N, 3, H, W) tensor.
struct ImageSet {
  torch::Tensor images;
  std::vector<std::string> names;
  std::string corpus_id;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  /// Rows [begin, end) as a new set.
  ImageSet slice(std::int64_t begin, std::int64_t end) const;
};

/// Loads every file of the corpus. Decoding runs on `workers` threads;
/// results are reassembled in corpus order, so the output does not depend
/// on the worker count.
ImageSet load_corpus(const Corpus& corpus, ImageSize size, int workers = 1);

/// One step's worth of images. `cover_primed` is only defined in paired mode
/// and never shares an index with `cover`.
struct Batch {
  torch::Tensor cover;
  torch::Tensor cover_primed;
  std::vector<std::int64_t> indices;
  std::vector<std::int64_t> primed_indices;
};

/// Deterministic epoch-wise batching over an in-memory set. Each epoch is a
/// seed-derived permutation; the trailing incomplete batch is dropped. In
/// paired mode every batch consumes 2*batch_size consecutive permuted images,
/// the first half as covers and the second as primed covers.
class BatchStream {
 public:
  BatchStream(const ImageSet& set, std::int64_t batch_size, PairingMode mode, std::uint64_t seed);

  std::int64_t batches_per_epoch() const;
  /// Permutation used for `epoch`.
  std::vector<std::int64_t> order(std::int64_t epoch) const;
  Batch batch(std::int64_t epoch, std::int64_t index) const;
  std::vector<Batch> epoch(std::int64_t epoch) const;

 private:
  const ImageSet* set_;
  std::int64_t batch_size_;
  PairingMode mode_;
  std::uint64_t seed_;
};

/// Builds a corpus of `count` patches cut from the source photographs at
/// random positions and scales (with random horizontal flips), resized to
/// `size` and written as PNG files named 000000.png, 000001.png, ...
void build_patch_corpus(const std::vector<std::filesystem::path>& sources,
                        const std::filesystem::path& out_dir, std::int64_t count, ImageSize size,
                        std::uint64_t seed);

}  // namespace rgbmark
