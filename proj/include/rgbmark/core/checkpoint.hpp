#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace rgbmark {

enum class Stage { kInit = 0, kStage1 = 1, kStage2 = 2 };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Everything needed to rebuild or resume a model.
///
/// On disk the container is
///
///   8 bytes   magic "RGBMCKPT"
///   u32 LE    format version (1)
///   u64 LE    header length N
///   N bytes   JSON header (sorted keys, no whitespace)
///   ...       tensor payloads, float32 little-endian, back to back
///
/// The header holds "arch", "stage", "stage1_skipped", "seed", "epochs",
/// "extra" and "tensors": a list of {name, shape, offset, bytes} entries,
/// where offset is relative to the end of the header.
struct Checkpoint {
  nlohmann::json arch;
  Stage stage = Stage::kInit;
  bool stage1_skipped = false;
  std::uint64_t seed = 0;
  /// Completed epochs per stage: {stage1, stage2}.
  std::int64_t epochs_stage1 = 0;
  std::int64_t epochs_stage2 = 0;
  /// Free-form metadata (training config, optimizer step counters, ...).
  nlohmann::json extra = nlohmann::json::object();
  NamedTensors tensors;

  const torch::Tensor* find(const std::string& name) const;
};

/// Serializes to bytes (deterministic for identical contents).
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes atomically: temp file in the target directory, then rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `contents` to `path` through a temp file + rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(const void* data, std::size_t size);
/// Hash of tensor names and contents, in order. Identical parameters give
/// identical fingerprints whether they live in memory or in a file.
std::string fingerprint(const NamedTensors& tensors);

}  // namespace rgbmark
