#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgbmark/core/error.hpp"
#include "rgbmark/model/arch_config.hpp"
#include "rgbmark/training/trainer.hpp"

namespace rgbmark::cli {

/// Invalid invocation: bad flag, missing required input, unknown config key.
/// Maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Subcommands in help order.
const std::vector<std::string>& commands();

/// File and directory locations. Empty means "not given".
struct Paths {
  std::string corpus;         // training / evaluation images
  std::string corpus_b;       // second domain (cross-domain eval)
  std::string stage2_corpus;  // fresh images for stage 2
  std::string validation;     // validation images during training
  std::string checkpoint;
  std::string resume;
  std::string residual;
  std::string template_image;
  std::string input;
  std::string output;
  std::string report;  // recorded report to re-run

  friend bool operator==(const Paths&, const Paths&) = default;
};

struct EvalSettings {
  std::int64_t batch_size = 50;
  /// "latent", "single-shot" or "both".
  std::string paradigm = "both";
  bool quantize = false;
  /// "other-pair" or "same-pair" (attack).
  std::string attack_source = "other-pair";
  /// "cover-to-domain" or "domain-to-cover" (cross-domain eval).
  std::string direction = "cover-to-domain";
  /// Noise-level sweep instead of the suite when `sweep_kind` is set.
  std::string sweep_kind;
  std::vector<double> sweep_levels;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

/// make-corpus: patches cut from the photos under paths.input.
struct CorpusSettings {
  std::int64_t count = 2000;
  std::int64_t height = 64;
  std::int64_t width = 64;

  friend bool operator==(const CorpusSettings&, const CorpusSettings&) = default;
};

/// Everything a run depends on. Serialized as
///
///   {"command", "paths": {...}, "arch": {...}, "train": {...}, "eval": {...},
///    "corpus": {...}, "suite", "seed", "workers", "verbosity", "message",
///    "message_format",
///    "bench_images"}
///
/// `seed` is the only seed: train.seed is always set from it, and the
/// train section does not accept its own.
struct RunConfig {
  std::string command;
  Paths paths;
  ArchConfig arch;
  TrainConfig train;
  EvalSettings eval;
  CorpusSettings corpus;
  /// "test" for the fixed 18-distortion suite, "clean" for Identity only,
  /// otherwise a suite file.
  std::string suite = "test";
  std::uint64_t seed = 0;
  int workers = 1;
  /// "quiet", "warn", "info" or "debug".
  std::string verbosity = "info";
  /// Hex or bit string; empty means a message drawn from the seed.
  std::string message;
  std::int64_t bench_images = 100000;
  /// How extract prints messages: "hex" or "bits".
  std::string message_format = "hex";

  nlohmann::json to_json() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Applies `j` on top of `cfg`. Unknown keys throw UsageError naming the
/// dotted key path.
void merge_config(RunConfig& cfg, const nlohmann::json& j);

/// Environment variables that may override paths (and nothing else).
/// RGBMARK_CORPUS, RGBMARK_CHECKPOINT, RGBMARK_RESIDUAL, RGBMARK_OUTPUT,
/// RGBMARK_TEMPLATE, RGBMARK_VALIDATION.
const std::map<std::string, std::string>& path_env_vars();

/// defaults < file < environment (paths only) < command line. `overrides`
/// uses the same schema as the file.
RunConfig resolve_config(const std::string& command, const nlohmann::json& file, const nlohmann::json& overrides,
                         const std::map<std::string, std::string>& env);

/// Parses and executes a command line (argv[0] is the program name).
/// Returns 0 on success, 1 on runtime failure, 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Default held-out template image shipped with the repository.
std::filesystem::path default_template();

}  // namespace rgbmark::cli
