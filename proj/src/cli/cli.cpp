#include "rgbmark/cli/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/core/corpus.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/core/log.hpp"
#include "rgbmark/core/message.hpp"
#include "rgbmark/core/rng.hpp"
#include "rgbmark/embedder/embedder.hpp"
#include "rgbmark/eval/eval.hpp"
#include "rgbmark/model/model.hpp"
#include "rgbmark/noise/distortion.hpp"

#ifndef RGBMARK_DEFAULT_TEMPLATE
#define RGBMARK_DEFAULT_TEMPLATE "data/template.jpg"
#endif

namespace rgbmark::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kMessageTag = 0x6d7367;  // "msg"
constexpr std::uint64_t kBenchTag = 0x62656e63;  // "benc"

// ---------------------------------------------------------------- config

void reject_unknown(const json& j, const std::set<std::string>& keys, const std::string& prefix) {
  if (!j.is_object()) throw UsageError("config section " + (prefix.empty() ? "<root>" : prefix) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!keys.contains(key)) throw UsageError("unknown config key: " + prefix + key);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    throw UsageError("config key " + prefix + key + " has the wrong type");
  }
}

json paths_json(const Paths& p) {
  return {{"corpus", p.corpus},         {"corpus_b", p.corpus_b}, {"stage2_corpus", p.stage2_corpus},
          {"validation", p.validation}, {"checkpoint", p.checkpoint}, {"resume", p.resume},
          {"residual", p.residual},     {"template", p.template_image}, {"input", p.input},
          {"output", p.output},         {"report", p.report}};
}

void merge_paths(Paths& p, const json& j) {
  reject_unknown(j,
                 {"corpus", "corpus_b", "stage2_corpus", "validation", "checkpoint", "resume", "residual", "template",
                  "input", "output", "report"},
                 "paths.");
  read(j, "corpus", p.corpus, "paths.");
  read(j, "corpus_b", p.corpus_b, "paths.");
  read(j, "stage2_corpus", p.stage2_corpus, "paths.");
  read(j, "validation", p.validation, "paths.");
  read(j, "checkpoint", p.checkpoint, "paths.");
  read(j, "resume", p.resume, "paths.");
  read(j, "residual", p.residual, "paths.");
  read(j, "template", p.template_image, "paths.");
  read(j, "input", p.input, "paths.");
  read(j, "output", p.output, "paths.");
  read(j, "report", p.report, "paths.");
}

json eval_json(const EvalSettings& e) {
  return {{"batch_size", e.batch_size},       {"paradigm", e.paradigm},   {"quantize", e.quantize},
          {"attack_source", e.attack_source}, {"direction", e.direction}, {"sweep_kind", e.sweep_kind},
          {"sweep_levels", e.sweep_levels}};
}

void merge_eval(EvalSettings& e, const json& j) {
  reject_unknown(j, {"batch_size", "paradigm", "quantize", "attack_source", "direction", "sweep_kind", "sweep_levels"},
                 "eval.");
  read(j, "batch_size", e.batch_size, "eval.");
  read(j, "paradigm", e.paradigm, "eval.");
  read(j, "quantize", e.quantize, "eval.");
  read(j, "attack_source", e.attack_source, "eval.");
  read(j, "direction", e.direction, "eval.");
  read(j, "sweep_kind", e.sweep_kind, "eval.");
  read(j, "sweep_levels", e.sweep_levels, "eval.");
}

void merge_corpus(CorpusSettings& c, const json& j) {
  reject_unknown(j, {"count", "height", "width"}, "corpus.");
  read(j, "count", c.count, "corpus.");
  read(j, "height", c.height, "corpus.");
  read(j, "width", c.width, "corpus.");
}

// Library configs reject unknown keys with ConfigError; re-raise as usage
// errors so a typo in a file or flag is reported as a bad invocation.
template <typename T>
void merge_library(T& target, const json& patch, const char* section) {
  if (!patch.is_object()) throw UsageError(std::string("config section ") + section + " must be an object");
  json merged = target;
  merged.update(patch);
  try {
    target = merged.get<T>();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(std::string("config section ") + section + ": " + e.what());
  }
}

void validate(const RunConfig& c) {
  static const std::set<std::string> verbosities = {"quiet", "warn", "info", "debug"};
  if (!verbosities.contains(c.verbosity)) throw UsageError("verbosity must be quiet, warn, info or debug");
  if (c.workers < 1) throw UsageError("workers must be >= 1");
  if (c.eval.batch_size < 1) throw UsageError("eval.batch_size must be >= 1");
  if (c.eval.paradigm != "latent" && c.eval.paradigm != "single-shot" && c.eval.paradigm != "both") {
    throw UsageError("eval.paradigm must be latent, single-shot or both");
  }
  if (c.eval.attack_source != "other-pair" && c.eval.attack_source != "same-pair") {
    throw UsageError("eval.attack_source must be other-pair or same-pair");
  }
  if (c.eval.direction != "cover-to-domain" && c.eval.direction != "domain-to-cover") {
    throw UsageError("eval.direction must be cover-to-domain or domain-to-cover");
  }
  if (c.message_format != "hex" && c.message_format != "bits") throw UsageError("message_format must be hex or bits");
  if (c.bench_images < 1) throw UsageError("bench_images must be >= 1");
  if (c.corpus.count < 1 || c.corpus.height < 1 || c.corpus.width < 1) {
    throw UsageError("corpus count and size must be positive");
  }
  try {
    c.arch.validate();
    c.train.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- helpers

void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(command + " needs " + flag);
}

LogLevel level_from(const std::string& v) {
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "warn") return LogLevel::kWarn;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

std::vector<DistortionSpec> resolve_suite(const std::string& suite) {
  if (suite == "test") return test_suite();
  if (suite == "clean") return {DistortionSpec{}};
  return load_suite(suite);
}

std::vector<Paradigm> paradigms(const std::string& p) {
  if (p == "both") return {Paradigm::kLatent, Paradigm::kSingleShot};
  return {paradigm_from_string(p)};
}

Message choose_message(const RunConfig& c, std::int64_t length) {
  if (!c.message.empty()) return Message::parse(c.message, length);
  return random_message(length, derive_seed(c.seed, {kMessageTag}));
}

std::string format_message(const Message& m, const std::string& format) {
  return format == "bits" || m.size() % 4 != 0 ? m.to_bit_string() : m.to_hex();
}

// Echoed configs are written next to the outputs.
void echo_config(const RunConfig& c, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, c.to_json().dump(2) + "\n");
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

ImageSet load_set(const std::string& dir, ImageSize size, const RunConfig& c) {
  auto corpus = Corpus::scan(dir, c.seed);
  if (corpus.size() == 0) throw IoError("no images found under " + dir);
  return load_corpus(corpus, size, c.workers);
}

std::vector<fs::path> list_inputs(const fs::path& in) {
  if (fs::is_directory(in)) return Corpus::scan(in).files;
  if (!fs::exists(in)) throw IoError("input not found: " + in.string());
  return {in};
}

EvalOptions eval_options(const RunConfig& c) { return {c.eval.batch_size, c.seed, c.eval.quantize}; }

// ---------------------------------------------------------------- commands

int cmd_train(const RunConfig& c, std::ostream& out) {
  require(c.paths.corpus, "--corpus", c.command);
  require(c.paths.output, "--out", c.command);
  const fs::path dir = c.paths.output;
  fs::create_directories(dir);
  echo_config(c, dir / "resolved_config.json");

  TrainData data;
  data.stage1 = load_set(c.paths.corpus, c.arch.image_size(), c);
  if (!c.paths.stage2_corpus.empty()) data.stage2 = load_set(c.paths.stage2_corpus, c.arch.image_size(), c);
  if (!c.paths.validation.empty()) data.validation = load_set(c.paths.validation, c.arch.image_size(), c);
  std::optional<Checkpoint> resume;
  if (!c.paths.resume.empty()) resume = load_checkpoint(c.paths.resume);

  RunOptions opts;
  opts.output_dir = dir;
  auto ckpt = run_training(c.arch, c.train, data, resume, opts);
  out << "stage " << to_string(ckpt.stage) << " after " << ckpt.epochs_stage1 << "+" << ckpt.epochs_stage2
      << " epochs; checkpoint " << (dir / "last.ckpt").string() << " (" << fingerprint(ckpt.tensors) << ")\n";
  return kExitOk;
}

int cmd_make_residual(const RunConfig& c, std::ostream& out) {
  require(c.paths.checkpoint, "--checkpoint", c.command);
  require(c.paths.output, "--out", c.command);
  auto model = WatermarkModel::load(c.paths.checkpoint);
  const fs::path tpl = c.paths.template_image.empty() ? default_template() : fs::path(c.paths.template_image);
  auto image = load_image(tpl, model.config().image_size());
  auto msg = choose_message(c, model.config().message_length);
  auto wm = make_residual(model, image, msg, tpl.filename().string());
  const fs::path path = c.paths.output;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  wm.save(path);
  echo_config(c, fs::path(path.string() + ".config.json"));
  out << format_message(msg, c.message_format) << "\n";
  log_info("residual " + path.string() + " amplitude " + std::to_string(wm.amplitude()));
  return kExitOk;
}

int cmd_stamp(const RunConfig& c, std::ostream& out) {
  require(c.paths.residual, "--residual", c.command);
  require(c.paths.input, "--in", c.command);
  require(c.paths.output, "--out", c.command);
  auto wm = ResidualWatermark::load(c.paths.residual);
  fs::create_directories(c.paths.output);
  echo_config(c, fs::path(c.paths.output) / "resolved_config.json");
  auto report = stamp_files(wm, c.paths.input, c.paths.output, c.workers);
  const double rate = report.values ? static_cast<double>(report.saturated) / static_cast<double>(report.values) : 0;
  out << "stamped " << report.images << " images, saturation rate " << rate << "\n";
  return kExitOk;
}

int cmd_extract(const RunConfig& c, std::ostream& out) {
  require(c.paths.checkpoint, "--checkpoint", c.command);
  require(c.paths.input, "--in", c.command);
  auto model = WatermarkModel::load(c.paths.checkpoint);
  const auto files = list_inputs(c.paths.input);
  std::optional<Message> expected;
  if (!c.message.empty()) expected = Message::parse(c.message, model.config().message_length);

  json results = json::array();
  const bool single = files.size() == 1 && !fs::is_directory(c.paths.input);
  for (const auto& f : files) {
    auto msg = extract(model, load_image(f, model.config().image_size()));
    const auto text = format_message(msg, c.message_format);
    json r = {{"file", f.string()}, {"message", text}};
    if (single) {
      out << text;
    } else {
      out << f.string() << " " << text;
    }
    if (expected) {
      const double acc = bit_accuracy(*expected, msg);
      r["accuracy"] = acc;
      out << " " << std::fixed << std::setprecision(2) << acc << "%" << std::defaultfloat;
    }
    out << "\n";
    results.push_back(r);
  }
  if (!c.paths.output.empty()) {
    fs::create_directories(c.paths.output);
    echo_config(c, fs::path(c.paths.output) / "resolved_config.json");
    write_json(fs::path(c.paths.output) / "messages.json", results);
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  require(c.paths.checkpoint, "--checkpoint", c.command);
  require(c.paths.corpus, "--corpus", c.command);
  require(c.paths.output, "--out", c.command);
  const fs::path dir = c.paths.output;
  fs::create_directories(dir);
  echo_config(c, dir / "resolved_config.json");
  auto model = WatermarkModel::load(c.paths.checkpoint);
  const auto size = model.config().image_size();
  auto set = load_set(c.paths.corpus, size, c);
  std::optional<ImageSet> other;
  if (!c.paths.corpus_b.empty()) other = load_set(c.paths.corpus_b, size, c);

  if (!c.paths.report.empty()) {
    auto recorded = EvalReport::load(c.paths.report);
    auto fresh = rerun(model, set, other ? &*other : nullptr, recorded);
    fresh.save(dir / "rerun.json");
    const bool same = fresh.to_json() == recorded.to_json();
    out << (same ? "rerun identical to " : "rerun DIFFERS from ") << c.paths.report << "\n";
    return same ? kExitOk : kExitFailure;
  }

  const auto opts = eval_options(c);
  if (!c.eval.sweep_kind.empty()) {
    if (c.eval.sweep_levels.empty()) throw UsageError("a sweep needs eval.sweep_levels");
    const auto kind = kind_from_name(c.eval.sweep_kind);
    for (auto p : paradigms(c.eval.paradigm)) {
      auto sweep = noise_sweep(model, set, kind, c.eval.sweep_levels, p, opts);
      write_json(dir / ("sweep_" + c.eval.sweep_kind + "_" + to_string(p) + ".json"), sweep.to_json());
      out << to_string(p) << " " << c.eval.sweep_kind << ":";
      for (const auto& pt : sweep.points) out << " " << pt.level << "=" << pt.accuracy;
      out << (sweep.monotone ? " (monotone)" : " (not monotone)") << "\n";
    }
    return kExitOk;
  }

  const auto suite = resolve_suite(c.suite);
  if (other) {
    const auto dirn = c.eval.direction == "cover-to-domain" ? Direction::kCoverToDomain : Direction::kDomainToCover;
    auto report = cross_domain(model, set, *other, dirn, suite, opts);
    report.save(dir / ("report_cross_" + c.eval.direction + ".json"));
    out << report.table();
    return kExitOk;
  }
  for (auto p : paradigms(c.eval.paradigm)) {
    auto report = evaluate_robustness(model, set, suite, p, opts);
    report.save(dir / ("report_" + to_string(p) + ".json"));
    out << report.table();
  }
  return kExitOk;
}

int cmd_attack(const RunConfig& c, std::ostream& out) {
  require(c.paths.checkpoint, "--checkpoint", c.command);
  require(c.paths.corpus, "--corpus", c.command);
  require(c.paths.output, "--out", c.command);
  const fs::path dir = c.paths.output;
  fs::create_directories(dir);
  echo_config(c, dir / "resolved_config.json");
  auto model = WatermarkModel::load(c.paths.checkpoint);
  auto set = load_set(c.paths.corpus, model.config().image_size(), c);
  const auto source = c.eval.attack_source == "same-pair" ? AttackSource::kSamePair : AttackSource::kOtherPair;
  auto report = residual_attack(model, set, resolve_suite(c.suite), source, eval_options(c));
  report.save(dir / ("report_attack_" + c.eval.attack_source + ".json"));
  out << report.table();
  return kExitOk;
}

int cmd_bench(const RunConfig& c, std::ostream& out) {
  ResidualWatermark wm;
  if (!c.paths.residual.empty()) {
    wm = ResidualWatermark::load(c.paths.residual);
  } else {
    // Synthetic residual at the default model size and cap.
    const ArchConfig def;
    auto gen = make_generator(derive_seed(c.seed, {kBenchTag}));
    wm.epsilon = (torch::rand({3, def.height, def.width}, gen) * 2 - 1) * def.perturbation_cap;
    wm.message = random_message(def.message_length, derive_seed(c.seed, {kMessageTag}));
    wm.checkpoint_hash = "synthetic";
    wm.template_id = "synthetic";
  }
  auto r = throughput_benchmark(wm, c.bench_images, c.workers, c.seed);
  json j = {{"images", r.images},
            {"workers", r.workers},
            {"seconds", r.seconds},
            {"images_per_second", r.images_per_second},
            {"saturation_rate", r.saturation_rate}};
  if (!c.paths.output.empty()) {
    fs::create_directories(c.paths.output);
    echo_config(c, fs::path(c.paths.output) / "resolved_config.json");
    write_json(fs::path(c.paths.output) / "bench.json", j);
  }
  out << r.images << " images, " << r.workers << " workers: " << r.seconds << " s, " << r.images_per_second
      << " images/s, saturation rate " << r.saturation_rate << "\n";
  return kExitOk;
}

int cmd_saliency(const RunConfig& c, std::ostream& out) {
  require(c.paths.checkpoint, "--checkpoint", c.command);
  require(c.paths.input, "--in", c.command);
  require(c.paths.output, "--out", c.command);
  auto model = WatermarkModel::load(c.paths.checkpoint);
  const fs::path dir = c.paths.output;
  fs::create_directories(dir);
  echo_config(c, dir / "resolved_config.json");
  std::int64_t n = 0;
  for (const auto& f : list_inputs(c.paths.input)) {
    auto image = load_image(f, model.config().image_size());
    // Without an explicit message the decoder's own reading is explained.
    const Message msg = c.message.empty() ? extract(model, image)
                                          : Message::parse(c.message, model.config().message_length);
    save_heatmap(decoder_saliency(model, image, msg), dir / (f.stem().string() + "_saliency.png"));
    ++n;
  }
  out << "wrote " << n << " saliency maps to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_make_corpus(const RunConfig& c, std::ostream& out) {
  require(c.paths.input, "--in", c.command);
  require(c.paths.output, "--out", c.command);
  auto sources = list_inputs(c.paths.input);
  if (sources.empty()) throw IoError("no source images under " + c.paths.input);
  build_patch_corpus(sources, c.paths.output, c.corpus.count, {c.corpus.height, c.corpus.width}, c.seed);
  echo_config(c, fs::path(c.paths.output) / "resolved_config.json");
  out << "wrote " << c.corpus.count << " patches to " << c.paths.output << "\n";
  return kExitOk;
}

int dispatch(const RunConfig& c, std::ostream& out) {
  if (c.command == "train") return cmd_train(c, out);
  if (c.command == "make-residual") return cmd_make_residual(c, out);
  if (c.command == "stamp") return cmd_stamp(c, out);
  if (c.command == "extract") return cmd_extract(c, out);
  if (c.command == "eval") return cmd_eval(c, out);
  if (c.command == "attack") return cmd_attack(c, out);
  if (c.command == "bench") return cmd_bench(c, out);
  if (c.command == "saliency") return cmd_saliency(c, out);
  if (c.command == "make-corpus") return cmd_make_corpus(c, out);
  throw UsageError("unknown command: " + c.command);
}

// ---------------------------------------------------------------- flags

enum class FlagType { kString, kInt, kDouble, kBool, kDoubleList, kKindList };

struct Flag {
  const char* name;
  const char* pointer;  // JSON pointer into the config
  FlagType type;
  const char* help;
  std::vector<std::string> commands;  // empty = every command
};

const std::vector<Flag>& flags() {
  static const std::vector<Flag> table = {
      {"--seed", "/seed", FlagType::kInt, "root seed of every random choice", {}},
      {"--workers", "/workers", FlagType::kInt, "worker threads for decoding and stamping", {}},
      {"--verbosity", "/verbosity", FlagType::kString, "quiet, warn, info or debug", {}},
      {"--out", "/paths/output", FlagType::kString, "output directory (make-residual: residual file)", {}},
      {"--corpus", "/paths/corpus", FlagType::kString, "image directory", {"train", "eval", "attack"}},
      {"--corpus-b", "/paths/corpus_b", FlagType::kString, "second domain for cross-domain evaluation", {"eval"}},
      {"--stage2-corpus", "/paths/stage2_corpus", FlagType::kString, "fresh images for stage 2", {"train"}},
      {"--validation", "/paths/validation", FlagType::kString, "validation images", {"train"}},
      {"--resume", "/paths/resume", FlagType::kString, "checkpoint to resume from", {"train"}},
      {"--checkpoint",
       "/paths/checkpoint",
       FlagType::kString,
       "trained model checkpoint",
       {"make-residual", "extract", "eval", "attack", "saliency"}},
      {"--residual", "/paths/residual", FlagType::kString, "residual watermark file", {"stamp", "bench"}},
      {"--template", "/paths/template", FlagType::kString, "template cover for the residual", {"make-residual"}},
      {"--in",
       "/paths/input",
       FlagType::kString,
       "input image, directory or .txt manifest",
       {"stamp", "extract", "saliency", "make-corpus"}},
      {"--report", "/paths/report", FlagType::kString, "recorded report to re-run", {"eval"}},
      {"--message",
       "/message",
       FlagType::kString,
       "message as hex or bit string",
       {"make-residual", "extract", "saliency"}},
      {"--format", "/message_format", FlagType::kString, "message output: hex or bits", {"make-residual", "extract"}},
      {"--suite", "/suite", FlagType::kString, "test, clean or a suite file", {"eval", "attack"}},
      {"--paradigm", "/eval/paradigm", FlagType::kString, "latent, single-shot or both", {"eval"}},
      {"--batch-size", "/eval/batch_size", FlagType::kInt, "evaluation batch size", {"eval", "attack"}},
      {"--quantize", "/eval/quantize", FlagType::kBool, "store watermarked images as 8-bit", {"eval", "attack"}},
      {"--source", "/eval/attack_source", FlagType::kString, "other-pair or same-pair", {"attack"}},
      {"--direction", "/eval/direction", FlagType::kString, "cover-to-domain or domain-to-cover", {"eval"}},
      {"--sweep-kind", "/eval/sweep_kind", FlagType::kString, "distortion kind to sweep", {"eval"}},
      {"--sweep-levels", "/eval/sweep_levels", FlagType::kDoubleList, "comma-separated sweep levels", {"eval"}},
      {"--lr", "/train/learning_rate", FlagType::kDouble, "learning rate", {"train"}},
      {"--epochs-stage1", "/train/epochs_stage1", FlagType::kInt, "stage-1 epochs", {"train"}},
      {"--epochs-stage2", "/train/epochs_stage2", FlagType::kInt, "stage-2 epochs", {"train"}},
      {"--batch", "/train/batch_size", FlagType::kInt, "training batch size", {"train"}},
      {"--noise", "/train/noise_kinds", FlagType::kKindList, "comma-separated training distortions", {"train"}},
      {"--skip-stage1", "/train/skip_stage1", FlagType::kBool, "stage-2-only ablation", {"train"}},
      {"--count", "/corpus/count", FlagType::kInt, "number of patches", {"make-corpus"}},
      {"--height", "/corpus/height", FlagType::kInt, "patch height", {"make-corpus"}},
      {"--width", "/corpus/width", FlagType::kInt, "patch width", {"make-corpus"}},
      {"--images", "/bench_images", FlagType::kInt, "images to stamp", {"bench"}},
  };
  return table;
}

bool applies(const Flag& f, const std::string& command) {
  return f.commands.empty() || std::find(f.commands.begin(), f.commands.end(), command) != f.commands.end();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

json flag_value(const Flag& f, const std::string& raw) {
  try {
    switch (f.type) {
      case FlagType::kString:
        return raw;
      case FlagType::kInt:
        return std::stoll(raw);
      case FlagType::kDouble:
        return std::stod(raw);
      case FlagType::kBool:
        return true;
      case FlagType::kDoubleList: {
        json arr = json::array();
        for (const auto& p : split_list(raw)) arr.push_back(std::stod(p));
        return arr;
      }
      case FlagType::kKindList: {
        json arr = json::array();
        for (const auto& p : split_list(raw)) arr.push_back(p);
        return arr;
      }
    }
  } catch (const std::logic_error&) {
    throw UsageError(std::string("bad value for ") + f.name + ": " + raw);
  }
  return raw;
}

// "a.b=value": value is read as JSON when it parses, else as a string.
void apply_set(json& overrides, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got " + assignment);
  const std::string key = assignment.substr(0, eq);
  std::string pointer = "/";
  for (char ch : key) pointer += (ch == '.') ? '/' : ch;
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  overrides[json::json_pointer(pointer)] = value;
}

}  // namespace

// ---------------------------------------------------------------- public

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"train",  "make-residual", "stamp",    "extract",    "eval",
                                                 "attack", "bench",         "saliency", "make-corpus"};
  return names;
}

fs::path default_template() { return RGBMARK_DEFAULT_TEMPLATE; }

json RunConfig::to_json() const {
  json t = train;
  t.erase("seed");
  return {{"command", command},
          {"paths", paths_json(paths)},
          {"arch", arch},
          {"train", t},
          {"eval", eval_json(eval)},
          {"corpus", {{"count", corpus.count}, {"height", corpus.height}, {"width", corpus.width}}},
          {"suite", suite},
          {"seed", seed},
          {"workers", workers},
          {"verbosity", verbosity},
          {"message", message},
          {"message_format", message_format},
          {"bench_images", bench_images}};
}

void merge_config(RunConfig& cfg, const json& j) {
  if (j.is_null()) return;
  reject_unknown(j,
                 {"command", "paths", "arch", "train", "eval", "corpus", "suite", "seed", "workers", "verbosity",
                  "message", "message_format", "bench_images"},
                 "");
  read(j, "command", cfg.command, "");
  if (j.contains("paths")) merge_paths(cfg.paths, j.at("paths"));
  if (j.contains("arch")) merge_library(cfg.arch, j.at("arch"), "arch");
  if (j.contains("train")) {
    if (j.at("train").is_object() && j.at("train").contains("seed")) {
      throw UsageError("unknown config key: train.seed (use the top-level seed)");
    }
    merge_library(cfg.train, j.at("train"), "train");
  }
  if (j.contains("eval")) merge_eval(cfg.eval, j.at("eval"));
  if (j.contains("corpus")) merge_corpus(cfg.corpus, j.at("corpus"));
  read(j, "suite", cfg.suite, "");
  read(j, "seed", cfg.seed, "");
  read(j, "workers", cfg.workers, "");
  read(j, "verbosity", cfg.verbosity, "");
  read(j, "message", cfg.message, "");
  read(j, "message_format", cfg.message_format, "");
  read(j, "bench_images", cfg.bench_images, "");
  cfg.train.seed = cfg.seed;
}

const std::map<std::string, std::string>& path_env_vars() {
  static const std::map<std::string, std::string> vars = {
      {"RGBMARK_CORPUS", "corpus"},     {"RGBMARK_CHECKPOINT", "checkpoint"}, {"RGBMARK_RESIDUAL", "residual"},
      {"RGBMARK_OUTPUT", "output"},     {"RGBMARK_TEMPLATE", "template"},     {"RGBMARK_VALIDATION", "validation"}};
  return vars;
}

RunConfig resolve_config(const std::string& command, const json& file, const json& overrides,
                         const std::map<std::string, std::string>& env) {
  RunConfig cfg;
  merge_config(cfg, file);
  if (!cfg.command.empty() && !command.empty() && cfg.command != command) {
    throw UsageError("config file is for '" + cfg.command + "', not '" + command + "'");
  }
  json env_paths = json::object();
  for (const auto& [var, key] : path_env_vars()) {
    auto it = env.find(var);
    if (it != env.end() && !it->second.empty()) env_paths[key] = it->second;
  }
  if (!env_paths.empty()) merge_config(cfg, json{{"paths", env_paths}});
  merge_config(cfg, overrides);
  if (!command.empty()) cfg.command = command;
  validate(cfg);
  return cfg;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("rgbmark");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust image watermarking: training, residual stamping, extraction and evaluation.", "rgbmark"};
  app.require_subcommand(1);

  struct Parsed {
    std::string config;
    std::vector<std::string> sets;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> switches;
  };
  std::map<std::string, Parsed> parsed;
  for (const auto& name : commands()) parsed[name];

  static const std::map<std::string, std::string> descriptions = {
      {"train", "two-stage training from an image directory"},
      {"make-residual", "compute the residual watermark of a message on a template"},
      {"stamp", "add a residual watermark to images"},
      {"extract", "decode messages from images"},
      {"eval", "robustness, cross-domain, sweep or re-run evaluation"},
      {"attack", "residual-removal attack evaluation"},
      {"bench", "stamping throughput"},
      {"saliency", "decoder gradient saliency maps"},
      {"make-corpus", "cut a patch corpus from photographs"},
  };
  for (const auto& name : commands()) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    auto& p = parsed[name];
    sub->add_option("--config", p.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", p.sets, "override any config key: section.key=value (repeatable)");
    for (const auto& f : flags()) {
      if (!applies(f, name)) continue;
      if (f.type == FlagType::kBool) {
        sub->add_flag(f.name, p.switches[f.name], f.help);
      } else {
        sub->add_option(f.name, p.values[f.name], f.help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::string command;
  for (const auto& name : commands()) {
    if (app.got_subcommand(name)) command = name;
  }
  auto* sub = app.get_subcommand(command);
  const auto& p = parsed[command];

  RunConfig cfg;
  try {
    json file = json::object();
    if (!p.config.empty()) {
      std::ifstream in(p.config);
      file = json::parse(in, nullptr, false);
      if (file.is_discarded()) throw UsageError("config file is not valid JSON: " + p.config);
    }
    json overrides = json::object();
    for (const auto& f : flags()) {
      if (!applies(f, command)) continue;
      if (sub->count(f.name) == 0) continue;
      const std::string raw = f.type == FlagType::kBool ? std::string() : p.values.at(f.name);
      overrides[json::json_pointer(f.pointer)] = flag_value(f, raw);
    }
    for (const auto& s : p.sets) apply_set(overrides, s);
    std::map<std::string, std::string> env;
    for (const auto& [var, _] : path_env_vars()) {
      if (const char* v = std::getenv(var.c_str())) env[var] = v;
    }
    cfg = resolve_config(command, file, overrides, env);
  } catch (const Error& e) {
    err << "usage error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  }

  const auto previous = log_level();
  set_log_level(level_from(cfg.verbosity));
  int code = kExitOk;
  try {
    code = dispatch(cfg, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << sub->help();
    code = kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error (argument): " << e.what() << "\n";
    code = kExitFailure;
  } catch (const ConfigError& e) {
    err << "error (config): " << e.what() << "\n";
    code = kExitFailure;
  } catch (const IoError& e) {
    err << "error (io): " << e.what() << "\n";
    code = kExitFailure;
  } catch (const NumericError& e) {
    err << "error (numeric): " << e.what() << "\n";
    code = kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = kExitFailure;
  }
  set_log_level(previous);
  return code;
}

}  // namespace rgbmark::cli
