#include "rgbmark/training/trainer.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/log.hpp"
#include "rgbmark/core/message.hpp"
#include "rgbmark/core/rng.hpp"
#include "rgbmark/eval/eval.hpp"

namespace rgbmark {

void TrainConfig::validate() const {
  weights.validate();
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ConfigError("stage epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (validate_every <= 0) throw ConfigError("validate_every must be positive");
  if (checkpoint_every <= 0) throw ConfigError("checkpoint_every must be positive");
  if (skip_stage1 && epochs_stage1 > 0) throw ConfigError("skip_stage1 requires epochs_stage1 = 0");
}

std::vector<DistortionKind> TrainConfig::kinds() const {
  if (noise_kinds.empty()) {
    auto all = train_kinds();
    return {all.begin(), all.end()};
  }
  return noise_kinds;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : c.noise_kinds) kinds.push_back(std::string(kind_name(k)));
  j = nlohmann::json{{"weights", c.weights},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"epochs_stage1", c.epochs_stage1},
                     {"epochs_stage2", c.epochs_stage2},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"noise_kinds", kinds},
                     {"validate_every", c.validate_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"grad_clip", c.grad_clip},
                     {"skip_stage1", c.skip_stage1},
                     {"stage2_reuse_data", c.stage2_reuse_data}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> kKeys = {
      "weights",    "learning_rate",  "weight_decay",     "epochs_stage1", "epochs_stage2",
      "batch_size", "seed",           "noise_kinds",      "validate_every", "checkpoint_every",
      "grad_clip",  "skip_stage1",    "stage2_reuse_data"};
  if (!j.is_object()) throw ConfigError("train config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown key: train." + key);
  }
  try {
    if (j.contains("weights")) j.at("weights").get_to(c.weights);
    if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
    if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
    if (j.contains("epochs_stage1")) j.at("epochs_stage1").get_to(c.epochs_stage1);
    if (j.contains("epochs_stage2")) j.at("epochs_stage2").get_to(c.epochs_stage2);
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("noise_kinds")) {
      c.noise_kinds.clear();
      for (const auto& k : j.at("noise_kinds")) c.noise_kinds.push_back(kind_from_name(k.get<std::string>()));
    }
    if (j.contains("validate_every")) j.at("validate_every").get_to(c.validate_every);
    if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
    if (j.contains("grad_clip")) j.at("grad_clip").get_to(c.grad_clip);
    if (j.contains("skip_stage1")) j.at("skip_stage1").get_to(c.skip_stage1);
    if (j.contains("stage2_reuse_data")) j.at("stage2_reuse_data").get_to(c.stage2_reuse_data);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
}

std::uint64_t step_seed(std::uint64_t root, Stage stage, std::int64_t epoch, std::int64_t step) {
  return derive_seed(root, {0x73746570, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(step)});
}

struct Trainer::Optimizers {
  std::vector<std::string> gen_names, disc_names;
  std::vector<torch::Tensor> gen_params, disc_params;
  std::unique_ptr<torch::optim::AdamW> gen, disc;
};

namespace {

std::unique_ptr<torch::optim::AdamW> make_adamw(const std::vector<torch::Tensor>& params, const TrainConfig& cfg) {
  return std::make_unique<torch::optim::AdamW>(
      params, torch::optim::AdamWOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.set_requires_grad(on);
}

}  // namespace

Trainer::Trainer(WatermarkModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  kinds_ = cfg_.kinds();
  opt_ = std::make_unique<Optimizers>();
  for (auto& [name, p] : model_.named_parameters()) {
    if (name.starts_with("discriminator.")) {
      opt_->disc_names.push_back(name);
      opt_->disc_params.push_back(p);
    } else {
      opt_->gen_names.push_back(name);
      opt_->gen_params.push_back(p);
    }
  }
  reset_optimizers();
}

Trainer::~Trainer() = default;

void Trainer::reset_optimizers() {
  opt_->gen = make_adamw(opt_->gen_params, cfg_);
  opt_->disc = make_adamw(opt_->disc_params, cfg_);
}

StepResult Trainer::step_stage1(const torch::Tensor& cover, std::uint64_t seed) {
  return step(cover, nullptr, seed, true);
}

StepResult Trainer::step_stage2(const torch::Tensor& cover, const torch::Tensor& cover_primed, std::uint64_t seed) {
  if (!cover_primed.defined() || cover_primed.sizes() != cover.sizes()) {
    throw ArgumentError("stage-2 step needs a primed batch shaped like the cover batch");
  }
  if (model_.stage() == Stage::kInit && !cfg_.skip_stage1) {
    throw ConfigError("stage 2 requires a model trained through stage 1 (or skip_stage1 for the ablation)");
  }
  return step(cover, &cover_primed, seed, true);
}

StepResult Trainer::evaluate_step(const torch::Tensor& cover, const torch::Tensor* cover_primed, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  return step(cover, cover_primed, seed, false);
}

StepResult Trainer::step(const torch::Tensor& cover_in, const torch::Tensor* primed_in, std::uint64_t seed,
                         bool update) {
  check_batch(cover_in, "training batch");
  const auto dtype = model_.dtype();
  const auto B = cover_in.size(0);
  const auto stage = primed_in ? Stage::kStage2 : Stage::kStage1;

  auto cover = cover_in.to(dtype);
  auto bits = random_message_batch(B, model_.config().message_length, derive_seed(seed, {1})).to(dtype);
  auto spec = sample_train_spec(derive_seed(seed, {2}), kinds_);
  const auto noise_seed = derive_seed(seed, {3});

  if (update) set_requires_grad(opt_->disc_params, false);
  // The residual before clamping: with primed == cover, stage 2 then
  // reproduces stage 1 exactly.
  auto residual = model_.residual(cover, bits);
  torch::Tensor real, marked;
  LossInputs in;
  in.bits = bits;
  in.cover = cover;
  in.watermarked = (cover + residual).clamp(0, 1);
  if (primed_in) {
    real = primed_in->to(dtype);
    marked = (real + residual).clamp(0, 1);
    in.cover_primed = real;
    in.watermarked_primed = marked;
  } else {
    real = cover;
    marked = in.watermarked;
  }
  auto distorted = apply_distortion(spec, marked, real, noise_seed);
  in.logits = model_.decode(distorted);
  in.fake_score = model_.discriminate(marked);
  auto losses = loss_total(in, cfg_.weights, stage);

  StepResult r;
  r.seed = seed;
  r.spec = spec.label();
  r.image = losses.image.item<double>();
  r.message = losses.message.item<double>();
  r.adversarial = losses.adversarial.item<double>();
  r.total = losses.total.item<double>();
  if (!std::isfinite(r.total)) {
    if (update) set_requires_grad(opt_->disc_params, true);
    std::ostringstream os;
    os << "non-finite loss at step seed " << seed << " with " << r.spec << " (L_I=" << r.image
       << ", L_M=" << r.message << ", L_A=" << r.adversarial << ")";
    throw NumericError(os.str());
  }

  if (update) {
    opt_->gen->zero_grad();
    losses.total.backward();
    if (cfg_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(opt_->gen_params, cfg_.grad_clip);
    opt_->gen->step();
    set_requires_grad(opt_->disc_params, true);
  }

  auto fake = marked.detach();
  auto adv = loss_adversarial(model_.discriminate(real), model_.discriminate(fake));
  r.discriminator = adv.discriminator.item<double>();
  if (update) {
    opt_->disc->zero_grad();
    adv.discriminator.backward();
    if (cfg_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(opt_->disc_params, cfg_.grad_clip);
    opt_->disc->step();
  }
  return r;
}

namespace {

void export_adamw(const torch::optim::AdamW& opt, const std::vector<std::string>& names,
                  const std::vector<torch::Tensor>& params, const std::string& prefix, NamedTensors& out,
                  nlohmann::json& steps) {
  const auto& state = opt.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamWParamState&>(*it->second);
    const auto base = prefix + names[i];
    steps[base] = s.step();
    out.emplace_back(base + ".exp_avg", s.exp_avg().detach().clone());
    out.emplace_back(base + ".exp_avg_sq", s.exp_avg_sq().detach().clone());
  }
}

void import_adamw(torch::optim::AdamW& opt, const std::vector<std::string>& names,
                  const std::vector<torch::Tensor>& params, const std::string& prefix, const Checkpoint& ckpt,
                  const nlohmann::json& steps) {
  auto& state = opt.state();
  state.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto base = prefix + names[i];
    if (!steps.contains(base)) continue;
    const auto* m = ckpt.find(base + ".exp_avg");
    const auto* v = ckpt.find(base + ".exp_avg_sq");
    if (!m || !v || m->sizes() != params[i].sizes() || v->sizes() != params[i].sizes()) {
      throw ConfigError("checkpoint optimizer state is incomplete for " + names[i]);
    }
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->step(steps.at(base).get<std::int64_t>());
    s->exp_avg(m->to(params[i].dtype()).clone());
    s->exp_avg_sq(v->to(params[i].dtype()).clone());
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace

NamedTensors Trainer::optimizer_state(nlohmann::json& counters) const {
  NamedTensors out;
  counters = nlohmann::json::object();
  export_adamw(*opt_->gen, opt_->gen_names, opt_->gen_params, "optim.gen.", out, counters);
  export_adamw(*opt_->disc, opt_->disc_names, opt_->disc_params, "optim.disc.", out, counters);
  return out;
}

void Trainer::load_optimizer_state(const Checkpoint& ckpt) {
  const auto it = ckpt.extra.find("optimizer_steps");
  if (it == ckpt.extra.end()) {
    reset_optimizers();
    return;
  }
  import_adamw(*opt_->gen, opt_->gen_names, opt_->gen_params, "optim.gen.", ckpt, *it);
  import_adamw(*opt_->disc, opt_->disc_names, opt_->disc_params, "optim.disc.", ckpt, *it);
}

nlohmann::json EpochMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"stage", stage},
          {"epoch", epoch},
          {"L_I", image},
          {"L_M", message},
          {"L_A", adversarial},
          {"total", total},
          {"L_D", discriminator},
          {"val_L_M", opt(val_message)},
          {"val_acc_latent", opt(val_accuracy_latent)},
          {"val_acc_single_shot", opt(val_accuracy_single_shot)},
          {"val_psnr", opt(val_psnr)}};
}

EpochMetrics EpochMetrics::from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  EpochMetrics m;
  j.at("stage").get_to(m.stage);
  j.at("epoch").get_to(m.epoch);
  j.at("L_I").get_to(m.image);
  j.at("L_M").get_to(m.message);
  j.at("L_A").get_to(m.adversarial);
  j.at("total").get_to(m.total);
  j.at("L_D").get_to(m.discriminator);
  m.val_message = opt("val_L_M");
  m.val_accuracy_latent = opt("val_acc_latent");
  m.val_accuracy_single_shot = opt("val_acc_single_shot");
  m.val_psnr = opt("val_psnr");
  return m;
}

std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open metrics log " + path.string());
  std::vector<EpochMetrics> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      rows.push_back(EpochMetrics::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed metrics log line: " + std::string(e.what()));
    }
  }
  return rows;
}

namespace {

constexpr std::uint64_t kValidationTag = 0x76616c;
constexpr std::int64_t kValidationBatch = 50;

std::string stage_key(Stage s) { return s == Stage::kStage1 ? "stage1" : "stage2"; }

/// Mean message loss over the validation set under a fixed noise draw, so
/// values are comparable across epochs.
std::optional<double> validation_message_loss(Trainer& trainer, const ImageSet& val, Stage stage,
                                              std::uint64_t seed) {
  if (val.size() == 0) return std::nullopt;
  double sum = 0;
  std::int64_t n = 0;
  for (std::int64_t b = 0; b < val.size(); b += kValidationBatch) {
    const auto e = std::min(val.size(), b + kValidationBatch);
    auto cover = val.images.slice(0, b, e);
    const auto s = derive_seed(seed, {kValidationTag, static_cast<std::uint64_t>(b)});
    StepResult r;
    if (stage == Stage::kStage2) {
      auto idx = (torch::arange(b, e, torch::kLong) + 1).remainder(val.size());
      auto primed = val.images.index_select(0, idx);
      r = trainer.evaluate_step(cover, &primed, s);
    } else {
      r = trainer.evaluate_step(cover, nullptr, s);
    }
    sum += r.message * static_cast<double>(e - b);
    n += e - b;
  }
  return sum / static_cast<double>(n);
}

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& dir, std::size_t keep) {
    if (dir.empty()) return;
    path_ = dir / "metrics.jsonl";
    std::vector<std::string> lines;
    if (std::filesystem::exists(path_)) {
      std::ifstream f(path_);
      std::string line;
      while (lines.size() < keep && std::getline(f, line)) {
        if (!line.empty()) lines.push_back(line);
      }
    }
    if (lines.size() < keep) log_warn("metrics log has fewer rows than the resumed checkpoint");
    std::string contents;
    for (const auto& l : lines) contents += l + "\n";
    write_file_atomic(path_, contents);
  }

  void append(const EpochMetrics& m) {
    if (path_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    f << m.to_json().dump() << "\n";
    if (!f) throw IoError("cannot append to " + path_.string());
  }

 private:
  std::filesystem::path path_;
};

void check_resume(const Checkpoint& ckpt, const ArchConfig& arch, const TrainConfig& cfg) {
  if (ckpt.arch != nlohmann::json(arch)) throw ConfigError("resume checkpoint has a different architecture");
  if (!ckpt.extra.contains("train")) throw ConfigError("resume checkpoint has no training config");
  TrainConfig stored;
  try {
    stored = ckpt.extra.at("train").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("resume checkpoint has a bad training config: ") + e.what());
  }
  // Only the epoch budget may change between a run and its continuation.
  auto a = stored, b = cfg;
  a.epochs_stage1 = b.epochs_stage1 = 0;
  a.epochs_stage2 = b.epochs_stage2 = 0;
  a.checkpoint_every = b.checkpoint_every = 1;
  if (!(a == b)) throw ConfigError("resume checkpoint was trained with a different configuration");
  if (ckpt.epochs_stage1 > cfg.epochs_stage1 || ckpt.epochs_stage2 > cfg.epochs_stage2) {
    throw ConfigError("resume checkpoint is past the configured epochs");
  }
  if (ckpt.epochs_stage2 > 0 && ckpt.epochs_stage1 < cfg.epochs_stage1) {
    throw ConfigError("resume checkpoint started stage 2 before finishing stage 1");
  }
}

}  // namespace

Checkpoint run_training(const ArchConfig& arch, const TrainConfig& cfg, const TrainData& data,
                        const std::optional<Checkpoint>& resume, const RunOptions& options) {
  arch.validate();
  cfg.validate();
  const bool fresh = !resume.has_value();
  if (resume) check_resume(*resume, arch, cfg);

  WatermarkModel model = fresh ? WatermarkModel(arch, derive_seed(cfg.seed, {0x696e6974}))
                               : WatermarkModel::from_checkpoint(*resume);
  std::int64_t done1 = fresh ? 0 : resume->epochs_stage1;
  std::int64_t done2 = fresh ? 0 : resume->epochs_stage2;
  if (cfg.skip_stage1) model.set_stage1_skipped(true);

  Trainer trainer(model, cfg);
  if (!fresh) trainer.load_optimizer_state(*resume);

  auto snapshot = [&] {
    Checkpoint c = model.to_checkpoint();
    c.epochs_stage1 = done1;
    c.epochs_stage2 = done2;
    c.extra["train"] = cfg;
    nlohmann::json steps;
    auto state = trainer.optimizer_state(steps);
    c.extra["optimizer_steps"] = steps;
    for (auto& t : state) c.tensors.push_back(std::move(t));
    return c;
  };

  if (cfg.epochs_stage1 == 0 && cfg.epochs_stage2 == 0) {
    if (resume) return *resume;
    return snapshot();
  }
  const auto& out = options.output_dir;
  if (!out.empty()) std::filesystem::create_directories(out);
  MetricsLog log(out, static_cast<std::size_t>(done1 + done2));
  if (!out.empty()) {
    std::ofstream(out / "train_config.json") << nlohmann::json{{"arch", arch}, {"train", cfg}}.dump(2) << "\n";
  }

  if (cfg.epochs_stage1 > 0 && data.stage1.size() == 0) throw ConfigError("stage-1 training set is empty");
  const ImageSet* stage2_set = &data.stage2;
  if (cfg.epochs_stage2 > 0 && data.stage2.size() == 0) {
    if (!cfg.stage2_reuse_data) throw ConfigError("no stage-2 training set (enable stage2_reuse_data to reuse stage 1)");
    stage2_set = &data.stage1;
  }

  std::int64_t budget = options.max_epochs;
  auto run_stage = [&](Stage stage, const ImageSet& set, std::int64_t& done, std::int64_t total) -> bool {
    const auto mode = stage == Stage::kStage2 ? PairingMode::kPaired : PairingMode::kSingle;
    BatchStream stream(set, cfg.batch_size, mode, derive_seed(cfg.seed, {0x64617461, static_cast<std::uint64_t>(stage)}));
    if (stream.batches_per_epoch() == 0) throw ConfigError("training set is smaller than one batch");
    while (done < total) {
      if (budget == 0) return false;
      const auto epoch = done;
      EpochMetrics m;
      m.stage = stage_key(stage);
      m.epoch = epoch + 1;
      const auto steps = stream.batches_per_epoch();
      for (std::int64_t i = 0; i < steps; ++i) {
        auto batch = stream.batch(epoch, i);
        const auto seed = step_seed(cfg.seed, stage, epoch, i);
        auto r = stage == Stage::kStage2 ? trainer.step_stage2(batch.cover, batch.cover_primed, seed)
                                         : trainer.step_stage1(batch.cover, seed);
        m.image += r.image;
        m.message += r.message;
        m.adversarial += r.adversarial;
        m.total += r.total;
        m.discriminator += r.discriminator;
      }
      const double n = static_cast<double>(steps);
      m.image /= n;
      m.message /= n;
      m.adversarial /= n;
      m.total /= n;
      m.discriminator /= n;
      ++done;
      model.set_stage(stage);
      m.val_message = validation_message_loss(trainer, data.validation, stage, cfg.seed);
      if (data.validation.size() > 0 && (done % cfg.validate_every == 0 || done == total)) {
        auto cm = clean_metrics(model, data.validation, kValidationBatch, derive_seed(cfg.seed, {kValidationTag}));
        m.val_accuracy_latent = cm.accuracy_latent;
        m.val_accuracy_single_shot = cm.accuracy_single_shot;
        m.val_psnr = std::min(cm.psnr, kPsnrCap);
      }
      log.append(m);
      {
        std::ostringstream os;
        os << m.stage << " epoch " << m.epoch << "/" << total << " L_I " << m.image << " L_M " << m.message
           << " L_A " << m.adversarial << " L_D " << m.discriminator;
        if (m.val_accuracy_latent) {
          os << " | val acc latent " << *m.val_accuracy_latent << " single-shot " << *m.val_accuracy_single_shot
             << " psnr " << *m.val_psnr;
        }
        log_info(os.str());
      }
      if (options.on_epoch) options.on_epoch(m);
      if (budget > 0) --budget;
      if (!out.empty() && (done % cfg.checkpoint_every == 0 || done == total || budget == 0)) {
        save_checkpoint(snapshot(), out / "last.ckpt");
      }
    }
    return true;
  };

  bool finished = run_stage(Stage::kStage1, data.stage1, done1, cfg.epochs_stage1);
  if (finished && done1 == cfg.epochs_stage1 && cfg.epochs_stage1 > 0 && !out.empty() &&
      (fresh || resume->epochs_stage1 < cfg.epochs_stage1 || !std::filesystem::exists(out / "stage1.ckpt"))) {
    save_checkpoint(snapshot(), out / "stage1.ckpt");
  }
  if (finished && cfg.epochs_stage2 > 0) {
    // Stage 2 starts with fresh optimizer state.
    if (done2 == 0) trainer.reset_optimizers();
    finished = run_stage(Stage::kStage2, *stage2_set, done2, cfg.epochs_stage2);
    if (finished && !out.empty()) save_checkpoint(snapshot(), out / "stage2.ckpt");
  }
  return snapshot();
}

}  // namespace rgbmark
