#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "gla/eval/attack.hpp"
#include "gla/eval/diagnostics.hpp"
#include "gla/train/loss.hpp"
#include "gla/train/optim.hpp"
#include "gla/train/poison.hpp"

namespace gla {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t epochs = 15;
  std::size_t batch = 4;
  double grad_clip = 1.0;
  double adapter_dropout = 0.05;
  std::uint64_t seed = 11;
  std::size_t grad_pairs = 10;  // batch pairs behind each logged gradient cosine

  void validate() const {
    if (!(lr > 0.0) || !(weight_decay >= 0.0) || epochs == 0 || batch == 0 || !(grad_clip > 0.0)) {
      throw ValidationError("training hyperparameters must be positive");
    }
    if (!(adapter_dropout >= 0.0 && adapter_dropout < 1.0)) throw ValidationError("adapter dropout must lie in [0,1)");
  }
};

// Full-parameter fitting of the base model on clean data, before any adapter.
struct PretrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 8;
  std::size_t batch = 8;
  double grad_clip = 1.0;
  std::uint64_t seed = 3;

  void validate() const {
    if (!(lr > 0.0) || epochs == 0 || batch == 0 || !(grad_clip > 0.0)) {
      throw ValidationError("pretraining hyperparameters must be positive");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_clean_loss = 0.0;
  std::optional<double> train_attack_loss;
  double val_clean_loss = 0.0;
  std::optional<double> asr;
  double fpr = 0.0;
  double lr = 0.0;  // rate of the epoch's last update
  std::optional<double> grad_cosine;
  double max_clipped_norm = 0.0;  // largest post-clip gradient norm seen

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"epoch", epoch},       {"train_clean_loss", train_clean_loss}, {"train_attack_loss", opt(train_attack_loss)},
            {"val_clean_loss", val_clean_loss}, {"asr", opt(asr)},           {"fpr", fpr},
            {"lr", lr},             {"grad_cosine", opt(grad_cosine)},      {"max_clipped_norm", max_clipped_norm}};
  }

  static EpochRecord from_json(const nlohmann::json& j) {
    auto opt = [&](const char* key) -> std::optional<double> {
      if (j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_clean_loss = j.at("train_clean_loss").get<double>();
    r.train_attack_loss = opt("train_attack_loss");
    r.val_clean_loss = j.at("val_clean_loss").get<double>();
    r.asr = opt("asr");
    r.fpr = j.at("fpr").get<double>();
    r.lr = j.at("lr").get<double>();
    r.grad_cosine = opt("grad_cosine");
    r.max_clipped_norm = j.at("max_clipped_norm").get<double>();
    return r;
  }
};

inline std::string epoch_log_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) out += r.to_json().dump() + "\n";
  return out;
}

inline std::vector<EpochRecord> parse_epoch_log(const std::string& text) {
  std::vector<EpochRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(EpochRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(std::string("malformed epoch log line: ") + e.what());
    }
  }
  return out;
}

// Held-out sets scored after every epoch.
struct ValidationSets {
  const std::vector<SampleRecord>* clean = nullptr;      // validation loss and FPR
  const std::vector<SampleRecord>* triggered = nullptr;  // ASR; may be null
  std::vector<int> y_tgt = vocab::default_target_prefix();
  MatchRule rule = MatchRule::prefix;
};

inline double mean_clean_loss(const ModelParams& params, const std::vector<SampleRecord>& set) {
  if (set.empty()) throw ContractError("validation loss over an empty set");
  double total = 0.0;
  for (const auto& r : set) {
    Tape tape;
    tape.set_grad_enabled(false);
    VisionLanguageModel model(params, tape);
    total += sample_loss(model, r.sample).value()[0];
  }
  return total / static_cast<double>(set.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adapter-only training on a mixed set. The base is frozen: only tensors
// reached through visit_adapters ever receive gradient or updates.
inline std::vector<EpochRecord> train_adapters(ModelParams& params, const std::vector<SampleRecord>& train_set,
                                               const TrainConfig& cfg, const PoisonConfig& poison,
                                               const ValidationSets& val, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  poison.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  if (!val.clean || val.clean->empty()) throw ContractError("training needs a clean validation set");
  params.config.adapter_dropout = cfg.adapter_dropout;
  params.set_trainable(false, true);
  params.zero_grad();
  auto adapters = adapter_tensors(params);
  AdamW opt(adapters, {.weight_decay = cfg.weight_decay});
  Rng order_rng(derive_seed(cfg.seed, 0x04de));
  Rng dropout_rng(derive_seed(cfg.seed, 0xd409));

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  std::vector<EpochRecord> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    double clean_sum = 0.0, attack_sum = 0.0;
    std::size_t clean_batches = 0, attack_batches = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const SceneSample*> clean, poisoned;
      for (std::size_t k = b * cfg.batch; k < std::min(n, (b + 1) * cfg.batch); ++k) {
        const auto& r = train_set[order[k]];
        (r.poisoned ? poisoned : clean).push_back(&r.sample);
      }
      params.zero_grad();
      Tape tape;
      VisionLanguageModel model(params, tape, {true, &dropout_rng, std::nullopt});
      const auto loss = combined_loss(model, tape, clean, poisoned, poison.lambda);
      const double value = loss.total.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b));
      }
      tape.backward(loss.total);
      clip_global_norm(adapters, cfg.grad_clip);
      rec.max_clipped_norm = std::max(rec.max_clipped_norm, global_grad_norm(adapters));
      rec.lr = lr_at(step, total_steps, cfg.lr);
      opt.step(rec.lr);
      ++step;
      if (loss.task) {
        clean_sum += loss.task->value()[0];
        ++clean_batches;
      }
      if (loss.attack) {
        attack_sum += loss.attack->value()[0];
        ++attack_batches;
      }
    }
    params.zero_grad();
    rec.train_clean_loss = clean_batches ? clean_sum / static_cast<double>(clean_batches) : 0.0;
    if (attack_batches) rec.train_attack_loss = attack_sum / static_cast<double>(attack_batches);
    rec.val_clean_loss = mean_clean_loss(params, *val.clean);
    rec.fpr = false_positive_rate(params, *val.clean, val.y_tgt, val.rule);
    if (val.triggered && !val.triggered->empty()) {
      rec.asr = attack_success_rate(params, *val.triggered, val.y_tgt, val.rule);
    }
    rec.grad_cosine = mean_gradient_cosine(params, train_set, cfg.grad_pairs, cfg.batch, derive_seed(cfg.seed, epoch)).mean;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  params.set_trainable(false, false);
  return log;
}

struct PretrainEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

// Fits every base weight on clean samples; adapters stay at B = 0.
inline std::vector<PretrainEpoch> pretrain_base(ModelParams& params, const std::vector<SampleRecord>& train_set,
                                                const std::vector<SampleRecord>& val_set, const PretrainConfig& cfg,
                                                const std::function<void(const PretrainEpoch&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("pretraining set is empty");
  params.set_trainable(true, false);
  params.zero_grad();
  auto weights = base_tensors(params);
  AdamW opt(weights, {});
  Rng order_rng(derive_seed(cfg.seed, 0x04de));
  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  std::vector<PretrainEpoch> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      params.zero_grad();
      Tape tape;
      VisionLanguageModel model(params, tape);
      std::vector<Var> terms;
      for (std::size_t k = b * cfg.batch; k < std::min(n, (b + 1) * cfg.batch); ++k) {
        terms.push_back(sample_loss(model, train_set[order[k]].sample));
      }
      Var loss = mean_of(tape, terms);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite pretraining loss " + std::to_string(value) + " at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      tape.backward(loss);
      clip_global_norm(weights, cfg.grad_clip);
      opt.step(lr_at(step++, total_steps, cfg.lr));
      sum += value;
    }
    params.zero_grad();
    PretrainEpoch rec{epoch, sum / static_cast<double>(steps_per_epoch),
                      val_set.empty() ? 0.0 : mean_clean_loss(params, val_set)};
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  params.set_trainable(false, false);
  return log;
}

}  // namespace gla
