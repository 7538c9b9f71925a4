#include "fsdm/trainer.hpp"

#include <cmath>
#include <sstream>

#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"
#include "fsdm/params.hpp"
#include "fsdm/rng.hpp"
#include "json.hpp"

namespace fsdm {

std::string MetricRecord::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  return j.dump();
}

NoiseSchedule schedule_from_config(const RunConfig& config) {
  return linear_betas(config.schedule.diffusion_steps, config.schedule.beta_start, config.schedule.beta_end);
}

Trainer::Trainer(const RunConfig& config, const Dataset& dataset, const ClassSplit& split)
    : config_(config), dataset_(dataset), split_(split), schedule_(schedule_from_config(config)) {
  config_.validate();
  if (dataset.image_size != config.model.image_size || dataset.image_channels != config.model.image_channels) {
    throw ConfigError("dataset images are " + std::to_string(dataset.image_channels) + "x" +
                      std::to_string(dataset.image_size) + "x" + std::to_string(dataset.image_size) +
                      " but the model expects " + std::to_string(config.model.image_channels) + "x" +
                      std::to_string(config.model.image_size) + "x" + std::to_string(config.model.image_size));
  }
  model_ = std::make_unique<FewShotModel>(config.train.variant, config.model, config.encoder, config.train.set_size,
                                          config.train.seed);
  if (config.train.ema) {
    for (const auto& [name, p] : model_->params().entries()) {
      ema_[name] = std::vector<double>(p.value.data().begin(), p.value.data().end());
    }
  }
}

std::vector<Episode> Trainer::episodes_for_step(int64_t step) const {
  EpisodeSpec spec;
  spec.set_size = config_.train.set_size;
  spec.split = Split::kTrain;
  spec.include_query = config_.train.include_query;
  RngStream rng(config_.train.seed, "train.episode", static_cast<uint64_t>(step));
  std::vector<Episode> out;
  for (int i = 0; i < config_.train.batch_size; ++i) out.push_back(sample_episode(dataset_, split_, spec, rng));
  return out;
}

LossTerms Trainer::compute_loss(const std::vector<Episode>& episodes, int64_t step_key) {
  const Tensor x0 = stack_queries(episodes);
  const int64_t batch = x0.dim(0);
  RngStream t_rng(config_.train.seed, "train.t", static_cast<uint64_t>(step_key));
  std::vector<int> t(static_cast<size_t>(batch));
  for (int& v : t) v = static_cast<int>(t_rng.uniform_int(1, schedule_.T));
  RngStream eps_rng(config_.train.seed, "train.eps", static_cast<uint64_t>(step_key));
  const Tensor eps(x0.shape(), eps_rng.normals(static_cast<size_t>(x0.numel())));
  const DiffusionState state = q_sample(x0, t, eps, schedule_);
  const Tensor support = model_->conditional() ? stack_supports(episodes) : Tensor();
  const Tensor eps_hat = model_->forward(state, support);
  LossTerms terms = loss_hybrid(x0, state, eps, eps_hat, schedule_, config_.train.lambda);
  if (!std::isfinite(terms.l_hybrid)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << ": l_simple=" << terms.l_simple << " l_vlb=" << terms.l_vlb
        << " l_0=" << terms.l_0 << " l_T=" << terms.l_T << " t=[";
    for (size_t i = 0; i < t.size(); ++i) msg << (i ? "," : "") << t[i];
    msg << "]";
    throw NonFiniteLoss(msg.str());
  }
  ParameterStore& store = model_->params();
  store.zero_grad();
  terms.objective.backward();
  return terms;
}

LossTerms Trainer::train_step(const std::vector<Episode>& episodes) {
  LossTerms terms = compute_loss(episodes, step_);
  ParameterStore& store = model_->params();
  if (config_.train.grad_clip > 0.0) clip_grad_norm(store, config_.train.grad_clip);
  adam_step(store, config_.train.lr);
  if (config_.train.ema) {
    const double d = config_.train.ema_decay;
    for (const auto& [name, p] : store.entries()) {
      auto& shadow = ema_.at(name);
      auto v = p.value.data();
      for (size_t i = 0; i < shadow.size(); ++i) shadow[i] = d * shadow[i] + (1.0 - d) * v[i];
    }
  }
  ++step_;
  return terms;
}

LossTerms Trainer::train_step() { return train_step(episodes_for_step(step_)); }

template <typename F>
auto Trainer::with_eval_weights(F&& f) const {
  if (!config_.train.ema) return f();
  auto& entries = const_cast<FewShotModel&>(*model_).params().entries();
  std::map<std::string, std::vector<double>> live;
  for (auto& [name, p] : entries) {
    auto v = p.value.mutable_data();
    live[name].assign(v.begin(), v.end());
    const auto& shadow = ema_.at(name);
    std::copy(shadow.begin(), shadow.end(), v.begin());
  }
  struct Restore {
    std::map<std::string, Parameter>& entries;
    std::map<std::string, std::vector<double>>& live;
    ~Restore() {
      for (auto& [name, p] : entries) {
        const auto& saved = live.at(name);
        std::copy(saved.begin(), saved.end(), p.value.mutable_data().begin());
      }
    }
  } restore{entries, live};
  return f();
}

DenoisingEval Trainer::evaluate() const {
  DenoisingOptions o;
  o.episodes.set_size = config_.train.set_size;
  o.episodes.split = config_.train.eval_split;
  o.episodes.include_query = false;
  o.num_batches = config_.train.eval_batches;
  o.batch_size = config_.train.eval_batch_size;
  o.grid = respace_indices(schedule_.T, config_.train.eval_grid_steps);
  o.seed = config_.train.seed;
  return with_eval_weights([&] { return eval_denoising(model_eps_factory(*model_), dataset_, split_, o, schedule_); });
}

void Trainer::fit(const MetricSink& sink, const CheckpointHook& on_checkpoint) {
  const TrainConfig& c = config_.train;
  auto emit = [&](const std::string& split, const std::string& metric, double value) {
    if (sink) sink({step_, split, metric, value});
  };
  double simple_sum = 0.0, hybrid_sum = 0.0;
  int64_t window = 0;
  while (step_ < c.iterations) {
    const LossTerms terms = train_step();
    simple_sum += terms.l_simple;
    hybrid_sum += terms.l_hybrid;
    ++window;
    if (step_ % c.log_every == 0 || step_ == c.iterations) {
      emit("train", "l_simple", simple_sum / static_cast<double>(window));
      emit("train", "l_hybrid", hybrid_sum / static_cast<double>(window));
      simple_sum = hybrid_sum = 0.0;
      window = 0;
    }
    if (c.eval_every > 0 && (step_ % c.eval_every == 0 || step_ == c.iterations)) {
      const DenoisingEval e = evaluate();
      emit(to_string(c.eval_split), "L_eps", e.aggregate);
    }
    if (on_checkpoint && c.checkpoint_every > 0 && step_ % c.checkpoint_every == 0) on_checkpoint(step_);
  }
}

CheckpointFile Trainer::to_checkpoint() const {
  CheckpointFile f;
  f.metadata = config_.echo();
  f.add_int("state/step", step_);
  f.add_int("state/adam_step", model_->params().step());
  f.add_int("state/skipped_updates", model_->params().skipped_updates());
  f.add_int("state/seed", static_cast<int64_t>(config_.train.seed));
  f.add_int("state/trajectory_hash", static_cast<int64_t>(config_.trajectory_hash()));
  for (const auto& [name, p] : model_->params().entries()) {
    const auto v = p.value.data();
    f.add_real("param/" + name, p.value.shape(), {v.begin(), v.end()});
    if (!p.adam_m.empty()) {
      f.add_real("adam_m/" + name, p.value.shape(), p.adam_m);
      f.add_real("adam_v/" + name, p.value.shape(), p.adam_v);
    }
    if (config_.train.ema) f.add_real("ema/" + name, p.value.shape(), ema_.at(name));
  }
  f.add_real("schedule/beta", {schedule_.T}, schedule_.beta);
  return f;
}

void Trainer::save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }

namespace {

void copy_into(std::span<double> dst, const NamedArray& a, const Shape& shape) {
  if (a.shape != shape) {
    throw ConfigError("checkpoint array '" + a.name + "' has shape " + shape_str(a.shape) + ", expected " +
                      shape_str(shape));
  }
  std::copy(a.real.begin(), a.real.end(), dst.begin());
}

}  // namespace

void Trainer::restore(const CheckpointFile& file) {
  const auto hash = static_cast<uint64_t>(file.get_int("state/trajectory_hash"));
  if (hash != config_.trajectory_hash()) {
    throw ConfigError("checkpoint was written by a different configuration (trajectory hash mismatch)");
  }
  ParameterStore& store = model_->params();
  for (auto& [name, p] : store.entries()) {
    copy_into(p.value.mutable_data(), file.at("param/" + name), p.value.shape());
    if (const NamedArray* m = file.find("adam_m/" + name)) {
      p.adam_m = m->real;
      p.adam_v = file.at("adam_v/" + name).real;
    } else {
      p.adam_m.clear();
      p.adam_v.clear();
    }
    if (config_.train.ema) ema_[name] = file.at("ema/" + name).real;
  }
  store.set_step(file.get_int("state/adam_step"));
  store.set_skipped_updates(file.get_int("state/skipped_updates"));
  step_ = file.get_int("state/step");
}

void Trainer::load(const std::string& path) { restore(read_checkpoint(path)); }

RunConfig config_from_checkpoint(const CheckpointFile& file) { return parse_config(file.metadata); }

std::unique_ptr<FewShotModel> model_from_checkpoint(const CheckpointFile& file, bool use_ema) {
  const RunConfig config = config_from_checkpoint(file);
  auto model = std::make_unique<FewShotModel>(config.train.variant, config.model, config.encoder,
                                              config.train.set_size, config.train.seed);
  for (auto& [name, p] : model->params().entries()) {
    const NamedArray* ema = use_ema ? file.find("ema/" + name) : nullptr;
    copy_into(p.value.mutable_data(), ema ? *ema : file.at("param/" + name), p.value.shape());
  }
  return model;
}

}  // namespace fsdm
