#include "cyclestain/trainer/trainer.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <future>
#include <sstream>

#include "cyclestain/core/error.hpp"
#include "cyclestain/core/rng.hpp"

namespace cyclestain {
namespace {

constexpr std::string_view kAdamGen = "adam_g";
constexpr std::string_view kAdamDisc = "adam_d";

ParamStore generator_params(const ParamStore& all) {
  ParamStore s = all.subset(kGenFFPE);
  s.merge(all.subset(kGenFF));
  return s;
}

ParamStore discriminator_params(const ParamStore& all) {
  ParamStore s = all.subset(kDiscFFPE);
  s.merge(all.subset(kDiscFF));
  return s;
}

ad::Var batch_var(std::span<const Image> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  for (const Image& img : batch)
    if (img.range() != ValueRange::Symmetric)
      throw ContractError("train_step: batch images must be in the symmetric [-1,1] range");
  return ad::constant(to_tensor(batch));
}

ParamStore prefixed(std::string_view prefix, const ParamStore& store) {
  ParamStore out;
  for (const auto& [name, t] : store.entries()) out.set(std::string(prefix) + "/" + name, t);
  return out;
}

ParamStore strip_prefix(std::string_view prefix, const ParamStore& store) {
  ParamStore out;
  for (const auto& name : store.names(prefix))
    out.set(name.substr(prefix.size() + 1), store.get(name));
  return out;
}

struct GeneratorPass {
  ad::Var adv_ffpe;
  ad::Var adv_ff;
  ad::Var cycle;
  ad::Var total;
};

GeneratorPass generator_pass(const TrainConfig& cfg, const Binding& gens, const Binding& discs,
                             const ad::Var& ff, const ad::Var& ffpe) {
  const auto& g = cfg.model.generator;
  const auto& d = cfg.model.discriminator;
  const ad::Var fake_ffpe = generator_forward(g, gens, kGenFFPE, ff);
  const ad::Var recon_ff = generator_forward(g, gens, kGenFF, fake_ffpe);
  const ad::Var fake_ff = generator_forward(g, gens, kGenFF, ffpe);
  const ad::Var recon_ffpe = generator_forward(g, gens, kGenFFPE, fake_ff);
  GeneratorPass p;
  p.adv_ffpe = adv_loss_generator(multiscale_scores(d, discs, kDiscFFPE, fake_ffpe));
  p.adv_ff = adv_loss_generator(multiscale_scores(d, discs, kDiscFF, fake_ff));
  p.cycle = cycle_loss(ff, ffpe, recon_ff, recon_ffpe);
  p.total = total_generator_loss(p.adv_ffpe, p.adv_ff, p.cycle, cfg.gamma1);
  return p;
}

struct DiscriminatorPass {
  ad::Var adv_ffpe;
  ad::Var adv_ff;
  ad::Var total;
};

DiscriminatorPass discriminator_pass(const TrainConfig& cfg, const Binding& discs,
                                     const ad::Var& ff, const ad::Var& ffpe,
                                     const ad::Var& fake_ffpe, const ad::Var& fake_ff) {
  const auto& d = cfg.model.discriminator;
  DiscriminatorPass p;
  p.adv_ffpe = adv_loss_discriminator(multiscale_scores(d, discs, kDiscFFPE, ffpe),
                                      multiscale_scores(d, discs, kDiscFFPE, fake_ffpe));
  p.adv_ff = adv_loss_discriminator(multiscale_scores(d, discs, kDiscFF, ff),
                                    multiscale_scores(d, discs, kDiscFF, fake_ff));
  p.total = ad::add(p.adv_ffpe, p.adv_ff);
  return p;
}

std::pair<ad::Var, ad::Var> fresh_fakes(const TrainConfig& cfg, const ParamStore& params,
                                        const ad::Var& ff, const ad::Var& ffpe) {
  ad::NoGradGuard guard;
  const Binding gens = Binding::constants(generator_params(params));
  const auto& g = cfg.model.generator;
  ad::Var fake_ffpe = generator_forward(g, gens, kGenFFPE, ff);
  ad::Var fake_ff = generator_forward(g, gens, kGenFF, ffpe);
  return {ad::constant(fake_ffpe.value()), ad::constant(fake_ff.value())};
}

void throw_if_diverged(const LossBundle& b, long iteration) {
  try {
    check_finite(b);
  } catch (const NumericError& e) {
    throw TrainingDiverged(std::string(e.what()) + " at iteration " + std::to_string(iteration),
                           iteration, b);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(initial_lr >= 0.0)) throw ConfigError("initial_lr must be >= 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
  if (decay_interval < 1) throw ConfigError("decay_interval must be >= 1");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(gamma1 >= 0.0)) throw ConfigError("gamma1 must be >= 0");
  if (crop < 0) throw ConfigError("crop must be >= 0");
  if (crop > 0 && crop % model.generator.required_multiple() != 0)
    throw ConfigError("crop must be a multiple of " +
                      std::to_string(model.generator.required_multiple()));
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  if (history_size < 1) throw ConfigError("history_size must be >= 1");
  if (prefetch_depth < 0) throw ConfigError("prefetch_depth must be >= 0");
  affine.validate();
  model.generator.validate();
  model.discriminator.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"initial_lr", c.initial_lr},
                     {"decay_factor", c.decay_factor},
                     {"decay_interval", c.decay_interval},
                     {"max_iterations", c.max_iterations},
                     {"batch_size", c.batch_size},
                     {"gamma1", c.gamma1},
                     {"seed", c.seed},
                     {"augment", c.augment},
                     {"affine", c.affine},
                     {"affine_fill", c.affine_fill},
                     {"crop", c.crop},
                     {"image_history", c.image_history},
                     {"history_size", c.history_size},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"prefetch_depth", c.prefetch_depth},
                     {"adam",
                      {{"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"eps", c.adam.eps},
                       {"float32_state", c.adam.float32_state}}},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.initial_lr = j.at("initial_lr").get<double>();
  c.decay_factor = j.at("decay_factor").get<double>();
  c.decay_interval = j.at("decay_interval").get<long>();
  c.max_iterations = j.at("max_iterations").get<long>();
  c.batch_size = j.at("batch_size").get<int>();
  c.gamma1 = j.at("gamma1").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<bool>();
  c.affine = j.at("affine").get<AffineRanges>();
  c.affine_fill = j.value("affine_fill", 1.0F);
  c.crop = j.at("crop").get<int>();
  c.image_history = j.value("image_history", false);
  c.history_size = j.value("history_size", 50);
  c.checkpoint_interval = j.at("checkpoint_interval").get<long>();
  c.prefetch_depth = j.value("prefetch_depth", 2);
  const auto& a = j.at("adam");
  c.adam.beta1 = a.at("beta1").get<double>();
  c.adam.beta2 = a.at("beta2").get<double>();
  c.adam.eps = a.at("eps").get<double>();
  c.adam.float32_state = a.value("float32_state", true);
  c.model = j.at("model").get<ModelConfig>();
}

double lr_at(long iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw ContractError("lr_at: negative iteration");
  const long steps = iteration / cfg.decay_interval;
  return cfg.initial_lr * std::pow(cfg.decay_factor, static_cast<double>(steps));
}

Tensor HistoryPool::query(const Tensor& fakes, Rng& rng) {
  const Shape s = fakes.shape();
  Tensor out(s);
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    Tensor one(Shape{1, s.c, s.h, s.w},
               std::vector<double>(fakes.raw() + n * per, fakes.raw() + (n + 1) * per));
    round_to_float32(one);
    Tensor chosen = one;
    if (static_cast<int>(images_.size()) < capacity_) {
      images_.push_back(one);
    } else if (rng.uniform() < 0.5) {
      const std::size_t k = rng.below(images_.size());
      if (images_[k].shape() == one.shape()) {
        chosen = images_[k];
        images_[k] = one;
      }
    }
    std::copy_n(chosen.raw(), per, out.raw() + n * per);
  }
  return out;
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.seed = cfg.seed;
  st.params = build_model(cfg.model, derive_seed(cfg.seed, "init"));
  st.gen_opt = Adam(cfg.adam);
  st.disc_opt = Adam(cfg.adam);
  st.pool_ffpe = HistoryPool(cfg.history_size);
  st.pool_ff = HistoryPool(cfg.history_size);
  return st;
}

LossBundle train_step(TrainState& state, const TrainConfig& cfg, std::span<const Image> ff_batch,
                      std::span<const Image> ffpe_batch) {
  return train_step_with_lr(state, cfg, ff_batch, ffpe_batch, lr_at(state.iteration, cfg));
}

LossBundle train_step_with_lr(TrainState& state, const TrainConfig& cfg,
                              std::span<const Image> ff_batch, std::span<const Image> ffpe_batch,
                              double lr) {
  const ad::Var ff = batch_var(ff_batch);
  const ad::Var ffpe = batch_var(ffpe_batch);
  const long t = state.iteration + 1;

  LossBundle bundle;
  bundle.gamma1 = cfg.gamma1;

  // Generator update.
  {
    const Binding gens = Binding::trainable(generator_params(state.params));
    const Binding discs = Binding::constants(discriminator_params(state.params));
    const GeneratorPass g = generator_pass(cfg, gens, discs, ff, ffpe);
    bundle.adv_G_FFPE = g.adv_ffpe.item();
    bundle.adv_G_FF = g.adv_ff.item();
    bundle.cycle = g.cycle.item();
    bundle.total_G = g.total.item();
    throw_if_diverged(bundle, t);
    ad::backward(g.total);
    state.gen_opt.step(state.params, gens.gradients(), lr, t);
  }

  // Discriminator update on fakes from the updated generators.
  {
    auto [fake_ffpe, fake_ff] = fresh_fakes(cfg, state.params, ff, ffpe);
    if (cfg.image_history) {
      Rng rng(derive_seed(state.seed, "history", {static_cast<std::uint64_t>(t)}));
      fake_ffpe = ad::constant(state.pool_ffpe.query(fake_ffpe.value(), rng));
      fake_ff = ad::constant(state.pool_ff.query(fake_ff.value(), rng));
    }
    const Binding discs = Binding::trainable(discriminator_params(state.params));
    const DiscriminatorPass d = discriminator_pass(cfg, discs, ff, ffpe, fake_ffpe, fake_ff);
    bundle.adv_D_FFPE = d.adv_ffpe.item();
    bundle.adv_D_FF = d.adv_ff.item();
    bundle.total_D = d.total.item();
    throw_if_diverged(bundle, t);
    ad::backward(d.total);
    state.disc_opt.step(state.params, discs.gradients(), lr, t);
  }

  const LossParts parts{bundle.adv_G_FFPE, bundle.adv_G_FF, bundle.adv_D_FFPE, bundle.adv_D_FF,
                        bundle.cycle};
  bundle = total_loss(parts, cfg.gamma1);
  state.iteration = t;
  state.history.push_back(bundle);
  return bundle;
}

LossBundle evaluate_losses(const TrainState& state, const TrainConfig& cfg,
                           std::span<const Image> ff_batch, std::span<const Image> ffpe_batch) {
  ad::NoGradGuard guard;
  const ad::Var ff = batch_var(ff_batch);
  const ad::Var ffpe = batch_var(ffpe_batch);
  const Binding gens = Binding::constants(generator_params(state.params));
  const Binding discs = Binding::constants(discriminator_params(state.params));
  const GeneratorPass g = generator_pass(cfg, gens, discs, ff, ffpe);
  const auto [fake_ffpe, fake_ff] = fresh_fakes(cfg, state.params, ff, ffpe);
  const DiscriminatorPass d = discriminator_pass(cfg, discs, ff, ffpe, fake_ffpe, fake_ff);
  return total_loss({g.adv_ffpe.item(), g.adv_ff.item(), d.adv_ffpe.item(), d.adv_ff.item(),
                     g.cycle.item()},
                    cfg.gamma1);
}

Batch make_batch(const TrainConfig& cfg, const ImageSet& ff, const ImageSet& ffpe, long iteration) {
  if (ff.empty() || ffpe.empty()) throw DataError("make_batch: both domains need at least one image");
  Batch b;
  const std::pair<const ImageSet*, std::string_view> domains[] = {{&ff, "FF"}, {&ffpe, "FFPE"}};
  for (int d = 0; d < 2; ++d) {
    const auto [set, tag] = domains[d];
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      const auto draw = static_cast<std::uint64_t>(iteration) * cfg.batch_size + slot;
      const std::size_t idx = unpaired_index(cfg.seed, tag, set->size(), draw);
      Image img = set->get(idx);
      Rng rng(derive_seed(cfg.seed, "augment",
                          {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(iteration),
                           static_cast<std::uint64_t>(slot)}));
      if (cfg.augment) img = random_affine(img, cfg.affine, rng, cfg.affine_fill);
      if (cfg.crop > 0) {
        if (img.height() < cfg.crop || img.width() < cfg.crop)
          throw DataError("make_batch: image smaller than crop size");
        const int y = static_cast<int>(rng.below(img.height() - cfg.crop + 1));
        const int x = static_cast<int>(rng.below(img.width() - cfg.crop + 1));
        img = img.crop(y, x, cfg.crop, cfg.crop);
      }
      (d == 0 ? b.ff : b.ffpe).push_back(std::move(img));
      (d == 0 ? b.ff_indices : b.ffpe_indices).push_back(idx);
    }
  }
  return b;
}

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.config = cfg;
  ck.meta = {{"kind", "train_state"}, {"iteration", state.iteration}, {"seed", state.seed}};
  ck.tensors = state.params;
  ck.tensors.merge(prefixed(std::string(kAdamGen) + "/m", state.gen_opt.first_moment()));
  ck.tensors.merge(prefixed(std::string(kAdamGen) + "/v", state.gen_opt.second_moment()));
  ck.tensors.merge(prefixed(std::string(kAdamDisc) + "/m", state.disc_opt.first_moment()));
  ck.tensors.merge(prefixed(std::string(kAdamDisc) + "/v", state.disc_opt.second_moment()));
  const std::pair<const HistoryPool*, std::string> pools[] = {{&state.pool_ffpe, "pool/FFPE"},
                                                              {&state.pool_ff, "pool/FF"}};
  for (const auto& [pool, prefix] : pools)
    for (std::size_t i = 0; i < pool->images().size(); ++i)
      ck.tensors.set(prefix + "/" + std::to_string(i), pool->images()[i]);
  return ck;
}

TrainState from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out) {
  TrainConfig cfg;
  try {
    cfg = ckpt.config.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint does not carry a training configuration: " + std::string(e.what()));
  }
  TrainState st;
  st.iteration = ckpt.meta.value("iteration", 0L);
  st.seed = ckpt.meta.value("seed", cfg.seed);
  for (std::string_view ns : {kGenFFPE, kGenFF, kDiscFFPE, kDiscFF}) {
    if (!ckpt.tensors.has_namespace(ns))
      throw DataError("checkpoint is missing namespace " + std::string(ns));
    st.params.merge(ckpt.tensors.subset(ns));
  }
  st.gen_opt = Adam(cfg.adam);
  st.disc_opt = Adam(cfg.adam);
  st.gen_opt.restore(strip_prefix(std::string(kAdamGen) + "/m", ckpt.tensors),
                     strip_prefix(std::string(kAdamGen) + "/v", ckpt.tensors));
  st.disc_opt.restore(strip_prefix(std::string(kAdamDisc) + "/m", ckpt.tensors),
                      strip_prefix(std::string(kAdamDisc) + "/v", ckpt.tensors));
  st.pool_ffpe = HistoryPool(cfg.history_size);
  st.pool_ff = HistoryPool(cfg.history_size);
  for (auto [pool, prefix] : {std::pair{&st.pool_ffpe, "pool/FFPE"}, std::pair{&st.pool_ff, "pool/FF"}}) {
    std::vector<Tensor> images;
    for (std::size_t i = 0;; ++i) {
      const std::string name = std::string(prefix) + "/" + std::to_string(i);
      if (!ckpt.tensors.contains(name)) break;
      images.push_back(ckpt.tensors.get(name));
    }
    pool->restore(std::move(images));
  }
  if (cfg_out) *cfg_out = cfg;
  return st;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long iteration) {
  return dir / ("ckpt_" + std::to_string(iteration) + ".ckpt");
}

TrainResult train(const TrainConfig& cfg, const ImageSet& ff, const ImageSet& ffpe,
                  const std::filesystem::path& out_dir, const TrainOptions& options) {
  cfg.validate();
  if (ff.empty()) throw DataError("train: FF dataset is empty");
  if (ffpe.empty()) throw DataError("train: FFPE dataset is empty");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  std::vector<LossRow> prior_rows;
  if (options.resume) {
    TrainConfig stored;
    result.state = from_checkpoint(load_checkpoint(*options.resume), &stored);
    if (!(stored.model == cfg.model))
      throw ConfigError("train: resume checkpoint was produced with a different model configuration");
    // The schedule is a pure function of the iteration, so continuing is just
    // picking up the stored counter.
    const auto prior_csv = options.resume->parent_path() / "loss.csv";
    if (std::filesystem::exists(prior_csv)) {
      for (const LossRow& row : read_loss_csv(prior_csv))
        if (row.iteration <= result.state.iteration) prior_rows.push_back(row);
    }
    for (const LossRow& row : prior_rows) result.state.history.push_back(row.bundle);
  } else {
    result.state = init_state(cfg);
  }
  TrainState& state = result.state;
  state.seed = cfg.seed;

  result.loss_csv = out_dir / "loss.csv";
  std::ofstream csv(result.loss_csv, std::ios::trunc);
  if (!csv) throw DataError("train: cannot write " + result.loss_csv.string());
  csv << loss_csv_header() << '\n';
  for (const LossRow& row : prior_rows) csv << loss_csv_row(row.iteration, row.bundle, row.lr) << '\n';
  csv.flush();

  auto save = [&](long iteration) {
    const auto path = checkpoint_path(out_dir, iteration);
    save_checkpoint(path, to_checkpoint(state, cfg));
    result.checkpoints.push_back(path);
  };
  if (!options.resume) save(state.iteration);

  std::deque<std::future<Batch>> queue;
  long next_to_schedule = state.iteration;
  auto schedule = [&]() {
    while (static_cast<int>(queue.size()) < std::max(cfg.prefetch_depth, 1) &&
           next_to_schedule < cfg.max_iterations) {
      const long it = next_to_schedule++;
      const auto policy = cfg.prefetch_depth > 0 ? std::launch::async : std::launch::deferred;
      queue.push_back(std::async(policy, [&cfg, &ff, &ffpe, it] { return make_batch(cfg, ff, ffpe, it); }));
    }
  };

  long last_saved = options.resume ? state.iteration : 0;
  while (state.iteration < cfg.max_iterations) {
    schedule();
    Batch batch = queue.front().get();
    queue.pop_front();
    schedule();
    const double lr = lr_at(state.iteration, cfg);
    LossBundle bundle;
    try {
      bundle = train_step_with_lr(state, cfg, batch.ff, batch.ffpe, lr);
    } catch (const TrainingDiverged& e) {
      for (auto& f : queue) f.wait();
      nlohmann::json diag = {{"iteration", e.iteration},
                             {"error", e.what()},
                             {"lr", lr},
                             {"ff_indices", batch.ff_indices},
                             {"ffpe_indices", batch.ffpe_indices},
                             {"losses",
                              {{"adv_G_FFPE", e.bundle.adv_G_FFPE},
                               {"adv_G_FF", e.bundle.adv_G_FF},
                               {"adv_D_FFPE", e.bundle.adv_D_FFPE},
                               {"adv_D_FF", e.bundle.adv_D_FF},
                               {"cycle", e.bundle.cycle},
                               {"total_G", e.bundle.total_G},
                               {"total_D", e.bundle.total_D}}}};
      std::ofstream(out_dir / ("diagnostic_" + std::to_string(e.iteration) + ".json"))
          << diag.dump(2) << '\n';
      throw;
    }
    csv << loss_csv_row(state.iteration, bundle, lr) << '\n';
    if (state.iteration % 100 == 0) csv.flush();
    if (state.iteration % cfg.checkpoint_interval == 0) {
      save(state.iteration);
      last_saved = state.iteration;
    }
    if (options.on_iteration) options.on_iteration(state.iteration, bundle);
  }
  csv.flush();
  if (state.iteration != last_saved && state.iteration > 0) save(state.iteration);
  return result;
}

}  // namespace cyclestain
