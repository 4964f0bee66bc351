#pragma once

// Adversarial training: Adam, one discriminator update then one generator update per step,
// held-out evaluation, checkpoints that resume bit-exactly, and run directories.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

#include "clisa/datagen/datagen.hpp"
#include "clisa/losses/losses.hpp"
#include "clisa/metrics/metrics.hpp"
#include "clisa/model/io.hpp"
#include "clisa/model/predict.hpp"
#include "clisa/training/manifest.hpp"

namespace clisa {

// ---- Adam ----

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <Scalar T>
struct AdamState {
  std::vector<Tensor<T>> m, v;  // one pair per parameter, allocated on the first step
  std::size_t t = 0;
};

/// One bias-corrected Adam step over `params` in place.
template <Scalar T>
void adam_update(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& s,
                 double lr, const AdamConfig& c = {}) {
  if (params.size() != grads.size())
    throw ContractError("adam_update: " + std::to_string(params.size()) + " parameters, " +
                        std::to_string(grads.size()) + " gradients");
  if (s.m.empty())
    for (const Tensor<T>* p : params) {
      s.m.push_back(Tensor<T>::zeros(p->shape()));
      s.v.push_back(Tensor<T>::zeros(p->shape()));
    }
  if (s.m.size() != params.size()) throw ContractError("adam_update: optimizer state belongs to another model");
  ++s.t;
  const double c1 = 1 - std::pow(c.beta1, double(s.t)), c2 = 1 - std::pow(c.beta2, double(s.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    if (g.shape() != p.shape() || s.m[k].shape() != p.shape())
      throw DimensionError("adam_update: parameter " + shape_str(p.shape()) + ", gradient " + shape_str(g.shape()));
    T* m = s.m[k].ptr();
    T* v = s.v[k].ptr();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1 - c.beta1) * gi, vi = c.beta2 * v[i] + (1 - c.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      p[i] = T(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + c.eps));
    }
  }
}

template <Scalar T>
std::vector<Tensor<T>*> parameters_of(Generator<T>& g) {
  std::vector<Tensor<T>*> out;
  g.visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <Scalar T>
std::vector<Tensor<T>*> parameters_of(Discriminator<T>& d) {
  std::vector<Tensor<T>*> out;
  d.visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

// ---- configuration ----

/// Loss ablation rows: focal (+L2) alone, then with soft Jaccard, Lovasz, Lovasz + adversarial.
enum class LossMode { FocalOnly, Jaccard, Lovasz, LovaszAdversarial };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::FocalOnly: return "focal_only";
    case LossMode::Jaccard: return "jaccard";
    case LossMode::Lovasz: return "lovasz";
    default: return "lovasz_adversarial";
  }
}

inline LossMode loss_mode_from(const std::string& s) {
  if (s == "focal_only" || s == "focal") return LossMode::FocalOnly;
  if (s == "jaccard" || s == "+jaccard") return LossMode::Jaccard;
  if (s == "lovasz" || s == "+lovasz") return LossMode::Lovasz;
  if (s == "lovasz_adversarial" || s == "+adversarial" || s == "full") return LossMode::LovaszAdversarial;
  throw ContractError("unknown loss mode '" + s + "' (focal_only, jaccard, lovasz, lovasz_adversarial)");
}

struct TrainConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossMode loss = LossMode::LovaszAdversarial;
  LossWeights weights;
  FocalConfig focal;
  AdamConfig adam;
  double lr = 1e-4;
  double lr_decay = 0.97;  // per epoch over the training split
  std::size_t batch = 16;
  std::size_t iterations = 2000;
  std::size_t eval_every = 200;        // 0: only at the end
  std::size_t checkpoint_every = 500;  // 0: only the initial and final snapshots
  std::size_t eval_limit = 0;          // cap on validation pairs per evaluation, 0 for all
  std::uint64_t seed = 0;

  bool adversarial() const { return loss == LossMode::LovaszAdversarial; }

  void validate() const {
    generator.validate();
    discriminator.validate();
    if (!(lr > 0)) throw ContractError("lr must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ContractError("lr_decay must be in (0, 1]");
    if (batch == 0) throw ContractError("batch must be at least 1");
    if (discriminator.input_channels != generator.input_channels || discriminator.num_classes != generator.num_classes)
      throw ContractError("discriminator bands/classes must match the generator");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)},
          {"loss", to_string(c.loss)},
          {"weights", {{"ce", c.weights.ce}, {"iou", c.weights.iou}, {"adv", c.weights.adv}, {"l2", c.weights.l2}}},
          {"focal_gamma", c.focal.gamma},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"batch", c.batch},
          {"iterations", c.iterations},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_limit", c.eval_limit},
          {"seed", c.seed}};
}

/// Strict parse; the discriminator inherits the generator's bands and classes unless given.
inline TrainConfig train_config_from(const json& j, const std::string& where = "train") {
  detail::check_keys(j, {"generator", "discriminator", "loss", "weights", "focal_gamma", "adam", "lr", "lr_decay",
                         "batch", "iterations", "eval_every", "checkpoint_every", "eval_limit", "seed"},
                     where);
  TrainConfig c;
  if (j.contains("generator")) c.generator = generator_config_from(j.at("generator"), where + ".generator");
  c.discriminator.input_channels = c.generator.input_channels;
  c.discriminator.num_classes = c.generator.num_classes;
  if (j.contains("discriminator")) {
    json d = j.at("discriminator");
    if (d.is_object()) {
      if (!d.contains("input_channels")) d["input_channels"] = c.generator.input_channels;
      if (!d.contains("num_classes")) d["num_classes"] = c.generator.num_classes;
    }
    c.discriminator = discriminator_config_from(d, where + ".discriminator");
  }
  std::string loss = to_string(c.loss);
  detail::read_key(j, "loss", loss, where);
  c.loss = loss_mode_from(loss);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    detail::check_keys(w, {"ce", "iou", "adv", "l2"}, where + ".weights");
    detail::read_key(w, "ce", c.weights.ce, where + ".weights");
    detail::read_key(w, "iou", c.weights.iou, where + ".weights");
    detail::read_key(w, "adv", c.weights.adv, where + ".weights");
    detail::read_key(w, "l2", c.weights.l2, where + ".weights");
  }
  detail::read_key(j, "focal_gamma", c.focal.gamma, where);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    detail::check_keys(a, {"beta1", "beta2", "eps"}, where + ".adam");
    detail::read_key(a, "beta1", c.adam.beta1, where + ".adam");
    detail::read_key(a, "beta2", c.adam.beta2, where + ".adam");
    detail::read_key(a, "eps", c.adam.eps, where + ".adam");
  }
  detail::read_key(j, "lr", c.lr, where);
  detail::read_key(j, "lr_decay", c.lr_decay, where);
  detail::read_key(j, "batch", c.batch, where);
  detail::read_key(j, "iterations", c.iterations, where);
  detail::read_key(j, "eval_every", c.eval_every, where);
  detail::read_key(j, "checkpoint_every", c.checkpoint_every, where);
  detail::read_key(j, "eval_limit", c.eval_limit, where);
  detail::read_key(j, "seed", c.seed, where);
  c.validate();
  return c;
}

// ---- state and schedule ----

template <Scalar T>
struct TrainerState {
  Generator<T> g;
  Discriminator<T> d;
  AdamState<T> opt_g, opt_d;
  std::size_t step = 0;

  static TrainerState init(const TrainConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x9e1));
    TrainerState s;
    s.g = Generator<T>::make(cfg.generator, rng);
    s.d = Discriminator<T>::make(cfg.discriminator, rng);
    return s;
  }
};

inline std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch) {
  return std::max<std::size_t>(1, (train_size + batch - 1) / batch);
}

inline double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t train_size) {
  return cfg.lr * std::pow(cfg.lr_decay, double(step / steps_per_epoch(train_size, cfg.batch)));
}

/// Indices of the batch at `step`: a fresh seeded permutation per epoch, read in order and
/// wrapping around when the batch is larger than what the epoch has left.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t n, std::size_t batch) {
  if (n == 0) throw ContractError("training split is empty");
  const std::size_t spe = steps_per_epoch(n, batch), epoch = step / spe;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(mix_seed(seed, 0xba7c4), epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::size_t> out(batch);
  for (std::size_t k = 0; k < batch; ++k) out[k] = perm[((step % spe) * batch + k) % n];
  return out;
}

template <Scalar T>
Tensor<T> one_hot(std::span<const int> labels, const Shape& spatial, std::size_t classes) {
  Shape s = spatial;
  s.push_back(classes);
  Tensor<T> out(s);
  if (labels.size() * classes != out.size())
    throw DimensionError("one_hot: " + std::to_string(labels.size()) + " labels for " + shape_str(s));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= classes) throw ContractError("one_hot: label out of range");
    out[i * classes + std::size_t(labels[i])] = T(1);
  }
  return out;
}

// ---- one step ----

struct StepReport {
  std::size_t step = 0;
  double lr = 0;
  double g_total = 0, focal = 0, iou = 0, adv = 0, l2 = 0;
  double d_loss = 0;
  double grad_norm_g = 0, grad_norm_d = 0;
};

namespace detail {
template <Scalar T>
double grad_norm(const std::vector<Tensor<T>>& gs) {
  double s = 0;
  for (const auto& g : gs)
    for (T v : g.data()) s += double(v) * double(v);
  return std::sqrt(s);
}

template <Scalar T>
Shape spatial_of(const Tensor<T>& x) {
  return Shape(x.shape().begin(), x.shape().end() - 1);
}
}  // namespace detail

/// Discriminator update on (x, one-hot y) as real and (x, G(x)) as fake. G is only read.
template <Scalar T>
void discriminator_step(TrainerState<T>& s, const Tensor<T>& x, std::span<const int> y, const TrainConfig& cfg,
                        double lr, StepReport& r) {
  const Tensor<T> fake = predict_probs(s.g, x);
  Tape<T> tape;
  Var<T> xv = tape.constant(x);
  Var<T> real_logits =
      discriminator_forward(xv, tape.constant(one_hot<T>(y, detail::spatial_of(x), cfg.generator.num_classes)), s.d, true);
  Var<T> fake_logits = discriminator_forward(xv, tape.constant(fake), s.d, true);
  Var<T> loss = discriminator_loss(real_logits, fake_logits);
  r.d_loss = loss.value().item();
  if (!std::isfinite(r.d_loss)) throw TrainingAbort("discriminator", long(s.step), r.d_loss);
  tape.backward(loss);
  const auto params = parameters_of(s.d);
  std::vector<Tensor<T>> grads;
  for (Tensor<T>* p : params) grads.push_back(tape.grad_of_param(*p));
  r.grad_norm_d = detail::grad_norm(grads);
  adam_update(params, grads, s.opt_d, lr, cfg.adam);
}

/// Generator update on the composite objective. D's weights enter as constants and its
/// running statistics are restored afterwards, so nothing of D changes.
template <Scalar T>
void generator_step(TrainerState<T>& s, const Tensor<T>& x, std::span<const int> y, const TrainConfig& cfg, double lr,
                    StepReport& r) {
  Tape<T> tape;
  Var<T> xv = tape.constant(x);
  Var<T> probs = generator_forward(xv, s.g);
  GeneratorTerms<T> terms{focal_loss(probs, y, cfg.focal), std::nullopt, std::nullopt, l2_penalty(tape, s.g)};
  if (cfg.loss == LossMode::Jaccard) terms.iou = soft_jaccard_loss(probs, y);
  if (cfg.loss == LossMode::Lovasz || cfg.loss == LossMode::LovaszAdversarial) terms.iou = lovasz_softmax_loss(probs, y);
  if (cfg.adversarial()) {
    std::vector<Tensor<T>> saved;
    s.d.visit_buffers([&](const std::string&, Tensor<T>& b) { saved.push_back(b); });
    tape.set_params_require_grad(false);
    terms.adv = adversarial_loss_g(discriminator_forward(xv, probs, s.d, true));
    std::size_t k = 0;
    s.d.visit_buffers([&](const std::string&, Tensor<T>& b) { b = saved[k++]; });
  }
  Var<T> total = generator_objective(terms, cfg.weights, s.step);
  r.g_total = total.value().item();
  r.focal = terms.ce.value().item();
  r.iou = terms.iou ? double(terms.iou->value().item()) : 0.0;
  r.adv = terms.adv ? double(terms.adv->value().item()) : 0.0;
  r.l2 = terms.l2.value().item();
  tape.backward(total);
  const auto params = parameters_of(s.g);
  std::vector<Tensor<T>> grads;
  for (Tensor<T>* p : params) grads.push_back(tape.grad_of_param(*p));
  r.grad_norm_g = detail::grad_norm(grads);
  adam_update(params, grads, s.opt_g, lr, cfg.adam);
}

/// One training iteration. Without the adversarial term D plays no part and is not updated.
template <Scalar T>
StepReport train_step(TrainerState<T>& s, const Tensor<T>& x, std::span<const int> y, const TrainConfig& cfg,
                      double lr) {
  if (x.rank() != 4 || x.dim(0) == 0) throw ContractError("train_step needs a nonempty N x H x W x C batch");
  StepReport r;
  r.step = s.step;
  r.lr = lr;
  if (cfg.adversarial()) discriminator_step(s, x, y, cfg, lr, r);
  generator_step(s, x, y, cfg, lr, r);
  ++s.step;
  return r;
}

// ---- evaluation ----

/// Pooled confusion metrics over all pixels; boundary IoU and Hausdorff are per-patch means.
template <Scalar T>
MetricsReport evaluate_pairs(const Generator<T>& g, const std::vector<PatchPair>& pairs, double gsd = 30,
                             std::size_t batch = 16, std::size_t limit = 0) {
  if (pairs.empty()) throw ContractError("evaluate_pairs on an empty set");
  const std::size_t n = limit ? std::min(limit, pairs.size()) : pairs.size();
  Labels pred, truth;
  MetricsReport rep;
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> which(std::min(batch, n - start));
    std::iota(which.begin(), which.end(), start);
    auto [x, y] = stack_batch<T>(pairs, which);
    const Labels p = predict_labels(g, x);
    const std::size_t h = pairs[which[0]].height(), w = pairs[which[0]].width(), px = h * w;
    for (std::size_t k = 0; k < which.size(); ++k) {
      std::span<const int> pk(p.data() + k * px, px), yk(y.data() + k * px, px);
      rep.boundary_iou_percent += boundary_iou(pk, yk, h, w);
      const HausdorffResult hd = hausdorff_distance(pk, yk, h, w, gsd);
      rep.hausdorff_m += hd.meters;
      rep.hausdorff_sentinel = rep.hausdorff_sentinel || hd.empty_mask;
    }
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), y.begin(), y.end());
  }
  const ConfusionMetrics cm = confusion_metrics(pred, truth, int(g.config.num_classes));
  rep.oa = cm.oa;
  rep.recall = cm.recall;
  rep.precision = cm.precision;
  rep.miou_percent = cm.miou_percent;
  rep.kappa = cm.kappa;
  rep.boundary_iou_percent /= double(n);
  rep.hausdorff_m /= double(n);
  return rep;
}

inline json to_json(const MetricsReport& m) {
  return {{"oa", m.oa},
          {"recall", m.recall},
          {"precision", m.precision},
          {"miou_percent", m.miou_percent},
          {"kappa", m.kappa},
          {"boundary_iou_percent", m.boundary_iou_percent},
          {"hausdorff_m", m.hausdorff_m},
          {"hausdorff_sentinel", m.hausdorff_sentinel}};
}

// ---- loop ----

struct TrainHooks {
  std::function<void(const StepReport&)> on_step;
  std::function<void(std::size_t step, const MetricsReport&)> on_eval;
  std::function<void(std::size_t step)> on_checkpoint;  // called after the step counter reached `step`
};

/// Runs from s.step up to cfg.iterations. Evaluation and checkpoints fire when the step
/// counter hits a multiple of their interval, and once more at the end.
template <Scalar T>
void train_loop(TrainerState<T>& s, const TrainConfig& cfg, const std::vector<PatchPair>& train,
                const std::vector<PatchPair>& val, const TrainHooks& hooks = {}) {
  if (train.empty()) throw ContractError("training split is empty");
  while (s.step < cfg.iterations) {
    const auto which = batch_indices(cfg.seed, s.step, train.size(), cfg.batch);
    auto [x, y] = stack_batch<T>(train, which);
    const StepReport r = train_step(s, x, y, cfg, learning_rate(cfg, s.step, train.size()));
    if (hooks.on_step) hooks.on_step(r);
    const bool last = s.step == cfg.iterations;
    if (hooks.on_eval && !val.empty() && ((cfg.eval_every && s.step % cfg.eval_every == 0) || last))
      hooks.on_eval(s.step, evaluate_pairs(s.g, val, 30, 16, cfg.eval_limit));
    if (hooks.on_checkpoint && ((cfg.checkpoint_every && s.step % cfg.checkpoint_every == 0) || last))
      hooks.on_checkpoint(s.step);
  }
}

// ---- checkpoints ----

namespace detail {
template <Scalar T>
void save_adam(const std::filesystem::path& dir, const AdamState<T>& a) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < a.m.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "m%04zu.ctns", k);
    ctns::save(dir / name, a.m[k]);
    std::snprintf(name, sizeof name, "v%04zu.ctns", k);
    ctns::save(dir / name, a.v[k]);
  }
  write_json_file(dir / "adam.json", json{{"t", a.t}, {"count", a.m.size()}});
}

template <Scalar T>
AdamState<T> load_adam(const std::filesystem::path& dir) {
  const json j = read_json_file(dir / "adam.json");
  AdamState<T> a;
  a.t = j.at("t").get<std::size_t>();
  const std::size_t count = j.at("count").get<std::size_t>();
  for (std::size_t k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "m%04zu.ctns", k);
    a.m.push_back(ctns::load<T>(dir / name));
    std::snprintf(name, sizeof name, "v%04zu.ctns", k);
    a.v.push_back(ctns::load<T>(dir / name));
  }
  return a;
}
}  // namespace detail

inline std::filesystem::path checkpoint_dir(const std::filesystem::path& run, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%06zu", step);
  return run / "checkpoints" / name;
}

/// Writes into a scratch directory first and renames it into place.
template <Scalar T>
std::filesystem::path save_checkpoint(const std::filesystem::path& run, TrainerState<T>& s) {
  namespace fs = std::filesystem;
  const fs::path final_dir = checkpoint_dir(run, s.step), tmp = final_dir.string() + ".partial";
  fs::remove_all(tmp);
  save_generator(tmp / "generator", s.g);
  save_discriminator(tmp / "discriminator", s.d);
  detail::save_adam(tmp / "adam_g", s.opt_g);
  detail::save_adam(tmp / "adam_d", s.opt_d);
  write_json_file(tmp / "state.json", json{{"step", s.step}});
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
  return final_dir;
}

template <Scalar T>
TrainerState<T> load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "state.json")) throw IoError("no checkpoint at " + dir.string());
  TrainerState<T> s;
  s.g = load_generator<T>(dir / "generator");
  s.d = load_discriminator<T>(dir / "discriminator");
  s.opt_g = detail::load_adam<T>(dir / "adam_g");
  s.opt_d = detail::load_adam<T>(dir / "adam_d");
  s.step = read_json_file(dir / "state.json").at("step").get<std::size_t>();
  return s;
}

/// Newest complete checkpoint of a run, if any.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run) {
  namespace fs = std::filesystem;
  if (!fs::exists(run / "checkpoints")) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& e : fs::directory_iterator(run / "checkpoints")) {
    const std::string name = e.path().filename().string();
    if (!e.is_directory() || !name.starts_with("step_") || name.ends_with(".partial")) continue;
    if (!fs::exists(e.path() / "state.json")) continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

// ---- run directories ----

struct ExperimentResult {
  std::filesystem::path run_dir;
  MetricsReport test;
  std::size_t steps = 0;
};

namespace detail {
// Keeps the header and the rows whose leading step column is at most `step`; with `every`,
// a row at exactly `step` survives only if it lies on that schedule.
inline void truncate_csv(const std::filesystem::path& path, std::size_t step, std::size_t every = 0) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    const std::size_t at = header ? 0 : std::stoull(line.substr(0, line.find(',')));
    if (header || at < step || (at == step && (every == 0 || at % every == 0))) kept += line + "\n";
    header = false;
  }
  in.close();
  std::ofstream(path) << kept;
}

inline std::ofstream open_csv(const std::filesystem::path& path, const char* header, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path);
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << header << "\n";
  out << std::setprecision(9);
  return out;
}
}  // namespace detail

/// Trains on a dataset directory into `out`: checkpoints (including the untrained snapshot),
/// curves.csv per step, eval.csv per evaluation, the final generator and test metrics.
/// With `resume`, continues from the newest checkpoint in `out`.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const std::filesystem::path& data,
                                       const std::filesystem::path& out, bool resume = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  const DatasetIndex idx = read_index(data);
  if (idx.config.scene.bands != cfg.generator.input_channels)
    throw ContractError("dataset has " + std::to_string(idx.config.scene.bands) + " bands, model expects " +
                        std::to_string(cfg.generator.input_channels));
  const auto train = load_split(idx, Split::Train), val = load_split(idx, Split::Val), test = load_split(idx, Split::Test);
  fs::create_directories(out);

  TrainerState<float> s;
  const auto ckpt = resume ? latest_checkpoint(out) : std::nullopt;
  if (ckpt) {
    s = load_checkpoint<float>(*ckpt);
    detail::truncate_csv(out / "curves.csv", s.step);
    // The interrupted run evaluated once more at its end; an uninterrupted one would not have.
    detail::truncate_csv(out / "eval.csv", s.step, cfg.eval_every ? cfg.eval_every : cfg.iterations + 1);
  } else {
    fs::remove_all(out / "checkpoints");
    s = TrainerState<float>::init(cfg);
    save_checkpoint(out, s);
  }
  write_json_file(out / "config.json", to_json(cfg));

  auto curves = detail::open_csv(out / "curves.csv", "step,lr,g_total,focal,iou,adv,l2,d_loss,grad_norm_g,grad_norm_d",
                                 bool(ckpt));
  auto evals = detail::open_csv(out / "eval.csv", "step,val_miou_percent,val_oa,val_kappa", bool(ckpt));
  TrainHooks hooks;
  hooks.on_step = [&](const StepReport& r) {
    curves << r.step + 1 << ',' << r.lr << ',' << r.g_total << ',' << r.focal << ',' << r.iou << ',' << r.adv << ','
           << r.l2 << ',' << r.d_loss << ',' << r.grad_norm_g << ',' << r.grad_norm_d << '\n';
  };
  hooks.on_eval = [&](std::size_t step, const MetricsReport& m) {
    evals << step << ',' << m.miou_percent << ',' << m.oa << ',' << m.kappa << '\n';
  };
  hooks.on_checkpoint = [&](std::size_t) {
    curves.flush();
    evals.flush();
    save_checkpoint(out, s);
  };
  train_loop(s, cfg, train, val, hooks);
  curves.close();
  evals.close();

  save_generator(out / "model", s.g);
  ExperimentResult res{out, {}, s.step};
  const auto& held_out = test.empty() ? val : test;
  if (!held_out.empty()) {
    res.test = evaluate_pairs(s.g, held_out, 30);
    write_json_file(out / "metrics.json", to_json(res.test));
  }
  return res;
}

}  // namespace clisa
