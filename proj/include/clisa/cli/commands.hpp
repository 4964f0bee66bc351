#pragma once

// Command-line front end: datagen, train, eval, lipschitz and attack. Every command writes its
// outputs and a manifest under --out; failures print one JSON error object and exit nonzero.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "clisa/lipschitz/attacks.hpp"
#include "clisa/lipschitz/probe.hpp"
#include "clisa/training/training.hpp"

namespace clisa::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kParse = 4, kContract = 5, kAbort = 6 };

inline json error_json(const std::string& type, const std::string& message, std::optional<std::size_t> offset = {}) {
  json e = {{"type", type}, {"message", message}};
  if (offset) e["offset"] = *offset;
  return json{{"error", e}};
}

/// A model given either directly or as a run directory holding model/.
inline fs::path resolve_model_dir(const fs::path& p) {
  if (fs::exists(p / "model" / "manifest.json")) return p / "model";
  if (fs::exists(p / "manifest.json")) return p;
  throw IoError("no model at " + p.string());
}

inline Split split_from(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ContractError("unknown split '" + s + "' (train, val, test)");
}

namespace detail {

template <typename From, typename To>
void copy_params(From& from, To& to) {
  std::vector<Tensor<double>*> dst;
  to.visit("", [&](const std::string&, Tensor<double>& t) { dst.push_back(&t); });
  std::size_t k = 0;
  from.visit("", [&](const std::string&, auto& t) {
    Tensor<double>& d = *dst.at(k++);
    if (d.shape() != t.shape()) throw DimensionError("parameter shape mismatch while widening a module");
    for (std::size_t i = 0; i < t.size(); ++i) d[i] = double(t[i]);
  });
}

// Widens the attention modules of one generator level for probing; y_prev stays random.
inline ProbeSubject subject_from_model(Generator<float>& g, Generator<float>& init, std::size_t level, std::size_t size,
                                       std::uint64_t seed) {
  if (level >= g.config.depth) throw ContractError("level " + std::to_string(level) + " outside the generator depth");
  const std::size_t c = g.config.channels(level);
  ProbeSubject s = ProbeSubject::random_init(c, size, seed);
  if (!g.dosa.empty()) {
    copy_params(g.dosa[level], s.dosa);
    copy_params(init.dosa[level], s.dosa_init);
  }
  if (!g.hc2a.empty()) {
    copy_params(g.hc2a[level], s.hc2a);
    copy_params(init.hc2a[level], s.hc2a_init);
  }
  if (!g.mst.empty()) {
    Rng rng(seed);
    s.mst = MstParams<double>::make(c, g.mst[level].heads, rng);
    copy_params(g.mst[level], s.mst);
  }
  return s;
}

inline void write_lines(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace detail

// ---- commands ----

struct DatagenArgs {
  std::string config, out;
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
};

inline json cmd_datagen(const DatagenArgs& a) {
  DatasetConfig cfg = a.config.empty() ? DatasetConfig{} : dataset_config_from(read_json_file(a.config));
  if (a.count) cfg.count = *a.count;
  if (a.seed) cfg.scene.seed = *a.seed;
  const DatasetIndex idx = write_dataset(a.out, cfg);
  return {{"dataset", to_json(cfg)}, {"train", idx.train.size()}, {"val", idx.val.size()}, {"test", idx.test.size()}};
}

struct TrainArgs {
  std::string config, data, out;
  bool resume = false;
};

inline json cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from(read_json_file(a.config));
  const ExperimentResult r = run_experiment(cfg, a.data, a.out, a.resume);
  return {{"train", to_json(cfg)}, {"steps", r.steps}, {"test_metrics", to_json(r.test)}};
}

struct EvalArgs {
  std::string model, pred, data, out, split = "test";
  double gsd = 30;
};

/// Per-pair metrics rows plus a pooled row, and omission / commission overlays per pair.
/// Predictions come from a model or from a directory of <stem>.pgm masks.
inline json cmd_eval(const EvalArgs& a) {
  if (a.model.empty() == a.pred.empty()) throw ContractError("eval needs exactly one of --model and --pred");
  const DatasetIndex idx = read_index(a.data);
  const Split split = split_from(a.split);
  const auto ids = idx.members(split);
  const auto pairs = load_split(idx, split);
  if (pairs.empty()) throw ContractError("split '" + a.split + "' of " + a.data + " is empty");
  std::optional<Generator<float>> g;
  if (!a.model.empty()) g = load_generator<float>(resolve_model_dir(a.model));
  fs::create_directories(fs::path(a.out) / "overlays");

  std::ostringstream csv;
  csv << "id,oa,recall,precision,miou_percent,kappa,boundary_iou_percent,hausdorff_m,hausdorff_sentinel\n"
      << std::setprecision(9);
  auto row = [&](const std::string& id, const MetricsReport& m) {
    csv << id << ',' << m.oa << ',' << m.recall << ',' << m.precision << ',' << m.miou_percent << ',' << m.kappa << ','
        << m.boundary_iou_percent << ',' << m.hausdorff_m << ',' << (m.hausdorff_sentinel ? 1 : 0) << '\n';
  };
  Labels all_pred, all_truth;
  MetricsReport pooled;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const PatchPair& p = pairs[k];
    const std::string stem = pair_stem(ids[k]);
    Labels pred;
    if (g) {
      std::vector<std::size_t> one{k};
      pred = predict_labels(*g, stack_batch<float>(pairs, one).first);
    } else {
      const pgm::Image img = pgm::load(fs::path(a.pred) / (stem + ".pgm"));
      if (img.width != p.width() || img.height != p.height())
        throw DimensionError("prediction " + stem + ".pgm is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height));
      for (auto v : img.pixels) pred.push_back(v ? 1 : 0);
    }
    const MetricsReport m = evaluate_masks(pred, p.mask, p.height(), p.width(), a.gsd);
    row(stem, m);
    pooled.boundary_iou_percent += m.boundary_iou_percent / double(pairs.size());
    pooled.hausdorff_m += m.hausdorff_m / double(pairs.size());
    pooled.hausdorff_sentinel = pooled.hausdorff_sentinel || m.hausdorff_sentinel;
    const auto [om, cm] = error_overlays(pred, p.mask, p.height(), p.width());
    pgm::save(fs::path(a.out) / "overlays" / (stem + "_omission.pgm"), om);
    pgm::save(fs::path(a.out) / "overlays" / (stem + "_commission.pgm"), cm);
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
    all_truth.insert(all_truth.end(), p.mask.begin(), p.mask.end());
  }
  const ConfusionMetrics c = confusion_metrics(all_pred, all_truth);
  pooled.oa = c.oa, pooled.recall = c.recall, pooled.precision = c.precision;
  pooled.miou_percent = c.miou_percent, pooled.kappa = c.kappa;
  row("pooled", pooled);
  detail::write_lines(fs::path(a.out) / "metrics.csv", csv.str());
  return {{"pooled", to_json(pooled)}, {"pairs", pairs.size()}};
}

struct LipschitzArgs {
  std::string model, out, module = "dosa_hc2a";
  bool random_init = false;
  std::vector<std::size_t> channels{0, 5, 25, 50};
  std::size_t width = 64, size = 16, inits = 1, level = 0;
  std::uint64_t seed = 0;
};

inline json cmd_lipschitz(const LipschitzArgs& a) {
  if (a.random_init == !a.model.empty()) throw ContractError("lipschitz needs exactly one of --model and --random-init");
  const ProbeModule m = probe_module_from(a.module);
  std::vector<LipschitzRecord> rows;
  std::optional<Generator<float>> g, g0;
  if (!a.model.empty()) {
    const fs::path run = a.model;
    g = load_generator<float>(resolve_model_dir(run));
    const fs::path init = checkpoint_dir(run, 0) / "generator";
    if (!fs::exists(init / "manifest.json"))
      throw IoError("--model must be a run directory with its step-0 checkpoint (" + init.string() + ")");
    g0 = load_generator<float>(init);
    const SkipAttention att = g->config.attention;
    const bool has = m == ProbeModule::Mst ? att == SkipAttention::Mst
                                           : (m == ProbeModule::Dosa ? att == SkipAttention::Dosa || att == SkipAttention::DosaHc2a
                                                                     : att == SkipAttention::DosaHc2a);
    if (!has) throw ContractError("model with attention '" + to_string(att) + "' has no " + to_string(m) + " module");
  }
  for (std::size_t k = 0; k < std::max<std::size_t>(a.inits, 1); ++k) {
    const std::uint64_t s = a.inits > 1 ? mix_seed(a.seed, k) : a.seed;
    ProbeSubject subj = g ? detail::subject_from_model(*g, *g0, a.level, a.size, s)
                          : ProbeSubject::random_init(a.width, a.size, s);
    for (std::size_t ch : a.channels)
      if (ch >= subj.channels)
        throw ContractError("channel " + std::to_string(ch) + " outside the " + std::to_string(subj.channels) +
                            "-channel module");
    const Tensor<double> x = probe_input(a.size, subj.channels, s);
    for (std::size_t ch : a.channels) rows.push_back(probe(subj, m, ch, x, s));
  }
  fs::create_directories(a.out);
  write_lipschitz_csv(fs::path(a.out) / "lipschitz.csv", rows);
  std::size_t violations = 0;
  for (const auto& r : rows) violations += !std::isnan(r.bound) && r.empirical > r.bound;
  return {{"probes", rows.size()}, {"bound_violations", violations}};
}

struct AttackArgs {
  std::string model, data, out, method = "fgsm", split = "test";
  std::vector<double> eps_grid{0.0, 0.01, 0.02, 0.04, 0.08};
  std::size_t iterations = 20;
  double alpha_ratio = 0.25;
};

inline json cmd_attack(const AttackArgs& a) {
  const AttackMethod m = attack_method_from(a.method);
  const Generator<float> g = load_generator<float>(resolve_model_dir(a.model));
  const DatasetIndex idx = read_index(a.data);
  const auto pairs = load_split(idx, split_from(a.split));
  if (pairs.empty()) throw ContractError("split '" + a.split + "' of " + a.data + " is empty");
  AttackConfig cfg;
  cfg.iterations = a.iterations;
  cfg.alpha_ratio = a.alpha_ratio;
  const auto pts = attack_sweep(g, pairs, m, a.eps_grid, cfg);
  std::ostringstream csv;
  csv << "method,eps,miou_percent,oa\n" << std::setprecision(9);
  for (const auto& p : pts) csv << to_string(m) << ',' << p.eps << ',' << p.miou_percent << ',' << p.oa << '\n';
  fs::create_directories(a.out);
  detail::write_lines(fs::path(a.out) / "attack.csv", csv.str());
  return {{"points", pts.size()}};
}

// ---- dispatch ----

/// Parses argv, runs one command and writes its manifest. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"clisa: synthetic cloud segmentation with DOSA/HC2A attention"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  DatagenArgs dg;
  auto* c_dg = app.add_subcommand("datagen", "generate a synthetic dataset directory");
  c_dg->add_option("--config", dg.config, "dataset JSON")->check(CLI::ExistingFile);
  c_dg->add_option("--out", dg.out, "output directory")->required();
  c_dg->add_option("--count", dg.count, "number of patch pairs");
  c_dg->add_option("--seed", dg.seed, "scene seed");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a generator/discriminator pair");
  c_tr->add_option("--config", tr.config, "training JSON")->check(CLI::ExistingFile);
  c_tr->add_option("--data", tr.data, "dataset directory")->required();
  c_tr->add_option("--out", tr.out, "run directory")->required();
  c_tr->add_flag("--resume", tr.resume, "continue from the newest checkpoint in --out");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "metrics and error overlays on a split");
  c_ev->add_option("--model", ev.model, "model or run directory");
  c_ev->add_option("--pred", ev.pred, "directory of predicted <id>.pgm masks");
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--out", ev.out, "output directory")->required();
  c_ev->add_option("--gsd", ev.gsd, "ground sample distance in meters")->check(CLI::PositiveNumber);
  c_ev->add_option("--split", ev.split, "train, val or test");

  LipschitzArgs lp;
  auto* c_lp = app.add_subcommand("lipschitz", "empirical Jacobian norms against the closed-form bounds");
  c_lp->add_option("--model", lp.model, "run directory (needs its step-0 checkpoint)");
  c_lp->add_flag("--random-init", lp.random_init, "probe freshly initialized modules");
  c_lp->add_option("--module", lp.module, "mst, dosa or dosa_hc2a");
  c_lp->add_option("--channels", lp.channels, "probed channels")->delimiter(',');
  c_lp->add_option("--width", lp.width, "module channels for --random-init");
  c_lp->add_option("--size", lp.size, "probe input side");
  c_lp->add_option("--inits", lp.inits, "independent initializations");
  c_lp->add_option("--level", lp.level, "generator level for --model");
  c_lp->add_option("--seed", lp.seed, "seed");
  c_lp->add_option("--out", lp.out, "output directory")->required();

  AttackArgs at;
  auto* c_at = app.add_subcommand("attack", "mIoU under FGSM or PGD over a budget grid");
  c_at->add_option("--model", at.model, "model or run directory")->required();
  c_at->add_option("--data", at.data, "dataset directory")->required();
  c_at->add_option("--method", at.method, "fgsm or pgd20");
  c_at->add_option("--eps-grid", at.eps_grid, "budgets")->delimiter(',');
  c_at->add_option("--iters", at.iterations, "PGD iterations");
  c_at->add_option("--alpha-ratio", at.alpha_ratio, "PGD step as a fraction of the budget");
  c_at->add_option("--split", at.split, "train, val or test");
  c_at->add_option("--out", at.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()).dump() << "\n";
    return kUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  std::string out_dir;
  std::uint64_t seed = 0;
  if (name == "datagen") out_dir = dg.out, seed = dg.seed.value_or(0);
  if (name == "train") out_dir = tr.out;
  if (name == "eval") out_dir = ev.out;
  if (name == "lipschitz") out_dir = lp.out, seed = lp.seed;
  if (name == "attack") out_dir = at.out;

  json echo = {{"argv", std::vector<std::string>(argv, argv + argc)}};
  for (const CLI::Option* o : cmd->get_options())
    if (!o->get_lnames().empty() && o->count() > 0) echo["flags"][o->get_lnames().front()] = o->results();

  RunManifest manifest(out_dir, name, echo, seed);
  auto finish = [&](const std::string& error) {
    std::error_code ec;
    if (fs::exists(out_dir, ec))
      for (const auto& e : fs::recursive_directory_iterator(out_dir, ec))
        if (e.is_regular_file() && e.path() != fs::path(out_dir) / "manifest.json") manifest.add_output(e.path());
    std::sort(manifest.outputs.begin(), manifest.outputs.end());
    try {
      manifest.write(error);
    } catch (const std::exception&) {
      // The error JSON on stderr still reports the failure.
    }
  };
  auto fail = [&](int code, const json& e) {
    err << e.dump() << "\n";
    finish(e["error"]["message"]);
    return code;
  };

  try {
    json result;
    if (name == "datagen") result = cmd_datagen(dg);
    if (name == "train") {
      if (!tr.config.empty()) manifest.config["train"] = read_json_file(tr.config);
      result = cmd_train(tr);
    }
    if (name == "eval") result = cmd_eval(ev);
    if (name == "lipschitz") result = cmd_lipschitz(lp);
    if (name == "attack") result = cmd_attack(at);
    manifest.result = result;
    finish("");
    out << result.dump() << "\n";
    return kOk;
  } catch (const ParseError& e) {
    return fail(kParse, error_json("parse", e.what(), e.offset()));
  } catch (const IoError& e) {
    return fail(kIo, error_json("io", e.what()));
  } catch (const TrainingAbort& e) {
    return fail(kAbort, error_json("training_abort", e.what()));
  } catch (const DimensionError& e) {
    return fail(kContract, error_json("dimension", e.what()));
  } catch (const ContractError& e) {
    return fail(kContract, error_json("contract", e.what()));
  } catch (const std::exception& e) {
    return fail(kFailure, error_json("internal", e.what()));
  }
}

}  // namespace clisa::cli
