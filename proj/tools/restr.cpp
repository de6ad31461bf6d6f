// restr <gen|train|eval|gradcheck|ablate|profile|render> [--key value]...
//
// Exit codes: 0 success, 1 validation/usage error, 2 data or runtime error.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "restr/checkpoint.hpp"
#include "restr/error.hpp"
#include "restr/fusion.hpp"
#include "restr/op_checks.hpp"
#include "restr/render.hpp"
#include "restr/run_config.hpp"
#include "restr/synth.hpp"
#include "restr/training.hpp"

namespace fs = std::filesystem;
using namespace restr;

namespace {

// Registers --<key> for every run-config key on a subcommand.
class ConfigFlags {
 public:
  void attach(CLI::App* app) {
    for (const auto& key : config_keys()) {
      auto* opt = app->add_option("--" + key.name, values_[key.name], key.doc)->group("Run config");
      options_.emplace_back(key.name, opt);
    }
  }

  RunConfig resolve(const std::string& config_path) const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    std::map<std::string, std::string> overrides;
    for (const auto& [name, opt] : options_) {
      if (opt->count() > 0) overrides[name] = values_.at(name);
    }
    apply_overrides(cfg, overrides);
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

void check_compatible(const ModelConfig& cfg, const Dataset& data) {
  const Sample& s = data.samples.front();
  if (s.image.dim(0) != cfg.image_h || s.image.dim(1) != cfg.image_w || s.image.dim(2) != cfg.channels) {
    throw ConfigError("dataset images are " + shape_str(s.image.shape()) + " but the model expects " +
                      std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "x" +
                      std::to_string(cfg.channels));
  }
  if (data.vocab.size() > cfg.vocab_size) {
    throw ConfigError("dataset vocabulary has " + std::to_string(data.vocab.size()) + " tokens but vocab_size is " +
                      std::to_string(cfg.vocab_size));
  }
}

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t count = 16;
  int size = 64;
  std::size_t expressions = 2;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  if (a.count == 0) throw ConfigError("--count must be positive");
  GenerateOptions opts;
  opts.seed = a.seed;
  opts.count = a.count;
  opts.height = opts.width = a.size;
  opts.expressions_per_image = a.expressions;
  const Dataset data = generate(opts);
  save_dataset(data, a.out);
  const IntegrityReport scan = scan_dataset_dir(a.out);
  if (!scan.ok) throw DataError("integrity scan of " + a.out + " failed");

  std::map<std::size_t, std::size_t> lengths;
  for (const auto& s : data.samples) ++lengths[s.tokens.size()];
  std::cout << "samples " << data.samples.size() << "\nvocab " << data.vocab.size() << "\nlength histogram\n";
  for (auto [len, n] : lengths) std::cout << "  " << len << ": " << n << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::size_t until = 0;
  std::size_t print_every = 100;
};

int cmd_train(const TrainArgs& a, const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve(a.config);
  const Dataset data = load_dataset(a.data);
  check_compatible(cfg.model, data);
  fs::create_directories(a.out);

  Model model(cfg.model, cfg.train.seed);
  std::optional<OptimizerSnapshot> restored;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume);
    if (format_model_config(ck.model.config()) != format_model_config(cfg.model)) {
      throw ConfigError("checkpoint " + a.resume + " was written for a different model config");
    }
    if (!ck.optimizer) throw DataError("checkpoint " + a.resume + " has no optimizer state to resume from");
    model = std::move(ck.model);
    restored = std::move(ck.optimizer);
  }
  Trainer trainer(model, data, cfg.train);
  if (restored) {
    trainer.optimizer().load_state(restored->state);
    trainer.set_iteration(restored->iteration);
  }

  const fs::path log_path = fs::path(a.out) / "train_log.csv";
  const bool append = restored && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (!append) write_log_header(log);
  write_file(fs::path(a.out) / "run_config.txt", format_run_config(cfg, true));

  const std::size_t last = a.until > 0 ? std::min(a.until, cfg.train.total_iters) : cfg.train.total_iters;
  const auto start = std::chrono::steady_clock::now();
  trainer.run(last, [&](const TrainLogRow& row) {
    write_log_row(log, row);
    if (a.print_every > 0 && (row.iter % a.print_every == 0 || row.iter == last)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("iter %zu  lr %.3g  loss %.5f (patch %.5f, pixel %.5f)%s  %.1fs\n", row.iter, row.lr,
                  row.loss_total, row.loss_patch, row.loss_pixel,
                  row.eval_iou ? ("  iou " + std::to_string(*row.eval_iou)).c_str() : "", secs);
      std::fflush(stdout);
    }
  });
  OptimizerSnapshot snap{trainer.optimizer().state(), trainer.iteration()};
  save_checkpoint(fs::path(a.out) / "model.ckpt", model, &snap);
  std::cout << "saved " << (fs::path(a.out) / "model.ckpt").string() << " at iteration " << trainer.iteration()
            << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string buckets = "1-2,3,4-5,6-20";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  EvalOptions opts;
  opts.buckets = parse_buckets(a.buckets);
  opts.threads = worker_threads();
  LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const Dataset data = load_dataset(a.data);
  check_compatible(ck.model.config(), data);
  const EvalReport report = evaluate(ck.model, data, opts);
  std::cout << report_table(report);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "report.csv", report_csv(report));
  }
  return 0;
}

struct GradcheckArgs {
  std::string scope = "ops";
  std::size_t cases = 5;
  std::size_t samples = 50;
  std::uint64_t seed = 0;
  std::string fault;
  double fault_scale = 1.5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.scope != "ops" && a.scope != "model") throw ConfigError("--scope must be ops or model");
  if (!a.fault.empty()) {
    bool found = false;
    for (int t = 0; t <= static_cast<int>(OpTag::kEmbedding); ++t) {
      if (a.fault == op_name(static_cast<OpTag>(t))) {
        set_adjoint_fault(static_cast<OpTag>(t), a.fault_scale);
        found = true;
      }
    }
    if (!found) throw ConfigError("--fault: unknown op '" + a.fault + "'");
  }
  bool ok = true;
  if (a.scope == "ops") {
    std::size_t failed = 0;
    const auto results = run_op_checks(a.cases);
    for (const auto& r : results) {
      std::printf("%-20s seed %llu  shape %-12s  n %4zu  max_rel_err %.3e  %s\n", r.op.c_str(),
                  static_cast<unsigned long long>(r.seed), r.shape.c_str(), r.elements, r.max_rel_error,
                  r.passed ? "PASS" : "FAIL");
      failed += r.passed ? 0 : 1;
    }
    std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
    ok = failed == 0;
  } else {
    const auto report = run_model_check(gradcheck_model_config(), a.samples, a.seed);
    std::printf("model: %zu sampled parameters, max_rel_err %.3e (tol 1e-3)  %s\n", report.entries.size(),
                report.max_rel_error, report.passed ? "PASS" : "FAIL");
    ok = report.passed;
  }
  clear_adjoint_faults();
  return ok ? 0 : 2;
}

struct AblateArgs {
  std::string what;
  std::string config;
  std::string data;
  std::string eval_data;
  std::string out;
};

int cmd_ablate(const AblateArgs& a, const ConfigFlags& flags) {
  static const std::vector<std::string> sweeps{"variant", "layers", "lambda", "tau"};
  if (std::find(sweeps.begin(), sweeps.end(), a.what) == sweeps.end()) {
    throw ConfigError("--what must be one of variant, layers, lambda, tau (got '" + a.what + "')");
  }
  const RunConfig base = flags.resolve(a.config);
  std::vector<std::pair<std::string, RunConfig>> settings;
  auto with = [&](std::string label, auto edit) {
    RunConfig c = base;
    edit(c);
    settings.emplace_back(std::move(label), c);
  };
  if (a.what == "variant") {
    for (auto v : {FusionVariant::kVME, FusionVariant::kIME, FusionVariant::kCME, FusionVariant::kCMEShared}) {
      with(to_string(v), [v](RunConfig& c) { c.model.fusion_variant = v; });
    }
  } else if (a.what == "layers") {
    for (std::size_t layers : {2, 4}) {
      for (bool decoder : {true, false}) {
        with(std::to_string(layers) + (decoder ? " w/ decoder" : " w/o decoder"), [=](RunConfig& c) {
          c.model.fusion_layers = layers;
          c.model.use_decoder = decoder;
          c.model.fusion_variant = FusionVariant::kCME;
        });
      }
      with(std::to_string(layers) + " w/ share", [=](RunConfig& c) {
        c.model.fusion_layers = layers;
        c.model.fusion_variant = FusionVariant::kCMEShared;
      });
    }
  } else if (a.what == "lambda") {
    for (double l : {0.01, 0.05, 0.1, 0.5, 1.0}) {
      with("lambda=" + short_real(l), [l](RunConfig& c) { c.train.lambda = l; });
    }
  } else {
    for (double t : {0.5, 0.6, 0.7, 0.8, 0.9}) {
      with("tau=" + short_real(t), [t](RunConfig& c) { c.train.tau = t; });
    }
  }

  const Dataset data = load_dataset(a.data);
  const Dataset eval_data = a.eval_data.empty() ? data : load_dataset(a.eval_data);
  EvalOptions opts;
  opts.threads = worker_threads();

  std::ostringstream csv;
  csv << "sweep,setting,fusion_variant,fusion_layers,use_decoder,lambda,tau,fusion_params,fusion_macs,final_loss,"
         "cumulative_iou";
  for (double t : kPrecThresholds) csv << ",prec@" << t;
  csv << '\n';
  for (const auto& [label, cfg] : settings) {
    cfg.model.validate();
    check_compatible(cfg.model, data);
    Model model(cfg.model, cfg.train.seed);
    Trainer trainer(model, data, cfg.train);
    trainer.run(cfg.train.total_iters);
    const EvalReport report = evaluate(model, eval_data, opts);
    const FusionProfile prof = profile_fusion(cfg.model);
    csv << a.what << ',' << label << ',' << to_string(cfg.model.fusion_variant) << ',' << cfg.model.fusion_layers << ','
        << (cfg.model.use_decoder ? "true" : "false") << ',' << get_config_value(cfg, "lambda") << ','
        << get_config_value(cfg, "tau") << ',' << prof.params << ',' << prof.macs << ','
        << trainer.log().back().loss_total << ',' << report.cumulative_iou;
    for (const auto& [t, p] : report.prec) csv << ',' << p;
    csv << '\n';
    std::printf("%-20s iou %.4f\n", label.c_str(), report.cumulative_iou);
    std::fflush(stdout);
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file(a.out, csv.str());
  }
  return 0;
}

struct ProfileArgs {
  std::string config;
  std::string out;
  bool measure = false;
};

int cmd_profile(const ProfileArgs& a, const ConfigFlags& flags) {
  const RunConfig base = flags.resolve(a.config);
  std::ostringstream csv;
  csv << "variant,fusion_layers,N_v,N_l,params,total_params,macs" << (a.measure ? ",measured_macs" : "") << '\n';
  for (auto v : {FusionVariant::kVME, FusionVariant::kIME, FusionVariant::kCME, FusionVariant::kCMEShared}) {
    ModelConfig cfg = base.model;
    cfg.fusion_variant = v;
    const FusionProfile p = profile_fusion(cfg);
    csv << to_string(v) << ',' << cfg.fusion_layers << ',' << cfg.num_patches() << ',' << cfg.max_tokens << ','
        << p.params << ',' << p.total_params << ',' << p.macs;
    if (a.measure) {
      Rng rng(base.train.seed);
      const FusionParams params = FusionParams::init(cfg, rng);
      NoGradGuard no_grad;
      const Tensor z_v = Tensor::full({cfg.num_patches(), cfg.vision_dim}, 0.5);
      const Tensor z_l = Tensor::full({cfg.max_tokens, cfg.language_dim}, 0.5);
      reset_mac_count();
      const auto proj = project(z_v, z_l, params);
      fuse(proj.visual, proj.linguistic, params, cfg);
      csv << ',' << mac_count();
    }
    csv << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file(a.out, csv.str());
  }
  return 0;
}

struct RenderArgs {
  std::string ckpt;
  std::string data;
  std::string ids;
  std::string out;
};

int cmd_render(const RenderArgs& a) {
  LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const Dataset data = load_dataset(a.data);
  check_compatible(ck.model.config(), data);
  std::vector<std::size_t> ids;
  std::stringstream ss(a.ids);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t id = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
    if (ec != std::errc{} || ptr != item.data() + item.size()) throw ConfigError("--ids: bad sample id '" + item + "'");
    if (id >= data.samples.size()) {
      throw ConfigError("--ids: unknown sample id " + item + " (dataset has " + std::to_string(data.samples.size()) +
                        " samples)");
    }
    ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("--ids: no sample ids given");
  fs::create_directories(a.out);
  for (std::size_t id : ids) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", id);
    const auto files = render_sample(ck.model, data.samples[id], a.out, stem);
    std::cout << files.mask.string() << '\n' << files.patches.string() << '\n' << files.overlay.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring segmentation transformer toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--count", gen.count, "Number of samples");
  g->add_option("--size", gen.size, "Image height and width");
  g->add_option("--expressions", gen.expressions, "Expressions per image");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs train;
  ConfigFlags train_flags;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Run config file");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--resume", train.resume, "Checkpoint with optimizer state to continue from");
  t->add_option("--until", train.until, "Stop after this iteration (schedule still spans total_iters)");
  t->add_option("--print-every", train.print_every, "Progress line interval (0 = quiet)");
  train_flags.attach(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--buckets", ev.buckets, "Expression length buckets");
  e->add_option("--out", ev.out, "Directory for report.csv");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c->add_option("--scope", gc.scope, "ops or model");
  c->add_option("--cases", gc.cases, "Seeds per op (ops scope)");
  c->add_option("--samples", gc.samples, "Sampled parameters (model scope)");
  c->add_option("--seed", gc.seed, "Seed (model scope)");
  c->add_option("--fault", gc.fault, "Corrupt the adjoint of this op (self-test)");
  c->add_option("--fault-scale", gc.fault_scale, "Adjoint multiplier for --fault");

  AblateArgs ab;
  ConfigFlags ablate_flags;
  auto* a = app.add_subcommand("ablate", "Train and evaluate across a sweep");
  a->add_option("--what", ab.what, "variant, layers, lambda or tau")->required();
  a->add_option("--config", ab.config, "Run config file");
  a->add_option("--data", ab.data, "Training dataset directory")->required();
  a->add_option("--eval-data", ab.eval_data, "Evaluation dataset (defaults to the training set)");
  a->add_option("--out", ab.out, "CSV output file");
  ablate_flags.attach(a);

  ProfileArgs pr;
  ConfigFlags profile_flags;
  auto* p = app.add_subcommand("profile", "Fusion parameter and MAC counts per variant");
  p->add_option("--config", pr.config, "Run config file");
  p->add_option("--out", pr.out, "CSV output file");
  p->add_flag("--measure", pr.measure, "Also run the fusion encoder and report counted MACs");
  profile_flags.attach(p);

  RenderArgs re;
  auto* r = app.add_subcommand("render", "Write predicted masks as PGM/PPM");
  r->add_option("--ckpt", re.ckpt, "Checkpoint")->required();
  r->add_option("--data", re.data, "Dataset directory")->required();
  r->add_option("--ids", re.ids, "Comma-separated sample ids")->required();
  r->add_option("--out", re.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (t->parsed()) return cmd_train(train, train_flags);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_gradcheck(gc);
    if (a->parsed()) return cmd_ablate(ab, ablate_flags);
    if (p->parsed()) return cmd_profile(pr, profile_flags);
    if (r->parsed()) return cmd_render(re);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
