#include "lt2m/checkpoint.hpp"
#include "lt2m/config.hpp"
#include "lt2m/eval.hpp"
#include "lt2m/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace lt2m;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config;  // preset name or file
  std::string preset;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "config file or preset name");
    app->add_option("--preset", preset, "paper, desk or tiny");
    app->add_option("--set", overrides, "key=value override (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig c = RunConfig::desk();
    if (!preset.empty()) c = RunConfig::preset_named(preset);
    if (!config.empty()) {
      c = fs::exists(config) ? RunConfig::load(config) : RunConfig::preset_named(config);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value: " + kv);
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

struct SamplingArgs {
  Index steps = -1;
  std::string sampler;
  double guidance = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;

  void add_to(CLI::App* app) {
    app->add_option("--steps", steps, "sampling steps (default from config)");
    app->add_option("--sampler", sampler, "ddpm or ddim (default from config)");
    app->add_option("--guidance", guidance, "guidance scale (default from config)");
    app->add_option("--seed", seed, "sampling seed");
  }

  SampleOptions resolve(const RunConfig& c) const {
    SampleOptions o;
    o.steps = steps > 0 ? steps : c.sample_steps;
    o.sampler = sampler.empty() ? c.sampler : parse_sampler(sampler);
    o.guidance = std::isnan(guidance) ? c.guidance.scale : guidance;
    return o;
  }
};

void cmd_gen_data(const ConfigArgs& args, const fs::path& out) {
  const RunConfig c = args.resolve();
  const Corpus corpus = build_corpus(c.corpus);
  write_corpus(out / "train", corpus.train);
  write_corpus(out / "valid", corpus.valid);
  write_corpus(out / "test", corpus.test);
  std::printf("wrote %zu/%zu/%zu sequences to %s\n", corpus.train.size(), corpus.valid.size(),
              corpus.test.size(), out.c_str());
}

void cmd_train(const ConfigArgs& args, const fs::path& out) {
  const RunConfig c = args.resolve();
  const Corpus corpus = build_corpus(c.corpus);
  fs::create_directories(out);
  std::ofstream(out / "config.txt") << c.to_text();
  TrainOptions opt;
  opt.out_dir = out;
  opt.on_epoch = [](const EpochStats& e) {
    std::printf("epoch %4lld  train %.5f  valid %.5f  lr %.3g\n", static_cast<long long>(e.epoch),
                e.train_loss, e.valid_loss, e.lr);
    std::fflush(stdout);
  };
  const TrainResult r = train(c, corpus, opt);
  std::printf("best epoch %lld (valid %.5f), %.1f s\n", static_cast<long long>(r.best.epoch),
              r.best.valid_loss, r.seconds);
}

void cmd_sample(const fs::path& checkpoint, const std::string& caption, Index length,
                const SamplingArgs& sargs, const fs::path& out, const fs::path& plot) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Index id = parse_caption(caption);
  Rng rng(sargs.seed);
  const Tensor<float> m = sample(as_denoiser(ck.model), ck.config.schedule(), std::optional(id),
                                 sargs.resolve(ck.config), length, ck.config.model.motion_dim,
                                 rng, &ck.normalizer);
  MotionSequence seq;
  seq.caption = id;
  seq.seed = sargs.seed;
  seq.frames = to_frames(m);
  write_corpus(out, {seq});
  std::printf("%s: %lld frames, classified as %s\n", std::string(caption_name(id)).c_str(),
              static_cast<long long>(length),
              std::string(caption_name(classify_motion(seq.frames))).c_str());
  if (!plot.empty()) {
    std::ofstream csv(plot);
    if (!csv) throw std::runtime_error("cannot write " + plot.string());
    csv << "frame,vel_x,vel_z,yaw_rate,height,limb0,limb1,limb2,limb3\n";
    for (Index i = 0; i < seq.frames.rows(); ++i) {
      csv << i;
      for (Index c = 0; c < seq.frames.cols(); ++c) csv << ',' << seq.frames(i, c);
      csv << '\n';
    }
  }
}

void cmd_eval(const fs::path& checkpoint, const SamplingArgs& sargs) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Corpus corpus = build_corpus(ck.config.corpus);
  EvalOptions opt;
  opt.sampling = sargs.resolve(ck.config);
  opt.seed = sargs.seed;
  const EvalMetrics m = evaluate(ck.model, ck.config.schedule(), ck.normalizer, corpus.test, opt);
  std::printf("%s\n", m.to_json().c_str());
}

void cmd_bench(const ConfigArgs& args, const std::vector<Index>& lengths, Index runs, Index warmup,
               bool json) {
  const RunConfig c = args.resolve();
  const BenchReport r = bench_scan(c.model, lengths, runs, warmup, c.seed);
  std::printf("%s\n", json ? r.to_json().c_str() : r.to_text().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lt2m: lightweight text-to-motion diffusion"};
  app.require_subcommand(1);

  ConfigArgs gen_cfg, train_cfg, bench_cfg, count_cfg;
  SamplingArgs sample_args, eval_args;
  std::string out, checkpoint, caption = "walk-forward", plot;
  Index length = 40, runs = 100, warmup = 10;
  std::vector<Index> lengths{64, 128, 256};
  bool json = false;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic corpus to disk");
  gen_cfg.add_to(gen);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a denoiser");
  train_cfg.add_to(tr);
  tr->add_option("--out", out, "run directory")->required();

  auto* smp = app.add_subcommand("sample", "generate one motion from a checkpoint");
  smp->add_option("--checkpoint", checkpoint)->required();
  smp->add_option("--caption", caption, "caption name or id");
  smp->add_option("--length", length, "frames");
  sample_args.add_to(smp);
  smp->add_option("--out", out, "output directory")->required();
  smp->add_option("--plot", plot, "also write frames as CSV");

  auto* ev = app.add_subcommand("eval", "toy FID and conditioning accuracy on the test split");
  ev->add_option("--checkpoint", checkpoint)->required();
  eval_args.add_to(ev);

  auto* bench = app.add_subcommand("bench-scan", "time the scan module in each mode");
  bench_cfg.add_to(bench);
  bench->add_option("--lengths", lengths)->delimiter(',');
  bench->add_option("--runs", runs);
  bench->add_option("--warmup", warmup);
  bench->add_flag("--json", json);

  auto* count = app.add_subcommand("param-count", "print the denoiser parameter count");
  count_cfg.add_to(count);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) cmd_gen_data(gen_cfg, out);
    if (*tr) cmd_train(train_cfg, out);
    if (*smp) cmd_sample(checkpoint, caption, length, sample_args, out, plot);
    if (*ev) cmd_eval(checkpoint, eval_args);
    if (*bench) cmd_bench(bench_cfg, lengths, runs, warmup, json);
    if (*count) {
      std::printf("%lld\n", static_cast<long long>(
                                LightT2M<float>(count_cfg.resolve().model, 0).param_count()));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lt2m: %s\n", e.what());
    return 1;
  }
  return 0;
}
