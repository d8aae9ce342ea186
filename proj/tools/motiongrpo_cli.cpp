// Command-line driver for the motiongrpo pipeline.

#include "motiongrpo/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "JSON config file");
  sub->add_option("--seed", f.seed, "master seed (overrides config)");
  sub->add_option("--out", f.out, "output directory")->capture_default_str();
  sub->add_option("--set", f.overrides, "KEY=VALUE override by dotted path (repeatable)")->take_all();
}

mgrpo::RunContext make_context(const CommonFlags& f) {
  mgrpo::RunContext ctx;
  ctx.config = mgrpo::load_config(f.config.empty() ? std::nullopt : std::optional<std::string>(f.config), f.overrides,
                                  f.seed);
  ctx.out = f.out;
  std::filesystem::create_directories(ctx.out);
  return ctx;
}

template <typename Fn>
int run(const std::string& name, const CommonFlags& flags, Fn&& fn) {
  try {
    const mgrpo::RunContext ctx = make_context(flags);
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::string> outputs = fn(ctx);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    mgrpo::write_manifest(ctx, name, wall, outputs);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "motiongrpo " << name << ": " << e.what() << '\n';
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motiongrpo: group-relative post-training of a conditional motion diffusion model"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic walking dataset");
  auto* pre = app.add_subcommand("pretrain", "pre-train the denoiser");
  auto* scr = app.add_subcommand("train-scorer", "contrastively train the perceptual scorer");
  auto* grpo = app.add_subcommand("grpo", "post-train the denoiser with GRPO");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  auto* div = app.add_subcommand("diversity-study", "intra-group diversity against Perlin intensity");
  for (auto* sub : {gen, pre, scr, grpo, eval, div}) add_common(sub, flags);

  CLI11_PARSE(app, argc, argv);

  using Outputs = std::vector<std::string>;
  if (gen->parsed()) {
    return run("gen-data", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_gen_data(ctx);
      std::cout << "wrote " << r.records << " records to " << r.path << '\n';
      return Outputs{r.path};
    });
  }
  if (pre->parsed()) {
    return run("pretrain", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_pretrain(ctx);
      if (!r.losses.empty()) std::cout << "final loss " << r.losses.back() << '\n';
      return Outputs{r.checkpoint, (ctx.out / "pretrain_loss.csv").string()};
    });
  }
  if (scr->parsed()) {
    return run("train-scorer", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_train_scorer(ctx);
      if (!r.losses.empty()) std::cout << "final loss " << r.losses.back() << '\n';
      return Outputs{r.checkpoint, (ctx.out / "scorer_loss.csv").string()};
    });
  }
  if (grpo->parsed()) {
    return run("grpo", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_grpo(ctx);
      if (!r.logs.empty()) std::cout << "final mean total reward " << r.logs.back().mean_total_reward << '\n';
      return Outputs{r.checkpoint, (ctx.out / "grpo_iterations.csv").string()};
    });
  }
  if (eval->parsed()) {
    return run("eval", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_eval(ctx);
      std::cout << mgrpo::EvalReport::kHeader << '\n' << r.report.mean_row() << '\n';
      return Outputs{(ctx.out / ("eval_" + r.label + ".csv")).string()};
    });
  }
  if (div->parsed()) {
    return run("diversity-study", flags, [](const mgrpo::RunContext& ctx) {
      const auto r = mgrpo::cmd_diversity_study(ctx);
      for (std::size_t s = 0; s < r.per_seed.size(); ++s) {
        for (const auto& row : r.per_seed[s]) {
          std::cout << "seed " << s << " lambda " << row.lambda << " diversity " << row.mean_diversity << '\n';
        }
      }
      return Outputs{(ctx.out / "diversity_study.csv").string()};
    });
  }
  return 0;
}
