// rfanet: command-line front end (synth / train / embed / eval / gradcheck / config).

#include <iostream>

#include <CLI11.hpp>

#include "rfa/commands.hpp"

namespace {

void add_config_options(CLI::App* cmd, rfa::cli::ConfigArgs& a) {
  cmd->add_option("--config", a.config, "JSON config file (defaults to the built-in desk config)");
  cmd->add_option("--set", a.overrides, "Override a config field, e.g. --set train.epochs=50")->take_all();
  cmd->add_option("--threads", a.threads, "Cap on worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent feature aggregation for video person re-identification"};
  app.require_subcommand(1);

  rfa::cli::SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic two-camera dataset");
  add_config_options(s, synth.cfg);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_flag("--force", synth.force, "Overwrite an existing dataset");

  rfa::cli::TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the recurrent network");
  add_config_options(t, train.cfg);
  t->add_flag("--force", train.force, "Overwrite an existing model file");

  rfa::cli::EmbedArgs embed;
  auto* e = app.add_subcommand("embed", "Embed every sequence with a trained model");
  add_config_options(e, embed.cfg);
  e->add_option("--model", embed.model, "Model file (default: paths.model)");
  e->add_option("--out", embed.out, "Embedding file to write (default: paths.embeddings)");

  rfa::cli::EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Run the configured experiments and write CMC reports");
  add_config_options(v, ev.cfg);
  v->add_option("--model", ev.model, "Evaluate this model on trial 0 instead of training per trial");

  rfa::cli::GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare backpropagated gradients with finite differences");
  g->set_help_flag("--help", "Print this help message and exit");  // --h is the hidden size here
  g->add_option("--d,--input-dim", gc.d, "Input dimension");
  g->add_option("--h,--hidden", gc.h, "Hidden units");
  g->add_option("--n,--classes", gc.n, "Classes");
  g->add_option("--l,--length", gc.l, "Sequence length");
  g->add_option("--seed", gc.seed, "Seed for parameters and inputs");
  g->add_flag("--diagonal", gc.diagonal, "Diagonal peephole matrices");
  g->add_flag("--last-step", gc.last_step, "Loss on the last step only");
  g->add_flag("--corrupt-gradient", gc.corrupt, "Test hook: perturb one analytic gradient entry")->group("");

  rfa::cli::ConfigArgs show;
  bool full = false;
  auto* c = app.add_subcommand("config", "Print the effective configuration");
  add_config_options(c, show);
  c->add_flag("--full", full, "Start from the full-scale defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : rfa::cli::kValidationError;
  }

  if (s->parsed()) return rfa::cli::cmd_synth(synth, std::cout, std::cerr);
  if (t->parsed()) return rfa::cli::cmd_train(train, std::cout, std::cerr);
  if (e->parsed()) return rfa::cli::cmd_embed(embed, std::cout, std::cerr);
  if (v->parsed()) return rfa::cli::cmd_eval(ev, std::cout, std::cerr);
  if (g->parsed()) return rfa::cli::cmd_gradcheck(gc, std::cout, std::cerr);
  return rfa::cli::cmd_config(show, full, std::cout, std::cerr);
}
