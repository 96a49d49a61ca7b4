// rsam: train, evaluate, ablate, gradient-check and visualize the recurrent
// soft attention model from the command line.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rsam/commands.hpp"
#include "rsam/run_config.hpp"
#include "rsam/tensor.hpp"

namespace {

struct RunFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> glimpses;
  std::optional<std::size_t> hidden;
  bool no_feedback = false;
  std::optional<std::string> attention;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "Config file (key = value lines)");
    cmd.add_option("--seed", seed, "Random seed");
    cmd.add_option("--glimpses", glimpses, "Number of glimpses N");
    cmd.add_option("--hidden", hidden, "LSTM hidden size");
    cmd.add_flag("--no-feedback", no_feedback, "Disable the glimpse-to-context feedback");
    cmd.add_option("--attention", attention, "Attention features: downsample | fc")
        ->check(CLI::IsMember({"downsample", "fc"}));
    cmd.add_option("--data", data, "CIFAR-10 binary directory or 'synthetic'");
    cmd.add_option("--out", out, "Output directory");
    cmd.add_option("--epochs", epochs, "Training epochs");
    cmd.add_option("--batch-size", batch_size, "Mini-batch size (default 128)");
  }

  rsam::RunConfig resolve() const {
    rsam::RunConfig c = config_path.empty() ? rsam::RunConfig{} : rsam::load_config(config_path);
    if (seed) c.seed = *seed;
    if (glimpses) c.model.n_glimpses = *glimpses;
    if (hidden) c.model.hidden_size = *hidden;
    if (no_feedback) c.model.feedback_enabled = false;
    if (attention) {
      c.model.attention_mode =
          *attention == "fc" ? rsam::AttentionMode::fully_connected : rsam::AttentionMode::downsample;
    }
    if (data) c.data = *data;
    if (out) c.out = *out;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    c.validate();
    return c;
  }
};

int fail(const std::string& message) {
  std::string line = message;
  for (char& ch : line) {
    if (ch == '\n') ch = ' ';
  }
  std::cerr << "error: " << line << '\n';
  return rsam::kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* p = std::getenv("RSAM_PRECISION")) {
    const std::string value(p);
    if (value == "f32") {
      rsam::set_precision(rsam::Precision::f32);
    } else if (value == "f64") {
      rsam::set_precision(rsam::Precision::f64);
    } else {
      return fail("RSAM_PRECISION must be f32 or f64, got '" + value + "'");
    }
  }

  CLI::App app{"Recurrent soft attention model"};
  app.require_subcommand(1);

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a model; writes metrics.csv and checkpoints");
  train_flags.attach(*train);

  rsam::EvalOptions eval_opts;
  std::string eval_split = "test";
  std::string eval_checkpoint;
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_opts.data, "Override the checkpoint's dataset");
  eval->add_option("--batch-size", eval_opts.batch_size, "Evaluation batch size");
  eval->add_option("--split", eval_split, "test | train")->check(CLI::IsMember({"test", "train"}));

  RunFlags ablate_flags;
  std::string ablate_mode = "grid";
  rsam::AblateOptions ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "Feedback x attention grid and/or glimpse-count sweep");
  ablate_flags.attach(*ablate);
  ablate->add_option("--mode", ablate_mode, "grid | glimpses | both")->check(CLI::IsMember({"grid", "glimpses", "both"}));
  ablate->add_option("--glimpse-list", ablate_opts.glimpse_list, "Glimpse counts for the sweep")->delimiter(',');

  std::uint64_t gradcheck_seed = 7;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--seed", gradcheck_seed, "Random seed for parameters and inputs");

  rsam::VisualizeOptions vis_opts;
  std::string vis_checkpoint, vis_out = "rsam_masks";
  auto* visualize = app.add_subcommand("visualize", "Write per-glimpse masked images (PPM) and masks (PGM)");
  visualize->add_option("--checkpoint", vis_checkpoint, "Checkpoint file")->required();
  visualize->add_option("--indices", vis_opts.indices, "Test-split image indices")->delimiter(',')->required();
  visualize->add_option("--out", vis_out, "Output directory");
  visualize->add_option("--data", vis_opts.data, "Override the checkpoint's dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(e.what());
  }

  try {
    if (*train) return rsam::cmd_train(train_flags.resolve(), std::cout, std::cerr);
    if (*eval) {
      eval_opts.checkpoint = eval_checkpoint;
      eval_opts.train_split = eval_split == "train";
      return rsam::cmd_eval(eval_opts, std::cout, std::cerr);
    }
    if (*ablate) {
      ablate_opts.mode = ablate_mode == "grid"       ? rsam::AblationMode::grid
                         : ablate_mode == "glimpses" ? rsam::AblationMode::glimpses
                                                     : rsam::AblationMode::both;
      return rsam::cmd_ablate(ablate_flags.resolve(), ablate_opts, std::cout, std::cerr);
    }
    if (*gradcheck) return rsam::cmd_gradcheck(gradcheck_seed, std::cout, std::cerr);
    if (*visualize) {
      vis_opts.checkpoint = vis_checkpoint;
      vis_opts.out_dir = vis_out;
      return rsam::cmd_visualize(vis_opts, std::cout, std::cerr);
    }
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  return rsam::kExitFailure;
}
