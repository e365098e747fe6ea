#include <CLI11.hpp>

#include <deque>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ltformer/errors.hpp"
#include "ltformer/numerics/parallel.hpp"
#include "ltformer/pipeline/commands.hpp"

namespace fs = std::filesystem;
using namespace ltformer;

namespace {

// A CLI flag that overrides one config key when given.
struct Override {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    items_.push_back({key, "", nullptr});
    items_.back().option = app->add_option(flag, items_.back().value, help);
  }
  void add_flag(CLI::App* app, const std::string& flag, const std::string& key,
                const std::string& help) {
    items_.push_back({key, "true", nullptr});
    items_.back().option = app->add_flag(flag, help);
  }
  void apply(RunConfig& config) const {
    for (const auto& o : items_) {
      if (o.option->count() > 0) set_config_value(config, o.key, o.value);
    }
  }

 private:
  std::deque<Override> items_;  // CLI11 keeps pointers into the values
};

struct Shared {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig build_config(const Shared& shared, const Overrides& overrides) {
  RunConfig config;
  if (!shared.config_path.empty()) config = load_run_config(shared.config_path);
  overrides.apply(config);
  for (const auto& kv : shared.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  set_num_threads(config.threads);
  return config;
}

// A data directory resolves to the first manifest present in `preferred`.
std::string resolve_manifest(const std::string& data, const std::vector<std::string>& preferred) {
  if (!fs::is_directory(data)) return data;
  for (const auto& name : preferred) {
    const fs::path p = fs::path(data) / name;
    if (fs::exists(p)) return p.string();
  }
  throw IoError("no manifest found in '" + data + "'");
}

void add_shared(CLI::App* app, Shared& shared, Overrides& overrides) {
  app->add_option("--config", shared.config_path, "key = value config file")
      ->check(CLI::ExistingFile);
  overrides.add(app, "--seed", "seed", "Base random seed");
  overrides.add(app, "--threads", "threads", "Worker threads");
  app->add_option("--set", shared.sets, "Override any config key (key=value)");
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"LTFormer visible/NIR patch descriptor: data generation, training, matching"};
  app.require_subcommand(1);

  Shared shared;

  // gen-data
  Overrides gen_over;
  std::string gen_out;
  bool synthetic = false;
  std::vector<std::string> user_pairs;
  CLI::App* gen = app.add_subcommand("gen-data", "Write source pairs and a triplet manifest");
  add_shared(gen, shared, gen_over);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_flag("--synthetic", synthetic, "Generate synthetic pairs (default without --pair)");
  gen->add_option("--pair", user_pairs, "Registered visible and NIR image (repeatable)")
      ->expected(2)
      ->check(CLI::ExistingFile);
  gen_over.add(gen, "--pairs", "pairs", "Number of synthetic pairs");
  gen_over.add(gen, "--pair-size", "pair_size", "Synthetic pair side length");
  gen_over.add(gen, "--triplets", "triplets", "Total triplet records");
  gen_over.add(gen, "--max-keypoints", "max_keypoints", "Keypoints kept per pair (0: all)");
  gen_over.add(gen, "--split-ratio", "split_ratio", "Fraction of pairs used for training");

  // train
  Overrides train_over;
  TrainOptions train_opts;
  std::string train_data;
  CLI::App* train = app.add_subcommand("train", "Train the descriptor network");
  add_shared(train, shared, train_over);
  train->add_option("--data", train_data, "Data directory or manifest file")->required();
  train->add_option("--out", train_opts.checkpoint_path, "Checkpoint to write")->required();
  train->add_option("--resume", train_opts.resume_path, "Checkpoint to resume from")
      ->check(CLI::ExistingFile);
  train->add_option("--log", train_opts.log_path, "Per-epoch loss log (CSV)");
  train_over.add(train, "--epochs", "epochs", "Epochs");
  train_over.add(train, "--batch-size", "batch_size", "Triplets per step");
  train_over.add(train, "--micro-batch", "micro_batch", "Triplets per forward pass");
  train_over.add(train, "--max-steps", "max_steps", "Stop after this many steps");
  train_over.add(train, "--lr", "lr", "Learning rate");
  train_over.add(train, "--momentum", "momentum", "Momentum");
  train_over.add(train, "--descriptor-dim", "descriptor_dim", "Descriptor length (64/128/256)");
  train_over.add(train, "--loss", "loss", "corrected or paper_literal");
  train_over.add(train, "--checkpoint-every", "checkpoint_every", "Epochs between checkpoints");

  // match
  Overrides match_over;
  std::string match_ckpt, image_a, image_b, match_prefix;
  CLI::App* match = app.add_subcommand("match", "Match keypoints between two images");
  add_shared(match, shared, match_over);
  match->add_option("--checkpoint", match_ckpt, "Trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  match->add_option("image_a", image_a, "First image (PGM/PPM)")->required();
  match->add_option("image_b", image_b, "Second image (PGM/PPM)")->required();
  match->add_option("--out", match_prefix, "Output prefix")->required();
  match_over.add(match, "--threshold", "threshold", "Maximum descriptor distance");
  match_over.add(match, "--eps", "eps", "Correctness radius in pixels");
  match_over.add(match, "--keypoints", "match_keypoints", "Keypoints per image");
  match_over.add_flag(match, "--mutual", "mutual", "Keep mutual nearest neighbours only");

  // evaluate
  Overrides eval_over;
  std::string eval_ckpt, eval_data;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Precision and matching score per pair");
  add_shared(evaluate, shared, eval_over);
  evaluate->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--data", eval_data, "Data directory or manifest file")->required();
  eval_over.add(evaluate, "--threshold", "threshold", "Maximum descriptor distance");
  eval_over.add(evaluate, "--eps", "eps", "Correctness radius in pixels");
  eval_over.add(evaluate, "--keypoints", "match_keypoints", "Keypoints per image");
  eval_over.add_flag(evaluate, "--mutual", "mutual", "Keep mutual nearest neighbours only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const RunConfig config = build_config(shared, gen_over);
      std::vector<UserPair> pairs;
      if (!user_pairs.empty()) {
        if (synthetic) throw ConfigError("--synthetic and --pair are mutually exclusive");
        for (size_t i = 0; i + 1 < user_pairs.size(); i += 2) {
          pairs.push_back({user_pairs[i], user_pairs[i + 1]});
        }
      }
      const GenDataResult r = cmd_gen_data(config, gen_out, pairs);
      std::cout << "wrote " << r.manifest.sources.size() << " pairs and "
                << r.manifest.triplets.size() << " triplets to " << r.manifest_path << '\n';
      if (!r.train_manifest_path.empty()) {
        std::cout << "split: " << r.train_manifest_path << ", " << r.val_manifest_path << '\n';
      }
    } else if (train->parsed()) {
      const RunConfig config = build_config(shared, train_over);
      train_opts.manifest_path =
          resolve_manifest(train_data, {"train_manifest.json", "manifest.json"});
      const TrainReport r = cmd_train(config, train_opts, &std::cerr);
      std::cout << "trained to step " << r.state.step << " epoch " << r.state.epoch
                << ", final loss " << r.final_loss << "; checkpoint "
                << train_opts.checkpoint_path << '\n';
    } else if (match->parsed()) {
      const RunConfig config = build_config(shared, match_over);
      const MatchReport r = cmd_match(match_ckpt, image_a, image_b, match_prefix, config);
      std::cout << r.result.accepted() << " matches (" << r.score.correct
                << " within eps of the identity); " << r.match_file << ", "
                << r.annotation_file << '\n';
    } else if (evaluate->parsed()) {
      const RunConfig config = build_config(shared, eval_over);
      const std::string manifest =
          resolve_manifest(eval_data, {"val_manifest.json", "manifest.json"});
      std::cout << format_eval_table(cmd_evaluate(eval_ckpt, manifest, config));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
