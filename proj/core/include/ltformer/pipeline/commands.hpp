#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ltformer/matching/match.hpp"
#include "ltformer/pipeline/checkpoint.hpp"
#include "ltformer/pipeline/run_config.hpp"
#include "ltformer/pipeline/train.hpp"

namespace ltformer {

/// A registered visible/NIR pair supplied by the user. Without an explicit
/// alignment the pair is taken as pixel-aligned.
struct UserPair {
  std::string visible_path;
  std::string nir_path;
};

struct GenDataResult {
  DatasetManifest manifest;
  std::string manifest_path;
  /// Empty when there were too few sources to split.
  std::string train_manifest_path;
  std::string val_manifest_path;
};

/// Writes pairs/<name>_vis.pgm and pairs/<name>_nir.pgm, then manifest.json
/// and, with two or more sources, train_manifest.json / val_manifest.json.
/// Synthetic pairs are generated when `user_pairs` is empty.
GenDataResult cmd_gen_data(const RunConfig& config, const std::string& out_dir,
                           const std::vector<UserPair>& user_pairs = {});

struct TrainOptions {
  std::string manifest_path;
  std::string checkpoint_path;
  /// Resume from this checkpoint when non-empty.
  std::string resume_path;
  /// Epoch log `step,epoch,mean_loss`; `<log>.timing` gets `epoch,wall_ms`.
  std::string log_path;
};

/// Trains from scratch or resumes; checkpoints every config.checkpoint_every
/// epochs and at the end. Progress lines go to `progress` when given.
TrainReport cmd_train(const RunConfig& config, const TrainOptions& options,
                      std::ostream* progress = nullptr);

/// Detects the strongest keypoints of an enhanced image and describes them.
DescriptorSet describe_image(const LTFormerModel& model, const GrayImage& working,
                             const RunConfig& config, PatchGeometry geometry);

struct MatchReport {
  MatchResult result;
  MatchScore score;
  std::string match_file;
  std::string annotation_file;
};

/// Matches imgA against imgB with the checkpoint's model, scoring against
/// the identity alignment. Writes <prefix>_matches.csv and
/// <prefix>_matches.ppm. Image preprocessing follows the checkpoint's
/// training config; matcher settings come from `config`.
MatchReport cmd_match(const std::string& checkpoint_path, const std::string& image_a,
                      const std::string& image_b, const std::string& out_prefix,
                      const RunConfig& config);

struct PairMetrics {
  std::string name;
  int64_t keypoints_a = 0;
  int64_t keypoints_b = 0;
  MatchScore score;
};

struct EvalReport {
  int descriptor_dim = 0;
  std::vector<PairMetrics> pairs;
  double mean_precision = 0.0;
  double mean_matching_score = 0.0;
};

/// Scores every source of the manifest against its ground-truth alignment.
/// Throws DatasetError when a source has no alignment.
EvalReport cmd_evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                        const RunConfig& config);

/// Whitespace-aligned table, one row per pair plus a `mean` row.
std::string format_eval_table(const EvalReport& report);

}  // namespace ltformer
