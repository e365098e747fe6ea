#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ltformer/dataset/triplets.hpp"
#include "ltformer/model/ltformer.hpp"
#include "ltformer/numerics/optimizer.hpp"
#include "ltformer/pipeline/run_config.hpp"

namespace ltformer {

/// Triplets regenerated on demand from a manifest and its source images.
class TripletSource {
 public:
  /// Loads every source pair (paths relative to base_dir) and applies the
  /// manifest's contrast enhancement. Throws IoError / DatasetError.
  TripletSource(DatasetManifest manifest, const std::string& base_dir);

  size_t size() const { return manifest_.triplets.size(); }
  PatchTriplet get(size_t index) const;
  const DatasetManifest& manifest() const { return manifest_; }
  const AlignedPair& working_pair(int source) const {
    return pairs_[static_cast<size_t>(source)];
  }

 private:
  DatasetManifest manifest_;
  std::vector<AlignedPair> pairs_;
};

/// Reads the registered pair of one manifest source.
AlignedPair load_source_pair(const SourceEntry& source, const std::string& base_dir);

struct EpochLog {
  int64_t step = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainState {
  int64_t step = 0;
  /// Completed epochs.
  int epoch = 0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  TrainState state;
  double final_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&, const TrainState&)>;

/// Mini-batch SGD over the source's triplets.
///
/// Each epoch visits the triplets in a permutation seeded by (seed, epoch),
/// so a resumed run sees the same batches as an uninterrupted one. A batch
/// is processed in chunks of micro_batch triplets whose gradients
/// accumulate before a single optimizer step; the loss of the batch is the
/// mean over all its triplets. Training stops after config.epochs epochs
/// or config.max_steps steps, whichever comes first.
TrainReport train_model(LTFormerModel& model, SgdMomentum& optimizer, const TripletSource& data,
                        const RunConfig& config, TrainState start,
                        const EpochCallback& on_epoch = {});

/// Mean loss over `indices` without updating anything.
double evaluate_loss(const LTFormerModel& model, const TripletSource& data,
                     const std::vector<size_t>& indices, LossMode mode, int micro_batch);

/// Descriptors of the patches around `keypoints`, computed in chunks of
/// `chunk` patches on a non-recording tape.
Tensor compute_descriptors(const LTFormerModel& model, const GrayImage& working,
                           const std::vector<Keypoint>& keypoints, PatchGeometry geometry,
                           int chunk = 32);

}  // namespace ltformer
