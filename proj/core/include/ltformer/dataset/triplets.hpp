#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ltformer/dataset/pair.hpp"
#include "ltformer/imaging/keypoints.hpp"
#include "ltformer/imaging/patch.hpp"
#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

/// Which transform kinds positives may be drawn from.
struct TransformSet {
  bool identity = true;
  bool scale = true;
  bool rotate = true;
  bool translate = true;

  std::vector<TransformKind> enabled() const;
  bool operator==(const TransformSet&) const = default;
};

/// Uniform over the enabled kinds, then uniform within the kind's set.
PatchTransform sample_transform(std::mt19937_64& rng, const TransformSet& set);

/// Everything needed to regenerate one triplet from its source pair.
struct TripletRecord {
  int source = 0;
  int anchor = 0;
  int negative = 0;
  PatchTransform transform;
  uint64_t seed = 0;

  bool operator==(const TripletRecord&) const = default;
};

struct PatchTriplet {
  Tensor anchor;
  Tensor positive;
  Tensor negative;
  TripletRecord meta;
  Keypoint anchor_keypoint;
  Keypoint negative_keypoint;
};

struct SourceEntry {
  std::string name;
  std::string visible_path;
  std::string nir_path;
  Alignment alignment;
  bool has_alignment = true;
  std::vector<Keypoint> keypoints;

  bool operator==(const SourceEntry&) const = default;
};

struct DatasetManifest {
  uint64_t seed = 0;
  PatchGeometry geometry;
  ClaheParams clahe;
  TransformSet transforms;
  std::vector<SourceEntry> sources;
  std::vector<TripletRecord> triplets;

  /// Triplets per transform kind, indexed by TransformKind.
  std::array<int64_t, 4> transform_counts() const;
};

struct TripletOptions {
  PatchGeometry geometry;
  TransformSet transforms;
};

/// Draws `count` triplet records over one pair's keypoints. Anchors cycle
/// through a seeded permutation of the keypoints that leave room for every
/// transform; negatives are uniform over keypoints more than `window` px
/// from the anchor. Each record gets its own derived seed so records can be
/// produced in any order. Throws DatasetError with fewer than two keypoints
/// or when no anchor has an admissible negative.
std::vector<TripletRecord> plan_triplets(const std::vector<Keypoint>& keypoints,
                                         int width, int height, int count, uint64_t seed,
                                         int source, const TripletOptions& options);

/// Patches for one record: anchor from the visible image, positive from the
/// NIR image at the aligned location under the record's transform, negative
/// from the NIR image at the negative keypoint.
PatchTriplet make_triplet(const AlignedPair& pair, const std::vector<Keypoint>& keypoints,
                          const TripletRecord& record, PatchGeometry geometry);

struct TripletBuild {
  std::vector<PatchTriplet> triplets;
  DatasetManifest manifest;
};

/// plan_triplets + make_triplet for a single pair, with an in-memory
/// manifest naming the pair "pair".
TripletBuild build_triplets(const AlignedPair& pair, const std::vector<Keypoint>& keypoints,
                            int count, uint64_t seed, const TripletOptions& options = {});

/// Splits by source pair: a seeded shuffle of the sources, round(ratio * n)
/// of them to the first manifest. Throws DatasetError if either side would
/// be empty or ratio is outside (0,1).
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, double ratio,
                                                  uint64_t seed);

/// JSON persistence. Paths inside the manifest are relative to its
/// directory. Loading validates indices and transforms and throws
/// DatasetError on any inconsistency.
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace ltformer
