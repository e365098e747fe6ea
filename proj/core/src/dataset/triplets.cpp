#include "ltformer/dataset/triplets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ltformer/errors.hpp"

namespace ltformer {

std::vector<TransformKind> TransformSet::enabled() const {
  std::vector<TransformKind> kinds;
  if (identity) kinds.push_back(TransformKind::kIdentity);
  if (scale) kinds.push_back(TransformKind::kScale);
  if (rotate) kinds.push_back(TransformKind::kRotate);
  if (translate) kinds.push_back(TransformKind::kTranslate);
  return kinds;
}

std::array<int64_t, 4> DatasetManifest::transform_counts() const {
  std::array<int64_t, 4> counts{};
  for (const auto& t : triplets) ++counts[static_cast<size_t>(t.transform.kind)];
  return counts;
}

PatchTransform sample_transform(std::mt19937_64& rng, const TransformSet& set) {
  const auto kinds = set.enabled();
  if (kinds.empty()) throw ConfigError("at least one transform kind must be enabled");
  auto pick = [&rng](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  switch (kinds[static_cast<size_t>(pick(static_cast<int>(kinds.size())))]) {
    case TransformKind::kIdentity:
      return PatchTransform::identity();
    case TransformKind::kScale:
      return PatchTransform::scale(kScaleFactors[pick(5)]);
    case TransformKind::kRotate: {
      const double deg = kRotationDegrees[pick(3)];
      return PatchTransform::rotate(pick(2) == 0 ? deg : -deg);
    }
    case TransformKind::kTranslate: {
      const int dx = pick(2 * kMaxTranslation + 1) - kMaxTranslation;
      const int dy = pick(2 * kMaxTranslation + 1) - kMaxTranslation;
      return PatchTransform::translate(dx, dy);
    }
  }
  return PatchTransform::identity();
}

std::vector<TripletRecord> plan_triplets(const std::vector<Keypoint>& keypoints, int width,
                                         int height, int count, uint64_t seed, int source,
                                         const TripletOptions& options) {
  if (count < 1) throw DatasetError("triplet count must be >= 1");
  if (keypoints.size() < 2) {
    throw DatasetError("need at least 2 keypoints to form triplets, got " +
                       std::to_string(keypoints.size()));
  }
  if (options.transforms.enabled().empty()) {
    throw ConfigError("at least one transform kind must be enabled");
  }
  const double margin = transform_margin(options.geometry.window);
  const double min_dist2 =
      static_cast<double>(options.geometry.window) * options.geometry.window;
  const int n = static_cast<int>(keypoints.size());

  std::vector<int> anchors;
  std::vector<std::vector<int>> negatives(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Keypoint& a = keypoints[static_cast<size_t>(i)];
    if (a.x < margin || a.y < margin || a.x > width - 1 - margin || a.y > height - 1 - margin) {
      continue;
    }
    for (int j = 0; j < n; ++j) {
      const Keypoint& b = keypoints[static_cast<size_t>(j)];
      const double dx = a.x - b.x, dy = a.y - b.y;
      if (dx * dx + dy * dy > min_dist2) negatives[static_cast<size_t>(i)].push_back(j);
    }
    if (!negatives[static_cast<size_t>(i)].empty()) anchors.push_back(i);
  }
  if (anchors.empty()) {
    throw DatasetError("no keypoint has room for the transforms and a negative more than " +
                       std::to_string(options.geometry.window) + " px away");
  }
  std::mt19937_64 order_rng(seed);
  std::shuffle(anchors.begin(), anchors.end(), order_rng);

  std::vector<TripletRecord> out(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    TripletRecord& r = out[static_cast<size_t>(i)];
    r.source = source;
    r.seed = derive_seed(seed, static_cast<uint64_t>(i));
    std::mt19937_64 rng(r.seed);
    r.anchor = anchors[static_cast<size_t>(i) % anchors.size()];
    r.transform = sample_transform(rng, options.transforms);
    const auto& cand = negatives[static_cast<size_t>(r.anchor)];
    r.negative = cand[std::uniform_int_distribution<size_t>(0, cand.size() - 1)(rng)];
  }
  return out;
}

PatchTriplet make_triplet(const AlignedPair& pair, const std::vector<Keypoint>& keypoints,
                          const TripletRecord& record, PatchGeometry geometry) {
  const int n = static_cast<int>(keypoints.size());
  if (record.anchor < 0 || record.anchor >= n || record.negative < 0 || record.negative >= n) {
    throw DatasetError("triplet references keypoint outside [0," + std::to_string(n) + ")");
  }
  PatchTriplet t;
  t.meta = record;
  t.anchor_keypoint = keypoints[static_cast<size_t>(record.anchor)];
  t.negative_keypoint = keypoints[static_cast<size_t>(record.negative)];
  Keypoint aligned = t.anchor_keypoint;
  pair.alignment.apply(t.anchor_keypoint.x, t.anchor_keypoint.y, aligned.x, aligned.y);
  t.anchor = extract_patch(pair.visible, t.anchor_keypoint, geometry);
  t.positive = apply_transform(pair.nir, aligned, record.transform, geometry);
  t.negative = extract_patch(pair.nir, t.negative_keypoint, geometry);
  return t;
}

TripletBuild build_triplets(const AlignedPair& pair, const std::vector<Keypoint>& keypoints,
                            int count, uint64_t seed, const TripletOptions& options) {
  TripletBuild out;
  DatasetManifest& m = out.manifest;
  m.seed = seed;
  m.geometry = options.geometry;
  m.transforms = options.transforms;
  SourceEntry src;
  src.name = "pair";
  src.alignment = pair.alignment;
  src.keypoints = keypoints;
  m.sources.push_back(src);
  m.triplets = plan_triplets(keypoints, pair.visible.width, pair.visible.height, count, seed, 0,
                             options);
  out.triplets.reserve(m.triplets.size());
  for (const auto& r : m.triplets) {
    out.triplets.push_back(make_triplet(pair, keypoints, r, options.geometry));
  }
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, double ratio,
                                                  uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DatasetError("split ratio must lie in (0,1)");
  const int n = static_cast<int>(manifest.sources.size());
  const int first = static_cast<int>(std::lround(ratio * n));
  if (first < 1 || first >= n) {
    throw DatasetError("cannot split " + std::to_string(n) + " source pairs at ratio " +
                       std::to_string(ratio) + " with both sides non-empty");
  }
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> a(order.begin(), order.begin() + first), b(order.begin() + first, order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  auto subset = [&](const std::vector<int>& keep) {
    DatasetManifest m = manifest;
    m.sources.clear();
    m.triplets.clear();
    std::vector<int> remap(static_cast<size_t>(n), -1);
    for (int s : keep) {
      remap[static_cast<size_t>(s)] = static_cast<int>(m.sources.size());
      m.sources.push_back(manifest.sources[static_cast<size_t>(s)]);
    }
    for (const auto& t : manifest.triplets) {
      const int to = remap[static_cast<size_t>(t.source)];
      if (to < 0) continue;
      TripletRecord r = t;
      r.source = to;
      m.triplets.push_back(r);
    }
    return m;
  };
  return {subset(a), subset(b)};
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using json = nlohmann::ordered_json;
constexpr const char* kManifestFormat = "ltformer-manifest";
constexpr int kManifestVersion = 1;

json transform_json(const PatchTransform& t) {
  json j;
  j["kind"] = to_string(t.kind);
  switch (t.kind) {
    case TransformKind::kIdentity: break;
    case TransformKind::kScale: j["scale_factor"] = t.scale_factor; break;
    case TransformKind::kRotate: j["angle_deg"] = t.angle_deg; break;
    case TransformKind::kTranslate:
      j["dx"] = t.dx;
      j["dy"] = t.dy;
      break;
  }
  return j;
}

PatchTransform transform_from(const json& j) {
  PatchTransform t;
  t.kind = parse_transform_kind(j.at("kind").get<std::string>());
  if (t.kind == TransformKind::kScale) t.scale_factor = j.at("scale_factor").get<double>();
  if (t.kind == TransformKind::kRotate) t.angle_deg = j.at("angle_deg").get<double>();
  if (t.kind == TransformKind::kTranslate) {
    t.dx = j.at("dx").get<int>();
    t.dy = j.at("dy").get<int>();
  }
  t.validate();
  return t;
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format"] = kManifestFormat;
  j["version"] = kManifestVersion;
  j["seed"] = m.seed;
  j["window"] = m.geometry.window;
  j["out_size"] = m.geometry.out_size;
  j["clahe"] = {{"clip_limit", m.clahe.clip_limit}, {"grid", m.clahe.grid}};
  j["transforms"] = {{"identity", m.transforms.identity},
                     {"scale", m.transforms.scale},
                     {"rotate", m.transforms.rotate},
                     {"translate", m.transforms.translate}};
  j["triplet_count"] = m.triplets.size();
  const auto counts = m.transform_counts();
  j["transform_counts"] = {{"identity", counts[0]},
                           {"scale", counts[1]},
                           {"rotate", counts[2]},
                           {"translate", counts[3]}};
  json sources = json::array();
  for (const auto& s : m.sources) {
    json e;
    e["name"] = s.name;
    e["visible"] = s.visible_path;
    e["nir"] = s.nir_path;
    if (s.has_alignment) e["alignment"] = s.alignment.m;
    json kps = json::array();
    for (const auto& k : s.keypoints) kps.push_back({k.x, k.y, k.scale, k.response});
    e["keypoints"] = std::move(kps);
    sources.push_back(std::move(e));
  }
  j["sources"] = std::move(sources);
  json triplets = json::array();
  for (const auto& t : m.triplets) {
    json e;
    e["source"] = t.source;
    e["anchor"] = t.anchor;
    e["negative"] = t.negative;
    e["transform"] = transform_json(t.transform);
    e["seed"] = t.seed;
    triplets.push_back(std::move(e));
  }
  j["triplets"] = std::move(triplets);
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kManifestFormat) {
      throw DatasetError("not a dataset manifest");
    }
    if (j.at("version").get<int>() != kManifestVersion) {
      throw DatasetError("unsupported manifest version " + j.at("version").dump());
    }
    m.seed = j.at("seed").get<uint64_t>();
    m.geometry.window = j.at("window").get<int>();
    m.geometry.out_size = j.at("out_size").get<int>();
    m.clahe.clip_limit = j.at("clahe").at("clip_limit").get<double>();
    m.clahe.grid = j.at("clahe").at("grid").get<int>();
    const json& tr = j.at("transforms");
    m.transforms = {tr.at("identity").get<bool>(), tr.at("scale").get<bool>(),
                    tr.at("rotate").get<bool>(), tr.at("translate").get<bool>()};
    for (const auto& e : j.at("sources")) {
      SourceEntry s;
      s.name = e.at("name").get<std::string>();
      s.visible_path = e.at("visible").get<std::string>();
      s.nir_path = e.at("nir").get<std::string>();
      s.has_alignment = e.contains("alignment");
      if (s.has_alignment) s.alignment.m = e.at("alignment").get<std::array<double, 6>>();
      for (const auto& k : e.at("keypoints")) {
        s.keypoints.push_back({k.at(0).get<double>(), k.at(1).get<double>(),
                               k.at(2).get<double>(), k.at(3).get<double>()});
      }
      m.sources.push_back(std::move(s));
    }
    for (const auto& e : j.at("triplets")) {
      TripletRecord r;
      r.source = e.at("source").get<int>();
      r.anchor = e.at("anchor").get<int>();
      r.negative = e.at("negative").get<int>();
      r.transform = transform_from(e.at("transform"));
      r.seed = e.at("seed").get<uint64_t>();
      if (r.source < 0 || r.source >= static_cast<int>(m.sources.size())) {
        throw DatasetError("triplet source index " + std::to_string(r.source) + " out of range");
      }
      const int nk = static_cast<int>(m.sources[static_cast<size_t>(r.source)].keypoints.size());
      if (r.anchor < 0 || r.anchor >= nk || r.negative < 0 || r.negative >= nk ||
          r.anchor == r.negative) {
        throw DatasetError("triplet keypoint indices out of range");
      }
      m.triplets.push_back(r);
    }
    if (j.at("triplet_count").get<size_t>() != m.triplets.size()) {
      throw DatasetError("triplet_count does not match the number of records");
    }
    const auto counts = m.transform_counts();
    const json& jc = j.at("transform_counts");
    if (jc.at("identity").get<int64_t>() != counts[0] || jc.at("scale").get<int64_t>() != counts[1] ||
        jc.at("rotate").get<int64_t>() != counts[2] ||
        jc.at("translate").get<int64_t>() != counts[3]) {
      throw DatasetError("transform_counts disagree with the triplet records");
    }
  } catch (const json::exception& e) {
    throw DatasetError(std::string("corrupt manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DatasetError(std::string("corrupt manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << manifest_to_json(manifest);
  if (!out) throw IoError(path + ": write failed");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open manifest");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return manifest_from_json(ss.str());
  } catch (const DatasetError& e) {
    throw DatasetError(path + ": " + e.what());
  }
}

}  // namespace ltformer
