#include "ltformer/pipeline/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "ltformer/errors.hpp"

namespace fs = std::filesystem;

namespace ltformer {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  }
}

std::string pair_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "pair%03d", index);
  return buf;
}

DetectorParams detector_with_border(double border) {
  DetectorParams p;
  p.border = border;
  return p;
}

}  // namespace

GenDataResult cmd_gen_data(const RunConfig& config, const std::string& out_dir,
                           const std::vector<UserPair>& user_pairs) {
  config.validate();
  const fs::path root(out_dir);
  ensure_dir(root / "pairs");

  const int n = user_pairs.empty() ? config.pairs : static_cast<int>(user_pairs.size());
  if (config.triplets < n) {
    throw ConfigError("triplets (" + std::to_string(config.triplets) +
                      ") must be at least the number of pairs (" + std::to_string(n) + ")");
  }
  GenDataResult out;
  DatasetManifest& m = out.manifest;
  m.seed = config.seed;
  m.geometry = config.geometry;
  m.clahe = config.clahe;
  m.transforms = config.transforms;
  const TripletOptions options{config.geometry, config.transforms};
  const DetectorParams detector =
      detector_with_border(transform_margin(config.geometry.window));

  for (int p = 0; p < n; ++p) {
    AlignedPair pair;
    if (user_pairs.empty()) {
      pair = synth_pair(derive_seed(config.seed, static_cast<uint64_t>(p)), config.pair_size);
    } else {
      pair.visible = load_image(user_pairs[static_cast<size_t>(p)].visible_path);
      pair.nir = load_image(user_pairs[static_cast<size_t>(p)].nir_path);
      if (pair.visible.width != pair.nir.width || pair.visible.height != pair.nir.height) {
        throw DatasetError("pair " + std::to_string(p) + ": visible and NIR sizes differ");
      }
    }
    SourceEntry src;
    src.name = pair_name(p);
    src.visible_path = "pairs/" + src.name + "_vis.pgm";
    src.nir_path = "pairs/" + src.name + "_nir.pgm";
    src.alignment = pair.alignment;
    save_pgm(pair.visible, (root / src.visible_path).string());
    save_pgm(pair.nir, (root / src.nir_path).string());

    const AlignedPair working = enhance(pair, config.clahe);
    src.keypoints = detect_keypoints(working.visible, config.max_keypoints, detector);
    const int count = config.triplets / n + (p < config.triplets % n ? 1 : 0);
    std::vector<TripletRecord> records;
    try {
      records = plan_triplets(src.keypoints, working.visible.width, working.visible.height, count,
                              derive_seed(config.seed, 0x7121E7000ULL + static_cast<uint64_t>(p)),
                              p, options);
    } catch (const DatasetError& e) {
      throw DatasetError(src.name + ": " + e.what());
    }
    m.sources.push_back(std::move(src));
    m.triplets.insert(m.triplets.end(), records.begin(), records.end());
  }

  out.manifest_path = (root / "manifest.json").string();
  save_manifest(m, out.manifest_path);
  if (n >= 2) {
    const auto [train, val] = split(m, config.split_ratio, config.seed);
    out.train_manifest_path = (root / "train_manifest.json").string();
    out.val_manifest_path = (root / "val_manifest.json").string();
    save_manifest(train, out.train_manifest_path);
    save_manifest(val, out.val_manifest_path);
  }
  return out;
}

TrainReport cmd_train(const RunConfig& config, const TrainOptions& options,
                      std::ostream* progress) {
  config.validate();
  if (options.checkpoint_path.empty()) throw ConfigError("no output checkpoint path given");
  const DatasetManifest manifest = load_manifest(options.manifest_path);
  const TripletSource data(manifest, fs::path(options.manifest_path).parent_path().string());

  Checkpoint ckpt;
  ckpt.run_config = config;
  TrainState start;
  SgdMomentum optimizer(config.lr, config.momentum);
  LTFormerModel model;
  if (!options.resume_path.empty()) {
    Checkpoint prev = load_checkpoint(options.resume_path);
    if (prev.model_config.descriptor_dim != config.descriptor_dim ||
        prev.model_config.input_size != config.geometry.out_size) {
      throw DimensionError("cannot resume: checkpoint has descriptor_dim " +
                           std::to_string(prev.model_config.descriptor_dim) + " and input " +
                           std::to_string(prev.model_config.input_size) +
                           ", config asks for " + std::to_string(config.descriptor_dim) +
                           " and " + std::to_string(config.geometry.out_size));
    }
    ckpt.model_config = prev.model_config;
    ckpt.parameters = prev.parameters;
    model = ckpt.model();
    optimizer.set_velocity(prev.velocity);
    start.step = prev.step;
    start.epoch = prev.epoch;
    ckpt.final_loss = prev.final_loss;
  } else {
    ckpt.model_config = LTFormerConfig::lightweight(config.descriptor_dim);
    ckpt.model_config.input_size = config.geometry.out_size;
    model = init_model(ckpt.model_config, config.seed);
    ckpt.parameters = model.parameters();
  }
  model.set_requires_grad(true);

  std::ofstream log, timing;
  if (!options.log_path.empty()) {
    const bool append = !options.resume_path.empty() && fs::exists(options.log_path);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    log.open(options.log_path, std::ios::out | mode);
    timing.open(options.log_path + ".timing", std::ios::out | mode);
    if (!log || !timing) throw IoError("cannot write training log '" + options.log_path + "'");
    if (!append) {
      log << "step,epoch,mean_loss\n";
      timing << "epoch,wall_ms\n";
    }
  }

  auto save = [&](const TrainState& state, double loss) {
    ckpt.step = state.step;
    ckpt.epoch = state.epoch;
    ckpt.final_loss = loss;
    ckpt.velocity = optimizer.velocity();
    save_checkpoint(ckpt, options.checkpoint_path);
  };

  TrainReport report = train_model(
      model, optimizer, data, config, start, [&](const EpochLog& e, const TrainState& state) {
        if (log.is_open()) {
          log << e.step << ',' << e.epoch << ',' << format_double(e.mean_loss) << '\n';
          log.flush();
          timing << e.epoch << ',' << e.wall_ms << '\n';
          timing.flush();
        }
        if (progress != nullptr) {
          *progress << "epoch " << e.epoch << " step " << e.step << " loss " << e.mean_loss
                    << " (" << static_cast<int64_t>(e.wall_ms) << " ms)\n";
          progress->flush();
        }
        if (e.epoch % config.checkpoint_every == 0) save(state, e.mean_loss);
      });
  if (report.epochs.empty()) report.final_loss = ckpt.final_loss;
  save(report.state, report.final_loss);
  return report;
}

DescriptorSet describe_image(const LTFormerModel& model, const GrayImage& working,
                             const RunConfig& config, PatchGeometry geometry) {
  DescriptorSet set;
  set.keypoints = detect_keypoints(working, config.match_keypoints,
                                   detector_with_border(patch_margin(geometry.window)));
  if (set.keypoints.empty()) {
    throw MatchingError("no keypoints detected in a " + std::to_string(working.width) + "x" +
                        std::to_string(working.height) + " image");
  }
  set.descriptors = compute_descriptors(model, working, set.keypoints, geometry);
  return set;
}

MatchReport cmd_match(const std::string& checkpoint_path, const std::string& image_a,
                      const std::string& image_b, const std::string& out_prefix,
                      const RunConfig& config) {
  config.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const LTFormerModel model = ckpt.model();
  const RunConfig& trained = ckpt.run_config;

  const GrayImage raw_a = load_image(image_a);
  const GrayImage raw_b = load_image(image_b);
  const GrayImage a = clahe(raw_a, trained.clahe);
  const GrayImage b = clahe(raw_b, trained.clahe);
  DescriptorSet da, db;
  try {
    da = describe_image(model, a, config, trained.geometry);
  } catch (const MatchingError& e) {
    throw MatchingError(image_a + ": " + e.what());
  }
  try {
    db = describe_image(model, b, config, trained.geometry);
  } catch (const MatchingError& e) {
    throw MatchingError(image_b + ": " + e.what());
  }

  MatchReport report;
  const Alignment gt = Alignment::identity();
  report.result = match_nn(da, db, config.threshold, config.mutual);
  report.score = score(report.result, gt, config.eps);
  const fs::path parent = fs::path(out_prefix).parent_path();
  if (!parent.empty()) ensure_dir(parent);
  report.match_file = out_prefix + "_matches.csv";
  report.annotation_file = out_prefix + "_matches.ppm";
  write_match_file(report.match_file, report.result, gt, config.eps);
  save_ppm(annotate_matches(raw_a, raw_b, report.result, gt, config.eps).image,
           report.annotation_file);
  return report;
}

EvalReport cmd_evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                        const RunConfig& config) {
  config.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const LTFormerModel model = ckpt.model();
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (manifest.sources.empty()) throw DatasetError("manifest lists no source pairs");
  const std::string base = fs::path(manifest_path).parent_path().string();

  EvalReport report;
  report.descriptor_dim = model.config().descriptor_dim;
  for (const auto& src : manifest.sources) {
    if (!src.has_alignment) {
      throw DatasetError("source '" + src.name + "' has no ground-truth alignment");
    }
    const AlignedPair working = enhance(load_source_pair(src, base), manifest.clahe);
    PairMetrics row;
    row.name = src.name;
    const DescriptorSet a = describe_image(model, working.visible, config, manifest.geometry);
    const DescriptorSet b = describe_image(model, working.nir, config, manifest.geometry);
    row.keypoints_a = a.size();
    row.keypoints_b = b.size();
    row.score = score(match_nn(a, b, config.threshold, config.mutual), src.alignment, config.eps);
    report.pairs.push_back(row);
  }
  for (const auto& r : report.pairs) {
    report.mean_precision += r.score.precision;
    report.mean_matching_score += r.score.matching_score;
  }
  report.mean_precision /= static_cast<double>(report.pairs.size());
  report.mean_matching_score /= static_cast<double>(report.pairs.size());
  return report;
}

std::string format_eval_table(const EvalReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "descriptor_dim %d\n", report.descriptor_dim);
  out += line;
  std::snprintf(line, sizeof line, "%-12s %6s %6s %8s %8s %10s %14s\n", "pair", "kp_a", "kp_b",
                "accepted", "correct", "precision", "matching_score");
  out += line;
  for (const auto& r : report.pairs) {
    std::snprintf(line, sizeof line, "%-12s %6lld %6lld %8lld %8lld %10.4f %14.4f\n",
                  r.name.c_str(), static_cast<long long>(r.keypoints_a),
                  static_cast<long long>(r.keypoints_b), static_cast<long long>(r.score.accepted),
                  static_cast<long long>(r.score.correct), r.score.precision,
                  r.score.matching_score);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %6s %6s %8s %8s %10.4f %14.4f\n", "mean", "", "", "",
                "", report.mean_precision, report.mean_matching_score);
  out += line;
  return out;
}

}  // namespace ltformer
