#include "ltformer/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>
#include <random>

#include "ltformer/errors.hpp"
#include "ltformer/loss/lt_loss.hpp"
#include "ltformer/numerics/ops.hpp"
#include "ltformer/numerics/parallel.hpp"

namespace ltformer {

AlignedPair load_source_pair(const SourceEntry& source, const std::string& base_dir) {
  const std::filesystem::path base(base_dir);
  AlignedPair pair;
  pair.visible = load_image((base / source.visible_path).string());
  pair.nir = load_image((base / source.nir_path).string());
  if (pair.visible.width != pair.nir.width || pair.visible.height != pair.nir.height) {
    throw DatasetError("source '" + source.name + "': visible and NIR sizes differ");
  }
  pair.alignment = source.alignment;
  return pair;
}

TripletSource::TripletSource(DatasetManifest manifest, const std::string& base_dir)
    : manifest_(std::move(manifest)) {
  pairs_.reserve(manifest_.sources.size());
  for (const auto& s : manifest_.sources) {
    pairs_.push_back(enhance(load_source_pair(s, base_dir), manifest_.clahe));
  }
}

PatchTriplet TripletSource::get(size_t index) const {
  const TripletRecord& r = manifest_.triplets.at(index);
  return make_triplet(pairs_[static_cast<size_t>(r.source)],
                      manifest_.sources[static_cast<size_t>(r.source)].keypoints, r,
                      manifest_.geometry);
}

namespace {

struct PatchBatch {
  Tensor anchor, positive, negative;
};

// Stacks the triplets at `indices` into three [m,1,S,S] tensors.
PatchBatch gather(const TripletSource& data, const size_t* indices, int64_t m) {
  const int64_t side = data.manifest().geometry.out_size;
  const int64_t plane = side * side;
  PatchBatch b{Tensor({m, 1, side, side}), Tensor({m, 1, side, side}),
               Tensor({m, 1, side, side})};
  parallel_for(m, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const PatchTriplet t = data.get(indices[i]);
      std::copy(t.anchor.ptr(), t.anchor.ptr() + plane, b.anchor.ptr() + i * plane);
      std::copy(t.positive.ptr(), t.positive.ptr() + plane, b.positive.ptr() + i * plane);
      std::copy(t.negative.ptr(), t.negative.ptr() + plane, b.negative.ptr() + i * plane);
    }
  });
  return b;
}

// Forward + backward of one chunk; returns the chunk's summed loss.
double run_chunk(const LTFormerModel& model, const TripletSource& data, const size_t* indices,
                 int64_t m, int64_t batch, LossMode mode, bool learn) {
  const PatchBatch pb = gather(data, indices, m);
  Tape tape(learn);
  TripletBatch tb{model.forward(tape, pb.anchor), model.forward(tape, pb.positive),
                  model.forward(tape, pb.negative)};
  const Tensor loss = lt_loss(tape, tb, mode);
  if (learn) {
    const Tensor scaled =
        ops::affine(tape, loss, static_cast<double>(m) / static_cast<double>(batch));
    backward(scaled, tape);
  }
  return static_cast<double>(loss.item()) * static_cast<double>(m);
}

void check_data(const LTFormerModel& model, const TripletSource& data) {
  if (data.size() == 0) throw DatasetError("no triplets to train on");
  if (data.manifest().geometry.out_size != model.config().input_size) {
    throw DimensionError("dataset patches are " +
                         std::to_string(data.manifest().geometry.out_size) +
                         " px but the model expects " +
                         std::to_string(model.config().input_size));
  }
}

}  // namespace

TrainReport train_model(LTFormerModel& model, SgdMomentum& optimizer, const TripletSource& data,
                        const RunConfig& config, TrainState start,
                        const EpochCallback& on_epoch) {
  config.validate();
  check_data(model, data);
  const size_t n = data.size();
  if (static_cast<size_t>(config.batch_size) > n) {
    throw ConfigError("batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(n) + " available triplets");
  }
  TrainReport report;
  report.state = start;
  std::vector<size_t> order(n);
  while (report.state.epoch < config.epochs &&
         (config.max_steps == 0 || report.state.step < config.max_steps)) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(derive_seed(config.seed, 0x5EED0000ULL + static_cast<uint64_t>(report.state.epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(config.batch_size)) {
      if (config.max_steps > 0 && report.state.step >= config.max_steps) break;
      const int64_t batch = static_cast<int64_t>(std::min(n - b0, static_cast<size_t>(config.batch_size)));
      double batch_sum = 0.0;
      for (int64_t c0 = 0; c0 < batch; c0 += config.micro_batch) {
        const int64_t m = std::min<int64_t>(config.micro_batch, batch - c0);
        batch_sum += run_chunk(model, data, order.data() + b0 + c0, m, batch, config.loss, true);
      }
      optimizer.step(model.parameters());
      ++report.state.step;
      loss_sum += batch_sum;
      seen += static_cast<size_t>(batch);
    }
    ++report.state.epoch;
    EpochLog log;
    log.step = report.state.step;
    log.epoch = report.state.epoch;
    log.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(log);
    report.final_loss = log.mean_loss;
    if (on_epoch) on_epoch(log, report.state);
  }
  return report;
}

double evaluate_loss(const LTFormerModel& model, const TripletSource& data,
                     const std::vector<size_t>& indices, LossMode mode, int micro_batch) {
  check_data(model, data);
  if (indices.empty()) throw ContractError("evaluate_loss: no triplets given");
  if (micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  double sum = 0.0;
  const int64_t total = static_cast<int64_t>(indices.size());
  for (int64_t c0 = 0; c0 < total; c0 += micro_batch) {
    const int64_t m = std::min<int64_t>(micro_batch, total - c0);
    sum += run_chunk(model, data, indices.data() + c0, m, total, mode, false);
  }
  return sum / static_cast<double>(total);
}

Tensor compute_descriptors(const LTFormerModel& model, const GrayImage& working,
                           const std::vector<Keypoint>& keypoints, PatchGeometry geometry,
                           int chunk) {
  if (chunk < 1) throw ConfigError("descriptor chunk must be >= 1");
  if (geometry.out_size != model.config().input_size) {
    throw DimensionError("patch size " + std::to_string(geometry.out_size) +
                         " does not match model input " +
                         std::to_string(model.config().input_size));
  }
  const int64_t n = static_cast<int64_t>(keypoints.size());
  const int64_t dim = model.config().descriptor_dim;
  const int64_t side = geometry.out_size, plane = side * side;
  Tensor out({n, dim});
  for (int64_t c0 = 0; c0 < n; c0 += chunk) {
    const int64_t m = std::min<int64_t>(chunk, n - c0);
    Tensor patches({m, 1, side, side});
    parallel_for(m, [&](int64_t begin, int64_t end) {
      for (int64_t i = begin; i < end; ++i) {
        const Tensor p = extract_patch(working, keypoints[static_cast<size_t>(c0 + i)], geometry);
        std::copy(p.ptr(), p.ptr() + plane, patches.ptr() + i * plane);
      }
    });
    Tape tape(false);
    const Tensor d = model.forward(tape, patches);
    std::copy(d.ptr(), d.ptr() + m * dim, out.ptr() + c0 * dim);
  }
  return out;
}

}  // namespace ltformer
