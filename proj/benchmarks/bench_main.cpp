#include <benchmark/benchmark.h>

#include <random>

#include "ltformer/dataset/pair.hpp"
#include "ltformer/imaging/clahe.hpp"
#include "ltformer/imaging/keypoints.hpp"
#include "ltformer/imaging/patch.hpp"
#include "ltformer/loss/lt_loss.hpp"
#include "ltformer/matching/match.hpp"
#include "ltformer/model/ltformer.hpp"
#include "ltformer/numerics/optimizer.hpp"
#include "ltformer/numerics/parallel.hpp"

using namespace ltformer;

namespace {

Tensor random_patches(int64_t batch, int64_t size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor x({batch, 1, size, size});
  for (auto& v : x.data()) v = u(rng);
  return x;
}

const AlignedPair& enhanced_pair() {
  static const AlignedPair pair = enhance(synth_pair(7, 512), ClaheParams{});
  return pair;
}

void BM_Forward(benchmark::State& state) {
  const LTFormerModel model = init_model(LTFormerConfig::lightweight(128), 1);
  const Tensor x = random_patches(state.range(0), 128, 2);
  Tape tape(false);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(tape, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  LTFormerModel model = init_model(LTFormerConfig::lightweight(128), 1);
  model.set_requires_grad(true);
  SgdMomentum opt(0.001, 0.9);
  const int64_t b = state.range(0);
  const Tensor a = random_patches(b, 128, 3), p = random_patches(b, 128, 4),
               n = random_patches(b, 128, 5);
  for (auto _ : state) {
    Tape tape;
    const Tensor loss =
        lt_loss(tape, TripletBatch{model.forward(tape, a), model.forward(tape, p),
                                   model.forward(tape, n)});
    backward(loss, tape);
    opt.step(model.parameters());
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_MatchNN(benchmark::State& state) {
  const int64_t n = state.range(0), d = 128;
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g;
  auto make = [&] {
    DescriptorSet s;
    s.descriptors = Tensor({n, d});
    for (int64_t i = 0; i < n; ++i) {
      float norm = 0;
      for (int64_t k = 0; k < d; ++k) {
        const float v = g(rng);
        s.descriptors[i * d + k] = v;
        norm += v * v;
      }
      for (int64_t k = 0; k < d; ++k) s.descriptors[i * d + k] /= std::sqrt(norm);
      s.keypoints.push_back({double(i), double(i), 1.6, 0.1});
    }
    return s;
  };
  const DescriptorSet a = make(), b = make();
  for (auto _ : state) benchmark::DoNotOptimize(match_nn(a, b, 0.5, true));
}
BENCHMARK(BM_MatchNN)->Arg(150)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_Clahe(benchmark::State& state) {
  const AlignedPair pair = synth_pair(7, 512);
  for (auto _ : state) benchmark::DoNotOptimize(clahe(pair.nir));
}
BENCHMARK(BM_Clahe)->Unit(benchmark::kMillisecond);

void BM_DetectKeypoints(benchmark::State& state) {
  const GrayImage& img = enhanced_pair().visible;
  for (auto _ : state) benchmark::DoNotOptimize(detect_keypoints(img, 150));
}
BENCHMARK(BM_DetectKeypoints)->Unit(benchmark::kMillisecond);

void BM_ExtractPatch(benchmark::State& state) {
  const GrayImage& img = enhanced_pair().visible;
  const Keypoint kp{256.3, 240.7, 1.6, 0.1};
  const PatchTransform rot = PatchTransform::rotate(10.0);
  for (auto _ : state) benchmark::DoNotOptimize(apply_transform(img, kp, rot));
}
BENCHMARK(BM_ExtractPatch)->Unit(benchmark::kMicrosecond);

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
