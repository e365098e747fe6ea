#include "ltformer/model/ltformer.hpp"

#include <cmath>
#include <random>

#include "ltformer/errors.hpp"
#include "ltformer/numerics/ops.hpp"

namespace ltformer {

template <typename T>
BasicLTFormer<T>::BasicLTFormer(LTFormerConfig config,
                                std::vector<BasicNamedTensor<T>> params)
    : config_(config), params_(std::move(params)) {
  const auto expected = describe_shapes(config_).all_parameters();
  if (expected.size() != params_.size()) {
    throw DimensionError("model expects " + std::to_string(expected.size()) +
                         " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    if (params_[i].name != expected[i].name) {
      throw DimensionError("parameter " + std::to_string(i) + " is '" + params_[i].name +
                           "', expected '" + expected[i].name + "'");
    }
    if (params_[i].tensor.shape() != expected[i].shape) {
      throw DimensionError("parameter '" + expected[i].name + "' has shape " +
                           shape_to_string(params_[i].tensor.shape()) + ", expected " +
                           shape_to_string(expected[i].shape));
    }
    index_[params_[i].name] = i;
  }
}

template <typename T>
const BasicTensor<T>& BasicLTFormer<T>::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second].tensor;
}

template <typename T>
void BasicLTFormer<T>::set_requires_grad(bool value) {
  for (auto& p : params_) p.tensor.set_requires_grad(value);
}

template <typename T>
void BasicLTFormer<T>::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
BasicLTFormer<T> BasicLTFormer<T>::clone() const {
  std::vector<BasicNamedTensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.tensor.clone()});
  return BasicLTFormer(config_, std::move(out));
}

template <typename T>
BasicTensor<T> BasicLTFormer<T>::forward(BasicTape<T>& tape,
                                         const BasicTensor<T>& patches) const {
  return run(tape, patches, nullptr);
}

template <typename T>
std::vector<Shape> BasicLTFormer<T>::stage_output_shapes(
    const BasicTensor<T>& patches) const {
  std::vector<Shape> shapes;
  BasicTape<T> tape(false);
  run(tape, patches, &shapes);
  return shapes;
}

template <typename T>
BasicTensor<T> BasicLTFormer<T>::run(BasicTape<T>& tape, const BasicTensor<T>& patches,
                                     std::vector<Shape>* stage_shapes) const {
  const int64_t s = config_.input_size;
  if (patches.rank() != 4 || patches.dim(1) != config_.input_channels ||
      patches.dim(2) != s || patches.dim(3) != s) {
    throw DimensionError("forward expects patches [B," +
                         std::to_string(config_.input_channels) + "," + std::to_string(s) +
                         "," + std::to_string(s) + "], got " +
                         shape_to_string(patches.shape()));
  }
  auto P = [this](const std::string& name) -> const BasicTensor<T>& {
    return parameter(name);
  };

  BasicTensor<T> x = ops::affine(tape, patches, 1.0 / kPixelStd, -kPixelMean / kPixelStd);
  BasicTensor<T> tokens;
  int64_t res = 0;
  for (int i = 0; i < LTFormerConfig::kNumStages; ++i) {
    const StageConfig& sc = config_.stages[i];
    const std::string p = "stage" + std::to_string(i + 1) + ".";
    x = ops::conv2d(tape, x, P(p + "embed.weight"), P(p + "embed.bias"), sc.stride,
                    sc.embed_padding());
    res = x.dim(2);
    tokens = ops::layer_norm(tape, ops::nchw_to_tokens(tape, x), P(p + "embed.norm.gamma"),
                             P(p + "embed.norm.beta"), kLayerNormEps);
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(sc.channels / sc.num_heads));

    for (int l = 0; l < sc.num_layers; ++l) {
      const std::string b = p + "block" + std::to_string(l + 1) + ".";
      // Spatial-reduction attention.
      BasicTensor<T> h = ops::layer_norm(tape, tokens, P(b + "norm1.gamma"),
                                         P(b + "norm1.beta"), kLayerNormEps);
      BasicTensor<T> q = ops::linear(tape, h, P(b + "attn.q.weight"), P(b + "attn.q.bias"));
      BasicTensor<T> kv_src = h;
      if (sc.reduction_ratio > 1) {
        BasicTensor<T> grid = ops::tokens_to_nchw(tape, h, res, res);
        grid = ops::conv2d(tape, grid, P(b + "attn.sr.weight"), P(b + "attn.sr.bias"),
                           sc.reduction_ratio, 0);
        kv_src = ops::layer_norm(tape, ops::nchw_to_tokens(tape, grid),
                                 P(b + "attn.sr_norm.gamma"), P(b + "attn.sr_norm.beta"),
                                 kLayerNormEps);
      }
      BasicTensor<T> k =
          ops::linear(tape, kv_src, P(b + "attn.k.weight"), P(b + "attn.k.bias"));
      BasicTensor<T> v =
          ops::linear(tape, kv_src, P(b + "attn.v.weight"), P(b + "attn.v.bias"));
      BasicTensor<T> scores = ops::affine(
          tape,
          ops::bmm(tape, ops::split_heads(tape, q, sc.num_heads),
                   ops::split_heads(tape, k, sc.num_heads), true),
          attn_scale);
      BasicTensor<T> ctx = ops::bmm(tape, ops::softmax(tape, scores),
                                    ops::split_heads(tape, v, sc.num_heads), false);
      BasicTensor<T> attn =
          ops::linear(tape, ops::merge_heads(tape, ctx, sc.num_heads),
                      P(b + "attn.proj.weight"), P(b + "attn.proj.bias"));
      tokens = ops::add(tape, tokens, attn);

      // Convolutional feed-forward.
      h = ops::layer_norm(tape, tokens, P(b + "norm2.gamma"), P(b + "norm2.beta"),
                          kLayerNormEps);
      h = ops::linear(tape, h, P(b + "ffn.fc1.weight"), P(b + "ffn.fc1.bias"));
      h = ops::depthwise_conv2d_tokens(tape, h, P(b + "ffn.dwconv.weight"),
                                       P(b + "ffn.dwconv.bias"), res, res);
      h = ops::gelu(tape, h);
      h = ops::linear(tape, h, P(b + "ffn.fc2.weight"), P(b + "ffn.fc2.bias"));
      tokens = ops::add(tape, tokens, h);
    }
    tokens = ops::layer_norm(tape, tokens, P(p + "norm.gamma"), P(p + "norm.beta"),
                             kLayerNormEps);
    x = ops::tokens_to_nchw(tape, tokens, res, res);
    if (stage_shapes != nullptr) stage_shapes->push_back(x.shape());
  }
  BasicTensor<T> pooled = ops::global_avg_pool(tape, x);
  BasicTensor<T> desc =
      ops::linear(tape, pooled, P("head.proj.weight"), P("head.proj.bias"));
  return ops::l2_normalize(tape, desc);
}

template class BasicLTFormer<float>;
template class BasicLTFormer<double>;

namespace {

bool is_weight(const std::string& name) {
  const std::string suffix = ".weight";
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_gain(const std::string& name) {
  const std::string suffix = ".gamma";
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

LTFormerModel init_model(const LTFormerConfig& config, uint64_t seed) {
  const auto shapes = describe_shapes(config).all_parameters();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kStd = 0.02;
  std::vector<NamedTensor> params;
  params.reserve(shapes.size());
  for (const auto& ps : shapes) {
    Tensor t(ps.shape);
    if (is_weight(ps.name)) {
      for (int64_t i = 0; i < t.numel(); ++i) {
        double z;
        do {
          z = normal(rng);
        } while (std::abs(z) > 2.0);
        t[i] = static_cast<float>(z * kStd);
      }
    } else if (is_gain(ps.name)) {
      std::fill(t.data().begin(), t.data().end(), 1.0f);
    }
    params.push_back({ps.name, t});
  }
  LTFormerModel model(config, std::move(params));
  model.set_requires_grad(true);
  return model;
}

}  // namespace ltformer
