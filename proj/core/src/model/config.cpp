#include "ltformer/model/config.hpp"

#include <sstream>

#include "ltformer/errors.hpp"

namespace ltformer {

LTFormerConfig LTFormerConfig::lightweight(int descriptor_dim) {
  LTFormerConfig c;
  c.descriptor_dim = descriptor_dim;
  return c;
}

LTFormerConfig LTFormerConfig::pvt_v2_b0_widths(int descriptor_dim) {
  LTFormerConfig c = lightweight(descriptor_dim);
  const int widths[kNumStages] = {32, 64, 160, 256};
  for (int i = 0; i < kNumStages; ++i) c.stages[i].channels = widths[i];
  return c;
}

int LTFormerConfig::stage_resolution(int i) const {
  int res = input_size;
  for (int s = 0; s <= i; ++s) res /= stages[s].stride;
  return res;
}

void LTFormerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (descriptor_dim != 64 && descriptor_dim != 128 && descriptor_dim != 256) {
    fail("descriptor_dim must be one of 64, 128, 256 (got " +
         std::to_string(descriptor_dim) + ")");
  }
  int total_stride = 1;
  for (const auto& s : stages) {
    if (s.stride < 1) fail("stride must be >= 1");
    total_stride *= s.stride;
  }
  if (input_size < total_stride || input_size % total_stride != 0) {
    fail("input_size " + std::to_string(input_size) + " must be divisible by " +
         std::to_string(total_stride));
  }
  for (int i = 0; i < kNumStages; ++i) {
    const auto& s = stages[i];
    const std::string tag = "stage " + std::to_string(i + 1) + ": ";
    if (s.channels < 1 || s.num_heads < 1 || s.mlp_expansion < 1 || s.num_layers < 0) {
      fail(tag + "sizes must be positive");
    }
    if (s.channels % s.num_heads != 0) fail(tag + "channels not divisible by heads");
    if (s.reduction_ratio < 1) fail(tag + "reduction ratio must be >= 1");
    if (stage_resolution(i) % s.reduction_ratio != 0) {
      fail(tag + "token grid " + std::to_string(stage_resolution(i)) +
           " not divisible by reduction ratio " + std::to_string(s.reduction_ratio));
    }
  }
}

ShapeTable describe_shapes(const LTFormerConfig& config) {
  config.validate();
  ShapeTable table;
  table.descriptor_dim = config.descriptor_dim;
  int64_t in_ch = config.input_channels;
  for (int i = 0; i < LTFormerConfig::kNumStages; ++i) {
    const StageConfig& s = config.stages[i];
    const int64_t c = s.channels;
    const int64_t res = config.stage_resolution(i);
    const int64_t k = s.embed_kernel();
    const int64_t hidden = c * s.mlp_expansion;
    const std::string p = "stage" + std::to_string(i + 1) + ".";

    StageShapes& st = table.stages[i];
    st.index = i + 1;
    st.embed_output = {c, res, res};
    st.stage_output = {c, res, res};
    st.reduced_kv_grid = {res / s.reduction_ratio, res / s.reduction_ratio};
    st.num_heads = s.num_heads;
    st.reduction_ratio = s.reduction_ratio;
    st.num_layers = s.num_layers;
    st.hidden_channels = static_cast<int>(hidden);

    auto& ps = st.parameters;
    ps.push_back({p + "embed.weight", {c, in_ch, k, k}});
    ps.push_back({p + "embed.bias", {c}});
    ps.push_back({p + "embed.norm.gamma", {c}});
    ps.push_back({p + "embed.norm.beta", {c}});
    for (int l = 0; l < s.num_layers; ++l) {
      const std::string b = p + "block" + std::to_string(l + 1) + ".";
      ps.push_back({b + "norm1.gamma", {c}});
      ps.push_back({b + "norm1.beta", {c}});
      ps.push_back({b + "attn.q.weight", {c, c}});
      ps.push_back({b + "attn.q.bias", {c}});
      if (s.reduction_ratio > 1) {
        const int64_t r = s.reduction_ratio;
        ps.push_back({b + "attn.sr.weight", {c, c, r, r}});
        ps.push_back({b + "attn.sr.bias", {c}});
        ps.push_back({b + "attn.sr_norm.gamma", {c}});
        ps.push_back({b + "attn.sr_norm.beta", {c}});
      }
      ps.push_back({b + "attn.k.weight", {c, c}});
      ps.push_back({b + "attn.k.bias", {c}});
      ps.push_back({b + "attn.v.weight", {c, c}});
      ps.push_back({b + "attn.v.bias", {c}});
      ps.push_back({b + "attn.proj.weight", {c, c}});
      ps.push_back({b + "attn.proj.bias", {c}});
      ps.push_back({b + "norm2.gamma", {c}});
      ps.push_back({b + "norm2.beta", {c}});
      ps.push_back({b + "ffn.fc1.weight", {hidden, c}});
      ps.push_back({b + "ffn.fc1.bias", {hidden}});
      ps.push_back({b + "ffn.dwconv.weight", {hidden, 1, 3, 3}});
      ps.push_back({b + "ffn.dwconv.bias", {hidden}});
      ps.push_back({b + "ffn.fc2.weight", {c, hidden}});
      ps.push_back({b + "ffn.fc2.bias", {c}});
    }
    ps.push_back({p + "norm.gamma", {c}});
    ps.push_back({p + "norm.beta", {c}});
    in_ch = c;
  }
  table.head_parameters.push_back(
      {"head.proj.weight", {config.descriptor_dim, in_ch}});
  table.head_parameters.push_back({"head.proj.bias", {config.descriptor_dim}});
  return table;
}

std::vector<ParameterShape> ShapeTable::all_parameters() const {
  std::vector<ParameterShape> out;
  for (const auto& s : stages) out.insert(out.end(), s.parameters.begin(), s.parameters.end());
  out.insert(out.end(), head_parameters.begin(), head_parameters.end());
  return out;
}

int64_t ShapeTable::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : all_parameters()) n += shape_numel(p.shape);
  return n;
}

std::string ShapeTable::to_string() const {
  std::ostringstream os;
  for (const auto& s : stages) {
    os << "stage" << s.index << " output [B," << s.stage_output[0] << ','
       << s.stage_output[1] << ',' << s.stage_output[2] << "] heads " << s.num_heads
       << " reduction " << s.reduction_ratio << " kv_grid " << s.reduced_kv_grid[0]
       << 'x' << s.reduced_kv_grid[1] << " layers " << s.num_layers << " hidden "
       << s.hidden_channels << '\n';
    for (const auto& p : s.parameters) {
      os << "  " << p.name << ' ' << shape_to_string(p.shape) << '\n';
    }
  }
  os << "head output [B," << descriptor_dim << "]\n";
  for (const auto& p : head_parameters) {
    os << "  " << p.name << ' ' << shape_to_string(p.shape) << '\n';
  }
  os << "parameters " << parameter_count() << '\n';
  return os.str();
}

}  // namespace ltformer
