#include "ltformer/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ltformer/errors.hpp"

namespace ltformer {

namespace {

constexpr const char* kMagic = "LTFORMER-CHECKPOINT";
constexpr const char* kVelocityPrefix = "velocity/";

void append_floats(std::string& out, const Tensor& t) {
  const size_t n = static_cast<size_t>(t.numel());
  const size_t start = out.size();
  out.resize(start + 4 * n);
  char* dst = out.data() + start;
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits = std::bit_cast<uint32_t>(t[static_cast<int64_t>(i)]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(dst + 4 * i, &bits, 4);
  }
}

void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
  out += "tensor " + name + " " + std::to_string(t.rank());
  for (int64_t d : t.shape()) out += " " + std::to_string(d);
  out += "\n";
  append_floats(out, t);
  out += "\n";
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin) : s_(bytes), origin_(origin) {}

  bool done() const { return pos_ >= s_.size(); }

  std::string line() {
    const auto nl = s_.find('\n', pos_);
    if (nl == std::string::npos) fail("truncated (missing newline)");
    std::string out = s_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  Tensor floats(const Shape& shape) {
    const size_t n = static_cast<size_t>(shape_numel(shape));
    if (s_.size() - pos_ < 4 * n + 1) fail("truncated tensor data");
    std::vector<float> data(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits;
      std::memcpy(&bits, s_.data() + pos_ + 4 * i, 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      data[i] = std::bit_cast<float>(bits);
    }
    pos_ += 4 * n;
    if (s_[pos_] != '\n') fail("tensor data not terminated");
    ++pos_;
    return Tensor(shape, std::move(data));
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(origin_ + ": " + msg);
  }

 private:
  const std::string& s_;
  const std::string& origin_;
  size_t pos_ = 0;
};

std::string stage_text(const StageConfig& s) {
  return std::to_string(s.stride) + "," + std::to_string(s.channels) + "," +
         std::to_string(s.reduction_ratio) + "," + std::to_string(s.num_heads) + "," +
         std::to_string(s.mlp_expansion) + "," + std::to_string(s.num_layers);
}

StageConfig parse_stage(const std::string& v, const Reader& r) {
  StageConfig s;
  int* fields[] = {&s.stride, &s.channels, &s.reduction_ratio, &s.num_heads, &s.mlp_expansion,
                   &s.num_layers};
  std::istringstream in(v);
  for (int i = 0; i < 6; ++i) {
    std::string tok;
    if (!std::getline(in, tok, ',')) r.fail("bad stage entry '" + v + "'");
    try {
      *fields[i] = std::stoi(tok);
    } catch (const std::exception&) {
      r.fail("bad stage entry '" + v + "'");
    }
  }
  return s;
}

}  // namespace

LTFormerModel Checkpoint::model() const { return LTFormerModel(model_config, parameters); }

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out;
  out += std::string(kMagic) + "\n";
  out += "format_version = " + std::to_string(Checkpoint::kFormatVersion) + "\n";
  out += "model.input_size = " + std::to_string(c.model_config.input_size) + "\n";
  out += "model.input_channels = " + std::to_string(c.model_config.input_channels) + "\n";
  out += "model.descriptor_dim = " + std::to_string(c.model_config.descriptor_dim) + "\n";
  for (int i = 0; i < LTFormerConfig::kNumStages; ++i) {
    out += "model.stage" + std::to_string(i + 1) + " = " +
           stage_text(c.model_config.stages[static_cast<size_t>(i)]) + "\n";
  }
  out += "state.step = " + std::to_string(c.step) + "\n";
  out += "state.epoch = " + std::to_string(c.epoch) + "\n";
  out += "state.final_loss = " + format_double(c.final_loss) + "\n";
  std::istringstream run(to_text(c.run_config));
  for (std::string line; std::getline(run, line);) out += "run." + line + "\n";
  out += "end\n";
  for (const auto& p : c.parameters) append_tensor(out, p.name, p.tensor);
  for (const auto& p : c.parameters) {
    const auto it = c.velocity.find(p.name);
    if (it != c.velocity.end()) append_tensor(out, kVelocityPrefix + p.name, it->second);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.line() != kMagic) r.fail("not an ltformer checkpoint");
  Checkpoint c;
  std::string run_text;
  bool have_version = false;
  for (;;) {
    const std::string line = r.line();
    if (line == "end") break;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) r.fail("bad metadata line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    try {
      if (key == "format_version") {
        if (std::stoi(value) != Checkpoint::kFormatVersion) {
          r.fail("unsupported format version " + value);
        }
        have_version = true;
      } else if (key == "model.input_size") {
        c.model_config.input_size = std::stoi(value);
      } else if (key == "model.input_channels") {
        c.model_config.input_channels = std::stoi(value);
      } else if (key == "model.descriptor_dim") {
        c.model_config.descriptor_dim = std::stoi(value);
      } else if (key.rfind("model.stage", 0) == 0 && key.size() == 12) {
        const int idx = key[11] - '1';
        if (idx < 0 || idx >= LTFormerConfig::kNumStages) r.fail("bad stage key '" + key + "'");
        c.model_config.stages[static_cast<size_t>(idx)] = parse_stage(value, r);
      } else if (key == "state.step") {
        c.step = std::stoll(value);
      } else if (key == "state.epoch") {
        c.epoch = std::stoi(value);
      } else if (key == "state.final_loss") {
        c.final_loss = std::stod(value);
      } else if (key.rfind("run.", 0) == 0) {
        run_text += key.substr(4) + " = " + value + "\n";
      } else {
        r.fail("unknown metadata key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      r.fail("bad value for '" + key + "'");
    } catch (const std::out_of_range&) {
      r.fail("value out of range for '" + key + "'");
    }
  }
  if (!have_version) r.fail("missing format_version");
  try {
    c.run_config = parse_run_config(run_text);
    c.model_config.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }

  std::map<std::string, Tensor> velocity;
  while (!r.done()) {
    std::istringstream header(r.line());
    std::string word, name;
    int rank = -1;
    header >> word >> name >> rank;
    if (word != "tensor" || name.empty() || rank < 0 || rank > 8) r.fail("bad tensor header");
    Shape shape(static_cast<size_t>(rank));
    for (auto& d : shape) {
      if (!(header >> d) || d < 0) r.fail("bad shape for tensor '" + name + "'");
    }
    Tensor t = r.floats(shape);
    if (name.rfind(kVelocityPrefix, 0) == 0) {
      velocity[name.substr(std::strlen(kVelocityPrefix))] = t;
    } else {
      c.parameters.push_back({name, t});
    }
  }
  // Validates names and shapes against the config.
  const LTFormerModel model(c.model_config, c.parameters);
  for (const auto& [name, v] : velocity) {
    if (v.shape() != model.parameter(name).shape()) {
      throw DimensionError(origin + ": velocity for '" + name + "' has shape " +
                           shape_to_string(v.shape()));
    }
  }
  c.velocity = std::move(velocity);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never leaves a torn file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open checkpoint");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace ltformer
