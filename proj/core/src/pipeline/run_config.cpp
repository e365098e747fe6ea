#include "ltformer/pipeline/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ltformer/errors.hpp"

namespace ltformer {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter number(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.*field = parse_number<T>(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"descriptor_dim", number(&RunConfig::descriptor_dim)},
      {"lr", number(&RunConfig::lr)},
      {"momentum", number(&RunConfig::momentum)},
      {"batch_size", number(&RunConfig::batch_size)},
      {"epochs", number(&RunConfig::epochs)},
      {"micro_batch", number(&RunConfig::micro_batch)},
      {"max_steps", number(&RunConfig::max_steps)},
      {"checkpoint_every", number(&RunConfig::checkpoint_every)},
      {"loss", [](RunConfig& c, const std::string&, const std::string& v) { c.loss = parse_loss_mode(v); }},
      {"seed", number(&RunConfig::seed)},
      {"pairs", number(&RunConfig::pairs)},
      {"pair_size", number(&RunConfig::pair_size)},
      {"triplets", number(&RunConfig::triplets)},
      {"max_keypoints", number(&RunConfig::max_keypoints)},
      {"split_ratio", number(&RunConfig::split_ratio)},
      {"transform.identity", [](RunConfig& c, const std::string& k, const std::string& v) { c.transforms.identity = parse_bool(k, v); }},
      {"transform.scale", [](RunConfig& c, const std::string& k, const std::string& v) { c.transforms.scale = parse_bool(k, v); }},
      {"transform.rotate", [](RunConfig& c, const std::string& k, const std::string& v) { c.transforms.rotate = parse_bool(k, v); }},
      {"transform.translate", [](RunConfig& c, const std::string& k, const std::string& v) { c.transforms.translate = parse_bool(k, v); }},
      {"window", [](RunConfig& c, const std::string& k, const std::string& v) { c.geometry.window = parse_number<int>(k, v); }},
      {"out_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.geometry.out_size = parse_number<int>(k, v); }},
      {"clahe_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.clahe.clip_limit = parse_number<double>(k, v); }},
      {"clahe_grid", [](RunConfig& c, const std::string& k, const std::string& v) { c.clahe.grid = parse_number<int>(k, v); }},
      {"threshold", number(&RunConfig::threshold)},
      {"eps", number(&RunConfig::eps)},
      {"mutual", [](RunConfig& c, const std::string& k, const std::string& v) { c.mutual = parse_bool(k, v); }},
      {"match_keypoints", number(&RunConfig::match_keypoints)},
      {"threads", number(&RunConfig::threads)},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid run config: " + m); };
  if (descriptor_dim != 64 && descriptor_dim != 128 && descriptor_dim != 256) {
    fail("descriptor_dim must be 64, 128 or 256");
  }
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0,1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (micro_batch < 1) fail("micro_batch must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (pairs < 1) fail("pairs must be >= 1");
  if (pair_size < 256) fail("pair_size must be >= 256");
  if (triplets < 1) fail("triplets must be >= 1");
  if (max_keypoints < 0) fail("max_keypoints must be >= 0");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail("split_ratio must lie in (0,1)");
  if (transforms.enabled().empty()) fail("at least one transform must be enabled");
  if (geometry.window < 2 || geometry.out_size < 1) fail("window must be >= 2, out_size >= 1");
  if (!(clahe.clip_limit > 0.0) || clahe.grid < 1) fail("clahe_clip must be > 0, clahe_grid >= 1");
  if (!(threshold > 0.0)) fail("threshold must be > 0");
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (match_keypoints < 0) fail("match_keypoints must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), base);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "descriptor_dim = " << c.descriptor_dim << '\n'
     << "lr = " << format_double(c.lr) << '\n'
     << "momentum = " << format_double(c.momentum) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "epochs = " << c.epochs << '\n'
     << "micro_batch = " << c.micro_batch << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "loss = " << to_string(c.loss) << '\n'
     << "seed = " << c.seed << '\n'
     << "pairs = " << c.pairs << '\n'
     << "pair_size = " << c.pair_size << '\n'
     << "triplets = " << c.triplets << '\n'
     << "max_keypoints = " << c.max_keypoints << '\n'
     << "split_ratio = " << format_double(c.split_ratio) << '\n'
     << "transform.identity = " << b(c.transforms.identity) << '\n'
     << "transform.scale = " << b(c.transforms.scale) << '\n'
     << "transform.rotate = " << b(c.transforms.rotate) << '\n'
     << "transform.translate = " << b(c.transforms.translate) << '\n'
     << "window = " << c.geometry.window << '\n'
     << "out_size = " << c.geometry.out_size << '\n'
     << "clahe_clip = " << format_double(c.clahe.clip_limit) << '\n'
     << "clahe_grid = " << c.clahe.grid << '\n'
     << "threshold = " << format_double(c.threshold) << '\n'
     << "eps = " << format_double(c.eps) << '\n'
     << "mutual = " << b(c.mutual) << '\n'
     << "match_keypoints = " << c.match_keypoints << '\n'
     << "threads = " << c.threads << '\n';
  return os.str();
}

}  // namespace ltformer
