#include "pnerf/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "pnerf/error.hpp"

namespace pnerf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("config: bad value '" + value + "' for '" + key + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, text);
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, text);
}

std::vector<double> parse_list(const std::string& key, const std::string& text, std::size_t n) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) out.push_back(parse_number<double>(key, item));
  if (out.size() != n) bad_value(key, text);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const Vec3& v) { return fmt(v.x()) + ", " + fmt(v.y()) + ", " + fmt(v.z()); }

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PNERF_INT_KEY(NAME, FIELD) \
  Key{NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<decltype(c.FIELD)>(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define PNERF_REAL_KEY(NAME, FIELD) \
  Key{NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<double>(k, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); }}
#define PNERF_BOOL_KEY(NAME, FIELD) \
  Key{NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_bool(k, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); }}
#define PNERF_PATH_KEY(NAME, FIELD) \
  Key{NAME, [](RunConfig& c, const std::string&, const std::string& v) { c.FIELD = trim(v); }, \
      [](const RunConfig& c) { return c.FIELD.string(); }}

void recenter(RunConfig& c) {
  CameraIntrinsics& in = c.dataset.intrinsics;
  in = CameraIntrinsics::centered(in.width, in.height, in.focal);
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      PNERF_INT_KEY("seed", seed),
      PNERF_INT_KEY("threads", threads),
      PNERF_BOOL_KEY("deterministic", deterministic),
      Key{"scene.preset", [](RunConfig& c, const std::string&, const std::string& v) { c.scene = trim(v); },
          [](const RunConfig& c) { return c.scene; }},
      Key{"dataset.width",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.dataset.intrinsics.width = parse_number<int>(k, v);
            recenter(c);
          },
          [](const RunConfig& c) { return std::to_string(c.dataset.intrinsics.width); }},
      Key{"dataset.height",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.dataset.intrinsics.height = parse_number<int>(k, v);
            recenter(c);
          },
          [](const RunConfig& c) { return std::to_string(c.dataset.intrinsics.height); }},
      PNERF_REAL_KEY("dataset.focal", dataset.intrinsics.focal),
      PNERF_INT_KEY("dataset.n_views", dataset.n_views),
      Key{"dataset.layout",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            const std::string s = trim(v);
            if (s == "fan") {
              c.dataset.ring.layout = CameraRingSpec::Layout::fan;
            } else if (s == "ring") {
              c.dataset.ring.layout = CameraRingSpec::Layout::ring;
            } else {
              bad_value(k, v);
            }
          },
          [](const RunConfig& c) { return std::string(c.dataset.ring.layout == CameraRingSpec::Layout::fan ? "fan" : "ring"); }},
      PNERF_REAL_KEY("dataset.radius", dataset.ring.radius),
      PNERF_REAL_KEY("dataset.step_deg", dataset.ring.step_deg),
      PNERF_REAL_KEY("dataset.elevation_deg", dataset.ring.elevation_deg),
      Key{"dataset.target",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            const auto xs = parse_list(k, v, 3);
            c.dataset.ring.target = Vec3(xs[0], xs[1], xs[2]);
          },
          [](const RunConfig& c) { return fmt(c.dataset.ring.target); }},
      PNERF_REAL_KEY("dataset.t_near", dataset.t_near),
      PNERF_REAL_KEY("dataset.t_far", dataset.t_far),
      PNERF_INT_KEY("dataset.test_stride", dataset.test_stride),
      PNERF_INT_KEY("dataset.val_stride", dataset.val_stride),
      PNERF_INT_KEY("dataset.val_offset", dataset.val_offset),
      PNERF_REAL_KEY("dataset.depth_sigma", dataset.depth_sigma),
      PNERF_REAL_KEY("dataset.outlier_rate", dataset.outlier_rate),
      PNERF_PATH_KEY("paths.dataset", dataset_dir),
      PNERF_PATH_KEY("paths.out", out_dir),
      PNERF_PATH_KEY("paths.checkpoint", checkpoint_dir),
      PNERF_PATH_KEY("paths.poses", poses_file),
      PNERF_INT_KEY("train.epochs", train.epochs),
      PNERF_INT_KEY("train.iterations", train.iterations),
      PNERF_INT_KEY("train.batch_rays", train.batch_rays),
      PNERF_INT_KEY("train.n_coarse", train.sampling.n_coarse),
      PNERF_INT_KEY("train.n_fine", train.sampling.n_fine),
      Key{"train.gains", [](RunConfig& c, const std::string&, const std::string& v) { c.train.gains = parse_gains(v); },
          [](const RunConfig& c) { return format_gains(c.train.gains); }},
      PNERF_INT_KEY("train.eval_interval", train.eval_interval),
      PNERF_INT_KEY("train.chunk_rays", train.chunk_rays),
      PNERF_REAL_KEY("train.learning_rate", train.adam.learning_rate),
      PNERF_REAL_KEY("train.beta1", train.adam.beta1),
      PNERF_REAL_KEY("train.beta2", train.adam.beta2),
      PNERF_REAL_KEY("train.epsilon", train.adam.epsilon),
      Key{"train.precision",
          [](RunConfig& c, const std::string&, const std::string& v) { c.train.precision = parse_precision(trim(v)); },
          [](const RunConfig& c) { return to_string(c.train.precision); }},
      PNERF_REAL_KEY("train.density_bias", train.density_bias),
      PNERF_INT_KEY("train.train_views", train.train_views),
      PNERF_BOOL_KEY("train.use_confidence", train.use_confidence),
      PNERF_REAL_KEY("train.target_sigma", train.target_sigma),
      PNERF_BOOL_KEY("train.normalize_scene", train.normalize_scene),
      PNERF_INT_KEY("model.pos_frequencies", train.arch.pos_frequencies),
      PNERF_INT_KEY("model.dir_frequencies", train.arch.dir_frequencies),
      PNERF_INT_KEY("model.hidden_layers", train.arch.hidden_layers),
      PNERF_INT_KEY("model.hidden_width", train.arch.hidden_width),
      PNERF_INT_KEY("model.skip_layer", train.arch.skip_layer),
      PNERF_INT_KEY("model.color_width", train.arch.color_width),
      Key{"model.activation",
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.train.arch.hidden_activation = parse_activation(trim(v));
          },
          [](const RunConfig& c) { return std::string(to_string(c.train.arch.hidden_activation)); }},
      Key{"eval.split", [](RunConfig& c, const std::string&, const std::string& v) { c.eval_split = parse_split(trim(v)); },
          [](const RunConfig& c) { return to_string(c.eval_split); }},
  };
  return table;
}

#undef PNERF_INT_KEY
#undef PNERF_REAL_KEY
#undef PNERF_BOOL_KEY
#undef PNERF_PATH_KEY

}  // namespace

LossGains parse_gains(const std::string& text) {
  const auto xs = parse_list("gains", text, 3);
  LossGains g{xs[0], xs[1], xs[2]};
  g.validate();
  return g;
}

std::string format_gains(const LossGains& g) { return fmt(g.color) + "," + fmt(g.density) + "," + fmt(g.depth); }

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Key& k : key_table()) {
    if (k.name == key) {
      try {
        k.set(*this, key, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("config: bad value '" + value + "' for '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.push_back(k.name);
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const Key& k : key_table()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? std::string() : k.name.substr(0, dot);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << (dot == std::string::npos ? k.name : k.name.substr(dot + 1)) << " = " << k.get(*this) << '\n';
  }
  return out.str();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threads = threads;
  t.deterministic = deterministic;
  return t;
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec s = dataset;
  s.seed = seed;
  return s;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::istringstream in(text);
  std::string line, section;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      config.set(full, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

void write_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot " + path.string());
  out << config.to_text();
  if (!out) throw IoError("failed writing config snapshot " + path.string());
}

}  // namespace pnerf
