#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/synthetic.hpp>
#include <simgraph/types.hpp>
#include <simgraph/util.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace simgraph {

/// Flat key/value run configuration. Also carries the synthetic-benchmark
/// block so one file reproduces the whole experiment; `config_hash` of the
/// canonical serialization is stamped into every CSV the tools emit.
struct Config {
  int levels = 3;
  Index r = 32;
  Index k = 0;  // 0 = derive r/4
  double gamma = 0.95;
  std::string loss = "margin";  // margin | proxy_anchor
  double lr = 1e-3;
  double lr_theta2 = 0;  // 0 = 10x lr; the gate statistic is small, see README
  double weight_decay = 1e-4;
  int batch_size = 16;
  int classes_per_batch = 4;
  double margin_alpha = 1.2;
  double margin_beta = 0.2;
  double pa_scale = 16.0;
  double pa_beta = 2.0;
  double pa_tau = 0.2;
  std::uint64_t seed = 1;
  int epochs = 16;
  std::vector<double> level_loss_weights;  // empty = all ones

  // Synthetic benchmark block.
  std::vector<LevelShape> synth_shapes = {{8, 16, 16}, {16, 8, 8}, {32, 4, 4}};
  int synth_classes = 8;
  int synth_samples_per_class = 40;
  std::vector<double> synth_noise = {0.8, 0.3, 0.2};
  std::vector<double> synth_dropout = {0.0, 0.3, 0.3};
  int synth_concepts = 4;

  Index top_k() const { return k > 0 ? k : std::max<Index>(1, r / 4); }

  double theta2_lr() const { return lr_theta2 > 0 ? lr_theta2 : 10.0 * lr; }

  SynthSpec synth_spec() const {
    SynthSpec spec;
    spec.shapes = synth_shapes;
    spec.classes = synth_classes;
    spec.samples_per_class = synth_samples_per_class;
    spec.noise = synth_noise;
    spec.concept_dropout = synth_dropout;
    spec.concepts = synth_concepts;
    return spec;
  }

  void validate() const {
    if (levels < 1) throw ConfigError("levels must be >= 1");
    if (r < 1) throw ConfigError("r must be >= 1");
    if (k < 0 || k > r) throw ConfigError("k must lie in [1, r] (or 0 for the r/4 default)");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (loss != "margin" && loss != "proxy_anchor") {
      throw ConfigError("loss must be margin or proxy_anchor, got: " + loss);
    }
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (classes_per_batch < 1) throw ConfigError("classes_per_batch must be >= 1");
    if (batch_size % classes_per_batch != 0) {
      throw ConfigError("batch_size must be a multiple of classes_per_batch");
    }
    if (margin_alpha <= 0.0) throw ConfigError("margin_alpha must be > 0");
    if (pa_scale <= 0.0) throw ConfigError("pa_scale must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!level_loss_weights.empty() && static_cast<int>(level_loss_weights.size()) != levels) {
      throw ConfigError("level_loss_weights length differs from levels");
    }
    if (static_cast<int>(synth_shapes.size()) != levels) {
      throw ConfigError("synth_shapes declares " + std::to_string(synth_shapes.size()) +
                        " levels, config says " + std::to_string(levels));
    }
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects a number, got: " + v);
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got: " + v);
  }
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& part : split(v, ',')) {
    const std::string t = trim(part);
    if (t.empty()) continue;
    out.push_back(parse_double(key, t));
  }
  return out;
}

inline std::vector<LevelShape> parse_shapes(const std::string& key, const std::string& v) {
  std::vector<LevelShape> shapes;
  for (const auto& part : split(v, ',')) {
    const std::string t = trim(part);
    if (t.empty()) continue;
    const auto dims = split(t, 'x');
    if (dims.size() != 3) {
      throw ConfigError("config key " + key + " expects CxHxW entries, got: " + t);
    }
    LevelShape s;
    s.c = static_cast<Index>(parse_int(key, trim(dims[0])));
    s.h = static_cast<Index>(parse_int(key, trim(dims[1])));
    s.w = static_cast<Index>(parse_int(key, trim(dims[2])));
    shapes.push_back(s);
  }
  return shapes;
}

}  // namespace detail

inline Config parse_config(std::istream& in) {
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "levels") cfg.levels = static_cast<int>(detail::parse_int(key, value));
    else if (key == "r") cfg.r = static_cast<Index>(detail::parse_int(key, value));
    else if (key == "k") cfg.k = static_cast<Index>(detail::parse_int(key, value));
    else if (key == "gamma") cfg.gamma = detail::parse_double(key, value);
    else if (key == "loss") cfg.loss = value;
    else if (key == "lr") cfg.lr = detail::parse_double(key, value);
    else if (key == "lr_theta2") cfg.lr_theta2 = detail::parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = detail::parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::parse_int(key, value));
    else if (key == "classes_per_batch") cfg.classes_per_batch = static_cast<int>(detail::parse_int(key, value));
    else if (key == "margin_alpha") cfg.margin_alpha = detail::parse_double(key, value);
    else if (key == "margin_beta") cfg.margin_beta = detail::parse_double(key, value);
    else if (key == "pa_scale") cfg.pa_scale = detail::parse_double(key, value);
    else if (key == "pa_beta") cfg.pa_beta = detail::parse_double(key, value);
    else if (key == "pa_tau") cfg.pa_tau = detail::parse_double(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(detail::parse_int(key, value));
    else if (key == "level_loss_weights") cfg.level_loss_weights = detail::parse_double_list(key, value);
    else if (key == "synth_shapes") cfg.synth_shapes = detail::parse_shapes(key, value);
    else if (key == "synth_classes") cfg.synth_classes = static_cast<int>(detail::parse_int(key, value));
    else if (key == "synth_samples_per_class") cfg.synth_samples_per_class = static_cast<int>(detail::parse_int(key, value));
    else if (key == "synth_noise") cfg.synth_noise = detail::parse_double_list(key, value);
    else if (key == "synth_dropout") cfg.synth_dropout = detail::parse_double_list(key, value);
    else if (key == "synth_concepts") cfg.synth_concepts = static_cast<int>(detail::parse_int(key, value));
    else throw ConfigError("unknown config key: " + key);
  }
  cfg.validate();
  return cfg;
}

inline Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  return parse_config(in);
}

inline std::string serialize_config(const Config& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "levels = " << cfg.levels << "\n";
  out << "r = " << cfg.r << "\n";
  out << "k = " << cfg.k << "\n";
  out << "gamma = " << cfg.gamma << "\n";
  out << "loss = " << cfg.loss << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "lr_theta2 = " << cfg.lr_theta2 << "\n";
  out << "weight_decay = " << cfg.weight_decay << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "classes_per_batch = " << cfg.classes_per_batch << "\n";
  out << "margin_alpha = " << cfg.margin_alpha << "\n";
  out << "margin_beta = " << cfg.margin_beta << "\n";
  out << "pa_scale = " << cfg.pa_scale << "\n";
  out << "pa_beta = " << cfg.pa_beta << "\n";
  out << "pa_tau = " << cfg.pa_tau << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  if (!cfg.level_loss_weights.empty()) {
    out << "level_loss_weights = ";
    for (std::size_t i = 0; i < cfg.level_loss_weights.size(); ++i) {
      out << (i ? "," : "") << cfg.level_loss_weights[i];
    }
    out << "\n";
  }
  out << "synth_shapes = ";
  for (std::size_t i = 0; i < cfg.synth_shapes.size(); ++i) {
    out << (i ? "," : "") << cfg.synth_shapes[i].c << "x" << cfg.synth_shapes[i].h << "x"
        << cfg.synth_shapes[i].w;
  }
  out << "\n";
  out << "synth_classes = " << cfg.synth_classes << "\n";
  out << "synth_samples_per_class = " << cfg.synth_samples_per_class << "\n";
  out << "synth_noise = ";
  for (std::size_t i = 0; i < cfg.synth_noise.size(); ++i) out << (i ? "," : "") << cfg.synth_noise[i];
  out << "\n";
  out << "synth_dropout = ";
  for (std::size_t i = 0; i < cfg.synth_dropout.size(); ++i) out << (i ? "," : "") << cfg.synth_dropout[i];
  out << "\n";
  out << "synth_concepts = " << cfg.synth_concepts << "\n";
  return out.str();
}

/// FNV-1a over the canonical serialization, as a fixed-width hex string.
inline std::string config_hash(const Config& cfg) {
  const std::string text = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace simgraph
