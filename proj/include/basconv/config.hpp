#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "basconv/common.hpp"
#include "basconv/matrix.hpp"
#include "basconv/trainer.hpp"

namespace basconv {

// Everything a run needs, serializable to a sectioned key = value file.
// serialize(parse(text)) is lossless; the config hash is the FNV-1a of the
// canonical serialization and is embedded in every output file.
struct RunConfig {
  // [data]
  std::string transactions;
  std::string user_column = "user_id";
  std::string basket_column = "basket_id";
  std::string item_column = "item_id";
  int min_basket_size = 30;

  // [split]
  double train_frac = 0.8;
  double subsample_fraction = 1.0;

  // [model]
  int embedding_dim = 64;
  int layers = 3;
  std::string activation = "sigmoid";  // sigmoid | leaky-relu
  std::string use_biases = "auto";     // auto | on | off
  bool hadamard_first = true;

  // [train]
  std::string model = "basconv";  // basconv | item-pop | bpr-mf
  double learning_rate = 5e-4;
  double lambda_reg = 1e-5;
  int batch_size = 1024;
  int epochs = 50;
  int patience = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // [eval]
  int k = 100;

  // [sweep]
  std::vector<double> fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<int> layer_counts = {1, 2, 3, 4};

  // [run]
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  int threads = 0;  // 0 = library default
  bool deterministic = true;

  TrainConfig train_config() const {
    TrainConfig t;
    t.dim = embedding_dim;
    t.n_layers = layers;
    t.learning_rate = learning_rate;
    t.lambda_reg = lambda_reg;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.patience = patience;
    t.eval_k = k;
    t.seed = seed;
    t.activation = activation_from_name(activation);
    if (use_biases == "auto")
      t.bias_mode = BiasMode::Auto;
    else if (use_biases == "on")
      t.bias_mode = BiasMode::On;
    else if (use_biases == "off")
      t.bias_mode = BiasMode::Off;
    else
      throw ConfigError("use_biases must be auto, on or off; got '" + use_biases + "'");
    t.hadamard_first = hadamard_first;
    t.adam_beta1 = adam_beta1;
    t.adam_beta2 = adam_beta2;
    t.adam_eps = adam_eps;
    return t;
  }
};

namespace detail {

inline std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a number");
  }
}

inline long long parse_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as an integer");
  }
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a boolean");
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigField {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  // out_dir and threads are execution details that change no output bytes;
  // they stay out of the config hash so reruns elsewhere compare equal.
  bool hashed = true;
};

inline const std::vector<ConfigField>& config_fields() {
  using F = ConfigField;
  auto str = [](std::string RunConfig::* p) {
    return std::pair{std::function<std::string(const RunConfig&)>(
                         [p](const RunConfig& c) { return c.*p; }),
                     std::function<void(RunConfig&, const std::string&)>(
                         [p](RunConfig& c, const std::string& v) { c.*p = v; })};
  };
  auto num = [](double RunConfig::* p) {
    return std::pair{std::function<std::string(const RunConfig&)>(
                         [p](const RunConfig& c) { return fmt_double(c.*p); }),
                     std::function<void(RunConfig&, const std::string&)>(
                         [p](RunConfig& c, const std::string& v) { c.*p = parse_double(v, "?"); })};
  };
  auto integer = [](int RunConfig::* p) {
    return std::pair{std::function<std::string(const RunConfig&)>(
                         [p](const RunConfig& c) { return std::to_string(c.*p); }),
                     std::function<void(RunConfig&, const std::string&)>([p](RunConfig& c, const std::string& v) {
                       c.*p = static_cast<int>(parse_int(v, "?"));
                     })};
  };
  auto boolean = [](bool RunConfig::* p) {
    return std::pair{std::function<std::string(const RunConfig&)>(
                         [p](const RunConfig& c) { return c.*p ? "true" : "false"; }),
                     std::function<void(RunConfig&, const std::string&)>(
                         [p](RunConfig& c, const std::string& v) { c.*p = parse_bool(v, "?"); })};
  };

  static const std::vector<ConfigField> fields = [&] {
    std::vector<ConfigField> f;
    auto addf = [&f](const char* sec, const char* key, auto pair) {
      f.push_back(F{sec, key, pair.first, pair.second});
    };
    addf("data", "transactions", str(&RunConfig::transactions));
    addf("data", "user_column", str(&RunConfig::user_column));
    addf("data", "basket_column", str(&RunConfig::basket_column));
    addf("data", "item_column", str(&RunConfig::item_column));
    addf("data", "min_basket_size", integer(&RunConfig::min_basket_size));
    addf("split", "train_frac", num(&RunConfig::train_frac));
    addf("split", "subsample_fraction", num(&RunConfig::subsample_fraction));
    addf("model", "embedding_dim", integer(&RunConfig::embedding_dim));
    addf("model", "layers", integer(&RunConfig::layers));
    addf("model", "activation", str(&RunConfig::activation));
    addf("model", "use_biases", str(&RunConfig::use_biases));
    addf("model", "hadamard_first", boolean(&RunConfig::hadamard_first));
    addf("train", "model", str(&RunConfig::model));
    addf("train", "learning_rate", num(&RunConfig::learning_rate));
    addf("train", "lambda_reg", num(&RunConfig::lambda_reg));
    addf("train", "batch_size", integer(&RunConfig::batch_size));
    addf("train", "epochs", integer(&RunConfig::epochs));
    addf("train", "patience", integer(&RunConfig::patience));
    addf("train", "adam_beta1", num(&RunConfig::adam_beta1));
    addf("train", "adam_beta2", num(&RunConfig::adam_beta2));
    addf("train", "adam_eps", num(&RunConfig::adam_eps));
    addf("eval", "k", integer(&RunConfig::k));
    f.push_back(F{"sweep", "fractions",
                  [](const RunConfig& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.fractions.size(); ++i)
                      s += (i ? "," : "") + fmt_double(c.fractions[i]);
                    return s;
                  },
                  [](RunConfig& c, const std::string& v) {
                    c.fractions.clear();
                    std::stringstream ss(v);
                    std::string tok;
                    while (std::getline(ss, tok, ','))
                      if (!trim(tok).empty()) c.fractions.push_back(parse_double(trim(tok), "fractions"));
                  }});
    f.push_back(F{"sweep", "layer_counts",
                  [](const RunConfig& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.layer_counts.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.layer_counts[i]);
                    return s;
                  },
                  [](RunConfig& c, const std::string& v) {
                    c.layer_counts.clear();
                    std::stringstream ss(v);
                    std::string tok;
                    while (std::getline(ss, tok, ','))
                      if (!trim(tok).empty())
                        c.layer_counts.push_back(static_cast<int>(parse_int(trim(tok), "layer_counts")));
                  }});
    f.push_back(F{"run", "seed",
                  [](const RunConfig& c) { return std::to_string(c.seed); },
                  [](RunConfig& c, const std::string& v) {
                    c.seed = static_cast<std::uint64_t>(parse_int(v, "seed"));
                  }});
    addf("run", "out_dir", str(&RunConfig::out_dir));
    f.back().hashed = false;
    addf("run", "threads", integer(&RunConfig::threads));
    f.back().hashed = false;
    addf("run", "deterministic", boolean(&RunConfig::deterministic));
    return f;
  }();
  return fields;
}

}  // namespace detail

// Canonical serialization: sections in registry order, every key present.
inline std::string serialize_config(const RunConfig& cfg, bool hashed_only = false) {
  std::string out;
  const char* current = "";
  for (const auto& f : detail::config_fields()) {
    if (hashed_only && !f.hashed) continue;
    if (std::string(current) != f.section) {
      if (!out.empty()) out += "\n";
      out += "[" + std::string(f.section) + "]\n";
      current = f.section;
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline std::string config_hash(const RunConfig& cfg) {
  return to_hex(fnv1a64(serialize_config(cfg, /*hashed_only=*/true)));
}

// Parses sectioned key = value text over the given defaults. Unknown keys
// are configuration errors.
inline RunConfig parse_config_text(const std::string& text, RunConfig cfg = {}) {
  std::stringstream ss(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : detail::config_fields()) {
      if (section == f.section && key == f.key) {
        try {
          f.set(cfg, value);
        } catch (const ConfigError& e) {
          throw ConfigError("config line " + std::to_string(lineno) + " ('" + section + "." + key +
                            "'): " + e.what());
        }
        found = true;
        break;
      }
    }
    if (!found)
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + section +
                        "." + key + "'");
  }
  return cfg;
}

inline RunConfig load_config_file(const std::string& path, RunConfig defaults = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(defaults));
}

// Environment overrides: BASCONV_<SECTION>_<KEY> (upper case, '-' and '.'
// become '_'), e.g. BASCONV_TRAIN_LEARNING_RATE, BASCONV_RUN_SEED.
inline std::string env_var_name(const std::string& section, const std::string& key) {
  std::string name = "BASCONV_" + section + "_" + key;
  for (char& c : name) {
    if (c == '-' || c == '.') c = '_';
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return name;
}

inline void apply_env_overrides(RunConfig& cfg) {
  for (const auto& f : detail::config_fields()) {
    const std::string var = env_var_name(f.section, f.key);
    if (const char* val = std::getenv(var.c_str())) f.set(cfg, val);
  }
}

}  // namespace basconv
