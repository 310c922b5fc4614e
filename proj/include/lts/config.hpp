#ifndef LTS_CONFIG_HPP
#define LTS_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lts/scheduler.hpp"

namespace lts {

enum class DataKind { Idx, Cifar10Bin, Synthetic };

inline DataKind parse_data_kind(const std::string& s) {
  if (s == "idx") return DataKind::Idx;
  if (s == "cifar10bin") return DataKind::Cifar10Bin;
  if (s == "synthetic") return DataKind::Synthetic;
  throw ConfigError("unknown data.kind '" + s + "' (idx|cifar10bin|synthetic)");
}

/// Everything a training run needs; parsed from a line-based `key = value`
/// file with `#` comments and dotted keys.
struct RunConfig {
  std::string model = "mlp-s";
  int bits = 4;

  DataKind data_kind = DataKind::Synthetic;
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_bin, test_bin;                                   // cifar10bin
  std::vector<double> mean{0.0}, stddev{1.0};
  std::size_t limit_train = 0, limit_test = 0;  // 0 = use everything
  std::size_t synthetic_train = 512, synthetic_test = 256;
  int synthetic_classes = 10;
  std::size_t synthetic_channels = 1, synthetic_height = 28, synthetic_width = 28;
  double synthetic_noise = 0.35;
  std::uint64_t synthetic_seed = 7;

  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 60;
  std::size_t batch_size = 128;
  std::vector<int> lr_decay_epochs{30, 45};
  double lr_decay_factor = 0.1;

  LtsHyperparams lts;
  std::string trajectory_path;  // random mode input

  std::uint64_t seed = 1;
  std::string out_dir = "run_out";
  int precision = 32;
  bool deterministic = true;

  std::string init_checkpoint;
  int init_fp_epochs = 0;  // in-run full-precision pretraining
  std::string resume_checkpoint;
  int checkpoint_every_epochs = 0;
  bool snapshots_enabled = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (lr < 0) throw ConfigError("opt.lr must be >= 0");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
      throw ConfigError("train.lr_decay_factor must lie in (0,1]");
    if (precision != 32 && precision != 64)
      throw ConfigError("precision must be 32 or 64");
    lts.validate(epochs);
    if (lts.mode == RunMode::Random && trajectory_path.empty())
      throw ConfigError("mode random needs lts.trajectory");
    if (data_kind == DataKind::Idx &&
        (train_images.empty() || train_labels.empty() || test_images.empty() ||
         test_labels.empty()))
      throw ConfigError("data.kind idx needs data.train_images/train_labels/"
                        "test_images/test_labels");
    if (data_kind == DataKind::Cifar10Bin && (train_bin.empty() || test_bin.empty()))
      throw ConfigError("data.kind cifar10bin needs data.train_bin/test_bin");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

}  // namespace detail

/// Parse `key = value` lines into a map; duplicate keys keep the last value.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": missing '=' in '" +
                        line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline RunConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  using detail::split_list;
  using detail::to_bool;
  using detail::to_double;
  using detail::to_long;

  static const std::set<std::string> known = {
      "model", "quant.bits",
      "data.kind", "data.train_images", "data.train_labels", "data.test_images",
      "data.test_labels", "data.train_bin", "data.test_bin", "data.mean", "data.std",
      "data.limit_train", "data.limit_test",
      "data.synthetic.train", "data.synthetic.test", "data.synthetic.classes",
      "data.synthetic.channels", "data.synthetic.height", "data.synthetic.width",
      "data.synthetic.noise", "data.synthetic.seed",
      "opt.lr", "opt.momentum", "opt.weight_decay",
      "train.epochs", "train.batch_size", "train.lr_decay_epochs",
      "train.lr_decay_factor",
      "lts.mode", "lts.m", "lts.warmup_epochs", "lts.strategy", "lts.c",
      "lts.trajectory",
      "seed", "out", "precision", "deterministic",
      "init.checkpoint", "init.fp_epochs", "resume.checkpoint",
      "checkpoint.every_epochs", "snapshots.enabled"};

  for (const auto& [key, value] : kv)
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

  RunConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  if (auto* v = get("model")) c.model = *v;
  if (auto* v = get("quant.bits")) c.bits = static_cast<int>(to_long("quant.bits", *v));
  if (auto* v = get("data.kind")) c.data_kind = parse_data_kind(*v);
  if (auto* v = get("data.train_images")) c.train_images = *v;
  if (auto* v = get("data.train_labels")) c.train_labels = *v;
  if (auto* v = get("data.test_images")) c.test_images = *v;
  if (auto* v = get("data.test_labels")) c.test_labels = *v;
  if (auto* v = get("data.train_bin")) c.train_bin = *v;
  if (auto* v = get("data.test_bin")) c.test_bin = *v;
  if (auto* v = get("data.mean")) {
    c.mean.clear();
    for (const auto& s : split_list(*v)) c.mean.push_back(to_double("data.mean", s));
  }
  if (auto* v = get("data.std")) {
    c.stddev.clear();
    for (const auto& s : split_list(*v)) c.stddev.push_back(to_double("data.std", s));
  }
  if (auto* v = get("data.limit_train"))
    c.limit_train = static_cast<std::size_t>(to_long("data.limit_train", *v));
  if (auto* v = get("data.limit_test"))
    c.limit_test = static_cast<std::size_t>(to_long("data.limit_test", *v));
  if (auto* v = get("data.synthetic.train"))
    c.synthetic_train = static_cast<std::size_t>(to_long("data.synthetic.train", *v));
  if (auto* v = get("data.synthetic.test"))
    c.synthetic_test = static_cast<std::size_t>(to_long("data.synthetic.test", *v));
  if (auto* v = get("data.synthetic.classes"))
    c.synthetic_classes = static_cast<int>(to_long("data.synthetic.classes", *v));
  if (auto* v = get("data.synthetic.channels"))
    c.synthetic_channels = static_cast<std::size_t>(to_long("data.synthetic.channels", *v));
  if (auto* v = get("data.synthetic.height"))
    c.synthetic_height = static_cast<std::size_t>(to_long("data.synthetic.height", *v));
  if (auto* v = get("data.synthetic.width"))
    c.synthetic_width = static_cast<std::size_t>(to_long("data.synthetic.width", *v));
  if (auto* v = get("data.synthetic.noise"))
    c.synthetic_noise = to_double("data.synthetic.noise", *v);
  if (auto* v = get("data.synthetic.seed"))
    c.synthetic_seed = static_cast<std::uint64_t>(to_long("data.synthetic.seed", *v));
  if (auto* v = get("opt.lr")) c.lr = to_double("opt.lr", *v);
  if (auto* v = get("opt.momentum")) c.momentum = to_double("opt.momentum", *v);
  if (auto* v = get("opt.weight_decay")) c.weight_decay = to_double("opt.weight_decay", *v);
  if (auto* v = get("train.epochs")) c.epochs = static_cast<int>(to_long("train.epochs", *v));
  if (auto* v = get("train.batch_size"))
    c.batch_size = static_cast<std::size_t>(to_long("train.batch_size", *v));
  if (auto* v = get("train.lr_decay_epochs")) {
    c.lr_decay_epochs.clear();
    for (const auto& s : split_list(*v))
      c.lr_decay_epochs.push_back(static_cast<int>(to_long("train.lr_decay_epochs", s)));
  }
  if (auto* v = get("train.lr_decay_factor"))
    c.lr_decay_factor = to_double("train.lr_decay_factor", *v);
  if (auto* v = get("lts.mode")) c.lts.mode = parse_run_mode(*v);
  if (auto* v = get("lts.m")) c.lts.m = to_double("lts.m", *v);
  if (auto* v = get("lts.warmup_epochs"))
    c.lts.warmup_epochs = static_cast<int>(to_long("lts.warmup_epochs", *v));
  if (auto* v = get("lts.strategy")) c.lts.strategy = parse_strategy(*v);
  if (auto* v = get("lts.c")) c.lts.c = to_double("lts.c", *v);
  if (auto* v = get("lts.trajectory")) c.trajectory_path = *v;
  if (auto* v = get("seed")) c.seed = static_cast<std::uint64_t>(to_long("seed", *v));
  if (auto* v = get("out")) c.out_dir = *v;
  if (auto* v = get("precision")) c.precision = static_cast<int>(to_long("precision", *v));
  if (auto* v = get("deterministic")) c.deterministic = to_bool("deterministic", *v);
  if (auto* v = get("init.checkpoint")) c.init_checkpoint = *v;
  if (auto* v = get("init.fp_epochs"))
    c.init_fp_epochs = static_cast<int>(to_long("init.fp_epochs", *v));
  if (auto* v = get("resume.checkpoint")) c.resume_checkpoint = *v;
  if (auto* v = get("checkpoint.every_epochs"))
    c.checkpoint_every_epochs = static_cast<int>(to_long("checkpoint.every_epochs", *v));
  if (auto* v = get("snapshots.enabled"))
    c.snapshots_enabled = to_bool("snapshots.enabled", *v);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = config_from_kv(parse_kv_text(ss.str()));
  c.validate();
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c = config_from_kv(parse_kv_text(text));
  c.validate();
  return c;
}

}  // namespace lts

#endif  // LTS_CONFIG_HPP
