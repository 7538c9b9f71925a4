#include "fsdm/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "fsdm/errors.hpp"
#include "fsdm/rng.hpp"

namespace fsdm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<int>(to_int(key, item)));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    auto add = [&](std::string name, std::function<void(RunConfig&, const std::string&)> set,
                   std::function<std::string(const RunConfig&)> get) {
      k.push_back({std::move(name), std::move(set), std::move(get)});
    };
#define FSDM_INT(NAME, FIELD)                                                                   \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(to_int(NAME, v)); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define FSDM_REAL(NAME, FIELD)                                                             \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); })
#define FSDM_BOOL(NAME, FIELD)                                                           \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(NAME, v); }, \
      [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); })
#define FSDM_LIST(NAME, FIELD)                                                               \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_int_list(NAME, v); }, \
      [](const RunConfig& c) { return join(c.FIELD); })

    add("variant", [](RunConfig& c, const std::string& v) { c.train.variant = variant_from_string(v); },
        [](const RunConfig& c) { return to_string(c.train.variant); });
    FSDM_INT("seed", train.seed);
    FSDM_INT("iterations", train.iterations);
    FSDM_INT("batch_size", train.batch_size);
    FSDM_REAL("lr", train.lr);
    FSDM_REAL("lambda", train.lambda);
    FSDM_INT("set_size", train.set_size);
    FSDM_BOOL("include_query", train.include_query);
    FSDM_REAL("grad_clip", train.grad_clip);
    FSDM_BOOL("ema", train.ema);
    FSDM_REAL("ema_decay", train.ema_decay);
    FSDM_INT("eval_every", train.eval_every);
    FSDM_INT("checkpoint_every", train.checkpoint_every);
    FSDM_INT("log_every", train.log_every);
    add("eval_split", [](RunConfig& c, const std::string& v) { c.train.eval_split = split_from_string(v); },
        [](const RunConfig& c) { return to_string(c.train.eval_split); });
    FSDM_INT("eval_batches", train.eval_batches);
    FSDM_INT("eval_batch_size", train.eval_batch_size);
    FSDM_INT("eval_grid_steps", train.eval_grid_steps);

    FSDM_INT("image_size", model.image_size);
    FSDM_INT("image_channels", model.image_channels);
    FSDM_INT("base_channels", model.base_channels);
    FSDM_LIST("channel_multipliers", model.channel_multipliers);
    FSDM_INT("num_res_blocks", model.num_res_blocks);
    FSDM_LIST("attention_resolutions", model.attention_resolutions);
    FSDM_INT("attention_heads", model.attention_heads);
    FSDM_INT("norm_groups", model.norm_groups);
    FSDM_INT("context_width", model.context_width);
    FSDM_BOOL("time_conditioned_encoder", model.time_conditioned_encoder);

    FSDM_INT("patch_size", encoder.patch_size);
    FSDM_INT("encoder_layers", encoder.layers);
    FSDM_INT("encoder_heads", encoder.heads);
    FSDM_INT("encoder_head_dim", encoder.head_dim);
    FSDM_INT("encoder_mlp_ratio", encoder.mlp_ratio);

    FSDM_INT("diffusion_steps", schedule.diffusion_steps);
    FSDM_REAL("beta_start", schedule.beta_start);
    FSDM_REAL("beta_end", schedule.beta_end);

    FSDM_REAL("split_train", split.fractions[0]);
    FSDM_REAL("split_val", split.fractions[1]);
    FSDM_REAL("split_test", split.fractions[2]);
    FSDM_INT("split_seed", split.seed);
#undef FSDM_INT
#undef FSDM_REAL
#undef FSDM_BOOL
#undef FSDM_LIST
    return k;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  const TrainConfig& t = train;
  if (t.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(t.lr > 0.0)) throw ConfigError("lr must be positive");
  if (t.iterations < 0) throw ConfigError("iterations must be non-negative");
  if (t.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (t.set_size < 1) throw ConfigError("set_size must be at least 1");
  if (t.grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (!(t.ema_decay > 0.0 && t.ema_decay < 1.0)) throw ConfigError("ema_decay must lie in (0, 1)");
  if (t.eval_every < 0 || t.checkpoint_every < 0 || t.log_every < 1) {
    throw ConfigError("eval_every and checkpoint_every must be non-negative, log_every positive");
  }
  if (t.eval_batches < 1 || t.eval_batch_size < 1 || t.eval_grid_steps < 1) {
    throw ConfigError("evaluation sizes must be positive");
  }
  if (t.eval_grid_steps > schedule.diffusion_steps) throw ConfigError("eval_grid_steps exceeds diffusion_steps");
  if (schedule.diffusion_steps < 1) throw ConfigError("diffusion_steps must be positive");
  model.validate();
  encoder.validate();
  if (t.variant != Variant::kDDPM && t.variant != Variant::kCDDPM && model.image_size % encoder.patch_size != 0) {
    throw ConfigError("patch_size must divide image_size");
  }
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

uint64_t RunConfig::trajectory_hash() const {
  static const std::set<std::string> excluded{"iterations", "eval_every", "checkpoint_every", "log_every"};
  std::string text;
  for (const auto& k : keys()) {
    if (!excluded.count(k.name)) text += k.name + " = " + k.get(*this) + "\n";
  }
  return fnv1a64(text);
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;
  RunConfig config;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(number));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    it->second->set(config, value);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace fsdm
