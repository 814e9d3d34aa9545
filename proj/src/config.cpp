// SPDX-License-Identifier: Apache-2.0
#include "lcl/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lcl/error.hpp"

namespace lcl {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string shots_to_string(const ShotStrategy& s) {
  switch (s.kind) {
    case ShotStrategy::Kind::kFixed:
      return "fixed:" + std::to_string(s.lo);
    case ShotStrategy::Kind::kUniform:
      return "uniform:" + std::to_string(s.lo) + "-" + std::to_string(s.hi);
    case ShotStrategy::Kind::kWeighted:
      return "weighted:" + std::to_string(s.lo) + "-" + std::to_string(s.hi);
  }
  return "?";
}

ShotStrategy parse_shots(const std::string& text) {
  auto colon = text.find(':');
  auto bad = [&] {
    return ConfigError("bad shot strategy '" + text +
                       "' (expected fixed:N, uniform:LO-HI or weighted:LO-HI)");
  };
  if (colon == std::string::npos) throw bad();
  std::string kind = text.substr(0, colon), range = text.substr(colon + 1);
  try {
    ShotStrategy s;
    if (kind == "fixed") {
      std::size_t used = 0;
      int n = std::stoi(range, &used);
      if (used != range.size()) throw bad();
      s = ShotStrategy::fixed(n);
    } else {
      auto dash = range.find('-');
      if (dash == std::string::npos) throw bad();
      int lo = std::stoi(range.substr(0, dash)), hi = std::stoi(range.substr(dash + 1));
      if (kind == "uniform") {
        s = ShotStrategy::uniform(lo, hi);
      } else if (kind == "weighted") {
        s = ShotStrategy::weighted(lo, hi);
      } else {
        throw bad();
      }
    }
    s.validate();
    return s;
  } catch (const std::logic_error&) {
    throw bad();
  }
}

namespace {

const std::vector<std::string> kStages = {"pretrain", "2way", "2way-random", "2way-weight", "mix"};

/// Reads keys from one JSON object and rejects the ones never asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const json& sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("missing section " + where_ + "." + key);
    return *it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

TrainConfig default_stage(const std::string& name) {
  TrainConfig t;
  t.strategy = parse_strategy(name);
  t.batch_size = 32;
  t.lr = 1e-3;
  t.grad_clip = 1.0;
  t.log_every = 100;
  if (name == "pretrain") {
    t.iterations = 3000;
    t.warmup = 100;
    t.seed = 101;
  } else if (name == "2way") {
    t.iterations = 1500;
    t.warmup = 200;
    t.seed = 102;
  } else if (name == "2way-random") {
    t.iterations = 1000;
    t.warmup = 50;
    t.lr = 5e-4;
    t.seed = 103;
    t.shots = ShotStrategy::uniform(2, 16);
  } else if (name == "2way-weight") {
    t.iterations = 1000;
    t.warmup = 50;
    t.lr = 5e-4;
    t.seed = 104;
    t.shots = ShotStrategy::weighted(2, 16);
  } else if (name == "mix") {
    t.iterations = 2000;
    t.warmup = 200;
    t.seed = 105;
    t.mix_ratio = 0.5;
  }
  return t;
}

json stage_json(const TrainConfig& t) {
  return json{{"iterations", t.iterations},     {"batch_size", t.batch_size},
              {"lr", t.lr},                     {"lr_decay", t.lr_decay},
              {"warmup", t.warmup},             {"seed", t.seed},
              {"shots", shots_to_string(t.shots)}, {"mix_ratio", t.mix_ratio},
              {"grad_clip", t.grad_clip},       {"supervise_support", t.supervise_support},
              {"log_every", t.log_every}};
}

json to_json_value(const RunConfig& c) {
  json j;
  j["universe"] = {{"seed", c.universe.seed},           {"n_train", c.universe.n_train},
                   {"n_holdout", c.universe.n_holdout}, {"dim", c.universe.dim},
                   {"sigma_img", c.universe.sigma_img}, {"sigma_txt", c.universe.sigma_txt},
                   {"import", c.universe_import}};
  j["neighbors"] = {{"n", c.neighbors.n},
                    {"w_ii", c.neighbors.weights.w_ii},
                    {"w_it", c.neighbors.weights.w_it},
                    {"w_tt", c.neighbors.weights.w_tt},
                    {"feature_samples", c.neighbors.feature_samples},
                    {"seed", c.neighbor_seed}};
  j["model"] = {{"d_model", c.model.d_model},     {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},     {"d_ff", c.model.d_ff},
                {"max_seq", c.model.max_seq},     {"n_episodic", c.model.n_episodic},
                {"init_seed", c.model.init_seed}};
  json train = json::object();
  for (const auto& [name, t] : c.train) train[name] = stage_json(t);
  j["train"] = train;
  j["eval"] = {{"protocols", c.eval.protocols},
               {"n_episodes", c.eval.n_episodes},
               {"seed", c.eval.seed},
               {"budget", c.eval.budget},
               {"hard_pair_limit", c.eval.hard_pair_limit},
               {"shot_list", c.eval.shot_list},
               {"false_rates", c.eval.false_rates},
               {"ablation_shots", c.eval.ablation_shots},
               {"zeroshot_episodes", c.eval.zeroshot_episodes},
               {"snapshot_episodes", c.eval.snapshot_episodes}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig from_json_value(const json& root) {
  RunConfig c = RunConfig::defaults();
  Section top(root, "config");

  Section u(top.sub("universe"), "universe");
  u.get("seed", c.universe.seed);
  u.get("n_train", c.universe.n_train);
  u.get("n_holdout", c.universe.n_holdout);
  u.get("dim", c.universe.dim);
  u.get("sigma_img", c.universe.sigma_img);
  u.get("sigma_txt", c.universe.sigma_txt);
  u.get("import", c.universe_import);
  u.finish();

  Section n(top.sub("neighbors"), "neighbors");
  n.get("n", c.neighbors.n);
  n.get("w_ii", c.neighbors.weights.w_ii);
  n.get("w_it", c.neighbors.weights.w_it);
  n.get("w_tt", c.neighbors.weights.w_tt);
  n.get("feature_samples", c.neighbors.feature_samples);
  n.get("seed", c.neighbor_seed);
  n.finish();

  Section m(top.sub("model"), "model");
  m.get("d_model", c.model.d_model);
  m.get("n_layers", c.model.n_layers);
  m.get("n_heads", c.model.n_heads);
  m.get("d_ff", c.model.d_ff);
  m.get("max_seq", c.model.max_seq);
  m.get("n_episodic", c.model.n_episodic);
  m.get("init_seed", c.model.init_seed);
  m.finish();

  Section tr(top.sub("train"), "train");
  for (const auto& name : kStages) {
    const json& sj = tr.sub(name);
    Section s(sj, "train." + name);
    TrainConfig& t = c.train[name];
    s.get("iterations", t.iterations);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("lr_decay", t.lr_decay);
    s.get("warmup", t.warmup);
    s.get("seed", t.seed);
    std::string shots = shots_to_string(t.shots);
    s.get("shots", shots);
    t.shots = parse_shots(shots);
    s.get("mix_ratio", t.mix_ratio);
    s.get("grad_clip", t.grad_clip);
    s.get("supervise_support", t.supervise_support);
    s.get("log_every", t.log_every);
    s.finish();
  }
  tr.finish();

  Section e(top.sub("eval"), "eval");
  e.get("protocols", c.eval.protocols);
  e.get("n_episodes", c.eval.n_episodes);
  e.get("seed", c.eval.seed);
  e.get("budget", c.eval.budget);
  e.get("hard_pair_limit", c.eval.hard_pair_limit);
  e.get("shot_list", c.eval.shot_list);
  e.get("false_rates", c.eval.false_rates);
  e.get("ablation_shots", c.eval.ablation_shots);
  e.get("zeroshot_episodes", c.eval.zeroshot_episodes);
  e.get("snapshot_episodes", c.eval.snapshot_episodes);
  e.finish();

  top.get("output_dir", c.output_dir);
  top.finish();
  return c;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& name : kStages) c.train[name] = default_stage(name);
  return c;
}

RunConfig RunConfig::parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = from_json_value(j);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings
  }
  json root = to_json_value(*this);
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown key " + key.substr(0, dot == std::string::npos ? key.size() : dot));
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
  *this = from_json_value(root);
}

std::string RunConfig::to_json() const { return to_json_value(*this).dump(2) + "\n"; }

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json_value(*this).dump())));
  return buf;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.d_model = model.d_model;
  m.n_layers = model.n_layers;
  m.n_heads = model.n_heads;
  m.d_ff = model.d_ff;
  m.max_seq = model.max_seq;
  m.n_episodic = model.n_episodic;
  m.vocab = model.n_episodic + universe.n_train;
  m.dim_in = universe.dim;
  return m;
}

const TrainConfig& RunConfig::stage(const std::string& name) const {
  auto it = train.find(name);
  if (it == train.end()) throw ConfigError("no train stage '" + name + "'");
  return it->second;
}

EvalProtocol RunConfig::protocol(const std::string& name) const {
  EvalProtocol p;
  p.kind = parse_protocol(name);
  p.budget = eval.budget;
  p.hard_pair_limit = eval.hard_pair_limit;
  p.weights = neighbors.weights;
  p.feature_samples = neighbors.feature_samples;
  return p;
}

void RunConfig::validate() const {
  if (universe.dim == 0) throw ConfigError("universe.dim must be > 0");
  if (universe.n_train < 2) throw ConfigError("universe.n_train must be >= 2");
  if (universe.n_holdout < 2) throw ConfigError("universe.n_holdout must be >= 2");
  if (universe.sigma_img < 0 || universe.sigma_txt < 0) {
    throw ConfigError("universe sigmas must be >= 0");
  }
  if (neighbors.n < 1) throw ConfigError("neighbors.n must be >= 1");
  if (neighbors.feature_samples < 1) throw ConfigError("neighbors.feature_samples must be >= 1");
  neighbors.weights.validate();
  model_config().validate();
  for (const auto& name : kStages) {
    TrainConfig t = stage(name);
    t.strategy = parse_strategy(name);
    t.validate();
    if (t.iterations < 1) throw ConfigError("train." + name + ".iterations must be >= 1");
  }
  if (eval.protocols.empty()) throw ConfigError("eval.protocols must not be empty");
  for (const auto& p : eval.protocols) parse_protocol(p);
  if (eval.n_episodes < 1) throw ConfigError("eval.n_episodes must be >= 1");
  if (eval.budget < 1) throw ConfigError("eval.budget must be >= 1");
  if (eval.shot_list.empty()) throw ConfigError("eval.shot_list must not be empty");
  for (int s : eval.shot_list) {
    if (s < 1) throw ConfigError("eval.shot_list entries must be >= 1");
    if (4 * static_cast<std::uint32_t>(s) + 1 > model.max_seq) {
      throw ConfigError("eval.shot_list entry " + std::to_string(s) + " exceeds model.max_seq");
    }
  }
  for (double r : eval.false_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval.false_rates must lie in [0, 1]");
  }
  if (eval.ablation_shots < 1 || 4 * static_cast<std::uint32_t>(eval.ablation_shots) + 1 > model.max_seq) {
    throw ConfigError("eval.ablation_shots out of range for model.max_seq");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

}  // namespace lcl
