#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/orchestrator.hpp"

namespace pflego {

// Experiment configs are INI-style text: [section] headers, key = value
// lines, '#' comments. Keys are addressed as section.key; anything outside
// the known set is a hard error so typos cannot silently fall back to a
// default.

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::string> algorithm;
  std::optional<std::size_t> threads;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw UsageError("config line " + std::to_string(line_no) +
                         ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) +
                       ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (kv.count(full)) throw UsageError("config: duplicate key " + full);
    kv[full] = value;
  }
  return kv;
}

// Typed lookup that records which keys were consumed.
class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return kv_.count(key) > 0;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string required(const std::string& key) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) throw UsageError("config: missing required key " + key);
    return it->second;
  }

  double number(const std::string& key, double fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_number(key, it->second);
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_integer(key, it->second);
  }

  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw UsageError("config: " + key + " must be true or false, got '" +
                     it->second + "'");
  }

  std::vector<std::size_t> integer_list(const std::string& key,
                                        std::vector<std::size_t> fallback) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      out.push_back(static_cast<std::size_t>(parse_integer(key, trim(item))));
    }
    if (out.empty()) throw UsageError("config: " + key + " must not be empty");
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      if (!seen_.count(key)) throw UsageError("config: unknown key " + key);
    }
  }

 private:
  static double parse_number(const std::string& key, const std::string& value) {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config: " + key + " must be a number, got '" + value + "'");
    }
  }

  static std::uint64_t parse_integer(const std::string& key, const std::string& value) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config: " + key + " must be a non-negative integer, got '" +
                       value + "'");
    }
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> seen_;
};

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "pflego") return Algorithm::Pflego;
  if (name == "fedavg") return Algorithm::FedAvg;
  if (name == "fedper") return Algorithm::FedPer;
  if (name == "fedrecon") return Algorithm::FedRecon;
  throw UsageError("config: algorithm.name must be one of pflego, fedavg, fedper, "
                   "fedrecon; got '" + name + "'");
}

inline const char* algorithm_name(Algorithm alg) {
  switch (alg) {
    case Algorithm::Pflego: return "pflego";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedPer: return "fedper";
    case Algorithm::FedRecon: return "fedrecon";
  }
  return "?";
}

}  // namespace detail

// Parses the config file, applies flag overrides, fills defaults. The
// defaults mirror the main experimental setup at desk scale.
inline ExperimentConfig parse_config(const std::string& path,
                                     const CliOverrides& overrides = {}) {
  detail::KeyReader keys(detail::read_key_values(path));
  ExperimentConfig cfg;

  cfg.seed = keys.integer("experiment.seed", 1);
  cfg.rounds = keys.integer("experiment.rounds", 200);
  cfg.eval_every = keys.integer("experiment.eval_every", 1);
  cfg.threads = keys.integer("experiment.threads", 1);

  cfg.algorithm.algorithm = detail::parse_algorithm(keys.required("algorithm.name"));
  cfg.algorithm.tau = keys.integer("algorithm.tau", 50);
  cfg.algorithm.beta = keys.number("algorithm.beta", 0.007);
  const std::string server = keys.str("algorithm.server_optimizer", "adam");
  if (server == "adam") {
    cfg.algorithm.server_mode = ServerMode::Adam;
  } else if (server == "sgd") {
    cfg.algorithm.server_mode = ServerMode::PureSgd;
  } else {
    throw UsageError("config: algorithm.server_optimizer must be adam or sgd, got '" +
                     server + "'");
  }
  cfg.algorithm.schedule.rho0 = keys.number("algorithm.rho", 0.001);
  const std::string sched = keys.str("algorithm.rho_schedule", "constant");
  if (sched == "constant") {
    cfg.algorithm.schedule.mode = RateMode::Constant;
  } else if (sched == "robbins_monro") {
    cfg.algorithm.schedule.mode = RateMode::RobbinsMonro;
  } else {
    throw UsageError("config: algorithm.rho_schedule must be constant or "
                     "robbins_monro, got '" + sched + "'");
  }
  cfg.algorithm.alpha_in_head_update = keys.boolean("algorithm.alpha_in_head_update", true);

  cfg.clients = keys.integer("data.clients", 20);
  const std::string mode = keys.str("participation.mode", "fixed_count");
  if (mode == "fixed_count") {
    cfg.participation.mode = ParticipationMode::FixedCount;
    // default 20% participation, at least one client
    const auto default_r =
        std::max<std::uint64_t>(1, static_cast<std::uint64_t>(0.2 * cfg.clients + 0.5));
    cfg.participation.r = keys.integer("participation.rate", default_r);
  } else if (mode == "binomial") {
    cfg.participation.mode = ParticipationMode::Binomial;
    cfg.participation.probability = keys.number("participation.probability", 0.2);
  } else {
    throw UsageError("config: participation.mode must be fixed_count or binomial, "
                     "got '" + mode + "'");
  }
  cfg.participation.clients = cfg.clients;

  const std::string degree = keys.str("personalization.degree", "high");
  if (degree == "high") {
    cfg.personalization.degree = Personalization::High;
  } else if (degree == "medium") {
    cfg.personalization.degree = Personalization::Medium;
  } else if (degree == "none") {
    cfg.personalization.degree = Personalization::None;
  } else {
    throw UsageError("config: personalization.degree must be high, medium or none, "
                     "got '" + degree + "'");
  }

  cfg.hidden_dims = keys.integer_list("model.hidden", {200});
  cfg.train_fraction = keys.number("data.train_fraction", 0.75);

  const std::string source = keys.str("data.source", "synthetic");
  if (source == "synthetic") {
    SyntheticSpec spec;
    spec.classes = keys.integer("data.classes", 10);
    spec.input_dim = keys.integer("data.input_dim", 10);
    spec.samples_per_class = keys.integer("data.samples_per_class", 100);
    spec.cluster_spread = keys.number("data.sigma", 0.5);
    spec.seed = cfg.seed;
    cfg.data.synthetic = spec;
    cfg.personalization.total_classes = spec.classes;
  } else if (source == "idx") {
    cfg.data.idx_images = keys.required("data.images");
    cfg.data.idx_labels = keys.required("data.labels");
  } else {
    throw UsageError("config: data.source must be synthetic or idx, got '" + source +
                     "'");
  }

  keys.reject_unknown();

  if (overrides.seed) {
    cfg.seed = *overrides.seed;
    if (cfg.data.synthetic) cfg.data.synthetic->seed = cfg.seed;
  }
  if (overrides.rounds) cfg.rounds = *overrides.rounds;
  if (overrides.algorithm) {
    cfg.algorithm.algorithm = detail::parse_algorithm(*overrides.algorithm);
  }
  if (overrides.threads) cfg.threads = *overrides.threads;

  cfg.validate();
  return cfg;
}

}  // namespace pflego
