#include "cdan/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cdan/errors.hpp"

namespace cdan {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config: " + std::string(key) + " expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  // Accept 1e5-style integers too.
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec == std::errc() && p == v.data() + v.size()) return out;
  const double d = to_double(key, v);
  if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
    throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return static_cast<std::uint64_t>(d);
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: " + std::string(key) + " expects true/false, got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view, const std::filesystem::path&)>;

template <class T>
Setter real(T RunConfig::*m) {
  return [m](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
    c.*m = to_double(k, v);
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto size = [](std::size_t RunConfig::*m) -> Setter {
      return [m](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
        c.*m = to_u64(k, v);
      };
    };
    auto ppo_real = [](double PPOConfig::*m) -> Setter {
      return [m](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
        c.ppo.*m = to_double(k, v);
      };
    };
    auto env_real = [](double EnvParams::*m) -> Setter {
      return [m](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
        c.env.*m = to_double(k, v);
      };
    };
    auto env_size = [](std::size_t EnvParams::*m) -> Setter {
      return [m](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
        c.env.*m = to_u64(k, v);
      };
    };
    t["suite"] = [](RunConfig& c, std::string_view, std::string_view v, const std::filesystem::path& base) {
      std::filesystem::path p{std::string(v)};
      c.suite = p.is_relative() && !base.empty() ? base / p : p;
    };
    t["total_steps"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.total_steps = to_u64(k, v);
    };
    t["seed"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.seed = to_u64(k, v);
    };
    t["ablation"] = [](RunConfig& c, std::string_view, std::string_view v, const std::filesystem::path&) {
      c.ablation = Ablation::parse(v);
    };
    t["diversity"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.ablation.diversity = to_bool(k, v);
    };
    t["self_correction"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.ablation.self_correction = to_bool(k, v);
    };
    t["horizon"] = size(&RunConfig::horizon);
    t["gamma"] = ppo_real(&PPOConfig::gamma);
    t["clip_range"] = ppo_real(&PPOConfig::clip);
    t["gae_lambda"] = ppo_real(&PPOConfig::gae_lambda);
    t["alpha1"] = ppo_real(&PPOConfig::lr);
    t["value_coef"] = ppo_real(&PPOConfig::value_coef);
    t["entropy_coef"] = ppo_real(&PPOConfig::entropy_coef);
    t["l1_coef"] = ppo_real(&PPOConfig::l1_coef);
    t["diversity_coef"] = ppo_real(&PPOConfig::diversity_coef);
    t["epochs"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.ppo.epochs = to_u64(k, v);
    };
    t["batch_size"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.ppo.minibatch = to_u64(k, v);
    };
    t["alpha2"] = real(&RunConfig::alpha2);
    t["alpha3"] = real(&RunConfig::alpha3);
    t["L_d"] = size(&RunConfig::disc_window);
    t["H_d"] = size(&RunConfig::disc_hidden);
    t["H_p"] = size(&RunConfig::policy_hidden);
    t["disc_steps"] = size(&RunConfig::disc_steps);
    t["disc_buffer"] = size(&RunConfig::disc_buffer);
    t["disc_batch"] = size(&RunConfig::disc_batch);
    t["disc_grad_clip"] = real(&RunConfig::disc_grad_clip);
    t["disc_train_on_real"] = [](RunConfig& c, std::string_view k, std::string_view v,
                                 const std::filesystem::path&) { c.disc_train_on_real = to_bool(k, v); };
    t["sc_window"] = size(&RunConfig::sc_window);
    t["memory_capacity"] = size(&RunConfig::memory_capacity);
    t["current_task_mass"] = real(&RunConfig::current_task_mass);
    t["eta"] = env_real(&EnvParams::eta);
    t["dt"] = env_real(&EnvParams::dt);
    t["v_max"] = env_real(&EnvParams::v_max);
    t["omega_max"] = env_real(&EnvParams::omega_max);
    t["accel_max"] = env_real(&EnvParams::accel_max);
    t["goal_radius"] = env_real(&EnvParams::goal_radius);
    t["step_limit"] = env_size(&EnvParams::step_limit);
    t["ray_count"] = env_size(&EnvParams::ray_count);
    t["ray_range"] = env_real(&EnvParams::ray_range);
    t["eval_every"] = [](RunConfig& c, std::string_view k, std::string_view v, const std::filesystem::path&) {
      c.eval_every = to_u64(k, v);
    };
    t["eval_episodes"] = size(&RunConfig::eval_episodes);
    t["final_eval_episodes"] = size(&RunConfig::final_eval_episodes);
    t["checkpoint_every"] = size(&RunConfig::checkpoint_every);
    return t;
  }();
  return table;
}

}  // namespace

Ablation Ablation::parse(std::string_view name) {
  if (name == "baseline") return {false, false};
  if (name == "de") return {true, false};
  if (name == "sc") return {false, true};
  if (name == "de+sc") return {true, true};
  throw ConfigError("unknown ablation '" + std::string(name) + "' (expected baseline, de, sc or de+sc)");
}

std::string Ablation::name() const {
  if (diversity && self_correction) return "de+sc";
  if (diversity) return "de";
  if (self_correction) return "sc";
  return "baseline";
}

void RunConfig::validate() const {
  ppo.validate();
  if (suite.empty()) throw ConfigError("config: suite is required");
  if (total_steps == 0) throw ConfigError("config: total_steps must be positive");
  if (horizon == 0) throw ConfigError("config: horizon must be positive");
  if (disc_window == 0 || disc_window > 100) throw ConfigError("config: L_d must be in [1, 100]");
  if (sc_window == 0 || sc_window > 100) throw ConfigError("config: sc_window must be in [1, 100]");
  if (disc_buffer > 0 && disc_batch == 0) throw ConfigError("config: disc_batch must be positive");
  if (disc_hidden == 0 || policy_hidden == 0) throw ConfigError("config: hidden sizes must be positive");
  if (memory_capacity == 0) throw ConfigError("config: memory_capacity must be positive");
  if (!(current_task_mass > 0.0 && current_task_mass <= 1.0)) {
    throw ConfigError("config: current_task_mass must be in (0, 1]");
  }
  if (!(alpha2 > 0.0) || !(alpha3 > 0.0)) throw ConfigError("config: learning rates must be positive");
  if (!(env.dt > 0.0) || !(env.v_max > 0.0) || !(env.goal_radius > 0.0) || env.step_limit == 0 ||
      env.ray_count == 0 || !(env.ray_range > 0.0)) {
    throw ConfigError("config: environment parameters must be positive");
  }
  if (eval_episodes == 0 || final_eval_episodes == 0) throw ConfigError("config: eval episode counts must be positive");
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value, const std::filesystem::path& base) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second(cfg, key, value, base);
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  bool header = false;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "cdan-config 1") throw ConfigError("config: expected header 'cdan-config 1' on line " +
                                                     std::to_string(lineno));
      header = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ConfigError("config: missing header 'cdan-config 1'");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "cdan-config 1\n"
     << "suite = " << c.suite.string() << "\n"
     << "total_steps = " << c.total_steps << "\n"
     << "horizon = " << c.horizon << "\n"
     << "seed = " << c.seed << "\n"
     << "ablation = " << c.ablation.name() << "\n"
     << "gamma = " << c.ppo.gamma << "\n"
     << "clip_range = " << c.ppo.clip << "\n"
     << "gae_lambda = " << c.ppo.gae_lambda << "\n"
     << "epochs = " << c.ppo.epochs << "\n"
     << "batch_size = " << c.ppo.minibatch << "\n"
     << "alpha1 = " << c.ppo.lr << "\n"
     << "alpha2 = " << c.alpha2 << "\n"
     << "alpha3 = " << c.alpha3 << "\n"
     << "value_coef = " << c.ppo.value_coef << "\n"
     << "entropy_coef = " << c.ppo.entropy_coef << "\n"
     << "l1_coef = " << c.ppo.l1_coef << "\n"
     << "diversity_coef = " << c.ppo.diversity_coef << "\n"
     << "L_d = " << c.disc_window << "\n"
     << "H_d = " << c.disc_hidden << "\n"
     << "H_p = " << c.policy_hidden << "\n"
     << "disc_steps = " << c.disc_steps << "\n"
     << "disc_buffer = " << c.disc_buffer << "\n"
     << "disc_batch = " << c.disc_batch << "\n"
     << "disc_grad_clip = " << c.disc_grad_clip << "\n"
     << "disc_train_on_real = " << (c.disc_train_on_real ? "true" : "false") << "\n"
     << "sc_window = " << c.sc_window << "\n"
     << "memory_capacity = " << c.memory_capacity << "\n"
     << "current_task_mass = " << c.current_task_mass << "\n"
     << "eta = " << c.env.eta << "\n"
     << "dt = " << c.env.dt << "\n"
     << "v_max = " << c.env.v_max << "\n"
     << "omega_max = " << c.env.omega_max << "\n"
     << "accel_max = " << c.env.accel_max << "\n"
     << "goal_radius = " << c.env.goal_radius << "\n"
     << "step_limit = " << c.env.step_limit << "\n"
     << "ray_count = " << c.env.ray_count << "\n"
     << "ray_range = " << c.env.ray_range << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "eval_episodes = " << c.eval_episodes << "\n"
     << "final_eval_episodes = " << c.final_eval_episodes << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n";
  return os.str();
}

}  // namespace cdan
