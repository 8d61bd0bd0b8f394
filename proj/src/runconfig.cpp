#include "cod/runconfig.hpp"

#include "cod/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace cod {

namespace {

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ",";
    if constexpr (std::is_same_v<T, double>)
      out << fmt_real(v[i]);
    else
      out << v[i];
  }
  return out.str();
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + ": not an integer: " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: " + key + ": not an integer: " + v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + ": not a number: " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: " + key + ": not a number: " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config: " + key + ": not a boolean: " + v);
}

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto add_int = [&](const std::string& key, auto member) {
      e.push_back({key,
                   [key, member](RunConfig& c, const std::string& v) {
                     c.*member = static_cast<int>(parse_int(key, v));
                   },
                   [member](const RunConfig& c) { return std::to_string(c.*member); }});
    };
    auto add_u64 = [&](const std::string& key, auto member) {
      e.push_back({key,
                   [key, member](RunConfig& c, const std::string& v) {
                     c.*member = static_cast<std::uint64_t>(parse_int(key, v));
                   },
                   [member](const RunConfig& c) { return std::to_string(c.*member); }});
    };
    auto add_real = [&](const std::string& key, auto member) {
      e.push_back({key,
                   [key, member](RunConfig& c, const std::string& v) {
                     c.*member = parse_real(key, v);
                   },
                   [member](const RunConfig& c) { return fmt_real(c.*member); }});
    };
    auto add_bool = [&](const std::string& key, auto member) {
      e.push_back({key,
                   [key, member](RunConfig& c, const std::string& v) {
                     c.*member = parse_bool(key, v);
                   },
                   [member](const RunConfig& c) { return c.*member ? "true" : "false"; }});
    };

    add_int("env.tasks", &RunConfig::env_tasks);
    e.push_back({"env.angles_deg",
                 [](RunConfig& c, const std::string& v) {
                   c.env_angles_deg.clear();
                   std::istringstream in(v);
                   std::string part;
                   while (std::getline(in, part, ','))
                     c.env_angles_deg.push_back(parse_real("env.angles_deg", trim(part)));
                 },
                 [](const RunConfig& c) { return join_list(c.env_angles_deg); }});
    add_real("env.dt", &RunConfig::env_dt);
    add_real("env.v_max", &RunConfig::env_v_max);
    add_real("env.gain", &RunConfig::env_gain);
    add_int("env.episode_len", &RunConfig::env_episode_len);
    add_int("env.episodes_per_task", &RunConfig::env_episodes_per_task);
    add_real("env.collect_noise", &RunConfig::env_collect_noise);
    add_real("env.v0_speed_max", &RunConfig::env_v0_speed_max);
    add_real("env.eta", &RunConfig::env_eta);
    add_real("env.rho", &RunConfig::env_rho);
    add_u64("env.seed", &RunConfig::env_seed);

    add_int("model.seq_len", &RunConfig::model_seq_len);
    add_int("model.hidden", &RunConfig::model_hidden);
    e.push_back({"model.conv_mult",
                 [](RunConfig& c, const std::string& v) {
                   c.model_conv_mult.clear();
                   std::istringstream in(v);
                   std::string part;
                   while (std::getline(in, part, ','))
                     c.model_conv_mult.push_back(
                         static_cast<int>(parse_int("model.conv_mult", trim(part))));
                 },
                 [](const RunConfig& c) { return join_list(c.model_conv_mult); }});
    add_int("model.n_mid", &RunConfig::model_n_mid);
    add_int("model.groups", &RunConfig::model_groups);
    e.push_back({"model.cond_mode",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "task_vector" && v != "return_scalar")
                     throw std::invalid_argument(
                         "config: model.cond_mode must be task_vector or return_scalar");
                   c.model_cond_mode = v;
                 },
                 [](const RunConfig& c) { return c.model_cond_mode; }});
    add_bool("model.lora", &RunConfig::model_lora);
    add_int("model.lora_rank", &RunConfig::model_lora_rank);
    add_u64("model.lora_seed", &RunConfig::model_lora_seed);
    add_u64("model.seed", &RunConfig::model_seed);

    add_int("train.steps_per_task", &RunConfig::train_steps_per_task);
    add_int("train.batch", &RunConfig::train_batch);
    add_real("train.lr", &RunConfig::train_lr);
    e.push_back({"train.upsilon",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "inf") {
                     c.train_rehearsal = false;
                   } else {
                     c.train_upsilon = static_cast<int>(parse_int("train.upsilon", v));
                     c.train_rehearsal = true;
                   }
                 },
                 [](const RunConfig& c) {
                   return c.train_rehearsal ? std::to_string(c.train_upsilon)
                                            : std::string("inf");
                 }});
    add_real("train.xi", &RunConfig::train_xi);
    add_real("train.dropout", &RunConfig::train_dropout);
    add_u64("train.seed", &RunConfig::train_seed);
    add_int("train.evals_per_task", &RunConfig::train_evals_per_task);
    add_int("train.eval_threads", &RunConfig::train_eval_threads);

    add_int("schedule.k", &RunConfig::schedule_k);
    add_real("schedule.beta_min", &RunConfig::schedule_beta_min);
    add_real("schedule.beta_max", &RunConfig::schedule_beta_max);

    add_real("sampler.omega", &RunConfig::sampler_omega);
    add_int("sampler.stride", &RunConfig::sampler_stride);
    add_bool("sampler.use_cfg", &RunConfig::sampler_use_cfg);

    add_int("eval.episodes", &RunConfig::eval_episodes);
    add_u64("eval.seed", &RunConfig::eval_seed);
    return e;
  }();
  return entries;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& entry : schema()) {
    if (entry.key == key) {
      entry.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key " + key);
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& entry : schema()) {
    const std::string sec = entry.key.substr(0, entry.key.find('.'));
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << entry.key.substr(entry.key.find('.') + 1) << " = " << entry.get(*this) << "\n";
  }
  return out.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical_text())); }

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section: " + t);
      section = t.substr(1, t.size() - 2);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value: " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) { return parse_text(read_file(path)); }

void RunConfig::validate() const {
  if (env_tasks < 1) throw std::invalid_argument("config: env.tasks must be >= 1");
  if (static_cast<int>(env_angles_deg.size()) != env_tasks)
    throw std::invalid_argument("config: env.angles_deg must list one angle per task (" +
                                std::to_string(env_tasks) + ")");
  if (env_episode_len < model_seq_len)
    throw std::invalid_argument("config: env.episode_len must be >= model.seq_len");
  if (env_episodes_per_task < 1)
    throw std::invalid_argument("config: env.episodes_per_task must be >= 1");
  if (env_eta < 0.0) throw std::invalid_argument("config: env.eta must be >= 0");
  if (!(env_rho > 0.0)) throw std::invalid_argument("config: env.rho must be > 0");
  denoiser_config().validate();
  train_config().validate();
  if (eval_episodes < 1) throw std::invalid_argument("config: eval.episodes must be >= 1");
  if (sampler_stride < 1 || sampler_stride > schedule_k)
    throw std::invalid_argument("config: sampler.stride must be in [1, schedule.k]");
  linear_schedule(schedule_k, schedule_beta_min, schedule_beta_max);
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig cfg;
  cfg.seq_len = model_seq_len;
  cfg.channel_dim = PointDirTask::kStateDim + PointDirTask::kActionDim;
  cfg.hidden = model_hidden;
  cfg.conv_mult = model_conv_mult;
  cfg.n_down = static_cast<int>(model_conv_mult.size());
  cfg.n_mid = model_n_mid;
  cfg.n_up = static_cast<int>(model_conv_mult.size()) - 1;
  cfg.cond_dim = cond_dim();
  cfg.cond_mode = model_cond_mode == "return_scalar" ? CondMode::ReturnScalar
                                                     : CondMode::TaskVector;
  cfg.dropout_p = train_dropout;
  cfg.groups = model_groups;
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.steps_per_task = train_steps_per_task;
  cfg.batch = train_batch;
  cfg.lr = static_cast<float>(train_lr);
  cfg.upsilon = train_upsilon;
  cfg.rehearsal = train_rehearsal;
  cfg.xi = train_xi;
  cfg.dropout_p = train_dropout;
  cfg.K = schedule_k;
  cfg.beta_min = schedule_beta_min;
  cfg.beta_max = schedule_beta_max;
  cfg.t_e = model_seq_len;
  cfg.omega = sampler_omega;
  cfg.stride = sampler_stride;
  cfg.seed = train_seed;
  return cfg;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig cfg;
  cfg.episodes = eval_episodes;
  cfg.stride = sampler_stride;
  cfg.omega = sampler_omega;
  cfg.use_cfg = sampler_use_cfg;
  cfg.seed = eval_seed;
  return cfg;
}

std::vector<PointDirTask> RunConfig::tasks() const {
  std::vector<PointDirTask> out;
  for (int i = 0; i < env_tasks; ++i)
    out.push_back(PointDirTask::from_angle(i, env_angles_deg[static_cast<std::size_t>(i)] *
                                                  3.14159265358979323846 / 180.0,
                                           env_dt, env_v_max, env_episode_len, env_gain));
  return out;
}

}  // namespace cod
