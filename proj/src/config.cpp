#include "splitrl/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace splitrl {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::array<double, 2> read_range(const json& j, const char* key, std::array<double, 2> fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) throw std::invalid_argument(std::string(key) + " must be [lo, hi]");
  return {v[0], v[1]};
}

}  // namespace

TaskSpec task_from_json(const json& j, std::uint64_t default_seed) {
  if (!j.is_object() || !j.contains("family")) throw std::invalid_argument("task needs a \"family\"");
  const auto family = j.at("family").get<std::string>();
  TaskSpec spec;
  spec.seed = default_seed;
  read_opt(j, "name", spec.name);
  read_opt(j, "seed", spec.seed);

  if (family == "param_hopper") {
    reject_unknown(j, {"family", "name", "seed", "max_steps", "mass", "spring_k", "rest_length",
                       "thrust_scale", "dt", "gravity", "crash_height", "alive_bonus", "ctrl_cost", "init_z"},
                   "param_hopper task");
    if (!j.contains("mass")) throw std::invalid_argument("param_hopper task needs \"mass\"");
    HopperParams p;
    read_opt(j, "mass", p.mass);
    read_opt(j, "spring_k", p.spring_k);
    read_opt(j, "rest_length", p.rest_length);
    read_opt(j, "thrust_scale", p.thrust_scale);
    read_opt(j, "dt", p.dt);
    read_opt(j, "gravity", p.gravity);
    read_opt(j, "crash_height", p.crash_height);
    read_opt(j, "alive_bonus", p.alive_bonus);
    read_opt(j, "ctrl_cost", p.ctrl_cost);
    p.init_z = read_range(j, "init_z", p.init_z);
    spec.params = p;
    spec.max_steps = 500;
  } else if (family == "directional_walker") {
    reject_unknown(j, {"family", "name", "seed", "max_steps", "direction", "dt", "damping", "force_scale",
                       "ctrl_cost", "init_v"},
                   "directional_walker task");
    if (!j.contains("direction")) throw std::invalid_argument("directional_walker task needs \"direction\"");
    WalkerParams p;
    const auto direction = j.at("direction").get<std::string>();
    if (direction == "forward") {
      p.direction = +1;
    } else if (direction == "backward") {
      p.direction = -1;
    } else {
      throw std::invalid_argument("direction must be \"forward\" or \"backward\"");
    }
    read_opt(j, "dt", p.dt);
    read_opt(j, "damping", p.damping);
    read_opt(j, "force_scale", p.force_scale);
    read_opt(j, "ctrl_cost", p.ctrl_cost);
    p.init_v = read_range(j, "init_v", p.init_v);
    spec.params = p;
    spec.max_steps = 200;
  } else {
    throw std::invalid_argument("unknown task family '" + family + "'");
  }
  read_opt(j, "max_steps", spec.max_steps);
  if (spec.name.empty()) spec.name = family + "_" + std::to_string(default_seed);
  validate_task(spec);
  return spec;
}

json task_to_json(const TaskSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["seed"] = spec.seed;
  j["max_steps"] = spec.max_steps;
  if (const auto* p = std::get_if<HopperParams>(&spec.params)) {
    j["family"] = "param_hopper";
    j["mass"] = p->mass;
    j["spring_k"] = p->spring_k;
    j["rest_length"] = p->rest_length;
    j["thrust_scale"] = p->thrust_scale;
    j["dt"] = p->dt;
    j["gravity"] = p->gravity;
    j["crash_height"] = p->crash_height;
    j["alive_bonus"] = p->alive_bonus;
    j["ctrl_cost"] = p->ctrl_cost;
    j["init_z"] = {p->init_z[0], p->init_z[1]};
  } else {
    const auto& w = std::get<WalkerParams>(spec.params);
    j["family"] = "directional_walker";
    j["direction"] = w.direction > 0 ? "forward" : "backward";
    j["dt"] = w.dt;
    j["damping"] = w.damping;
    j["force_scale"] = w.force_scale;
    j["ctrl_cost"] = w.ctrl_cost;
    j["init_v"] = {w.init_v[0], w.init_v[1]};
  }
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, {"name", "suite", "tasks", "variant", "jt_iterations", "sp_fraction", "total_iterations",
                     "seeds", "hidden", "ppo", "per_task_value", "output_dir", "grid"},
                 "experiment config");
  ExperimentConfig c;
  read_opt(j, "name", c.name);
  read_opt(j, "suite", c.suite);
  if (j.contains("tasks")) {
    const auto& tasks = j.at("tasks");
    if (!tasks.is_array() || tasks.empty()) throw std::invalid_argument("\"tasks\" must be a non-empty array");
    for (std::size_t i = 0; i < tasks.size(); ++i) c.tasks.push_back(task_from_json(tasks[i], i));
    if (!j.contains("suite")) c.suite = "custom";
  } else {
    c.tasks = make_suite(c.suite);
  }
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  read_opt(j, "jt_iterations", c.jt_iterations);
  read_opt(j, "sp_fraction", c.sp_fraction);
  read_opt(j, "total_iterations", c.total_iterations);
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "per_task_value", c.per_task_value);
  read_opt(j, "output_dir", c.output_dir);

  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    reject_unknown(p, {"clip_epsilon", "discount", "gae_lambda", "epochs_per_iter", "minibatch_size",
                       "batch_size", "policy_lr", "value_lr"},
                   "ppo section");
    read_opt(p, "clip_epsilon", c.ppo.clip_epsilon);
    read_opt(p, "discount", c.ppo.discount);
    read_opt(p, "gae_lambda", c.ppo.gae_lambda);
    read_opt(p, "epochs_per_iter", c.ppo.epochs_per_iter);
    read_opt(p, "minibatch_size", c.ppo.minibatch_size);
    read_opt(p, "batch_size", c.ppo.batch_size);
    read_opt(p, "policy_lr", c.ppo.policy_lr);
    read_opt(p, "value_lr", c.ppo.value_lr);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    reject_unknown(g, {"jt_values", "sp_values", "random_jt", "random_sp"}, "grid section");
    read_opt(g, "jt_values", c.grid.jt_values);
    read_opt(g, "sp_values", c.grid.sp_values);
    read_opt(g, "random_jt", c.grid.random_jt);
    read_opt(g, "random_sp", c.grid.random_sp);
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["suite"] = c.suite;
  j["tasks"] = json::array();
  for (const auto& t : c.tasks) j["tasks"].push_back(task_to_json(t));
  j["variant"] = to_string(c.variant);
  j["jt_iterations"] = c.jt_iterations;
  j["sp_fraction"] = c.sp_fraction;
  j["total_iterations"] = c.total_iterations;
  j["seeds"] = c.seeds;
  j["hidden"] = c.hidden;
  j["per_task_value"] = c.per_task_value;
  j["output_dir"] = c.output_dir;
  j["ppo"] = {{"clip_epsilon", c.ppo.clip_epsilon}, {"discount", c.ppo.discount},
              {"gae_lambda", c.ppo.gae_lambda},     {"epochs_per_iter", c.ppo.epochs_per_iter},
              {"minibatch_size", c.ppo.minibatch_size}, {"batch_size", c.ppo.batch_size},
              {"policy_lr", c.ppo.policy_lr},       {"value_lr", c.ppo.value_lr}};
  j["grid"] = {{"jt_values", c.grid.jt_values}, {"sp_values", c.grid.sp_values},
               {"random_jt", c.grid.random_jt}, {"random_sp", c.grid.random_sp}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace splitrl
