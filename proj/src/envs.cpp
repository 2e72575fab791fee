#include "splitrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splitrl {

namespace {

double clip_unit(double a) { return std::clamp(a, -1.0, 1.0); }

double uniform(Rng& rng, const std::array<double, 2>& range) {
  if (range[0] == range[1]) return range[0];
  return std::uniform_real_distribution<double>(range[0], range[1])(rng);
}

}  // namespace

Eigen::VectorXd observe(const TaskSpec& spec, const EnvState& state) {
  if (spec.family() == TaskFamily::param_hopper) {
    Eigen::VectorXd obs(2);
    obs << state.q[0], state.q[1];
    return obs;
  }
  Eigen::VectorXd obs(1);
  obs << state.q[1];
  return obs;
}

ResetResult env_reset(const TaskSpec& spec, Rng& rng) {
  EnvState state;
  if (const auto* hp = std::get_if<HopperParams>(&spec.params)) {
    state.q = {uniform(rng, hp->init_z), 0.0};
  } else {
    const auto& wp = std::get<WalkerParams>(spec.params);
    state.q = {0.0, uniform(rng, wp.init_v)};
  }
  return {state, observe(spec, state)};
}

StepResult env_step(const TaskSpec& spec, const EnvState& state, const Eigen::VectorXd& action) {
  if (state.done) throw std::logic_error("env_step on a finished episode of task " + spec.name);
  if (static_cast<std::size_t>(action.size()) != spec.act_dim()) {
    throw std::invalid_argument("action dimension mismatch for task " + spec.name);
  }
  const double a = clip_unit(action[0]);

  StepResult out;
  out.state = state;
  out.state.steps = state.steps + 1;
  auto& q = out.state.q;

  if (const auto* hp = std::get_if<HopperParams>(&spec.params)) {
    const HopperParams& p = *hp;
    double acc = -p.gravity;
    if (q[0] < p.rest_length) {
      acc = (p.spring_k * (p.rest_length - q[0]) + a * p.thrust_scale) / p.mass - p.gravity;
    }
    q[1] = q[1] + acc * p.dt;
    q[0] = q[0] + q[1] * p.dt;
    out.reward = (q[0] - p.rest_length) + p.alive_bonus - p.ctrl_cost * a * a;
    out.terminal = q[0] <= p.crash_height;
  } else {
    const auto& p = std::get<WalkerParams>(spec.params);
    q[1] = q[1] + (a * p.force_scale - p.damping * q[1]) * p.dt;
    q[0] = q[0] + q[1] * p.dt;
    out.reward = static_cast<double>(p.direction) * q[1] - p.ctrl_cost * a * a;
  }

  out.done = out.terminal || out.state.steps >= spec.max_steps;
  out.state.done = out.done;
  out.observation = observe(spec, out.state);
  if (!out.observation.allFinite() || !std::isfinite(out.reward)) {
    throw std::runtime_error("task " + spec.name + " produced a non-finite transition");
  }
  return out;
}

double hopper_energy(const HopperParams& p, const EnvState& state) {
  const double z = state.q[0];
  const double vz = state.q[1];
  const double compression = std::max(p.rest_length - z, 0.0);
  return 0.5 * p.mass * vz * vz + p.mass * p.gravity * z +
         0.5 * p.spring_k * compression * compression;
}

HopperParams hopper(double mass, double spring_k) {
  HopperParams p;
  p.mass = mass;
  p.spring_k = spring_k;
  return p;
}

TaskSpec hopper_task(std::string name, double mass, double spring_k, std::uint64_t seed) {
  return {std::move(name), hopper(mass, spring_k), 500, seed};
}

TaskSpec walker_task(std::string name, int direction, std::uint64_t seed) {
  WalkerParams p;
  p.direction = direction;
  return {std::move(name), p, 200, seed};
}

std::vector<std::string> suite_names() {
  return {"hopper_shapes", "walker", "hopper_mass_3", "hopper_mass_8", "hopper_mass_14"};
}

std::vector<TaskSpec> make_suite(const std::string& name) {
  if (name == "hopper_shapes") {
    return {hopper_task("hopper_m5_k150", 5, 150, 0), hopper_task("hopper_m10_k200", 10, 200, 1),
            hopper_task("hopper_m15_k250", 15, 250, 2)};
  }
  if (name == "walker") {
    return {walker_task("walker_forward", +1, 0), walker_task("walker_backward", -1, 1)};
  }
  for (int m : {3, 8, 14}) {
    if (name == "hopper_mass_" + std::to_string(m)) {
      return {hopper_task("hopper_m" + std::to_string(m), m, 200, 0),
              hopper_task("hopper_m15", 15, 200, 1)};
    }
  }
  throw std::invalid_argument("unknown task suite '" + name + "'");
}

void validate_task(const TaskSpec& spec) {
  if (spec.max_steps <= 0) throw std::invalid_argument("task " + spec.name + ": max_steps must be positive");
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("task " + spec.name + ": " + field + " must be positive");
    }
  };
  auto range = [&](const std::array<double, 2>& r, const char* field) {
    if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || r[0] > r[1]) {
      throw std::invalid_argument("task " + spec.name + ": " + field + " must be a finite [lo, hi]");
    }
  };
  if (const auto* hp = std::get_if<HopperParams>(&spec.params)) {
    positive(hp->mass, "mass");
    positive(hp->spring_k, "spring_k");
    positive(hp->rest_length, "rest_length");
    positive(hp->dt, "dt");
    range(hp->init_z, "init_z");
  } else {
    const auto& wp = std::get<WalkerParams>(spec.params);
    if (wp.direction != 1 && wp.direction != -1) {
      throw std::invalid_argument("task " + spec.name + ": direction must be +1 or -1");
    }
    positive(wp.dt, "dt");
    range(wp.init_v, "init_v");
  }
}

}  // namespace splitrl
