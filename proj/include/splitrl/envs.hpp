#pragma once

// Deterministic two-state surrogate control tasks.
//
// ParamHopper: a point mass on a vertical spring leg with thrust during
// stance. DirectionalWalker: a damped 1-D point mass rewarded for moving in
// one direction, observing only its velocity.

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "splitrl/rng.hpp"

namespace splitrl {

struct HopperParams {
  double mass = 10.0;          // kg
  double spring_k = 200.0;     // N/m
  double rest_length = 1.0;    // m
  double thrust_scale = 40.0;  // N at |a| = 1
  double dt = 0.01;
  double gravity = 9.8;
  double crash_height = 0.2;
  double alive_bonus = 1.0;
  double ctrl_cost = 0.001;
  std::array<double, 2> init_z{1.00, 1.05};
};

struct WalkerParams {
  int direction = +1;  // +1 forward, -1 backward
  double dt = 0.05;
  double damping = 0.5;  // 1/s
  double force_scale = 1.0;
  double ctrl_cost = 0.001;
  std::array<double, 2> init_v{-0.05, 0.05};
};

enum class TaskFamily { param_hopper, directional_walker };

struct TaskSpec {
  std::string name;
  std::variant<HopperParams, WalkerParams> params;
  int max_steps = 500;
  // Identifies the task's random streams. Two specs with equal dynamics and
  // equal seeds produce identical rollouts.
  std::uint64_t seed = 0;

  TaskFamily family() const {
    return std::holds_alternative<HopperParams>(params) ? TaskFamily::param_hopper
                                                        : TaskFamily::directional_walker;
  }
  std::size_t obs_dim() const { return family() == TaskFamily::param_hopper ? 2 : 1; }
  std::size_t act_dim() const { return 1; }
};

struct EnvState {
  // Hopper: (z, vz). Walker: (x, v).
  std::array<double, 2> q{0.0, 0.0};
  int steps = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool done = false;      // episode over, for either reason
  bool terminal = false;  // failure; the successor state has value zero
};

struct ResetResult {
  EnvState state;
  Eigen::VectorXd observation;
};

/// Draws an initial state from the task's init ranges.
ResetResult env_reset(const TaskSpec& spec, Rng& rng);

/// Applies the task dynamics with the action clipped to [-1, 1].
/// Throws std::logic_error when state is already done.
StepResult env_step(const TaskSpec& spec, const EnvState& state, const Eigen::VectorXd& action);

Eigen::VectorXd observe(const TaskSpec& spec, const EnvState& state);

/// Mechanical energy 1/2 m vz^2 + m g z + 1/2 k max(L0 - z, 0)^2.
double hopper_energy(const HopperParams& p, const EnvState& state);

HopperParams hopper(double mass, double spring_k);
TaskSpec hopper_task(std::string name, double mass, double spring_k, std::uint64_t seed);
TaskSpec walker_task(std::string name, int direction, std::uint64_t seed);

/// Named task suites: "hopper_shapes", "walker", "hopper_mass_3",
/// "hopper_mass_8", "hopper_mass_14". Throws on unknown names.
std::vector<TaskSpec> make_suite(const std::string& name);
std::vector<std::string> suite_names();

void validate_task(const TaskSpec& spec);

}  // namespace splitrl
