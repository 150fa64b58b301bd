#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "viva/episode.hpp"

namespace viva::sim {

inline constexpr int kViewSize = 32;
inline constexpr int kProprioDim = 3;  // shoulder, elbow, gripper

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Box {
  Vec2 center;
  double half_size = 0.08;

  bool contains(Vec2 p) const;
};

enum class ObjectShape { kSquare, kTriangle };

std::string to_string(ObjectShape shape);
ObjectShape object_shape_from_string(const std::string& name);

// Object appearance and scene-layout family. The default is the training
// distribution; held_out_variant() is the unseen-object variant.
struct TaskVariant {
  ObjectShape shape = ObjectShape::kSquare;
  double object_half_size = 0.05;
  double zone_half_size = 0.08;
};

TaskVariant default_variant();
TaskVariant held_out_variant();

struct ArmGeometry {
  Vec2 base{0.5, 0.05};
  double upper = 0.50;
  double fore = 0.42;
};

struct WorldState {
  double shoulder = 0.0;  // radians
  double elbow = 0.0;     // radians
  double gripper = 1.0;   // aperture, 1 = open
  Vec2 object;
  double object_height = 0.0;
  Box target_zone;
  Box distractor_zone;
  bool held = false;
  TaskVariant variant;
};

struct Waypoint {
  Vec2 position;     // end-effector target
  double gripper;    // aperture at the waypoint
  double time;       // fraction of the episode in [0,1]
};

struct FailureEvent {
  FailureKind kind = FailureKind::kDrop;
  int trigger_step = 0;
};

struct ScriptConfig {
  std::vector<Waypoint> waypoints;
  double noise_scale = 0.01;  // radians per step
  std::optional<FailureEvent> failure_event;
  Vec2 object_start;
  Box target_zone;
  Box distractor_zone;
  TaskVariant variant;
};

struct CorpusOptions {
  int min_length = 60;
  int max_length = 140;
  double noise_scale = 0.01;
  TaskVariant variant;
  std::vector<FailureKind> failure_kinds{FailureKind::kDrop, FailureKind::kMisplace, FailureKind::kStall};
  // Trigger steps are round(fraction * T); all fractions fall in the transport phase.
  std::vector<double> trigger_fractions{0.32, 0.35, 0.38, 0.41};
  std::string task_id = "pick_place";
};

Vec2 forward_kinematics(const ArmGeometry& arm, double shoulder, double elbow);
Vec2 elbow_position(const ArmGeometry& arm, double shoulder);
// Analytic inverse kinematics (positive-elbow branch); unreachable targets are projected onto the workspace.
std::array<double, 2> inverse_kinematics(const ArmGeometry& arm, Vec2 target);

// Random scene (object, zones) with the nominal pick-and-place waypoint script.
ScriptConfig make_pick_place_script(std::uint64_t scene_seed, const TaskVariant& variant, double noise_scale);

// Runs the scripted controller for T steps. Requires T >= 10 and a trigger step < T.
Episode rollout(const ScriptConfig& config, std::uint64_t seed, int length);

MultiViewObservation render_views(const WorldState& state);

// Exactly n_success successful and n_failure failed episodes, deterministic in seed.
std::vector<Episode> generate_corpus(int n_success, int n_failure, std::uint64_t seed,
                                     const CorpusOptions& options = {});

// The state rollout() would report at step t; exposed for tests.
std::vector<WorldState> rollout_states(const ScriptConfig& config, std::uint64_t seed, int length);

std::string script_to_json(const ScriptConfig& config);
ScriptConfig script_from_json(const std::string& text);

}  // namespace viva::sim
