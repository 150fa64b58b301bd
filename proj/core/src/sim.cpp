#include "viva/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "viva/errors.hpp"
#include "viva/random.hpp"

namespace viva::sim {
namespace {

constexpr double kGraspRadius = 0.06;
constexpr double kCarryHeight = 0.20;
constexpr double kFallPerStep = 0.07;
constexpr double kErrorDecay = 0.7;
constexpr double kGripperClosed = 0.2;
constexpr double kSwingTime = 0.06;
constexpr double kSagPerStep = 0.04;

const ArmGeometry kArm{};

struct JointKey {
  double time;
  double shoulder;
  double elbow;
  double gripper;
};

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<JointKey> joint_keys(const std::vector<Waypoint>& waypoints) {
  std::vector<JointKey> keys;
  keys.reserve(waypoints.size());
  for (const auto& wp : waypoints) {
    const auto q = inverse_kinematics(kArm, wp.position);
    keys.push_back({wp.time, q[0], q[1], wp.gripper});
  }
  return keys;
}

JointKey interpolate(const std::vector<JointKey>& keys, double s) {
  if (s <= keys.front().time) return keys.front();
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (s <= keys[i].time) {
      const JointKey& a = keys[i - 1];
      const JointKey& b = keys[i];
      const double span = b.time - a.time;
      const double u = span > 0.0 ? (s - a.time) / span : 1.0;
      return {s, a.shoulder + u * (b.shoulder - a.shoulder), a.elbow + u * (b.elbow - a.elbow),
              a.gripper + u * (b.gripper - a.gripper)};
    }
  }
  return keys.back();
}

// Rewrites the remaining plan so that the arm swings straight to the
// distractor zone and finishes the script there.
std::vector<JointKey> replan_to_distractor(const ScriptConfig& config, const JointKey& now) {
  std::vector<JointKey> keys{now};
  const auto decoy = inverse_kinematics(kArm, config.distractor_zone.center);
  const double arrive = now.time + kSwingTime;
  keys.push_back({arrive, decoy[0], decoy[1], now.gripper});
  for (const auto& wp : config.waypoints) {
    if (wp.time <= arrive) continue;
    if (distance(wp.position, config.target_zone.center) < 1e-9) {
      keys.push_back({wp.time, decoy[0], decoy[1], wp.gripper});
    } else {
      const auto q = inverse_kinematics(kArm, wp.position);
      keys.push_back({wp.time, q[0], q[1], wp.gripper});
    }
  }
  return keys;
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

// ---------------------------------------------------------------------------
// Rendering

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kBackground{25, 25, 30};
constexpr Rgb kTable{90, 90, 90};
constexpr Rgb kTarget{40, 150, 60};
constexpr Rgb kDistractor{70, 70, 150};
constexpr Rgb kArmColor{80, 110, 230};
constexpr Rgb kGripperColor{240, 220, 60};
constexpr double kArmHeight = 0.30;
constexpr double kMaxHeight = 0.5;

// Maps a world rectangle [u0,u1] x [v0,v1] onto the image, v pointing up.
class Canvas {
 public:
  Canvas(double u0, double u1, double v0, double v1)
      : image_(kViewSize, kViewSize), u0_(u0), u1_(u1), v0_(v0), v1_(v1) {
    for (int r = 0; r < kViewSize; ++r)
      for (int c = 0; c < kViewSize; ++c) put(r, c, kBackground);
  }

  double u_of(int col) const { return u0_ + (col + 0.5) / kViewSize * (u1_ - u0_); }
  double v_of(int row) const { return v0_ + (kViewSize - row - 0.5) / kViewSize * (v1_ - v0_); }
  int col_of(double u) const { return static_cast<int>(std::floor((u - u0_) / (u1_ - u0_) * kViewSize)); }
  int row_of(double v) const {
    return kViewSize - 1 - static_cast<int>(std::floor((v - v0_) / (v1_ - v0_) * kViewSize));
  }

  void put(int row, int col, Rgb color) {
    if (row < 0 || row >= kViewSize || col < 0 || col >= kViewSize) return;
    std::uint8_t* px = image_.at(row, col);
    px[0] = color.r;
    px[1] = color.g;
    px[2] = color.b;
  }

  template <typename Inside>
  void fill(Inside inside, Rgb color) {
    for (int r = 0; r < kViewSize; ++r)
      for (int c = 0; c < kViewSize; ++c)
        if (inside(u_of(c), v_of(r))) put(r, c, color);
  }

  void fill_rect(double ua, double ub, double va, double vb, Rgb color) {
    fill([&](double u, double v) { return u >= ua && u <= ub && v >= va && v <= vb; }, color);
  }

  void line(double ua, double va, double ub, double vb, Rgb color) {
    const double len_px = std::hypot((ub - ua) / (u1_ - u0_), (vb - va) / (v1_ - v0_)) * kViewSize;
    const int samples = std::max(2, static_cast<int>(std::ceil(len_px * 2.0)) + 1);
    for (int i = 0; i < samples; ++i) {
      const double s = static_cast<double>(i) / (samples - 1);
      put(row_of(va + s * (vb - va)), col_of(ua + s * (ub - ua)), color);
    }
  }

  void dot(double u, double v, Rgb color) { put(row_of(v), col_of(u), color); }

  RgbImage take() { return std::move(image_); }

 private:
  RgbImage image_;
  double u0_, u1_, v0_, v1_;
};

bool inside_triangle(double u, double v, double cu, double cv, double half) {
  // Upward-pointing isosceles triangle inscribed in the object's bounding box.
  if (v < cv - half || v > cv + half) return false;
  const double rel = (v - (cv - half)) / (2.0 * half);  // 0 at base, 1 at apex
  return std::abs(u - cu) <= half * (1.0 - rel);
}

Rgb object_color(const WorldState& s) {
  const double lift = std::clamp(s.object_height / kCarryHeight, 0.0, 1.0);
  return {static_cast<std::uint8_t>(200 + 55 * lift), static_cast<std::uint8_t>(50 + 60 * lift), 40};
}

void draw_object_profile(Canvas& canvas, const WorldState& s, double along) {
  const double half = s.variant.object_half_size;
  const double base = s.object_height;
  const Rgb color = object_color(s);
  if (s.variant.shape == ObjectShape::kTriangle) {
    canvas.fill([&](double u, double v) { return inside_triangle(u, v, along, base + half, half); }, color);
  } else {
    canvas.fill_rect(along - half, along + half, base, base + 2.0 * half, color);
  }
}

RgbImage render_top(const WorldState& s) {
  Canvas canvas(0.0, 1.0, 0.0, 1.0);
  for (const auto& [zone, color] : {std::pair{s.distractor_zone, kDistractor}, std::pair{s.target_zone, kTarget}}) {
    canvas.fill_rect(zone.center.x - zone.half_size, zone.center.x + zone.half_size,
                     zone.center.y - zone.half_size, zone.center.y + zone.half_size, color);
  }
  const double half = s.variant.object_half_size;
  if (s.variant.shape == ObjectShape::kTriangle) {
    canvas.fill([&](double u, double v) { return inside_triangle(u, v, s.object.x, s.object.y, half); },
                object_color(s));
  } else {
    canvas.fill_rect(s.object.x - half, s.object.x + half, s.object.y - half, s.object.y + half, object_color(s));
  }
  const Vec2 elbow = elbow_position(kArm, s.shoulder);
  const Vec2 tip = forward_kinematics(kArm, s.shoulder, s.elbow);
  canvas.line(kArm.base.x, kArm.base.y, elbow.x, elbow.y, kArmColor);
  canvas.line(elbow.x, elbow.y, tip.x, tip.y, kArmColor);
  const double heading = s.shoulder + s.elbow;
  const double spread = 0.015 + 0.035 * std::clamp(s.gripper, 0.0, 1.0);
  const double nx = -std::sin(heading);
  const double ny = std::cos(heading);
  canvas.dot(tip.x + nx * spread, tip.y + ny * spread, kGripperColor);
  canvas.dot(tip.x - nx * spread, tip.y - ny * spread, kGripperColor);
  return canvas.take();
}

// Side (axis = x) or front (axis = y) elevation.
RgbImage render_elevation(const WorldState& s, bool use_x) {
  Canvas canvas(0.0, 1.0, 0.0, kMaxHeight);
  auto along = [use_x](Vec2 p) { return use_x ? p.x : p.y; };
  canvas.fill_rect(0.0, 1.0, 0.0, 0.3 * kMaxHeight / kViewSize, kTable);
  for (const auto& [zone, color] : {std::pair{s.distractor_zone, kDistractor}, std::pair{s.target_zone, kTarget}}) {
    const double c = along(zone.center);
    canvas.fill_rect(c - zone.half_size, c + zone.half_size, 0.0, 0.3 * kMaxHeight / kViewSize, color);
  }
  draw_object_profile(canvas, s, along(s.object));

  const Vec2 elbow = elbow_position(kArm, s.shoulder);
  const Vec2 tip = forward_kinematics(kArm, s.shoulder, s.elbow);
  canvas.line(along(kArm.base), 0.0, along(kArm.base), kArmHeight, kArmColor);
  canvas.line(along(kArm.base), kArmHeight, along(elbow), kArmHeight, kArmColor);
  canvas.line(along(elbow), kArmHeight, along(tip), kArmHeight, kArmColor);
  const double spread = 0.015 + 0.035 * std::clamp(s.gripper, 0.0, 1.0);
  const double finger_low = kArmHeight - 0.06;
  canvas.line(along(tip) - spread, kArmHeight, along(tip) - spread, finger_low, kGripperColor);
  canvas.line(along(tip) + spread, kArmHeight, along(tip) + spread, finger_low, kGripperColor);
  return canvas.take();
}

}  // namespace

bool Box::contains(Vec2 p) const {
  return std::abs(p.x - center.x) <= half_size && std::abs(p.y - center.y) <= half_size;
}

std::string to_string(ObjectShape shape) { return shape == ObjectShape::kTriangle ? "triangle" : "square"; }

ObjectShape object_shape_from_string(const std::string& name) {
  if (name == "square") return ObjectShape::kSquare;
  if (name == "triangle") return ObjectShape::kTriangle;
  throw ValidationError("unknown object shape '" + name + "'");
}

TaskVariant default_variant() { return {}; }

TaskVariant held_out_variant() { return {ObjectShape::kTriangle, 0.065, 0.065}; }

Vec2 elbow_position(const ArmGeometry& arm, double shoulder) {
  return {arm.base.x + arm.upper * std::cos(shoulder), arm.base.y + arm.upper * std::sin(shoulder)};
}

Vec2 forward_kinematics(const ArmGeometry& arm, double shoulder, double elbow) {
  const Vec2 e = elbow_position(arm, shoulder);
  return {e.x + arm.fore * std::cos(shoulder + elbow), e.y + arm.fore * std::sin(shoulder + elbow)};
}

std::array<double, 2> inverse_kinematics(const ArmGeometry& arm, Vec2 target) {
  double dx = target.x - arm.base.x;
  double dy = target.y - arm.base.y;
  double dist = std::hypot(dx, dy);
  const double max_reach = arm.upper + arm.fore - 1e-6;
  const double min_reach = std::abs(arm.upper - arm.fore) + 1e-6;
  if (dist < 1e-12) {
    dx = min_reach;
    dy = 0.0;
    dist = min_reach;
  }
  const double clamped = std::clamp(dist, min_reach, max_reach);
  dx *= clamped / dist;
  dy *= clamped / dist;
  const double cos_elbow =
      std::clamp((clamped * clamped - arm.upper * arm.upper - arm.fore * arm.fore) / (2.0 * arm.upper * arm.fore),
                 -1.0, 1.0);
  const double elbow = std::acos(cos_elbow);  // single branch keeps every scripted pose away from the +-pi seam
  const double shoulder =
      std::atan2(dy, dx) - std::atan2(arm.fore * std::sin(elbow), arm.upper + arm.fore * std::cos(elbow));
  return {wrap_angle(shoulder), wrap_angle(elbow)};
}

ScriptConfig make_pick_place_script(std::uint64_t scene_seed, const TaskVariant& variant, double noise_scale) {
  Rng rng(scene_seed);
  const bool mirror = std::bernoulli_distribution(0.5)(rng);
  auto side = [mirror](double x) { return mirror ? 1.0 - x : x; };

  ScriptConfig config;
  config.variant = variant;
  config.noise_scale = noise_scale;
  config.object_start = {side(uniform(rng, 0.15, 0.32)), uniform(rng, 0.30, 0.45)};
  config.target_zone = {{side(uniform(rng, 0.68, 0.82)), uniform(rng, 0.48, 0.68)}, variant.zone_half_size};
  config.distractor_zone = {{side(uniform(rng, 0.15, 0.32)), uniform(rng, 0.65, 0.78)}, variant.zone_half_size};

  const Vec2 home{0.5, 0.40};
  const Vec2 obj = config.object_start;
  const Vec2 goal = config.target_zone.center;
  config.waypoints = {
      {home, 1.0, 0.0},
      {obj, 1.0, 0.20},
      {obj, kGripperClosed, 0.28},
      {goal, kGripperClosed, 0.60},
      {goal, 1.0, 0.68},
      {home, 1.0, 1.0},
  };
  return config;
}

std::vector<WorldState> rollout_states(const ScriptConfig& config, std::uint64_t seed, int length) {
  if (length < 10) throw ValidationError("rollout length must be >= 10");
  if (config.waypoints.size() < 2) throw ValidationError("script needs at least two waypoints");
  if (config.failure_event && (config.failure_event->trigger_step < 0 || config.failure_event->trigger_step >= length)) {
    throw ValidationError("failure trigger step must lie in [0, T)");
  }

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<JointKey> keys = joint_keys(config.waypoints);

  WorldState state;
  state.object = config.object_start;
  state.target_zone = config.target_zone;
  state.distractor_zone = config.distractor_zone;
  state.variant = config.variant;

  std::array<double, 2> error{0.0, 0.0};
  bool grasp_disabled = false;
  // A seized shoulder also stops carrying the load, so the held object sags to the table.
  std::optional<double> locked_shoulder;

  std::vector<WorldState> states;
  states.reserve(static_cast<std::size_t>(length) + 1);
  for (int t = 0; t <= length; ++t) {
    const double s = static_cast<double>(t) / length;
    if (config.failure_event && config.failure_event->trigger_step == t) {
      switch (config.failure_event->kind) {
        case FailureKind::kDrop:
          if (state.held) state.held = false;
          grasp_disabled = true;
          break;
        case FailureKind::kMisplace:
          keys = replan_to_distractor(config, interpolate(keys, s));
          break;
        case FailureKind::kStall:
          locked_shoulder = state.shoulder;
          break;
      }
    }

    const JointKey desired = interpolate(keys, s);
    for (auto& e : error) e = kErrorDecay * e + config.noise_scale * noise(rng);
    state.shoulder = wrap_angle(locked_shoulder.value_or(desired.shoulder + error[0]));
    state.elbow = wrap_angle(desired.elbow + error[1]);
    state.gripper = std::clamp(desired.gripper, 0.0, 1.0);

    const Vec2 tip = forward_kinematics(kArm, state.shoulder, state.elbow);
    if (!state.held && !grasp_disabled && state.gripper < 0.5 && state.object_height == 0.0 &&
        distance(tip, state.object) < kGraspRadius) {
      state.held = true;
    } else if (state.held && state.gripper >= 0.5) {
      state.held = false;
      state.object = tip;
    }
    if (state.held) {
      state.object = tip;
      state.object_height = locked_shoulder ? std::max(0.0, state.object_height - kSagPerStep) : kCarryHeight;
    } else {
      state.object_height = std::max(0.0, state.object_height - kFallPerStep);
    }
    state.object.x = std::clamp(state.object.x, 0.0, 1.0);
    state.object.y = std::clamp(state.object.y, 0.0, 1.0);
    states.push_back(state);
  }
  return states;
}

Episode rollout(const ScriptConfig& config, std::uint64_t seed, int length) {
  const auto states = rollout_states(config, seed, length);

  Episode ep;
  ep.task_id = "pick_place";
  ep.meta.object_shape = to_string(config.variant.shape);
  if (config.failure_event) {
    ep.meta.failure_kind = config.failure_event->kind;
    ep.meta.failure_step = config.failure_event->trigger_step;
  }
  ep.steps.reserve(states.size());
  ep.meta.progress.reserve(states.size());
  for (int t = 0; t <= length; ++t) {
    const WorldState& st = states[t];
    JointObservation x;
    x.obs = render_views(st);
    x.proprio.values = {static_cast<float>(st.shoulder), static_cast<float>(st.elbow), static_cast<float>(st.gripper)};
    ep.steps.push_back(std::move(x));

    const double s = static_cast<double>(t) / length;
    const auto done = std::count_if(config.waypoints.begin(), config.waypoints.end(),
                                    [s](const Waypoint& wp) { return wp.time <= s; });
    ep.meta.progress.push_back(static_cast<double>(done) / config.waypoints.size());
  }
  const WorldState& last = states.back();
  ep.success = !config.failure_event && !last.held && last.object_height == 0.0 &&
               config.target_zone.contains(last.object);
  return ep;
}

MultiViewObservation render_views(const WorldState& state) {
  MultiViewObservation views;
  views.views[0] = render_top(state);
  views.views[1] = render_elevation(state, true);
  views.views[2] = render_elevation(state, false);
  return views;
}

std::vector<Episode> generate_corpus(int n_success, int n_failure, std::uint64_t seed, const CorpusOptions& options) {
  if (n_success < 0 || n_failure < 0) throw ValidationError("episode counts must be non-negative");
  if (options.min_length < 10 || options.max_length < options.min_length) {
    throw ValidationError("episode length range must satisfy 10 <= min <= max");
  }
  if (n_failure > 0 && (options.failure_kinds.empty() || options.trigger_fractions.empty())) {
    throw ValidationError("failure episodes need at least one failure kind and trigger fraction");
  }

  const int total = n_success + n_failure;
  std::vector<bool> labels(total, false);
  std::fill(labels.begin(), labels.begin() + n_success, true);
  Rng order_rng(mix_seed(seed, 0xC0FFEE));
  std::shuffle(labels.begin(), labels.end(), order_rng);

  std::vector<Episode> corpus;
  corpus.reserve(total);
  for (int i = 0; i < total; ++i) {
    const bool want_success = labels[i];
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)), attempt));
      const int length = std::uniform_int_distribution<int>(options.min_length, options.max_length)(rng);
      ScriptConfig config = make_pick_place_script(rng(), options.variant, options.noise_scale);
      if (!want_success) {
        const auto& kinds = options.failure_kinds;
        const auto& fracs = options.trigger_fractions;
        const auto kind = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
        const double frac = fracs[std::uniform_int_distribution<std::size_t>(0, fracs.size() - 1)(rng)];
        const int trigger = std::clamp(static_cast<int>(std::lround(frac * length)), 0, length - 1);
        config.failure_event = FailureEvent{kind, trigger};
      }
      Episode ep = rollout(config, rng(), length);
      ep.task_id = options.task_id;
      if (ep.success == want_success) {
        corpus.push_back(std::move(ep));
        break;
      }
      if (attempt > 1000) throw RuntimeFailure("could not produce a successful rollout");
    }
  }
  return corpus;
}

namespace {

using nlohmann::json;

json vec_json(Vec2 v) { return json::array({v.x, v.y}); }
Vec2 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json box_json(const Box& b) { return {{"center", vec_json(b.center)}, {"half_size", b.half_size}}; }
Box box_from(const json& j) { return {vec_from(j.at("center")), j.at("half_size").get<double>()}; }

}  // namespace

std::string script_to_json(const ScriptConfig& config) {
  json waypoints = json::array();
  for (const auto& wp : config.waypoints) {
    waypoints.push_back({{"position", vec_json(wp.position)}, {"gripper", wp.gripper}, {"time", wp.time}});
  }
  json j = {{"waypoints", waypoints},
            {"noise_scale", config.noise_scale},
            {"object_start", vec_json(config.object_start)},
            {"target_zone", box_json(config.target_zone)},
            {"distractor_zone", box_json(config.distractor_zone)},
            {"variant",
             {{"shape", to_string(config.variant.shape)},
              {"object_half_size", config.variant.object_half_size},
              {"zone_half_size", config.variant.zone_half_size}}}};
  if (config.failure_event) {
    j["failure_event"] = {{"kind", viva::to_string(config.failure_event->kind)},
                          {"trigger_step", config.failure_event->trigger_step}};
  } else {
    j["failure_event"] = nullptr;
  }
  return j.dump(2);
}

ScriptConfig script_from_json(const std::string& text) {
  ScriptConfig config;
  try {
    const json j = json::parse(text);
    for (const auto& wp : j.at("waypoints")) {
      config.waypoints.push_back(
          {vec_from(wp.at("position")), wp.at("gripper").get<double>(), wp.at("time").get<double>()});
    }
    config.noise_scale = j.value("noise_scale", 0.01);
    config.object_start = vec_from(j.at("object_start"));
    config.target_zone = box_from(j.at("target_zone"));
    config.distractor_zone = box_from(j.at("distractor_zone"));
    if (j.contains("variant")) {
      const json& v = j["variant"];
      config.variant.shape = object_shape_from_string(v.value("shape", std::string("square")));
      config.variant.object_half_size = v.value("object_half_size", 0.05);
      config.variant.zone_half_size = v.value("zone_half_size", 0.08);
    }
    if (j.contains("failure_event") && !j["failure_event"].is_null()) {
      const json& f = j["failure_event"];
      config.failure_event = FailureEvent{failure_kind_from_string(f.at("kind").get<std::string>()),
                                          f.at("trigger_step").get<int>()};
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid script config: ") + e.what());
  }
  return config;
}

}  // namespace viva::sim
