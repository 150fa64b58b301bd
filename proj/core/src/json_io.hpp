#pragma once

// JSON mapping of configuration structs shared by the checkpoint formats.

#include <json.hpp>

#include "viva/latent_codec.hpp"
#include "viva/model_config.hpp"
#include "viva/trainer.hpp"

namespace viva::detail {

using nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"width", c.width},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"token_patch", c.token_patch},
          {"latent", {c.latent.height, c.latent.width, c.latent.channels}},
          {"proprio_dim", c.proprio_dim},
          {"horizon", c.horizon}};
}

inline ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.token_patch = j.at("token_patch").get<int>();
  c.latent = {j.at("latent").at(0).get<int>(), j.at("latent").at(1).get<int>(), j.at("latent").at(2).get<int>()};
  c.proprio_dim = j.at("proprio_dim").get<int>();
  c.horizon = j.at("horizon").get<int>();
  return c;
}

inline json to_json(const NormalizationSpec& s) {
  return {{"proprio_min", s.proprio_min},
          {"proprio_max", s.proprio_max},
          {"value_range", {NormalizationSpec::kValueMin, NormalizationSpec::kValueMax}}};
}

inline NormalizationSpec normalization_from(const json& j) {
  NormalizationSpec s;
  s.proprio_min = j.at("proprio_min").get<std::vector<double>>();
  s.proprio_max = j.at("proprio_max").get<std::vector<double>>();
  return s;
}

inline json to_json(const TrainSchedule& s) {
  return {{"steps", s.steps}, {"batch", s.batch},     {"lr", s.lr},
          {"seed", s.seed},   {"warmup", s.warmup},   {"grad_clip", s.grad_clip}};
}

inline TrainSchedule schedule_from(const json& j) {
  TrainSchedule s;
  s.steps = j.at("steps").get<int>();
  s.batch = j.at("batch").get<int>();
  s.lr = j.at("lr").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.warmup = j.at("warmup").get<int>();
  s.grad_clip = j.at("grad_clip").get<double>();
  return s;
}

}  // namespace viva::detail
