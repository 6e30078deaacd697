#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "yoho/eunet.hpp"
#include "yoho/infer.hpp"
#include "yoho/losses.hpp"
#include "yoho/render.hpp"
#include "yoho/train.hpp"

namespace yoho {

/// Everything one pipeline run needs. Every field has a default; config files
/// overlay a named profile and may not contain unknown keys.
struct RunConfig {
  std::string profile = "full";
  std::string run_id = "run";
  std::filesystem::path output_root = "runs";
  render::RenderConfig render;
  nn::NetworkConfig net;
  loss::LossWeights loss;
  train::TrainConfig train;
  train::InferOptions infer;
};

/// Built-in profiles: "full" (default scale), "phantom" and "smoke".
RunConfig profile_config(std::string_view name);

/// Parses a config document. A top-level "profile" key selects the base the
/// remaining keys overlay (default "full", or `default_profile` when given).
RunConfig parse_run_config(std::string_view text, std::string_view default_profile = "full");
RunConfig load_run_config(const std::filesystem::path& path, std::string_view default_profile = "full");

std::string to_json(const RunConfig& cfg);
std::string to_json(const render::RenderConfig& cfg);
std::string to_json(const nn::NetworkConfig& cfg);

render::RenderConfig render_config_from_json(std::string_view text);
nn::NetworkConfig network_config_from_json(std::string_view text);

}  // namespace yoho
