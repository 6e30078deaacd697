#include "yoho/config.hpp"

#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace yoho {

namespace fs = std::filesystem;
using detail::json;
using detail::StrictReader;

namespace {

json pair_json(double lo, double hi) { return json::array({lo, hi}); }

template <class T>
void read_pair(StrictReader& r, const char* key, T& lo, T& hi, const std::string& where) {
  std::vector<T> v{lo, hi};
  r.get(key, v);
  if (v.size() != 2) throw Error(ErrorCode::InvalidConfig, where + "." + key + " must be [lo, hi]");
  lo = v[0];
  hi = v[1];
}

json render_json(const render::RenderConfig& c) {
  return {{"K", c.K},
          {"seeds_per_sample", c.seeds_per_sample},
          {"seed_scale_range", pair_json(c.seed_scale_lo, c.seed_scale_hi)},
          {"pastes_per_image_range", json::array({c.pastes_lo, c.pastes_hi})},
          {"edge_thickness", c.edge_thickness},
          {"out_size", detail::size_to_json(c.out_size)},
          {"max_paste_attempts", c.max_paste_attempts},
          {"rng_seed", c.rng_seed},
          {"random_seed_offset", c.random_seed_offset},
          {"ignore_roi", c.ignore_roi}};
}

void read_render(const json& j, render::RenderConfig& c) {
  StrictReader r(j, "render");
  r.get("K", c.K).get("seeds_per_sample", c.seeds_per_sample);
  read_pair(r, "seed_scale_range", c.seed_scale_lo, c.seed_scale_hi, "render");
  read_pair(r, "pastes_per_image_range", c.pastes_lo, c.pastes_hi, "render");
  r.get("edge_thickness", c.edge_thickness).get("max_paste_attempts", c.max_paste_attempts).get("rng_seed", c.rng_seed);
  r.get("random_seed_offset", c.random_seed_offset).get("ignore_roi", c.ignore_roi);
  if (const json* s = r.sub("out_size")) c.out_size = detail::size_from_json(*s, "render.out_size");
  r.finish();
}

std::string encoder_name(nn::EncoderKind k) { return k == nn::EncoderKind::ResNet34 ? "resnet34" : "small"; }

json net_json(const nn::NetworkConfig& c) {
  return {{"depth", c.depth},
          {"encoder", encoder_name(c.encoder)},
          {"in_channels", c.in_channels},
          {"base_width", c.base_width},
          {"use_pretrained_encoder", c.use_pretrained_encoder},
          {"pretrained_path", c.pretrained_path}};
}

void read_net(const json& j, nn::NetworkConfig& c) {
  StrictReader r(j, "net");
  std::string enc = encoder_name(c.encoder);
  r.get("depth", c.depth).get("encoder", enc).get("in_channels", c.in_channels).get("base_width", c.base_width);
  r.get("use_pretrained_encoder", c.use_pretrained_encoder).get("pretrained_path", c.pretrained_path);
  r.finish();
  if (enc == "resnet34") {
    c.encoder = nn::EncoderKind::ResNet34;
  } else if (enc == "small") {
    c.encoder = nn::EncoderKind::Small;
  } else {
    throw Error(ErrorCode::InvalidConfig, "net.encoder must be 'resnet34' or 'small'");
  }
}

json loss_json(const loss::LossWeights& w) {
  return {{"mu1", w.mu1}, {"mu2", w.mu2}, {"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3}, {"tau", w.tau}};
}

void read_loss(const json& j, loss::LossWeights& w) {
  StrictReader r(j, "loss");
  r.get("mu1", w.mu1).get("mu2", w.mu2).get("lambda1", w.lambda1).get("lambda2", w.lambda2).get("lambda3", w.lambda3).get("tau", w.tau);
  r.finish();
}

json train_json(const train::TrainConfig& c) {
  return {{"phase1_steps", c.phase1_steps}, {"phase2_steps", c.phase2_steps}, {"batch_size", c.batch_size},
          {"phase1_lr", c.phase1_lr},       {"phase2_lr", c.phase2_lr},       {"decay_factor", c.decay_factor},
          {"decay_every", c.decay_every},   {"betas", pair_json(c.beta1, c.beta2)}, {"adam_eps", c.adam_eps},
          {"rng_seed", c.rng_seed},         {"checkpoint_every", c.checkpoint_every}};
}

void read_train(const json& j, train::TrainConfig& c) {
  StrictReader r(j, "train");
  r.get("phase1_steps", c.phase1_steps).get("phase2_steps", c.phase2_steps).get("batch_size", c.batch_size);
  r.get("phase1_lr", c.phase1_lr).get("phase2_lr", c.phase2_lr).get("decay_factor", c.decay_factor);
  r.get("decay_every", c.decay_every).get("adam_eps", c.adam_eps).get("rng_seed", c.rng_seed);
  r.get("checkpoint_every", c.checkpoint_every);
  read_pair(r, "betas", c.beta1, c.beta2, "train");
  r.finish();
}

json infer_json(const train::InferOptions& o) { return {{"threshold", o.threshold}, {"roi_gating", o.roi_gating}}; }

void read_infer(const json& j, train::InferOptions& o) {
  StrictReader r(j, "infer");
  r.get("threshold", o.threshold).get("roi_gating", o.roi_gating);
  r.finish();
  if (!(o.threshold > 0.0 && o.threshold <= 1.0)) throw Error(ErrorCode::InvalidConfig, "infer.threshold must lie in (0,1]");
}

json parse_doc(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

RunConfig profile_config(std::string_view name) {
  RunConfig c;
  c.profile = std::string(name);
  if (name == "full") return c;
  if (name == "phantom") {
    c.render.K = 400;
    c.render.out_size = {128, 128};
    c.net.encoder = nn::EncoderKind::Small;
    c.net.base_width = 8;
    c.train.phase1_steps = 300;
    c.train.phase2_steps = 300;
    c.train.batch_size = 8;
    c.train.checkpoint_every = 100;
    return c;
  }
  if (name == "smoke") {
    c.render.K = 32;
    c.render.seeds_per_sample = 2;
    c.render.seed_scale_lo = 0.75;
    c.render.out_size = {64, 64};
    c.net.encoder = nn::EncoderKind::Small;
    c.net.base_width = 8;
    c.train.phase1_steps = 20;
    c.train.phase2_steps = 20;
    c.train.batch_size = 4;
    c.train.checkpoint_every = 10;
    return c;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown profile '" + std::string(name) + "' (expected full, phantom or smoke)");
}

RunConfig parse_run_config(std::string_view text, std::string_view default_profile) {
  const json doc = parse_doc(text, "config");
  StrictReader r(doc, "config");
  std::string profile(default_profile);
  r.get("profile", profile);
  RunConfig c = profile_config(profile);
  r.get("run_id", c.run_id);
  std::string root = c.output_root.string();
  r.get("output_root", root);
  c.output_root = root;
  if (const json* j = r.sub("render")) read_render(*j, c.render);
  if (const json* j = r.sub("net")) read_net(*j, c.net);
  if (const json* j = r.sub("loss")) read_loss(*j, c.loss);
  if (const json* j = r.sub("train")) read_train(*j, c.train);
  if (const json* j = r.sub("infer")) read_infer(*j, c.infer);
  r.finish();
  if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos || c.run_id == "." || c.run_id == "..") {
    throw Error(ErrorCode::InvalidConfig, "run_id must be a plain directory name");
  }
  nn::validate(c.net);
  loss::validate(c.loss);
  train::validate(c.train);
  return c;
}

RunConfig load_run_config(const fs::path& path, std::string_view default_profile) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), default_profile);
}

std::string to_json(const RunConfig& c) {
  const json j{{"profile", c.profile},
               {"run_id", c.run_id},
               {"output_root", c.output_root.string()},
               {"render", render_json(c.render)},
               {"net", net_json(c.net)},
               {"loss", loss_json(c.loss)},
               {"train", train_json(c.train)},
               {"infer", infer_json(c.infer)}};
  return j.dump(2);
}

std::string to_json(const render::RenderConfig& cfg) { return render_json(cfg).dump(); }
std::string to_json(const nn::NetworkConfig& cfg) { return net_json(cfg).dump(); }

render::RenderConfig render_config_from_json(std::string_view text) {
  render::RenderConfig c;
  read_render(parse_doc(text, "render config"), c);
  return c;
}

nn::NetworkConfig network_config_from_json(std::string_view text) {
  nn::NetworkConfig c;
  read_net(parse_doc(text, "network config"), c);
  return c;
}

}  // namespace yoho
