#include "yoho/pipeline.hpp"

#include <chrono>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "yoho/hash.hpp"

namespace yoho::pipeline {

using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string train_fingerprint(const render::DatasetManifest& m, const RunConfig& cfg) {
  const json j = json::parse(to_json(cfg));
  return sha256_hex(m.manifest_sha256 + j.at("net").dump() + j.at("loss").dump() + j.at("train").dump());
}

Size2 working_size(const fs::path& checkpoint, const RunConfig& cfg) {
  const json meta = json::parse(nn::checkpoint_metadata(checkpoint));
  if (meta.contains("working_size")) {
    const auto s = meta.at("working_size").get<std::array<int, 2>>();
    return {s[0], s[1]};
  }
  return cfg.render.out_size;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedAnnotation:
    case ErrorCode::InvariantViolation:
    case ErrorCode::DegeneratePolygon:
    case ErrorCode::SeedTooSmall:
    case ErrorCode::SourceTooSmall:
    case ErrorCode::NoPlacementPossible:
    case ErrorCode::InvalidConfig:
    case ErrorCode::ShapeError:
      return kExitValidation;
    case ErrorCode::MissingImage:
    case ErrorCode::IoFailure:
    case ErrorCode::CheckpointMismatch:
    case ErrorCode::MissingPair:
      return kExitIo;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::AllIgnored:
      return kExitTrainingAbort;
    case ErrorCode::EmptyGroundTruth:
      return kExitOther;
  }
  return kExitOther;
}

fs::path run_dir(const RunConfig& cfg) { return cfg.output_root / cfg.run_id; }

fs::path cmd_render(const anno::AnnotatedImage& a, const RunConfig& cfg, const fs::path& out_dir, bool force) {
  const render::DatasetManifest m = render::generate_dataset(a, cfg.render, out_dir / "dataset", force);
  return m.root / "manifest.json";
}

fs::path cmd_render(const fs::path& annotation, const RunConfig& cfg, const fs::path& out_dir, bool force) {
  return cmd_render(anno::load_annotation(annotation), cfg, out_dir, force);
}

fs::path cmd_train(const fs::path& manifest_path, const RunConfig& cfg, const fs::path& out_dir, bool force,
                   const train::ProgressFn& progress) {
  const render::DatasetManifest manifest = render::load_manifest(manifest_path);
  const fs::path checkpoint = out_dir / "checkpoint.yoho";
  const fs::path history = out_dir / "history.csv";
  const std::string fingerprint = train_fingerprint(manifest, cfg);
  if (fs::exists(checkpoint)) {
    const json meta = json::parse(nn::checkpoint_metadata(checkpoint));
    if (meta.value("train_fingerprint", "") == fingerprint && fs::exists(history)) return checkpoint;
    if (!force) {
      throw Error(ErrorCode::IoFailure, checkpoint.string() + " exists with different inputs; pass --force to replace it");
    }
  }
  fs::create_directories(out_dir);
  train::TrainResult result = train::train(manifest, cfg.net, cfg.loss, cfg.train, {}, progress);
  const auto dice = result.history.final_train_dice();
  const json meta{{"train_fingerprint", fingerprint},
                  {"dataset_manifest_sha256", manifest.manifest_sha256},
                  {"image_id", manifest.image_id},
                  {"working_size", {manifest.config.out_size.height, manifest.config.out_size.width}},
                  {"steps", cfg.train.total_steps()},
                  {"final_loss", result.history.rows.back().total},
                  {"final_train_dice", dice ? json(*dice) : json(nullptr)}};
  write_text(history, result.history.to_csv());
  nn::save_checkpoint(result.net, checkpoint, meta.dump());
  return checkpoint;
}

fs::path cmd_infer(const anno::AnnotatedImage& a, const fs::path& checkpoint, const RunConfig& cfg, const fs::path& out_dir) {
  if (!fs::exists(checkpoint)) throw Error(ErrorCode::IoFailure, "checkpoint not found: " + checkpoint.string());
  nn::EUNet net = nn::load_checkpoint(checkpoint);
  const train::SegmentationResult r = train::infer(a, net, working_size(checkpoint, cfg), cfg.infer);
  fs::create_directories(out_dir);
  const fs::path mask = out_dir / "mask.png";
  cv::Mat prob8;
  r.prob_map.convertTo(prob8, CV_8U, 255.0);
  write_png(out_dir / "prob.png", prob8);
  write_png(mask, mask_to_u8(r.binary_mask));
  return mask;
}

fs::path cmd_infer(const fs::path& annotation, const fs::path& checkpoint, const RunConfig& cfg, const fs::path& out_dir) {
  return cmd_infer(anno::load_annotation(annotation), checkpoint, cfg, out_dir);
}

fs::path cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_dir) {
  const metrics::MetricsReport report = metrics::evaluate_run(pred_dir, gt_dir);
  metrics::write_report(report, out_dir);
  return out_dir / "metrics.csv";
}

RunOutcome cmd_run(const anno::AnnotatedImage& a, const RunConfig& cfg, const fs::path& out_dir, bool force,
                   const std::optional<fs::path>& gt_mask, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  auto stage = [&](std::string_view s) {
    if (hooks.on_stage) hooks.on_stage(s);
  };
  RunOutcome out;
  json timings;

  stage("rendering");
  auto t = std::chrono::steady_clock::now();
  const fs::path manifest = cmd_render(a, cfg, out_dir, force);
  timings["render_seconds"] = seconds_since(t);

  stage("training");
  t = std::chrono::steady_clock::now();
  out.checkpoint = cmd_train(manifest, cfg, out_dir, force, hooks.on_step);
  out.history = out_dir / "history.csv";
  timings["train_seconds"] = seconds_since(t);
  const json meta = json::parse(nn::checkpoint_metadata(out.checkpoint));
  if (meta.contains("final_train_dice") && meta["final_train_dice"].is_number()) {
    out.final_train_dice = meta["final_train_dice"].get<double>();
  }

  stage("inferring");
  t = std::chrono::steady_clock::now();
  out.mask = cmd_infer(a, out.checkpoint, cfg, out_dir);
  timings["infer_seconds"] = seconds_since(t);

  json report{{"run_id", cfg.run_id},
              {"profile", cfg.profile},
              {"image_id", a.image_id},
              {"reverse", a.reverse},
              {"size", {a.height(), a.width()}},
              {"mask", out.mask.filename().string()},
              {"mask_sha256", sha256_file(out.mask)},
              {"checkpoint", out.checkpoint.filename().string()},
              {"checkpoint_sha256", sha256_file(out.checkpoint)},
              {"final_train_dice", out.final_train_dice ? json(*out.final_train_dice) : json(nullptr)},
              {"config", json::parse(to_json(cfg))}};
  if (gt_mask) {
    const BinaryMask g = read_binary_mask(*gt_mask);
    const cv::Mat prob = cv::imread((out_dir / "prob.png").string(), cv::IMREAD_GRAYSCALE);
    cv::Mat s;
    prob.convertTo(s, CV_64F, 1.0 / 255.0);
    out.metrics = metrics::evaluate_pair(a.image_id, s, g);
    // Region measures score the binary mask itself.
    const metrics::RegionMetrics rm = metrics::region_metrics(read_binary_mask(out.mask), g);
    out.metrics->dice = rm.dice;
    out.metrics->iou = rm.iou;
    out.metrics->recall = rm.recall;
    out.metrics->precision = rm.precision;
    const auto& m = *out.metrics;
    report["metrics"] = {{"dice", m.dice}, {"iou", m.iou},   {"wfm", m.wfm},       {"s_alpha", m.s_alpha},
                         {"e_phi_max", m.e_phi_max}, {"mae", m.mae}, {"recall", m.recall}, {"precision", m.precision}};
    metrics::write_report(metrics::aggregate({m}), out_dir / "eval");
  }
  out.wall_seconds = seconds_since(t0);
  timings["wall_seconds"] = out.wall_seconds;
  report["timings"] = timings;
  out.report = out_dir / "report.json";
  write_text(out.report, report.dump(2));
  stage("done");
  return out;
}

RunOutcome cmd_run(const fs::path& annotation, const RunConfig& cfg, const fs::path& out_dir, bool force,
                   const std::optional<fs::path>& gt_mask, const RunHooks& hooks) {
  return cmd_run(anno::load_annotation(annotation), cfg, out_dir, force, gt_mask, hooks);
}

}  // namespace yoho::pipeline
