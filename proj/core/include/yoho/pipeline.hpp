#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "yoho/config.hpp"
#include "yoho/metrics.hpp"

namespace yoho::pipeline {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitValidation = 2,
  kExitIo = 3,
  kExitTrainingAbort = 4,
};

int exit_code_for(ErrorCode code);

/// output_root / run_id.
fs::path run_dir(const RunConfig& cfg);

// Every command writes under `out_dir`: dataset/, checkpoint.yoho,
// history.csv, mask.png, prob.png, eval/ and report.json.

/// Returns the manifest path.
fs::path cmd_render(const anno::AnnotatedImage& a, const RunConfig& cfg, const fs::path& out_dir, bool force = false);
fs::path cmd_render(const fs::path& annotation, const RunConfig& cfg, const fs::path& out_dir, bool force = false);

/// Returns the checkpoint path. A checkpoint trained from the same manifest
/// and settings is reused; a different one is replaced only under `force`.
fs::path cmd_train(const fs::path& manifest, const RunConfig& cfg, const fs::path& out_dir, bool force = false,
                   const train::ProgressFn& progress = {});

/// Returns the mask path (native resolution, 0/255).
fs::path cmd_infer(const anno::AnnotatedImage& a, const fs::path& checkpoint, const RunConfig& cfg, const fs::path& out_dir);
fs::path cmd_infer(const fs::path& annotation, const fs::path& checkpoint, const RunConfig& cfg, const fs::path& out_dir);

/// Returns the metrics.csv path.
fs::path cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_dir);

struct RunHooks {
  /// "rendering", "training", "inferring", "done".
  std::function<void(std::string_view stage)> on_stage;
  train::ProgressFn on_step;
};

struct RunOutcome {
  fs::path mask;
  fs::path report;  // report.json
  fs::path checkpoint;
  fs::path history;
  double wall_seconds = 0.0;
  std::optional<double> final_train_dice;
  /// Present when a ground-truth mask was supplied.
  std::optional<metrics::MetricsRow> metrics;
};

/// render -> train -> infer, plus evaluation when `gt_mask` is given.
RunOutcome cmd_run(const anno::AnnotatedImage& a, const RunConfig& cfg, const fs::path& out_dir, bool force = false,
                   const std::optional<fs::path>& gt_mask = std::nullopt, const RunHooks& hooks = {});
RunOutcome cmd_run(const fs::path& annotation, const RunConfig& cfg, const fs::path& out_dir, bool force = false,
                   const std::optional<fs::path>& gt_mask = std::nullopt, const RunHooks& hooks = {});

}  // namespace yoho::pipeline
