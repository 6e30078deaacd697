#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "yoho/pipeline.hpp"
#include "yoho/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace yoho;

namespace {

struct Common {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string run_id;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--profile", c.profile, "Base profile: full, phantom or smoke");
  cmd->add_option("--seed", c.seed, "Overrides the render and training seeds");
  cmd->add_option("--out", c.out, "Output directory (default output_root/run_id)");
  cmd->add_option("--run-id", c.run_id, "Run identifier");
  cmd->add_flag("--force", c.force, "Replace existing outputs built from different inputs");
}

RunConfig resolve(const Common& c) {
  const std::string profile = c.profile.empty() ? "full" : c.profile;
  RunConfig cfg = c.config.empty() ? profile_config(profile) : load_run_config(c.config, profile);
  if (!c.config.empty() && !c.profile.empty()) cfg.profile = c.profile;
  if (c.seed) {
    cfg.render.rng_seed = *c.seed;
    cfg.train.rng_seed = *c.seed;
  }
  if (!c.run_id.empty()) cfg.run_id = c.run_id;
  return cfg;
}

fs::path out_dir(const Common& c, const RunConfig& cfg) { return c.out.empty() ? pipeline::run_dir(cfg) : fs::path(c.out); }

int fail(int code, const std::string& name, const std::string& message, const json& report = nullptr) {
  json j{{"error", name}, {"message", message}, {"exit_code", code}};
  if (!report.is_null()) j["report"] = report;
  std::cerr << j.dump() << '\n';
  return code;
}

train::ProgressFn progress_printer() {
  return [](const train::HistoryRow& row, int total) {
    const int every = std::max(1, total / 20);
    if ((row.step + 1) % every != 0 && !row.train_dice && row.step + 1 != total) return;
    std::cerr << fmt::format("step {}/{} phase {} lr {:.3g} loss {:.4f} (seg {:.4f} edge {:.4f} consist {:.4f})", row.step + 1,
                             total, row.phase, row.lr, row.total, row.seg, row.edge, row.consist);
    if (row.train_dice) std::cerr << fmt::format(" train_dice {:.4f}", *row.train_dice);
    std::cerr << '\n';
  };
}

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"yoho: segment a lesion by training a network on data rendered from the one annotated image"};
  app.require_subcommand(1);

  Common common;
  std::string annotation, manifest, checkpoint, pred_dir, gt_dir, gt_mask, host = "127.0.0.1", output_root;
  int port = 8080;

  auto* render = app.add_subcommand("render", "Render the training set from an annotated image");
  render->add_option("annotation", annotation, "Annotation JSON")->required();
  add_common(render, common);

  auto* trn = app.add_subcommand("train", "Train a network on a rendered dataset");
  trn->add_option("manifest", manifest, "Dataset manifest.json")->required();
  add_common(trn, common);

  auto* inf = app.add_subcommand("infer", "Segment the annotated image with a trained checkpoint");
  inf->add_option("annotation", annotation, "Annotation JSON")->required();
  inf->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  add_common(inf, common);

  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  eval->add_option("pred_dir", pred_dir, "Directory of predictions")->required();
  eval->add_option("gt_dir", gt_dir, "Directory of ground-truth masks")->required();
  add_common(eval, common);

  auto* run = app.add_subcommand("run", "render, train and infer in one go");
  run->add_option("annotation", annotation, "Annotation JSON")->required();
  run->add_option("--gt", gt_mask, "Ground-truth mask to score the result against")->check(CLI::ExistingFile);
  add_common(run, common);

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--port", port, "Port");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--output-root", output_root, "Where runs are stored (default runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : pipeline::kExitOther;
  }

  if (const char* dev = std::getenv("YOHO_DEVICE"); dev && std::string(dev) != "cpu") {
    return fail(pipeline::kExitValidation, "InvalidConfig", fmt::format("YOHO_DEVICE={} is not available; only cpu is supported", dev));
  }

  try {
    if (*serve) {
      service::ServiceConfig sc;
      if (!output_root.empty()) sc.output_root = output_root;
      service::RunService runs(sc);
      service::HttpServer server(runs);
      const int bound = server.bind(host, port);
      if (bound < 0) return fail(pipeline::kExitIo, "IoFailure", fmt::format("cannot bind {}:{}", host, port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << fmt::format("listening on http://{}:{}\n", host, bound);
      server.serve();
      g_server = nullptr;
      return 0;
    }

    const RunConfig cfg = resolve(common);
    const fs::path out = out_dir(common, cfg);
    if (*render) {
      std::cout << pipeline::cmd_render(fs::path(annotation), cfg, out, common.force).string() << '\n';
    } else if (*trn) {
      std::cout << pipeline::cmd_train(manifest, cfg, out, common.force, progress_printer()).string() << '\n';
    } else if (*inf) {
      std::cout << pipeline::cmd_infer(fs::path(annotation), checkpoint, cfg, out).string() << '\n';
    } else if (*eval) {
      const fs::path csv = pipeline::cmd_eval(pred_dir, gt_dir, common.out.empty() ? fs::path(pred_dir) / "eval" : out);
      std::cout << csv.string() << '\n';
    } else if (*run) {
      pipeline::RunHooks hooks;
      hooks.on_stage = [](std::string_view s) { std::cerr << "== " << s << '\n'; };
      hooks.on_step = progress_printer();
      const auto gt = gt_mask.empty() ? std::nullopt : std::optional<fs::path>(gt_mask);
      const pipeline::RunOutcome r = pipeline::cmd_run(fs::path(annotation), cfg, out, common.force, gt, hooks);
      json summary{{"mask", r.mask.string()}, {"report", r.report.string()}, {"wall_seconds", r.wall_seconds}};
      if (r.final_train_dice) summary["final_train_dice"] = *r.final_train_dice;
      if (r.metrics) summary["dice"] = r.metrics->dice;
      std::cout << summary.dump(2) << '\n';
    }
  } catch (const anno::ValidationFailure& e) {
    return fail(pipeline::kExitValidation, std::string(to_string(e.code())), e.what(), json::parse(e.report().to_json()));
  } catch (const Error& e) {
    return fail(pipeline::exit_code_for(e.code()), std::string(to_string(e.code())), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(pipeline::kExitIo, "IoFailure", e.what());
  } catch (const std::exception& e) {
    return fail(pipeline::kExitOther, "Error", e.what());
  }
  return 0;
}
