#include "yoho/service.hpp"

#include <ctime>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "yoho/hash.hpp"
#include "yoho/pipeline.hpp"

namespace yoho::service {

using nlohmann::json;

namespace {

constexpr RunState kStates[] = {RunState::Queued, RunState::Rendering, RunState::Training,
                                RunState::Inferring, RunState::Done, RunState::Failed};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool terminal(RunState s) { return s == RunState::Done || s == RunState::Failed; }

}  // namespace

std::string to_string(RunState s) {
  switch (s) {
    case RunState::Queued: return "queued";
    case RunState::Rendering: return "rendering";
    case RunState::Training: return "training";
    case RunState::Inferring: return "inferring";
    case RunState::Done: return "done";
    case RunState::Failed: return "failed";
  }
  return "?";
}

std::optional<RunState> run_state_from_string(std::string_view s) {
  for (RunState st : kStates) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::string RunRecord::to_json() const {
  json j{{"run_id", run_id},
         {"profile", profile},
         {"state", yoho::service::to_string(state)},
         {"step", step},
         {"total_steps", total_steps},
         {"timestamps", timestamps},
         {"artifacts", artifacts},
         {"image_size", {image_height, image_width}}};
  if (state == RunState::Failed) j["reason"] = reason;
  return j.dump();
}

RunRecord RunRecord::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.profile = j.value("profile", "");
    const auto st = run_state_from_string(j.at("state").get<std::string>());
    if (!st) throw Error(ErrorCode::IoFailure, "unknown run state");
    r.state = *st;
    r.step = j.value("step", 0);
    r.total_steps = j.value("total_steps", 0);
    r.reason = j.value("reason", "");
    r.timestamps = j.value("timestamps", std::map<std::string, std::string>{});
    r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    const auto size = j.value("image_size", std::array<int, 2>{0, 0});
    r.image_height = size[0];
    r.image_width = size[1];
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoFailure, std::string("corrupt run record: ") + e.what());
  }
}

RunService::RunService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  if (!cfg_.resolve_profile) cfg_.resolve_profile = [](const std::string& p) { return profile_config(p); };
  fs::create_directories(cfg_.output_root);
  for (const auto& entry : fs::directory_iterator(cfg_.output_root)) {
    const fs::path rec = entry.path() / "record.json";
    if (!entry.is_directory() || !fs::exists(rec)) continue;
    try {
      RunRecord r = RunRecord::from_json(read_text(rec));
      if (!terminal(r.state)) {
        r.state = RunState::Failed;
        r.reason = "interrupted by a service restart";
        r.timestamps["failed"] = utc_now();
        write_text(rec, r.to_json());
      }
      records_.emplace(r.run_id, std::move(r));
    } catch (const Error&) {
      // Unreadable records are skipped; the directory is left untouched.
    }
  }
  worker_ = std::thread([this] { worker_loop(); });
}

RunService::~RunService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::string RunService::new_run_id(std::span<const std::uint8_t> image_bytes, std::string_view annotation) {
  Sha256 sha;
  sha.update(image_bytes);
  sha.update(annotation);
  sha.update(fmt::format("{}:{}", counter_, std::chrono::system_clock::now().time_since_epoch().count()));
  return fmt::format("run-{:04d}-{}", counter_, sha.hex_digest().substr(0, 10));
}

std::string RunService::submit(std::span<const std::uint8_t> image_bytes, std::string_view annotation_json,
                               const std::string& profile) {
  const RunConfig cfg = cfg_.resolve_profile(profile);
  Image image = cv::imdecode(cv::Mat(1, static_cast<int>(image_bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(image_bytes.data())),
                             cv::IMREAD_COLOR);
  if (image.empty()) throw Error(ErrorCode::MissingImage, "uploaded image cannot be decoded");
  anno::AnnotatedImage a = anno::parse_annotation(annotation_json, image, "upload");

  std::string id;
  {
    std::lock_guard lock(mu_);
    do {
      ++counter_;
      id = new_run_id(image_bytes, annotation_json);
    } while (records_.count(id) || fs::exists(run_path(id)));
  }
  const fs::path dir = run_path(id);
  fs::create_directories(dir);
  a.image_path = "input.png";
  a.image_id = id;
  write_png(dir / "input.png", a.image);
  write_text(dir / "annotation.json", anno::serialize_annotation(a));
  write_text(dir / "config.json", to_json(cfg));

  RunRecord r;
  r.run_id = id;
  r.profile = profile;
  r.total_steps = cfg.train.total_steps();
  r.image_height = a.height();
  r.image_width = a.width();
  r.timestamps["queued"] = utc_now();
  r.artifacts["input"] = "input.png";
  r.artifacts["annotation"] = "annotation.json";
  {
    std::lock_guard lock(mu_);
    write_text(dir / "record.json", r.to_json());
    records_.emplace(id, std::move(r));
    queue_.push_back(id);
  }
  cv_.notify_all();
  return id;
}

std::optional<RunRecord> RunService::get(const std::string& run_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(run_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::vector<RunRecord> RunService::list() const {
  std::lock_guard lock(mu_);
  std::vector<RunRecord> out;
  for (const auto& [_, r] : records_) out.push_back(r);
  return out;
}

std::optional<RunRecord> RunService::wait(const std::string& run_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] {
    auto it = records_.find(run_id);
    return it == records_.end() || terminal(it->second.state);
  });
  auto it = records_.find(run_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void RunService::update(const std::string& run_id, const std::function<void(RunRecord&)>& fn, bool persist) {
  {
    std::lock_guard lock(mu_);
    RunRecord& r = records_.at(run_id);
    const RunState before = r.state;
    fn(r);
    // States only move forward; failed is terminal.
    if (static_cast<int>(r.state) < static_cast<int>(before) || terminal(before)) r.state = before;
    if (r.state != before) r.timestamps[to_string(r.state)] = utc_now();
    if (persist || r.state != before) write_text(run_path(run_id) / "record.json", r.to_json());
  }
  cv_.notify_all();
}

void RunService::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    execute(id);
  }
}

void RunService::execute(const std::string& run_id) {
  const fs::path dir = run_path(run_id);
  try {
    const RunConfig cfg = parse_run_config(read_text(dir / "config.json"));
    const anno::AnnotatedImage a = anno::load_annotation(dir / "annotation.json");
    pipeline::RunHooks hooks;
    hooks.on_stage = [&](std::string_view stage) {
      if (stage == "done") return;
      const auto st = run_state_from_string(stage);
      if (st) update(run_id, [&](RunRecord& r) { r.state = *st; }, false);
    };
    hooks.on_step = [&](const train::HistoryRow& row, int total) {
      update(run_id, [&](RunRecord& r) {
        r.step = row.step + 1;
        r.total_steps = total;
      }, false);
    };
    const pipeline::RunOutcome out = pipeline::cmd_run(a, cfg, dir, true, std::nullopt, hooks);
    update(run_id, [&](RunRecord& r) {
      r.artifacts["mask"] = out.mask.filename().string();
      r.artifacts["prob"] = "prob.png";
      r.artifacts["history"] = out.history.filename().string();
      r.artifacts["checkpoint"] = out.checkpoint.filename().string();
      r.artifacts["report"] = out.report.filename().string();
      r.state = RunState::Done;
    }, true);
  } catch (const std::exception& e) {
    const std::string reason = e.what();
    update(run_id, [&](RunRecord& r) {
      r.reason = reason;
      r.state = RunState::Failed;
    }, true);
  }
}

struct HttpServer::Impl {
  RunService& runs;
  httplib::Server svr;
  std::mutex mu;
  bool serving = false;
  bool stopped = false;

  explicit Impl(RunService& r) : runs(r) {}

  static void error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                    const json& extra = nullptr) {
    json body{{"error", code}, {"message", message}};
    if (!extra.is_null()) body["report"] = extra;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes() {
    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    // Leave headroom for the annotation part; the image itself is checked below.
    svr.set_payload_max_length(runs.config().max_image_bytes + (1u << 20));
    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    svr.Post("/api/runs", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("annotation")) {
        return error(res, 400, "MalformedRequest", "multipart fields 'image' and 'annotation' are required");
      }
      const auto image = req.get_file_value("image");
      if (image.content.size() > runs.config().max_image_bytes) {
        return error(res, 413, "PayloadTooLarge", "image exceeds the upload limit");
      }
      const std::string profile = req.has_file("profile") ? req.get_file_value("profile").content : "full";
      try {
        const std::string id = runs.submit(std::span(reinterpret_cast<const std::uint8_t*>(image.content.data()), image.content.size()),
                                           req.get_file_value("annotation").content, profile);
        res.status = 202;
        res.set_content(json{{"run_id", id}}.dump(), "application/json");
      } catch (const anno::ValidationFailure& e) {
        error(res, 400, std::string(yoho::to_string(e.code())), e.what(), json::parse(e.report().to_json()));
      } catch (const Error& e) {
        error(res, 400, std::string(yoho::to_string(e.code())), e.what());
      }
    });

    svr.Get("/api/runs", [this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& r : runs.list()) arr.push_back(json::parse(r.to_json()));
      res.set_content(arr.dump(), "application/json");
    });

    svr.Get(R"(/api/runs/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = runs.get(req.matches[1]);
      if (!r) return error(res, 404, "NotFound", "unknown run id");
      res.set_content(r->to_json(), "application/json");
    });

    auto artifact = [this](const char* name, const char* mime) {
      return [this, name, mime](const httplib::Request& req, httplib::Response& res) {
        const auto r = runs.get(req.matches[1]);
        if (!r) return error(res, 404, "NotFound", "unknown run id");
        const bool ready = std::string_view(name) == "mask" ? r->state == RunState::Done : true;
        const fs::path path = runs.run_path(r->run_id) / (std::string_view(name) == "mask" ? "mask.png" : "history.csv");
        if (!ready || !fs::exists(path)) return error(res, 404, "NotReady", std::string(name) + " is not available yet");
        res.set_content(read_text(path), mime);
      };
    };
    svr.Get(R"(/api/runs/([A-Za-z0-9_-]+)/mask)", artifact("mask", "image/png"));
    svr.Get(R"(/api/runs/([A-Za-z0-9_-]+)/history)", artifact("history", "text/csv"));
  }
};

HttpServer::HttpServer(RunService& runs) : impl_(std::make_unique<Impl>(runs)) { impl_->routes(); }
HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->svr.bind_to_any_port(host);
  return impl_->svr.bind_to_port(host, port) ? port : -1;
}

void HttpServer::serve() {
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopped) return;
    impl_->serving = true;
  }
  impl_->svr.listen_after_bind();
}

void HttpServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopped = true;
    if (!impl_->serving) return;
  }
  // A stop issued before the accept loop starts would otherwise be lost.
  impl_->svr.wait_until_ready();
  impl_->svr.stop();
}

}  // namespace yoho::service
