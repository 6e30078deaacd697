#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "yoho/config.hpp"

namespace yoho::service {

namespace fs = std::filesystem;

enum class RunState { Queued, Rendering, Training, Inferring, Done, Failed };

std::string to_string(RunState s);
std::optional<RunState> run_state_from_string(std::string_view s);

struct RunRecord {
  std::string run_id;
  std::string profile;
  RunState state = RunState::Queued;
  int step = 0;  // training progress
  int total_steps = 0;
  std::string reason;  // failed only
  std::map<std::string, std::string> timestamps;  // state name -> UTC ISO-8601
  std::map<std::string, std::string> artifacts;   // name -> path relative to the run dir
  int image_height = 0;
  int image_width = 0;

  std::string to_json() const;
  static RunRecord from_json(std::string_view text);
};

struct ServiceConfig {
  fs::path output_root = "runs";
  std::size_t max_image_bytes = 32u << 20;
  /// Resolves a profile name; defaults to the built-in profiles.
  std::function<RunConfig(const std::string& profile)> resolve_profile;
};

/// Run table plus a single worker executing runs in FIFO order. Records are
/// persisted as <output_root>/<run_id>/record.json and re-listed on start;
/// runs left unfinished by a previous process are marked failed.
class RunService {
 public:
  explicit RunService(ServiceConfig cfg);
  ~RunService();
  RunService(const RunService&) = delete;
  RunService& operator=(const RunService&) = delete;

  /// Validates and enqueues. Throws ValidationFailure, MalformedAnnotation,
  /// MissingImage or InvalidConfig.
  std::string submit(std::span<const std::uint8_t> image_bytes, std::string_view annotation_json, const std::string& profile);

  std::optional<RunRecord> get(const std::string& run_id) const;
  std::vector<RunRecord> list() const;
  fs::path run_path(const std::string& run_id) const { return cfg_.output_root / run_id; }

  /// Blocks until `run_id` is done or failed, or the timeout elapses.
  std::optional<RunRecord> wait(const std::string& run_id, std::chrono::milliseconds timeout) const;

  const ServiceConfig& config() const { return cfg_; }

 private:
  void worker_loop();
  void execute(const std::string& run_id);
  void update(const std::string& run_id, const std::function<void(RunRecord&)>& fn, bool persist);
  std::string new_run_id(std::span<const std::uint8_t> image_bytes, std::string_view annotation);

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, RunRecord> records_;
  std::deque<std::string> queue_;
  std::uint64_t counter_ = 0;
  bool stopping_ = false;
  std::thread worker_;
};

/// HTTP facade over a RunService:
///   POST /api/runs                 multipart: image, annotation, profile
///   GET  /api/runs                 all records
///   GET  /api/runs/{id}            record
///   GET  /api/runs/{id}/mask       PNG, 404 until done
///   GET  /api/runs/{id}/history    CSV, 404 until written
class HttpServer {
 public:
  explicit HttpServer(RunService& runs);
  ~HttpServer();

  /// Binds; port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace yoho::service
