#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "deeva/boxes.hpp"
#include "deeva/model.hpp"

namespace deeva {

struct EventDetection {
  std::string cls;
  double score = 0.0;
  Box box;
};

// One frame's outcome, one NDJSON line in the event log.
struct Event {
  int64_t ts_ms = 0;
  std::string source;
  int64_t frame_id = 0;
  std::vector<EventDetection> detections;
  std::string scene_label;
  std::string caption;
  std::string error;   // nonempty marks an error event
  bool resized = false;
  int orig_w = 0, orig_h = 0;

  std::string to_json() const;
};

// Deterministic rule-based caption: per-class counts in fixed class order,
// hardhat-to-worker association, coarse thirds-grid location.
std::string compose_caption(const std::vector<EventDetection>& detections,
                            const std::string& scene_label, int image_w, int image_h);

// Append-only NDJSON writer; one atomic line + fsync per event.
class EventLog {
 public:
  explicit EventLog(const std::string& path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void append(const std::string& json_line);
  int64_t lines_written() const { return lines_; }

 private:
  int fd_ = -1;
  std::mutex mu_;
  int64_t lines_ = 0;
};

struct DetectThresholds {
  double score_thr = 0.3;
  double nms_thr = 0.5;
  int max_dets = 50;
};

// Runs the detector (and scene head when present) on one frame, appends the
// event to the log before returning it.
Event process_frame(const Model& m, const Tensor& image, const std::string& source,
                    int64_t frame_id, const DetectThresholds& thr, EventLog* log);

struct ServiceConfig {
  enum class Mode { kWatchDir, kStreamListen };
  Mode mode = Mode::kWatchDir;
  std::string watch_dir;
  int port = 0;  // 0 picks an ephemeral port
  std::string log_path = "events.ndjson";
  DetectThresholds thresholds;
  size_t queue_capacity = 64;
  int64_t max_frames = 0;  // 0 = run until stopped
  int poll_ms = 50;
};

// Frame ingestion front. Stream mode speaks the line-framed protocol
//   "FRAME <source> <frame_id> <byte_len>\n" + byte_len bytes of PPM/PGM
// over TCP; watch mode processes new *.ppm / *.pgm files in lexicographic
// order. One inference worker owns the model; one writer owns the log;
// ingestion feeds a bounded queue that drops oldest on overflow.
class Service {
 public:
  Service(ServiceConfig cfg, Model model);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void start();
  void stop();
  void wait();  // returns when the worker exits (max_frames or stop())

  int bound_port() const { return bound_port_; }

  struct Stats {
    int64_t processed = 0;
    int64_t dropped = 0;
    int64_t errors = 0;
  };
  Stats stats() const;

 private:
  struct QueueItem {
    std::string source;
    int64_t frame_id = 0;
    std::vector<uint8_t> payload;
    std::string error;  // protocol-level error to log as-is
  };

  void listener_loop();
  void connection_loop(int fd);
  void watch_loop();
  void worker_loop();
  void push(QueueItem item);
  bool pop(QueueItem& item);
  void emit_stats_event();

  ServiceConfig cfg_;
  Model model_;
  std::unique_ptr<EventLog> log_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<QueueItem> queue_;
  std::atomic<bool> stopping_{false};
  std::atomic<int64_t> processed_{0}, dropped_{0}, errors_{0};
  int64_t stats_reported_drops_ = 0;

  int listen_fd_ = -1;
  int bound_port_ = 0;
  std::thread ingest_thread_;
  std::vector<std::thread> conn_threads_;
  std::mutex conn_mu_;
  std::thread worker_thread_;
  std::map<std::string, int64_t> last_frame_id_;
};

}  // namespace deeva
