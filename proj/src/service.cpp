#include "deeva/service.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "deeva/data.hpp"
#include "json.hpp"

namespace deeva {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string Event::to_json() const {
  json j;
  j["ts"] = ts_ms;
  j["source"] = source;
  j["frame_id"] = frame_id;
  if (!error.empty()) {
    j["error"] = error;
    return j.dump();
  }
  j["detections"] = json::array();
  for (const auto& d : detections) {
    j["detections"].push_back({{"class", d.cls},
                               {"score", d.score},
                               {"bbox", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}});
  }
  j["scene_label"] = scene_label;
  j["caption"] = caption;
  if (resized) j["resized_from"] = {orig_w, orig_h};
  return j.dump();
}

// ---------------------------------------------------------------------------
// captions

namespace {

std::string location_name(const Box& b, int w, int h) {
  const double cx = b.cx() / std::max(1, w);
  const double cy = b.cy() / std::max(1, h);
  const char* horiz = cx < 1.0 / 3 ? "left" : (cx < 2.0 / 3 ? "center" : "right");
  const char* vert = cy < 1.0 / 3 ? "top" : (cy < 2.0 / 3 ? "center" : "bottom");
  if (std::string(horiz) == "center" && std::string(vert) == "center") return "center";
  return std::string(horiz) + "-" + vert;
}

// hardhat belongs to the worker whose upper third contains its center
bool hat_on_worker(const Box& hat, const Box& worker) {
  const double cx = hat.cx(), cy = hat.cy();
  return cx >= worker.x1 && cx <= worker.x2 && cy >= worker.y1 &&
         cy <= worker.y1 + worker.height() / 3.0;
}

}  // namespace

std::string compose_caption(const std::vector<EventDetection>& detections,
                            const std::string& scene_label, int image_w, int image_h) {
  if (detections.empty()) return "no activity detected";

  std::vector<const EventDetection*> workers, hats;
  for (const auto& d : detections) {
    if (d.cls == "worker") workers.push_back(&d);
    if (d.cls == "hardhat") hats.push_back(&d);
  }
  int worn = 0;
  std::vector<const EventDetection*> loose_hats;
  for (const auto* hat : hats) {
    bool matched = false;
    for (const auto* w : workers) {
      if (hat_on_worker(hat->box, w->box)) {
        matched = true;
        break;
      }
    }
    if (matched) {
      ++worn;
    } else {
      loose_hats.push_back(hat);
    }
  }

  std::ostringstream out;
  bool first = true;
  for (const char* cls : kObjectClasses) {
    std::vector<const EventDetection*> of_class;
    for (const auto& d : detections) {
      if (d.cls == cls) of_class.push_back(&d);
    }
    if (std::string(cls) == "hardhat") of_class = loose_hats;  // worn hats fold into workers
    if (of_class.empty()) continue;
    if (!first) out << ", ";
    first = false;
    const size_t n = of_class.size();
    out << n << " " << cls << (n == 1 ? "" : "s");
    if (std::string(cls) == "worker" && worn > 0) {
      out << " (" << worn << " with hardhat" << (worn == 1 ? "" : "s") << ")";
    }
    if (n == 1) out << " at " << location_name(of_class[0]->box, image_w, image_h);
  }
  if (!scene_label.empty()) out << "; scene: " << scene_label;
  return out.str();
}

// ---------------------------------------------------------------------------
// event log

EventLog::EventLog(const std::string& path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open event log: " + path);
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const std::string& json_line) {
  std::lock_guard<std::mutex> lock(mu_);
  std::string line = json_line;
  line.push_back('\n');
  const char* p = line.data();
  size_t left = line.size();
  while (left > 0) {
    const ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("event log write failed");
    }
    p += n;
    left -= static_cast<size_t>(n);
  }
  ::fsync(fd_);
  ++lines_;
}

// ---------------------------------------------------------------------------
// per-frame pipeline

Event process_frame(const Model& m, const Tensor& image, const std::string& source,
                    int64_t frame_id, const DetectThresholds& thr, EventLog* log) {
  Event ev;
  ev.ts_ms = now_ms();
  ev.source = source;
  ev.frame_id = frame_id;
  ev.orig_w = image.dim(2);
  ev.orig_h = image.dim(1);

  const Tensor fitted = fit_image(image, m.config().input_size, &ev.resized);
  Tensor batch;
  batch.shape = {1, 3, m.config().input_size, m.config().input_size};
  batch.data = fitted.data;

  const bool detect = m.config().head != HeadMode::kSceneClassification;
  const bool scene = m.config().head != HeadMode::kDetection;
  if (detect) {
    for (const auto& d : m.predict(batch, thr.score_thr, thr.nms_thr, thr.max_dets)) {
      const auto& names = m.config().class_names;
      std::string cls = d.class_id < static_cast<int>(names.size())
                            ? names[static_cast<size_t>(d.class_id)]
                            : ("class" + std::to_string(d.class_id));
      ev.detections.push_back({std::move(cls), d.score, d.box});
    }
  }
  if (scene) {
    const Tensor logits = m.forward_scene(batch);
    int best = 0;
    for (int64_t i = 1; i < logits.size(); ++i) {
      if (logits.ptr()[i] > logits.ptr()[best]) best = static_cast<int>(i);
    }
    ev.scene_label = m.config().scene_class_names[static_cast<size_t>(best)];
  }
  ev.caption = compose_caption(ev.detections, ev.scene_label, m.config().input_size,
                               m.config().input_size);
  if (log) log->append(ev.to_json());
  return ev;
}

// ---------------------------------------------------------------------------
// service

Service::Service(ServiceConfig cfg, Model model) : cfg_(std::move(cfg)), model_(std::move(model)) {
  if (cfg_.queue_capacity < 1) throw std::invalid_argument("queue capacity must be >= 1");
}

Service::~Service() {
  stop();
  wait();
}

Service::Stats Service::stats() const {
  return {processed_.load(), dropped_.load(), errors_.load()};
}

void Service::start() {
  log_ = std::make_unique<EventLog>(cfg_.log_path);
  if (cfg_.mode == ServiceConfig::Mode::kStreamListen) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<uint16_t>(cfg_.port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw std::runtime_error("cannot bind port " + std::to_string(cfg_.port));
    }
    if (::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw std::runtime_error("listen() failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);
    ingest_thread_ = std::thread([this] { listener_loop(); });
  } else {
    if (!fs::is_directory(cfg_.watch_dir)) {
      throw std::runtime_error("watch directory does not exist: " + cfg_.watch_dir);
    }
    ingest_thread_ = std::thread([this] { watch_loop(); });
  }
  worker_thread_ = std::thread([this] { worker_loop(); });
}

void Service::stop() {
  stopping_.store(true);
  cv_.notify_all();
}

void Service::wait() {
  if (worker_thread_.joinable()) worker_thread_.join();
  stopping_.store(true);
  if (ingest_thread_.joinable()) ingest_thread_.join();
  std::lock_guard<std::mutex> lock(conn_mu_);
  for (auto& t : conn_threads_) {
    if (t.joinable()) t.join();
  }
  conn_threads_.clear();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

void Service::push(QueueItem item) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (queue_.size() >= cfg_.queue_capacity) {
      queue_.pop_front();  // oldest-drop: freshness over completeness
      dropped_.fetch_add(1);
    }
    queue_.push_back(std::move(item));
  }
  cv_.notify_one();
}

bool Service::pop(QueueItem& item) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [this] { return stopping_.load() || !queue_.empty(); });
  if (queue_.empty()) return false;
  item = std::move(queue_.front());
  queue_.pop_front();
  return true;
}

void Service::listener_loop() {
  while (!stopping_.load()) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, 100);
    if (r <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard<std::mutex> lock(conn_mu_);
    conn_threads_.emplace_back([this, fd] { connection_loop(fd); });
  }
}

namespace {

// reads exactly n bytes unless the peer closes or stop is requested
bool read_exact(int fd, uint8_t* dst, size_t n, const std::atomic<bool>& stopping) {
  size_t got = 0;
  while (got < n) {
    if (stopping.load()) return false;
    pollfd pfd{fd, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, 100);
    if (pr < 0) return false;
    if (pr == 0) continue;
    const ssize_t r = ::recv(fd, dst + got, n - got, 0);
    if (r <= 0) return false;
    got += static_cast<size_t>(r);
  }
  return true;
}

}  // namespace

void Service::connection_loop(int fd) {
  constexpr size_t kMaxHeader = 256;
  constexpr size_t kMaxPayload = 64ull << 20;
  while (!stopping_.load()) {
    // header line, byte at a time up to '\n'
    std::string line;
    bool closed = false;
    while (line.size() < kMaxHeader) {
      uint8_t c;
      if (!read_exact(fd, &c, 1, stopping_)) {
        closed = true;
        break;
      }
      if (c == '\n') break;
      line.push_back(static_cast<char>(c));
    }
    if (closed) break;

    std::istringstream hs(line);
    std::string word, source;
    int64_t frame_id = -1;
    int64_t byte_len = -1;
    hs >> word >> source >> frame_id >> byte_len;
    if (word != "FRAME" || source.empty() || frame_id < 0 || byte_len < 0 ||
        static_cast<size_t>(byte_len) > kMaxPayload || !hs.eof()) {
      QueueItem err;
      err.source = source.empty() ? "unknown" : source;
      err.frame_id = frame_id;
      err.error = "malformed frame header: " + line.substr(0, 80);
      push(std::move(err));
      break;  // protocol broken; close this connection only
    }
    QueueItem item;
    item.source = source;
    item.frame_id = frame_id;
    item.payload.resize(static_cast<size_t>(byte_len));
    if (!read_exact(fd, item.payload.data(), item.payload.size(), stopping_)) break;
    push(std::move(item));
  }
  ::shutdown(fd, SHUT_RDWR);
  ::close(fd);
}

void Service::watch_loop() {
  std::set<std::string> seen;
  int64_t next_id = 0;
  const std::string source = "watch";
  while (!stopping_.load()) {
    std::vector<std::string> fresh;
    for (const auto& e : fs::directory_iterator(cfg_.watch_dir)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext != ".ppm" && ext != ".pgm") continue;
      const std::string p = e.path().string();
      if (!seen.count(p)) fresh.push_back(p);
    }
    std::sort(fresh.begin(), fresh.end());
    for (const auto& p : fresh) {
      seen.insert(p);
      QueueItem item;
      item.source = source;
      item.frame_id = next_id++;
      try {
        std::ifstream f(p, std::ios::binary);
        item.payload.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
      } catch (const std::exception& e2) {
        item.error = std::string("cannot read ") + p + ": " + e2.what();
      }
      push(std::move(item));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.poll_ms));
  }
}

void Service::emit_stats_event() {
  const int64_t drops = dropped_.load();
  if (drops == stats_reported_drops_) return;
  stats_reported_drops_ = drops;
  json j;
  j["ts"] = now_ms();
  j["stats"] = {{"dropped_total", drops}, {"processed", processed_.load()}};
  log_->append(j.dump());
}

void Service::worker_loop() {
  while (true) {
    if (cfg_.max_frames > 0 && processed_.load() >= cfg_.max_frames) break;
    QueueItem item;
    if (!pop(item)) break;  // stopping and drained

    Event ev;
    ev.ts_ms = now_ms();
    ev.source = item.source;
    ev.frame_id = item.frame_id;
    if (!item.error.empty()) {
      ev.error = item.error;
      errors_.fetch_add(1);
      log_->append(ev.to_json());
      continue;
    }
    auto last = last_frame_id_.find(item.source);
    if (last != last_frame_id_.end() && item.frame_id <= last->second) {
      ev.error = "frame_id " + std::to_string(item.frame_id) + " not increasing for source " +
                 item.source;
      errors_.fetch_add(1);
      log_->append(ev.to_json());
      continue;
    }
    try {
      const Tensor image = decode_image(item.payload);
      ev = process_frame(model_, image, item.source, item.frame_id, cfg_.thresholds, log_.get());
      last_frame_id_[item.source] = item.frame_id;
      processed_.fetch_add(1);
    } catch (const std::exception& e) {
      ev.error = e.what();
      errors_.fetch_add(1);
      log_->append(ev.to_json());
    }
    emit_stats_event();
  }
  emit_stats_event();
  stopping_.store(true);
  cv_.notify_all();
}

}  // namespace deeva
