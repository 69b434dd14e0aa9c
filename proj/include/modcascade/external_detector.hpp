#pragma once

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "modcascade/dataset.hpp"
#include "modcascade/error.hpp"
#include "modcascade/json_io.hpp"

extern char** environ;

namespace modcascade {

/// A child process speaking one JSON object per line over stdin/stdout.
/// Requests are serialized: at most one in flight per process.
class ExternalProcess {
 public:
  explicit ExternalProcess(std::string command) : command_(std::move(command)) {
    static std::once_flag ignore_sigpipe;
    // A dead child must surface as EPIPE, not kill the whole run.
    std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });

    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw DetectorError("pipe: " + std::string(std::strerror(errno)));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw DetectorError("pipe: " + std::string(std::strerror(errno)));
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

    std::string sh = "sh";
    std::string dash_c = "-c";
    std::vector<char*> argv{sh.data(), dash_c.data(), command_.data(), nullptr};
    const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      throw DetectorError("cannot launch external detector '" + command_ + "': " + std::strerror(rc));
    }
    to_child_ = to_child[1];
    from_child_ = from_child[0];
  }

  ExternalProcess(const ExternalProcess&) = delete;
  ExternalProcess& operator=(const ExternalProcess&) = delete;

  ~ExternalProcess() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    if (pid_ > 0 && !reaped_) {
      for (int i = 0; i < 200; ++i) {
        int status = 0;
        if (::waitpid(pid_, &status, WNOHANG) != 0) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  const std::string& command() const noexcept { return command_; }

  /// Writes one request line and returns the matching response line (without newline).
  std::string exchange(const std::string& request_line) {
    std::lock_guard lock(mutex_);
    if (failed_) throw DetectorError("external detector '" + command_ + "' is no longer usable");
    std::string payload = request_line;
    payload += '\n';
    std::size_t written = 0;
    while (written < payload.size()) {
      const ssize_t n = ::write(to_child_, payload.data() + written, payload.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        failed_ = true;
        throw DetectorError("write to external detector failed: " + describe_exit());
      }
      written += static_cast<std::size_t>(n);
    }
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(from_child_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        failed_ = true;
        throw DetectorError("read from external detector failed: " + std::string(std::strerror(errno)));
      }
      if (n == 0) {
        failed_ = true;
        const std::string status = describe_exit();
        if (exit_status_ != 0) throw DetectorError("external detector " + status);
        throw ProtocolError("external detector closed its output before responding (" + status + ")");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  std::string describe_exit() {
    if (!reaped_) {
      int status = 0;
      if (::waitpid(pid_, &status, 0) == pid_) {
        reaped_ = true;
        if (WIFEXITED(status)) {
          exit_status_ = WEXITSTATUS(status);
        } else if (WIFSIGNALED(status)) {
          exit_status_ = 128 + WTERMSIG(status);
        }
      }
    }
    return "exited with status " + std::to_string(exit_status_);
  }

  std::string command_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex mutex_;
  bool failed_ = false;
  bool reaped_ = false;
  int exit_status_ = 0;
};

inline Json external_request(const AnnotatedImage& image, const std::string& path_prefix) {
  return Json{{"id", image.id}, {"width", image.width}, {"height", image.height}, {"path", path_prefix + image.id}};
}

/// Parses one response line; every violation is a ProtocolError.
inline std::vector<Detection> parse_external_response(const std::string& line, const AnnotatedImage& image) {
  Json doc;
  try {
    doc = Json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("image " + image.id + ": malformed response line: " + line.substr(0, 200));
  }
  if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string()) {
    throw ProtocolError("image " + image.id + ": response lacks string 'id'");
  }
  if (doc["id"].get<std::string>() != image.id) {
    throw ProtocolError("image " + image.id + ": response id '" + doc["id"].get<std::string>() + "' out of order");
  }
  if (!doc.contains("detections") || !doc["detections"].is_array()) {
    throw ProtocolError("image " + image.id + ": response lacks 'detections' array");
  }
  std::vector<Detection> out;
  for (const auto& jd : doc["detections"]) {
    if (!jd.is_object() || !jd.contains("label") || !jd["label"].is_string() || !jd.contains("confidence") ||
        !jd["confidence"].is_number() || !jd.contains("box")) {
      throw ProtocolError("image " + image.id + ": malformed detection");
    }
    Detection d;
    d.label = jd["label"].get<std::string>();
    d.confidence = jd["confidence"].get<double>();
    try {
      d.box = detail::box_from_json(jd["box"], "image " + image.id);
    } catch (const ValidationError& e) {
      throw ProtocolError(e.what());
    }
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
      throw ProtocolError("image " + image.id + ": confidence outside [0,1]");
    }
    if (!d.box.valid() || !d.box.within(image.width, image.height)) {
      throw ProtocolError("image " + image.id + ": detection box outside the image");
    }
    out.push_back(std::move(d));
  }
  return out;
}

class ExternalDetector {
 public:
  explicit ExternalDetector(const std::string& command, std::string path_prefix = {})
      : process_(std::make_shared<ExternalProcess>(command)), path_prefix_(std::move(path_prefix)) {}

  std::vector<Detection> detect(const AnnotatedImage& image) const {
    const std::string response = process_->exchange(external_request(image, path_prefix_).dump());
    return parse_external_response(response, image);
  }

  const std::string& command() const noexcept { return process_->command(); }

 private:
  std::shared_ptr<ExternalProcess> process_;
  std::string path_prefix_;
};

}  // namespace modcascade
