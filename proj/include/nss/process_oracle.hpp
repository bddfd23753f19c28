#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nss/errors.hpp"
#include "nss/objectives.hpp"

namespace nss {

/// Oracle backed by a child process speaking line-delimited JSON over its
/// standard input/output. Request: {"id": n, "depths": [...], "widths": [...]}.
/// Response: {"id": n, "task_loss": x} or {"id": n, "error": "..."}.
/// One request is in flight at a time per instance.
class ExternalProcessOracle final : public Oracle {
 public:
  explicit ExternalProcessOracle(std::vector<std::string> argv, double timeout_seconds = 600.0)
      : argv_(std::move(argv)), timeout_seconds_(timeout_seconds) {
    if (argv_.empty()) throw validation_error("external oracle needs a command");
    if (!(timeout_seconds_ > 0)) throw validation_error("oracle timeout must be > 0");
    spawn();
  }

  ExternalProcessOracle(const ExternalProcessOracle&) = delete;
  ExternalProcessOracle& operator=(const ExternalProcessOracle&) = delete;

  ~ExternalProcessOracle() override { shutdown(); }

  double eval(const NetworkConfig& a, Rng&) override {
    const std::uint64_t id = next_id_++;
    nlohmann::json req{{"id", id}, {"depths", a.depths}, {"widths", a.widths}};
    const std::string line = req.dump() + "\n";

    if (!write_all(line)) throw transport_error("oracle process write failed for " + req.dump());

    const std::string reply = read_line(req.dump());
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw transport_error("oracle reply is not JSON (" + std::string(e.what()) + ") for " + req.dump());
    }
    if (!resp.contains("id") || resp["id"].get<std::uint64_t>() != id)
      throw transport_error("oracle reply id mismatch for " + req.dump());
    if (resp.contains("error"))
      throw oracle_error("oracle reported error: " + resp["error"].get<std::string>() +
                         " for " + req.dump());
    if (!resp.contains("task_loss"))
      throw transport_error("oracle reply missing task_loss for " + req.dump());
    return resp["task_loss"].get<double>();
  }

 private:
  void spawn() {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw transport_error("pipe() failed for oracle process");

    pid_ = fork();
    if (pid_ < 0) throw transport_error("fork() failed for oracle process");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::vector<char*> cargv;
      cargv.reserve(argv_.size() + 1);
      for (auto& s : argv_) cargv.push_back(s.data());
      cargv.push_back(nullptr);
      execvp(cargv[0], cargv.data());
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    signal(SIGPIPE, SIG_IGN);
  }

  void shutdown() {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      // Give the child a moment to exit on EOF, then force it.
      for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        usleep(10000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  bool write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  std::string read_line(const std::string& request_echo) {
    const long deadline_ms = static_cast<long>(timeout_seconds_ * 1000.0);
    long waited_ms = 0;
    while (true) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      pollfd pfd{read_fd_, POLLIN, 0};
      const int slice_ms = 100;
      const int r = poll(&pfd, 1, slice_ms);
      if (r < 0) throw transport_error("poll() failed waiting on oracle for " + request_echo);
      if (r == 0) {
        waited_ms += slice_ms;
        if (waited_ms >= deadline_ms)
          throw transport_error("oracle timed out after " + std::to_string(timeout_seconds_) +
                                "s for " + request_echo);
        continue;
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n <= 0) throw transport_error("oracle process closed its output for " + request_echo);
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::vector<std::string> argv_;
  double timeout_seconds_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::uint64_t next_id_ = 1;
  std::string buffer_;
};

}  // namespace nss
