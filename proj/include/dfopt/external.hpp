#pragma once

// External-command evaluator: pipes the serialized program to a subprocess's
// stdin and reads one decimal metric (minutes) from its stdout. This is the
// integration point for driving a real cluster client instead of the built-in
// simulator.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <mutex>
#include <string>

#include "dfopt/cost.hpp"

namespace dfopt {

struct ExternalEvalConfig {
  std::string command;      // run via /bin/sh -c
  int timeout_ms = 30000;   // <= 0 disables the timeout
  int max_in_flight = 8;
};

namespace detail {

class InFlightGate {
 public:
  explicit InFlightGate(int limit) : limit_(limit) {}
  void acquire() {
    std::unique_lock lk(m_);
    cv_.wait(lk, [&] { return count_ < limit_; });
    ++count_;
  }
  void release() {
    { std::lock_guard lk(m_); --count_; }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  int limit_;
  int count_ = 0;
};

inline void write_all_ignoring_epipe(int fd, const std::string& data) {
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;  // EPIPE: child exited without reading all input; its exit status decides
    }
    off += static_cast<size_t>(n);
  }
}

}  // namespace detail

class ExternalEvaluator {
 public:
  explicit ExternalEvaluator(ExternalEvalConfig cfg)
      : cfg_(std::move(cfg)), gate_(cfg_.max_in_flight) {
    if (cfg_.command.empty()) throw EvalError("external evaluator: empty command");
    ::signal(SIGPIPE, SIG_IGN);
  }

  EvaluationResult operator()(const Program& p) {
    gate_.acquire();
    struct Release {
      detail::InFlightGate& g;
      ~Release() { g.release(); }
    } release{gate_};
    return run_once(serialize_program(p));
  }

 private:
  EvaluationResult run_once(const std::string& input) const {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0)
      throw EvalError("external evaluator: pipe() failed");
    pid_t pid = ::fork();
    if (pid < 0) throw EvalError("external evaluator: fork() failed");
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::close(in_pipe[0]); ::close(in_pipe[1]);
      ::close(out_pipe[0]); ::close(out_pipe[1]);
      ::execl("/bin/sh", "sh", "-c", cfg_.command.c_str(), (char*)nullptr);
      _exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);

    detail::write_all_ignoring_epipe(in_pipe[1], input);
    ::close(in_pipe[1]);

    std::string output;
    char buf[4096];
    bool timed_out = false;
    for (;;) {
      struct pollfd pfd{out_pipe[0], POLLIN, 0};
      int rc = ::poll(&pfd, 1, cfg_.timeout_ms > 0 ? cfg_.timeout_ms : -1);
      if (rc == 0) { timed_out = true; break; }
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      ssize_t n = ::read(out_pipe[0], buf, sizeof(buf));
      if (n < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (n == 0) break;
      output.append(buf, static_cast<size_t>(n));
    }
    ::close(out_pipe[0]);

    if (timed_out) {
      ::kill(pid, SIGKILL);
      int st;
      ::waitpid(pid, &st, 0);
      throw EvalError("external evaluator: command timed out after " +
                      std::to_string(cfg_.timeout_ms) + " ms");
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw EvalError("external evaluator: command failed (status " +
                      std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) + ")");

    auto tok = split_ws(trim(output));
    if (tok.empty())
      throw EvalError("external evaluator: no metric on stdout");
    double metric;
    try {
      metric = parse_double(tok[0], "external metric");
    } catch (const std::exception& e) {
      throw EvalError(std::string("external evaluator: ") + e.what());
    }
    EvaluationResult res;
    res.metric_minutes = metric;
    return res;
  }

  ExternalEvalConfig cfg_;
  mutable detail::InFlightGate gate_;
};

inline Evaluator make_external_evaluator(ExternalEvalConfig cfg) {
  auto shared = std::make_shared<ExternalEvaluator>(std::move(cfg));
  return [shared](const Program& p) { return (*shared)(p); };
}

}  // namespace dfopt
