#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <poll.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

namespace testutil {

/// Temporary directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::string tmpl = (std::filesystem::temp_directory_path() / (tag + ".XXXXXX")).string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  std::ostringstream out;
  out << file.rdbuf();
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  file << text;
}

struct ProcResult {
  int exit_code = -1;
  std::string out;
  std::string err;
  long max_rss_kb = 0;
  double seconds = 0.0;
};

/// Runs a child process, capturing stdout/stderr and resource usage.
inline ProcResult run_process(const std::vector<std::string>& args) {
  int out_pipe[2], err_pipe[2];
  if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0)
    throw std::runtime_error("pipe failed");

  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    dup2(out_pipe[1], STDOUT_FILENO);
    dup2(err_pipe[1], STDERR_FILENO);
    close(out_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[0]);
    close(err_pipe[1]);
    std::vector<char*> argv;
    for (const std::string& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(argv[0], argv.data());
    _exit(127);
  }
  close(out_pipe[1]);
  close(err_pipe[1]);

  ProcResult result;
  struct Stream {
    int fd;
    std::string* sink;
    bool open = true;
  } streams[2] = {{out_pipe[0], &result.out}, {err_pipe[0], &result.err}};
  char buf[4096];
  while (streams[0].open || streams[1].open) {
    pollfd fds[2];
    nfds_t n = 0;
    for (auto& s : streams)
      if (s.open) fds[n++] = {s.fd, POLLIN, 0};
    if (poll(fds, n, -1) < 0) break;
    nfds_t f = 0;
    for (auto& s : streams) {
      if (!s.open) continue;
      const pollfd& p = fds[f++];
      if (p.revents & (POLLIN | POLLHUP)) {
        const ssize_t got = read(s.fd, buf, sizeof buf);
        if (got > 0) {
          s.sink->append(buf, static_cast<std::size_t>(got));
        } else {
          close(s.fd);
          s.open = false;
        }
      }
    }
  }

  int status = 0;
  struct rusage usage{};
  wait4(pid, &status, 0, &usage);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.max_rss_kb = usage.ru_maxrss;
  return result;
}

inline std::string cli_path() {
  const char* env = std::getenv("CKMERGE_CLI");
  if (!env) throw std::runtime_error("CKMERGE_CLI environment variable not set");
  return env;
}

}  // namespace testutil
