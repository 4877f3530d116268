#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kagent/errors.hpp"
#include "kagent/executor.hpp"

namespace kagent {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kMaxCapture = 16u << 20;
constexpr std::size_t kMaxTraceBytes = 64u << 10;

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    int get() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void reset() noexcept {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

struct Pipe {
    Fd read;
    Fd write;
};

Pipe make_pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) {
        throw ExecutorUnavailable(std::string("pipe2 failed: ") + std::strerror(errno));
    }
    return {Fd(fds[0]), Fd(fds[1])};
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

void ignore_sigpipe_once() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

struct ProcessResult {
    std::string out;
    std::string err;
    bool timed_out = false;
    bool exited = false;
    int exit_code = -1;
    int term_signal = 0;
};

std::string clip(const std::string& text) {
    if (text.size() <= kMaxTraceBytes) {
        return text;
    }
    return text.substr(0, kMaxTraceBytes) + "\n...[truncated]";
}

ProcessResult run_process(const std::vector<std::string>& command, const std::string& input,
                          Clock::time_point deadline) {
    if (command.empty()) {
        throw ExecutorUnavailable("runner command is empty");
    }
    ignore_sigpipe_once();

    Pipe in = make_pipe();
    Pipe out = make_pipe();
    Pipe err = make_pipe();
    Pipe exec_status = make_pipe();

    std::vector<char*> argv;
    for (const auto& arg : command) {
        argv.push_back(const_cast<char*>(arg.c_str()));
    }
    argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        throw ExecutorUnavailable(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        // Child: only async-signal-safe calls from here on.
        ::setpgid(0, 0);
        ::dup2(in.read.get(), STDIN_FILENO);
        ::dup2(out.write.get(), STDOUT_FILENO);
        ::dup2(err.write.get(), STDERR_FILENO);
        ::execvp(argv[0], argv.data());
        const int code = errno;
        [[maybe_unused]] auto n = ::write(exec_status.write.get(), &code, sizeof code);
        ::_exit(127);
    }
    ::setpgid(pid, pid);

    in.read.reset();
    out.write.reset();
    err.write.reset();
    exec_status.write.reset();

    int exec_errno = 0;
    ssize_t n;
    do {
        n = ::read(exec_status.read.get(), &exec_errno, sizeof exec_errno);
    } while (n < 0 && errno == EINTR);
    if (n == static_cast<ssize_t>(sizeof exec_errno)) {
        ::waitpid(pid, nullptr, 0);
        throw ExecutorUnavailable(fmt::format("cannot start runner '{}': {}", command.front(),
                                              std::strerror(exec_errno)));
    }

    set_nonblocking(in.write.get());
    set_nonblocking(out.read.get());
    set_nonblocking(err.read.get());

    ProcessResult result;
    std::size_t written = 0;
    if (input.empty()) {
        in.write.reset();
    }
    char buffer[65536];

    while (out.read || err.read) {
        const auto now = Clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            break;
        }
        const int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;

        pollfd fds[3];
        nfds_t count = 0;
        int out_index = -1, err_index = -1, in_index = -1;
        if (out.read) {
            out_index = static_cast<int>(count);
            fds[count++] = {out.read.get(), POLLIN, 0};
        }
        if (err.read) {
            err_index = static_cast<int>(count);
            fds[count++] = {err.read.get(), POLLIN, 0};
        }
        if (in.write) {
            in_index = static_cast<int>(count);
            fds[count++] = {in.write.get(), POLLOUT, 0};
        }
        const int ready = ::poll(fds, count, wait_ms);
        if (ready < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        if (in_index >= 0 && (fds[in_index].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const ssize_t w = ::write(in.write.get(), input.data() + written, input.size() - written);
            if (w > 0) {
                written += static_cast<std::size_t>(w);
            }
            if (written == input.size() || (w < 0 && errno != EAGAIN && errno != EINTR)) {
                in.write.reset();
            }
        }
        auto drain = [&](int index, Fd& fd, std::string& sink) {
            if (index < 0 || !(fds[index].revents & (POLLIN | POLLHUP | POLLERR))) {
                return;
            }
            const ssize_t r = ::read(fd.get(), buffer, sizeof buffer);
            if (r > 0) {
                if (sink.size() < kMaxCapture) {
                    sink.append(buffer, static_cast<std::size_t>(r));
                }
            } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
                fd.reset();
            }
        };
        drain(out_index, out.read, result.out);
        drain(err_index, err.read, result.err);
    }
    in.write.reset();

    // Streams closed; the runner still gets until the deadline to exit.
    int status = 0;
    while (!result.timed_out) {
        const pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid) {
            break;
        }
        if (done < 0 && errno != EINTR) {
            break;
        }
        if (Clock::now() >= deadline) {
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (result.timed_out) {
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        return result;
    }
    if (WIFEXITED(status)) {
        result.exited = true;
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.term_signal = WTERMSIG(status);
    }
    return result;
}

std::string raw_output(const ProcessResult& result) {
    std::string text = "stdout:\n" + clip(result.out);
    if (!result.err.empty()) {
        text += "\nstderr:\n" + clip(result.err);
    }
    return text;
}

}  // namespace

SubprocessExecutor::SubprocessExecutor(std::vector<std::string> command, std::size_t max_workers,
                                       std::chrono::milliseconds grace)
    : command_(std::move(command)), grace_(grace), gate_(max_workers) {
    if (command_.empty()) {
        throw ExecutorUnavailable("runner command is empty");
    }
}

std::string SubprocessExecutor::identity() const {
    std::string text = "subprocess:";
    for (const auto& arg : command_) {
        text += " " + arg;
    }
    return text;
}

ExecutionReport SubprocessExecutor::execute(const ExecutionRequest& request) {
    gate_.acquire();
    struct Release {
        WorkerGate& gate;
        ~Release() { gate.release(); }
    } release{gate_};

    const std::string input = to_json(request).dump() + "\n";
    // The runner owns the timeout for its own test loop; the grace period
    // covers interpreter start-up and report serialization.
    const auto deadline = Clock::now() + request.timeout + grace_;
    const ProcessResult result = run_process(command_, input, deadline);

    if (result.timed_out) {
        return call_failure(fmt::format("TimeoutError: runner exceeded {} ms and was killed\n{}",
                                        request.timeout.count(), raw_output(result)),
                            true);
    }
    if (!result.exited || result.exit_code != 0) {
        const std::string how = result.exited ? fmt::format("exit code {}", result.exit_code)
                                              : fmt::format("signal {}", result.term_signal);
        return call_failure("RunnerCrash: runner terminated with " + how + "\n" + raw_output(result));
    }

    ExecutionReport report;
    try {
        report = report_from_json(nlohmann::json::parse(result.out));
    } catch (const nlohmann::json::exception& e) {
        return call_failure(std::string("ProtocolError: runner output is not a report document (") +
                            e.what() + ")\n" + raw_output(result));
    } catch (const ParseError& e) {
        return call_failure(std::string("ProtocolError: ") + e.what() + "\n" + raw_output(result));
    }

    auto problems = validate_report(report);
    for (const auto& test : report.test_results) {
        const bool known = std::any_of(request.tests.begin(), request.tests.end(),
                                       [&](const TestCase& t) { return t.id == test.test_id; });
        if (!known) {
            problems.push_back("unknown test id '" + test.test_id + "'");
        }
    }
    if (!problems.empty()) {
        std::string text = "ProtocolError: report violates the protocol:";
        for (const auto& p : problems) {
            text += "\n  " + p;
        }
        return call_failure(text + "\n" + raw_output(result));
    }
    return report;
}

ExecutionReport execute(const ExecutionRequest& request, const std::vector<std::string>& runner_command) {
    SubprocessExecutor executor(runner_command, 1);
    return executor.execute(request);
}

}  // namespace kagent
