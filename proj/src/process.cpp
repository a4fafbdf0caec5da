// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/process.hpp>

#include <fmt/format.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace scaleswe
{

namespace
{

class Fd
{
  public:
    Fd() = default;
    explicit Fd(int fd): _fd(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& other) noexcept: _fd(std::exchange(other._fd, -1)) {}
    Fd& operator=(Fd&& other) noexcept
    {
        if (this != &other)
        {
            reset();
            _fd = std::exchange(other._fd, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    void reset()
    {
        if (_fd >= 0)
            ::close(_fd);
        _fd = -1;
    }
    [[nodiscard]] int get() const { return _fd; }

  private:
    int _fd = -1;
};

std::pair<Fd, Fd> make_pipe()
{
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0)
        throw std::runtime_error(fmt::format("pipe2 failed: {}", std::strerror(errno)));
    return {Fd(fds[0]), Fd(fds[1])};
}

struct Capture
{
    std::string data;
    std::size_t dropped = 0;
    std::size_t cap = 0;

    void append(const char* bytes, std::size_t n)
    {
        auto const room = cap > data.size() ? cap - data.size() : 0;
        auto const take = std::min(room, n);
        data.append(bytes, take);
        dropped += n - take;
    }

    std::string finish()
    {
        if (dropped == 0)
            return std::move(data);
        return data + fmt::format("\n[... output truncated: {} bytes omitted]\n", dropped);
    }
};

} // namespace

std::map<std::string, std::string> inherited_environment(const std::vector<std::string>& names)
{
    auto env = std::map<std::string, std::string> {};
    for (auto const& name: names)
    {
        if (auto const* value = std::getenv(name.c_str()); value != nullptr)
            env.emplace(name, value);
    }
    return env;
}

ExecutionResult run_process(const ProcessSpec& spec)
{
    if (spec.argv.empty())
        throw ContractError("process argv must be nonempty");

    // Everything the child touches is prepared before fork.
    auto argv_storage = spec.argv;
    auto argv = std::vector<char*> {};
    for (auto& arg: argv_storage)
        argv.push_back(arg.data());
    argv.push_back(nullptr);

    auto env_storage = std::vector<std::string> {};
    for (auto const& [key, value]: spec.environment)
        env_storage.push_back(key + "=" + value);
    auto envp = std::vector<char*> {};
    for (auto& entry: env_storage)
        envp.push_back(entry.data());
    envp.push_back(nullptr);

    auto const cwd = spec.working_directory.string();
    auto const path_it = spec.environment.find("PATH");
    auto const search_path =
        path_it != spec.environment.end() ? path_it->second : std::string("/usr/local/bin:/usr/bin:/bin");

    // Resolve the program against the child's PATH up front.
    auto program = spec.argv.front();
    if (program.find('/') == std::string::npos)
    {
        std::size_t start = 0;
        auto resolved = std::string {};
        while (start <= search_path.size())
        {
            auto const colon = search_path.find(':', start);
            auto const dir = search_path.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
            auto const candidate = (dir.empty() ? std::string(".") : dir) + "/" + program;
            if (::access(candidate.c_str(), X_OK) == 0)
            {
                resolved = candidate;
                break;
            }
            if (colon == std::string::npos)
                break;
            start = colon + 1;
        }
        if (resolved.empty())
            throw SpawnError(fmt::format("interpreter '{}' not found on PATH", program));
        program = resolved;
    }

    auto [out_read, out_write] = make_pipe();
    auto [err_read, err_write] = make_pipe();
    auto [exec_read, exec_write] = make_pipe();

    auto const started = std::chrono::steady_clock::now();
    pid_t const pid = ::fork();
    if (pid < 0)
        throw std::runtime_error(fmt::format("fork failed: {}", std::strerror(errno)));

    if (pid == 0)
    {
        ::setpgid(0, 0);
        ::dup2(out_write.get(), STDOUT_FILENO);
        ::dup2(err_write.get(), STDERR_FILENO);
        int const devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0)
            ::dup2(devnull, STDIN_FILENO);
        if (::chdir(cwd.c_str()) != 0)
        {
            int const code = errno;
            [[maybe_unused]] auto _ = ::write(exec_write.get(), &code, sizeof(code));
            ::_exit(127);
        }
        ::execve(program.c_str(), argv.data(), envp.data());
        int const code = errno;
        [[maybe_unused]] auto _ = ::write(exec_write.get(), &code, sizeof(code));
        ::_exit(127);
    }

    ::setpgid(pid, pid);
    out_write.reset();
    err_write.reset();
    exec_write.reset();

    int exec_errno = 0;
    if (::read(exec_read.get(), &exec_errno, sizeof(exec_errno)) == static_cast<ssize_t>(sizeof(exec_errno)))
    {
        ::waitpid(pid, nullptr, 0);
        throw SpawnError(fmt::format("cannot start '{}': {}", spec.argv.front(), std::strerror(exec_errno)));
    }

    auto const deadline = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(spec.timeout_s));
    auto out = Capture {{}, 0, spec.output_cap};
    auto err = Capture {{}, 0, spec.output_cap};
    bool out_open = true;
    bool err_open = true;
    bool exited = false;
    bool timed_out = false;
    int status = 0;
    std::optional<std::chrono::steady_clock::time_point> drain_until;

    char buffer[65536];
    while (true)
    {
        auto const now = std::chrono::steady_clock::now();
        if (!exited)
        {
            auto const reaped = ::waitpid(pid, &status, WNOHANG);
            if (reaped == pid)
            {
                exited = true;
                // Stray descendants must not keep the pipes (or the CPU) busy.
                ::kill(-pid, SIGKILL);
                drain_until = now + std::chrono::milliseconds(500);
            }
            else if (now >= deadline)
            {
                timed_out = true;
                ::kill(-pid, SIGKILL);
                ::waitpid(pid, &status, 0);
                exited = true;
                drain_until = now + std::chrono::milliseconds(500);
            }
        }
        if (!out_open && !err_open && exited)
            break;
        if (drain_until && now >= *drain_until)
            break;

        pollfd fds[2];
        nfds_t count = 0;
        if (out_open)
            fds[count++] = {out_read.get(), POLLIN, 0};
        if (err_open)
            fds[count++] = {err_read.get(), POLLIN, 0};
        if (count == 0)
        {
            ::usleep(2000);
            continue;
        }
        auto const rc = ::poll(fds, count, 20);
        if (rc < 0 && errno != EINTR)
            break;
        for (nfds_t k = 0; k < count; ++k)
        {
            if ((fds[k].revents & (POLLIN | POLLHUP | POLLERR)) == 0)
                continue;
            auto const n = ::read(fds[k].fd, buffer, sizeof(buffer));
            bool const is_out = fds[k].fd == out_read.get();
            if (n > 0)
            {
                (is_out ? out : err).append(buffer, static_cast<std::size_t>(n));
            }
            else if (n == 0 || (n < 0 && errno != EINTR && errno != EAGAIN))
            {
                (is_out ? out_open : err_open) = false;
            }
        }
    }

    auto result = ExecutionResult {};
    result.timed_out = timed_out;
    if (!timed_out)
    {
        if (WIFEXITED(status))
            result.exit_code = WEXITSTATUS(status);
        else if (WIFSIGNALED(status))
            result.exit_code = 128 + WTERMSIG(status);
    }
    result.stdout_text = normalize_newlines(out.finish());
    result.stderr_text = normalize_newlines(err.finish());
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

} // namespace scaleswe
