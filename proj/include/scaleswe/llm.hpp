// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>
#include <scaleswe/tokens.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

struct ChatMessage
{
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest
{
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_output_tokens = 4096;
    /// Messages [0, marker) form the cacheable prefix.
    std::optional<std::size_t> cache_prefix_marker;
    /// Prefix boundary of the previous request in the same session; tokens
    /// before it are served from cache.
    std::optional<std::size_t> previous_cache_marker;
    /// Routing key, e.g. "<instance>/testing/03". Scripted backends select
    /// their playbook by it; live backends ignore it.
    std::string session;
    /// Position of this completion within its session.
    std::optional<int> sequence;

    /// Throws ContractError on an empty message list or a bad marker.
    void validate() const;
};

struct ChatResponse
{
    std::string text;
    TokenUsage usage;
};

enum class BackendErrorKind
{
    transient,
    backend_failure,
    playbook_exhausted,
    playbook_mismatch,
    configuration,
};

class BackendError: public std::runtime_error
{
  public:
    BackendError(BackendErrorKind kind, const std::string& what): std::runtime_error(what), _kind(kind) {}

    [[nodiscard]] BackendErrorKind kind() const noexcept { return _kind; }

  private:
    BackendErrorKind _kind;
};

/// Chat-completion backend. Implementations must accept concurrent calls.
class ChatBackend
{
  public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// Validates the request, then delegates.
ChatResponse complete(const ChatRequest& request, ChatBackend& backend);

/// Four-class accounting: tokens before the previous boundary are cache
/// reads, tokens up to the current boundary are cache writes, the rest is
/// plain input. Output is counted from the completion text.
[[nodiscard]] TokenUsage account_usage(const ChatRequest& request,
                                       std::string_view completion,
                                       const TokenCounter& counter);

// ---------------------------------------------------------------------------

struct PlaybookEntry
{
    std::string response_text;
    std::optional<TokenUsage> usage;
    /// Substring the triggering prompt must contain.
    std::optional<std::string> match_hint;
};

/// Scripted responses keyed by session pattern. A pattern ending in `*`
/// matches any session with that prefix; exact keys win, then the longest
/// prefix. Each session consumes its own copy of the matched list.
struct Playbook
{
    std::map<std::string, std::vector<PlaybookEntry>> sessions;

    [[nodiscard]] const std::vector<PlaybookEntry>* lookup(const std::string& session) const;

    /// Loads the structured-text playbook format. `response_file` entries
    /// are resolved relative to the playbook's directory.
    static Playbook load(const fs::path& path);
    static Playbook from_json(const json& document, const fs::path& base_dir = {});
    void merge(const Playbook& other);
};

/// Deterministic backend replaying a playbook.
class MockBackend final: public ChatBackend
{
  public:
    explicit MockBackend(Playbook playbook, std::shared_ptr<const TokenCounter> counter = nullptr);

    ChatResponse complete(const ChatRequest& request) override;

    /// Simulated per-call latency, used by concurrency tests.
    void set_latency(std::chrono::milliseconds latency) { _latency = latency; }
    /// Terminates the process (exit status 86) once this many calls started.
    void set_abort_after_calls(std::optional<int> calls) { _abort_after = calls; }

    [[nodiscard]] int calls() const { return _calls.load(); }
    [[nodiscard]] int peak_concurrency() const { return _peak.load(); }

  private:
    Playbook _playbook;
    std::shared_ptr<const TokenCounter> _counter;
    std::mutex _mutex;
    std::map<std::string, std::size_t> _cursors;
    std::chrono::milliseconds _latency {0};
    std::optional<int> _abort_after;
    std::atomic<int> _calls {0};
    std::atomic<int> _active {0};
    std::atomic<int> _peak {0};
};

struct RetryPolicy
{
    int attempts = 3;
    std::chrono::milliseconds base_delay {1000};
    double factor = 2.0;
};

/// Retries transient failures with exponential backoff; after the last
/// attempt the error becomes backend_failure.
class RetryingBackend final: public ChatBackend
{
  public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    RetryingBackend(std::shared_ptr<ChatBackend> inner, RetryPolicy policy, Sleeper sleeper = {});

    ChatResponse complete(const ChatRequest& request) override;

  private:
    std::shared_ptr<ChatBackend> _inner;
    RetryPolicy _policy;
    Sleeper _sleeper;
};

/// Bounds the number of in-flight requests.
class ThrottledBackend final: public ChatBackend
{
  public:
    ThrottledBackend(std::shared_ptr<ChatBackend> inner, int max_in_flight);

    ChatResponse complete(const ChatRequest& request) override;

    [[nodiscard]] int peak_in_flight() const { return _peak.load(); }

  private:
    std::shared_ptr<ChatBackend> _inner;
    int _limit;
    std::mutex _mutex;
    std::condition_variable _cv;
    int _in_flight = 0;
    std::atomic<int> _peak {0};
};

enum class CassetteMode
{
    record,
    replay,
};

/// Persists exchanges as replayable cassettes keyed by request digest.
class RecordingBackend final: public ChatBackend
{
  public:
    RecordingBackend(std::shared_ptr<ChatBackend> inner, fs::path cassette_dir, CassetteMode mode);

    ChatResponse complete(const ChatRequest& request) override;

    [[nodiscard]] static std::string request_digest(const ChatRequest& request);

  private:
    std::shared_ptr<ChatBackend> _inner;
    fs::path _dir;
    CassetteMode _mode;
};

struct HttpBackendConfig
{
    /// e.g. "https://api.example.com" ; requests go to `<base_url><path>`.
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model;
    /// Environment variable holding the bearer token.
    std::string api_key_env = "OPENAI_API_KEY";
    /// Annotate the message closing the cacheable prefix with cache_control.
    bool cache_control = true;
    std::chrono::seconds timeout {600};
};

/// Message-list chat-completion HTTP adapter. 5xx, 429 and transport errors
/// are transient; other HTTP errors are backend failures.
class HttpBackend final: public ChatBackend
{
  public:
    explicit HttpBackend(HttpBackendConfig config);

    ChatResponse complete(const ChatRequest& request) override;

    /// Request body as sent on the wire.
    [[nodiscard]] json build_body(const ChatRequest& request) const;
    /// Extracts text and usage from a response body.
    [[nodiscard]] static ChatResponse parse_response(const json& body);

  private:
    HttpBackendConfig _config;
};

/// SHA-256 hex digest.
[[nodiscard]] std::string sha256_hex(std::string_view data);

} // namespace scaleswe
