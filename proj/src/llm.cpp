// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/llm.hpp>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace scaleswe
{

void ChatRequest::validate() const
{
    if (messages.empty())
        throw ContractError("chat request must contain at least one message");
    if (cache_prefix_marker && *cache_prefix_marker > messages.size())
        throw ContractError("cache prefix marker must point at a message boundary");
    if (previous_cache_marker && *previous_cache_marker > messages.size())
        throw ContractError("previous cache marker must point at a message boundary");
    if (temperature < 0.0 || temperature > 2.0)
        throw ContractError("temperature must lie in [0, 2]");
}

ChatResponse complete(const ChatRequest& request, ChatBackend& backend)
{
    request.validate();
    return backend.complete(request);
}

TokenUsage account_usage(const ChatRequest& request, std::string_view completion, const TokenCounter& counter)
{
    auto const n = request.messages.size();
    auto const marker = std::min(request.cache_prefix_marker.value_or(0), n);
    auto const previous = std::min(request.previous_cache_marker.value_or(0), marker);
    auto usage = TokenUsage {};
    for (std::size_t i = 0; i < n; ++i)
    {
        auto const tokens = counter.count(request.messages[i].content);
        if (i < previous)
            usage.cache_read_tokens += tokens;
        else if (i < marker)
            usage.cache_write_tokens += tokens;
        else
            usage.input_tokens += tokens;
    }
    usage.output_tokens = counter.count(completion);
    return usage;
}

// ---------------------------------------------------------------------------
// Playbook

const std::vector<PlaybookEntry>* Playbook::lookup(const std::string& session) const
{
    if (auto const it = sessions.find(session); it != sessions.end())
        return &it->second;
    const std::vector<PlaybookEntry>* best = nullptr;
    std::size_t best_length = 0;
    for (auto const& [pattern, entries]: sessions)
    {
        if (pattern.empty() || pattern.back() != '*')
            continue;
        auto const prefix = std::string_view(pattern).substr(0, pattern.size() - 1);
        if (session.starts_with(prefix) && (best == nullptr || prefix.size() > best_length))
        {
            best = &entries;
            best_length = prefix.size();
        }
    }
    return best;
}

namespace
{

std::string read_text(const fs::path& path)
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw SchemaError(fmt::format("cannot read '{}'", path.string()));
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    return buffer.str();
}

} // namespace

Playbook Playbook::from_json(const json& document, const fs::path& base_dir)
{
    if (document.value("schema_version", 0) != kSchemaVersion)
        throw SchemaError("playbook: missing or unsupported schema_version");
    auto playbook = Playbook {};
    for (auto const& [key, list]: document.at("sessions").items())
    {
        auto entries = std::vector<PlaybookEntry> {};
        for (auto const& item: list)
        {
            auto entry = PlaybookEntry {};
            if (item.is_string())
            {
                entry.response_text = item.get<std::string>();
            }
            else if (item.contains("response_file"))
            {
                entry.response_text = read_text(base_dir / item.at("response_file").get<std::string>());
            }
            else
            {
                entry.response_text = item.at("response").get<std::string>();
            }
            if (item.is_object())
            {
                if (item.contains("usage"))
                    entry.usage = item.at("usage").get<TokenUsage>();
                if (item.contains("match_hint"))
                    entry.match_hint = item.at("match_hint").get<std::string>();
            }
            entries.push_back(std::move(entry));
        }
        playbook.sessions.emplace(key, std::move(entries));
    }
    return playbook;
}

Playbook Playbook::load(const fs::path& path)
{
    auto const text = read_text(path);
    json document;
    try
    {
        document = json::parse(text);
    }
    catch (const json::parse_error& e)
    {
        throw SchemaError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(document, path.parent_path());
}

void Playbook::merge(const Playbook& other)
{
    for (auto const& [key, entries]: other.sessions)
        sessions[key] = entries;
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(Playbook playbook, std::shared_ptr<const TokenCounter> counter):
    _playbook(std::move(playbook)), _counter(std::move(counter))
{
    if (!_counter)
        _counter = std::make_shared<ByteHeuristicCounter>();
}

ChatResponse MockBackend::complete(const ChatRequest& request)
{
    request.validate();
    auto const call_number = ++_calls;
    if (_abort_after && call_number > *_abort_after)
        std::_Exit(86);

    auto const active = ++_active;
    auto peak = _peak.load();
    while (active > peak && !_peak.compare_exchange_weak(peak, active))
    {
    }
    struct Leave
    {
        std::atomic<int>& active;
        ~Leave() { --active; }
    } leave {_active};

    if (_latency.count() > 0)
        std::this_thread::sleep_for(_latency);

    auto const* entries = _playbook.lookup(request.session);
    if (entries == nullptr)
        throw BackendError(BackendErrorKind::playbook_exhausted,
                           fmt::format("no scripted responses for session '{}'", request.session));

    std::size_t index = 0;
    if (request.sequence)
    {
        index = static_cast<std::size_t>(*request.sequence);
    }
    else
    {
        auto lock = std::scoped_lock(_mutex);
        index = _cursors[request.session]++;
    }
    if (index >= entries->size())
        throw BackendError(BackendErrorKind::playbook_exhausted,
                           fmt::format("playbook for session '{}' exhausted after {} responses",
                                       request.session,
                                       entries->size()));

    auto const& entry = (*entries)[index];
    if (entry.match_hint)
    {
        auto const found = std::any_of(request.messages.begin(), request.messages.end(), [&](const ChatMessage& m) {
            return m.content.find(*entry.match_hint) != std::string::npos;
        });
        if (!found)
            throw BackendError(BackendErrorKind::playbook_mismatch,
                               fmt::format("session '{}' response {}: prompt lacks expected text '{}'",
                                           request.session,
                                           index,
                                           *entry.match_hint));
    }
    auto response = ChatResponse {entry.response_text, {}};
    response.usage = entry.usage ? *entry.usage : account_usage(request, entry.response_text, *_counter);
    return response;
}

// ---------------------------------------------------------------------------
// RetryingBackend

RetryingBackend::RetryingBackend(std::shared_ptr<ChatBackend> inner, RetryPolicy policy, Sleeper sleeper):
    _inner(std::move(inner)), _policy(policy), _sleeper(std::move(sleeper))
{
    if (_policy.attempts < 1)
        throw ContractError("retry policy needs at least one attempt");
    if (!_sleeper)
        _sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatResponse RetryingBackend::complete(const ChatRequest& request)
{
    auto delay = std::chrono::duration<double, std::milli>(_policy.base_delay);
    for (int attempt = 1;; ++attempt)
    {
        try
        {
            return _inner->complete(request);
        }
        catch (const BackendError& e)
        {
            if (e.kind() != BackendErrorKind::transient)
                throw;
            if (attempt >= _policy.attempts)
                throw BackendError(BackendErrorKind::backend_failure,
                                   fmt::format("giving up after {} attempts: {}", attempt, e.what()));
        }
        _sleeper(std::chrono::duration_cast<std::chrono::milliseconds>(delay));
        delay *= _policy.factor;
    }
}

// ---------------------------------------------------------------------------
// ThrottledBackend

ThrottledBackend::ThrottledBackend(std::shared_ptr<ChatBackend> inner, int max_in_flight):
    _inner(std::move(inner)), _limit(max_in_flight)
{
    if (_limit < 1)
        throw ContractError("request limit must be at least 1");
}

ChatResponse ThrottledBackend::complete(const ChatRequest& request)
{
    {
        auto lock = std::unique_lock(_mutex);
        _cv.wait(lock, [&] { return _in_flight < _limit; });
        ++_in_flight;
        if (_in_flight > _peak.load())
            _peak.store(_in_flight);
    }
    struct Release
    {
        ThrottledBackend& self;
        ~Release()
        {
            {
                auto lock = std::scoped_lock(self._mutex);
                --self._in_flight;
            }
            self._cv.notify_one();
        }
    } release {*this};
    return _inner->complete(request);
}

// ---------------------------------------------------------------------------
// RecordingBackend

namespace
{

json request_key(const ChatRequest& request)
{
    auto messages = json::array();
    for (auto const& m: request.messages)
        messages.push_back({{"role", m.role}, {"content", m.content}});
    auto key = json {{"messages", std::move(messages)},
                     {"temperature", request.temperature},
                     {"max_output_tokens", request.max_output_tokens}};
    key["cache_prefix_marker"] = request.cache_prefix_marker ? json(*request.cache_prefix_marker) : json(nullptr);
    return key;
}

} // namespace

std::string sha256_hex(std::string_view data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    auto out = std::string {};
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i)
        out += fmt::format("{:02x}", digest[i]);
    return out;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner, fs::path cassette_dir, CassetteMode mode):
    _inner(std::move(inner)), _dir(std::move(cassette_dir)), _mode(mode)
{
    if (_mode == CassetteMode::record)
    {
        if (!_inner)
            throw ContractError("record mode needs an inner backend");
        fs::create_directories(_dir);
    }
}

std::string RecordingBackend::request_digest(const ChatRequest& request)
{
    return sha256_hex(request_key(request).dump());
}

ChatResponse RecordingBackend::complete(const ChatRequest& request)
{
    auto const digest = request_digest(request);
    auto const path = _dir / (digest + ".json");
    std::error_code ec;
    if (fs::exists(path, ec))
    {
        auto const data = document_payload(json::parse(read_text(path)), "cassette");
        return ChatResponse {data.at("response").get<std::string>(), data.at("usage").get<TokenUsage>()};
    }
    if (_mode == CassetteMode::replay)
        throw BackendError(BackendErrorKind::configuration,
                           fmt::format("no cassette recorded for request {} (session '{}')", digest, request.session));

    auto response = _inner->complete(request);
    auto const document = make_document(
        "cassette",
        json {{"request", request_key(request)}, {"response", response.text}, {"usage", response.usage}});
    auto const tmp = path.string() + ".tmp";
    {
        auto out = std::ofstream(tmp, std::ios::binary | std::ios::trunc);
        out << dump_document(document);
    }
    fs::rename(tmp, path);
    return response;
}

} // namespace scaleswe
