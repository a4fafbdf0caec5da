// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <scaleswe/llm.hpp>

#include <fmt/format.h>

#include <cstdlib>

namespace scaleswe
{

HttpBackend::HttpBackend(HttpBackendConfig config): _config(std::move(config))
{
    if (_config.base_url.empty())
        throw ContractError("http backend needs a base_url");
    if (_config.model.empty())
        throw ContractError("http backend needs a model name");
}

json HttpBackend::build_body(const ChatRequest& request) const
{
    auto messages = json::array();
    for (std::size_t i = 0; i < request.messages.size(); ++i)
    {
        auto const& m = request.messages[i];
        auto message = json {{"role", m.role}};
        bool const closes_prefix = _config.cache_control && request.cache_prefix_marker
                                   && *request.cache_prefix_marker > 0 && i + 1 == *request.cache_prefix_marker;
        if (closes_prefix)
        {
            message["content"] = json::array(
                {json {{"type", "text"}, {"text", m.content}, {"cache_control", {{"type", "ephemeral"}}}}});
        }
        else
        {
            message["content"] = m.content;
        }
        messages.push_back(std::move(message));
    }
    return json {{"model", _config.model},
                 {"messages", std::move(messages)},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_output_tokens}};
}

ChatResponse HttpBackend::parse_response(const json& body)
{
    auto response = ChatResponse {};
    auto const& choices = body.at("choices");
    if (!choices.is_array() || choices.empty())
        throw BackendError(BackendErrorKind::backend_failure, "response has no choices");
    auto const& content = choices.at(0).at("message").at("content");
    if (content.is_string())
    {
        response.text = content.get<std::string>();
    }
    else if (content.is_array())
    {
        for (auto const& part: content)
            response.text += part.value("text", std::string {});
    }

    if (auto const it = body.find("usage"); it != body.end() && it->is_object())
    {
        auto const& usage = *it;
        auto get = [&](const char* key) { return usage.value(key, std::int64_t {0}); };
        if (usage.contains("cache_read_input_tokens") || usage.contains("cache_creation_input_tokens"))
        {
            response.usage.input_tokens = usage.contains("input_tokens") ? get("input_tokens") : get("prompt_tokens");
            response.usage.output_tokens =
                usage.contains("output_tokens") ? get("output_tokens") : get("completion_tokens");
            response.usage.cache_read_tokens = get("cache_read_input_tokens");
            response.usage.cache_write_tokens = get("cache_creation_input_tokens");
        }
        else
        {
            std::int64_t cached = 0;
            if (auto const d = usage.find("prompt_tokens_details"); d != usage.end() && d->is_object())
                cached = d->value("cached_tokens", std::int64_t {0});
            response.usage.input_tokens = get("prompt_tokens") - cached;
            response.usage.cache_read_tokens = cached;
            response.usage.output_tokens = get("completion_tokens");
        }
    }
    return response;
}

ChatResponse HttpBackend::complete(const ChatRequest& request)
{
    request.validate();
    auto client = httplib::Client(_config.base_url);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(_config.timeout);
    client.set_write_timeout(_config.timeout);

    auto headers = httplib::Headers {};
    if (!_config.api_key_env.empty())
    {
        if (auto const* key = std::getenv(_config.api_key_env.c_str()); key != nullptr && *key != '\0')
            headers.emplace("Authorization", fmt::format("Bearer {}", key));
    }

    auto const body = build_body(request).dump();
    auto const result = client.Post(_config.path, headers, body, "application/json");
    if (!result)
        throw BackendError(BackendErrorKind::transient,
                           fmt::format("transport error: {}", httplib::to_string(result.error())));
    if (result->status == 429 || result->status >= 500)
        throw BackendError(BackendErrorKind::transient, fmt::format("HTTP {}: {}", result->status, result->body));
    if (result->status != 200)
        throw BackendError(BackendErrorKind::backend_failure,
                           fmt::format("HTTP {}: {}", result->status, result->body));
    try
    {
        return parse_response(json::parse(result->body));
    }
    catch (const json::exception& e)
    {
        throw BackendError(BackendErrorKind::backend_failure, fmt::format("unparseable response: {}", e.what()));
    }
}

} // namespace scaleswe
