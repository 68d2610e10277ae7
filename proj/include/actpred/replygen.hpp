#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "actpred/binary_io.hpp"
#include "actpred/corpus.hpp"
#include "actpred/error.hpp"
#include "actpred/features.hpp"
#include "actpred/parallel.hpp"

namespace actpred::replygen {

using json = nlohmann::json;

inline constexpr std::size_t kMaxReplyChars = 300;

inline constexpr std::string_view kSystemPrompt =
    "You are a politically liberal human social media user.";

inline constexpr std::string_view kConversationSlot = "{conversation}";

inline constexpr std::string_view kUserTemplate =
    "Below is a series of one or more messages from the social network BlueSky, which is a more "
    "liberal variant of Twitter or X.\n"
    "\n"
    "Read the entire conversation and then generate what you think is a suitable next reply "
    "message. There is a 300 character limit, so don't write long paragraphs.\n"
    "\n"
    "The majority of users are politically liberal, from the USA or Canada or Western Europe, and "
    "the conversation took place in 2024.\n"
    "\n"
    "If you see any words such as @<USERNAME> it is because the data has been anonymized.\n"
    "\n"
    "In rare cases the conversation might consist of a single user posting a multi-message "
    "thread, so if so you should try to continue in their style.\n"
    "\n"
    "## Conversation to reply to\n"
    "\n"
    "{conversation}";

struct PromptPair {
    std::string system;
    std::string user;

    bool operator==(const PromptPair&) const = default;
};

/// "User <id>: <text>" per message with text, in thread order.
inline std::string render_conversation(const corpus::ConversationThread& thread) {
    std::string out;
    for (const auto& m : thread.messages) {
        if (!m.text) {
            continue;
        }
        if (!out.empty()) {
            out += '\n';
        }
        out += "User ";
        out += m.user_id;
        out += ": ";
        out += *m.text;
    }
    if (out.empty()) {
        throw ValidationError("nothing to reply to: thread has no message text");
    }
    return out;
}

inline PromptPair render_prompt(const corpus::ConversationThread& thread) {
    std::string user(kUserTemplate);
    user.replace(user.find(kConversationSlot), kConversationSlot.size(), render_conversation(thread));
    return {std::string(kSystemPrompt), std::move(user)};
}

/// Keeps at most `max_chars` Unicode scalars.
inline std::string truncate_chars(std::string_view text, std::size_t max_chars = kMaxReplyChars) {
    return std::string(text.substr(0, features::text::scalar_prefix_bytes(text, max_chars)));
}

class GenerationProvider {
public:
    virtual ~GenerationProvider() = default;
    virtual std::string complete(const PromptPair& prompt) const = 0;
    virtual std::string identifier() const = 0;
};

/// Offline provider: the prompt's hash picks one canned response.
class StubProvider final : public GenerationProvider {
public:
    StubProvider()
        : responses_{"Totally agree with this, well said.",
                     "This is such an important point, thanks for sharing.",
                     "lol same, I felt this one.",
                     "Honestly not sure about this, but I see where you're coming from.",
                     "Sending good vibes your way!",
                     "Wow, I had no idea. Thanks @<USERNAME>.",
                     "This made my day, thank you.",
                     "Can't believe this is still happening in 2024."} {}

    explicit StubProvider(std::vector<std::string> responses) : responses_(std::move(responses)) {
        if (responses_.empty()) {
            throw ConfigError("stub provider needs at least one response");
        }
    }

    std::string complete(const PromptPair& prompt) const override {
        auto h = io::fnv1a64(prompt.system);
        h = io::fnv1a64(std::string_view("\0", 1), h);
        h = io::fnv1a64(prompt.user, h);
        return responses_[h % responses_.size()];
    }

    std::string identifier() const override { return "stub"; }

private:
    std::vector<std::string> responses_;
};

struct HttpProviderConfig {
    std::string url;   ///< full endpoint, e.g. http://host:8080/v1/generate
    std::string api_key;
    std::string model;
    int timeout_seconds = 30;
    int attempts = 3;
    int initial_backoff_ms = 250;

    /// Reads ACTPRED_PROVIDER_URL, ACTPRED_PROVIDER_KEY and ACTPRED_PROVIDER_MODEL.
    static HttpProviderConfig from_env() {
        auto get = [](const char* name) {
            const char* v = std::getenv(name);
            return v != nullptr ? std::string(v) : std::string();
        };
        HttpProviderConfig c;
        c.url = get("ACTPRED_PROVIDER_URL");
        c.api_key = get("ACTPRED_PROVIDER_KEY");
        c.model = get("ACTPRED_PROVIDER_MODEL");
        return c;
    }
};

/// POSTs {system, user, max_chars[, model]} as JSON and reads {"text"}.
/// Transport failures and 429/5xx answers are retried with doubling backoff.
class HttpProvider final : public GenerationProvider {
public:
    explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.url.empty()) {
            throw ConfigError("generation provider URL is not set (ACTPRED_PROVIDER_URL)");
        }
        if (cfg_.attempts < 1) {
            throw ConfigError("provider attempts must be >= 1");
        }
        const auto scheme = cfg_.url.find("://");
        const auto path_at = cfg_.url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        base_ = cfg_.url.substr(0, path_at);
        path_ = path_at == std::string::npos ? "/" : cfg_.url.substr(path_at);
    }

    std::string complete(const PromptPair& prompt) const override {
        json body = {{"system", prompt.system}, {"user", prompt.user}, {"max_chars", kMaxReplyChars}};
        if (!cfg_.model.empty()) {
            body["model"] = cfg_.model;
        }
        const auto payload = body.dump();
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + cfg_.api_key);
        }
        std::string last_error;
        int backoff = cfg_.initial_backoff_ms;
        for (int attempt = 1; attempt <= cfg_.attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            httplib::Client client(base_);
            client.set_connection_timeout(cfg_.timeout_seconds, 0);
            client.set_read_timeout(cfg_.timeout_seconds, 0);
            auto res = client.Post(path_, headers, payload, "application/json");
            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw IoError("provider returned HTTP " + std::to_string(res->status));
            }
            try {
                return json::parse(res->body).at("text").get<std::string>();
            } catch (const json::exception& e) {
                throw IoError(std::string("malformed provider response: ") + e.what());
            }
        }
        throw IoError("provider failed after " + std::to_string(cfg_.attempts) +
                      " attempts (" + last_error + ")");
    }

    std::string identifier() const override {
        return "http:" + cfg_.url + (cfg_.model.empty() ? "" : ":" + cfg_.model);
    }

private:
    HttpProviderConfig cfg_;
    std::string base_;
    std::string path_;
};

/// Provider text for the thread, cut to 300 characters. Failures surface as
/// GenerationError carrying `index`.
inline std::string generate_reply(const GenerationProvider& provider,
                                  const corpus::ConversationThread& thread, std::size_t index = 0) {
    try {
        return truncate_chars(provider.complete(render_prompt(thread)));
    } catch (const GenerationError&) {
        throw;
    } catch (const Error& e) {
        throw GenerationError(index, e.what());
    }
}

struct ReplyResult {
    std::size_t index = 0;
    std::optional<std::string> text;
    std::optional<std::string> error;
};

/// generate_reply for each (index, thread) pair with up to `in_flight`
/// concurrent requests; results keep input order.
inline std::vector<ReplyResult> generate_replies(const GenerationProvider& provider,
                                                 std::span<const corpus::ConversationThread> threads,
                                                 std::span<const std::size_t> indices, int in_flight = 1) {
    if (threads.size() != indices.size()) {
        throw ContractError("threads and indices differ in length");
    }
    std::vector<ReplyResult> out(threads.size());
    parallel_for(threads.size(), in_flight, [&](std::size_t i) {
        out[i].index = indices[i];
        try {
            out[i].text = generate_reply(provider, threads[i], indices[i]);
        } catch (const Error& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

} // namespace actpred::replygen
