#pragma once

#include <chop/http.hpp>
#include <chop/llm_gateway.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <string>

namespace chop {

/// Chat-completions client: POST {model, messages, temperature, max_tokens},
/// read choices[0].message.content.
struct RemoteChatConfig {
    std::string endpoint; ///< full URL of the chat-completions route
    std::string model;
    std::string api_key; ///< sent as a Bearer token when non-empty
    http::RetryPolicy retry{};
    std::chrono::seconds timeout{120};
};

class RemoteChatBackend final : public ChatBackend {
public:
    explicit RemoteChatBackend(RemoteChatConfig config)
        : config_(std::move(config)), endpoint_(http::Endpoint::parse(config_.endpoint)) {}

    static nlohmann::json request_body(const ChatRequest& r, const std::string& model) {
        auto messages = nlohmann::json::array();
        if (r.system_prompt)
            messages.push_back({{"role", "system"}, {"content", *r.system_prompt}});
        messages.push_back({{"role", "user"}, {"content", r.prompt}});
        return {{"model", model},
                {"messages", std::move(messages)},
                {"temperature", r.temperature},
                {"max_tokens", r.max_output_tokens}};
    }

    ChatResponse complete(const ChatRequest& request) override {
        auto start = std::chrono::steady_clock::now();
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);

        int attempts = 0;
        std::string body;
        try {
            body = http::post_json(endpoint_, request_body(request, config_.model).dump(), headers, config_.retry,
                                   config_.timeout, &attempts);
        } catch (...) {
            total_attempts_ += attempts;
            throw;
        }
        total_attempts_ += attempts;
        last_attempts_ = attempts;

        std::string text;
        try {
            auto j = nlohmann::json::parse(body);
            const auto& content = j.at("choices").at(0).at("message").at("content");
            if (content.is_string())
                text = content.get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("malformed chat-completions response: " + std::string(e.what()));
        }
        if (text.empty())
            throw BackendError("empty response from " + config_.endpoint);
        return {std::move(text),
                std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start), id()};
    }

    std::string id() const override { return "remote:" + config_.model; }

    /// Requests issued by the most recent successful call (1 = no retries).
    int last_attempts() const noexcept { return last_attempts_; }
    long total_attempts() const noexcept { return total_attempts_; }

private:
    RemoteChatConfig config_;
    http::Endpoint endpoint_;
    std::atomic<int> last_attempts_{0};
    std::atomic<long> total_attempts_{0};
};

} // namespace chop
