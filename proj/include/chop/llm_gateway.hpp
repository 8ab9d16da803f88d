#pragma once

#include <chop/digest.hpp>
#include <chop/error.hpp>
#include <chop/text.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace chop {

struct ChatRequest {
    std::string prompt;
    std::optional<std::string> system_prompt;
    double temperature = 0.0;
    int max_output_tokens = 512;
};

struct ChatResponse {
    std::string text;
    std::chrono::microseconds latency{0};
    std::string backend_id;
};

/// Stable key for a prompt: SHA-256 of the text with line endings normalized to "\n".
inline std::string prompt_digest(std::string_view prompt) { return sha256_hex(text::normalize_newlines(prompt)); }

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string id() const = 0;
};

// ---------------------------------------------------------------------------
// Transcripts

/// Recorded responses keyed by prompt digest. On disk: one JSON object
/// {"digest": ..., "response": ...} per line.
class Transcript {
public:
    void add(const std::string& digest, std::string response) {
        auto [it, fresh] = entries_.emplace(digest, response);
        if (!fresh && it->second != response)
            throw DataError("transcript has conflicting responses for digest " + digest);
        if (fresh)
            order_.push_back(digest);
    }

    void add_prompt(std::string_view prompt, std::string response) { add(prompt_digest(prompt), std::move(response)); }

    const std::string* find(const std::string& digest) const {
        auto it = entries_.find(digest);
        return it == entries_.end() ? nullptr : &it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    static Transcript load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw DataError("transcript not found: " + path.string());
        Transcript t;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty())
                continue;
            try {
                auto j = nlohmann::json::parse(line);
                t.add(j.at("digest").get<std::string>(), j.at("response").get<std::string>());
            } catch (const nlohmann::json::exception& e) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed transcript entry: " +
                                e.what());
            }
        }
        return t;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write transcript: " + path.string());
        for (const auto& d : order_)
            out << entry_line(d, entries_.at(d)) << '\n';
        if (!out)
            throw DataError("write failed: " + path.string());
    }

    static std::string entry_line(const std::string& digest, const std::string& response) {
        return nlohmann::json{{"digest", digest}, {"response", response}}.dump();
    }

private:
    std::unordered_map<std::string, std::string> entries_;
    std::vector<std::string> order_;
};

/// Replays recorded responses. Read-only after construction.
class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(Transcript transcript) : transcript_(std::move(transcript)) {}

    ChatResponse complete(const ChatRequest& request) override {
        auto start = std::chrono::steady_clock::now();
        auto digest = prompt_digest(request.prompt);
        const auto* hit = transcript_.find(digest);
        if (!hit)
            throw BackendError("no transcript entry for prompt digest " + digest);
        if (hit->empty())
            throw BackendError("empty response recorded for prompt digest " + digest);
        return {*hit, std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start),
                id()};
    }

    std::string id() const override { return "scripted"; }
    const Transcript& transcript() const noexcept { return transcript_; }

private:
    Transcript transcript_;
};

/// Forwards to another backend and appends every completed call to a
/// transcript file as it happens.
class RecordingBackend final : public ChatBackend {
public:
    RecordingBackend(std::shared_ptr<ChatBackend> inner, const std::filesystem::path& path)
        : inner_(std::move(inner)), out_(path, std::ios::binary | std::ios::app) {
        if (!out_)
            throw DataError("cannot open transcript for writing: " + path.string());
    }

    ChatResponse complete(const ChatRequest& request) override {
        auto response = inner_->complete(request);
        auto digest = prompt_digest(request.prompt);
        std::lock_guard lock(mu_);
        if (recorded_.emplace(digest).second) {
            out_ << Transcript::entry_line(digest, response.text) << '\n';
            out_.flush();
            if (!out_)
                throw DataError("transcript write failed");
        }
        return response;
    }

    std::string id() const override { return "recording+" + inner_->id(); }

    std::size_t recorded() const {
        std::lock_guard lock(mu_);
        return recorded_.size();
    }

private:
    std::shared_ptr<ChatBackend> inner_;
    mutable std::mutex mu_;
    std::ofstream out_;
    std::set<std::string> recorded_;
};

/// Shared entry point used by the pipeline. Caps in-flight calls and counts them.
class ChatGateway {
public:
    explicit ChatGateway(std::shared_ptr<ChatBackend> backend, std::ptrdiff_t max_in_flight = 4,
                         int max_output_tokens = 512)
        : backend_(std::move(backend)), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)),
          max_output_tokens_(max_output_tokens) {
        if (!backend_)
            throw UsageError("chat gateway needs a backend");
    }

    ChatResponse complete(const ChatRequest& request) {
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};
        ++calls_;
        return backend_->complete(request);
    }

    /// Pipeline call: temperature 0, default output cap.
    ChatResponse ask(std::string prompt) {
        ChatRequest r;
        r.prompt = std::move(prompt);
        r.temperature = 0.0;
        r.max_output_tokens = max_output_tokens_;
        return complete(r);
    }

    long calls() const noexcept { return calls_; }
    const ChatBackend& backend() const noexcept { return *backend_; }

private:
    std::shared_ptr<ChatBackend> backend_;
    std::counting_semaphore<> slots_;
    int max_output_tokens_;
    std::atomic<long> calls_{0};
};

} // namespace chop
