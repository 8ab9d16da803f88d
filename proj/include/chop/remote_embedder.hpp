#pragma once

#include <chop/embedding.hpp>
#include <chop/http.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

namespace chop {

struct RemoteEmbedderConfig {
    std::string endpoint; ///< full URL of the embeddings route
    std::string model;
    std::string api_key;
    std::size_t dimension = 3072;
    std::size_t batch_size = 64;
    http::RetryPolicy retry{};
    std::chrono::seconds timeout{120};
};

/// Embeddings over HTTP: POST {"model", "input": [texts]} and read
/// {"data": [{"index", "embedding"}]}. Vectors are re-normalized locally.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderConfig config)
        : config_(std::move(config)), endpoint_(http::Endpoint::parse(config_.endpoint)) {
        if (config_.batch_size == 0)
            throw UsageError("embedding batch size must be positive");
    }

    std::size_t dimension() const override { return config_.dimension; }

    std::string descriptor() const override {
        return "remote:" + config_.model + ":dim=" + std::to_string(config_.dimension);
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (std::size_t off = 0; off < texts.size(); off += config_.batch_size) {
            auto batch = texts.subspan(off, std::min(config_.batch_size, texts.size() - off));
            for (const auto& t : batch)
                if (text::trim(t).empty())
                    throw DataError("cannot embed empty text");
            auto vectors = request(batch);
            for (auto& v : vectors)
                out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::vector<EmbeddingVector> request(std::span<const std::string> batch) const {
        nlohmann::json body{{"model", config_.model}, {"input", std::vector<std::string>(batch.begin(), batch.end())}};
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        auto reply = http::post_json(endpoint_, body.dump(), headers, config_.retry, config_.timeout);

        std::vector<EmbeddingVector> vectors(batch.size());
        try {
            auto j = nlohmann::json::parse(reply);
            const auto& data = j.at("data");
            if (data.size() != batch.size())
                throw BackendError("embedding service returned " + std::to_string(data.size()) + " vectors for " +
                                   std::to_string(batch.size()) + " inputs");
            for (std::size_t i = 0; i < data.size(); ++i) {
                auto idx = data[i].value("index", i);
                if (idx >= batch.size())
                    throw BackendError("embedding index out of range");
                vectors[idx].values = data[i].at("embedding").get<std::vector<double>>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("malformed embeddings response: " + std::string(e.what()));
        }
        for (auto& v : vectors) {
            if (v.dimension() != config_.dimension)
                throw BackendError("embedding dimension " + std::to_string(v.dimension()) + ", expected " +
                                   std::to_string(config_.dimension));
            normalize(v);
        }
        return vectors;
    }

    RemoteEmbedderConfig config_;
    http::Endpoint endpoint_;
};

} // namespace chop
