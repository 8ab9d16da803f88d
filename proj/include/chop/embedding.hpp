#pragma once

#include <chop/error.hpp>
#include <chop/text.hpp>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chop {

/// Dense vector with unit Euclidean norm once produced by an Embedder.
struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const noexcept { return values.size(); }

    double norm() const noexcept {
        double s = 0.0;
        for (double v : values)
            s += v * v;
        return std::sqrt(s);
    }

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

/// Four independent partial sums so the loop vectorizes without -ffast-math.
/// The summation order is fixed, so results are deterministic.
inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < a.size(); ++i)
        s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// Cosine similarity; 0 when either side has zero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) noexcept {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0)
        return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) noexcept {
    return cosine(std::span<const double>(a.values), std::span<const double>(b.values));
}

/// Scale to unit norm. Throws DataError on a zero or non-finite vector.
inline void normalize(EmbeddingVector& v) {
    double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw DataError("embedding has zero or non-finite norm");
    for (auto& x : v.values)
        x /= n;
}

class Embedder {
public:
    virtual ~Embedder() = default;

    virtual std::size_t dimension() const = 0;

    /// Stable description recorded in index metadata (backend, dimension, seed).
    virtual std::string descriptor() const = 0;

    /// One unit-norm vector per input, in input order.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const = 0;

    EmbeddingVector embed(std::string_view text) const {
        std::string owned(text);
        return std::move(embed_batch(std::span<const std::string>(&owned, 1)).front());
    }
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Signed feature hashing over lowercased word tokens.
///
/// Each term t hashes to h = splitmix64(fnv1a64(t) ^ seed); the term adds
/// +1 (top bit clear) or -1 (top bit set) to bucket h mod d. The count vector
/// is then scaled to unit norm. Deterministic and order-insensitive.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dimension = 512, std::uint64_t seed = 42)
        : dimension_(dimension), seed_(seed) {
        if (dimension_ == 0)
            throw UsageError("hash embedder dimension must be positive");
    }

    std::size_t dimension() const override { return dimension_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::string descriptor() const override {
        return "hash-v1:dim=" + std::to_string(dimension_) + ":seed=" + std::to_string(seed_);
    }

    struct Slot {
        std::size_t bucket;
        int sign;
    };

    Slot slot(std::string_view term) const noexcept {
        auto h = detail::splitmix64(detail::fnv1a64(term) ^ seed_);
        return {static_cast<std::size_t>(h % dimension_), (h >> 63) != 0 ? -1 : 1};
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) const override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            EmbeddingVector v{std::vector<double>(dimension_, 0.0)};
            auto terms = word_terms(t);
            if (terms.empty())
                throw DataError("cannot embed text without word content");
            for (const auto& term : terms) {
                auto s = slot(term);
                v.values[s.bucket] += s.sign;
            }
            normalize(v);
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::size_t dimension_;
    std::uint64_t seed_;
};

} // namespace chop
