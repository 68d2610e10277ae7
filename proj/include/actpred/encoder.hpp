#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "actpred/binary_io.hpp"
#include "actpred/error.hpp"

namespace actpred::encoder {

using json = nlohmann::json;

/// Maps text to a fixed-width real vector. Trainable encoders expose a flat
/// parameter block and a backward pass; frozen ones return an empty span.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;

    virtual std::size_t dim() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
    /// Persisted with models so a bundle can refuse a mismatched encoder.
    virtual std::string identifier() const = 0;
    /// Reconstruction recipe (type plus settings, not parameters).
    virtual json config() const = 0;

    virtual bool trainable() const { return false; }
    virtual std::span<double> parameters() { return {}; }
    virtual std::span<const double> parameters() const { return {}; }

    /// Adds d(loss)/d(parameters) to `grad_params` given d(loss)/d(embed(text)).
    virtual void backward(std::string_view /*text*/, std::span<const double> /*grad_out*/,
                          std::span<double> /*grad_params*/) const {}

    virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            out.push_back(embed(t));
        }
        return out;
    }
};

/// Signed feature hashing of lower-cased, space-padded byte n-grams,
/// L2-normalised. Empty text embeds to the zero vector.
class HashedNGramEncoder final : public TextEncoder {
public:
    explicit HashedNGramEncoder(std::size_t dim = 768, std::size_t min_n = 3, std::size_t max_n = 5)
        : dim_(dim), min_n_(min_n), max_n_(max_n) {
        if (dim == 0 || min_n == 0 || max_n < min_n) {
            throw ConfigError("invalid hashed encoder settings");
        }
    }

    std::size_t dim() const override { return dim_; }

    std::vector<double> embed(std::string_view text) const override {
        std::vector<double> v(dim_, 0.0);
        if (text.empty()) {
            return v;
        }
        std::string padded;
        padded.reserve(text.size() + 2);
        padded.push_back(' ');
        for (char c : text) {
            padded.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
        }
        padded.push_back(' ');
        const std::string_view s(padded);
        for (std::size_t n = min_n_; n <= max_n_; ++n) {
            for (std::size_t i = 0; i + n <= s.size(); ++i) {
                const auto h = io::fnv1a64(s.substr(i, n));
                v[h % dim_] += (h >> 63) != 0 ? -1.0 : 1.0;
            }
        }
        double norm = 0.0;
        for (double x : v) {
            norm += x * x;
        }
        if (norm == 0.0) {
            // Collisions cancelled every count; fall back to a fixed unit bucket.
            v[io::fnv1a64(text) % dim_] = 1.0;
            return v;
        }
        norm = std::sqrt(norm);
        for (double& x : v) {
            x /= norm;
        }
        return v;
    }

    std::string identifier() const override {
        return "hashed-ngram:d" + std::to_string(dim_) + ":n" + std::to_string(min_n_) + "-" +
               std::to_string(max_n_);
    }

    json config() const override {
        return {{"type", "hashed"}, {"dim", dim_}, {"min_n", min_n_}, {"max_n", max_n_}};
    }

private:
    std::size_t dim_;
    std::size_t min_n_;
    std::size_t max_n_;
};

/// Hashed embedding followed by a learned per-dimension gain and bias,
/// initialised to the identity. Gives the end-to-end phase real parameters.
class AdaptiveHashedEncoder final : public TextEncoder {
public:
    explicit AdaptiveHashedEncoder(std::size_t dim = 768, std::size_t min_n = 3, std::size_t max_n = 5)
        : base_(dim, min_n, max_n), params_(2 * dim, 0.0) {
        std::fill(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(dim), 1.0);
    }

    std::size_t dim() const override { return base_.dim(); }

    std::vector<double> embed(std::string_view text) const override {
        auto v = base_.embed(text);
        const std::size_t d = dim();
        for (std::size_t i = 0; i < d; ++i) {
            v[i] = params_[i] * v[i] + params_[d + i];
        }
        return v;
    }

    std::string identifier() const override { return "adaptive-" + base_.identifier(); }

    json config() const override {
        auto j = base_.config();
        j["type"] = "adaptive";
        return j;
    }

    bool trainable() const override { return true; }
    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }

    void backward(std::string_view text, std::span<const double> grad_out,
                  std::span<double> grad_params) const override {
        const auto x = base_.embed(text);
        const std::size_t d = dim();
        for (std::size_t i = 0; i < d; ++i) {
            grad_params[i] += grad_out[i] * x[i];
            grad_params[d + i] += grad_out[i];
        }
    }

private:
    HashedNGramEncoder base_;
    std::vector<double> params_;
};

/// Remote embedding endpoint: POST <url>/embed {"texts":[...]} answered with
/// {"embeddings":[[...], ...]}.
class ServiceEncoder final : public TextEncoder {
public:
    ServiceEncoder(std::string url, std::size_t dim, int timeout_seconds = 30)
        : url_(std::move(url)), dim_(dim), timeout_(timeout_seconds) {
        if (dim == 0) {
            throw ConfigError("service encoder needs a positive dimension");
        }
    }

    std::size_t dim() const override { return dim_; }

    std::vector<double> embed(std::string_view text) const override {
        return embed_batch(std::vector<std::string>{std::string(text)}).front();
    }

    std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const override {
        httplib::Client client(url_);
        client.set_connection_timeout(timeout_, 0);
        client.set_read_timeout(timeout_, 0);
        const json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
        auto res = client.Post("/embed", body.dump(), "application/json");
        if (!res) {
            throw ScoringError("embedding service unreachable: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw ScoringError("embedding service returned HTTP " + std::to_string(res->status));
        }
        std::vector<std::vector<double>> out;
        try {
            out = json::parse(res->body).at("embeddings").get<std::vector<std::vector<double>>>();
        } catch (const json::exception& e) {
            throw ScoringError(std::string("malformed embedding response: ") + e.what());
        }
        if (out.size() != texts.size()) {
            throw ScoringError("embedding service returned the wrong number of vectors");
        }
        for (const auto& v : out) {
            if (v.size() != dim_) {
                throw ScoringError("embedding dimension " + std::to_string(v.size()) + " != " +
                                   std::to_string(dim_));
            }
        }
        return out;
    }

    std::string identifier() const override { return "service:" + url_ + ":d" + std::to_string(dim_); }

    json config() const override { return {{"type", "service"}, {"url", url_}, {"dim", dim_}}; }

private:
    std::string url_;
    std::size_t dim_;
    int timeout_;
};

/// Rebuilds an encoder from its config(); parameters are restored separately.
inline std::unique_ptr<TextEncoder> make_encoder(const json& cfg) {
    const auto type = cfg.at("type").get<std::string>();
    if (type == "hashed") {
        return std::make_unique<HashedNGramEncoder>(cfg.value("dim", 768), cfg.value("min_n", 3),
                                                    cfg.value("max_n", 5));
    }
    if (type == "adaptive") {
        return std::make_unique<AdaptiveHashedEncoder>(cfg.value("dim", 768), cfg.value("min_n", 3),
                                                       cfg.value("max_n", 5));
    }
    if (type == "service") {
        return std::make_unique<ServiceEncoder>(cfg.at("url").get<std::string>(),
                                                cfg.at("dim").get<std::size_t>());
    }
    throw ConfigError("unknown encoder type '" + type + "'");
}

/// Parses the command-line spelling: "hashed", "adaptive" or "service:<url>".
inline std::unique_ptr<TextEncoder> encoder_from_spec(std::string_view spec, std::size_t dim = 768) {
    if (spec == "hashed") {
        return std::make_unique<HashedNGramEncoder>(dim);
    }
    if (spec == "adaptive") {
        return std::make_unique<AdaptiveHashedEncoder>(dim);
    }
    if (spec.substr(0, 8) == "service:") {
        return std::make_unique<ServiceEncoder>(std::string(spec.substr(8)), dim);
    }
    throw ConfigError("unknown encoder '" + std::string(spec) + "'");
}

} // namespace actpred::encoder
