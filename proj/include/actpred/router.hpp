#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/corpus.hpp"
#include "actpred/error.hpp"
#include "actpred/features.hpp"
#include "actpred/gbdt.hpp"
#include "actpred/lookup.hpp"
#include "actpred/parallel.hpp"
#include "actpred/rare_classifier.hpp"

namespace actpred::router {

using json = nlohmann::json;

enum class RouteTag : std::uint8_t {
    RuleReply,
    LookupClusterSpecific,
    LookupGlobalFallback,
    GbdtCommon,
    RareClassifier,
};

inline constexpr std::size_t kNumRoutes = 5;

inline constexpr std::array<std::string_view, kNumRoutes> kRouteNames{
    "rule_reply", "lookup_cluster_specific", "lookup_global_fallback", "gbdt_common",
    "rare_classifier"};

constexpr std::string_view to_string(RouteTag t) noexcept {
    return kRouteNames[static_cast<std::size_t>(t)];
}

inline std::optional<RouteTag> try_parse_route(std::string_view s) {
    for (std::size_t i = 0; i < kNumRoutes; ++i) {
        if (kRouteNames[i] == s) {
            return static_cast<RouteTag>(i);
        }
    }
    return std::nullopt;
}

struct Prediction {
    ActionLabel action = ActionLabel::Follow;
    RouteTag route = RouteTag::GbdtCommon;
    bool needs_text = false;

    bool operator==(const Prediction&) const = default;
};

inline Prediction make_prediction(ActionLabel a, RouteTag r) {
    return {a, r, a == ActionLabel::Reply};
}

struct StageToggles {
    bool lookup = true;
    bool rare = true;
};

/// Action emitted for OTHER when the rare stage is switched off: the most
/// frequent rare action.
inline constexpr ActionLabel kRareFallback = ActionLabel::Unfollow;

/// Everything predict_one needs. Read-only once built.
struct Pipeline {
    lookup::VoteTable table;
    lookup::LookupThresholds thresholds;
    features::KeywordDatabase keywords;
    std::map<int, gbdt::ClusterModel> models;
    std::shared_ptr<const rare::FusionModel> rare_model;
    StageToggles toggles;

    /// Fails early when the cluster models were trained on a different
    /// column layout than `keywords` produces.
    void check_schema() const {
        const auto names = features::FeatureSchema::for_database(keywords).names();
        for (const auto& [cluster, m] : models) {
            if (m.ensemble.feature_names != names) {
                throw ConfigError("model for cluster " + std::to_string(cluster) +
                                  " was trained with a different feature schema");
            }
        }
    }
};

/// Second-event time used for features: the second message, else the query
/// time of a single-message thread, else none.
inline std::optional<std::int64_t> second_time(const corpus::ConversationThread& t) {
    if (t.length() >= 2) {
        return t.messages[1].relative_time;
    }
    return t.query_time;
}

inline Prediction predict_one(const Pipeline& p, const corpus::ConversationThread& thread) {
    if (thread.messages.empty()) {
        throw ValidationError("thread has no messages");
    }
    if (thread.length() >= 3) {
        return make_prediction(ActionLabel::Reply, RouteTag::RuleReply);
    }
    const auto& first = thread.first();
    if (p.toggles.lookup) {
        const auto d = lookup::decide(p.table, first.text, thread.responder_cluster, p.thresholds);
        if (d.strategy == lookup::Strategy::ClusterSpecific) {
            return make_prediction(*d.action, RouteTag::LookupClusterSpecific);
        }
        if (d.strategy == lookup::Strategy::GlobalFallback) {
            return make_prediction(*d.action, RouteTag::LookupGlobalFallback);
        }
    }
    const auto it = p.models.find(thread.responder_cluster);
    if (it == p.models.end()) {
        throw ConfigError("no model for cluster " + std::to_string(thread.responder_cluster));
    }
    const auto t2 = second_time(thread);
    std::optional<std::string_view> second_user;
    if (thread.length() >= 2) {
        second_user = thread.messages[1].user_id;
    }
    const auto fv = features::assemble_parts(first, t2, second_user, p.keywords);
    const auto coarse = gbdt::classify(it->second.ensemble, it->second.thresholds, fv.values);
    if (coarse == CoarseLabel::Follow) {
        return make_prediction(ActionLabel::Follow, RouteTag::GbdtCommon);
    }
    if (coarse == CoarseLabel::Like) {
        return make_prediction(ActionLabel::Like, RouteTag::GbdtCommon);
    }
    if (!p.toggles.rare) {
        return make_prediction(kRareFallback, RouteTag::GbdtCommon);
    }
    if (!p.rare_model) {
        throw ConfigError("rare classifier not loaded");
    }
    const auto t12 = features::neural_temporal_vector(first.relative_time,
                                                      t2.value_or(first.relative_time));
    const std::string_view text = first.text ? std::string_view(*first.text) : std::string_view();
    return make_prediction(rare::predict_rare(*p.rare_model, text, t12), RouteTag::RareClassifier);
}

struct RouteStats {
    std::array<std::uint64_t, kNumRoutes> counts{};
    std::uint64_t replies = 0;
    std::uint64_t errors = 0;

    std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (auto c : counts) {
            t += c;
        }
        return t;
    }

    void add(const Prediction& p) {
        ++counts[static_cast<std::size_t>(p.route)];
        replies += p.action == ActionLabel::Reply ? 1 : 0;
    }

    /// Percentages are over all routed inputs (records that failed are
    /// reported under "errors" and excluded).
    double percentage(RouteTag t) const {
        const auto n = total();
        return n == 0 ? 0.0
                      : 100.0 * static_cast<double>(counts[static_cast<std::size_t>(t)]) /
                            static_cast<double>(n);
    }

    json to_json() const {
        json routes = json::object();
        const auto n = total();
        for (std::size_t i = 0; i < kNumRoutes; ++i) {
            json r = {{"count", counts[i]}};
            if (n > 0) {
                r["percentage"] = percentage(static_cast<RouteTag>(i));
            }
            routes[std::string(kRouteNames[i])] = std::move(r);
        }
        json j = {{"total", n}, {"routes", std::move(routes)}, {"reply_count", replies},
                  {"errors", errors}};
        if (n > 0) {
            j["reply_fraction"] = static_cast<double>(replies) / static_cast<double>(n);
        }
        return j;
    }

    static RouteStats from_json(const json& j) {
        RouteStats s;
        for (std::size_t i = 0; i < kNumRoutes; ++i) {
            s.counts[i] = j.at("routes").at(std::string(kRouteNames[i])).at("count").get<std::uint64_t>();
        }
        s.replies = j.value("reply_count", std::uint64_t{0});
        s.errors = j.value("errors", std::uint64_t{0});
        return s;
    }

    bool operator==(const RouteStats&) const = default;
};

struct RecordFailure {
    std::size_t index = 0;
    std::string kind;
    std::string message;
};

struct BatchResult {
    std::vector<std::optional<Prediction>> predictions; ///< input order; empty on failure
    RouteStats stats;
    std::vector<RecordFailure> failures;
};

/// predict_one over every thread; failures are collected per record.
inline BatchResult predict_batch(const Pipeline& p, std::span<const corpus::ConversationThread> threads,
                                 int workers = 1) {
    BatchResult out;
    out.predictions.resize(threads.size());
    std::vector<std::optional<RecordFailure>> failed(threads.size());
    parallel_for(threads.size(), workers, [&](std::size_t i) {
        try {
            out.predictions[i] = predict_one(p, threads[i]);
        } catch (const Error& e) {
            failed[i] = RecordFailure{i, std::string(e.kind()), e.what()};
        }
    });
    for (std::size_t i = 0; i < threads.size(); ++i) {
        if (out.predictions[i]) {
            out.stats.add(*out.predictions[i]);
        } else if (failed[i]) {
            ++out.stats.errors;
            out.failures.push_back(std::move(*failed[i]));
        }
    }
    return out;
}

inline json prediction_record(std::size_t index, const Prediction& p) {
    return {{"index", index}, {"action", to_string(p.action)}, {"route", to_string(p.route)}};
}

} // namespace actpred::router
