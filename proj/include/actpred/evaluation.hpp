#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/corpus.hpp"
#include "actpred/encoder.hpp"
#include "actpred/error.hpp"
#include "actpred/metrics.hpp"
#include "actpred/router.hpp"

namespace actpred::eval {

using EmbeddingProvider = encoder::TextEncoder;

struct CosineScore {
    double value = 0.0;
    /// Set when either embedding is the zero vector; value is then 0.
    bool zero_vector = false;
};

inline CosineScore cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ContractError("embedding dimensions differ");
    }
    double dot = 0.0;
    double nu = 0.0;
    double nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) {
        return {0.0, true};
    }
    return {std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0), false};
}

inline CosineScore cosine_similarity(std::string_view a, std::string_view b,
                                     const EmbeddingProvider& provider) {
    try {
        return cosine(provider.embed(a), provider.embed(b));
    } catch (const ScoringError&) {
        throw;
    } catch (const Error& e) {
        throw ScoringError(e.what());
    }
}

struct PredictionRow {
    std::size_t index = 0;
    ActionLabel action = ActionLabel::Follow;
    std::optional<router::RouteTag> route;
};

inline PredictionRow parse_prediction_row(const json& j) {
    PredictionRow r;
    r.index = j.at("index").get<std::size_t>();
    r.action = parse_action(j.at("action").get<std::string>());
    if (auto it = j.find("route"); it != j.end() && it->is_string()) {
        r.route = router::try_parse_route(it->get<std::string>());
        if (!r.route) {
            throw SchemaError("route", "unknown route '" + it->get<std::string>() + "'");
        }
    }
    return r;
}

struct ReplyRow {
    std::size_t index = 0;
    std::string text;
};

namespace detail {

inline std::vector<std::string> action_names() {
    return {kActionNames.begin(), kActionNames.end()};
}

inline std::vector<std::string> coarse_names() { return {kCoarseNames.begin(), kCoarseNames.end()}; }

inline json summary(const std::vector<double>& xs) {
    if (xs.empty()) {
        return json::object();
    }
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
    }
    return {{"min", *std::min_element(xs.begin(), xs.end())},
            {"max", *std::max_element(xs.begin(), xs.end())},
            {"avg", sum / static_cast<double>(xs.size())}};
}

} // namespace detail

/// Scores aligned predictions against gold threads. `predictions[k].index`
/// names a row of `golds`; every gold row needs exactly one prediction.
/// Similarity is reported only when both `replies` and `provider` are given.
inline json evaluate_run(std::span<const PredictionRow> predictions,
                         std::span<const corpus::ConversationThread> golds,
                         std::optional<std::span<const ReplyRow>> replies = std::nullopt,
                         const EmbeddingProvider* provider = nullptr) {
    if (predictions.size() != golds.size()) {
        throw ContractError("prediction count " + std::to_string(predictions.size()) +
                            " != gold count " + std::to_string(golds.size()));
    }
    std::vector<const PredictionRow*> by_index(golds.size(), nullptr);
    for (const auto& p : predictions) {
        if (p.index >= golds.size()) {
            throw ContractError("prediction index " + std::to_string(p.index) + " has no gold row");
        }
        if (by_index[p.index] != nullptr) {
            throw ContractError("duplicate prediction for index " + std::to_string(p.index));
        }
        by_index[p.index] = &p;
    }

    ConfusionMatrix full(detail::action_names());
    ConfusionMatrix coarse(detail::coarse_names());
    std::map<int, ConfusionMatrix> per_cluster;
    router::RouteStats routes;
    bool have_routes = false;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const auto& g = golds[i];
        if (!g.gold_action) {
            throw ContractError("gold row " + std::to_string(i) + " has no action");
        }
        const auto& p = *by_index[i];
        full.add(index_of(*g.gold_action), index_of(p.action));
        const auto gc = index_of(coarsen(*g.gold_action));
        const auto pc = index_of(coarsen(p.action));
        coarse.add(gc, pc);
        per_cluster.try_emplace(g.responder_cluster, detail::coarse_names())
            .first->second.add(gc, pc);
        if (p.route) {
            have_routes = true;
            routes.add(router::make_prediction(p.action, *p.route));
        }
    }

    json report;
    report["records"] = golds.size();
    report["coarse"] = f1_report(coarse).to_json();
    report["coarse"]["confusion"] = coarse.to_json();

    json clusters = json::object();
    std::vector<double> macro;
    std::vector<double> weighted;
    for (const auto& [c, m] : per_cluster) {
        const auto r = f1_report(m);
        clusters[std::to_string(c)] = {{"macro_f1", r.macro_f1},
                                       {"macro_f1_supported", r.macro_f1_supported},
                                       {"weighted_f1", r.weighted_f1},
                                       {"total", r.total}};
        macro.push_back(r.macro_f1);
        weighted.push_back(r.weighted_f1);
    }
    report["coarse_per_cluster"] = {{"clusters", std::move(clusters)},
                                    {"macro_f1", detail::summary(macro)},
                                    {"weighted_f1", detail::summary(weighted)}};

    std::vector<std::size_t> rare_classes;
    for (std::size_t a = 0; a < kNumActions; ++a) {
        if (is_rare(kAllActions[a])) {
            rare_classes.push_back(a);
        }
    }
    report["rare"] = f1_report(full, rare_classes).to_json();
    report["full"] = f1_report(full).to_json();
    report["full"]["confusion"] = full.to_json();

    if (replies && provider != nullptr) {
        std::map<std::size_t, const ReplyRow*> reply_at;
        for (const auto& r : *replies) {
            if (r.index >= golds.size()) {
                throw ContractError("reply index " + std::to_string(r.index) + " has no gold row");
            }
            reply_at[r.index] = &r;
        }
        std::vector<double> scores;
        std::size_t zero = 0;
        std::size_t missing = 0;
        for (std::size_t i = 0; i < golds.size(); ++i) {
            const auto& g = golds[i];
            if (g.gold_action != ActionLabel::Reply || !g.gold_text) {
                continue;
            }
            auto it = reply_at.find(i);
            if (it == reply_at.end()) {
                ++missing;
                continue;
            }
            const auto s = cosine_similarity(it->second->text, *g.gold_text, *provider);
            zero += s.zero_vector ? 1 : 0;
            scores.push_back(s.value);
        }
        json sim = detail::summary(scores);
        sim["mean"] = sim.value("avg", 0.0);
        sim["pairs"] = scores.size();
        sim["zero_vector_pairs"] = zero;
        sim["gold_replies_without_generation"] = missing;
        sim["provider"] = provider->identifier();
        report["similarity"] = std::move(sim);
    }
    if (have_routes) {
        report["routes"] = routes.to_json();
    }
    return report;
}

} // namespace actpred::eval
