#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/corpus.hpp"
#include "actpred/features.hpp"
#include "actpred/gbdt.hpp"
#include "actpred/rare_classifier.hpp"

// Glue from labeled threads to the two trainable model families.
namespace actpred::training {

using json = nlohmann::json;

struct ClusterData {
    gbdt::Matrix x;
    std::vector<CoarseLabel> y;
};

/// Feature rows of every labeled two-message thread, grouped by cluster.
inline std::map<int, ClusterData> cluster_rows(std::span<const corpus::ConversationThread> threads,
                                               const features::KeywordDatabase& db) {
    std::map<int, ClusterData> out;
    for (std::size_t i = 0; i < threads.size(); ++i) {
        const auto& t = threads[i];
        if (t.length() != 2) {
            continue;
        }
        if (!t.gold_action) {
            throw ContractError("record " + std::to_string(i) + " has no gold action");
        }
        auto& d = out[t.responder_cluster];
        d.x.push_row(features::assemble(t, db).values);
        d.y.push_back(coarsen(*t.gold_action));
    }
    return out;
}

struct GbdtBundle {
    std::map<int, gbdt::ClusterModel> models;
    json schema;
    json cv_reports = json::object();
};

/// One model per cluster. Clusters that are too small or carry a single
/// coarse class receive a copy of a model trained on all clusters pooled.
inline GbdtBundle train_cluster_models(std::span<const corpus::ConversationThread> threads,
                                       const features::KeywordDatabase& db,
                                       const gbdt::TrainConfig& cfg, std::size_t min_cluster_rows) {
    const auto schema = features::FeatureSchema::for_database(db);
    const auto names = schema.names();
    auto rows = cluster_rows(threads, db);
    GbdtBundle bundle;
    bundle.schema = schema.to_json();

    std::optional<gbdt::TrainResult> pooled;
    auto get_pooled = [&]() -> const gbdt::TrainResult& {
        if (!pooled) {
            ClusterData all;
            for (const auto& [c, d] : rows) {
                for (std::size_t r = 0; r < d.x.rows; ++r) {
                    all.x.push_row(d.x.row(r));
                }
                all.y.insert(all.y.end(), d.y.begin(), d.y.end());
            }
            pooled = gbdt::train(all.x, all.y, cfg, names);
            auto report = pooled->report.to_json();
            report["source"] = "pooled";
            bundle.cv_reports["pooled"] = std::move(report);
        }
        return *pooled;
    };

    for (int c = 0; c < kNumClusters; ++c) {
        auto it = rows.find(c);
        bool own = false;
        if (it != rows.end() && it->second.y.size() >= min_cluster_rows) {
            const auto counts = gbdt::class_counts(it->second.y);
            own = std::count_if(counts.begin(), counts.end(), [](auto n) { return n > 0; }) >= 2;
        }
        gbdt::ClusterModel m;
        if (own) {
            auto r = gbdt::train(it->second.x, it->second.y, cfg, names);
            auto report = r.report.to_json();
            report["source"] = "cluster";
            bundle.cv_reports[std::to_string(c)] = std::move(report);
            m.ensemble = std::move(r.ensemble);
            m.thresholds = r.thresholds;
        } else {
            const auto& p = get_pooled();
            m.ensemble = p.ensemble;
            m.thresholds = p.thresholds;
            bundle.cv_reports[std::to_string(c)] = {
                {"source", "pooled"},
                {"rows", it == rows.end() ? 0 : it->second.y.size()}};
        }
        m.ensemble.cluster = c;
        bundle.models.emplace(c, std::move(m));
    }
    return bundle;
}

/// Rare-action training samples: labeled two-message threads whose action
/// is not FOLLOW or LIKE.
inline std::vector<rare::RareSample> rare_samples(std::span<const corpus::ConversationThread> threads) {
    std::vector<rare::RareSample> out;
    for (const auto& t : threads) {
        if (t.length() != 2 || !t.gold_action || !is_rare(*t.gold_action)) {
            continue;
        }
        rare::RareSample s;
        s.text = t.first().text.value_or("");
        s.t12 = features::neural_temporal_vector(t.messages[0].relative_time,
                                                 t.messages[1].relative_time);
        s.label = *t.gold_action;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace actpred::training
