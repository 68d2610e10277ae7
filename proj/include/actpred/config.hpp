#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "actpred/error.hpp"
#include "actpred/gbdt.hpp"
#include "actpred/lookup.hpp"
#include "actpred/rare_classifier.hpp"
#include "actpred/replygen.hpp"
#include "actpred/synthetic.hpp"

namespace actpred::config {

struct Paths {
    std::string keywords;
    std::string table;
    std::string models;
    std::string rare;
};

struct GbdtSettings {
    gbdt::TrainConfig train;
    /// Clusters with fewer labeled rows (or a single class) use the pooled model.
    std::size_t min_cluster_rows = 100;
};

/// One file drives every stage; command-line flags override it.
struct PipelineConfig {
    std::uint64_t seed = 42;
    int threads = 1;
    Paths paths;
    lookup::LookupThresholds lookup;
    GbdtSettings gbdt;
    rare::RareConfig rare;
    std::string encoder = "hashed";
    std::size_t encoder_dim = 768;
    replygen::HttpProviderConfig provider = replygen::HttpProviderConfig::from_env();
    synthetic::CorpusConfig synthetic;

    PipelineConfig() { gbdt.train.grid = gbdt::TrainConfig::default_grid(); }

    /// Pushes the global seed and worker count into every component.
    void propagate() {
        gbdt.train.seed = seed;
        gbdt.train.threads = threads;
        rare.seed = seed;
        synthetic.seed = seed;
    }
};

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::stringstream is(item);
        T v{};
        if (!(is >> v)) {
            throw ConfigError("cannot parse '" + item + "' in " + key);
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw ConfigError(key + " must list at least one value");
    }
    return out;
}

template <typename T>
void read(const boost::property_tree::ptree& pt, const std::string& key, T& dst) {
    try {
        if (auto v = pt.get_optional<T>(key)) {
            dst = *v;
        }
    } catch (const boost::property_tree::ptree_error& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

} // namespace detail

/// Rebuilds the search grid from comma-separated value lists.
inline std::vector<gbdt::Hyperparams> make_grid(const gbdt::Hyperparams& base,
                                                const std::vector<int>& n_estimators,
                                                const std::vector<double>& learning_rates,
                                                const std::vector<int>& max_depths,
                                                const std::vector<int>& max_leaves) {
    std::vector<gbdt::Hyperparams> g;
    for (int n : n_estimators) {
        for (double lr : learning_rates) {
            for (int d : max_depths) {
                for (int l : max_leaves) {
                    auto h = base;
                    h.n_estimators = n;
                    h.learning_rate = lr;
                    h.max_depth = d;
                    h.max_leaves = l;
                    g.push_back(h);
                }
            }
        }
    }
    return g;
}

inline PipelineConfig parse_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(e.what());
    }
    PipelineConfig c;
    using detail::read;
    read(tree, "general.seed", c.seed);
    read(tree, "general.threads", c.threads);

    read(tree, "paths.keywords", c.paths.keywords);
    read(tree, "paths.table", c.paths.table);
    read(tree, "paths.models", c.paths.models);
    read(tree, "paths.rare", c.paths.rare);

    read(tree, "lookup.min_votes", c.lookup.min_votes);
    read(tree, "lookup.cluster_pct", c.lookup.cluster_pct);
    read(tree, "lookup.global_pct", c.lookup.global_pct);
    read(tree, "lookup.rare_pct", c.lookup.rare_pct);

    auto& base = c.gbdt.train.base;
    read(tree, "gbdt.k_folds", c.gbdt.train.k_folds);
    read(tree, "gbdt.class_weights", c.gbdt.train.use_class_weights);
    read(tree, "gbdt.min_samples_leaf", base.min_samples_leaf);
    read(tree, "gbdt.histogram_bins", base.histogram_bins);
    read(tree, "gbdt.lambda_l2", base.lambda_l2);
    read(tree, "gbdt.min_cluster_rows", c.gbdt.min_cluster_rows);
    std::string n_est = "100,300";
    std::string lrs = "0.05,0.1";
    std::string depths = "-1,8";
    std::string leaves = "31,63";
    read(tree, "gbdt.n_estimators", n_est);
    read(tree, "gbdt.learning_rate", lrs);
    read(tree, "gbdt.max_depth", depths);
    read(tree, "gbdt.max_leaves", leaves);
    c.gbdt.train.grid = make_grid(base, detail::parse_list<int>("gbdt.n_estimators", n_est),
                                  detail::parse_list<double>("gbdt.learning_rate", lrs),
                                  detail::parse_list<int>("gbdt.max_depth", depths),
                                  detail::parse_list<int>("gbdt.max_leaves", leaves));

    read(tree, "rare.hidden1", c.rare.hidden1);
    read(tree, "rare.hidden2", c.rare.hidden2);
    read(tree, "rare.dropout1", c.rare.dropout1);
    read(tree, "rare.dropout2", c.rare.dropout2);
    read(tree, "rare.gamma", c.rare.gamma);
    read(tree, "rare.epochs_phase1", c.rare.epochs_phase1);
    read(tree, "rare.epochs_phase2", c.rare.epochs_phase2);
    read(tree, "rare.batch_size", c.rare.batch_size);
    read(tree, "rare.lr_phase1", c.rare.lr_phase1);
    read(tree, "rare.lr_phase2", c.rare.lr_phase2);
    read(tree, "rare.momentum", c.rare.momentum);
    read(tree, "rare.class_weights", c.rare.class_weights);
    read(tree, "rare.encoder", c.encoder);
    read(tree, "rare.encoder_dim", c.encoder_dim);

    read(tree, "provider.url", c.provider.url);
    read(tree, "provider.model", c.provider.model);
    read(tree, "provider.timeout_seconds", c.provider.timeout_seconds);
    read(tree, "provider.attempts", c.provider.attempts);
    read(tree, "provider.initial_backoff_ms", c.provider.initial_backoff_ms);

    read(tree, "synthetic.n", c.synthetic.n);
    read(tree, "synthetic.rare_boost", c.synthetic.rare_boost);
    read(tree, "synthetic.long_thread_fraction", c.synthetic.long_thread_fraction);
    read(tree, "synthetic.viral_fraction", c.synthetic.viral_fraction);
    read(tree, "synthetic.signal", c.synthetic.signal);

    c.lookup.validate();
    c.rare.validate();
    c.synthetic.validate();
    if (c.gbdt.train.k_folds < 2) {
        throw ConfigError("gbdt.k_folds must be >= 2");
    }
    for (const auto& h : c.gbdt.train.grid) {
        h.validate();
    }
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    return parse_config(in);
}

} // namespace actpred::config
