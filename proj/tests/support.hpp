#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.
// The oracles deliberately avoid the library's own helpers.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/corpus.hpp"
#include "actpred/lookup.hpp"
#include "actpred/metrics.hpp"
#include "actpred/rare_classifier.hpp"
#include "actpred/rng.hpp"
#include "actpred/synthetic.hpp"

namespace support {

using json = nlohmann::json;
namespace fs = std::filesystem;
using actpred::ActionLabel;
using actpred::corpus::ConversationThread;
using actpred::corpus::Message;

inline fs::path fixture_path(const std::string& name) {
    return fs::path(ACTPRED_TEST_DIR) / "fixtures" / name;
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json fixture_json(const std::string& name) { return json::parse(slurp(fixture_path(name))); }

inline ConversationThread two_message(std::optional<std::string> text, int cluster,
                                      std::optional<ActionLabel> action, std::int64_t t1 = 1000,
                                      std::int64_t t2 = 1600, std::string u1 = "u1",
                                      std::string u2 = "u2") {
    ConversationThread t;
    t.messages.push_back(Message{std::move(u1), t1, std::move(text)});
    t.messages.push_back(Message{std::move(u2), t2, std::nullopt});
    t.responder_cluster = cluster;
    t.gold_action = action;
    return t;
}

inline ConversationThread long_thread(std::size_t n, int cluster, std::int64_t start = 0) {
    ConversationThread t;
    for (std::size_t i = 0; i < n; ++i) {
        t.messages.push_back(Message{"u" + std::to_string(i % 2),
                                     start + static_cast<std::int64_t>(60 * i),
                                     "turn " + std::to_string(i)});
    }
    t.responder_cluster = cluster;
    t.gold_action = ActionLabel::Reply;
    t.gold_text = "sure thing";
    return t;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "actpred") {
        std::random_device rd;
        for (int attempt = 0; attempt < 100; ++attempt) {
            auto p = fs::temp_directory_path() /
                     (tag + "-" + std::to_string(rd()) + "-" + std::to_string(attempt));
            if (fs::create_directory(p)) {
                path_ = p;
                return;
            }
        }
        throw std::runtime_error("cannot create temp dir");
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// Running the command-line tool
// ---------------------------------------------------------------------------

struct CliRun {
    int exit_code = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    }
    return q + "'";
}

/// Runs the tool with `args`, capturing stdout and stderr through files in `scratch`.
inline CliRun run_cli(const std::vector<std::string>& args, const fs::path& scratch) {
    std::string cmd = shell_quote(ACTPRED_CLI_PATH);
    for (const auto& a : args) {
        cmd += ' ' + shell_quote(a);
    }
    const auto out_path = scratch / "cli.stdout";
    const auto err_path = scratch / "cli.stderr";
    cmd += " > " + shell_quote(out_path.string()) + " 2> " + shell_quote(err_path.string());
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

// ---------------------------------------------------------------------------
// Lookup oracle: re-scan the raw corpus for every query.
// ---------------------------------------------------------------------------

struct OracleDecision {
    actpred::lookup::Strategy strategy = actpred::lookup::Strategy::NoMatch;
    std::optional<ActionLabel> action;
};

inline OracleDecision brute_force_decide(const std::vector<ConversationThread>& corpus,
                                         const std::string& message, int cluster,
                                         const actpred::lookup::LookupThresholds& th) {
    std::map<int, std::uint64_t> local;
    std::map<int, std::uint64_t> global;
    for (const auto& t : corpus) {
        if (!t.messages[0].text || *t.messages[0].text != message) {
            continue;
        }
        const int a = static_cast<int>(*t.gold_action);
        ++global[a];
        if (t.responder_cluster == cluster) {
            ++local[a];
        }
    }
    // Winner: highest count; on equal counts the lower enumerator (more frequent action).
    auto rule = [&](const std::map<int, std::uint64_t>& tally,
                    double common_pct) -> std::optional<ActionLabel> {
        std::uint64_t total = 0;
        int best = -1;
        std::uint64_t best_n = 0;
        for (const auto& [a, n] : tally) {
            total += n;
            if (n > best_n) {
                best = a;
                best_n = n;
            }
        }
        if (total == 0 || total < th.min_votes) {
            return std::nullopt;
        }
        const auto w = static_cast<ActionLabel>(best);
        const bool rare = w != ActionLabel::Follow && w != ActionLabel::Like;
        const double pct = static_cast<double>(best_n) / static_cast<double>(total);
        if (pct >= (rare ? th.rare_pct : common_pct)) {
            return w;
        }
        return std::nullopt;
    };
    if (auto a = rule(local, th.cluster_pct)) {
        return {actpred::lookup::Strategy::ClusterSpecific, a};
    }
    if (auto a = rule(global, th.global_pct)) {
        return {actpred::lookup::Strategy::GlobalFallback, a};
    }
    return {};
}

// ---------------------------------------------------------------------------
// Threshold oracle: every candidate cut evaluated from scratch.
// ---------------------------------------------------------------------------

struct OracleThreshold {
    double threshold = 1.0 / 3.0;
    double f1 = 0.0;
};

inline double f1_of(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    const auto den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

/// Candidates: the minimum score and every midpoint between adjacent
/// distinct scores. Predict positive when score >= t. Lowest t wins ties.
inline OracleThreshold brute_force_threshold(const std::vector<double>& scores,
                                             const std::vector<bool>& positive) {
    std::vector<double> distinct(scores);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> candidates{distinct.front()};
    for (std::size_t i = 1; i < distinct.size(); ++i) {
        candidates.push_back((distinct[i - 1] + distinct[i]) / 2.0);
    }
    OracleThreshold best;
    bool first = true;
    for (double t : candidates) {
        std::uint64_t tp = 0;
        std::uint64_t fp = 0;
        std::uint64_t fn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool pred = scores[i] >= t;
            tp += pred && positive[i];
            fp += pred && !positive[i];
            fn += !pred && positive[i];
        }
        const double f = f1_of(tp, fp, fn);
        if (first || f > best.f1) {
            best = {t, f};
            first = false;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Lookup fixtures
// ---------------------------------------------------------------------------

struct Vote {
    int cluster;
    ActionLabel action;
    int count;
};

struct RuleCase {
    std::string name;
    std::vector<Vote> votes;
    int query_cluster;
    actpred::lookup::Strategy strategy;
    std::optional<ActionLabel> action;
};

/// Boundary cases for the default thresholds (10 votes, 85% cluster, 90%
/// global, 70% for a rare winner).
inline std::vector<RuleCase> threshold_rule_table() {
    using actpred::lookup::Strategy;
    using A = ActionLabel;
    return {
        {"nine_votes_is_below_min", {{3, A::Like, 9}}, 3, Strategy::NoMatch, std::nullopt},
        {"ten_votes_meets_min", {{3, A::Like, 10}}, 3, Strategy::ClusterSpecific, A::Like},
        {"cluster_84_9_pct_fails", {{3, A::Like, 849}, {3, A::Follow, 151}}, 3, Strategy::NoMatch,
         std::nullopt},
        {"cluster_85_pct_passes", {{3, A::Like, 85}, {3, A::Follow, 15}}, 3, Strategy::ClusterSpecific,
         A::Like},
        {"cluster_90_pct_passes", {{3, A::Follow, 18}, {3, A::Like, 2}}, 3, Strategy::ClusterSpecific,
         A::Follow},
        {"global_90_pct_passes", {{5, A::Follow, 90}, {6, A::Like, 10}}, 3, Strategy::GlobalFallback,
         A::Follow},
        {"global_89_9_pct_fails", {{5, A::Follow, 899}, {6, A::Like, 101}}, 3, Strategy::NoMatch,
         std::nullopt},
        {"global_85_pct_fails", {{5, A::Like, 85}, {6, A::Follow, 15}}, 3, Strategy::NoMatch,
         std::nullopt},
        {"rare_69_9_pct_fails", {{3, A::Unfollow, 699}, {3, A::Follow, 301}}, 3, Strategy::NoMatch,
         std::nullopt},
        {"rare_70_pct_passes", {{3, A::Unfollow, 7}, {3, A::Like, 3}}, 3, Strategy::ClusterSpecific,
         A::Unfollow},
        {"sparse_cluster_falls_back_to_global", {{3, A::Follow, 4}, {8, A::Follow, 91}, {8, A::Like, 5}},
         3, Strategy::GlobalFallback, A::Follow},
        {"global_rare_70_pct_passes", {{9, A::Block, 7}, {10, A::Follow, 3}}, 3,
         Strategy::GlobalFallback, A::Block},
    };
}

inline std::vector<ConversationThread> rule_case_corpus(const RuleCase& c, const std::string& message) {
    std::vector<ConversationThread> out;
    for (const auto& v : c.votes) {
        for (int i = 0; i < v.count; ++i) {
            ConversationThread t;
            t.messages.push_back(Message{"op", 100, message});
            t.messages.push_back(Message{"r" + std::to_string(i), 200, std::nullopt});
            t.responder_cluster = v.cluster;
            t.gold_action = v.action;
            out.push_back(std::move(t));
        }
    }
    return out;
}

/// Random labeled corpus over a small message pool. Each message has a
/// favourite action and cluster so that all three strategies occur.
inline std::vector<ConversationThread> random_lookup_corpus(actpred::Rng& rng, std::size_t n,
                                                            std::vector<std::string>& pool) {
    const std::size_t messages = 3 + rng.index(30);
    pool.clear();
    for (std::size_t m = 0; m < messages; ++m) {
        pool.push_back("msg-" + std::to_string(m) + (m % 5 == 0 ? " <URL>" : ""));
    }
    std::vector<ActionLabel> fav_action(messages);
    std::vector<int> fav_cluster(messages);
    std::vector<double> loyalty(messages);
    for (std::size_t m = 0; m < messages; ++m) {
        fav_action[m] = actpred::kAllActions[rng.bernoulli(0.5) ? rng.index(2) : rng.index(12)];
        fav_cluster[m] = static_cast<int>(rng.index(25));
        loyalty[m] = 0.55 + 0.45 * rng.uniform();
    }
    std::vector<ConversationThread> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t m = rng.index(messages);
        ConversationThread t;
        std::optional<std::string> text = pool[m];
        if (rng.bernoulli(0.02)) {
            text.reset();
        }
        t.messages.push_back(Message{"op", 10, text});
        t.messages.push_back(Message{"r", 20, std::nullopt});
        t.responder_cluster = rng.bernoulli(0.7) ? fav_cluster[m] : static_cast<int>(rng.index(25));
        t.gold_action = rng.bernoulli(loyalty[m]) ? fav_action[m] : actpred::kAllActions[rng.index(12)];
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Focal loss: analytic gradient against central differences.
// ---------------------------------------------------------------------------

struct GradientCheck {
    double max_rel_error = 0.0;
    double max_ce_gap = 0.0; ///< gamma = 0, unit weights vs plain cross-entropy
};

inline GradientCheck focal_gradient_check(std::size_t draws, std::uint64_t seed) {
    actpred::Rng rng(seed);
    GradientCheck out;
    const double gammas[] = {0.0, 0.5, 2.0};
    for (std::size_t d = 0; d < draws; ++d) {
        const std::size_t k = 2 + rng.index(11);
        std::vector<double> z(k);
        std::vector<double> w(k);
        for (std::size_t i = 0; i < k; ++i) {
            z[i] = rng.normal(0.0, 2.0);
            w[i] = rng.uniform(0.2, 4.0);
        }
        const std::size_t y = rng.index(k);
        const double gamma = gammas[d % 3];
        const auto g = actpred::rare::focal_loss_grad(z, y, w, gamma);
        for (std::size_t j = 0; j < k; ++j) {
            const double h = 1e-5 * std::max(1.0, std::abs(z[j]));
            auto up = z;
            auto dn = z;
            up[j] += h;
            dn[j] -= h;
            const double fd = (actpred::rare::focal_loss(up, y, w, gamma) -
                               actpred::rare::focal_loss(dn, y, w, gamma)) /
                              (2.0 * h);
            // Relative to the gradient's overall scale so near-zero entries
            // do not turn truncation noise into a large ratio.
            double scale = 0.0;
            for (double v : g) {
                scale = std::max(scale, std::abs(v));
            }
            const double rel = std::abs(g[j] - fd) / std::max(scale, 1e-12);
            out.max_rel_error = std::max(out.max_rel_error, rel);
        }
        std::vector<double> ones(k, 1.0);
        double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) {
            s += std::exp(v - m);
        }
        const double ce = m + std::log(s) - z[y];
        out.max_ce_gap = std::max(out.max_ce_gap, std::abs(actpred::rare::focal_loss(z, y, ones, 0.0) - ce));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fusion ablation: the same network with and without temporal inputs.
// ---------------------------------------------------------------------------

inline double rare_macro_f1(const actpred::rare::FusionModel& model,
                            const std::vector<actpred::rare::RareSample>& test) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < actpred::kNumRareActions; ++i) {
        labels.push_back(std::string(actpred::to_string(actpred::rare_action_at(i))));
    }
    actpred::eval::ConfusionMatrix m(labels);
    for (const auto& s : test) {
        m.add(actpred::rare_index(s.label),
              actpred::rare_index(actpred::rare::predict_rare(model, s.text, s.t12)));
    }
    return actpred::eval::f1_report(m).macro_f1;
}

struct AblationResult {
    double fused = 0.0;
    double text_only = 0.0;
};

inline AblationResult fusion_ablation(std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                      const actpred::rare::RareConfig& cfg, std::size_t dim) {
    auto train = actpred::synthetic::fusion_corpus(n_train, seed);
    auto test = actpred::synthetic::fusion_corpus(n_test, seed + 1000);
    AblationResult r;
    {
        auto model = actpred::rare::train_two_phase(
            train, std::make_unique<actpred::encoder::HashedNGramEncoder>(dim), cfg);
        r.fused = rare_macro_f1(model, test);
    }
    for (auto* set : {&train, &test}) {
        for (auto& s : *set) {
            s.t12.fill(0.0);
        }
    }
    auto model = actpred::rare::train_two_phase(
        train, std::make_unique<actpred::encoder::HashedNGramEncoder>(dim), cfg);
    r.text_only = rare_macro_f1(model, test);
    return r;
}

} // namespace support
