#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "actpred/action.hpp"
#include "actpred/binary_io.hpp"
#include "actpred/corpus.hpp"
#include "actpred/error.hpp"

namespace actpred::lookup {

/// Action-count histogram for one message within one cluster (or globally).
struct VoteRecord {
    std::array<std::uint64_t, kNumActions> counts{};

    std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (auto c : counts) {
            t += c;
        }
        return t;
    }

    std::uint64_t& operator[](ActionLabel a) noexcept { return counts[index_of(a)]; }
    std::uint64_t operator[](ActionLabel a) const noexcept { return counts[index_of(a)]; }

    VoteRecord& operator+=(const VoteRecord& o) noexcept {
        for (std::size_t i = 0; i < kNumActions; ++i) {
            counts[i] += o.counts[i];
        }
        return *this;
    }

    bool operator==(const VoteRecord&) const = default;
};

struct VoteEntry {
    std::array<VoteRecord, kNumClusters> clusters{};
    VoteRecord global;

    bool operator==(const VoteEntry&) const = default;
};

struct WinnerSummary {
    ActionLabel winner = ActionLabel::Follow;
    double winner_pct = 0.0;
    std::uint64_t total_votes = 0;

    bool operator==(const WinnerSummary&) const = default;
};

struct LookupThresholds {
    std::uint64_t min_votes = 10;
    double cluster_pct = 0.85;
    double global_pct = 0.90;
    double rare_pct = 0.70;

    void validate() const {
        if (min_votes < 1) {
            throw ConfigError("min_votes must be >= 1");
        }
        for (double p : {cluster_pct, global_pct, rare_pct}) {
            if (!(p > 0.5 && p <= 1.0)) {
                throw ConfigError("lookup percentage thresholds must lie in (0.5, 1.0]");
            }
        }
    }
};

enum class Strategy : std::uint8_t { ClusterSpecific, GlobalFallback, NoMatch };

constexpr std::string_view to_string(Strategy s) noexcept {
    switch (s) {
    case Strategy::ClusterSpecific:
        return "cluster_specific";
    case Strategy::GlobalFallback:
        return "global_fallback";
    default:
        return "no_match";
    }
}

struct LookupDecision {
    Strategy strategy = Strategy::NoMatch;
    std::optional<ActionLabel> action;
    std::optional<WinnerSummary> summary;
};

/// Most frequent action of a record. Equal counts resolve to the action with
/// the higher global frequency rank.
inline WinnerSummary winner(const VoteRecord& record) {
    const auto total = record.total();
    if (total == 0) {
        throw NoVotesError();
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumActions; ++i) {
        if (record.counts[i] > record.counts[best]) {
            best = i;
        }
    }
    return {kAllActions[best],
            static_cast<double>(record.counts[best]) / static_cast<double>(total), total};
}

/// Message text -> per-cluster vote histograms. Keys are the exact bytes of
/// the first message.
class VoteTable {
public:
    void add_vote(std::string_view message, int cluster, ActionLabel action,
                  std::uint64_t n = 1) {
        auto& e = entries_[std::string(message)];
        e.clusters[static_cast<std::size_t>(cluster)][action] += n;
        e.global[action] += n;
    }

    const VoteEntry* find(std::string_view message) const {
        auto it = entries_.find(std::string(message));
        return it == entries_.end() ? nullptr : &it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    void merge(const VoteTable& other) {
        for (const auto& [key, entry] : other.entries_) {
            auto& mine = entries_[key];
            for (std::size_t c = 0; c < mine.clusters.size(); ++c) {
                mine.clusters[c] += entry.clusters[c];
            }
            mine.global += entry.global;
        }
    }

    /// True when every global record equals the sum of its cluster records.
    bool globals_consistent() const {
        for (const auto& [key, entry] : entries_) {
            VoteRecord sum;
            for (const auto& r : entry.clusters) {
                sum += r;
            }
            if (!(sum == entry.global)) {
                return false;
            }
        }
        return true;
    }

    std::vector<std::string_view> sorted_keys() const {
        std::vector<std::string_view> keys;
        keys.reserve(entries_.size());
        for (const auto& [key, entry] : entries_) {
            keys.push_back(key);
        }
        std::sort(keys.begin(), keys.end());
        return keys;
    }

    const std::unordered_map<std::string, VoteEntry>& entries() const noexcept { return entries_; }

    bool operator==(const VoteTable& o) const { return entries_ == o.entries_; }

private:
    friend VoteTable load_bytes(std::span<const char>);
    std::unordered_map<std::string, VoteEntry> entries_;
};

/// Aggregates labeled two-message threads. Threads whose first message has no
/// text carry no key and are skipped.
inline VoteTable build(std::span<const corpus::ConversationThread> threads) {
    VoteTable table;
    for (std::size_t i = 0; i < threads.size(); ++i) {
        const auto& t = threads[i];
        if (!t.gold_action) {
            throw ContractError("record " + std::to_string(i) + " has no gold action");
        }
        if (t.length() != 2) {
            throw ContractError("record " + std::to_string(i) + " has " +
                                std::to_string(t.length()) + " messages, expected 2");
        }
        if (!t.first().text) {
            continue;
        }
        table.add_vote(*t.first().text, t.responder_cluster, *t.gold_action);
    }
    return table;
}

namespace detail {

inline std::optional<WinnerSummary> qualifies(const VoteRecord& record, double common_pct,
                                              const LookupThresholds& th) {
    if (record.total() < th.min_votes) {
        return std::nullopt;
    }
    const auto w = winner(record);
    const double required = is_rare(w.winner) ? th.rare_pct : common_pct;
    if (w.winner_pct >= required) {
        return w;
    }
    return std::nullopt;
}

} // namespace detail

/// Cluster-specific vote first, then the global vote, then no match. A rare
/// winner is held to `rare_pct` in place of the strategy's own percentage.
inline LookupDecision decide(const VoteTable& table, std::optional<std::string_view> first_message,
                             int cluster, const LookupThresholds& th = {}) {
    if (cluster < 0 || cluster >= kNumClusters) {
        throw ContractError("cluster " + std::to_string(cluster) + " out of range");
    }
    if (!first_message) {
        return {};
    }
    const VoteEntry* entry = table.find(*first_message);
    if (entry == nullptr) {
        return {};
    }
    if (auto w = detail::qualifies(entry->clusters[static_cast<std::size_t>(cluster)],
                                   th.cluster_pct, th)) {
        return {Strategy::ClusterSpecific, w->winner, w};
    }
    if (auto w = detail::qualifies(entry->global, th.global_pct, th)) {
        return {Strategy::GlobalFallback, w->winner, w};
    }
    return {};
}

inline constexpr std::string_view kTableMagic = "APVT";
inline constexpr std::uint32_t kTableVersion = 1;

inline std::vector<char> save_bytes(const VoteTable& table) {
    io::Writer w;
    w.put(static_cast<std::uint64_t>(table.size()));
    for (std::string_view key : table.sorted_keys()) {
        const VoteEntry& e = *table.find(key);
        w.put_string(key);
        std::uint8_t used = 0;
        for (const auto& r : e.clusters) {
            used += r.total() > 0 ? 1 : 0;
        }
        w.put(used);
        for (std::size_t c = 0; c < e.clusters.size(); ++c) {
            const auto& r = e.clusters[c];
            if (r.total() == 0) {
                continue;
            }
            std::uint8_t nnz = 0;
            for (auto n : r.counts) {
                nnz += n > 0 ? 1 : 0;
            }
            w.put(static_cast<std::uint8_t>(c));
            w.put(nnz);
            for (std::size_t a = 0; a < kNumActions; ++a) {
                if (r.counts[a] > 0) {
                    w.put(static_cast<std::uint8_t>(a));
                    w.put(r.counts[a]);
                }
            }
        }
    }
    return io::frame(kTableMagic, kTableVersion, w.bytes());
}

inline VoteTable load_bytes(std::span<const char> file) {
    io::Reader r(io::unframe(file, kTableMagic, kTableVersion));
    VoteTable table;
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string key = r.get_string();
        VoteEntry entry;
        const auto used = r.get<std::uint8_t>();
        for (std::uint8_t j = 0; j < used; ++j) {
            const auto c = r.get<std::uint8_t>();
            if (c >= kNumClusters) {
                throw CorruptFileError("cluster index out of range");
            }
            const auto nnz = r.get<std::uint8_t>();
            for (std::uint8_t k = 0; k < nnz; ++k) {
                const auto a = r.get<std::uint8_t>();
                if (a >= kNumActions) {
                    throw CorruptFileError("action index out of range");
                }
                entry.clusters[c].counts[a] = r.get<std::uint64_t>();
            }
            entry.global += entry.clusters[c];
        }
        if (!table.entries_.emplace(std::move(key), entry).second) {
            throw CorruptFileError("duplicate message key");
        }
    }
    if (!r.at_end()) {
        throw CorruptFileError("trailing bytes after table payload");
    }
    return table;
}

inline void save(const VoteTable& table, const std::string& path) {
    io::write_file(path, save_bytes(table));
}

inline VoteTable load(const std::string& path) { return load_bytes(io::read_file(path)); }

} // namespace actpred::lookup
