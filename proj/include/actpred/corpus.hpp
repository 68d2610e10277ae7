#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/error.hpp"
#include "actpred/rng.hpp"

namespace actpred::corpus {

using json = nlohmann::json;

struct Message {
    std::string user_id;
    std::int64_t relative_time = 0;
    std::optional<std::string> text;

    bool operator==(const Message&) const = default;
};

/// One conversation plus the responder's persona cluster and, in training
/// data, what the responder did.
struct ConversationThread {
    std::vector<Message> messages;
    int responder_cluster = 0;
    std::optional<ActionLabel> gold_action;
    std::optional<std::string> gold_text;
    /// Time of the responding event for single-message queries.
    std::optional<std::int64_t> query_time;

    std::size_t length() const noexcept { return messages.size(); }
    const Message& first() const { return messages.front(); }

    bool operator==(const ConversationThread&) const = default;
};

namespace detail {

inline const json& require(const json& obj, const char* field) {
    auto it = obj.find(field);
    if (it == obj.end()) {
        throw SchemaError(field, std::string("missing required field '") + field + "'");
    }
    return *it;
}

inline std::optional<std::string> optional_string(const json& obj, const char* field) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        throw SchemaError(field, std::string("field '") + field + "' must be a string or null");
    }
    return it->get<std::string>();
}

inline std::int64_t integer(const json& v, const char* field) {
    if (!v.is_number_integer()) {
        throw SchemaError(field, std::string("field '") + field + "' must be an integer");
    }
    return v.get<std::int64_t>();
}

inline std::string id_string(const json& v, const char* field) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer()) {
        return std::to_string(v.get<std::int64_t>());
    }
    throw SchemaError(field, std::string("field '") + field + "' must be a string");
}

inline std::optional<ActionLabel> optional_action(const json& obj, const char* field) {
    auto s = optional_string(obj, field);
    if (!s || *s == "None" || s->empty()) {
        return std::nullopt;
    }
    return parse_action(*s);
}

inline std::optional<std::string> legacy_text(const json& obj, const char* field) {
    auto s = optional_string(obj, field);
    if (s && *s == "None") {
        return std::nullopt;
    }
    return s;
}

inline ConversationThread from_legacy(const json& obj) {
    ConversationThread t;
    Message first;
    first.user_id = id_string(require(obj, "first_user_id"), "first_user_id");
    first.relative_time = integer(require(obj, "first_message_time"), "first_message_time");
    first.text = legacy_text(obj, "first_message_text");
    t.messages.push_back(std::move(first));
    if (obj.contains("second_message_time")) {
        Message second;
        second.user_id = id_string(require(obj, "second_user_id"), "second_user_id");
        second.relative_time = integer(obj["second_message_time"], "second_message_time");
        t.messages.push_back(std::move(second));
    }
    t.responder_cluster =
        static_cast<int>(integer(require(obj, "second_user_cluster"), "second_user_cluster"));
    t.gold_action = optional_action(obj, "second_user_action");
    t.gold_text = legacy_text(obj, "second_message_text");
    return t;
}

inline ConversationThread from_messages(const json& obj) {
    ConversationThread t;
    const json& msgs = require(obj, "messages");
    if (!msgs.is_array()) {
        throw SchemaError("messages", "field 'messages' must be an array");
    }
    for (const json& m : msgs) {
        if (!m.is_object()) {
            throw SchemaError("messages", "each message must be an object");
        }
        Message msg;
        msg.user_id = id_string(require(m, "user_id"), "user_id");
        msg.relative_time = integer(require(m, "time"), "time");
        msg.text = optional_string(m, "text");
        t.messages.push_back(std::move(msg));
    }
    t.responder_cluster = static_cast<int>(integer(require(obj, "cluster"), "cluster"));
    t.gold_action = optional_action(obj, "action");
    t.gold_text = optional_string(obj, "text");
    if (auto it = obj.find("query_time"); it != obj.end() && !it->is_null()) {
        t.query_time = integer(*it, "query_time");
    }
    return t;
}

} // namespace detail

/// Checks the structural invariants of a thread; throws ValidationError.
inline void validate(const ConversationThread& t) {
    if (t.messages.empty()) {
        throw ValidationError("thread has no messages");
    }
    if (t.responder_cluster < 0 || t.responder_cluster >= kNumClusters) {
        throw ValidationError("cluster " + std::to_string(t.responder_cluster) +
                              " outside [0, " + std::to_string(kNumClusters - 1) + "]");
    }
    std::int64_t prev = 0;
    for (std::size_t i = 0; i < t.messages.size(); ++i) {
        const auto time = t.messages[i].relative_time;
        if (time < 0) {
            throw ValidationError("message " + std::to_string(i) + " has negative time");
        }
        if (i > 0 && time < prev) {
            throw ValidationError("message times decrease at position " + std::to_string(i));
        }
        prev = time;
    }
    if (t.query_time && *t.query_time < t.messages.back().relative_time) {
        throw ValidationError("query_time precedes the last message");
    }
}

/// Parses one JSON-Lines record. Both the `messages` array layout and the
/// flat two-turn layout (`first_message_time`, `second_user_cluster`, ...)
/// are accepted; unknown fields are ignored.
inline ConversationThread parse_thread_record(std::string_view line, std::size_t line_no = 1) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(line_no, e.what());
    }
    if (!obj.is_object()) {
        throw ParseError(line_no, "record is not a JSON object");
    }
    ConversationThread t = obj.contains("messages") || !obj.contains("first_message_time")
                               ? detail::from_messages(obj)
                               : detail::from_legacy(obj);
    validate(t);
    return t;
}

inline json to_json(const ConversationThread& t) {
    json msgs = json::array();
    for (const auto& m : t.messages) {
        msgs.push_back({{"user_id", m.user_id},
                        {"time", m.relative_time},
                        {"text", m.text ? json(*m.text) : json(nullptr)}});
    }
    json obj = {{"messages", std::move(msgs)},
                {"cluster", t.responder_cluster},
                {"action", t.gold_action ? json(std::string(to_string(*t.gold_action))) : json(nullptr)},
                {"text", t.gold_text ? json(*t.gold_text) : json(nullptr)}};
    if (t.query_time) {
        obj["query_time"] = *t.query_time;
    }
    return obj;
}

inline std::string serialize(const ConversationThread& t) { return to_json(t).dump(); }

struct RecordError {
    std::size_t line = 0;
    std::string kind;
    std::string message;
};

struct ReadResult {
    std::vector<ConversationThread> threads;
    /// Zero-based position of each thread among the non-blank input lines.
    std::vector<std::size_t> record_index;
    std::vector<RecordError> errors;
};

/// Reads a JSONL stream. In strict mode the first bad record throws; otherwise
/// bad records are collected in `errors` and skipped.
inline ReadResult read_threads(std::istream& in, bool strict = true) {
    ReadResult out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.threads.push_back(parse_thread_record(line, line_no));
            out.record_index.push_back(record);
        } catch (const Error& e) {
            if (strict) {
                if (dynamic_cast<const ParseError*>(&e) != nullptr) {
                    throw;
                }
                throw ParseError(line_no, e.what());
            }
            out.errors.push_back({line_no, e.kind(), e.what()});
        }
        ++record;
    }
    return out;
}

inline ReadResult read_threads_file(const std::string& path, bool strict = true) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return read_threads(in, strict);
}

inline void write_threads(std::ostream& out, std::span<const ConversationThread> threads) {
    for (const auto& t : threads) {
        out << serialize(t) << '\n';
    }
}

struct DatasetStats {
    std::array<std::uint64_t, kNumActions> action_counts{};
    std::array<std::uint64_t, kNumClusters> cluster_counts{};
    std::uint64_t unlabeled = 0;
    std::uint64_t total = 0;

    std::uint64_t labeled() const noexcept { return total - unlabeled; }

    /// Share of `a` among labeled threads, in percent; empty when nothing is labeled.
    std::optional<double> percentage(ActionLabel a) const {
        if (labeled() == 0) {
            return std::nullopt;
        }
        return 100.0 * static_cast<double>(action_counts[index_of(a)]) /
               static_cast<double>(labeled());
    }

    void add(const ConversationThread& t) {
        ++total;
        ++cluster_counts[static_cast<std::size_t>(t.responder_cluster)];
        if (t.gold_action) {
            ++action_counts[index_of(*t.gold_action)];
        } else {
            ++unlabeled;
        }
    }

    void merge(const DatasetStats& o) {
        for (std::size_t i = 0; i < kNumActions; ++i) {
            action_counts[i] += o.action_counts[i];
        }
        for (std::size_t i = 0; i < static_cast<std::size_t>(kNumClusters); ++i) {
            cluster_counts[i] += o.cluster_counts[i];
        }
        unlabeled += o.unlabeled;
        total += o.total;
    }

    json to_json() const {
        json actions = json::object();
        for (ActionLabel a : kAllActions) {
            json row = {{"count", action_counts[index_of(a)]}};
            if (auto p = percentage(a)) {
                row["percentage"] = *p;
            }
            actions[std::string(to_string(a))] = std::move(row);
        }
        json clusters = json::array();
        for (auto c : cluster_counts) {
            clusters.push_back(c);
        }
        return {{"total", total},
                {"unlabeled", unlabeled},
                {"actions", std::move(actions)},
                {"clusters", std::move(clusters)}};
    }
};

inline DatasetStats dataset_stats(std::span<const ConversationThread> threads) {
    DatasetStats s;
    for (const auto& t : threads) {
        s.add(t);
    }
    return s;
}

struct SimplifyResult {
    std::vector<ConversationThread> kept;
    std::size_t rule_hits = 0;
    /// Input positions of length>=3 threads whose gold action is not REPLY.
    std::vector<std::size_t> violations;
    /// Single-message threads, which belong to neither group.
    std::size_t dropped_short = 0;
};

/// Keeps the two-message threads for action modelling and tallies the longer
/// threads that the REPLY rule covers.
inline SimplifyResult simplify_for_action_task(std::span<const ConversationThread> threads) {
    SimplifyResult r;
    for (std::size_t i = 0; i < threads.size(); ++i) {
        const auto& t = threads[i];
        if (t.length() == 2) {
            r.kept.push_back(t);
        } else if (t.length() >= 3) {
            ++r.rule_hits;
            if (t.gold_action != ActionLabel::Reply) {
                r.violations.push_back(i);
            }
        } else {
            ++r.dropped_short;
        }
    }
    return r;
}

/// Stratified k-fold split over integer class ids. Each class is shuffled and
/// dealt round-robin, continuing the deal where the previous class stopped,
/// so per-class fold counts are within one of n_c/k and classes smaller than
/// k are spread rather than rejected. Returned folds hold sorted indices.
inline std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> classes,
                                                              int k, std::uint64_t seed) {
    if (k < 2) {
        throw ConfigError("stratified_kfold requires k >= 2, got " + std::to_string(k));
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        by_class[classes[i]].push_back(i);
    }
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    std::size_t cursor = 0;
    for (auto& [cls, members] : by_class) {
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t idx : members) {
            folds[cursor % static_cast<std::size_t>(k)].push_back(idx);
            ++cursor;
        }
    }
    for (auto& f : folds) {
        std::sort(f.begin(), f.end());
    }
    return folds;
}

inline std::vector<std::vector<std::size_t>>
stratified_kfold(std::span<const ConversationThread> threads, int k, std::uint64_t seed) {
    std::vector<int> classes;
    classes.reserve(threads.size());
    for (const auto& t : threads) {
        if (!t.gold_action) {
            throw ContractError("stratified_kfold needs labeled threads");
        }
        classes.push_back(static_cast<int>(index_of(*t.gold_action)));
    }
    return stratified_kfold(std::span<const int>(classes), k, seed);
}

} // namespace actpred::corpus
