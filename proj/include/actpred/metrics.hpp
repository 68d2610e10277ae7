#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "actpred/error.hpp"

namespace actpred::eval {

using json = nlohmann::json;

/// Square count matrix; rows are gold labels, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<std::string> labels)
        : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    std::uint64_t at(std::size_t gold, std::size_t pred) const {
        return counts_.at(gold * labels_.size() + pred);
    }

    void add(std::size_t gold, std::size_t pred, std::uint64_t n = 1) {
        if (gold >= size() || pred >= size()) {
            throw ContractError("label index outside the declared label set");
        }
        counts_[gold * labels_.size() + pred] += n;
    }

    std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (auto c : counts_) {
            t += c;
        }
        return t;
    }

    std::uint64_t support(std::size_t gold) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < size(); ++p) {
            s += at(gold, p);
        }
        return s;
    }

    std::uint64_t predicted(std::size_t pred) const {
        std::uint64_t s = 0;
        for (std::size_t g = 0; g < size(); ++g) {
            s += at(g, pred);
        }
        return s;
    }

    json to_json() const {
        json rows = json::array();
        for (std::size_t g = 0; g < size(); ++g) {
            json row = json::array();
            for (std::size_t p = 0; p < size(); ++p) {
                row.push_back(at(g, p));
            }
            rows.push_back(std::move(row));
        }
        return {{"labels", labels_}, {"counts", std::move(rows)}};
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::vector<std::string> labels_;
    std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds,
                                 std::span<const std::size_t> golds,
                                 std::vector<std::string> label_set) {
    if (preds.size() != golds.size()) {
        throw ContractError("prediction and gold sequences differ in length");
    }
    ConfusionMatrix m(std::move(label_set));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        m.add(golds[i], preds[i]);
    }
    return m;
}

/// Label-string overload; every label must belong to `label_set`.
inline ConfusionMatrix confusion(std::span<const std::string> preds,
                                 std::span<const std::string> golds,
                                 const std::vector<std::string>& label_set) {
    auto index = [&](const std::string& s) {
        auto it = std::find(label_set.begin(), label_set.end(), s);
        if (it == label_set.end()) {
            throw ContractError("unknown label '" + s + "'");
        }
        return static_cast<std::size_t>(it - label_set.begin());
    };
    if (preds.size() != golds.size()) {
        throw ContractError("prediction and gold sequences differ in length");
    }
    ConfusionMatrix m(label_set);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        m.add(index(golds[i]), index(preds[i]));
    }
    return m;
}

struct ClassScore {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct F1Report {
    std::vector<ClassScore> classes;
    /// Unweighted mean over every declared class.
    double macro_f1 = 0.0;
    /// Unweighted mean over classes with non-zero support.
    double macro_f1_supported = 0.0;
    double weighted_f1 = 0.0;
    std::uint64_t total = 0;

    json to_json() const {
        json per_class = json::object();
        for (const auto& c : classes) {
            per_class[c.label] = {{"precision", c.precision},
                                  {"recall", c.recall},
                                  {"f1", c.f1},
                                  {"support", c.support}};
        }
        return {{"classes", std::move(per_class)},
                {"macro_f1", macro_f1},
                {"macro_f1_supported", macro_f1_supported},
                {"weighted_f1", weighted_f1},
                {"total", total}};
    }
};

inline double safe_ratio(double num, double den) noexcept { return den > 0.0 ? num / den : 0.0; }

/// F1 from raw counts; 0/0 is scored as 0.
inline double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) noexcept {
    const auto den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

/// Per-class and averaged scores. `classes` restricts the report (and both
/// averages) to a subset of the matrix labels; empty means all of them.
inline F1Report f1_report(const ConfusionMatrix& m, std::span<const std::size_t> classes = {}) {
    std::vector<std::size_t> which(classes.begin(), classes.end());
    if (which.empty()) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            which.push_back(i);
        }
    }
    F1Report r;
    double sum_f1 = 0.0;
    double sum_supported = 0.0;
    std::size_t n_supported = 0;
    double weighted = 0.0;
    std::uint64_t support_total = 0;
    for (std::size_t c : which) {
        const auto tp = m.at(c, c);
        const auto support = m.support(c);
        const auto predicted = m.predicted(c);
        ClassScore s;
        s.label = m.labels()[c];
        s.support = support;
        s.precision = safe_ratio(static_cast<double>(tp), static_cast<double>(predicted));
        s.recall = safe_ratio(static_cast<double>(tp), static_cast<double>(support));
        s.f1 = f1_from_counts(tp, predicted - tp, support - tp);
        sum_f1 += s.f1;
        if (support > 0) {
            sum_supported += s.f1;
            ++n_supported;
        }
        weighted += static_cast<double>(support) * s.f1;
        support_total += support;
        r.classes.push_back(std::move(s));
    }
    r.total = support_total;
    r.macro_f1 = which.empty() ? 0.0 : sum_f1 / static_cast<double>(which.size());
    r.macro_f1_supported = n_supported == 0 ? 0.0 : sum_supported / static_cast<double>(n_supported);
    r.weighted_f1 = safe_ratio(weighted, static_cast<double>(support_total));
    return r;
}

} // namespace actpred::eval
