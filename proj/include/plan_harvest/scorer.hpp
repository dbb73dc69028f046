#pragma once

#include "plan_harvest/corpus.hpp"
#include "plan_harvest/notation.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace plan_harvest {

/// #TotalRight, #TotalTagged and #TotalTruth.
struct MatchCounts {
    std::size_t total_right = 0;
    std::size_t total_tagged = 0;
    std::size_t total_truth = 0;

    MatchCounts& operator+=(const MatchCounts& other) {
        total_right += other.total_right;
        total_tagged += other.total_tagged;
        total_truth += other.total_truth;
        return *this;
    }

    bool operator==(const MatchCounts&) const = default;
};

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct ScoreReport {
    MatchCounts name_counts;
    MatchCounts arg_counts;
    double name_precision = 0.0;
    double name_recall = 0.0;
    double name_f1 = 0.0;
    double arg_precision = 0.0;
    double arg_recall = 0.0;
    double arg_f1 = 0.0;
};

struct ScoringOptions {
    // Drop optional slots the extraction did not find from #TotalTruth.
    bool optional_lenient = false;
};

/// Which gold slot (and which member of it) an extracted action consumed.
struct SlotMatch {
    std::size_t slot = 0;
    std::size_t member = 0;
};

/// Greedy one-to-one assignment: in extraction order, each action takes the
/// first unconsumed slot having a member with the same name. Entry i is the
/// match of extracted action i, if any.
std::vector<std::optional<SlotMatch>> assign_slots(std::span<const GoldSlot> gold, const Plan& extracted);

MatchCounts match_names(std::span<const GoldSlot> gold, const Plan& extracted, const ScoringOptions& options = {});
MatchCounts match_args(std::span<const GoldSlot> gold, const Plan& extracted, const ScoringOptions& options = {});

PrecisionRecall f1_from_counts(const MatchCounts& counts);

ScoreReport make_report(const MatchCounts& names, const MatchCounts& args);
ScoreReport score_text(const AnnotatedText& text, const Plan& extracted, const ScoringOptions& options = {});

class ScoringError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Micro-average: counts are summed over all texts before computing P/R/F1.
ScoreReport score_corpus(std::span<const std::pair<AnnotatedText, Plan>> pairs, const ScoringOptions& options = {});

/// Flat record: name_total_right .. arg_f1.
nlohmann::ordered_json to_json(const ScoreReport& report);

} // namespace plan_harvest
