#include "plan_harvest/scorer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace plan_harvest {

std::vector<std::optional<SlotMatch>> assign_slots(std::span<const GoldSlot> gold, const Plan& extracted) {
    std::vector<std::optional<SlotMatch>> matches(extracted.actions.size());
    std::vector<bool> consumed(gold.size(), false);
    for (std::size_t i = 0; i < extracted.actions.size(); ++i) {
        const auto& name = extracted.actions[i].name;
        for (std::size_t s = 0; s < gold.size() && !matches[i]; ++s) {
            if (consumed[s]) {
                continue;
            }
            const auto& members = gold[s].members;
            for (std::size_t m = 0; m < members.size(); ++m) {
                if (members[m].name == name) {
                    consumed[s] = true;
                    matches[i] = SlotMatch{s, m};
                    break;
                }
            }
        }
    }
    return matches;
}

namespace {

std::vector<bool> consumed_slots(std::size_t n, const std::vector<std::optional<SlotMatch>>& matches) {
    std::vector<bool> consumed(n, false);
    for (const auto& m : matches) {
        if (m) {
            consumed[m->slot] = true;
        }
    }
    return consumed;
}

bool counts_as_truth(const GoldSlot& slot, bool consumed, const ScoringOptions& options) {
    return consumed || !(options.optional_lenient && slot.kind == SlotKind::Optional);
}

// Arguments of `extracted` that pair off with arguments of `gold`, each gold
// argument usable once.
std::size_t multiset_overlap(const std::vector<std::string>& extracted, const std::vector<std::string>& gold) {
    std::vector<bool> used(gold.size(), false);
    std::size_t hits = 0;
    for (const auto& arg : extracted) {
        for (std::size_t k = 0; k < gold.size(); ++k) {
            if (!used[k] && gold[k] == arg) {
                used[k] = true;
                ++hits;
                break;
            }
        }
    }
    return hits;
}

} // namespace

MatchCounts match_names(std::span<const GoldSlot> gold, const Plan& extracted, const ScoringOptions& options) {
    const auto matches = assign_slots(gold, extracted);
    const auto consumed = consumed_slots(gold.size(), matches);
    MatchCounts counts;
    counts.total_tagged = extracted.actions.size();
    for (std::size_t s = 0; s < gold.size(); ++s) {
        if (consumed[s]) {
            ++counts.total_right;
        }
        if (counts_as_truth(gold[s], consumed[s], options)) {
            ++counts.total_truth;
        }
    }
    return counts;
}

MatchCounts match_args(std::span<const GoldSlot> gold, const Plan& extracted, const ScoringOptions& options) {
    const auto matches = assign_slots(gold, extracted);
    const auto consumed = consumed_slots(gold.size(), matches);
    MatchCounts counts;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        if (counts_as_truth(gold[s], consumed[s], options)) {
            counts.total_truth += gold[s].canonical().args.size();
        }
    }
    for (std::size_t i = 0; i < extracted.actions.size(); ++i) {
        const auto& action = extracted.actions[i];
        counts.total_tagged += action.args.size();
        if (!matches[i]) {
            continue;
        }
        const auto& slot = gold[matches[i]->slot];
        const auto hits = multiset_overlap(action.args, slot.members[matches[i]->member].args);
        // A longer alternative cannot earn more than the canonical member's truth.
        counts.total_right += std::min(hits, slot.canonical().args.size());
    }
    return counts;
}

PrecisionRecall f1_from_counts(const MatchCounts& counts) {
    PrecisionRecall out;
    const auto right = static_cast<double>(counts.total_right);
    if (counts.total_tagged > 0) {
        out.precision = right / static_cast<double>(counts.total_tagged);
    }
    if (counts.total_truth > 0) {
        out.recall = right / static_cast<double>(counts.total_truth);
    }
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

ScoreReport make_report(const MatchCounts& names, const MatchCounts& args) {
    ScoreReport r;
    r.name_counts = names;
    r.arg_counts = args;
    const auto n = f1_from_counts(names);
    const auto a = f1_from_counts(args);
    r.name_precision = n.precision;
    r.name_recall = n.recall;
    r.name_f1 = n.f1;
    r.arg_precision = a.precision;
    r.arg_recall = a.recall;
    r.arg_f1 = a.f1;
    return r;
}

ScoreReport score_text(const AnnotatedText& text, const Plan& extracted, const ScoringOptions& options) {
    return make_report(match_names(text.gold, extracted, options), match_args(text.gold, extracted, options));
}

ScoreReport score_corpus(std::span<const std::pair<AnnotatedText, Plan>> pairs, const ScoringOptions& options) {
    if (pairs.empty()) {
        throw ScoringError("cannot score an empty set of extractions");
    }
    MatchCounts names;
    MatchCounts args;
    for (const auto& [text, plan] : pairs) {
        names += match_names(text.gold, plan, options);
        args += match_args(text.gold, plan, options);
    }
    return make_report(names, args);
}

nlohmann::ordered_json to_json(const ScoreReport& r) {
    nlohmann::ordered_json j;
    j["name_total_right"] = r.name_counts.total_right;
    j["name_total_tagged"] = r.name_counts.total_tagged;
    j["name_total_truth"] = r.name_counts.total_truth;
    j["arg_total_right"] = r.arg_counts.total_right;
    j["arg_total_tagged"] = r.arg_counts.total_tagged;
    j["arg_total_truth"] = r.arg_counts.total_truth;
    j["name_precision"] = r.name_precision;
    j["name_recall"] = r.name_recall;
    j["name_f1"] = r.name_f1;
    j["arg_precision"] = r.arg_precision;
    j["arg_recall"] = r.arg_recall;
    j["arg_f1"] = r.arg_f1;
    return j;
}

} // namespace plan_harvest
