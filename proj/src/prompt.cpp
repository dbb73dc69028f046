#include "plan_harvest/prompt.hpp"

#include "plan_harvest/text.hpp"

#include <algorithm>
#include <random>

namespace plan_harvest {

namespace {

// Slot share as an exact fraction so ties compare exactly.
struct Share {
    std::size_t num = 0;
    std::size_t den = 1;
};

Share slot_share(const AnnotatedText& t, bool include_essential) {
    Share s;
    for (const auto& slot : t.gold) {
        if (slot.kind != SlotKind::Essential || include_essential) {
            ++s.num;
        }
    }
    s.den = t.gold.empty() ? 1 : t.gold.size();
    return s;
}

// Uniform integer in [0, n) from the raw engine output; std distributions
// are implementation-defined, this is not.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;
    while (true) {
        const std::uint64_t r = rng();
        if (r >= threshold) {
            return static_cast<std::size_t>(r % bound);
        }
    }
}

std::vector<const AnnotatedText*> rank_by_share(const std::vector<const AnnotatedText*>& pool,
                                                bool include_essential) {
    std::vector<std::pair<Share, const AnnotatedText*>> ranked;
    ranked.reserve(pool.size());
    for (const auto* t : pool) {
        ranked.emplace_back(slot_share(*t, include_essential), t);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        const auto lhs = a.first.num * b.first.den;
        const auto rhs = b.first.num * a.first.den;
        if (lhs != rhs) {
            return lhs > rhs;
        }
        return a.second->id < b.second->id;
    });
    std::vector<const AnnotatedText*> out;
    out.reserve(ranked.size());
    for (const auto& [share, t] : ranked) {
        out.push_back(t);
    }
    return out;
}

void append_text_block(std::string& out, const AnnotatedText& t, std::optional<std::size_t> cap, bool& truncated) {
    auto count = t.sentences.size();
    if (cap && *cap < count) {
        count = *cap;
        truncated = true;
    }
    out += "TEXT\n\n";
    for (std::size_t i = 0; i < count; ++i) {
        if (i != 0) {
            out.push_back(' ');
        }
        out += t.sentences[i];
    }
    out += "\n\nACTIONS\n";
}

} // namespace

std::vector<AnnotatedText> select_shots(std::span<const AnnotatedText> corpus, const ShotStrategy& strategy,
                                        std::string_view exclude) {
    if (strategy.shots < 1 || strategy.shots > 4) {
        throw PromptError("shot count must be between 1 and 4, got " + std::to_string(strategy.shots));
    }
    const auto shots = static_cast<std::size_t>(strategy.shots);

    std::vector<const AnnotatedText*> pool;
    bool found = false;
    for (const auto& t : corpus) {
        if (t.id == exclude) {
            found = true;
        } else {
            pool.push_back(&t);
        }
    }
    if (!found) {
        throw PromptError("test text '" + std::string(exclude) + "' is not in the corpus");
    }
    if (pool.size() < shots) {
        throw PromptError(std::to_string(shots) + "-shot selection requires " + std::to_string(shots + 1) +
                          " texts, corpus has " + std::to_string(corpus.size()));
    }

    std::mt19937_64 rng(strategy.seed);
    std::vector<const AnnotatedText*> chosen;
    switch (strategy.shots) {
    case 1:
        chosen.push_back(pool[draw_index(rng, pool.size())]);
        break;
    case 2: {
        auto ranked = rank_by_share(pool, false);
        chosen.assign(ranked.begin(), ranked.begin() + 2);
        break;
    }
    default: {
        auto ranked = rank_by_share(pool, true);
        chosen.assign(ranked.begin(), ranked.begin() + 3);
        if (strategy.shots == 4) {
            std::vector<const AnnotatedText*> rest(ranked.begin() + 3, ranked.end());
            chosen.push_back(rest[draw_index(rng, rest.size())]);
        }
        break;
    }
    }

    std::vector<AnnotatedText> out;
    out.reserve(chosen.size());
    for (const auto* t : chosen) {
        out.push_back(*t);
    }
    return out;
}

Plan reference_plan(const AnnotatedText& text) {
    std::vector<const GoldSlot*> slots;
    for (const auto& slot : text.gold) {
        slots.push_back(&slot);
    }
    std::stable_sort(slots.begin(), slots.end(),
                     [](const GoldSlot* a, const GoldSlot* b) { return a->order_rank < b->order_rank; });
    Plan plan;
    for (const auto* slot : slots) {
        plan.actions.push_back(slot->canonical());
    }
    return plan;
}

PromptBundle render_prompt(std::span<const AnnotatedText> shots, const AnnotatedText& test,
                           std::optional<std::size_t> sentence_cap) {
    if (shots.empty()) {
        throw PromptError("a prompt needs at least one shot");
    }
    PromptBundle bundle;
    bundle.test_id = test.id;
    for (const auto& shot : shots) {
        if (shot.id == test.id) {
            throw PromptError("test text '" + test.id + "' cannot also be a shot");
        }
        append_text_block(bundle.rendered, shot, sentence_cap, bundle.truncation_applied);
        bundle.rendered += "\n";
        bundle.rendered += render_plan(reference_plan(shot));
        bundle.rendered += "\n\n";
        bundle.example_ids.push_back(shot.id);
    }
    append_text_block(bundle.rendered, test, sentence_cap, bundle.truncation_applied);

    bundle.token_estimate = estimate_tokens(bundle.rendered);
    if (bundle.token_estimate > kPromptTokenBudget) {
        throw PromptError("prompt for '" + test.id + "' needs ~" + std::to_string(bundle.token_estimate) +
                          " tokens, budget is " + std::to_string(kPromptTokenBudget) +
                          " (2048 minus the 100-token completion); use fewer shots or a sentence cap");
    }
    return bundle;
}

std::size_t estimate_tokens(std::string_view text) {
    return (text::codepoint_count(text) + 3) / 4;
}

std::optional<std::size_t> default_sentence_cap(std::string_view dataset) {
    const auto tag = text::normalize_phrase(dataset);
    if (tag == "ct" || tag == "whg") {
        return 10;
    }
    return std::nullopt;
}

} // namespace plan_harvest
