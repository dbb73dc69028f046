#pragma once

#include "plan_harvest/corpus.hpp"
#include "plan_harvest/notation.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace plan_harvest {

inline constexpr std::size_t kContextTokenLimit = 2048;
inline constexpr std::size_t kCompletionReserve = 100;
inline constexpr std::size_t kPromptTokenBudget = kContextTokenLimit - kCompletionReserve;

/// Few-shot example selection.
///   1: one random text
///   2: the two texts with the largest share of optional+exclusive slots
///   3: the three with the largest share of optional+exclusive+essential slots
///   4: strategy 3 plus one more random text
struct ShotStrategy {
    int shots = 2;
    std::uint64_t seed = 0;
};

struct PromptBundle {
    std::string rendered;
    std::vector<std::string> example_ids;
    std::string test_id;
    std::size_t token_estimate = 0;
    bool truncation_applied = false;
};

class PromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<AnnotatedText> select_shots(std::span<const AnnotatedText> corpus, const ShotStrategy& strategy,
                                        std::string_view exclude);

PromptBundle render_prompt(std::span<const AnnotatedText> shots, const AnnotatedText& test,
                           std::optional<std::size_t> sentence_cap);

/// ceil(code points / 4).
std::size_t estimate_tokens(std::string_view text);

/// No cap for WHS; 10 sentences for CT and WHG.
std::optional<std::size_t> default_sentence_cap(std::string_view dataset);

/// The plan shown for a text in a prompt: one action per slot in order_rank
/// order, exclusive slots represented by their first member.
Plan reference_plan(const AnnotatedText& text);

} // namespace plan_harvest
