#pragma once

#include "plan_harvest/corpus.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace plan_harvest {

struct Plan {
    std::vector<ActionInstance> actions;

    bool operator==(const Plan&) const = default;
};

struct SkippedSpan {
    std::size_t start = 0; // byte offsets into the parsed text, [start, end)
    std::size_t end = 0;
    std::string reason;

    bool operator==(const SkippedSpan&) const = default;
};

struct ParseDiagnostics {
    std::vector<SkippedSpan> skipped_spans;
    // Input ended (or hit an unsupported nested "(") inside an action.
    bool truncated = false;

    bool clean() const { return skipped_spans.empty() && !truncated; }
};

struct ParseResult {
    Plan plan;
    ParseDiagnostics diagnostics;
};

/// Lenient parser for `name(arg, arg) name(arg) ...`.
///
/// Never throws. Text that cannot start an action is skipped and reported;
/// parsing stops at the first line that reads exactly "TEXT" (the model
/// starting another example block).
ParseResult parse_plan(std::string_view text);

/// `name(a, b) other()`: single spaces between actions, ", " between args.
std::string render_plan(const Plan& plan);

std::string render_action(const ActionInstance& action);

} // namespace plan_harvest
