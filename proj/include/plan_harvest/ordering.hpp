#pragma once

#include "plan_harvest/corpus.hpp"
#include "plan_harvest/notation.hpp"

#include <cstddef>
#include <optional>
#include <span>

#include <nlohmann/json_fwd.hpp>

namespace plan_harvest {

struct OrderReport {
    std::size_t common_actions = 0;
    bool exact_order_match = true;
    // Undefined for fewer than two common actions.
    std::optional<double> kendall_tau;
    std::size_t discordant_pairs = 0;
};

/// Kendall tau between gold order (order_rank) and extraction order over the
/// actions both plans share.
///
/// Extracted actions are paired with gold slots first on exact name and
/// argument agreement, then by the scorer's greedy name matching, so two
/// actions that share a name (click(internet, options), click(advanced)) are
/// still told apart. Only the first extracted occurrence of an action takes
/// part.
OrderReport order_agreement(std::span<const GoldSlot> gold, const Plan& extracted);

nlohmann::ordered_json to_json(const OrderReport& report);

} // namespace plan_harvest
