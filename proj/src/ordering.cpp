#include "plan_harvest/ordering.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace plan_harvest {

namespace {

bool same_args(std::vector<std::string> a, std::vector<std::string> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

} // namespace

OrderReport order_agreement(std::span<const GoldSlot> gold, const Plan& extracted) {
    const auto& actions = extracted.actions;
    std::vector<bool> participates(actions.size(), false);
    {
        std::set<std::pair<std::string, std::vector<std::string>>> seen;
        for (std::size_t i = 0; i < actions.size(); ++i) {
            participates[i] = seen.emplace(actions[i].name, actions[i].args).second;
        }
    }

    std::vector<std::optional<std::size_t>> slot_of(actions.size());
    std::vector<bool> consumed(gold.size(), false);
    const auto assign = [&](bool require_args) {
        for (std::size_t i = 0; i < actions.size(); ++i) {
            if (!participates[i] || slot_of[i]) {
                continue;
            }
            for (std::size_t s = 0; s < gold.size() && !slot_of[i]; ++s) {
                if (consumed[s]) {
                    continue;
                }
                for (const auto& member : gold[s].members) {
                    if (member.name == actions[i].name && (!require_args || same_args(member.args, actions[i].args))) {
                        consumed[s] = true;
                        slot_of[i] = s;
                        break;
                    }
                }
            }
        }
    };
    assign(true);
    assign(false);

    // Gold ranks listed in extraction order.
    std::vector<std::size_t> ranks;
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (slot_of[i]) {
            ranks.push_back(gold[*slot_of[i]].order_rank);
        }
    }

    OrderReport report;
    report.common_actions = ranks.size();
    std::size_t concordant = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        for (std::size_t j = i + 1; j < ranks.size(); ++j) {
            if (ranks[i] < ranks[j]) {
                ++concordant;
            } else if (ranks[i] > ranks[j]) {
                ++report.discordant_pairs;
            }
        }
    }
    report.exact_order_match = report.discordant_pairs == 0;
    if (ranks.size() >= 2) {
        const auto n = static_cast<double>(ranks.size());
        report.kendall_tau =
            (static_cast<double>(concordant) - static_cast<double>(report.discordant_pairs)) / (n * (n - 1.0) / 2.0);
    }
    return report;
}

nlohmann::ordered_json to_json(const OrderReport& r) {
    nlohmann::ordered_json j;
    j["common_actions"] = r.common_actions;
    j["exact_order_match"] = r.exact_order_match;
    j["kendall_tau"] = r.kendall_tau ? nlohmann::ordered_json(*r.kendall_tau) : nlohmann::ordered_json(nullptr);
    j["discordant_pairs"] = r.discordant_pairs;
    return j;
}

} // namespace plan_harvest
