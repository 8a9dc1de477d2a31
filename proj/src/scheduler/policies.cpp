#include <algorithm>
#include <stdexcept>

#include "rollcast/scheduler.hpp"

namespace rollcast::scheduler {

namespace {

void check_lead(std::int64_t lead, std::span<const std::int64_t> actions) {
    if (actions.empty()) throw std::invalid_argument("policy: empty action set");
    const auto unit = *std::min_element(actions.begin(), actions.end());
    if (lead <= 0 || lead % unit != 0)
        throw std::invalid_argument("policy: lead " + std::to_string(lead) + "h is not a positive multiple of " +
                                    std::to_string(unit) + "h");
}

}  // namespace

std::vector<std::int64_t> policy_naive(std::int64_t lead, std::int64_t step) {
    const std::int64_t a[] = {step};
    check_lead(lead, a);
    return std::vector<std::int64_t>(static_cast<std::size_t>(lead / step), step);
}

std::vector<std::int64_t> policy_greedy(std::int64_t lead, std::span<const std::int64_t> actions) {
    check_lead(lead, actions);
    std::vector<std::int64_t> sorted(actions.begin(), actions.end());
    std::sort(sorted.rbegin(), sorted.rend());
    std::vector<std::int64_t> out;
    for (std::int64_t rem = lead; rem > 0;) {
        auto it = std::find_if(sorted.begin(), sorted.end(), [&](auto a) { return a <= rem; });
        out.push_back(*it);
        rem -= *it;
    }
    return out;
}

std::int64_t uniform_legal(std::span<const std::int64_t> legal, std::mt19937_64& rng) {
    if (legal.empty()) throw std::invalid_argument("no legal action");
    std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
    return legal[pick(rng)];
}

std::vector<std::int64_t> policy_random(std::int64_t lead, std::span<const std::int64_t> actions,
                                        std::uint64_t seed) {
    check_lead(lead, actions);
    std::mt19937_64 rng(seed);
    std::vector<std::int64_t> out, legal;
    for (std::int64_t rem = lead; rem > 0;) {
        legal.clear();
        for (auto a : actions)
            if (a <= rem) legal.push_back(a);
        out.push_back(uniform_legal(legal, rng));
        rem -= out.back();
    }
    return out;
}

EpisodeSpec sample_episode(const gridio::Dataset& d, gridio::Split split, std::span<const std::int64_t> leads,
                           std::mt19937_64& rng) {
    if (leads.empty()) throw std::invalid_argument("sample_episode: no lead times");
    std::uniform_int_distribution<std::size_t> pick_lead(0, leads.size() - 1);
    EpisodeSpec s;
    s.lead_hours = leads[pick_lead(rng)];
    const auto [begin, end] = d.split_range(split);
    const auto ahead = static_cast<std::size_t>(s.lead_hours / d.step_hours());
    if (begin + ahead >= end)
        throw std::invalid_argument("sample_episode: split too short for a " + std::to_string(s.lead_hours) +
                                    "h episode");
    std::uniform_int_distribution<std::size_t> pick_frame(begin, end - ahead - 1);
    s.t0_hours = d.frames[pick_frame(rng)].timestamp_hours;
    return s;
}

}  // namespace rollcast::scheduler
