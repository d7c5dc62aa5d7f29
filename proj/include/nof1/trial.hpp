#ifndef NOF1_TRIAL_HPP
#define NOF1_TRIAL_HPP

#include <string>

#include "nof1/common.hpp"

namespace nof1 {

/// Alternating-block single-participant schedule. 'A' blocks are
/// non-intervention, 'B' blocks intervention; first_block says which label
/// the trial starts with.
struct TrialDesign {
    std::string participant_id;  // empty = applies to every participant
    int n_days = 16;
    int measurements_per_day = 3;
    int block_length_days = 2;
    char first_block = 'A';

    void validate() const {
        if (n_days <= 0 || measurements_per_day <= 0 || block_length_days <= 0)
            throw ConfigError("TrialDesign: days, measurements and block length must be positive");
        if (n_days % block_length_days != 0)
            throw ConfigError("TrialDesign: n_days=" + std::to_string(n_days) +
                              " not divisible by block_length_days=" + std::to_string(block_length_days));
        if (first_block != 'A' && first_block != 'B')
            throw ConfigError("TrialDesign: first_block must be 'A' or 'B'");
    }

    int block_count() const { return n_days / block_length_days; }
    int observations_per_block() const { return block_length_days * measurements_per_day; }
    int block_of_day(int day) const { return day / block_length_days; }

    /// Treatment indicator implied by the alternation for a given day.
    bool intervention_on_day(int day) const {
        const bool first_is_treatment = (first_block == 'B');
        return (block_of_day(day) % 2 == 0) ? first_is_treatment : !first_is_treatment;
    }
};

}  // namespace nof1

#endif
