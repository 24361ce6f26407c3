#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aemeta {

using Count = std::int64_t;

enum class ArmRole { Control, Treatment };

std::string_view to_string(ArmRole role);

/// Aggregate counts for one study arm.
///
/// n patients, y with at least one event of interest, z early
/// discontinuations (fatal events included), m fatal events, followed up
/// for tau time units.
struct ArmRecord {
    ArmRole role = ArmRole::Control;
    Count n = 0;
    Count y = 0;
    Count z = 0;
    Count m = 0;
    double tau = 1.0;

    bool operator==(const ArmRecord&) const = default;
};

struct TrialRecord {
    std::string trial_id;
    std::optional<std::string> indication;
    std::vector<ArmRecord> arms;
    bool historical = false;

    const ArmRecord* find_arm(ArmRole role) const;
    bool operator==(const TrialRecord&) const = default;
};

struct Dataset {
    std::vector<TrialRecord> trials;
    std::string time_unit;
    std::string provenance;

    std::size_t main_trial_count() const;
    std::size_t historical_trial_count() const;
    std::size_t arm_count() const;

    bool operator==(const Dataset&) const = default;
};

/// One failed consistency rule. `arm_index` is empty for trial- and
/// dataset-level rules; `trial_id` is empty for dataset-level rules.
struct Violation {
    std::string trial_id;
    std::optional<std::size_t> arm_index;
    std::string rule;

    std::string describe() const;
};

/// Checks every arm, trial and dataset invariant. Never throws; an empty
/// result means the dataset is consistent.
std::vector<Violation> validate(const Dataset& dataset);

/// Arm-level rules only.
std::vector<Violation> validate_arm(const ArmRecord& arm, std::string_view trial_id = {},
                                    std::optional<std::size_t> arm_index = std::nullopt);

enum class DataFormat { Csv, Json };

/// Throws ParseError listing every offending location.
Dataset parse_dataset(std::string_view text, DataFormat format);

/// Byte-stable for a given dataset; parse_dataset inverts it exactly.
std::string serialize_dataset(const Dataset& dataset, DataFormat format);

/// Reads a dataset from disk, choosing the format from the extension
/// (".json" means JSON, anything else CSV).
Dataset load_dataset(const std::string& path);

}  // namespace aemeta
