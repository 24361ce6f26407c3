#include "aemeta/core_data.hpp"

#include "aemeta/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace aemeta {

namespace {

constexpr std::string_view kCsvHeader = "trial_id,indication,arm_role,historical,n,y,z,m,tau";
constexpr std::string_view kTimeUnitTag = "# time_unit: ";
constexpr std::string_view kProvenanceTag = "# provenance: ";

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::optional<ArmRole> parse_role(std::string_view s) {
    const auto l = lower(s);
    if (l == "control") return ArmRole::Control;
    if (l == "treatment") return ArmRole::Treatment;
    return std::nullopt;
}

std::optional<bool> parse_bool(std::string_view s) {
    const auto l = lower(s);
    if (l == "true" || l == "1") return true;
    if (l == "false" || l == "0") return false;
    return std::nullopt;
}

std::optional<Count> parse_count(std::string_view s) {
    Count value = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end || s.empty() || value < 0) return std::nullopt;
    return value;
}

std::optional<double> parse_real(std::string_view s) {
    double value = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
    return value;
}

std::string format_real(double x) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, ptr);
}

// Splits one CSV record. Double quotes delimit fields containing commas; a
// doubled quote inside a quoted field is a literal quote.
std::optional<std::vector<std::string>> split_csv(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            if (!cur.empty() || was_quoted) return std::nullopt;
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            was_quoted = false;
        } else {
            if (was_quoted) return std::nullopt;
            cur += c;
        }
    }
    if (quoted) return std::nullopt;
    fields.push_back(std::move(cur));
    return fields;
}

std::string quote_csv(const std::string& field) {
    if (field.find('\n') != std::string::npos || field.find('\r') != std::string::npos) {
        throw DomainError("CSV field contains a line break: " + field);
    }
    if (field.find_first_of(",\"") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

Dataset parse_csv(std::string_view text) {
    const auto lines = split_lines(text);
    Dataset ds;
    std::vector<std::string> provenance_lines;
    std::size_t i = 0;
    for (; i < lines.size(); ++i) {
        const auto line = lines[i];
        if (line.starts_with(kTimeUnitTag)) {
            ds.time_unit = std::string(line.substr(kTimeUnitTag.size()));
        } else if (line.starts_with(kProvenanceTag)) {
            provenance_lines.emplace_back(line.substr(kProvenanceTag.size()));
        } else if (line.starts_with('#') || line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        } else {
            break;
        }
    }
    for (std::size_t k = 0; k < provenance_lines.size(); ++k) {
        if (k > 0) ds.provenance += '\n';
        ds.provenance += provenance_lines[k];
    }
    if (i >= lines.size()) throw ParseError({"no header"});
    if (lines[i] != kCsvHeader) {
        throw ParseError({"line " + std::to_string(i + 1) + ": malformed header, expected '" +
                          std::string(kCsvHeader) + "'"});
    }

    std::vector<std::string> issues;
    std::unordered_map<std::string, std::size_t> index_of;
    for (++i; i < lines.size(); ++i) {
        const auto line = lines[i];
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const auto where = "line " + std::to_string(i + 1);
        auto fields = split_csv(line);
        if (!fields) {
            issues.push_back(where + ": unbalanced quotes");
            continue;
        }
        if (fields->size() != 9) {
            issues.push_back(where + ": expected 9 fields, found " + std::to_string(fields->size()));
            continue;
        }
        const auto& f = *fields;
        std::vector<std::string> row_issues;
        if (f[0].empty()) row_issues.push_back(where + ": empty trial_id");
        const auto role = parse_role(f[2]);
        if (!role) row_issues.push_back(where + ": arm_role must be 'control' or 'treatment'");
        const auto hist = parse_bool(f[3]);
        if (!hist) row_issues.push_back(where + ": historical must be true or false");
        const char* names[] = {"n", "y", "z", "m"};
        Count counts[4] = {};
        for (int k = 0; k < 4; ++k) {
            const auto c = parse_count(f[4 + k]);
            if (!c) {
                row_issues.push_back(where + ": " + names[k] + " is not a nonnegative integer ('" + f[4 + k] +
                                     "')");
            } else {
                counts[k] = *c;
            }
        }
        const auto tau = parse_real(f[8]);
        if (!tau || !std::isfinite(*tau) || *tau <= 0.0) {
            row_issues.push_back(where + ": tau must be a finite positive number ('" + f[8] + "')");
        }
        if (!row_issues.empty()) {
            issues.insert(issues.end(), row_issues.begin(), row_issues.end());
            continue;
        }

        ArmRecord arm{*role, counts[0], counts[1], counts[2], counts[3], *tau};
        std::optional<std::string> indication;
        if (!f[1].empty()) indication = f[1];

        auto it = index_of.find(f[0]);
        if (it == index_of.end()) {
            index_of.emplace(f[0], ds.trials.size());
            ds.trials.push_back(TrialRecord{f[0], indication, {arm}, *hist});
        } else {
            auto& trial = ds.trials[it->second];
            if (trial.historical != *hist) {
                issues.push_back(where + ": historical flag differs from earlier rows of trial " + f[0]);
                continue;
            }
            if (trial.indication != indication) {
                issues.push_back(where + ": indication differs from earlier rows of trial " + f[0]);
                continue;
            }
            trial.arms.push_back(arm);
        }
    }
    if (!issues.empty()) throw ParseError(std::move(issues));
    return ds;
}

using nlohmann::json;

Dataset parse_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError({"byte " + std::to_string(e.byte) + ": " + e.what()});
    }
    std::vector<std::string> issues;
    Dataset ds;
    if (!doc.is_object()) throw ParseError({"top level must be an object"});
    if (doc.contains("time_unit")) {
        if (doc["time_unit"].is_string()) ds.time_unit = doc["time_unit"].get<std::string>();
        else issues.push_back("time_unit: must be a string");
    }
    if (doc.contains("provenance")) {
        if (doc["provenance"].is_string()) ds.provenance = doc["provenance"].get<std::string>();
        else issues.push_back("provenance: must be a string");
    }
    if (!doc.contains("trials") || !doc["trials"].is_array()) {
        throw ParseError({"trials: missing or not an array"});
    }
    const auto& trials = doc["trials"];
    for (std::size_t t = 0; t < trials.size(); ++t) {
        const auto path = "trials[" + std::to_string(t) + "]";
        const auto& jt = trials[t];
        if (!jt.is_object()) {
            issues.push_back(path + ": must be an object");
            continue;
        }
        TrialRecord trial;
        if (jt.contains("trial_id") && jt["trial_id"].is_string()) {
            trial.trial_id = jt["trial_id"].get<std::string>();
        } else {
            issues.push_back(path + ".trial_id: missing or not a string");
        }
        if (jt.contains("indication") && !jt["indication"].is_null()) {
            if (jt["indication"].is_string()) trial.indication = jt["indication"].get<std::string>();
            else issues.push_back(path + ".indication: must be a string or null");
        }
        if (jt.contains("historical")) {
            if (jt["historical"].is_boolean()) trial.historical = jt["historical"].get<bool>();
            else issues.push_back(path + ".historical: must be a boolean");
        }
        if (!jt.contains("arms") || !jt["arms"].is_array()) {
            issues.push_back(path + ".arms: missing or not an array");
            continue;
        }
        for (std::size_t a = 0; a < jt["arms"].size(); ++a) {
            const auto apath = path + ".arms[" + std::to_string(a) + "]";
            const auto& ja = jt["arms"][a];
            if (!ja.is_object()) {
                issues.push_back(apath + ": must be an object");
                continue;
            }
            ArmRecord arm;
            bool ok = true;
            if (ja.contains("arm_role") && ja["arm_role"].is_string()) {
                if (auto r = parse_role(ja["arm_role"].get<std::string>())) arm.role = *r;
                else ok = false;
            } else {
                ok = false;
            }
            if (!ok) issues.push_back(apath + ".arm_role: must be 'control' or 'treatment'");
            for (auto [key, dest] : {std::pair{"n", &arm.n}, std::pair{"y", &arm.y}, std::pair{"z", &arm.z},
                                     std::pair{"m", &arm.m}}) {
                if (ja.contains(key) && ja[key].is_number_integer() && ja[key].get<Count>() >= 0) {
                    *dest = ja[key].get<Count>();
                } else {
                    issues.push_back(apath + "." + key + ": missing or not a nonnegative integer");
                    ok = false;
                }
            }
            if (ja.contains("tau") && ja["tau"].is_number() && std::isfinite(ja["tau"].get<double>()) &&
                ja["tau"].get<double>() > 0.0) {
                arm.tau = ja["tau"].get<double>();
            } else {
                issues.push_back(apath + ".tau: missing or not a finite positive number");
                ok = false;
            }
            if (ok) trial.arms.push_back(arm);
        }
        ds.trials.push_back(std::move(trial));
    }
    if (!issues.empty()) throw ParseError(std::move(issues));
    return ds;
}

std::string serialize_csv(const Dataset& ds) {
    std::string out;
    if (!ds.time_unit.empty()) {
        if (ds.time_unit.find('\n') != std::string::npos) throw DomainError("time_unit contains a line break");
        out += kTimeUnitTag;
        out += ds.time_unit;
        out += '\n';
    }
    if (!ds.provenance.empty()) {
        std::size_t start = 0;
        while (true) {
            const auto end = ds.provenance.find('\n', start);
            out += kProvenanceTag;
            out += ds.provenance.substr(start, end == std::string::npos ? std::string::npos : end - start);
            out += '\n';
            if (end == std::string::npos) break;
            start = end + 1;
        }
    }
    out += kCsvHeader;
    out += '\n';
    for (const auto& t : ds.trials) {
        for (const auto& a : t.arms) {
            out += quote_csv(t.trial_id);
            out += ',';
            out += quote_csv(t.indication.value_or(""));
            out += ',';
            out += to_string(a.role);
            out += ',';
            out += t.historical ? "true" : "false";
            for (Count c : {a.n, a.y, a.z, a.m}) {
                out += ',';
                out += std::to_string(c);
            }
            out += ',';
            out += format_real(a.tau);
            out += '\n';
        }
    }
    return out;
}

std::string serialize_json(const Dataset& ds) {
    json doc = json::object();
    doc["time_unit"] = ds.time_unit;
    doc["provenance"] = ds.provenance;
    json trials = json::array();
    for (const auto& t : ds.trials) {
        json jt;
        jt["trial_id"] = t.trial_id;
        jt["indication"] = t.indication ? json(*t.indication) : json(nullptr);
        jt["historical"] = t.historical;
        json arms = json::array();
        for (const auto& a : t.arms) {
            arms.push_back({{"arm_role", std::string(to_string(a.role))},
                            {"n", a.n},
                            {"y", a.y},
                            {"z", a.z},
                            {"m", a.m},
                            {"tau", a.tau}});
        }
        jt["arms"] = std::move(arms);
        trials.push_back(std::move(jt));
    }
    doc["trials"] = std::move(trials);
    return doc.dump(2) + "\n";
}

}  // namespace

std::string_view to_string(ArmRole role) {
    return role == ArmRole::Control ? "control" : "treatment";
}

const ArmRecord* TrialRecord::find_arm(ArmRole role) const {
    for (const auto& a : arms) {
        if (a.role == role) return &a;
    }
    return nullptr;
}

std::size_t Dataset::main_trial_count() const {
    return static_cast<std::size_t>(
        std::count_if(trials.begin(), trials.end(), [](const TrialRecord& t) { return !t.historical; }));
}

std::size_t Dataset::historical_trial_count() const { return trials.size() - main_trial_count(); }

std::size_t Dataset::arm_count() const {
    std::size_t total = 0;
    for (const auto& t : trials) total += t.arms.size();
    return total;
}

std::string Violation::describe() const {
    std::string out;
    if (!trial_id.empty()) out += "trial " + trial_id;
    if (arm_index) out += ", arm " + std::to_string(*arm_index + 1);
    if (!out.empty()) out += ": ";
    return out + rule;
}

std::vector<Violation> validate_arm(const ArmRecord& a, std::string_view trial_id,
                                    std::optional<std::size_t> arm_index) {
    std::vector<Violation> out;
    auto fail = [&](std::string rule) { out.push_back({std::string(trial_id), arm_index, std::move(rule)}); };
    if (a.n < 1) fail("n < 1");
    if (a.y < 0 || a.z < 0 || a.m < 0) fail("negative count");
    if (a.y > a.n) fail("y > n");
    if (a.z > a.n) fail("z > n");
    if (a.m > std::min(a.y, a.z)) fail("m > min(y,z)");
    if (!(std::isfinite(a.tau) && a.tau > 0.0)) fail("tau not finite and positive");
    // Implied by the rules above; kept as its own check because the latent
    // count range must be non-empty for the likelihood to exist.
    if (std::max<Count>(0, a.y + a.z - a.m - a.n) > std::min(a.y - a.m, a.z - a.m)) {
        fail("infeasible: max(0,y+z-m-n) > min(y-m,z-m)");
    }
    return out;
}

std::vector<Violation> validate(const Dataset& ds) {
    std::vector<Violation> out;
    std::set<std::string> seen;
    for (const auto& t : ds.trials) {
        if (!seen.insert(t.trial_id).second) out.push_back({t.trial_id, std::nullopt, "duplicate trial_id"});
        for (std::size_t k = 0; k < t.arms.size(); ++k) {
            auto v = validate_arm(t.arms[k], t.trial_id, k);
            out.insert(out.end(), v.begin(), v.end());
        }
        const auto controls = std::count_if(t.arms.begin(), t.arms.end(),
                                            [](const ArmRecord& a) { return a.role == ArmRole::Control; });
        const auto treatments = static_cast<std::ptrdiff_t>(t.arms.size()) - controls;
        if (t.historical) {
            if (treatments > 0) out.push_back({t.trial_id, std::nullopt, "historical trial has a treatment arm"});
            if (controls != 1 || treatments != 0) {
                out.push_back({t.trial_id, std::nullopt, "historical trial must have exactly one control arm"});
            }
        } else if (controls != 1 || treatments != 1) {
            out.push_back(
                {t.trial_id, std::nullopt, "trial must have exactly one control and one treatment arm"});
        }
    }
    if (ds.main_trial_count() == 0) out.push_back({"", std::nullopt, "no non-historical trial"});
    return out;
}

Dataset parse_dataset(std::string_view text, DataFormat format) {
    return format == DataFormat::Csv ? parse_csv(text) : parse_json(text);
}

std::string serialize_dataset(const Dataset& dataset, DataFormat format) {
    return format == DataFormat::Csv ? serialize_csv(dataset) : serialize_json(dataset);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const bool is_json = path.size() >= 5 && lower(path.substr(path.size() - 5)) == ".json";
    return parse_dataset(buf.str(), is_json ? DataFormat::Json : DataFormat::Csv);
}

}  // namespace aemeta
