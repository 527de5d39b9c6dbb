#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "vesselseg/core/errors.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg::io {

inline constexpr int kManifestSchemaVersion = 1;

enum class Cohort { kTrain, kValid, kTest };

inline std::string cohort_name(Cohort c) {
    switch (c) {
    case Cohort::kTrain: return "train";
    case Cohort::kValid: return "valid";
    case Cohort::kTest: return "test";
    }
    return "";
}

inline Cohort parse_cohort(const std::string& s) {
    if (s == "train") return Cohort::kTrain;
    if (s == "valid") return Cohort::kValid;
    if (s == "test") return Cohort::kTest;
    throw FormatError("manifest: unknown cohort '" + s + "'");
}

struct ManifestEntry {
    std::string patient_id; ///< own id; augmented scans get a derived id
    Cohort cohort = Cohort::kTrain;
    std::map<std::string, std::string> scans; ///< role ("cta", "cta_gt", ...) -> path
    std::optional<std::string> augmented_from;

    /// The patient whose data this entry derives from.
    const std::string& source() const { return augmented_from ? *augmented_from : patient_id; }

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SplitManifest {
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    /// Every source patient sits in exactly one cohort; entry ids are unique.
    void validate() const {
        std::map<std::string, Cohort> home;
        std::set<std::string> ids;
        for (const auto& e : entries) {
            if (e.patient_id.empty()) throw FormatError("manifest: entry without patient_id");
            if (!ids.insert(e.patient_id).second)
                throw FormatError("manifest: duplicate entry id '" + e.patient_id + "'");
            auto [it, fresh] = home.emplace(e.source(), e.cohort);
            if (!fresh && it->second != e.cohort)
                throw LeakageError("manifest: patient '" + e.source() + "' appears in both " +
                                   cohort_name(it->second) + " and " + cohort_name(e.cohort));
        }
        for (const auto& e : entries)
            if (e.augmented_from && !ids.count(*e.augmented_from))
                throw FormatError("manifest: '" + e.patient_id + "' is augmented from unknown patient '" +
                                  *e.augmented_from + "'");
    }

    std::vector<const ManifestEntry*> cohort(Cohort c, bool include_augmented = true) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.cohort == c && (include_augmented || !e.augmented_from)) out.push_back(&e);
        return out;
    }

    std::size_t count(Cohort c, bool include_augmented = true) const { return cohort(c, include_augmented).size(); }

    const ManifestEntry& find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.patient_id == id) return e;
        throw InvalidArgument("manifest: no entry '" + id + "'");
    }

    friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

struct SplitCounts {
    std::size_t train = 0, valid = 0, test = 0;
};

/// Random patient-level partition, deterministic per seed.
inline SplitManifest group_split(const std::vector<std::string>& patient_ids, SplitCounts counts, std::uint64_t seed) {
    if (counts.train + counts.valid + counts.test != patient_ids.size())
        throw InvalidArgument("group_split: counts " + std::to_string(counts.train) + "/" + std::to_string(counts.valid) +
                              "/" + std::to_string(counts.test) + " do not sum to " +
                              std::to_string(patient_ids.size()) + " patients");
    std::vector<std::string> ids = patient_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw InvalidArgument("group_split: duplicate patient id");
    Rng rng = make_stream(seed, "split");
    // Fisher-Yates with an explicit index draw keeps the result library independent
    for (std::size_t i = ids.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(ids[i - 1], ids[j]);
    }
    SplitManifest m;
    m.seed = seed;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const Cohort c = i < counts.train ? Cohort::kTrain : i < counts.train + counts.valid ? Cohort::kValid : Cohort::kTest;
        m.entries.push_back({ids[i], c, {}, std::nullopt});
    }
    std::stable_sort(m.entries.begin(), m.entries.end(),
                     [](const ManifestEntry& a, const ManifestEntry& b) { return a.patient_id < b.patient_id; });
    return m;
}

struct AugmentedScan {
    std::string id;
    std::string source_patient;
    std::map<std::string, std::string> scans;
};

/// Augmented scans join their source patient's cohort. Test patients may not be augmented.
inline SplitManifest attach_augmented(SplitManifest m, const std::vector<AugmentedScan>& augmented) {
    m.validate();
    for (const auto& a : augmented) {
        if (a.source_patient.empty()) throw InvalidArgument("attach_augmented: '" + a.id + "' names no source patient");
        const ManifestEntry* src = nullptr;
        for (const auto& e : m.entries)
            if (e.patient_id == a.source_patient && !e.augmented_from) src = &e;
        if (!src) throw InvalidArgument("attach_augmented: unknown source patient '" + a.source_patient + "'");
        if (src->cohort == Cohort::kTest)
            throw LeakageError("attach_augmented: refusing to augment test patient '" + a.source_patient + "'");
        m.entries.push_back({a.id, src->cohort, a.scans, a.source_patient});
    }
    m.validate();
    return m;
}

inline nlohmann::json to_json(const SplitManifest& m) {
    nlohmann::json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["seed"] = m.seed;
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json je;
        je["patient_id"] = e.patient_id;
        je["cohort"] = cohort_name(e.cohort);
        je["scans"] = e.scans;
        je["augmented_from"] = e.augmented_from ? nlohmann::json(*e.augmented_from) : nlohmann::json(nullptr);
        arr.push_back(std::move(je));
    }
    return j;
}

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
            throw FormatError("manifest: unsupported schema_version " + j.at("schema_version").dump());
        SplitManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.patient_id = je.at("patient_id").get<std::string>();
            e.cohort = parse_cohort(je.at("cohort").get<std::string>());
            if (je.contains("scans")) e.scans = je.at("scans").get<std::map<std::string, std::string>>();
            if (je.contains("augmented_from") && !je.at("augmented_from").is_null())
                e.augmented_from = je.at("augmented_from").get<std::string>();
            m.entries.push_back(std::move(e));
        }
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

inline void save_manifest(const std::string& path, const SplitManifest& m) {
    m.validate();
    std::ofstream os(path);
    if (!os) throw FormatError("manifest: cannot write '" + path + "'");
    os << to_json(m).dump(2) << '\n';
}

inline SplitManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("manifest: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest: invalid JSON in '" + path + "': " + e.what());
    }
    return manifest_from_json(j);
}

} // namespace vesselseg::io
