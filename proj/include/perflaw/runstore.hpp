#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perflaw/fitting.hpp"

namespace perflaw {

// ---------------------------------------------------------------------------
// Serialization shared by the archive and the plain run files

/// One JSONL line (no trailing newline) with fields in a fixed order.
std::string run_to_json(const RunRecord& run);
/// Parses and validates one record.
RunRecord run_from_json(std::string_view line);

/// Reads a RunRecord JSONL file; errors name the offending line.
std::vector<RunRecord> load_run_file(const std::filesystem::path& path);
void write_run_file(const std::filesystem::path& path, std::span<const RunRecord> runs);

/// Flat document: parameter keys, then fit statistics.
std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(std::string_view text);

// ---------------------------------------------------------------------------

enum class DuplicatePolicy {
    reject,     // refuse the whole batch
    replace,    // drop the stored record with the same key, then append
    keep_both,  // append; earlier bytes stay untouched
};

DuplicatePolicy parse_duplicate_policy(std::string_view name);
std::string_view to_string(DuplicatePolicy policy);

/// Key used for duplicate detection, e.g. "ml-1m/4/64/hr@10".
std::string run_key(const RunRecord& run);

struct RunFilter {
    std::optional<std::string> dataset_id;
    std::optional<Metric> metric;
    std::optional<int> k;

    bool matches(const RunRecord& run) const;
};

struct DatasetDigest {
    std::string path;  // as registered, relative to the archive when possible
    std::string sha256;
};

struct Manifest {
    std::string created;  // UTC ISO-8601; SOURCE_DATE_EPOCH pins it
    std::string tool_version;
    std::vector<DatasetDigest> datasets;
};

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Directory of runs.jsonl, fits/<name>.json and manifest.json. Mutating calls
/// take an exclusive advisory lock on `.lock` and fail fast when another
/// writer holds it.
class RunArchive {
public:
    /// Opens an archive, creating it when `create` is set and it is missing.
    /// Verifies every registered dataset digest.
    static RunArchive open(const std::filesystem::path& dir, bool create = true);

    const std::filesystem::path& path() const noexcept { return dir_; }
    const Manifest& manifest() const noexcept { return manifest_; }

    /// Returns the number of records written. Throws ValidationError with the
    /// batch index for invalid records and with the key for rejected duplicates.
    std::size_t append_runs(std::span<const RunRecord> runs, DuplicatePolicy policy = DuplicatePolicy::reject);

    /// Insertion order, filter applied exactly.
    std::vector<RunRecord> load_runs(const RunFilter& filter = {}) const;

    void save_fit(std::string_view name, const FitResult& fit);
    FitResult load_fit(std::string_view name) const;
    std::vector<std::string> fit_names() const;

    /// Records (or refreshes) the digest of a dataset file.
    void register_dataset(const std::filesystem::path& file);
    /// Throws IoError for missing files, ValidationError for digest mismatches.
    void verify_datasets() const;

private:
    explicit RunArchive(std::filesystem::path dir) : dir_(std::move(dir)) {}
    void write_manifest() const;

    std::filesystem::path dir_;
    Manifest manifest_;
};

}  // namespace perflaw
