#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecgdx/tabular.hpp"

namespace ecgdx {

// Raised by parse_cohort_file on a bad header or duplicated record ids, and
// by normalize_icd on garbage input.
struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawRecord {
    std::string record_id;
    double age = std::numeric_limits<double>::quiet_NaN();
    std::string sex_token;  // as found in the file
    std::array<std::optional<double>, kNumEcgFeatures> ecg;
    std::vector<std::string> icd_codes;  // raw strings, possibly dotted / mixed case
};

struct RowIssue {
    std::size_t row_number = 0;  // 1-based, header is row 1
    std::string record_id;
    std::string reason;
};

struct ParseResult {
    std::vector<RawRecord> records;
    std::vector<RowIssue> rejected;
    std::size_t total_rows = 0;  // data rows seen (accepted + rejected)
};

// Cohort file layout (UTF-8, comma delimited, header row):
//   record_id, age, sex, rr_interval, pr_interval, qrs_duration, qt_interval,
//   qtc_interval, p_axis, qrs_axis, t_axis, icd_codes
// Numeric cells may be empty (missing); icd_codes is a semicolon-joined list.
extern const char* const kCohortHeader;

ParseResult parse_cohort_file(std::istream& in, std::string_view source_tag);
ParseResult parse_cohort_path(const std::filesystem::path& path, std::string_view source_tag);

void write_cohort_csv(std::ostream& out, const std::vector<RawRecord>& records);
void write_cohort_csv(const std::filesystem::path& path, const std::vector<RawRecord>& records);

// "k70.30" -> "K7030". Throws IngestError when no leading letter or any
// non-digit remains after the chapter letter.
std::string normalize_icd(std::string_view raw);

// label(sample, target) = 1 iff some normalized code has the target code as
// a string prefix. Row-major samples x targets.
std::vector<std::uint8_t> derive_label_matrix(
    const std::vector<std::vector<std::string>>& normalized_codes,
    const std::vector<TargetCode>& targets);

struct HarmonizeResult {
    LabeledCohort cohort;                           // targets/labels not yet derived
    std::vector<std::vector<std::string>> codes;    // normalized codes per accepted sample
    std::vector<RowIssue> rejected;
    std::size_t range_violations_to_missing = 0;    // out-of-range ECG values nulled
};

// Canonicalizes parsed records: maps sex tokens, normalizes ICD codes,
// nulls out-of-range ECG values, rejects rows with unusable age/sex.
// The source tag is recorded as the cohort's dataset tag and does not alter
// parsing semantics (both sources share the documented column layout).
HarmonizeResult harmonize(const std::vector<RawRecord>& records, std::string_view source_tag);

// Fills cohort.targets / cohort.labels from per-sample normalized codes.
void derive_labels(LabeledCohort& cohort, const std::vector<std::vector<std::string>>& codes,
                   std::vector<TargetCode> targets);

// parse + harmonize + derive in one step; row rejections are logged.
LabeledCohort load_cohort(const std::filesystem::path& path, std::string_view source_tag,
                          const std::vector<TargetCode>& targets);

}  // namespace ecgdx
