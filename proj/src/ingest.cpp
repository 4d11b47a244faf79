#include "ecgdx/ingest.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "ecgdx/log.hpp"
#include "ecgdx/textio.hpp"

namespace ecgdx {

const char* const kCohortHeader =
    "record_id,age,sex,rr_interval,pr_interval,qrs_duration,qt_interval,"
    "qtc_interval,p_axis,qrs_axis,t_axis,icd_codes";

namespace {

constexpr int kNumColumns = 12;

// Column order of the 8 ECG cells matches FeatureSchema order.
bool parse_numeric_cell(std::string_view cell, std::optional<double>& out, std::string& err,
                        std::string_view column) {
    cell = trim(cell);
    if (cell.empty()) {
        out = std::nullopt;
        return true;
    }
    const auto v = parse_double(cell);
    if (!v.has_value() || !std::isfinite(*v)) {
        err = "unparseable value in column " + std::string(column) + ": '" + std::string(cell) + "'";
        return false;
    }
    out = *v;
    return true;
}

}  // namespace

ParseResult parse_cohort_file(std::istream& in, std::string_view source_tag) {
    (void)source_tag;  // both sources share the documented layout
    std::string line;
    if (!std::getline(in, line)) throw IngestError("empty cohort file: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCohortHeader)
        throw IngestError("malformed cohort header; expected '" + std::string(kCohortHeader) +
                          "', got '" + line + "'");

    ParseResult result;
    std::unordered_set<std::string> seen_ids;
    std::size_t row_number = 1;
    while (std::getline(in, line)) {
        ++row_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++result.total_rows;

        const auto cells = split(line, ',');
        if (static_cast<int>(cells.size()) != kNumColumns) {
            result.rejected.push_back({row_number, "",
                                       "expected " + std::to_string(kNumColumns) + " columns, got " +
                                           std::to_string(cells.size())});
            continue;
        }

        RawRecord rec;
        rec.record_id = std::string(trim(cells[0]));
        if (rec.record_id.empty()) {
            result.rejected.push_back({row_number, "", "empty record_id"});
            continue;
        }
        if (!seen_ids.insert(rec.record_id).second)
            throw IngestError("duplicate record_id '" + rec.record_id + "' at row " +
                              std::to_string(row_number));

        std::string err;
        std::optional<double> age;
        if (!parse_numeric_cell(cells[1], age, err, "age")) {
            result.rejected.push_back({row_number, rec.record_id, err});
            continue;
        }
        if (!age.has_value()) {
            result.rejected.push_back({row_number, rec.record_id, "required field age is missing"});
            continue;
        }
        rec.age = *age;

        rec.sex_token = std::string(trim(cells[2]));
        if (rec.sex_token.empty()) {
            result.rejected.push_back({row_number, rec.record_id, "required field sex is missing"});
            continue;
        }

        bool row_ok = true;
        static const char* ecg_names[kNumEcgFeatures] = {
            "rr_interval", "pr_interval", "qrs_duration", "qt_interval",
            "qtc_interval", "p_axis",     "qrs_axis",     "t_axis"};
        for (int f = 0; f < kNumEcgFeatures; ++f) {
            if (!parse_numeric_cell(cells[static_cast<std::size_t>(3 + f)],
                                    rec.ecg[static_cast<std::size_t>(f)], err, ecg_names[f])) {
                result.rejected.push_back({row_number, rec.record_id, err});
                row_ok = false;
                break;
            }
        }
        if (!row_ok) continue;

        for (const auto tok : split(cells[11], ';')) {
            const auto t = trim(tok);
            if (!t.empty()) rec.icd_codes.emplace_back(t);
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

ParseResult parse_cohort_path(const std::filesystem::path& path, std::string_view source_tag) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open cohort file: " + path.string());
    return parse_cohort_file(in, source_tag);
}

void write_cohort_csv(std::ostream& out, const std::vector<RawRecord>& records) {
    out << kCohortHeader << '\n';
    for (const auto& r : records) {
        out << r.record_id << ',' << format_double(r.age) << ',' << r.sex_token;
        for (const auto& v : r.ecg) {
            out << ',';
            if (v.has_value()) out << format_double(*v);
        }
        out << ',';
        for (std::size_t i = 0; i < r.icd_codes.size(); ++i) {
            if (i) out << ';';
            out << r.icd_codes[i];
        }
        out << '\n';
    }
}

void write_cohort_csv(const std::filesystem::path& path, const std::vector<RawRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write cohort file: " + path.string());
    write_cohort_csv(out, records);
}

std::string normalize_icd(std::string_view raw) {
    std::string code;
    for (char c : trim(raw)) {
        if (c == '.') continue;
        code.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (code.empty()) throw IngestError("empty ICD code");
    if (!std::isalpha(static_cast<unsigned char>(code[0])))
        throw IngestError("invalid ICD code (missing chapter letter): '" + std::string(raw) + "'");
    for (std::size_t i = 1; i < code.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(code[i])))
            throw IngestError("invalid ICD code (non-digit after chapter letter): '" +
                              std::string(raw) + "'");
    return code;
}

std::vector<std::uint8_t> derive_label_matrix(
    const std::vector<std::vector<std::string>>& normalized_codes,
    const std::vector<TargetCode>& targets) {
    std::vector<std::uint8_t> labels(normalized_codes.size() * targets.size(), 0);
    for (std::size_t i = 0; i < normalized_codes.size(); ++i) {
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const auto& prefix = targets[t].code;
            for (const auto& code : normalized_codes[i]) {
                if (code.size() >= prefix.size() && code.compare(0, prefix.size(), prefix) == 0) {
                    labels[i * targets.size() + t] = 1;
                    break;
                }
            }
        }
    }
    return labels;
}

HarmonizeResult harmonize(const std::vector<RawRecord>& records, std::string_view source_tag) {
    HarmonizeResult res;
    res.cohort.dataset_tag = std::string(source_tag);
    const auto& schema = res.cohort.schema;

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const std::size_t row = i + 2;  // header is row 1

        const std::string sex = to_lower(trim(rec.sex_token));
        double sex_value;
        if (sex == "f" || sex == "female" || sex == "0") sex_value = 0.0;
        else if (sex == "m" || sex == "male" || sex == "1") sex_value = 1.0;
        else {
            res.rejected.push_back({row, rec.record_id, "unmappable sex token '" + rec.sex_token + "'"});
            continue;
        }

        const auto& age_desc = schema.field(kAgeIndex);
        if (!std::isfinite(rec.age) || rec.age < age_desc.range_lo || rec.age > age_desc.range_hi) {
            res.rejected.push_back({row, rec.record_id,
                                    "age " + format_double(rec.age) + " outside plausible range [" +
                                        format_double(age_desc.range_lo) + ", " +
                                        format_double(age_desc.range_hi) + "]"});
            continue;
        }

        std::vector<std::string> codes;
        codes.reserve(rec.icd_codes.size());
        bool codes_ok = true;
        for (const auto& raw : rec.icd_codes) {
            try {
                codes.push_back(normalize_icd(raw));
            } catch (const IngestError& e) {
                res.rejected.push_back({row, rec.record_id, e.what()});
                codes_ok = false;
                break;
            }
        }
        if (!codes_ok) continue;

        FeatureVector v{};
        for (int f = 0; f < kNumEcgFeatures; ++f) {
            const auto& cell = rec.ecg[static_cast<std::size_t>(f)];
            if (!cell.has_value()) continue;
            const auto& desc = schema.field(f);
            if (*cell < desc.range_lo || *cell > desc.range_hi) {
                ++res.range_violations_to_missing;
                continue;  // out-of-range measurement becomes missing
            }
            v[static_cast<std::size_t>(f)] = *cell;
        }
        v[kAgeIndex] = rec.age;
        v[kSexIndex] = sex_value;

        res.cohort.record_ids.push_back(rec.record_id);
        res.cohort.samples.push_back(v);
        res.codes.push_back(std::move(codes));
    }
    return res;
}

void derive_labels(LabeledCohort& cohort, const std::vector<std::vector<std::string>>& codes,
                   std::vector<TargetCode> targets) {
    if (codes.size() != cohort.size())
        throw IngestError("derive_labels: codes/samples size mismatch");
    cohort.targets = std::move(targets);
    cohort.labels = derive_label_matrix(codes, cohort.targets);
}

LabeledCohort load_cohort(const std::filesystem::path& path, std::string_view source_tag,
                          const std::vector<TargetCode>& targets) {
    auto parsed = parse_cohort_path(path, source_tag);
    for (const auto& issue : parsed.rejected)
        log_warn(path.filename().string() + " row " + std::to_string(issue.row_number) +
                 " rejected: " + issue.reason);
    auto harmonized = harmonize(parsed.records, source_tag);
    for (const auto& issue : harmonized.rejected)
        log_warn(path.filename().string() + " row " + std::to_string(issue.row_number) +
                 " rejected: " + issue.reason);
    if (harmonized.range_violations_to_missing > 0)
        log_info(path.filename().string() + ": " +
                 std::to_string(harmonized.range_violations_to_missing) +
                 " out-of-range ECG values set to missing");
    derive_labels(harmonized.cohort, harmonized.codes, targets);
    validate_cohort(harmonized.cohort);
    return std::move(harmonized.cohort);
}

}  // namespace ecgdx
