#include "ecgdx/tabular.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ecgdx/hash.hpp"
#include "ecgdx/textio.hpp"

namespace ecgdx {

namespace {

const char* kind_name(FeatureKind k) {
    return k == FeatureKind::continuous ? "continuous" : "binary";
}

const char* unit_name(FeatureUnit u) {
    switch (u) {
        case FeatureUnit::milliseconds: return "ms";
        case FeatureUnit::degrees: return "deg";
        case FeatureUnit::years: return "years";
        case FeatureUnit::dimensionless: return "1";
    }
    return "?";
}

}  // namespace

FeatureSchema::FeatureSchema(std::vector<FeatureDescriptor> fields) : fields_(std::move(fields)) {
    std::string canon;
    for (const auto& f : fields_) {
        canon += f.name;
        canon += '|';
        canon += kind_name(f.kind);
        canon += '|';
        canon += unit_name(f.unit);
        canon += '|';
        canon += format_double(f.range_lo);
        canon += '|';
        canon += format_double(f.range_hi);
        canon += '\n';
    }
    fingerprint_ = fnv1a64(canon);
    for (std::size_t i = 0; i < fields_.size(); ++i) {
        for (std::size_t j = i + 1; j < fields_.size(); ++j) {
            if (fields_[i].name == fields_[j].name)
                throw std::invalid_argument("duplicate feature name: " + fields_[i].name);
        }
    }
}

const FeatureSchema& FeatureSchema::canonical() {
    static const FeatureSchema schema{{
        {"rr_interval", FeatureKind::continuous, FeatureUnit::milliseconds, 0.0, 4000.0},
        {"pr_interval", FeatureKind::continuous, FeatureUnit::milliseconds, 0.0, 4000.0},
        {"qrs_duration", FeatureKind::continuous, FeatureUnit::milliseconds, 0.0, 4000.0},
        {"qt_interval", FeatureKind::continuous, FeatureUnit::milliseconds, 0.0, 4000.0},
        {"qtc_interval", FeatureKind::continuous, FeatureUnit::milliseconds, 0.0, 4000.0},
        {"p_axis", FeatureKind::continuous, FeatureUnit::degrees, -180.0, 360.0},
        {"qrs_axis", FeatureKind::continuous, FeatureUnit::degrees, -180.0, 360.0},
        {"t_axis", FeatureKind::continuous, FeatureUnit::degrees, -180.0, 360.0},
        {"age", FeatureKind::continuous, FeatureUnit::years, 18.0, 120.0},
        {"sex", FeatureKind::binary, FeatureUnit::dimensionless, 0.0, 1.0},
    }};
    return schema;
}

int FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < fields_.size(); ++i)
        if (fields_[i].name == name) return static_cast<int>(i);
    return -1;
}

const std::vector<TargetCode>& canonical_targets() {
    static const std::vector<TargetCode> targets{
        {"K70", "Alcoholic liver disease"},
        {"K703", "Alcoholic cirrhosis of liver"},
        {"K7030", "Alcoholic cirrhosis of liver without ascites"},
        {"K72", "Hepatic failure, not elsewhere classified"},
        {"K729", "Hepatic failure, unspecified"},
        {"K7290", "Hepatic failure, unspecified without coma"},
    };
    return targets;
}

std::vector<Violation> validate_vector(const FeatureVector& v, const FeatureSchema& s) {
    std::vector<Violation> out;
    for (int i = 0; i < s.size(); ++i) {
        const auto& desc = s.field(i);
        const auto& val = v[static_cast<std::size_t>(i)];
        const bool required = (i == kAgeIndex || i == kSexIndex);
        if (!val.has_value()) {
            if (required) out.push_back({i, desc.name, std::nullopt, "required field is missing"});
            continue;
        }
        if (!std::isfinite(*val)) {
            out.push_back({i, desc.name, val, "value is not finite"});
            continue;
        }
        if (*val < desc.range_lo)
            out.push_back({i, desc.name, val,
                           "below plausible range lower bound " + format_double(desc.range_lo)});
        else if (*val > desc.range_hi)
            out.push_back({i, desc.name, val,
                           "above plausible range upper bound " + format_double(desc.range_hi)});
        if (desc.kind == FeatureKind::binary && *val != 0.0 && *val != 1.0)
            out.push_back({i, desc.name, val, "binary field must be 0 or 1"});
    }
    return out;
}

double LabeledCohort::prevalence(int t) const {
    if (samples.empty()) return 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < size(); ++i) pos += label(i, t);
    return static_cast<double>(pos) / static_cast<double>(size());
}

std::vector<std::pair<int, int>> prefix_pairs(const std::vector<TargetCode>& targets) {
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < targets.size(); ++a) {
        for (std::size_t d = 0; d < targets.size(); ++d) {
            if (a == d) continue;
            const auto& pa = targets[a].code;
            const auto& pd = targets[d].code;
            if (pd.size() > pa.size() && pd.compare(0, pa.size(), pa) == 0)
                pairs.emplace_back(static_cast<int>(a), static_cast<int>(d));
        }
    }
    return pairs;
}

bool labels_hierarchy_consistent(const LabeledCohort& c) {
    const auto pairs = prefix_pairs(c.targets);
    for (std::size_t i = 0; i < c.size(); ++i)
        for (const auto& [anc, desc] : pairs)
            if (c.label(i, desc) && !c.label(i, anc)) return false;
    return true;
}

void validate_cohort(const LabeledCohort& c) {
    if (c.record_ids.size() != c.size())
        throw std::invalid_argument("cohort record_ids/samples size mismatch");
    if (c.labels.size() != c.size() * c.targets.size())
        throw std::invalid_argument("cohort label matrix size mismatch");
    if (!c.fold_of.empty() && c.fold_of.size() != c.size())
        throw std::invalid_argument("cohort fold_of size mismatch");
}

FeatureMatrix to_matrix(const LabeledCohort& c) {
    FeatureMatrix m;
    m.rows = c.size();
    m.cols = c.schema.size();
    m.data.assign(m.rows * static_cast<std::size_t>(m.cols),
                  std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < m.rows; ++r)
        for (int f = 0; f < m.cols; ++f)
            if (const auto& v = c.samples[r][static_cast<std::size_t>(f)]; v.has_value())
                m.at(r, f) = *v;
    return m;
}

FeatureMatrix gather_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix out;
    out.rows = rows.size();
    out.cols = m.cols;
    out.data.resize(out.rows * static_cast<std::size_t>(out.cols));
    for (int c = 0; c < m.cols; ++c) {
        const auto src = m.column(c);
        double* dst = out.data.data() + static_cast<std::size_t>(c) * out.rows;
        for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = src[rows[i]];
    }
    return out;
}

}  // namespace ecgdx
