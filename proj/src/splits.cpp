#include "ecgdx/splits.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <unordered_map>

#include "ecgdx/rng.hpp"
#include "ecgdx/textio.hpp"

namespace ecgdx {

std::uint64_t StratumKey::hash() const {
    std::uint64_t h = fallback ? 0x5354524154414c4cULL : 0x53545241544b4559ULL;
    h = mix_seed(h, label_bits);
    h = mix_seed(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(age_quartile)));
    h = mix_seed(h, static_cast<std::uint64_t>(sex));
    return h;
}

std::array<double, 3> age_quartiles(const LabeledCohort& c) {
    std::vector<double> ages;
    ages.reserve(c.size());
    for (const auto& s : c.samples) ages.push_back(*s[kAgeIndex]);
    std::sort(ages.begin(), ages.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(ages.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        if (lo + 1 >= ages.size()) return ages.back();
        return ages[lo] + (ages[lo + 1] - ages[lo]) * (pos - static_cast<double>(lo));
    };
    return {q(0.25), q(0.50), q(0.75)};
}

StratumKey stratum_key(const LabeledCohort& c, std::size_t sample,
                       const std::array<double, 3>& quartiles) {
    StratumKey key;
    const int bits = std::min(c.n_targets(), 31);
    for (int t = 0; t < bits; ++t)
        if (c.label(sample, t)) key.label_bits |= (1u << t);
    const double age = *c.samples[sample][kAgeIndex];
    int q = 0;
    while (q < 3 && age >= quartiles[static_cast<std::size_t>(q)]) ++q;
    key.age_quartile = q;
    key.sex = static_cast<int>(*c.samples[sample][kSexIndex]);
    return key;
}

namespace {

std::map<StratumKey, std::vector<std::size_t>> dealt_strata(const LabeledCohort& c,
                                                            const FoldPlan& plan) {
    if (c.size() == 0) throw SplitError("assign_folds: empty cohort");
    if (plan.n_folds < 2) throw SplitError("assign_folds: need at least 2 folds");
    if (plan.val_fold < 0 || plan.val_fold >= plan.n_folds || plan.test_fold < 0 ||
        plan.test_fold >= plan.n_folds || plan.val_fold == plan.test_fold)
        throw SplitError("assign_folds: fold roles do not partition the fold range");

    const auto quartiles = age_quartiles(c);
    std::map<StratumKey, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < c.size(); ++i)
        strata[stratum_key(c, i, quartiles)].push_back(i);

    // strata below one sample per fold merge into (any-positive, sex) pools
    std::map<StratumKey, std::vector<std::size_t>> dealt;
    for (auto& [key, rows] : strata) {
        if (rows.size() >= static_cast<std::size_t>(plan.n_folds)) {
            dealt.emplace(key, std::move(rows));
            continue;
        }
        StratumKey fb;
        fb.fallback = true;
        fb.label_bits = key.label_bits != 0 ? 1u : 0u;
        fb.age_quartile = -1;
        fb.sex = key.sex;
        auto& pool = dealt[fb];
        pool.insert(pool.end(), rows.begin(), rows.end());
    }
    return dealt;
}

}  // namespace

std::size_t dealt_stratum_count(const LabeledCohort& c, const FoldPlan& plan) {
    return dealt_strata(c, plan).size();
}

std::vector<int> assign_folds(const LabeledCohort& c, const FoldPlan& plan) {
    auto dealt = dealt_strata(c, plan);
    std::vector<int> fold_of(c.size(), -1);
    for (auto& [key, rows] : dealt) {
        std::sort(rows.begin(), rows.end());  // merge order must not leak in
        Rng rng(mix_seed(plan.seed, key.hash()));
        rng.shuffle(rows);
        const int start = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(plan.n_folds)));
        for (std::size_t k = 0; k < rows.size(); ++k)
            fold_of[rows[k]] = static_cast<int>((start + k) % static_cast<std::size_t>(plan.n_folds));
    }
    return fold_of;
}

void write_folds_csv(std::ostream& out, const LabeledCohort& c, std::span<const int> fold_of) {
    if (fold_of.size() != c.size()) throw SplitError("write_folds_csv: size mismatch");
    out << "record_id,fold_index\n";
    for (std::size_t i = 0; i < c.size(); ++i)
        out << c.record_ids[i] << ',' << fold_of[i] << '\n';
}

void write_folds_csv(const std::filesystem::path& path, const LabeledCohort& c,
                     std::span<const int> fold_of) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SplitError("cannot write folds file: " + path.string());
    write_folds_csv(out, c, fold_of);
}

std::vector<int> read_folds_csv(const std::filesystem::path& path, const LabeledCohort& c) {
    std::ifstream in(path);
    if (!in) throw SplitError("cannot open folds file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SplitError("empty folds file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "record_id,fold_index") throw SplitError("malformed folds header");

    std::unordered_map<std::string, std::size_t> index;
    index.reserve(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) index.emplace(c.record_ids[i], i);

    std::vector<int> fold_of(c.size(), -1);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 2) throw SplitError("malformed folds row: " + line);
        const auto it = index.find(std::string(cells[0]));
        if (it == index.end())
            throw SplitError("folds file names unknown record_id: " + std::string(cells[0]));
        const auto fold = parse_int(cells[1]);
        if (!fold.has_value()) throw SplitError("malformed fold index: " + std::string(cells[1]));
        fold_of[it->second] = static_cast<int>(*fold);
    }
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] < 0)
            throw SplitError("folds file missing record_id: " + c.record_ids[i]);
    return fold_of;
}

FoldSplit split_by_role(std::span<const int> fold_of, const FoldPlan& plan) {
    FoldSplit s;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == plan.val_fold) s.val.push_back(i);
        else if (fold_of[i] == plan.test_fold) s.test.push_back(i);
        else s.train.push_back(i);
    }
    return s;
}

}  // namespace ecgdx
