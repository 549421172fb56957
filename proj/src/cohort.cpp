#include "tfn/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tfn/rng.hpp"

namespace tfn::cohort {

using nlohmann::json;

namespace {
constexpr const char* kSchemaTag = "tfn-cohort-v1";
}

std::string to_string(OutcomeKind k) {
    switch (k) {
        case OutcomeKind::graft_loss: return "graft_loss";
        case OutcomeKind::graft_rejection: return "graft_rejection";
        case OutcomeKind::death: return "death";
    }
    throw std::logic_error("unknown outcome kind");
}

OutcomeKind outcome_kind_from_string(const std::string& s) {
    if (s == "graft_loss") return OutcomeKind::graft_loss;
    if (s == "graft_rejection") return OutcomeKind::graft_rejection;
    if (s == "death") return OutcomeKind::death;
    throw std::invalid_argument("unknown outcome kind: " + s);
}

const PatientRecord& Cohort::by_id(const std::string& id) const {
    for (const auto& p : patients)
        if (p.id == id) return p;
    throw std::invalid_argument("no patient with id " + id);
}

void validate_record(const PatientRecord& rec, int feature_count, int text_dim) {
    const auto fail = [&](const std::string& what) {
        throw std::invalid_argument("record " + rec.id + ": " + what);
    };
    const int t = rec.series.steps();
    if (t == 0) fail("empty time series");
    if (rec.series.values.cols != feature_count || rec.series.mask.cols != feature_count)
        fail("feature count mismatch");
    if (rec.series.mask.rows != t || static_cast<int>(rec.series.times.size()) != t)
        fail("times/values/mask row mismatch");
    for (int i = 1; i < t; ++i)
        if (!(rec.series.times[i] > rec.series.times[i - 1])) fail("times not strictly increasing");
    bool any_observed = false;
    for (int i = 0; i < rec.series.mask.size(); ++i) {
        const double m = rec.series.mask.a[i];
        if (m != 0.0 && m != 1.0) fail("mask entry not binary");
        if (m == 1.0) {
            any_observed = true;
            if (!std::isfinite(rec.series.values.a[i])) fail("non-finite observed value");
        }
    }
    if (!any_observed) fail("no observed entries");
    for (const auto& [name, v] : rec.statics.numeric)
        if (!std::isfinite(v)) fail("non-finite static " + name);
    for (const auto& [name, v] : rec.statics.categorical)
        if (v < 0) fail("negative category index for " + name);
    int losses = 0, deaths = 0;
    for (const auto& e : rec.events) {
        if (e.time < 0.0) fail("negative event time");
        if (e.time > rec.follow_up_end) fail("event after follow-up end");
        if (e.kind == OutcomeKind::graft_loss) ++losses;
        if (e.kind == OutcomeKind::death) ++deaths;
    }
    if (losses > 1) fail("multiple graft_loss events");
    if (deaths > 1) fail("multiple death events");
    for (const auto& n : rec.notes) {
        if (static_cast<int>(n.embedding.size()) != text_dim) fail("note embedding dim mismatch");
        if (n.time > rec.follow_up_end) fail("note after follow-up end");
        for (const double v : n.embedding)
            if (!std::isfinite(v)) fail("non-finite note embedding");
    }
}

namespace {

json record_to_json(const PatientRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["static"]["numeric"] = rec.statics.numeric;
    j["static"]["categorical"] = rec.statics.categorical;
    j["times"] = rec.series.times;
    json values = json::array(), mask = json::array();
    for (int i = 0; i < rec.series.steps(); ++i) {
        values.push_back(std::vector<double>(rec.series.values.row_ptr(i),
                                             rec.series.values.row_ptr(i) + rec.series.features()));
        std::vector<int> mrow(rec.series.features());
        for (int f = 0; f < rec.series.features(); ++f)
            mrow[f] = static_cast<int>(rec.series.mask(i, f));
        mask.push_back(mrow);
    }
    j["values"] = std::move(values);
    j["mask"] = std::move(mask);
    json notes = json::array();
    for (const auto& n : rec.notes) notes.push_back({{"time", n.time}, {"emb", n.embedding}});
    j["notes"] = std::move(notes);
    json events = json::array();
    for (const auto& e : rec.events)
        events.push_back({{"kind", to_string(e.kind)}, {"time", e.time}});
    j["events"] = std::move(events);
    j["follow_up_end"] = rec.follow_up_end;
    return j;
}

PatientRecord record_from_json(const json& j, int feature_count, int text_dim) {
    PatientRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.statics.numeric = j.at("static").at("numeric").get<std::map<std::string, double>>();
    rec.statics.categorical = j.at("static").at("categorical").get<std::map<std::string, int>>();
    rec.series.times = j.at("times").get<std::vector<double>>();
    const auto& values = j.at("values");
    const auto& mask = j.at("mask");
    const int t = static_cast<int>(values.size());
    if (static_cast<int>(mask.size()) != t)
        throw std::invalid_argument("mask/value row count mismatch");
    rec.series.values = Mat(t, feature_count);
    rec.series.mask = Mat(t, feature_count);
    for (int i = 0; i < t; ++i) {
        if (static_cast<int>(values[i].size()) != feature_count ||
            static_cast<int>(mask[i].size()) != feature_count)
            throw std::invalid_argument("mask/value shape mismatch");
        for (int f = 0; f < feature_count; ++f) {
            rec.series.values(i, f) = values[i][f].get<double>();
            rec.series.mask(i, f) = mask[i][f].get<double>();
        }
    }
    for (const auto& n : j.at("notes"))
        rec.notes.push_back({n.at("time").get<double>(), n.at("emb").get<std::vector<double>>()});
    for (const auto& e : j.at("events"))
        rec.events.push_back({outcome_kind_from_string(e.at("kind").get<std::string>()),
                              e.at("time").get<double>()});
    rec.follow_up_end = j.at("follow_up_end").get<double>();
    validate_record(rec, feature_count, text_dim);
    return rec;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    json header = {{"schema", kSchemaTag}, {"F", cohort.feature_count}, {"d_text", cohort.text_dim}};
    out << header.dump() << "\n";
    for (const auto& rec : cohort.patients) out << record_to_json(rec).dump() << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

Cohort load_cohort(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open cohort file: " + path);
    std::string line;
    int line_no = 0;
    Cohort cohort;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed JSON line (" + e.what() + ")");
        }
        try {
            if (line_no == 1) {
                const auto schema = j.at("schema").get<std::string>();
                if (schema != kSchemaTag)
                    throw std::invalid_argument("unknown schema version: " + schema);
                cohort.feature_count = j.at("F").get<int>();
                cohort.text_dim = j.at("d_text").get<int>();
            } else {
                cohort.patients.push_back(
                    record_from_json(j, cohort.feature_count, cohort.text_dim));
            }
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (line_no == 0) throw std::runtime_error(path + ":1: missing schema header");
    return cohort;
}

std::vector<FoldSplit> split_folds(const Cohort& cohort, int k, uint64_t seed) {
    const int n = static_cast<int>(cohort.patients.size());
    if (k < 2) throw std::invalid_argument("split_folds: k must be >= 2");
    if (k > n) throw std::invalid_argument("split_folds: k exceeds cohort size");
    Rng rng(derive_seed(seed, "fold-split"));
    const auto perm = rng.permutation(n);
    std::vector<FoldSplit> folds(k);
    for (int i = 0; i < n; ++i) {
        const int fold = i % k;
        for (int f = 0; f < k; ++f) {
            auto& dst = (f == fold) ? folds[f].test_ids : folds[f].train_ids;
            dst.push_back(cohort.patients[perm[i]].id);
        }
    }
    return folds;
}

Normalizer fit_normalizer(const Cohort& cohort, const std::vector<std::string>& train_ids) {
    const int f_count = cohort.feature_count;
    std::vector<double> sum(f_count, 0.0), sum_sq(f_count, 0.0);
    std::vector<long> count(f_count, 0);
    std::map<std::string, std::pair<double, double>> stat_acc;  // sum, sum_sq
    std::map<std::string, long> stat_count;
    for (const auto& id : train_ids) {
        const auto& rec = cohort.by_id(id);
        for (int t = 0; t < rec.series.steps(); ++t)
            for (int f = 0; f < f_count; ++f)
                if (rec.series.mask(t, f) == 1.0) {
                    const double v = rec.series.values(t, f);
                    sum[f] += v;
                    sum_sq[f] += v * v;
                    ++count[f];
                }
        for (const auto& [name, v] : rec.statics.numeric) {
            stat_acc[name].first += v;
            stat_acc[name].second += v * v;
            ++stat_count[name];
        }
    }
    Normalizer norm;
    norm.mean.resize(f_count);
    norm.std.resize(f_count);
    for (int f = 0; f < f_count; ++f) {
        if (count[f] < 2)
            throw std::invalid_argument("fit_normalizer: feature " + std::to_string(f) +
                                        " has fewer than 2 observed training entries");
        norm.mean[f] = sum[f] / count[f];
        const double var = std::max(0.0, sum_sq[f] / count[f] - norm.mean[f] * norm.mean[f]);
        norm.std[f] = std::max(std::sqrt(var), 1e-6);
    }
    for (const auto& [name, acc] : stat_acc) {
        const double m = acc.first / stat_count[name];
        const double var = std::max(0.0, acc.second / stat_count[name] - m * m);
        norm.static_numeric[name] = {m, std::max(std::sqrt(var), 1e-6)};
    }
    return norm;
}

Cohort apply_normalizer(const Cohort& cohort, const Normalizer& stats) {
    Cohort out = cohort;
    for (auto& rec : out.patients) {
        for (int t = 0; t < rec.series.steps(); ++t)
            for (int f = 0; f < rec.series.features(); ++f)
                if (rec.series.mask(t, f) == 1.0)
                    rec.series.values(t, f) =
                        (rec.series.values(t, f) - stats.mean[f]) / stats.std[f];
        for (auto& [name, v] : rec.statics.numeric) {
            const auto it = stats.static_numeric.find(name);
            if (it != stats.static_numeric.end())
                v = (v - it->second.first) / it->second.second;
        }
    }
    return out;
}

PatientRecord shuffle_timestamps(const PatientRecord& rec, uint64_t seed) {
    PatientRecord out = rec;
    const int t = rec.series.steps();
    if (t <= 1) return out;
    Rng rng(derive_seed(seed, "shuffle-timestamps"));
    const auto perm = rng.permutation(t);
    for (int i = 0; i < t; ++i) {
        for (int f = 0; f < rec.series.features(); ++f) {
            out.series.values(i, f) = rec.series.values(perm[i], f);
            out.series.mask(i, f) = rec.series.mask(perm[i], f);
        }
    }
    return out;
}

}  // namespace tfn::cohort
