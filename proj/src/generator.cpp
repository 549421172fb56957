#include "tfn/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tfn/rng.hpp"

namespace tfn::cohort {

using nlohmann::json;

void validate_config(const GeneratorConfig& c) {
    const auto fail = [](const std::string& what) {
        throw std::invalid_argument("generator config: " + what);
    };
    if (c.n_patients <= 0) fail("n_patients must be positive");
    if (c.feature_count < 4) fail("feature_count must be at least 4");
    if (c.text_dim <= 0) fail("text_dim must be positive");
    if (c.factor_count != 4) fail("factor_count must be 4 (fixed factor semantics)");
    if (!(c.obs_rate_base > 0.0 && c.obs_rate_base <= 1.0)) fail("obs_rate_base not in (0,1]");
    if (!(c.obs_rate_min > 0.0 && c.obs_rate_min <= c.obs_rate_max && c.obs_rate_max <= 1.0))
        fail("observation rate range invalid");
    if (c.missing_coupling < 0.0) fail("missing_coupling must be non-negative");
    if (c.horizon_days <= 1.0) fail("horizon_days too small");
    if (c.max_steps < 2) fail("max_steps must be at least 2");
    if (!(c.note_rate > 0.0 && c.note_rate <= 1.0)) fail("note_rate not in (0,1]");
    if (c.feature_noise < 0.0 || c.note_noise < 0.0) fail("noise levels must be non-negative");
}

std::vector<std::string> feature_names(int feature_count) {
    std::vector<std::string> names;
    names.reserve(feature_count);
    for (int f = 0; f < feature_count; ++f) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "ts%02d", f);
        names.emplace_back(buf);
    }
    return names;
}

std::vector<std::string> static_field_names() {
    return {"age", "gender", "blood_group", "donor_type"};
}

namespace {

// Factor indices; the readout map below and the analysis tests rely on this order.
constexpr int kOrgan = 0;
constexpr int kInflammation = 1;
constexpr int kTreatment = 2;
constexpr int kFrailty = 3;

struct FeatureReadout {
    int factor = 0;       // dominant factor
    int cross_factor = 0; // weak secondary loading
    double offset = 0.0;
    double lin = 1.0;
    double nonlin = 0.3;
    double cross = 0.1;
    double noise = 0.15;
    double obs_prob = 0.6;  // per-feature observation probability at a visit
};

// Assign each feature a dominant factor in blocks so every factor has
// readouts: organ and inflammation get the densest coverage, frailty the
// noisiest and sparsest (its information mostly lives in the statics).
std::vector<FeatureReadout> make_readouts(const GeneratorConfig& cfg, Rng& rng) {
    std::vector<FeatureReadout> readouts(cfg.feature_count);
    for (int f = 0; f < cfg.feature_count; ++f) {
        FeatureReadout r;
        const double u = static_cast<double>(f) / cfg.feature_count;
        if (u < 0.34) r.factor = kOrgan;
        else if (u < 0.59) r.factor = kInflammation;
        else if (u < 0.84) r.factor = kTreatment;
        else r.factor = kFrailty;
        r.cross_factor = (r.factor + 1 + rng.randint(3)) % 4;
        r.offset = rng.uniform(-0.3, 0.3);
        r.lin = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.8, 1.5);
        r.nonlin = rng.uniform(0.2, 0.5);
        r.cross = rng.uniform(0.03, 0.12);
        r.noise = cfg.feature_noise * rng.uniform(0.7, 1.5);
        r.obs_prob = rng.uniform(0.4, 0.9);
        if (r.factor == kFrailty) {
            r.noise *= 2.0;       // frailty readouts are weak proxies
            r.obs_prob *= 0.7;
        }
        readouts[f] = r;
    }
    return readouts;
}

struct LatentState {
    double organ, inflammation, treatment, frailty;
};

}  // namespace

GeneratedCohort generate_cohort(const GeneratorConfig& cfg) {
    validate_config(cfg);

    Rng struct_rng(derive_seed(cfg.seed, "cohort-structure"));
    const auto readouts = make_readouts(cfg, struct_rng);

    // Fixed projection from [organ, inflammation, treatment, frailty, 1]
    // to the note embedding space.
    Mat note_proj(cfg.text_dim, 5);
    for (int i = 0; i < note_proj.size(); ++i) note_proj.a[i] = struct_rng.gaussian(0.0, 0.6);

    GeneratedCohort out;
    out.cohort.feature_count = cfg.feature_count;
    out.cohort.text_dim = cfg.text_dim;
    out.factors.factor_names = {"organ_function", "inflammation", "treatment_level", "frailty"};

    const int days = static_cast<int>(cfg.horizon_days);
    for (int pi = 0; pi < cfg.n_patients; ++pi) {
        Rng rng(derive_seed(cfg.seed, "patient-" + std::to_string(pi)));

        PatientRecord rec;
        {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%04d", pi);
            rec.id = buf;
        }
        const double age = std::clamp(rng.gaussian(54.0, 12.0), 20.0, 85.0);
        const int gender = rng.randint(2);
        const int blood_group = rng.randint(4);
        const int donor_type = rng.randint(2);  // 1 = deceased donor
        rec.statics.numeric["age"] = age;
        rec.statics.categorical["gender"] = gender;
        rec.statics.categorical["blood_group"] = blood_group;
        rec.statics.categorical["donor_type"] = donor_type;

        const double age_z = (age - 54.0) / 12.0;

        // day-grid latent simulation
        LatentState s;
        s.organ = std::clamp(rng.gaussian(0.95, 0.12), 0.5, 1.3);
        s.inflammation = std::max(0.0, rng.gaussian(0.12, 0.05));
        s.treatment = std::clamp(rng.gaussian(1.0, 0.08), 0.7, 1.2);
        s.frailty = std::max(0.05, 0.18 + 0.16 * age_z + 0.06 * donor_type +
                                       rng.gaussian(0.0, 0.05));

        const double organ_slope =
            -(0.00015 + 0.00075 * donor_type + 0.00030 * std::max(0.0, age_z)) -
            std::max(0.0, rng.gaussian(0.0003, 0.0004));
        const double frailty_slope = 0.00045 + 0.00030 * std::max(0.0, age_z);
        const double flare_base = 0.004 + 0.002 * rng.uniform();

        std::vector<LatentState> track(days);
        std::vector<double> instability(days, 0.0);
        std::vector<double> rejection_times;
        double graft_loss_time = -1.0, death_time = -1.0;
        double last_flare = -1e9;
        double prev_organ = s.organ;

        for (int d = 0; d < days; ++d) {
            // inflammation flares, more likely when treatment is low
            const double flare_rate = flare_base * (1.0 + 3.0 * std::max(0.0, 0.9 - s.treatment));
            if (rng.bernoulli(std::min(0.5, flare_rate))) {
                s.inflammation += rng.uniform(0.55, 1.1);
                last_flare = d;
            }
            s.inflammation += -s.inflammation / 22.0 + 0.012 * rng.gaussian();
            s.inflammation = std::max(0.0, s.inflammation);

            // treatment taper plus stepped response two days after a flare
            s.treatment += -0.00045 + 0.004 * rng.gaussian() * 0.1;
            if (d - last_flare >= 2 && d - last_flare < 4) s.treatment += 0.15;
            s.treatment = std::clamp(s.treatment, 0.3, 1.3);

            // organ function decays with inflammation load
            s.organ += organ_slope - 0.0035 * std::max(0.0, s.inflammation - 0.25) +
                       0.006 * rng.gaussian();
            if (graft_loss_time >= 0.0) s.organ = std::min(s.organ, cfg.thr_graft_loss * 0.9);
            s.organ = std::clamp(s.organ, 0.02, 1.4);

            // frailty creeps upward, worse after flares and with failing graft
            s.frailty += frailty_slope + 0.0015 * std::max(0.0, 0.5 - s.organ) +
                         0.002 * rng.gaussian();
            if (d - last_flare >= 0 && d - last_flare < 1) s.frailty += 0.01;
            s.frailty = std::clamp(s.frailty, 0.0, 2.0);

            track[d] = s;
            const double organ_move = std::fabs(s.organ - prev_organ);
            prev_organ = s.organ;
            instability[d] = 1.8 * std::max(0.0, s.inflammation - 0.15) + 40.0 * organ_move +
                             1.2 * std::max(0.0, cfg.thr_graft_loss + 0.15 - s.organ);

            // events
            if (s.inflammation > cfg.thr_rejection &&
                (rejection_times.empty() || d - rejection_times.back() > 45.0) &&
                rejection_times.size() < 3)
                rejection_times.push_back(d);
            if (graft_loss_time < 0.0 && s.organ < cfg.thr_graft_loss) graft_loss_time = d;
            const double death_load = s.frailty + 0.55 * std::max(0.0, 0.45 - s.organ);
            if (death_time < 0.0 && death_load > cfg.thr_death) {
                death_time = d;
                break;
            }
        }
        const int sim_days = death_time >= 0.0 ? static_cast<int>(death_time) + 1 : days;
        rec.follow_up_end = death_time >= 0.0 ? death_time : cfg.horizon_days;

        // observation times: day-wise Bernoulli with instability-coupled rate
        std::vector<int> obs_days;
        for (int d = 0; d < sim_days; ++d) {
            double p = cfg.obs_rate_base * (1.0 + cfg.missing_coupling * instability[d]);
            p = std::clamp(p, cfg.obs_rate_min, cfg.obs_rate_max);
            if (d == 0 || rng.bernoulli(p)) obs_days.push_back(d);
            if (static_cast<int>(obs_days.size()) >= cfg.max_steps) break;
        }

        const int t_count = static_cast<int>(obs_days.size());
        rec.series.times.resize(t_count);
        rec.series.values = Mat(t_count, cfg.feature_count);
        rec.series.mask = Mat(t_count, cfg.feature_count);
        Mat factors(t_count, 4);

        for (int t = 0; t < t_count; ++t) {
            const int d = obs_days[t];
            rec.series.times[t] = d;
            const LatentState& ls = track[d];
            const double lat[4] = {ls.organ, ls.inflammation, ls.treatment, ls.frailty};
            for (int g = 0; g < 4; ++g) factors(t, g) = lat[g];

            int observed_in_row = 0;
            for (int f = 0; f < cfg.feature_count; ++f) {
                const auto& r = readouts[f];
                const bool seen = rng.bernoulli(r.obs_prob);
                if (seen) {
                    const double v = r.offset + r.lin * lat[r.factor] +
                                     r.nonlin * std::tanh(2.0 * lat[r.factor]) +
                                     r.cross * lat[r.cross_factor] +
                                     r.noise * rng.gaussian();
                    rec.series.values(t, f) = v;
                    rec.series.mask(t, f) = 1.0;
                    ++observed_in_row;
                }
            }
            if (observed_in_row == 0) {
                // a visit always measures something; pick one feature
                const int f = rng.randint(cfg.feature_count);
                const auto& r = readouts[f];
                rec.series.values(t, f) = r.offset + r.lin * lat[r.factor] +
                                          r.nonlin * std::tanh(2.0 * lat[r.factor]) +
                                          r.cross * lat[r.cross_factor] +
                                          r.noise * rng.gaussian();
                rec.series.mask(t, f) = 1.0;
            }
        }

        // notes: sparser than observations, denser around instability
        for (int d = 0; d < sim_days; ++d) {
            const double p =
                std::min(0.5, cfg.note_rate * (1.0 + 1.5 * instability[d]));
            if (!rng.bernoulli(p)) continue;
            const LatentState& ls = track[d];
            const double lat5[5] = {ls.organ, ls.inflammation, ls.treatment, ls.frailty, 1.0};
            NoteEvent note;
            note.time = d;
            note.embedding.resize(cfg.text_dim);
            for (int i = 0; i < cfg.text_dim; ++i) {
                double acc = 0.0;
                for (int j = 0; j < 5; ++j) acc += note_proj(i, j) * lat5[j];
                note.embedding[i] = acc + cfg.note_noise * rng.gaussian();
            }
            rec.notes.push_back(std::move(note));
        }

        for (const double rt : rejection_times)
            if (rt <= rec.follow_up_end)
                rec.events.push_back({OutcomeKind::graft_rejection, rt});
        if (graft_loss_time >= 0.0 && graft_loss_time <= rec.follow_up_end)
            rec.events.push_back({OutcomeKind::graft_loss, graft_loss_time});
        if (death_time >= 0.0) rec.events.push_back({OutcomeKind::death, death_time});
        std::sort(rec.events.begin(), rec.events.end(),
                  [](const OutcomeEvent& a, const OutcomeEvent& b) { return a.time < b.time; });

        validate_record(rec, cfg.feature_count, cfg.text_dim);
        out.factors.by_patient[rec.id] = std::move(factors);
        out.cohort.patients.push_back(std::move(rec));
    }
    return out;
}

void save_factors(const FactorTable& table, const std::string& path) {
    std::ofstream outf(path, std::ios::binary);
    if (!outf) throw std::runtime_error("cannot open for writing: " + path);
    json j;
    j["factor_names"] = table.factor_names;
    json rows = json::object();
    for (const auto& [id, m] : table.by_patient) {
        json arr = json::array();
        for (int t = 0; t < m.rows; ++t)
            arr.push_back(std::vector<double>(m.row_ptr(t), m.row_ptr(t) + m.cols));
        rows[id] = std::move(arr);
    }
    j["factors"] = std::move(rows);
    outf << j.dump() << "\n";
}

FactorTable load_factors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open factor file: " + path);
    json j;
    in >> j;
    FactorTable table;
    table.factor_names = j.at("factor_names").get<std::vector<std::string>>();
    const int g = static_cast<int>(table.factor_names.size());
    for (const auto& [id, arr] : j.at("factors").items()) {
        Mat m(static_cast<int>(arr.size()), g);
        for (int t = 0; t < m.rows; ++t)
            for (int c = 0; c < g; ++c) m(t, c) = arr[t][c].get<double>();
        table.by_patient[id] = std::move(m);
    }
    return table;
}

}  // namespace tfn::cohort
