#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfn/cohort.hpp"
#include "tfn/mat.hpp"

namespace tfn::cohort {

// Synthetic cohort with known ground-truth latent factors. Four factors
// drive every patient: organ function, inflammation, treatment level and
// frailty. Observed features are sparse linear+nonlinear readouts of single
// factors, note embeddings are noisy projections of the concurrent latent
// state, and observation times are sampled more densely while the latents
// are unstable. Outcome events fire on latent threshold crossings.
struct GeneratorConfig {
    int n_patients = 200;
    int feature_count = 12;  // F
    int text_dim = 32;       // d_text
    int factor_count = 4;    // G; the factor semantics are fixed, so this must be 4

    double obs_rate_base = 0.045;  // per-day observation probability at rest
    double obs_rate_min = 0.015;
    double obs_rate_max = 0.10;
    double missing_coupling = 2.5;  // instability -> sampling intensity strength

    double thr_rejection = 0.55;
    double thr_graft_loss = 0.30;
    double thr_death = 1.05;

    double horizon_days = 600.0;
    int max_steps = 60;

    double feature_noise = 0.15;
    double note_noise = 0.08;
    double note_rate = 0.012;  // per-day note probability at rest

    // acceptance band for the per-kind event prevalence check
    double prevalence_lo = 0.05;
    double prevalence_hi = 0.60;

    uint64_t seed = 7;
};

void validate_config(const GeneratorConfig& config);

// Ground-truth factor values at each observation time, keyed by patient id.
// Kept outside Cohort so persistence round-trips stay exact; analysis tools
// consume it directly.
struct FactorTable {
    std::vector<std::string> factor_names;
    std::map<std::string, Mat> by_patient;  // T x G per patient
};

struct GeneratedCohort {
    Cohort cohort;
    FactorTable factors;
};

// Pure function of the config (including its seed).
GeneratedCohort generate_cohort(const GeneratorConfig& config);

// Names of the per-feature readouts and static fields, used by exports,
// attribution and ratings files.
std::vector<std::string> feature_names(int feature_count);
std::vector<std::string> static_field_names();

void save_factors(const FactorTable& table, const std::string& path);
FactorTable load_factors(const std::string& path);

}  // namespace tfn::cohort
