#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfn/mat.hpp"

namespace tfn::cohort {

struct StaticFeatures {
    std::map<std::string, double> numeric;
    std::map<std::string, int> categorical;

    bool operator==(const StaticFeatures&) const = default;
};

// Irregularly sampled observations. mask(t,f)=1 marks observed entries;
// values at mask=0 positions are placeholders every consumer must ignore.
struct TimeSeries {
    std::vector<double> times;  // days since transplant, strictly increasing
    Mat values;                 // T x F
    Mat mask;                   // T x F, entries in {0,1}

    int steps() const { return values.rows; }
    int features() const { return values.cols; }

    bool operator==(const TimeSeries&) const = default;
};

struct NoteEvent {
    double time = 0.0;
    std::vector<double> embedding;

    bool operator==(const NoteEvent&) const = default;
};

enum class OutcomeKind { graft_loss, graft_rejection, death };

std::string to_string(OutcomeKind k);
OutcomeKind outcome_kind_from_string(const std::string& s);

struct OutcomeEvent {
    OutcomeKind kind = OutcomeKind::graft_loss;
    double time = 0.0;

    bool operator==(const OutcomeEvent&) const = default;
};

struct PatientRecord {
    std::string id;
    StaticFeatures statics;
    TimeSeries series;
    std::vector<NoteEvent> notes;
    std::vector<OutcomeEvent> events;
    double follow_up_end = 0.0;

    bool operator==(const PatientRecord&) const = default;
};

struct Cohort {
    int feature_count = 0;  // F
    int text_dim = 0;       // d_text
    std::vector<PatientRecord> patients;

    bool operator==(const Cohort&) const = default;

    const PatientRecord& by_id(const std::string& id) const;
};

// Enforces the record invariants (increasing times, shape agreement, binary
// mask, event/note times within follow-up, at least one observed entry).
// Throws std::invalid_argument naming the violation.
void validate_record(const PatientRecord& rec, int feature_count, int text_dim);

// JSONL persistence. First line is a schema header; one patient per line.
// load(save(c)) == c exactly. Errors carry the offending 1-based line number.
void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

// Patient-level k-fold partition: fold i is (train ids, test ids); test folds
// are disjoint, cover the cohort, and are sized within one patient of each
// other. Deterministic given seed.
struct FoldSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};
std::vector<FoldSplit> split_folds(const Cohort& cohort, int k, uint64_t seed);

// Per-feature z-scoring statistics over observed training entries only.
// Numeric statics carry their own stats so downstream encoders see unit-scale
// inputs without leaking test data.
struct Normalizer {
    std::vector<double> mean;  // per time-series feature
    std::vector<double> std;   // floored at 1e-6
    std::map<std::string, std::pair<double, double>> static_numeric;

    bool operator==(const Normalizer&) const = default;
};

Normalizer fit_normalizer(const Cohort& cohort, const std::vector<std::string>& train_ids);
Cohort apply_normalizer(const Cohort& cohort, const Normalizer& stats);

// Uniformly permutes the (value-row, mask-row) pairs over the fixed sorted
// time grid, so delta-t statistics survive but ordering is destroyed.
PatientRecord shuffle_timestamps(const PatientRecord& rec, uint64_t seed);

}  // namespace tfn::cohort
