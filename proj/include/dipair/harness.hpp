#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dipair/cache.hpp"
#include "dipair/data.hpp"
#include "dipair/dipair.hpp"
#include "dipair/distill.hpp"
#include "dipair/train.hpp"

// Experiment wiring: reproducible teacher -> annotate -> students runs,
// the baseline matrix, the ablation sweeps and CSV emission.
namespace dipair {

struct StudentSpec {
    std::string name;
    DiPairConfig config;
};

struct ExperimentConfig {
    std::string name = "dipair-desk";
    std::uint64_t seed = 0;
    GeneratorConfig dataset;
    TeacherSpec teacher;
    float temperature = 1.f;  // annotation softening
    std::vector<StudentSpec> students;
    StageSpec stage1, stage2;
    int eval_batch = 64;
    // Latency measurement is off by default so metric CSVs stay
    // byte-reproducible; FLOP speedups are always reported.
    bool measure_latency = false;
    int latency_repetitions = 30;
    int latency_pairs = 64;
};

// Desk-scale defaults: the four-student baseline matrix of the experiments
// section at reduced widths.
ExperimentConfig default_experiment();
DiPairConfig desk_dipair_tsf(const GeneratorConfig& data);
DiPairConfig desk_dipair_ffnn(const GeneratorConfig& data);
DiPairConfig desk_de_ffnn(const GeneratorConfig& data);
DiPairConfig desk_de_cos(const GeneratorConfig& data);

std::string to_json_string(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const std::string& text);
ExperimentConfig experiment_from_json_file(const std::string& path);

// Dataset + gated teacher + annotated transfer set. The teacher is cached
// in out_dir by a content hash of everything that determines it.
struct PreparedExperiment {
    DatasetBundle data;
    Teacher teacher;
    double teacher_auc_valid = 0, teacher_auc_test = 0;
    double teacher_pearson_valid = 0, teacher_pearson_test = 0;
};
PreparedExperiment prepare_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct StudentRun {
    TrainingReport report;
    double auc_valid = 0, auc_test = 0;
    double pearson_valid = 0, pearson_test = 0;
};
// Two-stage (or one-stage) distillation training of one student on the
// prepared transfer set, evaluated on the held-out splits.
StudentRun train_student(DiPairModel& model, const PreparedExperiment& prep,
                         const ExperimentConfig& cfg, std::uint64_t seed, bool two_stage);

struct MetricRow {
    std::string model;
    std::string head_kind;
    int encoder_layers = 0;  // K
    int n = 0, m = 0, d = 0, l = 0;
    std::int64_t head_params = 0;
    double auc_valid = 0, auc_test = 0;
    double pearson_valid = 0, pearson_test = 0;
    double delta_auc_test_pct = 0;
    double flop_speedup = 0;
    double latency_speedup = 0;  // <= 0 means not measured
};

struct MatrixResult {
    std::vector<MetricRow> rows;  // teacher first
    std::string metrics_csv;
    std::string tradeoff_csv;
};

// Trains every configured student, emits metrics.csv and tradeoff.csv under
// out_dir. On a student failure the partial CSVs are persisted and the
// error is rethrown naming the model.
MatrixResult run_matrix(const ExperimentConfig& cfg, const std::string& out_dir);

// kind in {encoder_layers, input_length, projection_dim, first_vs_last,
// nm_sweep, head_capacity, one_vs_two_stage}; writes ablation_<kind>.csv.
std::string run_ablation(const std::string& kind, const ExperimentConfig& cfg,
                         const std::string& out_dir);
std::vector<std::string> ablation_kinds();

std::uint64_t student_seed(std::uint64_t experiment_seed, std::size_t index);

}  // namespace dipair
