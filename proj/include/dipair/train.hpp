#pragma once
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dipair/data.hpp"
#include "dipair/dipair.hpp"

namespace dipair {

struct StageSpec {
    std::vector<std::string> frozen_prefixes;  // empty = train everything
    float learning_rate = 5e-5f;
    float weight_decay = 0.01f;
    int batch_size = 256;
    int max_steps = 4000;
    int eval_every = 200;
    int patience = 5;  // evaluations without validation improvement
    std::int64_t warmup_steps = 100;
};

struct StageReport {
    int steps = 0;
    std::vector<std::pair<int, float>> loss_curve;  // (step, batch loss)
    double best_validation = -1.0;
    double wall_seconds = 0.0;
};

struct TrainingReport {
    std::vector<StageReport> stages;
    double final_validation = -1.0;
    std::uint64_t final_param_hash = 0;
    std::string checkpoint_path;
};

std::string to_json_string(const TrainingReport& report);

// FNV-1a over raw parameter bytes; used for freeze assertions and the
// stage-boundary identity check.
std::uint64_t hash_params(const ParameterStore& params);
std::vector<std::vector<float>> snapshot_params(const ParameterStore& params);
void restore_params(ParameterStore& params, const std::vector<std::vector<float>>& snapshot);

using BatchScorer = std::function<Tensor(const std::vector<std::size_t>&)>;
using ValidationFn = std::function<double()>;

// One optimizer run with shuffled minibatches, periodic validation, early
// stopping, and best-checkpoint restore at the end. Applies the spec's
// freezes on entry and removes them on exit. Diverging (non-finite) loss
// aborts with the stage and step in the message.
StageReport run_training_stage(ParameterStore& params, const StageSpec& spec,
                               std::size_t num_examples, const std::vector<float>& labels,
                               const BatchScorer& scorer, const ValidationFn& validate,
                               std::uint64_t seed, const std::string& stage_name);

enum class LabelSource { Hard, Soft };
std::vector<float> extract_labels(const std::vector<PairExample>& examples, LabelSource source);

// Inference over a dataset in fixed-size batches (no tape).
std::vector<float> score_examples(const DiPairModel& model,
                                  const std::vector<PairExample>& examples, int batch = 64);
std::vector<float> score_examples(const CrossAttentionModel& model,
                                  const std::vector<PairExample>& examples, int batch = 64);

double evaluate_auc(const DiPairModel& model, const std::vector<PairExample>& examples,
                    int batch = 64);
double evaluate_auc(const CrossAttentionModel& model, const std::vector<PairExample>& examples,
                    int batch = 64);
double evaluate_pearson(const DiPairModel& model, const std::vector<PairExample>& examples,
                        int batch = 64);
double evaluate_pearson(const CrossAttentionModel& model,
                        const std::vector<PairExample>& examples, int batch = 64);

// Stage 1 must freeze at least the encoder prefixes; stage 2 freezes
// nothing. Validation metric is AUC on the hard labels of `valid`.
TrainingReport train_two_stage(DiPairModel& model, const std::vector<PairExample>& train,
                               LabelSource source, const std::vector<PairExample>& valid,
                               const StageSpec& stage1, const StageSpec& stage2,
                               std::uint64_t seed);

TrainingReport train_one_stage(DiPairModel& model, const std::vector<PairExample>& train,
                               LabelSource source, const std::vector<PairExample>& valid,
                               const StageSpec& spec, std::uint64_t seed);

TrainingReport train_cross_attention(CrossAttentionModel& model,
                                     const std::vector<PairExample>& train, LabelSource source,
                                     const std::vector<PairExample>& valid, const StageSpec& spec,
                                     std::uint64_t seed);

}  // namespace dipair
