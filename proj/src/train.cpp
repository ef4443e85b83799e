#include "dipair/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dipair/errors.hpp"
#include "dipair/metrics.hpp"

namespace dipair {

using nlohmann::json;

std::string to_json_string(const TrainingReport& report) {
    json stages = json::array();
    for (const auto& s : report.stages) {
        json curve = json::array();
        for (const auto& [step, loss] : s.loss_curve) curve.push_back({{"step", step}, {"loss", loss}});
        stages.push_back({{"steps", s.steps},
                          {"best_validation", s.best_validation},
                          {"wall_seconds", s.wall_seconds},
                          {"loss_curve", curve}});
    }
    return json{{"stages", stages},
                {"final_validation", report.final_validation},
                {"final_param_hash", report.final_param_hash},
                {"checkpoint_path", report.checkpoint_path}}
        .dump(2);
}

std::uint64_t hash_params(const ParameterStore& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& p : params.all()) {
        mix(p.name.data(), p.name.size());
        mix(p.tensor.data().data(), p.tensor.data().size() * sizeof(float));
    }
    return h;
}

std::vector<std::vector<float>> snapshot_params(const ParameterStore& params) {
    std::vector<std::vector<float>> snap;
    snap.reserve(params.count());
    for (const auto& p : params.all()) snap.push_back(p.tensor.data());
    return snap;
}

void restore_params(ParameterStore& params, const std::vector<std::vector<float>>& snapshot) {
    if (snapshot.size() != params.count())
        throw ContractError("snapshot does not match parameter store");
    for (std::size_t i = 0; i < snapshot.size(); ++i)
        params.all()[i].tensor.data() = snapshot[i];
}

StageReport run_training_stage(ParameterStore& params, const StageSpec& spec,
                               std::size_t num_examples, const std::vector<float>& labels,
                               const BatchScorer& scorer, const ValidationFn& validate,
                               std::uint64_t seed, const std::string& stage_name) {
    if (labels.size() != num_examples) throw ContractError("label count != example count");
    if (num_examples == 0) throw ContractError("empty training set");
    if (spec.batch_size < 1 || spec.eval_every < 1) throw ConfigError("bad stage spec");

    const auto t0 = std::chrono::steady_clock::now();
    StageReport report;
    if (!spec.frozen_prefixes.empty()) params.set_frozen_by_prefixes(spec.frozen_prefixes, true);

    AdamWConfig opt_cfg;
    opt_cfg.learning_rate = spec.learning_rate;
    opt_cfg.weight_decay = spec.weight_decay;
    opt_cfg.warmup_steps = spec.warmup_steps;
    AdamW opt(opt_cfg);

    Rng rng(seed);
    std::vector<std::size_t> order(num_examples);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::size_t cursor = 0;

    double best = validate();
    report.best_validation = best;
    auto best_snap = snapshot_params(params);
    int evals_without_improvement = 0;

    for (int step = 1; step <= spec.max_steps; ++step) {
        std::vector<std::size_t> batch;
        batch.reserve(spec.batch_size);
        while (static_cast<int>(batch.size()) < spec.batch_size) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng.engine());
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        std::vector<float> batch_labels(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) batch_labels[i] = labels[batch[i]];

        Tensor logits = scorer(batch);
        Tensor loss = mean(bce_with_logits(logits, batch_labels));
        const float loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw ContractError(stage_name + " diverged at step " + std::to_string(step) +
                                " (loss not finite)");
        loss.backward();
        opt.step(params);
        report.steps = step;

        if (step == 1 || step % spec.eval_every == 0)
            report.loss_curve.emplace_back(step, loss_value);
        if (step % spec.eval_every == 0) {
            const double v = validate();
            if (v > best) {
                best = v;
                best_snap = snapshot_params(params);
                evals_without_improvement = 0;
            } else {
                ++evals_without_improvement;
            }
            if (evals_without_improvement >= spec.patience) break;
        }
    }

    restore_params(params, best_snap);
    params.clear_grads();
    params.unfreeze_all();
    report.best_validation = best;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::vector<float> extract_labels(const std::vector<PairExample>& examples, LabelSource source) {
    std::vector<float> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        const float v = source == LabelSource::Hard ? ex.label : ex.soft_label;
        if (v < 0.f)
            throw ContractError("example " + std::to_string(ex.id) + " lacks a " +
                                (source == LabelSource::Hard ? "hard" : "soft") + " label");
        out.push_back(v);
    }
    return out;
}

namespace {

std::pair<std::vector<TokenSequence>, std::vector<TokenSequence>> pair_sequences(
    const DiPairConfig& cfg, const std::vector<PairExample>& examples,
    const std::vector<std::size_t>& idx) {
    std::vector<TokenSequence> lefts, rights;
    lefts.reserve(idx.size());
    rights.reserve(idx.size());
    for (auto i : idx) {
        auto [l, r] = to_token_sequences(examples[i], cfg.left_max_length - 1,
                                         cfg.right_max_length - 1);
        lefts.push_back(std::move(l));
        rights.push_back(std::move(r));
    }
    return {std::move(lefts), std::move(rights)};
}

std::vector<TokenSequence> joined_sequences(const CrossAttentionModel& model,
                                            const std::vector<PairExample>& examples,
                                            const std::vector<std::size_t>& idx) {
    std::vector<TokenSequence> joined;
    joined.reserve(idx.size());
    for (auto i : idx) joined.push_back(model.join_pair(examples[i].left, examples[i].right));
    return joined;
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return idx;
}

template <typename ScoreChunk>
std::vector<float> score_in_batches(std::size_t n, int batch, ScoreChunk&& chunk) {
    NoGradGuard ng;
    std::vector<float> scores;
    scores.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += batch) {
        const std::size_t end = std::min(n, begin + static_cast<std::size_t>(batch));
        Tensor logits = chunk(range_indices(begin, end));
        scores.insert(scores.end(), logits.data().begin(), logits.data().end());
    }
    return scores;
}

std::vector<int> binary_labels(const std::vector<PairExample>& examples) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        if (!ex.has_label())
            throw ContractError("example " + std::to_string(ex.id) + " lacks a hard label");
        out.push_back(ex.binary_label() ? 1 : 0);
    }
    return out;
}

std::vector<float> graded_predictions(const std::vector<float>& logits) {
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = 1.f / (1.f + std::exp(-logits[i]));
    return out;
}

}  // namespace

std::vector<float> score_examples(const DiPairModel& model,
                                  const std::vector<PairExample>& examples, int batch) {
    return score_in_batches(examples.size(), batch, [&](const std::vector<std::size_t>& idx) {
        auto [lefts, rights] = pair_sequences(model.config(), examples, idx);
        return model.score_batch(lefts, rights);
    });
}

std::vector<float> score_examples(const CrossAttentionModel& model,
                                  const std::vector<PairExample>& examples, int batch) {
    return score_in_batches(examples.size(), batch, [&](const std::vector<std::size_t>& idx) {
        return model.score_batch(joined_sequences(model, examples, idx));
    });
}

double evaluate_auc(const DiPairModel& model, const std::vector<PairExample>& examples,
                    int batch) {
    return auc_roc(score_examples(model, examples, batch), binary_labels(examples));
}

double evaluate_auc(const CrossAttentionModel& model, const std::vector<PairExample>& examples,
                    int batch) {
    return auc_roc(score_examples(model, examples, batch), binary_labels(examples));
}

double evaluate_pearson(const DiPairModel& model, const std::vector<PairExample>& examples,
                        int batch) {
    return pearson(graded_predictions(score_examples(model, examples, batch)),
                   extract_labels(examples, LabelSource::Hard));
}

double evaluate_pearson(const CrossAttentionModel& model,
                        const std::vector<PairExample>& examples, int batch) {
    return pearson(graded_predictions(score_examples(model, examples, batch)),
                   extract_labels(examples, LabelSource::Hard));
}

namespace {

TrainingReport train_dipair_stages(DiPairModel& model, const std::vector<PairExample>& train,
                                   LabelSource source, const std::vector<PairExample>& valid,
                                   const std::vector<StageSpec>& stages, std::uint64_t seed) {
    const std::vector<float> labels = extract_labels(train, source);
    BatchScorer scorer = [&](const std::vector<std::size_t>& idx) {
        auto [lefts, rights] = pair_sequences(model.config(), train, idx);
        return model.score_batch(lefts, rights);
    };
    ValidationFn validator = [&]() { return evaluate_auc(model, valid); };

    Rng master(seed);
    TrainingReport report;
    int stage_no = 0;
    for (const auto& spec : stages) {
        ++stage_no;
        report.stages.push_back(run_training_stage(model.params(), spec, train.size(), labels,
                                                   scorer, validator, master.fork(),
                                                   "stage " + std::to_string(stage_no)));
    }
    report.final_validation = report.stages.back().best_validation;
    report.final_param_hash = hash_params(model.params());
    return report;
}

}  // namespace

TrainingReport train_two_stage(DiPairModel& model, const std::vector<PairExample>& train,
                               LabelSource source, const std::vector<PairExample>& valid,
                               const StageSpec& stage1, const StageSpec& stage2,
                               std::uint64_t seed) {
    if (stage1.frozen_prefixes.empty())
        throw ConfigError("two-stage training needs a frozen stage 1; use one-stage instead");
    if (!stage2.frozen_prefixes.empty())
        throw ConfigError("stage 2 must not freeze parameters");
    return train_dipair_stages(model, train, source, valid, {stage1, stage2}, seed);
}

TrainingReport train_one_stage(DiPairModel& model, const std::vector<PairExample>& train,
                               LabelSource source, const std::vector<PairExample>& valid,
                               const StageSpec& spec, std::uint64_t seed) {
    if (!spec.frozen_prefixes.empty())
        throw ConfigError("one-stage training must not freeze parameters");
    return train_dipair_stages(model, train, source, valid, {spec}, seed);
}

TrainingReport train_cross_attention(CrossAttentionModel& model,
                                     const std::vector<PairExample>& train, LabelSource source,
                                     const std::vector<PairExample>& valid, const StageSpec& spec,
                                     std::uint64_t seed) {
    const std::vector<float> labels = extract_labels(train, source);
    BatchScorer scorer = [&](const std::vector<std::size_t>& idx) {
        return model.score_batch(joined_sequences(model, train, idx));
    };
    ValidationFn validator = [&]() { return evaluate_auc(model, valid); };
    Rng master(seed);
    TrainingReport report;
    report.stages.push_back(run_training_stage(model.params(), spec, train.size(), labels, scorer,
                                               validator, master.fork(), "stage 1"));
    report.final_validation = report.stages.back().best_validation;
    report.final_param_hash = hash_params(model.params());
    return report;
}

}  // namespace dipair
