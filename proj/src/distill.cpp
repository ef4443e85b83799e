#include "dipair/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dipair/errors.hpp"

namespace dipair {

float soften(float logit, float temperature) {
    if (!(temperature > 0.f))
        throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
    const float z = logit / temperature;
    if (z >= 0.f) return 1.f / (1.f + std::exp(-z));
    const float e = std::exp(z);
    return e / (1.f + e);
}

float pair_loss(float label, float logit) {
    if (!(label >= 0.f && label <= 1.f))
        throw ContractError("label " + std::to_string(label) + " outside [0,1]");
    const float p = std::clamp(soften(logit, 1.f), 1e-7f, 1.f - 1e-7f);
    return -(label * std::log(p) + (1.f - label) * std::log(1.f - p));
}

TeacherSpec default_teacher_spec(int vocab_size, int max_sequence_length) {
    TeacherSpec spec;
    spec.model.num_layers = 4;
    spec.model.hidden_size = 128;
    spec.model.num_heads = 2;
    spec.model.intermediate_size = 512;
    spec.model.max_sequence_length = max_sequence_length;
    spec.model.vocab_size = vocab_size;
    spec.model.num_segment_types = 2;
    spec.training.frozen_prefixes = {};
    return spec;
}

Teacher train_teacher(const TeacherSpec& spec, const std::vector<PairExample>& train,
                      const std::vector<PairExample>& valid, std::uint64_t seed) {
    Teacher teacher{CrossAttentionModel(spec.model, seed), -1.0, spec.gate_auc};
    train_cross_attention(teacher.model, train, LabelSource::Hard, valid, spec.training, seed);
    teacher.validation_auc = evaluate_auc(teacher.model, valid);
    return teacher;
}

void annotate(const Teacher& teacher, std::vector<PairExample>& records, float temperature,
              int batch) {
    if (!teacher.gate_passed())
        throw ContractError("teacher failed its quality gate: validation AUC " +
                            std::to_string(teacher.validation_auc) + " < " +
                            std::to_string(teacher.gate_threshold) +
                            "; refusing to annotate");
    if (records.empty()) return;
    const std::vector<float> logits = score_examples(teacher.model, records, batch);
    for (std::size_t i = 0; i < records.size(); ++i)
        records[i].soft_label = soften(logits[i], temperature);
}

}  // namespace dipair
