#pragma once
#include <cstdint>
#include <vector>

#include "dipair/data.hpp"
#include "dipair/dipair.hpp"
#include "dipair/train.hpp"

namespace dipair {

// Temperature-softened teacher probability: sigmoid(z / T).
float soften(float logit, float temperature);

// Cross-entropy against a (possibly fractional) target in [0,1], with the
// probability clamped to [1e-7, 1-1e-7]. Same formula the training loss
// uses; exposed scalar form for checks.
float pair_loss(float label, float logit);

struct TeacherSpec {
    TransformerConfig model;  // cross-attention tower shape
    StageSpec training;
    float gate_auc = 0.95f;
};

// Desk-scale default: 4 layers, hidden 128, 2 heads, full input length.
TeacherSpec default_teacher_spec(int vocab_size, int max_sequence_length);

struct Teacher {
    CrossAttentionModel model;
    double validation_auc = -1.0;
    float gate_threshold = 0.95f;

    bool gate_passed() const { return validation_auc >= gate_threshold; }
};

// Fine-tunes a fresh tower on hard labels and records the quality gate.
Teacher train_teacher(const TeacherSpec& spec, const std::vector<PairExample>& train,
                      const std::vector<PairExample>& valid, std::uint64_t seed);

// Writes soft_label = soften(teacher logit, T) onto every record, in order.
// Refuses when the teacher has not passed its gate.
void annotate(const Teacher& teacher, std::vector<PairExample>& records, float temperature,
              int batch = 64);

}  // namespace dipair
