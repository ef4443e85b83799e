#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dipair/tensor.hpp"

namespace dipair {

// A named trainable tensor. Frozen parameters still receive gradients
// during backward but are never updated by the optimizer.
struct Parameter {
    std::string name;  // path, e.g. "encoder.layer0.attn.wq"
    Tensor tensor;
    bool frozen = false;
};

// Ordered registry of a model's parameters. Order is creation order and is
// part of the checkpoint format.
class ParameterStore {
public:
    Tensor add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t count() const { return params_.size(); }
    std::int64_t total_values() const;

    void zero_grads();
    void clear_grads();

    // Marks every parameter whose name starts with one of the prefixes.
    // A prefix that resolves to no parameter is a configuration error.
    void set_frozen_by_prefixes(const std::vector<std::string>& prefixes, bool frozen);
    void unfreeze_all();

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamWConfig {
    float learning_rate = 5e-5f;
    float weight_decay = 0.01f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-6f;
    std::int64_t warmup_steps = 100;
};

// AdamW with decoupled weight decay, bias-corrected moments and linear
// learning-rate warmup. Moment buffers are keyed per parameter.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update to all unfrozen parameters. Requires a populated
    // gradient on every unfrozen parameter; clears all gradients after.
    void step(ParameterStore& params);

    std::int64_t step_count() const { return step_; }
    // Learning rate that was / would be applied at 1-based step t.
    float effective_lr(std::int64_t t) const;
    const AdamWConfig& config() const { return cfg_; }
    void reset();  // fresh moments and step count

private:
    struct Moments {
        std::vector<float> m, v;
    };
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::unordered_map<const Node*, Moments> moments_;
};

}  // namespace dipair
