#include "dipair/optimizer.hpp"

#include <cmath>

#include "dipair/errors.hpp"

namespace dipair {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back(Parameter{name, t, false});
    return t;
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) > 0; }

Parameter& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("no parameter named " + name);
    return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("no parameter named " + name);
    return params_[it->second];
}

std::int64_t ParameterStore::total_values() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::clear_grads() {
    for (auto& p : params_) p.tensor.clear_grad();
}

void ParameterStore::set_frozen_by_prefixes(const std::vector<std::string>& prefixes, bool frozen) {
    for (const auto& prefix : prefixes) {
        bool matched = false;
        for (auto& p : params_) {
            if (p.name.rfind(prefix, 0) == 0) {
                p.frozen = frozen;
                matched = true;
            }
        }
        if (!matched) throw ConfigError("freeze prefix '" + prefix + "' matches no parameter");
    }
}

void ParameterStore::unfreeze_all() {
    for (auto& p : params_) p.frozen = false;
}

float AdamW::effective_lr(std::int64_t t) const {
    if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps)
        return cfg_.learning_rate * static_cast<float>(t) / static_cast<float>(cfg_.warmup_steps);
    return cfg_.learning_rate;
}

void AdamW::reset() {
    step_ = 0;
    moments_.clear();
}

void AdamW::step(ParameterStore& params) {
    for (const auto& p : params.all())
        if (!p.frozen && !p.tensor.has_grad())
            throw ContractError("adamw step without populated gradient on " + p.name);

    ++step_;
    const float lr = effective_lr(step_);
    const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(step_));
    const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(step_));

    for (auto& p : params.all()) {
        if (p.frozen) continue;
        auto& w = p.tensor.data();
        const auto& g = p.tensor.grad();
        auto& mom = moments_[p.tensor.node().get()];
        if (mom.m.empty()) {
            mom.m.assign(w.size(), 0.f);
            mom.v.assign(w.size(), 0.f);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.f - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.f - cfg_.beta2) * g[i] * g[i];
            const float mhat = mom.m[i] / bc1;
            const float vhat = mom.v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * w[i]);
        }
    }
    params.clear_grads();
}

}  // namespace dipair
