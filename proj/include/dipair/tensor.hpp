#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dipair/errors.hpp"

// Dense float32 tensors with dynamic-graph (tape) reverse-mode
// differentiation. Each op computes its value eagerly and, when gradients
// are enabled, records a closure that pulls the output gradient back into
// its inputs. Graphs are single-threaded by contract; the heavy inner loops
// live in kernels.hpp.
namespace dipair {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    std::vector<std::int64_t> shape;
    std::vector<float> value;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.f);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    Tensor(std::vector<std::int64_t> shape, std::vector<float> data, bool requires_grad = false);

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, float v, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->size(); }
    std::int64_t dim(int i) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }

    std::vector<float>& data() { return node_->value; }
    const std::vector<float>& data() const { return node_->value; }
    float item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    bool has_grad() const { return node_->has_grad(); }
    // Zeros (and allocates) for requires_grad tensors that never participated.
    const std::vector<float>& grad() const;
    void zero_grad();
    void clear_grad();  // drops the buffer: "not populated"

    // Reverse pass from a scalar; consumes the graph.
    void backward();

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// RAII switch that disables tape recording (inference / evaluation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- differentiable ops ----

// [..., p, q] x [..., q, r]; a rank-3 against rank-2 b broadcasts b.
Tensor matmul(const Tensor& a, const Tensor& b);
// a x b^T: [..., p, q] x [..., r, q] -> [..., p, r]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);   // b: [last dim]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor scale(const Tensor& a, float s);

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

Tensor softmax(const Tensor& x, int axis);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-12f);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// table [V, H], ids shaped `id_shape` -> [id_shape..., H]
Tensor embedding(const Tensor& table, const std::vector<std::int32_t>& ids,
                 const std::vector<std::int64_t>& id_shape);

// Row selection / joining along the second-to-last axis.
Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);

// [B, S, H] <-> [B*nh, S, H/nh]
Tensor split_heads(const Tensor& x, int num_heads);
Tensor join_heads(const Tensor& x, int num_heads);

// scores [B*nh, Sq, Sk] += -1e9 where mask[b*Sk + k] == 0
Tensor add_key_mask(const Tensor& scores, const std::vector<std::uint8_t>& mask, int num_heads);

// Row-wise cosine of [B, D] pairs -> [B]; zero-norm rows score 0.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

// Elementwise -(y log p + (1-y) log(1-p)) with p = sigmoid(z) clamped to
// [1e-7, 1-1e-7]; y is a constant label vector, z is [B].
Tensor bce_with_logits(const Tensor& z, const std::vector<float>& y);

}  // namespace dipair
