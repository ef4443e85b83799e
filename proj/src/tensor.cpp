#include "dipair/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dipair/kernels.hpp"

namespace dipair {

namespace {

thread_local int g_no_grad_depth = 0;

std::int64_t shape_size(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

NodePtr make_node(std::vector<std::int64_t> shape, std::vector<float> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }

// Attach autodiff metadata if recording is on and any parent needs grads.
void record(const NodePtr& out, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
    if (g_no_grad_depth > 0) return;
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    if (!needs) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

float stable_sigmoid(float z) {
    if (z >= 0.f) return 1.f / (1.f + std::exp(-z));
    const float e = std::exp(z);
    return e / (1.f + e);
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<float> data, bool requires_grad) {
    if (shape_size(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    node_ = make_node(std::move(shape), std::move(data));
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.f), requires_grad);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, float v, bool requires_grad) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<float>(n, v), requires_grad);
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

std::int64_t Tensor::dim(int i) const {
    if (i < 0) i += rank();
    return node_->shape[static_cast<std::size_t>(i)];
}

float Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
}

const std::vector<float>& Tensor::grad() const {
    if (!node_->requires_grad) throw ContractError("grad() on tensor without requires_grad");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_->has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.f);
}

void Tensor::clear_grad() { node_->grad.clear(); }

void Tensor::backward() {
    if (size() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    // Topological order over the recorded graph.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        if (idx < cur->parents.size()) {
            Node* p = cur->parents[idx++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(cur);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] = 1.f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
    // Consume the graph; parameter grads stay behind.
    for (Node* n : topo) {
        n->backward_fn = nullptr;
        n->parents.clear();
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- matmul ----

namespace {

struct MatmulDims {
    std::int64_t batch;  // 0 when both operands are rank 2
    std::int64_t p, q, r;
    bool b_broadcast;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool b_transposed) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3)
        throw ShapeError("matmul supports rank 2/3, got " + shape_str(as) + " x " + shape_str(bs));
    MatmulDims d{};
    d.p = as[as.size() - 2];
    d.q = as[as.size() - 1];
    const std::int64_t b_rows = bs[bs.size() - 2];
    const std::int64_t b_cols = bs[bs.size() - 1];
    const std::int64_t b_inner = b_transposed ? b_cols : b_rows;
    d.r = b_transposed ? b_rows : b_cols;
    if (d.q != b_inner)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(as) + " x " +
                         shape_str(bs));
    if (a.rank() == 3 && b.rank() == 3) {
        if (as[0] != bs[0])
            throw ShapeError("matmul batch dimensions disagree: " + shape_str(as) + " x " +
                             shape_str(bs));
        d.batch = as[0];
        d.b_broadcast = false;
    } else if (a.rank() == 3 && b.rank() == 2) {
        d.batch = as[0];
        d.b_broadcast = true;
    } else if (a.rank() == 2 && b.rank() == 2) {
        d.batch = 0;
        d.b_broadcast = true;
    } else {
        throw ShapeError("rank-2 a with rank-3 b is unsupported: " + shape_str(as) + " x " +
                         shape_str(bs));
    }
    return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulDims d = matmul_dims(a, b, false);
    const std::int64_t nb = std::max<std::int64_t>(d.batch, 1);
    std::vector<std::int64_t> out_shape =
        d.batch ? std::vector<std::int64_t>{d.batch, d.p, d.r} : std::vector<std::int64_t>{d.p, d.r};
    auto out = make_node(out_shape, std::vector<float>(nb * d.p * d.r, 0.f));

    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = out->value.data();
    if (d.b_broadcast) {
        // One flattened GEMM: (batch*p, q) x (q, r)
        kernels::gemm_nn(pa, pb, pc, nb * d.p, d.r, d.q);
    } else {
        for (std::int64_t i = 0; i < nb; ++i)
            kernels::gemm_nn(pa + i * d.p * d.q, pb + i * d.q * d.r, pc + i * d.p * d.r, d.p, d.r,
                             d.q);
    }

    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn, d, nb](Node& self) {
        const float* g = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            if (d.b_broadcast) {
                kernels::gemm_nt(g, bn->value.data(), an->grad.data(), nb * d.p, d.q, d.r);
            } else {
                for (std::int64_t i = 0; i < nb; ++i)
                    kernels::gemm_nt(g + i * d.p * d.r, bn->value.data() + i * d.q * d.r,
                                     an->grad.data() + i * d.p * d.q, d.p, d.q, d.r);
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            if (d.b_broadcast) {
                kernels::gemm_tn(an->value.data(), g, bn->grad.data(), nb * d.p, d.r, d.q);
            } else {
                for (std::int64_t i = 0; i < nb; ++i)
                    kernels::gemm_tn(an->value.data() + i * d.p * d.q, g + i * d.p * d.r,
                                     bn->grad.data() + i * d.q * d.r, d.p, d.r, d.q);
            }
        }
    });
    return wrap(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const MatmulDims d = matmul_dims(a, b, true);
    const std::int64_t nb = std::max<std::int64_t>(d.batch, 1);
    std::vector<std::int64_t> out_shape =
        d.batch ? std::vector<std::int64_t>{d.batch, d.p, d.r} : std::vector<std::int64_t>{d.p, d.r};
    auto out = make_node(out_shape, std::vector<float>(nb * d.p * d.r, 0.f));

    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = out->value.data();
    if (d.b_broadcast) {
        kernels::gemm_nt(pa, pb, pc, nb * d.p, d.r, d.q);
    } else {
        for (std::int64_t i = 0; i < nb; ++i)
            kernels::gemm_nt(pa + i * d.p * d.q, pb + i * d.r * d.q, pc + i * d.p * d.r, d.p, d.r,
                             d.q);
    }

    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn, d, nb](Node& self) {
        const float* g = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            if (d.b_broadcast) {
                kernels::gemm_nn(g, bn->value.data(), an->grad.data(), nb * d.p, d.q, d.r);
            } else {
                for (std::int64_t i = 0; i < nb; ++i)
                    kernels::gemm_nn(g + i * d.p * d.r, bn->value.data() + i * d.r * d.q,
                                     an->grad.data() + i * d.p * d.q, d.p, d.q, d.r);
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = dC^T * A, accumulated over the (flattened) row dimension.
            if (d.b_broadcast) {
                kernels::gemm_tn(g, an->value.data(), bn->grad.data(), nb * d.p, d.q, d.r);
            } else {
                for (std::int64_t i = 0; i < nb; ++i)
                    kernels::gemm_tn(g + i * d.p * d.r, an->value.data() + i * d.p * d.q,
                                     bn->grad.data() + i * d.r * d.q, d.p, d.q, d.r);
            }
        }
    });
    return wrap(out);
}

// ---- elementwise / broadcast ----

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + " needs matching shapes, got " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> v(a.size());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn](Node& self) {
        for (auto* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            n->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) n->grad[i] += self.grad[i];
        }
    });
    return wrap(out);
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (b.rank() != 1 || b.dim(0) != x.dim(-1))
        throw ShapeError("bias " + shape_str(b.shape()) + " does not match last dim of " +
                         shape_str(x.shape()));
    const std::int64_t cols = x.dim(-1);
    const std::int64_t rows = x.size() / cols;
    std::vector<float> v(x.size());
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            v[i * cols + j] = x.data()[i * cols + j] + b.data()[j];
    auto out = make_node(x.shape(), std::move(v));
    auto xn = x.node(), bn = b.node();
    record(out, {xn, bn}, [xn, bn, rows, cols](Node& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j) bn->grad[j] += self.grad[i * cols + j];
        }
    });
    return wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> v(a.size());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
    return wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> v(a.size());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
    return wrap(out);
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> v(a.size());
    for (std::int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * s;
    auto out = make_node(a.shape(), std::move(v));
    auto an = a.node();
    record(out, {an}, [an, s](Node& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    });
    return wrap(out);
}

Tensor sum(const Tensor& a) {
    float acc = 0.f;
    for (float v : a.data()) acc += v;
    auto out = make_node({1}, {acc});
    auto an = a.node();
    record(out, {an}, [an](Node& self) {
        an->ensure_grad();
        const float g = self.grad[0];
        for (auto& gv : an->grad) gv += g;
    });
    return wrap(out);
}

Tensor mean(const Tensor& a) {
    float acc = 0.f;
    for (float v : a.data()) acc += v;
    const float inv = 1.f / static_cast<float>(a.size());
    auto out = make_node({1}, {acc * inv});
    auto an = a.node();
    record(out, {an}, [an, inv](Node& self) {
        an->ensure_grad();
        const float g = self.grad[0] * inv;
        for (auto& gv : an->grad) gv += g;
    });
    return wrap(out);
}

// ---- softmax ----

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    const std::int64_t len = x.shape()[static_cast<std::size_t>(axis)];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];

    std::vector<float> v = x.data();
    if (inner == 1) {
        kernels::softmax_rows(v.data(), static_cast<std::size_t>(outer),
                              static_cast<std::size_t>(len));
    } else {
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                float* base = v.data() + o * len * inner + in;
                float mx = base[0];
                for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, base[j * inner]);
                float s = 0.f;
                for (std::int64_t j = 0; j < len; ++j) {
                    base[j * inner] = std::exp(base[j * inner] - mx);
                    s += base[j * inner];
                }
                const float invs = 1.f / s;
                for (std::int64_t j = 0; j < len; ++j) base[j * inner] *= invs;
            }
    }
    auto out = make_node(x.shape(), std::move(v));
    auto xn = x.node();
    auto on = out;
    record(out, {xn}, [xn, on, outer, len, inner](Node& self) {
        xn->ensure_grad();
        const float* y = on->value.data();
        const float* dy = self.grad.data();
        float* dx = xn->grad.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * len * inner + in;
                float dot = 0.f;
                for (std::int64_t j = 0; j < len; ++j)
                    dot += dy[base + j * inner] * y[base + j * inner];
                for (std::int64_t j = 0; j < len; ++j) {
                    const std::int64_t idx = base + j * inner;
                    dx[idx] += y[idx] * (dy[idx] - dot);
                }
            }
    });
    return wrap(out);
}

// ---- layernorm ----

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const std::int64_t cols = x.dim(-1);
    if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
        throw ShapeError("layernorm gain/bias must match last dim " + std::to_string(cols));
    const std::int64_t rows = x.size() / cols;
    std::vector<float> y(x.size());
    auto mean_buf = std::make_shared<std::vector<float>>(rows);
    auto istd_buf = std::make_shared<std::vector<float>>(rows);
    kernels::layernorm_rows(x.data().data(), gain.data().data(), bias.data().data(), y.data(),
                            mean_buf->data(), istd_buf->data(), static_cast<std::size_t>(rows),
                            static_cast<std::size_t>(cols), eps);
    auto out = make_node(x.shape(), std::move(y));
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    record(out, {xn, gn, bn}, [xn, gn, bn, mean_buf, istd_buf, rows, cols](Node& self) {
        const float* dy = self.grad.data();
        const float* xv = xn->value.data();
        const float* gv = gn->value.data();
        const float inv_c = 1.f / static_cast<float>(cols);
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
            const float mu = (*mean_buf)[i];
            const float istd = (*istd_buf)[i];
            const float* xr = xv + i * cols;
            const float* dyr = dy + i * cols;
            if (gn->requires_grad || bn->requires_grad) {
                for (std::int64_t j = 0; j < cols; ++j) {
                    const float xh = (xr[j] - mu) * istd;
                    if (gn->requires_grad) gn->grad[j] += dyr[j] * xh;
                    if (bn->requires_grad) bn->grad[j] += dyr[j];
                }
            }
            if (xn->requires_grad) {
                float sum_dxh = 0.f, sum_dxh_xh = 0.f;
                for (std::int64_t j = 0; j < cols; ++j) {
                    const float xh = (xr[j] - mu) * istd;
                    const float dxh = dyr[j] * gv[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                }
                float* dxr = xn->grad.data() + i * cols;
                for (std::int64_t j = 0; j < cols; ++j) {
                    const float xh = (xr[j] - mu) * istd;
                    const float dxh = dyr[j] * gv[j];
                    dxr[j] += istd * (dxh - inv_c * sum_dxh - xh * inv_c * sum_dxh_xh);
                }
            }
        }
    });
    return wrap(out);
}

// ---- activations ----

Tensor gelu(const Tensor& x) {
    std::vector<float> y(x.size());
    kernels::gelu(x.data().data(), y.data(), static_cast<std::size_t>(x.size()));
    auto out = make_node(x.shape(), std::move(y));
    auto xn = x.node();
    record(out, {xn}, [xn](Node& self) {
        xn->ensure_grad();
        constexpr float inv_sqrt2 = 0.70710678f;
        constexpr float inv_sqrt2pi = 0.3989422804f;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float v = xn->value[i];
            const float cdf = 0.5f * (1.f + std::erff(v * inv_sqrt2));
            const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
            xn->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
    return wrap(out);
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> y(x.size());
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x.data()[i]);
    auto out = make_node(x.shape(), std::move(y));
    auto xn = x.node();
    auto on = out;
    record(out, {xn}, [xn, on](Node& self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float s = on->value[i];
            xn->grad[i] += self.grad[i] * s * (1.f - s);
        }
    });
    return wrap(out);
}

// ---- embedding ----

Tensor embedding(const Tensor& table, const std::vector<std::int32_t>& ids,
                 const std::vector<std::int64_t>& id_shape) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2");
    const std::int64_t vocab = table.dim(0);
    const std::int64_t h = table.dim(1);
    if (shape_size(id_shape) != static_cast<std::int64_t>(ids.size()))
        throw ShapeError("id shape does not match id count");
    for (auto id : ids)
        if (id < 0 || id >= vocab)
            throw VocabError("token id " + std::to_string(id) + " outside table of size " +
                             std::to_string(vocab));
    std::vector<std::int64_t> out_shape = id_shape;
    out_shape.push_back(h);
    std::vector<float> v(ids.size() * h);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data().data() + static_cast<std::int64_t>(ids[i]) * h, h,
                    v.data() + static_cast<std::int64_t>(i) * h);
    auto out = make_node(std::move(out_shape), std::move(v));
    auto tn = table.node();
    auto ids_copy = ids;
    record(out, {tn}, [tn, ids_copy, h](Node& self) {
        tn->ensure_grad();
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
            float* dst = tn->grad.data() + static_cast<std::int64_t>(ids_copy[i]) * h;
            const float* src = self.grad.data() + static_cast<std::int64_t>(i) * h;
            for (std::int64_t j = 0; j < h; ++j) dst[j] += src[j];
        }
    });
    return wrap(out);
}

// ---- shape ops ----

Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t count) {
    if (x.rank() < 2) throw ShapeError("slice_rows needs rank >= 2");
    const std::int64_t rows = x.dim(-2);
    const std::int64_t cols = x.dim(-1);
    if (start < 0 || count < 0 || start + count > rows)
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") outside " + std::to_string(rows) + " rows");
    const std::int64_t batch = x.size() / (rows * cols);
    std::vector<std::int64_t> out_shape = x.shape();
    out_shape[out_shape.size() - 2] = count;
    std::vector<float> v(batch * count * cols);
    for (std::int64_t b = 0; b < batch; ++b)
        std::copy_n(x.data().data() + (b * rows + start) * cols, count * cols,
                    v.data() + b * count * cols);
    auto out = make_node(std::move(out_shape), std::move(v));
    auto xn = x.node();
    record(out, {xn}, [xn, start, count, rows, cols, batch](Node& self) {
        xn->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b) {
            float* dst = xn->grad.data() + (b * rows + start) * cols;
            const float* src = self.grad.data() + b * count * cols;
            for (std::int64_t i = 0; i < count * cols; ++i) dst[i] += src[i];
        }
    });
    return wrap(out);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 2) throw ShapeError("concat_rows rank mismatch");
    if (a.dim(-1) != b.dim(-1))
        throw ShapeError("concat_rows column mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (int i = 0; i < a.rank() - 2; ++i)
        if (a.dim(i) != b.dim(i)) throw ShapeError("concat_rows batch mismatch");
    const std::int64_t cols = a.dim(-1);
    const std::int64_t ra = a.dim(-2), rb = b.dim(-2);
    const std::int64_t batch = a.size() / (ra * cols);
    std::vector<std::int64_t> out_shape = a.shape();
    out_shape[out_shape.size() - 2] = ra + rb;
    std::vector<float> v(batch * (ra + rb) * cols);
    for (std::int64_t i = 0; i < batch; ++i) {
        std::copy_n(a.data().data() + i * ra * cols, ra * cols,
                    v.data() + i * (ra + rb) * cols);
        std::copy_n(b.data().data() + i * rb * cols, rb * cols,
                    v.data() + i * (ra + rb) * cols + ra * cols);
    }
    auto out = make_node(std::move(out_shape), std::move(v));
    auto an = a.node(), bn = b.node();
    record(out, {an, bn}, [an, bn, ra, rb, cols, batch](Node& self) {
        for (std::int64_t i = 0; i < batch; ++i) {
            const float* g = self.grad.data() + i * (ra + rb) * cols;
            if (an->requires_grad) {
                an->ensure_grad();
                float* dst = an->grad.data() + i * ra * cols;
                for (std::int64_t j = 0; j < ra * cols; ++j) dst[j] += g[j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                float* dst = bn->grad.data() + i * rb * cols;
                for (std::int64_t j = 0; j < rb * cols; ++j) dst[j] += g[ra * cols + j];
            }
        }
    });
    return wrap(out);
}

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape) {
    if (shape_size(shape) != x.size())
        throw ShapeError("reshape to " + shape_str(shape) + " changes size of " +
                         shape_str(x.shape()));
    auto out = make_node(std::move(shape), x.data());
    auto xn = x.node();
    record(out, {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
    return wrap(out);
}

Tensor split_heads(const Tensor& x, int num_heads) {
    if (x.rank() != 3) throw ShapeError("split_heads needs [B,S,H]");
    const std::int64_t b = x.dim(0), s = x.dim(1), h = x.dim(2);
    if (h % num_heads != 0) throw ShapeError("hidden size not divisible by heads");
    const std::int64_t dh = h / num_heads;
    std::vector<float> v(x.size());
    const float* src = x.data().data();
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < s; ++t)
            for (std::int64_t hd = 0; hd < num_heads; ++hd)
                std::copy_n(src + (i * s + t) * h + hd * dh, dh,
                            v.data() + (((i * num_heads + hd) * s) + t) * dh);
    auto out = make_node({b * num_heads, s, dh}, std::move(v));
    auto xn = x.node();
    record(out, {xn}, [xn, b, s, h, dh, num_heads](Node& self) {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < b; ++i)
            for (std::int64_t t = 0; t < s; ++t)
                for (std::int64_t hd = 0; hd < num_heads; ++hd) {
                    const float* g = self.grad.data() + (((i * num_heads + hd) * s) + t) * dh;
                    float* dst = xn->grad.data() + (i * s + t) * h + hd * dh;
                    for (std::int64_t j = 0; j < dh; ++j) dst[j] += g[j];
                }
    });
    return wrap(out);
}

Tensor join_heads(const Tensor& x, int num_heads) {
    if (x.rank() != 3) throw ShapeError("join_heads needs [B*nh,S,dh]");
    const std::int64_t bh = x.dim(0), s = x.dim(1), dh = x.dim(2);
    if (bh % num_heads != 0) throw ShapeError("batch not divisible by heads");
    const std::int64_t b = bh / num_heads;
    const std::int64_t h = dh * num_heads;
    std::vector<float> v(x.size());
    const float* src = x.data().data();
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t hd = 0; hd < num_heads; ++hd)
            for (std::int64_t t = 0; t < s; ++t)
                std::copy_n(src + (((i * num_heads + hd) * s) + t) * dh, dh,
                            v.data() + (i * s + t) * h + hd * dh);
    auto out = make_node({b, s, h}, std::move(v));
    auto xn = x.node();
    record(out, {xn}, [xn, b, s, h, dh, num_heads](Node& self) {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < b; ++i)
            for (std::int64_t hd = 0; hd < num_heads; ++hd)
                for (std::int64_t t = 0; t < s; ++t) {
                    const float* g = self.grad.data() + (i * s + t) * h + hd * dh;
                    float* dst = xn->grad.data() + (((i * num_heads + hd) * s) + t) * dh;
                    for (std::int64_t j = 0; j < dh; ++j) dst[j] += g[j];
                }
    });
    return wrap(out);
}

Tensor add_key_mask(const Tensor& scores, const std::vector<std::uint8_t>& mask, int num_heads) {
    if (scores.rank() != 3) throw ShapeError("add_key_mask needs [B*nh,Sq,Sk]");
    const std::int64_t g = scores.dim(0), sq = scores.dim(1), sk = scores.dim(2);
    if (g % num_heads != 0) throw ShapeError("group count not divisible by heads");
    const std::int64_t b = g / num_heads;
    if (static_cast<std::int64_t>(mask.size()) != b * sk)
        throw ShapeError("mask size " + std::to_string(mask.size()) + " != batch*keys");
    constexpr float kNegInf = -1e9f;
    std::vector<float> v = scores.data();
    for (std::int64_t gi = 0; gi < g; ++gi) {
        const std::uint8_t* mrow = mask.data() + (gi / num_heads) * sk;
        for (std::int64_t q = 0; q < sq; ++q) {
            float* row = v.data() + (gi * sq + q) * sk;
            for (std::int64_t k = 0; k < sk; ++k)
                if (!mrow[k]) row[k] += kNegInf;
        }
    }
    auto out = make_node(scores.shape(), std::move(v));
    auto sn = scores.node();
    record(out, {sn}, [sn](Node& self) {
        sn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) sn->grad[i] += self.grad[i];
    });
    return wrap(out);
}

// ---- fused scoring ops ----

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "cosine_rows");
    if (a.rank() != 2) throw ShapeError("cosine_rows needs [B,D]");
    const std::int64_t rows = a.dim(0), d = a.dim(1);
    constexpr float kTiny = 1e-12f;
    std::vector<float> v(rows);
    for (std::int64_t i = 0; i < rows; ++i) {
        const float* x = a.data().data() + i * d;
        const float* y = b.data().data() + i * d;
        float dot = 0.f, nx = 0.f, ny = 0.f;
        for (std::int64_t j = 0; j < d; ++j) {
            dot += x[j] * y[j];
            nx += x[j] * x[j];
            ny += y[j] * y[j];
        }
        // Zero-norm convention: score 0.
        v[i] = (nx < kTiny || ny < kTiny) ? 0.f : dot / (std::sqrt(nx) * std::sqrt(ny));
    }
    auto out = make_node({rows}, std::move(v));
    auto an = a.node(), bn = b.node();
    auto on = out;
    record(out, {an, bn}, [an, bn, on, rows, d](Node& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
            const float* x = an->value.data() + i * d;
            const float* y = bn->value.data() + i * d;
            float nx = 0.f, ny = 0.f;
            for (std::int64_t j = 0; j < d; ++j) {
                nx += x[j] * x[j];
                ny += y[j] * y[j];
            }
            if (nx < kTiny || ny < kTiny) continue;
            const float inx = 1.f / std::sqrt(nx), iny = 1.f / std::sqrt(ny);
            const float c = on->value[i];
            const float g = self.grad[i];
            for (std::int64_t j = 0; j < d; ++j) {
                if (an->requires_grad) an->grad[i * d + j] += g * (y[j] * inx * iny - c * x[j] / nx);
                if (bn->requires_grad) bn->grad[i * d + j] += g * (x[j] * inx * iny - c * y[j] / ny);
            }
        }
    });
    return wrap(out);
}

Tensor bce_with_logits(const Tensor& z, const std::vector<float>& y) {
    if (static_cast<std::int64_t>(y.size()) != z.size())
        throw ShapeError("label count " + std::to_string(y.size()) + " != logit count " +
                         std::to_string(z.size()));
    for (float yi : y)
        if (!(yi >= 0.f && yi <= 1.f))
            throw ContractError("label " + std::to_string(yi) + " outside [0,1]");
    constexpr float kClamp = 1e-7f;
    std::vector<float> v(z.size());
    std::vector<float> p(z.size());
    for (std::int64_t i = 0; i < z.size(); ++i) {
        p[i] = stable_sigmoid(z.data()[i]);
        const float pc = std::clamp(p[i], kClamp, 1.f - kClamp);
        v[i] = -(y[i] * std::log(pc) + (1.f - y[i]) * std::log(1.f - pc));
    }
    auto out = make_node(z.shape(), std::move(v));
    auto zn = z.node();
    auto y_copy = y;
    auto p_copy = std::make_shared<std::vector<float>>(std::move(p));
    record(out, {zn}, [zn, y_copy, p_copy](Node& self) {
        zn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float pi = (*p_copy)[i];
            // Inside the clamp band the loss is constant in z.
            if (pi < kClamp || pi > 1.f - kClamp) continue;
            zn->grad[i] += self.grad[i] * (pi - y_copy[i]);
        }
    });
    return wrap(out);
}

}  // namespace dipair
