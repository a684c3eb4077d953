#pragma once

// Tape-free reverse-mode differentiation over dense tensors.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that pushes the upstream gradient into its inputs.
// Calling backward() on a scalar walks the graph in reverse topological order.
// Leaves with requires_grad == false never receive gradient; subgraphs that
// only depend on such leaves skip their backward closures entirely.

#include "stainfocus/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace stainfocus::ad {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
    [[nodiscard]] bool has_grad() const noexcept { return !grad.empty(); }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    [[nodiscard]] const Tensor& value() const { return node_->value; }
    [[nodiscard]] Tensor& mutable_value() { return node_->value; }
    [[nodiscard]] const std::vector<int>& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    [[nodiscard]] bool has_grad() const { return node_->has_grad(); }
    // Gradient accumulated by backward(); zeros when none has arrived.
    [[nodiscard]] Tensor grad() const;
    void zero_grad() { node_->grad = Tensor(); }

    [[nodiscard]] Node* node() const noexcept { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node>& shared() const noexcept { return node_; }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

// While alive on this thread, ops record no backward closures (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
[[nodiscard]] bool grad_enabled() noexcept;

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

// Seeds d(root)/d(root) = 1 and propagates. root must hold a single element.
void backward(const Var& root);

// ---- elementwise ---------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var shift(const Var& a, double offset);
Var mul_scalar(const Var& a, const Var& s);  // s holds one element
Var gelu(const Var& a);
Var exp(const Var& a);
Var clamp_max(const Var& a, double upper);

// ---- matrix --------------------------------------------------------------
Var matmul(const Var& a, const Var& b);     // [m,k]·[k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k]·[n,k]^T
// x[n,in]·W[in,out] + bias[out]; bias may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias);
// x[N*T, d] + p[T, d] applied to each of the N blocks.
Var add_tiled(const Var& x, const Var& p);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& x);
Var softmax_rows(const Var& x);

// ---- structure -----------------------------------------------------------
Var reshape(const Var& x, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& x, int begin, int count);
Var gather_rows(const Var& x, const std::vector<int>& rows);
Var repeat_rows(const Var& x, int times);
Var mean_rows(const Var& x);
// full[B, blocks*width] -> out[B, width], row b taking block ids[b].
Var gather_blocks(const Var& full, const std::vector<int>& ids, int width);
Var sum_all(const Var& x);

// ---- sequence / image ----------------------------------------------------
// q,k,v: [N*T, d]; heads must divide d. Causal masks positions j > i.
Var attention(const Var& q, const Var& k, const Var& v, int sequences, int length, int heads, bool causal);
// x[B,C,H,W], weight[O,C,k,k], bias[O].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var global_avg_pool(const Var& x);  // [B,C,H,W] -> [B,C]

// ---- losses --------------------------------------------------------------
// mean over rows of -sum_k target[b,k] * log softmax(logits)[b,k]
Var soft_cross_entropy(const Var& logits, const Tensor& targets);
// mean over rows of sum over columns of binary cross-entropy with logits
Var binary_cross_entropy_logits(const Var& logits, const Tensor& targets);

}  // namespace stainfocus::ad
