#include "stainfocus/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>

namespace stainfocus::ad {

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Tensor Var::grad() const {
    if (node_->has_grad()) return node_->grad;
    return Tensor(node_->value.shape(), 0.0);
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

namespace {

using Backward = std::function<void(Node&)>;

Var make(Tensor value, std::vector<Var> inputs, Backward bw) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.shared());
        node->backward = std::move(bw);
    }
    return Var(std::move(node));
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i] && n.inputs[i]->requires_grad; }
Tensor& gin(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }
const Tensor& vin(const Node& n, std::size_t i) { return n.inputs[i]->value; }

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

void require_same(const Var& a, const Var& b, const char* op) {
    require(a.value().same_shape(b.value()),
            std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " + b.value().shape_string());
}

void add_into(Tensor& dst, const Tensor& src, double factor = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    require(root.value().size() == 1, "backward: root must be a scalar, got " + root.value().shape_string());

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->has_grad()) node->backward(*node);
    }
}

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    add_into(out, b.value());
    return make(std::move(out), {a, b}, [](Node& n) {
        if (wants(n, 0)) add_into(gin(n, 0), n.grad);
        if (wants(n, 1)) add_into(gin(n, 1), n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    add_into(out, b.value(), -1.0);
    return make(std::move(out), {a, b}, [](Node& n) {
        if (wants(n, 0)) add_into(gin(n, 0), n.grad);
        if (wants(n, 1)) add_into(gin(n, 1), n.grad, -1.0);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = vin(n, 0);
        const Tensor& bv = vin(n, 1);
        if (wants(n, 0)) {
            Tensor& g = gin(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (wants(n, 1)) {
            Tensor& g = gin(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& x : out.values()) x *= factor;
    return make(std::move(out), {a}, [factor](Node& n) { add_into(gin(n, 0), n.grad, factor); });
}

Var shift(const Var& a, double offset) {
    Tensor out = a.value();
    for (auto& x : out.values()) x += offset;
    return make(std::move(out), {a}, [](Node& n) { add_into(gin(n, 0), n.grad); });
}

Var mul_scalar(const Var& a, const Var& s) {
    require(s.value().size() == 1, "mul_scalar: scale must hold one element");
    const double k = s.value()[0];
    Tensor out = a.value();
    for (auto& x : out.values()) x *= k;
    return make(std::move(out), {a, s}, [](Node& n) {
        const double kk = vin(n, 1)[0];
        if (wants(n, 0)) add_into(gin(n, 0), n.grad, kk);
        if (wants(n, 1)) {
            const Tensor& av = vin(n, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < av.size(); ++i) acc += n.grad[i] * av[i];
            gin(n, 1)[0] += acc;
        }
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
    Tensor out = a.value();
    for (auto& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    return make(std::move(out), {a}, [](Node& n) {
        const Tensor& x = vin(n, 0);
        Tensor& g = gin(n, 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            g[i] += n.grad[i] * d;
        }
    });
}

Var exp(const Var& a) {
    Tensor out = a.value();
    for (auto& x : out.values()) x = std::exp(x);
    return make(std::move(out), {a}, [](Node& n) {
        Tensor& g = gin(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

Var clamp_max(const Var& a, double upper) {
    Tensor out = a.value();
    for (auto& x : out.values()) x = std::min(x, upper);
    return make(std::move(out), {a}, [upper](Node& n) {
        const Tensor& x = vin(n, 0);
        Tensor& g = gin(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] <= upper) g[i] += n.grad[i];
    });
}

// ---- matrix --------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.cols() == bv.rows(), "matmul: inner dimensions differ " + av.shape_string() + " vs " + bv.shape_string());
    Tensor out({av.rows(), bv.cols()});
    out.matrix().noalias() = av.matrix() * bv.matrix();
    return make(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        if (wants(n, 0)) gin(n, 0).matrix().noalias() += g.matrix() * vin(n, 1).matrix().transpose();
        if (wants(n, 1)) gin(n, 1).matrix().noalias() += vin(n, 0).matrix().transpose() * g.matrix();
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ " + av.shape_string() + " vs " + bv.shape_string());
    Tensor out({av.rows(), bv.rows()});
    out.matrix().noalias() = av.matrix() * bv.matrix().transpose();
    return make(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        if (wants(n, 0)) gin(n, 0).matrix().noalias() += g.matrix() * vin(n, 1).matrix();
        if (wants(n, 1)) gin(n, 1).matrix().noalias() += g.matrix().transpose() * vin(n, 0).matrix();
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require(xv.cols() == wv.rows(), "linear: input width " + std::to_string(xv.cols()) + " vs weight " + wv.shape_string());
    Tensor out({xv.rows(), wv.cols()});
    out.matrix().noalias() = xv.matrix() * wv.matrix();
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) {
        require(static_cast<int>(bias.value().size()) == wv.cols(), "linear: bias size mismatch");
        auto m = out.matrix();
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) m(r, c) += bias.value()[static_cast<std::size_t>(c)];
    }
    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make(std::move(out), std::move(inputs), [](Node& n) {
        const Tensor& g = n.grad;
        if (wants(n, 0)) gin(n, 0).matrix().noalias() += g.matrix() * vin(n, 1).matrix().transpose();
        if (wants(n, 1)) gin(n, 1).matrix().noalias() += vin(n, 0).matrix().transpose() * g.matrix();
        if (n.inputs.size() > 2 && wants(n, 2)) {
            Tensor& gb = gin(n, 2);
            const auto gm = g.matrix();
            for (int r = 0; r < gm.rows(); ++r)
                for (int c = 0; c < gm.cols(); ++c) gb[static_cast<std::size_t>(c)] += gm(r, c);
        }
    });
}

Var add_tiled(const Var& x, const Var& p) {
    const Tensor& xv = x.value();
    const Tensor& pv = p.value();
    require(xv.cols() == pv.cols() && pv.rows() > 0 && xv.rows() % pv.rows() == 0,
            "add_tiled: incompatible shapes " + xv.shape_string() + " and " + pv.shape_string());
    Tensor out = xv;
    const std::size_t block = pv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i % block];
    return make(std::move(out), {x, p}, [block](Node& n) {
        if (wants(n, 0)) add_into(gin(n, 0), n.grad);
        if (wants(n, 1)) {
            Tensor& gp = gin(n, 1);
            for (std::size_t i = 0; i < n.grad.size(); ++i) gp[i % block] += n.grad[i];
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    const int d = xv.cols();
    require(static_cast<int>(gamma.value().size()) == d && static_cast<int>(beta.value().size()) == d,
            "layer_norm: affine size mismatch");
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) {
        const double* row = xv.data() + static_cast<std::ptrdiff_t>(r) * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += row[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (int c = 0; c < d; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * d + c;
            (*xhat)[i] = (row[c] - mean) * is;
            out[i] = (*xhat)[i] * gamma.value()[static_cast<std::size_t>(c)] + beta.value()[static_cast<std::size_t>(c)];
        }
    }
    return make(std::move(out), {x, gamma, beta}, [xhat, inv_std, rows, d](Node& n) {
        const Tensor& g = n.grad;
        const Tensor& gm = vin(n, 1);
        if (wants(n, 1) || wants(n, 2)) {
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < d; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * d + c;
                    if (wants(n, 1)) gin(n, 1)[static_cast<std::size_t>(c)] += g[i] * (*xhat)[i];
                    if (wants(n, 2)) gin(n, 2)[static_cast<std::size_t>(c)] += g[i];
                }
        }
        if (wants(n, 0)) {
            Tensor& gx = gin(n, 0);
            std::vector<double> dxhat(static_cast<std::size_t>(d));
            for (int r = 0; r < rows; ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (int c = 0; c < d; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * d + c;
                    dxhat[static_cast<std::size_t>(c)] = g[i] * gm[static_cast<std::size_t>(c)];
                    mean_d += dxhat[static_cast<std::size_t>(c)];
                    mean_dx += dxhat[static_cast<std::size_t>(c)] * (*xhat)[i];
                }
                mean_d /= d;
                mean_dx /= d;
                const double is = (*inv_std)[static_cast<std::size_t>(r)];
                for (int c = 0; c < d; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * d + c;
                    gx[i] += is * (dxhat[static_cast<std::size_t>(c)] - mean_d - (*xhat)[i] * mean_dx);
                }
            }
        }
    });
}

Var l2_normalize_rows(const Var& x) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    const int d = xv.cols();
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    Tensor out = xv;
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += xv[static_cast<std::size_t>(r) * d + c] * xv[static_cast<std::size_t>(r) * d + c];
        const double nrm = std::max(std::sqrt(s), 1e-12);
        (*norms)[static_cast<std::size_t>(r)] = nrm;
        for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(r) * d + c] /= nrm;
    }
    return make(std::move(out), {x}, [norms, rows, d](Node& n) {
        Tensor& gx = gin(n, 0);
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += n.value[static_cast<std::size_t>(r) * d + c] * n.grad[static_cast<std::size_t>(r) * d + c];
            const double nrm = (*norms)[static_cast<std::size_t>(r)];
            for (int c = 0; c < d; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * d + c;
                gx[i] += (n.grad[i] - n.value[i] * dot) / nrm;
            }
        }
    });
}

namespace {
void softmax_row(const double* in, double* out, int n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) mx = std::max(mx, in[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        s += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= s;
}
}  // namespace

Var softmax_rows(const Var& x) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    const int d = xv.cols();
    Tensor out(xv.shape());
    for (int r = 0; r < rows; ++r) softmax_row(xv.data() + static_cast<std::ptrdiff_t>(r) * d, out.data() + static_cast<std::ptrdiff_t>(r) * d, d);
    return make(std::move(out), {x}, [rows, d](Node& n) {
        Tensor& gx = gin(n, 0);
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += n.grad[static_cast<std::size_t>(r) * d + c] * n.value[static_cast<std::size_t>(r) * d + c];
            for (int c = 0; c < d; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * d + c;
                gx[i] += n.value[i] * (n.grad[i] - dot);
            }
        }
    });
}

// ---- structure -----------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make(std::move(out), {x}, [](Node& n) { add_into(gin(n, 0), n.grad); });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no parts");
    const int cols = parts.front().value().cols();
    int rows = 0;
    for (const auto& p : parts) {
        require(p.value().cols() == cols, "concat_rows: column mismatch " + p.value().shape_string());
        rows += p.value().rows();
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
        offset += p.value().size();
    }
    return make(std::move(out), parts, [](Node& n) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const std::size_t sz = n.inputs[i]->value.size();
            if (wants(n, i)) {
                Tensor& g = gin(n, i);
                for (std::size_t j = 0; j < sz; ++j) g[j] += n.grad[off + j];
            }
            off += sz;
        }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rows() == bv.rows(), "concat_cols: row mismatch");
    const int p = av.cols();
    const int q = bv.cols();
    Tensor out({av.rows(), p + q});
    out.matrix().leftCols(p) = av.matrix();
    out.matrix().rightCols(q) = bv.matrix();
    return make(std::move(out), {a, b}, [p, q](Node& n) {
        if (wants(n, 0)) gin(n, 0).matrix() += n.grad.matrix().leftCols(p);
        if (wants(n, 1)) gin(n, 1).matrix() += n.grad.matrix().rightCols(q);
    });
}

Var slice_rows(const Var& x, int begin, int count) {
    const Tensor& xv = x.value();
    require(begin >= 0 && count >= 0 && begin + count <= xv.rows(), "slice_rows: range out of bounds");
    const int cols = xv.cols();
    Tensor out({count, cols});
    const std::size_t off = static_cast<std::size_t>(begin) * cols;
    std::copy(xv.data() + off, xv.data() + off + out.size(), out.data());
    return make(std::move(out), {x}, [off](Node& n) {
        Tensor& g = gin(n, 0);
        for (std::size_t j = 0; j < n.grad.size(); ++j) g[off + j] += n.grad[j];
    });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
    const Tensor& xv = x.value();
    const int cols = xv.cols();
    Tensor out({static_cast<int>(rows.size()), cols});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r] >= 0 && rows[r] < xv.rows(), "gather_rows: index out of range");
        std::copy_n(xv.data() + static_cast<std::ptrdiff_t>(rows[r]) * cols, cols, out.data() + r * cols);
    }
    return make(std::move(out), {x}, [rows, cols](Node& n) {
        Tensor& g = gin(n, 0);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(rows[r]) * cols + c] += n.grad[r * cols + c];
    });
}

Var repeat_rows(const Var& x, int times) {
    const Tensor& xv = x.value();
    require(times >= 1, "repeat_rows: times must be positive");
    Tensor out({xv.rows() * times, xv.cols()});
    for (int t = 0; t < times; ++t) std::copy(xv.data(), xv.data() + xv.size(), out.data() + t * xv.size());
    return make(std::move(out), {x}, [](Node& n) {
        Tensor& g = gin(n, 0);
        const std::size_t block = g.size();
        for (std::size_t j = 0; j < n.grad.size(); ++j) g[j % block] += n.grad[j];
    });
}

Var mean_rows(const Var& x) {
    const Tensor& xv = x.value();
    const int rows = xv.rows();
    require(rows > 0, "mean_rows: empty input");
    Tensor out({1, xv.cols()});
    out.matrix() = xv.matrix().colwise().sum() / static_cast<double>(rows);
    return make(std::move(out), {x}, [rows](Node& n) {
        auto g = gin(n, 0).matrix();
        for (int r = 0; r < rows; ++r) g.row(r) += n.grad.matrix().row(0) / static_cast<double>(rows);
    });
}

Var gather_blocks(const Var& full, const std::vector<int>& ids, int width) {
    const Tensor& fv = full.value();
    require(static_cast<int>(ids.size()) == fv.rows(), "gather_blocks: one block id per row required");
    require(width > 0 && fv.cols() % width == 0, "gather_blocks: width does not divide columns");
    const int blocks = fv.cols() / width;
    Tensor out({fv.rows(), width});
    for (int r = 0; r < fv.rows(); ++r) {
        require(ids[static_cast<std::size_t>(r)] >= 0 && ids[static_cast<std::size_t>(r)] < blocks, "gather_blocks: block id out of range");
        out.matrix().row(r) = fv.matrix().row(r).segment(ids[static_cast<std::size_t>(r)] * width, width);
    }
    return make(std::move(out), {full}, [ids, width](Node& n) {
        auto g = gin(n, 0).matrix();
        for (int r = 0; r < g.rows(); ++r) g.row(r).segment(ids[static_cast<std::size_t>(r)] * width, width) += n.grad.matrix().row(r);
    });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make(Tensor::scalar(s), {x}, [](Node& n) {
        Tensor& g = gin(n, 0);
        for (auto& v : g.values()) v += n.grad[0];
    });
}

// ---- sequence / image ----------------------------------------------------

Var attention(const Var& q, const Var& k, const Var& v, int sequences, int length, int heads, bool causal) {
    require_same(q, k, "attention");
    require_same(q, v, "attention");
    const int d = q.value().cols();
    require(q.value().rows() == sequences * length, "attention: rows must equal sequences * length");
    require(heads > 0 && d % heads == 0, "attention: heads must divide width");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(sequences * heads));
    Tensor out(q.value().shape());
    const auto qm = q.value().matrix();
    const auto km = k.value().matrix();
    const auto vm = v.value().matrix();
    auto om = out.matrix();
    for (int s = 0; s < sequences; ++s) {
        for (int h = 0; h < heads; ++h) {
            RowMatrix scores = (qm.block(s * length, h * dh, length, dh) * km.block(s * length, h * dh, length, dh).transpose()) * sc;
            for (int i = 0; i < length; ++i) {
                const int visible = causal ? i + 1 : length;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < visible; ++j) mx = std::max(mx, scores(i, j));
                double sum = 0.0;
                for (int j = 0; j < length; ++j) {
                    scores(i, j) = j < visible ? std::exp(scores(i, j) - mx) : 0.0;
                    sum += scores(i, j);
                }
                scores.row(i) /= sum;
            }
            om.block(s * length, h * dh, length, dh).noalias() = scores * vm.block(s * length, h * dh, length, dh);
            (*probs)[static_cast<std::size_t>(s * heads + h)] = std::move(scores);
        }
    }
    return make(std::move(out), {q, k, v}, [probs, sequences, length, heads, dh, sc](Node& n) {
        const auto qv = vin(n, 0).matrix();
        const auto kv = vin(n, 1).matrix();
        const auto vv = vin(n, 2).matrix();
        const auto g = n.grad.matrix();
        const bool gq = wants(n, 0);
        const bool gk = wants(n, 1);
        const bool gv = wants(n, 2);
        for (int s = 0; s < sequences; ++s) {
            for (int h = 0; h < heads; ++h) {
                const RowMatrix& p = (*probs)[static_cast<std::size_t>(s * heads + h)];
                const auto go = g.block(s * length, h * dh, length, dh);
                if (gv) gin(n, 2).matrix().block(s * length, h * dh, length, dh).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                RowMatrix dp = go * vv.block(s * length, h * dh, length, dh).transpose();
                for (int i = 0; i < length; ++i) {
                    const double dot = dp.row(i).dot(p.row(i));
                    dp.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
                }
                if (gq) gin(n, 0).matrix().block(s * length, h * dh, length, dh).noalias() += (dp * kv.block(s * length, h * dh, length, dh)) * sc;
                if (gk) gin(n, 1).matrix().block(s * length, h * dh, length, dh).noalias() += (dp.transpose() * qv.block(s * length, h * dh, length, dh)) * sc;
            }
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expects 4-D input and weight");
    const int batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
    const int outc = wv.dim(0), ksize = wv.dim(2);
    require(wv.dim(1) == channels && wv.dim(3) == ksize, "conv2d: weight shape " + wv.shape_string() + " incompatible with input " + xv.shape_string());
    require(static_cast<int>(bias.value().size()) == outc, "conv2d: bias size mismatch");
    require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
    const int oh = (height + 2 * padding - ksize) / stride + 1;
    const int ow = (width + 2 * padding - ksize) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d: input too small for kernel");

    const int patch = channels * ksize * ksize;
    const int ncols = batch * oh * ow;
    auto cols = std::make_shared<RowMatrix>(patch, ncols);
    cols->setZero();
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < ksize; ++ky)
            for (int kx = 0; kx < ksize; ++kx) {
                const int row = (c * ksize + ky) * ksize + kx;
                double* dst = cols->data() + static_cast<std::ptrdiff_t>(row) * ncols;
                for (int b = 0; b < batch; ++b) {
                    const double* src = xv.data() + (static_cast<std::ptrdiff_t>(b) * channels + c) * height * width;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= height) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= width) continue;
                            dst[(b * oh + oy) * ow + ox] = src[iy * width + ix];
                        }
                    }
                }
            }

    const ConstMatrixMap w2(wv.data(), outc, patch);
    RowMatrix out2 = w2 * (*cols);
    Tensor out({batch, outc, oh, ow});
    for (int b = 0; b < batch; ++b)
        for (int o = 0; o < outc; ++o) {
            const double bo = bias.value()[static_cast<std::size_t>(o)];
            double* dst = out.data() + (static_cast<std::ptrdiff_t>(b) * outc + o) * oh * ow;
            const double* src = out2.data() + static_cast<std::ptrdiff_t>(o) * ncols + static_cast<std::ptrdiff_t>(b) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) dst[i] = src[i] + bo;
        }

    return make(std::move(out), {x, weight, bias},
                [cols, batch, channels, height, width, outc, ksize, oh, ow, stride, padding, patch, ncols](Node& n) {
        RowMatrix g2(outc, ncols);
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < outc; ++o) {
                const double* src = n.grad.data() + (static_cast<std::ptrdiff_t>(b) * outc + o) * oh * ow;
                std::copy_n(src, oh * ow, g2.data() + static_cast<std::ptrdiff_t>(o) * ncols + static_cast<std::ptrdiff_t>(b) * oh * ow);
            }
        if (wants(n, 1)) {
            MatrixMap gw(gin(n, 1).data(), outc, patch);
            gw.noalias() += g2 * cols->transpose();
        }
        if (wants(n, 2)) {
            Tensor& gb = gin(n, 2);
            for (int o = 0; o < outc; ++o) gb[static_cast<std::size_t>(o)] += g2.row(o).sum();
        }
        if (wants(n, 0)) {
            const ConstMatrixMap w2(vin(n, 1).data(), outc, patch);
            RowMatrix dcols = w2.transpose() * g2;
            Tensor& gx = gin(n, 0);
            for (int c = 0; c < channels; ++c)
                for (int ky = 0; ky < ksize; ++ky)
                    for (int kx = 0; kx < ksize; ++kx) {
                        const int row = (c * ksize + ky) * ksize + kx;
                        const double* src = dcols.data() + static_cast<std::ptrdiff_t>(row) * ncols;
                        for (int b = 0; b < batch; ++b) {
                            double* dst = gx.data() + (static_cast<std::ptrdiff_t>(b) * channels + c) * height * width;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= height) continue;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - padding + kx;
                                    if (ix < 0 || ix >= width) continue;
                                    dst[iy * width + ix] += src[(b * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
        }
    });
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.value();
    require(xv.rank() == 4, "global_avg_pool: expects 4-D input");
    const int batch = xv.dim(0), channels = xv.dim(1);
    const int area = xv.dim(2) * xv.dim(3);
    Tensor out({batch, channels});
    for (int i = 0; i < batch * channels; ++i) {
        double s = 0.0;
        for (int j = 0; j < area; ++j) s += xv[static_cast<std::size_t>(i) * area + j];
        out[static_cast<std::size_t>(i)] = s / area;
    }
    return make(std::move(out), {x}, [area](Node& n) {
        Tensor& g = gin(n, 0);
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            for (int j = 0; j < area; ++j) g[i * area + j] += n.grad[i] / area;
    });
}

// ---- losses --------------------------------------------------------------

Var soft_cross_entropy(const Var& logits, const Tensor& targets) {
    const Tensor& z = logits.value();
    require(z.rows() == targets.rows() && z.cols() == targets.cols(),
            "soft_cross_entropy: targets " + targets.shape_string() + " vs logits " + z.shape_string());
    const int rows = z.rows();
    const int k = z.cols();
    auto probs = std::make_shared<Tensor>(std::vector<int>{rows, k});
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double* zr = z.data() + static_cast<std::ptrdiff_t>(r) * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) mx = std::max(mx, zr[c]);
        double s = 0.0;
        for (int c = 0; c < k; ++c) s += std::exp(zr[c] - mx);
        const double lse = mx + std::log(s);
        for (int c = 0; c < k; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * k + c;
            (*probs)[i] = std::exp(zr[c] - lse);
            total -= targets[i] * (zr[c] - lse);
        }
    }
    return make(Tensor::scalar(total / rows), {logits}, [probs, targets, rows, k](Node& n) {
        Tensor& g = gin(n, 0);
        const double up = n.grad[0] / rows;
        for (int r = 0; r < rows; ++r) {
            double mass = 0.0;
            for (int c = 0; c < k; ++c) mass += targets[static_cast<std::size_t>(r) * k + c];
            for (int c = 0; c < k; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * k + c;
                g[i] += up * (mass * (*probs)[i] - targets[i]);
            }
        }
    });
}

Var binary_cross_entropy_logits(const Var& logits, const Tensor& targets) {
    const Tensor& z = logits.value();
    require(z.same_shape(targets), "binary_cross_entropy_logits: shape mismatch");
    const int rows = z.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double x = z[i];
        total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return make(Tensor::scalar(total / rows), {logits}, [targets, rows](Node& n) {
        Tensor& g = gin(n, 0);
        const Tensor& z2 = vin(n, 0);
        const double up = n.grad[0] / rows;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-z2[i]));
            g[i] += up * (sig - targets[i]);
        }
    });
}

}  // namespace stainfocus::ad
