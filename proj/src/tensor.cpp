#include "dpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace dpt {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void ensure_grad(const NodePtr& n) {
    if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected 2-D tensor, got " +
                             shape_str(t.shape()));
    }
}

// Result node: requires_grad if any input does; recorded by the caller.
Tensor make_result(std::vector<int> shape, bool requires_grad) {
    return wrap_node(make_node(std::move(shape), requires_grad));
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

NodePtr make_node(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values.assign(shape_numel(n->shape), 0.0);
    n->requires_grad = requires_grad;
    n->node_id = Tape::active().next_id();
    return n;
}

Tensor wrap_node(NodePtr n) { return Tensor(std::move(n)); }

Tensor::Tensor() : node_(make_node({0}, false)) {}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return wrap_node(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::constant(std::vector<int> shape, double fill, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->values.begin(), t.node_->values.end(), fill);
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("from_values: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    t.node_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_values({1}, {v}, requires_grad);
}

int Tensor::rows() const {
    check_2d(*this, "rows");
    return node_->shape[0];
}

int Tensor::cols() const {
    check_2d(*this, "cols");
    return node_->shape[1];
}

double Tensor::value() const {
    if (numel() != 1) {
        throw UsageError("value(): tensor " + shape_str(shape()) + " is not scalar");
    }
    return node_->values[0];
}

double Tensor::at(int i, int j) const {
    check_2d(*this, "at");
    return node_->values[static_cast<std::size_t>(i) * static_cast<std::size_t>(node_->shape[1]) +
                         static_cast<std::size_t>(j)];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw UsageError("grad(): no gradient on tensor " + shape_str(shape()));
    }
    return node_->grad;
}

Tensor Tensor::detach() const {
    Tensor t = zeros(shape(), false);
    t.node_->values = node_->values;
    return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(NodePtr output, std::function<void()> backward_fn) {
    ops_.push_back(Op{std::move(output), std::move(backward_fn)});
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw UsageError("backward(): loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;  // nothing on the tape depends on parameters
    const auto& ops = Tape::active().ops();
    // transient grads on op outputs belong to the previous pass; leaf tensors
    // keep theirs, which is what makes repeated backward calls accumulate
    for (const auto& op : ops) op.output->grad.clear();
    const NodePtr& ln = loss.node();
    ensure_grad(ln);
    ln->grad[0] += 1.0;
    for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
        if (!it->output->grad.empty()) it->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    Tensor out = make_result({m, n}, a.requires_grad() || b.requires_grad());
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.mutable_values().data();
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<std::size_t>(i) * n;
            const double* arow = A + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = B + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    if (out.requires_grad()) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        Tape::active().record(on, [an, bn, on, m, k, n]() {
            const double* dC = on->grad.data();
            if (an->requires_grad) {
                ensure_grad(an);
                const double* B = bn->values.data();
                double* dA = an->grad.data();
                // dA[i,kk] += sum_j dC[i,j] * B[kk,j]
                for (int i = 0; i < m; ++i) {
                    const double* dcrow = dC + static_cast<std::size_t>(i) * n;
                    double* darow = dA + static_cast<std::size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* brow = B + static_cast<std::size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                        darow[kk] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                const double* A = an->values.data();
                double* dB = bn->grad.data();
                // dB[kk,j] += sum_i A[i,kk] * dC[i,j]
                for (int i = 0; i < m; ++i) {
                    const double* arow = A + static_cast<std::size_t>(i) * k;
                    const double* dcrow = dC + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = arow[kk];
                        if (av == 0.0) continue;
                        double* dbrow = dB + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    check_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = make_result({n, m}, a.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<std::size_t>(j) * m + i] =
                a.values()[static_cast<std::size_t>(i) * n + j];
    if (out.requires_grad()) {
        NodePtr an = a.node(), on = out.node();
        Tape::active().record(on, [an, on, m, n]() {
            ensure_grad(an);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i) * n + j] +=
                        on->grad[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = make_result(x.shape(), x.requires_grad());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.values()[i];
        out.mutable_values()[i] = v > 0.0 ? v : 0.0;
    }
    if (out.requires_grad()) {
        NodePtr xn = x.node(), on = out.node();
        Tape::active().record(on, [xn, on, n]() {
            ensure_grad(xn);
            for (std::size_t i = 0; i < n; ++i)
                if (xn->values[i] > 0.0) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

namespace {

enum class EwKind { add, sub, mul };

Tensor elementwise_tt(EwKind kind, const Tensor& a, const Tensor& b) {
    const char* name = kind == EwKind::add ? "add" : kind == EwKind::sub ? "sub" : "mul";
    check_same_shape(a, b, name);
    Tensor out = make_result(a.shape(), a.requires_grad() || b.requires_grad());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.values()[i], y = b.values()[i];
        out.mutable_values()[i] = kind == EwKind::add ? x + y
                                : kind == EwKind::sub ? x - y
                                                      : x * y;
    }
    if (out.requires_grad()) {
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        Tape::active().record(on, [kind, an, bn, on, n]() {
            if (an->requires_grad) {
                ensure_grad(an);
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = on->grad[i];
                    an->grad[i] += kind == EwKind::mul ? g * bn->values[i] : g;
                }
            }
            if (bn->requires_grad) {
                ensure_grad(bn);
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = on->grad[i];
                    bn->grad[i] += kind == EwKind::add ? g
                                 : kind == EwKind::sub ? -g
                                                       : g * an->values[i];
                }
            }
        });
    }
    return out;
}

Tensor elementwise_ts(EwKind kind, const Tensor& a, double s) {
    Tensor out = make_result(a.shape(), a.requires_grad());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.values()[i];
        out.mutable_values()[i] = kind == EwKind::add ? x + s
                                : kind == EwKind::sub ? x - s
                                                      : x * s;
    }
    if (out.requires_grad()) {
        NodePtr an = a.node(), on = out.node();
        Tape::active().record(on, [kind, an, on, n, s]() {
            ensure_grad(an);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = on->grad[i];
                an->grad[i] += kind == EwKind::mul ? g * s : g;
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_tt(EwKind::add, a, b); }
Tensor add(const Tensor& a, double s) { return elementwise_ts(EwKind::add, a, s); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_tt(EwKind::sub, a, b); }
Tensor sub(const Tensor& a, double s) { return elementwise_ts(EwKind::sub, a, s); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_tt(EwKind::mul, a, b); }
Tensor mul(const Tensor& a, double s) { return elementwise_ts(EwKind::mul, a, s); }
Tensor scale(const Tensor& a, double s) { return elementwise_ts(EwKind::mul, a, s); }

Tensor softmax_rows(const Tensor& x) {
    check_2d(x, "softmax_rows");
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = make_result({m, n}, x.requires_grad());
    for (int i = 0; i < m; ++i) {
        const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
        double* orow = out.mutable_values().data() + static_cast<std::size_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= z;
    }
    if (out.requires_grad()) {
        NodePtr xn = x.node(), on = out.node();
        Tape::active().record(on, [xn, on, m, n]() {
            ensure_grad(xn);
            for (int i = 0; i < m; ++i) {
                const double* y = on->values.data() + static_cast<std::size_t>(i) * n;
                const double* dy = on->grad.data() + static_cast<std::size_t>(i) * n;
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.ndim() < 1) throw DimensionError("layer_norm: scalar input");
    const int e = x.shape().back();
    if (gain.ndim() != 1 || gain.dim(0) != e || bias.ndim() != 1 || bias.dim(0) != e) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(e) + "], got " +
                             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    const std::size_t nrows = e > 0 ? x.numel() / static_cast<std::size_t>(e) : 0;
    Tensor out = make_result(x.shape(),
                             x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(nrows);
    for (std::size_t r = 0; r < nrows; ++r) {
        const double* row = x.values().data() + r * e;
        double mean = 0.0;
        for (int j = 0; j < e; ++j) mean += row[j];
        mean /= e;
        double var = 0.0;
        for (int j = 0; j < e; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= e;
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = is;
        double* orow = out.mutable_values().data() + r * e;
        for (int j = 0; j < e; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat[r * e + j] = xh;
            orow[j] = gain.values()[static_cast<std::size_t>(j)] * xh +
                      bias.values()[static_cast<std::size_t>(j)];
        }
    }
    if (out.requires_grad()) {
        NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        Tape::active().record(
            on, [xn, gn, bn, on, e, nrows, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)]() {
                for (std::size_t r = 0; r < nrows; ++r) {
                    const double* dy = on->grad.data() + r * e;
                    const double* xh = xhat.data() + r * e;
                    if (gn->requires_grad) {
                        ensure_grad(gn);
                        for (int j = 0; j < e; ++j) gn->grad[j] += dy[j] * xh[j];
                    }
                    if (bn->requires_grad) {
                        ensure_grad(bn);
                        for (int j = 0; j < e; ++j) bn->grad[j] += dy[j];
                    }
                    if (xn->requires_grad) {
                        ensure_grad(xn);
                        double* dx = xn->grad.data() + r * e;
                        // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat)
                        //         - xhat * mean(dxhat * xhat))
                        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                        for (int j = 0; j < e; ++j) {
                            const double dxh = dy[j] * gn->values[static_cast<std::size_t>(j)];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= e;
                        mean_dxh_xh /= e;
                        for (int j = 0; j < e; ++j) {
                            const double dxh = dy[j] * gn->values[static_cast<std::size_t>(j)];
                            dx[j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                }
            });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    check_2d(table, "embedding_lookup");
    const int V = table.dim(0), e = table.dim(1);
    const int n = static_cast<int>(ids.size());
    for (int j = 0; j < n; ++j) {
        if (ids[static_cast<std::size_t>(j)] < 0 || ids[static_cast<std::size_t>(j)] >= V) {
            throw VocabError("embedding_lookup: token id " +
                             std::to_string(ids[static_cast<std::size_t>(j)]) +
                             " out of range [0," + std::to_string(V) + ")");
        }
    }
    Tensor out = make_result({e, n}, table.requires_grad());
    for (int j = 0; j < n; ++j) {
        const double* row =
            table.values().data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(j)]) * e;
        for (int i = 0; i < e; ++i)
            out.mutable_values()[static_cast<std::size_t>(i) * n + j] = row[i];
    }
    if (out.requires_grad()) {
        NodePtr tn = table.node(), on = out.node();
        Tape::active().record(on, [tn, on, ids, e, n]() {
            ensure_grad(tn);
            for (int j = 0; j < n; ++j) {
                double* row =
                    tn->grad.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(j)]) * e;
                for (int i = 0; i < e; ++i)
                    row[i] += on->grad[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    check_2d(logits, "cross_entropy");
    const int t = logits.dim(0), V = logits.dim(1);
    if (static_cast<int>(targets.size()) != t) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(t) + " logit rows");
    }
    for (int i = 0; i < t; ++i) {
        if (targets[static_cast<std::size_t>(i)] < 0 ||
            targets[static_cast<std::size_t>(i)] >= V) {
            throw VocabError("cross_entropy: target id " +
                             std::to_string(targets[static_cast<std::size_t>(i)]) +
                             " out of range [0," + std::to_string(V) + ")");
        }
    }
    if (t == 0) throw UsageError("cross_entropy: no target positions");
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        const double* row = logits.values().data() + static_cast<std::size_t>(i) * V;
        double* prow = probs.data() + static_cast<std::size_t>(i) * V;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < V; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        for (int j = 0; j < V; ++j) prow[j] /= z;
        loss += -(row[targets[static_cast<std::size_t>(i)]] - mx - std::log(z));
    }
    loss /= t;
    Tensor out = Tensor::scalar(loss, logits.requires_grad());
    if (out.requires_grad()) {
        NodePtr ln = logits.node(), on = out.node();
        Tape::active().record(on, [ln, on, targets, t, V, probs = std::move(probs)]() {
            ensure_grad(ln);
            const double g = on->grad[0] / t;
            for (int i = 0; i < t; ++i) {
                const double* prow = probs.data() + static_cast<std::size_t>(i) * V;
                double* drow = ln->grad.data() + static_cast<std::size_t>(i) * V;
                const int tgt = targets[static_cast<std::size_t>(i)];
                for (int j = 0; j < V; ++j)
                    drow[j] += g * (prow[j] - (j == tgt ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s, x.requires_grad());
    if (out.requires_grad()) {
        NodePtr xn = x.node(), on = out.node();
        Tape::active().record(on, [xn, on]() {
            ensure_grad(xn);
            const double g = on->grad[0];
            for (double& d : xn->grad) d += g;
        });
    }
    return out;
}

Tensor hcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("hcat: no inputs");
    const int m = parts[0].ndim() == 2 ? parts[0].dim(0) : -1;
    int total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        check_2d(p, "hcat");
        if (p.dim(0) != m) {
            throw DimensionError("hcat: row counts disagree, " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Tensor out = make_result({m, total}, rg);
    int col0 = 0;
    for (const Tensor& p : parts) {
        const int n = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                out.mutable_values()[static_cast<std::size_t>(i) * total + col0 + j] =
                    p.values()[static_cast<std::size_t>(i) * n + j];
        col0 += n;
    }
    if (rg) {
        std::vector<NodePtr> nodes;
        nodes.reserve(parts.size());
        for (const Tensor& p : parts) nodes.push_back(p.node());
        NodePtr on = out.node();
        Tape::active().record(on, [nodes, on, m, total]() {
            int c0 = 0;
            for (const NodePtr& pn : nodes) {
                const int n = pn->shape[1];
                if (pn->requires_grad) {
                    ensure_grad(pn);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j)
                            pn->grad[static_cast<std::size_t>(i) * n + j] +=
                                on->grad[static_cast<std::size_t>(i) * total + c0 + j];
                }
                c0 += n;
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int col0, int ncols) {
    check_2d(x, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (col0 < 0 || ncols < 0 || col0 + ncols > n) {
        throw DimensionError("slice_cols: [" + std::to_string(col0) + "," +
                             std::to_string(col0 + ncols) + ") out of " + shape_str(x.shape()));
    }
    Tensor out = make_result({m, ncols}, x.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < ncols; ++j)
            out.mutable_values()[static_cast<std::size_t>(i) * ncols + j] =
                x.values()[static_cast<std::size_t>(i) * n + col0 + j];
    if (out.requires_grad()) {
        NodePtr xn = x.node(), on = out.node();
        Tape::active().record(on, [xn, on, m, n, col0, ncols]() {
            ensure_grad(xn);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < ncols; ++j)
                    xn->grad[static_cast<std::size_t>(i) * n + col0 + j] +=
                        on->grad[static_cast<std::size_t>(i) * ncols + j];
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_2d(x, "add_rowvec");
    const int m = x.dim(0), n = x.dim(1);
    if (v.ndim() != 1 || v.dim(0) != n) {
        throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                             " does not match columns of " + shape_str(x.shape()));
    }
    Tensor out = make_result({m, n}, x.requires_grad() || v.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<std::size_t>(i) * n + j] =
                x.values()[static_cast<std::size_t>(i) * n + j] +
                v.values()[static_cast<std::size_t>(j)];
    if (out.requires_grad()) {
        NodePtr xn = x.node(), vn = v.node(), on = out.node();
        Tape::active().record(on, [xn, vn, on, m, n]() {
            if (xn->requires_grad) {
                ensure_grad(xn);
                for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i)
                    xn->grad[i] += on->grad[i];
            }
            if (vn->requires_grad) {
                ensure_grad(vn);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        vn->grad[static_cast<std::size_t>(j)] +=
                            on->grad[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

Tensor diag_embed(const Tensor& v, int rows, int cols) {
    if (v.ndim() != 1) throw DimensionError("diag_embed: expected vector, got " + shape_str(v.shape()));
    const int len = v.dim(0);
    if (rows < 1 || cols < 1 || len != std::min(rows, cols)) {
        throw DimensionError("diag_embed: vector length " + std::to_string(len) +
                             " does not fit diagonal of [" + std::to_string(rows) + "x" +
                             std::to_string(cols) + "]");
    }
    Tensor out = make_result({rows, cols}, v.requires_grad());
    for (int i = 0; i < len; ++i)
        out.mutable_values()[static_cast<std::size_t>(i) * cols + i] =
            v.values()[static_cast<std::size_t>(i)];
    if (out.requires_grad()) {
        NodePtr vn = v.node(), on = out.node();
        Tape::active().record(on, [vn, on, cols, len]() {
            ensure_grad(vn);
            for (int i = 0; i < len; ++i)
                vn->grad[static_cast<std::size_t>(i)] +=
                    on->grad[static_cast<std::size_t>(i) * cols + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0.0) throw UsageError("grad_check: step size must be positive");
    Tape& tape = Tape::active();
    Tensor xt = Tensor::from_values(x.shape(), x.values(), true);

    tape.clear();
    Tensor y = f(xt);
    if (y.numel() != 1) {
        throw UsageError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
    }
    backward(y);
    std::vector<double> analytic(xt.numel(), 0.0);
    if (xt.has_grad()) analytic = xt.grad();
    tape.clear();

    double max_rel = 0.0;
    auto& vals = xt.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + h;
        const double fp = f(xt).value();
        tape.clear();
        vals[i] = orig - h;
        const double fm = f(xt).value();
        tape.clear();
        vals[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Dump format
// ---------------------------------------------------------------------------

std::string format_f17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void dump_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
        throw UsageError("dump_tensor: name must be nonempty without whitespace: '" + name + "'");
    }
    os << name << " shape";
    for (int d : t.shape()) os << ' ' << d;
    os << '\n';
    const auto& v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ' ';
        os << format_f17(v[i]);
    }
    os << '\n';
}

bool read_tensor_record(std::istream& is, NamedTensor& out) {
    std::string line;
    // skip blank lines between records
    do {
        if (!std::getline(is, line)) return false;
    } while (line.find_first_not_of(" \t\r") == std::string::npos);

    std::istringstream header(line);
    std::string name, kw;
    if (!(header >> name >> kw) || kw != "shape") {
        throw ParseError("tensor dump: bad header line '" + line + "'");
    }
    std::vector<int> shape;
    int d;
    while (header >> d) shape.push_back(d);
    if (!header.eof()) throw ParseError("tensor dump: bad shape in header '" + line + "'");

    std::size_t n = 1;
    for (int dim : shape) {
        if (dim < 0) throw ParseError("tensor dump: negative dimension in '" + line + "'");
        n *= static_cast<std::size_t>(dim);
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(is >> values[i])) {
            throw ParseError("tensor dump: expected " + std::to_string(n) + " values for '" +
                             name + "', got " + std::to_string(i));
        }
    }
    // consume the rest of the value line
    std::getline(is, line);
    out.name = name;
    out.tensor = Tensor::from_values(std::move(shape), std::move(values), false);
    return true;
}

}  // namespace dpt
