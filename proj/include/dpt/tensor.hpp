#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpt {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct LengthError    : std::runtime_error { using std::runtime_error::runtime_error; };
struct VocabError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct UsageError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericalError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError    : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError        : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError     : std::runtime_error { using std::runtime_error::runtime_error; };

std::string shape_str(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Tensor
//
// Dense row-major 64-bit float tensor with an optional gradient buffer.
// Tensor is a cheap handle: copies share the underlying node, which is what
// lets the tape and the optimizer see parameter updates.
// ---------------------------------------------------------------------------

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> values;  // flat, row-major; product(shape) entries
    std::vector<double> grad;    // empty until backward() reaches this node
    bool requires_grad = false;
    std::int64_t node_id = -1;
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
public:
    Tensor();
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor constant(std::vector<int> shape, double fill, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return node_->values.size(); }
    // 2-D convenience
    int rows() const;
    int cols() const;

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& mutable_values() { return node_->values; }
    double value() const;                 // scalar read; throws unless numel()==1
    double at(int i) const { return node_->values[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;  // throws if absent
    void zero_grad() { node_->grad.clear(); }

    // value copy with no grad, no tape linkage
    Tensor detach() const;

    std::int64_t node_id() const { return node_->node_id; }
    const NodePtr& node() const { return node_; }

private:
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}
    NodePtr node_;
    friend NodePtr make_node(std::vector<int> shape, bool requires_grad);
    friend Tensor wrap_node(NodePtr n);
};

NodePtr make_node(std::vector<int> shape, bool requires_grad);
Tensor wrap_node(NodePtr n);

// ---------------------------------------------------------------------------
// Tape
//
// Per-thread record of differentiable operations in execution order, which is
// already a topological order of the graph. backward() replays it in reverse,
// touching each recorded node exactly once.
//
// Reset rule: backward() leaves the tape intact, so a second backward() on the
// same graph accumulates gradients additively. Callers drop recorded graphs
// with Tape::active().clear(); training loops do this once per forward pass.
// Double-backward (grads of grads) is not supported.
// ---------------------------------------------------------------------------

class Tape {
public:
    static Tape& active();

    void clear() { ops_.clear(); }
    // drop ops recorded after a saved watermark (inner scratch graphs)
    void truncate(std::size_t n) {
        if (n < ops_.size()) ops_.resize(n);
    }
    std::size_t size() const { return ops_.size(); }

    std::int64_t next_id() { return next_id_++; }
    void record(NodePtr output, std::function<void()> backward_fn);

    // internal: used by backward()
    struct Op {
        NodePtr output;
        std::function<void()> backward_fn;
    };
    const std::vector<Op>& ops() const { return ops_; }

private:
    std::vector<Op> ops_;
    std::int64_t next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// standard matrix product [m,k]x[k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D transpose (copies; no strided views)
Tensor transpose(const Tensor& a);

// elementwise max(0, x); subgradient at 0 is 0
Tensor relu(const Tensor& x);

// elementwise ops; tensor-tensor forms require exactly matching shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double s);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);  // alias of mul(a, s)

// row-wise softmax with max subtraction, [m,n] -> [m,n]
Tensor softmax_rows(const Tensor& x);

// per-row normalization over the last dimension, then affine gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEps = 1e-5;

// table is [V,e]; output column j is table row ids[j], i.e. an e x n matrix
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// mean over rows of -log softmax(logits)[i][targets[i]]; logits [t,V]
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// scalar sum of all entries
Tensor sum(const Tensor& x);

// horizontal concatenation of 2-D tensors with equal row counts
Tensor hcat(const std::vector<Tensor>& parts);

// columns [col0, col0+ncols) of a 2-D tensor
Tensor slice_cols(const Tensor& x, int col0, int ncols);

// x [m,n] plus row vector v [n] broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// [rows,cols] matrix with v on the main diagonal; len(v) == min(rows, cols)
Tensor diag_embed(const Tensor& v, int rows, int cols);

// reverse pass from a scalar loss; accumulates into .grad of every
// requires_grad tensor reachable from it
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Gradient checking
//
// Central differences (f(x+h)-f(x-h))/2h per coordinate against the analytic
// gradient. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8). Clears the active tape as it works.
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

// ---------------------------------------------------------------------------
// Dump format
//
// One header line `name shape d0 d1 ...` followed by one whitespace-separated
// row holding every value, printed with 17 significant digits (round-trip
// exact for IEEE doubles).
// ---------------------------------------------------------------------------

void dump_tensor(std::ostream& os, const std::string& name, const Tensor& t);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// reads one record; returns false on clean EOF, throws ParseError on garbage
bool read_tensor_record(std::istream& is, NamedTensor& out);

std::string format_f17(double v);

}  // namespace dpt
