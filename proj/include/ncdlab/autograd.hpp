#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ncdlab/errors.hpp"
#include "ncdlab/tensor.hpp"

namespace ncdlab {

/// Handle to a node on a Tape. Only meaningful together with the tape that
/// produced it.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Nodes are appended in creation order, which is
/// a valid topological order by construction; backward() replays the tape in
/// reverse, visiting each node exactly once.
///
/// Leaves borrow external tensors (which must outlive the tape). Gradients
/// accumulate into the external tensor's grad buffer on each backward() call;
/// the optimizer is responsible for zeroing them.
template <typename T = float>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- node creation -------------------------------------------------

    Value leaf(Tensor<T>& t) {
        Node n;
        n.op = Op::Leaf;
        n.out = t;  // snapshot of current values
        n.external = &t;
        n.needs_grad = t.requires_grad;
        return push(std::move(n));
    }

    Value constant(Tensor<T> t) {
        Node n;
        n.op = Op::Constant;
        n.out = std::move(t);
        return push(std::move(n));
    }

    Value constant_scalar(T v) { return constant(Tensor<T>::scalar(v)); }

    // ---- elementwise ---------------------------------------------------

    Value add(Value a, Value b) { return binary(Op::Add, a, b); }
    Value sub(Value a, Value b) { return binary(Op::Sub, a, b); }
    Value mul(Value a, Value b) { return binary(Op::Mul, a, b); }

    Value div(Value a, Value b) {
        for (T v : val(b).data)
            if (v == T(0)) throw numeric_error("division by zero");
        return binary(Op::Div, a, b);
    }

    Value scale(Value a, T s) { return unary(Op::Scale, a, s); }
    Value add_scalar(Value a, T s) { return unary(Op::AddScalar, a, s); }
    Value neg(Value a) { return unary(Op::Neg, a); }

    Value exp(Value a) {
        Value r = unary(Op::Exp, a);
        for (T v : val(r).data)
            if (!std::isfinite(static_cast<double>(v))) throw numeric_error("exp overflow");
        return r;
    }

    Value log(Value a) {
        for (T v : val(a).data)
            if (v <= T(0)) throw numeric_error("log of non-positive value");
        return unary(Op::Log, a);
    }

    Value relu(Value a) { return unary(Op::Relu, a); }
    Value abs(Value a) { return unary(Op::Abs, a); }

    Value sqrt(Value a) {
        for (T v : val(a).data)
            if (v < T(0)) throw numeric_error("sqrt of negative value");
        return unary(Op::Sqrt, a);
    }

    Value clamp_min(Value a, T floor) { return unary(Op::ClampMin, a, floor); }

    // ---- linear algebra --------------------------------------------------

    Value matmul(Value a, Value b) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2)
            throw shape_error("matmul requires rank-2 operands, got " + ta.shape_str() + " and " +
                              tb.shape_str());
        if (ta.cols() != tb.rows())
            throw shape_error("matmul inner dims mismatch: " + ta.shape_str() + " vs " +
                              tb.shape_str());
        Node n = make(Op::MatMul, a, b);
        n.out = Tensor<T>({ta.rows(), tb.cols()});
        const int m = ta.rows(), k = ta.cols(), p = tb.cols();
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const T aik = ta.at(i, kk);
                if (aik == T(0)) continue;
                const T* brow = &tb.data[static_cast<std::size_t>(kk) * p];
                T* orow = &n.out.data[static_cast<std::size_t>(i) * p];
                for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
            }
        return push(std::move(n));
    }

    Value transpose(Value a) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("transpose requires rank-2 operand");
        Node n = make(Op::Transpose, a);
        n.out = Tensor<T>({ta.cols(), ta.rows()});
        for (int i = 0; i < ta.rows(); ++i)
            for (int j = 0; j < ta.cols(); ++j) n.out.at(j, i) = ta.at(i, j);
        return push(std::move(n));
    }

    /// x: [m,n], b: [n]; adds b to every row.
    Value add_rows(Value x, Value b) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& tb = val(b);
        if (tx.rank() != 2 || tb.rank() != 1 || tb.dims[0] != tx.cols())
            throw shape_error("add_rows expects [m,n] and [n]");
        Node n = make(Op::AddRows, x, b);
        n.out = tx;
        n.out.requires_grad = false;
        n.out.grad.clear();
        for (int i = 0; i < tx.rows(); ++i)
            for (int j = 0; j < tx.cols(); ++j) n.out.at(i, j) += tb.at(j);
        return push(std::move(n));
    }

    // ---- row/column structure -------------------------------------------

    /// Softmax over the last axis of a 1-D or 2-D tensor, with logits divided
    /// by `temperature` and the row max subtracted before exponentiation.
    Value row_softmax(Value a, T temperature) {
        if (temperature <= T(0)) throw config_error("softmax temperature must be positive");
        const Tensor<T>& ta = val(a);
        if (ta.rank() > 2) throw shape_error("row_softmax requires rank 1 or 2");
        Node n = make(Op::RowSoftmax, a);
        n.scalar = temperature;
        n.out = Tensor<T>(ta.dims);
        const int rows = ta.rank() == 2 ? ta.dims[0] : 1;
        const int cols = ta.rank() == 2 ? ta.dims[1] : ta.dims[0];
        for (int i = 0; i < rows; ++i) {
            const T* x = &ta.data[static_cast<std::size_t>(i) * cols];
            T* y = &n.out.data[static_cast<std::size_t>(i) * cols];
            T mx = x[0];
            for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
            T sum = T(0);
            for (int j = 0; j < cols; ++j) {
                y[j] = std::exp((x[j] - mx) / temperature);
                sum += y[j];
            }
            for (int j = 0; j < cols; ++j) y[j] /= sum;
        }
        return push(std::move(n));
    }

    /// Normalizes each row to unit L2 norm. Rows with norm below `eps` are a
    /// numeric-domain error.
    Value l2_normalize_rows(Value a, T eps = T(1e-12)) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("l2_normalize_rows requires rank-2 operand");
        Node n = make(Op::L2NormRows, a);
        n.out = Tensor<T>(ta.dims);
        n.aux_t.resize(static_cast<std::size_t>(ta.rows()));
        for (int i = 0; i < ta.rows(); ++i) {
            double ss = 0;
            for (int j = 0; j < ta.cols(); ++j) ss += double(ta.at(i, j)) * double(ta.at(i, j));
            const T norm = static_cast<T>(std::sqrt(ss));
            if (norm < eps) throw numeric_error("l2_normalize_rows: zero-norm row");
            n.aux_t[static_cast<std::size_t>(i)] = norm;
            for (int j = 0; j < ta.cols(); ++j) n.out.at(i, j) = ta.at(i, j) / norm;
        }
        return push(std::move(n));
    }

    /// Per-row inner product of two [m,n] tensors -> [m].
    Value rows_dot(Value a, Value b) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        if (ta.rank() != 2 || !ta.same_shape(tb))
            throw shape_error("rows_dot requires identical rank-2 shapes");
        Node n = make(Op::RowsDot, a, b);
        n.out = Tensor<T>({ta.rows()});
        for (int i = 0; i < ta.rows(); ++i) {
            T acc = T(0);
            for (int j = 0; j < ta.cols(); ++j) acc += ta.at(i, j) * tb.at(i, j);
            n.out.at(i) = acc;
        }
        return push(std::move(n));
    }

    Value row_sum(Value a) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("row_sum requires rank-2 operand");
        Node n = make(Op::RowSum, a);
        n.out = Tensor<T>({ta.rows()});
        for (int i = 0; i < ta.rows(); ++i) {
            T acc = T(0);
            for (int j = 0; j < ta.cols(); ++j) acc += ta.at(i, j);
            n.out.at(i) = acc;
        }
        return push(std::move(n));
    }

    Value col_sum(Value a) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("col_sum requires rank-2 operand");
        Node n = make(Op::ColSum, a);
        n.out = Tensor<T>({ta.cols()});
        for (int i = 0; i < ta.rows(); ++i)
            for (int j = 0; j < ta.cols(); ++j) n.out.at(j) += ta.at(i, j);
        return push(std::move(n));
    }

    /// Subtracts each row's mean from that row.
    Value center_rows(Value a) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("center_rows requires rank-2 operand");
        Node n = make(Op::CenterRows, a);
        n.out = Tensor<T>(ta.dims);
        for (int i = 0; i < ta.rows(); ++i) {
            T mean = T(0);
            for (int j = 0; j < ta.cols(); ++j) mean += ta.at(i, j);
            mean /= static_cast<T>(ta.cols());
            for (int j = 0; j < ta.cols(); ++j) n.out.at(i, j) = ta.at(i, j) - mean;
        }
        return push(std::move(n));
    }

    /// Main diagonal of a square matrix -> [m].
    Value diag(Value a) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2 || ta.rows() != ta.cols())
            throw shape_error("diag requires a square rank-2 operand");
        Node n = make(Op::Diag, a);
        n.out = Tensor<T>({ta.rows()});
        for (int i = 0; i < ta.rows(); ++i) n.out.at(i) = ta.at(i, i);
        return push(std::move(n));
    }

    /// Selects rows by index; duplicates allowed. Backward scatters.
    Value gather_rows(Value a, std::vector<int> idx) {
        const Tensor<T>& ta = val(a);
        if (ta.rank() != 2) throw shape_error("gather_rows requires rank-2 operand");
        if (idx.empty()) throw argument_error("gather_rows: empty index list");
        for (int i : idx)
            if (i < 0 || i >= ta.rows()) throw argument_error("gather_rows: index out of range");
        Node n = make(Op::GatherRows, a);
        n.out = Tensor<T>({static_cast<int>(idx.size()), ta.cols()});
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < ta.cols(); ++j)
                n.out.at(static_cast<int>(r), j) = ta.at(idx[r], j);
        n.aux_i = std::move(idx);
        return push(std::move(n));
    }

    // ---- reductions ------------------------------------------------------

    Value sum(Value a) {
        Node n = make(Op::Sum, a);
        T acc = T(0);
        for (T v : val(a).data) acc += v;
        n.out = Tensor<T>::scalar(acc);
        return push(std::move(n));
    }

    Value mean(Value a) {
        Node n = make(Op::Mean, a);
        T acc = T(0);
        for (T v : val(a).data) acc += v;
        n.out = Tensor<T>::scalar(acc / static_cast<T>(val(a).numel()));
        return push(std::move(n));
    }

    // ---- structure -------------------------------------------------------

    Value reshape(Value a, std::vector<int> shape) {
        const Tensor<T>& ta = val(a);
        Tensor<T> out(std::move(shape));
        if (out.numel() != ta.numel())
            throw shape_error("reshape element count mismatch: " + ta.shape_str() + " -> " +
                              out.shape_str());
        Node n = make(Op::Reshape, a);
        out.data = ta.data;
        n.out = std::move(out);
        return push(std::move(n));
    }

    /// Cuts the gradient: output has the same values, no backward path.
    Value detach(Value a) {
        Node n = make(Op::Detach, a);
        n.out = val(a);
        n.out.requires_grad = false;
        n.out.grad.clear();
        n.needs_grad = false;
        return push(std::move(n));
    }

    /// 2-D convolution with per-filter bias.
    /// x: [B,C,H,W], w: [F,C,KH,KW], bias: [F].
    Value conv2d(Value x, Value w, Value bias, int stride, int pad) {
        const Tensor<T>& tx = val(x);
        const Tensor<T>& tw = val(w);
        const Tensor<T>& tb = val(bias);
        if (tx.rank() != 4 || tw.rank() != 4)
            throw shape_error("conv2d expects x [B,C,H,W] and w [F,C,KH,KW]");
        if (tx.dims[1] != tw.dims[1]) throw shape_error("conv2d channel mismatch");
        if (tb.rank() != 1 || tb.dims[0] != tw.dims[0])
            throw shape_error("conv2d bias must be [F]");
        if (stride < 1) throw config_error("conv2d stride must be >= 1");
        const int B = tx.dims[0], C = tx.dims[1], H = tx.dims[2], W = tx.dims[3];
        const int F = tw.dims[0], KH = tw.dims[2], KW = tw.dims[3];
        const int HO = (H + 2 * pad - KH) / stride + 1;
        const int WO = (W + 2 * pad - KW) / stride + 1;
        if (HO <= 0 || WO <= 0) throw shape_error("conv2d output would be empty");
        Node n = make(Op::Conv2d, x, w, bias);
        n.aux_i = {stride, pad};
        n.out = Tensor<T>({B, F, HO, WO});
        // kernel-position-outer loops with precomputed valid output ranges,
        // so the hot inner loop carries no bounds checks
        auto lo_of = [&](int kpos) {
            const int num = pad - kpos;
            return num <= 0 ? 0 : (num + stride - 1) / stride;
        };
        for (int b = 0; b < B; ++b)
            for (int f = 0; f < F; ++f) {
                T* obase = &n.out.data[idx4(n.out.dims, b, f, 0, 0)];
                const T bias_f = tb.at(f);
                for (int i = 0; i < HO * WO; ++i) obase[i] = bias_f;
                for (int c = 0; c < C; ++c) {
                    const T* xc = &tx.data[idx4(tx.dims, b, c, 0, 0)];
                    const T* wfc = &tw.data[idx4(tw.dims, f, c, 0, 0)];
                    for (int kh = 0; kh < KH; ++kh) {
                        const int ho_lo = lo_of(kh);
                        const int ho_hi = std::min(HO - 1, (H - 1 - kh + pad) / stride);
                        for (int kw = 0; kw < KW; ++kw) {
                            const T wv = wfc[kh * KW + kw];
                            if (wv == T(0)) continue;
                            const int wo_lo = lo_of(kw);
                            const int wo_hi = std::min(WO - 1, (W - 1 - kw + pad) / stride);
                            for (int ho = ho_lo; ho <= ho_hi; ++ho) {
                                const T* xrow = xc + (ho * stride - pad + kh) * W - pad + kw;
                                T* orow = obase + ho * WO;
                                for (int wo = wo_lo; wo <= wo_hi; ++wo)
                                    orow[wo] += wv * xrow[wo * stride];
                            }
                        }
                    }
                }
            }
        return push(std::move(n));
    }

    // ---- access ----------------------------------------------------------

    const Tensor<T>& value(Value v) const { return val(v); }

    /// True when a gradient path reaches this value from some leaf.
    bool carries_grad(Value v) const { return node(v).needs_grad; }

    /// Distance from the nearest relu/abs input to its kink. Finite-
    /// difference probes are only trustworthy when this exceeds the step.
    /// clamp_min is not scanned: it is used as a log-safety floor orders of
    /// magnitude below any reachable activation, so its kink is never live.
    T min_kink_margin() const {
        T margin = std::numeric_limits<T>::infinity();
        for (const auto& n : nodes_) {
            if (n.op != Op::Relu && n.op != Op::Abs) continue;
            for (T v : nodes_[static_cast<std::size_t>(n.in[0])].out.data)
                margin = std::min(margin, std::fabs(v));
        }
        return margin;
    }

    /// Gradient buffer of a node after the most recent backward() pass.
    const std::vector<T>& grad_at(Value v) const { return node(v).g; }

    std::size_t size() const { return nodes_.size(); }

    // ---- backward --------------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every requires_grad leaf's grad
    /// buffer. root must be a scalar. Repeated calls accumulate.
    void backward(Value root) {
        const Node& r = node(root);
        if (r.out.numel() != 1)
            throw shape_error("backward root must be scalar, got " + r.out.shape_str());
        for (auto& n : nodes_) n.g.assign(n.out.data.size(), T(0));
        nodes_[static_cast<std::size_t>(root.id)].g[0] = T(1);

        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad) continue;
            bool any = false;
            for (T v : n.g)
                if (v != T(0)) {
                    any = true;
                    break;
                }
            if (!any) continue;
            propagate(n);
        }

        for (auto& n : nodes_) {
            if (n.op == Op::Leaf && n.external && n.external->requires_grad) {
                if (n.external->grad.size() != n.external->data.size())
                    n.external->grad.assign(n.external->data.size(), T(0));
                for (std::size_t i = 0; i < n.g.size(); ++i) n.external->grad[i] += n.g[i];
            }
        }
    }

private:
    enum class Op {
        Leaf,
        Constant,
        Add,
        Sub,
        Mul,
        Div,
        Scale,
        AddScalar,
        Neg,
        Exp,
        Log,
        Relu,
        Abs,
        Sqrt,
        ClampMin,
        MatMul,
        Transpose,
        AddRows,
        RowSoftmax,
        L2NormRows,
        RowsDot,
        RowSum,
        ColSum,
        CenterRows,
        Diag,
        GatherRows,
        Sum,
        Mean,
        Reshape,
        Detach,
        Conv2d,
    };

    struct Node {
        Op op = Op::Constant;
        std::array<int, 3> in{-1, -1, -1};
        int n_in = 0;
        Tensor<T> out;
        Tensor<T>* external = nullptr;  // leaf write-back target
        T scalar = T(0);                // op parameter (temperature, clamp, factor)
        std::vector<int> aux_i;         // gather indices / conv stride+pad
        std::vector<T> aux_t;           // saved forward values (row norms)
        std::vector<T> g;               // gradient buffer, sized during backward
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    static std::size_t idx4(const std::vector<int>& d, int a, int b, int c, int e) {
        return ((static_cast<std::size_t>(a) * d[1] + b) * d[2] + c) * d[3] + e;
    }

    Node make(Op op, Value a, Value b = {}, Value c = {}) {
        Node n;
        n.op = op;
        n.in[0] = a.id;
        n.n_in = 1;
        n.needs_grad = node(a).needs_grad;
        if (b.valid()) {
            n.in[1] = b.id;
            n.n_in = 2;
            n.needs_grad = n.needs_grad || node(b).needs_grad;
        }
        if (c.valid()) {
            n.in[2] = c.id;
            n.n_in = 3;
            n.needs_grad = n.needs_grad || node(c).needs_grad;
        }
        return n;
    }

    Value push(Node n) {
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    const Node& node(Value v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw argument_error("value handle not on this tape");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    Node& mut(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    const Tensor<T>& val(Value v) const { return node(v).out; }

    // Elementwise binary ops allow identical shapes or a 1-element scalar on
    // either side; anything else must be reshaped explicitly.
    Value binary(Op op, Value a, Value b) {
        const Tensor<T>& ta = val(a);
        const Tensor<T>& tb = val(b);
        const bool as = ta.is_scalar(), bs = tb.is_scalar();
        if (!ta.same_shape(tb) && !as && !bs)
            throw shape_error("elementwise op shape mismatch: " + ta.shape_str() + " vs " +
                              tb.shape_str());
        Node n = make(op, a, b);
        const Tensor<T>& big = as && !bs ? tb : ta;
        n.out = Tensor<T>(big.dims);
        const std::size_t m = n.out.data.size();
        for (std::size_t i = 0; i < m; ++i) {
            const T x = ta.data[as ? 0 : i];
            const T y = tb.data[bs ? 0 : i];
            switch (op) {
                case Op::Add: n.out.data[i] = x + y; break;
                case Op::Sub: n.out.data[i] = x - y; break;
                case Op::Mul: n.out.data[i] = x * y; break;
                case Op::Div: n.out.data[i] = x / y; break;
                default: throw argument_error("not a binary op");
            }
        }
        return push(std::move(n));
    }

    Value unary(Op op, Value a, T s = T(0)) {
        const Tensor<T>& ta = val(a);
        Node n = make(op, a);
        n.scalar = s;
        n.out = Tensor<T>(ta.dims);
        for (std::size_t i = 0; i < ta.data.size(); ++i) {
            const T x = ta.data[i];
            switch (op) {
                case Op::Scale: n.out.data[i] = x * s; break;
                case Op::AddScalar: n.out.data[i] = x + s; break;
                case Op::Neg: n.out.data[i] = -x; break;
                case Op::Exp: n.out.data[i] = std::exp(x); break;
                case Op::Log: n.out.data[i] = std::log(x); break;
                case Op::Relu: n.out.data[i] = x > T(0) ? x : T(0); break;
                case Op::Abs: n.out.data[i] = std::fabs(x); break;
                case Op::Sqrt: n.out.data[i] = std::sqrt(x); break;
                case Op::ClampMin: n.out.data[i] = x < s ? s : x; break;
                default: throw argument_error("not a unary op");
            }
        }
        return push(std::move(n));
    }

    // Adds `src` into input `which` of node n, collapsing to a scalar sum if
    // that input is a 1-element tensor.
    void accum(Node& n, int which, const std::vector<T>& src) {
        Node& tgt = mut(n.in[static_cast<std::size_t>(which)]);
        if (!tgt.needs_grad) return;
        if (tgt.out.is_scalar() && src.size() > 1) {
            T acc = T(0);
            for (T v : src) acc += v;
            tgt.g[0] += acc;
        } else {
            // exact zeros are skipped so that a contribution scaled by 0.0
            // (a disabled loss term) cannot flip the sign of a signed zero
            for (std::size_t i = 0; i < src.size(); ++i)
                if (src[i] != T(0)) tgt.g[i] += src[i];
        }
    }

    void propagate(Node& n) {
        auto& G = n.g;
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
            case Op::Detach: break;

            case Op::Add: {
                accum(n, 0, G);
                accum(n, 1, G);
                break;
            }
            case Op::Sub: {
                accum(n, 0, G);
                std::vector<T> neg(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) neg[i] = -G[i];
                accum(n, 1, neg);
                break;
            }
            case Op::Mul: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const Tensor<T>& tb = mut(n.in[1]).out;
                const bool as = ta.is_scalar(), bs = tb.is_scalar();
                std::vector<T> ga(G.size()), gb(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) {
                    ga[i] = G[i] * tb.data[bs ? 0 : i];
                    gb[i] = G[i] * ta.data[as ? 0 : i];
                }
                accum(n, 0, ga);
                accum(n, 1, gb);
                break;
            }
            case Op::Div: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const Tensor<T>& tb = mut(n.in[1]).out;
                const bool as = ta.is_scalar(), bs = tb.is_scalar();
                std::vector<T> ga(G.size()), gb(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) {
                    const T y = tb.data[bs ? 0 : i];
                    ga[i] = G[i] / y;
                    gb[i] = -G[i] * ta.data[as ? 0 : i] / (y * y);
                }
                accum(n, 0, ga);
                accum(n, 1, gb);
                break;
            }
            case Op::Scale: {
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] = G[i] * n.scalar;
                accum(n, 0, ga);
                break;
            }
            case Op::AddScalar: accum(n, 0, G); break;
            case Op::Neg: {
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] = -G[i];
                accum(n, 0, ga);
                break;
            }
            case Op::Exp: {
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] = G[i] * n.out.data[i];
                accum(n, 0, ga);
                break;
            }
            case Op::Log: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] = G[i] / ta.data[i];
                accum(n, 0, ga);
                break;
            }
            case Op::Relu: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i)
                    ga[i] = ta.data[i] > T(0) ? G[i] : T(0);
                accum(n, 0, ga);
                break;
            }
            case Op::Abs: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i) {
                    const T x = ta.data[i];
                    ga[i] = x > T(0) ? G[i] : (x < T(0) ? -G[i] : T(0));
                }
                accum(n, 0, ga);
                break;
            }
            case Op::Sqrt: {
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i)
                    ga[i] = G[i] / (T(2) * n.out.data[i]);
                accum(n, 0, ga);
                break;
            }
            case Op::ClampMin: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(G.size());
                for (std::size_t i = 0; i < G.size(); ++i)
                    ga[i] = ta.data[i] > n.scalar ? G[i] : T(0);
                accum(n, 0, ga);
                break;
            }
            case Op::MatMul: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const Tensor<T>& tb = mut(n.in[1]).out;
                const int m = ta.rows(), k = ta.cols(), p = tb.cols();
                const bool need_a = mut(n.in[0]).needs_grad;
                const bool need_b = mut(n.in[1]).needs_grad;
                if (need_a) {
                    // ga[i][kk] = sum_j G[i][j] * B[kk][j]: contiguous dots
                    std::vector<T> ga(ta.data.size());
                    for (int i = 0; i < m; ++i) {
                        const T* grow = &G[static_cast<std::size_t>(i) * p];
                        T* garow = &ga[static_cast<std::size_t>(i) * k];
                        for (int kk = 0; kk < k; ++kk) {
                            const T* brow = &tb.data[static_cast<std::size_t>(kk) * p];
                            T acc = T(0);
                            for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
                            garow[kk] = acc;
                        }
                    }
                    accum(n, 0, ga);
                }
                if (need_b) {
                    // gb = A^T * G, row-contiguous in j
                    std::vector<T> gb(tb.data.size(), T(0));
                    for (int i = 0; i < m; ++i) {
                        const T* arow = &ta.data[static_cast<std::size_t>(i) * k];
                        const T* grow = &G[static_cast<std::size_t>(i) * p];
                        for (int kk = 0; kk < k; ++kk) {
                            const T aik = arow[kk];
                            if (aik == T(0)) continue;
                            T* gbrow = &gb[static_cast<std::size_t>(kk) * p];
                            for (int j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                        }
                    }
                    accum(n, 1, gb);
                }
                break;
            }
            case Op::Transpose: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const int r = ta.rows(), c = ta.cols();
                std::vector<T> ga(ta.data.size());
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        ga[static_cast<std::size_t>(i) * c + j] =
                            G[static_cast<std::size_t>(j) * r + i];
                accum(n, 0, ga);
                break;
            }
            case Op::AddRows: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                accum(n, 0, G);
                std::vector<T> gb(static_cast<std::size_t>(ta.cols()), T(0));
                for (int i = 0; i < ta.rows(); ++i)
                    for (int j = 0; j < ta.cols(); ++j)
                        gb[static_cast<std::size_t>(j)] += G[static_cast<std::size_t>(i) * ta.cols() + j];
                accum(n, 1, gb);
                break;
            }
            case Op::RowSoftmax: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const int rows = ta.rank() == 2 ? ta.dims[0] : 1;
                const int cols = ta.rank() == 2 ? ta.dims[1] : ta.dims[0];
                std::vector<T> ga(G.size());
                for (int i = 0; i < rows; ++i) {
                    const T* y = &n.out.data[static_cast<std::size_t>(i) * cols];
                    const T* g = &G[static_cast<std::size_t>(i) * cols];
                    T dot = T(0);
                    for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
                    for (int j = 0; j < cols; ++j)
                        ga[static_cast<std::size_t>(i) * cols + j] =
                            y[j] * (g[j] - dot) / n.scalar;
                }
                accum(n, 0, ga);
                break;
            }
            case Op::L2NormRows: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const int rows = ta.rows(), cols = ta.cols();
                std::vector<T> ga(G.size());
                for (int i = 0; i < rows; ++i) {
                    const T* y = &n.out.data[static_cast<std::size_t>(i) * cols];
                    const T* g = &G[static_cast<std::size_t>(i) * cols];
                    const T norm = n.aux_t[static_cast<std::size_t>(i)];
                    T dot = T(0);
                    for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
                    for (int j = 0; j < cols; ++j)
                        ga[static_cast<std::size_t>(i) * cols + j] = (g[j] - y[j] * dot) / norm;
                }
                accum(n, 0, ga);
                break;
            }
            case Op::RowsDot: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const Tensor<T>& tb = mut(n.in[1]).out;
                const int rows = ta.rows(), cols = ta.cols();
                std::vector<T> ga(ta.data.size()), gb(tb.data.size());
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) {
                        const std::size_t k = static_cast<std::size_t>(i) * cols + j;
                        ga[k] = G[static_cast<std::size_t>(i)] * tb.data[k];
                        gb[k] = G[static_cast<std::size_t>(i)] * ta.data[k];
                    }
                accum(n, 0, ga);
                accum(n, 1, gb);
                break;
            }
            case Op::RowSum: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(ta.data.size());
                for (int i = 0; i < ta.rows(); ++i)
                    for (int j = 0; j < ta.cols(); ++j)
                        ga[static_cast<std::size_t>(i) * ta.cols() + j] =
                            G[static_cast<std::size_t>(i)];
                accum(n, 0, ga);
                break;
            }
            case Op::ColSum: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(ta.data.size());
                for (int i = 0; i < ta.rows(); ++i)
                    for (int j = 0; j < ta.cols(); ++j)
                        ga[static_cast<std::size_t>(i) * ta.cols() + j] =
                            G[static_cast<std::size_t>(j)];
                accum(n, 0, ga);
                break;
            }
            case Op::CenterRows: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const int rows = ta.rows(), cols = ta.cols();
                std::vector<T> ga(G.size());
                for (int i = 0; i < rows; ++i) {
                    T gm = T(0);
                    for (int j = 0; j < cols; ++j) gm += G[static_cast<std::size_t>(i) * cols + j];
                    gm /= static_cast<T>(cols);
                    for (int j = 0; j < cols; ++j)
                        ga[static_cast<std::size_t>(i) * cols + j] =
                            G[static_cast<std::size_t>(i) * cols + j] - gm;
                }
                accum(n, 0, ga);
                break;
            }
            case Op::Diag: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(ta.data.size(), T(0));
                for (int i = 0; i < ta.rows(); ++i)
                    ga[static_cast<std::size_t>(i) * ta.cols() + i] = G[static_cast<std::size_t>(i)];
                accum(n, 0, ga);
                break;
            }
            case Op::GatherRows: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                const int cols = ta.cols();
                std::vector<T> ga(ta.data.size(), T(0));
                for (std::size_t r = 0; r < n.aux_i.size(); ++r)
                    for (int j = 0; j < cols; ++j)
                        ga[static_cast<std::size_t>(n.aux_i[r]) * cols + j] +=
                            G[r * static_cast<std::size_t>(cols) + j];
                accum(n, 0, ga);
                break;
            }
            case Op::Sum: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(ta.data.size(), G[0]);
                accum(n, 0, ga);
                break;
            }
            case Op::Mean: {
                const Tensor<T>& ta = mut(n.in[0]).out;
                std::vector<T> ga(ta.data.size(), G[0] / static_cast<T>(ta.numel()));
                accum(n, 0, ga);
                break;
            }
            case Op::Reshape: accum(n, 0, G); break;

            case Op::Conv2d: {
                const Tensor<T>& tx = mut(n.in[0]).out;
                const Tensor<T>& tw = mut(n.in[1]).out;
                const int stride = n.aux_i[0], pad = n.aux_i[1];
                const int B = tx.dims[0], C = tx.dims[1], H = tx.dims[2], W = tx.dims[3];
                const int F = tw.dims[0], KH = tw.dims[2], KW = tw.dims[3];
                const int HO = n.out.dims[2], WO = n.out.dims[3];
                const bool need_x = mut(n.in[0]).needs_grad;
                const bool need_w = mut(n.in[1]).needs_grad;
                const bool need_b = mut(n.in[2]).needs_grad;
                std::vector<T> gx(need_x ? tx.data.size() : 0, T(0));
                std::vector<T> gw(need_w ? tw.data.size() : 0, T(0));
                std::vector<T> gb(need_b ? static_cast<std::size_t>(F) : 0, T(0));
                auto lo_of = [&](int kpos) {
                    const int num = pad - kpos;
                    return num <= 0 ? 0 : (num + stride - 1) / stride;
                };
                for (int b = 0; b < B; ++b)
                    for (int f = 0; f < F; ++f) {
                        const T* gbase = &G[idx4(n.out.dims, b, f, 0, 0)];
                        if (need_b) {
                            T acc = T(0);
                            for (int i = 0; i < HO * WO; ++i) acc += gbase[i];
                            gb[static_cast<std::size_t>(f)] += acc;
                        }
                        for (int c = 0; c < C; ++c) {
                            const T* xc = &tx.data[idx4(tx.dims, b, c, 0, 0)];
                            T* gxc = need_x ? &gx[idx4(tx.dims, b, c, 0, 0)] : nullptr;
                            const T* wfc = &tw.data[idx4(tw.dims, f, c, 0, 0)];
                            T* gwfc = need_w ? &gw[idx4(tw.dims, f, c, 0, 0)] : nullptr;
                            for (int kh = 0; kh < KH; ++kh) {
                                const int ho_lo = lo_of(kh);
                                const int ho_hi = std::min(HO - 1, (H - 1 - kh + pad) / stride);
                                for (int kw = 0; kw < KW; ++kw) {
                                    const int wo_lo = lo_of(kw);
                                    const int wo_hi =
                                        std::min(WO - 1, (W - 1 - kw + pad) / stride);
                                    const T wv = wfc[kh * KW + kw];
                                    T wacc = T(0);
                                    for (int ho = ho_lo; ho <= ho_hi; ++ho) {
                                        const int off = (ho * stride - pad + kh) * W - pad + kw;
                                        const T* grow = gbase + ho * WO;
                                        const T* xrow = xc + off;
                                        if (need_x) {
                                            T* gxrow = gxc + off;
                                            for (int wo = wo_lo; wo <= wo_hi; ++wo) {
                                                const T go = grow[wo];
                                                gxrow[wo * stride] += go * wv;
                                                wacc += go * xrow[wo * stride];
                                            }
                                        } else {
                                            for (int wo = wo_lo; wo <= wo_hi; ++wo)
                                                wacc += grow[wo] * xrow[wo * stride];
                                        }
                                    }
                                    if (need_w) gwfc[kh * KW + kw] += wacc;
                                }
                            }
                        }
                    }
                if (need_x) accum(n, 0, gx);
                if (need_w) accum(n, 1, gw);
                if (need_b) accum(n, 2, gb);
                break;
            }
        }
    }
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace ncdlab
