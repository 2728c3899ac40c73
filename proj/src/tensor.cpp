#include "pfdiqa/tensor.hpp"

#include <cmath>
#include <utility>

namespace pfd::nn {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kInvSqrt2 = 0.7071067811865475244;
}  // namespace

const Mat& Var::value() const { return tape->value(*this); }
int Var::rows() const { return static_cast<int>(value().rows()); }
int Var::cols() const { return static_cast<int>(value().cols()); }

int Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::at(Var v) { return nodes_.at(v.idx); }
const Tape::Node& Tape::at(Var v) const { return nodes_.at(v.idx); }

void Tape::check_same_tape(Var v) const {
    if (v.tape != this || v.idx < 0 || v.idx >= static_cast<int>(nodes_.size()))
        throw ArgumentError("Var does not belong to this tape");
}

const Mat& Tape::value(Var v) const {
    check_same_tape(v);
    return at(v).val;
}

const Mat& Tape::grad(Var v) const {
    check_same_tape(v);
    const Node& n = at(v);
    if (!n.grad_touched)
        throw ArgumentError("gradient not populated for this node");
    return n.grad;
}

bool Tape::has_grad(Var v) const {
    check_same_tape(v);
    return at(v).grad_touched;
}

Mat& Tape::touch_grad(int idx) {
    Node& n = nodes_[idx];
    if (!n.grad_touched) {
        n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        n.grad_touched = true;
    }
    return n.grad;
}

Var Tape::input(Mat v) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    n.needs_grad = false;
    return Var{this, push(std::move(n))};
}

Var Tape::input_grad(Mat v) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(v);
    n.needs_grad = true;
    return Var{this, push(std::move(n))};
}

Var Tape::param(const ParamStore& store, Slot slot) {
    if (store_ == nullptr) store_ = &store;
    else if (store_ != &store)
        throw ArgumentError("tape already bound to a different ParamStore");
    Node n;
    n.op = Op::Param;
    n.val = store.mat(slot);
    n.needs_grad = true;
    n.param_slot = slot.id;
    return Var{this, push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.rows() != at(b).val.rows() || at(a).val.cols() != at(b).val.cols())
        throw ArgumentError("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a.idx;
    n.b = b.idx;
    n.val = at(a).val + at(b).val;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.rows() != at(b).val.rows() || at(a).val.cols() != at(b).val.cols())
        throw ArgumentError("sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a.idx;
    n.b = b.idx;
    n.val = at(a).val - at(b).val;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::scale(Var a, double c) {
    check_same_tape(a);
    Node n;
    n.op = Op::Scale;
    n.a = a.idx;
    n.s0 = c;
    n.val = c * at(a).val;
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::add_scalar(Var a, double c) {
    check_same_tape(a);
    Node n;
    n.op = Op::AddScalar;
    n.a = a.idx;
    n.s0 = c;
    n.val = at(a).val;
    n.val.array() += c;
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::hadamard(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.rows() != at(b).val.rows() || at(a).val.cols() != at(b).val.cols())
        throw ArgumentError("hadamard: shape mismatch");
    Node n;
    n.op = Op::Hadamard;
    n.a = a.idx;
    n.b = b.idx;
    n.val = at(a).val.cwiseProduct(at(b).val);
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.cols() != at(b).val.rows())
        throw ArgumentError("matmul: inner dimension mismatch");
    Node n;
    n.op = Op::MatMul;
    n.a = a.idx;
    n.b = b.idx;
    n.val.noalias() = at(a).val * at(b).val;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.cols() != at(b).val.cols())
        throw ArgumentError("matmul_nt: inner dimension mismatch");
    Node n;
    n.op = Op::MatMulNT;
    n.a = a.idx;
    n.b = b.idx;
    n.val.noalias() = at(a).val * at(b).val.transpose();
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::matmul_tn(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.rows() != at(b).val.rows())
        throw ArgumentError("matmul_tn: inner dimension mismatch");
    Node n;
    n.op = Op::MatMulTN;
    n.a = a.idx;
    n.b = b.idx;
    n.val.noalias() = at(a).val.transpose() * at(b).val;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::add_rowvec(Var x, Var bias) {
    check_same_tape(x);
    check_same_tape(bias);
    if (at(bias).val.rows() != 1 || at(bias).val.cols() != at(x).val.cols())
        throw ArgumentError("add_rowvec: bias must be 1 x cols(x)");
    Node n;
    n.op = Op::AddRowVec;
    n.a = x.idx;
    n.b = bias.idx;
    n.val = at(x).val.rowwise() + at(bias).val.row(0);
    n.needs_grad = at(x).needs_grad || at(bias).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mul_rowvec(Var x, Var s) {
    check_same_tape(x);
    check_same_tape(s);
    if (at(s).val.rows() != 1 || at(s).val.cols() != at(x).val.cols())
        throw ArgumentError("mul_rowvec: scale must be 1 x cols(x)");
    Node n;
    n.op = Op::MulRowVec;
    n.a = x.idx;
    n.b = s.idx;
    n.val = (at(x).val.array().rowwise() * at(s).val.row(0).array()).matrix();
    n.needs_grad = at(x).needs_grad || at(s).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::relu(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::Relu;
    n.a = a.idx;
    n.val = at(a).val.cwiseMax(0.0);
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::gelu(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::Gelu;
    n.a = a.idx;
    n.val = at(a).val.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::silu(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::Silu;
    n.a = a.idx;
    n.val = at(a).val.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sigmoid(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.idx;
    n.val = at(a).val.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::softmax_rows(Var a) {
    check_same_tape(a);
    const Mat& x = at(a).val;
    Mat y(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x.row(r).array() - m).exp().matrix();
        y.row(r) = e / e.sum();
    }
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a.idx;
    n.val = std::move(y);
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    check_same_tape(x);
    check_same_tape(gamma);
    check_same_tape(beta);
    const Mat& xv = at(x).val;
    const int c = static_cast<int>(xv.cols());
    if (at(gamma).val.rows() != 1 || at(gamma).val.cols() != c ||
        at(beta).val.rows() != 1 || at(beta).val.cols() != c)
        throw ArgumentError("layer_norm_rows: gamma/beta must be 1 x cols(x)");
    Mat xhat(xv.rows(), c);
    Vec invstd(xv.rows());
    for (int r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = ((xv.row(r).array() - mu) * is).matrix();
        invstd(r) = is;
    }
    Node n;
    n.op = Op::LayerNormRows;
    n.a = x.idx;
    n.b = gamma.idx;
    n.c = beta.idx;
    n.s0 = eps;
    n.val = ((xhat.array().rowwise() * at(gamma).val.row(0).array()).rowwise() +
             at(beta).val.row(0).array())
                .matrix();
    n.aux = std::move(xhat);
    n.auxv = std::move(invstd);
    n.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::channel_norm(Var x, Var gamma, Var beta, double eps) {
    check_same_tape(x);
    check_same_tape(gamma);
    check_same_tape(beta);
    const Mat& xv = at(x).val;
    const int c = static_cast<int>(xv.cols());
    if (at(gamma).val.rows() != 1 || at(gamma).val.cols() != c ||
        at(beta).val.rows() != 1 || at(beta).val.cols() != c)
        throw ArgumentError("channel_norm: gamma/beta must be 1 x cols(x)");
    if (xv.rows() < 2)
        throw DegenerateInputError("channel_norm: needs at least 2 rows");
    Mat xhat(xv.rows(), c);
    Vec invstd(c);
    for (int j = 0; j < c; ++j) {
        const double mu = xv.col(j).mean();
        const double var = (xv.col(j).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        xhat.col(j) = ((xv.col(j).array() - mu) * is).matrix();
        invstd(j) = is;
    }
    Node n;
    n.op = Op::ChannelNorm;
    n.a = x.idx;
    n.b = gamma.idx;
    n.c = beta.idx;
    n.s0 = eps;
    n.val = ((xhat.array().rowwise() * at(gamma).val.row(0).array()).rowwise() +
             at(beta).val.row(0).array())
                .matrix();
    n.aux = std::move(xhat);
    n.auxv = std::move(invstd);
    n.needs_grad = at(x).needs_grad || at(gamma).needs_grad || at(beta).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mean_over_rows(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::MeanOverRows;
    n.a = a.idx;
    n.val = at(a).val.colwise().mean();
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mean_all(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::MeanAll;
    n.a = a.idx;
    n.val = Mat::Constant(1, 1, at(a).val.mean());
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::sum_all(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::SumAll;
    n.a = a.idx;
    n.val = Mat::Constant(1, 1, at(a).val.sum());
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::l2_normalize_row(Var a) {
    check_same_tape(a);
    const Mat& x = at(a).val;
    if (x.rows() != 1)
        throw ArgumentError("l2_normalize_row: expects a 1 x C row");
    const double norm = x.norm();
    if (norm < 1e-12)
        throw DegenerateInputError("l2_normalize_row: zero-norm row");
    Node n;
    n.op = Op::L2NormalizeRow;
    n.a = a.idx;
    n.s0 = norm;
    n.val = x / norm;
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::slice_cols(Var a, int start, int ncols) {
    check_same_tape(a);
    const Mat& x = at(a).val;
    if (start < 0 || ncols <= 0 || start + ncols > x.cols())
        throw ArgumentError("slice_cols: range out of bounds");
    Node n;
    n.op = Op::SliceCols;
    n.a = a.idx;
    n.i0 = start;
    n.i1 = ncols;
    n.val = x.middleCols(start, ncols);
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty())
        throw ArgumentError("concat_cols: empty input");
    int total = 0;
    const int rows = static_cast<int>(value(parts[0]).rows());
    bool ng = false;
    for (Var p : parts) {
        check_same_tape(p);
        if (at(p).val.rows() != rows)
            throw ArgumentError("concat_cols: row mismatch");
        total += static_cast<int>(at(p).val.cols());
        ng = ng || at(p).needs_grad;
    }
    Mat y(rows, total);
    int off = 0;
    for (Var p : parts) {
        const Mat& v = at(p).val;
        y.middleCols(off, v.cols()) = v;
        off += static_cast<int>(v.cols());
    }
    Node n;
    n.op = Op::ConcatCols;
    n.val = std::move(y);
    n.needs_grad = ng;
    for (Var p : parts) n.more.push_back(p.idx);
    return Var{this, push(std::move(n))};
}

Var Tape::vstack2(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    if (at(a).val.cols() != at(b).val.cols())
        throw ArgumentError("vstack2: column mismatch");
    Node n;
    n.op = Op::VStack2;
    n.a = a.idx;
    n.b = b.idx;
    Mat y(at(a).val.rows() + at(b).val.rows(), at(a).val.cols());
    y.topRows(at(a).val.rows()) = at(a).val;
    y.bottomRows(at(b).val.rows()) = at(b).val;
    n.val = std::move(y);
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::detach(Var a) {
    check_same_tape(a);
    Node n;
    n.op = Op::Detach;
    n.val = at(a).val;
    n.needs_grad = false;
    return Var{this, push(std::move(n))};
}

Var Tape::conv3x3(Var x, Var w, Var b, int grid_h, int grid_w) {
    check_same_tape(x);
    check_same_tape(w);
    check_same_tape(b);
    const Mat& xv = at(x).val;
    const Mat& wv = at(w).val;
    const Mat& bv = at(b).val;
    const int n_tok = static_cast<int>(xv.rows());
    const int cin = static_cast<int>(xv.cols());
    if (grid_h <= 0 || grid_w <= 0 || grid_h * grid_w != n_tok)
        throw ArgumentError("conv3x3: grid does not match token count");
    if (wv.cols() != 9 * cin)
        throw ArgumentError("conv3x3: weight must be Cout x (9*Cin)");
    if (bv.rows() != 1 || bv.cols() != wv.rows())
        throw ArgumentError("conv3x3: bias must be 1 x Cout");
    Mat patches = Mat::Zero(n_tok, 9 * cin);
    for (int gy = 0; gy < grid_h; ++gy) {
        for (int gx = 0; gx < grid_w; ++gx) {
            const int i = gy * grid_w + gx;
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, ++k) {
                    const int ny = gy + dy, nx = gx + dx;
                    if (ny < 0 || ny >= grid_h || nx < 0 || nx >= grid_w) continue;
                    patches.block(i, k * cin, 1, cin) = xv.row(ny * grid_w + nx);
                }
            }
        }
    }
    Node n;
    n.op = Op::Conv3x3;
    n.a = x.idx;
    n.b = w.idx;
    n.c = b.idx;
    n.i0 = grid_h;
    n.i1 = grid_w;
    n.val = (patches * wv.transpose()).rowwise() + bv.row(0);
    n.aux = std::move(patches);
    n.needs_grad = at(x).needs_grad || at(w).needs_grad || at(b).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::mse_loss(Var a, const Mat& target) {
    check_same_tape(a);
    const Mat& x = at(a).val;
    if (x.rows() != target.rows() || x.cols() != target.cols())
        throw ArgumentError("mse_loss: shape mismatch with target");
    Node n;
    n.op = Op::MseLoss;
    n.a = a.idx;
    n.val = Mat::Constant(1, 1, (x - target).squaredNorm() / static_cast<double>(x.size()));
    n.aux = target;
    n.needs_grad = at(a).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::l1_loss(Var yhat, double y) {
    check_same_tape(yhat);
    const Mat& x = at(yhat).val;
    if (x.rows() != 1 || x.cols() != 1)
        throw ArgumentError("l1_loss: prediction must be 1x1");
    Node n;
    n.op = Op::L1Loss;
    n.a = yhat.idx;
    n.s0 = y;
    n.val = Mat::Constant(1, 1, std::abs(x(0, 0) - y));
    n.needs_grad = at(yhat).needs_grad;
    return Var{this, push(std::move(n))};
}

Var Tape::kl_div(const Vec& teacher_p, Var q, double clamp) {
    check_same_tape(q);
    const Mat& qv = at(q).val;
    if (qv.rows() != 1 || qv.cols() != teacher_p.size())
        throw ArgumentError("kl_div: q must be 1 x K matching teacher distribution");
    double acc = 0.0;
    for (int i = 0; i < teacher_p.size(); ++i) {
        const double p = teacher_p(i);
        if (p <= 0.0) continue;
        const double qi = std::max(qv(0, i), clamp);
        acc += p * (std::log(p) - std::log(qi));
    }
    Node n;
    n.op = Op::KlDiv;
    n.a = q.idx;
    n.s0 = clamp;
    n.val = Mat::Constant(1, 1, acc);
    n.auxv = teacher_p;
    n.needs_grad = at(q).needs_grad;
    return Var{this, push(std::move(n))};
}

void Tape::backprop(int idx) {
    Node& n = nodes_[idx];
    const Mat& g = n.grad;
    auto needs = [&](int p) { return p >= 0 && nodes_[p].needs_grad; };
    switch (n.op) {
        case Op::Leaf:
        case Op::Param:
        case Op::Detach:
            break;
        case Op::Add:
            if (needs(n.a)) touch_grad(n.a) += g;
            if (needs(n.b)) touch_grad(n.b) += g;
            break;
        case Op::Sub:
            if (needs(n.a)) touch_grad(n.a) += g;
            if (needs(n.b)) touch_grad(n.b) -= g;
            break;
        case Op::Scale:
            if (needs(n.a)) touch_grad(n.a) += n.s0 * g;
            break;
        case Op::AddScalar:
            if (needs(n.a)) touch_grad(n.a) += g;
            break;
        case Op::Hadamard:
            if (needs(n.a)) touch_grad(n.a) += g.cwiseProduct(nodes_[n.b].val);
            if (needs(n.b)) touch_grad(n.b) += g.cwiseProduct(nodes_[n.a].val);
            break;
        case Op::MatMul:
            if (needs(n.a)) touch_grad(n.a).noalias() += g * nodes_[n.b].val.transpose();
            if (needs(n.b)) touch_grad(n.b).noalias() += nodes_[n.a].val.transpose() * g;
            break;
        case Op::MatMulNT:
            if (needs(n.a)) touch_grad(n.a).noalias() += g * nodes_[n.b].val;
            if (needs(n.b)) touch_grad(n.b).noalias() += g.transpose() * nodes_[n.a].val;
            break;
        case Op::MatMulTN:
            if (needs(n.a)) touch_grad(n.a).noalias() += nodes_[n.b].val * g.transpose();
            if (needs(n.b)) touch_grad(n.b).noalias() += nodes_[n.a].val * g;
            break;
        case Op::AddRowVec:
            if (needs(n.a)) touch_grad(n.a) += g;
            if (needs(n.b)) touch_grad(n.b) += g.colwise().sum();
            break;
        case Op::MulRowVec:
            if (needs(n.a))
                touch_grad(n.a) +=
                    (g.array().rowwise() * nodes_[n.b].val.row(0).array()).matrix();
            if (needs(n.b))
                touch_grad(n.b) += g.cwiseProduct(nodes_[n.a].val).colwise().sum();
            break;
        case Op::Relu:
            if (needs(n.a)) {
                const Mat& x = nodes_[n.a].val;
                touch_grad(n.a) += g.cwiseProduct(
                    x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
            }
            break;
        case Op::Gelu:
            if (needs(n.a)) {
                const Mat& x = nodes_[n.a].val;
                touch_grad(n.a) += g.cwiseProduct(x.unaryExpr([](double v) {
                    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                    return cdf + v * pdf;
                }));
            }
            break;
        case Op::Silu:
            if (needs(n.a)) {
                const Mat& x = nodes_[n.a].val;
                touch_grad(n.a) += g.cwiseProduct(x.unaryExpr([](double v) {
                    const double s = 1.0 / (1.0 + std::exp(-v));
                    return s * (1.0 + v * (1.0 - s));
                }));
            }
            break;
        case Op::Sigmoid:
            if (needs(n.a))
                touch_grad(n.a) += g.cwiseProduct(
                    n.val.unaryExpr([](double y) { return y * (1.0 - y); }));
            break;
        case Op::SoftmaxRows:
            if (needs(n.a)) {
                Mat& ga = touch_grad(n.a);
                for (int r = 0; r < n.val.rows(); ++r) {
                    const double dot = g.row(r).cwiseProduct(n.val.row(r)).sum();
                    ga.row(r) +=
                        ((g.row(r).array() - dot) * n.val.row(r).array()).matrix();
                }
            }
            break;
        case Op::LayerNormRows: {
            const Mat& gamma = nodes_[n.b].val;
            const Mat& xhat = n.aux;
            const int c = static_cast<int>(xhat.cols());
            if (needs(n.b)) touch_grad(n.b) += g.cwiseProduct(xhat).colwise().sum();
            if (needs(n.c)) touch_grad(n.c) += g.colwise().sum();
            if (needs(n.a)) {
                Mat& ga = touch_grad(n.a);
                for (int r = 0; r < xhat.rows(); ++r) {
                    Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gamma.row(0));
                    const double m1 = dxhat.mean();
                    const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
                    ga.row(r) += n.auxv(r) *
                                 (dxhat.array() - m1 - xhat.row(r).array() * m2)
                                     .matrix();
                }
                (void)c;
            }
            break;
        }
        case Op::ChannelNorm: {
            const Mat& gamma = nodes_[n.b].val;
            const Mat& xhat = n.aux;
            if (needs(n.b)) touch_grad(n.b) += g.cwiseProduct(xhat).colwise().sum();
            if (needs(n.c)) touch_grad(n.c) += g.colwise().sum();
            if (needs(n.a)) {
                Mat& ga = touch_grad(n.a);
                for (int j = 0; j < xhat.cols(); ++j) {
                    Vec dxhat = g.col(j) * gamma(0, j);
                    const double m1 = dxhat.mean();
                    const double m2 = dxhat.cwiseProduct(xhat.col(j)).mean();
                    ga.col(j) += n.auxv(j) *
                                 (dxhat.array() - m1 - xhat.col(j).array() * m2)
                                     .matrix();
                }
            }
            break;
        }
        case Op::MeanOverRows:
            if (needs(n.a)) {
                const double inv = 1.0 / static_cast<double>(nodes_[n.a].val.rows());
                touch_grad(n.a) += inv * (Vec::Ones(nodes_[n.a].val.rows()) * g.row(0));
            }
            break;
        case Op::MeanAll:
            if (needs(n.a)) {
                const double inv = g(0, 0) / static_cast<double>(nodes_[n.a].val.size());
                touch_grad(n.a).array() += inv;
            }
            break;
        case Op::SumAll:
            if (needs(n.a)) touch_grad(n.a).array() += g(0, 0);
            break;
        case Op::L2NormalizeRow:
            if (needs(n.a)) {
                const double dot = g.row(0).cwiseProduct(n.val.row(0)).sum();
                touch_grad(n.a).row(0) +=
                    (g.row(0) - dot * n.val.row(0)) / n.s0;
            }
            break;
        case Op::SliceCols:
            if (needs(n.a)) touch_grad(n.a).middleCols(n.i0, n.i1) += g;
            break;
        case Op::ConcatCols: {
            int off = 0;
            for (int p : n.more) {
                const int w = static_cast<int>(nodes_[p].val.cols());
                if (needs(p)) touch_grad(p) += g.middleCols(off, w);
                off += w;
            }
            break;
        }
        case Op::VStack2: {
            const int ra = static_cast<int>(nodes_[n.a].val.rows());
            const int rb = static_cast<int>(nodes_[n.b].val.rows());
            if (needs(n.a)) touch_grad(n.a) += g.topRows(ra);
            if (needs(n.b)) touch_grad(n.b) += g.bottomRows(rb);
            break;
        }
        case Op::Conv3x3: {
            const Mat& patches = n.aux;
            const Mat& wv = nodes_[n.b].val;
            const int cin = static_cast<int>(nodes_[n.a].val.cols());
            if (needs(n.b)) touch_grad(n.b).noalias() += g.transpose() * patches;
            if (needs(n.c)) touch_grad(n.c) += g.colwise().sum();
            if (needs(n.a)) {
                Mat dpatches = g * wv;  // N x 9Cin
                Mat& ga = touch_grad(n.a);
                const int grid_h = n.i0, grid_w = n.i1;
                for (int gy = 0; gy < grid_h; ++gy) {
                    for (int gx = 0; gx < grid_w; ++gx) {
                        const int i = gy * grid_w + gx;
                        int k = 0;
                        for (int dy = -1; dy <= 1; ++dy) {
                            for (int dx = -1; dx <= 1; ++dx, ++k) {
                                const int ny = gy + dy, nx = gx + dx;
                                if (ny < 0 || ny >= grid_h || nx < 0 || nx >= grid_w)
                                    continue;
                                ga.row(ny * grid_w + nx) +=
                                    dpatches.block(i, k * cin, 1, cin);
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::MseLoss:
            if (needs(n.a)) {
                const double c = 2.0 * g(0, 0) / static_cast<double>(n.aux.size());
                touch_grad(n.a) += c * (nodes_[n.a].val - n.aux);
            }
            break;
        case Op::L1Loss:
            if (needs(n.a)) {
                const double d = nodes_[n.a].val(0, 0) - n.s0;
                const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                touch_grad(n.a)(0, 0) += g(0, 0) * sgn;
            }
            break;
        case Op::KlDiv:
            if (needs(n.a)) {
                Mat& ga = touch_grad(n.a);
                const Mat& qv = nodes_[n.a].val;
                for (int i = 0; i < n.auxv.size(); ++i) {
                    const double p = n.auxv(i);
                    if (p <= 0.0) continue;
                    if (qv(0, i) <= n.s0) continue;
                    ga(0, i) += g(0, 0) * (-p / qv(0, i));
                }
            }
            break;
    }
}

void Tape::backward(Var loss) {
    check_same_tape(loss);
    const Node& ln = at(loss);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
        throw ArgumentError("backward: loss must be a 1x1 scalar");
    if (!ln.needs_grad)
        throw ArgumentError("backward: loss does not depend on any tracked value");
    for (Node& n : nodes_) {
        n.grad_touched = false;
        n.grad.resize(0, 0);
    }
    touch_grad(loss.idx)(0, 0) = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
        if (nodes_[i].grad_touched && nodes_[i].needs_grad) backprop(i);
    }
}

void Tape::collect_param_grads(std::vector<double>& flat) const {
    if (store_ == nullptr) return;
    if (flat.size() != store_->size())
        throw ArgumentError("collect_param_grads: buffer size mismatch");
    for (const Node& n : nodes_) {
        if (n.op != Op::Param || !n.grad_touched) continue;
        const auto& e = store_->entries()[n.param_slot];
        const double* src = n.grad.data();
        double* dst = flat.data() + e.offset;
        const int cnt = e.rows * e.cols;
        for (int k = 0; k < cnt; ++k) dst[k] += src[k];
    }
}

double flat_norm(const std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

}  // namespace pfd::nn
