#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "pfdiqa/errors.hpp"
#include "pfdiqa/params.hpp"

namespace pfd::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

// Handle into a tape. Cheap to copy; valid as long as the tape lives and
// has not been cleared.
struct Var {
    Tape* tape = nullptr;
    int idx = -1;
    bool valid() const { return tape != nullptr && idx >= 0; }
    const Mat& value() const;
    int rows() const;
    int cols() const;
};

// Reverse-mode tape over Eigen double matrices. One tape per forward pass;
// nodes only reference earlier nodes, so creation order is a topological
// order and backward() is a single reverse sweep. Gradients for parameter
// leaves are accumulated into a flat buffer aligned with the ParamStore.
class Tape {
public:
    Tape() { nodes_.reserve(512); }

    // leaves
    Var input(Mat v);                 // constant, no gradient tracked
    Var input_grad(Mat v);            // constant value, gradient tracked (for probes/tests)
    Var param(const ParamStore& store, Slot slot);

    // arithmetic
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var hadamard(Var a, Var b);
    Var matmul(Var a, Var b);         // A * B
    Var matmul_nt(Var a, Var b);      // A * B^T
    Var matmul_tn(Var a, Var b);      // A^T * B
    Var add_rowvec(Var x, Var bias);  // bias (1xC) added to every row
    Var mul_rowvec(Var x, Var s);     // every row scaled elementwise by s (1xC)

    // nonlinearities
    Var relu(Var a);
    Var gelu(Var a);
    Var silu(Var a);
    Var sigmoid(Var a);

    // normalization / reductions
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
    // normalizes each channel (column) over tokens (rows); affine per channel
    Var channel_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var mean_over_rows(Var a);        // NxC -> 1xC
    Var mean_all(Var a);              // -> 1x1
    Var sum_all(Var a);               // -> 1x1
    Var l2_normalize_row(Var a);      // 1xC, throws DegenerateInputError on zero norm

    // structure
    Var slice_cols(Var a, int start, int n);
    Var concat_cols(const std::vector<Var>& parts);
    Var vstack2(Var a, Var b);
    Var detach(Var a);

    // 3x3 convolution over a (grid_h x grid_w) token grid with zero padding.
    // x: N x Cin (row i = token at (i / grid_w, i % grid_w)); w: Cout x (9*Cin); b: 1 x Cout
    Var conv3x3(Var x, Var w, Var b, int grid_h, int grid_w);

    // losses
    Var mse_loss(Var a, const Mat& target);            // mean over elements
    Var l1_loss(Var yhat, double y);                   // yhat is 1x1
    // KL(p || q) with constant teacher p (length-K row) and tape q (1xK probs);
    // q clamped below at `clamp`, 0*log0 := 0.
    Var kl_div(const Vec& teacher_p, Var q, double clamp = 1e-8);

    void backward(Var loss);
    // add parameter-leaf gradients into flat (must be ParamStore-sized)
    void collect_param_grads(std::vector<double>& flat) const;
    const Mat& value(Var v) const;
    const Mat& grad(Var v) const;     // valid after backward for tracked nodes
    bool has_grad(Var v) const;
    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

private:
    enum class Op : std::uint8_t {
        Leaf, Param, Add, Sub, Scale, AddScalar, Hadamard,
        MatMul, MatMulNT, MatMulTN, AddRowVec, MulRowVec,
        Relu, Gelu, Silu, Sigmoid,
        SoftmaxRows, LayerNormRows, ChannelNorm,
        MeanOverRows, MeanAll, SumAll, L2NormalizeRow,
        SliceCols, ConcatCols, VStack2, Detach, Conv3x3,
        MseLoss, L1Loss, KlDiv,
    };

    struct Node {
        Op op;
        Mat val;
        Mat grad;
        bool needs_grad = false;
        bool grad_touched = false;
        int a = -1, b = -1, c = -1;
        std::vector<int> more;
        double s0 = 0.0, s1 = 0.0;
        int i0 = 0, i1 = 0;
        Mat aux;                       // op-specific stash (xhat, im2col patches, ...)
        Vec auxv;                      // op-specific vector stash
        int param_slot = -1;
    };

    int push(Node&& n);
    Node& at(Var v);
    const Node& at(Var v) const;
    void check_same_tape(Var v) const;
    Mat& touch_grad(int idx);
    void backprop(int idx);

    std::vector<Node> nodes_;
    const ParamStore* store_ = nullptr;
};

// global L2 norm of a flat vector
double flat_norm(const std::vector<double>& v);

}  // namespace pfd::nn
