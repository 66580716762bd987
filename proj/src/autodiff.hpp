#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace comodal {

// Define-by-run reverse-mode autodiff. Each op builds a Node whose
// backward_op scatters this node's grad into its inputs' grads. Graphs are
// DAGs (a node may feed several consumers; gradients accumulate).
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same dims as value
    bool requires_grad{false};
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_op;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor::zeros(value.dims());
    }
    void zero_grad() {
        if (grad.numel() == value.numel())
            std::fill(grad.data(), grad.data() + grad.numel(), 0.0);
    }
    double scalar() const {
        require(value.numel() == 1, ErrorCode::invalid_argument, "node is not a scalar");
        return value[0];
    }
};

NodePtr constant(Tensor value);
NodePtr leaf(Tensor value, bool requires_grad = true);

// Seeds root's grad with 1 and runs the reverse topological sweep. The root
// must be a scalar.
void backward(const NodePtr& root);

// ---- elementwise / linear algebra --------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b);              // same shape
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double factor);
NodePtr add_scalars(const std::vector<NodePtr>& terms);       // scalar nodes
NodePtr mean_scalars(const std::vector<NodePtr>& terms);
NodePtr matmul(const NodePtr& a, const NodePtr& b);           // [N,K]x[K,M]
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);        // [N,K]x[M,K]^T -> [N,M]
NodePtr add_row_bias(const NodePtr& x, const NodePtr& bias);  // [N,M] + [M]
NodePtr slice_cols(const NodePtr& x, int from, int to);       // [N,M] -> [N,to-from]
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr reshape(const NodePtr& x, std::vector<int> dims);     // same numel

// ---- nonlinearities ------------------------------------------------------

NodePtr relu(const NodePtr& x);
NodePtr gelu(const NodePtr& x);
NodePtr sigmoid(const NodePtr& x);
NodePtr softmax_rows(const NodePtr& x);  // [N,M], softmax over M

// LayerNorm over the last dimension of a [N,C] matrix.
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                   double eps = 1e-5);

// ---- token grid <-> volume layout ---------------------------------------

// [N,C] tokens in row-major (d,h,w) order -> [C,D,H,W] grid and back.
NodePtr tokens_to_grid(const NodePtr& tokens, const std::array<int, 3>& grid);
NodePtr grid_to_tokens(const NodePtr& grid_tensor);

// ---- volumetric ops ------------------------------------------------------

// x: [Cin,D,H,W], w: [Cout,Cin,k,k,k] (k odd), b: [Cout]; stride 1,
// zero padding k/2 (shape preserving).
NodePtr conv3d(const NodePtr& x, const NodePtr& w, const NodePtr& b);
NodePtr upsample_nearest2(const NodePtr& x);                  // [C,D,H,W] -> [C,2D,2H,2W]
NodePtr concat_channels(const NodePtr& a, const NodePtr& b);  // along dim 0
NodePtr global_avg_pool(const NodePtr& x);                    // [C,D,H,W] -> [C]
NodePtr scale_channels(const NodePtr& x, const NodePtr& gate);  // x[C,...] * gate[C]
NodePtr softmax_channels(const NodePtr& x);  // [K,D,H,W], softmax over K per voxel

}  // namespace comodal
