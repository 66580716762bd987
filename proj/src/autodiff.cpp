#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace comodal {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_op = std::move(bw);
    return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
    require(a->value.same_shape(b->value), ErrorCode::shape_mismatch,
            std::string(op) + ": shapes " + a->value.shape_string() + " and " +
                b->value.shape_string() + " differ");
}

// Accumulate src into input's grad if it participates in the tape.
inline bool wants_grad(const Node& self, size_t i) { return self.inputs[i]->requires_grad; }

inline Tensor& grad_of(Node& self, size_t i) {
    self.inputs[i]->ensure_grad();
    return self.inputs[i]->grad;
}

}  // namespace

NodePtr constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

NodePtr leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

void backward(const NodePtr& root) {
    require(root != nullptr, ErrorCode::invalid_argument, "backward: null root");
    require(root->value.numel() == 1, ErrorCode::invalid_argument,
            "backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS over the DAG.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_op) (*it)->backward_op(**it);
}

// ---- elementwise / linear algebra ----------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (size_t k = 0; k < 2; ++k) {
            if (!wants_grad(self, k)) continue;
            Tensor& g = grad_of(self, k);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (wants_grad(self, 0)) {
            Tensor& g = grad_of(self, 0);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = grad_of(self, 1);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

NodePtr scale(const NodePtr& a, double factor) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= factor;
    return make_node(std::move(out), {a}, [factor](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
    });
}

NodePtr add_scalars(const std::vector<NodePtr>& terms) {
    require(!terms.empty(), ErrorCode::invalid_argument, "add_scalars: empty term list");
    double sum = 0.0;
    for (const auto& t : terms) sum += t->scalar();
    return make_node(Tensor::scalar(sum), terms, [](Node& self) {
        for (size_t k = 0; k < self.inputs.size(); ++k)
            if (wants_grad(self, k)) grad_of(self, k)[0] += self.grad[0];
    });
}

NodePtr mean_scalars(const std::vector<NodePtr>& terms) {
    require(!terms.empty(), ErrorCode::invalid_argument, "mean_scalars: empty term list");
    double sum = 0.0;
    for (const auto& t : terms) sum += t->scalar();
    double inv_n = 1.0 / static_cast<double>(terms.size());
    return make_node(Tensor::scalar(sum * inv_n), terms, [inv_n](Node& self) {
        for (size_t k = 0; k < self.inputs.size(); ++k)
            if (wants_grad(self, k)) grad_of(self, k)[0] += inv_n * self.grad[0];
    });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    require(a->value.rank() == 2 && b->value.rank() == 2, ErrorCode::shape_mismatch,
            "matmul expects rank-2 tensors");
    const int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
    require(b->value.dim(0) == k, ErrorCode::shape_mismatch,
            "matmul: inner dims differ (" + a->value.shape_string() + " x " +
                b->value.shape_string() + ")");
    Tensor out({n, m});
    const double* A = a->value.data();
    const double* B = b->value.data();
    double* Y = out.data();
#pragma omp parallel for schedule(static) if (n > 8)
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
            double av = A[i * k + p];
            const double* brow = B + p * m;
            double* yrow = Y + i * m;
            for (int j = 0; j < m; ++j) yrow[j] += av * brow[j];
        }
    return make_node(std::move(out), {a, b}, [n, k, m](Node& self) {
        const double* G = self.grad.data();
        const double* A = self.inputs[0]->value.data();
        const double* B = self.inputs[1]->value.data();
        if (wants_grad(self, 0)) {
            double* dA = grad_of(self, 0).data();
#pragma omp parallel for schedule(static) if (n > 8)
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const double* grow = G + i * m;
                    const double* brow = B + p * m;
                    double acc = 0.0;
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    dA[i * k + p] += acc;
                }
        }
        if (wants_grad(self, 1)) {
            double* dB = grad_of(self, 1).data();
#pragma omp parallel for schedule(static) if (k > 8)
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < n; ++i) {
                    double av = A[i * k + p];
                    const double* grow = G + i * m;
                    double* drow = dB + p * m;
                    for (int j = 0; j < m; ++j) drow[j] += av * grow[j];
                }
        }
    });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    require(a->value.rank() == 2 && b->value.rank() == 2, ErrorCode::shape_mismatch,
            "matmul_nt expects rank-2 tensors");
    const int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(0);
    require(b->value.dim(1) == k, ErrorCode::shape_mismatch, "matmul_nt: inner dims differ");
    Tensor out({n, m});
    const double* A = a->value.data();
    const double* B = b->value.data();
    double* Y = out.data();
#pragma omp parallel for schedule(static) if (n > 8)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            const double* arow = A + i * k;
            const double* brow = B + j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            Y[i * m + j] = acc;
        }
    return make_node(std::move(out), {a, b}, [n, k, m](Node& self) {
        const double* G = self.grad.data();
        const double* A = self.inputs[0]->value.data();
        const double* B = self.inputs[1]->value.data();
        if (wants_grad(self, 0)) {
            double* dA = grad_of(self, 0).data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    double gv = G[i * m + j];
                    const double* brow = B + j * k;
                    double* drow = dA + i * k;
                    for (int p = 0; p < k; ++p) drow[p] += gv * brow[p];
                }
        }
        if (wants_grad(self, 1)) {
            double* dB = grad_of(self, 1).data();
            for (int j = 0; j < m; ++j)
                for (int i = 0; i < n; ++i) {
                    double gv = G[i * m + j];
                    const double* arow = A + i * k;
                    double* drow = dB + j * k;
                    for (int p = 0; p < k; ++p) drow[p] += gv * arow[p];
                }
        }
    });
}

NodePtr add_row_bias(const NodePtr& x, const NodePtr& bias) {
    require(x->value.rank() == 2 && bias->value.rank() == 1, ErrorCode::shape_mismatch,
            "add_row_bias expects [N,M] and [M]");
    const int n = x->value.dim(0), m = x->value.dim(1);
    require(bias->value.dim(0) == m, ErrorCode::shape_mismatch, "add_row_bias: width mismatch");
    Tensor out = x->value;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out[i * m + j] += bias->value[j];
    return make_node(std::move(out), {x, bias}, [n, m](Node& self) {
        if (wants_grad(self, 0)) {
            Tensor& g = grad_of(self, 0);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = grad_of(self, 1);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
        }
    });
}

NodePtr slice_cols(const NodePtr& x, int from, int to) {
    require(x->value.rank() == 2, ErrorCode::shape_mismatch, "slice_cols expects rank-2");
    const int n = x->value.dim(0), m = x->value.dim(1);
    require(0 <= from && from < to && to <= m, ErrorCode::invalid_argument,
            "slice_cols: bad column range");
    const int w = to - from;
    Tensor out({n, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out[i * w + j] = x->value[i * m + from + j];
    return make_node(std::move(out), {x}, [n, m, from, w](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) g[i * m + from + j] += self.grad[i * w + j];
    });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    require(!parts.empty(), ErrorCode::invalid_argument, "concat_cols: empty list");
    const int n = parts[0]->value.dim(0);
    int total = 0;
    for (const auto& p : parts) {
        require(p->value.rank() == 2 && p->value.dim(0) == n, ErrorCode::shape_mismatch,
                "concat_cols: row counts differ");
        total += p->value.dim(1);
    }
    Tensor out({n, total});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p->value.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) out[i * total + off + j] = p->value[i * w + j];
        off += w;
    }
    return make_node(std::move(out), parts, [n, total](Node& self) {
        int off = 0;
        for (size_t k = 0; k < self.inputs.size(); ++k) {
            const int w = self.inputs[k]->value.dim(1);
            if (wants_grad(self, k)) {
                Tensor& g = grad_of(self, k);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + off + j];
            }
            off += w;
        }
    });
}

NodePtr reshape(const NodePtr& x, std::vector<int> dims) {
    require(Tensor::compute_numel(dims) == x->value.numel(), ErrorCode::shape_mismatch,
            "reshape: element count mismatch");
    Tensor out = Tensor::from_values(std::move(dims),
                                     std::vector<double>(x->value.data(),
                                                         x->value.data() + x->value.numel()));
    return make_node(std::move(out), {x}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

// ---- nonlinearities --------------------------------------------------------

NodePtr relu(const NodePtr& x) {
    Tensor out = x->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
    return make_node(std::move(out), {x}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        const Tensor& xin = self.inputs[0]->value;
        for (int64_t i = 0; i < g.numel(); ++i)
            if (xin[i] > 0.0) g[i] += self.grad[i];
    });
}

NodePtr gelu(const NodePtr& x) {
    Tensor out = x->value;
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = out[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    }
    return make_node(std::move(out), {x}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        const Tensor& xin = self.inputs[0]->value;
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (int64_t i = 0; i < g.numel(); ++i) {
            double v = xin[i];
            double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += (cdf + v * pdf) * self.grad[i];
        }
    });
}

NodePtr sigmoid(const NodePtr& x) {
    Tensor out = x->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_node(std::move(out), {x}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int64_t i = 0; i < g.numel(); ++i) {
            double y = self.value[i];
            g[i] += y * (1.0 - y) * self.grad[i];
        }
    });
}

NodePtr softmax_rows(const NodePtr& x) {
    require(x->value.rank() == 2, ErrorCode::shape_mismatch, "softmax_rows expects rank-2");
    const int n = x->value.dim(0), m = x->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const double* row = x->value.data() + i * m;
        double* yrow = out.data() + i * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            yrow[j] = std::exp(row[j] - mx);
            sum += yrow[j];
        }
        double inv = 1.0 / sum;
        for (int j = 0; j < m; ++j) yrow[j] *= inv;
    }
    return make_node(std::move(out), {x}, [n, m](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int i = 0; i < n; ++i) {
            const double* y = self.value.data() + i * m;
            const double* gy = self.grad.data() + i * m;
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
            double* gx = g.data() + i * m;
            for (int j = 0; j < m; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
    require(x->value.rank() == 2, ErrorCode::shape_mismatch, "layer_norm expects [N,C]");
    const int n = x->value.dim(0), c = x->value.dim(1);
    require(gain->value.rank() == 1 && gain->value.dim(0) == c && bias->value.rank() == 1 &&
                bias->value.dim(0) == c,
            ErrorCode::shape_mismatch, "layer_norm: gain/bias must be [C]");
    Tensor out({n, c});
    Tensor xhat({n, c});
    std::vector<double> inv_std(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = x->value.data() + i * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= c;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            double xh = (row[j] - mean) * is;
            xhat[i * c + j] = xh;
            out[i * c + j] = gain->value[j] * xh + bias->value[j];
        }
    }
    return make_node(std::move(out), {x, gain, bias},
                     [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                         const double* gy = self.grad.data();
                         const double* gainv = self.inputs[1]->value.data();
                         if (wants_grad(self, 1)) {
                             Tensor& gg = grad_of(self, 1);
                             for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < c; ++j)
                                     gg[j] += gy[i * c + j] * xhat[i * c + j];
                         }
                         if (wants_grad(self, 2)) {
                             Tensor& gb = grad_of(self, 2);
                             for (int i = 0; i < n; ++i)
                                 for (int j = 0; j < c; ++j) gb[j] += gy[i * c + j];
                         }
                         if (wants_grad(self, 0)) {
                             Tensor& gx = grad_of(self, 0);
                             for (int i = 0; i < n; ++i) {
                                 double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                                 for (int j = 0; j < c; ++j) {
                                     double dxh = gy[i * c + j] * gainv[j];
                                     mean_dxhat += dxh;
                                     mean_dxhat_xhat += dxh * xhat[i * c + j];
                                 }
                                 mean_dxhat /= c;
                                 mean_dxhat_xhat /= c;
                                 double is = inv_std[static_cast<size_t>(i)];
                                 for (int j = 0; j < c; ++j) {
                                     double dxh = gy[i * c + j] * gainv[j];
                                     gx[i * c + j] += is * (dxh - mean_dxhat -
                                                            xhat[i * c + j] * mean_dxhat_xhat);
                                 }
                             }
                         }
                     });
}

// ---- token grid <-> volume layout -------------------------------------------

NodePtr tokens_to_grid(const NodePtr& tokens, const std::array<int, 3>& grid) {
    require(tokens->value.rank() == 2, ErrorCode::shape_mismatch, "tokens_to_grid expects [N,C]");
    const int n = tokens->value.dim(0), c = tokens->value.dim(1);
    const int64_t cells = static_cast<int64_t>(grid[0]) * grid[1] * grid[2];
    require(cells == n, ErrorCode::shape_mismatch, "tokens_to_grid: token count != grid cells");
    Tensor out({c, grid[0], grid[1], grid[2]});
    for (int t = 0; t < n; ++t)
        for (int ch = 0; ch < c; ++ch) out[static_cast<int64_t>(ch) * n + t] = tokens->value[t * c + ch];
    return make_node(std::move(out), {tokens}, [n, c](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int t = 0; t < n; ++t)
            for (int ch = 0; ch < c; ++ch) g[t * c + ch] += self.grad[static_cast<int64_t>(ch) * n + t];
    });
}

NodePtr grid_to_tokens(const NodePtr& grid_tensor) {
    require(grid_tensor->value.rank() == 4, ErrorCode::shape_mismatch,
            "grid_to_tokens expects [C,D,H,W]");
    const int c = grid_tensor->value.dim(0);
    const int64_t n = grid_tensor->value.numel() / c;
    Tensor out({static_cast<int>(n), c});
    for (int ch = 0; ch < c; ++ch)
        for (int64_t t = 0; t < n; ++t) out[t * c + ch] = grid_tensor->value[ch * n + t];
    return make_node(std::move(out), {grid_tensor}, [n, c](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        for (int ch = 0; ch < c; ++ch)
            for (int64_t t = 0; t < n; ++t) g[ch * n + t] += self.grad[t * c + ch];
    });
}

// ---- volumetric ops ----------------------------------------------------------

namespace {

// y[i] += wm*x[i-1] + w0*x[i] + wp*x[i+1], x conceptually zero-padded.
inline void row_conv3_add(double* __restrict y, const double* __restrict x, int n, double wm,
                          double w0, double wp) {
    if (n == 1) {
        y[0] += w0 * x[0];
        return;
    }
    y[0] += w0 * x[0] + wp * x[1];
    for (int i = 1; i < n - 1; ++i) y[i] += wm * x[i - 1] + w0 * x[i] + wp * x[i + 1];
    y[n - 1] += wm * x[n - 2] + w0 * x[n - 1];
}

// acc[kx] += sum_i g[i] * x[i + kx - 1] for kx in {0,1,2}.
inline void row_dot3(const double* __restrict g, const double* __restrict x, int n,
                     double* __restrict acc) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
    if (n == 1) {
        acc[1] += g[0] * x[0];
        return;
    }
    a1 += g[0] * x[0];
    a2 += g[0] * x[1];
    for (int i = 1; i < n - 1; ++i) {
        a0 += g[i] * x[i - 1];
        a1 += g[i] * x[i];
        a2 += g[i] * x[i + 1];
    }
    a0 += g[n - 1] * x[n - 2];
    a1 += g[n - 1] * x[n - 1];
    acc[0] += a0;
    acc[1] += a1;
    acc[2] += a2;
}

}  // namespace

NodePtr conv3d(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    require(x->value.rank() == 4 && w->value.rank() == 5 && b->value.rank() == 1,
            ErrorCode::shape_mismatch, "conv3d expects x[Ci,D,H,W], w[Co,Ci,k,k,k], b[Co]");
    const int ci = x->value.dim(0), d = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    const int co = w->value.dim(0), k = w->value.dim(2);
    require(w->value.dim(1) == ci, ErrorCode::shape_mismatch, "conv3d: channel mismatch");
    require(w->value.dim(3) == k && w->value.dim(4) == k && (k % 2) == 1, ErrorCode::shape_mismatch,
            "conv3d: kernel must be cubic with odd size");
    require(b->value.dim(0) == co, ErrorCode::shape_mismatch, "conv3d: bias size mismatch");
    require(k == 1 || k == 3, ErrorCode::invalid_argument,
            "conv3d: only 1x1x1 and 3x3x3 kernels are supported");
    const int p = k / 2;
    const int64_t plane = static_cast<int64_t>(h) * wd;
    const int64_t vol = static_cast<int64_t>(d) * plane;

    Tensor out({co, d, h, wd});
    {
        const double* X = x->value.data();
        const double* Wt = w->value.data();
        const double* B = b->value.data();
        double* Y = out.data();
#pragma omp parallel for schedule(static)
        for (int64_t oz = 0; oz < static_cast<int64_t>(co) * d; ++oz) {
            const int c_out = static_cast<int>(oz / d);
            const int z = static_cast<int>(oz % d);
            double* yplane = Y + c_out * vol + z * plane;
            for (int64_t i = 0; i < plane; ++i) yplane[i] = B[c_out];
            if (k == 1) {
                for (int c_in = 0; c_in < ci; ++c_in) {
                    const double wv = Wt[static_cast<int64_t>(c_out) * ci + c_in];
                    if (wv == 0.0) continue;
                    const double* xplane = X + c_in * vol + z * plane;
                    for (int64_t i = 0; i < plane; ++i) yplane[i] += wv * xplane[i];
                }
            } else {
                for (int kz = 0; kz < 3; ++kz) {
                    const int zi = z + kz - 1;
                    if (zi < 0 || zi >= d) continue;
                    for (int c_in = 0; c_in < ci; ++c_in) {
                        const double* xslab = X + c_in * vol + zi * plane;
                        const double* w9 =
                            Wt + ((static_cast<int64_t>(c_out) * ci + c_in) * 3 + kz) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const double wm = w9[ky * 3 + 0];
                            const double w0 = w9[ky * 3 + 1];
                            const double wp = w9[ky * 3 + 2];
                            if (wm == 0.0 && w0 == 0.0 && wp == 0.0) continue;
                            for (int y = std::max(0, 1 - ky); y < std::min(h, h + 1 - ky); ++y)
                                row_conv3_add(yplane + static_cast<int64_t>(y) * wd,
                                              xslab + static_cast<int64_t>(y + ky - 1) * wd, wd,
                                              wm, w0, wp);
                        }
                    }
                }
            }
        }
    }

    return make_node(std::move(out), {x, w, b}, [ci, d, h, wd, co, k, p, plane, vol](Node& self) {
        (void)p;
        const double* G = self.grad.data();
        const double* X = self.inputs[0]->value.data();
        const double* Wt = self.inputs[1]->value.data();
        if (wants_grad(self, 0)) {
            double* dX = grad_of(self, 0).data();
#pragma omp parallel for schedule(static)
            for (int64_t iz = 0; iz < static_cast<int64_t>(ci) * d; ++iz) {
                const int c_in = static_cast<int>(iz / d);
                const int zi = static_cast<int>(iz % d);
                double* dxplane = dX + c_in * vol + zi * plane;
                if (k == 1) {
                    for (int c_out = 0; c_out < co; ++c_out) {
                        const double wv = Wt[static_cast<int64_t>(c_out) * ci + c_in];
                        if (wv == 0.0) continue;
                        const double* gplane = G + c_out * vol + zi * plane;
                        for (int64_t i = 0; i < plane; ++i) dxplane[i] += wv * gplane[i];
                    }
                } else {
                    for (int kz = 0; kz < 3; ++kz) {
                        const int z = zi - kz + 1;
                        if (z < 0 || z >= d) continue;
                        for (int c_out = 0; c_out < co; ++c_out) {
                            const double* gslab = G + c_out * vol + z * plane;
                            const double* w9 =
                                Wt + ((static_cast<int64_t>(c_out) * ci + c_in) * 3 + kz) * 9;
                            for (int ky = 0; ky < 3; ++ky) {
                                const double wm = w9[ky * 3 + 2];
                                const double w0 = w9[ky * 3 + 1];
                                const double wp = w9[ky * 3 + 0];
                                if (wm == 0.0 && w0 == 0.0 && wp == 0.0) continue;
                                for (int yi = std::max(0, ky - 1); yi < std::min(h, h + ky - 1);
                                     ++yi)
                                    row_conv3_add(dxplane + static_cast<int64_t>(yi) * wd,
                                                  gslab + static_cast<int64_t>(yi - ky + 1) * wd,
                                                  wd, wm, w0, wp);
                            }
                        }
                    }
                }
            }
        }
        if (wants_grad(self, 1)) {
            double* dW = grad_of(self, 1).data();
#pragma omp parallel for schedule(static)
            for (int c_out = 0; c_out < co; ++c_out) {
                if (k == 1) {
                    for (int c_in = 0; c_in < ci; ++c_in) {
                        const double* gv = G + c_out * vol;
                        const double* xv = X + c_in * vol;
                        double acc = 0.0;
                        for (int64_t i = 0; i < vol; ++i) acc += gv[i] * xv[i];
                        dW[static_cast<int64_t>(c_out) * ci + c_in] += acc;
                    }
                } else {
                    for (int c_in = 0; c_in < ci; ++c_in)
                        for (int kz = 0; kz < 3; ++kz) {
                            double acc9[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
                            for (int z = std::max(0, 1 - kz); z < std::min(d, d + 1 - kz); ++z) {
                                const int zi = z + kz - 1;
                                const double* gslab = G + c_out * vol + z * plane;
                                const double* xslab = X + c_in * vol + zi * plane;
                                for (int ky = 0; ky < 3; ++ky)
                                    for (int y = std::max(0, 1 - ky);
                                         y < std::min(h, h + 1 - ky); ++y)
                                        row_dot3(gslab + static_cast<int64_t>(y) * wd,
                                                 xslab + static_cast<int64_t>(y + ky - 1) * wd,
                                                 wd, acc9 + ky * 3);
                            }
                            double* dw9 =
                                dW + ((static_cast<int64_t>(c_out) * ci + c_in) * 3 + kz) * 9;
                            for (int i = 0; i < 9; ++i) dw9[i] += acc9[i];
                        }
                }
            }
        }
        if (wants_grad(self, 2)) {
            Tensor& db = grad_of(self, 2);
            for (int c_out = 0; c_out < co; ++c_out) {
                const double* gslab = G + c_out * vol;
                double acc = 0.0;
                for (int64_t i = 0; i < vol; ++i) acc += gslab[i];
                db[c_out] += acc;
            }
        }
    });
}

NodePtr upsample_nearest2(const NodePtr& x) {
    require(x->value.rank() == 4, ErrorCode::shape_mismatch, "upsample_nearest2 expects [C,D,H,W]");
    const int c = x->value.dim(0), d = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    Tensor out({c, 2 * d, 2 * h, 2 * w});
    const double* X = x->value.data();
    double* Y = out.data();
    const int64_t oplane = static_cast<int64_t>(2 * h) * (2 * w);
    const int64_t ovol = static_cast<int64_t>(2 * d) * oplane;
    for (int ch = 0; ch < c; ++ch)
        for (int z = 0; z < 2 * d; ++z)
            for (int y = 0; y < 2 * h; ++y) {
                const double* xrow = X + ch * (static_cast<int64_t>(d) * h * w) +
                                     (z / 2) * (static_cast<int64_t>(h) * w) + (y / 2) * w;
                double* yrow = Y + ch * ovol + z * oplane + static_cast<int64_t>(y) * (2 * w);
                for (int xw = 0; xw < 2 * w; ++xw) yrow[xw] = xrow[xw / 2];
            }
    return make_node(std::move(out), {x}, [c, d, h, w, oplane, ovol](Node& self) {
        if (!wants_grad(self, 0)) return;
        double* g = grad_of(self, 0).data();
        const double* G = self.grad.data();
        for (int ch = 0; ch < c; ++ch)
            for (int z = 0; z < 2 * d; ++z)
                for (int y = 0; y < 2 * h; ++y) {
                    double* grow = g + ch * (static_cast<int64_t>(d) * h * w) +
                                   (z / 2) * (static_cast<int64_t>(h) * w) + (y / 2) * w;
                    const double* Grow =
                        G + ch * ovol + z * oplane + static_cast<int64_t>(y) * (2 * w);
                    for (int xw = 0; xw < 2 * w; ++xw) grow[xw / 2] += Grow[xw];
                }
    });
}

NodePtr concat_channels(const NodePtr& a, const NodePtr& b) {
    require(a->value.rank() == 4 && b->value.rank() == 4, ErrorCode::shape_mismatch,
            "concat_channels expects rank-4 tensors");
    for (int i = 1; i < 4; ++i)
        require(a->value.dim(i) == b->value.dim(i), ErrorCode::shape_mismatch,
                "concat_channels: spatial dims differ");
    const int ca = a->value.dim(0), cb = b->value.dim(0);
    Tensor out({ca + cb, a->value.dim(1), a->value.dim(2), a->value.dim(3)});
    const int64_t na = a->value.numel(), nb = b->value.numel();
    std::copy(a->value.data(), a->value.data() + na, out.data());
    std::copy(b->value.data(), b->value.data() + nb, out.data() + na);
    return make_node(std::move(out), {a, b}, [na, nb](Node& self) {
        if (wants_grad(self, 0)) {
            Tensor& g = grad_of(self, 0);
            for (int64_t i = 0; i < na; ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = grad_of(self, 1);
            for (int64_t i = 0; i < nb; ++i) g[i] += self.grad[na + i];
        }
    });
}

NodePtr global_avg_pool(const NodePtr& x) {
    require(x->value.rank() == 4, ErrorCode::shape_mismatch, "global_avg_pool expects [C,D,H,W]");
    const int c = x->value.dim(0);
    const int64_t s = x->value.numel() / c;
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* row = x->value.data() + ch * s;
        double acc = 0.0;
        for (int64_t i = 0; i < s; ++i) acc += row[i];
        out[ch] = acc / static_cast<double>(s);
    }
    return make_node(std::move(out), {x}, [c, s](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = grad_of(self, 0);
        const double inv = 1.0 / static_cast<double>(s);
        for (int ch = 0; ch < c; ++ch) {
            double gv = self.grad[ch] * inv;
            double* row = g.data() + ch * s;
            for (int64_t i = 0; i < s; ++i) row[i] += gv;
        }
    });
}

NodePtr scale_channels(const NodePtr& x, const NodePtr& gate) {
    require(x->value.rank() == 4 && gate->value.rank() == 1, ErrorCode::shape_mismatch,
            "scale_channels expects [C,D,H,W] and [C]");
    const int c = x->value.dim(0);
    require(gate->value.dim(0) == c, ErrorCode::shape_mismatch, "scale_channels: gate size");
    const int64_t s = x->value.numel() / c;
    Tensor out = x->value;
    for (int ch = 0; ch < c; ++ch) {
        double gv = gate->value[ch];
        double* row = out.data() + ch * s;
        for (int64_t i = 0; i < s; ++i) row[i] *= gv;
    }
    return make_node(std::move(out), {x, gate}, [c, s](Node& self) {
        const Tensor& xin = self.inputs[0]->value;
        const Tensor& gatev = self.inputs[1]->value;
        if (wants_grad(self, 0)) {
            Tensor& g = grad_of(self, 0);
            for (int ch = 0; ch < c; ++ch) {
                double gv = gatev[ch];
                for (int64_t i = 0; i < s; ++i) g[ch * s + i] += gv * self.grad[ch * s + i];
            }
        }
        if (wants_grad(self, 1)) {
            Tensor& g = grad_of(self, 1);
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int64_t i = 0; i < s; ++i) acc += self.grad[ch * s + i] * xin[ch * s + i];
                g[ch] += acc;
            }
        }
    });
}

NodePtr softmax_channels(const NodePtr& x) {
    require(x->value.rank() == 4, ErrorCode::shape_mismatch, "softmax_channels expects [K,D,H,W]");
    const int kc = x->value.dim(0);
    const int64_t s = x->value.numel() / kc;
    Tensor out({x->value.dim(0), x->value.dim(1), x->value.dim(2), x->value.dim(3)});
    const double* X = x->value.data();
    double* Y = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < s; ++i) {
        double mx = X[i];
        for (int ch = 1; ch < kc; ++ch) mx = std::max(mx, X[ch * s + i]);
        double sum = 0.0;
        for (int ch = 0; ch < kc; ++ch) {
            double e = std::exp(X[ch * s + i] - mx);
            Y[ch * s + i] = e;
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int ch = 0; ch < kc; ++ch) Y[ch * s + i] *= inv;
    }
    return make_node(std::move(out), {x}, [kc, s](Node& self) {
        if (!wants_grad(self, 0)) return;
        double* g = grad_of(self, 0).data();
        const double* Y = self.value.data();
        const double* G = self.grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < s; ++i) {
            double dot = 0.0;
            for (int ch = 0; ch < kc; ++ch) dot += G[ch * s + i] * Y[ch * s + i];
            for (int ch = 0; ch < kc; ++ch)
                g[ch * s + i] += Y[ch * s + i] * (G[ch * s + i] - dot);
        }
    });
}

}  // namespace comodal
