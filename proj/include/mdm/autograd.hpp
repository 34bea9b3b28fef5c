// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mdm {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

// Reverse-mode tape. Handles index nodes; backward() walks the node list in
// reverse. Parameters registered through param() accumulate their gradient
// into the external tensor they were registered with.
class Tape {
public:
    int input(Tensor t) {
        return push(std::move(t), nullptr);
    }

    int param(const Tensor& value, Tensor* external_grad) {
        const int h = push(value, nullptr);
        if (external_grad) {
            nodes_[static_cast<size_t>(h)].backward = [this, h, external_grad]() {
                const Tensor& g = grad(h);
                assert(external_grad->rows == g.rows && external_grad->cols == g.cols);
                for (size_t i = 0; i < g.data.size(); ++i) external_grad->data[i] += g.data[i];
            };
        }
        return h;
    }

    const Tensor& value(int h) const { return nodes_[static_cast<size_t>(h)].val; }
    Tensor& grad(int h) {
        Node& n = nodes_[static_cast<size_t>(h)];
        if (n.grad.data.empty()) n.grad = Tensor(n.val.rows, n.val.cols);
        return n.grad;
    }

    // out[i] = table[ids[i]]
    int gather_rows(int table, const std::vector<int>& ids) {
        const Tensor& tb = value(table);
        Tensor out(static_cast<int>(ids.size()), tb.cols);
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= tb.rows) throw std::out_of_range("gather_rows: id");
            std::copy(tb.row(ids[i]), tb.row(ids[i]) + tb.cols, out.row(static_cast<int>(i)));
        }
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, table, ids]() {
            Tensor& gt = grad(table);
            const Tensor& go = grad(h);
            for (size_t i = 0; i < ids.size(); ++i) {
                double* dst = gt.row(ids[i]);
                const double* src = go.row(static_cast<int>(i));
                for (int c = 0; c < gt.cols; ++c) dst[c] += src[c];
            }
        };
        return h;
    }

    // A [m,k] x B[n,k]^T -> [m,n]  (linear layer y = x W^T with W stored [out,in])
    int matmul_nt(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
        Tensor out(A.rows, B.rows);
        for (int i = 0; i < A.rows; ++i) {
            const double* ar = A.row(i);
            double* orow = out.row(i);
            for (int j = 0; j < B.rows; ++j) {
                const double* br = B.row(j);
                double acc = 0.0;
                for (int k = 0; k < A.cols; ++k) acc += ar[k] * br[k];
                orow[j] = acc;
            }
        }
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a, b]() {
            const Tensor& A = value(a);
            const Tensor& B = value(b);
            const Tensor& G = grad(h);
            Tensor& dA = grad(a);
            Tensor& dB = grad(b);
            for (int i = 0; i < A.rows; ++i) {
                const double* gr = G.row(i);
                double* dar = dA.row(i);
                for (int j = 0; j < B.rows; ++j) {
                    const double g = gr[j];
                    if (g == 0.0) continue;
                    const double* br = B.row(j);
                    for (int k = 0; k < A.cols; ++k) dar[k] += g * br[k];
                }
            }
            for (int i = 0; i < A.rows; ++i) {
                const double* gr = G.row(i);
                const double* ar = A.row(i);
                for (int j = 0; j < B.rows; ++j) {
                    const double g = gr[j];
                    if (g == 0.0) continue;
                    double* dbr = dB.row(j);
                    for (int k = 0; k < A.cols; ++k) dbr[k] += g * ar[k];
                }
            }
        };
        return h;
    }

    int add(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        check_same_shape(A, B, "add");
        Tensor out = A;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a, b]() {
            const Tensor& G = grad(h);
            Tensor& dA = grad(a);
            Tensor& dB = grad(b);
            for (size_t i = 0; i < G.data.size(); ++i) {
                dA.data[i] += G.data[i];
                dB.data[i] += G.data[i];
            }
        };
        return h;
    }

    int mul(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        check_same_shape(A, B, "mul");
        Tensor out = A;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a, b]() {
            const Tensor& G = grad(h);
            const Tensor& A = value(a);
            const Tensor& B = value(b);
            Tensor& dA = grad(a);
            Tensor& dB = grad(b);
            for (size_t i = 0; i < G.data.size(); ++i) {
                dA.data[i] += G.data[i] * B.data[i];
                dB.data[i] += G.data[i] * A.data[i];
            }
        };
        return h;
    }

    int silu(int a) {
        const Tensor& A = value(a);
        Tensor out = A;
        for (double& x : out.data) x = x / (1.0 + std::exp(-x));
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a]() {
            const Tensor& G = grad(h);
            const Tensor& A = value(a);
            Tensor& dA = grad(a);
            for (size_t i = 0; i < G.data.size(); ++i) {
                const double x = A.data[i];
                const double s = 1.0 / (1.0 + std::exp(-x));
                dA.data[i] += G.data[i] * s * (1.0 + x * (1.0 - s));
            }
        };
        return h;
    }

    // Row-wise RMS normalization scaled by a [1, n] weight vector.
    int rmsnorm(int x, int w, double eps = 1e-6) {
        const Tensor& X = value(x);
        const Tensor& W = value(w);
        if (W.rows != 1 || W.cols != X.cols) throw std::invalid_argument("rmsnorm: weight shape");
        Tensor out(X.rows, X.cols);
        std::vector<double> inv_rms(static_cast<size_t>(X.rows));
        for (int r = 0; r < X.rows; ++r) {
            const double* xr = X.row(r);
            double ss = 0.0;
            for (int c = 0; c < X.cols; ++c) ss += xr[c] * xr[c];
            const double ir = 1.0 / std::sqrt(ss / X.cols + eps);
            inv_rms[static_cast<size_t>(r)] = ir;
            double* orow = out.row(r);
            for (int c = 0; c < X.cols; ++c) orow[c] = xr[c] * ir * W.row(0)[c];
        }
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, x, w, inv_rms]() {
            const Tensor& G = grad(h);
            const Tensor& X = value(x);
            const Tensor& W = value(w);
            Tensor& dX = grad(x);
            Tensor& dW = grad(w);
            const int n = X.cols;
            for (int r = 0; r < X.rows; ++r) {
                const double ir = inv_rms[static_cast<size_t>(r)];
                const double* xr = X.row(r);
                const double* gr = G.row(r);
                double dot = 0.0;  // sum_j g_j w_j x_j
                for (int c = 0; c < n; ++c) dot += gr[c] * W.row(0)[c] * xr[c];
                const double k = dot * ir * ir * ir / n;
                double* dxr = dX.row(r);
                for (int c = 0; c < n; ++c) {
                    dxr[c] += gr[c] * W.row(0)[c] * ir - xr[c] * k;
                    dW.row(0)[c] += gr[c] * xr[c] * ir;
                }
            }
        };
        return h;
    }

    int slice_rows(int x, std::vector<int> rows) {
        const Tensor& X = value(x);
        Tensor out(static_cast<int>(rows.size()), X.cols);
        for (size_t i = 0; i < rows.size(); ++i) {
            std::copy(X.row(rows[i]), X.row(rows[i]) + X.cols, out.row(static_cast<int>(i)));
        }
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, x, rows]() {
            const Tensor& G = grad(h);
            Tensor& dX = grad(x);
            for (size_t i = 0; i < rows.size(); ++i) {
                double* dst = dX.row(rows[i]);
                const double* src = G.row(static_cast<int>(i));
                for (int c = 0; c < dX.cols; ++c) dst[c] += src[c];
            }
        };
        return h;
    }

    int concat_rows(int a, int b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rows == 0) return b;
        if (B.rows == 0) return a;
        if (A.cols != B.cols) throw std::invalid_argument("concat_rows: width mismatch");
        Tensor out(A.rows + B.rows, A.cols);
        std::copy(A.data.begin(), A.data.end(), out.data.begin());
        std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<long>(A.data.size()));
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a, b]() {
            const Tensor& G = grad(h);
            Tensor& dA = grad(a);
            Tensor& dB = grad(b);
            for (size_t i = 0; i < dA.data.size(); ++i) dA.data[i] += G.data[i];
            for (size_t i = 0; i < dB.data.size(); ++i) dB.data[i] += G.data[dA.data.size() + i];
        };
        return h;
    }

    // Full bidirectional multi-head attention over all given rows.
    // q, k, v: [L, D] with D = n_heads * head_dim.
    int attention(int q, int k, int v, int n_heads) {
        const Tensor& Q = value(q);
        const Tensor& K = value(k);
        const Tensor& V = value(v);
        const int L = Q.rows;
        const int D = Q.cols;
        if (K.rows != L || V.rows != L || K.cols != D || V.cols != D) {
            throw std::invalid_argument("attention: shape mismatch");
        }
        if (D % n_heads != 0) throw std::invalid_argument("attention: heads must divide dim");
        const int hd = D / n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

        Tensor out(L, D);
        // Save softmax matrices per head for backward.
        auto probs = std::make_shared<std::vector<Tensor>>();
        probs->reserve(static_cast<size_t>(n_heads));
        for (int hix = 0; hix < n_heads; ++hix) {
            const int off = hix * hd;
            Tensor P(L, L);
            for (int i = 0; i < L; ++i) {
                double mx = -1e300;
                double* pr = P.row(i);
                const double* qi = Q.row(i) + off;
                for (int j = 0; j < L; ++j) {
                    const double* kj = K.row(j) + off;
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    pr[j] = s * scale;
                    mx = std::max(mx, pr[j]);
                }
                double z = 0.0;
                for (int j = 0; j < L; ++j) {
                    pr[j] = std::exp(pr[j] - mx);
                    z += pr[j];
                }
                for (int j = 0; j < L; ++j) pr[j] /= z;
                double* orow = out.row(i) + off;
                for (int c = 0; c < hd; ++c) orow[c] = 0.0;
                for (int j = 0; j < L; ++j) {
                    const double p = pr[j];
                    if (p == 0.0) continue;
                    const double* vj = V.row(j) + off;
                    for (int c = 0; c < hd; ++c) orow[c] += p * vj[c];
                }
            }
            probs->push_back(std::move(P));
        }
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, q, k, v, n_heads, hd, scale, probs]() {
            const Tensor& G = grad(h);
            const Tensor& Q = value(q);
            const Tensor& K = value(k);
            const Tensor& V = value(v);
            Tensor& dQ = grad(q);
            Tensor& dK = grad(k);
            Tensor& dV = grad(v);
            const int L = Q.rows;
            for (int hix = 0; hix < n_heads; ++hix) {
                const int off = hix * hd;
                const Tensor& P = (*probs)[static_cast<size_t>(hix)];
                for (int i = 0; i < L; ++i) {
                    const double* gi = G.row(i) + off;
                    const double* pr = P.row(i);
                    // dP[i][j] = g_i . v_j ; dS = P o (dP - rowdot)
                    std::vector<double> dp(static_cast<size_t>(L));
                    double rowdot = 0.0;
                    for (int j = 0; j < L; ++j) {
                        const double* vj = V.row(j) + off;
                        double acc = 0.0;
                        for (int c = 0; c < hd; ++c) acc += gi[c] * vj[c];
                        dp[static_cast<size_t>(j)] = acc;
                        rowdot += acc * pr[j];
                    }
                    const double* qi = Q.row(i) + off;
                    double* dqi = dQ.row(i) + off;
                    for (int j = 0; j < L; ++j) {
                        const double p = pr[j];
                        // dV
                        double* dvj = dV.row(j) + off;
                        for (int c = 0; c < hd; ++c) dvj[c] += p * gi[c];
                        const double ds = p * (dp[static_cast<size_t>(j)] - rowdot) * scale;
                        if (ds == 0.0) continue;
                        const double* kj = K.row(j) + off;
                        double* dkj = dK.row(j) + off;
                        for (int c = 0; c < hd; ++c) {
                            dqi[c] += ds * kj[c];
                            dkj[c] += ds * qi[c];
                        }
                    }
                }
            }
        };
        return h;
    }

    // Weighted token cross entropy: sum_r weights[r] * -log softmax(logits_r)[targets[r]].
    // Returns a [1,1] scalar node.
    int cross_entropy(int logits, std::vector<int> targets, std::vector<double> weights) {
        const Tensor& X = value(logits);
        if (static_cast<int>(targets.size()) != X.rows || weights.size() != targets.size()) {
            throw std::invalid_argument("cross_entropy: row count mismatch");
        }
        auto smax = std::make_shared<Tensor>(X.rows, X.cols);
        double loss = 0.0;
        for (int r = 0; r < X.rows; ++r) {
            const double* xr = X.row(r);
            double mx = xr[0];
            for (int c = 1; c < X.cols; ++c) mx = std::max(mx, xr[c]);
            double z = 0.0;
            double* sr = smax->row(r);
            for (int c = 0; c < X.cols; ++c) {
                sr[c] = std::exp(xr[c] - mx);
                z += sr[c];
            }
            for (int c = 0; c < X.cols; ++c) sr[c] /= z;
            loss -= weights[static_cast<size_t>(r)] * std::log(sr[targets[static_cast<size_t>(r)]]);
        }
        Tensor out(1, 1);
        out.at(0, 0) = loss;
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward =
            [this, h, logits, targets = std::move(targets), weights = std::move(weights), smax]() {
                const double g = grad(h).at(0, 0);
                Tensor& dX = grad(logits);
                for (int r = 0; r < dX.rows; ++r) {
                    const double gw = g * weights[static_cast<size_t>(r)];
                    const double* sr = smax->row(r);
                    double* dr = dX.row(r);
                    for (int c = 0; c < dX.cols; ++c) dr[c] += gw * sr[c];
                    dr[targets[static_cast<size_t>(r)]] -= gw;
                }
            };
        return h;
    }

    int scale(int a, double factor) {
        Tensor out = value(a);
        for (double& x : out.data) x *= factor;
        const int h = push(std::move(out), nullptr);
        nodes_[static_cast<size_t>(h)].backward = [this, h, a, factor]() {
            const Tensor& G = grad(h);
            Tensor& dA = grad(a);
            for (size_t i = 0; i < G.data.size(); ++i) dA.data[i] += factor * G.data[i];
        };
        return h;
    }

    // Seed d(scalar at `loss`)=1 and propagate to all leaves.
    void backward(int loss) {
        Tensor& g = grad(loss);
        if (g.rows != 1 || g.cols != 1) throw std::invalid_argument("backward: loss must be scalar");
        g.at(0, 0) = 1.0;
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.backward && !n.grad.data.empty()) n.backward();
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> backward;
    };

    static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.rows != b.rows || a.cols != b.cols) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
        }
    }

    int push(Tensor t, std::function<void()> back) {
        Node n;
        n.val = std::move(t);
        n.backward = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
};

}  // namespace mdm
