#include "gestpose/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "gestpose/errors.hpp"

namespace gestpose {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

NodePtr new_node(std::vector<int> shape, std::vector<float> data) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

// Wires an op result into the graph when grad mode is on and any parent
// requires grad; otherwise the result is a detached constant.
Tensor make_op(std::vector<int> shape, std::vector<float> data,
               std::vector<NodePtr> parents, std::function<void(TensorNode&)> backward_fn) {
    auto n = new_node(std::move(shape), std::move(data));
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    int64_t n = numel_of(shape);
    auto node = new_node(std::move(shape), std::vector<float>(n, 0.0f));
    node->requires_grad = requires_grad;
    return wrap(node);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    int64_t n = numel_of(shape);
    auto node = new_node(std::move(shape), std::vector<float>(n, value));
    node->requires_grad = requires_grad;
    return wrap(node);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
        throw DimensionError("from_data: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(shape));
    }
    auto node = new_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return wrap(node);
}

Tensor Tensor::randn(std::vector<int> shape, std::mt19937& rng, float stddev, bool requires_grad) {
    int64_t n = numel_of(shape);
    std::normal_distribution<float> dist(0.0f, stddev);
    std::vector<float> data(n);
    for (auto& v : data) v = dist(rng);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, std::mt19937& rng, float lo, float hi,
                       bool requires_grad) {
    int64_t n = numel_of(shape);
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> data(n);
    for (auto& v : data) v = dist(rng);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

std::vector<float>& Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}

const std::vector<float>& Tensor::grad() const {
    if (node_->grad.empty()) throw ContractError("grad accessed before backward");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size()) throw ContractError("at(): wrong index rank");
    int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
        off = off * s[i] + v;
        ++i;
    }
    return node_->data[off];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- matmul ----------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n], ikj order.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        float* crow = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b^T where bt is [n,k]
void gemm_bt_acc(const float* a, const float* bt, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        float* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = bt + static_cast<int64_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[m,n] += a^T * b where at is [k,m], b is [k,n]
void gemm_at_acc(const float* at, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* arow = at + static_cast<int64_t>(p) * m;
        const float* brow = b + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    int m = a.shape()[0], k = a.shape()[1];
    int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<float> out(static_cast<int64_t>(m) * n, 0.0f);
    gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);

    auto an = a.node(), bn = b.node();
    return make_op({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](TensorNode& self) {
        // dA = dC * B^T, dB = A^T * dC
        if (an->requires_grad) {
            an->ensure_grad();
            gemm_bt_acc(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            gemm_at_acc(an->data.data(), self.grad.data(), bn->grad.data(), k, m, n);
        }
    });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<float> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<float> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<float> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& v : out) v *= s;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {an}, [an, s](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& v : out) v += s;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {an}, [an](TensorNode& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.shape()[1] != bias.shape()[0]) {
        throw DimensionError("add_bias: " + shape_str(x.shape()) + " + " +
                             shape_str(bias.shape()));
    }
    int n = x.shape()[0], d = x.shape()[1];
    std::vector<float> out(x.data());
    const auto& bd = bias.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<int64_t>(i) * d + j] += bd[j];
    auto xn = x.node(), bn = bias.node();
    return make_op(x.shape(), std::move(out), {xn, bn}, [xn, bn, n, d](TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    bn->grad[j] += self.grad[static_cast<int64_t>(i) * d + j];
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = v > 0.0f ? v : 0.0f;
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (xn->data[i] > 0.0f) xn->grad[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& x) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    std::vector<float> out(x.data());
    for (auto& v : out) {
        float u = kC * (v + kA * v * v * v);
        v = 0.5f * v * (1.0f + std::tanh(u));
    }
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float v = xn->data[i];
            float u = kC * (v + kA * v * v * v);
            float t = std::tanh(u);
            float du = kC * (1.0f + 3.0f * kA * v * v);
            float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
            xn->grad[i] += self.grad[i] * d;
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = 1.0f / (1.0f + std::exp(-v));
    auto xn = x.node();
    auto yn_data = out;  // saved activations
    return make_op(x.shape(), std::move(out), {xn},
                   [xn, yn_data = std::move(yn_data)](TensorNode& self) {
                       xn->ensure_grad();
                       for (size_t i = 0; i < self.grad.size(); ++i) {
                           float y = yn_data[i];
                           xn->grad[i] += self.grad[i] * y * (1.0f - y);
                       }
                   });
}

Tensor absolute(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = std::fabs(v);
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float s = xn->data[i] > 0.0f ? 1.0f : (xn->data[i] < 0.0f ? -1.0f : 0.0f);
            xn->grad[i] += self.grad[i] * s;
        }
    });
}

Tensor rsqrt(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v = 1.0f / std::sqrt(v);
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float v = xn->data[i];
            xn->grad[i] += self.grad[i] * (-0.5f / (v * std::sqrt(v)));
        }
    });
}

Tensor square(const Tensor& x) {
    std::vector<float> out(x.data());
    for (auto& v : out) v *= v;
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[i] += self.grad[i] * 2.0f * xn->data[i];
    });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw DimensionError("scale_by: scale must be a single element");
    float sv = s.data()[0];
    std::vector<float> out(x.data());
    for (auto& v : out) v *= sv;
    auto xn = x.node(), sn = s.node();
    return make_op(x.shape(), std::move(out), {xn, sn}, [xn, sn, sv](TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * sv;
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            float acc = 0.0f;
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
            sn->grad[0] += acc;
        }
    });
}

// ---- softmax / layernorm / cross entropy -----------------------------------

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw ContractError("softmax: axis out of range");
    const auto& shp = x.shape();
    int64_t axis_n = shp[axis];
    int64_t inner = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= shp[i];
    int64_t outer = x.numel() / (axis_n * inner);

    std::vector<float> out(x.data());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            float* base = out.data() + o * axis_n * inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (int64_t a = 0; a < axis_n; ++a) mx = std::max(mx, base[a * inner]);
            if (!std::isfinite(mx)) throw NumericError("softmax: non-finite input");
            float denom = 0.0f;
            for (int64_t a = 0; a < axis_n; ++a) {
                float e = std::exp(base[a * inner] - mx);
                base[a * inner] = e;
                denom += e;
            }
            for (int64_t a = 0; a < axis_n; ++a) base[a * inner] /= denom;
        }
    }
    auto xn = x.node();
    auto saved = out;
    return make_op(x.shape(), std::move(out), {xn},
                   [xn, saved = std::move(saved), axis_n, inner, outer](TensorNode& self) {
                       xn->ensure_grad();
                       for (int64_t o = 0; o < outer; ++o) {
                           for (int64_t in = 0; in < inner; ++in) {
                               int64_t off = o * axis_n * inner + in;
                               float dot = 0.0f;
                               for (int64_t a = 0; a < axis_n; ++a)
                                   dot += self.grad[off + a * inner] * saved[off + a * inner];
                               for (int64_t a = 0; a < axis_n; ++a) {
                                   int64_t i = off + a * inner;
                                   xn->grad[i] += saved[i] * (self.grad[i] - dot);
                               }
                           }
                       }
                   });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    int d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layernorm: gain/bias must match last extent " + std::to_string(d));
    }
    int64_t rows = x.numel() / d;
    std::vector<float> out(x.numel());
    std::vector<float> xhat(x.numel());
    std::vector<float> inv_std(rows);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = xd.data() + r * d;
        float m = 0.0f;
        for (int j = 0; j < d; ++j) m += row[j];
        m /= d;
        float var = 0.0f;
        for (int j = 0; j < d; ++j) {
            float c = row[j] - m;
            var += c * c;
        }
        var /= d;
        float istd = 1.0f / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (int j = 0; j < d; ++j) {
            float xh = (row[j] - m) * istd;
            xhat[r * d + j] = xh;
            out[r * d + j] = gd[j] * xh + bd[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_op(x.shape(), std::move(out), {xn, gn, bn},
                   [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                    d](TensorNode& self) {
                       if (gn->requires_grad) gn->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       if (xn->requires_grad) xn->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r) {
                           const float* g = self.grad.data() + r * d;
                           const float* xh = xhat.data() + r * d;
                           if (gn->requires_grad)
                               for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * xh[j];
                           if (bn->requires_grad)
                               for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
                           if (xn->requires_grad) {
                               float mean_dxhat = 0.0f, mean_dxhat_xhat = 0.0f;
                               for (int j = 0; j < d; ++j) {
                                   float dxh = g[j] * gn->data[j];
                                   mean_dxhat += dxh;
                                   mean_dxhat_xhat += dxh * xh[j];
                               }
                               mean_dxhat /= d;
                               mean_dxhat_xhat /= d;
                               float istd = inv_std[r];
                               for (int j = 0; j < d; ++j) {
                                   float dxh = g[j] * gn->data[j];
                                   xn->grad[r * d + j] +=
                                       istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                               }
                           }
                       }
                   });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B,C]");
    int B = logits.shape()[0], C = logits.shape()[1];
    if (static_cast<int>(labels.size()) != B)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch " + std::to_string(B));
    for (int lbl : labels)
        if (lbl < 0 || lbl >= C)
            throw LabelError("cross_entropy: label " + std::to_string(lbl) + " outside [0," +
                             std::to_string(C) + ")");
    const auto& xd = logits.data();
    std::vector<float> probs(xd.size());
    float loss = 0.0f;
    for (int i = 0; i < B; ++i) {
        const float* row = xd.data() + static_cast<int64_t>(i) * C;
        float mx = *std::max_element(row, row + C);
        float denom = 0.0f;
        for (int j = 0; j < C; ++j) {
            float e = std::exp(row[j] - mx);
            probs[static_cast<int64_t>(i) * C + j] = e;
            denom += e;
        }
        for (int j = 0; j < C; ++j) probs[static_cast<int64_t>(i) * C + j] /= denom;
        loss -= std::log(std::max(probs[static_cast<int64_t>(i) * C + labels[i]], 1e-30f));
    }
    loss /= B;
    auto ln = logits.node();
    return make_op({1}, {loss}, {ln},
                   [ln, probs = std::move(probs), labels, B, C](TensorNode& self) {
                       ln->ensure_grad();
                       float g = self.grad[0] / B;
                       for (int i = 0; i < B; ++i) {
                           for (int j = 0; j < C; ++j) {
                               float p = probs[static_cast<int64_t>(i) * C + j];
                               float onehot = (j == labels[i]) ? 1.0f : 0.0f;
                               ln->grad[static_cast<int64_t>(i) * C + j] += g * (p - onehot);
                           }
                       }
                   });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
    float acc = 0.0f;
    for (float v : x.data()) acc += v;
    auto xn = x.node();
    return make_op({1}, {acc}, {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        float g = self.grad[0];
        for (auto& v : xn->grad) v += g;
    });
}

Tensor mean(const Tensor& x) {
    float acc = 0.0f;
    for (float v : x.data()) acc += v;
    float inv = 1.0f / static_cast<float>(x.numel());
    auto xn = x.node();
    return make_op({1}, {acc * inv}, {xn}, [xn, inv](TensorNode& self) {
        xn->ensure_grad();
        float g = self.grad[0] * inv;
        for (auto& v : xn->grad) v += g;
    });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    return mean(absolute(sub(pred, target)));
}

// ---- structural ops --------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    auto xn = x.node();
    return make_op(std::move(shape), x.data(), {xn}, [xn](TensorNode& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose2d: expected rank 2");
    int m = x.shape()[0], n = x.shape()[1];
    std::vector<float> out(x.numel());
    const auto& xd = x.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<int64_t>(j) * m + i] = xd[static_cast<int64_t>(i) * n + j];
    auto xn = x.node();
    return make_op({n, m}, std::move(out), {xn}, [xn, m, n](TensorNode& self) {
        xn->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                xn->grad[static_cast<int64_t>(i) * n + j] +=
                    self.grad[static_cast<int64_t>(j) * m + i];
    });
}

Tensor slice(const Tensor& x, int axis, int start, int count) {
    if (x.rank() != 2 || axis < 0 || axis > 1) throw ContractError("slice: rank-2, axis 0/1");
    int m = x.shape()[0], n = x.shape()[1];
    int extent = axis == 0 ? m : n;
    if (start < 0 || count <= 0 || start + count > extent)
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") outside extent " +
                             std::to_string(extent));
    std::vector<int> out_shape = axis == 0 ? std::vector<int>{count, n}
                                           : std::vector<int>{m, count};
    std::vector<float> out(static_cast<int64_t>(out_shape[0]) * out_shape[1]);
    const auto& xd = x.data();
    if (axis == 0) {
        std::memcpy(out.data(), xd.data() + static_cast<int64_t>(start) * n,
                    out.size() * sizeof(float));
    } else {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < count; ++j)
                out[static_cast<int64_t>(i) * count + j] =
                    xd[static_cast<int64_t>(i) * n + start + j];
    }
    auto xn = x.node();
    return make_op(std::move(out_shape), std::move(out), {xn},
                   [xn, axis, start, count, m, n](TensorNode& self) {
                       xn->ensure_grad();
                       if (axis == 0) {
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               xn->grad[static_cast<int64_t>(start) * n + i] += self.grad[i];
                       } else {
                           for (int i = 0; i < m; ++i)
                               for (int j = 0; j < count; ++j)
                                   xn->grad[static_cast<int64_t>(i) * n + start + j] +=
                                       self.grad[static_cast<int64_t>(i) * count + j];
                       }
                   });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ContractError("concat: empty input");
    if (axis < 0 || axis > 1) throw ContractError("concat: axis 0/1");
    for (const auto& t : xs)
        if (t.rank() != 2) throw DimensionError("concat: rank-2 tensors only");
    int other = axis == 0 ? xs[0].shape()[1] : xs[0].shape()[0];
    int total = 0;
    for (const auto& t : xs) {
        int o = axis == 0 ? t.shape()[1] : t.shape()[0];
        if (o != other) throw DimensionError("concat: mismatched extents off-axis");
        total += t.shape()[axis];
    }
    std::vector<int> out_shape = axis == 0 ? std::vector<int>{total, other}
                                           : std::vector<int>{other, total};
    std::vector<float> out(static_cast<int64_t>(total) * other);
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    std::vector<int> extents;
    if (axis == 0) {
        int64_t off = 0;
        for (const auto& t : xs) {
            std::memcpy(out.data() + off, t.data().data(), t.numel() * sizeof(float));
            off += t.numel();
            parents.push_back(t.node());
            extents.push_back(t.shape()[0]);
        }
    } else {
        int col = 0;
        for (const auto& t : xs) {
            int w = t.shape()[1];
            for (int i = 0; i < other; ++i)
                std::memcpy(out.data() + static_cast<int64_t>(i) * total + col,
                            t.data().data() + static_cast<int64_t>(i) * w, w * sizeof(float));
            col += w;
            parents.push_back(t.node());
            extents.push_back(w);
        }
    }
    auto parents_copy = parents;
    return make_op(std::move(out_shape), std::move(out), std::move(parents),
                   [ps = std::move(parents_copy), extents = std::move(extents), axis, other,
                    total](TensorNode& self) {
                       if (axis == 0) {
                           int64_t off = 0;
                           for (size_t p = 0; p < ps.size(); ++p) {
                               int64_t sz = static_cast<int64_t>(extents[p]) * other;
                               if (ps[p]->requires_grad) {
                                   ps[p]->ensure_grad();
                                   for (int64_t i = 0; i < sz; ++i)
                                       ps[p]->grad[i] += self.grad[off + i];
                               }
                               off += sz;
                           }
                       } else {
                           int col = 0;
                           for (size_t p = 0; p < ps.size(); ++p) {
                               int w = extents[p];
                               if (ps[p]->requires_grad) {
                                   ps[p]->ensure_grad();
                                   for (int i = 0; i < other; ++i)
                                       for (int j = 0; j < w; ++j)
                                           ps[p]->grad[static_cast<int64_t>(i) * w + j] +=
                                               self.grad[static_cast<int64_t>(i) * total + col + j];
                               }
                               col += w;
                           }
                       }
                   });
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index,
              std::vector<int> out_shape) {
    int64_t n = numel_of(out_shape);
    if (n != static_cast<int64_t>(index->size()))
        throw DimensionError("gather: index count does not match output shape");
    std::vector<float> out(n);
    const auto& xd = x.data();
    const auto& idx = *index;
    for (int64_t i = 0; i < n; ++i) {
        if (idx[i] < 0 || idx[i] >= static_cast<int64_t>(xd.size()))
            throw DimensionError("gather: index out of range");
        out[i] = xd[idx[i]];
    }
    auto xn = x.node();
    return make_op(std::move(out_shape), std::move(out), {xn}, [xn, index](TensorNode& self) {
        xn->ensure_grad();
        const auto& idx = *index;
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[idx[i]] += self.grad[i];
    });
}

Tensor avg_pool2d(const Tensor& chw, int window) {
    if (chw.rank() != 3) throw DimensionError("avg_pool2d: expected [C,H,W]");
    int C = chw.shape()[0], H = chw.shape()[1], W = chw.shape()[2];
    if (H % window != 0 || W % window != 0)
        throw DimensionError("avg_pool2d: extents not divisible by window");
    int Ho = H / window, Wo = W / window;
    float inv = 1.0f / static_cast<float>(window * window);
    std::vector<float> out(static_cast<int64_t>(C) * Ho * Wo, 0.0f);
    const auto& xd = chw.data();
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                float acc = 0.0f;
                for (int di = 0; di < window; ++di)
                    for (int dj = 0; dj < window; ++dj)
                        acc += xd[(static_cast<int64_t>(c) * H + i * window + di) * W +
                                  j * window + dj];
                out[(static_cast<int64_t>(c) * Ho + i) * Wo + j] = acc * inv;
            }
    auto xn = chw.node();
    return make_op({C, Ho, Wo}, std::move(out), {xn},
                   [xn, C, H, W, Ho, Wo, window, inv](TensorNode& self) {
                       xn->ensure_grad();
                       for (int c = 0; c < C; ++c)
                           for (int i = 0; i < Ho; ++i)
                               for (int j = 0; j < Wo; ++j) {
                                   float g =
                                       self.grad[(static_cast<int64_t>(c) * Ho + i) * Wo + j] * inv;
                                   for (int di = 0; di < window; ++di)
                                       for (int dj = 0; dj < window; ++dj)
                                           xn->grad[(static_cast<int64_t>(c) * H + i * window + di) *
                                                        W +
                                                    j * window + dj] += g;
                               }
                   });
}

Tensor global_avg_pool(const Tensor& chw) {
    if (chw.rank() != 3) throw DimensionError("global_avg_pool: expected [C,H,W]");
    int C = chw.shape()[0], H = chw.shape()[1], W = chw.shape()[2];
    int64_t hw = static_cast<int64_t>(H) * W;
    float inv = 1.0f / static_cast<float>(hw);
    std::vector<float> out(C, 0.0f);
    const auto& xd = chw.data();
    for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        for (int64_t i = 0; i < hw; ++i) acc += xd[c * hw + i];
        out[c] = acc * inv;
    }
    auto xn = chw.node();
    return make_op({C}, std::move(out), {xn}, [xn, C, hw, inv](TensorNode& self) {
        xn->ensure_grad();
        for (int c = 0; c < C; ++c) {
            float g = self.grad[c] * inv;
            for (int64_t i = 0; i < hw; ++i) xn->grad[c * hw + i] += g;
        }
    });
}

Tensor cross3(const Tensor& a, const Tensor& b) {
    if (a.numel() != 3 || b.numel() != 3) throw DimensionError("cross3: expected 3-vectors");
    const auto& u = a.data();
    const auto& v = b.data();
    std::vector<float> out = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                              u[0] * v[1] - u[1] * v[0]};
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
        const auto& g = self.grad;
        const auto& u = an->data;
        const auto& v = bn->data;
        // d(u x v)/du^T g = v x g,  d(u x v)/dv^T g = g x u
        if (an->requires_grad) {
            an->ensure_grad();
            an->grad[0] += v[1] * g[2] - v[2] * g[1];
            an->grad[1] += v[2] * g[0] - v[0] * g[2];
            an->grad[2] += v[0] * g[1] - v[1] * g[0];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[0] += g[1] * u[2] - g[2] * u[1];
            bn->grad[1] += g[2] * u[0] - g[0] * u[2];
            bn->grad[2] += g[0] * u[1] - g[1] * u[0];
        }
    });
}

Tensor bilinear_sample(const Tensor& chw, const Tensor& coords_xy) {
    if (chw.rank() != 3) throw DimensionError("bilinear_sample: map must be [C,H,W]");
    if (coords_xy.rank() != 2 || coords_xy.shape()[1] != 2)
        throw DimensionError("bilinear_sample: coords must be [J,2]");
    int C = chw.shape()[0], H = chw.shape()[1], W = chw.shape()[2];
    int J = coords_xy.shape()[0];
    const auto& fd = chw.data();
    const auto& cd = coords_xy.data();

    struct Corner {
        int x0, x1, y0, y1;
        float fx, fy;
        bool x_in, y_in;  // coordinate strictly inside (not clamped)
    };
    std::vector<Corner> corners(J);
    std::vector<float> out(static_cast<int64_t>(J) * C);
    for (int j = 0; j < J; ++j) {
        float x = cd[2 * j], y = cd[2 * j + 1];
        bool x_in = x > 0.0f && x < static_cast<float>(W - 1);
        bool y_in = y > 0.0f && y < static_cast<float>(H - 1);
        x = std::clamp(x, 0.0f, static_cast<float>(W - 1));
        y = std::clamp(y, 0.0f, static_cast<float>(H - 1));
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        int x1 = std::min(x0 + 1, W - 1);
        int y1 = std::min(y0 + 1, H - 1);
        float fx = x - static_cast<float>(x0);
        float fy = y - static_cast<float>(y0);
        corners[j] = {x0, x1, y0, y1, fx, fy, x_in, y_in};
        for (int c = 0; c < C; ++c) {
            int64_t base = static_cast<int64_t>(c) * H * W;
            float v00 = fd[base + static_cast<int64_t>(y0) * W + x0];
            float v01 = fd[base + static_cast<int64_t>(y0) * W + x1];
            float v10 = fd[base + static_cast<int64_t>(y1) * W + x0];
            float v11 = fd[base + static_cast<int64_t>(y1) * W + x1];
            out[static_cast<int64_t>(j) * C + c] = (1.0f - fy) * ((1.0f - fx) * v00 + fx * v01) +
                                                   fy * ((1.0f - fx) * v10 + fx * v11);
        }
    }
    auto fn = chw.node(), cn = coords_xy.node();
    return make_op({J, C}, std::move(out), {fn, cn},
                   [fn, cn, corners = std::move(corners), C, H, W, J](TensorNode& self) {
                       if (fn->requires_grad) fn->ensure_grad();
                       if (cn->requires_grad) cn->ensure_grad();
                       for (int j = 0; j < J; ++j) {
                           const Corner& k = corners[j];
                           float dx_acc = 0.0f, dy_acc = 0.0f;
                           for (int c = 0; c < C; ++c) {
                               float g = self.grad[static_cast<int64_t>(j) * C + c];
                               int64_t base = static_cast<int64_t>(c) * H * W;
                               int64_t i00 = base + static_cast<int64_t>(k.y0) * W + k.x0;
                               int64_t i01 = base + static_cast<int64_t>(k.y0) * W + k.x1;
                               int64_t i10 = base + static_cast<int64_t>(k.y1) * W + k.x0;
                               int64_t i11 = base + static_cast<int64_t>(k.y1) * W + k.x1;
                               if (fn->requires_grad) {
                                   fn->grad[i00] += g * (1.0f - k.fy) * (1.0f - k.fx);
                                   fn->grad[i01] += g * (1.0f - k.fy) * k.fx;
                                   fn->grad[i10] += g * k.fy * (1.0f - k.fx);
                                   fn->grad[i11] += g * k.fy * k.fx;
                               }
                               if (cn->requires_grad) {
                                   const auto& fdv = fn->data;
                                   float v00 = fdv[i00], v01 = fdv[i01], v10 = fdv[i10],
                                         v11 = fdv[i11];
                                   dx_acc += g * ((1.0f - k.fy) * (v01 - v00) + k.fy * (v11 - v10));
                                   dy_acc += g * ((1.0f - k.fx) * (v10 - v00) + k.fx * (v11 - v01));
                               }
                           }
                           if (cn->requires_grad) {
                               if (k.x_in) cn->grad[2 * j] += dx_acc;
                               if (k.y_in) cn->grad[2 * j + 1] += dy_acc;
                           }
                       }
                   });
}

Tensor make_custom_op(std::vector<int> shape, std::vector<float> data,
                      std::vector<NodePtr> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    return make_op(std::move(shape), std::move(data), std::move(parents), std::move(backward_fn));
}

// ---- backward --------------------------------------------------------------

namespace {

std::vector<TensorNode*> topo_order(TensorNode* root) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    // iterative post-order DFS
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next].get();
            ++next;
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace

void backward(const Tensor& root) {
    if (root.numel() != 1) throw ContractError("backward: root must be scalar");
    TensorNode* rn = root.node().get();
    auto order = topo_order(rn);
    // Operational nodes get a fresh working gradient per sweep; only leaves
    // accumulate across sweeps.
    for (TensorNode* n : order) {
        if (n->backward_fn) n->grad.assign(n->data.size(), 0.0f);
    }
    rn->ensure_grad();
    rn->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

void detach_graph(const Tensor& root) {
    if (!root.defined()) return;
    auto order = topo_order(root.node().get());
    for (TensorNode* n : order) {
        n->parents.clear();
        n->backward_fn = nullptr;
    }
}

}  // namespace gestpose
