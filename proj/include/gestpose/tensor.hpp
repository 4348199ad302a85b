#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace gestpose {

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

}  // namespace detail

// Dense f32 tensor participating in a reverse-mode graph. Value-semantic
// handle over a shared node; copies alias the same storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, std::mt19937& rng, float stddev = 1.0f,
                        bool requires_grad = false);
    static Tensor uniform(std::vector<int> shape, std::mt19937& rng, float lo, float hi,
                          bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }

    std::vector<float>& data() { return node_->data; }
    const std::vector<float>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    void zero_grad();

    // Value of a single-element tensor.
    float item() const;
    float at(std::initializer_list<int> idx) const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

  private:
    std::shared_ptr<detail::TensorNode> node_;
};

// While alive, newly created ops record no graph edges (evaluation mode).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [n,d] + [d], row broadcast

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);
Tensor absolute(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor square(const Tensor& x);

// x * s[0] where s is a single-element tensor; gradient flows into both.
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor softmax(const Tensor& x, int axis);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
Tensor l1_loss(const Tensor& pred, const Tensor& target);  // mean |pred - target| -> [1]

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor transpose2d(const Tensor& x);
Tensor slice(const Tensor& x, int axis, int start, int count);  // 2-D only
Tensor concat(const std::vector<Tensor>& xs, int axis);         // 2-D only

// out[i] = x.data[index[i]]; backward scatter-adds. Index map is shared so
// per-config maps (patchify, volume assembly) are built once.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> index,
              std::vector<int> out_shape);

Tensor avg_pool2d(const Tensor& chw, int window);  // [C,H,W] -> [C,H/w,W/w]
Tensor global_avg_pool(const Tensor& chw);         // [C,H,W] -> [C]

Tensor cross3(const Tensor& a, const Tensor& b);  // [3] x [3] -> [3]

// Bilinear sample of [C,H,W] at J continuous (x, y) index-space coordinates,
// clamp-to-edge; differentiable w.r.t. both the map and the coordinates.
Tensor bilinear_sample(const Tensor& chw, const Tensor& coords_xy);  // -> [J,C]

// Building block for fused ops defined outside the core set: wires the result
// into the graph when grad mode is on and any parent requires grad.
Tensor make_custom_op(std::vector<int> shape, std::vector<float> data,
                      std::vector<std::shared_ptr<detail::TensorNode>> parents,
                      std::function<void(detail::TensorNode&)> backward_fn);

// Reverse sweep from a scalar root; gradients accumulate (+=) into every
// reachable requires_grad tensor. The graph is left intact.
void backward(const Tensor& root);

// Iteratively severs graph edges reachable from root so deep graphs are not
// torn down by recursive shared_ptr destruction.
void detach_graph(const Tensor& root);

}  // namespace gestpose
