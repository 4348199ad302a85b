#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gestpose/tensor.hpp"

namespace gestpose {

// Named parameter registry with deterministic (insertion) iteration order and
// per-parameter Adam moment buffers.
class ParamStore {
  public:
    Tensor add(const std::string& name, Tensor t);
    Tensor create(const std::string& name, std::vector<int> shape, std::mt19937& rng,
                  float stddev);
    Tensor create_uniform(const std::string& name, std::vector<int> shape, std::mt19937& rng,
                          float lo, float hi);
    Tensor create_const(const std::string& name, std::vector<int> shape, float value);

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    Tensor get(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }
    int64_t total_params() const;

    void zero_grads();
    int64_t step_count() const { return step_; }

  private:
    friend void adam_step(ParamStore&, float, float, float, float);
    struct Entry {
        Tensor param;
        std::vector<float> m, v;
    };
    std::vector<std::string> order_;
    std::unordered_map<std::string, Entry> entries_;
    int64_t step_ = 0;
};

// Standard Adam with bias correction; missing gradients count as zero and all
// gradients are cleared afterwards.
void adam_step(ParamStore& store, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
               float eps = 1e-8f);

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
    adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

// Finite-difference gradient check: central differences with step 1e-3 in f32.
// Per input the reported error is max_i |a_i - n_i| / max(max|a|, max|n|, 1e-3)
// over the checked elements (a analytic, n numeric). With
// max_elements_per_input > 0, a seeded random subset of that size is checked
// per input (needed for large parameter tensors).
struct GradCheckReport {
    struct PerInput {
        double rel_err = 0.0;
        int64_t elements_checked = 0;
    };
    std::vector<PerInput> inputs;
    double max_rel_err = 0.0;
    bool pass = false;
};

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, float tol, float step = 1e-3f,
                           int max_elements_per_input = 0, unsigned subset_seed = 0);

}  // namespace gestpose
