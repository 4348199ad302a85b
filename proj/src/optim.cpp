#include "gestpose/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gestpose/errors.hpp"

namespace gestpose {

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (has(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    t.set_requires_grad(true);
    order_.push_back(name);
    entries_[name] = Entry{t, {}, {}};
    return t;
}

Tensor ParamStore::create(const std::string& name, std::vector<int> shape, std::mt19937& rng,
                          float stddev) {
    return add(name, Tensor::randn(std::move(shape), rng, stddev));
}

Tensor ParamStore::create_uniform(const std::string& name, std::vector<int> shape,
                                  std::mt19937& rng, float lo, float hi) {
    return add(name, Tensor::uniform(std::move(shape), rng, lo, hi));
}

Tensor ParamStore::create_const(const std::string& name, std::vector<int> shape, float value) {
    return add(name, Tensor::full(std::move(shape), value));
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("ParamStore: no parameter '" + name + "'");
    return it->second.param;
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const auto& name : order_) n += entries_.at(name).param.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (const auto& name : order_) {
        auto it = entries_.find(name);
        it->second.param.zero_grad();
    }
}

void adam_step(ParamStore& store, float lr, float beta1, float beta2, float eps) {
    store.step_ += 1;
    double t = static_cast<double>(store.step_);
    float bc1 = 1.0f - static_cast<float>(std::pow(beta1, t));
    float bc2 = 1.0f - static_cast<float>(std::pow(beta2, t));
    for (const auto& name : store.order_) {
        auto& e = store.entries_.at(name);
        auto& p = e.param.data();
        if (e.m.empty()) {
            e.m.assign(p.size(), 0.0f);
            e.v.assign(p.size(), 0.0f);
        }
        const std::vector<float>* gp = nullptr;
        if (e.param.has_grad()) gp = &e.param.grad();
        for (size_t i = 0; i < p.size(); ++i) {
            float g = gp ? (*gp)[i] : 0.0f;
            e.m[i] = beta1 * e.m[i] + (1.0f - beta1) * g;
            e.v[i] = beta2 * e.v[i] + (1.0f - beta2) * g * g;
            float mhat = e.m[i] / bc1;
            float vhat = e.v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        e.param.zero_grad();
    }
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, float tol, float step,
                           int max_elements_per_input, unsigned subset_seed) {
    GradCheckReport report;
    report.inputs.resize(inputs.size());

    std::vector<bool> prev_rg(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        prev_rg[i] = inputs[i].requires_grad();
        inputs[i].set_requires_grad(true);
        inputs[i].zero_grad();
    }

    Tensor y = f(inputs);
    if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
    backward(y);
    std::vector<std::vector<float>> analytic(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i)
        analytic[i] = inputs[i].has_grad() ? inputs[i].grad()
                                           : std::vector<float>(inputs[i].numel(), 0.0f);
    detach_graph(y);

    std::mt19937 rng(subset_seed);
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& x = inputs[i].data();
        std::vector<int64_t> elems(x.size());
        std::iota(elems.begin(), elems.end(), 0);
        if (max_elements_per_input > 0 &&
            static_cast<int64_t>(x.size()) > max_elements_per_input) {
            std::shuffle(elems.begin(), elems.end(), rng);
            elems.resize(max_elements_per_input);
        }
        double max_abs_diff = 0.0, max_a = 0.0, max_n = 0.0;
        for (int64_t el : elems) {
            float saved = x[el];
            double fp, fm;
            {
                NoGradGuard ng;
                x[el] = saved + step;
                fp = static_cast<double>(f(inputs).item());
                x[el] = saved - step;
                fm = static_cast<double>(f(inputs).item());
            }
            x[el] = saved;
            double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
            double a = static_cast<double>(analytic[i][el]);
            max_abs_diff = std::max(max_abs_diff, std::fabs(a - numeric));
            max_a = std::max(max_a, std::fabs(a));
            max_n = std::max(max_n, std::fabs(numeric));
        }
        double denom = std::max({max_a, max_n, 1e-3});
        report.inputs[i].rel_err = max_abs_diff / denom;
        report.inputs[i].elements_checked = static_cast<int64_t>(elems.size());
        worst = std::max(worst, report.inputs[i].rel_err);
    }
    for (size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(prev_rg[i]);

    report.max_rel_err = worst;
    report.pass = worst < static_cast<double>(tol);
    return report;
}

}  // namespace gestpose
