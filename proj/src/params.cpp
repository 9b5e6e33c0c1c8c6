#include "corrlab/params.hpp"

#include <cmath>
#include <stdexcept>

namespace corrlab {

Parameter& ParameterStore::create(const std::string& name, Matrix init) {
    if (params_.count(name)) {
        throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
    }
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix::zeros(init.rows(), init.cols());
    p->moment1 = Matrix::zeros(init.rows(), init.cols());
    p->moment2 = Matrix::zeros(init.rows(), init.cols());
    p->value = std::move(init);
    auto& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
}

Parameter& ParameterStore::linear_weight(const std::string& name, int in_dim, int out_dim,
                                         Rng& rng) {
    if (has(name)) return get(name);
    Matrix w(in_dim, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return create(name, std::move(w));
}

Parameter& ParameterStore::zeros(const std::string& name, int rows, int cols) {
    if (has(name)) return get(name);
    return create(name, Matrix::zeros(rows, cols));
}

Parameter& ParameterStore::constant(const std::string& name, int rows, int cols, double v) {
    if (has(name)) return get(name);
    return create(name, Matrix::constant(rows, cols, v));
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::invalid_argument("ParameterStore: unknown parameter '" + name + "'");
    }
    return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::invalid_argument("ParameterStore: unknown parameter '" + name + "'");
    }
    return *it->second;
}

void ParameterStore::zero_grad() {
    for (auto& [name, p] : params_) {
        std::fill(p->grad.data(), p->grad.data() + p->grad.size(), 0.0);
    }
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step_count_);
    for (auto& [name, p] : params_) {
        if (!p->grad.same_shape(p->value)) {
            throw std::runtime_error("adam_step: gradient shape mismatch for '" + name + "'");
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            p->moment1[i] = cfg.beta1 * p->moment1[i] + (1.0 - cfg.beta1) * g;
            p->moment2[i] = cfg.beta2 * p->moment2[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p->moment1[i] / bc1;
            const double vhat = p->moment2[i] / bc2;
            p->value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
        p->value.require_finite("adam_step");
    }
}

double ParameterStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& [name, p] : params_) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) acc += p->grad[i] * p->grad[i];
    }
    return std::sqrt(acc);
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p->value.size();
    return n;
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& [name, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) out.push_back(p.get());
    return out;
}

void ParameterStore::load_values_from(const ParameterStore& other) {
    for (auto& [name, p] : params_) {
        const Parameter& src = other.get(name);
        if (!src.value.same_shape(p->value)) {
            throw std::runtime_error("load_values_from: shape mismatch for '" + name + "'");
        }
        p->value = src.value;
    }
}

}  // namespace corrlab
