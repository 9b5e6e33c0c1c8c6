#pragma once

#include "corrlab/matrix.hpp"
#include "corrlab/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace corrlab {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    // Adam state
    Matrix moment1;
    Matrix moment2;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Named parameter matrices plus accumulated gradients and optimizer state.
/// Single-writer: one training step owns the store exclusively.
class ParameterStore {
public:
    /// Registers a parameter (error if the name exists) and returns it.
    Parameter& create(const std::string& name, Matrix init);

    /// Returns the parameter or creates it via fan-in-scaled uniform init.
    Parameter& linear_weight(const std::string& name, int in_dim, int out_dim, Rng& rng);
    /// Zero-initialized parameter (biases, identity-leaning residual tails).
    Parameter& zeros(const std::string& name, int rows, int cols);
    /// Constant-initialized parameter (normalization gains).
    Parameter& constant(const std::string& name, int rows, int cols, double v);

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;

    void zero_grad();
    /// Adam update over every parameter; gradients are left untouched.
    void adam_step(const AdamConfig& cfg);

    double grad_norm() const;
    std::size_t parameter_count() const;
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;

    /// Overwrites every parameter value from `other` (shapes must match).
    void load_values_from(const ParameterStore& other);

    int step_count() const { return step_count_; }

private:
    std::map<std::string, std::unique_ptr<Parameter>> params_;
    int step_count_ = 0;
};

}  // namespace corrlab
