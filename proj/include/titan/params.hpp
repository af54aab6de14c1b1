#pragma once

// Named parameter collections, their binding onto a tape, and the two update
// rules used in training: Adam for trainable sets and the EMA teacher update.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "titan/autodiff.hpp"

namespace titan {

using ad::Tensor;
using ad::Var;

/// Ordered name -> tensor map. Iteration order is insertion order, which is
/// also the serialization order.
class ParamSet {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);

    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const Tensor& at(std::size_t i) const { return values_[i]; }
    Tensor& at(std::size_t i) { return values_[i]; }
    std::size_t index_of(const std::string& name) const;

    std::size_t scalar_count() const;
    /// Same names, same order, same shapes.
    bool congruent(const ParamSet& other) const;
    ParamSet zeros_like() const;
    bool operator==(const ParamSet& other) const;

    /// Entries whose names begin with prefix, with the prefix stripped.
    ParamSet subset(const std::string& prefix) const;
    /// Appends every entry of other under prefix.
    void merge(const std::string& prefix, const ParamSet& other);

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::map<std::string, std::size_t> index_;
};

/// Exposes a ParamSet on one tape. Each parameter becomes a leaf the first
/// time it is requested; trainable bindings mark leaves requires_grad.
class ParamBinding {
public:
    ParamBinding(ad::Tape& tape, const ParamSet& params, bool trainable);
    ParamBinding(ad::Tape&, const ParamSet&&, bool) = delete;  // holds a reference

    Var operator[](const std::string& name);
    ad::Tape& tape() { return *tape_; }
    bool trainable() const { return trainable_; }
    const ParamSet& params() const { return *params_; }

    /// Gradient per parameter, zero for parameters never touched.
    ParamSet gradients(const ad::Gradients& grads) const;

private:
    ad::Tape* tape_;
    const ParamSet* params_;
    bool trainable_;
    std::vector<Var> vars_;
    std::vector<bool> bound_;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
    double clip_max_norm = 0.0;  // 0 disables global-norm clipping
};

/// First/second moment state for one ParamSet.
struct AdamState {
    ParamSet m;
    ParamSet v;
    std::int64_t step = 0;

    static AdamState for_params(const ParamSet& params);
};

double global_norm(const ParamSet& grads);

/// One Adam step; returns the pre-clip gradient norm.
double adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg);

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
/// Throws std::invalid_argument when the sets are not congruent.
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

}  // namespace titan
