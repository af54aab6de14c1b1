#include "titan/params.hpp"

#include <cmath>
#include <stdexcept>

namespace titan {

void ParamSet::add(const std::string& name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
}

std::size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamSet::get(const std::string& name) const { return values_[index_of(name)]; }
Tensor& ParamSet::get(const std::string& name) { return values_[index_of(name)]; }

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

bool ParamSet::congruent(const ParamSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i].shape != other.values_[i].shape) return false;
    return true;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(values_[i].shape, 0.0));
    return out;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (!congruent(other)) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i].data != other.values_[i].data) return false;
    return true;
}

ParamSet ParamSet::subset(const std::string& prefix) const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i)
        if (names_[i].rfind(prefix, 0) == 0) out.add(names_[i].substr(prefix.size()), values_[i]);
    return out;
}

void ParamSet::merge(const std::string& prefix, const ParamSet& other) {
    for (std::size_t i = 0; i < other.size(); ++i) add(prefix + other.name(i), other.at(i));
}

ParamBinding::ParamBinding(ad::Tape& tape, const ParamSet& params, bool trainable)
    : tape_(&tape), params_(&params), trainable_(trainable), vars_(params.size()), bound_(params.size(), false) {}

Var ParamBinding::operator[](const std::string& name) {
    const std::size_t i = params_->index_of(name);
    if (!bound_[i]) {
        vars_[i] = tape_->leaf(params_->at(i), trainable_);
        bound_[i] = true;
    }
    return vars_[i];
}

ParamSet ParamBinding::gradients(const ad::Gradients& grads) const {
    ParamSet out = params_->zeros_like();
    for (std::size_t i = 0; i < params_->size(); ++i)
        if (bound_[i] && grads.has(vars_[i])) out.at(i) = grads[vars_[i]];
    return out;
}

AdamState AdamState::for_params(const ParamSet& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

double global_norm(const ParamSet& grads) {
    double s = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i)
        for (double g : grads.at(i).data) s += g * g;
    return std::sqrt(s);
}

double adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
    if (!params.congruent(grads) || !params.congruent(state.m)) {
        throw std::invalid_argument("adam_step: parameter, gradient and state sets are not congruent");
    }
    const double norm = global_norm(grads);
    double clip = 1.0;
    if (cfg.clip_max_norm > 0.0 && norm > cfg.clip_max_norm) clip = cfg.clip_max_norm / (norm + 1e-6);
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i).data;
        const auto& g = grads.at(i).data;
        auto& m = state.m.at(i).data;
        auto& v = state.v.at(i).data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] * clip;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[k]);
        }
    }
    return norm;
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
    if (!teacher.congruent(student)) throw std::invalid_argument("ema_update: teacher and student shapes differ");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_update: alpha must lie in [0, 1]");
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher.at(i).data;
        const auto& s = student.at(i).data;
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = alpha * t[k] + (1.0 - alpha) * s[k];
    }
}

}  // namespace titan
