#include "titan/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan {

void DiscriminatorSpec::validate() const {
    const std::size_t n = spectral_norms.size();
    if (n == 0) throw std::invalid_argument("DiscriminatorSpec: no layers");
    if (ref_distances.size() != n || lipschitz.size() != n) {
        throw std::invalid_argument("DiscriminatorSpec: per-layer vectors differ in length");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(spectral_norms[i] > 0.0)) throw std::invalid_argument("DiscriminatorSpec: spectral norms must be positive");
        if (!(ref_distances[i] >= 0.0)) throw std::invalid_argument("DiscriminatorSpec: reference distances must be non-negative");
        if (!(lipschitz[i] > 0.0)) throw std::invalid_argument("DiscriminatorSpec: Lipschitz constants must be positive");
    }
    if (!(max_width > 0.0)) throw std::invalid_argument("DiscriminatorSpec: width must be positive");
    if (!(data_norm > 0.0)) throw std::invalid_argument("DiscriminatorSpec: data norm must be positive");
}

double covering_bound(const DiscriminatorSpec& spec, double eps, BoundForm form) {
    if (!(eps > 0.0)) throw std::invalid_argument("covering_bound: eps must be positive");
    spec.validate();
    double prod = 1.0, ratio_sum = 0.0;
    for (std::size_t i = 0; i < spec.layers(); ++i) {
        const double s = spec.spectral_norms[i];
        const double factor = form == BoundForm::Product ? s : s * spec.lipschitz[i];
        prod *= factor * factor;
        ratio_sum += (spec.ref_distances[i] * spec.ref_distances[i]) / (s * s);
    }
    const double w = spec.max_width;
    return std::log(2.0 * w * w) * spec.data_norm * spec.data_norm / (eps * eps) * prod * ratio_sum;
}

std::vector<double> epsilon_allocation(const DiscriminatorSpec& spec, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("epsilon_allocation: eps must be positive");
    spec.validate();
    const std::size_t n = spec.layers();
    double total = 1.0;
    for (std::size_t j = 0; j < n; ++j) total *= spec.spectral_norms[j] * spec.lipschitz[j];
    if (total == 0.0 || !std::isfinite(total)) throw std::invalid_argument("epsilon_allocation: degenerate layer product");
    std::vector<double> out(n);
    double prefix = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = eps * spec.lipschitz[i] * prefix / total;
        prefix *= spec.spectral_norms[i] * spec.lipschitz[i];
    }
    return out;
}

std::vector<double> epsilon_chain(const DiscriminatorSpec& spec, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("epsilon_chain: eps must be positive");
    spec.validate();
    const std::size_t n = spec.layers();
    double anchor = spec.lipschitz[0];
    for (std::size_t i = 1; i < n; ++i) anchor *= spec.spectral_norms[i] * spec.lipschitz[i];
    if (!std::isfinite(anchor)) throw std::invalid_argument("epsilon_chain: degenerate layer product");
    std::vector<double> out(n);
    out[0] = eps / anchor;
    for (std::size_t i = 0; i + 1 < n; ++i) out[i + 1] = spec.lipschitz[i] * spec.spectral_norms[i + 1] * out[i];
    return out;
}

double spectral_norm(const Tensor& matrix, const PowerIterationOptions& opts) {
    if (matrix.rank() != 2 || matrix.size() == 0) throw std::invalid_argument("spectral_norm: expected a non-empty matrix");
    const std::size_t r = matrix.rows(), c = matrix.cols();
    Rng rng(opts.seed);
    std::vector<double> v(c), u(r);
    for (double& x : v) x = rng.normal();
    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        if (s > 0.0)
            for (double& e : x) e /= s;
        return s;
    };
    normalize(v);
    double sigma = 0.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        for (std::size_t i = 0; i < r; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += matrix(i, j) * v[j];
            u[i] = s;
        }
        const double next = normalize(u);
        for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < r; ++i) s += matrix(i, j) * u[i];
            v[j] = s;
        }
        normalize(v);
        const bool converged = std::abs(next - sigma) <= opts.tolerance * std::max(1.0, next);
        sigma = next;
        if (converged) break;
    }
    return sigma;
}

DiscriminatorSpec spec_from_weights(std::span<const Tensor> weights, std::span<const Tensor> references,
                                    double data_norm, const PowerIterationOptions& opts) {
    if (weights.size() != references.size()) throw std::invalid_argument("spec_from_weights: reference count mismatch");
    DiscriminatorSpec spec;
    spec.data_norm = data_norm;
    double width = 1.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const Tensor& a = weights[i];
        const Tensor& m = references[i];
        if (a.shape != m.shape) throw std::invalid_argument("spec_from_weights: reference shape mismatch");
        spec.spectral_norms.push_back(spectral_norm(a, opts));
        Tensor diff = a;
        for (std::size_t k = 0; k < diff.size(); ++k) diff.data[k] -= m.data[k];
        spec.ref_distances.push_back(spectral_norm(diff, opts));
        spec.lipschitz.push_back(1.0);
        width = std::max({width, static_cast<double>(a.rows()), static_cast<double>(a.cols())});
    }
    spec.max_width = width;
    return spec;
}

}  // namespace titan
