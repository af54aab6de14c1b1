#pragma once

// Covering-number bound for an n-layer discriminator in terms of its layer
// spectral norms and their distances from reference matrices.

#include <cstdint>
#include <span>
#include <vector>

#include "titan/params.hpp"

namespace titan {

struct DiscriminatorSpec {
    std::vector<double> spectral_norms;   // s_i > 0
    std::vector<double> ref_distances;    // b_i >= 0
    std::vector<double> lipschitz;        // rho_i > 0 (1 for ReLU)
    double max_width = 1.0;               // W
    double data_norm = 1.0;               // ||X||_2

    std::size_t layers() const { return spectral_norms.size(); }
    /// Throws std::invalid_argument on ragged vectors or out-of-range entries.
    void validate() const;
};

enum class BoundForm {
    Product,            // log(2W^2) ||X||^2 / eps^2 * prod s_i^2 * sum b_i^2 / s_i^2
    LipschitzProduct,   // same with prod (s_i rho_i)^2
};

/// Upper bound on the natural log of the covering number at scale eps.
double covering_bound(const DiscriminatorSpec& spec, double eps, BoundForm form = BoundForm::Product);

/// Per-layer scales eps_i = eps * rho_i prod_{j<i} s_j rho_j / prod_j s_j rho_j.
std::vector<double> epsilon_allocation(const DiscriminatorSpec& spec, double eps);

/// Chained scales eps_{i+1} = rho_i s_{i+1} eps_i, anchored so that
/// eps = rho_1 prod_{i>=2} s_i rho_i eps_1. Agrees with epsilon_allocation when
/// s_i = rho_i for every layer.
std::vector<double> epsilon_chain(const DiscriminatorSpec& spec, double eps);

struct PowerIterationOptions {
    int max_iterations = 100;
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
};

/// Largest singular value of a matrix by power iteration on A^T A.
double spectral_norm(const Tensor& matrix, const PowerIterationOptions& opts = {});

/// Spec for a trained MLP: s_i = ||A_i||, b_i = ||A_i - M_i|| with M_i the
/// reference (initial) weights, rho_i = 1, W = widest layer extent.
DiscriminatorSpec spec_from_weights(std::span<const Tensor> weights, std::span<const Tensor> references,
                                    double data_norm, const PowerIterationOptions& opts = {});

}  // namespace titan
