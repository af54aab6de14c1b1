#pragma once

// Domain discriminators and the query/token adversarial losses, cascaded over
// every encoder and decoder layer.
//
// All four loss families are non-negative binary cross-entropies. The
// generator side sees them through grad_reverse, so minimizing
//   L_stu + lambda_enc * L_enc + lambda_dec * L_dec
// trains the discriminators to separate domains while pushing the detector
// toward the reported objective L_stu - lambda_enc * L_enc - lambda_dec * L_dec.

#include <cstdint>
#include <string>
#include <vector>

#include "titan/autodiff.hpp"
#include "titan/params.hpp"

namespace titan {

enum class Stream { EncoderQuery, EncoderToken, DecoderQuery, DecoderToken };

const char* stream_name(Stream s);
/// Parameter prefix of the discriminator for (stream, layer), layer 1-based.
std::string discriminator_prefix(Stream s, int layer);

struct DiscriminatorConfig {
    int input_dim = 32;
    int hidden_dim = 32;
    int enc_layers = 3;
    int dec_layers = 3;
};

/// 4 * L three-layer MLPs (input -> hidden -> hidden -> 1, ReLU between).
ParamSet init_discriminators(const DiscriminatorConfig& cfg, std::uint64_t seed);

/// Logits [R x 1] of the discriminator stored under prefix for rows x [R x C].
ad::Var discriminator_logits(ParamBinding& params, const std::string& prefix, const ad::Var& x);

/// Weight matrices of one discriminator in layer order.
std::vector<Tensor> discriminator_weights(const ParamSet& discs, const std::string& prefix);

/// -[d log p + (1-d) log(1-p)], p = sigmoid(logit), summed over elements.
ad::Var domain_bce(const ad::Var& logits, int domain);
double domain_bce(double logit, int domain);

/// BCE of the discriminator on slot 0 (the domain query) of a layer state.
/// Throws std::invalid_argument if the state has no domain-query slot.
ad::Var query_loss_layer(const ad::Var& state, bool has_domain_query, int domain, ParamBinding& discs,
                         const std::string& prefix);

/// Mean BCE over every token / object-query slot, excluding the domain query.
/// Throws std::invalid_argument when no such slot exists.
ad::Var token_loss_layer(const ad::Var& state, bool has_domain_query, int domain, ParamBinding& discs,
                         const std::string& prefix);

struct AlignmentWeights {
    double enc_q = 0.1;
    double dec_q = 0.1;
};

struct AlignmentLosses {
    std::vector<ad::Var> enc_q, enc_k, dec_q, dec_k;  // one entry per layer, layer 1 first
    ad::Var enc;                                      // sum_l (enc_k + w_enc_q * enc_q)
    ad::Var dec;                                      // sum_l (dec_k + w_dec_q * dec_q)
};

/// Cascaded losses over layer states z_1..z_L and q_1..q_L (pass the states
/// without the input embedding). Without a domain query the query terms are
/// constant zeros. Throws std::invalid_argument when the layer counts disagree
/// with the discriminator bank.
AlignmentLosses cascade(const std::vector<ad::Var>& enc_states, const std::vector<ad::Var>& dec_states,
                        bool has_domain_query, int domain, ParamBinding& discs, const AlignmentWeights& w = {});

/// Number of layers per stream present in a discriminator bank.
int discriminator_layers(const ParamSet& discs, Stream s);

}  // namespace titan
