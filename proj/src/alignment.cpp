#include "titan/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan {

using ad::Var;

const char* stream_name(Stream s) {
    switch (s) {
        case Stream::EncoderQuery: return "enc_q";
        case Stream::EncoderToken: return "enc_k";
        case Stream::DecoderQuery: return "dec_q";
        case Stream::DecoderToken: return "dec_k";
    }
    return "?";
}

std::string discriminator_prefix(Stream s, int layer) {
    return std::string("disc.") + stream_name(s) + "." + std::to_string(layer);
}

ParamSet init_discriminators(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim <= 0 || cfg.hidden_dim <= 0 || cfg.enc_layers <= 0 || cfg.dec_layers <= 0) {
        throw std::invalid_argument("init_discriminators: extents must be positive");
    }
    ParamSet ps;
    Rng rng(derive_seed(seed, "discriminator-init"));
    auto add_mlp = [&](const std::string& prefix) {
        const std::size_t dims[] = {static_cast<std::size_t>(cfg.input_dim), static_cast<std::size_t>(cfg.hidden_dim),
                                    static_cast<std::size_t>(cfg.hidden_dim), 1};
        for (std::size_t l = 0; l < 3; ++l) {
            const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
            Tensor w = Tensor::matrix(dims[l], dims[l + 1]);
            for (double& v : w.data) v = rng.uniform(-a, a);
            ps.add(prefix + ".fc" + std::to_string(l + 1) + ".w", std::move(w));
            ps.add(prefix + ".fc" + std::to_string(l + 1) + ".b", Tensor::matrix(1, dims[l + 1], 0.0));
        }
    };
    for (int l = 1; l <= cfg.enc_layers; ++l) {
        add_mlp(discriminator_prefix(Stream::EncoderQuery, l));
        add_mlp(discriminator_prefix(Stream::EncoderToken, l));
    }
    for (int l = 1; l <= cfg.dec_layers; ++l) {
        add_mlp(discriminator_prefix(Stream::DecoderQuery, l));
        add_mlp(discriminator_prefix(Stream::DecoderToken, l));
    }
    return ps;
}

Var discriminator_logits(ParamBinding& params, const std::string& prefix, const Var& x) {
    Var h = ad::relu(ad::linear(x, params[prefix + ".fc1.w"], params[prefix + ".fc1.b"]));
    h = ad::relu(ad::linear(h, params[prefix + ".fc2.w"], params[prefix + ".fc2.b"]));
    return ad::linear(h, params[prefix + ".fc3.w"], params[prefix + ".fc3.b"]);
}

std::vector<Tensor> discriminator_weights(const ParamSet& discs, const std::string& prefix) {
    return {discs.get(prefix + ".fc1.w"), discs.get(prefix + ".fc2.w"), discs.get(prefix + ".fc3.w")};
}

Var domain_bce(const Var& logits, int domain) {
    if (domain != 0 && domain != 1) throw std::invalid_argument("domain_bce: domain label must be 0 or 1");
    return ad::sum(ad::bce_with_logits(logits, Tensor(logits.shape(), static_cast<double>(domain))));
}

double domain_bce(double logit, int domain) {
    if (domain != 0 && domain != 1) throw std::invalid_argument("domain_bce: domain label must be 0 or 1");
    // log(1 + e^x) - d x, evaluated without overflow
    const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
    return softplus - static_cast<double>(domain) * logit;
}

Var query_loss_layer(const Var& state, bool has_domain_query, int domain, ParamBinding& discs,
                     const std::string& prefix) {
    if (!has_domain_query || state.rows() == 0) {
        throw std::invalid_argument("query_loss_layer: state carries no domain-query slot");
    }
    return domain_bce(discriminator_logits(discs, prefix, ad::slice_rows(state, 0, 1)), domain);
}

Var token_loss_layer(const Var& state, bool has_domain_query, int domain, ParamBinding& discs,
                     const std::string& prefix) {
    const std::size_t skip = has_domain_query ? 1 : 0;
    if (state.rows() <= skip) throw std::invalid_argument("token_loss_layer: no token slots");
    const std::size_t count = state.rows() - skip;
    const Var tokens = skip ? ad::slice_rows(state, skip, count) : state;
    return ad::scale(domain_bce(discriminator_logits(discs, prefix, tokens), domain), 1.0 / static_cast<double>(count));
}

int discriminator_layers(const ParamSet& discs, Stream s) {
    int n = 0;
    while (discs.contains(discriminator_prefix(s, n + 1) + ".fc1.w")) ++n;
    return n;
}

AlignmentLosses cascade(const std::vector<Var>& enc_states, const std::vector<Var>& dec_states,
                        bool has_domain_query, int domain, ParamBinding& discs, const AlignmentWeights& w) {
    const ParamSet& bank = discs.params();
    const auto n_enc = static_cast<int>(enc_states.size());
    const auto n_dec = static_cast<int>(dec_states.size());
    if (n_enc == 0 || n_dec == 0) throw std::invalid_argument("cascade: no layer states");
    if (discriminator_layers(bank, Stream::EncoderQuery) != n_enc ||
        discriminator_layers(bank, Stream::EncoderToken) != n_enc ||
        discriminator_layers(bank, Stream::DecoderQuery) != n_dec ||
        discriminator_layers(bank, Stream::DecoderToken) != n_dec) {
        throw std::invalid_argument("cascade: layer count does not match the discriminator bank");
    }

    AlignmentLosses out;
    Var enc_total, dec_total;
    for (int l = 1; l <= n_enc; ++l) {
        const Var& z = enc_states[static_cast<std::size_t>(l - 1)];
        out.enc_q.push_back(has_domain_query
                                ? query_loss_layer(z, true, domain, discs, discriminator_prefix(Stream::EncoderQuery, l))
                                : discs.tape().constant(Tensor::scalar(0.0)));
        out.enc_k.push_back(token_loss_layer(z, has_domain_query, domain, discs, discriminator_prefix(Stream::EncoderToken, l)));
        const Var term = ad::add(out.enc_k.back(), ad::scale(out.enc_q.back(), w.enc_q));
        enc_total = enc_total.valid() ? ad::add(enc_total, term) : term;
    }
    for (int l = 1; l <= n_dec; ++l) {
        const Var& q = dec_states[static_cast<std::size_t>(l - 1)];
        out.dec_q.push_back(has_domain_query
                                ? query_loss_layer(q, true, domain, discs, discriminator_prefix(Stream::DecoderQuery, l))
                                : discs.tape().constant(Tensor::scalar(0.0)));
        out.dec_k.push_back(token_loss_layer(q, has_domain_query, domain, discs, discriminator_prefix(Stream::DecoderToken, l)));
        const Var term = ad::add(out.dec_k.back(), ad::scale(out.dec_q.back(), w.dec_q));
        dec_total = dec_total.valid() ? ad::add(dec_total, term) : term;
    }
    out.enc = enc_total;
    out.dec = dec_total;
    return out;
}

}  // namespace titan
