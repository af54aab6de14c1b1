#pragma once

// Query-based toy detector: patch tokens -> pre-norm transformer encoder ->
// object-query transformer decoder -> box and class heads. Both stacks can
// carry an extra learnable domain query in slot 0 whose per-layer state feeds
// the query discriminators; detections never come from that slot.

#include <cstdint>
#include <string>
#include <vector>

#include "titan/autodiff.hpp"
#include "titan/boxes.hpp"
#include "titan/params.hpp"

namespace titan {

struct DetectorConfig {
    int image_size = 32;
    int channels = 3;
    int patch_size = 4;
    int hidden_dim = 32;
    int num_heads = 2;
    int ffn_dim = 64;
    int enc_layers = 3;
    int dec_layers = 3;
    int num_queries = 12;
    int num_classes = 3;

    int grid() const { return image_size / patch_size; }
    int num_tokens() const { return grid() * grid(); }
    int patch_dim() const { return channels * patch_size * patch_size; }
    /// Throws std::invalid_argument on inconsistent extents.
    void validate() const;
    bool operator==(const DetectorConfig&) const = default;
};

ParamSet init_detector_params(const DetectorConfig& cfg, std::uint64_t seed);

/// Issues a fresh seed for each dropout site visited during one forward pass.
class DropoutStream {
public:
    DropoutStream() = default;
    DropoutStream(double p, bool train, std::uint64_t seed) : p_(p), train_(train), seed_(seed) {}

    ad::Var apply(const ad::Var& x);
    double p() const { return p_; }
    bool train() const { return train_; }

private:
    double p_ = 0.0;
    bool train_ = false;
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

/// Layer states z_0..z_L. With a domain query each state has N+1 rows and the
/// query occupies row 0.
struct EncoderOutput {
    std::vector<ad::Var> states;
    bool has_domain_query = false;
};

/// Layer states q_0..q_L plus head outputs for the M object-query slots.
struct DecoderOutput {
    std::vector<ad::Var> states;
    bool has_domain_query = false;
    ad::Var boxes;   // [M x 4] (x1, y1, x2, y2)
    ad::Var logits;  // [M x K]
};

struct ForwardResult {
    EncoderOutput encoder;
    DecoderOutput decoder;
};

struct ForwardOptions {
    bool domain_query = true;
    double dropout_p = 0.0;
    bool train = false;
    std::uint64_t seed = 0;
};

/// Image [C x H x W] -> patch matrix [N x channels*patch*patch] as a tape constant.
ad::Var patchify(ad::Tape& tape, const Tensor& image, const DetectorConfig& cfg);
/// Linear patch embedding f_e^1..f_e^N.
ad::Var embed_patches(const DetectorConfig& cfg, ParamBinding& params, const ad::Var& patches);

EncoderOutput encode(const DetectorConfig& cfg, ParamBinding& params, const ad::Var& tokens, bool domain_query,
                     DropoutStream& dropout);
DecoderOutput decode(const DetectorConfig& cfg, ParamBinding& params, const EncoderOutput& encoder,
                     bool domain_query, DropoutStream& dropout);

ForwardResult forward(const DetectorConfig& cfg, ParamBinding& params, const Tensor& image,
                      const ForwardOptions& opts);

DetectionSet to_detections(const DecoderOutput& out);

/// Forward pass over frozen parameters, returning only detections.
DetectionSet detect(const DetectorConfig& cfg, const ParamSet& params, const Tensor& image,
                    const ForwardOptions& opts = {});

}  // namespace titan
