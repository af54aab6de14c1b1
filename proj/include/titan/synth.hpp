#pragma once

// Synthetic detection data with a parametric fog-like domain shift, plus the
// weak and strong augmentation views used for self-training.
//
// Images are [3 x H x W] tensors with raw intensities in [0, 1]. The detector
// always consumes normalized images (see normalize()).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "titan/boxes.hpp"
#include "titan/params.hpp"

namespace titan {

struct DomainShiftSpec {
    int image_size = 32;
    int min_objects = 1;
    int max_objects = 3;
    int min_object_size = 6;
    int max_object_size = 12;
    int num_classes = 3;

    double haze = 0.0;           // airlight blend weight
    double contrast_loss = 0.0;  // fraction of contrast removed around the image mean
    double texture_noise = 0.0;  // stddev of additive pixel noise
    double class_skew = 0.0;     // class prior proportional to exp(-skew * k)
    double severity_spread = 0.0;  // per-image shift scale drawn from [1 - spread, 1 + spread]
    double airlight = 0.8;

    /// Throws std::invalid_argument on out-of-range parameters or objects that
    /// cannot fit the canvas.
    void validate() const;
    bool is_source() const { return haze == 0.0 && contrast_loss == 0.0 && texture_noise == 0.0 && class_skew == 0.0; }
    bool operator==(const DomainShiftSpec&) const = default;
};

struct Sample {
    Tensor image;  // raw, [3 x H x W]
    GroundTruth gt;
    double severity = 0.0;  // per-image shift scale actually applied
};

struct Dataset {
    DomainShiftSpec spec;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

/// Deterministic: image i depends only on (spec, seed, i).
Dataset generate_domain(const DomainShiftSpec& spec, std::size_t n_images, std::uint64_t seed);

/// Applies the shift of spec (at the given severity scale) to a clean image.
void apply_shift(Tensor& image, const DomainShiftSpec& spec, double severity, std::uint64_t noise_seed);

// ---------------------------------------------------------------------------
// Augmentations

inline constexpr std::array<double, 3> kImageMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageStd = {0.229, 0.224, 0.225};

Tensor normalize(const Tensor& image);
Tensor denormalize(const Tensor& image);

Tensor flip_image(const Tensor& image);
GroundTruth flip_ground_truth(const GroundTruth& gt);

struct JitterFactors {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;
};

/// Brightness, contrast, saturation, then hue rotation; clamps to [0, 1].
Tensor color_jitter(const Tensor& image, const JitterFactors& f);
/// Replaces every channel by the channel mean.
Tensor grayscale(const Tensor& image);
/// Separable Gaussian blur with reflect padding, radius ceil(3 sigma).
Tensor gaussian_blur(const Tensor& image, double sigma);

struct AugmentPolicy {
    double flip_p = 0.5;
    double jitter_p = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.1;
    double grayscale_p = 0.2;
    double blur_p = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
};

struct WeakView {
    Tensor raw;         // flipped or not, unnormalized
    Tensor normalized;  // model input
    bool flipped = false;
};

WeakView weak_augment(const Tensor& image, const AugmentPolicy& policy, std::uint64_t seed);
/// Photometric strong view built on a weak view's raw pixels, so both views
/// share geometry. Returns a normalized model input.
Tensor strong_augment(const Tensor& weak_raw, const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace titan
