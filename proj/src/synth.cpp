#include "titan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan {

namespace {

constexpr int kChannels = 3;

struct Archetype {
    std::array<double, 3> color;
};

// 0 filled square, 1 hollow square, 2 plus sign
constexpr Archetype kArchetypes[] = {
    {{0.85, 0.20, 0.20}},
    {{0.20, 0.80, 0.25}},
    {{0.25, 0.35, 0.90}},
};

std::size_t side(const Tensor& image) {
    if (image.rank() != 3 || image.shape[0] != kChannels || image.shape[1] != image.shape[2]) {
        throw std::invalid_argument("expected a square [3 x H x W] image, got " + ad::shape_string(image.shape));
    }
    return image.shape[1];
}

double& px(Tensor& img, std::size_t c, std::size_t y, std::size_t x, std::size_t n) {
    return img.data[(c * n + y) * n + x];
}

void clamp01(Tensor& img) {
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

struct Placement {
    int x, y, s;
};

bool overlaps(const Placement& a, const Placement& b) {
    // one pixel of clearance between objects
    return a.x < b.x + b.s + 1 && b.x < a.x + a.s + 1 && a.y < b.y + b.s + 1 && b.y < a.y + a.s + 1;
}

void render(Tensor& img, std::size_t n, const Placement& p, int cls, const std::array<double, 3>& color) {
    const int thick_hollow = 2;
    const int arm = std::max(2, p.s / 3);
    const int arm_lo = (p.s - arm) / 2;
    for (int dy = 0; dy < p.s; ++dy) {
        for (int dx = 0; dx < p.s; ++dx) {
            bool on = false;
            switch (cls) {
                case 0: on = true; break;
                case 1:
                    on = dx < thick_hollow || dy < thick_hollow || dx >= p.s - thick_hollow || dy >= p.s - thick_hollow;
                    break;
                default:
                    on = (dx >= arm_lo && dx < arm_lo + arm) || (dy >= arm_lo && dy < arm_lo + arm);
                    break;
            }
            if (!on) continue;
            for (std::size_t c = 0; c < kChannels; ++c) {
                px(img, c, static_cast<std::size_t>(p.y + dy), static_cast<std::size_t>(p.x + dx), n) = color[c];
            }
        }
    }
}

}  // namespace

void DomainShiftSpec::validate() const {
    if (image_size < 8) throw std::invalid_argument("image_size must be at least 8");
    if (min_objects < 1 || max_objects < min_objects) throw std::invalid_argument("object count range is invalid");
    if (min_object_size < 3 || max_object_size < min_object_size) {
        throw std::invalid_argument("object size range is invalid");
    }
    if (max_object_size > image_size) throw std::invalid_argument("objects cannot fit the canvas");
    if (num_classes < 1 || num_classes > 3) throw std::invalid_argument("num_classes must lie in [1, 3]");
    if (!(haze >= 0.0 && haze < 1.0)) throw std::invalid_argument("haze must lie in [0, 1)");
    if (!(contrast_loss >= 0.0 && contrast_loss < 1.0)) throw std::invalid_argument("contrast_loss must lie in [0, 1)");
    if (!(texture_noise >= 0.0)) throw std::invalid_argument("texture_noise must be non-negative");
    if (!(class_skew >= 0.0)) throw std::invalid_argument("class_skew must be non-negative");
    if (!(severity_spread >= 0.0 && severity_spread <= 1.0)) {
        throw std::invalid_argument("severity_spread must lie in [0, 1]");
    }
    if (!(airlight >= 0.0 && airlight <= 1.0)) throw std::invalid_argument("airlight must lie in [0, 1]");
    // every object in the largest count must fit side by side at maximum size
    const int per_row = image_size / (max_object_size + 1);
    if (per_row * per_row < max_objects) throw std::invalid_argument("objects cannot fit the canvas");
}

void apply_shift(Tensor& image, const DomainShiftSpec& spec, double severity, std::uint64_t noise_seed) {
    const std::size_t n = side(image);
    const std::size_t plane = n * n;
    const double contrast = std::clamp(spec.contrast_loss * severity, 0.0, 0.95);
    const double haze = std::clamp(spec.haze * severity, 0.0, 0.95);
    const double noise = spec.texture_noise * severity;
    if (contrast > 0.0) {
        for (std::size_t c = 0; c < kChannels; ++c) {
            double m = 0.0;
            for (std::size_t i = 0; i < plane; ++i) m += image.data[c * plane + i];
            m /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) {
                double& v = image.data[c * plane + i];
                v = m + (1.0 - contrast) * (v - m);
            }
        }
    }
    if (haze > 0.0) {
        for (double& v : image.data) v = (1.0 - haze) * v + haze * spec.airlight;
    }
    if (noise > 0.0) {
        Rng rng(noise_seed);
        for (double& v : image.data) v += rng.normal(0.0, noise);
    }
    clamp01(image);
}

Dataset generate_domain(const DomainShiftSpec& spec, std::size_t n_images, std::uint64_t seed) {
    spec.validate();
    if (n_images == 0) throw std::invalid_argument("generate_domain: n_images must be positive");
    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.samples.reserve(n_images);

    std::vector<double> prior(static_cast<std::size_t>(spec.num_classes));
    double z = 0.0;
    for (std::size_t k = 0; k < prior.size(); ++k) z += prior[k] = std::exp(-spec.class_skew * static_cast<double>(k));
    for (double& p : prior) p /= z;

    const auto n = static_cast<std::size_t>(spec.image_size);
    for (std::size_t i = 0; i < n_images; ++i) {
        Rng rng(derive_seed(seed, "image", i));
        Sample s;
        s.image = Tensor({kChannels, n, n});

        const double base = rng.uniform(0.15, 0.35);
        const double tint[3] = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
        const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
        for (std::size_t c = 0; c < kChannels; ++c) {
            for (std::size_t y = 0; y < n; ++y) {
                for (std::size_t x = 0; x < n; ++x) {
                    const double u = static_cast<double>(x) / static_cast<double>(n - 1) - 0.5;
                    const double v = static_cast<double>(y) / static_cast<double>(n - 1) - 0.5;
                    px(s.image, c, y, x, n) = base + tint[c] + gx * u + gy * v + rng.normal(0.0, 0.02);
                }
            }
        }

        const int count = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
        std::vector<Placement> placed;
        for (int o = 0; o < count; ++o) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                const int sz = static_cast<int>(rng.uniform_int(spec.min_object_size, spec.max_object_size));
                const Placement p{static_cast<int>(rng.uniform_int(0, spec.image_size - sz)),
                                  static_cast<int>(rng.uniform_int(0, spec.image_size - sz)), sz};
                if (std::any_of(placed.begin(), placed.end(), [&](const Placement& q) { return overlaps(p, q); })) {
                    continue;
                }
                const double r = rng.uniform();
                int cls = 0;
                double acc = prior[0];
                while (cls + 1 < spec.num_classes && r >= acc) acc += prior[static_cast<std::size_t>(++cls)];
                std::array<double, 3> color = kArchetypes[cls].color;
                const double shade = rng.uniform(-0.08, 0.08);
                for (double& ch : color) ch = std::clamp(ch + shade, 0.0, 1.0);
                render(s.image, n, p, cls, color);
                placed.push_back(p);
                const double inv = 1.0 / static_cast<double>(spec.image_size);
                s.gt.boxes.push_back({p.x * inv, p.y * inv, (p.x + p.s) * inv, (p.y + p.s) * inv});
                s.gt.labels.push_back(cls);
                break;
            }
        }
        if (placed.empty()) throw std::runtime_error("generate_domain: could not place any object");
        clamp01(s.image);

        s.severity = spec.is_source() ? 0.0 : rng.uniform(1.0 - spec.severity_spread, 1.0 + spec.severity_spread);
        if (!spec.is_source()) apply_shift(s.image, spec, s.severity, derive_seed(seed, "shift-noise", i));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Tensor normalize(const Tensor& image) {
    const std::size_t n = side(image);
    Tensor out = image;
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t i = 0; i < n * n; ++i) {
            double& v = out.data[c * n * n + i];
            v = (v - kImageMean[c]) / kImageStd[c];
        }
    }
    return out;
}

Tensor denormalize(const Tensor& image) {
    const std::size_t n = side(image);
    Tensor out = image;
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t i = 0; i < n * n; ++i) {
            double& v = out.data[c * n * n + i];
            v = v * kImageStd[c] + kImageMean[c];
        }
    }
    return out;
}

Tensor flip_image(const Tensor& image) {
    const std::size_t n = side(image);
    Tensor out = image;
    for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) out.data[(c * n + y) * n + x] = image.data[(c * n + y) * n + (n - 1 - x)];
    return out;
}

GroundTruth flip_ground_truth(const GroundTruth& gt) {
    GroundTruth out = gt;
    for (Box& b : out.boxes) b = flip_horizontal(b);
    return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) h = (g - b) / d;
    else if (mx == g) h = 2.0 + (b - r) / d;
    else h = 4.0 + (r - g) / d;
    h /= 6.0;
    h -= std::floor(h);
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = 6.0 * (h - std::floor(h));
    const int sector = std::min(5, static_cast<int>(hh));
    const double f = hh - sector;
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

}  // namespace

Tensor color_jitter(const Tensor& image, const JitterFactors& f) {
    const std::size_t n = side(image);
    const std::size_t plane = n * n;
    Tensor out = image;
    auto gray_at = [&](std::size_t i) {
        return (out.data[i] + out.data[plane + i] + out.data[2 * plane + i]) / 3.0;
    };

    for (double& v : out.data) v *= f.brightness;
    clamp01(out);

    double m = 0.0;
    for (std::size_t i = 0; i < plane; ++i) m += gray_at(i);
    m /= static_cast<double>(plane);
    for (double& v : out.data) v = m + f.contrast * (v - m);
    clamp01(out);

    for (std::size_t i = 0; i < plane; ++i) {
        const double g = gray_at(i);
        for (std::size_t c = 0; c < kChannels; ++c) {
            double& v = out.data[c * plane + i];
            v = g + f.saturation * (v - g);
        }
    }
    clamp01(out);

    if (f.hue != 0.0) {
        for (std::size_t i = 0; i < plane; ++i) {
            double h, s, v;
            rgb_to_hsv(out.data[i], out.data[plane + i], out.data[2 * plane + i], h, s, v);
            hsv_to_rgb(h + f.hue, s, v, out.data[i], out.data[plane + i], out.data[2 * plane + i]);
        }
        clamp01(out);
    }
    return out;
}

Tensor grayscale(const Tensor& image) {
    const std::size_t n = side(image);
    const std::size_t plane = n * n;
    Tensor out = image;
    for (std::size_t i = 0; i < plane; ++i) {
        const double g = (image.data[i] + image.data[plane + i] + image.data[2 * plane + i]) / 3.0;
        for (std::size_t c = 0; c < kChannels; ++c) out.data[c * plane + i] = g;
    }
    return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
    const std::size_t n = side(image);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double z = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        z += kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    }
    for (double& k : kernel) k /= z;

    const auto ni = static_cast<int>(n);
    auto reflect = [ni](int i) {
        // reflect without repeating the edge sample: -1 -> 1, n -> n-2
        while (i < 0 || i >= ni) i = i < 0 ? -i : 2 * (ni - 1) - i;
        return i;
    };
    Tensor tmp = image, out = image;
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (int y = 0; y < ni; ++y) {
            for (int x = 0; x < ni; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           image.data[(c * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(reflect(x + k))];
                }
                tmp.data[(c * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(x)] = acc;
            }
        }
        for (int y = 0; y < ni; ++y) {
            for (int x = 0; x < ni; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           tmp.data[(c * n + static_cast<std::size_t>(reflect(y + k))) * n + static_cast<std::size_t>(x)];
                }
                out.data[(c * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(x)] = acc;
            }
        }
    }
    return out;
}

WeakView weak_augment(const Tensor& image, const AugmentPolicy& policy, std::uint64_t seed) {
    Rng rng(seed);
    WeakView view;
    view.flipped = rng.bernoulli(policy.flip_p);
    view.raw = view.flipped ? flip_image(image) : image;
    view.normalized = normalize(view.raw);
    return view;
}

Tensor strong_augment(const Tensor& weak_raw, const AugmentPolicy& policy, std::uint64_t seed) {
    Rng rng(seed);
    Tensor img = weak_raw;
    if (rng.bernoulli(policy.jitter_p)) {
        JitterFactors f;
        f.brightness = rng.uniform(std::max(0.0, 1.0 - policy.brightness), 1.0 + policy.brightness);
        f.contrast = rng.uniform(std::max(0.0, 1.0 - policy.contrast), 1.0 + policy.contrast);
        f.saturation = rng.uniform(std::max(0.0, 1.0 - policy.saturation), 1.0 + policy.saturation);
        f.hue = rng.uniform(-policy.hue, policy.hue);
        img = color_jitter(img, f);
    }
    if (rng.bernoulli(policy.grayscale_p)) img = grayscale(img);
    if (rng.bernoulli(policy.blur_p)) img = gaussian_blur(img, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
    return normalize(img);
}

}  // namespace titan
