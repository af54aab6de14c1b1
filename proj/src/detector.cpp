#include "titan/detector.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan {

using ad::Tape;
using ad::Var;

void DetectorConfig::validate() const {
    auto positive = [](int v, const char* what) {
        if (v <= 0) throw std::invalid_argument(std::string("detector config: ") + what + " must be positive");
    };
    positive(image_size, "image_size");
    positive(channels, "channels");
    positive(patch_size, "patch_size");
    positive(hidden_dim, "hidden_dim");
    positive(num_heads, "num_heads");
    positive(ffn_dim, "ffn_dim");
    positive(enc_layers, "enc_layers");
    positive(dec_layers, "dec_layers");
    positive(num_queries, "num_queries");
    positive(num_classes, "num_classes");
    if (image_size % patch_size != 0) throw std::invalid_argument("detector config: patch_size must divide image_size");
    if (hidden_dim % num_heads != 0) throw std::invalid_argument("detector config: num_heads must divide hidden_dim");
}

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (double& v : t.data) v = rng.uniform(-a, a);
    return t;
}

Tensor normal_matrix(std::size_t r, std::size_t c, double stddev, Rng& rng) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.data) v = rng.normal(0.0, stddev);
    return t;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void add_linear(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    ps.add(prefix + ".w", xavier(in, out, rng));
    ps.add(prefix + ".b", Tensor::matrix(1, out, 0.0));
}

void add_norm(ParamSet& ps, const std::string& prefix, std::size_t width) {
    ps.add(prefix + ".g", Tensor::matrix(1, width, 1.0));
    ps.add(prefix + ".b", Tensor::matrix(1, width, 0.0));
}

void add_attention(ParamSet& ps, const std::string& prefix, std::size_t width, Rng& rng) {
    for (const char* proj : {"q", "k", "v", "o"}) add_linear(ps, prefix + "." + proj, width, width, rng);
}

// 2-D sinusoidal code of a point (u, v) in [0, 1]^2.
void point_code(Tensor& t, std::size_t row, double u, double v) {
    const int quarter = static_cast<int>(t.cols()) / 4;
    for (int k = 0; k < quarter; ++k) {
        const double freq = std::pow(20.0, -static_cast<double>(k) / std::max(1, quarter));
        const double ax = 2.0 * std::numbers::pi * u * freq;
        const double ay = 2.0 * std::numbers::pi * v * freq;
        t(row, static_cast<std::size_t>(4 * k + 0)) = std::sin(ax);
        t(row, static_cast<std::size_t>(4 * k + 1)) = std::cos(ax);
        t(row, static_cast<std::size_t>(4 * k + 2)) = std::sin(ay);
        t(row, static_cast<std::size_t>(4 * k + 3)) = std::cos(ay);
    }
}

// Row 0 is reserved for the domain query.
Tensor grid_position_embedding(int grid, int width) {
    Tensor t = Tensor::matrix(static_cast<std::size_t>(grid * grid + 1), static_cast<std::size_t>(width), 0.0);
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
            point_code(t, static_cast<std::size_t>(gy * grid + gx + 1), (gx + 0.5) / grid, (gy + 0.5) / grid);
    return t;
}

// Anchor centers of the object queries, laid out on a near-square grid.
std::vector<std::pair<double, double>> anchor_centers(std::size_t m) {
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
    const std::size_t rows = (m + cols - 1) / cols;
    std::vector<std::pair<double, double>> out;
    for (std::size_t q = 0; q < m; ++q) {
        out.emplace_back((static_cast<double>(q % cols) + 0.5) / static_cast<double>(cols),
                         (static_cast<double>(q / cols) + 0.5) / static_cast<double>(rows));
    }
    return out;
}

Var layer_norm(ParamBinding& p, const std::string& prefix, const Var& x) {
    return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(x), p[prefix + ".g"]), p[prefix + ".b"]);
}

Var dense(ParamBinding& p, const std::string& prefix, const Var& x) {
    return ad::linear(x, p[prefix + ".w"], p[prefix + ".b"]);
}

Var attention(ParamBinding& p, const std::string& prefix, const Var& xq, const Var& xk, const Var& xv, int heads) {
    const Var q = dense(p, prefix + ".q", xq);
    const Var k = dense(p, prefix + ".k", xk);
    const Var v = dense(p, prefix + ".v", xv);
    const std::size_t width = q.cols();
    const std::size_t dh = width / static_cast<std::size_t>(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
        const Var qh = ad::slice_cols(q, h * dh, dh);
        const Var kh = ad::slice_cols(k, h * dh, dh);
        const Var vh = ad::slice_cols(v, h * dh, dh);
        const Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(ad::matmul(weights, vh));
    }
    const Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
    return dense(p, prefix + ".o", merged);
}

Var feed_forward(ParamBinding& p, const std::string& prefix, const Var& x, DropoutStream& dropout) {
    const Var hidden = dropout.apply(ad::relu(dense(p, prefix + ".fc1", x)));
    return dense(p, prefix + ".fc2", hidden);
}

}  // namespace

ParamSet init_detector_params(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "detector-init"));
    const auto c = static_cast<std::size_t>(cfg.hidden_dim);
    const auto n = static_cast<std::size_t>(cfg.num_tokens());
    const auto m = static_cast<std::size_t>(cfg.num_queries);
    const auto k = static_cast<std::size_t>(cfg.num_classes);
    const auto f = static_cast<std::size_t>(cfg.ffn_dim);

    ParamSet ps;
    add_linear(ps, "backbone.proj", static_cast<std::size_t>(cfg.patch_dim()), c, rng);

    Tensor pos = grid_position_embedding(cfg.grid(), cfg.hidden_dim);
    for (std::size_t j = 0; j < c; ++j) pos(0, j) = rng.normal(0.0, 0.1);
    ps.add("enc.pos", std::move(pos));
    {
        Tensor level = Tensor::matrix(n + 1, c);
        const Tensor row = normal_matrix(1, c, 0.02, rng);
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j < c; ++j) level(i, j) = row(0, j);
        ps.add("enc.level", std::move(level));
    }
    ps.add("enc.domain_query", normal_matrix(1, c, 0.1, rng));
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        add_norm(ps, pre + ".ln1", c);
        add_attention(ps, pre + ".attn", c, rng);
        add_norm(ps, pre + ".ln2", c);
        add_linear(ps, pre + ".ffn.fc1", c, f, rng);
        add_linear(ps, pre + ".ffn.fc2", f, c, rng);
    }
    add_norm(ps, "enc.norm", c);

    ps.add("dec.queries", normal_matrix(m, c, 1.0, rng));
    const auto anchors = anchor_centers(m);
    {
        Tensor qpos = normal_matrix(m + 1, c, 0.1, rng);
        for (std::size_t q = 0; q < m; ++q) point_code(qpos, q + 1, anchors[q].first, anchors[q].second);
        ps.add("dec.pos", std::move(qpos));
    }
    ps.add("dec.domain_query", normal_matrix(1, c, 0.1, rng));
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        add_norm(ps, pre + ".ln1", c);
        add_attention(ps, pre + ".self_attn", c, rng);
        add_norm(ps, pre + ".ln2", c);
        add_attention(ps, pre + ".cross_attn", c, rng);
        add_norm(ps, pre + ".ln3", c);
        add_linear(ps, pre + ".ffn.fc1", c, f, rng);
        add_linear(ps, pre + ".ffn.fc2", f, c, rng);
    }
    add_norm(ps, "dec.norm", c);

    add_linear(ps, "head.box.fc1", c, c, rng);
    add_linear(ps, "head.box.fc2", c, 4, rng);
    for (double& v : ps.get("head.box.fc2.w").data) v *= 0.1;
    {
        // Anchors (cx, cy, w, h) in logit space.
        Tensor ref = Tensor::matrix(m, 4);
        for (std::size_t q = 0; q < m; ++q) {
            ref(q, 0) = logit(anchors[q].first);
            ref(q, 1) = logit(anchors[q].second);
            ref(q, 2) = logit(0.25);
            ref(q, 3) = logit(0.25);
        }
        ps.add("head.box.ref", std::move(ref));
    }
    add_linear(ps, "head.cls", c, k, rng);
    for (double& v : ps.get("head.cls.b").data) v = -std::log((1.0 - 0.01) / 0.01);
    return ps;
}

Var DropoutStream::apply(const Var& x) {
    if (!train_ || p_ == 0.0) return x;
    return ad::dropout(x, p_, true, derive_seed(seed_, "dropout-site", counter_++));
}

Var patchify(Tape& tape, const Tensor& image, const DetectorConfig& cfg) {
    const auto ch = static_cast<std::size_t>(cfg.channels);
    const auto size = static_cast<std::size_t>(cfg.image_size);
    if (image.shape != ad::Shape{ch, size, size}) {
        throw std::invalid_argument("patchify: expected image of shape " + ad::shape_string({ch, size, size}) +
                                    ", got " + ad::shape_string(image.shape));
    }
    const auto ps = static_cast<std::size_t>(cfg.patch_size);
    const auto grid = static_cast<std::size_t>(cfg.grid());
    Tensor patches = Tensor::matrix(grid * grid, static_cast<std::size_t>(cfg.patch_dim()));
    for (std::size_t gy = 0; gy < grid; ++gy) {
        for (std::size_t gx = 0; gx < grid; ++gx) {
            const std::size_t row = gy * grid + gx;
            std::size_t col = 0;
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t dy = 0; dy < ps; ++dy)
                    for (std::size_t dx = 0; dx < ps; ++dx)
                        patches(row, col++) = image.data[(c * size + gy * ps + dy) * size + gx * ps + dx];
        }
    }
    return tape.constant(std::move(patches));
}

Var embed_patches(const DetectorConfig& cfg, ParamBinding& params, const Var& patches) {
    if (patches.cols() != static_cast<std::size_t>(cfg.patch_dim())) {
        throw std::invalid_argument("embed_patches: patch width mismatch");
    }
    return dense(params, "backbone.proj", patches);
}

EncoderOutput encode(const DetectorConfig& cfg, ParamBinding& params, const Var& tokens, bool domain_query,
                     DropoutStream& dropout) {
    const auto n = static_cast<std::size_t>(cfg.num_tokens());
    const auto c = static_cast<std::size_t>(cfg.hidden_dim);
    if (tokens.value().rank() != 2 || tokens.cols() != c) {
        throw std::invalid_argument("encode: token width " + std::to_string(tokens.cols()) + " does not match " +
                                    std::to_string(c));
    }
    if (tokens.rows() != n) throw std::invalid_argument("encode: expected " + std::to_string(n) + " tokens");

    const Var pos = params["enc.pos"];
    const Var level = params["enc.level"];
    Var z0;
    if (domain_query) {
        const Var seq[] = {params["enc.domain_query"], tokens};
        z0 = ad::add(ad::add(ad::concat_rows(seq), pos), level);
    } else {
        z0 = ad::add(ad::add(tokens, ad::slice_rows(pos, 1, n)), ad::slice_rows(level, 1, n));
    }

    EncoderOutput out;
    out.has_domain_query = domain_query;
    out.states.push_back(z0);
    Var x = z0;
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        const Var h1 = layer_norm(params, pre + ".ln1", x);
        x = ad::add(x, attention(params, pre + ".attn", h1, h1, h1, cfg.num_heads));
        const Var h2 = layer_norm(params, pre + ".ln2", x);
        x = ad::add(x, feed_forward(params, pre + ".ffn", h2, dropout));
        out.states.push_back(x);
    }
    return out;
}

DecoderOutput decode(const DetectorConfig& cfg, ParamBinding& params, const EncoderOutput& encoder,
                     bool domain_query, DropoutStream& dropout) {
    if (encoder.states.empty()) throw std::invalid_argument("decode: encoder produced no states");
    const auto n = static_cast<std::size_t>(cfg.num_tokens());
    const auto m = static_cast<std::size_t>(cfg.num_queries);
    const Var last = encoder.states.back();
    if (last.cols() != static_cast<std::size_t>(cfg.hidden_dim)) throw std::invalid_argument("decode: width mismatch");

    // Cross-attention reads the image tokens only, never the encoder domain query.
    const Var enc_tokens = encoder.has_domain_query ? ad::slice_rows(last, 1, n) : last;
    const Var memory = layer_norm(params, "enc.norm", enc_tokens);
    const Var memory_keys = ad::add(memory, ad::slice_rows(params["enc.pos"], 1, n));

    const Var queries = params["dec.queries"];
    const Var pos = domain_query ? params["dec.pos"] : ad::slice_rows(params["dec.pos"], 1, m);
    Var q0;
    if (domain_query) {
        const Var seq[] = {params["dec.domain_query"], queries};
        q0 = ad::add(ad::concat_rows(seq), pos);
    } else {
        q0 = ad::add(queries, pos);
    }

    DecoderOutput out;
    out.has_domain_query = domain_query;
    out.states.push_back(q0);
    Var x = q0;
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        const Var h1 = layer_norm(params, pre + ".ln1", x);
        const Var h1p = ad::add(h1, pos);
        x = ad::add(x, attention(params, pre + ".self_attn", h1p, h1p, h1, cfg.num_heads));
        const Var h2 = layer_norm(params, pre + ".ln2", x);
        x = ad::add(x, attention(params, pre + ".cross_attn", ad::add(h2, pos), memory_keys, memory, cfg.num_heads));
        const Var h3 = layer_norm(params, pre + ".ln3", x);
        x = ad::add(x, feed_forward(params, pre + ".ffn", h3, dropout));
        out.states.push_back(x);
    }

    const Var slots = domain_query ? ad::slice_rows(x, 1, m) : x;
    const Var feat = layer_norm(params, "dec.norm", slots);
    const Var hidden = dropout.apply(ad::relu(dense(params, "head.box.fc1", feat)));
    const Var cxcywh = ad::sigmoid(ad::add(dense(params, "head.box.fc2", hidden), params["head.box.ref"]));
    const Var cx = ad::slice_cols(cxcywh, 0, 1);
    const Var cy = ad::slice_cols(cxcywh, 1, 1);
    const Var hw = ad::scale(ad::slice_cols(cxcywh, 2, 1), 0.5);
    const Var hh = ad::scale(ad::slice_cols(cxcywh, 3, 1), 0.5);
    const Var corners[] = {ad::sub(cx, hw), ad::sub(cy, hh), ad::add(cx, hw), ad::add(cy, hh)};
    out.boxes = ad::concat_cols(corners);
    out.logits = dense(params, "head.cls", feat);
    return out;
}

ForwardResult forward(const DetectorConfig& cfg, ParamBinding& params, const Tensor& image,
                      const ForwardOptions& opts) {
    DropoutStream dropout(opts.dropout_p, opts.train, opts.seed);
    const Var patches = patchify(params.tape(), image, cfg);
    const Var tokens = embed_patches(cfg, params, patches);
    ForwardResult r;
    r.encoder = encode(cfg, params, tokens, opts.domain_query, dropout);
    r.decoder = decode(cfg, params, r.encoder, opts.domain_query, dropout);
    return r;
}

DetectionSet to_detections(const DecoderOutput& out) {
    const Tensor& boxes = out.boxes.value();
    const Tensor& logits = out.logits.value();
    DetectionSet det;
    const std::size_t m = boxes.rows();
    const std::size_t k = logits.cols();
    det.boxes.reserve(m);
    det.scores.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        det.boxes.push_back({boxes(j, 0), boxes(j, 1), boxes(j, 2), boxes(j, 3)});
        std::vector<double> row(k);
        for (std::size_t c = 0; c < k; ++c) {
            const double x = logits(j, c);
            row[c] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }
        det.scores.push_back(std::move(row));
    }
    return det;
}

DetectionSet detect(const DetectorConfig& cfg, const ParamSet& params, const Tensor& image,
                    const ForwardOptions& opts) {
    Tape tape;
    ParamBinding binding(tape, params, false);
    return to_detections(forward(cfg, binding, image, opts).decoder);
}

}  // namespace titan
