#include "titan/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <string_view>
#include <variant>

#include "titan/io.hpp"
#include "titan/rng.hpp"

namespace titan {
namespace {

using json = nlohmann::ordered_json;

using Ref = std::variant<int& (*)(RunConfig&), std::uint64_t& (*)(RunConfig&), double& (*)(RunConfig&),
                         bool& (*)(RunConfig&), std::string& (*)(RunConfig&), std::vector<double>& (*)(RunConfig&)>;

struct Field {
    std::string_view key;
    Ref ref;
};

#define TITAN_FIELD(key, member) \
    Field { key, Ref{+[](RunConfig& c) -> auto& { return c.member; }} }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        TITAN_FIELD("seed", seed),
        TITAN_FIELD("out_dir", out_dir),

        TITAN_FIELD("image_size", detector.image_size),
        TITAN_FIELD("patch_size", detector.patch_size),
        TITAN_FIELD("hidden_dim", detector.hidden_dim),
        TITAN_FIELD("num_heads", detector.num_heads),
        TITAN_FIELD("ffn_dim", detector.ffn_dim),
        TITAN_FIELD("enc_layers", detector.enc_layers),
        TITAN_FIELD("dec_layers", detector.dec_layers),
        TITAN_FIELD("num_queries", detector.num_queries),
        TITAN_FIELD("num_classes", detector.num_classes),

        TITAN_FIELD("min_objects", target_shift.min_objects),
        TITAN_FIELD("max_objects", target_shift.max_objects),
        TITAN_FIELD("min_object_size", target_shift.min_object_size),
        TITAN_FIELD("max_object_size", target_shift.max_object_size),
        TITAN_FIELD("haze", target_shift.haze),
        TITAN_FIELD("contrast_loss", target_shift.contrast_loss),
        TITAN_FIELD("texture_noise", target_shift.texture_noise),
        TITAN_FIELD("class_skew", target_shift.class_skew),
        TITAN_FIELD("severity_spread", target_shift.severity_spread),
        TITAN_FIELD("airlight", target_shift.airlight),

        TITAN_FIELD("source_train_size", source_train_size),
        TITAN_FIELD("source_val_size", source_val_size),
        TITAN_FIELD("target_train_size", target_train_size),
        TITAN_FIELD("target_val_size", target_val_size),
        TITAN_FIELD("source_train", source_train_path),
        TITAN_FIELD("source_val", source_val_path),
        TITAN_FIELD("target_train", target_train_path),
        TITAN_FIELD("target_val", target_val_path),

        TITAN_FIELD("pretrain_epochs", pretrain.epochs),
        TITAN_FIELD("pretrain_batch_size", pretrain.batch_size),
        TITAN_FIELD("pretrain_lr", pretrain.adam.lr),
        TITAN_FIELD("pretrain_lr_drop_epoch", pretrain.lr_drop_epoch),
        TITAN_FIELD("pretrain_weight_decay", pretrain.adam.weight_decay),
        TITAN_FIELD("pretrain_clip_max_norm", pretrain.adam.clip_max_norm),
        TITAN_FIELD("pretrain_dropout_p", pretrain.dropout_p),
        TITAN_FIELD("pretrain_flip_p", pretrain.flip_p),

        TITAN_FIELD("ema_alpha", adapt.ema_alpha),
        TITAN_FIELD("lambda_enc", adapt.lambda_enc),
        TITAN_FIELD("lambda_dec", adapt.lambda_dec),
        TITAN_FIELD("lambda_enc_q", adapt.query_weights.enc_q),
        TITAN_FIELD("lambda_dec_q", adapt.query_weights.dec_q),
        TITAN_FIELD("lambda_grl", adapt.lambda_grl),
        TITAN_FIELD("sigma", adapt.sigma),
        TITAN_FIELD("mc_passes", adapt.mc_passes),
        TITAN_FIELD("mc_dropout_p", adapt.mc_dropout),
        TITAN_FIELD("use_partition", adapt.use_partition),
        TITAN_FIELD("pseudo_th", adapt.pseudo_th),
        TITAN_FIELD("topk_pseudo", adapt.topk_pseudo),
        TITAN_FIELD("nms_iou", adapt.nms_iou),
        TITAN_FIELD("use_dynamic_th", adapt.use_dynamic_th),
        TITAN_FIELD("lr", adapt.adam.lr),
        TITAN_FIELD("weight_decay", adapt.adam.weight_decay),
        TITAN_FIELD("clip_max_norm", adapt.adam.clip_max_norm),
        TITAN_FIELD("disc_lr", adapt.disc_adam.lr),
        TITAN_FIELD("disc_weight_decay", adapt.disc_adam.weight_decay),
        TITAN_FIELD("disc_hidden_dim", adapt.disc.hidden_dim),
        TITAN_FIELD("batch_size", adapt.batch_size),
        TITAN_FIELD("epochs", adapt.epochs),
        TITAN_FIELD("dropout_p", adapt.dropout_p),
        TITAN_FIELD("use_domain_query", adapt.use_domain_query),
        TITAN_FIELD("eval_model", adapt.eval_model),

        TITAN_FIELD("flip_p", adapt.augment.flip_p),
        TITAN_FIELD("jitter_p", adapt.augment.jitter_p),
        TITAN_FIELD("brightness", adapt.augment.brightness),
        TITAN_FIELD("contrast", adapt.augment.contrast),
        TITAN_FIELD("saturation", adapt.augment.saturation),
        TITAN_FIELD("hue", adapt.augment.hue),
        TITAN_FIELD("grayscale_p", adapt.augment.grayscale_p),
        TITAN_FIELD("blur_p", adapt.augment.blur_p),
        TITAN_FIELD("blur_sigma_min", adapt.augment.blur_sigma_min),
        TITAN_FIELD("blur_sigma_max", adapt.augment.blur_sigma_max),

        TITAN_FIELD("cls_loss_coef", adapt.loss.cls),
        TITAN_FIELD("bbox_loss_coef", adapt.loss.bbox),
        TITAN_FIELD("giou_loss_coef", adapt.loss.giou),
        TITAN_FIELD("focal_alpha", adapt.loss.focal_alpha),
        TITAN_FIELD("focal_gamma", adapt.loss.focal_gamma),
        TITAN_FIELD("set_cost_class", adapt.match.cls),
        TITAN_FIELD("set_cost_bbox", adapt.match.bbox),
        TITAN_FIELD("set_cost_giou", adapt.match.giou),

        TITAN_FIELD("checkpoint", checkpoint),
        TITAN_FIELD("eval_split", eval_split),
        TITAN_FIELD("eval_group", eval_group),
        TITAN_FIELD("fpi_points", fpi_points),
        TITAN_FIELD("epsilon", epsilon),
        TITAN_FIELD("data_norm", data_norm),
    };
    return table;
}

#undef TITAN_FIELD

const Field& find_field(const std::string& key) {
    for (const Field& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

// Fields stored in more than one place follow their primary copy.
void sync(RunConfig& c) {
    DomainShiftSpec& t = c.target_shift;
    t.image_size = c.detector.image_size;
    t.num_classes = c.detector.num_classes;
    DomainShiftSpec& s = c.source_shift;
    s.image_size = t.image_size;
    s.num_classes = t.num_classes;
    s.min_objects = t.min_objects;
    s.max_objects = t.max_objects;
    s.min_object_size = t.min_object_size;
    s.max_object_size = t.max_object_size;
    s.class_skew = t.class_skew;
    s.airlight = t.airlight;

    c.adapt.disc.input_dim = c.detector.hidden_dim;
    c.adapt.disc.enc_layers = c.detector.enc_layers;
    c.adapt.disc.dec_layers = c.detector.dec_layers;
    c.adapt.match.focal_alpha = c.adapt.loss.focal_alpha;
    c.adapt.match.focal_gamma = c.adapt.loss.focal_gamma;
    c.pretrain.loss = c.adapt.loss;
    c.pretrain.match = c.adapt.match;
    c.pretrain.domain_query = c.adapt.use_domain_query;
    c.adapt.eval.fpi_points = c.fpi_points;
}

std::string type_error(std::string_view key, const char* want) {
    return "config key '" + std::string(key) + "' expects " + want;
}

void set_from_json(RunConfig& cfg, const Field& f, const json& v) {
    std::visit(
        [&]<class R>(R ref) {
            auto& slot = ref(cfg);
            using T = std::remove_reference_t<decltype(slot)>;
            if constexpr (std::is_same_v<T, int>) {
                if (!v.is_number_integer()) throw ConfigError(type_error(f.key, "an integer"));
                const auto x = v.get<std::int64_t>();
                if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
                    throw ConfigError(type_error(f.key, "an integer in int range"));
                }
                slot = static_cast<int>(x);
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_unsigned()) throw ConfigError(type_error(f.key, "a non-negative integer"));
                slot = v.get<std::uint64_t>();
            } else if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(type_error(f.key, "a number"));
                slot = v.get<double>();
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(type_error(f.key, "true or false"));
                slot = v.get<bool>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(type_error(f.key, "a string"));
                slot = v.get<std::string>();
            } else {
                if (!v.is_array()) throw ConfigError(type_error(f.key, "an array of numbers"));
                std::vector<double> out;
                for (const json& e : v) {
                    if (!e.is_number()) throw ConfigError(type_error(f.key, "an array of numbers"));
                    out.push_back(e.get<double>());
                }
                slot = std::move(out);
            }
        },
        f.ref);
}

template <class T>
T parse_number(const std::string& key, const std::string& text, const char* want) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc() || ptr != end) throw ConfigError(type_error(key, want) + ", got '" + text + "'");
    return value;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
    if (!text.empty() && text.front() == '[') {
        RunConfig scratch;
        set_from_json(scratch, find_field(key), parse_json_text(text, "--" + key));
        return scratch.fpi_points;
    }
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        out.push_back(parse_number<double>(key, text.substr(start, comma - start), "comma-separated numbers"));
        start = comma + 1;
    }
    return out;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

RunConfig::RunConfig() {
    // Calibrated default shift: haze dominated, two objects per image, wide
    // per-image severity so that the target has easy and hard halves.
    target_shift.min_objects = 2;
    target_shift.max_objects = 2;
    target_shift.haze = 0.35;
    target_shift.texture_noise = 0.02;
    target_shift.severity_spread = 1.0;
    pretrain.epochs = 20;
    pretrain.lr_drop_epoch = 14;
    adapt.epochs = 80;
    sync(*this);
}

void RunConfig::validate() const {
    auto wrap = [](auto&& check) {
        try {
            check();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    };
    wrap([&] { detector.validate(); });
    wrap([&] { source_shift.validate(); });
    wrap([&] { target_shift.validate(); });
    wrap([&] { adapt.validate(); });
    require(source_train_size >= 1 && source_val_size >= 1 && target_train_size >= 1 && target_val_size >= 1,
            "dataset sizes must be at least 1");
    require(pretrain.epochs >= 0, "pretrain_epochs must be non-negative");
    require(pretrain.batch_size >= 1, "pretrain_batch_size must be at least 1");
    require(pretrain.adam.lr > 0.0, "pretrain_lr must be positive");
    require(pretrain.lr_drop_epoch >= 0, "pretrain_lr_drop_epoch must be non-negative");
    require(pretrain.adam.weight_decay >= 0.0 && pretrain.adam.clip_max_norm >= 0.0,
            "pretrain_weight_decay and pretrain_clip_max_norm must be non-negative");
    require(pretrain.dropout_p >= 0.0 && pretrain.dropout_p < 1.0, "pretrain_dropout_p must lie in [0, 1)");
    require(pretrain.flip_p >= 0.0 && pretrain.flip_p <= 1.0, "pretrain_flip_p must lie in [0, 1]");
    require(adapt.disc.hidden_dim >= 1, "disc_hidden_dim must be at least 1");
    require(eval_split == "source_train" || eval_split == "source_val" || eval_split == "target_train" ||
                eval_split == "target_val",
            "eval_split must be one of source_train, source_val, target_train, target_val");
    require(!eval_group.empty(), "eval_group must not be empty");
    require(!fpi_points.empty(), "fpi_points must not be empty");
    for (std::size_t i = 0; i < fpi_points.size(); ++i) {
        require(fpi_points[i] > 0.0 && std::isfinite(fpi_points[i]), "fpi_points must be positive");
        require(i == 0 || fpi_points[i] > fpi_points[i - 1], "fpi_points must be strictly increasing");
    }
    require(epsilon > 0.0 && std::isfinite(epsilon), "epsilon must be positive");
    require(data_norm > 0.0 && std::isfinite(data_norm), "data_norm must be positive");
    require(!out_dir.empty(), "out_dir must not be empty");
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }
std::uint64_t RunConfig::pretrain_seed() const { return derive_seed(seed, "pretrain"); }
std::uint64_t RunConfig::adapt_seed() const { return derive_seed(seed, "adapt"); }
std::uint64_t RunConfig::data_seed(const std::string& split) const { return derive_seed(seed, "data/" + split); }

json config_to_json(const RunConfig& cfg) {
    RunConfig& c = const_cast<RunConfig&>(cfg);
    json j = json::object();
    for (const Field& f : fields()) {
        std::visit([&](auto ref) { j[std::string(f.key)] = ref(c); }, f.ref);
    }
    return j;
}

void apply_config_json(RunConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) set_from_json(cfg, find_field(key), value);
    sync(cfg);
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = find_field(key);
    std::visit(
        [&]<class R>(R ref) {
            auto& slot = ref(cfg);
            using T = std::remove_reference_t<decltype(slot)>;
            if constexpr (std::is_same_v<T, int>) {
                slot = parse_number<int>(key, value, "an integer");
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                slot = parse_number<std::uint64_t>(key, value, "a non-negative integer");
            } else if constexpr (std::is_same_v<T, double>) {
                slot = parse_number<double>(key, value, "a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true" || value == "1" || value == "yes" || value == "on") {
                    slot = true;
                } else if (value == "false" || value == "0" || value == "no" || value == "off") {
                    slot = false;
                } else {
                    throw ConfigError(type_error(key, "true or false") + ", got '" + value + "'");
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                slot = value;
            } else {
                slot = parse_list(key, value);
            }
        },
        f.ref);
    sync(cfg);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const Field& f : fields()) keys.emplace_back(f.key);
    return keys;
}

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // e.byte is the 1-based offset of the offending character.
        const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        std::size_t line = 1, column = 1;
        for (std::size_t i = 0; i < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        std::string detail = e.what();
        if (const auto colon = detail.find(": "); colon != std::string::npos) detail = detail.substr(colon + 2);
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + detail);
    }
}

RunConfig resolve_config(const ConfigSources& src) {
    RunConfig cfg;
    if (!src.config_file.empty() && !src.manifest_file.empty()) {
        throw ConfigError("--config and --manifest are mutually exclusive");
    }
    if (!src.config_file.empty()) {
        apply_config_json(cfg, parse_json_text(read_text(src.config_file), src.config_file.string()));
    }
    if (!src.manifest_file.empty()) {
        const json manifest = parse_json_text(read_text(src.manifest_file), src.manifest_file.string());
        if (!manifest.is_object() || !manifest.contains("config")) {
            throw ConfigError(src.manifest_file.string() + ": manifest has no \"config\" object");
        }
        apply_config_json(cfg, manifest.at("config"));
    }
    if (src.env_seed != nullptr && *src.env_seed != '\0') {
        cfg.seed = parse_number<std::uint64_t>("TITAN_SEED", src.env_seed, "a non-negative integer");
    }
    for (const auto& [key, value] : src.overrides) apply_override(cfg, key, value);
    cfg.validate();
    return cfg;
}

}  // namespace titan
