#include "titan/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "titan/errors.hpp"
#include "titan/rng.hpp"

namespace titan {

namespace fs = std::filesystem;

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'I', 'T', 'A', 'N', 'C', 'K', 'P'};
constexpr char kDatasetMagic[8] = {'T', 'I', 'T', 'A', 'N', 'D', 'S', '1'};

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <class U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw InputError(what_ + ": file is truncated");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(what + ": malformed JSON header (" + e.what() + ")");
    }
}

json shape_json(const ad::Shape& s) {
    json a = json::array();
    for (std::size_t e : s) a.push_back(e);
    return a;
}

std::string serialize_dataset(const Dataset& ds) {
    json header;
    header["format"] = "titan-dataset";
    header["spec"] = to_json(ds.spec);
    header["n"] = ds.size();
    header["seed"] = ds.seed;
    header["channels"] = 3;
    header["height"] = ds.spec.image_size;
    header["width"] = ds.spec.image_size;
    json severities = json::array();
    for (const Sample& s : ds.samples) severities.push_back(s.severity);
    header["severity"] = std::move(severities);
    const std::string h = header.dump();

    std::string out(kDatasetMagic, sizeof(kDatasetMagic));
    put_le<std::uint64_t>(out, h.size());
    out += h;
    for (const Sample& s : ds.samples) {
        for (double v : s.image.data) put_f64(out, v);
        const std::string gt = to_json(s.gt).dump();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(gt.size()));
        out += gt;
    }
    return out;
}

std::string read_bytes(const fs::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(what + ": cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for " + path.string());
}

std::uint64_t fnv_bytes(const std::string& bytes) { return fnv1a(bytes); }

}  // namespace

// ---------------------------------------------------------------------------

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, _] : groups)
        if (n == name) return true;
    return false;
}

const ParamSet& Checkpoint::group(const std::string& name) const {
    for (const auto& [n, ps] : groups)
        if (n == name) return ps;
    throw InputError("checkpoint has no '" + name + "' parameters");
}

void Checkpoint::set(const std::string& name, ParamSet params) {
    for (auto& [n, ps] : groups) {
        if (n == name) {
            ps = std::move(params);
            return;
        }
    }
    groups.emplace_back(name, std::move(params));
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    json header;
    header["format"] = "titan-checkpoint";
    header["meta"] = ckpt.meta;
    json tensors = json::array();
    std::string payload;
    std::uint64_t offset = 0;
    for (const auto& [group, ps] : ckpt.groups) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const Tensor& t = ps.at(i);
            tensors.push_back({{"name", group + "/" + ps.name(i)},
                               {"shape", shape_json(t.shape)},
                               {"offset", offset},
                               {"count", t.size()}});
            for (double v : t.data) put_f64(payload, v);
            offset += t.size();
        }
    }
    header["tensors"] = std::move(tensors);
    const std::string h = header.dump();

    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, h.size());
    out += h;
    out += payload;
    write_bytes(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string what = "checkpoint " + path.string();
    const std::string bytes = read_bytes(path, what);
    Reader r(bytes, what);
    if (r.take(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
        throw InputError(what + ": not a checkpoint (bad magic)");
    }
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) throw InputError(what + ": unsupported version " + std::to_string(version));
    const auto hlen = r.le<std::uint64_t>();
    if (hlen > r.remaining()) throw InputError(what + ": file is truncated");
    const json header = parse_json(r.take(static_cast<std::size_t>(hlen)), what);
    const std::size_t base = r.pos();

    Checkpoint ckpt;
    try {
        if (header.at("format") != "titan-checkpoint") throw InputError(what + ": unexpected format tag");
        ckpt.meta = header.at("meta");
        for (const json& t : header.at("tensors")) {
            const std::string full = t.at("name").get<std::string>();
            const std::size_t slash = full.find('/');
            if (slash == std::string::npos) throw InputError(what + ": tensor name without group: " + full);
            ad::Shape shape = t.at("shape").get<ad::Shape>();
            const auto offset = t.at("offset").get<std::uint64_t>();
            const auto count = t.at("count").get<std::uint64_t>();
            if (ad::shape_size(shape) != count) throw InputError(what + ": shape/count mismatch for " + full);
            if (offset > (bytes.size() - base) / 8 || count > (bytes.size() - base) / 8 - offset) {
                throw InputError(what + ": payload is truncated");
            }
            std::vector<double> values(static_cast<std::size_t>(count));
            for (std::size_t k = 0; k < values.size(); ++k) {
                std::uint64_t bits = 0;
                const std::size_t at = base + static_cast<std::size_t>((offset + k) * 8);
                for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + b])) << (8 * b);
                values[k] = std::bit_cast<double>(bits);
            }
            const std::string group = full.substr(0, slash);
            if (!ckpt.has(group)) ckpt.groups.emplace_back(group, ParamSet{});
            for (auto& [n, ps] : ckpt.groups)
                if (n == group) ps.add(full.substr(slash + 1), Tensor(std::move(shape), std::move(values)));
        }
    } catch (const json::exception& e) {
        throw InputError(what + ": malformed header (" + e.what() + ")");
    } catch (const std::invalid_argument& e) {
        throw InputError(what + ": " + e.what());
    }
    return ckpt;
}

// ---------------------------------------------------------------------------

json to_json(const DetectorConfig& c) {
    return {{"image_size", c.image_size}, {"channels", c.channels},     {"patch_size", c.patch_size},
            {"hidden_dim", c.hidden_dim}, {"num_heads", c.num_heads},   {"ffn_dim", c.ffn_dim},
            {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"num_queries", c.num_queries},
            {"num_classes", c.num_classes}};
}

DetectorConfig detector_config_from_json(const json& j) {
    DetectorConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.channels = j.at("channels").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.num_queries = j.at("num_queries").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    return c;
}

json to_json(const DomainShiftSpec& s) {
    return {{"image_size", s.image_size},
            {"min_objects", s.min_objects},
            {"max_objects", s.max_objects},
            {"min_object_size", s.min_object_size},
            {"max_object_size", s.max_object_size},
            {"num_classes", s.num_classes},
            {"haze", s.haze},
            {"contrast_loss", s.contrast_loss},
            {"texture_noise", s.texture_noise},
            {"class_skew", s.class_skew},
            {"severity_spread", s.severity_spread},
            {"airlight", s.airlight}};
}

DomainShiftSpec shift_spec_from_json(const json& j) {
    DomainShiftSpec s;
    s.image_size = j.at("image_size").get<int>();
    s.min_objects = j.at("min_objects").get<int>();
    s.max_objects = j.at("max_objects").get<int>();
    s.min_object_size = j.at("min_object_size").get<int>();
    s.max_object_size = j.at("max_object_size").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.haze = j.at("haze").get<double>();
    s.contrast_loss = j.at("contrast_loss").get<double>();
    s.texture_noise = j.at("texture_noise").get<double>();
    s.class_skew = j.at("class_skew").get<double>();
    s.severity_spread = j.at("severity_spread").get<double>();
    s.airlight = j.at("airlight").get<double>();
    return s;
}

json to_json(const GroundTruth& gt) {
    json boxes = json::array();
    for (const Box& b : gt.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    return {{"boxes", std::move(boxes)}, {"labels", gt.labels}};
}

GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth gt;
    for (const json& b : j.at("boxes")) {
        if (b.size() != 4) throw InputError("ground truth box must have four coordinates");
        gt.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
    }
    gt.labels = j.at("labels").get<std::vector<int>>();
    if (gt.labels.size() != gt.boxes.size()) throw InputError("ground truth box/label counts differ");
    return gt;
}

// ---------------------------------------------------------------------------

void save_dataset(const fs::path& path, const Dataset& ds) { write_bytes(path, serialize_dataset(ds)); }

std::uint64_t dataset_hash(const Dataset& ds) { return fnv_bytes(serialize_dataset(ds)); }

Dataset load_dataset(const fs::path& path) {
    const std::string what = "dataset " + path.string();
    const std::string bytes = read_bytes(path, what);
    Reader r(bytes, what);
    if (r.take(sizeof(kDatasetMagic)) != std::string(kDatasetMagic, sizeof(kDatasetMagic))) {
        throw InputError(what + ": not a dataset (bad magic)");
    }
    const auto hlen = r.le<std::uint64_t>();
    if (hlen > r.remaining()) throw InputError(what + ": file is truncated");
    const json header = parse_json(r.take(static_cast<std::size_t>(hlen)), what);
    Dataset ds;
    try {
        if (header.at("format") != "titan-dataset") throw InputError(what + ": unexpected format tag");
        ds.spec = shift_spec_from_json(header.at("spec"));
        ds.seed = header.at("seed").get<std::uint64_t>();
        const auto n = header.at("n").get<std::size_t>();
        const auto side = static_cast<std::size_t>(ds.spec.image_size);
        if (header.at("height").get<std::size_t>() != side || header.at("width").get<std::size_t>() != side) {
            throw InputError(what + ": image extents disagree with the spec");
        }
        const auto& sev = header.at("severity");
        if (sev.size() != n) throw InputError(what + ": severity list length differs from n");
        for (std::size_t i = 0; i < n; ++i) {
            Sample s;
            s.image = Tensor({3, side, side});
            for (double& v : s.image.data) v = r.f64();
            const auto glen = r.le<std::uint32_t>();
            s.gt = ground_truth_from_json(parse_json(r.take(glen), what));
            s.severity = sev[i].get<double>();
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw InputError(what + ": malformed header (" + e.what() + ")");
    }
    if (r.remaining() != 0) throw InputError(what + ": trailing bytes after the last record");
    return ds;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json partition_json(const VarianceReport& variances, const DomainPartition& split) {
    json images = json::array();
    for (std::size_t i = 0; i < variances.per_image.size(); ++i) {
        const DetectionVariance& v = variances.per_image[i];
        const bool similar = split.levels[i] >= split.sigma;
        images.push_back({{"id", i},
                          {"v_b", v.box},
                          {"v_c", v.score},
                          {"v", v.value},
                          {"rank", split.ranks[i]},
                          {"vl", split.levels[i]},
                          {"subset", similar ? "source_similar" : "source_dissimilar"}});
    }
    return {{"passes", variances.passes},
            {"sigma", split.sigma},
            {"source_similar", split.source_similar},
            {"source_dissimilar", split.source_dissimilar},
            {"images", std::move(images)}};
}

json eval_report_json(const EvalReport& r) {
    json per_class = json::object();
    for (const auto& [k, ap] : r.per_class_ap) per_class[std::to_string(k)] = ap;
    json recall = json::object();
    for (std::size_t i = 0; i < r.fpi_points.size(); ++i) recall[format_double(r.fpi_points[i])] = r.recall_at_fpi[i];
    json out = {{"per_class_ap", std::move(per_class)},
                {"mAP", r.mean_ap},
                {"recall_at_fpi", std::move(recall)},
                {"max_recall", r.froc_curve.max_recall},
                {"auc", r.auc ? json(*r.auc) : json(nullptr)},
                {"f1", r.f1},
                {"f1_threshold", r.f1_threshold},
                {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}}};
    return out;
}

std::string froc_csv(const FrocResult& r) {
    std::string out = "threshold,fpi,recall\n";
    for (const FrocPoint& p : r.curve) {
        out += format_double(p.threshold) + "," + format_double(p.fpi) + "," + format_double(p.recall) + "\n";
    }
    return out;
}

std::string metrics_csv(const std::vector<StepReport>& history, const std::vector<EpochEval>& evals, int enc_layers,
                        int dec_layers, const std::vector<double>& fpi_points) {
    std::string out = "step,epoch,objective,L_stu,L_enc,L_dec";
    for (const char* s : {"enc_q", "enc_k"})
        for (int l = 1; l <= enc_layers; ++l) out += std::string(",") + s + "_" + std::to_string(l);
    for (const char* s : {"dec_q", "dec_k"})
        for (int l = 1; l <= dec_layers; ++l) out += std::string(",") + s + "_" + std::to_string(l);
    out += ",threshold,pseudo_boxes,grad_norm,mAP";
    for (double f : fpi_points) out += ",R@" + format_double(f);
    out += "\n";

    const std::size_t loss_cols = 3 + 2 * static_cast<std::size_t>(enc_layers + dec_layers) + 3;
    auto eval_cols = [&](const EpochEval* e) {
        std::string s;
        s += "," + (e ? format_double(e->report.mean_ap) : std::string());
        for (std::size_t i = 0; i < fpi_points.size(); ++i) {
            s += ",";
            if (e && i < e->report.recall_at_fpi.size()) s += format_double(e->report.recall_at_fpi[i]);
        }
        return s;
    };
    auto find_eval = [&](std::int64_t step, int epoch) -> const EpochEval* {
        for (const EpochEval& e : evals)
            if (e.step == step && e.epoch == epoch) return &e;
        return nullptr;
    };

    for (const EpochEval& e : evals) {
        if (e.epoch != 0) continue;
        out += std::to_string(e.step) + ",0" + std::string(loss_cols, ',') + eval_cols(&e) + "\n";
    }
    for (const StepReport& r : history) {
        out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_double(r.objective) + "," +
               format_double(r.l_stu) + "," + format_double(r.l_enc) + "," + format_double(r.l_dec);
        for (const auto* v : {&r.enc_q, &r.enc_k, &r.dec_q, &r.dec_k})
            for (double x : *v) out += "," + format_double(x);
        out += "," + format_double(r.threshold) + "," + std::to_string(r.pseudo_boxes) + "," + format_double(r.grad_norm);
        out += eval_cols(find_eval(r.step, r.epoch)) + "\n";
    }
    return out;
}

std::string pretrain_csv(const std::vector<PretrainLog>& history) {
    std::string out = "step,epoch,loss,cls,bbox,giou,grad_norm\n";
    for (const PretrainLog& l : history) {
        out += std::to_string(l.step) + "," + std::to_string(l.epoch) + "," + format_double(l.loss) + "," +
               format_double(l.cls) + "," + format_double(l.bbox) + "," + format_double(l.giou) + "," +
               format_double(l.grad_norm) + "\n";
    }
    return out;
}

json discriminator_spec_json(const DiscriminatorSpec& spec) {
    return {{"layers", spec.layers()},
            {"spectral_norms", spec.spectral_norms},
            {"ref_distances", spec.ref_distances},
            {"lipschitz", spec.lipschitz},
            {"max_width", spec.max_width},
            {"data_norm", spec.data_norm}};
}

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text); }

std::string read_text(const fs::path& path) { return read_bytes(path, "file"); }

std::uint64_t file_hash(const fs::path& path) { return fnv_bytes(read_bytes(path, "file")); }

}  // namespace titan
