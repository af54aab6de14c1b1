#include "titan/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "titan/errors.hpp"
#include "titan/rng.hpp"

namespace titan {

using ad::Tape;

namespace {

/// Endless sequence over ids, reshuffled at the start of every pass.
class CyclicStream {
public:
    CyclicStream(std::vector<std::size_t> ids, std::uint64_t seed) : ids_(std::move(ids)), seed_(seed) {}

    std::size_t next() {
        if (pos_ == 0 || pos_ == order_.size()) reshuffle();
        return order_[pos_++];
    }
    bool empty() const { return ids_.empty(); }

private:
    void reshuffle() {
        order_ = ids_;
        Rng rng(derive_seed(seed_, "pass", pass_++));
        for (std::size_t i = order_.size(); i > 1; --i) {
            std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
        }
        pos_ = 0;
    }

    std::vector<std::size_t> ids_;
    std::vector<std::size_t> order_;
    std::uint64_t seed_;
    std::uint64_t pass_ = 0;
    std::size_t pos_ = 0;
};

bool finite(double x) { return std::isfinite(x); }

void check_finite(const ParamSet& ps, const char* what) {
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (double v : ps.at(i).data)
            if (!finite(v)) throw NumericError(std::string(what) + ": parameter " + ps.name(i) + " is not finite");
}

Var batch_mean(Tape& tape, const std::vector<Var>& terms) {
    if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<DetectionSet> predict(const DetectorConfig& cfg, const ParamSet& params, const Dataset& data,
                                  bool domain_query) {
    std::vector<DetectionSet> out;
    out.reserve(data.size());
    ForwardOptions opts;
    opts.domain_query = domain_query;
    for (const Sample& s : data.samples) out.push_back(detect(cfg, params, normalize(s.image), opts));
    return out;
}

EvalReport evaluate_model(const DetectorConfig& cfg, const ParamSet& params, const Dataset& data, bool domain_query,
                          const EvalOptions& opts) {
    const std::vector<DetectionSet> dets = predict(cfg, params, data, domain_query);
    std::vector<GroundTruth> gts;
    gts.reserve(data.size());
    for (const Sample& s : data.samples) gts.push_back(s.gt);
    return evaluate_detections(dets, gts, opts);
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const DetectorConfig& cfg, ParamSet init, const Dataset& train, const PretrainConfig& pc,
                        const std::function<void(const PretrainLog&)>& on_step) {
    if (pc.epochs < 0 || pc.batch_size < 1) throw std::invalid_argument("pretrain: epochs >= 0 and batch_size >= 1 required");
    if (train.size() == 0 && pc.epochs > 0) throw std::invalid_argument("pretrain: empty training set");
    PretrainResult res;
    res.params = std::move(init);
    AdamState adam = AdamState::for_params(res.params);
    const std::size_t n = train.size();
    const std::size_t batch = static_cast<std::size_t>(pc.batch_size);
    std::int64_t step = 0;

    for (int epoch = 1; epoch <= pc.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(derive_seed(pc.seed, "pretrain-order", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);

        AdamConfig adam_cfg = pc.adam;
        if (pc.lr_drop_epoch > 0 && epoch >= pc.lr_drop_epoch) adam_cfg.lr *= 0.1;

        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(n, begin + batch);
            Tape tape;
            ParamBinding binding(tape, res.params, true);
            std::vector<Var> totals, cls, bbox, giou;
            for (std::size_t slot = begin; slot < end; ++slot) {
                const Sample& s = train.samples[order[slot]];
                const std::uint64_t sample_key = static_cast<std::uint64_t>(step) * batch + (slot - begin);
                Rng flip_rng(derive_seed(pc.seed, "pretrain-flip", sample_key));
                const bool flip = flip_rng.bernoulli(pc.flip_p);
                const Tensor input = normalize(flip ? flip_image(s.image) : s.image);
                const GroundTruth gt = flip ? flip_ground_truth(s.gt) : s.gt;

                ForwardOptions opts;
                opts.domain_query = pc.domain_query;
                opts.dropout_p = pc.dropout_p;
                opts.train = true;
                opts.seed = derive_seed(pc.seed, "pretrain-dropout", sample_key);
                const ForwardResult fr = forward(cfg, binding, input, opts);
                const Assignment match = hungarian_match(to_detections(fr.decoder), gt, pc.match);
                const DetectionLoss dl = detection_loss(fr.decoder.boxes, fr.decoder.logits, gt, match, pc.loss);
                totals.push_back(dl.total);
                cls.push_back(dl.cls);
                bbox.push_back(dl.bbox);
                giou.push_back(dl.giou);
            }
            const Var loss = batch_mean(tape, totals);
            PretrainLog log;
            log.step = ++step;
            log.epoch = epoch;
            log.loss = loss.value().item();
            log.cls = batch_mean(tape, cls).value().item();
            log.bbox = batch_mean(tape, bbox).value().item();
            log.giou = batch_mean(tape, giou).value().item();
            if (!finite(log.loss)) {
                throw NumericError("pretrain: non-finite loss at step " + std::to_string(log.step) +
                                   " (cls " + std::to_string(log.cls) + ", bbox " + std::to_string(log.bbox) +
                                   ", giou " + std::to_string(log.giou) + ")");
            }
            const ParamSet grads = binding.gradients(tape.backward(loss));
            log.grad_norm = adam_step(res.params, grads, adam, adam_cfg);
            check_finite(res.params, "pretrain");
            if (on_step) on_step(log);
            res.history.push_back(log);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

GroundTruth PseudoLabelSet::as_ground_truth() const {
    GroundTruth gt;
    for (const ScoredBox& b : boxes) {
        gt.boxes.push_back(b.box);
        gt.labels.push_back(b.label);
    }
    return gt;
}

PseudoLabelSet filter_pseudo_labels(const DetectionSet& dets, double threshold, int topk, double nms_iou) {
    PseudoLabelSet out;
    out.threshold = threshold;
    out.topk = topk;
    out.nms_iou = nms_iou;
    std::vector<ScoredBox> kept = nms(best_class_candidates(dets), nms_iou);
    std::erase_if(kept, [&](const ScoredBox& b) { return b.score < threshold; });
    std::sort(kept.begin(), kept.end(), ranks_before);
    if (topk >= 0 && kept.size() > static_cast<std::size_t>(topk)) kept.resize(static_cast<std::size_t>(topk));
    for (ScoredBox& b : kept) b.box = b.box.clamped();
    out.boxes = std::move(kept);
    return out;
}

PseudoLabelSet generate_pseudo_labels(const DetectorConfig& cfg, const ParamSet& teacher, const Tensor& weak_input,
                                      double threshold, int topk, double nms_iou, bool domain_query) {
    ForwardOptions opts;
    opts.domain_query = domain_query;
    return filter_pseudo_labels(detect(cfg, teacher, weak_input, opts), threshold, topk, nms_iou);
}

// ---------------------------------------------------------------------------

void AdaptConfig::validate() const {
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in01(ema_alpha)) throw std::invalid_argument("ema_alpha must lie in [0, 1]");
    if (!(lambda_enc >= 0.0) || !(lambda_dec >= 0.0)) throw std::invalid_argument("lambda_enc and lambda_dec must be non-negative");
    if (!(query_weights.enc_q >= 0.0) || !(query_weights.dec_q >= 0.0)) {
        throw std::invalid_argument("lambda_enc_q and lambda_dec_q must be non-negative");
    }
    if (!(lambda_grl >= 0.0)) throw std::invalid_argument("lambda_grl must be non-negative");
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("sigma must lie in (0, 1)");
    if (mc_passes < 1) throw std::invalid_argument("mc_passes must be at least 1");
    if (!(mc_dropout >= 0.0 && mc_dropout < 1.0)) throw std::invalid_argument("mc_dropout must lie in [0, 1)");
    if (!in01(pseudo_th)) throw std::invalid_argument("pseudo_th must lie in [0, 1]");
    if (topk_pseudo < 0) throw std::invalid_argument("topk_pseudo must be non-negative");
    if (!in01(nms_iou)) throw std::invalid_argument("nms_iou must lie in [0, 1]");
    if (!(adam.lr > 0.0) || !(disc_adam.lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (batch_size < 2 || batch_size % 2 != 0) throw std::invalid_argument("batch_size must be an even number >= 2");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("dropout_p must lie in [0, 1)");
    if (eval_model != "teacher" && eval_model != "student") throw std::invalid_argument("eval_model must be teacher or student");
    for (double p : {augment.flip_p, augment.jitter_p, augment.grayscale_p, augment.blur_p}) {
        if (!in01(p)) throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
    }
    if (!(augment.blur_sigma_min > 0.0 && augment.blur_sigma_max >= augment.blur_sigma_min)) {
        throw std::invalid_argument("blur sigma range is invalid");
    }
}

TeacherStudent TeacherStudent::from_source(const ParamSet& source, ParamSet discs) {
    TeacherStudent ts;
    ts.teacher = source;
    ts.student = source;
    ts.disc_init = discs;
    ts.discs = std::move(discs);
    ts.student_adam = AdamState::for_params(ts.student);
    ts.disc_adam = AdamState::for_params(ts.discs);
    return ts;
}

ObjectiveTerms build_objective(const DetectorConfig& cfg, ParamBinding& student, ParamBinding& discs,
                               std::span<const AdaptItem> items, const AdaptConfig& ac,
                               std::span<const Assignment> fixed_matchings) {
    if (items.empty()) throw std::invalid_argument("build_objective: empty batch");
    if (!fixed_matchings.empty() && fixed_matchings.size() != items.size()) {
        throw std::invalid_argument("build_objective: one fixed matching per item is required");
    }
    Tape& tape = student.tape();
    if (&discs.tape() != &tape) throw std::invalid_argument("build_objective: bindings live on different tapes");

    ObjectiveTerms out;
    std::vector<Var> stu, enc, dec;
    std::vector<std::vector<Var>> enc_q, enc_k, dec_q, dec_k;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const AdaptItem& item = items[i];
        ForwardOptions opts;
        opts.domain_query = ac.use_domain_query;
        opts.dropout_p = ac.dropout_p;
        opts.train = true;
        opts.seed = item.dropout_seed;
        const ForwardResult fr = forward(cfg, student, item.strong, opts);
        Assignment match = fixed_matchings.empty() ? hungarian_match(to_detections(fr.decoder), item.pseudo, ac.match)
                                                   : fixed_matchings[i];
        stu.push_back(detection_loss(fr.decoder.boxes, fr.decoder.logits, item.pseudo, match, ac.loss).total);
        out.matchings.push_back(std::move(match));

        std::vector<Var> zs, qs;
        for (std::size_t l = 1; l < fr.encoder.states.size(); ++l) zs.push_back(ad::grad_reverse(fr.encoder.states[l], ac.lambda_grl));
        for (std::size_t l = 1; l < fr.decoder.states.size(); ++l) qs.push_back(ad::grad_reverse(fr.decoder.states[l], ac.lambda_grl));
        AlignmentLosses al = cascade(zs, qs, fr.encoder.has_domain_query, item.domain, discs, ac.query_weights);
        enc.push_back(al.enc);
        dec.push_back(al.dec);
        enc_q.push_back(std::move(al.enc_q));
        enc_k.push_back(std::move(al.enc_k));
        dec_q.push_back(std::move(al.dec_q));
        dec_k.push_back(std::move(al.dec_k));
    }

    auto layer_means = [&](const std::vector<std::vector<Var>>& per_item) {
        std::vector<Var> means;
        for (std::size_t l = 0; l < per_item.front().size(); ++l) {
            std::vector<Var> col;
            for (const auto& row : per_item) col.push_back(row[l]);
            means.push_back(batch_mean(tape, col));
        }
        return means;
    };
    out.l_stu = batch_mean(tape, stu);
    out.l_enc = batch_mean(tape, enc);
    out.l_dec = batch_mean(tape, dec);
    out.enc_q = layer_means(enc_q);
    out.enc_k = layer_means(enc_k);
    out.dec_q = layer_means(dec_q);
    out.dec_k = layer_means(dec_k);
    out.surrogate = ad::add(out.l_stu, ad::add(ad::scale(out.l_enc, ac.lambda_enc), ad::scale(out.l_dec, ac.lambda_dec)));
    return out;
}

double reported_objective(double l_stu, double l_enc, double l_dec, const AdaptConfig& ac) {
    return l_stu - ac.lambda_enc * l_enc - ac.lambda_dec * l_dec;
}

double pseudo_threshold(const AdaptConfig& ac, std::int64_t step, std::int64_t total_steps) {
    if (!ac.use_dynamic_th || total_steps <= 0) return ac.pseudo_th;
    const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return ac.pseudo_th * (1.0 - 0.5 * progress);
}

StepReport adapt_step(const DetectorConfig& cfg, TeacherStudent& state, std::span<const Tensor* const> similar,
                      std::span<const Tensor* const> dissimilar, const AdaptConfig& ac, std::int64_t total_steps) {
    if (similar.empty() && dissimilar.empty()) throw std::invalid_argument("adapt_step: empty batch");
    StepReport rep;
    rep.step = state.step + 1;
    rep.threshold = pseudo_threshold(ac, state.step, total_steps);

    std::vector<AdaptItem> items;
    const auto base = static_cast<std::uint64_t>(state.step) * static_cast<std::uint64_t>(similar.size() + dissimilar.size());
    auto add_item = [&](const Tensor& image, int domain) {
        const std::uint64_t key = base + items.size();
        const WeakView weak = weak_augment(image, ac.augment, derive_seed(ac.seed, "weak", key));
        AdaptItem item;
        item.pseudo = generate_pseudo_labels(cfg, state.teacher, weak.normalized, rep.threshold, ac.topk_pseudo,
                                             ac.nms_iou, ac.use_domain_query)
                          .as_ground_truth();
        item.strong = strong_augment(weak.raw, ac.augment, derive_seed(ac.seed, "strong", key));
        item.domain = domain;
        item.dropout_seed = derive_seed(ac.seed, "student-dropout", key);
        rep.pseudo_boxes += static_cast<int>(item.pseudo.size());
        items.push_back(std::move(item));
    };
    for (const Tensor* img : similar) add_item(*img, 0);
    for (const Tensor* img : dissimilar) add_item(*img, 1);

    Tape tape;
    ParamBinding student(tape, state.student, true);
    ParamBinding discs(tape, state.discs, true);
    const ObjectiveTerms terms = build_objective(cfg, student, discs, items, ac);

    rep.l_stu = terms.l_stu.value().item();
    rep.l_enc = terms.l_enc.value().item();
    rep.l_dec = terms.l_dec.value().item();
    rep.objective = reported_objective(rep.l_stu, rep.l_enc, rep.l_dec, ac);
    for (const Var& v : terms.enc_q) rep.enc_q.push_back(v.value().item());
    for (const Var& v : terms.enc_k) rep.enc_k.push_back(v.value().item());
    for (const Var& v : terms.dec_q) rep.dec_q.push_back(v.value().item());
    for (const Var& v : terms.dec_k) rep.dec_k.push_back(v.value().item());
    if (!finite(rep.l_stu) || !finite(rep.l_enc) || !finite(rep.l_dec)) {
        throw NumericError("adapt_step: non-finite loss at step " + std::to_string(rep.step) + " (L_stu " +
                           std::to_string(rep.l_stu) + ", L_enc " + std::to_string(rep.l_enc) + ", L_dec " +
                           std::to_string(rep.l_dec) + ")");
    }

    const ad::Gradients grads = tape.backward(terms.surrogate);
    rep.grad_norm = adam_step(state.student, student.gradients(grads), state.student_adam, ac.adam);
    adam_step(state.discs, discs.gradients(grads), state.disc_adam, ac.disc_adam);
    check_finite(state.student, "adapt_step");
    check_finite(state.discs, "adapt_step");
    ema_update(state.teacher, state.student, ac.ema_alpha);
    state.step = rep.step;
    return rep;
}

// ---------------------------------------------------------------------------

const ParamSet& AdaptResult::model(const std::string& which) const {
    if (which == "teacher") return state.teacher;
    if (which == "student") return state.student;
    throw std::invalid_argument("unknown model '" + which + "'");
}

PartitionResult partition_target(const DetectorConfig& cfg, const ParamSet& source, const Dataset& target,
                                 int passes, double dropout_p, double sigma, std::uint64_t seed, bool domain_query) {
    std::vector<Tensor> inputs;
    inputs.reserve(target.size());
    for (const Sample& s : target.samples) inputs.push_back(normalize(s.image));
    PartitionResult r;
    r.variances = variance_report(cfg, source, inputs, passes, dropout_p, seed, domain_query);
    std::vector<double> v;
    for (const DetectionVariance& dv : r.variances.per_image) v.push_back(dv.value);
    r.split = partition(v, sigma);
    return r;
}

AdaptResult run_adaptation(const DetectorConfig& cfg, const ParamSet& source, const Dataset& target_train,
                           const Dataset& target_val, const AdaptConfig& ac, const AdaptCallbacks& cb) {
    ac.validate();
    cfg.validate();
    if (target_train.size() == 0) throw std::invalid_argument("run_adaptation: empty target dataset");
    if (!source.congruent(init_detector_params(cfg, 0))) {
        throw std::invalid_argument("run_adaptation: source parameters do not match the detector config");
    }

    AdaptResult res;
    DiscriminatorConfig dc = ac.disc;
    dc.input_dim = cfg.hidden_dim;
    dc.enc_layers = cfg.enc_layers;
    dc.dec_layers = cfg.dec_layers;
    res.state = TeacherStudent::from_source(source, init_discriminators(dc, derive_seed(ac.seed, "disc")));

    std::vector<std::size_t> sim_ids, dis_ids;
    if (ac.use_partition) {
        PartitionResult pr = partition_target(cfg, source, target_train, ac.mc_passes, ac.mc_dropout, ac.sigma,
                                              derive_seed(ac.seed, "partition"), ac.use_domain_query);
        res.variances = std::move(pr.variances);
        res.split = std::move(pr.split);
        sim_ids = res.split.source_similar;
        dis_ids = res.split.source_dissimilar;
        if (sim_ids.empty() || dis_ids.empty()) {
            throw std::invalid_argument("run_adaptation: sigma leaves one target subset empty");
        }
    } else {
        sim_ids.resize(target_train.size());
        std::iota(sim_ids.begin(), sim_ids.end(), std::size_t{0});
    }

    CyclicStream sim(sim_ids, derive_seed(ac.seed, "stream-similar"));
    CyclicStream dis(dis_ids, derive_seed(ac.seed, "stream-dissimilar"));
    const auto batch = static_cast<std::size_t>(ac.batch_size);
    const auto steps_per_epoch = static_cast<std::int64_t>((target_train.size() + batch - 1) / batch);
    const std::int64_t total = steps_per_epoch * ac.epochs;

    auto eval_now = [&](int epoch) {
        EpochEval e;
        e.epoch = epoch;
        e.step = res.state.step;
        if (target_val.size() > 0) e.report = evaluate_model(cfg, res.model(ac.eval_model), target_val, ac.use_domain_query, ac.eval);
        if (cb.on_epoch) cb.on_epoch(e);
        res.evals.push_back(std::move(e));
    };
    eval_now(0);

    for (int epoch = 1; epoch <= ac.epochs; ++epoch) {
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<const Tensor*> a, b;
            if (ac.use_partition) {
                for (std::size_t i = 0; i < batch / 2; ++i) a.push_back(&target_train.samples[sim.next()].image);
                for (std::size_t i = 0; i < batch / 2; ++i) b.push_back(&target_train.samples[dis.next()].image);
            } else {
                for (std::size_t i = 0; i < batch; ++i) a.push_back(&target_train.samples[sim.next()].image);
            }
            StepReport rep = adapt_step(cfg, res.state, a, b, ac, total);
            rep.epoch = epoch;
            if (cb.on_step) cb.on_step(rep);
            res.history.push_back(std::move(rep));
        }
        eval_now(epoch);
    }
    res.adapted = res.model(ac.eval_model);
    return res;
}

}  // namespace titan
