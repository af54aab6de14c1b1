#include "titan/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace titan {

using ad::Tensor;
using ad::Var;

Var giou_rows(const Var& pred, const std::vector<Box>& targets) {
    ad::Tape& tape = *pred.tape();
    const std::size_t g = targets.size();
    if (pred.rows() != g || pred.cols() != 4) throw std::invalid_argument("giou_rows: expected a [G x 4] box matrix");

    auto target_col = [&](auto field) {
        Tensor t = Tensor::matrix(g, 1);
        for (std::size_t i = 0; i < g; ++i) t(i, 0) = field(targets[i]);
        return tape.constant(std::move(t));
    };
    const Var tx1 = target_col([](const Box& b) { return b.x1; });
    const Var ty1 = target_col([](const Box& b) { return b.y1; });
    const Var tx2 = target_col([](const Box& b) { return b.x2; });
    const Var ty2 = target_col([](const Box& b) { return b.y2; });
    const Var px1 = ad::slice_cols(pred, 0, 1);
    const Var py1 = ad::slice_cols(pred, 1, 1);
    const Var px2 = ad::slice_cols(pred, 2, 1);
    const Var py2 = ad::slice_cols(pred, 3, 1);

    const Var area_p = ad::mul(ad::relu(ad::sub(px2, px1)), ad::relu(ad::sub(py2, py1)));
    const Var area_t = ad::mul(ad::sub(tx2, tx1), ad::sub(ty2, ty1));
    const Var iw = ad::relu(ad::sub(ad::minimum(px2, tx2), ad::maximum(px1, tx1)));
    const Var ih = ad::relu(ad::sub(ad::minimum(py2, ty2), ad::maximum(py1, ty1)));
    const Var inter = ad::mul(iw, ih);
    const Var uni = ad::sub(ad::add(area_p, area_t), inter);
    const Var hull = ad::mul(ad::sub(ad::maximum(px2, tx2), ad::minimum(px1, tx1)),
                             ad::sub(ad::maximum(py2, ty2), ad::minimum(py1, ty1)));
    const Var iou = ad::div(inter, uni);
    return ad::sub(iou, ad::div(ad::sub(hull, uni), hull));
}

DetectionLoss detection_loss(const Var& boxes, const Var& logits, const GroundTruth& gts, const Assignment& matching,
                             const LossCoefs& coefs) {
    const std::size_t m = logits.rows();
    const std::size_t k = logits.cols();
    if (m == 0) throw std::invalid_argument("detection_loss: empty prediction set");
    if (boxes.rows() != m || boxes.cols() != 4) throw std::invalid_argument("detection_loss: box/logit row mismatch");
    if (matching.pred_for_gt.size() != gts.size()) throw std::invalid_argument("detection_loss: matching does not cover the ground truths");

    ad::Tape& tape = *logits.tape();
    const double norm = static_cast<double>(std::max<std::size_t>(1, gts.size()));

    Tensor targets = Tensor::matrix(m, k, 0.0);
    std::vector<std::size_t> pred_rows;
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const int p = matching.pred_for_gt[g];
        const int label = gts.labels[g];
        if (p < 0 || static_cast<std::size_t>(p) >= m) throw std::invalid_argument("detection_loss: matching index out of range");
        if (label < 0 || static_cast<std::size_t>(label) >= k) throw std::invalid_argument("detection_loss: label out of range");
        targets(static_cast<std::size_t>(p), static_cast<std::size_t>(label)) = 1.0;
        pred_rows.push_back(static_cast<std::size_t>(p));
    }

    DetectionLoss out;
    out.cls = ad::scale(ad::sum(ad::sigmoid_focal(logits, targets, coefs.focal_alpha, coefs.focal_gamma)), 1.0 / norm);
    if (gts.size() == 0) {
        out.bbox = tape.constant(Tensor::scalar(0.0));
        out.giou = tape.constant(Tensor::scalar(0.0));
    } else {
        const Var matched = ad::gather_rows(boxes, pred_rows);
        Tensor gt_boxes = Tensor::matrix(gts.size(), 4);
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const Box& b = gts.boxes[g];
            gt_boxes(g, 0) = b.x1;
            gt_boxes(g, 1) = b.y1;
            gt_boxes(g, 2) = b.x2;
            gt_boxes(g, 3) = b.y2;
        }
        const Var gt_var = tape.constant(std::move(gt_boxes));
        out.bbox = ad::scale(ad::sum(ad::abs(ad::sub(matched, gt_var))), 1.0 / norm);
        const Var g = giou_rows(ad::clamp(matched, 0.0, 1.0), gts.boxes);
        out.giou = ad::scale(ad::sum(ad::add_scalar(ad::neg(g), 1.0)), 1.0 / norm);
    }
    out.total = ad::add(ad::add(ad::scale(out.cls, coefs.cls), ad::scale(out.bbox, coefs.bbox)),
                        ad::scale(out.giou, coefs.giou));
    return out;
}

}  // namespace titan
