#include "segunet/loss.hpp"

#include <sstream>

#include "segunet/common.hpp"

namespace segunet {

namespace {

void check_pair(const char* op, const torch::Tensor& logits, const torch::Tensor& g) {
    if (logits.dim() != 4 || g.dim() != 4 || !logits.sizes().equals(g.sizes())) {
        std::ostringstream os;
        os << op << ": logits shape " << logits.sizes() << " does not match mask shape "
           << g.sizes();
        throw ShapeError(os.str());
    }
}

}  // namespace

torch::Tensor weight_map(const torch::Tensor& g) {
    if (g.dim() != 4) {
        std::ostringstream os;
        os << "weight_map expects (B,1,H,W) masks, got " << g.sizes();
        throw ShapeError(os.str());
    }
    if (!((g == 0) | (g == 1)).all().item<bool>()) {
        throw ValidationError("weight_map: ground truth must be binary {0,1}");
    }
    namespace F = torch::nn::functional;
    torch::Tensor pooled = F::avg_pool2d(
        g, F::AvgPool2dFuncOptions(31).stride(1).padding(15).count_include_pad(false));
    return 1 + 5 * (pooled - g).abs();
}

torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& g,
                           const torch::Tensor& w) {
    check_pair("weighted_bce", logits, g);
    check_pair("weighted_bce", logits, w);
    // max(x,0) - x*g + log(1 + exp(-|x|))
    torch::Tensor bce =
        torch::clamp_min(logits, 0) - logits * g + torch::log1p(torch::exp(-logits.abs()));
    torch::Tensor per_sample = (w * bce).sum({1, 2, 3}) / w.sum({1, 2, 3});
    return per_sample.mean();
}

torch::Tensor weighted_iou(const torch::Tensor& logits, const torch::Tensor& g,
                           const torch::Tensor& w) {
    check_pair("weighted_iou", logits, g);
    check_pair("weighted_iou", logits, w);
    torch::Tensor p = torch::sigmoid(logits);
    torch::Tensor inter = (w * p * g).sum({1, 2, 3});
    torch::Tensor uni = (w * (p + g)).sum({1, 2, 3});
    torch::Tensor per_sample = 1 - (inter + 1) / (uni - inter + 1);
    return per_sample.mean();
}

StructureLossParts structure_loss(const torch::Tensor& logits, const torch::Tensor& g) {
    check_pair("structure_loss", logits, g);
    torch::Tensor w = weight_map(g);
    StructureLossParts parts;
    parts.wbce = weighted_bce(logits, g, w);
    parts.wiou = weighted_iou(logits, g, w);
    parts.total = parts.wbce + parts.wiou;
    return parts;
}

LossBreakdown total_loss(const SegmentationOutputs& outputs, const torch::Tensor& g) {
    torch::Tensor w = weight_map(g);
    LossBreakdown out;
    out.l_wbce = torch::zeros({}, g.options());
    out.l_wiou = torch::zeros({}, g.options());
    for (size_t i = 0; i < outputs.logits.size(); ++i) {
        const auto& s = outputs.logits[i];
        check_pair("total_loss", s, g);
        torch::Tensor bce = weighted_bce(s, g, w);
        torch::Tensor iou = weighted_iou(s, g, w);
        out.per_head[i] = bce + iou;
        out.l_wbce = out.l_wbce + bce;
        out.l_wiou = out.l_wiou + iou;
    }
    out.total = out.l_wbce + out.l_wiou;
    return out;
}

}  // namespace segunet
