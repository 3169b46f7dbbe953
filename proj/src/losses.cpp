#include "cellvit/losses.hpp"

#include <cmath>
#include <vector>

#include "cellvit/errors.hpp"
#include "detail/sobel.hpp"

namespace cellvit {

namespace {

// Interprets a tensor as (rows, C) with C the trailing axis.
std::pair<std::size_t, std::size_t> rows_by_classes(const TensorF32& t) {
    const std::size_t c = t.extent(t.rank() - 1);
    return {t.element_count() / c, c};
}

} // namespace

LossValueWithGrad bce_loss(const TensorF32& pred, const TensorF32& gt) {
    require_same_shape(pred, gt, "bce_loss");
    const auto [rows, classes] = rows_by_classes(pred);
    const double inv_n = 1.0 / static_cast<double>(rows);

    LossValueWithGrad out;
    out.grad = TensorF32(pred.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < rows * classes; ++i) {
        const double y = gt[i];
        if (y == 0.0) continue;
        const double p = pred[i];
        if (p <= 0.0)
            throw DomainError("bce_loss: prediction <= 0 where ground truth is positive");
        acc -= y * std::log(p);
        out.grad[i] = static_cast<float>(-y / p * inv_n);
    }
    out.value = acc * inv_n;
    return out;
}

LossValueWithGrad dice_loss(const TensorF32& pred, const TensorF32& gt, double epsilon) {
    require_same_shape(pred, gt, "dice_loss");
    const auto [rows, classes] = rows_by_classes(pred);

    LossValueWithGrad out;
    out.grad = TensorF32(pred.shape());
    for (std::size_t c = 0; c < classes; ++c) {
        double inter = 0.0, sum_y = 0.0, sum_p = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double y = gt[i * classes + c];
            const double p = pred[i * classes + c];
            inter += y * p;
            sum_y += y;
            sum_p += p;
        }
        const double num = 2.0 * inter + epsilon;
        const double den = sum_y + sum_p + epsilon;
        out.value += 1.0 - num / den;
        for (std::size_t i = 0; i < rows; ++i) {
            const double y = gt[i * classes + c];
            out.grad[i * classes + c] = static_cast<float>(-(2.0 * y * den - num) / (den * den));
        }
    }
    return out;
}

LossValueWithGrad focal_tversky_loss(const TensorF32& pred, const TensorF32& gt, double alpha,
                                     double beta, double gamma, double epsilon) {
    require_same_shape(pred, gt, "focal_tversky_loss");
    if (gamma <= 0.0) throw DomainError("focal_tversky_loss: gamma must be > 0");
    const auto [rows, classes] = rows_by_classes(pred);
    const double expo = 1.0 / gamma;

    LossValueWithGrad out;
    out.grad = TensorF32(pred.shape());
    for (std::size_t c = 0; c < classes; ++c) {
        double tp = 0.0, fn = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double y = gt[i * classes + c];
            const double p = pred[i * classes + c];
            tp += y * p;
            fn += y * (1.0 - p);
            fp += (1.0 - y) * p;
        }
        const double num = tp + epsilon;
        const double den = tp + alpha * fn + beta * fp + epsilon;
        const double ti = num / den;
        const double one_minus = std::max(1.0 - ti, 0.0);
        out.value += std::pow(one_minus, expo);

        // d(1-TI)^e / dp = -e (1-TI)^(e-1) * dTI/dp, with
        // dTI/dp = (y*den - num*(y - alpha*y + beta*(1-y))) / den^2.
        const double outer = one_minus > 0.0 ? -expo * std::pow(one_minus, expo - 1.0) : 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double y = gt[i * classes + c];
            const double dden = y - alpha * y + beta * (1.0 - y);
            const double dti = (y * den - num * dden) / (den * den);
            out.grad[i * classes + c] += static_cast<float>(outer * dti);
        }
    }
    return out;
}

LossValueWithGrad mse_hv(const TensorF32& pred_hv, const TensorF32& gt_hv) {
    require_same_shape(pred_hv, gt_hv, "mse_hv");
    const std::size_t n = pred_hv.element_count();
    const double inv_n = 1.0 / static_cast<double>(n);

    LossValueWithGrad out;
    out.grad = TensorF32(pred_hv.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred_hv[i]) - gt_hv[i];
        acc += d * d;
        out.grad[i] = static_cast<float>(2.0 * d * inv_n);
    }
    out.value = acc * inv_n;
    return out;
}

LossValueWithGrad mse_weighted(const TensorF32& pred, const TensorF32& gt,
                               const TensorF32& weight) {
    require_same_shape(pred, gt, "mse_weighted");
    const auto [rows, classes] = rows_by_classes(pred);
    if (weight.element_count() != rows)
        throw ShapeMismatch("mse_weighted: weight count " + std::to_string(weight.element_count()) +
                            " does not match pixel count " + std::to_string(rows));
    const double inv_n = 1.0 / static_cast<double>(rows * classes);

    LossValueWithGrad out;
    out.grad = TensorF32(pred.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double w = weight[i];
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t k = i * classes + c;
            const double d = static_cast<double>(pred[k]) - gt[k];
            acc += w * d * d;
            out.grad[k] = static_cast<float>(2.0 * w * d * inv_n);
        }
    }
    out.value = acc * inv_n;
    return out;
}

namespace {

using detail::kSobelX;
using detail::kSobelY;
using detail::sobel_channel;

// Adjoint of sobel_channel: scatters masked errors back through the kernel
// into the gradient of channel `ch`.
void sobel_adjoint(const std::vector<double>& err, const TensorF32& mask, TensorF32& grad,
                   std::size_t ch, const int k[3][3], double scale) {
    const std::size_t h = grad.extent(0), w = grad.extent(1), c = grad.extent(2);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            if (mask[r * w + col] == 0.0f) continue;
            const double e = err[r * w + col] * scale;
            for (int dr = -1; dr <= 1; ++dr) {
                const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
                if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(col) + dc;
                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                    grad.data()[(rr * static_cast<std::ptrdiff_t>(w) + cc) * c + ch] +=
                        static_cast<float>(e * static_cast<double>(k[dr + 1][dc + 1]));
                }
            }
        }
    }
}

} // namespace

LossValueWithGrad msge_hv(const TensorF32& pred_hv, const TensorF32& gt_hv,
                          const TensorF32& focus_mask) {
    require_same_shape(pred_hv, gt_hv, "msge_hv");
    const std::size_t h = pred_hv.extent(0), w = pred_hv.extent(1);
    if (focus_mask.element_count() != h * w)
        throw ShapeMismatch("msge_hv: mask size does not match map");

    LossValueWithGrad out;
    out.grad = TensorF32(pred_hv.shape());

    std::size_t mask_px = 0;
    for (std::size_t i = 0; i < h * w; ++i)
        if (focus_mask[i] != 0.0f) ++mask_px;
    if (mask_px == 0) return out; // defined as 0 for an empty mask

    const auto px = sobel_channel(pred_hv, 0, kSobelX);
    const auto gx = sobel_channel(gt_hv, 0, kSobelX);
    const auto py = sobel_channel(pred_hv, 1, kSobelY);
    const auto gy = sobel_channel(gt_hv, 1, kSobelY);

    std::vector<double> ex(h * w), ey(h * w);
    double acc = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
        ex[i] = px[i] - gx[i];
        ey[i] = py[i] - gy[i];
        if (focus_mask[i] != 0.0f) acc += ex[i] * ex[i] + ey[i] * ey[i];
    }
    out.value = acc / static_cast<double>(mask_px);

    const double scale = 2.0 / static_cast<double>(mask_px);
    sobel_adjoint(ex, focus_mask, out.grad, 0, kSobelX, scale);
    sobel_adjoint(ey, focus_mask, out.grad, 1, kSobelY, scale);
    return out;
}

LossValueWithGrad tissue_ce(const TensorF32& logits, std::size_t tissue_class_id) {
    const std::size_t c = logits.element_count();
    if (tissue_class_id >= c)
        throw IndexOutOfRange("tissue class " + std::to_string(tissue_class_id) +
                              " out of range for " + std::to_string(c) + " logits");

    double mx = logits[0];
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
    const double lse = std::log(sum) + mx;

    LossValueWithGrad out;
    out.value = lse - logits[tissue_class_id];
    out.grad = TensorF32(logits.shape());
    for (std::size_t i = 0; i < c; ++i) {
        const double soft = std::exp(static_cast<double>(logits[i]) - lse);
        out.grad[i] = static_cast<float>(soft - (i == tissue_class_id ? 1.0 : 0.0));
    }
    return out;
}

namespace {

void axpy(TensorF32& acc, const TensorF32& g, double lambda) {
    if (acc.empty()) acc = TensorF32(g.shape());
    for (std::size_t i = 0; i < g.element_count(); ++i)
        acc[i] += static_cast<float>(lambda * g[i]);
}

} // namespace

HovernetLossGrads total_loss_hovernet_grads(const PredictionBundle& pred,
                                            const HovernetTargets& gt,
                                            const LossWeights& w) {
    HovernetLossGrads out;
    auto add = [&](const LossValueWithGrad& term, TensorF32& slot, double lambda) {
        if (lambda == 0.0) return;
        out.value += lambda * term.value;
        axpy(slot, term.grad, lambda);
    };
    out.d_np = TensorF32(pred.np_map.shape());
    out.d_hv = TensorF32(pred.hv_map.shape());
    out.d_nt = TensorF32(pred.nt_map.shape());
    out.d_tissue = TensorF32(pred.tissue_logits.shape());

    add(focal_tversky_loss(pred.np_map, gt.np, w.alpha_ft, w.beta_ft, w.gamma_ft, w.epsilon),
        out.d_np, w.lambda_np_ft);
    add(dice_loss(pred.np_map, gt.np, w.epsilon), out.d_np, w.lambda_np_dice);
    add(mse_hv(pred.hv_map, gt.hv), out.d_hv, w.lambda_hv_mse);
    add(msge_hv(pred.hv_map, gt.hv, gt.focus_mask), out.d_hv, w.lambda_hv_msge);
    add(focal_tversky_loss(pred.nt_map, gt.nt, w.alpha_ft, w.beta_ft, w.gamma_ft, w.epsilon),
        out.d_nt, w.lambda_nt_ft);
    add(dice_loss(pred.nt_map, gt.nt, w.epsilon), out.d_nt, w.lambda_nt_dice);
    add(bce_loss(pred.nt_map, gt.nt), out.d_nt, w.lambda_nt_bce);
    add(tissue_ce(pred.tissue_logits, gt.tissue_class), out.d_tissue, w.lambda_tc_ce);
    return out;
}

double total_loss_hovernet(const PredictionBundle& pred, const HovernetTargets& gt,
                           const LossWeights& weights) {
    return total_loss_hovernet_grads(pred, gt, weights).value;
}

StarDistLossGrads total_loss_stardist_grads(const TensorF32& pd_pred, const TensorF32& rd_pred,
                                            const TensorF32& nt_pred, const StarDistTargets& gt,
                                            StarVariant variant, const LossWeights& w) {
    StarDistLossGrads out;
    out.d_pd = TensorF32(pd_pred.shape());
    out.d_rd = TensorF32(rd_pred.shape());
    out.d_nt = TensorF32(nt_pred.shape());
    auto add = [&](const LossValueWithGrad& term, TensorF32& slot, double lambda) {
        if (lambda == 0.0) return;
        out.value += lambda * term.value;
        axpy(slot, term.grad, lambda);
    };

    // Object probability (channel 1 of the PD ground truth) weights the
    // radial-distance regression.
    const std::size_t px = gt.pd.element_count() / 2;
    TensorF32 obj_prob({px});
    for (std::size_t i = 0; i < px; ++i) obj_prob[i] = gt.pd[i * 2 + 1];

    add(bce_loss(pd_pred, gt.pd), out.d_pd, 1.0);
    add(mse_weighted(rd_pred, gt.rd, obj_prob), out.d_rd, 1.0);
    if (variant == StarVariant::stardist) {
        add(dice_loss(nt_pred, gt.nt, w.epsilon), out.d_nt, 1.0);
        add(bce_loss(nt_pred, gt.nt), out.d_nt, 1.0);
    } else {
        add(focal_tversky_loss(nt_pred, gt.nt, w.alpha_ft, w.beta_ft, w.gamma_ft, w.epsilon),
            out.d_nt, w.lambda_nt_ft);
        add(dice_loss(nt_pred, gt.nt, w.epsilon), out.d_nt, w.lambda_nt_dice);
        add(bce_loss(nt_pred, gt.nt), out.d_nt, w.lambda_nt_bce);
    }
    return out;
}

double total_loss_stardist(const TensorF32& pd_pred, const TensorF32& rd_pred,
                           const TensorF32& nt_pred, const StarDistTargets& gt,
                           StarVariant variant, const LossWeights& weights) {
    return total_loss_stardist_grads(pd_pred, rd_pred, nt_pred, gt, variant, weights).value;
}

} // namespace cellvit
