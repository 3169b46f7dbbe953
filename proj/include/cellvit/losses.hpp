#pragma once

#include <cstddef>

#include "cellvit/model.hpp"
#include "cellvit/tensor.hpp"

namespace cellvit {

/// Branch weighting factors and Focal Tversky hyperparameters. Defaults are
/// the published training settings.
struct LossWeights {
    double lambda_np_ft = 1.0;
    double lambda_np_dice = 1.0;
    double lambda_hv_mse = 2.5;
    double lambda_hv_msge = 8.0;
    double lambda_nt_ft = 0.5;
    double lambda_nt_dice = 0.2;
    double lambda_nt_bce = 0.5;
    double lambda_tc_ce = 0.1;
    double alpha_ft = 0.7;
    double beta_ft = 0.3;
    double gamma_ft = 4.0 / 3.0;
    double epsilon = 1e-6;
};

struct LossValueWithGrad {
    double value = 0.0;
    TensorF32 grad; // same shape as the prediction tensor
};

/// Pixel-wise categorical cross-entropy: -(1/N_px) sum_i sum_c y_ic log(p_ic).
/// `pred` and `gt` share shape (..., C), rows flattened over leading axes.
/// Throws DomainError when pred <= 0 at a position where gt > 0.
LossValueWithGrad bce_loss(const TensorF32& pred, const TensorF32& gt);

/// Dice loss summed over the trailing class axis:
/// sum_c [ 1 - (2 sum y p + eps) / (sum y + sum p + eps) ].
LossValueWithGrad dice_loss(const TensorF32& pred, const TensorF32& gt, double epsilon);

/// Focal Tversky loss, sum_c (1 - TI_c)^(1/gamma) with
/// TI_c = (TP + eps) / (TP + alpha FN + beta FP + eps).
LossValueWithGrad focal_tversky_loss(const TensorF32& pred, const TensorF32& gt, double alpha,
                                     double beta, double gamma, double epsilon);

/// Mean squared error over all pixels and both HV channels.
LossValueWithGrad mse_hv(const TensorF32& pred_hv, const TensorF32& gt_hv);

/// Per-pixel weighted MSE; `weight` has one entry per pixel (leading axes of
/// pred with the trailing channel axis dropped).
LossValueWithGrad mse_weighted(const TensorF32& pred, const TensorF32& gt,
                               const TensorF32& weight);

/// Mean squared gradient error: horizontal Sobel of channel 0 and vertical
/// Sobel of channel 1 (zero padding), squared differences averaged over
/// foreground pixels, summed for both directions. An all-zero mask yields 0.
LossValueWithGrad msge_hv(const TensorF32& pred_hv, const TensorF32& gt_hv,
                          const TensorF32& focus_mask);

/// Softmax cross-entropy of the tissue logits against a class id.
LossValueWithGrad tissue_ce(const TensorF32& logits, std::size_t tissue_class_id);

/// Ground truth for the HoVer-Net loss composition. `focus_mask` is the
/// binary nuclei foreground used by the MSGE term.
struct HovernetTargets {
    TensorF32 np;   // (H, W, 2) one-hot
    TensorF32 hv;   // (H, W, 2)
    TensorF32 nt;   // (H, W, C) one-hot
    TensorF32 focus_mask; // (H, W)
    std::size_t tissue_class = 0;
};

struct HovernetLossGrads {
    double value = 0.0;
    TensorF32 d_np, d_hv, d_nt, d_tissue;
};

/// L_NP + L_HV + L_NT + L_TC with the weighted per-branch compositions.
double total_loss_hovernet(const PredictionBundle& pred, const HovernetTargets& gt,
                           const LossWeights& weights);
HovernetLossGrads total_loss_hovernet_grads(const PredictionBundle& pred,
                                            const HovernetTargets& gt,
                                            const LossWeights& weights);

enum class StarVariant { stardist, cppnet };

/// Ground truth for the STARDIST/CPP-Net composition. `pd` carries the
/// object probability in channel 1; it also weights the radial-distance MSE.
struct StarDistTargets {
    TensorF32 pd; // (H, W, 2)
    TensorF32 rd; // (H, W, K)
    TensorF32 nt; // (H, W, C) one-hot
};

struct StarDistLossGrads {
    double value = 0.0;
    TensorF32 d_pd, d_rd, d_nt;
};

/// L_PD(BCE) + L_RD(object-probability-weighted MSE) + L_NT, with unit
/// weights for the stardist variant and 0.5 FT + 0.2 DICE + 0.5 BCE nuclei
/// typing for the cppnet variant.
double total_loss_stardist(const TensorF32& pd_pred, const TensorF32& rd_pred,
                           const TensorF32& nt_pred, const StarDistTargets& gt,
                           StarVariant variant, const LossWeights& weights);
StarDistLossGrads total_loss_stardist_grads(const TensorF32& pd_pred, const TensorF32& rd_pred,
                                            const TensorF32& nt_pred, const StarDistTargets& gt,
                                            StarVariant variant, const LossWeights& weights);

} // namespace cellvit
