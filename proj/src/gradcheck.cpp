#include "cellvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "cellvit/losses.hpp"
#include "detail/nn_ops.hpp"

namespace cellvit {

namespace {

using detail::SplitMix64;

TensorF32 random_uniform(SplitMix64& rng, std::vector<std::size_t> shape, double lo, double hi) {
    TensorF32 t(std::move(shape));
    for (std::size_t i = 0; i < t.element_count(); ++i)
        t[i] = static_cast<float>(lo + rng.uniform() * (hi - lo));
    return t;
}

// Probabilities kept away from the 0/1 boundaries so log terms and the
// Tversky denominator stay well-conditioned for differencing.
TensorF32 random_probs(SplitMix64& rng, std::size_t rows, std::size_t classes) {
    TensorF32 t({rows, classes});
    for (std::size_t i = 0; i < rows; ++i) {
        double sum = 0.0;
        std::vector<double> raw(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            raw[c] = 0.1 + rng.uniform();
            sum += raw[c];
        }
        for (std::size_t c = 0; c < classes; ++c)
            t[i * classes + c] = static_cast<float>(raw[c] / sum);
    }
    return t;
}

TensorF32 random_one_hot(SplitMix64& rng, std::size_t rows, std::size_t classes) {
    TensorF32 t({rows, classes});
    for (std::size_t i = 0; i < rows; ++i)
        t[i * classes + rng.next() % classes] = 1.0f;
    return t;
}

TensorF32 random_mask(SplitMix64& rng, std::size_t n) {
    TensorF32 t({n});
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        any = any || t[i] != 0.0f;
    }
    if (!any) t[0] = 1.0f;
    return t;
}

struct CheckState {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool corrupt_next = false;
};

// Central differences with exactly measured step: the perturbed values are
// stored in f32, so the effective step is recovered from the stored floats
// and the quotient is formed in double.
void check_tensor(CheckState& st, TensorF32& input, const TensorF32& analytic,
                  const std::function<double()>& eval) {
    for (std::size_t i = 0; i < input.element_count(); ++i) {
        const float original = input[i];
        const double h = 1e-4 * std::max(1.0, std::abs(static_cast<double>(original)));

        input[i] = static_cast<float>(original + h);
        const double xp = input[i];
        const double fp = eval();
        input[i] = static_cast<float>(original - h);
        const double xm = input[i];
        const double fm = eval();
        input[i] = original;

        const double fd = (fp - fm) / (xp - xm);
        double a = analytic[i];
        if (st.corrupt_next) {
            a += 0.5 * (1.0 + std::abs(a));
            st.corrupt_next = false;
        }
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
        st.max_rel_err = std::max(st.max_rel_err, rel);
        ++st.checked;
    }
}

} // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, std::size_t tensors_per_loss,
                              bool perturb_analytic) {
    GradCheckReport report;
    SplitMix64 rng(seed);
    const LossWeights lw;

    auto finish = [&](const char* name, CheckState& st, std::size_t tensors) {
        GradCheckCase c;
        c.loss = name;
        c.max_rel_err = st.max_rel_err;
        c.gradients_checked = st.checked;
        c.tensors = tensors;
        c.passed = st.max_rel_err < report.threshold;
        report.cases.push_back(std::move(c));
    };

    auto shape_hw = [&](std::size_t max_side) {
        const std::size_t h = 2 + rng.next() % (max_side - 1);
        const std::size_t w = 2 + rng.next() % (max_side - 1);
        return std::pair<std::size_t, std::size_t>(h, w);
    };

    { // BCE
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const std::size_t rows = 4 + rng.next() % 28;
            const std::size_t classes = 2 + rng.next() % 3;
            TensorF32 pred = random_probs(rng, rows, classes);
            const TensorF32 gt = random_one_hot(rng, rows, classes);
            const TensorF32 analytic = bce_loss(pred, gt).grad;
            check_tensor(st, pred, analytic, [&] { return bce_loss(pred, gt).value; });
        }
        finish("bce", st, tensors_per_loss);
    }

    { // Dice
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const std::size_t rows = 4 + rng.next() % 28;
            const std::size_t classes = 1 + rng.next() % 4;
            TensorF32 pred = random_uniform(rng, {rows, classes}, 0.05, 0.95);
            const TensorF32 gt = random_one_hot(rng, rows, classes);
            const TensorF32 analytic = dice_loss(pred, gt, 1e-6).grad;
            check_tensor(st, pred, analytic, [&] { return dice_loss(pred, gt, 1e-6).value; });
        }
        finish("dice", st, tensors_per_loss);
    }

    { // Focal Tversky
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const std::size_t rows = 4 + rng.next() % 28;
            const std::size_t classes = 2 + rng.next() % 3;
            TensorF32 pred = random_probs(rng, rows, classes);
            const TensorF32 gt = random_one_hot(rng, rows, classes);
            const TensorF32 analytic =
                focal_tversky_loss(pred, gt, lw.alpha_ft, lw.beta_ft, lw.gamma_ft, lw.epsilon).grad;
            check_tensor(st, pred, analytic, [&] {
                return focal_tversky_loss(pred, gt, lw.alpha_ft, lw.beta_ft, lw.gamma_ft,
                                          lw.epsilon)
                    .value;
            });
        }
        finish("focal_tversky", st, tensors_per_loss);
    }

    { // Tissue cross-entropy
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            TensorF32 logits = random_uniform(rng, {19}, -2.0, 2.0);
            const std::size_t cls = rng.next() % 19;
            const TensorF32 analytic = tissue_ce(logits, cls).grad;
            check_tensor(st, logits, analytic, [&] { return tissue_ce(logits, cls).value; });
        }
        finish("tissue_ce", st, tensors_per_loss);
    }

    { // MSE
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const auto [h, w] = shape_hw(8);
            TensorF32 pred = random_uniform(rng, {h, w, 2}, -1.0, 1.0);
            const TensorF32 gt = random_uniform(rng, {h, w, 2}, -1.0, 1.0);
            const TensorF32 analytic = mse_hv(pred, gt).grad;
            check_tensor(st, pred, analytic, [&] { return mse_hv(pred, gt).value; });
        }
        finish("mse", st, tensors_per_loss);
    }

    { // Weighted MSE (radial distances)
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const auto [h, w] = shape_hw(6);
            const std::size_t k = 3 + rng.next() % 2;
            TensorF32 pred = random_uniform(rng, {h, w, k}, 0.0, 8.0);
            const TensorF32 gt = random_uniform(rng, {h, w, k}, 0.0, 8.0);
            const TensorF32 wgt = random_mask(rng, h * w);
            const TensorF32 analytic = mse_weighted(pred, gt, wgt).grad;
            check_tensor(st, pred, analytic, [&] { return mse_weighted(pred, gt, wgt).value; });
        }
        finish("mse_weighted", st, tensors_per_loss);
    }

    { // MSGE
        CheckState st;
        st.corrupt_next = perturb_analytic;
        for (std::size_t t = 0; t < tensors_per_loss; ++t) {
            const auto [h, w] = shape_hw(8);
            TensorF32 pred = random_uniform(rng, {h, w, 2}, -1.0, 1.0);
            const TensorF32 gt = random_uniform(rng, {h, w, 2}, -1.0, 1.0);
            const TensorF32 mask = random_mask(rng, h * w);
            const TensorF32 analytic = msge_hv(pred, gt, mask).grad;
            check_tensor(st, pred, analytic, [&] { return msge_hv(pred, gt, mask).value; });
        }
        finish("msge", st, tensors_per_loss);
    }

    { // Composite HoVer-Net total, differenced against every input tensor.
        CheckState st;
        st.corrupt_next = perturb_analytic;
        const std::size_t runs = std::max<std::size_t>(1, tensors_per_loss / 5);
        for (std::size_t t = 0; t < runs; ++t) {
            const auto [h, w] = shape_hw(6);
            const std::size_t classes = 3;
            PredictionBundle pred;
            HovernetTargets gt;
            pred.np_map = random_probs(rng, h * w, 2);
            pred.np_map = TensorF32({h, w, 2}, pred.np_map.storage());
            pred.hv_map = random_uniform(rng, {h, w, 2}, -0.9, 0.9);
            pred.nt_map = random_probs(rng, h * w, classes);
            pred.nt_map = TensorF32({h, w, classes}, pred.nt_map.storage());
            pred.tissue_logits = random_uniform(rng, {19}, -2.0, 2.0);
            gt.np = TensorF32({h, w, 2}, random_one_hot(rng, h * w, 2).storage());
            gt.hv = random_uniform(rng, {h, w, 2}, -1.0, 1.0);
            gt.nt = TensorF32({h, w, classes}, random_one_hot(rng, h * w, classes).storage());
            gt.focus_mask = random_mask(rng, h * w);
            gt.tissue_class = rng.next() % 19;

            const HovernetLossGrads grads = total_loss_hovernet_grads(pred, gt, lw);
            auto eval = [&] { return total_loss_hovernet(pred, gt, lw); };
            check_tensor(st, pred.np_map, grads.d_np, eval);
            check_tensor(st, pred.hv_map, grads.d_hv, eval);
            check_tensor(st, pred.nt_map, grads.d_nt, eval);
            check_tensor(st, pred.tissue_logits, grads.d_tissue, eval);
        }
        finish("total_hovernet", st, runs);
    }

    { // Composite STARDIST/CPP-Net totals.
        CheckState st;
        st.corrupt_next = perturb_analytic;
        const std::size_t runs = std::max<std::size_t>(1, tensors_per_loss / 5);
        for (std::size_t t = 0; t < runs; ++t) {
            const auto [h, w] = shape_hw(6);
            const std::size_t classes = 3, rays = 4;
            const StarVariant variant = t % 2 == 0 ? StarVariant::stardist : StarVariant::cppnet;
            TensorF32 pd = TensorF32({h, w, 2}, random_probs(rng, h * w, 2).storage());
            TensorF32 rd = random_uniform(rng, {h, w, rays}, 0.0, 8.0);
            TensorF32 nt = TensorF32({h, w, classes}, random_probs(rng, h * w, classes).storage());
            StarDistTargets gt;
            gt.pd = TensorF32({h, w, 2}, random_one_hot(rng, h * w, 2).storage());
            gt.rd = random_uniform(rng, {h, w, rays}, 0.0, 8.0);
            gt.nt = TensorF32({h, w, classes}, random_one_hot(rng, h * w, classes).storage());

            const StarDistLossGrads grads = total_loss_stardist_grads(pd, rd, nt, gt, variant, lw);
            auto eval = [&] { return total_loss_stardist(pd, rd, nt, gt, variant, lw); };
            check_tensor(st, pd, grads.d_pd, eval);
            check_tensor(st, rd, grads.d_rd, eval);
            check_tensor(st, nt, grads.d_nt, eval);
        }
        finish("total_stardist", st, runs);
    }

    report.passed = true;
    for (const auto& c : report.cases) report.passed = report.passed && c.passed;
    return report;
}

std::string format_gradcheck(const GradCheckReport& report) {
    std::string out;
    char line[160];
    for (const auto& c : report.cases) {
        std::snprintf(line, sizeof line, "%-16s worst rel err %.3e over %zu gradients (%zu tensors): %s\n",
                      c.loss.c_str(), c.max_rel_err, c.gradients_checked, c.tensors,
                      c.passed ? "ok" : "FAIL");
        out += line;
    }
    std::snprintf(line, sizeof line, "gradcheck %s (threshold %.1e)\n",
                  report.passed ? "PASS" : "FAIL", report.threshold);
    out += line;
    return out;
}

} // namespace cellvit
