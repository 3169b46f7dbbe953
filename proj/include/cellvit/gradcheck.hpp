#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cellvit {

struct GradCheckCase {
    std::string loss;
    double max_rel_err = 0.0;
    std::size_t gradients_checked = 0;
    std::size_t tensors = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double threshold = 1e-4;
    bool passed = false;
};

/// Central finite-difference verification of every analytic loss gradient
/// (BCE, Dice, Focal Tversky, CE, MSE, weighted MSE, MSGE and the two
/// composite totals) on seeded random tensors up to 8x8x4. Differences are
/// evaluated in double precision with exactly measured step widths.
/// `perturb_analytic` corrupts one gradient entry per loss as a negative
/// control; the corrupted run must fail.
GradCheckReport run_gradcheck(std::uint64_t seed, std::size_t tensors_per_loss = 50,
                              bool perturb_analytic = false);

/// Deterministic text report, one line per loss plus a verdict line.
std::string format_gradcheck(const GradCheckReport& report);

} // namespace cellvit
