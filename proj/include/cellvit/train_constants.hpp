#pragma once

namespace cellvit {

/// Published training-run settings, recorded for reference. Training itself
/// is out of scope for this library; these values document the regime the
/// loss weights and sampling defaults were tuned under.
struct TrainConstants {
    static constexpr double learning_rate = 3e-4;
    static constexpr double weight_decay = 1e-4;
    static constexpr double adam_beta1 = 0.85;
    static constexpr double adam_beta2 = 0.85;
    static constexpr int epochs = 130;
    static constexpr int batch_size = 16;
    static constexpr double lr_decay_per_epoch = 0.85;
    static constexpr double oversampling_gamma = 0.85;
};

} // namespace cellvit
