#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cellvit {

/// One training patch: its tissue class and the per-nuclei-class presence
/// vector (1 where the patch contains at least one nucleus of that class).
struct DatasetEntry {
    std::string id;
    std::size_t tissue_class = 0;
    std::vector<std::uint8_t> cells;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;

    std::size_t n_train() const { return entries.size(); }
    /// N_Cell = sum_i ||c_i||_1
    std::size_t n_cell() const;
    std::size_t num_cell_classes() const;

    static DatasetIndex from_json(const std::string& text);
    std::string to_json() const;
};

/// Eq-10 tissue balancing factor:
/// N_Train / (gamma_s * |{j : c_T,j = c_T,i}| + (1 - gamma_s) * N_Train).
double tissue_weight(const DatasetIndex& index, std::size_t i, double gamma_s);

/// Cell-class balancing factor:
/// (1-gamma_s) + gamma_s * sum_j c_ij * N_Cell / (gamma_s * sum_k c_kj + (1-gamma_s) * N_Cell).
double cell_weight(const DatasetIndex& index, std::size_t i, double gamma_s);

/// p_i = w_Tissue(i)/max_j w_Tissue(j) + w_Cell(i)/max_j w_Cell(j).
/// Throws DegenerateMax when either maximum is zero.
std::vector<double> sampling_weights(const DatasetIndex& index, double gamma_s);

/// Draws n_samples indices i.i.d. proportional to `weights` with an
/// alias-table sampler over a seeded mt19937_64; deterministic per seed.
std::vector<std::size_t> draw_epoch(const std::vector<double>& weights, std::size_t n_samples,
                                    std::uint64_t seed);

} // namespace cellvit
