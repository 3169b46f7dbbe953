#include "cellvit/sampling.hpp"

#include <algorithm>
#include <random>

#include <json.hpp>

#include "cellvit/errors.hpp"
#include "detail/json_writer.hpp"

namespace cellvit {

namespace {

void check_gamma(double gamma_s) {
    if (!(gamma_s >= 0.0 && gamma_s <= 1.0))
        throw DomainError("gamma_s must lie in [0, 1]");
}

void check_index(const DatasetIndex& index, std::size_t i) {
    if (i >= index.entries.size())
        throw IndexOutOfRange("entry " + std::to_string(i) + " out of range for index of size " +
                              std::to_string(index.entries.size()));
}

} // namespace

std::size_t DatasetIndex::n_cell() const {
    std::size_t total = 0;
    for (const auto& e : entries)
        for (std::uint8_t c : e.cells) total += c != 0 ? 1 : 0;
    return total;
}

std::size_t DatasetIndex::num_cell_classes() const {
    std::size_t n = 0;
    for (const auto& e : entries) n = std::max(n, e.cells.size());
    return n;
}

DatasetIndex DatasetIndex::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    DatasetIndex index;
    for (const auto& je : j.at("entries")) {
        DatasetEntry e;
        e.id = je.at("id").get<std::string>();
        e.tissue_class = je.at("tissue").get<std::size_t>();
        for (const auto& c : je.at("cells"))
            e.cells.push_back(c.get<int>() != 0 ? 1 : 0);
        index.entries.push_back(std::move(e));
    }
    return index;
}

std::string DatasetIndex::to_json() const {
    detail::JsonWriter w;
    w.raw("{\"entries\":[");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) w.raw(",");
        w.raw("{");
        w.key("cells");
        w.raw("[");
        for (std::size_t c = 0; c < entries[i].cells.size(); ++c) {
            if (c) w.raw(",");
            w.integer(entries[i].cells[c]);
        }
        w.raw("],");
        w.key("id");
        w.string(entries[i].id);
        w.raw(",");
        w.key("tissue");
        w.integer(static_cast<std::int64_t>(entries[i].tissue_class));
        w.raw("}");
    }
    w.raw("]}");
    return w.take();
}

double tissue_weight(const DatasetIndex& index, std::size_t i, double gamma_s) {
    check_gamma(gamma_s);
    check_index(index, i);
    const double n_train = static_cast<double>(index.n_train());
    double class_count = 0.0;
    for (const auto& e : index.entries)
        if (e.tissue_class == index.entries[i].tissue_class) class_count += 1.0;
    return n_train / (gamma_s * class_count + (1.0 - gamma_s) * n_train);
}

double cell_weight(const DatasetIndex& index, std::size_t i, double gamma_s) {
    check_gamma(gamma_s);
    check_index(index, i);
    const double n_cell = static_cast<double>(index.n_cell());
    const std::size_t classes = index.num_cell_classes();

    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
        const bool present = j < index.entries[i].cells.size() && index.entries[i].cells[j] != 0;
        if (!present) continue;
        double class_total = 0.0;
        for (const auto& e : index.entries)
            if (j < e.cells.size() && e.cells[j] != 0) class_total += 1.0;
        sum += n_cell / (gamma_s * class_total + (1.0 - gamma_s) * n_cell);
    }
    return (1.0 - gamma_s) + gamma_s * sum;
}

std::vector<double> sampling_weights(const DatasetIndex& index, double gamma_s) {
    check_gamma(gamma_s);
    const std::size_t n = index.n_train();
    std::vector<double> wt(n), wc(n);
    double max_t = 0.0, max_c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        wt[i] = tissue_weight(index, i, gamma_s);
        wc[i] = cell_weight(index, i, gamma_s);
        max_t = std::max(max_t, wt[i]);
        max_c = std::max(max_c, wc[i]);
    }
    if (max_t <= 0.0 || max_c <= 0.0)
        throw DegenerateMax("sampling_weights: maximum weight is zero");

    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = wt[i] / max_t + wc[i] / max_c;
    return p;
}

std::vector<std::size_t> draw_epoch(const std::vector<double>& weights, std::size_t n_samples,
                                    std::uint64_t seed) {
    const std::size_t n = weights.size();
    if (n == 0) throw DomainError("draw_epoch: empty weight vector");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw DomainError("draw_epoch: negative weight");
        total += w;
    }
    if (total <= 0.0) throw DegenerateMax("draw_epoch: all weights zero");

    // Vose alias table over the nonzero weights: O(n) build, O(1) per draw.
    // Zero-weight items are excluded up front so rounding drift in the
    // residual handling can never make them drawable.
    std::vector<std::size_t> nz;
    for (std::size_t i = 0; i < n; ++i)
        if (weights[i] > 0.0) nz.push_back(i);
    const std::size_t m = nz.size();

    std::vector<double> prob(m);
    std::vector<std::size_t> alias(m);
    std::vector<double> scaled(m);
    for (std::size_t i = 0; i < m; ++i)
        scaled[i] = weights[nz[i]] * static_cast<double>(m) / total;

    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < m; ++i)
        (scaled[i] < 1.0 ? small : large).push_back(i);
    while (!small.empty() && !large.empty()) {
        const std::size_t s = small.back();
        small.pop_back();
        const std::size_t l = large.back();
        large.pop_back();
        prob[s] = scaled[s];
        alias[s] = l;
        scaled[l] = scaled[l] + scaled[s] - 1.0;
        (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (std::size_t i : large) {
        prob[i] = 1.0;
        alias[i] = i;
    }
    for (std::size_t i : small) {
        prob[i] = 1.0;
        alias[i] = i;
    }

    std::mt19937_64 rng(seed);
    const auto u01 = [&rng] {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    };

    std::vector<std::size_t> draws(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const std::size_t slot =
            std::min(static_cast<std::size_t>(u01() * static_cast<double>(m)), m - 1);
        draws[k] = nz[u01() < prob[slot] ? slot : alias[slot]];
    }
    return draws;
}

} // namespace cellvit
