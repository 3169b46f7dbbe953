#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cellvit/errors.hpp"

namespace cellvit {

/// Dense row-major float tensor of rank 1..4. The universal carrier for
/// images (H,W,C), maps, weight matrices and token sequences.
class TensorF32 {
public:
    TensorF32() = default;

    explicit TensorF32(std::vector<std::size_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(element_count(), fill);
    }

    TensorF32(std::vector<std::size_t> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != element_count())
            throw ShapeMismatch("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape product " + std::to_string(element_count()));
    }

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t e : shape_) n *= e;
        return shape_.empty() ? 0 : n;
    }

    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Rank-specific accessors; no bounds checks on the hot path.
    float& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    float at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    float& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    float at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const TensorF32& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4)
            throw ShapeMismatch("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
        for (std::size_t e : shape_)
            if (e == 0) throw ShapeMismatch("tensor extents must be >= 1");
    }

    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

inline void require_same_shape(const TensorF32& a, const TensorF32& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(what) + ": shape " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace cellvit
