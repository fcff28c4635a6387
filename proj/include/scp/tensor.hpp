#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scp/error.hpp"

namespace scp {

// Dense row-major float32 array with an explicit shape. Carries images,
// feature maps and model parameters alike; heavier math accumulates in
// double and stores back as float.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_count(shape_), 0.0f) {}

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != checked_count(shape_)) {
            throw config_error("tensor data length " + std::to_string(data_.size()) +
                               " does not match shape product " +
                               std::to_string(checked_count(shape_)));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    float& at2(int i, int j) { return data_[idx2(i, j)]; }
    float at2(int i, int j) const { return data_[idx2(i, j)]; }
    float& at3(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    float at3(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    float& at4(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    float at4(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    bool all_finite() const {
        for (const float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::int64_t checked_count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (const int d : shape) {
            if (d < 0) throw config_error("negative tensor extent");
            n *= d;
        }
        return n;
    }

    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

} // namespace scp
