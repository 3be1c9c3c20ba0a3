#pragma once

#include <cassert>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace df {

inline int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Copies are shallow (shared buffer); use clone()
// for a deep copy. Never mutated in place by autograd ops.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape)
        : shape_(std::move(shape)),
          buf_(std::make_shared<std::vector<T>>(numel_of(shape_), T(0))) {}

    TensorT(std::vector<int> shape, std::vector<T> values)
        : shape_(std::move(shape)),
          buf_(std::make_shared<std::vector<T>>(std::move(values))) {
        if ((int64_t)buf_->size() != numel_of(shape_))
            throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<int> shape, T v) {
        TensorT t(std::move(shape));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    bool defined() const { return buf_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return (int)shape_.size(); }

    int dim(int i) const {
        if (i < 0) i += ndim();
        assert(i >= 0 && i < ndim());
        return shape_[i];
    }

    int64_t numel() const { return buf_ ? (int64_t)buf_->size() : 0; }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }

    T& operator[](int64_t i) { return (*buf_)[i]; }
    const T& operator[](int64_t i) const { return (*buf_)[i]; }

    TensorT clone() const {
        if (!defined()) return {};
        TensorT t;
        t.shape_ = shape_;
        t.buf_ = std::make_shared<std::vector<T>>(*buf_);
        return t;
    }

    // Shares the buffer; -1 infers one dimension.
    TensorT reshape(std::vector<int> new_shape) const {
        int64_t known = 1;
        int wild = -1;
        for (size_t i = 0; i < new_shape.size(); ++i) {
            if (new_shape[i] == -1) {
                if (wild >= 0) throw std::invalid_argument("reshape: more than one -1");
                wild = (int)i;
            } else {
                known *= new_shape[i];
            }
        }
        if (wild >= 0) {
            if (known == 0 || numel() % known != 0)
                throw std::invalid_argument("reshape: cannot infer dimension");
            new_shape[wild] = (int)(numel() / known);
        }
        if (numel_of(new_shape) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(new_shape));
        TensorT t;
        t.shape_ = std::move(new_shape);
        t.buf_ = buf_;
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> buf_;
};

using Tensor = TensorT<float>;
using ITensor = TensorT<int32_t>;

inline void check_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape() != shape)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(shape) +
                                    ", got " + shape_str(t.shape()));
}

}  // namespace df
