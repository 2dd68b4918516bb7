#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tavr {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
class Tape;

// Immutable value, optionally attached to a tape node. Rank 0 is a scalar.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
        if (data.size() != numel(shape_))
            throw std::runtime_error("Tensor: data size does not match shape " + shape_str(shape_));
        for (T v : data)
            if (!std::isfinite(v)) throw std::runtime_error("Tensor: non-finite value in input data");
        data_ = std::make_shared<const std::vector<T>>(std::move(data));
    }

    static Tensor zeros(Shape shape) {
        size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(Shape shape, T value) {
        size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_ ? data_->size() : 0; }
    bool empty() const { return !data_; }

    size_t rows() const {
        require_rank2("rows");
        return shape_[0];
    }
    size_t cols() const {
        require_rank2("cols");
        return shape_[1];
    }

    const std::vector<T>& vec() const {
        if (!data_) throw std::runtime_error("Tensor: access to empty tensor");
        return *data_;
    }
    const std::shared_ptr<const std::vector<T>>& data_ptr() const { return data_; }

    T at(size_t i) const { return vec().at(i); }
    T at(size_t i, size_t j) const {
        require_rank2("at");
        return vec().at(i * shape_[1] + j);
    }
    T item() const {
        if (size() != 1) throw std::runtime_error("Tensor::item: tensor is not a scalar");
        return vec()[0];
    }

    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }
    bool on_tape() const { return tape_ != nullptr; }

    // Used by ops and Tape when recording; not part of normal call sites.
    void attach(Tape<T>* tape, int node) {
        tape_ = tape;
        node_ = node;
    }
    static Tensor wrap(Shape shape, std::shared_ptr<const std::vector<T>> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

private:
    void require_rank2(const char* what) const {
        if (shape_.size() != 2) throw std::runtime_error(std::string("Tensor::") + what + ": rank-2 tensor required");
    }

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape. Nodes are recorded in creation order, which is a valid
// topological order, so backward is a single reverse sweep that visits each
// node exactly once.
template <typename T>
class Tape {
public:
    using Pull = std::function<void(const std::vector<T>&, Tape<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor<T> leaf(const Tensor<T>& value) {
        if (value.on_tape()) throw std::runtime_error("Tape::leaf: value already on a tape");
        Tensor<T> out = Tensor<T>::wrap(value.shape(), value.data_ptr());
        out.attach(this, record(nullptr));
        return out;
    }

    int record(Pull pull) {
        nodes_.push_back(std::move(pull));
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<T>& accum(int node, size_t size) {
        auto& g = grads_.at(node);
        if (g.empty()) g.assign(size, T(0));
        return g;
    }

    void backward(const Tensor<T>& loss) {
        if (loss.tape() != this) throw std::runtime_error("Tape::backward: loss is not on this tape");
        if (loss.size() != 1) throw std::runtime_error("Tape::backward: loss must be a scalar");
        if (backward_done_) throw std::runtime_error("Tape::backward: called twice without reset");
        backward_done_ = true;
        grads_.at(loss.node()).assign(1, T(1));
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (grads_[i].empty() || !nodes_[i]) continue;
            nodes_[i](grads_[i], *this);
        }
    }

    // Gradient of the last backward() w.r.t. a tensor on this tape.
    // Tensors the loss never reached get zeros.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (t.tape() != this) throw std::runtime_error("Tape::grad: tensor is not on this tape");
        const auto& g = grads_.at(t.node());
        if (g.empty()) return Tensor<T>::zeros(t.shape());
        return Tensor<T>(t.shape(), g);
    }

    void reset() {
        for (auto& g : grads_) g.clear();
        backward_done_ = false;
    }

private:
    std::vector<Pull> nodes_;
    std::vector<std::vector<T>> grads_;
    bool backward_done_ = false;
};

}  // namespace tavr
