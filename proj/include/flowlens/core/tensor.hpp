#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "flowlens/core/common.hpp"
#include "flowlens/core/rng.hpp"

namespace flowlens {

using Shape = std::vector<int>;

inline long numel_of(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {
inline bool& grad_mode_flag() {
    static thread_local bool v = true;
    return v;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard disabling gradient recording (inference / oracle paths).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::vector<float> grad; // lazily sized to numel
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const std::vector<float>&)> backward_fn;

    long numel() const { return numel_of(shape); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(size_t(numel()), 0.f);
    }
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.f) {
        impl_ = std::make_shared<TensorImpl>();
        impl_->shape = std::move(shape);
        impl_->data = std::make_shared<std::vector<float>>(size_t(impl_->numel()), fill);
    }

    Tensor(Shape shape, std::vector<float> values) {
        impl_ = std::make_shared<TensorImpl>();
        impl_->shape = std::move(shape);
        FL_CHECK(long(values.size()) == impl_->numel(), DimensionError,
                 "tensor data size does not match shape " + shape_str(impl_->shape));
        impl_->data = std::make_shared<std::vector<float>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.f); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.f); }
    static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    static Tensor rand_uniform(Shape shape, Rng& rng, float lo = 0.f, float hi = 1.f) {
        Tensor t(shape);
        for (auto& x : t.raw()) x = rng.uniform(lo, hi);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, float mean = 0.f, float stddev = 1.f) {
        Tensor t(shape);
        for (auto& x : t.raw()) x = rng.normal(mean, stddev);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return int(impl_->shape.size()); }
    int dim(int i) const {
        if (i < 0) i += ndim();
        return impl_->shape[size_t(i)];
    }
    long numel() const { return impl_->numel(); }

    const float* cdata() const { return impl_->data->data(); }
    float* data() { return impl_->data->data(); }
    std::vector<float>& raw() { return *impl_->data; }
    const std::vector<float>& raw() const { return *impl_->data; }

    float item() const {
        FL_CHECK(numel() == 1, InvalidInput, "item() requires a scalar tensor");
        return (*impl_->data)[0];
    }

    float at(std::initializer_list<int> idx) const {
        return (*impl_->data)[size_t(flat_index(idx))];
    }
    float& at_mut(std::initializer_list<int> idx) {
        return (*impl_->data)[size_t(flat_index(idx))];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    Tensor& set_requires_grad(bool v = true) {
        FL_CHECK(impl_->parents.empty(), InvalidInput,
                 "requires_grad can only be toggled on leaf tensors");
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<float>& grad() const {
        FL_CHECK(has_grad(), InvalidInput, "tensor has no gradient");
        return impl_->grad;
    }
    std::vector<float>& grad_mut() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_) impl_->grad.clear();
    }

    // Shares storage, drops graph membership.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = std::make_shared<std::vector<float>>(*impl_->data);
        return t;
    }

    // Reverse-mode sweep from a scalar root. Deterministic: fixed topological
    // order, serial accumulation.
    void backward() {
        FL_CHECK(numel() == 1, InvalidInput, "backward() requires a scalar root");
        if (!impl_->requires_grad) return;

        std::vector<TensorImpl*> order;
        std::unordered_set<TensorImpl*> visited;
        struct Frame {
            TensorImpl* node;
            size_t next_parent;
        };
        std::vector<Frame> stack;
        visited.insert(impl_.get());
        stack.push_back({impl_.get(), 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                TensorImpl* p = f.node->parents[f.next_parent++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }

        impl_->ensure_grad();
        impl_->grad[0] += 1.f;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
        }
    }

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    long flat_index(std::initializer_list<int> idx) const {
        FL_CHECK(int(idx.size()) == ndim(), DimensionError, "index rank mismatch");
        long off = 0;
        int i = 0;
        for (int v : idx) {
            off = off * impl_->shape[size_t(i)] + v;
            ++i;
        }
        return off;
    }

    std::shared_ptr<TensorImpl> impl_;
};

// Wires up an op result: records parents and the backward closure only when
// grad mode is on and some parent participates in the graph.
inline Tensor make_op(Shape shape, std::vector<float> values,
                      std::initializer_list<Tensor> parents,
                      std::function<void(const std::vector<float>&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Tensor& p : parents)
        if (p.requires_grad()) any = true;
    if (!any) return out;
    out.impl()->requires_grad = true;
    for (const Tensor& p : parents) out.impl()->parents.push_back(p.impl());
    out.impl()->backward_fn = std::move(backward);
    return out;
}

inline std::vector<float>& grad_buf(Tensor& t) {
    t.impl()->ensure_grad();
    return t.impl()->grad;
}

} // namespace flowlens
