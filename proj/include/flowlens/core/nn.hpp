#pragma once

// Thin parameter-owning wrappers over the functional ops, plus a flat
// name->tensor registry used by the optimizer and checkpointing.

#include <string>
#include <vector>

#include "flowlens/core/image_ops.hpp"
#include "flowlens/core/ops.hpp"

namespace flowlens {

struct ParamEntry {
    std::string name;
    Tensor tensor;
};

class ParamList {
public:
    void add(const std::string& name, Tensor& t) {
        entries_.push_back({name, t});
    }
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    Tensor find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw InvalidInput("parameter not found: " + name);
    }

    long total_scalars() const {
        long n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

private:
    std::vector<ParamEntry> entries_;
};

// fan-in scaled uniform init, the torch default for conv/linear layers
inline Tensor init_uniform(Shape shape, long fan_in, Rng& rng) {
    float bound = 1.f / std::sqrt(float(std::max<long>(fan_in, 1)));
    Tensor t = Tensor::rand_uniform(std::move(shape), rng, -bound, bound);
    t.set_requires_grad(true);
    return t;
}

struct Linear {
    Tensor w; // (in, out) so forward is a plain matmul
    Tensor b; // (out), optional
    int in = 0, out = 0;

    Linear() = default;
    Linear(int in_dim, int out_dim, Rng& rng, bool bias = true, bool zero_init = false)
        : in(in_dim), out(out_dim) {
        if (zero_init) {
            w = Tensor::zeros({in_dim, out_dim});
            w.set_requires_grad(true);
        } else {
            w = init_uniform({in_dim, out_dim}, in_dim, rng);
        }
        if (bias) {
            b = Tensor::zeros({out_dim});
            b.set_requires_grad(true);
        }
    }

    // Identity + small noise start; for square update projections.
    static Linear identity_init(int dim, Rng& rng, float noise = 1e-3f) {
        Linear l;
        l.in = dim;
        l.out = dim;
        l.w = Tensor::zeros({dim, dim});
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                l.w.at_mut({i, j}) = (i == j ? 1.f : 0.f) + rng.normal(0.f, noise);
        l.w.set_requires_grad(true);
        l.b = Tensor::zeros({dim});
        l.b.set_requires_grad(true);
        return l;
    }

    Tensor forward(const Tensor& x) const {
        Shape orig = x.shape();
        FL_CHECK(orig.back() == in, DimensionError,
                 "linear input dim " + std::to_string(orig.back()) + " != " + std::to_string(in));
        Tensor flat = reshape(x, {-1, in});
        Tensor y = matmul(flat, w);
        if (b.defined()) y = add(y, b);
        Shape out_shape = orig;
        out_shape.back() = out;
        return reshape(y, out_shape);
    }

    void params(const std::string& prefix, ParamList& list) {
        list.add(prefix + ".w", w);
        if (b.defined()) list.add(prefix + ".b", b);
    }
};

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, pad = 0, groups = 1;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, Rng& rng, int stride_ = 1, int pad_ = -1,
                int groups_ = 1, bool zero_init = false)
        : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_), groups(groups_) {
        long fan_in = long(cin / groups_) * k * k;
        if (zero_init) {
            w = Tensor::zeros({cout, cin / groups_, k, k});
            w.set_requires_grad(true);
        } else {
            w = init_uniform({cout, cin / groups_, k, k}, fan_in, rng);
        }
        b = Tensor::zeros({cout});
        b.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad, groups); }

    void params(const std::string& prefix, ParamList& list) {
        list.add(prefix + ".w", w);
        list.add(prefix + ".b", b);
    }
};

struct ConvTranspose2dLayer {
    Tensor w, b;
    int stride = 2, pad = 1;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(int cin, int cout, int k, Rng& rng, int stride_ = 2, int pad_ = 1)
        : stride(stride_), pad(pad_) {
        w = init_uniform({cin, cout, k, k}, long(cin) * k * k, rng);
        b = Tensor::zeros({cout});
        b.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return conv_transpose2d(x, w, b, stride, pad); }

    void params(const std::string& prefix, ParamList& list) {
        list.add(prefix + ".w", w);
        list.add(prefix + ".b", b);
    }
};

struct Conv3dLayer {
    Tensor w, b;
    int sd = 1, sh = 1, sw = 1, pd = 0, ph = 0, pw = 0;

    Conv3dLayer() = default;
    Conv3dLayer(int cin, int cout, int kd, int kh, int kw, Rng& rng, int sd_, int sh_, int sw_,
                int pd_, int ph_, int pw_)
        : sd(sd_), sh(sh_), sw(sw_), pd(pd_), ph(ph_), pw(pw_) {
        w = init_uniform({cout, cin, kd, kh, kw}, long(cin) * kd * kh * kw, rng);
        b = Tensor::zeros({cout});
        b.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return conv3d(x, w, b, sd, sh, sw, pd, ph, pw); }

    void params(const std::string& prefix, ParamList& list) {
        list.add(prefix + ".w", w);
        list.add(prefix + ".b", b);
    }
};

struct LayerNormParam {
    Tensor gamma, beta;
    float eps = 1e-6f;

    LayerNormParam() = default;
    explicit LayerNormParam(int dim) {
        gamma = Tensor::ones({dim});
        gamma.set_requires_grad(true);
        beta = Tensor::zeros({dim});
        beta.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

    void params(const std::string& prefix, ParamList& list) {
        list.add(prefix + ".gamma", gamma);
        list.add(prefix + ".beta", beta);
    }
};

} // namespace flowlens
