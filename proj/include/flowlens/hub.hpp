#pragma once

// Clip-Recurrent Hub: caches the block's keys/values under stop-gradient and
// lets the next iteration's queries attend into them through 3D-Decoupled
// Cross Attention (time, horizontal strips, vertical strips in parallel).

#include <fstream>

#include "flowlens/attention.hpp"
#include "flowlens/core/serialize.hpp"

namespace flowlens {

struct DDCAConfig {
    int strip_width = 2;
    int pool_kernel = 4;
    int heads = 4;

    void validate(int embed_dim) const {
        FL_CHECK(heads >= 1 && embed_dim % heads == 0, ConfigError,
                 "config-error: head count must divide the embed dim");
    }
    int head_dim(int embed_dim) const { return embed_dim / heads; }
};

// Stop-gradient snapshot of one clip iteration's keys and values.
struct ClipCache {
    Tensor keys;   // (T, L, C_e), detached
    Tensor values; // same shape
    long iteration = -1;
    std::string video_id;

    bool empty() const { return iteration < 0; }

    void reset() {
        keys = Tensor();
        values = Tensor();
        iteration = -1;
        video_id.clear();
    }
};

// Cache transition: stores detached copies of the current projections. A new
// video id replaces the cache and restarts the iteration count.
inline void cache_update(ClipCache& cache, const Tensor& k, const Tensor& v,
                         const std::string& video_id) {
    FL_CHECK(k.shape() == v.shape(), DimensionError, "cache keys/values must match");
    if (!cache.empty() && cache.video_id == video_id) {
        FL_CHECK(cache.keys.shape() == k.shape(), InvalidInput,
                 "invalid-cache: token shape changed mid-video");
        cache.iteration += 1;
    } else {
        cache.iteration = 0;
    }
    cache.keys = k.detach();
    cache.values = v.detach();
    cache.video_id = video_id;
}

// Eq.-style parallel gather: Z = P_t(Z_time) + P_{h,w}([Z_h, Z_v]). All three
// branches read the same queries and the same cached keys/values.
inline Tensor ddca(const TokenGrid& q, const TokenGrid& k, const TokenGrid& v,
                   const DDCAConfig& cfg, const Linear& proj_t, const Linear& proj_hw,
                   AttentionDebug* debug = nullptr) {
    cfg.validate(q.channels());
    Tensor zt = temporal_attention(q, k, v, cfg.heads, debug);
    Tensor zh = strip_attention(q, k, v, StripAxis::horizontal, cfg.strip_width,
                                cfg.pool_kernel, cfg.heads, debug);
    Tensor zv = strip_attention(q, k, v, StripAxis::vertical, cfg.strip_width, cfg.pool_kernel,
                                cfg.heads, debug);
    return add(proj_t.forward(zt), proj_hw.forward(cat({zh, zv}, 2)));
}

class ClipRecurrentHub {
public:
    ClipRecurrentHub() = default;

    ClipRecurrentHub(int embed_dim, DDCAConfig cfg, Rng& rng) : cfg_(cfg), ce_(embed_dim) {
        cfg.validate(embed_dim);
        // update projections start near identity so cached semantics survive
        p_k_ = Linear::identity_init(embed_dim, rng);
        p_v_ = Linear::identity_init(embed_dim, rng);
        // gather and fusion projections start at zero: the hub is silent at
        // init and the block behaves as if it were absent
        p_t_ = Linear(embed_dim, embed_dim, rng, true, /*zero_init=*/true);
        p_hw_ = Linear(2 * embed_dim, embed_dim, rng, true, /*zero_init=*/true);
        p_fuse_ = Linear(2 * embed_dim, embed_dim, rng, true, /*zero_init=*/true);
    }

    const DDCAConfig& config() const { return cfg_; }

    // Cross-query against the cache without mutating it. Raises when the
    // cache has not been bootstrapped for this video.
    Tensor query(const TokenGrid& q, const ClipCache& cache,
                 AttentionDebug* debug = nullptr) const {
        FL_CHECK(!cache.empty(), InvalidInput,
                 "must-bootstrap-first: clip cache is empty");
        TokenGrid kg = q.with_tokens(p_k_.forward(cache.keys));
        TokenGrid vg = q.with_tokens(p_v_.forward(cache.values));
        return ddca(q, kg, vg, cfg_, p_t_, p_hw_, debug);
    }

    // Full hub pass on the block's attention-stage tokens z' with the block's
    // q/k/v projections. The query reads the snapshot cached by the previous
    // iteration (bootstrap: the current k/v); the cache is updated afterwards,
    // exactly one iteration per forward.
    Tensor forward(const TokenGrid& z_prime, const TokenGrid& q, const Tensor& k,
                   const Tensor& v, ClipCache& cache, const std::string& video_id,
                   AttentionDebug* debug = nullptr) const {
        const ClipCache* query_cache = &cache;
        ClipCache bootstrap;
        if (cache.empty() || cache.video_id != video_id) {
            // i = 0 for this video: self-query against the current projections
            bootstrap.keys = k.detach();
            bootstrap.values = v.detach();
            bootstrap.iteration = 0;
            bootstrap.video_id = video_id;
            query_cache = &bootstrap;
            if (cache.video_id != video_id) cache.reset();
        } else {
            FL_CHECK(cache.keys.shape() == k.shape(), InvalidInput,
                     "invalid-cache: token shape changed mid-video");
        }

        Tensor zbar = query(q, *query_cache, debug);
        Tensor fused = p_fuse_.forward(cat({zbar, z_prime.tokens}, 2));
        Tensor out = add(z_prime.tokens, fused);
        cache_update(cache, k, v, video_id);
        return out;
    }

    void params(const std::string& prefix, ParamList& list) {
        p_k_.params(prefix + ".p_k", list);
        p_v_.params(prefix + ".p_v", list);
        p_t_.params(prefix + ".p_t", list);
        p_hw_.params(prefix + ".p_hw", list);
        p_fuse_.params(prefix + ".p_fuse", list);
    }

    Linear& fuse_projection() { return p_fuse_; }
    Linear& proj_t() { return p_t_; }
    Linear& proj_hw() { return p_hw_; }

private:
    DDCAConfig cfg_;
    int ce_ = 0;
    Linear p_k_, p_v_;
    Linear p_t_, p_hw_;
    Linear p_fuse_;
};

// ---------------------------------------------------------------------------
// cache checkpointing (resumable streaming)

inline void save_cache(const ClipCache& cache, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    FL_CHECK(os.good(), IoError, "io-error: cannot write " + path);
    os.write("FLCACHE1", 8);
    int64_t iter = cache.iteration;
    os.write(reinterpret_cast<const char*>(&iter), 8);
    uint32_t id_len = uint32_t(cache.video_id.size());
    os.write(reinterpret_cast<const char*>(&id_len), 4);
    os.write(cache.video_id.data(), id_len);
    uint32_t rank = cache.empty() ? 0 : uint32_t(cache.keys.ndim());
    os.write(reinterpret_cast<const char*>(&rank), 4);
    if (!cache.empty()) {
        for (int d = 0; d < cache.keys.ndim(); ++d) {
            uint32_t dim = uint32_t(cache.keys.dim(d));
            os.write(reinterpret_cast<const char*>(&dim), 4);
        }
        os.write(reinterpret_cast<const char*>(cache.keys.cdata()),
                 std::streamsize(cache.keys.numel() * 4));
        os.write(reinterpret_cast<const char*>(cache.values.cdata()),
                 std::streamsize(cache.values.numel() * 4));
    }
    FL_CHECK(os.good(), IoError, "io-error: write failed " + path);
}

inline ClipCache load_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    FL_CHECK(is.good(), IoError, "io-error: cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    FL_CHECK(is.good() && std::memcmp(magic, "FLCACHE1", 8) == 0, IoError,
             "io-error: bad cache file " + path);
    ClipCache cache;
    int64_t iter = -1;
    is.read(reinterpret_cast<char*>(&iter), 8);
    cache.iteration = iter;
    uint32_t id_len = 0;
    is.read(reinterpret_cast<char*>(&id_len), 4);
    cache.video_id.resize(id_len);
    is.read(cache.video_id.data(), id_len);
    uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 4);
    if (rank > 0) {
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t dim = 0;
            is.read(reinterpret_cast<char*>(&dim), 4);
            shape[d] = int(dim);
        }
        cache.keys = Tensor(shape);
        cache.values = Tensor(shape);
        is.read(reinterpret_cast<char*>(cache.keys.data()),
                std::streamsize(cache.keys.numel() * 4));
        is.read(reinterpret_cast<char*>(cache.values.data()),
                std::streamsize(cache.values.numel() * 4));
    }
    FL_CHECK(is.good(), IoError, "io-error: truncated cache file " + path);
    return cache;
}

} // namespace flowlens
