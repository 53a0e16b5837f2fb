#pragma once

// The Mix Focal Transformer block: pre-norm attention and feed-forward
// residuals, with an optional embedded clip-recurrent hub that queries the
// previous iteration between the two stages.

#include <memory>

#include "flowlens/ffn.hpp"
#include "flowlens/hub.hpp"

namespace flowlens {

class TransformerBlock {
public:
    TransformerBlock() = default;

    TransformerBlock(int embed_dim, int heads, AttentionVariant attention, FFNKind ffn_kind,
                     int patch, int stride, Rng& rng, int hidden_ratio = 4)
        : ce_(embed_dim), ln1_(embed_dim), ln2_(embed_dim),
          qkv_(embed_dim, 3 * embed_dim, rng),
          attn_(embed_dim, heads, attention, rng),
          ffn_(ffn_kind, embed_dim, patch, stride, rng, hidden_ratio) {}

    void attach_hub(std::shared_ptr<ClipRecurrentHub> hub) { hub_ = std::move(hub); }
    bool has_hub() const { return hub_ != nullptr; }
    ClipRecurrentHub* hub() { return hub_.get(); }
    const ClipRecurrentHub* hub() const { return hub_.get(); }

    // x: token grid; cache may be null when the block has no hub.
    TokenGrid forward(const TokenGrid& x, ClipCache* cache, const std::string& video_id,
                      AttentionDebug* debug = nullptr) const {
        Tensor n1 = ln1_.forward(x.tokens);
        Tensor qkv_out = qkv_.forward(n1); // (T, L, 3*C_e)
        Tensor q = slice(qkv_out, 2, 0, ce_);
        Tensor k = slice(qkv_out, 2, ce_, ce_);
        Tensor v = slice(qkv_out, 2, 2 * ce_, ce_);

        TokenGrid qg = x.with_tokens(q);
        TokenGrid kg = x.with_tokens(k);
        TokenGrid vg = x.with_tokens(v);
        Tensor att = attn_.forward(qg, kg, vg, debug);
        Tensor z_prime = add(att, x.tokens);

        if (hub_) {
            FL_CHECK(cache != nullptr, InvalidInput, "hub block requires a clip cache");
            z_prime = hub_->forward(x.with_tokens(z_prime), qg, k, v, *cache, video_id, debug);
        }

        Tensor n2 = ln2_.forward(z_prime);
        Tensor z = add(ffn_.forward(x, n2), z_prime);
        return x.with_tokens(z);
    }

    void params(const std::string& prefix, ParamList& list) {
        ln1_.params(prefix + ".ln1", list);
        ln2_.params(prefix + ".ln2", list);
        qkv_.params(prefix + ".qkv", list);
        attn_.params(prefix + ".attn", list);
        ffn_.params(prefix + ".ffn", list);
        if (hub_) hub_->params(prefix + ".hub", list);
    }

    MultiHeadAttention& attention() { return attn_; }
    FeedForward& feed_forward() { return ffn_; }

private:
    int ce_ = 0;
    LayerNormParam ln1_, ln2_;
    Linear qkv_;
    MultiHeadAttention attn_;
    FeedForward ffn_;
    std::shared_ptr<ClipRecurrentHub> hub_;
};

} // namespace flowlens
