#pragma once

// End-to-end generator: convolutional stem -> flow-guided explicit
// propagation over the local frames -> clip-recurrent transformer over local
// plus past-reference tokens -> upsampling decoder, composited over the
// known pixels. Includes the standard/small presets and the analytic FLOPs
// model used by the efficiency contract.

#include <memory>
#include <sstream>

#include "flowlens/block.hpp"
#include "flowlens/flow_net.hpp"
#include "flowlens/propagation.hpp"

namespace flowlens {

enum class HubPlacement { early, middle, late, all, none };

inline const char* to_string(HubPlacement p) {
    switch (p) {
        case HubPlacement::early: return "early";
        case HubPlacement::middle: return "middle";
        case HubPlacement::late: return "late";
        case HubPlacement::all: return "all";
        default: return "none";
    }
}

inline const char* to_string(FFNKind k) {
    switch (k) {
        case FFNKind::ffn: return "ffn";
        case FFNKind::f3n: return "f3n";
        case FFNKind::mix_ffn: return "mix_ffn";
        default: return "mixf3n";
    }
}

inline const char* to_string(AttentionKind k) {
    switch (k) {
        case AttentionKind::dense: return "dense";
        case AttentionKind::local_window: return "local_window";
        case AttentionKind::focal: return "focal";
        default: return "decoupled3d";
    }
}

struct ModelConfig {
    int channels = 128;  // C
    int embed_dim = 512; // C_e
    int num_blocks = 9;  // total, including the hub block
    int heads = 4;
    int patch = 7, stride = 3, pad = 2;
    int t_lf = 5, t_pf = 3;
    AttentionVariant attention{};
    FFNKind ffn = FFNKind::mixf3n;
    int ffn_ratio = 4;
    HubPlacement hub_placement = HubPlacement::early;
    DDCAConfig ddca{2, 4, 4};
    DeformableConfig dcn{};
    bool flow_propagation = true;
    bool dcn_compensation = true;
    FlowNetConfig flow{};
    bool train_flow = true;

    void validate() const {
        FL_CHECK(channels > 0 && embed_dim > 0 && num_blocks >= 1, ConfigError,
                 "config-error: sizes must be positive");
        FL_CHECK(embed_dim % heads == 0, ConfigError,
                 "config-error: embed dim must be divisible by the head count");
        FL_CHECK(channels % 2 == 0, ConfigError, "config-error: channels must be even");
        FL_CHECK(t_lf >= 1 && t_pf >= 0, ConfigError, "config-error: bad frame counts");
        flow.validate();
    }

    static ModelConfig standard() { return ModelConfig{}; }

    static ModelConfig small() {
        ModelConfig c;
        c.channels = 64;
        c.embed_dim = 256;
        c.num_blocks = 5;
        c.flow = FlowNetConfig::small();
        return c;
    }

    // desk-scale configuration for fast experiments and the overfit check
    static ModelConfig tiny() {
        ModelConfig c;
        c.channels = 32;
        c.embed_dim = 128;
        c.num_blocks = 2;
        c.attention.kind = AttentionKind::dense;
        c.ddca = DDCAConfig{1, 0, 4};
        c.dcn.groups = 2;
        c.flow = FlowNetConfig::tiny();
        c.ffn_ratio = 2;
        return c;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "channels=" << channels << "\n"
           << "embed_dim=" << embed_dim << "\n"
           << "num_blocks=" << num_blocks << "\n"
           << "heads=" << heads << "\n"
           << "patch=" << patch << "\n"
           << "stride=" << stride << "\n"
           << "pad=" << pad << "\n"
           << "t_lf=" << t_lf << "\n"
           << "t_pf=" << t_pf << "\n"
           << "attention=" << to_string(attention.kind) << "\n"
           << "window_h=" << attention.window_h << "\n"
           << "window_w=" << attention.window_w << "\n"
           << "focal_levels=" << attention.focal_levels << "\n"
           << "pool_h=" << attention.pool_h << "\n"
           << "pool_w=" << attention.pool_w << "\n"
           << "ffn=" << to_string(ffn) << "\n"
           << "ffn_ratio=" << ffn_ratio << "\n"
           << "hub_placement=" << to_string(hub_placement) << "\n"
           << "ddca_strip_width=" << ddca.strip_width << "\n"
           << "ddca_pool_kernel=" << ddca.pool_kernel << "\n"
           << "dcn_kernel=" << dcn.kernel << "\n"
           << "dcn_groups=" << dcn.groups << "\n"
           << "dcn_r_max=" << dcn.r_max << "\n"
           << "flow_propagation=" << (flow_propagation ? 1 : 0) << "\n"
           << "dcn_compensation=" << (dcn_compensation ? 1 : 0) << "\n"
           << "flow_levels=" << flow.levels << "\n"
           << "train_flow=" << (train_flow ? 1 : 0) << "\n";
        return os.str();
    }

    static ModelConfig from_text(const std::string& text);
};

inline ModelConfig ModelConfig::from_text(const std::string& text) {
    auto kv = parse_kv(text);
    ModelConfig c;
    auto geti = [&](const char* key, int& slot) {
        if (kv.count(key)) slot = std::stoi(kv[key]);
    };
    auto getb = [&](const char* key, bool& slot) {
        if (kv.count(key)) slot = std::stoi(kv[key]) != 0;
    };
    geti("channels", c.channels);
    geti("embed_dim", c.embed_dim);
    geti("num_blocks", c.num_blocks);
    geti("heads", c.heads);
    geti("patch", c.patch);
    geti("stride", c.stride);
    geti("pad", c.pad);
    geti("t_lf", c.t_lf);
    geti("t_pf", c.t_pf);
    if (kv.count("attention")) {
        std::string a = kv["attention"];
        c.attention.kind = a == "dense"          ? AttentionKind::dense
                           : a == "local_window" ? AttentionKind::local_window
                           : a == "decoupled3d"  ? AttentionKind::decoupled3d
                                                 : AttentionKind::focal;
    }
    geti("window_h", c.attention.window_h);
    geti("window_w", c.attention.window_w);
    geti("focal_levels", c.attention.focal_levels);
    geti("pool_h", c.attention.pool_h);
    geti("pool_w", c.attention.pool_w);
    if (kv.count("ffn")) {
        std::string f = kv["ffn"];
        c.ffn = f == "ffn"       ? FFNKind::ffn
                : f == "f3n"     ? FFNKind::f3n
                : f == "mix_ffn" ? FFNKind::mix_ffn
                                 : FFNKind::mixf3n;
    }
    geti("ffn_ratio", c.ffn_ratio);
    if (kv.count("hub_placement")) {
        std::string h = kv["hub_placement"];
        c.hub_placement = h == "early"    ? HubPlacement::early
                          : h == "middle" ? HubPlacement::middle
                          : h == "late"   ? HubPlacement::late
                          : h == "all"    ? HubPlacement::all
                                          : HubPlacement::none;
    }
    geti("ddca_strip_width", c.ddca.strip_width);
    geti("ddca_pool_kernel", c.ddca.pool_kernel);
    geti("dcn_kernel", c.dcn.kernel);
    geti("dcn_groups", c.dcn.groups);
    if (kv.count("dcn_r_max")) c.dcn.r_max = std::stof(kv["dcn_r_max"]);
    getb("flow_propagation", c.flow_propagation);
    getb("dcn_compensation", c.dcn_compensation);
    int levels = c.flow.levels;
    geti("flow_levels", levels);
    if (levels == 6)
        c.flow = FlowNetConfig::standard();
    else if (levels == 4)
        c.flow = FlowNetConfig::small();
    else if (levels == 3)
        c.flow = FlowNetConfig::tiny();
    getb("train_flow", c.train_flow);
    return c;
}

struct GeneratorOutput {
    Tensor frames;     // (T_lf, 3, H, W) in [0, 1]
    Tensor composited; // frames on masked pixels, the input elsewhere
    std::vector<Tensor> flows_fwd; // predicted (1, 2, H/4, W/4) per adjacent pair
    std::vector<Tensor> flows_bwd;
};

// One cache slot per hub-equipped block.
struct CacheBank {
    std::vector<ClipCache> slots;
    void reset() {
        for (auto& s : slots) s.reset();
    }
};

class FlowLensGenerator {
public:
    explicit FlowLensGenerator(const ModelConfig& cfg, uint64_t seed = 1)
        : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        int C = cfg.channels;

        flow_net_ = FlowCompletionNet(cfg.flow, rng);

        // even 4x4 kernels on the stride-2 stages: exact halving and
        // mirror-consistent downsampling grids
        stem_.emplace_back(4, C / 2, 3, rng, 1);
        stem_.emplace_back(C / 2, C / 2, 4, rng, 2, 1);
        stem_.emplace_back(C / 2, C / 2, 3, rng, 1);
        stem_.emplace_back(C / 2, C, 4, rng, 2, 1);
        stem_.emplace_back(C, C, 3, rng, 1);

        if (cfg.flow_propagation)
            prop_ = BidirectionalPropagation(C, cfg.dcn, rng, cfg.dcn_compensation);

        int token_dim = cfg.patch * cfg.patch * C;
        enc_proj_ = Linear(token_dim, cfg.embed_dim, rng);
        dec_proj_ = Linear(cfg.embed_dim, token_dim, rng);

        DDCAConfig ddca = cfg.ddca;
        ddca.heads = cfg.heads;
        for (int b = 0; b < cfg.num_blocks; ++b) {
            blocks_.emplace_back(cfg.embed_dim, cfg.heads, cfg.attention, cfg.ffn, cfg.patch,
                                 cfg.stride, rng, cfg.ffn_ratio);
            if (is_hub_block(b)) {
                blocks_.back().attach_hub(std::make_shared<ClipRecurrentHub>(cfg.embed_dim, ddca, rng));
                ++hub_count_;
            }
        }

        dec_up1_ = ConvTranspose2dLayer(C, C / 2, 4, rng, 2, 1);
        dec_conv1_ = Conv2dLayer(C / 2, C / 2, 3, rng, 1);
        dec_up2_ = ConvTranspose2dLayer(C / 2, C / 4, 4, rng, 2, 1);
        dec_out_ = Conv2dLayer(C / 4, 3, 3, rng, 1);
    }

    const ModelConfig& config() const { return cfg_; }
    int hub_count() const { return hub_count_; }

    // The offline evaluation protocol feeds windows wider than the training
    // clip; the token pipeline handles any length, so the strict count check
    // can be lifted there.
    void set_strict_frame_counts(bool strict) { strict_frame_counts_ = strict; }

    bool is_hub_block(int index) const {
        switch (cfg_.hub_placement) {
            case HubPlacement::early: return index == 0;
            case HubPlacement::middle: return index == cfg_.num_blocks / 2;
            case HubPlacement::late: return index == cfg_.num_blocks - 1;
            case HubPlacement::all: return true;
            case HubPlacement::none: return false;
        }
        return false;
    }

    CacheBank make_cache() const {
        CacheBank bank;
        bank.slots.resize(size_t(hub_count_));
        return bank;
    }

    // quarter-resolution feature extraction: masked frames + mask channel
    Tensor encode(const Tensor& masked_norm, const Tensor& masks) const {
        Tensor x = cat({masked_norm, masks}, 1);
        x = leaky_relu(stem_[0].forward(x), 0.2f);
        x = leaky_relu(stem_[1].forward(x), 0.2f);
        x = leaky_relu(stem_[2].forward(x), 0.2f);
        x = leaky_relu(stem_[3].forward(x), 0.2f);
        return stem_[4].forward(x);
    }

    Tensor decode(const Tensor& feats) const {
        Tensor x = leaky_relu(dec_up1_.forward(feats), 0.2f);
        x = leaky_relu(dec_conv1_.forward(x), 0.2f);
        x = leaky_relu(dec_up2_.forward(x), 0.2f);
        return dec_out_.forward(x);
    }

    // local_frames (T_lf, 3, H, W) and past_frames (T_pf, 3, H, W) in [0, 1];
    // masks (T_lf + T_pf, 1, H, W) with 1 marking pixels to fill.
    GeneratorOutput forward(const Tensor& local_frames, const Tensor& past_frames,
                            const Tensor& masks, CacheBank& cache,
                            const std::string& video_id) const {
        if (strict_frame_counts_) {
            FL_CHECK(local_frames.dim(0) == cfg_.t_lf, ConfigError,
                     "config-error: expected " + std::to_string(cfg_.t_lf) + " local frames");
            FL_CHECK(past_frames.dim(0) == cfg_.t_pf, ConfigError,
                     "config-error: expected " + std::to_string(cfg_.t_pf) + " past frames");
        }
        // the token pipeline itself is length-agnostic; the offline protocol
        // feeds wider windows than the training clip length
        int t_lf = local_frames.dim(0);
        int t_pf = past_frames.defined() && past_frames.numel() > 0 ? past_frames.dim(0) : 0;
        FL_CHECK(t_lf >= 1, DimensionError, "need at least one local frame");
        int T = t_lf + t_pf;
        FL_CHECK(masks.dim(0) == T && masks.dim(1) == 1, DimensionError,
                 "mask stack must be (T_lf+T_pf, 1, H, W)");
        FL_CHECK(int(cache.slots.size()) == hub_count_, ConfigError,
                 "config-error: cache bank size does not match hub count");
        int H = local_frames.dim(2), W = local_frames.dim(3);

        Tensor all_frames = t_pf > 0 ? cat({local_frames, past_frames}, 0) : local_frames;
        Tensor norm = add_scalar(mul_scalar(all_frames, 2.f), -1.f);
        Tensor keep = add_scalar(neg(masks), 1.f); // 1 - M
        Tensor masked = mul(norm, keep);

        // flow completion over adjacent masked local frames, both directions
        std::vector<Tensor> flows_fwd, flows_bwd;
        if (cfg_.flow_propagation && t_lf > 1) {
            Tensor lf_masked = slice(masked, 0, 0, t_lf);
            Tensor first = slice(lf_masked, 0, 0, t_lf - 1);
            Tensor second = slice(lf_masked, 0, 1, t_lf - 1);
            Tensor batch_i = cat({first, second}, 0);
            Tensor batch_j = cat({second, first}, 0);
            Tensor flows = flow_net_.estimate(batch_i, batch_j);
            if (!cfg_.train_flow) flows = flows.detach();
            for (int i = 0; i < t_lf - 1; ++i) flows_fwd.push_back(slice(flows, 0, i, 1));
            for (int i = 0; i < t_lf - 1; ++i)
                flows_bwd.push_back(slice(flows, 0, t_lf - 1 + i, 1));
        }

        Tensor feats = encode(masked, masks);
        Tensor lf_feats = slice(feats, 0, 0, t_lf);
        if (cfg_.flow_propagation && t_lf > 1)
            lf_feats = prop_.propagate(lf_feats, flows_fwd, flows_bwd);

        Tensor all_feats =
            t_pf > 0 ? cat({lf_feats, slice(feats, 0, t_lf, t_pf)}, 0) : lf_feats;

        TokenGrid grid = soft_split(all_feats, cfg_.patch, cfg_.stride, cfg_.pad);
        TokenGrid tokens = grid.with_tokens(enc_proj_.forward(grid.tokens));

        int hub_slot = 0;
        for (size_t b = 0; b < blocks_.size(); ++b) {
            ClipCache* slot = nullptr;
            if (blocks_[b].has_hub()) slot = &cache.slots[size_t(hub_slot++)];
            tokens = blocks_[b].forward(tokens, slot, video_id);
        }

        TokenGrid out_grid = grid.with_tokens(dec_proj_.forward(tokens.tokens));
        Tensor out_feats = soft_composite(out_grid);
        Tensor lf_out = slice(out_feats, 0, 0, t_lf);

        Tensor raw = decode(lf_out);
        FL_CHECK(raw.dim(2) == H && raw.dim(3) == W, DimensionError,
                 "decoder output resolution mismatch");
        Tensor frames01 = mul_scalar(add_scalar(clamp(raw, -1.f, 1.f), 1.f), 0.5f);

        Tensor lf_masks = slice(masks, 0, 0, t_lf);
        Tensor lf_input = local_frames;
        Tensor lf_keep = add_scalar(neg(lf_masks), 1.f);
        Tensor composited = add(mul(frames01, lf_masks), mul(lf_input, lf_keep));

        GeneratorOutput out;
        out.frames = frames01;
        out.composited = composited;
        out.flows_fwd = std::move(flows_fwd);
        out.flows_bwd = std::move(flows_bwd);
        return out;
    }

    void params(ParamList& list) {
        flow_net_.params("flow", list);
        for (size_t i = 0; i < stem_.size(); ++i)
            stem_[i].params("stem." + std::to_string(i), list);
        if (cfg_.flow_propagation) prop_.params("prop", list);
        enc_proj_.params("enc_proj", list);
        dec_proj_.params("dec_proj", list);
        for (size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].params("block." + std::to_string(b), list);
        dec_up1_.params("dec.up1", list);
        dec_conv1_.params("dec.conv1", list);
        dec_up2_.params("dec.up2", list);
        dec_out_.params("dec.out", list);
    }

    // parameters excluding the flow completion network (for the frozen-flow
    // training mode)
    void params_without_flow(ParamList& list) {
        ParamList all;
        params(all);
        for (auto& e : all.entries())
            if (e.name.rfind("flow.", 0) != 0) list.add(e.name, e.tensor);
    }

    void save(const std::string& path) {
        ParamList list;
        params(list);
        save_params(path, list, cfg_.to_text());
    }

    static FlowLensGenerator load(const std::string& path) {
        // peek at the embedded config first
        std::ifstream is(path, std::ios::binary);
        FL_CHECK(is.good(), IoError, "io-error: cannot read " + path);
        char magic[8];
        is.read(magic, 8);
        FL_CHECK(is.good() && std::memcmp(magic, "FLPARAMS", 8) == 0, IoError,
                 "io-error: bad checkpoint " + path);
        uint32_t version = 0, cfg_len = 0;
        is.read(reinterpret_cast<char*>(&version), 4);
        is.read(reinterpret_cast<char*>(&cfg_len), 4);
        std::string cfg_text(cfg_len, '\0');
        is.read(cfg_text.data(), cfg_len);
        is.close();

        FlowLensGenerator gen(ModelConfig::from_text(cfg_text));
        ParamList list;
        gen.params(list);
        load_params(path, list);
        return gen;
    }

    FlowCompletionNet& flow_net() { return flow_net_; }
    const FlowCompletionNet& flow_net() const { return flow_net_; }
    std::vector<TransformerBlock>& blocks() { return blocks_; }

private:
    ModelConfig cfg_;
    FlowCompletionNet flow_net_;
    std::vector<Conv2dLayer> stem_;
    BidirectionalPropagation prop_;
    Linear enc_proj_, dec_proj_;
    std::vector<TransformerBlock> blocks_;
    ConvTranspose2dLayer dec_up1_, dec_up2_;
    Conv2dLayer dec_conv1_, dec_out_;
    int hub_count_ = 0;
    bool strict_frame_counts_ = true;
};

// ---------------------------------------------------------------------------
// analytic FLOPs model (multiply-accumulates x2), mirroring the architecture
// above at the stated evaluation size

struct FlopsReport {
    double stem = 0, flow = 0, propagation = 0, blocks = 0, hub = 0, decoder = 0;
    double total() const { return stem + flow + propagation + blocks + hub + decoder; }
    double hub_fraction() const { return hub / total(); }
};

namespace detail {
inline double conv2d_flops(long cin, long cout, long k, long hout, long wout, long groups = 1) {
    return 2.0 * double(cout) * double(cin / groups) * double(k * k) * double(hout) *
           double(wout);
}
inline double linear_flops(long tokens, long in, long out) {
    return 2.0 * double(tokens) * double(in) * double(out);
}
inline double attention_flops(long queries, long keys, long dim) {
    // QK^T plus attn*V
    return 2.0 * 2.0 * double(queries) * double(keys) * double(dim);
}
} // namespace detail

inline FlopsReport count_flops(const ModelConfig& cfg, int H = 240, int W = 432) {
    using detail::attention_flops;
    using detail::conv2d_flops;
    using detail::linear_flops;

    FlopsReport r;
    int C = cfg.channels;
    int T = cfg.t_lf + cfg.t_pf;
    int H2 = (H + 1) / 2, W2 = (W + 1) / 2;
    int H4 = (H2 + 1) / 2, W4 = (W2 + 1) / 2;

    // stem per frame
    double stem_one = conv2d_flops(4, C / 2, 3, H, W) + conv2d_flops(C / 2, C / 2, 4, H2, W2) +
                      conv2d_flops(C / 2, C / 2, 3, H2, W2) + conv2d_flops(C / 2, C, 4, H4, W4) +
                      conv2d_flops(C, C, 3, H4, W4);
    r.stem = stem_one * T;

    // flow completion network: shared encoder on both frames + refine heads
    if (cfg.flow_propagation && cfg.t_lf > 1) {
        double one_pair = 0;
        int levels = cfg.flow.levels;
        int h = H, w = W, cin = 3;
        std::vector<std::pair<int, int>> level_dims;
        for (int l = 0; l < levels; ++l) {
            int wdt = cfg.flow.widths[size_t(l)];
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            one_pair += 2.0 * (conv2d_flops(cin, wdt, 3, h, w) + conv2d_flops(wdt, wdt, 3, h, w));
            level_dims.push_back({h, w});
            cin = wdt;
        }
        for (int l = levels; l >= 2; --l) {
            int wdt = cfg.flow.widths[size_t(l - 1)];
            auto [lh, lw] = level_dims[size_t(l - 1)];
            int in_ch = 2 * wdt + 2;
            one_pair += conv2d_flops(in_ch, cfg.flow.refine_width, 3, lh, lw) +
                        conv2d_flops(cfg.flow.refine_width, cfg.flow.refine_width, 3, lh, lw) +
                        conv2d_flops(cfg.flow.refine_width, 2, 3, lh, lw);
        }
        r.flow = one_pair * 2.0 * double(cfg.t_lf - 1);
    }

    // explicit propagation per chain step
    if (cfg.flow_propagation && cfg.t_lf > 1) {
        double step = 0;
        if (cfg.dcn_compensation) {
            int K = cfg.dcn.kernel * cfg.dcn.kernel;
            int in_ch = 2 * C + 2;
            step += conv2d_flops(in_ch, C, 3, H4, W4) +
                    conv2d_flops(C, 2 * K * cfg.dcn.groups, 3, H4, W4); // offsets
            step += conv2d_flops(in_ch, C, 3, H4, W4) +
                    conv2d_flops(C, K * cfg.dcn.groups, 3, H4, W4); // modulation
            step += 2.0 * double(C) * K * 4.0 * double(H4) * double(W4); // deform sampling
            step += linear_flops(long(H4) * W4, long(C) * K, C);         // dcn projection
            step += conv2d_flops(2 * C, C, 3, H4, W4) + conv2d_flops(C, C, 3, H4, W4);
        }
        step += 2.0 * double(C) * 4.0 * double(H4) * double(W4); // warp
        r.propagation = step * 2.0 * double(cfg.t_lf - 1);
        r.propagation += conv2d_flops(2 * C, C, 1, H4, W4) * cfg.t_lf; // fusion
    }

    // token geometry
    int gh, gw;
    token_grid_dims(H4, W4, cfg.patch, cfg.stride, cfg.pad, gh, gw);
    long L = long(gh) * gw;
    long S = L * T;
    int Ce = cfg.embed_dim;
    int token_dim = cfg.patch * cfg.patch * C;

    r.blocks += linear_flops(S, token_dim, Ce) + linear_flops(S, Ce, token_dim);

    // per-block cost
    double block_one = linear_flops(S, Ce, 3 * Ce); // qkv
    switch (cfg.attention.kind) {
        case AttentionKind::dense:
            block_one += attention_flops(S, S, Ce);
            break;
        case AttentionKind::local_window: {
            long wt = long(cfg.attention.window_h) * cfg.attention.window_w * T;
            block_one += attention_flops(S, wt, Ce);
            break;
        }
        case AttentionKind::focal: {
            long wt = long(std::min(cfg.attention.window_h, gh)) *
                      std::min(cfg.attention.window_w, gw) * T;
            long glob = cfg.attention.focal_levels > 0
                            ? (long(gh) / cfg.attention.pool_h) * (gw / cfg.attention.pool_w) * T
                            : 0;
            block_one += attention_flops(S, wt + glob, Ce);
            break;
        }
        case AttentionKind::decoupled3d: {
            block_one += attention_flops(S, T, Ce); // temporal
            long sk_h = long(cfg.attention.strip_width) * gw +
                        (cfg.attention.strip_pool > 0 ? gw / cfg.attention.strip_pool : 0);
            long sk_v = long(cfg.attention.strip_width) * gh +
                        (cfg.attention.strip_pool > 0 ? gh / cfg.attention.strip_pool : 0);
            block_one += attention_flops(S, sk_h, Ce) + attention_flops(S, sk_v, Ce);
            block_one += linear_flops(S, Ce, Ce) + linear_flops(S, 2 * Ce, Ce);
            break;
        }
    }
    block_one += linear_flops(S, Ce, Ce); // output projection

    // feed-forward
    {
        int area = cfg.patch * cfg.patch;
        long hidden;
        if (cfg.ffn == FFNKind::f3n || cfg.ffn == FFNKind::mixf3n) {
            long c_plane = 2 * ((long(cfg.ffn_ratio) * Ce + 2 * area - 1) / (2 * area));
            hidden = c_plane * area;
            if (cfg.ffn == FFNKind::mixf3n) {
                long half = c_plane / 2;
                block_one += conv2d_flops(half, half, 3, H4 + 2 * cfg.pad, W4 + 2 * cfg.pad, half) *
                             T;
                block_one += conv2d_flops(half, half, 5, H4 + 2 * cfg.pad, W4 + 2 * cfg.pad, half) *
                             T;
            }
        } else {
            hidden = long(cfg.ffn_ratio) * Ce;
            if (cfg.ffn == FFNKind::mix_ffn) {
                long half = hidden / 2;
                block_one += conv2d_flops(half, half, 3, gh, gw, half) * T;
                block_one += conv2d_flops(half, half, 5, gh, gw, half) * T;
            }
        }
        block_one += linear_flops(S, Ce, hidden) + linear_flops(S, hidden, Ce);
    }
    r.blocks += block_one * cfg.num_blocks;

    // clip-recurrent hub: kv update projections, three decoupled branches,
    // gather projections, fusion
    int hubs = cfg.hub_placement == HubPlacement::all ? cfg.num_blocks
               : cfg.hub_placement == HubPlacement::none ? 0
                                                         : 1;
    if (hubs > 0) {
        double hub_one = 2.0 * linear_flops(S, Ce, Ce); // p_k, p_v
        hub_one += attention_flops(S, T, Ce);           // temporal branch
        long sk_h = long(cfg.ddca.strip_width) * gw +
                    (cfg.ddca.pool_kernel > 0 ? gw / cfg.ddca.pool_kernel : 0);
        long sk_v = long(cfg.ddca.strip_width) * gh +
                    (cfg.ddca.pool_kernel > 0 ? gh / cfg.ddca.pool_kernel : 0);
        hub_one += attention_flops(S, sk_h, Ce) + attention_flops(S, sk_v, Ce);
        hub_one += linear_flops(S, Ce, Ce);      // P_t
        hub_one += linear_flops(S, 2 * Ce, Ce);  // P_{h,w}
        hub_one += linear_flops(S, 2 * Ce, Ce);  // fusion
        r.hub = hub_one * hubs;
    }

    // decoder on the local frames
    double dec_one = 2.0 * double(C) * double(C / 2) * 16.0 * double(H4) * double(W4) +
                     conv2d_flops(C / 2, C / 2, 3, H2, W2) +
                     2.0 * double(C / 2) * double(C / 4) * 16.0 * double(H2) * double(W2) +
                     conv2d_flops(C / 4, 3, 3, H, W);
    r.decoder = dec_one * cfg.t_lf;

    return r;
}

} // namespace flowlens
