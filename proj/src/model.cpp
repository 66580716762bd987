#include "model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "rng.hpp"

using nlohmann::json;

namespace comodal {

namespace {

bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

void ModelConfig::validate() const {
    require(is_power_of_two(patch_size) && patch_size >= 2, ErrorCode::config,
            "patch_size must be a power of two >= 2");
    require(embed_dim >= 1 && num_blocks >= 1 && num_heads >= 1, ErrorCode::config,
            "embed_dim, num_blocks and num_heads must be >= 1");
    require(embed_dim % num_heads == 0, ErrorCode::config, "num_heads must divide embed_dim");
    require(adapter_dim >= 1 && adapter_dim < embed_dim, ErrorCode::config,
            "adapter_dim must sit in [1, embed_dim)");
    require(num_classes >= 2, ErrorCode::config, "num_classes must be >= 2");
    require(mlp_ratio >= 1, ErrorCode::config, "mlp_ratio must be >= 1");
    for (int i = 0; i < 3; ++i)
        require(input_shape[i] >= patch_size && input_shape[i] % patch_size == 0,
                ErrorCode::config, "input_shape must be divisible by patch_size");
    require(static_cast<int>(decoder_channels.size()) == upsample_stages() + 1, ErrorCode::config,
            "decoder_channels must list log2(patch_size) + 1 widths");
    for (int c : decoder_channels)
        require(c >= 1, ErrorCode::config, "decoder widths must be >= 1");
}

std::array<int, 3> ModelConfig::token_grid() const {
    return {input_shape[0] / patch_size, input_shape[1] / patch_size, input_shape[2] / patch_size};
}

int ModelConfig::num_tokens() const {
    auto g = token_grid();
    return g[0] * g[1] * g[2];
}

int ModelConfig::upsample_stages() const {
    int s = 0;
    for (int p = patch_size; p > 1; p /= 2) ++s;
    return s;
}

NodePtr ParamStore::add(const std::string& name, std::vector<int> dims, Init init) {
    require(find(name) == nullptr, ErrorCode::invalid_argument,
            "duplicate parameter name: " + name);
    Tensor t(dims);
    Rng rng(Rng::mix(seed_, fnv1a(name)));
    switch (init) {
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(t.data(), t.data() + t.numel(), 1.0);
            break;
        case Init::xavier: {
            require(dims.size() == 2, ErrorCode::invalid_argument,
                    "xavier init expects a rank-2 weight");
            double bound = std::sqrt(6.0 / (dims[0] + dims[1]));
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
            break;
        }
        case Init::he_conv: {
            require(dims.size() == 5, ErrorCode::invalid_argument,
                    "he_conv init expects a rank-5 conv weight");
            double fan_in = static_cast<double>(dims[1]) * dims[2] * dims[3] * dims[4];
            double stddev = std::sqrt(2.0 / fan_in);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
            break;
        }
        case Init::normal_002:
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, 0.02);
            break;
    }
    NodePtr node = leaf(std::move(t), true);
    items_.emplace_back(name, node);
    return node;
}

NodePtr ParamStore::find(const std::string& name) const {
    for (const auto& [n, p] : items_)
        if (n == name) return p;
    return nullptr;
}

void ParamStore::zero_grads() {
    for (auto& [n, p] : items_) p->zero_grad();
}

namespace {

// ---- submodules -----------------------------------------------------------

struct PatchEmbed {
    const ModelConfig* cfg;
    NodePtr weight, bias, pos;

    PatchEmbed(ParamStore& ps, const std::string& prefix, const ModelConfig& c) : cfg(&c) {
        const int pvox = c.patch_size * c.patch_size * c.patch_size;
        weight = ps.add(prefix + ".weight", {pvox, c.embed_dim}, ParamStore::Init::xavier);
        bias = ps.add(prefix + ".bias", {c.embed_dim}, ParamStore::Init::zeros);
        pos = ps.add(prefix + ".pos", {c.num_tokens(), c.embed_dim}, ParamStore::Init::normal_002);
    }

    NodePtr forward(const Volume& vol) const {
        require(vol.shape == cfg->input_shape, ErrorCode::shape_mismatch,
                "encoder input shape does not match the model configuration");
        const int p = cfg->patch_size;
        auto grid = cfg->token_grid();
        const int n = cfg->num_tokens();
        const int pvox = p * p * p;
        Tensor patches({n, pvox});
        int t = 0;
        for (int gd = 0; gd < grid[0]; ++gd)
            for (int gh = 0; gh < grid[1]; ++gh)
                for (int gw = 0; gw < grid[2]; ++gw, ++t) {
                    double* row = patches.data() + static_cast<int64_t>(t) * pvox;
                    int i = 0;
                    for (int pd = 0; pd < p; ++pd)
                        for (int ph = 0; ph < p; ++ph)
                            for (int pw = 0; pw < p; ++pw, ++i)
                                row[i] = vol.at(gd * p + pd, gh * p + ph, gw * p + pw);
                }
        NodePtr tokens = add_row_bias(matmul(constant(std::move(patches)), weight), bias);
        return add(tokens, pos);
    }
};

struct MultiHeadAttention {
    NodePtr wqkv, bqkv, wo, bo;
    int dim, heads;

    MultiHeadAttention(ParamStore& ps, const std::string& prefix, const ModelConfig& c)
        : dim(c.embed_dim), heads(c.num_heads) {
        wqkv = ps.add(prefix + ".qkv_w", {dim, 3 * dim}, ParamStore::Init::xavier);
        bqkv = ps.add(prefix + ".qkv_b", {3 * dim}, ParamStore::Init::zeros);
        wo = ps.add(prefix + ".out_w", {dim, dim}, ParamStore::Init::xavier);
        bo = ps.add(prefix + ".out_b", {dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(const NodePtr& x) const {
        NodePtr qkv = add_row_bias(matmul(x, wqkv), bqkv);
        const int hd = dim / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<NodePtr> outs;
        outs.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            NodePtr q = slice_cols(qkv, h * hd, (h + 1) * hd);
            NodePtr k = slice_cols(qkv, dim + h * hd, dim + (h + 1) * hd);
            NodePtr v = slice_cols(qkv, 2 * dim + h * hd, 2 * dim + (h + 1) * hd);
            NodePtr att = softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
            outs.push_back(matmul(att, v));
        }
        return add_row_bias(matmul(concat_cols(outs), wo), bo);
    }
};

struct Mlp {
    NodePtr w1, b1, w2, b2;

    Mlp(ParamStore& ps, const std::string& prefix, const ModelConfig& c) {
        const int hidden = c.embed_dim * c.mlp_ratio;
        w1 = ps.add(prefix + ".w1", {c.embed_dim, hidden}, ParamStore::Init::xavier);
        b1 = ps.add(prefix + ".b1", {hidden}, ParamStore::Init::zeros);
        w2 = ps.add(prefix + ".w2", {hidden, c.embed_dim}, ParamStore::Init::xavier);
        b2 = ps.add(prefix + ".b2", {c.embed_dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(const NodePtr& x) const {
        return add_row_bias(matmul(gelu(add_row_bias(matmul(x, w1), b1)), w2), b2);
    }
};

// Bottleneck adapter on the 3-D token grid: 3x3x3 conv C->r, ReLU, 1x1x1
// conv r->C, residual. The up-projection starts at zero so a fresh adapter
// is the identity.
struct Adapter {
    const ModelConfig* cfg;
    NodePtr down_w, down_b, up_w, up_b;

    Adapter(ParamStore& ps, const std::string& prefix, const ModelConfig& c) : cfg(&c) {
        down_w = ps.add(prefix + ".down_w", {c.adapter_dim, c.embed_dim, 3, 3, 3},
                        ParamStore::Init::he_conv);
        down_b = ps.add(prefix + ".down_b", {c.adapter_dim}, ParamStore::Init::zeros);
        up_w = ps.add(prefix + ".up_w", {c.embed_dim, c.adapter_dim, 1, 1, 1},
                      ParamStore::Init::zeros);
        up_b = ps.add(prefix + ".up_b", {c.embed_dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(const NodePtr& tokens) const {
        NodePtr grid = tokens_to_grid(tokens, cfg->token_grid());
        NodePtr mid = relu(conv3d(grid, down_w, down_b));
        NodePtr up = conv3d(mid, up_w, up_b);
        return add(tokens, grid_to_tokens(up));
    }
};

struct ViTBlock {
    NodePtr ln1_g, ln1_b, ln2_g, ln2_b;
    MultiHeadAttention attn;
    Mlp mlp;
    Adapter adapter;

    ViTBlock(ParamStore& ps, const std::string& prefix, const ModelConfig& c)
        : attn(ps, prefix + ".attn", c), mlp(ps, prefix + ".mlp", c),
          adapter(ps, prefix + ".adapter", c) {
        ln1_g = ps.add(prefix + ".ln1_g", {c.embed_dim}, ParamStore::Init::ones);
        ln1_b = ps.add(prefix + ".ln1_b", {c.embed_dim}, ParamStore::Init::zeros);
        ln2_g = ps.add(prefix + ".ln2_g", {c.embed_dim}, ParamStore::Init::ones);
        ln2_b = ps.add(prefix + ".ln2_b", {c.embed_dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(NodePtr x, bool adapters_enabled) const {
        x = add(x, attn.forward(layer_norm(x, ln1_g, ln1_b)));
        x = add(x, mlp.forward(layer_norm(x, ln2_g, ln2_b)));
        if (adapters_enabled) x = adapter.forward(x);
        return x;
    }
};

struct Encoder {
    const ModelConfig* cfg;
    PatchEmbed embed;
    std::vector<ViTBlock> blocks;
    NodePtr ln_g, ln_b;

    Encoder(ParamStore& ps, const std::string& prefix, const ModelConfig& c)
        : cfg(&c), embed(ps, prefix + ".embed", c) {
        blocks.reserve(static_cast<size_t>(c.num_blocks));
        for (int i = 0; i < c.num_blocks; ++i)
            blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), c);
        ln_g = ps.add(prefix + ".ln_g", {c.embed_dim}, ParamStore::Init::ones);
        ln_b = ps.add(prefix + ".ln_b", {c.embed_dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(const Volume& vol) const {
        NodePtr x = embed.forward(vol);
        for (const auto& b : blocks) x = b.forward(x, cfg->adapters_enabled);
        x = layer_norm(x, ln_g, ln_b);
        return tokens_to_grid(x, cfg->token_grid());
    }
};

// Channel attention (global pool -> two-layer gate -> sigmoid) followed by a
// 3x3x3 conv on the gated features, residual-added.
struct MiaModule {
    int channels;
    NodePtr g1_w, g1_b, g2_w, g2_b, conv_w, conv_b;

    MiaModule(ParamStore& ps, const std::string& prefix, const ModelConfig& c)
        : channels(c.embed_dim) {
        const int reduced = std::max(1, c.embed_dim / 4);
        g1_w = ps.add(prefix + ".gate1_w", {c.embed_dim, reduced}, ParamStore::Init::xavier);
        g1_b = ps.add(prefix + ".gate1_b", {reduced}, ParamStore::Init::zeros);
        g2_w = ps.add(prefix + ".gate2_w", {reduced, c.embed_dim}, ParamStore::Init::xavier);
        g2_b = ps.add(prefix + ".gate2_b", {c.embed_dim}, ParamStore::Init::zeros);
        // Zero-init keeps the module at the identity until training opens it,
        // mirroring the adapter bottlenecks.
        conv_w = ps.add(prefix + ".conv_w", {c.embed_dim, c.embed_dim, 3, 3, 3},
                        ParamStore::Init::zeros);
        conv_b = ps.add(prefix + ".conv_b", {c.embed_dim}, ParamStore::Init::zeros);
    }

    NodePtr forward(const NodePtr& f) const {
        NodePtr pooled = reshape(global_avg_pool(f), {1, channels});
        NodePtr hidden = relu(add_row_bias(matmul(pooled, g1_w), g1_b));
        NodePtr gate = sigmoid(add_row_bias(matmul(hidden, g2_w), g2_b));
        NodePtr gated = scale_channels(f, reshape(gate, {channels}));
        return add(f, conv3d(gated, conv_w, conv_b));
    }
};

// Channel concatenation followed by a 1x1x1 conv 2C -> C. Initialized near
// the per-channel average of the two inputs plus a small symmetry-breaking
// perturbation.
struct FusionLayer {
    NodePtr w, b;

    FusionLayer(ParamStore& ps, const std::string& prefix, const ModelConfig& c) {
        w = ps.add(prefix + ".w", {c.embed_dim, 2 * c.embed_dim, 1, 1, 1},
                   ParamStore::Init::normal_002);
        b = ps.add(prefix + ".b", {c.embed_dim}, ParamStore::Init::zeros);
        for (int ch = 0; ch < c.embed_dim; ++ch) {
            w->value[static_cast<int64_t>(ch) * 2 * c.embed_dim + ch] += 0.5;
            w->value[static_cast<int64_t>(ch) * 2 * c.embed_dim + c.embed_dim + ch] += 0.5;
        }
    }

    NodePtr forward(const NodePtr& f_a, const NodePtr& f_b) const {
        require(f_a->value.same_shape(f_b->value), ErrorCode::shape_mismatch,
                "fusion inputs must have identical shapes");
        return conv3d(concat_channels(f_a, f_b), w, b);
    }
};

// Entry 1x1x1 projection, then per stage: x2 nearest upsample + 3x3x3 conv +
// ReLU, finishing with a 1x1x1 conv to K logit channels.
struct Decoder {
    const ModelConfig* cfg;
    NodePtr entry_w, entry_b, head_w, head_b;
    std::vector<NodePtr> stage_w, stage_b;

    Decoder(ParamStore& ps, const std::string& prefix, const ModelConfig& c, int in_channels)
        : cfg(&c) {
        const auto& dc = c.decoder_channels;
        entry_w = ps.add(prefix + ".entry_w", {dc[0], in_channels, 1, 1, 1},
                         ParamStore::Init::he_conv);
        entry_b = ps.add(prefix + ".entry_b", {dc[0]}, ParamStore::Init::zeros);
        for (int i = 0; i < c.upsample_stages(); ++i) {
            stage_w.push_back(ps.add(prefix + ".stage" + std::to_string(i) + "_w",
                                     {dc[i + 1], dc[i], 3, 3, 3}, ParamStore::Init::he_conv));
            stage_b.push_back(ps.add(prefix + ".stage" + std::to_string(i) + "_b", {dc[i + 1]},
                                     ParamStore::Init::zeros));
        }
        head_w = ps.add(prefix + ".head_w", {c.num_classes, dc.back(), 1, 1, 1},
                        ParamStore::Init::he_conv);
        head_b = ps.add(prefix + ".head_b", {c.num_classes}, ParamStore::Init::zeros);
    }

    NodePtr forward(const NodePtr& f) const {
        NodePtr x = relu(conv3d(f, entry_w, entry_b));
        for (size_t i = 0; i < stage_w.size(); ++i)
            x = relu(conv3d(upsample_nearest2(x), stage_w[i], stage_b[i]));
        return conv3d(x, head_w, head_b);
    }
};

}  // namespace

struct SegModel::Impl {
    std::unique_ptr<Encoder> enc_a;
    std::unique_ptr<Encoder> enc_b;  // null when the encoder is shared
    std::unique_ptr<MiaModule> mia_a, mia_b;
    std::unique_ptr<FusionLayer> fusion;
    std::unique_ptr<Decoder> dec_a, dec_b;
};

SegModel::SegModel(const ModelConfig& cfg, bool modality_specific_encoder, bool with_cmc,
                   uint64_t seed)
    : cfg_(cfg), modality_specific_(modality_specific_encoder), with_cmc_(with_cmc), seed_(seed),
      params_(std::make_unique<ParamStore>(seed)), impl_(std::make_unique<Impl>()) {
    cfg_.validate();
    if (modality_specific_) {
        impl_->enc_a = std::make_unique<Encoder>(*params_, "encoder_a", cfg_);
        impl_->enc_b = std::make_unique<Encoder>(*params_, "encoder_b", cfg_);
    } else {
        impl_->enc_a = std::make_unique<Encoder>(*params_, "encoder_shared", cfg_);
    }
    if (with_cmc_) {
        impl_->mia_a = std::make_unique<MiaModule>(*params_, "mia_a", cfg_);
        impl_->mia_b = std::make_unique<MiaModule>(*params_, "mia_b", cfg_);
        impl_->fusion = std::make_unique<FusionLayer>(*params_, "fusion", cfg_);
    }
    const int dec_in = cfg_.embed_dim * (with_cmc_ && cfg_.decoder_skip ? 2 : 1);
    impl_->dec_a = std::make_unique<Decoder>(*params_, "decoder_a", cfg_, dec_in);
    impl_->dec_b = std::make_unique<Decoder>(*params_, "decoder_b", cfg_, dec_in);
}

SegModel::~SegModel() = default;
SegModel::SegModel(SegModel&&) noexcept = default;
SegModel& SegModel::operator=(SegModel&&) noexcept = default;

Tensor SegModel::embed_tokens(const Volume& vol, Modality which) const {
    const Encoder& enc =
        (which == Modality::B && impl_->enc_b) ? *impl_->enc_b : *impl_->enc_a;
    return enc.embed.forward(vol)->value;
}

NodePtr SegModel::encode(const Volume& vol, Modality which) const {
    const Encoder& enc =
        (which == Modality::B && impl_->enc_b) ? *impl_->enc_b : *impl_->enc_a;
    return enc.forward(vol);
}

NodePtr SegModel::mia_forward(const NodePtr& f, Modality which) const {
    require(with_cmc_, ErrorCode::invalid_argument,
            "mia_forward: this model was built without the cross-modality modules");
    return (which == Modality::A ? *impl_->mia_a : *impl_->mia_b).forward(f);
}

NodePtr SegModel::fuse(const NodePtr& f_a, const NodePtr& f_b) const {
    require(with_cmc_, ErrorCode::invalid_argument,
            "fuse: this model was built without the cross-modality modules");
    return impl_->fusion->forward(f_a, f_b);
}

NodePtr SegModel::decode(const NodePtr& features, Modality which) const {
    return (which == Modality::A ? *impl_->dec_a : *impl_->dec_b).forward(features);
}

ModelOutputs SegModel::forward(const Volume& vol_a, const Volume& vol_b) const {
    ModelOutputs out;
    out.f_ds_a = impl_->enc_a->forward(vol_a);
    out.f_ds_b = (impl_->enc_b ? *impl_->enc_b : *impl_->enc_a).forward(vol_b);
    NodePtr in_a, in_b;
    if (with_cmc_) {
        NodePtr g_a = cfg_.mia_enabled ? impl_->mia_a->forward(out.f_ds_a) : out.f_ds_a;
        NodePtr g_b = cfg_.mia_enabled ? impl_->mia_b->forward(out.f_ds_b) : out.f_ds_b;
        NodePtr fused = impl_->fusion->forward(g_a, g_b);
        in_a = cfg_.decoder_skip ? concat_channels(fused, out.f_ds_a) : fused;
        in_b = cfg_.decoder_skip ? concat_channels(fused, out.f_ds_b) : fused;
    } else {
        in_a = out.f_ds_a;
        in_b = out.f_ds_b;
    }
    out.logits_a = impl_->dec_a->forward(in_a);
    out.logits_b = impl_->dec_b->forward(in_b);
    return out;
}

std::vector<Tensor> SegModel::snapshot_params() const {
    std::vector<Tensor> snap;
    snap.reserve(params_->items().size());
    for (const auto& [name, node] : params_->items()) snap.push_back(node->value);
    return snap;
}

void SegModel::restore_params(const std::vector<Tensor>& snapshot) {
    require(snapshot.size() == params_->items().size(), ErrorCode::invalid_argument,
            "parameter snapshot does not match the model");
    for (size_t i = 0; i < snapshot.size(); ++i) {
        auto& node = params_->items()[i].second;
        require(snapshot[i].same_shape(node->value), ErrorCode::shape_mismatch,
                "snapshot tensor shape mismatch at " + params_->items()[i].first);
        node->value = snapshot[i];
    }
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'C', 'M', 'C', 'K'};

json model_config_to_json(const ModelConfig& c) {
    return json{{"patch_size", c.patch_size},
                {"embed_dim", c.embed_dim},
                {"num_blocks", c.num_blocks},
                {"num_heads", c.num_heads},
                {"adapter_dim", c.adapter_dim},
                {"num_classes", c.num_classes},
                {"input_shape", c.input_shape},
                {"decoder_channels", c.decoder_channels},
                {"mlp_ratio", c.mlp_ratio},
                {"adapters_enabled", c.adapters_enabled},
                {"mia_enabled", c.mia_enabled},
                {"decoder_skip", c.decoder_skip}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.patch_size = j.at("patch_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.num_blocks = j.at("num_blocks").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.adapter_dim = j.at("adapter_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    auto shape = j.at("input_shape");
    for (int i = 0; i < 3; ++i) c.input_shape[i] = shape.at(i).get<int>();
    c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.adapters_enabled = j.at("adapters_enabled").get<bool>();
    c.mia_enabled = j.at("mia_enabled").get<bool>();
    c.decoder_skip = j.at("decoder_skip").get<bool>();
    return c;
}

void append_tensor_payload(std::string& out, const Tensor& t) {
    size_t bytes = static_cast<size_t>(t.numel()) * 8;
    size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t.data(), bytes);
}

}  // namespace

void save_checkpoint(const std::string& path, const SegModel& model,
                     const TrainerCheckpointState* trainer_state) {
    json header;
    header["model_config"] = model_config_to_json(model.config());
    header["modality_specific_encoder"] = model.modality_specific_encoder();
    header["with_cmc"] = model.with_cmc();
    header["init_seed"] = model.init_seed();
    json index = json::array();
    std::string payload;
    for (const auto& [name, node] : model.params().items()) {
        index.push_back(json{{"name", name}, {"dims", node->value.dims()},
                             {"offset", payload.size()}});
        append_tensor_payload(payload, node->value);
    }
    header["params"] = index;
    if (trainer_state) {
        json ts;
        ts["epoch"] = trainer_state->epoch;
        ts["step"] = trainer_state->step;
        ts["adam_t"] = trainer_state->adam_t;
        ts["best_val_dice"] = trainer_state->best_val_dice;
        ts["adam_m_offset"] = payload.size();
        for (const auto& t : trainer_state->adam_m) append_tensor_payload(payload, t);
        ts["adam_v_offset"] = payload.size();
        for (const auto& t : trainer_state->adam_v) append_tensor_payload(payload, t);
        header["trainer_state"] = ts;
    }
    std::string head = header.dump();
    std::string out;
    out.reserve(8 + head.size() + payload.size());
    out.append(kCkptMagic, 4);
    uint32_t len = static_cast<uint32_t>(head.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(len >> (8 * i)));
    out += head;
    out += payload;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::io, path + ": cannot open checkpoint for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) fail(ErrorCode::io, path + ": checkpoint write failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::not_found, path + ": cannot open checkpoint");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), kCkptMagic, 4) == 0, ErrorCode::format,
            path + ": not a checkpoint file");
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i)
        len |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 + i])) << (8 * i);
    require(bytes.size() >= 8 + static_cast<size_t>(len), ErrorCode::format,
            path + ": truncated checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(8, len));
    } catch (const json::exception& e) {
        fail(ErrorCode::format, path + ": bad checkpoint header: " + e.what());
    }
    const char* payload = bytes.data() + 8 + len;
    const size_t payload_size = bytes.size() - 8 - len;

    auto read_tensor = [&](const std::vector<int>& dims, size_t offset) {
        Tensor t(dims);
        size_t need = static_cast<size_t>(t.numel()) * 8;
        require(offset + need <= payload_size, ErrorCode::format,
                path + ": checkpoint payload out of range");
        std::memcpy(t.data(), payload + offset, need);
        return t;
    };

    LoadedCheckpoint out;
    ModelConfig cfg = model_config_from_json(header.at("model_config"));
    out.model = std::make_unique<SegModel>(cfg, header.at("modality_specific_encoder").get<bool>(),
                                           header.at("with_cmc").get<bool>(),
                                           header.at("init_seed").get<uint64_t>());
    const auto& items = out.model->params().items();
    const auto& index = header.at("params");
    require(index.size() == items.size(), ErrorCode::format,
            path + ": checkpoint parameter count does not match the architecture");
    for (size_t i = 0; i < items.size(); ++i) {
        const auto& entry = index.at(i);
        require(entry.at("name").get<std::string>() == items[i].first, ErrorCode::format,
                path + ": checkpoint key order mismatch at " + items[i].first);
        Tensor t = read_tensor(entry.at("dims").get<std::vector<int>>(),
                               entry.at("offset").get<size_t>());
        require(t.same_shape(items[i].second->value), ErrorCode::format,
                path + ": checkpoint tensor shape mismatch at " + items[i].first);
        items[i].second->value = std::move(t);
    }
    if (header.contains("trainer_state")) {
        const auto& ts = header.at("trainer_state");
        TrainerCheckpointState state;
        state.epoch = ts.at("epoch").get<int>();
        state.step = ts.at("step").get<int64_t>();
        state.adam_t = ts.at("adam_t").get<int64_t>();
        state.best_val_dice = ts.at("best_val_dice").get<double>();
        size_t off = ts.at("adam_m_offset").get<size_t>();
        for (const auto& [name, node] : items) {
            state.adam_m.push_back(read_tensor(node->value.dims(), off));
            off += static_cast<size_t>(node->value.numel()) * 8;
        }
        off = ts.at("adam_v_offset").get<size_t>();
        for (const auto& [name, node] : items) {
            state.adam_v.push_back(read_tensor(node->value.dims(), off));
            off += static_cast<size_t>(node->value.numel()) * 8;
        }
        out.trainer_state = std::move(state);
    }
    return out;
}

}  // namespace comodal
