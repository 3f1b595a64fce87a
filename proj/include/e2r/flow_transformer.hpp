#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "e2r/tensor.hpp"
#include "e2r/text_embed.hpp"

namespace e2r {

struct ModelConfig {
    int image_size = 32;
    int patch_size = 4;
    int channels = 3;
    int d_model = 64;
    int heads = 4;
    int n_double_blocks = 2;
    int n_single_blocks = 2;
    int l_text = vocab::kTextLen;

    void validate() const;
    int grid() const { return image_size / patch_size; }
    int n_img_tokens() const { return grid() * grid(); }
    int patch_dim() const { return channels * patch_size * patch_size; }
    // noisy + context image tokens + text tokens
    int seq_len() const { return 2 * n_img_tokens() + l_text; }
};

// adapter factors bound to one projection; forward adds (alpha/r) * B(Ax)
struct LoraBinding {
    Tensor a;  // [r x in]
    Tensor b;  // [out x r]
    double scale = 1.0;
    bool enabled = true;
};

struct Linear {
    Tensor w;  // [out x in]
    Tensor bias;
    std::shared_ptr<LoraBinding> lora;

    static Linear init(int out, int in, Rng& rng, double stddev = 0.02);
    static Linear init_zero(int out, int in);
    Tensor operator()(const Tensor& x) const;
};

// scaled dot-product attention over full q/k/v, split into heads internally
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// lossless pixel <-> patch-token rearrangements (no projection)
Tensor patchify_rearrange(const Tensor& image, const ModelConfig& cfg);
Tensor unpatchify_rearrange(const Tensor& tokens, const ModelConfig& cfg);

// sinusoidal features of t in [0,1]; injective on a 1e-3 grid
std::vector<double> timestep_features(double t, int d_model);

struct DoubleBlock {
    Linear img_q, img_k, img_v, img_o;
    Linear txt_q, txt_k, txt_v, txt_o;
    Linear img_mlp1, img_mlp2;
    Linear txt_mlp1, txt_mlp2;
    Linear img_mod, txt_mod;  // t-conditioned shift/scale/gate, zero-init
};

struct SingleBlock {
    Linear q, k, v, o;
    Linear mlp1, mlp2;
    Linear mod;
};

struct AttentionSite {
    std::string name;  // e.g. "blocks.0.img_q"
    char role;         // 'q', 'k', 'v' or 'o'
    Linear* layer;
};

// Patch embedding, double-stream blocks with joint attention over
// (noisy tokens, context tokens, text tokens), single-stream blocks over the
// concatenated sequence, modulated output head over the noisy positions.
class FlowModel {
public:
    FlowModel() = default;
    FlowModel(const ModelConfig& cfg, uint64_t seed);

    // z_t, context: [S x S x 3]; txt_tokens: [l_text x d_model]; t in [0,1]
    Tensor forward(const Tensor& z_t, const Tensor& context, const Tensor& txt_tokens,
                   double t) const;

    const ModelConfig& config() const { return cfg_; }

    void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    int64_t param_count();
    void set_requires_grad(bool b);
    uint64_t checksum();

    std::vector<AttentionSite> attention_sites();

private:
    ModelConfig cfg_;
    Linear patch_proj_;  // patch_dim -> d_model
    Tensor pos_img_;     // [n_img_tokens x d_model], shared by both image streams
    Tensor stream_noisy_, stream_ctx_, stream_txt_;  // [1 x d_model] markers
    Linear time_in_, time_out_;
    std::vector<DoubleBlock> dblocks_;
    std::vector<SingleBlock> sblocks_;
    Linear final_mod_;  // d -> 2d, zero-init
    Linear head_;       // d -> patch_dim, zero-init
    std::shared_ptr<const std::vector<int64_t>> patch_index_;    // pixel -> token order
    std::shared_ptr<const std::vector<int64_t>> unpatch_index_;  // inverse
};

// the velocity-prediction pair the rest of the pipeline consumes
struct VelocityModel {
    ModelConfig cfg;
    FlowModel net;
    TextEmbedder text;

    VelocityModel() = default;
    VelocityModel(const ModelConfig& c, uint64_t seed)
        : cfg(c), net(c, seed), text(c.d_model, splitmix64(seed ^ 0x7e37ULL)) {}

    Tensor velocity(const Tensor& z_t, const Tensor& context, const std::vector<int>& prompt_ids,
                    double t) const {
        return net.forward(z_t, context, text.embed(prompt_ids), t);
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters();
};

}  // namespace e2r
