#include "e2r/flow_transformer.hpp"

#include <cmath>

namespace e2r {

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw ShapeError("model config: image_size must be a positive multiple of patch_size");
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
        throw ShapeError("model config: d_model must be a positive multiple of heads");
    if (channels != 3) throw ShapeError("model config: only 3-channel images are supported");
    if (n_double_blocks < 0 || n_single_blocks < 0 || n_double_blocks + n_single_blocks == 0)
        throw ShapeError("model config: need at least one block");
    if (l_text <= 0) throw ShapeError("model config: l_text must be positive");
}

Linear Linear::init(int out, int in, Rng& rng, double stddev) {
    Linear l;
    l.w = Tensor::trunc_normal({out, in}, rng, stddev).set_requires_grad(true);
    l.bias = Tensor::zeros({out}).set_requires_grad(true);
    return l;
}

Linear Linear::init_zero(int out, int in) {
    Linear l;
    l.w = Tensor::zeros({out, in}).set_requires_grad(true);
    l.bias = Tensor::zeros({out}).set_requires_grad(true);
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = linear(x, w, bias);
    if (lora && lora->enabled) {
        Tensor down = linear(x, lora->a);
        Tensor up = linear(down, lora->b);
        y = add(y, scale(up, lora->scale));
    }
    return y;
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    int d = q.dim(1);
    if (d % heads != 0) throw ShapeError("attention: width not divisible by head count");
    int dh = d / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_bt(qh, kh), inv_sqrt);
        Tensor weights = softmax(scores, -1);
        outs.push_back(matmul(weights, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

namespace {

// patch vector layout: [dy][dx][c], c fastest
std::shared_ptr<std::vector<int64_t>> build_patch_index(const ModelConfig& cfg) {
    int s = cfg.image_size, p = cfg.patch_size, g = cfg.grid();
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(s) * s * 3);
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < 3; ++c)
                        idx->push_back(
                            (static_cast<int64_t>(pr * p + dy) * s + (pc * p + dx)) * 3 + c);
    return idx;
}

std::shared_ptr<std::vector<int64_t>> invert_index(const std::vector<int64_t>& fwd) {
    auto inv = std::make_shared<std::vector<int64_t>>(fwd.size());
    for (size_t i = 0; i < fwd.size(); ++i) (*inv)[static_cast<size_t>(fwd[i])] = static_cast<int64_t>(i);
    return inv;
}

}  // namespace

Tensor patchify_rearrange(const Tensor& image, const ModelConfig& cfg) {
    Shape expect = {cfg.image_size, cfg.image_size, 3};
    if (image.shape() != expect)
        throw ShapeError("patchify: expected image of shape " + shape_str(expect) + ", got " +
                         shape_str(image.shape()));
    auto idx = build_patch_index(cfg);
    return permute_elements(image, idx, {cfg.n_img_tokens(), cfg.patch_dim()});
}

Tensor unpatchify_rearrange(const Tensor& tokens, const ModelConfig& cfg) {
    Shape expect = {cfg.n_img_tokens(), cfg.patch_dim()};
    if (tokens.shape() != expect)
        throw ShapeError("unpatchify: expected tokens of shape " + shape_str(expect) + ", got " +
                         shape_str(tokens.shape()));
    auto idx = invert_index(*build_patch_index(cfg));
    return permute_elements(tokens, idx, {cfg.image_size, cfg.image_size, 3});
}

std::vector<double> timestep_features(double t, int d_model) {
    int half = d_model / 2;
    std::vector<double> f(static_cast<size_t>(d_model), 0.0);
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(std::log(1000.0) * i / std::max(1, half - 1));
        f[static_cast<size_t>(i)] = std::sin(t * freq);
        f[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    if (d_model % 2 == 1) f[static_cast<size_t>(d_model - 1)] = t;
    return f;
}

FlowModel::FlowModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    int d = cfg_.d_model;
    patch_proj_ = Linear::init(d, cfg_.patch_dim(), rng);
    pos_img_ = Tensor::trunc_normal({cfg_.n_img_tokens(), d}, rng, 0.02).set_requires_grad(true);
    stream_noisy_ = Tensor::trunc_normal({1, d}, rng, 0.02).set_requires_grad(true);
    stream_ctx_ = Tensor::trunc_normal({1, d}, rng, 0.02).set_requires_grad(true);
    stream_txt_ = Tensor::trunc_normal({1, d}, rng, 0.02).set_requires_grad(true);
    time_in_ = Linear::init(d, d, rng);
    time_out_ = Linear::init(d, d, rng);
    dblocks_.resize(static_cast<size_t>(cfg_.n_double_blocks));
    for (auto& b : dblocks_) {
        b.img_q = Linear::init(d, d, rng);
        b.img_k = Linear::init(d, d, rng);
        b.img_v = Linear::init(d, d, rng);
        b.img_o = Linear::init(d, d, rng);
        b.txt_q = Linear::init(d, d, rng);
        b.txt_k = Linear::init(d, d, rng);
        b.txt_v = Linear::init(d, d, rng);
        b.txt_o = Linear::init(d, d, rng);
        b.img_mlp1 = Linear::init(4 * d, d, rng);
        b.img_mlp2 = Linear::init(d, 4 * d, rng);
        b.txt_mlp1 = Linear::init(4 * d, d, rng);
        b.txt_mlp2 = Linear::init(d, 4 * d, rng);
        b.img_mod = Linear::init_zero(6 * d, d);
        b.txt_mod = Linear::init_zero(6 * d, d);
    }
    sblocks_.resize(static_cast<size_t>(cfg_.n_single_blocks));
    for (auto& b : sblocks_) {
        b.q = Linear::init(d, d, rng);
        b.k = Linear::init(d, d, rng);
        b.v = Linear::init(d, d, rng);
        b.o = Linear::init(d, d, rng);
        b.mlp1 = Linear::init(4 * d, d, rng);
        b.mlp2 = Linear::init(d, 4 * d, rng);
        b.mod = Linear::init_zero(6 * d, d);
    }
    final_mod_ = Linear::init_zero(2 * d, d);
    head_ = Linear::init_zero(cfg_.patch_dim(), d);
    patch_index_ = build_patch_index(cfg_);
    unpatch_index_ = invert_index(*patch_index_);
}

namespace {

struct Mod6 {
    Tensor shift_attn, scale_attn, gate_attn, shift_mlp, scale_mlp, gate_mlp;
};

Mod6 split_mod6(const Tensor& m, int d) {
    Mod6 out;
    out.shift_attn = slice_cols(m, 0, d);
    out.scale_attn = slice_cols(m, d, 2 * d);
    out.gate_attn = slice_cols(m, 2 * d, 3 * d);
    out.shift_mlp = slice_cols(m, 3 * d, 4 * d);
    out.scale_mlp = slice_cols(m, 4 * d, 5 * d);
    out.gate_mlp = slice_cols(m, 5 * d, 6 * d);
    return out;
}

// layernorm(x) * (1 + scale) + shift, row-broadcast modulation
Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale_vec) {
    return add(mul(layernorm(x), add_scalar(scale_vec, 1.0)), shift);
}

Tensor mlp_forward(const Linear& l1, const Linear& l2, const Tensor& x) {
    return l2(gelu(l1(x)));
}

}  // namespace

Tensor FlowModel::forward(const Tensor& z_t, const Tensor& context, const Tensor& txt_tokens,
                          double t) const {
    int d = cfg_.d_model;
    int n_img = cfg_.n_img_tokens();
    Shape txt_expect = {cfg_.l_text, d};
    if (txt_tokens.shape() != txt_expect)
        throw ShapeError("forward: text tokens must be " + shape_str(txt_expect) + ", got " +
                         shape_str(txt_tokens.shape()));

    Tensor t_emb;
    {
        Tensor feats = Tensor::from({1, d}, timestep_features(t, d));
        t_emb = time_out_(silu(time_in_(feats)));
    }
    Tensor t_act = silu(t_emb);

    Shape img_expect = {cfg_.image_size, cfg_.image_size, 3};
    if (z_t.shape() != img_expect || context.shape() != img_expect)
        throw ShapeError("forward: images must be " + shape_str(img_expect) + ", got " +
                         shape_str(z_t.shape()) + " and " + shape_str(context.shape()));
    Shape tok_shape = {n_img, cfg_.patch_dim()};
    Tensor noisy = add(
        add(patch_proj_(permute_elements(z_t, patch_index_, tok_shape)), pos_img_), stream_noisy_);
    Tensor ctx = add(
        add(patch_proj_(permute_elements(context, patch_index_, tok_shape)), pos_img_), stream_ctx_);
    Tensor img = concat_rows({noisy, ctx});  // [2*n_img x d]
    Tensor txt = add(txt_tokens, stream_txt_);

    int t_img = 2 * n_img;
    int t_all = t_img + cfg_.l_text;

    for (const DoubleBlock& b : dblocks_) {
        Mod6 mi = split_mod6(b.img_mod(t_act), d);
        Mod6 mt = split_mod6(b.txt_mod(t_act), d);

        Tensor hi = modulate(img, mi.shift_attn, mi.scale_attn);
        Tensor ht = modulate(txt, mt.shift_attn, mt.scale_attn);
        Tensor q = concat_rows({b.img_q(hi), b.txt_q(ht)});
        Tensor k = concat_rows({b.img_k(hi), b.txt_k(ht)});
        Tensor v = concat_rows({b.img_v(hi), b.txt_v(ht)});
        Tensor attn = multihead_attention(q, k, v, cfg_.heads);
        img = add(img, mul(mi.gate_attn, b.img_o(slice_rows(attn, 0, t_img))));
        txt = add(txt, mul(mt.gate_attn, b.txt_o(slice_rows(attn, t_img, t_all))));

        img = add(img, mul(mi.gate_mlp,
                           mlp_forward(b.img_mlp1, b.img_mlp2,
                                       modulate(img, mi.shift_mlp, mi.scale_mlp))));
        txt = add(txt, mul(mt.gate_mlp,
                           mlp_forward(b.txt_mlp1, b.txt_mlp2,
                                       modulate(txt, mt.shift_mlp, mt.scale_mlp))));
    }

    Tensor seq = concat_rows({img, txt});  // [t_all x d]
    for (const SingleBlock& b : sblocks_) {
        Mod6 m = split_mod6(b.mod(t_act), d);
        Tensor h = modulate(seq, m.shift_attn, m.scale_attn);
        Tensor attn = multihead_attention(b.q(h), b.k(h), b.v(h), cfg_.heads);
        seq = add(seq, mul(m.gate_attn, b.o(attn)));
        seq = add(seq, mul(m.gate_mlp,
                           mlp_forward(b.mlp1, b.mlp2, modulate(seq, m.shift_mlp, m.scale_mlp))));
    }

    // head reads the noisy-image positions only; context/text rows are dropped
    Tensor out_tokens = slice_rows(seq, 0, n_img);
    Tensor fm = final_mod_(t_act);
    Tensor shift = slice_cols(fm, 0, d);
    Tensor sc = slice_cols(fm, d, 2 * d);
    Tensor v_tokens = head_(modulate(out_tokens, shift, sc));
    return permute_elements(v_tokens, unpatch_index_, img_expect);
}

namespace {

void visit_linear(const std::string& name, Linear& l,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
    fn(name + ".weight", l.w);
    fn(name + ".bias", l.bias);
}

}  // namespace

void FlowModel::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_linear("patch_proj", patch_proj_, fn);
    fn("pos_img", pos_img_);
    fn("stream_noisy", stream_noisy_);
    fn("stream_ctx", stream_ctx_);
    fn("stream_txt", stream_txt_);
    visit_linear("time_in", time_in_, fn);
    visit_linear("time_out", time_out_, fn);
    for (size_t i = 0; i < dblocks_.size(); ++i) {
        std::string p = "blocks." + std::to_string(i) + ".";
        DoubleBlock& b = dblocks_[i];
        visit_linear(p + "img_q", b.img_q, fn);
        visit_linear(p + "img_k", b.img_k, fn);
        visit_linear(p + "img_v", b.img_v, fn);
        visit_linear(p + "img_o", b.img_o, fn);
        visit_linear(p + "txt_q", b.txt_q, fn);
        visit_linear(p + "txt_k", b.txt_k, fn);
        visit_linear(p + "txt_v", b.txt_v, fn);
        visit_linear(p + "txt_o", b.txt_o, fn);
        visit_linear(p + "img_mlp1", b.img_mlp1, fn);
        visit_linear(p + "img_mlp2", b.img_mlp2, fn);
        visit_linear(p + "txt_mlp1", b.txt_mlp1, fn);
        visit_linear(p + "txt_mlp2", b.txt_mlp2, fn);
        visit_linear(p + "img_mod", b.img_mod, fn);
        visit_linear(p + "txt_mod", b.txt_mod, fn);
    }
    for (size_t i = 0; i < sblocks_.size(); ++i) {
        std::string p = "blocks." + std::to_string(dblocks_.size() + i) + ".";
        SingleBlock& b = sblocks_[i];
        visit_linear(p + "q", b.q, fn);
        visit_linear(p + "k", b.k, fn);
        visit_linear(p + "v", b.v, fn);
        visit_linear(p + "o", b.o, fn);
        visit_linear(p + "mlp1", b.mlp1, fn);
        visit_linear(p + "mlp2", b.mlp2, fn);
        visit_linear(p + "mod", b.mod, fn);
    }
    visit_linear("final_mod", final_mod_, fn);
    visit_linear("head", head_, fn);
}

std::vector<std::pair<std::string, Tensor>> FlowModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_params([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
    return out;
}

int64_t FlowModel::param_count() {
    int64_t n = 0;
    visit_params([&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

void FlowModel::set_requires_grad(bool b) {
    visit_params([&](const std::string&, Tensor& t) { t.set_requires_grad(b); });
}

uint64_t FlowModel::checksum() {
    uint64_t h = 0xcbf29ce484222325ULL;
    visit_params([&](const std::string& n, Tensor& t) {
        h = fnv1a64(n.data(), n.size(), h);
        uint64_t c = tensor_checksum(t);
        h = fnv1a64(&c, sizeof(c), h);
    });
    return h;
}

std::vector<AttentionSite> FlowModel::attention_sites() {
    std::vector<AttentionSite> sites;
    for (size_t i = 0; i < dblocks_.size(); ++i) {
        std::string p = "blocks." + std::to_string(i) + ".";
        DoubleBlock& b = dblocks_[i];
        sites.push_back({p + "img_q", 'q', &b.img_q});
        sites.push_back({p + "img_k", 'k', &b.img_k});
        sites.push_back({p + "img_v", 'v', &b.img_v});
        sites.push_back({p + "img_o", 'o', &b.img_o});
        sites.push_back({p + "txt_q", 'q', &b.txt_q});
        sites.push_back({p + "txt_k", 'k', &b.txt_k});
        sites.push_back({p + "txt_v", 'v', &b.txt_v});
        sites.push_back({p + "txt_o", 'o', &b.txt_o});
    }
    for (size_t i = 0; i < sblocks_.size(); ++i) {
        std::string p = "blocks." + std::to_string(dblocks_.size() + i) + ".";
        SingleBlock& b = sblocks_[i];
        sites.push_back({p + "q", 'q', &b.q});
        sites.push_back({p + "k", 'k', &b.k});
        sites.push_back({p + "v", 'v', &b.v});
        sites.push_back({p + "o", 'o', &b.o});
    }
    return sites;
}

std::vector<std::pair<std::string, Tensor>> VelocityModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    net.visit_params([&](const std::string& n, Tensor& t) { out.emplace_back("model." + n, t); });
    for (auto& [n, t] : text.named_parameters()) out.emplace_back(n, t);
    return out;
}

}  // namespace e2r
