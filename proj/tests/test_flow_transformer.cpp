#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "e2r/flow_transformer.hpp"

using namespace e2r;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.d_model = 16;
    c.heads = 2;
    c.n_double_blocks = 1;
    c.n_single_blocks = 1;
    return c;
}

// closed-form parameter count, kept independent of the model code
int64_t expected_param_count(const ModelConfig& c) {
    int64_t d = c.d_model;
    int64_t pd = c.patch_dim();
    int64_t lin = [](int64_t out, int64_t in) { return out * in + out; }(0, 0);
    (void)lin;
    auto linear_n = [](int64_t out, int64_t in) { return out * in + out; };
    int64_t n = 0;
    n += linear_n(d, pd);           // patch projection
    n += c.n_img_tokens() * d;      // learned 2-D positions
    n += 3 * d;                     // stream markers
    n += 2 * linear_n(d, d);        // timestep mlp
    int64_t attn = 4 * linear_n(d, d);
    int64_t mlp = linear_n(4 * d, d) + linear_n(d, 4 * d);
    int64_t mod = linear_n(6 * d, d);
    n += c.n_double_blocks * (2 * attn + 2 * mlp + 2 * mod);
    n += c.n_single_blocks * (attn + mlp + mod);
    n += linear_n(2 * d, d);   // final modulation
    n += linear_n(pd, d);      // output head
    return n;
}

}  // namespace

TEST_CASE("patch rearrangement is lossless and local") {
    ModelConfig c = tiny_config();
    Rng rng(3);
    Tensor img = Tensor::randn({8, 8, 3}, rng);
    Tensor tokens = patchify_rearrange(img, c);
    CHECK(tokens.shape() == Shape{4, 48});
    Tensor back = unpatchify_rearrange(tokens, c);
    CHECK(back.vec() == img.vec());

    // constant image: every patch vector identical
    Tensor flat = Tensor::full({8, 8, 3}, 0.7);
    Tensor ft = patchify_rearrange(flat, c);
    for (int p = 1; p < 4; ++p)
        for (int j = 0; j < 48; ++j)
            CHECK(ft.vec()[static_cast<size_t>(p) * 48 + j] == ft.vec()[static_cast<size_t>(j)]);

    // a single bright pixel lands in exactly one token
    Tensor one = Tensor::zeros({8, 8, 3});
    one.vec()[(5 * 8 + 6) * 3 + 1] = 1.0;  // y=5 x=6 -> patch row 1, col 1 -> token 3
    Tensor ot = patchify_rearrange(one, c);
    int touched = 0;
    for (int p = 0; p < 4; ++p) {
        double s = 0;
        for (int j = 0; j < 48; ++j) s += std::abs(ot.vec()[static_cast<size_t>(p) * 48 + j]);
        if (s > 0) {
            ++touched;
            CHECK(p == 3);
        }
    }
    CHECK(touched == 1);

    CHECK_THROWS_AS(patchify_rearrange(Tensor::zeros({4, 4, 3}), c), ShapeError);
}

TEST_CASE("attention oracles") {
    Rng rng(5);
    // singleton sequence: softmax over one key is 1, output == v row
    Tensor q = Tensor::randn({1, 8}, rng);
    Tensor k = Tensor::randn({1, 8}, rng);
    Tensor v = Tensor::randn({1, 8}, rng);
    Tensor out = multihead_attention(q, k, v, 2);
    for (int i = 0; i < 8; ++i) CHECK(out.vec()[i] == doctest::Approx(v.vec()[i]).epsilon(1e-12));

    // uniform keys: weights uniform, output = column mean of v
    Tensor ku = Tensor::full({5, 8}, 0.3);
    Tensor qa = Tensor::randn({5, 8}, rng);
    Tensor va = Tensor::randn({5, 8}, rng);
    Tensor ua = multihead_attention(qa, ku, va, 2);
    for (int col = 0; col < 8; ++col) {
        double mean = 0;
        for (int r = 0; r < 5; ++r) mean += va.vec()[static_cast<size_t>(r) * 8 + col];
        mean /= 5;
        for (int r = 0; r < 5; ++r)
            CHECK(ua.vec()[static_cast<size_t>(r) * 8 + col] == doctest::Approx(mean).epsilon(1e-10));
    }
}

TEST_CASE("timestep features separate a 1e-3 grid") {
    std::vector<double> prev;
    double last0 = -10;
    for (int i = 0; i <= 1000; ++i) {
        double t = i / 1000.0;
        auto f = timestep_features(t, 16);
        CHECK(f[0] > last0);  // sin(t) strictly increasing on [0, 1]
        last0 = f[0];
    }
}

TEST_CASE("forward contract: shape, determinism, zero-init head") {
    ModelConfig c = tiny_config();
    VelocityModel model(c, 123);
    Rng rng(7);
    Tensor z = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx = Tensor::randn({8, 8, 3}, rng);
    auto ids = tokenize(task_prompt("rain"));

    Tensor v1 = model.velocity(z, ctx, ids, 0.4);
    CHECK(v1.shape() == z.shape());
    Tensor v2 = model.velocity(z, ctx, ids, 0.4);
    CHECK(v1.vec() == v2.vec());

    // zero-init modulation gates and head: the step-0 velocity is exactly 0
    for (double x : v1.vec()) CHECK(x == 0.0);
}

TEST_CASE("joint attention lets a text token move image outputs (after nudging the head)") {
    ModelConfig c = tiny_config();
    VelocityModel model(c, 123);
    // break the zero-init so signal reaches the output
    Rng prng(99);
    model.net.visit_params([&](const std::string&, Tensor& t) {
        for (double& v : t.vec())
            if (v == 0.0) v = prng.normal() * 0.05;
    });
    Rng rng(7);
    Tensor z = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx = Tensor::randn({8, 8, 3}, rng);
    auto ids = tokenize(task_prompt("rain"));
    Tensor base = model.velocity(z, ctx, ids, 0.3);

    // perturb one text embedding row
    model.text.table().vec()[static_cast<size_t>(vocab::id_of("rain")) * c.d_model + 3] += 0.5;
    Tensor moved = model.velocity(z, ctx, ids, 0.3);
    double delta = 0;
    for (size_t i = 0; i < base.vec().size(); ++i)
        delta += std::abs(base.vec()[i] - moved.vec()[i]);
    CHECK(delta > 0.0);
}

TEST_CASE("zeroing every K/V projection makes the output invariant to context and text") {
    ModelConfig c = tiny_config();
    VelocityModel model(c, 321);
    Rng prng(100);
    model.net.visit_params([&](const std::string&, Tensor& t) {
        for (double& v : t.vec())
            if (v == 0.0) v = prng.normal() * 0.05;
    });
    for (AttentionSite& s : model.net.attention_sites()) {
        if (s.role == 'k' || s.role == 'v') {
            std::fill(s.layer->w.vec().begin(), s.layer->w.vec().end(), 0.0);
            std::fill(s.layer->bias.vec().begin(), s.layer->bias.vec().end(), 0.0);
        }
    }
    Rng rng(8);
    Tensor z = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx1 = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx2 = Tensor::randn({8, 8, 3}, rng);
    Tensor v1 = model.velocity(z, ctx1, tokenize(task_prompt("rain")), 0.6);
    Tensor v2 = model.velocity(z, ctx2, tokenize(task_prompt("haze")), 0.6);
    CHECK(v1.vec() == v2.vec());
}

TEST_CASE("parameter count matches the closed form") {
    for (ModelConfig c : {tiny_config(), ModelConfig{}}) {
        FlowModel net(c, 1);
        CHECK(net.param_count() == expected_param_count(c));
    }
}

TEST_CASE("end-to-end gradient check on a 2-block 16x16 config") {
    ModelConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.d_model = 16;
    c.heads = 2;
    c.n_double_blocks = 1;
    c.n_single_blocks = 1;
    VelocityModel model(c, 55);
    Rng prng(101);
    model.net.visit_params([&](const std::string&, Tensor& t) {
        for (double& v : t.vec())
            if (v == 0.0) v = prng.normal() * 0.05;
    });
    Rng rng(9);
    Tensor z = Tensor::randn({16, 16, 3}, rng);
    Tensor ctx = Tensor::randn({16, 16, 3}, rng);
    Tensor target = Tensor::randn({16, 16, 3}, rng);
    auto ids = tokenize(task_prompt("noise"));

    auto loss_wrt = [&](Tensor& param) {
        return grad_check(
            [&](const Tensor&) {
                Tensor v = model.velocity(z, ctx, ids, 0.37);
                return mse(v, target);
            },
            param, 1e-5, 1e-4, /*max_coords=*/20, /*coord_seed=*/3);
    };
    auto params = model.net.named_parameters();
    int checked = 0;
    for (auto& [name, t] : params) {
        if (name == "patch_proj.weight" || name == "blocks.0.img_q.weight" ||
            name == "blocks.1.v.weight" || name == "head.weight" || name == "pos_img") {
            GradCheckReport rep = loss_wrt(t);
            INFO(name, ": ", rep.detail);
            CHECK(rep.pass);
            ++checked;
        }
    }
    CHECK(checked == 5);
    GradCheckReport rep_text = loss_wrt(model.text.table());
    CHECK(rep_text.pass);
}
