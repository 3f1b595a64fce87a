#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "e2r/linalg.hpp"
#include "e2r/lora.hpp"
#include "testutil.hpp"

using namespace e2r;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.d_model = 16;
    c.heads = 2;
    c.n_double_blocks = 1;
    c.n_single_blocks = 1;
    return c;
}

Tensor forward_of(const VelocityModel& m, uint64_t seed) {
    Rng rng(seed);
    Tensor z = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx = Tensor::randn({8, 8, 3}, rng);
    return m.velocity(z, ctx, tokenize(task_prompt("noise")), 0.45);
}

void randomize_factors(LoraAdapter& ad, uint64_t seed) {
    Rng rng(seed);
    for (LoraSiteFactors& s : ad.sites()) {
        for (double& v : s.a.vec()) v = rng.normal() * 0.1;
        for (double& v : s.b.vec()) v = rng.normal() * 0.1;
    }
}

void denudge_zero_init(VelocityModel& m, uint64_t seed) {
    Rng rng(seed);
    m.net.visit_params([&](const std::string&, Tensor& t) {
        for (double& v : t.vec())
            if (v == 0.0) v = rng.normal() * 0.05;
    });
}

}  // namespace

TEST_CASE("freshly injected adapter leaves the model output unchanged") {
    VelocityModel m(small_config(), 10);
    denudge_zero_init(m, 77);
    Tensor before = forward_of(m, 1);
    LoraSpec spec;
    spec.rank = 4;
    spec.alpha = 4;
    LoraAdapter ad = inject(m.net, spec, 42);
    Tensor after = forward_of(m, 1);
    CHECK(before.vec() == after.vec());  // B = 0 -> delta exactly 0
}

TEST_CASE("trainable parameter count is sum of r*(d+k) over sites") {
    VelocityModel m(small_config(), 10);
    LoraSpec spec;
    spec.rank = 3;
    LoraAdapter ad = inject(m.net, spec, 42);
    int64_t expected = 0;
    for (const LoraSiteFactors& s : ad.sites())
        expected += static_cast<int64_t>(spec.rank) * (s.b.dim(0) + s.a.dim(1));
    CHECK(ad.param_count() == expected);
    // q/k/v on both streams of the double block + the single block: 9 sites
    CHECK(ad.sites().size() == 9);
}

TEST_CASE("site filter excludes streams and can include output projections") {
    VelocityModel m(small_config(), 10);
    LoraSpec spec;
    spec.rank = 2;
    spec.filter.txt_stream = false;
    LoraAdapter ad = inject(m.net, spec, 1);
    for (const LoraSiteFactors& s : ad.sites())
        CHECK(s.name.find("txt_") == std::string::npos);
    for (AttentionSite& site : m.net.attention_sites())
        if (site.name.find("txt_") != std::string::npos) CHECK(site.layer->lora == nullptr);
    detach(m.net);

    LoraSpec with_o;
    with_o.rank = 2;
    with_o.filter.o = true;
    LoraAdapter ad2 = inject(m.net, with_o, 2);
    bool has_o = false;
    for (const LoraSiteFactors& s : ad2.sites())
        if (s.name.find("_o") != std::string::npos || s.name.rfind(".o") == s.name.size() - 2)
            has_o = true;
    CHECK(has_o);
}

TEST_CASE("rank larger than min(d,k) is rejected") {
    VelocityModel m(small_config(), 10);
    LoraSpec spec;
    spec.rank = 17;  // d_model is 16
    CHECK_THROWS_AS(inject(m.net, spec, 1), DataError);
}

TEST_CASE("merged forward equals adapted forward; merge/unmerge restores base weights") {
    VelocityModel m(small_config(), 11);
    denudge_zero_init(m, 78);
    LoraSpec spec;
    spec.rank = 4;
    spec.alpha = 8;  // non-unit scale
    LoraAdapter ad = inject(m.net, spec, 5);
    randomize_factors(ad, 6);

    std::vector<Tensor> adapted;
    for (uint64_t s = 0; s < 20; ++s) adapted.push_back(forward_of(m, s));

    // snapshot base weights, then merge
    std::vector<std::vector<double>> base_weights;
    for (auto& [n, t] : m.net.named_parameters()) base_weights.push_back(t.vec());
    detach(m.net);
    merge(ad, m.net);
    for (uint64_t s = 0; s < 20; ++s) {
        Tensor merged = forward_of(m, s);
        double max_diff = 0;
        for (size_t i = 0; i < merged.vec().size(); ++i)
            max_diff = std::max(max_diff, std::abs(merged.vec()[i] - adapted[s].vec()[i]));
        CHECK(max_diff < 1e-8);
    }
    unmerge(ad, m.net);
    size_t pi = 0;
    for (auto& [n, t] : m.net.named_parameters()) {
        for (size_t i = 0; i < t.vec().size(); ++i)
            CHECK(std::abs(t.vec()[i] - base_weights[pi][i]) < 1e-10);
        ++pi;
    }
}

TEST_CASE("merging a zero adapter changes nothing") {
    VelocityModel m(small_config(), 12);
    LoraSpec spec;
    spec.rank = 4;
    LoraAdapter ad = inject(m.net, spec, 5);  // B = 0
    detach(m.net);
    uint64_t before = m.net.checksum();
    merge(ad, m.net);
    CHECK(m.net.checksum() == before);  // delta = B A = 0 exactly
}

TEST_CASE("delta has matrix rank at most r at every site") {
    VelocityModel m(small_config(), 13);
    LoraSpec spec;
    spec.rank = 4;
    LoraAdapter ad = inject(m.net, spec, 5);
    randomize_factors(ad, 9);
    for (const LoraSiteFactors& s : ad.sites()) {
        int out = s.b.dim(0), in = s.a.dim(1), r = spec.rank;
        std::vector<double> delta(static_cast<size_t>(out) * in, 0.0);
        for (int i = 0; i < out; ++i)
            for (int p = 0; p < r; ++p)
                for (int j = 0; j < in; ++j)
                    delta[static_cast<size_t>(i) * in + j] +=
                        s.b.vec()[static_cast<size_t>(i) * r + p] * s.a.vec()[static_cast<size_t>(p) * in + j];
        auto sv = linalg::singular_values(delta, out, in);
        // the tail is eigensolver noise, orders of magnitude below a genuine
        // rank-(r+1) singular value
        for (size_t i = static_cast<size_t>(r); i < sv.size(); ++i)
            CHECK(sv[i] < 1e-7 * (sv[0] + 1.0));
    }
}

TEST_CASE("gradients flow to A and B but never to the frozen base weight") {
    VelocityModel m(small_config(), 14);
    denudge_zero_init(m, 80);
    m.net.set_requires_grad(false);
    m.text.set_trainable(false);
    LoraSpec spec;
    spec.rank = 2;
    LoraAdapter ad = inject(m.net, spec, 3);
    randomize_factors(ad, 4);
    ad.set_requires_grad(true);

    Rng rng(15);
    Tensor z = Tensor::randn({8, 8, 3}, rng);
    Tensor ctx = Tensor::randn({8, 8, 3}, rng);
    Tensor target = Tensor::randn({8, 8, 3}, rng);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor v = m.velocity(z, ctx, tokenize(task_prompt("haze")), 0.3);
        tape.backward(mse(v, target));
    }
    bool any_factor_grad = false;
    for (LoraSiteFactors& s : ad.sites()) {
        if (s.a.has_grad() || s.b.has_grad()) any_factor_grad = true;
        CHECK(s.b.has_grad());  // B multiplies the down-projection directly
    }
    CHECK(any_factor_grad);
    for (auto& [n, t] : m.net.named_parameters()) CHECK_FALSE(t.has_grad());
}

TEST_CASE("adapted forward is continuous in alpha; alpha = 0 recovers the base exactly") {
    VelocityModel m(small_config(), 16);
    denudge_zero_init(m, 81);
    Tensor base = forward_of(m, 2);
    LoraSpec spec;
    spec.rank = 4;
    spec.alpha = 0.0;
    LoraAdapter ad = inject(m.net, spec, 5);
    randomize_factors(ad, 6);
    for (AttentionSite& s : m.net.attention_sites())
        if (s.layer->lora) CHECK(s.layer->lora->scale == 0.0);
    Tensor at_zero = forward_of(m, 2);
    for (size_t i = 0; i < base.vec().size(); ++i) CHECK(at_zero.vec()[i] == base.vec()[i]);
}

TEST_CASE("adapter files round-trip bit-exactly") {
    testutil::TempDir tmp("e2r_lora");
    VelocityModel m(small_config(), 17);
    LoraSpec spec;
    spec.rank = 4;
    spec.task_tag = "rain";
    LoraAdapter ad = inject(m.net, spec, 5);
    randomize_factors(ad, 7);

    std::string p1 = tmp.file("a.e2ra");
    std::string p2 = tmp.file("b.e2ra");
    ad.save(p1);
    LoraAdapter loaded = LoraAdapter::load(p1);
    loaded.save(p2);
    CHECK(testutil::slurp(p1) == testutil::slurp(p2));
    CHECK(loaded.rank() == 4);
    CHECK(loaded.task_tag() == "rain");

    // loading onto a model with a different width is a dimension mismatch
    ModelConfig other = small_config();
    other.d_model = 32;
    other.heads = 4;
    VelocityModel m2(other, 18);
    LoraAdapter l2 = LoraAdapter::load(p1);
    CHECK_THROWS_AS(attach(m2.net, l2), DataError);
}

TEST_CASE("a unified adapter file is about a third of three task-specific files") {
    testutil::TempDir tmp("e2r_lora_sz");
    VelocityModel m(small_config(), 19);
    LoraSpec spec;
    spec.rank = 4;

    uintmax_t total = 0;
    for (const std::string& task : {"noise", "rain", "haze"}) {
        detach(m.net);
        LoraSpec s = spec;
        s.task_tag = task;
        LoraAdapter ad = inject(m.net, s, 5);
        std::string p = tmp.file(task + ".e2ra");
        ad.save(p);
        total += std::filesystem::file_size(p);
    }
    detach(m.net);
    LoraSpec u = spec;
    u.task_tag = "unified";
    LoraAdapter ad = inject(m.net, u, 5);
    std::string up = tmp.file("unified.e2ra");
    ad.save(up);
    uintmax_t usz = std::filesystem::file_size(up);

    CHECK(usz < total);
    CHECK(std::abs(3.0 * static_cast<double>(usz) - static_cast<double>(total)) <
          0.01 * static_cast<double>(total));

    // payload bytes follow the closed-form parameter count
    uintmax_t payload = static_cast<uintmax_t>(ad.param_count()) * sizeof(double);
    CHECK(usz > payload);
    CHECK(usz - payload < 4096);  // header overhead only
}
