#include "e2r/lora.hpp"

#include <algorithm>

#include "e2r/blobfile.hpp"
#include "e2r/kernels.hpp"

namespace e2r {

namespace {
constexpr uint32_t kAdapterVersion = 1;
}

bool SiteFilter::matches(const AttentionSite& site) const {
    bool role_ok = (site.role == 'q' && q) || (site.role == 'k' && k) ||
                   (site.role == 'v' && v) || (site.role == 'o' && o);
    if (!role_ok) return false;
    if (site.name.find(".img_") != std::string::npos) return img_stream;
    if (site.name.find(".txt_") != std::string::npos) return txt_stream;
    return single_stream;
}

int64_t LoraAdapter::param_count() const {
    int64_t n = 0;
    for (const LoraSiteFactors& s : sites_) n += s.a.numel() + s.b.numel();
    return n;
}

std::vector<std::pair<std::string, Tensor>> LoraAdapter::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (LoraSiteFactors& s : sites_) {
        out.emplace_back("lora." + s.name + ".A", s.a);
        out.emplace_back("lora." + s.name + ".B", s.b);
    }
    return out;
}

void LoraAdapter::set_requires_grad(bool b) {
    for (LoraSiteFactors& s : sites_) {
        s.a.set_requires_grad(b);
        s.b.set_requires_grad(b);
    }
}

LoraAdapter inject(FlowModel& model, const LoraSpec& spec, uint64_t seed) {
    if (spec.rank <= 0) throw DataError("lora: rank must be positive");
    LoraAdapter ad;
    ad.rank_ = spec.rank;
    ad.alpha_ = spec.alpha;
    ad.task_tag_ = spec.task_tag;
    Rng rng(seed);
    bool any = false;
    for (AttentionSite& site : model.attention_sites()) {
        if (!spec.filter.matches(site)) continue;
        any = true;
        int out_dim = site.layer->w.dim(0);
        int in_dim = site.layer->w.dim(1);
        if (spec.rank > std::min(out_dim, in_dim))
            throw DataError("lora: rank " + std::to_string(spec.rank) + " exceeds min(d, k) = " +
                            std::to_string(std::min(out_dim, in_dim)) + " at site " + site.name);
        LoraSiteFactors f;
        f.name = site.name;
        f.a = Tensor::randn({spec.rank, in_dim}, rng, 0.02).set_requires_grad(true);
        f.b = Tensor::zeros({out_dim, spec.rank}).set_requires_grad(true);
        ad.sites_.push_back(std::move(f));
    }
    if (!any) throw DataError("lora: site filter matched no projection sites");
    attach(model, ad);
    return ad;
}

void attach(FlowModel& model, LoraAdapter& adapter) {
    auto model_sites = model.attention_sites();
    for (LoraSiteFactors& f : adapter.sites_) {
        auto it = std::find_if(model_sites.begin(), model_sites.end(),
                               [&](const AttentionSite& s) { return s.name == f.name; });
        if (it == model_sites.end())
            throw DataError("lora: unknown site '" + f.name + "' for this model");
        const Tensor& w = it->layer->w;
        if (f.a.dim(1) != w.dim(1) || f.b.dim(0) != w.dim(0) || f.a.dim(0) != f.b.dim(1))
            throw DataError("lora: dimension mismatch at site '" + f.name + "': factors " +
                            shape_str(f.b.shape()) + " x " + shape_str(f.a.shape()) +
                            " vs weight " + shape_str(w.shape()));
        auto binding = std::make_shared<LoraBinding>();
        binding->a = f.a;
        binding->b = f.b;
        binding->scale = adapter.scale();
        it->layer->w.set_requires_grad(false);
        it->layer->bias.set_requires_grad(false);
        it->layer->lora = std::move(binding);
    }
}

void detach(FlowModel& model) {
    for (AttentionSite& site : model.attention_sites()) site.layer->lora.reset();
}

namespace {

void apply_delta(const LoraAdapter& adapter, FlowModel& model, double sign) {
    auto model_sites = model.attention_sites();
    for (const LoraSiteFactors& f : adapter.sites()) {
        auto it = std::find_if(model_sites.begin(), model_sites.end(),
                               [&](const AttentionSite& s) { return s.name == f.name; });
        if (it == model_sites.end())
            throw DataError("lora: unknown site '" + f.name + "' for this model");
        Tensor& w = it->layer->w;
        int out_dim = w.dim(0), in_dim = w.dim(1), r = f.b.dim(1);
        if (f.a.dim(1) != in_dim || f.b.dim(0) != out_dim)
            throw DataError("lora: dimension mismatch merging site '" + f.name + "'");
        std::vector<double> delta(static_cast<size_t>(out_dim) * in_dim);
        kern::matmul_nn(f.b.data(), f.a.data(), delta.data(), out_dim, r, in_dim);
        double c = sign * adapter.scale();
        double* pw = w.data();
        for (size_t i = 0; i < delta.size(); ++i) pw[i] += c * delta[i];
    }
}

}  // namespace

void merge(const LoraAdapter& adapter, FlowModel& model) { apply_delta(adapter, model, 1.0); }

void unmerge(const LoraAdapter& adapter, FlowModel& model) { apply_delta(adapter, model, -1.0); }

void LoraAdapter::save(const std::string& path) const {
    nlohmann::json meta;
    meta["kind"] = "lora-adapter";
    meta["rank"] = rank_;
    meta["alpha"] = alpha_;
    meta["task_tag"] = task_tag_;
    nlohmann::json site_names = nlohmann::json::array();
    std::vector<NamedArray> arrays;
    for (const LoraSiteFactors& f : sites_) {
        site_names.push_back(f.name);
        arrays.push_back({f.name + ".A", f.a.shape(), f.a.vec()});
        arrays.push_back({f.name + ".B", f.b.shape(), f.b.vec()});
    }
    meta["sites"] = std::move(site_names);
    write_blob(path, "E2RA", kAdapterVersion, meta, arrays);
}

LoraAdapter LoraAdapter::load(const std::string& path) {
    Blob blob = read_blob(path, "E2RA", kAdapterVersion);
    LoraAdapter ad;
    ad.rank_ = blob.meta.at("rank").get<int>();
    ad.alpha_ = blob.meta.at("alpha").get<double>();
    ad.task_tag_ = blob.meta.at("task_tag").get<std::string>();
    for (const auto& s : blob.meta.at("sites")) {
        std::string name = s.get<std::string>();
        const NamedArray& a = blob.find(name + ".A");
        const NamedArray& b = blob.find(name + ".B");
        LoraSiteFactors f;
        f.name = name;
        f.a = Tensor::from(a.shape, a.data);
        f.b = Tensor::from(b.shape, b.data);
        if (f.a.dim(0) != ad.rank_ || f.b.dim(1) != ad.rank_)
            throw DataError("lora: corrupt adapter " + path + ", factor rank differs from header");
        ad.sites_.push_back(std::move(f));
    }
    return ad;
}

}  // namespace e2r
