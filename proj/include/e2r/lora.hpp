#pragma once

#include <string>
#include <vector>

#include "e2r/flow_transformer.hpp"

namespace e2r {

// Which attention projections receive adapters. Default matches the build
// target: every Q/K/V in both streams and the single blocks; output
// projections are available behind the filter but off by default.
struct SiteFilter {
    bool q = true, k = true, v = true, o = false;
    bool img_stream = true, txt_stream = true, single_stream = true;

    bool matches(const AttentionSite& site) const;
};

struct LoraSpec {
    int rank = 64;
    double alpha = 64.0;  // scale alpha/rank; default alpha = rank -> scale 1
    std::string task_tag = "unified";
    SiteFilter filter;
};

struct LoraSiteFactors {
    std::string name;  // model site name, e.g. "blocks.0.img_q"
    Tensor a;          // [r x in]
    Tensor b;          // [out x r]
};

// Named set of low-rank factor pairs bound to attention projection sites.
class LoraAdapter {
public:
    LoraAdapter() = default;

    int rank() const { return rank_; }
    double alpha() const { return alpha_; }
    double scale() const { return alpha_ / rank_; }
    const std::string& task_tag() const { return task_tag_; }
    void set_task_tag(const std::string& t) { task_tag_ = t; }
    const std::vector<LoraSiteFactors>& sites() const { return sites_; }
    std::vector<LoraSiteFactors>& sites() { return sites_; }

    int64_t param_count() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters();  // lora.<site>.A/B
    void set_requires_grad(bool b);

    friend LoraAdapter inject(FlowModel& model, const LoraSpec& spec, uint64_t seed);
    friend void attach(FlowModel& model, LoraAdapter& adapter);

    static LoraAdapter load(const std::string& path);
    void save(const std::string& path) const;

private:
    int rank_ = 0;
    double alpha_ = 0.0;
    std::string task_tag_;
    std::vector<LoraSiteFactors> sites_;
};

// Creates zero-delta factors (A random-normal std 0.02, B zero) at every
// filtered site and binds them to the model: forward there becomes
// W0 x + (alpha/r) B(A x), base weights frozen, only A and B trainable.
LoraAdapter inject(FlowModel& model, const LoraSpec& spec, uint64_t seed);

// Binds an existing adapter (e.g. loaded from file) to a model; shapes must
// match or a dimension-mismatch error is thrown. Base weights are frozen.
void attach(FlowModel& model, LoraAdapter& adapter);

// Removes all adapter bindings; model output returns to the base weights.
void detach(FlowModel& model);

// W <- W0 + (alpha/r) B A at every adapter site. The adapter must not be
// attached while its deltas are merged (forward would apply them twice).
void merge(const LoraAdapter& adapter, FlowModel& model);
void unmerge(const LoraAdapter& adapter, FlowModel& model);

}  // namespace e2r
