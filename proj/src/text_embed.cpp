#include "e2r/text_embed.hpp"

#include <algorithm>
#include <sstream>

namespace e2r {

namespace vocab {

const std::vector<std::string>& words() {
    static const std::vector<std::string> kWords = {
        "<null>", "remove", "the", "from", "image", "noise", "rain", "haze",
    };
    return kWords;
}

int size() { return static_cast<int>(words().size()); }

int id_of(const std::string& word) {
    const auto& w = words();
    for (size_t i = 0; i < w.size(); ++i)
        if (w[i] == word) return static_cast<int>(i);
    throw UsageError("tokenize: unknown token '" + word + "'");
}

}  // namespace vocab

const std::vector<std::string>& task_names() {
    static const std::vector<std::string> kTasks = {"noise", "rain", "haze"};
    return kTasks;
}

std::string task_prompt(const std::string& task) {
    if (std::find(task_names().begin(), task_names().end(), task) == task_names().end())
        throw UsageError("unknown task '" + task + "', expected one of {noise, rain, haze}");
    return "remove the " + task + " from the image";
}

std::vector<int> tokenize(const std::string& prompt) {
    std::vector<int> ids;
    std::istringstream is(prompt);
    std::string word;
    while (is >> word) {
        for (char c : word)
            if (c < 'a' || c > 'z')
                throw UsageError("tokenize: prompts are lowercase ASCII words, got '" + word + "'");
        ids.push_back(vocab::id_of(word));
    }
    if (static_cast<int>(ids.size()) > vocab::kTextLen)
        throw UsageError("tokenize: prompt longer than " + std::to_string(vocab::kTextLen) +
                         " tokens");
    ids.resize(vocab::kTextLen, vocab::kNullId);
    return ids;
}

std::vector<int> null_prompt_ids() { return std::vector<int>(vocab::kTextLen, vocab::kNullId); }

TextEmbedder::TextEmbedder(int d_model, uint64_t seed) : d_model_(d_model) {
    Rng rng(seed);
    table_ = Tensor::trunc_normal({vocab::size(), d_model}, rng, 0.02).set_requires_grad(true);
    pos_ = Tensor::trunc_normal({vocab::kTextLen, d_model}, rng, 0.02).set_requires_grad(true);
}

Tensor TextEmbedder::lookup(const std::vector<int>& ids) const { return embedding(table_, ids); }

Tensor TextEmbedder::embed(const std::vector<int>& ids) const {
    if (static_cast<int>(ids.size()) != vocab::kTextLen)
        throw ShapeError("embed: expected " + std::to_string(vocab::kTextLen) + " ids, got " +
                         std::to_string(ids.size()));
    Tensor base = embedding(table_, ids);
    // 0/1 mask rows: pads carry no positional signal
    std::vector<double> m(static_cast<size_t>(vocab::kTextLen) * d_model_, 0.0);
    for (int i = 0; i < vocab::kTextLen; ++i)
        if (ids[static_cast<size_t>(i)] != vocab::kNullId)
            std::fill_n(m.begin() + static_cast<int64_t>(i) * d_model_, d_model_, 1.0);
    Tensor mask = Tensor::from({vocab::kTextLen, d_model_}, std::move(m));
    return add(base, mul(mask, pos_));
}

void TextEmbedder::set_trainable(bool b) {
    trainable_ = b;
    table_.set_requires_grad(b);
    pos_.set_requires_grad(b);
}

uint64_t TextEmbedder::checksum() const {
    uint64_t h = tensor_checksum(table_);
    return fnv1a64(&h, sizeof(h), tensor_checksum(pos_));
}

std::vector<std::pair<std::string, Tensor>> TextEmbedder::named_parameters() {
    return {{"text.table", table_}, {"text.pos", pos_}};
}

}  // namespace e2r
