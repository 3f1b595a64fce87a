#pragma once

#include <string>
#include <vector>

#include "e2r/errors.hpp"
#include "e2r/tensor.hpp"

namespace e2r {

// Closed word-level vocabulary: the prompt template words, the three
// degradation nouns, and a reserved <null> token at id 0 (also the pad and
// the unconditional prompt).
namespace vocab {

constexpr int kNullId = 0;
constexpr int kTextLen = 8;

const std::vector<std::string>& words();
int size();
int id_of(const std::string& word);  // throws UsageError for unknown words

}  // namespace vocab

const std::vector<std::string>& task_names();  // {noise, rain, haze}
std::string task_prompt(const std::string& task);  // "remove the <task> from the image"

// deterministic ids, padded with <null> to kTextLen; "" is the
// unconditional (all-null) prompt
std::vector<int> tokenize(const std::string& prompt);
std::vector<int> null_prompt_ids();

// Trainable embedding table + 1-D positional vectors standing in for the
// frozen/tuned text encoders. Positional vectors are zeroed at pad (<null>)
// positions so permuting pads cannot change the sequence content.
class TextEmbedder {
public:
    TextEmbedder() = default;
    TextEmbedder(int d_model, uint64_t seed);

    Tensor lookup(const std::vector<int>& ids) const;  // table rows only
    Tensor embed(const std::vector<int>& ids) const;   // lookup + masked positional

    void set_trainable(bool b);
    bool trainable() const { return trainable_; }

    Tensor& table() { return table_; }
    const Tensor& table() const { return table_; }
    Tensor& pos() { return pos_; }
    const Tensor& pos() const { return pos_; }
    int d_model() const { return d_model_; }

    uint64_t checksum() const;

    std::vector<std::pair<std::string, Tensor>> named_parameters();

private:
    int d_model_ = 0;
    bool trainable_ = true;
    Tensor table_;  // [vocab x d_model]
    Tensor pos_;    // [kTextLen x d_model]
};

}  // namespace e2r
