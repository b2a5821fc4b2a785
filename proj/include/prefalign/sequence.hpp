#pragma once

#include <cstdint>
#include <vector>

namespace prefalign {

using Sequence = std::vector<int>;  // token ids in [0, vocab_size)

// Shapes of the toy language: fixed-length prompts and responses over a
// small vocabulary. The response space |V|^L_y must stay enumerable.
struct VocabSpec {
    int vocab_size = 0;
    int prompt_len = 0;
    int response_len = 0;
    std::int64_t enumeration_cap = 65536;

    // Validates invariants; throws InvalidArgument / UnsupportedScale.
    static VocabSpec make(int vocab_size, int prompt_len, int response_len,
                          std::int64_t enumeration_cap = 65536);

    std::int64_t num_responses() const;        // |V|^L_y
    std::int64_t num_prompt_sequences() const; // |V|^L_x

    // Big-endian mixed-radix codec: the first token is the most significant
    // digit, so enumeration order is lexicographic in token ids.
    Sequence response_from_index(std::int64_t index) const;
    std::int64_t response_index(const Sequence& y) const;
    Sequence prompt_from_index(std::int64_t index) const;
    std::int64_t prompt_index(const Sequence& x) const;

    void check_prompt(const Sequence& x) const;
    void check_response(const Sequence& y) const;

    bool operator==(const VocabSpec&) const = default;
};

}  // namespace prefalign
