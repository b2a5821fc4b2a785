#include "prefalign/sequence.hpp"

#include <limits>
#include <string>

#include "prefalign/errors.hpp"

namespace prefalign {

namespace {

// |V|^len with overflow detection; returns -1 on 64-bit overflow.
std::int64_t checked_pow(int base, int len) {
    std::int64_t acc = 1;
    for (int i = 0; i < len; ++i) {
        if (acc > std::numeric_limits<std::int64_t>::max() / base) return -1;
        acc *= base;
    }
    return acc;
}

void check_tokens(const Sequence& s, int vocab_size, int expect_len, const char* kind) {
    if (static_cast<int>(s.size()) != expect_len) {
        throw InvalidArgument(std::string(kind) + ": expected length " + std::to_string(expect_len) +
                              ", got " + std::to_string(s.size()));
    }
    for (int t : s) {
        if (t < 0 || t >= vocab_size) {
            throw InvalidArgument(std::string(kind) + ": token id " + std::to_string(t) +
                                  " out of range [0, " + std::to_string(vocab_size) + ")");
        }
    }
}

}  // namespace

VocabSpec VocabSpec::make(int vocab_size, int prompt_len, int response_len,
                          std::int64_t enumeration_cap) {
    if (vocab_size < 2) throw InvalidArgument("VocabSpec: vocab_size must be >= 2");
    if (prompt_len < 1) throw InvalidArgument("VocabSpec: prompt_len must be >= 1");
    if (response_len < 1) throw InvalidArgument("VocabSpec: response_len must be >= 1");
    if (enumeration_cap < 1) throw InvalidArgument("VocabSpec: enumeration_cap must be >= 1");
    const std::int64_t ny = checked_pow(vocab_size, response_len);
    if (ny < 0) {
        throw UnsupportedScale("VocabSpec: response space overflows 64-bit integer");
    }
    if (ny > enumeration_cap) {
        throw UnsupportedScale("VocabSpec: response space " + std::to_string(ny) +
                               " exceeds enumeration cap " + std::to_string(enumeration_cap));
    }
    VocabSpec spec;
    spec.vocab_size = vocab_size;
    spec.prompt_len = prompt_len;
    spec.response_len = response_len;
    spec.enumeration_cap = enumeration_cap;
    return spec;
}

std::int64_t VocabSpec::num_responses() const {
    return checked_pow(vocab_size, response_len);
}

std::int64_t VocabSpec::num_prompt_sequences() const {
    const std::int64_t n = checked_pow(vocab_size, prompt_len);
    if (n < 0) {
        throw UnsupportedScale("VocabSpec: prompt space overflows 64-bit integer");
    }
    return n;
}

Sequence VocabSpec::response_from_index(std::int64_t index) const {
    if (index < 0 || index >= num_responses()) {
        throw InvalidArgument("response_from_index: index out of range");
    }
    Sequence y(response_len);
    for (int t = response_len - 1; t >= 0; --t) {
        y[t] = static_cast<int>(index % vocab_size);
        index /= vocab_size;
    }
    return y;
}

std::int64_t VocabSpec::response_index(const Sequence& y) const {
    check_response(y);
    std::int64_t idx = 0;
    for (int t : y) idx = idx * vocab_size + t;
    return idx;
}

Sequence VocabSpec::prompt_from_index(std::int64_t index) const {
    if (index < 0 || index >= num_prompt_sequences()) {
        throw InvalidArgument("prompt_from_index: index out of range");
    }
    Sequence x(prompt_len);
    for (int t = prompt_len - 1; t >= 0; --t) {
        x[t] = static_cast<int>(index % vocab_size);
        index /= vocab_size;
    }
    return x;
}

std::int64_t VocabSpec::prompt_index(const Sequence& x) const {
    check_prompt(x);
    std::int64_t idx = 0;
    for (int t : x) idx = idx * vocab_size + t;
    return idx;
}

void VocabSpec::check_prompt(const Sequence& x) const {
    check_tokens(x, vocab_size, prompt_len, "prompt");
}

void VocabSpec::check_response(const Sequence& y) const {
    check_tokens(y, vocab_size, response_len, "response");
}

}  // namespace prefalign
