#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefalign/rng.hpp"
#include "prefalign/sequence.hpp"

namespace prefalign {

enum class PolicyMode { tabular, neural };

// Low-rank additive update on the output weights: W' = W_o + A*B.
struct LoraAdapter {
    std::vector<double> a;  // hidden_dim x rank, row-major
    std::vector<double> b;  // rank x vocab_size, row-major
    int rank = 0;
    bool base_frozen = true;

    static LoraAdapter make(int hidden_dim, int vocab_size, int rank, bool base_frozen,
                            std::uint64_t seed);
};

// Context-conditioned softmax policy pi(y|x).
//
// Tabular mode holds one logit per (prompt, full response); neural mode is a
// one-hidden-layer tanh network over concatenated token embeddings of the
// prompt and the previous response tokens, right-padded with a reserved pad
// slot that maps to a zero embedding and is excluded from the output softmax.
struct PolicyParams {
    PolicyMode mode = PolicyMode::tabular;
    VocabSpec vocab;
    std::uint64_t seed = 0;

    // tabular: logits[row * num_responses + y_index]
    std::vector<Sequence> prompts;
    std::vector<double> table;

    // neural
    int embed_dim = 0;
    int hidden_dim = 0;
    std::vector<double> embed;     // vocab_size x embed_dim
    std::vector<double> w_hidden;  // (context_len*embed_dim) x hidden_dim
    std::vector<double> b_hidden;  // hidden_dim
    std::vector<double> w_out;     // hidden_dim x vocab_size
    std::vector<double> b_out;     // vocab_size
    std::optional<LoraAdapter> adapter;

    int context_len() const { return vocab.prompt_len + vocab.response_len - 1; }
    std::size_t num_prompt_rows() const { return prompts.size(); }
    std::size_t prompt_row(const Sequence& x) const;  // tabular lookup; throws if unknown
    void rebuild_prompt_index();

private:
    std::unordered_map<std::int64_t, std::size_t> prompt_rows_;
};

// Uniform-initialized tabular policy over the given prompt set (all logits zero).
PolicyParams make_tabular_uniform(const VocabSpec& vocab, std::vector<Sequence> prompts,
                                  std::uint64_t seed);

// Neural policy; embeddings and hidden weights seeded uniform(-0.1, 0.1),
// output weights and biases zero, so the initial policy is exactly uniform.
PolicyParams make_neural(const VocabSpec& vocab, int embed_dim, int hidden_dim,
                         std::uint64_t seed);

void attach_adapter(PolicyParams& policy, int rank, bool freeze_base, std::uint64_t seed);

// Exact autoregressive log pi(y|x).
double log_prob(const PolicyParams& policy, const Sequence& x, const Sequence& y);

// log pi(y|x) for every enumerated response, indexed by response_index.
std::vector<double> log_prob_all(const PolicyParams& policy, const Sequence& x);

// Ancestral sampling (token by token in neural mode; one categorical draw
// over the enumerated table in tabular mode).
Sequence sample_response(const PolicyParams& policy, const Sequence& x, Rng& rng);

// W_o + A*B when an adapter is present, else W_o. Neural mode only.
std::vector<double> effective_output_weights(const PolicyParams& policy);

std::int64_t trainable_param_count(const PolicyParams& policy);

// --- gradient machinery -----------------------------------------------------

// Ordered view of the trainable arrays; with a frozen-base adapter only the
// adapter factors appear.
struct ParamSeg {
    std::string name;
    double* data;
    std::size_t size;
};

std::vector<ParamSeg> trainable_segments(PolicyParams& policy);
std::size_t trainable_size(const PolicyParams& policy);

// Copies of the trainable coordinates, flattened in segment order.
std::vector<double> flatten_trainable(PolicyParams& policy);
void unflatten_trainable(PolicyParams& policy, std::span<const double> flat);

// grad += coeff * d log pi(y|x) / d theta (trainable coordinates only);
// returns log pi(y|x) so callers do not pay for a second forward pass.
double accumulate_log_prob_grad(const PolicyParams& policy, const Sequence& x, const Sequence& y,
                                double coeff, std::span<double> grad);

// grad += sum_y g[y] * d log pi(y_idx | x) / d theta over the enumerated
// response space; far cheaper than per-response accumulation because shared
// prefixes are backpropagated once.
void accumulate_enumerated_grad(const PolicyParams& policy, const Sequence& x,
                                std::span<const double> g, std::span<double> grad);

// Throws NumericFailure naming the offending coordinate if grad has a
// non-finite entry.
void check_gradient_finite(PolicyParams& policy, std::span<const double> grad);

}  // namespace prefalign
