#include "prefalign/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "prefalign/errors.hpp"
#include "prefalign/math.hpp"

namespace prefalign {

namespace {

constexpr double kInitRange = 0.1;

// Flat offsets of each trainable array inside the gradient buffer; -1 when
// the array is frozen or absent.
struct GradLayout {
    std::ptrdiff_t table = -1;
    std::ptrdiff_t embed = -1;
    std::ptrdiff_t w_hidden = -1;
    std::ptrdiff_t b_hidden = -1;
    std::ptrdiff_t w_out = -1;
    std::ptrdiff_t b_out = -1;
    std::ptrdiff_t lora_a = -1;
    std::ptrdiff_t lora_b = -1;
    std::size_t total = 0;
};

GradLayout grad_layout(const PolicyParams& p) {
    GradLayout g;
    std::size_t off = 0;
    if (p.mode == PolicyMode::tabular) {
        g.table = static_cast<std::ptrdiff_t>(off);
        off += p.table.size();
        g.total = off;
        return g;
    }
    const bool frozen = p.adapter && p.adapter->base_frozen;
    if (!frozen) {
        g.embed = static_cast<std::ptrdiff_t>(off);
        off += p.embed.size();
        g.w_hidden = static_cast<std::ptrdiff_t>(off);
        off += p.w_hidden.size();
        g.b_hidden = static_cast<std::ptrdiff_t>(off);
        off += p.b_hidden.size();
        g.w_out = static_cast<std::ptrdiff_t>(off);
        off += p.w_out.size();
        g.b_out = static_cast<std::ptrdiff_t>(off);
        off += p.b_out.size();
    }
    if (p.adapter) {
        g.lora_a = static_cast<std::ptrdiff_t>(off);
        off += p.adapter->a.size();
        g.lora_b = static_cast<std::ptrdiff_t>(off);
        off += p.adapter->b.size();
    }
    g.total = off;
    return g;
}

// Scratch space for neural forward/backward passes at one context.
struct NeuralScratch {
    std::vector<double> w_eff;      // hidden_dim x V
    std::vector<double> input;      // context_len x embed_dim (pad slots zero)
    std::vector<double> hidden;     // tanh activations
    std::vector<double> logits;     // V
    std::vector<double> probs;      // V
    std::vector<double> du;         // hidden_dim, backward
    std::vector<double> tmp_rank;   // adapter rank scratch

    void init(const PolicyParams& p) {
        const int V = p.vocab.vocab_size;
        w_eff = effective_output_weights_impl(p);
        input.assign(static_cast<std::size_t>(p.context_len()) * p.embed_dim, 0.0);
        hidden.assign(p.hidden_dim, 0.0);
        logits.assign(V, 0.0);
        probs.assign(V, 0.0);
        du.assign(p.hidden_dim, 0.0);
        if (p.adapter) tmp_rank.assign(p.adapter->rank, 0.0);
    }

    static std::vector<double> effective_output_weights_impl(const PolicyParams& p) {
        std::vector<double> w = p.w_out;
        if (p.adapter) {
            const int V = p.vocab.vocab_size;
            const int r = p.adapter->rank;
            for (int j = 0; j < p.hidden_dim; ++j) {
                for (int rr = 0; rr < r; ++rr) {
                    const double a = p.adapter->a[static_cast<std::size_t>(j) * r + rr];
                    if (a == 0.0) continue;
                    const double* brow = &p.adapter->b[static_cast<std::size_t>(rr) * V];
                    double* wrow = &w[static_cast<std::size_t>(j) * V];
                    for (int v = 0; v < V; ++v) wrow[v] += a * brow[v];
                }
            }
        }
        return w;
    }
};

// Fill the input slots for prompt x plus the first `prefix_len` tokens of the
// response; remaining slots stay zero (the reserved pad embedding).
void fill_input(const PolicyParams& p, const Sequence& x, const int* prefix, int prefix_len,
                std::vector<double>& input) {
    const int d = p.embed_dim;
    std::fill(input.begin(), input.end(), 0.0);
    int slot = 0;
    for (int t : x) {
        const double* e = &p.embed[static_cast<std::size_t>(t) * d];
        std::memcpy(&input[static_cast<std::size_t>(slot) * d], e, sizeof(double) * d);
        ++slot;
    }
    for (int i = 0; i < prefix_len; ++i) {
        const double* e = &p.embed[static_cast<std::size_t>(prefix[i]) * d];
        std::memcpy(&input[static_cast<std::size_t>(slot) * d], e, sizeof(double) * d);
        ++slot;
    }
}

// hidden = tanh(W_h^T input + b_h); logits = W'^T hidden + b_o
void forward_from_input(const PolicyParams& p, NeuralScratch& s) {
    const int h = p.hidden_dim;
    const int V = p.vocab.vocab_size;
    const std::size_t in_dim = s.input.size();
    std::vector<double>& hid = s.hidden;
    for (int j = 0; j < h; ++j) hid[j] = p.b_hidden[j];
    for (std::size_t i = 0; i < in_dim; ++i) {
        const double xi = s.input[i];
        if (xi == 0.0) continue;
        const double* wrow = &p.w_hidden[i * h];
        for (int j = 0; j < h; ++j) hid[j] += xi * wrow[j];
    }
    for (int j = 0; j < h; ++j) hid[j] = std::tanh(hid[j]);
    for (int v = 0; v < V; ++v) s.logits[v] = p.b_out[v];
    for (int j = 0; j < h; ++j) {
        const double aj = hid[j];
        const double* wrow = &s.w_eff[static_cast<std::size_t>(j) * V];
        for (int v = 0; v < V; ++v) s.logits[v] += aj * wrow[v];
    }
}

void forward_context(const PolicyParams& p, const Sequence& x, const int* prefix, int prefix_len,
                     NeuralScratch& s) {
    fill_input(p, x, prefix, prefix_len, s.input);
    forward_from_input(p, s);
}

// Backpropagate dL/dlogits = delta for the current context in the scratch.
// `prefix` identifies the non-pad response slots for embedding gradients.
void backprop_context(const PolicyParams& p, const GradLayout& lay, const Sequence& x,
                      const int* prefix, int prefix_len, NeuralScratch& s,
                      const double* delta, std::span<double> grad) {
    const int h = p.hidden_dim;
    const int V = p.vocab.vocab_size;
    const int d = p.embed_dim;

    if (lay.b_out >= 0) {
        double* gb = grad.data() + lay.b_out;
        for (int v = 0; v < V; ++v) gb[v] += delta[v];
    }
    if (lay.w_out >= 0) {
        double* gw = grad.data() + lay.w_out;
        for (int j = 0; j < h; ++j) {
            const double aj = s.hidden[j];
            if (aj == 0.0) continue;
            double* grow = gw + static_cast<std::size_t>(j) * V;
            for (int v = 0; v < V; ++v) grow[v] += aj * delta[v];
        }
    }
    if (p.adapter && lay.lora_a >= 0) {
        const int r = p.adapter->rank;
        // dA[j][rr] += a_j (B delta)_rr ; dB[rr][v] += (A^T a)_rr delta_v
        std::vector<double>& bd = s.tmp_rank;
        for (int rr = 0; rr < r; ++rr) {
            const double* brow = &p.adapter->b[static_cast<std::size_t>(rr) * V];
            double acc = 0.0;
            for (int v = 0; v < V; ++v) acc += brow[v] * delta[v];
            bd[rr] = acc;
        }
        double* ga = grad.data() + lay.lora_a;
        for (int j = 0; j < h; ++j) {
            const double aj = s.hidden[j];
            if (aj == 0.0) continue;
            double* garow = ga + static_cast<std::size_t>(j) * r;
            for (int rr = 0; rr < r; ++rr) garow[rr] += aj * bd[rr];
        }
        double* gb = grad.data() + lay.lora_b;
        for (int rr = 0; rr < r; ++rr) {
            double ata = 0.0;
            for (int j = 0; j < h; ++j) {
                ata += p.adapter->a[static_cast<std::size_t>(j) * r + rr] * s.hidden[j];
            }
            if (ata == 0.0) continue;
            double* gbrow = gb + static_cast<std::size_t>(rr) * V;
            for (int v = 0; v < V; ++v) gbrow[v] += ata * delta[v];
        }
    }

    // Nothing upstream of the output layer is trainable with a frozen base.
    if (lay.w_hidden < 0 && lay.b_hidden < 0 && lay.embed < 0) return;

    std::vector<double>& du = s.du;
    for (int j = 0; j < h; ++j) {
        const double* wrow = &s.w_eff[static_cast<std::size_t>(j) * V];
        double da = 0.0;
        for (int v = 0; v < V; ++v) da += wrow[v] * delta[v];
        du[j] = da * (1.0 - s.hidden[j] * s.hidden[j]);
    }
    if (lay.b_hidden >= 0) {
        double* gb = grad.data() + lay.b_hidden;
        for (int j = 0; j < h; ++j) gb[j] += du[j];
    }

    const int n_slots = p.vocab.prompt_len + prefix_len;
    if (lay.w_hidden >= 0) {
        double* gw = grad.data() + lay.w_hidden;
        for (int slot = 0; slot < n_slots; ++slot) {
            const std::size_t base = static_cast<std::size_t>(slot) * d;
            for (int i = 0; i < d; ++i) {
                const double xi = s.input[base + i];
                if (xi == 0.0) continue;
                double* grow = gw + (base + i) * h;
                for (int j = 0; j < h; ++j) grow[j] += xi * du[j];
            }
        }
    }
    if (lay.embed >= 0) {
        double* ge = grad.data() + lay.embed;
        for (int slot = 0; slot < n_slots; ++slot) {
            const int tok = slot < p.vocab.prompt_len ? x[slot] : prefix[slot - p.vocab.prompt_len];
            const std::size_t base = static_cast<std::size_t>(slot) * d;
            double* gerow = ge + static_cast<std::size_t>(tok) * d;
            for (int i = 0; i < d; ++i) {
                const double* wrow = &p.w_hidden[(base + i) * h];
                double acc = 0.0;
                for (int j = 0; j < h; ++j) acc += wrow[j] * du[j];
                gerow[i] += acc;
            }
        }
    }
}

int categorical_draw(std::span<const double> probs, Rng& rng) {
    const double u = rng.next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

}  // namespace

LoraAdapter LoraAdapter::make(int hidden_dim, int vocab_size, int rank, bool base_frozen,
                              std::uint64_t seed) {
    if (rank < 1) throw InvalidArgument("LoraAdapter: rank must be >= 1");
    if (rank > std::min(hidden_dim, vocab_size)) {
        throw InvalidArgument("LoraAdapter: rank exceeds min(hidden_dim, vocab_size)");
    }
    LoraAdapter ad;
    ad.rank = rank;
    ad.base_frozen = base_frozen;
    Rng rng(seed);
    ad.a.resize(static_cast<std::size_t>(hidden_dim) * rank);
    for (double& v : ad.a) v = rng.uniform(-kInitRange, kInitRange);
    ad.b.assign(static_cast<std::size_t>(rank) * vocab_size, 0.0);  // A*B = 0 at init
    return ad;
}

std::size_t PolicyParams::prompt_row(const Sequence& x) const {
    const std::int64_t code = vocab.prompt_index(x);
    const auto it = prompt_rows_.find(code);
    if (it == prompt_rows_.end()) {
        throw InvalidArgument("tabular policy: prompt not in the enumerated prompt set");
    }
    return it->second;
}

void PolicyParams::rebuild_prompt_index() {
    prompt_rows_.clear();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const std::int64_t code = vocab.prompt_index(prompts[i]);
        if (!prompt_rows_.emplace(code, i).second) {
            throw InvalidArgument("tabular policy: duplicate prompt in prompt set");
        }
    }
}

PolicyParams make_tabular_uniform(const VocabSpec& vocab, std::vector<Sequence> prompts,
                                  std::uint64_t seed) {
    if (prompts.empty()) throw InvalidArgument("make_tabular_uniform: empty prompt set");
    PolicyParams p;
    p.mode = PolicyMode::tabular;
    p.vocab = vocab;
    p.seed = seed;
    p.prompts = std::move(prompts);
    p.table.assign(p.prompts.size() * static_cast<std::size_t>(vocab.num_responses()), 0.0);
    p.rebuild_prompt_index();
    return p;
}

PolicyParams make_neural(const VocabSpec& vocab, int embed_dim, int hidden_dim,
                         std::uint64_t seed) {
    if (embed_dim < 1 || hidden_dim < 1) {
        throw InvalidArgument("make_neural: embed_dim and hidden_dim must be >= 1");
    }
    PolicyParams p;
    p.mode = PolicyMode::neural;
    p.vocab = vocab;
    p.seed = seed;
    p.embed_dim = embed_dim;
    p.hidden_dim = hidden_dim;
    Rng rng(seed);
    p.embed.resize(static_cast<std::size_t>(vocab.vocab_size) * embed_dim);
    for (double& v : p.embed) v = rng.uniform(-kInitRange, kInitRange);
    p.w_hidden.resize(static_cast<std::size_t>(p.context_len()) * embed_dim * hidden_dim);
    for (double& v : p.w_hidden) v = rng.uniform(-kInitRange, kInitRange);
    p.b_hidden.assign(hidden_dim, 0.0);
    p.w_out.assign(static_cast<std::size_t>(hidden_dim) * vocab.vocab_size, 0.0);
    p.b_out.assign(vocab.vocab_size, 0.0);
    return p;
}

void attach_adapter(PolicyParams& policy, int rank, bool freeze_base, std::uint64_t seed) {
    if (policy.mode != PolicyMode::neural) {
        throw UnsupportedOperation("attach_adapter: adapters require neural mode");
    }
    policy.adapter = LoraAdapter::make(policy.hidden_dim, policy.vocab.vocab_size, rank,
                                       freeze_base, seed);
}

double log_prob(const PolicyParams& policy, const Sequence& x, const Sequence& y) {
    policy.vocab.check_prompt(x);
    const std::int64_t y_idx = policy.vocab.response_index(y);
    if (policy.mode == PolicyMode::tabular) {
        const std::size_t row = policy.prompt_row(x);
        const std::size_t ny = static_cast<std::size_t>(policy.vocab.num_responses());
        const std::span<const double> logits(&policy.table[row * ny], ny);
        return logits[static_cast<std::size_t>(y_idx)] - log_sum_exp(logits);
    }
    NeuralScratch s;
    s.init(policy);
    double lp = 0.0;
    for (int t = 0; t < policy.vocab.response_len; ++t) {
        forward_context(policy, x, y.data(), t, s);
        const double lse = log_sum_exp(s.logits);
        lp += s.logits[static_cast<std::size_t>(y[t])] - lse;
    }
    return lp;
}

std::vector<double> log_prob_all(const PolicyParams& policy, const Sequence& x) {
    policy.vocab.check_prompt(x);
    const std::int64_t ny = policy.vocab.num_responses();
    if (policy.mode == PolicyMode::tabular) {
        const std::size_t row = policy.prompt_row(x);
        const std::span<const double> logits(&policy.table[row * static_cast<std::size_t>(ny)],
                                             static_cast<std::size_t>(ny));
        return log_softmax(logits);
    }
    const int V = policy.vocab.vocab_size;
    const int L = policy.vocab.response_len;
    std::vector<double> out(static_cast<std::size_t>(ny), 0.0);
    NeuralScratch s;
    s.init(policy);
    std::vector<int> prefix(L, 0);
    // Depth-first over response prefixes; each context is evaluated once and
    // its log-softmax broadcast onto the index range it governs.
    auto walk = [&](auto&& self, int depth, std::int64_t base, std::int64_t stride,
                    double logp_prefix) -> void {
        forward_context(policy, x, prefix.data(), depth, s);
        const double lse = log_sum_exp(s.logits);
        for (int v = 0; v < V; ++v) {
            const double lp = logp_prefix + s.logits[v] - lse;
            if (depth + 1 == L) {
                out[static_cast<std::size_t>(base + v)] = lp;
            } else {
                prefix[depth] = v;
                self(self, depth + 1, base + v * stride, stride / V, lp);
            }
        }
    };
    walk(walk, 0, 0, ny / V, 0.0);
    return out;
}

Sequence sample_response(const PolicyParams& policy, const Sequence& x, Rng& rng) {
    policy.vocab.check_prompt(x);
    if (policy.mode == PolicyMode::tabular) {
        const std::size_t row = policy.prompt_row(x);
        const std::size_t ny = static_cast<std::size_t>(policy.vocab.num_responses());
        const std::span<const double> logits(&policy.table[row * ny], ny);
        const std::vector<double> probs = softmax(logits);
        return policy.vocab.response_from_index(categorical_draw(probs, rng));
    }
    NeuralScratch s;
    s.init(policy);
    Sequence y(policy.vocab.response_len);
    for (int t = 0; t < policy.vocab.response_len; ++t) {
        forward_context(policy, x, y.data(), t, s);
        const std::vector<double> probs = softmax(s.logits);
        y[t] = categorical_draw(probs, rng);
    }
    return y;
}

std::vector<double> effective_output_weights(const PolicyParams& policy) {
    if (policy.mode != PolicyMode::neural) {
        throw UnsupportedOperation("effective_output_weights: neural mode only");
    }
    return NeuralScratch::effective_output_weights_impl(policy);
}

std::int64_t trainable_param_count(const PolicyParams& policy) {
    if (policy.mode == PolicyMode::tabular) {
        return static_cast<std::int64_t>(policy.table.size());
    }
    std::int64_t n = 0;
    const bool frozen = policy.adapter && policy.adapter->base_frozen;
    if (!frozen) {
        n += static_cast<std::int64_t>(policy.embed.size() + policy.w_hidden.size() +
                                       policy.b_hidden.size() + policy.w_out.size() +
                                       policy.b_out.size());
    }
    if (policy.adapter) {
        n += static_cast<std::int64_t>(policy.adapter->a.size() + policy.adapter->b.size());
    }
    return n;
}

std::vector<ParamSeg> trainable_segments(PolicyParams& p) {
    std::vector<ParamSeg> segs;
    if (p.mode == PolicyMode::tabular) {
        segs.push_back({"table", p.table.data(), p.table.size()});
        return segs;
    }
    const bool frozen = p.adapter && p.adapter->base_frozen;
    if (!frozen) {
        segs.push_back({"embed", p.embed.data(), p.embed.size()});
        segs.push_back({"w_hidden", p.w_hidden.data(), p.w_hidden.size()});
        segs.push_back({"b_hidden", p.b_hidden.data(), p.b_hidden.size()});
        segs.push_back({"w_out", p.w_out.data(), p.w_out.size()});
        segs.push_back({"b_out", p.b_out.data(), p.b_out.size()});
    }
    if (p.adapter) {
        segs.push_back({"lora_a", p.adapter->a.data(), p.adapter->a.size()});
        segs.push_back({"lora_b", p.adapter->b.data(), p.adapter->b.size()});
    }
    return segs;
}

std::size_t trainable_size(const PolicyParams& p) {
    return grad_layout(p).total;
}

std::vector<double> flatten_trainable(PolicyParams& p) {
    std::vector<double> flat;
    flat.reserve(trainable_size(p));
    for (const ParamSeg& seg : trainable_segments(p)) {
        flat.insert(flat.end(), seg.data, seg.data + seg.size);
    }
    return flat;
}

void unflatten_trainable(PolicyParams& p, std::span<const double> flat) {
    std::size_t off = 0;
    for (const ParamSeg& seg : trainable_segments(p)) {
        if (off + seg.size > flat.size()) {
            throw InvalidArgument("unflatten_trainable: size mismatch");
        }
        std::copy(flat.begin() + off, flat.begin() + off + seg.size, seg.data);
        off += seg.size;
    }
    if (off != flat.size()) throw InvalidArgument("unflatten_trainable: size mismatch");
}

double accumulate_log_prob_grad(const PolicyParams& policy, const Sequence& x, const Sequence& y,
                                double coeff, std::span<double> grad) {
    const GradLayout lay = grad_layout(policy);
    if (grad.size() != lay.total) throw InvalidArgument("gradient buffer size mismatch");
    policy.vocab.check_prompt(x);
    const std::int64_t y_idx = policy.vocab.response_index(y);

    if (policy.mode == PolicyMode::tabular) {
        const std::size_t row = policy.prompt_row(x);
        const std::size_t ny = static_cast<std::size_t>(policy.vocab.num_responses());
        const std::span<const double> logits(&policy.table[row * ny], ny);
        const double lse = log_sum_exp(logits);
        if (coeff != 0.0) {
            double* g = grad.data() + lay.table + row * ny;
            for (std::size_t i = 0; i < ny; ++i) g[i] -= coeff * std::exp(logits[i] - lse);
            g[static_cast<std::size_t>(y_idx)] += coeff;
        }
        return logits[static_cast<std::size_t>(y_idx)] - lse;
    }

    NeuralScratch s;
    s.init(policy);
    const int V = policy.vocab.vocab_size;
    std::vector<double> delta(V);
    double logp = 0.0;
    for (int t = 0; t < policy.vocab.response_len; ++t) {
        forward_context(policy, x, y.data(), t, s);
        const double lse = log_sum_exp(s.logits);
        logp += s.logits[static_cast<std::size_t>(y[t])] - lse;
        if (coeff == 0.0) continue;
        for (int v = 0; v < V; ++v) delta[v] = -coeff * std::exp(s.logits[v] - lse);
        delta[y[t]] += coeff;
        backprop_context(policy, lay, x, y.data(), t, s, delta.data(), grad);
    }
    return logp;
}

void accumulate_enumerated_grad(const PolicyParams& policy, const Sequence& x,
                                std::span<const double> g, std::span<double> grad) {
    const GradLayout lay = grad_layout(policy);
    if (grad.size() != lay.total) throw InvalidArgument("gradient buffer size mismatch");
    const std::int64_t ny = policy.vocab.num_responses();
    if (static_cast<std::int64_t>(g.size()) != ny) {
        throw InvalidArgument("accumulate_enumerated_grad: coefficient vector size mismatch");
    }
    policy.vocab.check_prompt(x);

    if (policy.mode == PolicyMode::tabular) {
        const std::size_t row = policy.prompt_row(x);
        const std::size_t n = static_cast<std::size_t>(ny);
        const std::span<const double> logits(&policy.table[row * n], n);
        const std::vector<double> probs = softmax(logits);
        double gsum = 0.0;
        for (double v : g) gsum += v;
        double* out = grad.data() + lay.table + row * n;
        for (std::size_t i = 0; i < n; ++i) out[i] += g[i] - gsum * probs[i];
        return;
    }

    const int V = policy.vocab.vocab_size;
    const int L = policy.vocab.response_len;
    NeuralScratch s;
    s.init(policy);
    std::vector<int> prefix(L, 0);
    std::vector<double> delta(V);
    std::vector<double> gv(V);
    // One backward pass per context node; coefficients of the responses
    // passing through each child are pooled into that child's slot.
    auto walk = [&](auto&& self, int depth, std::int64_t base, std::int64_t stride) -> void {
        // Skip subtrees whose coefficients are identically zero.
        bool any = false;
        for (std::int64_t i = base; i < base + stride * V; ++i) {
            if (g[static_cast<std::size_t>(i)] != 0.0) { any = true; break; }
        }
        if (!any) return;
        double gsum = 0.0;
        for (int v = 0; v < V; ++v) {
            double acc = 0.0;
            const std::int64_t lo = base + v * stride;
            for (std::int64_t i = lo; i < lo + stride; ++i) acc += g[static_cast<std::size_t>(i)];
            gv[v] = acc;
            gsum += acc;
        }
        forward_context(policy, x, prefix.data(), depth, s);
        const std::vector<double> probs = softmax(s.logits);
        for (int v = 0; v < V; ++v) delta[v] = gv[v] - gsum * probs[v];
        backprop_context(policy, lay, x, prefix.data(), depth, s, delta.data(), grad);
        if (depth + 1 == L) return;
        for (int v = 0; v < V; ++v) {
            prefix[depth] = v;
            self(self, depth + 1, base + v * stride, stride / V);
        }
    };
    walk(walk, 0, 0, ny / V);
}

void check_gradient_finite(PolicyParams& policy, std::span<const double> grad) {
    std::size_t off = 0;
    for (const ParamSeg& seg : trainable_segments(policy)) {
        for (std::size_t i = 0; i < seg.size; ++i) {
            if (!std::isfinite(grad[off + i])) {
                throw NumericFailure("non-finite gradient at " + seg.name + "[" +
                                     std::to_string(i) + "]");
            }
        }
        off += seg.size;
    }
}

}  // namespace prefalign
