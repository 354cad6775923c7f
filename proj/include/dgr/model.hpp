#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgr/autodiff.hpp"
#include "dgr/corpus.hpp"

namespace dgr {

struct ModelDims {
    int embed_dim = 32;
    int hidden_dim = 64;
    int context_k = 4;  // prefix tokens fed to the next-token head
};

/// Compact autoregressive next-token scorer. The query is encoded as the
/// mean of its token embeddings through a linear layer; next-token logits
/// project a tanh hidden layer over [query encoding; mean of the last k
/// prefix embeddings]. All math is in 64-bit floats.
///
/// Parameter layout (one flat vector):
///   embed  V x d   | wq d x d | bq d | wh h x 2d | bh h | wo V x h | bo V
class Model {
  public:
    Model() = default;

    static Model init(size_t vocab_size, const ModelDims& dims, uint64_t seed);

    size_t vocab_size() const { return vocab_size_; }
    const ModelDims& dims() const { return dims_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }
    size_t param_count() const { return theta_.size(); }

    /// Log-probabilities over the vocabulary for the next token;
    /// logsumexp of the result is 0 within 1e-6.
    std::vector<double> token_logprobs(std::span<const TokenId> query,
                                       std::span<const TokenId> prefix) const;

    /// Sum of negative token log-likelihoods; EOS is scored as the final
    /// target token.
    double generation_loss(std::span<const TokenId> query, std::span<const TokenId> target) const;

    /// Sequence probability exp(sum of token log-probs), in (0, 1].
    double score_sequence(std::span<const TokenId> query, std::span<const TokenId> target) const;

    // --- differentiable variants on a tape; `theta_leaf` must be a leaf
    // holding this model's parameter vector ---
    ad::NodeId tape_sequence_logprob(ad::Tape& tape, ad::NodeId theta_leaf,
                                     std::span<const TokenId> query,
                                     std::span<const TokenId> target) const;
    ad::NodeId tape_generation_loss(ad::Tape& tape, ad::NodeId theta_leaf,
                                    std::span<const TokenId> query,
                                    std::span<const TokenId> target) const;

    // parameter layout offsets
    size_t off_embed() const { return 0; }
    size_t off_wq() const;
    size_t off_bq() const;
    size_t off_wh() const;
    size_t off_bh() const;
    size_t off_wo() const;
    size_t off_bo() const;

    void save(const std::string& path, uint64_t vocab_hash) const;
    static Model load(const std::string& path, uint64_t expected_vocab_hash);
    static Model load_any(const std::string& path, uint64_t* vocab_hash_out = nullptr);

  private:
    void check_tokens(std::span<const TokenId> toks) const;
    std::vector<TokenId> context_window(std::span<const TokenId> prefix) const;

    size_t vocab_size_ = 0;
    ModelDims dims_;
    std::vector<double> theta_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

class AdamState {
  public:
    explicit AdamState(size_t n) : m_(n, 0.0), v_(n, 0.0) {}
    void step(std::vector<double>& theta, const std::vector<double>& grads, const AdamConfig& cfg);
    int64_t t() const { return t_; }

  private:
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

/// Applies one optimizer update; throws ValidationError on non-finite
/// gradients.
void apply_step(Model& model, const std::vector<double>& grads, AdamState& state,
                const AdamConfig& cfg);

/// Builds the scalar loss for the given (possibly perturbed) parameter
/// vector. The returned node must come from `tape` with `theta_leaf` as the
/// parameter leaf.
using LossBuilder = std::function<ad::NodeId(ad::Tape& tape, ad::NodeId theta_leaf)>;

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped_kinks = 0;
};

/// Central finite differences on n_coords sampled parameter coordinates.
/// Coordinates whose evaluations bring any hinge argument within 1e-3 of
/// its kink are skipped.
FiniteDiffReport finite_diff_check(const Model& model, const LossBuilder& build_loss, double eps,
                                   int n_coords, uint64_t seed);

}  // namespace dgr
