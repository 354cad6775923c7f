#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dgr/corpus.hpp"
#include "dgr/index.hpp"
#include "dgr/model.hpp"

namespace dgr {

/// Next-token oracle for one identifier view. States are opaque handles
/// owned by the implementation (a suffix-array range or a trie node).
class ContinuationOracle {
  public:
    struct State {
        uint64_t a = 0;
        uint64_t b = 0;
    };

    virtual ~ContinuationOracle() = default;
    virtual View view() const = 0;
    /// nullopt when the view's language is empty.
    virtual std::optional<State> start() const = 0;
    virtual std::optional<State> advance(State s, TokenId t, size_t depth) const = 0;
    /// Valid next tokens, ascending, EOS excluded.
    virtual std::vector<TokenId> next_tokens(State s, size_t depth) const = 0;
    /// Whether the prefix at this state is itself a complete identifier.
    virtual bool can_end(State s, size_t depth) const = 0;
};

std::unique_ptr<ContinuationOracle> make_substring_oracle(const SubstringIndex& index);
std::unique_ptr<ContinuationOracle> make_trie_oracle(const TokenTrie& trie, View view);

/// All three view oracles for an index, honoring the extract config's views.
std::vector<std::unique_ptr<ContinuationOracle>> make_oracles(const PassageIndex& index);

struct ScoredIdentifier {
    Identifier identifier;
    double log_prob = 0.0;
    double prob = 0.0;  // exp(log_prob), the sequence probability
};

/// Constrained beam search over one view. Hypotheses finishing on EOS leave
/// the beam without consuming capacity; at most `beam_size` identifiers are
/// returned, sorted by log-prob descending with lexicographic tie-break.
std::vector<ScoredIdentifier> beam_search_view(const Model& model, const ContinuationOracle& oracle,
                                               std::span<const TokenId> query, int beam_size,
                                               int max_len);

/// Per-view beams, results pooled.
std::vector<ScoredIdentifier> beam_search(const Model& model,
                                          std::span<const std::unique_ptr<ContinuationOracle>> oracles,
                                          std::span<const TokenId> query, int beam_size, int max_len);

}  // namespace dgr
