#include "dgr/decode.hpp"

#include <algorithm>
#include <cmath>

#include "dgr/errors.hpp"

namespace dgr {

namespace {

class SubstringOracle final : public ContinuationOracle {
  public:
    explicit SubstringOracle(const SubstringIndex& index) : index_(&index) {}

    View view() const override { return View::Substring; }

    std::optional<State> start() const override {
        auto r = index_->whole();
        if (r.empty()) return std::nullopt;
        return State{r.lo, r.hi};
    }

    std::optional<State> advance(State s, TokenId t, size_t depth) const override {
        auto r = index_->extend({s.a, s.b, depth}, t);
        if (r.empty()) return std::nullopt;
        return State{r.lo, r.hi};
    }

    std::vector<TokenId> next_tokens(State s, size_t depth) const override {
        return index_->continuations({s.a, s.b, depth});
    }

    bool can_end(State, size_t) const override { return true; }  // prefix occurs by construction

  private:
    const SubstringIndex* index_;
};

class TrieOracle final : public ContinuationOracle {
  public:
    TrieOracle(const TokenTrie& trie, View v) : trie_(&trie), view_(v) {}

    View view() const override { return view_; }

    std::optional<State> start() const override {
        if (trie_->empty()) return std::nullopt;
        return State{static_cast<uint64_t>(trie_->root()), 0};
    }

    std::optional<State> advance(State s, TokenId t, size_t) const override {
        auto child = trie_->child(static_cast<TokenTrie::NodeRef>(s.a), t);
        if (child == TokenTrie::kInvalid) return std::nullopt;
        return State{static_cast<uint64_t>(child), 0};
    }

    std::vector<TokenId> next_tokens(State s, size_t) const override {
        return trie_->continuations(static_cast<TokenTrie::NodeRef>(s.a));
    }

    bool can_end(State s, size_t) const override {
        return trie_->terminal(static_cast<TokenTrie::NodeRef>(s.a));
    }

  private:
    const TokenTrie* trie_;
    View view_;
};

struct Hypothesis {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    ContinuationOracle::State state;
};

bool better(const std::vector<TokenId>& at, double alp, const std::vector<TokenId>& bt, double blp) {
    if (alp != blp) return alp > blp;
    return at < bt;  // deterministic tie-break
}

}  // namespace

std::unique_ptr<ContinuationOracle> make_substring_oracle(const SubstringIndex& index) {
    return std::make_unique<SubstringOracle>(index);
}

std::unique_ptr<ContinuationOracle> make_trie_oracle(const TokenTrie& trie, View view) {
    return std::make_unique<TrieOracle>(trie, view);
}

std::vector<std::unique_ptr<ContinuationOracle>> make_oracles(const PassageIndex& index) {
    std::vector<std::unique_ptr<ContinuationOracle>> out;
    out.push_back(make_trie_oracle(index.title_trie(), View::Title));
    out.push_back(make_substring_oracle(index.substrings()));
    out.push_back(make_trie_oracle(index.pseudo_query_trie(), View::PseudoQuery));
    return out;
}

std::vector<ScoredIdentifier> beam_search_view(const Model& model, const ContinuationOracle& oracle,
                                               std::span<const TokenId> query, int beam_size,
                                               int max_len) {
    if (beam_size < 1 || max_len < 1) throw ValidationError("beam_size and max_len must be >= 1");

    std::vector<ScoredIdentifier> finished;
    auto start = oracle.start();
    if (!start.has_value()) return finished;

    std::vector<Hypothesis> frontier;
    frontier.push_back({{}, 0.0, *start});

    for (int depth = 0; depth <= max_len && !frontier.empty(); ++depth) {
        std::vector<Hypothesis> candidates;
        for (const auto& hyp : frontier) {
            std::vector<double> lp = model.token_logprobs(query, hyp.tokens);
            // Identifiers are nonempty, so EOS cannot finish at depth 0.
            if (depth >= 1 && oracle.can_end(hyp.state, static_cast<size_t>(depth))) {
                double score = hyp.log_prob + lp[kEos];
                finished.push_back({{oracle.view(), hyp.tokens, ""}, score, std::exp(score)});
            }
            if (depth == max_len) continue;
            for (TokenId t : oracle.next_tokens(hyp.state, static_cast<size_t>(depth))) {
                auto next = oracle.advance(hyp.state, t, static_cast<size_t>(depth));
                if (!next.has_value()) continue;
                Hypothesis ext;
                ext.tokens = hyp.tokens;
                ext.tokens.push_back(t);
                ext.log_prob = hyp.log_prob + lp[t];
                ext.state = *next;
                candidates.push_back(std::move(ext));
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
            return better(a.tokens, a.log_prob, b.tokens, b.log_prob);
        });
        if (candidates.size() > static_cast<size_t>(beam_size)) {
            candidates.resize(static_cast<size_t>(beam_size));
        }
        frontier = std::move(candidates);
    }

    std::sort(finished.begin(), finished.end(), [](const ScoredIdentifier& a, const ScoredIdentifier& b) {
        return better(a.identifier.tokens, a.log_prob, b.identifier.tokens, b.log_prob);
    });
    if (finished.size() > static_cast<size_t>(beam_size)) {
        finished.resize(static_cast<size_t>(beam_size));
    }
    return finished;
}

std::vector<ScoredIdentifier> beam_search(const Model& model,
                                          std::span<const std::unique_ptr<ContinuationOracle>> oracles,
                                          std::span<const TokenId> query, int beam_size, int max_len) {
    std::vector<ScoredIdentifier> pooled;
    for (const auto& oracle : oracles) {
        auto part = beam_search_view(model, *oracle, query, beam_size, max_len);
        pooled.insert(pooled.end(), std::make_move_iterator(part.begin()),
                      std::make_move_iterator(part.end()));
    }
    return pooled;
}

}  // namespace dgr
