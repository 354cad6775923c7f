#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dgr/corpus.hpp"

namespace dgr {

inline constexpr size_t kDefaultMatchCap = 10000;

/// Token-level suffix array over all passage bodies, joined by a separator
/// id one past the vocabulary. Patterns are vocabulary tokens only, so no
/// match can cross a passage boundary.
class SubstringIndex {
  public:
    /// Half-open slice [lo, hi) of the suffix array whose suffixes share a
    /// prefix of `len` tokens.
    struct Range {
        size_t lo = 0;
        size_t hi = 0;
        size_t len = 0;
        bool empty() const { return lo >= hi; }
    };

    static SubstringIndex build(const Corpus& corpus, const Vocabulary& vocab);

    Range whole() const { return {0, sa_.size(), 0}; }
    Range extend(Range r, TokenId t) const;
    Range find(std::span<const TokenId> pattern) const;

    /// Distinct next tokens inside `r`, ascending, separator excluded.
    std::vector<TokenId> continuations(Range r) const;

    /// { t : prefix.t occurs in some body }, plus kEos iff prefix occurs.
    /// The empty prefix occurs by convention.
    std::set<TokenId> allowed_continuations(std::span<const TokenId> prefix) const;

    struct LocateResult {
        std::vector<std::string> passages;  // sorted ids
        bool truncated = false;
    };
    LocateResult locate(std::span<const TokenId> pattern, size_t max_matches = kDefaultMatchCap) const;

    size_t text_size() const { return text_.size(); }
    const std::vector<std::string>& passage_ids() const { return passage_ids_; }

    void save(std::ostream& out) const;
    static SubstringIndex load(std::istream& in);

  private:
    size_t passage_of(size_t pos) const;

    std::vector<TokenId> text_;
    std::vector<uint32_t> sa_;
    std::vector<uint32_t> passage_start_;
    std::vector<std::string> passage_ids_;
    TokenId separator_ = 0;
};

/// Exact-match table from full identifier token sequences to passage ids.
class ExactTable {
  public:
    void add(std::vector<TokenId> seq, const std::string& pid);
    const std::vector<std::string>* lookup(std::span<const TokenId> seq) const;
    const std::map<std::vector<TokenId>, std::vector<std::string>>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    void save(std::ostream& out) const;
    static ExactTable load(std::istream& in);

  private:
    std::map<std::vector<TokenId>, std::vector<std::string>> entries_;  // pids sorted, unique
};

/// Prefix trie over an exact table's key sequences; the continuation oracle
/// for title and pseudo-query decoding.
class TokenTrie {
  public:
    using NodeRef = int32_t;
    static constexpr NodeRef kInvalid = -1;

    static TokenTrie build(const ExactTable& table);

    NodeRef root() const { return nodes_.empty() ? kInvalid : 0; }
    NodeRef child(NodeRef node, TokenId t) const;
    bool terminal(NodeRef node) const;
    std::vector<TokenId> continuations(NodeRef node) const;  // ascending
    bool empty() const { return nodes_.empty() || nodes_[0].children.empty(); }

  private:
    struct Node {
        std::map<TokenId, NodeRef> children;
        bool terminal = false;
    };
    std::vector<Node> nodes_;
};

/// The full retrieval index: substring structures over bodies plus exact
/// tables (and tries) for the title and pseudo-query views.
class PassageIndex {
  public:
    static PassageIndex build(const Corpus& corpus, const Vocabulary& vocab,
                              const IdentifierExtractor& extractor, const ExtractConfig& cfg);

    std::vector<std::string> match_passages(const Identifier& ident, size_t cap = kDefaultMatchCap,
                                            bool* truncated = nullptr) const;

    const SubstringIndex& substrings() const { return substrings_; }
    const ExactTable& titles() const { return titles_; }
    const ExactTable& pseudo_queries() const { return pseudo_queries_; }
    const TokenTrie& title_trie() const { return title_trie_; }
    const TokenTrie& pseudo_query_trie() const { return pq_trie_; }
    uint64_t vocab_hash() const { return vocab_hash_; }

    void save(const std::string& path) const;
    static PassageIndex load(const std::string& path);

  private:
    SubstringIndex substrings_;
    ExactTable titles_;
    ExactTable pseudo_queries_;
    TokenTrie title_trie_;
    TokenTrie pq_trie_;
    uint64_t vocab_hash_ = 0;
};

}  // namespace dgr
