#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dgr {

using TokenId = uint32_t;

// Reserved vocabulary slots. Corpus tokens start at kNumReserved.
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kNumReserved = 3;

struct Passage {
    std::string id;
    std::string title;  // may be empty
    std::string body;
    std::vector<std::string> pseudo_queries;  // may be empty
};

/// Immutable after load; insertion order preserved.
class Corpus {
  public:
    void add(Passage p);
    const Passage& at(size_t i) const { return passages_.at(i); }
    const Passage* find(const std::string& id) const;
    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }
    size_t size() const { return passages_.size(); }
    bool empty() const { return passages_.empty(); }
    auto begin() const { return passages_.begin(); }
    auto end() const { return passages_.end(); }

  private:
    std::vector<Passage> passages_;
    std::unordered_map<std::string, size_t> by_id_;
};

/// One JSON object per line: id, title, text, optional pseudo_queries.
Corpus load_corpus(const std::string& path);

/// Lowercased words split on whitespace and ASCII punctuation.
std::vector<std::string> tokenize(std::string_view text);

/// Sentence spans split on [.!?]; used by the pseudo-query heuristic.
std::vector<std::string> split_sentences(std::string_view text);

/// Closed vocabulary over all corpus text (titles, bodies, stored
/// pseudo-queries), ids assigned in sorted token order after the reserved
/// slots. Queries map out-of-vocabulary words to kUnk.
class Vocabulary {
  public:
    static Vocabulary build(const Corpus& corpus);

    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    size_t size() const { return tokens_.size(); }
    uint64_t hash() const { return hash_; }

    std::vector<TokenId> encode(std::string_view text) const;
    std::vector<TokenId> encode_tokens(const std::vector<std::string>& words) const;
    std::string decode(std::span<const TokenId> ids) const;

  private:
    std::vector<std::string> tokens_;  // indexed by id, includes reserved
    std::unordered_map<std::string, TokenId> by_token_;
    uint64_t hash_ = 0;
};

enum class View : uint8_t { Title = 0, Substring = 1, PseudoQuery = 2 };

const char* view_name(View v);

/// A typed token sequence standing in for one passage view.
struct Identifier {
    View view;
    std::vector<TokenId> tokens;        // length >= 1
    std::string source_passage;         // known at extraction time only
};

/// (query id, passage id) -> grade. Every judged query carries at least one
/// positive grade.
class Qrels {
  public:
    void add(const std::string& qid, const std::string& pid, int grade);
    int grade(const std::string& qid, const std::string& pid) const;
    bool has_query(const std::string& qid) const { return entries_.count(qid) > 0; }
    const std::map<std::string, int>* judgments(const std::string& qid) const;
    const std::map<std::string, std::map<std::string, int>>& entries() const { return entries_; }
    size_t num_queries() const { return entries_.size(); }
    void validate() const;  // at least one positive per judged query

  private:
    std::map<std::string, std::map<std::string, int>> entries_;
};

/// TREC layout: "qid 0 pid grade".
Qrels load_qrels(const std::string& path);

struct Query {
    std::string id;
    std::string text;
};

/// File order preserved; lines are "qid<TAB>text".
class QuerySet {
  public:
    void add(Query q);
    const Query& at(size_t i) const { return queries_.at(i); }
    const Query* find(const std::string& id) const;
    size_t size() const { return queries_.size(); }
    auto begin() const { return queries_.begin(); }
    auto end() const { return queries_.end(); }

  private:
    std::vector<Query> queries_;
    std::unordered_map<std::string, size_t> by_id_;
};

QuerySet load_queries(const std::string& path);

struct ExtractConfig {
    std::set<View> views = {View::Title, View::Substring, View::PseudoQuery};
    int substring_len = 10;  // tokens per sampled excerpt
    int n_substrings = 3;    // excerpts per passage
};

/// Multiview identifier extraction. Holds the corpus-level IDF table used by
/// the pseudo-query heuristic; extraction itself is a pure function of
/// (passage, config, seed).
class IdentifierExtractor {
  public:
    IdentifierExtractor() = default;
    IdentifierExtractor(const Corpus& corpus, const Vocabulary& vocab);

    std::vector<Identifier> extract(const Vocabulary& vocab, const Passage& p,
                                    const ExtractConfig& cfg, uint64_t seed) const;

    double idf(TokenId id) const;
    size_t num_documents() const { return num_docs_; }

  private:
    std::vector<double> idf_;  // by token id
    size_t num_docs_ = 0;
};

struct TrainingExample {
    std::string query_id;
    std::vector<TokenId> query;
    Identifier target;
};

/// One example per extracted identifier of each positively judged passage,
/// in a seeded shuffle. Per-passage extraction seeds derive from the global
/// seed and the passage id.
std::vector<TrainingExample> build_training_pairs(const Corpus& corpus, const Qrels& qrels,
                                                  const QuerySet& queries, const Vocabulary& vocab,
                                                  const IdentifierExtractor& extractor,
                                                  const ExtractConfig& cfg, uint64_t seed);

}  // namespace dgr
