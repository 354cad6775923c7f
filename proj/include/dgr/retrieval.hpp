#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgr/corpus.hpp"
#include "dgr/decode.hpp"
#include "dgr/index.hpp"
#include "dgr/model.hpp"

namespace dgr {

enum class Provenance : uint8_t { Student, Teacher };

/// Ordered (passage id, score) list; strictly descending scores with
/// passage-id tie-break and no duplicate ids.
struct RankList {
    std::string query_id;
    std::vector<std::pair<std::string, double>> entries;
    Provenance provenance = Provenance::Student;
};

/// A generated identifier after cross-view deduplication, with the passages
/// it matched.
struct MatchedIdentifier {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    double prob = 0.0;
    std::vector<std::string> passages;  // union over the views that emitted it
};

struct RetrievalResult {
    RankList list;
    std::vector<MatchedIdentifier> identifiers;
    /// passage id -> indices into `identifiers`, ascending; the cache the
    /// distillation step reuses for differentiable re-scoring.
    std::unordered_map<std::string, std::vector<size_t>> matches;
    int capped_identifiers = 0;  // identifiers whose match set hit the cap
};

struct DecodeParams {
    int beam_size = 15;
    int max_len = 10;
    int top_n = 200;
    bool length_normalize = false;  // score identifiers by prob^(1/len)
    size_t match_cap = kDefaultMatchCap;
};

/// Eq.-style aggregation: a passage's score is the sum of the sequence
/// probabilities of the distinct generated identifiers that match it.
RetrievalResult aggregate(std::span<const ScoredIdentifier> scored, const PassageIndex& index,
                          const std::string& query_id, int top_n,
                          size_t match_cap = kDefaultMatchCap, bool length_normalize = false);

/// beam_search + aggregate.
RetrievalResult retrieve(const Model& model, const PassageIndex& index,
                         std::span<const TokenId> query, const std::string& query_id,
                         const DecodeParams& params);

struct MetricValue {
    double value = 0.0;
    int evaluated = 0;  // queries with judgments
    int skipped = 0;    // queries without judgments, excluded from the mean
};

MetricValue hits_at_k(std::span<const RankList> runs, const Qrels& qrels, int k);   // percentage
MetricValue recall_at_k(std::span<const RankList> runs, const Qrels& qrels, int k); // fraction
MetricValue mrr_at_k(std::span<const RankList> runs, const Qrels& qrels, int k);
MetricValue ndcg_at_k(std::span<const RankList> runs, const Qrels& qrels, int k);

/// TREC format: "qid Q0 pid rank score tag", 1-based ranks, scores with six
/// decimal places. write -> read -> write is byte-identical.
void write_trec_run(const std::string& path, std::span<const RankList> runs, const std::string& tag);
std::vector<RankList> read_trec_run(const std::string& path);

}  // namespace dgr
