#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgr/autodiff.hpp"
#include "dgr/corpus.hpp"
#include "dgr/index.hpp"
#include "dgr/model.hpp"
#include "dgr/retrieval.hpp"

namespace dgr {

enum class LossKind : uint8_t {
    DistilledRankNet = 0,
    RankNet,
    ListNet,
    ListMLE,
    ApproxNdcg,
    LambdaLoss,
    Kl,
};

enum class SampleStrategy : uint8_t { Random = 0, Top, TopAndRandom };

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_string(const std::string& s);
std::vector<LossKind> all_loss_kinds();
const char* strategy_name(SampleStrategy s);
SampleStrategy strategy_from_string(const std::string& s);

struct DistillConfig {
    int M = 6;    // teacher-list length
    int N = 200;  // student-list length
    // Margins are in student score units (sequence probabilities here);
    // the reference setup uses 300/100 on its own backbone's scale.
    double m_base = 0.3;
    double m_gap = 0.1;
    double alpha = 500.0;  // generation-loss weight
    LossKind loss_kind = LossKind::DistilledRankNet;
    SampleStrategy strategy = SampleStrategy::TopAndRandom;
    bool hinge = true;  // clamp pair terms at zero; unclamped behind this flag
    double tau = 1.0;   // temperature for KL / ListNet / ApproxNDCG smoothing

    void validate() const;
};

/// Scoring contract for rerankers: higher score = more relevant.
/// Deterministic per (query, passage).
class Teacher {
  public:
    virtual ~Teacher() = default;
    virtual double score(const std::string& query_id, std::span<const TokenId> query,
                         const Passage& passage) const = 0;
    virtual bool exposes_scores() const { return true; }
    virtual std::string name() const = 0;
};

/// Surrogate cross-scorer: IDF-weighted query-term overlap with the passage
/// body, normalized by sqrt of the body length.
class LexicalTeacher : public Teacher {
  public:
    LexicalTeacher(const Corpus& corpus, const Vocabulary& vocab);
    double score(const std::string& query_id, std::span<const TokenId> query,
                 const Passage& passage) const override;
    std::string name() const override { return "lexical"; }
    double idf(TokenId t) const;

  private:
    std::vector<double> idf_;
    std::unordered_map<std::string, std::pair<std::set<TokenId>, double>> body_cache_;
};

/// Upper-bound teacher: qrels grade first, lexical score squashed into
/// [0, 0.5) as the tie-break.
class OracleTeacher : public Teacher {
  public:
    OracleTeacher(const Qrels& qrels, const Corpus& corpus, const Vocabulary& vocab);
    double score(const std::string& query_id, std::span<const TokenId> query,
                 const Passage& passage) const override;
    std::string name() const override { return "oracle"; }

  private:
    const Qrels* qrels_;
    LexicalTeacher lexical_;
};

struct SampleResult {
    std::vector<std::string> ids;
    bool truncated = false;  // rank list was shorter than M
};

/// Draws the passages the teacher will rerank. Random: M distinct uniform
/// draws. Top: the first M. TopAndRandom: the rank-1 entry plus M-1 distinct
/// uniform draws from the remainder.
SampleResult sample_candidates(const RankList& r_stu, SampleStrategy strategy, int M, uint64_t seed);

/// Reranks candidates by teacher score (descending, passage-id tie-break).
RankList teacher_rerank(const Teacher& teacher, const std::string& query_id,
                        std::span<const TokenId> query, const Corpus& corpus,
                        std::span<const std::string> passage_ids);

// --- distillation losses (differentiable; s holds scalar tape nodes,
// ranks[i] is passage i's teacher rank, a permutation of 1..M) ---

ad::NodeId distilled_ranknet(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                             const std::vector<int>& ranks, double m_base, double m_gap, bool hinge);

ad::NodeId ranknet_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks);

/// ListNet / ListMLE / ApproxNDCG / LambdaLoss consume grades derived from
/// ranks (g = M - r); KL consumes raw teacher scores.
ad::NodeId listwise_loss(ad::Tape& tape, LossKind kind, const std::vector<ad::NodeId>& s,
                         const std::vector<int>& ranks, const std::vector<double>& teacher_scores,
                         double tau);

/// Dispatches to the configured loss.
ad::NodeId distill_loss(ad::Tape& tape, const DistillConfig& cfg, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks, const std::vector<double>& teacher_scores);

// Plain-value convenience wrappers (single forward pass on a local tape).
double distilled_ranknet_value(std::span<const double> s, const std::vector<int>& ranks,
                               double m_base, double m_gap, bool hinge);
double ranknet_loss_value(std::span<const double> s, const std::vector<int>& ranks);
double listwise_loss_value(LossKind kind, std::span<const double> s, const std::vector<int>& ranks,
                           const std::vector<double>& teacher_scores, double tau);

/// alpha * L_gen + L_distill.
ad::NodeId combined_loss(ad::Tape& tape, ad::NodeId gen_loss, ad::NodeId distill, double alpha);

struct StudentScores {
    std::vector<ad::NodeId> scores;            // aligned with the input passage order
    std::vector<std::string> empty_cache_ids;  // passages scored 0 with no gradient
};

/// Recomputes each candidate's aggregated score by teacher-forced sequence
/// scoring over its cached matched identifiers. Equal to the retrieval-time
/// score while theta is unchanged, and differentiable in theta.
StudentScores student_scores_for(ad::Tape& tape, ad::NodeId theta_leaf, const Model& model,
                                 std::span<const TokenId> query,
                                 std::span<const std::string> passage_ids,
                                 const RetrievalResult& retrieval, bool length_normalize = false);

struct EpochStats {
    int epoch = 0;
    double mean_gen_loss = 0.0;
    double mean_distill_loss = 0.0;
    double dev_hits5 = 0.0;
    double dev_hits20 = 0.0;
    double dev_hits100 = 0.0;
    double wall_seconds = 0.0;
};

struct DistillReport {
    std::vector<EpochStats> epochs;
    std::vector<std::string> warnings;
};

struct DistillInputs {
    const Corpus* corpus = nullptr;
    const Vocabulary* vocab = nullptr;
    const PassageIndex* index = nullptr;
    const IdentifierExtractor* extractor = nullptr;
    ExtractConfig extract_cfg;
    const QuerySet* train_queries = nullptr;
    const Qrels* train_qrels = nullptr;
    const QuerySet* dev_queries = nullptr;  // optional
    const Qrels* dev_qrels = nullptr;
};

struct DistillRunConfig {
    DistillConfig distill;
    DecodeParams decode;
    AdamConfig adam;
    int epochs = 3;
    uint64_t seed = 1;
};

/// The full distillation procedure: per query, retrieve top-N, sample M,
/// teacher-rerank, rebuild differentiable student scores, combine with the
/// generation loss on a positive identifier, and take one optimizer step.
DistillReport distill_train(Model& model, const DistillInputs& in, const Teacher& teacher,
                            const DistillRunConfig& cfg);

}  // namespace dgr
