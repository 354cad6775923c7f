#include "dgr/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dgr/errors.hpp"
#include "dgr/rng.hpp"

namespace dgr {

const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::DistilledRankNet: return "distilled_ranknet";
        case LossKind::RankNet: return "ranknet";
        case LossKind::ListNet: return "listnet";
        case LossKind::ListMLE: return "listmle";
        case LossKind::ApproxNdcg: return "approx_ndcg";
        case LossKind::LambdaLoss: return "lambda_loss";
        case LossKind::Kl: return "kl";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
    for (LossKind k : all_loss_kinds()) {
        if (s == loss_kind_name(k)) return k;
    }
    throw ConfigError("unknown loss kind '" + s + "'");
}

std::vector<LossKind> all_loss_kinds() {
    return {LossKind::DistilledRankNet, LossKind::RankNet, LossKind::ListNet, LossKind::ListMLE,
            LossKind::ApproxNdcg,       LossKind::LambdaLoss, LossKind::Kl};
}

const char* strategy_name(SampleStrategy s) {
    switch (s) {
        case SampleStrategy::Random: return "random";
        case SampleStrategy::Top: return "top";
        case SampleStrategy::TopAndRandom: return "top_and_random";
    }
    return "?";
}

SampleStrategy strategy_from_string(const std::string& s) {
    if (s == "random") return SampleStrategy::Random;
    if (s == "top") return SampleStrategy::Top;
    if (s == "top_and_random") return SampleStrategy::TopAndRandom;
    throw ConfigError("unknown sampling strategy '" + s + "'");
}

void DistillConfig::validate() const {
    if (M < 1) throw ConfigError("M must be >= 1");
    if (N < M) throw ConfigError("N must be >= M");
    if (m_base < 0.0) throw ConfigError("m_base must be >= 0");
    if (m_gap < 0.0) throw ConfigError("m_gap must be >= 0");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (tau <= 0.0) throw ConfigError("tau must be > 0");
}

LexicalTeacher::LexicalTeacher(const Corpus& corpus, const Vocabulary& vocab) {
    std::vector<size_t> df(vocab.size(), 0);
    for (const auto& p : corpus) {
        std::set<TokenId> in_doc;
        std::vector<TokenId> body = vocab.encode(p.body);
        for (TokenId t : body) in_doc.insert(t);
        for (TokenId t : in_doc) ++df[t];
        body_cache_.emplace(p.id, std::make_pair(std::move(in_doc),
                                                 1.0 / std::sqrt(static_cast<double>(body.size()))));
    }
    idf_.resize(vocab.size());
    double n = static_cast<double>(corpus.size());
    for (size_t t = 0; t < vocab.size(); ++t) {
        idf_[t] = std::log((n + 1.0) / (static_cast<double>(df[t]) + 1.0));
    }
}

double LexicalTeacher::idf(TokenId t) const { return t < idf_.size() ? idf_[t] : 0.0; }

double LexicalTeacher::score(const std::string&, std::span<const TokenId> query,
                             const Passage& passage) const {
    auto it = body_cache_.find(passage.id);
    if (it == body_cache_.end()) return 0.0;
    const auto& [body_set, inv_sqrt_len] = it->second;
    std::set<TokenId> distinct(query.begin(), query.end());
    double s = 0.0;
    for (TokenId t : distinct) {
        if (body_set.count(t) > 0) s += idf(t);
    }
    return s * inv_sqrt_len;
}

OracleTeacher::OracleTeacher(const Qrels& qrels, const Corpus& corpus, const Vocabulary& vocab)
    : qrels_(&qrels), lexical_(corpus, vocab) {}

double OracleTeacher::score(const std::string& query_id, std::span<const TokenId> query,
                            const Passage& passage) const {
    double lex = lexical_.score(query_id, query, passage);
    double squashed = lex / (1.0 + lex);  // [0, 1); keeps grades dominant
    return static_cast<double>(qrels_->grade(query_id, passage.id)) + 0.5 * squashed;
}

SampleResult sample_candidates(const RankList& r_stu, SampleStrategy strategy, int M, uint64_t seed) {
    if (r_stu.entries.empty()) throw ValidationError("cannot sample from an empty rank list");
    if (M < 1) throw ConfigError("M must be >= 1");

    SampleResult res;
    size_t n = r_stu.entries.size();
    size_t m = static_cast<size_t>(M);
    if (n < m) {
        res.truncated = true;
        m = n;
    }
    Rng rng(mix_seed(seed, "candidate-sample"));
    switch (strategy) {
        case SampleStrategy::Top: {
            for (size_t i = 0; i < m; ++i) res.ids.push_back(r_stu.entries[i].first);
            break;
        }
        case SampleStrategy::Random: {
            for (size_t i : rng.sample_distinct(n, m)) res.ids.push_back(r_stu.entries[i].first);
            break;
        }
        case SampleStrategy::TopAndRandom: {
            res.ids.push_back(r_stu.entries[0].first);
            for (size_t i : rng.sample_distinct(n - 1, m - 1)) {
                res.ids.push_back(r_stu.entries[i + 1].first);
            }
            break;
        }
    }
    return res;
}

RankList teacher_rerank(const Teacher& teacher, const std::string& query_id,
                        std::span<const TokenId> query, const Corpus& corpus,
                        std::span<const std::string> passage_ids) {
    if (passage_ids.empty()) throw ValidationError("teacher_rerank needs at least one passage");
    RankList out;
    out.query_id = query_id;
    out.provenance = Provenance::Teacher;
    for (const auto& pid : passage_ids) {
        const Passage* p = corpus.find(pid);
        if (p == nullptr) throw ValidationError("teacher_rerank: unknown passage '" + pid + "'");
        out.entries.emplace_back(pid, teacher.score(query_id, query, *p));
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

namespace {

void check_permutation(const std::vector<int>& ranks, size_t m) {
    if (ranks.size() != m) throw ValidationError("ranks must align with scores");
    std::vector<bool> seen(m, false);
    for (int r : ranks) {
        if (r < 1 || static_cast<size_t>(r) > m || seen[static_cast<size_t>(r - 1)]) {
            throw ValidationError("ranks must be a permutation of 1..M");
        }
        seen[static_cast<size_t>(r - 1)] = true;
    }
}

double ideal_dcg(const std::vector<double>& gains, size_t k) {
    std::vector<double> sorted = gains;
    std::sort(sorted.rbegin(), sorted.rend());
    double idcg = 0.0;
    for (size_t i = 0; i < sorted.size() && i < k; ++i) {
        idcg += sorted[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    return idcg;
}

}  // namespace

ad::NodeId distilled_ranknet(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                             const std::vector<int>& ranks, double m_base, double m_gap, bool hinge) {
    size_t m = s.size();
    check_permutation(ranks, m);
    std::vector<ad::NodeId> terms;
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < m; ++j) {
            if (ranks[i] >= ranks[j]) continue;
            double margin = m_base + m_gap * static_cast<double>(ranks[j] - ranks[i] - 1);
            ad::NodeId x = tape.add_const(tape.sub(s[j], s[i]), margin);
            terms.push_back(hinge ? tape.relu(x) : x);
        }
    }
    return terms.empty() ? tape.scalar(0.0) : tape.sum(terms);
}

ad::NodeId ranknet_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks) {
    size_t m = s.size();
    check_permutation(ranks, m);
    std::vector<ad::NodeId> terms;
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < m; ++j) {
            if (ranks[i] >= ranks[j]) continue;
            terms.push_back(tape.softplus(tape.sub(s[j], s[i])));
        }
    }
    return terms.empty() ? tape.scalar(0.0) : tape.sum(terms);
}

namespace {

std::vector<double> softmax_consts(std::vector<double> x, double tau) {
    for (double& v : x) v /= tau;
    double m = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double& v : x) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : x) v /= sum;
    return x;
}

ad::NodeId listnet_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks, double tau) {
    // Top-1 cross-entropy of softmax(grades / tau) against softmax(s):
    // lse(s) - sum_i p_i s_i.
    size_t m = s.size();
    std::vector<double> grades(m);
    for (size_t i = 0; i < m; ++i) grades[i] = static_cast<double>(m) - ranks[i];
    std::vector<double> p = softmax_consts(grades, tau);
    ad::NodeId lse = tape.logsumexp(tape.pack(s));
    std::vector<ad::NodeId> dots;
    for (size_t i = 0; i < m; ++i) dots.push_back(tape.mul_const(s[i], p[i]));
    return tape.sub(lse, tape.sum(dots));
}

ad::NodeId listmle_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks) {
    // Negative Plackett-Luce log-likelihood of the teacher order under s.
    size_t m = s.size();
    std::vector<size_t> order(m);  // order[k] = index of the rank-(k+1) passage
    for (size_t i = 0; i < m; ++i) order[static_cast<size_t>(ranks[i] - 1)] = i;
    std::vector<ad::NodeId> terms;
    for (size_t k = 0; k < m; ++k) {
        std::vector<ad::NodeId> tail;
        for (size_t l = k; l < m; ++l) tail.push_back(s[order[l]]);
        terms.push_back(tape.sub(tape.logsumexp(tape.pack(tail)), s[order[k]]));
    }
    return tape.sum(terms);
}

ad::NodeId approx_ndcg_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                            const std::vector<int>& ranks, double tau) {
    // 1 - smoothed NDCG; ranks are approximated by sums of sigmoids at
    // temperature tau.
    size_t m = s.size();
    std::vector<double> gains(m);
    for (size_t i = 0; i < m; ++i) {
        gains[i] = std::pow(2.0, static_cast<double>(m) - ranks[i]) - 1.0;
    }
    double idcg = ideal_dcg(gains, m);
    if (idcg <= 0.0) return tape.scalar(0.0);  // single-item list carries no order

    std::vector<ad::NodeId> dcg_terms;
    const double inv_log2 = 1.0 / std::log(2.0);
    for (size_t i = 0; i < m; ++i) {
        if (gains[i] == 0.0) continue;
        std::vector<ad::NodeId> rank_terms;
        for (size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            rank_terms.push_back(tape.sigmoid_s(tape.mul_const(tape.sub(s[j], s[i]), 1.0 / tau)));
        }
        ad::NodeId approx_rank = rank_terms.empty()
                                     ? tape.scalar(1.0)
                                     : tape.add_const(tape.sum(rank_terms), 1.0);
        // gain / log2(1 + rank)
        ad::NodeId log2_term = tape.mul_const(tape.log_s(tape.add_const(approx_rank, 1.0)), inv_log2);
        dcg_terms.push_back(tape.mul_const(tape.inv_s(log2_term), gains[i]));
    }
    ad::NodeId dcg = dcg_terms.empty() ? tape.scalar(0.0) : tape.sum(dcg_terms);
    return tape.add_const(tape.mul_const(dcg, -1.0 / idcg), 1.0);
}

ad::NodeId lambda_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                       const std::vector<int>& ranks) {
    // Pairwise logistic weighted by the |NDCG delta| of swapping the pair at
    // its teacher positions.
    size_t m = s.size();
    std::vector<double> gains(m);
    for (size_t i = 0; i < m; ++i) {
        gains[i] = std::pow(2.0, static_cast<double>(m) - ranks[i]) - 1.0;
    }
    double idcg = ideal_dcg(gains, m);
    if (idcg <= 0.0) return tape.scalar(0.0);

    std::vector<ad::NodeId> terms;
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < m; ++j) {
            if (ranks[i] >= ranks[j]) continue;
            double disc_i = 1.0 / std::log2(static_cast<double>(ranks[i]) + 1.0);
            double disc_j = 1.0 / std::log2(static_cast<double>(ranks[j]) + 1.0);
            double delta = std::abs((gains[i] - gains[j]) * (disc_i - disc_j)) / idcg;
            terms.push_back(tape.mul_const(tape.softplus(tape.sub(s[j], s[i])), delta));
        }
    }
    return terms.empty() ? tape.scalar(0.0) : tape.sum(terms);
}

ad::NodeId kl_loss(ad::Tape& tape, const std::vector<ad::NodeId>& s,
                   const std::vector<double>& teacher_scores, double tau) {
    // KL(softmax(t/tau) || softmax(s/tau)).
    size_t m = s.size();
    if (teacher_scores.size() != m) {
        throw ConfigError("KL distillation needs one teacher score per candidate");
    }
    std::vector<double> p = softmax_consts(teacher_scores, tau);
    double entropy_term = 0.0;  // sum p log p
    for (double v : p) {
        if (v > 0.0) entropy_term += v * std::log(v);
    }
    std::vector<ad::NodeId> scaled;
    for (ad::NodeId si : s) scaled.push_back(tape.mul_const(si, 1.0 / tau));
    ad::NodeId lse = tape.logsumexp(tape.pack(scaled));
    std::vector<ad::NodeId> dots;
    for (size_t i = 0; i < m; ++i) dots.push_back(tape.mul_const(scaled[i], p[i]));
    return tape.add_const(tape.sub(lse, tape.sum(dots)), entropy_term);
}

}  // namespace

ad::NodeId listwise_loss(ad::Tape& tape, LossKind kind, const std::vector<ad::NodeId>& s,
                         const std::vector<int>& ranks, const std::vector<double>& teacher_scores,
                         double tau) {
    if (kind != LossKind::Kl) check_permutation(ranks, s.size());
    switch (kind) {
        case LossKind::ListNet: return listnet_loss(tape, s, ranks, tau);
        case LossKind::ListMLE: return listmle_loss(tape, s, ranks);
        case LossKind::ApproxNdcg: return approx_ndcg_loss(tape, s, ranks, tau);
        case LossKind::LambdaLoss: return lambda_loss(tape, s, ranks);
        case LossKind::Kl: return kl_loss(tape, s, teacher_scores, tau);
        default: throw ConfigError("listwise_loss: unsupported kind");
    }
}

ad::NodeId distill_loss(ad::Tape& tape, const DistillConfig& cfg, const std::vector<ad::NodeId>& s,
                        const std::vector<int>& ranks, const std::vector<double>& teacher_scores) {
    switch (cfg.loss_kind) {
        case LossKind::DistilledRankNet:
            return distilled_ranknet(tape, s, ranks, cfg.m_base, cfg.m_gap, cfg.hinge);
        case LossKind::RankNet: return ranknet_loss(tape, s, ranks);
        default: return listwise_loss(tape, cfg.loss_kind, s, ranks, teacher_scores, cfg.tau);
    }
}

namespace {

std::vector<ad::NodeId> leaves_of(ad::Tape& tape, std::span<const double> s) {
    std::vector<ad::NodeId> out;
    out.reserve(s.size());
    for (double v : s) out.push_back(tape.scalar(v));
    return out;
}

}  // namespace

double distilled_ranknet_value(std::span<const double> s, const std::vector<int>& ranks,
                               double m_base, double m_gap, bool hinge) {
    ad::Tape tape;
    return tape.value(distilled_ranknet(tape, leaves_of(tape, s), ranks, m_base, m_gap, hinge));
}

double ranknet_loss_value(std::span<const double> s, const std::vector<int>& ranks) {
    ad::Tape tape;
    return tape.value(ranknet_loss(tape, leaves_of(tape, s), ranks));
}

double listwise_loss_value(LossKind kind, std::span<const double> s, const std::vector<int>& ranks,
                           const std::vector<double>& teacher_scores, double tau) {
    ad::Tape tape;
    return tape.value(listwise_loss(tape, kind, leaves_of(tape, s), ranks, teacher_scores, tau));
}

ad::NodeId combined_loss(ad::Tape& tape, ad::NodeId gen_loss, ad::NodeId distill, double alpha) {
    return tape.add(tape.mul_const(gen_loss, alpha), distill);
}

StudentScores student_scores_for(ad::Tape& tape, ad::NodeId theta_leaf, const Model& model,
                                 std::span<const TokenId> query,
                                 std::span<const std::string> passage_ids,
                                 const RetrievalResult& retrieval, bool length_normalize) {
    StudentScores out;
    std::unordered_map<size_t, ad::NodeId> ident_prob;  // identifier index -> exp(logprob)
    for (const auto& pid : passage_ids) {
        auto it = retrieval.matches.find(pid);
        if (it == retrieval.matches.end() || it->second.empty()) {
            out.scores.push_back(tape.scalar(0.0));
            out.empty_cache_ids.push_back(pid);
            continue;
        }
        std::vector<ad::NodeId> probs;
        for (size_t ident_idx : it->second) {
            auto cached = ident_prob.find(ident_idx);
            if (cached == ident_prob.end()) {
                const auto& tokens = retrieval.identifiers[ident_idx].tokens;
                ad::NodeId lp = model.tape_sequence_logprob(tape, theta_leaf, query, tokens);
                if (length_normalize && !tokens.empty()) {
                    lp = tape.mul_const(lp, 1.0 / static_cast<double>(tokens.size()));
                }
                cached = ident_prob.emplace(ident_idx, tape.exp_s(lp)).first;
            }
            probs.push_back(cached->second);
        }
        out.scores.push_back(tape.sum(probs));
    }
    return out;
}

DistillReport distill_train(Model& model, const DistillInputs& in, const Teacher& teacher,
                            const DistillRunConfig& cfg) {
    cfg.distill.validate();
    if (cfg.distill.loss_kind == LossKind::Kl && !teacher.exposes_scores()) {
        throw ConfigError("KL distillation requires a teacher that exposes scores");
    }
    if (in.corpus == nullptr || in.vocab == nullptr || in.index == nullptr ||
        in.extractor == nullptr || in.train_queries == nullptr || in.train_qrels == nullptr) {
        throw ConfigError("distill_train: missing inputs");
    }

    DistillReport report;
    AdamState adam(model.param_count());
    DecodeParams decode = cfg.decode;
    decode.top_n = cfg.distill.N;

    // Queries with judgments, in query-set order.
    std::vector<const Query*> train;
    for (const auto& q : *in.train_queries) {
        if (in.train_qrels->has_query(q.id)) train.push_back(&q);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, mix_seed(0x5151, static_cast<uint64_t>(epoch))));
        shuffle_rng.shuffle(order);

        double sum_gen = 0.0, sum_dist = 0.0;
        int steps = 0;
        for (size_t oi : order) {
            const Query& q = *train[oi];
            uint64_t step_seed = mix_seed(mix_seed(cfg.seed, q.id), static_cast<uint64_t>(epoch));
            std::vector<TokenId> q_tokens = in.vocab->encode(q.text);

            RetrievalResult ret = retrieve(model, *in.index, q_tokens, q.id, decode);
            if (ret.list.entries.empty()) {
                report.warnings.push_back("epoch " + std::to_string(epoch) + ": query '" + q.id +
                                          "' retrieved nothing; step skipped");
                continue;
            }
            SampleResult sample =
                sample_candidates(ret.list, cfg.distill.strategy, cfg.distill.M, step_seed);
            RankList r_tea = teacher_rerank(teacher, q.id, q_tokens, *in.corpus, sample.ids);

            // Candidates in teacher order make the rank vector the identity.
            std::vector<std::string> candidates;
            std::vector<double> teacher_scores;
            std::vector<int> ranks;
            for (size_t i = 0; i < r_tea.entries.size(); ++i) {
                candidates.push_back(r_tea.entries[i].first);
                teacher_scores.push_back(r_tea.entries[i].second);
                ranks.push_back(static_cast<int>(i + 1));
            }

            ad::Tape tape;
            ad::NodeId theta_leaf = tape.leaf(model.theta());
            StudentScores s = student_scores_for(tape, theta_leaf, model, q_tokens, candidates, ret,
                                                 decode.length_normalize);
            ad::NodeId l_dist = distill_loss(tape, cfg.distill, s.scores, ranks, teacher_scores);

            ad::NodeId total;
            double gen_value = 0.0;
            if (cfg.distill.alpha > 0.0) {
                // Generation loss on one positive identifier, warm-start style.
                const auto* judged = in.train_qrels->judgments(q.id);
                std::vector<std::string> positives;
                for (const auto& [pid, g] : *judged) {
                    if (g > 0 && in.corpus->contains(pid)) positives.push_back(pid);
                }
                if (positives.empty()) {
                    total = l_dist;
                } else {
                    Rng pick(mix_seed(step_seed, "gen-target"));
                    const std::string& pid = positives[pick.bounded(positives.size())];
                    auto idents = in.extractor->extract(*in.vocab, *in.corpus->find(pid),
                                                        in.extract_cfg,
                                                        mix_seed(step_seed, pid));
                    if (idents.empty()) {
                        total = l_dist;
                    } else {
                        const auto& target = idents[pick.bounded(idents.size())];
                        ad::NodeId l_gen =
                            model.tape_generation_loss(tape, theta_leaf, q_tokens, target.tokens);
                        gen_value = tape.value(l_gen);
                        total = combined_loss(tape, l_gen, l_dist, cfg.distill.alpha);
                    }
                }
            } else {
                total = l_dist;
            }

            double loss_value = tape.value(total);
            if (!std::isfinite(loss_value)) {
                report.warnings.push_back("epoch " + std::to_string(epoch) + ": non-finite loss on query '" +
                                          q.id + "'; step aborted");
                continue;
            }
            tape.backward(total);
            apply_step(model, tape.grad(theta_leaf), adam, cfg.adam);

            sum_gen += gen_value;
            sum_dist += tape.value(l_dist);
            ++steps;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_gen_loss = steps > 0 ? sum_gen / steps : 0.0;
        stats.mean_distill_loss = steps > 0 ? sum_dist / steps : 0.0;
        if (in.dev_queries != nullptr && in.dev_qrels != nullptr) {
            std::vector<RankList> dev_runs;
            for (const auto& q : *in.dev_queries) {
                dev_runs.push_back(
                    retrieve(model, *in.index, in.vocab->encode(q.text), q.id, decode).list);
            }
            stats.dev_hits5 = hits_at_k(dev_runs, *in.dev_qrels, 5).value;
            stats.dev_hits20 = hits_at_k(dev_runs, *in.dev_qrels, 20).value;
            stats.dev_hits100 = hits_at_k(dev_runs, *in.dev_qrels, 100).value;
        }
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(stats);
    }
    return report;
}

}  // namespace dgr
