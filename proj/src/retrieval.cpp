#include "dgr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dgr/errors.hpp"

namespace dgr {

namespace {

void sort_entries(std::vector<std::pair<std::string, double>>& entries) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
}

}  // namespace

RetrievalResult aggregate(std::span<const ScoredIdentifier> scored, const PassageIndex& index,
                          const std::string& query_id, int top_n, size_t match_cap,
                          bool length_normalize) {
    RetrievalResult res;
    res.list.query_id = query_id;
    res.list.provenance = Provenance::Student;

    // Beams across views can emit the same token string; deduplicate and
    // union the per-view match sets.
    std::map<std::vector<TokenId>, size_t> by_tokens;
    for (const auto& si : scored) {
        double prob = si.prob;
        double log_prob = si.log_prob;
        if (length_normalize && !si.identifier.tokens.empty()) {
            log_prob = si.log_prob / static_cast<double>(si.identifier.tokens.size());
            prob = std::exp(log_prob);
        }
        size_t idx;
        auto it = by_tokens.find(si.identifier.tokens);
        if (it == by_tokens.end()) {
            idx = res.identifiers.size();
            by_tokens.emplace(si.identifier.tokens, idx);
            res.identifiers.push_back({si.identifier.tokens, log_prob, prob, {}});
        } else {
            idx = it->second;
        }
        bool truncated = false;
        auto pids = index.match_passages(si.identifier, match_cap, &truncated);
        if (truncated) ++res.capped_identifiers;
        auto& dst = res.identifiers[idx].passages;
        for (auto& pid : pids) {
            if (std::find(dst.begin(), dst.end(), pid) == dst.end()) dst.push_back(std::move(pid));
        }
    }

    std::map<std::string, double> passage_score;
    for (size_t i = 0; i < res.identifiers.size(); ++i) {
        for (const auto& pid : res.identifiers[i].passages) {
            res.matches[pid].push_back(i);
        }
    }
    for (auto& [pid, idxs] : res.matches) {
        std::sort(idxs.begin(), idxs.end());
        double s = 0.0;
        for (size_t i : idxs) s += res.identifiers[i].prob;
        passage_score[pid] = s;
    }

    res.list.entries.assign(passage_score.begin(), passage_score.end());
    sort_entries(res.list.entries);
    if (res.list.entries.size() > static_cast<size_t>(top_n)) {
        res.list.entries.resize(static_cast<size_t>(top_n));
    }
    return res;
}

RetrievalResult retrieve(const Model& model, const PassageIndex& index,
                         std::span<const TokenId> query, const std::string& query_id,
                         const DecodeParams& params) {
    auto oracles = make_oracles(index);
    auto scored = beam_search(model, oracles, query, params.beam_size, params.max_len);
    return aggregate(scored, index, query_id, params.top_n, params.match_cap,
                     params.length_normalize);
}

namespace {

/// Shared walk over runs: calls fn(ranklist, judgments) for judged queries.
template <typename Fn>
MetricValue mean_over_judged(std::span<const RankList> runs, const Qrels& qrels, Fn fn) {
    MetricValue out;
    double total = 0.0;
    for (const auto& run : runs) {
        const auto* judged = qrels.judgments(run.query_id);
        if (judged == nullptr) {
            ++out.skipped;
            continue;
        }
        total += fn(run, *judged);
        ++out.evaluated;
    }
    out.value = out.evaluated > 0 ? total / out.evaluated : 0.0;
    return out;
}

}  // namespace

MetricValue hits_at_k(std::span<const RankList> runs, const Qrels& qrels, int k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    MetricValue v = mean_over_judged(runs, qrels, [&](const RankList& run, const auto& judged) {
        int limit = std::min<int>(k, static_cast<int>(run.entries.size()));
        for (int i = 0; i < limit; ++i) {
            auto it = judged.find(run.entries[static_cast<size_t>(i)].first);
            if (it != judged.end() && it->second > 0) return 1.0;
        }
        return 0.0;
    });
    v.value *= 100.0;
    return v;
}

MetricValue recall_at_k(std::span<const RankList> runs, const Qrels& qrels, int k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    return mean_over_judged(runs, qrels, [&](const RankList& run, const auto& judged) {
        int total_relevant = 0;
        for (const auto& [pid, g] : judged) {
            if (g > 0) ++total_relevant;
        }
        if (total_relevant == 0) return 0.0;  // unreachable for validated qrels
        int found = 0;
        int limit = std::min<int>(k, static_cast<int>(run.entries.size()));
        for (int i = 0; i < limit; ++i) {
            auto it = judged.find(run.entries[static_cast<size_t>(i)].first);
            if (it != judged.end() && it->second > 0) ++found;
        }
        return static_cast<double>(found) / total_relevant;
    });
}

MetricValue mrr_at_k(std::span<const RankList> runs, const Qrels& qrels, int k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    return mean_over_judged(runs, qrels, [&](const RankList& run, const auto& judged) {
        int limit = std::min<int>(k, static_cast<int>(run.entries.size()));
        for (int i = 0; i < limit; ++i) {
            auto it = judged.find(run.entries[static_cast<size_t>(i)].first);
            if (it != judged.end() && it->second > 0) return 1.0 / (i + 1);
        }
        return 0.0;
    });
}

MetricValue ndcg_at_k(std::span<const RankList> runs, const Qrels& qrels, int k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    auto gain = [](int grade) { return std::pow(2.0, grade) - 1.0; };
    return mean_over_judged(runs, qrels, [&](const RankList& run, const auto& judged) {
        double dcg = 0.0;
        int limit = std::min<int>(k, static_cast<int>(run.entries.size()));
        for (int i = 0; i < limit; ++i) {
            auto it = judged.find(run.entries[static_cast<size_t>(i)].first);
            if (it != judged.end() && it->second > 0) {
                dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
            }
        }
        std::vector<int> grades;
        for (const auto& [pid, g] : judged) {
            if (g > 0) grades.push_back(g);
        }
        std::sort(grades.rbegin(), grades.rend());
        double idcg = 0.0;
        for (size_t i = 0; i < grades.size() && i < static_cast<size_t>(k); ++i) {
            idcg += gain(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
        }
        return idcg > 0.0 ? dcg / idcg : 0.0;
    });
}

void write_trec_run(const std::string& path, std::span<const RankList> runs, const std::string& tag) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write run file: " + path);
    char score_buf[64];
    for (const auto& run : runs) {
        for (size_t i = 0; i < run.entries.size(); ++i) {
            std::snprintf(score_buf, sizeof(score_buf), "%.6f", run.entries[i].second);
            out << run.query_id << " Q0 " << run.entries[i].first << ' ' << (i + 1) << ' '
                << score_buf << ' ' << tag << '\n';
        }
    }
}

std::vector<RankList> read_trec_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open run file: " + path);
    std::vector<RankList> runs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string qid, q0, pid, rank_s, score_s, tag;
        if (!(ss >> qid >> q0 >> pid >> rank_s >> score_s >> tag)) {
            throw ParseError("run line " + std::to_string(line_no) + ": expected 6 fields");
        }
        double score = 0.0;
        try {
            score = std::stod(score_s);
        } catch (const std::exception&) {
            throw ParseError("run line " + std::to_string(line_no) + ": bad score '" + score_s + "'");
        }
        if (runs.empty() || runs.back().query_id != qid) {
            runs.push_back({qid, {}, Provenance::Student});
        }
        runs.back().entries.emplace_back(pid, score);
    }
    return runs;
}

}  // namespace dgr
