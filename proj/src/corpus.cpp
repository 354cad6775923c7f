#include "dgr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dgr/errors.hpp"
#include "dgr/rng.hpp"

namespace dgr {

namespace {

bool is_word_byte(unsigned char c) {
    // Non-ASCII bytes stay inside tokens so UTF-8 sequences survive intact.
    return c >= 128 || std::isalnum(c) != 0;
}

}  // namespace

void Corpus::add(Passage p) {
    if (p.id.empty()) throw ValidationError("passage id must be nonempty");
    if (p.body.empty()) throw ValidationError("passage '" + p.id + "' has an empty body");
    if (by_id_.count(p.id) > 0) throw ValidationError("duplicate passage id '" + p.id + "'");
    by_id_.emplace(p.id, passages_.size());
    passages_.push_back(std::move(p));
}

const Passage* Corpus::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &passages_[it->second];
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open corpus file: " + path);

    Corpus corpus;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
            !rec.contains("text") || !rec["text"].is_string()) {
            throw ParseError("corpus line " + std::to_string(line_no) +
                             ": record needs string fields 'id' and 'text'");
        }
        Passage p;
        p.id = rec["id"].get<std::string>();
        p.body = rec["text"].get<std::string>();
        if (rec.contains("title")) {
            if (!rec["title"].is_string())
                throw ParseError("corpus line " + std::to_string(line_no) + ": 'title' must be a string");
            p.title = rec["title"].get<std::string>();
        }
        if (rec.contains("pseudo_queries")) {
            if (!rec["pseudo_queries"].is_array())
                throw ParseError("corpus line " + std::to_string(line_no) +
                                 ": 'pseudo_queries' must be an array of strings");
            for (const auto& q : rec["pseudo_queries"]) {
                if (!q.is_string())
                    throw ParseError("corpus line " + std::to_string(line_no) +
                                     ": 'pseudo_queries' must be an array of strings");
                p.pseudo_queries.push_back(q.get<std::string>());
            }
        }
        if (p.body.empty() || tokenize(p.body).empty()) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": body has no tokens");
        }
        if (corpus.contains(p.id)) {
            throw ValidationError("corpus line " + std::to_string(line_no) + ": duplicate passage id '" +
                                  p.id + "'");
        }
        corpus.add(std::move(p));
    }
    return corpus;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == '.' || c == '!' || c == '?') {
            if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (cur.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(cur);
    return out;
}

Vocabulary Vocabulary::build(const Corpus& corpus) {
    std::set<std::string> seen;
    for (const auto& p : corpus) {
        for (auto& t : tokenize(p.title)) seen.insert(std::move(t));
        for (auto& t : tokenize(p.body)) seen.insert(std::move(t));
        for (const auto& pq : p.pseudo_queries) {
            for (auto& t : tokenize(pq)) seen.insert(std::move(t));
        }
    }
    Vocabulary v;
    v.tokens_ = {"<bos>", "<eos>", "<unk>"};
    v.tokens_.reserve(seen.size() + kNumReserved);
    for (const auto& t : seen) v.tokens_.push_back(t);
    for (TokenId i = 0; i < v.tokens_.size(); ++i) v.by_token_.emplace(v.tokens_[i], i);

    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : v.tokens_) {
        h ^= fnv1a64(t);
        h *= 0x100000001b3ULL;
    }
    v.hash_ = h;
    return v;
}

TokenId Vocabulary::id(std::string_view token) const {
    auto it = by_token_.find(std::string(token));
    return it == by_token_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
    return tokens_.at(id);
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
    return encode_tokens(tokenize(text));
}

std::vector<TokenId> Vocabulary::encode_tokens(const std::vector<std::string>& words) const {
    std::vector<TokenId> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += token(ids[i]);
    }
    return out;
}

const char* view_name(View v) {
    switch (v) {
        case View::Title: return "title";
        case View::Substring: return "substring";
        case View::PseudoQuery: return "pseudo_query";
    }
    return "?";
}

void Qrels::add(const std::string& qid, const std::string& pid, int grade) {
    if (grade < 0) throw ValidationError("qrels grade must be nonnegative");
    entries_[qid][pid] = grade;
}

int Qrels::grade(const std::string& qid, const std::string& pid) const {
    auto it = entries_.find(qid);
    if (it == entries_.end()) return 0;
    auto jt = it->second.find(pid);
    return jt == it->second.end() ? 0 : jt->second;
}

const std::map<std::string, int>* Qrels::judgments(const std::string& qid) const {
    auto it = entries_.find(qid);
    return it == entries_.end() ? nullptr : &it->second;
}

void Qrels::validate() const {
    for (const auto& [qid, judged] : entries_) {
        bool positive = false;
        for (const auto& [pid, g] : judged) {
            if (g > 0) {
                positive = true;
                break;
            }
        }
        if (!positive) throw ValidationError("query '" + qid + "' has no positive judgment");
    }
}

Qrels load_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open qrels file: " + path);
    Qrels qrels;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::string qid, iter, pid, grade_s;
        if (!(ss >> qid >> iter >> pid >> grade_s)) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": expected 'qid 0 pid grade'");
        }
        int grade = 0;
        try {
            size_t pos = 0;
            grade = std::stoi(grade_s, &pos);
            if (pos != grade_s.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": bad grade '" + grade_s + "'");
        }
        if (grade < 0) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": negative grade");
        }
        qrels.add(qid, pid, grade);
    }
    qrels.validate();
    return qrels;
}

void QuerySet::add(Query q) {
    if (by_id_.count(q.id) > 0) throw ValidationError("duplicate query id '" + q.id + "'");
    by_id_.emplace(q.id, queries_.size());
    queries_.push_back(std::move(q));
}

const Query* QuerySet::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &queries_[it->second];
}

QuerySet load_queries(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open queries file: " + path);
    QuerySet qs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("queries line " + std::to_string(line_no) + ": expected 'qid<TAB>text'");
        }
        qs.add(Query{line.substr(0, tab), line.substr(tab + 1)});
    }
    return qs;
}

IdentifierExtractor::IdentifierExtractor(const Corpus& corpus, const Vocabulary& vocab) {
    num_docs_ = corpus.size();
    std::vector<size_t> df(vocab.size(), 0);
    for (const auto& p : corpus) {
        std::set<TokenId> in_doc;
        for (TokenId t : vocab.encode(p.body)) in_doc.insert(t);
        for (TokenId t : in_doc) ++df[t];
    }
    idf_.resize(vocab.size());
    for (size_t t = 0; t < vocab.size(); ++t) {
        idf_[t] = std::log((static_cast<double>(num_docs_) + 1.0) / (static_cast<double>(df[t]) + 1.0));
    }
}

double IdentifierExtractor::idf(TokenId id) const {
    return id < idf_.size() ? idf_[id] : 0.0;
}

std::vector<Identifier> IdentifierExtractor::extract(const Vocabulary& vocab, const Passage& p,
                                                     const ExtractConfig& cfg, uint64_t seed) const {
    if (cfg.substring_len < 1) throw ValidationError("substring_len must be >= 1");
    std::vector<TokenId> body = vocab.encode(p.body);
    if (body.empty()) throw ValidationError("passage '" + p.id + "' tokenizes to nothing");

    std::vector<Identifier> out;
    auto push_unique = [&out](Identifier ident) {
        for (const auto& existing : out) {
            if (existing.view == ident.view && existing.tokens == ident.tokens) return;
        }
        out.push_back(std::move(ident));
    };

    if (cfg.views.count(View::Title) > 0 && !p.title.empty()) {
        std::vector<TokenId> toks = vocab.encode(p.title);
        if (!toks.empty()) push_unique({View::Title, std::move(toks), p.id});
    }

    if (cfg.views.count(View::Substring) > 0) {
        size_t len = std::min<size_t>(static_cast<size_t>(cfg.substring_len), body.size());
        size_t n_starts = body.size() - len + 1;
        Rng rng(seed);
        for (int i = 0; i < cfg.n_substrings; ++i) {
            size_t start = static_cast<size_t>(rng.bounded(n_starts));
            std::vector<TokenId> span(body.begin() + static_cast<ptrdiff_t>(start),
                                      body.begin() + static_cast<ptrdiff_t>(start + len));
            push_unique({View::Substring, std::move(span), p.id});
        }
    }

    if (cfg.views.count(View::PseudoQuery) > 0) {
        bool stored_any = false;
        for (const auto& pq : p.pseudo_queries) {
            std::vector<TokenId> toks = vocab.encode(pq);
            if (!toks.empty()) {
                push_unique({View::PseudoQuery, std::move(toks), p.id});
                stored_any = true;
            }
        }
        if (!stored_any) {
            // Lexical stand-in: the body sentence with the highest summed IDF.
            std::vector<std::string> sentences = split_sentences(p.body);
            double best = -1.0;
            std::vector<TokenId> best_toks;
            for (const auto& sent : sentences) {
                std::vector<TokenId> toks = vocab.encode(sent);
                if (toks.empty()) continue;
                double score = 0.0;
                for (TokenId t : toks) score += idf(t);
                if (score > best) {
                    best = score;
                    best_toks = std::move(toks);
                }
            }
            if (best_toks.empty()) best_toks = body;  // no sentence punctuation at all
            push_unique({View::PseudoQuery, std::move(best_toks), p.id});
        }
    }

    return out;
}

std::vector<TrainingExample> build_training_pairs(const Corpus& corpus, const Qrels& qrels,
                                                  const QuerySet& queries, const Vocabulary& vocab,
                                                  const IdentifierExtractor& extractor,
                                                  const ExtractConfig& cfg, uint64_t seed) {
    std::vector<std::string> missing;
    for (const auto& [qid, judged] : qrels.entries()) {
        for (const auto& [pid, grade] : judged) {
            if (grade > 0 && !corpus.contains(pid)) missing.push_back(pid);
        }
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
        std::string msg = "judged passages missing from corpus:";
        for (const auto& pid : missing) msg += " " + pid;
        throw ValidationError(msg);
    }

    std::vector<TrainingExample> out;
    for (const auto& q : queries) {
        const auto* judged = qrels.judgments(q.id);
        if (judged == nullptr) continue;
        std::vector<TokenId> q_tokens = vocab.encode(q.text);
        for (const auto& [pid, grade] : *judged) {
            if (grade <= 0) continue;
            const Passage* p = corpus.find(pid);
            uint64_t pseed = mix_seed(seed, pid);
            for (auto& ident : extractor.extract(vocab, *p, cfg, pseed)) {
                out.push_back({q.id, q_tokens, std::move(ident)});
            }
        }
    }
    Rng rng(mix_seed(seed, "training-pair-shuffle"));
    rng.shuffle(out);
    return out;
}

}  // namespace dgr
