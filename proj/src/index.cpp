#include "dgr/index.hpp"

#include <algorithm>
#include <fstream>

#include "dgr/binio.hpp"
#include "dgr/errors.hpp"

namespace dgr {

namespace {
constexpr uint32_t kIndexVersion = 1;
constexpr char kIndexMagic[9] = "DGRINDEX";
}  // namespace

SubstringIndex SubstringIndex::build(const Corpus& corpus, const Vocabulary& vocab) {
    if (corpus.empty()) throw ValidationError("cannot index an empty corpus");

    SubstringIndex idx;
    idx.separator_ = static_cast<TokenId>(vocab.size());
    for (const auto& p : corpus) {
        idx.passage_start_.push_back(static_cast<uint32_t>(idx.text_.size()));
        idx.passage_ids_.push_back(p.id);
        for (TokenId t : vocab.encode(p.body)) idx.text_.push_back(t);
        idx.text_.push_back(idx.separator_);
    }

    idx.sa_.resize(idx.text_.size());
    for (uint32_t i = 0; i < idx.sa_.size(); ++i) idx.sa_[i] = i;
    const auto& text = idx.text_;
    std::sort(idx.sa_.begin(), idx.sa_.end(), [&text](uint32_t a, uint32_t b) {
        size_t n = text.size();
        while (a < n && b < n) {
            if (text[a] != text[b]) return text[a] < text[b];
            ++a;
            ++b;
        }
        return a > b;  // the shorter suffix (larger start) is the prefix
    });
    return idx;
}

SubstringIndex::Range SubstringIndex::extend(Range r, TokenId t) const {
    if (r.empty()) return {r.lo, r.lo, r.len + 1};
    // All suffixes in [lo, hi) share r.len tokens, so the token at offset
    // r.len is non-decreasing across the slice; binary search for its run.
    size_t depth = r.len;
    auto token_at = [this, depth](size_t sa_pos) { return text_[sa_[sa_pos] + depth]; };

    size_t lo = r.lo, hi = r.hi;
    // lower bound: first position with token_at >= t
    size_t a = lo, b = hi;
    while (a < b) {
        size_t mid = a + (b - a) / 2;
        if (token_at(mid) < t)
            a = mid + 1;
        else
            b = mid;
    }
    size_t new_lo = a;
    // upper bound: first position with token_at > t
    b = hi;
    while (a < b) {
        size_t mid = a + (b - a) / 2;
        if (token_at(mid) <= t)
            a = mid + 1;
        else
            b = mid;
    }
    return {new_lo, a, r.len + 1};
}

SubstringIndex::Range SubstringIndex::find(std::span<const TokenId> pattern) const {
    Range r = whole();
    for (TokenId t : pattern) {
        r = extend(r, t);
        if (r.empty()) break;
    }
    return r;
}

std::vector<TokenId> SubstringIndex::continuations(Range r) const {
    std::vector<TokenId> out;
    size_t pos = r.lo;
    while (pos < r.hi) {
        TokenId t = text_[sa_[pos] + r.len];
        if (t != separator_) out.push_back(t);
        // Skip the whole run of t.
        size_t a = pos + 1, b = r.hi;
        while (a < b) {
            size_t mid = a + (b - a) / 2;
            if (text_[sa_[mid] + r.len] <= t)
                a = mid + 1;
            else
                b = mid;
        }
        pos = a;
    }
    return out;
}

std::set<TokenId> SubstringIndex::allowed_continuations(std::span<const TokenId> prefix) const {
    Range r = find(prefix);
    std::set<TokenId> out;
    if (r.empty()) return out;
    for (TokenId t : continuations(r)) out.insert(t);
    out.insert(kEos);  // the prefix itself occurs
    return out;
}

size_t SubstringIndex::passage_of(size_t pos) const {
    auto it = std::upper_bound(passage_start_.begin(), passage_start_.end(), static_cast<uint32_t>(pos));
    return static_cast<size_t>(it - passage_start_.begin()) - 1;
}

SubstringIndex::LocateResult SubstringIndex::locate(std::span<const TokenId> pattern,
                                                    size_t max_matches) const {
    LocateResult res;
    if (pattern.empty()) return res;
    Range r = find(pattern);
    std::set<size_t> passages;
    for (size_t i = r.lo; i < r.hi; ++i) {
        passages.insert(passage_of(sa_[i]));
        if (passages.size() > max_matches) {
            passages.erase(std::prev(passages.end()));
            res.truncated = true;
            break;
        }
    }
    res.passages.reserve(passages.size());
    for (size_t p : passages) res.passages.push_back(passage_ids_[p]);
    std::sort(res.passages.begin(), res.passages.end());
    return res;
}

void SubstringIndex::save(std::ostream& out) const {
    BinaryWriter w(out);
    w.u32(separator_);
    w.u32_vec(text_);
    w.u32_vec(sa_);
    w.u32_vec(passage_start_);
    w.u64(passage_ids_.size());
    for (const auto& id : passage_ids_) w.str(id);
}

SubstringIndex SubstringIndex::load(std::istream& in) {
    BinaryReader r(in);
    SubstringIndex idx;
    idx.separator_ = r.u32();
    idx.text_ = r.u32_vec();
    idx.sa_ = r.u32_vec();
    idx.passage_start_ = r.u32_vec();
    size_t n = r.u64();
    idx.passage_ids_.reserve(n);
    for (size_t i = 0; i < n; ++i) idx.passage_ids_.push_back(r.str());
    return idx;
}

void ExactTable::add(std::vector<TokenId> seq, const std::string& pid) {
    if (seq.empty()) throw ValidationError("exact-table key must be nonempty");
    auto& pids = entries_[std::move(seq)];
    auto it = std::lower_bound(pids.begin(), pids.end(), pid);
    if (it == pids.end() || *it != pid) pids.insert(it, pid);
}

const std::vector<std::string>* ExactTable::lookup(std::span<const TokenId> seq) const {
    auto it = entries_.find(std::vector<TokenId>(seq.begin(), seq.end()));
    return it == entries_.end() ? nullptr : &it->second;
}

void ExactTable::save(std::ostream& out) const {
    BinaryWriter w(out);
    w.u64(entries_.size());
    for (const auto& [seq, pids] : entries_) {
        w.u32_vec(seq);
        w.u64(pids.size());
        for (const auto& pid : pids) w.str(pid);
    }
}

ExactTable ExactTable::load(std::istream& in) {
    BinaryReader r(in);
    ExactTable t;
    size_t n = r.u64();
    for (size_t i = 0; i < n; ++i) {
        std::vector<TokenId> seq = r.u32_vec();
        size_t m = r.u64();
        std::vector<std::string> pids;
        pids.reserve(m);
        for (size_t j = 0; j < m; ++j) pids.push_back(r.str());
        t.entries_.emplace(std::move(seq), std::move(pids));
    }
    return t;
}

TokenTrie TokenTrie::build(const ExactTable& table) {
    TokenTrie trie;
    trie.nodes_.push_back({});
    for (const auto& [seq, pids] : table.entries()) {
        NodeRef node = 0;
        for (TokenId t : seq) {
            auto it = trie.nodes_[static_cast<size_t>(node)].children.find(t);
            if (it == trie.nodes_[static_cast<size_t>(node)].children.end()) {
                NodeRef next = static_cast<NodeRef>(trie.nodes_.size());
                trie.nodes_[static_cast<size_t>(node)].children.emplace(t, next);
                trie.nodes_.push_back({});
                node = next;
            } else {
                node = it->second;
            }
        }
        trie.nodes_[static_cast<size_t>(node)].terminal = true;
    }
    return trie;
}

TokenTrie::NodeRef TokenTrie::child(NodeRef node, TokenId t) const {
    if (node == kInvalid) return kInvalid;
    const auto& kids = nodes_[static_cast<size_t>(node)].children;
    auto it = kids.find(t);
    return it == kids.end() ? kInvalid : it->second;
}

bool TokenTrie::terminal(NodeRef node) const {
    return node != kInvalid && nodes_[static_cast<size_t>(node)].terminal;
}

std::vector<TokenId> TokenTrie::continuations(NodeRef node) const {
    std::vector<TokenId> out;
    if (node == kInvalid) return out;
    for (const auto& [t, child] : nodes_[static_cast<size_t>(node)].children) out.push_back(t);
    return out;
}

PassageIndex PassageIndex::build(const Corpus& corpus, const Vocabulary& vocab,
                                 const IdentifierExtractor& extractor, const ExtractConfig& cfg) {
    PassageIndex idx;
    idx.vocab_hash_ = vocab.hash();
    idx.substrings_ = SubstringIndex::build(corpus, vocab);

    // Exact tables register every title / pseudo-query identifier; neither
    // view is seed-dependent.
    ExtractConfig exact_cfg = cfg;
    exact_cfg.views.erase(View::Substring);
    if (!exact_cfg.views.empty()) {
        for (const auto& p : corpus) {
            for (auto& ident : extractor.extract(vocab, p, exact_cfg, 0)) {
                if (ident.view == View::Title) {
                    idx.titles_.add(std::move(ident.tokens), p.id);
                } else if (ident.view == View::PseudoQuery) {
                    idx.pseudo_queries_.add(std::move(ident.tokens), p.id);
                }
            }
        }
    }
    idx.title_trie_ = TokenTrie::build(idx.titles_);
    idx.pq_trie_ = TokenTrie::build(idx.pseudo_queries_);
    return idx;
}

std::vector<std::string> PassageIndex::match_passages(const Identifier& ident, size_t cap,
                                                      bool* truncated) const {
    if (ident.tokens.empty()) throw ValidationError("identifier tokens must be nonempty");
    if (truncated != nullptr) *truncated = false;
    switch (ident.view) {
        case View::Substring: {
            auto res = substrings_.locate(ident.tokens, cap);
            if (truncated != nullptr) *truncated = res.truncated;
            return std::move(res.passages);
        }
        case View::Title: {
            const auto* pids = titles_.lookup(ident.tokens);
            return pids != nullptr ? *pids : std::vector<std::string>{};
        }
        case View::PseudoQuery: {
            const auto* pids = pseudo_queries_.lookup(ident.tokens);
            return pids != nullptr ? *pids : std::vector<std::string>{};
        }
    }
    return {};
}

void PassageIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write index file: " + path);
    out.write(kIndexMagic, 8);
    BinaryWriter w(out);
    w.u32(kIndexVersion);
    w.u64(vocab_hash_);
    substrings_.save(out);
    titles_.save(out);
    pseudo_queries_.save(out);
}

PassageIndex PassageIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open index file: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::string_view(magic, 8) != std::string_view(kIndexMagic, 8)) {
        throw ParseError("not an index file: " + path);
    }
    BinaryReader r(in);
    uint32_t version = r.u32();
    if (version != kIndexVersion) {
        throw ValidationError("index version mismatch: file has " + std::to_string(version) +
                              ", expected " + std::to_string(kIndexVersion));
    }
    PassageIndex idx;
    idx.vocab_hash_ = r.u64();
    idx.substrings_ = SubstringIndex::load(in);
    idx.titles_ = ExactTable::load(in);
    idx.pseudo_queries_ = ExactTable::load(in);
    idx.title_trie_ = TokenTrie::build(idx.titles_);
    idx.pq_trie_ = TokenTrie::build(idx.pseudo_queries_);
    return idx;
}

}  // namespace dgr
