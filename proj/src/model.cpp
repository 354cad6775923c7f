#include "dgr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dgr/binio.hpp"
#include "dgr/errors.hpp"
#include "dgr/rng.hpp"

namespace dgr {

namespace {
constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[9] = "DGRMODEL";
}  // namespace

size_t Model::off_wq() const {
    return vocab_size_ * static_cast<size_t>(dims_.embed_dim);
}
size_t Model::off_bq() const {
    return off_wq() + static_cast<size_t>(dims_.embed_dim) * static_cast<size_t>(dims_.embed_dim);
}
size_t Model::off_wh() const { return off_bq() + static_cast<size_t>(dims_.embed_dim); }
size_t Model::off_bh() const {
    return off_wh() + static_cast<size_t>(dims_.hidden_dim) * 2 * static_cast<size_t>(dims_.embed_dim);
}
size_t Model::off_wo() const { return off_bh() + static_cast<size_t>(dims_.hidden_dim); }
size_t Model::off_bo() const {
    return off_wo() + vocab_size_ * static_cast<size_t>(dims_.hidden_dim);
}

Model Model::init(size_t vocab_size, const ModelDims& dims, uint64_t seed) {
    if (vocab_size < kNumReserved + 1) {
        throw ValidationError("vocab_size must be >= " + std::to_string(kNumReserved + 1) +
                              " (reserved tokens present)");
    }
    if (dims.embed_dim <= 0 || dims.hidden_dim <= 0 || dims.context_k <= 0) {
        throw ValidationError("model dims must be positive");
    }
    Model m;
    m.vocab_size_ = vocab_size;
    m.dims_ = dims;
    m.theta_.resize(m.off_bo() + vocab_size);

    Rng rng(mix_seed(seed, "model-init"));
    auto fill = [&rng](std::span<double> block, double scale) {
        for (double& x : block) x = rng.uniform_sym(scale);
    };
    size_t d = static_cast<size_t>(dims.embed_dim);
    size_t h = static_cast<size_t>(dims.hidden_dim);
    std::span<double> all(m.theta_);
    fill(all.subspan(m.off_embed(), vocab_size * d), 0.5 / std::sqrt(static_cast<double>(d)));
    fill(all.subspan(m.off_wq(), d * d), 1.0 / std::sqrt(static_cast<double>(d)));
    fill(all.subspan(m.off_bq(), d), 0.01);
    fill(all.subspan(m.off_wh(), h * 2 * d), 1.0 / std::sqrt(2.0 * static_cast<double>(d)));
    fill(all.subspan(m.off_bh(), h), 0.01);
    fill(all.subspan(m.off_wo(), vocab_size * h), 0.1 / std::sqrt(static_cast<double>(h)));
    fill(all.subspan(m.off_bo(), vocab_size), 0.01);
    return m;
}

void Model::check_tokens(std::span<const TokenId> toks) const {
    for (TokenId t : toks) {
        if (t >= vocab_size_) {
            throw ValidationError("token id " + std::to_string(t) + " outside vocabulary of size " +
                                  std::to_string(vocab_size_));
        }
    }
}

std::vector<TokenId> Model::context_window(std::span<const TokenId> prefix) const {
    // Last k of [BOS] + prefix; always nonempty.
    std::vector<TokenId> ctx;
    ctx.push_back(kBos);
    ctx.insert(ctx.end(), prefix.begin(), prefix.end());
    size_t k = static_cast<size_t>(dims_.context_k);
    if (ctx.size() > k) ctx.erase(ctx.begin(), ctx.end() - static_cast<ptrdiff_t>(k));
    return ctx;
}

std::vector<double> Model::token_logprobs(std::span<const TokenId> query,
                                          std::span<const TokenId> prefix) const {
    check_tokens(query);
    check_tokens(prefix);
    size_t d = static_cast<size_t>(dims_.embed_dim);
    size_t h = static_cast<size_t>(dims_.hidden_dim);

    auto mean_rows = [this, d](std::span<const TokenId> rows, std::vector<double>& out) {
        out.assign(d, 0.0);
        for (TokenId r : rows) {
            size_t base = off_embed() + static_cast<size_t>(r) * d;
            for (size_t c = 0; c < d; ++c) out[c] += theta_[base + c];
        }
        if (!rows.empty()) {
            double inv = 1.0 / static_cast<double>(rows.size());
            for (double& x : out) x *= inv;
        }
    };
    auto affine = [this](size_t w_off, size_t rows, size_t cols, size_t b_off,
                         const std::vector<double>& x, std::vector<double>& out) {
        out.resize(rows);
        for (size_t r = 0; r < rows; ++r) {
            size_t wrow = w_off + r * cols;
            double acc = 0.0;
            for (size_t c = 0; c < cols; ++c) acc += theta_[wrow + c] * x[c];
            out[r] = acc + theta_[b_off + r];
        }
    };

    std::vector<double> eq, qe, pm, x, hh, logits;
    mean_rows(query, eq);
    affine(off_wq(), d, d, off_bq(), eq, qe);
    std::vector<TokenId> ctx = context_window(prefix);
    mean_rows(ctx, pm);
    x.reserve(2 * d);
    x.insert(x.end(), qe.begin(), qe.end());
    x.insert(x.end(), pm.begin(), pm.end());
    affine(off_wh(), h, 2 * d, off_bh(), x, hh);
    for (double& v : hh) v = std::tanh(v);
    affine(off_wo(), vocab_size_, h, off_bo(), hh, logits);

    double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    double lse = m + std::log(s);
    for (double& v : logits) v -= lse;
    return logits;
}

double Model::generation_loss(std::span<const TokenId> query, std::span<const TokenId> target) const {
    if (target.empty()) throw ValidationError("target identifier must be nonempty");
    check_tokens(target);
    std::vector<TokenId> prefix;
    prefix.reserve(target.size());
    double sum_lp = 0.0;
    for (size_t j = 0; j <= target.size(); ++j) {
        TokenId tgt = j < target.size() ? target[j] : kEos;
        std::vector<double> lp = token_logprobs(query, prefix);
        sum_lp += lp[tgt];
        if (j < target.size()) prefix.push_back(tgt);
    }
    return -sum_lp;
}

double Model::score_sequence(std::span<const TokenId> query, std::span<const TokenId> target) const {
    return std::exp(-generation_loss(query, target));
}

ad::NodeId Model::tape_sequence_logprob(ad::Tape& tape, ad::NodeId theta_leaf,
                                        std::span<const TokenId> query,
                                        std::span<const TokenId> target) const {
    if (target.empty()) throw ValidationError("target identifier must be nonempty");
    check_tokens(query);
    check_tokens(target);
    size_t d = static_cast<size_t>(dims_.embed_dim);
    size_t h = static_cast<size_t>(dims_.hidden_dim);

    std::vector<TokenId> query_v(query.begin(), query.end());
    ad::NodeId eq = tape.rows_mean(theta_leaf, off_embed(), static_cast<int>(d), query_v);
    ad::NodeId qe = tape.affine(theta_leaf, off_wq(), static_cast<int>(d), static_cast<int>(d),
                                off_bq(), eq);

    std::vector<TokenId> prefix;
    std::vector<ad::NodeId> lps;
    for (size_t j = 0; j <= target.size(); ++j) {
        TokenId tgt = j < target.size() ? target[j] : kEos;
        std::vector<TokenId> ctx = context_window(prefix);
        ad::NodeId pm = tape.rows_mean(theta_leaf, off_embed(), static_cast<int>(d), ctx);
        ad::NodeId x = tape.concat(qe, pm);
        ad::NodeId hh = tape.tanh_v(tape.affine(theta_leaf, off_wh(), static_cast<int>(h),
                                                static_cast<int>(2 * d), off_bh(), x));
        ad::NodeId logits = tape.affine(theta_leaf, off_wo(), static_cast<int>(vocab_size_),
                                        static_cast<int>(h), off_bo(), hh);
        ad::NodeId lp = tape.sub(tape.pick(logits, static_cast<int>(tgt)), tape.logsumexp(logits));
        lps.push_back(lp);
        if (j < target.size()) prefix.push_back(tgt);
    }
    return tape.sum(lps);
}

ad::NodeId Model::tape_generation_loss(ad::Tape& tape, ad::NodeId theta_leaf,
                                       std::span<const TokenId> query,
                                       std::span<const TokenId> target) const {
    return tape.neg(tape_sequence_logprob(tape, theta_leaf, query, target));
}

void AdamState::step(std::vector<double>& theta, const std::vector<double>& grads,
                     const AdamConfig& cfg) {
    if (theta.size() != m_.size() || grads.size() != m_.size()) {
        throw ValidationError("optimizer state shape mismatch");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < theta.size(); ++i) {
        double g = grads[i];
        m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
        v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g * g;
        double mh = m_[i] / bc1;
        double vh = v_[i] / bc2;
        theta[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * theta[i]);
    }
}

void apply_step(Model& model, const std::vector<double>& grads, AdamState& state,
                const AdamConfig& cfg) {
    for (double g : grads) {
        if (!std::isfinite(g)) throw ValidationError("non-finite gradient; update aborted");
    }
    state.step(model.theta(), grads, cfg);
}

void Model::save(const std::string& path, uint64_t vocab_hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 8);
    BinaryWriter w(out);
    w.u32(kCheckpointVersion);
    w.u64(vocab_hash);
    w.u64(vocab_size_);
    w.u32(static_cast<uint32_t>(dims_.embed_dim));
    w.u32(static_cast<uint32_t>(dims_.hidden_dim));
    w.u32(static_cast<uint32_t>(dims_.context_k));
    w.f64_vec(theta_);
}

Model Model::load_any(const std::string& path, uint64_t* vocab_hash_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::string_view(magic, 8) != std::string_view(kCheckpointMagic, 8)) {
        throw ParseError("not a checkpoint file: " + path);
    }
    BinaryReader r(in);
    uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ValidationError("checkpoint version mismatch: file has " + std::to_string(version));
    }
    uint64_t vocab_hash = r.u64();
    if (vocab_hash_out != nullptr) *vocab_hash_out = vocab_hash;
    Model m;
    m.vocab_size_ = r.u64();
    m.dims_.embed_dim = static_cast<int>(r.u32());
    m.dims_.hidden_dim = static_cast<int>(r.u32());
    m.dims_.context_k = static_cast<int>(r.u32());
    m.theta_ = r.f64_vec();
    if (m.theta_.size() != m.off_bo() + m.vocab_size_) {
        throw ParseError("checkpoint parameter payload has the wrong size");
    }
    return m;
}

Model Model::load(const std::string& path, uint64_t expected_vocab_hash) {
    uint64_t h = 0;
    Model m = load_any(path, &h);
    if (h != expected_vocab_hash) {
        throw ValidationError("checkpoint vocabulary hash mismatch (model was trained on a "
                              "different corpus)");
    }
    return m;
}

FiniteDiffReport finite_diff_check(const Model& model, const LossBuilder& build_loss, double eps,
                                   int n_coords, uint64_t seed) {
    if (eps <= 0.0) throw ValidationError("finite-difference eps must be positive");
    constexpr double kKinkGap = 1e-3;

    // Analytic pass.
    ad::Tape tape;
    ad::NodeId theta_leaf = tape.leaf(model.theta());
    ad::NodeId loss = build_loss(tape, theta_leaf);
    tape.backward(loss);
    std::vector<double> analytic = tape.grad(theta_leaf);
    bool base_near_kink = tape.min_hinge_gap() < kKinkGap;

    auto eval_at = [&](const std::vector<double>& theta, bool* near_kink) {
        ad::Tape t;
        ad::NodeId leaf = t.leaf(theta);
        ad::NodeId l = build_loss(t, leaf);
        if (near_kink != nullptr) *near_kink = t.min_hinge_gap() < kKinkGap;
        return t.value(l);
    };

    Rng rng(mix_seed(seed, "finite-diff"));
    FiniteDiffReport report;
    std::vector<double> theta = model.theta();
    for (int i = 0; i < n_coords; ++i) {
        size_t c = static_cast<size_t>(rng.bounded(theta.size()));
        double keep = theta[c];
        bool kink_p = false, kink_m = false;
        theta[c] = keep + eps;
        double fp = eval_at(theta, &kink_p);
        theta[c] = keep - eps;
        double fm = eval_at(theta, &kink_m);
        theta[c] = keep;
        if (base_near_kink || kink_p || kink_m) {
            ++report.skipped_kinks;
            continue;
        }
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-6});
        double rel = std::abs(analytic[c] - numeric) / denom;
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.checked;
    }
    return report;
}

}  // namespace dgr
