#include "dgr/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dgr/errors.hpp"

namespace dgr::ad {

NodeId Tape::push(std::vector<double> val, std::function<void(Tape&)> back) {
    Node n;
    n.grad.assign(val.size(), 0.0);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(std::vector<double> v) { return push(std::move(v), nullptr); }

NodeId Tape::scalar(double x) { return push({x}, nullptr); }

NodeId Tape::rows_mean(NodeId theta, size_t offset, int cols, const std::vector<TokenId>& rows) {
    const auto& tv = node(theta).val;
    std::vector<double> out(static_cast<size_t>(cols), 0.0);
    for (TokenId r : rows) {
        size_t base = offset + static_cast<size_t>(r) * static_cast<size_t>(cols);
        for (int c = 0; c < cols; ++c) out[static_cast<size_t>(c)] += tv[base + static_cast<size_t>(c)];
    }
    if (!rows.empty()) {
        double inv = 1.0 / static_cast<double>(rows.size());
        for (double& x : out) x *= inv;
    }
    NodeId id = push(std::move(out), nullptr);
    std::vector<TokenId> rows_copy = rows;
    node(id).back = [id, theta, offset, cols, rows_copy](Tape& t) {
        if (rows_copy.empty()) return;
        const auto& g = t.node(id).grad;
        auto& tg = t.node(theta).grad;
        double inv = 1.0 / static_cast<double>(rows_copy.size());
        for (TokenId r : rows_copy) {
            size_t base = offset + static_cast<size_t>(r) * static_cast<size_t>(cols);
            for (int c = 0; c < cols; ++c)
                tg[base + static_cast<size_t>(c)] += g[static_cast<size_t>(c)] * inv;
        }
    };
    return id;
}

NodeId Tape::affine(NodeId theta, size_t w_offset, int out, int in, size_t b_offset, NodeId x) {
    const auto& tv = node(theta).val;
    const auto& xv = node(x).val;
    std::vector<double> y(static_cast<size_t>(out));
    for (int r = 0; r < out; ++r) {
        size_t wrow = w_offset + static_cast<size_t>(r) * static_cast<size_t>(in);
        double acc = 0.0;
        for (int c = 0; c < in; ++c) acc += tv[wrow + static_cast<size_t>(c)] * xv[static_cast<size_t>(c)];
        y[static_cast<size_t>(r)] = acc + tv[b_offset + static_cast<size_t>(r)];
    }
    NodeId id = push(std::move(y), nullptr);
    node(id).back = [id, theta, w_offset, out, in, b_offset, x](Tape& t) {
        const auto& g = t.node(id).grad;
        const auto& tv = t.node(theta).val;
        const auto& xv = t.node(x).val;
        auto& tg = t.node(theta).grad;
        auto& xg = t.node(x).grad;
        for (int r = 0; r < out; ++r) {
            double gr = g[static_cast<size_t>(r)];
            if (gr == 0.0) continue;
            size_t wrow = w_offset + static_cast<size_t>(r) * static_cast<size_t>(in);
            for (int c = 0; c < in; ++c) {
                tg[wrow + static_cast<size_t>(c)] += gr * xv[static_cast<size_t>(c)];
                xg[static_cast<size_t>(c)] += gr * tv[wrow + static_cast<size_t>(c)];
            }
            tg[b_offset + static_cast<size_t>(r)] += gr;
        }
    };
    return id;
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const auto& av = node(a).val;
    const auto& bv = node(b).val;
    std::vector<double> out;
    out.reserve(av.size() + bv.size());
    out.insert(out.end(), av.begin(), av.end());
    out.insert(out.end(), bv.begin(), bv.end());
    NodeId id = push(std::move(out), nullptr);
    node(id).back = [id, a, b](Tape& t) {
        const auto& g = t.node(id).grad;
        auto& ga = t.node(a).grad;
        auto& gb = t.node(b).grad;
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
    };
    return id;
}

NodeId Tape::tanh_v(NodeId x) {
    std::vector<double> out = node(x).val;
    for (double& v : out) v = std::tanh(v);
    NodeId id = push(std::move(out), nullptr);
    node(id).back = [id, x](Tape& t) {
        const auto& g = t.node(id).grad;
        const auto& y = t.node(id).val;
        auto& gx = t.node(x).grad;
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return id;
}

NodeId Tape::pick(NodeId x, int i) {
    NodeId id = push({node(x).val.at(static_cast<size_t>(i))}, nullptr);
    node(id).back = [id, x, i](Tape& t) { t.node(x).grad[static_cast<size_t>(i)] += t.node(id).grad[0]; };
    return id;
}

NodeId Tape::logsumexp(NodeId x) {
    const auto& xv = node(x).val;
    double m = *std::max_element(xv.begin(), xv.end());
    double s = 0.0;
    for (double v : xv) s += std::exp(v - m);
    NodeId id = push({m + std::log(s)}, nullptr);
    node(id).back = [id, x](Tape& t) {
        double g = t.node(id).grad[0];
        double lse = t.node(id).val[0];
        const auto& xv = t.node(x).val;
        auto& gx = t.node(x).grad;
        for (size_t i = 0; i < xv.size(); ++i) gx[i] += g * std::exp(xv[i] - lse);
    };
    return id;
}

NodeId Tape::pack(const std::vector<NodeId>& scalars) {
    std::vector<double> out;
    out.reserve(scalars.size());
    for (NodeId s : scalars) out.push_back(node(s).val[0]);
    NodeId id = push(std::move(out), nullptr);
    std::vector<NodeId> src = scalars;
    node(id).back = [id, src](Tape& t) {
        const auto& g = t.node(id).grad;
        for (size_t i = 0; i < src.size(); ++i) t.node(src[i]).grad[0] += g[i];
    };
    return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
    NodeId id = push({node(a).val[0] + node(b).val[0]}, nullptr);
    node(id).back = [id, a, b](Tape& t) {
        double g = t.node(id).grad[0];
        t.node(a).grad[0] += g;
        t.node(b).grad[0] += g;
    };
    return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
    NodeId id = push({node(a).val[0] - node(b).val[0]}, nullptr);
    node(id).back = [id, a, b](Tape& t) {
        double g = t.node(id).grad[0];
        t.node(a).grad[0] += g;
        t.node(b).grad[0] -= g;
    };
    return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    NodeId id = push({node(a).val[0] * node(b).val[0]}, nullptr);
    node(id).back = [id, a, b](Tape& t) {
        double g = t.node(id).grad[0];
        t.node(a).grad[0] += g * t.node(b).val[0];
        t.node(b).grad[0] += g * t.node(a).val[0];
    };
    return id;
}

NodeId Tape::neg(NodeId a) { return mul_const(a, -1.0); }

NodeId Tape::add_const(NodeId a, double c) {
    NodeId id = push({node(a).val[0] + c}, nullptr);
    node(id).back = [id, a](Tape& t) { t.node(a).grad[0] += t.node(id).grad[0]; };
    return id;
}

NodeId Tape::mul_const(NodeId a, double c) {
    NodeId id = push({node(a).val[0] * c}, nullptr);
    node(id).back = [id, a, c](Tape& t) { t.node(a).grad[0] += t.node(id).grad[0] * c; };
    return id;
}

NodeId Tape::exp_s(NodeId a) {
    NodeId id = push({std::exp(node(a).val[0])}, nullptr);
    node(id).back = [id, a](Tape& t) { t.node(a).grad[0] += t.node(id).grad[0] * t.node(id).val[0]; };
    return id;
}

NodeId Tape::log_s(NodeId a) {
    NodeId id = push({std::log(node(a).val[0])}, nullptr);
    node(id).back = [id, a](Tape& t) { t.node(a).grad[0] += t.node(id).grad[0] / t.node(a).val[0]; };
    return id;
}

NodeId Tape::inv_s(NodeId a) {
    NodeId id = push({1.0 / node(a).val[0]}, nullptr);
    node(id).back = [id, a](Tape& t) {
        double y = t.node(id).val[0];
        t.node(a).grad[0] -= t.node(id).grad[0] * y * y;
    };
    return id;
}

namespace {
double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

NodeId Tape::sigmoid_s(NodeId a) {
    NodeId id = push({stable_sigmoid(node(a).val[0])}, nullptr);
    node(id).back = [id, a](Tape& t) {
        double y = t.node(id).val[0];
        t.node(a).grad[0] += t.node(id).grad[0] * y * (1.0 - y);
    };
    return id;
}

NodeId Tape::softplus(NodeId a) {
    double x = node(a).val[0];
    double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    NodeId id = push({v}, nullptr);
    node(id).back = [id, a](Tape& t) {
        t.node(a).grad[0] += t.node(id).grad[0] * stable_sigmoid(t.node(a).val[0]);
    };
    return id;
}

NodeId Tape::relu(NodeId a) {
    double x = node(a).val[0];
    min_hinge_gap_ = std::min(min_hinge_gap_, std::abs(x));
    NodeId id = push({x > 0.0 ? x : 0.0}, nullptr);
    node(id).back = [id, a](Tape& t) {
        if (t.node(a).val[0] > 0.0) t.node(a).grad[0] += t.node(id).grad[0];
    };
    return id;
}

NodeId Tape::sum(const std::vector<NodeId>& scalars) {
    double acc = 0.0;
    for (NodeId s : scalars) acc += node(s).val[0];
    NodeId id = push({acc}, nullptr);
    std::vector<NodeId> src = scalars;
    node(id).back = [id, src](Tape& t) {
        double g = t.node(id).grad[0];
        for (NodeId s : src) t.node(s).grad[0] += g;
    };
    return id;
}

void Tape::backward(NodeId root) {
    if (node(root).val.size() != 1) throw ValidationError("backward root must be scalar");
    if (!std::isfinite(node(root).val[0])) throw ValidationError("backward on non-finite loss");
    node(root).grad[0] = 1.0;
    for (NodeId i = root; i >= 0; --i) {
        auto& n = node(i);
        if (n.back) n.back(*this);
    }
}

}  // namespace dgr::ad
