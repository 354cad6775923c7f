#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "dgr/corpus.hpp"

namespace dgr::ad {

using NodeId = int32_t;

/// Reverse-mode tape over dense double vectors. Scalars are size-1 nodes.
/// Single-threaded; one tape per loss evaluation.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId leaf(std::vector<double> v);
    NodeId scalar(double x);

    // --- views into a flat parameter leaf ---

    /// Mean of `rows` rows of the (rows x cols) matrix stored at
    /// theta[offset...]. An empty row list yields a zero vector.
    NodeId rows_mean(NodeId theta, size_t offset, int cols, const std::vector<TokenId>& rows);

    /// W x + b where W is (out x in) row-major at theta[w_offset...] and b
    /// is at theta[b_offset...].
    NodeId affine(NodeId theta, size_t w_offset, int out, int in, size_t b_offset, NodeId x);

    // --- vector ops ---
    NodeId concat(NodeId a, NodeId b);
    NodeId tanh_v(NodeId x);
    NodeId pick(NodeId x, int i);
    NodeId logsumexp(NodeId x);
    NodeId pack(const std::vector<NodeId>& scalars);

    // --- scalar ops ---
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId add_const(NodeId a, double c);
    NodeId mul_const(NodeId a, double c);
    NodeId exp_s(NodeId a);
    NodeId log_s(NodeId a);
    NodeId inv_s(NodeId a);
    NodeId sigmoid_s(NodeId a);
    NodeId softplus(NodeId a);  // log(1 + exp(x)), stable
    NodeId relu(NodeId a);      // records the kink argument
    NodeId sum(const std::vector<NodeId>& scalars);

    void backward(NodeId root);

    double value(NodeId id) const { return nodes_[static_cast<size_t>(id)].val[0]; }
    const std::vector<double>& values(NodeId id) const { return nodes_[static_cast<size_t>(id)].val; }
    const std::vector<double>& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }

    /// Smallest |x| seen at any relu; +inf when none. Finite-difference
    /// checks skip coordinates whose evaluations come near a kink.
    double min_hinge_gap() const { return min_hinge_gap_; }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        std::vector<double> val;
        std::vector<double> grad;
        std::function<void(Tape&)> back;  // null for leaves
    };

    NodeId push(std::vector<double> val, std::function<void(Tape&)> back);
    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    double min_hinge_gap_ = std::numeric_limits<double>::infinity();
};

}  // namespace dgr::ad
