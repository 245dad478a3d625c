#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fluidsense/numerics/special.hpp"
#include "fluidsense/numerics/types.hpp"

namespace fluidsense::numerics {

class DiffGraph;

/// Handle to a node of a DiffGraph. Cheap to copy; only valid while its graph lives.
struct Var {
  DiffGraph* graph = nullptr;
  std::uint32_t id = 0;

  double value() const;
};

/// Reverse-mode differentiation tape over real scalars.
///
/// Every node stores its value and the local partial derivatives with respect
/// to its parents at construction time, so the reverse pass is a single sweep
/// accumulating adjoints. Gradient-stopped nodes have no parents.
class DiffGraph {
 public:
  DiffGraph() = default;
  DiffGraph(const DiffGraph&) = delete;
  DiffGraph& operator=(const DiffGraph&) = delete;

  void reserve(std::size_t nodes) {
    nodes_.reserve(nodes);
    edges_.reserve(2 * nodes);
  }

  void clear() {
    nodes_.clear();
    edges_.clear();
    inputs_.clear();
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t input_count() const noexcept { return inputs_.size(); }

  double value(Var v) const { return nodes_.at(v.id).value; }

  Var input(double v) {
    Var out = push(v, {});
    inputs_.push_back(out.id);
    return out;
  }

  std::vector<Var> inputs(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(input(v));
    return out;
  }

  Var constant(double v) { return push(v, {}); }

  Var add(Var a, Var b) { return push(val(a) + val(b), {{a.id, 1.0}, {b.id, 1.0}}); }
  Var sub(Var a, Var b) { return push(val(a) - val(b), {{a.id, 1.0}, {b.id, -1.0}}); }
  Var mul(Var a, Var b) { return push(val(a) * val(b), {{a.id, val(b)}, {b.id, val(a)}}); }
  Var scale(Var a, double c) { return push(c * val(a), {{a.id, c}}); }
  Var add_constant(Var a, double c) { return push(val(a) + c, {{a.id, 1.0}}); }
  Var square(Var a) { return push(val(a) * val(a), {{a.id, 2.0 * val(a)}}); }

  Var reciprocal(Var a) {
    const double x = val(a);
    return push(1.0 / x, {{a.id, -1.0 / (x * x)}});
  }

  Var exp(Var a) {
    const double e = std::exp(val(a));
    return push(e, {{a.id, e}});
  }

  Var sin(Var a) { return push(std::sin(val(a)), {{a.id, std::cos(val(a))}}); }
  Var cos(Var a) { return push(std::cos(val(a)), {{a.id, -std::sin(val(a))}}); }

  Var sigmoid(Var a) {
    const double s = numerics::sigmoid(val(a));
    return push(s, {{a.id, s * (1.0 - s)}});
  }

  /// Sigmoid-weighted linear unit x * sigmoid(x).
  Var silu(Var a) {
    const double x = val(a);
    const double s = numerics::sigmoid(x);
    return push(x * s, {{a.id, s + x * s * (1.0 - s)}});
  }

  Var sum(std::span<const Var> xs) {
    double total = 0.0;
    std::vector<Edge> edges;
    edges.reserve(xs.size());
    for (Var x : xs) {
      total += val(x);
      edges.push_back({x.id, 1.0});
    }
    return push_edges(total, edges);
  }

  /// sum_i w_i x_i with constant weights.
  Var dot(std::span<const Var> xs, std::span<const double> weights) {
    if (xs.size() != weights.size()) throw std::invalid_argument("DiffGraph::dot: size mismatch");
    double total = 0.0;
    std::vector<Edge> edges;
    edges.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      total += weights[i] * val(xs[i]);
      edges.push_back({xs[i].id, weights[i]});
    }
    return push_edges(total, edges);
  }

  Var dot(std::span<const Var> xs, std::span<const Var> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("DiffGraph::dot: size mismatch");
    double total = 0.0;
    std::vector<Edge> edges;
    edges.reserve(2 * xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      total += val(xs[i]) * val(ys[i]);
      edges.push_back({xs[i].id, val(ys[i])});
      edges.push_back({ys[i].id, val(xs[i])});
    }
    return push_edges(total, edges);
  }

  Var stop_gradient(Var a) { return push(val(a), {}); }

  /// m-th largest value of xs (m is 1-based), with its gradient stopped.
  Var order_statistic(std::span<const Var> xs, std::size_t m) {
    if (m < 1 || m > xs.size()) throw std::invalid_argument("DiffGraph::order_statistic: rank out of range");
    std::vector<double> vals;
    vals.reserve(xs.size());
    for (Var x : xs) vals.push_back(val(x));
    std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(m - 1), vals.end(),
                     std::greater<>());
    return push(vals[m - 1], {});
  }

  /// d output / d input for every registered input, in registration order.
  std::vector<double> gradient(Var output) const {
    std::vector<double> adjoint(nodes_.size(), 0.0);
    adjoint.at(output.id) = 1.0;
    for (std::size_t n = output.id + 1; n-- > 0;) {
      const double a = adjoint[n];
      if (a == 0.0) continue;
      const Node& node = nodes_[n];
      for (std::uint32_t e = node.first_edge; e < node.first_edge + node.edge_count; ++e) {
        adjoint[edges_[e].parent] += a * edges_[e].partial;
      }
    }
    std::vector<double> grad;
    grad.reserve(inputs_.size());
    for (std::uint32_t id : inputs_) grad.push_back(adjoint[id]);
    return grad;
  }

 private:
  struct Edge {
    std::uint32_t parent;
    double partial;
  };
  struct Node {
    double value;
    std::uint32_t first_edge;
    std::uint32_t edge_count;
  };

  double val(Var v) const { return nodes_[v.id].value; }

  Var push(double value, std::initializer_list<Edge> edges) {
    return push_edges(value, std::span<const Edge>(edges.begin(), edges.size()));
  }

  Var push_edges(double value, std::span<const Edge> edges) {
    const auto first = static_cast<std::uint32_t>(edges_.size());
    edges_.insert(edges_.end(), edges.begin(), edges.end());
    nodes_.push_back({value, first, static_cast<std::uint32_t>(edges.size())});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> inputs_;
};

inline double Var::value() const { return graph->value(*this); }

inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
inline Var operator*(Var a, double c) { return a.graph->scale(a, c); }
inline Var operator*(double c, Var a) { return a.graph->scale(a, c); }
inline Var operator+(Var a, double c) { return a.graph->add_constant(a, c); }
inline Var operator+(double c, Var a) { return a.graph->add_constant(a, c); }
inline Var operator-(Var a, double c) { return a.graph->add_constant(a, -c); }
inline Var operator-(double c, Var a) { return a.graph->add_constant(a.graph->scale(a, -1.0), c); }
inline Var operator-(Var a) { return a.graph->scale(a, -1.0); }

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h per coordinate.
template <typename F>
RealVector finite_difference_gradient(F&& f, const RealVector& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_gradient: h must be positive");
  RealVector grad(x.size());
  RealVector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = f(static_cast<const RealVector&>(probe));
    probe[k] = x[k] - h;
    const double down = f(static_cast<const RealVector&>(probe));
    probe[k] = x[k];
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace fluidsense::numerics
