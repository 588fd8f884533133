#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape owns an append-only list of nodes. Every node's parents precede it,
// so a single reverse sweep visits each node once. Parameters are leaves
// registered under a caller-chosen stable id; backward() reports the
// derivative of the output with respect to each registered id.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace prefopt::ad {

using ParamId = std::uint32_t;

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  double value() const;
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

// Partial derivatives keyed by parameter id. Absent ids read as exactly 0.
class GradientMap {
 public:
  double operator[](ParamId id) const;
  void add(ParamId id, double d) { grads_[id] += d; }
  std::size_t size() const { return grads_.size(); }
  std::vector<double> to_dense(std::size_t parameter_count) const;

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<ParamId, double> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(double value);
  // Registering the same id twice returns the original leaf.
  Var parameter(ParamId id, double value);
  std::optional<Var> find_parameter(ParamId id) const;

  // Node with one parent and a local derivative per parent.
  Var unary(Var x, double value, double dvalue_dx);
  Var binary(Var a, Var b, double value, double dvalue_da, double dvalue_db);
  Var nary(std::span<const Var> xs, double value, std::span<const double> partials);

  // Value-transparent; backward propagates zero through the returned node.
  // When stop-gradient replay is armed, the k-th call returns the k-th frozen
  // value instead of x's value (used by finite-difference checks).
  Var stop_gradient(Var x);

  void freeze_stop_gradients(std::vector<double> values);
  const std::vector<double>& stop_gradient_values() const { return sg_values_; }

  GradientMap backward(Var output) const;

  double value(std::uint32_t index) const { return nodes_[index].value; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_blocked(Var v) const;

 private:
  struct Node {
    double value;
    std::uint32_t first_edge;
    std::uint32_t edge_count;
    bool grad_blocked;
  };
  struct Edge {
    std::uint32_t parent;
    double local;
  };

  Var push(double value, bool blocked);
  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::unordered_map<ParamId, std::uint32_t> param_index_;
  std::vector<std::pair<std::uint32_t, ParamId>> param_nodes_;
  std::vector<double> sg_values_;
  std::optional<std::vector<double>> sg_frozen_;
  std::size_t sg_cursor_ = 0;
};

// Arithmetic. Mixing Vars from different tapes throws StructuralError.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var square(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
// log(sigmoid(x)) = -softplus(-x); NaN input throws InputError.
Var log_sigmoid(Var x);
// log(1 - exp(x)) for x < 0.
Var log1m_exp(Var x);
Var log_sum_exp(std::span<const Var> xs);
Var sum(std::span<const Var> xs);
Var mean(std::span<const Var> xs);
Var stop_gradient(Var x);

// Plain-double versions of the stable primitives.
double softplus(double x);
double log_sigmoid(double x);
double sigmoid(double x);
double log_sum_exp(std::span<const double> xs);

// ---------------------------------------------------------------------------
// Finite-difference gradient validation.

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

enum class StopGradientMode {
  kFrozen,  // perturbed evaluations reuse the stop-gradient values of the base point
  kLive,    // perturbed evaluations recompute everything (documents sg mismatches)
};

struct CoordinateCheck {
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct CheckReport {
  std::vector<CoordinateCheck> coordinates;
  double max_rel_error = 0.0;
  bool pass = false;
  std::optional<std::size_t> failed_coordinate;
  std::string message;
};

// Relative error is |a - n| / max(|a|, |n|, kRelErrorFloor).
inline constexpr double kRelErrorFloor = 1e-3;

CheckReport finite_diff_check(const ScalarFunction& f, std::span<const double> params,
                              double step, double tol,
                              StopGradientMode mode = StopGradientMode::kFrozen);

}  // namespace prefopt::ad
