#include "prefopt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "prefopt/errors.hpp"

namespace prefopt::ad {

double Var::value() const {
  if (tape_ == nullptr) {
    throw StructuralError("value() on an unbound Var");
  }
  return tape_->value(index_);
}

double GradientMap::operator[](ParamId id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? 0.0 : it->second;
}

std::vector<double> GradientMap::to_dense(std::size_t parameter_count) const {
  std::vector<double> dense(parameter_count, 0.0);
  for (const auto& [id, d] : grads_) {
    if (id >= parameter_count) {
      throw StructuralError(fmt::format("gradient for parameter {} outside dense range {}", id,
                                        parameter_count));
    }
    dense[id] = d;
  }
  return dense;
}

Var Tape::push(double value, bool blocked) {
  nodes_.push_back(Node{value, static_cast<std::uint32_t>(edges_.size()), 0, blocked});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this) {
    throw StructuralError("operand belongs to a different tape");
  }
  if (v.index_ >= nodes_.size()) {
    throw StructuralError("operand index past end of tape");
  }
}

Var Tape::constant(double value) { return push(value, false); }

Var Tape::parameter(ParamId id, double value) {
  if (auto it = param_index_.find(id); it != param_index_.end()) {
    return Var(this, it->second);
  }
  Var v = push(value, false);
  param_index_.emplace(id, v.index_);
  param_nodes_.emplace_back(v.index_, id);
  return v;
}

std::optional<Var> Tape::find_parameter(ParamId id) const {
  auto it = param_index_.find(id);
  if (it == param_index_.end()) {
    return std::nullopt;
  }
  return Var(const_cast<Tape*>(this), it->second);
}

Var Tape::unary(Var x, double value, double dvalue_dx) {
  check_owned(x);
  Var out = push(value, false);
  edges_.push_back(Edge{x.index_, dvalue_dx});
  nodes_.back().edge_count = 1;
  return out;
}

Var Tape::binary(Var a, Var b, double value, double dvalue_da, double dvalue_db) {
  check_owned(a);
  check_owned(b);
  Var out = push(value, false);
  edges_.push_back(Edge{a.index_, dvalue_da});
  edges_.push_back(Edge{b.index_, dvalue_db});
  nodes_.back().edge_count = 2;
  return out;
}

Var Tape::nary(std::span<const Var> xs, double value, std::span<const double> partials) {
  if (xs.size() != partials.size()) {
    throw StructuralError("nary: operand/partial count mismatch");
  }
  for (Var x : xs) {
    check_owned(x);
  }
  Var out = push(value, false);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    edges_.push_back(Edge{xs[i].index_, partials[i]});
  }
  nodes_.back().edge_count = static_cast<std::uint32_t>(xs.size());
  return out;
}

Var Tape::stop_gradient(Var x) {
  check_owned(x);
  double v = x.value();
  if (sg_frozen_) {
    if (sg_cursor_ >= sg_frozen_->size()) {
      throw StructuralError("stop-gradient replay exhausted: graph differs from base evaluation");
    }
    v = (*sg_frozen_)[sg_cursor_++];
  }
  sg_values_.push_back(v);
  Var out = push(v, true);
  // Keep the structural edge so the graph shape is inspectable; backward skips it.
  edges_.push_back(Edge{x.index_, 0.0});
  nodes_.back().edge_count = 1;
  return out;
}

void Tape::freeze_stop_gradients(std::vector<double> values) {
  sg_frozen_ = std::move(values);
  sg_cursor_ = 0;
}

bool Tape::grad_blocked(Var v) const {
  check_owned(v);
  return nodes_[v.index_].grad_blocked;
}

GradientMap Tape::backward(Var output) const {
  check_owned(output);
  std::vector<double> adjoint(output.index_ + 1, 0.0);
  adjoint[output.index_] = 1.0;
  for (std::uint32_t i = output.index_ + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    const double a = adjoint[i];
    if (a == 0.0 || node.grad_blocked) {
      continue;
    }
    for (std::uint32_t e = 0; e < node.edge_count; ++e) {
      const Edge& edge = edges_[node.first_edge + e];
      if (edge.parent >= i) {
        throw StructuralError(fmt::format("cycle: node {} lists parent {}", i, edge.parent));
      }
      adjoint[edge.parent] += a * edge.local;
    }
  }
  GradientMap grads;
  for (const auto& [index, id] : param_nodes_) {
    if (index <= output.index_) {
      grads.add(id, adjoint[index]);
    } else {
      grads.add(id, 0.0);
    }
  }
  return grads;
}

namespace {

Tape& common_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw StructuralError("operands belong to different tapes");
  }
  return *a.tape();
}

Tape& tape_of(Var x) {
  if (x.tape() == nullptr) {
    throw StructuralError("operation on an unbound Var");
  }
  return *x.tape();
}

}  // namespace

Var operator+(Var a, Var b) {
  return common_tape(a, b).binary(a, b, a.value() + b.value(), 1.0, 1.0);
}
Var operator-(Var a, Var b) {
  return common_tape(a, b).binary(a, b, a.value() - b.value(), 1.0, -1.0);
}
Var operator*(Var a, Var b) {
  return common_tape(a, b).binary(a, b, a.value() * b.value(), b.value(), a.value());
}
Var operator/(Var a, Var b) {
  const double bv = b.value();
  return common_tape(a, b).binary(a, b, a.value() / bv, 1.0 / bv, -a.value() / (bv * bv));
}
Var operator-(Var a) { return tape_of(a).unary(a, -a.value(), -1.0); }

Var operator+(Var a, double b) { return tape_of(a).unary(a, a.value() + b, 1.0); }
Var operator+(double a, Var b) { return b + a; }
Var operator-(Var a, double b) { return tape_of(a).unary(a, a.value() - b, 1.0); }
Var operator-(double a, Var b) { return tape_of(b).unary(b, a - b.value(), -1.0); }
Var operator*(Var a, double b) { return tape_of(a).unary(a, a.value() * b, b); }
Var operator*(double a, Var b) { return b * a; }
Var operator/(Var a, double b) { return tape_of(a).unary(a, a.value() / b, 1.0 / b); }
Var operator/(double a, Var b) {
  const double bv = b.value();
  return tape_of(b).unary(b, a / bv, -a / (bv * bv));
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return -softplus(-x); }

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) {
    return -std::numeric_limits<double>::infinity();
  }
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) {
    return m;
  }
  double s = 0.0;
  for (double x : xs) {
    s += std::exp(x - m);
  }
  return m + std::log(s);
}

Var exp(Var x) {
  const double e = std::exp(x.value());
  return tape_of(x).unary(x, e, e);
}

Var log(Var x) {
  const double v = x.value();
  if (!(v > 0.0)) {
    throw InputError(fmt::format("log of non-positive value {}", v));
  }
  return tape_of(x).unary(x, std::log(v), 1.0 / v);
}

Var sqrt(Var x) {
  const double v = x.value();
  if (!(v > 0.0)) {
    throw InputError(fmt::format("sqrt derivative undefined at {}", v));
  }
  const double s = std::sqrt(v);
  return tape_of(x).unary(x, s, 0.5 / s);
}

Var square(Var x) {
  const double v = x.value();
  return tape_of(x).unary(x, v * v, 2.0 * v);
}

Var sigmoid(Var x) {
  const double s = sigmoid(x.value());
  return tape_of(x).unary(x, s, s * (1.0 - s));
}

Var softplus(Var x) {
  const double v = x.value();
  return tape_of(x).unary(x, softplus(v), sigmoid(v));
}

Var log_sigmoid(Var x) {
  const double v = x.value();
  if (std::isnan(v)) {
    throw InputError("log_sigmoid: NaN input");
  }
  // d/dx log sigma(x) = 1 - sigma(x) = sigma(-x)
  return tape_of(x).unary(x, log_sigmoid(v), sigmoid(-v));
}

Var log1m_exp(Var x) {
  const double v = x.value();
  if (!(v < 0.0)) {
    throw InputError(fmt::format("log1m_exp requires a negative argument, got {}", v));
  }
  // Switch at -ln 2 between the two accurate forms.
  const double value = v > -0.6931471805599453 ? std::log(-std::expm1(v)) : std::log1p(-std::exp(v));
  const double d = -1.0 / std::expm1(-v);
  return tape_of(x).unary(x, value, d);
}

Var log_sum_exp(std::span<const Var> xs) {
  if (xs.empty()) {
    throw InputError("log_sum_exp of an empty list");
  }
  std::vector<double> values(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    values[i] = xs[i].value();
  }
  const double lse = log_sum_exp(values);
  std::vector<double> partials(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    partials[i] = std::exp(values[i] - lse);
  }
  return tape_of(xs.front()).nary(xs, lse, partials);
}

Var sum(std::span<const Var> xs) {
  if (xs.empty()) {
    throw InputError("sum of an empty list");
  }
  double total = 0.0;
  for (Var x : xs) {
    total += x.value();
  }
  std::vector<double> ones(xs.size(), 1.0);
  return tape_of(xs.front()).nary(xs, total, ones);
}

Var mean(std::span<const Var> xs) {
  return sum(xs) / static_cast<double>(xs.size());
}

Var stop_gradient(Var x) { return tape_of(x).stop_gradient(x); }

CheckReport finite_diff_check(const ScalarFunction& f, std::span<const double> params,
                              double step, double tol, StopGradientMode mode) {
  if (!(step > 0.0)) {
    throw InputError("finite_diff_check: step must be positive");
  }
  CheckReport report;
  const std::size_t n = params.size();

  auto bind = [&](Tape& tape, std::span<const double> values) {
    std::vector<Var> vars;
    vars.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      vars.push_back(tape.parameter(static_cast<ParamId>(i), values[i]));
    }
    return vars;
  };

  Tape base;
  const auto base_vars = bind(base, params);
  const Var out = f(base, base_vars);
  if (!std::isfinite(out.value())) {
    report.message = "non-finite value at the base point";
    return report;
  }
  const GradientMap grads = base.backward(out);
  const std::vector<double> frozen = base.stop_gradient_values();

  auto evaluate = [&](std::span<const double> values) {
    Tape tape;
    if (mode == StopGradientMode::kFrozen) {
      tape.freeze_stop_gradients(frozen);
    }
    const auto vars = bind(tape, values);
    try {
      return f(tape, vars).value();
    } catch (const InputError&) {  // domain error at a perturbed point
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  std::vector<double> shifted(params.begin(), params.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double original = shifted[i];
    shifted[i] = original + step;
    const double plus = evaluate(shifted);
    shifted[i] = original - step;
    const double minus = evaluate(shifted);
    shifted[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      report.failed_coordinate = i;
      report.message = fmt::format("non-finite evaluation at coordinate {}", i);
      report.pass = false;
      return report;
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double analytic = grads[static_cast<ParamId>(i)];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    report.coordinates.push_back({i, analytic, numeric, rel});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
    }
    if (!(rel < tol) && !report.failed_coordinate) {
      report.failed_coordinate = i;
    }
  }
  report.pass = report.max_rel_error < tol;
  report.message = fmt::format("max relative error {:.3e} over {} coordinates (tol {:.1e})",
                               report.max_rel_error, n, tol);
  return report;
}

}  // namespace prefopt::ad
