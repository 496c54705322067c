#include "grerank/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "grerank/error.hpp"

namespace grerank::diff {

namespace {

double evaluate(const std::function<Node(std::span<const Node>)>& f, const std::vector<Array>& inputs) {
  std::vector<Node> leaves;
  leaves.reserve(inputs.size());
  for (const Array& a : inputs) leaves.push_back(constant(a));
  return f(leaves).item();
}

}  // namespace

GradCheckResult check_gradient(const std::function<Node(std::span<const Node>)>& f, std::vector<Array> inputs,
                               double h, double abs_floor) {
  std::vector<Node> params;
  params.reserve(inputs.size());
  for (const Array& a : inputs) params.push_back(parameter(a));
  const Node out = f(params);
  if (out.size() != 1) throw ContractError("check_gradient: f must return a single entry");
  backward(out);

  GradCheckResult r;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    const Array& analytic = params[p].grad();
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      const double x = inputs[p][i];
      inputs[p][i] = x + h;
      const double up = evaluate(f, inputs);
      inputs[p][i] = x - h;
      const double down = evaluate(f, inputs);
      inputs[p][i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double diff = std::abs(analytic[i] - numeric);
      r.max_abs_error = std::max(r.max_abs_error, diff);
      if (diff > abs_floor) {
        r.max_rel_error = std::max(r.max_rel_error, diff / std::max(std::abs(analytic[i]), std::abs(numeric)));
      }
      ++r.entries;
    }
  }
  return r;
}

}  // namespace grerank::diff
