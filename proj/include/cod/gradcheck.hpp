#pragma once

#include "cod/graph.hpp"
#include "cod/params.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

namespace cod {

struct BuiltLoss {
  NodeId loss = -1;
  std::vector<NodeId> param_nodes;  // aligned with ParamSet order
};

// Builds a scalar loss graph from the given parameter values. Must register
// one graph param per ParamSet entry, in order.
using LossBuilder = std::function<BuiltLoss(Graph<double>&, const ParamSet<double>&)>;

struct GradCheckReport {
  struct Block {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<Block> blocks;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline std::vector<Tensor<double>> analytic_gradients(const LossBuilder& build,
                                                      const ParamSet<double>& params) {
  Graph<double> g;
  BuiltLoss bl = build(g, params);
  auto grads = g.backward(bl.loss);
  std::vector<Tensor<double>> out;
  out.reserve(params.size());
  for (NodeId id : bl.param_nodes) out.push_back(std::move(grads.at(id)));
  return out;
}

inline std::vector<Tensor<double>> fd_gradients(const LossBuilder& build,
                                                const ParamSet<double>& params,
                                                double h = 1e-5) {
  auto eval = [&](const ParamSet<double>& p) {
    Graph<double> g;
    BuiltLoss bl = build(g, p);
    return g.value(bl.loss).at(0);
  };
  ParamSet<double> work = params;
  std::vector<Tensor<double>> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<double> fd(params.values[i].shape);
    for (std::int64_t j = 0; j < fd.numel(); ++j) {
      const double orig = work.values[i].at(j);
      work.values[i].at(j) = orig + h;
      const double lp = eval(work);
      work.values[i].at(j) = orig - h;
      const double lm = eval(work);
      work.values[i].at(j) = orig;
      fd.at(j) = (lp - lm) / (2.0 * h);
    }
    out.push_back(std::move(fd));
  }
  return out;
}

inline GradCheckReport compare_gradients(const std::vector<std::string>& names,
                                         const std::vector<Tensor<double>>& analytic,
                                         const std::vector<Tensor<double>>& fd, double tol) {
  GradCheckReport report;
  for (std::size_t i = 0; i < names.size(); ++i) {
    double block_err = 0.0;
    for (std::int64_t j = 0; j < analytic[i].numel(); ++j) {
      const double a = analytic[i].at(j);
      const double f = fd[i].at(j);
      const double denom = std::max({std::abs(a), std::abs(f), 1e-3});
      block_err = std::max(block_err, std::abs(a - f) / denom);
    }
    report.blocks.push_back({names[i], block_err});
    report.max_rel_err = std::max(report.max_rel_err, block_err);
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

// Central-finite-difference check of a scalar loss w.r.t. every parameter.
// f64 only; per-block max relative error, pass iff all blocks are under tol.
inline GradCheckReport gradcheck(const LossBuilder& build, const ParamSet<double>& params,
                                 double tol, double h = 1e-5) {
  return compare_gradients(params.names, analytic_gradients(build, params),
                           fd_gradients(build, params, h), tol);
}

}  // namespace cod
