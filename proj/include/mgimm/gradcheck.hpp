#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgimm/params.hpp"

namespace mgimm {

struct GradCheckOptions {
    std::size_t instances = 20;
    std::size_t entries_per_tensor = 3;  // sampled coordinates per parameter
    double step = 1e-4;                  // central-difference half width
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t instances = 0;
    std::size_t entries = 0;
};

using ScalarGraph = std::function<Var<double>(Binder<double>&)>;

/// Compares tape gradients with central differences on sampled entries of
/// every trainable parameter. Per tensor the error is
/// |a - n|_2 / max(|a|_2, |n|_2, 1e-6 max(1, |loss|)) over the sampled
/// entries; the largest one is returned. Parameters are restored afterwards.
double check_graph(ParamStore<double>& params, const ScalarGraph& graph, Rng& rng, const GradCheckOptions& options,
                   std::size_t* entries = nullptr);

/// Every differentiable op, each module and the composed stage-1 and
/// stage-2 losses, over options.instances random toy instances each.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options);

}  // namespace mgimm
