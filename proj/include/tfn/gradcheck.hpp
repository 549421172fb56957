#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tfn/diff.hpp"

namespace tfn::diff {

using NamedParams = std::vector<std::pair<std::string, ValuePtr>>;

struct GradReport {
    struct Item {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Item> items;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;

    std::string worst() const;
};

// Compares analytic gradients against central finite differences
// (f(th+eps) - f(th-eps)) / (2 eps), per scalar parameter. build_loss must
// rebuild the forward graph from the current parameter data and return the
// scalar loss node. Relative error uses |a-f| / max(|a|,|f|,1e-8).
GradReport grad_check(const std::function<ValuePtr()>& build_loss, const NamedParams& params,
                      double eps = 1e-5, double tol = 1e-4);

void zero_grads(const NamedParams& params);

}  // namespace tfn::diff
