#include "tfn/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace tfn::diff {

std::string GradReport::worst() const {
    std::string w = "(none)";
    double m = -1.0;
    for (const auto& it : items)
        if (it.max_rel_err > m) {
            m = it.max_rel_err;
            w = it.name;
        }
    return w;
}

void zero_grads(const NamedParams& params) {
    for (const auto& [name, p] : params) p->zero_grad();
}

GradReport grad_check(const std::function<ValuePtr()>& build_loss, const NamedParams& params,
                      double eps, double tol) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

    zero_grads(params);
    ValuePtr loss = build_loss();
    if (!std::isfinite(loss->x(0, 0)))
        throw std::runtime_error("grad_check: non-finite loss at base point");
    backward(loss);

    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) analytic.push_back(p->g);

    GradReport report;
    report.tol = tol;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        const auto& p = params[pi].second;
        GradReport::Item item{name, 0.0};
        for (int i = 0; i < p->size(); ++i) {
            const double saved = p->x.a[i];
            p->x.a[i] = saved + eps;
            const double fp = build_loss()->x(0, 0);
            p->x.a[i] = saved - eps;
            const double fm = build_loss()->x(0, 0);
            p->x.a[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite loss perturbing " + name +
                                         "[" + std::to_string(i) + "]");
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[pi].a[i];
            const double rel =
                std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8});
            if (rel > item.max_rel_err) item.max_rel_err = rel;
        }
        report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
        report.items.push_back(std::move(item));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace tfn::diff
