#pragma once

// Central finite-difference gradient checking, independent of the library's
// backward pass. Shared by the unit suites and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "weakts/tensor.hpp"

namespace testutil {

struct GradCheckConfig {
    double eps = 1e-4;
    double abs_tol = 1e-6;
    double rel_tol = 1e-3;
    int max_coords_per_tensor = 24;  // deterministic subsample for large tensors
    unsigned seed = 0x5eedU;
};

struct GradCheckReport {
    bool pass = true;
    double worst_abs = 0.0;
    double worst_rel = 0.0;
    std::string detail;  // first failing coordinate, if any
};

// Compares analytic gradients of `params` against central differences of the
// scalar loss rebuilt by `make_loss` (which must be a pure function of the
// parameter values). Coordinates are subsampled deterministically.
template <typename MakeLoss>
GradCheckReport check_gradients(std::vector<weakts::Tensor> params, MakeLoss&& make_loss,
                                GradCheckConfig cfg = {}) {
    using weakts::Tape;
    using weakts::Tensor;

    for (auto& p : params) p.zero_grad();

    std::vector<std::vector<double>> analytic(params.size());
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = make_loss();
        tape.backward(loss);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            analytic[pi] = params[pi].has_grad()
                               ? params[pi].grad()
                               : std::vector<double>(static_cast<size_t>(params[pi].size()), 0.0);
        }
    }

    GradCheckReport report;
    std::mt19937_64 rng(cfg.seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        std::vector<size_t> coords(vals.size());
        std::iota(coords.begin(), coords.end(), size_t{0});
        if (static_cast<int>(coords.size()) > cfg.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(static_cast<size_t>(cfg.max_coords_per_tensor));
        }
        for (size_t ci : coords) {
            const double saved = vals[ci];
            vals[ci] = saved + cfg.eps;
            const double lp = make_loss().item();
            vals[ci] = saved - cfg.eps;
            const double lm = make_loss().item();
            vals[ci] = saved;
            const double numeric = (lp - lm) / (2.0 * cfg.eps);
            const double a = analytic[pi][ci];
            const double abs_err = std::abs(a - numeric);
            const double denom = std::max(std::abs(a), std::abs(numeric));
            const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
            report.worst_abs = std::max(report.worst_abs, abs_err);
            if (denom > 0.0) report.worst_rel = std::max(report.worst_rel, rel_err);
            if (abs_err > std::max(cfg.abs_tol, cfg.rel_tol * denom) && report.pass) {
                report.pass = false;
                std::ostringstream os;
                os << "param " << pi << " coord " << ci << ": analytic " << a << " vs numeric "
                   << numeric;
                report.detail = os.str();
            }
        }
    }
    return report;
}

}  // namespace testutil
