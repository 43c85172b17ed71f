#include <algorithm>
#include <cmath>
#include <limits>

#include "perflaw/error.hpp"
#include "perflaw/fitting.hpp"

namespace perflaw {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

bool all_finite(const VectorXd& v) { return v.allFinite(); }

double lower_of(const ParamBounds& b, Eigen::Index i) {
    return b.lower.size() ? b.lower[i] : -std::numeric_limits<double>::infinity();
}
double upper_of(const ParamBounds& b, Eigen::Index i) {
    return b.upper.size() ? b.upper[i] : std::numeric_limits<double>::infinity();
}

// Central differences, one-sided where a bound would be crossed.
MatrixXd numeric_jacobian(const ResidualFn& residual, const VectorXd& x, const VectorXd& r0,
                          const std::vector<Eigen::Index>& free, const ParamBounds& bounds) {
    MatrixXd jac = MatrixXd::Zero(r0.size(), x.size());
    const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    VectorXd probe = x;
    for (Eigen::Index j : free) {
        const double h = base * std::max(1.0, std::abs(x[j]));
        const double lo = lower_of(bounds, j), hi = upper_of(bounds, j);
        const bool can_up = x[j] + h <= hi, can_down = x[j] - h >= lo;
        if (can_up && can_down) {
            probe[j] = x[j] + h;
            VectorXd up = residual(probe);
            probe[j] = x[j] - h;
            VectorXd down = residual(probe);
            jac.col(j) = (up - down) / (2.0 * h);
        } else if (can_up) {
            probe[j] = x[j] + h;
            jac.col(j) = (residual(probe) - r0) / h;
        } else {
            probe[j] = x[j] - h;
            jac.col(j) = (r0 - residual(probe)) / h;
        }
        probe[j] = x[j];
    }
    return jac;
}

}  // namespace

SolveResult least_squares(const ResidualFn& residual, const JacobianFn& jacobian, VectorXd init,
                          const ParamBounds& bounds, const std::vector<bool>& frozen,
                          const SolverSettings& settings) {
    const Eigen::Index n = init.size();
    if ((bounds.lower.size() && bounds.lower.size() != n) || (bounds.upper.size() && bounds.upper.size() != n)) {
        throw ValidationError("bounds do not match the parameter count");
    }
    if (!frozen.empty() && static_cast<Eigen::Index>(frozen.size()) != n) {
        throw ValidationError("mask does not match the parameter count");
    }
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(lower_of(bounds, i) <= init[i] && init[i] <= upper_of(bounds, i))) {
            throw ValidationError("initial parameter " + std::to_string(i) + " lies outside its bounds");
        }
        if (frozen.empty() || !frozen[static_cast<std::size_t>(i)]) free.push_back(i);
    }

    VectorXd x = std::move(init);
    VectorXd r = residual(x);
    if (!all_finite(r)) throw NumericError("residual is not finite at the initial parameters");
    const auto nf = static_cast<Eigen::Index>(free.size());
    if (r.size() < nf) {
        throw ValidationError("underdetermined: " + std::to_string(r.size()) + " residuals for " +
                              std::to_string(nf) + " free parameters");
    }

    SolveResult out;
    double rss = r.squaredNorm();
    if (nf == 0) {
        out.params = x;
        out.rss = rss;
        out.converged = true;
        return out;
    }

    auto free_jacobian = [&](const VectorXd& at, const VectorXd& r_at) {
        MatrixXd full = jacobian ? jacobian(at) : numeric_jacobian(residual, at, r_at, free, bounds);
        MatrixXd jf(full.rows(), nf);
        for (Eigen::Index k = 0; k < nf; ++k) jf.col(k) = full.col(free[static_cast<std::size_t>(k)]);
        return jf;
    };

    // Gradient components that point out of an active bound cannot be followed.
    auto projected_grad_norm = [&](const VectorXd& g) {
        double norm = 0.0;
        for (Eigen::Index k = 0; k < nf; ++k) {
            const Eigen::Index i = free[static_cast<std::size_t>(k)];
            const bool at_lo = x[i] <= lower_of(bounds, i) && g[k] > 0.0;
            const bool at_hi = x[i] >= upper_of(bounds, i) && g[k] < 0.0;
            if (!at_lo && !at_hi) norm = std::max(norm, std::abs(g[k]));
        }
        return norm;
    };

    MatrixXd jf = free_jacobian(x, r);
    MatrixXd a = jf.transpose() * jf;
    VectorXd g = jf.transpose() * r;
    const double max_diag = a.diagonal().maxCoeff();
    double lambda = 1e-3 * (max_diag > 0.0 ? max_diag : 1.0);
    double nu = 2.0;

    int iter = 0;
    for (; iter < settings.max_iterations; ++iter) {
        out.grad_norm = projected_grad_norm(g);
        if (out.grad_norm < settings.grad_tol || rss == 0.0) {
            out.converged = true;
            break;
        }
        // Marquardt scaling: damp each direction relative to its curvature.
        VectorXd scale = a.diagonal();
        const double floor = std::max(scale.maxCoeff(), 1.0) * 1e-12;
        for (Eigen::Index k = 0; k < nf; ++k) scale[k] = std::max(scale[k], floor);
        MatrixXd damped = a;
        damped.diagonal() += lambda * scale;
        // Parameters held at a bound by the gradient do not move; the step is
        // solved over the rest so the clamp cannot spoil their coupling.
        VectorXd rhs = -g;
        for (Eigen::Index k = 0; k < nf; ++k) {
            const Eigen::Index i = free[static_cast<std::size_t>(k)];
            const bool pinned = (x[i] <= lower_of(bounds, i) && g[k] > 0.0) || (x[i] >= upper_of(bounds, i) && g[k] < 0.0);
            if (!pinned) continue;
            damped.row(k).setZero();
            damped.col(k).setZero();
            damped(k, k) = 1.0;
            rhs[k] = 0.0;
        }
        VectorXd step = damped.ldlt().solve(rhs);
        if (!step.allFinite()) {
            lambda *= nu;
            nu *= 2.0;
            if (lambda > 1e300) break;
            continue;
        }

        VectorXd trial = x;
        for (Eigen::Index k = 0; k < nf; ++k) {
            const Eigen::Index i = free[static_cast<std::size_t>(k)];
            trial[i] = std::clamp(x[i] + step[k], lower_of(bounds, i), upper_of(bounds, i));
        }
        VectorXd taken(nf);
        for (Eigen::Index k = 0; k < nf; ++k) {
            const Eigen::Index i = free[static_cast<std::size_t>(k)];
            taken[k] = trial[i] - x[i];
        }
        if (taken.norm() <= 1e-15 * (x.norm() + 1e-15)) {
            // No representable move left.
            out.converged = true;
            break;
        }

        VectorXd r_trial = residual(trial);
        const double rss_trial = all_finite(r_trial) ? r_trial.squaredNorm() : std::numeric_limits<double>::infinity();
        // rss - |r + J h|^2 expanded, so that tiny steps do not cancel to noise.
        const VectorXd jh = jf * taken;
        const double predicted = -2.0 * g.dot(taken) - jh.squaredNorm();
        const double actual = rss - rss_trial;
        const bool improves = std::isfinite(rss_trial) && actual > 0.0;
        // At the rounding floor of the RSS a step can be genuinely better yet
        // not measurably so; there the projected gradient decides.
        bool at_floor = false;
        MatrixXd jf_trial;
        if (!improves && std::isfinite(rss_trial) && predicted > 0.0 &&
            std::abs(actual) <= 16.0 * std::numeric_limits<double>::epsilon() * rss) {
            jf_trial = free_jacobian(trial, r_trial);
            const VectorXd g_trial = jf_trial.transpose() * r_trial;
            const VectorXd x_saved = x;
            x = trial;
            at_floor = projected_grad_norm(g_trial) < projected_grad_norm(g);
            x = x_saved;
        }
        if (improves || at_floor) {
            const double rho = predicted > 0.0 ? actual / predicted : 1.0;
            const double rel_change = actual / rss;
            x = std::move(trial);
            r = std::move(r_trial);
            rss = rss_trial;
            jf = at_floor ? std::move(jf_trial) : free_jacobian(x, r);
            a = jf.transpose() * jf;
            g = jf.transpose() * r;
            if (improves) lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
            nu = 2.0;
            if (improves && rel_change < settings.rss_rel_tol &&
                taken.norm() <= settings.step_rel_tol * (x.norm() + settings.step_rel_tol)) {
                out.converged = true;
                ++iter;
                break;
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if (lambda > 1e300) {
                // Damping saturated: no descent step improves RSS at machine precision.
                out.converged = true;
                break;
            }
        }
    }
    out.grad_norm = projected_grad_norm(g);
    out.params = std::move(x);
    out.rss = rss;
    out.iterations = iter;
    return out;
}

}  // namespace perflaw
