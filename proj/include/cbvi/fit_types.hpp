#pragma once

#include <vector>

#include "cbvi/errors.hpp"

namespace cbvi {

struct FitOptions {
    int max_iters = 100;
    /// Stop once the ELBO divided by N*K improves by less than this between sweeps.
    double elbo_drop_tol = 0.1;
    int workers = 1;
    /// Without the ELBO there is no convergence test and all max_iters sweeps run.
    bool compute_elbo = true;
    /// Added to the diagonal of the posterior precision only after a failed factorization.
    double ridge = 0.0;
    /// Also record the ELBO between the auxiliary and the weight update of every sweep.
    bool track_half_sweeps = false;

    void validate() const {
        if (max_iters < 1) throw InvalidSpec("max_iters must be at least 1");
        if (!(elbo_drop_tol >= 0.0)) throw InvalidSpec("elbo_drop_tol must be non-negative");
        if (workers < 1) throw InvalidSpec("workers must be at least 1");
        if (!(ridge >= 0.0)) throw InvalidSpec("ridge must be non-negative");
    }
};

struct FitReport {
    /// elbo_trace[0] is the ELBO at initialization, then one value per sweep.
    std::vector<double> elbo_trace;
    /// Two values per sweep: after the auxiliary update and after the weight update.
    std::vector<double> half_sweep_trace;
    int iterations = 0;
    bool converged = false;
    std::vector<double> seconds_per_iteration;
};

}  // namespace cbvi
