//! Closed-form contention models: attempt probability, steady-state access
//! rate, the throughput cost function and its optimum, the binary-exponential
//! collision fixed point, and observation-window concentration bounds.
//!
//! These are independent of the simulator and act as its oracle in tests.

/// Probability that a station with window `cw` attempts at a given
/// transmission chance: `2 / (cw + 1)`.
pub fn attempt_probability(cw: f64) -> f64 {
    assert!(cw >= 1.0, "attempt_probability needs cw >= 1, got {cw}");
    2.0 / (cw + 1.0)
}

/// Steady-state access rate of `n` stations at a common window: the exact
/// form `1 - (1 - tau)^n`.
pub fn steady_mar(n: usize, cw: f64) -> f64 {
    assert!(n >= 1 && cw >= 1.0);
    let tau = attempt_probability(cw);
    1.0 - (1.0 - tau).powi(n as i32)
}

/// First-order approximation of [`steady_mar`]: `2n / (cw + 1)`.
pub fn steady_mar_approx(n: usize, cw: f64) -> f64 {
    2.0 * n as f64 / (cw + 1.0)
}

/// Window at which `n` stations hold the access rate at `mar_tar`, from the
/// inverted approximation: `2n / mar_tar - 1`.
pub fn converged_cw(n: usize, mar_tar: f64) -> f64 {
    assert!(mar_tar > 0.0);
    2.0 * n as f64 / mar_tar - 1.0
}

/// Per-success channel cost in slot times as a function of the access rate:
/// `((n - mar)/n) * ((eta - 1) * mar + 1) / (mar * (1 - mar))`, where `eta`
/// is the collision duration in backoff slots. Minimizing it maximizes
/// saturation throughput.
pub fn cost_function(mar: f64, n: usize, eta: f64) -> f64 {
    assert!(
        mar > 0.0 && mar < 1.0,
        "cost_function domain is mar in (0,1), got {mar}"
    );
    assert!(eta > 1.0 && n >= 2);
    let nf = n as f64;
    ((nf - mar) / nf) * (((eta - 1.0) * mar + 1.0) / (mar * (1.0 - mar)))
}

/// Access rate minimizing the dominant factor of [`cost_function`]:
/// `1 / (sqrt(eta) + 1)`.
pub fn optimal_mar(eta: f64) -> f64 {
    assert!(eta > 0.0);
    1.0 / (eta.sqrt() + 1.0)
}

/// Grid argmin of the full cost function over `mar in (0,1)` with the given
/// step. Returns the minimizing rate.
pub fn cost_argmin(n: usize, eta: f64, step: f64) -> f64 {
    assert!(step > 0.0 && step < 0.5);
    let mut best = (f64::INFINITY, step);
    let mut mar = step;
    while mar < 1.0 - step / 2.0 {
        let l = cost_function(mar, n, eta);
        if l < best.0 {
            best = (l, mar);
        }
        mar += step;
    }
    best.1
}

/// Solve the binary-exponential-backoff collision probability for `n`
/// saturated stations by bisection on `rho` in (0,1).
///
/// The model: attempts at ladder stage `i` (window `cw_min * 2^i`,
/// `0 <= i <= r`) occur with weight `rho^i`; the per-stage attempt
/// probability is `2 / (cw_min * 2^i)`; and `rho = 1 - (1 - tau)^(n-1)`.
pub fn beb_collision_fixed_point(n: usize, cw_min: f64, r: u32) -> f64 {
    assert!(n >= 2 && cw_min >= 1.0);
    let tau = |rho: f64| -> f64 {
        let mut weight_sum = 0.0;
        let mut tau = 0.0;
        let mut w = 1.0;
        for i in 0..=r {
            weight_sum += w;
            tau += w * 2.0 / (cw_min * (1u64 << i) as f64);
            w *= rho;
        }
        tau / weight_sum
    };
    let residual = |rho: f64| -> f64 { rho - (1.0 - (1.0 - tau(rho)).powi(n as i32 - 1)) };

    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    debug_assert!(residual(lo) < 0.0 && residual(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided Chernoff-style bound on the deviation of the windowed access
/// rate estimate: `2 exp(-n_obs * delta^2 / (3 p (1 - p)))`.
pub fn chernoff_bound(n_obs: u64, p: f64, delta: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && delta >= 0.0);
    2.0 * (-(n_obs as f64) * delta * delta / (3.0 * p * (1.0 - p))).exp()
}

/// Standard error of the windowed access rate estimate:
/// `sqrt(p (1 - p) / n_obs)`.
pub fn standard_error(n_obs: u64, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0 && n_obs > 0);
    (p * (1.0 - p) / n_obs as f64).sqrt()
}

/// Access rate and collision probability for `n` stations whose window spans
/// `omega` slots (window value `omega - 1`, attempt probability `2/omega`).
/// Returns `(mar, rho)`; the access rate strictly dominates the collision
/// probability for `n >= 2`.
pub fn mar_exceeds_collision(n: usize, omega: f64) -> (f64, f64) {
    assert!(n >= 1 && omega > 2.0);
    let tau = 2.0 / omega;
    let mar = 1.0 - (1.0 - tau).powi(n as i32);
    let rho = 1.0 - (1.0 - tau).powi(n as i32 - 1);
    debug_assert!(n < 2 || mar > rho);
    (mar, rho)
}

/// CSV table of the collision fixed point against the station count.
pub fn collision_probability_table(n_from: usize, n_to: usize, cw_min: f64, r: u32) -> String {
    let mut out = String::from("n,collision_probability\n");
    for n in n_from.max(2)..=n_to {
        out.push_str(&format!(
            "{},{:.6}\n",
            n,
            beb_collision_fixed_point(n, cw_min, r)
        ));
    }
    out
}

/// CSV grid of the cost function over access rates for each eta.
pub fn cost_grid(etas: &[f64], n: usize, step: f64) -> String {
    let mut out = String::from("eta,mar,cost\n");
    for &eta in etas {
        let mut mar = step;
        while mar < 1.0 - step / 2.0 {
            out.push_str(&format!("{},{:.4},{:.6}\n", eta, mar, cost_function(mar, n, eta)));
            mar += step;
        }
    }
    out
}
