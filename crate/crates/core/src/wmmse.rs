//! Weighted MMSE block-coordinate descent.

use num_complex::Complex64;

use crate::channel::{cross_gains, mse, scale_to_power, weighted_sum_rate, SolverState, SystemConfig};
use crate::cmat::CMat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseConfig {
    /// Maximum number of iterations L.
    pub max_iters: usize,
    /// Stop once the WSR changes by at most this much between iterations.
    pub eps: f64,
    /// Absolute tolerance on `P − Tr(V Vᴴ)` when the power constraint is active.
    pub bisection_tol: f64,
    pub bisection_max_steps: usize,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            eps: 1e-4,
            bisection_tol: 1e-8,
            bisection_max_steps: 200,
        }
    }
}

impl WmmseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::Config(format!(
                "bisection_tol must be positive, got {}",
                self.bisection_tol
            )));
        }
        Ok(())
    }
}

/// Per-iteration record of a solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub wsr: Vec<f64>,
    pub power: Vec<f64>,
    /// Solver objective per iteration: the weighted MSE objective for WMMSE,
    /// the global loss `F_t` for MLBF.
    pub objective: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
}

impl Trajectory {
    pub fn push(&mut self, wsr: f64, power: f64, objective: f64) {
        self.wsr.push(wsr);
        self.power.push(power);
        self.objective.push(objective);
        self.iters_used = self.wsr.len();
    }

    pub fn last_wsr(&self) -> Option<f64> {
        self.wsr.last().copied()
    }

    pub fn best_wsr(&self) -> Option<f64> {
        self.wsr.iter().copied().reduce(f64::max)
    }

    /// Running maximum of the recorded WSR.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.wsr
            .iter()
            .scan(f64::NEG_INFINITY, |best, &w| {
                *best = best.max(w);
                Some(*best)
            })
            .collect()
    }
}

/// Closed-form MMSE weights `w_i = S_i / (S_i − |g_ii|²)`; always `≥ 1`.
pub fn update_w(h: &CMat, v: &CMat, sigma2: f64) -> Result<Vec<f64>> {
    let g = cross_gains(h, v)?;
    Ok(g.iter()
        .enumerate()
        .map(|(i, row)| {
            let interference: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, z)| z.norm_sqr())
                .sum::<f64>()
                + sigma2;
            (interference + row[i].norm_sqr()) / interference
        })
        .collect())
}

/// MMSE receive gains `u_i = conj(h_iᴴ v_i) / (Σ_j |h_iᴴ v_j|² + σ²)`.
///
/// The conjugate matches the estimate `x̂_i = u_i y_i` used by [`mse`]; the
/// resulting `|u_i|`, MSE and rates are the same as for the unconjugated form.
pub fn update_u(h: &CMat, v: &CMat, sigma2: f64) -> Result<Vec<Complex64>> {
    let g = cross_gains(h, v)?;
    Ok(g.iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().map(|z| z.norm_sqr()).sum::<f64>() + sigma2;
            row[i].conj() / total
        })
        .collect())
}

/// Solves `(A + μI) x = b` for each right-hand side, with `A` Hermitian
/// positive semidefinite.
fn hermitian_solve(a: &[Vec<Complex64>], mu: f64, rhs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let m = a.len();
    let shifted = |ridge: f64| -> Vec<Vec<Complex64>> {
        (0..m)
            .map(|r| {
                (0..m)
                    .map(|c| if r == c { a[r][c] + mu + ridge } else { a[r][c] })
                    .collect()
            })
            .collect()
    };
    let factor = cholesky(&shifted(0.0)).or_else(|| {
        let scale = (0..m).map(|i| a[i][i].re).fold(1.0f64, f64::max);
        cholesky(&shifted(1e-12 * scale))
    });
    let l = match factor {
        Some(l) => l,
        // Only reachable for a numerically indefinite A; fall back to a
        // ridge large enough to dominate rounding.
        None => cholesky(&shifted(1e-8 * (1.0 + mu))).expect("ridged matrix is positive definite"),
    };
    rhs.iter().map(|b| cholesky_solve(&l, b)).collect()
}

fn cholesky(a: &[Vec<Complex64>]) -> Option<Vec<Vec<Complex64>>> {
    let m = a.len();
    let mut l = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for j in 0..m {
        let mut d = a[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j][j] = Complex64::new(djj, 0.0);
        for i in (j + 1)..m {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = s / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
    let m = l.len();
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in (i + 1)..m {
            s -= l[k][i].conj() * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Transmit beamformers for fixed `(u, w)`:
/// `v_i = α_i w_i conj(u_i) (A + μI)⁻¹ h_i` with
/// `A = Σ_i α_i w_i |u_i|² h_i h_iᴴ`, and `μ ≥ 0` chosen by bisection so the
/// power constraint holds.
///
/// Returns `(V, μ)`. When the constraint is active, the returned `V`
/// satisfies `P − bisection_tol ≤ Tr(V Vᴴ) ≤ P`.
pub fn update_v(
    h: &CMat,
    u: &[Complex64],
    w: &[f64],
    cfg: &SystemConfig,
    wcfg: &WmmseConfig,
) -> Result<(CMat, f64)> {
    let (n, m) = h.dim();
    if (n, m) != (cfg.users(), cfg.antennas()) {
        return Err(Error::shape(
            "update_v",
            format!("H ({}, {})", cfg.users(), cfg.antennas()),
            format!("{:?}", h.dim()),
        ));
    }
    if u.len() != n || w.len() != n {
        return Err(Error::shape("update_v", n, format!("u {}, w {}", u.len(), w.len())));
    }
    if let Some((i, wi)) = w.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::domain("update_v", format!("w[{i}] = {wi} is not positive")));
    }
    let alpha = cfg.alpha();
    let power = cfg.power();

    let mut a = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for i in 0..n {
        let c = alpha[i] * w[i] * u[i].norm_sqr();
        if c == 0.0 {
            continue;
        }
        for r in 0..m {
            for col in 0..m {
                a[r][col] += c * h.get(i, r) * h.get(i, col).conj();
            }
        }
    }
    let rhs: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            let coeff = alpha[i] * w[i] * u[i].conj();
            h.row(i).into_iter().map(|z| coeff * z).collect()
        })
        .collect();

    let beamformers = |mu: f64| -> CMat {
        let cols = hermitian_solve(&a, mu, &rhs);
        let mut v = CMat::zeros(n, m);
        for (i, x) in cols.iter().enumerate() {
            v.set_row(i, x);
        }
        v
    };

    let v0 = beamformers(0.0);
    if v0.is_finite() && v0.power() <= power {
        return Ok((v0, 0.0));
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut v_hi = beamformers(hi);
    let mut steps = 0;
    while v_hi.power() >= power {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > wcfg.bisection_max_steps {
            return Err(Error::Solver {
                solver: "wmmse",
                detail: format!(
                    "could not bracket the multiplier: power {} ≥ P = {power} at mu = {hi}",
                    v_hi.power()
                ),
            });
        }
        v_hi = beamformers(hi);
    }

    for _ in 0..wcfg.bisection_max_steps {
        if power - v_hi.power() <= wcfg.bisection_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v_mid = beamformers(mid);
        if v_mid.power() > power {
            lo = mid;
        } else {
            hi = mid;
            v_hi = v_mid;
        }
    }
    Ok((v_hi, hi))
}

/// Weighted-MSE objective `Σ_i α_i (w_i e_i − ln w_i)`.
///
/// The weight update `w_i = 1/e_i` is the exact minimizer of this form (with
/// the natural log), which makes it monotonically non-increasing under the
/// block updates. The `log₂` form used by [`crate::channel::global_loss`]
/// differs by `Σ α_i (1/ln 2 − 1) ln w_i`.
pub fn weighted_mse_objective(state: &SolverState, h: &CMat, cfg: &SystemConfig) -> Result<f64> {
    let e = mse(h, &state.v, &state.u, cfg.sigma2())?;
    Ok(e.iter()
        .zip(&state.w)
        .zip(cfg.alpha())
        .map(|((e, w), a)| a * (w * e - w.ln()))
        .sum())
}

/// One `u → w → V` round starting from `v`.
pub fn wmmse_round(h: &CMat, v: &CMat, cfg: &SystemConfig, wcfg: &WmmseConfig) -> Result<SolverState> {
    let u = update_u(h, v, cfg.sigma2())?;
    let w = update_w(h, v, cfg.sigma2())?;
    let (v, _mu) = update_v(h, &u, &w, cfg, wcfg)?;
    Ok(SolverState {
        v,
        u,
        w,
        outer_step: 0,
    })
}

/// Runs WMMSE from `v0` until the WSR settles or `max_iters` is reached.
pub fn solve_wmmse(
    h: &CMat,
    v0: &CMat,
    cfg: &SystemConfig,
    wcfg: &WmmseConfig,
) -> Result<(SolverState, Trajectory)> {
    wcfg.validate()?;
    cfg.check_shapes("solve_wmmse", h, v0)?;
    if v0.power() > cfg.power() {
        return Err(Error::Precondition(format!(
            "initial beamformer power {} exceeds P = {}",
            v0.power(),
            cfg.power()
        )));
    }

    let mut traj = Trajectory::default();
    let mut prev_wsr = weighted_sum_rate(h, v0, cfg)?;
    let mut state = SolverState::consistent(h, v0.clone(), cfg.sigma2())?;
    for iter in 1..=wcfg.max_iters {
        let mut next = wmmse_round(h, &state.v, cfg, wcfg)?;
        next.outer_step = iter;
        let wsr = weighted_sum_rate(h, &next.v, cfg)?;
        let objective = weighted_mse_objective(&next, h, cfg)?;
        traj.push(wsr, next.v.power(), objective);
        state = next;
        if (wsr - prev_wsr).abs() <= wcfg.eps {
            traj.converged = true;
            break;
        }
        prev_wsr = wsr;
    }
    Ok((state, traj))
}

/// Matched-filter start: `v_i = √(P/N) h_i / ‖h_i‖`, meeting the budget with
/// equality.
pub fn matched_filter_init(h: &CMat, cfg: &SystemConfig) -> CMat {
    let (n, m) = h.dim();
    let mut v = CMat::zeros(n, m);
    for i in 0..n {
        let row = h.row(i);
        let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            let unit: Vec<Complex64> = row.iter().map(|z| z / norm).collect();
            v.set_row(i, &unit);
        }
    }
    scale_to_power(&v, cfg.power())
}
