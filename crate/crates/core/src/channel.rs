//! MISO downlink problem: configuration, channels, rates, MSEs, the global
//! loss and its block gradients, and the power projection.
//!
//! Conventions: `H` is `N × M` with row `i` holding `h_i`; `V` is `N × M` with
//! row `i` holding `v_i`. The cross gain `g_ij = h_iᴴ v_j` is the amplitude of
//! user `j`'s stream at receiver `i`. The receiver estimate is
//! `x̂_i = u_i y_i`, so the MSE-optimal gain is `u_i = conj(g_ii) / S_i` with
//! `S_i = Σ_j |g_ij|² + σ²`.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::cmat::{cvec_to_coords, CMat};
use crate::error::{Error, Result};
use crate::rng::{streams, GaussianStream};

/// Physical problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    antennas: usize,
    users: usize,
    power: f64,
    sigma2: f64,
    alpha: Vec<f64>,
    snr_db: f64,
}

impl SystemConfig {
    /// Unit noise and unit user weights; `P = 10^(snr_db/10)`.
    pub fn from_snr_db(antennas: usize, users: usize, snr_db: f64) -> Result<Self> {
        Self::with_weights(antennas, users, snr_db, vec![1.0; users])
    }

    pub fn with_weights(antennas: usize, users: usize, snr_db: f64, alpha: Vec<f64>) -> Result<Self> {
        if antennas == 0 || users == 0 {
            return Err(Error::Config(format!(
                "need at least one antenna and one user (M={antennas}, N={users})"
            )));
        }
        if !snr_db.is_finite() {
            return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
        }
        if alpha.len() != users {
            return Err(Error::Config(format!(
                "expected {users} user weights, got {}",
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Config(format!("user weights must be nonnegative, got {a}")));
        }
        let power = 10f64.powf(snr_db / 10.0);
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::Config(format!("SNR {snr_db} dB gives unusable power {power}")));
        }
        Ok(Self {
            antennas,
            users,
            power,
            sigma2: 1.0,
            alpha,
            snr_db,
        })
    }

    /// M
    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// N
    pub fn users(&self) -> usize {
        self.users
    }

    /// Maximum total transmit power P (linear).
    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub(crate) fn check_shapes(&self, op: &'static str, h: &CMat, v: &CMat) -> Result<()> {
        let want = (self.users, self.antennas);
        if h.dim() != want {
            return Err(Error::shape(op, format!("H {want:?}"), format!("{:?}", h.dim())));
        }
        if v.dim() != want {
            return Err(Error::shape(op, format!("V {want:?}"), format!("{:?}", v.dim())));
        }
        Ok(())
    }
}

/// A reproducible batch of channel realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub seed: u64,
    pub realizations: Vec<CMat>,
}

/// Draws `count` i.i.d. Rayleigh channels, entries CN(0, 1).
pub fn generate_channels(cfg: &SystemConfig, count: usize, seed: u64) -> ChannelSet {
    let mut rng = GaussianStream::new(seed, streams::CHANNELS);
    let realizations = (0..count)
        .map(|_| CMat::random_normal(cfg.users(), cfg.antennas(), &mut rng))
        .collect();
    ChannelSet { seed, realizations }
}

/// Which variable block a sub-problem acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    U,
    W,
    V,
}

impl Block {
    /// Number of real coordinates of the block.
    pub fn coords(self, users: usize, antennas: usize) -> usize {
        match self {
            Block::U => 2 * users,
            Block::W => users,
            Block::V => 2 * users * antennas,
        }
    }
}

/// Current iterate `(V, u, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub v: CMat,
    pub u: Vec<Complex64>,
    pub w: Vec<f64>,
    pub outer_step: usize,
}

impl SolverState {
    /// The state whose `u` and `w` are the closed-form MMSE receiver and
    /// weight for `v`.
    pub fn consistent(h: &CMat, v: CMat, sigma2: f64) -> Result<Self> {
        let u = crate::wmmse::update_u(h, &v, sigma2)?;
        let w = crate::wmmse::update_w(h, &v, sigma2)?;
        Ok(Self {
            v,
            u,
            w,
            outer_step: 0,
        })
    }
}

/// `g[i][j] = h_iᴴ v_j`.
pub fn cross_gains(h: &CMat, v: &CMat) -> Result<Vec<Vec<Complex64>>> {
    if h.dim() != v.dim() {
        return Err(Error::shape(
            "cross_gains",
            format!("{:?}", h.dim()),
            format!("{:?}", v.dim()),
        ));
    }
    let (n, m) = h.dim();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..m).map(|k| h.get(i, k).conj() * v.get(j, k)).sum())
                .collect()
        })
        .collect())
}

/// `|g_ij|²` row sums split into (desired, interference) per user.
fn signal_and_interference(h: &CMat, v: &CMat) -> Result<Vec<(f64, f64)>> {
    let g = cross_gains(h, v)?;
    Ok(g
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let interference = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, z)| z.norm_sqr())
                .sum();
            (row[i].norm_sqr(), interference)
        })
        .collect())
}

pub fn sinr(h: &CMat, v: &CMat, sigma2: f64) -> Result<Vec<f64>> {
    Ok(signal_and_interference(h, v)?
        .into_iter()
        .map(|(s, i)| s / (i + sigma2))
        .collect())
}

/// `Σ_i α_i log₂(1 + SINR_i)`, evaluated whether or not `V` is feasible.
pub fn weighted_sum_rate(h: &CMat, v: &CMat, cfg: &SystemConfig) -> Result<f64> {
    cfg.check_shapes("weighted_sum_rate", h, v)?;
    Ok(sinr(h, v, cfg.sigma2())?
        .iter()
        .zip(cfg.alpha())
        .map(|(s, a)| a * (1.0 + s).log2())
        .sum())
}

/// Per-user mean-square error `e_i` of the estimate `u_i y_i`.
pub fn mse(h: &CMat, v: &CMat, u: &[Complex64], sigma2: f64) -> Result<Vec<f64>> {
    let g = cross_gains(h, v)?;
    if u.len() != g.len() {
        return Err(Error::shape("mse", g.len(), u.len()));
    }
    Ok(g.iter()
        .zip(u)
        .enumerate()
        .map(|(i, (row, &ui))| {
            let mut e = (ui * row[i] - 1.0).norm_sqr();
            for (j, gij) in row.iter().enumerate() {
                if j != i {
                    e += (ui * gij).norm_sqr();
                }
            }
            e + sigma2 * ui.norm_sqr()
        })
        .collect())
}

fn check_state(op: &'static str, state: &SolverState, h: &CMat, cfg: &SystemConfig) -> Result<()> {
    cfg.check_shapes(op, h, &state.v)?;
    if state.u.len() != cfg.users() {
        return Err(Error::shape(op, format!("u of length {}", cfg.users()), state.u.len()));
    }
    if state.w.len() != cfg.users() {
        return Err(Error::shape(op, format!("w of length {}", cfg.users()), state.w.len()));
    }
    if let Some((i, w)) = state.w.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::domain(op, format!("w[{i}] = {w} is not positive")));
    }
    Ok(())
}

/// `F = Σ_i α_i (w_i e_i − log₂ w_i) + μ Tr(V Vᴴ) − μ P`.
pub fn global_loss(state: &SolverState, h: &CMat, cfg: &SystemConfig, mu: f64) -> Result<f64> {
    check_state("global_loss", state, h, cfg)?;
    let e = mse(h, &state.v, &state.u, cfg.sigma2())?;
    let data: f64 = e
        .iter()
        .zip(&state.w)
        .zip(cfg.alpha())
        .map(|((e, w), a)| a * (w * e - w.log2()))
        .sum();
    Ok(data + mu * state.v.power() - mu * cfg.power())
}

/// Gradient of the global loss with respect to the real coordinates of one
/// block, the others held fixed.
///
/// Coordinate layouts: `u` as `[re..., im...]`; `w` as-is; `V` as the
/// row-major flattening of `[V_re, V_im]` (see [`CMat::to_coords`]).
pub fn grad_subproblem(
    state: &SolverState,
    h: &CMat,
    cfg: &SystemConfig,
    mu: f64,
    which: Block,
) -> Result<Vec<f64>> {
    check_state("grad_subproblem", state, h, cfg)?;
    let sigma2 = cfg.sigma2();
    let alpha = cfg.alpha();
    let g = cross_gains(h, &state.v)?;
    let total: Vec<f64> = g
        .iter()
        .map(|row| row.iter().map(|z| z.norm_sqr()).sum::<f64>() + sigma2)
        .collect();

    match which {
        Block::W => {
            let e = mse(h, &state.v, &state.u, sigma2)?;
            Ok(e.iter()
                .zip(&state.w)
                .zip(alpha)
                .map(|((e, w), a)| a * (e - 1.0 / (w * LN_2)))
                .collect())
        }
        Block::U => {
            // ∂e_i/∂(re, im) u_i = 2 (u_i S_i − conj(g_ii)).
            let grad: Vec<Complex64> = (0..cfg.users())
                .map(|i| 2.0 * alpha[i] * state.w[i] * (state.u[i] * total[i] - g[i][i].conj()))
                .collect();
            Ok(cvec_to_coords(&grad))
        }
        Block::V => {
            let (n, m) = h.dim();
            // c_i = α_i w_i |u_i|²; row k of the complex gradient is
            // 2 [ Σ_i c_i g_ik h_i − α_k w_k conj(u_k) h_k + μ v_k ].
            let c: Vec<f64> = (0..n)
                .map(|i| alpha[i] * state.w[i] * state.u[i].norm_sqr())
                .collect();
            let mut grad = CMat::zeros(n, m);
            for k in 0..n {
                let lin = alpha[k] * state.w[k] * state.u[k].conj();
                for col in 0..m {
                    let mut z = mu * state.v.get(k, col) - lin * h.get(k, col);
                    for i in 0..n {
                        z += c[i] * g[i][k] * h.get(i, col);
                    }
                    grad.set(k, col, 2.0 * z);
                }
            }
            Ok(grad.to_coords().to_vec())
        }
    }
}

/// Projection onto `{V : Tr(V Vᴴ) ≤ P}` by Frobenius rescaling.
pub fn project_power(v: &CMat, power: f64) -> CMat {
    if v.power() <= power {
        v.clone()
    } else {
        scale_to_power(v, power)
    }
}

/// Rescales a nonzero `v` so that `Tr(V Vᴴ)` equals `power` up to rounding,
/// never exceeding it.
pub fn scale_to_power(v: &CMat, power: f64) -> CMat {
    let current = v.power();
    if current == 0.0 {
        return v.clone();
    }
    let mut scaled = v.scaled(power.sqrt() / current.sqrt());
    // Rounding can leave the rescaled power a few ulps above the budget.
    while scaled.power() > power {
        scaled = scaled.scaled(1.0 - f64::EPSILON);
    }
    scaled
}
