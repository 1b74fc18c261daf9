//! The global loss, its block gradients and the power projection written as
//! tape operations on real-split coordinates.
//!
//! Variable layouts match [`crate::channel::grad_subproblem`]: `u` is the
//! column `[u_re; u_im]` (`2N × 1`), `w` is `N × 1`, and `V` is the row-major
//! flattening of `[V_re, V_im]` (`2NM × 1`). Real and imaginary parts are
//! recovered with selector matrices.

use std::f64::consts::LN_2;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::channel::{Block, SystemConfig};
use crate::cmat::{split_masks, CMat};
use crate::error::Result;

/// Problem constants placed on one tape.
#[derive(Debug, Clone)]
pub struct ProblemGraph {
    users: usize,
    antennas: usize,
    sigma2: f64,
    power: f64,
    mu: f64,
    h_re: Var,
    h_im: Var,
    h_re_t: Var,
    h_im_t: Var,
    /// `2M × M` selectors for the columns of `[V_re, V_im]`.
    v_mask_re: Var,
    v_mask_im: Var,
    v_mask_re_t: Var,
    v_mask_im_t: Var,
    /// `N × 2N` selectors for the halves of `[u_re; u_im]`.
    u_sel_re: Var,
    u_sel_im: Var,
    u_sel_re_t: Var,
    u_sel_im_t: Var,
    alpha: Var,
    eye: Var,
    ones_row: Var,
}

/// Intermediate quantities shared by the loss and the gradients.
struct Terms {
    u_re: Var,
    u_im: Var,
    v_re: Var,
    v_im: Var,
    /// `[j, i] = Re / Im (h_iᴴ v_j)`.
    gains_t_re: Var,
    gains_t_im: Var,
    /// `S_i = Σ_j |g_ij|² + σ²` as `N × 1`.
    total: Var,
    /// `g_ii` as `N × 1`.
    diag_re: Var,
    diag_im: Var,
    /// `|u_i|²`
    u_sq: Var,
    /// `e_i`
    mse: Var,
}

impl ProblemGraph {
    pub fn new(tape: &mut Tape, h: &CMat, cfg: &SystemConfig, mu: f64) -> Self {
        let (n, m) = (cfg.users(), cfg.antennas());
        let (mask_re, mask_im) = split_masks(m);
        let (sel_re, sel_im) = split_masks(n);
        let sel_re = sel_re.t().to_owned();
        let sel_im = sel_im.t().to_owned();
        let alpha = Array2::from_shape_vec((n, 1), cfg.alpha().to_vec()).expect("column");
        Self {
            users: n,
            antennas: m,
            sigma2: cfg.sigma2(),
            power: cfg.power(),
            mu,
            h_re: tape.constant(h.re().clone()),
            h_im: tape.constant(h.im().clone()),
            h_re_t: tape.constant(h.re().t().to_owned()),
            h_im_t: tape.constant(h.im().t().to_owned()),
            v_mask_re_t: tape.constant(mask_re.t().to_owned()),
            v_mask_im_t: tape.constant(mask_im.t().to_owned()),
            v_mask_re: tape.constant(mask_re),
            v_mask_im: tape.constant(mask_im),
            u_sel_re_t: tape.constant(sel_re.t().to_owned()),
            u_sel_im_t: tape.constant(sel_im.t().to_owned()),
            u_sel_re: tape.constant(sel_re),
            u_sel_im: tape.constant(sel_im),
            alpha: tape.constant(alpha),
            eye: tape.constant(Array2::eye(n)),
            ones_row: tape.constant(Array2::ones((1, n))),
        }
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    fn terms(&self, t: &mut Tape, u: Var, v: Var) -> Result<Terms> {
        let (n, m) = (self.users, self.antennas);
        let split = t.reshape(v, n, 2 * m)?;
        let v_re = t.matmul(split, self.v_mask_re)?;
        let v_im = t.matmul(split, self.v_mask_im)?;

        let a = t.matmul(v_re, self.h_re_t)?;
        let b = t.matmul(v_im, self.h_im_t)?;
        let gains_t_re = t.add(a, b)?;
        let a = t.matmul(v_im, self.h_re_t)?;
        let b = t.matmul(v_re, self.h_im_t)?;
        let gains_t_im = t.sub(a, b)?;

        let sq_re = t.square(gains_t_re);
        let sq_im = t.square(gains_t_im);
        let mag = t.add(sq_re, sq_im)?;
        let row = t.matmul(self.ones_row, mag)?;
        let col = t.transpose(row);
        let total = t.add_const(col, self.sigma2);

        let column_of_diag = |t: &mut Tape, g: Var| -> Result<Var> {
            let masked = t.mul(g, self.eye)?;
            let row = t.matmul(self.ones_row, masked)?;
            Ok(t.transpose(row))
        };
        let diag_re = column_of_diag(t, gains_t_re)?;
        let diag_im = column_of_diag(t, gains_t_im)?;

        let u_re = t.matmul(self.u_sel_re, u)?;
        let u_im = t.matmul(self.u_sel_im, u)?;
        let a = t.square(u_re);
        let b = t.square(u_im);
        let u_sq = t.add(a, b)?;

        // e = |u|² S − 2 Re(u g_ii) + 1
        let quad = t.mul(u_sq, total)?;
        let a = t.mul(u_re, diag_re)?;
        let b = t.mul(u_im, diag_im)?;
        let re_ug = t.sub(a, b)?;
        let lin = t.scale(re_ug, 2.0);
        let diff = t.sub(quad, lin)?;
        let mse = t.add_const(diff, 1.0);

        Ok(Terms {
            u_re,
            u_im,
            v_re,
            v_im,
            gains_t_re,
            gains_t_im,
            total,
            diag_re,
            diag_im,
            u_sq,
            mse,
        })
    }

    /// `F = Σ_i α_i (w_i e_i − log₂ w_i) + μ Tr(V Vᴴ) − μ P` as a `1 × 1` node.
    pub fn loss(&self, t: &mut Tape, u: Var, w: Var, v: Var) -> Result<Var> {
        let terms = self.terms(t, u, v)?;
        let we = t.mul(w, terms.mse)?;
        let lw = t.log2(w)?;
        let per_user = t.sub(we, lw)?;
        let weighted = t.mul(self.alpha, per_user)?;
        let data = t.sum(weighted);
        if self.mu == 0.0 {
            return Ok(data);
        }
        let sq = t.square(v);
        let tr = t.sum(sq);
        let penalty = t.scale(tr, self.mu);
        let total = t.add(data, penalty)?;
        Ok(t.add_const(total, -self.mu * self.power))
    }

    /// Gradient of the loss with respect to one block's coordinates, as a
    /// differentiable column.
    pub fn block_grad(&self, t: &mut Tape, block: Block, u: Var, w: Var, v: Var) -> Result<Var> {
        let (n, m) = (self.users, self.antennas);
        let terms = self.terms(t, u, v)?;
        let aw = t.mul(self.alpha, w)?;
        match block {
            Block::W => {
                // α (e − 1/(w ln 2))
                let inv = t.reciprocal(w)?;
                let inv = t.scale(inv, 1.0 / LN_2);
                let d = t.sub(terms.mse, inv)?;
                t.mul(self.alpha, d)
            }
            Block::U => {
                // 2 α w (u S − conj(g_ii))
                let coeff = t.scale(aw, 2.0);
                let a = t.mul(terms.u_re, terms.total)?;
                let re = t.sub(a, terms.diag_re)?;
                let re = t.mul(coeff, re)?;
                let a = t.mul(terms.u_im, terms.total)?;
                let im = t.add(a, terms.diag_im)?;
                let im = t.mul(coeff, im)?;
                let a = t.matmul(self.u_sel_re_t, re)?;
                let b = t.matmul(self.u_sel_im_t, im)?;
                t.add(a, b)
            }
            Block::V => {
                // Row k: 2 [ Σ_i c_i g_ik h_i − α_k w_k conj(u_k) h_k + μ v_k ],
                // c = α w |u|².
                let c = t.mul(aw, terms.u_sq)?;
                let hc_re = t.scale_rows(self.h_re, c)?;
                let hc_im = t.scale_rows(self.h_im, c)?;
                let a = t.matmul(terms.gains_t_re, hc_re)?;
                let b = t.matmul(terms.gains_t_im, hc_im)?;
                let quad_re = t.sub(a, b)?;
                let a = t.matmul(terms.gains_t_re, hc_im)?;
                let b = t.matmul(terms.gains_t_im, hc_re)?;
                let quad_im = t.add(a, b)?;

                // conj(u) = u_re − j u_im
                let lin_re = t.mul(aw, terms.u_re)?;
                let lin_im = t.mul(aw, terms.u_im)?;
                let a = t.scale_rows(self.h_re, lin_re)?;
                let b = t.scale_rows(self.h_im, lin_im)?;
                let cross_re = t.add(a, b)?;
                let a = t.scale_rows(self.h_im, lin_re)?;
                let b = t.scale_rows(self.h_re, lin_im)?;
                let cross_im = t.sub(a, b)?;

                let mut g_re = t.sub(quad_re, cross_re)?;
                let mut g_im = t.sub(quad_im, cross_im)?;
                if self.mu != 0.0 {
                    let a = t.scale(terms.v_re, self.mu);
                    g_re = t.add(g_re, a)?;
                    let b = t.scale(terms.v_im, self.mu);
                    g_im = t.add(g_im, b)?;
                }
                let g_re = t.scale(g_re, 2.0);
                let g_im = t.scale(g_im, 2.0);
                let a = t.matmul(g_re, self.v_mask_re_t)?;
                let b = t.matmul(g_im, self.v_mask_im_t)?;
                let split = t.add(a, b)?;
                t.reshape(split, 2 * n * m, 1)
            }
        }
    }

    /// Frobenius rescaling onto `Tr(V Vᴴ) ≤ P`. The feasible branch (including
    /// the boundary) is the identity.
    pub fn project(&self, t: &mut Tape, v: Var) -> Result<Var> {
        project_on_tape(t, v, self.power)
    }
}

pub fn project_on_tape(t: &mut Tape, v: Var, power: f64) -> Result<Var> {
    let sq = t.square(v);
    let norm_sq = t.sum(sq);
    if t.scalar(norm_sq) <= power {
        return Ok(v);
    }
    let norm = t.sqrt(norm_sq)?;
    let inv = t.reciprocal(norm)?;
    let factor = t.scale(inv, power.sqrt());
    t.mul_scalar(v, factor)
}
