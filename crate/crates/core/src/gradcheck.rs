//! Finite-difference verification of every gradient the solvers rely on.
//!
//! Each suite compares an analytic gradient with central differences and
//! reports the largest relative error, `|a − n| / max(|a|, |n|, 10⁻²)`. The
//! floor keeps coordinates whose true derivative is near zero from dividing
//! rounding noise by nothing; for those the check is absolute at `10⁻²·tol`.

use std::time::Instant;

use ndarray::Array2;

use crate::autodiff::{Parameter, Tape, Var};
use crate::channel::{global_loss, grad_subproblem, Block, SolverState, SystemConfig};
use crate::cmat::{cvec_from_coords, cvec_to_coords, CMat};
use crate::error::Result;
use crate::meta::graph::{project_on_tape, ProblemGraph};
use crate::meta::{Learners, MetaLearner, MlbfConfig, MlbfSolver};
use crate::rng::GaussianStream;

pub const REL_FLOOR: f64 = 1e-2;
pub const SUBPROBLEM_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-6;
pub const WINDOW_TOL: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub millis: u128,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol && self.checked > 0
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<34} coords={:<6} max_rel_err={:.3e} tol={:.0e} ({} ms)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_err,
            self.tol,
            self.millis
        )
    }
}

struct Tracker {
    name: String,
    checked: usize,
    max: f64,
    tol: f64,
    start: Instant,
}

impl Tracker {
    fn new(name: impl Into<String>, tol: f64) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            max: 0.0,
            tol,
            start: Instant::now(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        // NaN must register as a failure.
        self.max = if e.is_nan() { f64::INFINITY } else { self.max.max(e) };
    }

    fn finish(self) -> GradcheckReport {
        GradcheckReport {
            name: self.name,
            checked: self.checked,
            max_rel_err: self.max,
            tol: self.tol,
            millis: self.start.elapsed().as_millis(),
        }
    }
}

fn central_difference(x: &[f64], k: usize, step: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += step;
    let mut xm = x.to_vec();
    xm[k] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

/// A random point `(H, V, u, w)` of moderate scale.
pub fn random_point(rng: &mut GaussianStream, users: usize, antennas: usize) -> (SystemConfig, CMat, SolverState) {
    let alpha = (0..users).map(|_| rng.uniform_in(0.5, 1.5)).collect();
    let snr_db = rng.uniform_in(0.0, 20.0);
    let cfg = SystemConfig::with_weights(antennas, users, snr_db, alpha).expect("valid config");
    let h = CMat::random_normal(users, antennas, rng);
    let v = CMat::random_normal(users, antennas, rng);
    let u = (0..users).map(|_| rng.complex_normal()).collect();
    let w = (0..users).map(|_| rng.uniform_in(0.5, 2.0)).collect();
    (cfg, h, SolverState { v, u, w, outer_step: 0 })
}

fn block_coords(state: &SolverState, block: Block) -> Vec<f64> {
    match block {
        Block::U => cvec_to_coords(&state.u),
        Block::W => state.w.clone(),
        Block::V => state.v.to_coords().to_vec(),
    }
}

fn with_block(state: &SolverState, block: Block, coords: &[f64]) -> SolverState {
    let mut s = state.clone();
    match block {
        Block::U => s.u = cvec_from_coords(coords).expect("even length"),
        Block::W => s.w = coords.to_vec(),
        Block::V => s.v = CMat::from_coords(state.v.rows(), state.v.cols(), coords).expect("shape"),
    }
    s
}

/// Closed-form block gradients of the global loss against central
/// differences (step 10⁻⁶) at `points` random points, M = N = 4.
pub fn check_subproblem_gradients(points: usize, seed: u64) -> Vec<GradcheckReport> {
    let mut rng = GaussianStream::new(seed, 101);
    let mut trackers: Vec<(Block, Tracker)> = [Block::U, Block::W, Block::V]
        .into_iter()
        .map(|b| (b, Tracker::new(format!("subproblem grad {b:?}"), SUBPROBLEM_TOL)))
        .collect();
    for _ in 0..points {
        let (cfg, h, state) = random_point(&mut rng, 4, 4);
        let mu = rng.uniform_in(0.0, 1.0);
        for (block, tracker) in &mut trackers {
            let analytic = grad_subproblem(&state, &h, &cfg, mu, *block).expect("valid point");
            let x = block_coords(&state, *block);
            let mut f = |c: &[f64]| global_loss(&with_block(&state, *block, c), &h, &cfg, mu).expect("valid point");
            for (k, a) in analytic.iter().enumerate() {
                tracker.record(*a, central_difference(&x, k, 1e-6, &mut f));
            }
        }
    }
    trackers.into_iter().map(|(_, t)| t.finish()).collect()
}

/// Gradient of `scalar_fn(input)` on a tape versus central differences on
/// every input coordinate.
fn check_tape_function(
    tracker: &mut Tracker,
    x0: &Array2<f64>,
    step: f64,
    scalar_fn: &dyn Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.variable(x0.clone());
    let y = scalar_fn(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).cloned().unwrap_or_else(|| Array2::zeros(x0.dim()));
    let flat: Vec<f64> = x0.iter().copied().collect();
    let mut eval = |c: &[f64]| {
        let mut t = Tape::new();
        let xv = t.constant(Array2::from_shape_vec(x0.dim(), c.to_vec()).expect("shape"));
        let y = scalar_fn(&mut t, xv).expect("same inputs as the analytic pass");
        t.scalar(y)
    };
    for (k, a) in analytic.iter().enumerate() {
        tracker.record(*a, central_difference(&flat, k, step, &mut eval));
    }
    Ok(())
}

/// Distinct positive weights per entry, so every output coordinate matters.
fn weighted_total(t: &mut Tape, y: Var) -> Result<Var> {
    let dim = t.value(y).dim();
    let weights = Array2::from_shape_fn(dim, |(i, j)| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64);
    let w = t.constant(weights);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Every elementary tape operation at random points.
pub fn check_elementary_ops(seed: u64) -> Result<GradcheckReport> {
    let mut rng = GaussianStream::new(seed, 102);
    let mut tr = Tracker::new("elementary ops", COMPOSITE_TOL);
    let rand = |rng: &mut GaussianStream, r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.standard_normal());
    let x0 = rand(&mut rng, 3, 4);
    let pos = x0.mapv(|a| a.abs() + 0.5);
    let other = rand(&mut rng, 3, 4);
    let right = rand(&mut rng, 4, 2);
    let row = rand(&mut rng, 1, 4);
    let col = rand(&mut rng, 3, 1);
    let scalar = rand(&mut rng, 1, 1);

    type F<'a> = Box<dyn Fn(&mut Tape, Var) -> Result<Var> + 'a>;
    let unary: Vec<F> = vec![
        Box::new(|t, x| { let y = t.square(x); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.sigmoid(x); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.tanh(x); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.scale(x, -1.5); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.add_const(x, 2.0); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.mean(x); let z = t.square(y); Ok(t.sum(z)) }),
        Box::new(|t, x| { let y = t.transpose(x); weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.reshape(x, 2, 6)?; weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.slice(x, 1, 3)?; weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.clamp_min(x, 0.05); weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(other.clone()); let y = t.add(x, c)?; weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(other.clone()); let y = t.sub(c, x)?; weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(other.clone()); let y = t.mul(x, c)?; weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.mul(x, x)?; weighted_total(t, y) }),
        Box::new(|t, x| { let b = t.constant(right.clone()); let y = t.matmul(x, b)?; weighted_total(t, y) }),
        Box::new(|t, x| { let b = t.constant(row.clone()); let y = t.add_row(x, b)?; weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(scalar.clone()); let y = t.mul_scalar(x, c)?; weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(col.clone()); let y = t.scale_rows(x, c)?; weighted_total(t, y) }),
        Box::new(|t, x| { let c = t.constant(other.clone()); let y = t.concat(&[c, x])?; weighted_total(t, y) }),
        Box::new(|t, x| { let s = t.sum(x); Ok(s) }),
    ];
    for f in &unary {
        check_tape_function(&mut tr, &x0, 1e-6, f.as_ref())?;
    }
    let positive: Vec<F> = vec![
        Box::new(|t, x| { let y = t.reciprocal(x)?; weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.log2(x)?; weighted_total(t, y) }),
        Box::new(|t, x| { let y = t.sqrt(x)?; weighted_total(t, y) }),
    ];
    for f in &positive {
        check_tape_function(&mut tr, &pos, 1e-6, f.as_ref())?;
    }
    // Second operands.
    check_tape_function(&mut tr, &right, 1e-6, &|t, b| {
        let a = t.constant(x0.clone());
        let y = t.matmul(a, b)?;
        weighted_total(t, y)
    })?;
    check_tape_function(&mut tr, &row, 1e-6, &|t, b| {
        let a = t.constant(x0.clone());
        let y = t.add_row(a, b)?;
        weighted_total(t, y)
    })?;
    check_tape_function(&mut tr, &scalar, 1e-6, &|t, c| {
        let a = t.constant(x0.clone());
        let y = t.mul_scalar(a, c)?;
        weighted_total(t, y)
    })?;
    check_tape_function(&mut tr, &col, 1e-6, &|t, c| {
        let a = t.constant(x0.clone());
        let y = t.scale_rows(a, c)?;
        weighted_total(t, y)
    })?;
    Ok(tr.finish())
}

/// One LSTM step: gradients with respect to every parameter tensor and to
/// the input, through a weighted sum of the update and the new states.
pub fn check_lstm_cell(seed: u64) -> Result<GradcheckReport> {
    let mut tr = Tracker::new("composite: LSTM cell", COMPOSITE_TOL);
    let mut rng = GaussianStream::new(seed, 103);
    let n_coords = 3;
    let hidden = 5;
    let mut learner = MetaLearner::new(n_coords, hidden, 0.7, &mut rng);
    for p in learner.params_mut() {
        p.value.mapv_inplace(|_| 0.0);
    }
    for p in learner.params_mut() {
        let dim = p.value.dim();
        p.value = Array2::from_shape_simple_fn(dim, || 0.5 * rng.standard_normal());
    }
    for l in 0..2 {
        learner.state.hidden[l] = Array2::from_shape_simple_fn((n_coords, hidden), || 0.5 * rng.standard_normal());
        learner.state.cell[l] = Array2::from_shape_simple_fn((n_coords, hidden), || rng.standard_normal());
    }
    let input = Array2::from_shape_simple_fn((n_coords, 1), || rng.standard_normal());

    let objective = |t: &mut Tape, m: &MetaLearner, input: Var| -> Result<Var> {
        let mut bound = m.bind(t);
        // Two steps so the recurrent path is exercised.
        let d1 = bound.step(t, input)?;
        let d2 = bound.step(t, d1)?;
        let mut total = weighted_total(t, d2)?;
        for l in 0..2 {
            let h = weighted_total(t, bound.hidden_state(l))?;
            let c = weighted_total(t, bound.cell_state(l))?;
            total = t.add(total, h)?;
            total = t.add(total, c)?;
        }
        Ok(total)
    };

    check_tape_function(&mut tr, &input, 1e-6, &|t, x| objective(t, &learner, x))?;

    // Parameter gradients.
    let n_params = learner.params().len();
    for which in 0..n_params {
        let p0 = learner.params()[which].value.clone();
        let check = |t: &mut Tape, pv: Var| -> Result<Var> {
            let mut m = learner.clone();
            let pval = t.value(pv).clone();
            m.params_mut()[which].value = pval;
            // Re-bind with the parameter replaced by `pv` itself.
            let mut bound = m.bind(t);
            bound_replace(&mut bound, which, pv);
            let x = t.constant(input.clone());
            let d1 = bound.step(t, x)?;
            let d2 = bound.step(t, d1)?;
            weighted_total(t, d2)
        };
        check_tape_function(&mut tr, &p0, 1e-6, &check)?;
    }
    Ok(tr.finish())
}

fn bound_replace(bound: &mut crate::meta::BoundLearner, which: usize, var: Var) {
    bound.replace_param(which, var);
}

/// Frobenius projection, both branches.
pub fn check_projection(seed: u64) -> Result<GradcheckReport> {
    let mut tr = Tracker::new("composite: power projection", COMPOSITE_TOL);
    let mut rng = GaussianStream::new(seed, 104);
    for k in 0..20 {
        let x0 = Array2::from_shape_simple_fn((16, 1), || rng.standard_normal());
        let norm_sq: f64 = x0.iter().map(|a| a * a).sum();
        // Alternate between the scaling branch and the identity branch.
        let power = if k % 2 == 0 { 0.3 * norm_sq } else { 2.0 * norm_sq };
        check_tape_function(&mut tr, &x0, 1e-6, &|t, x| {
            let y = project_on_tape(t, x, power)?;
            weighted_total(t, y)
        })?;
    }
    Ok(tr.finish())
}

/// The global loss on the tape with respect to all three blocks.
pub fn check_global_loss(points: usize, seed: u64) -> Result<GradcheckReport> {
    let mut tr = Tracker::new("composite: global loss", COMPOSITE_TOL);
    let mut rng = GaussianStream::new(seed, 105);
    for _ in 0..points {
        let (cfg, h, state) = random_point(&mut rng, 3, 3);
        let mu = rng.uniform_in(0.0, 1.0);
        let (n, m) = (cfg.users(), cfg.antennas());
        let packed: Vec<f64> = cvec_to_coords(&state.u)
            .into_iter()
            .chain(state.w.iter().copied())
            .chain(state.v.to_coords().iter().copied())
            .collect();
        let x0 = Array2::from_shape_vec((packed.len(), 1), packed).expect("column");
        check_tape_function(&mut tr, &x0, 1e-6, &|t, x| {
            let g = ProblemGraph::new(t, &h, &cfg, mu);
            let all = t.transpose(x);
            let u = t.slice(all, 0, 2 * n)?;
            let u = t.transpose(u);
            let w = t.slice(all, 2 * n, 3 * n)?;
            let w = t.transpose(w);
            let v = t.slice(all, 3 * n, 3 * n + 2 * n * m)?;
            let v = t.transpose(v);
            g.loss(t, u, w, v)
        })?;
    }
    Ok(tr.finish())
}

/// Miniature solver setup with nonzero output heads so every parameter
/// influences the loss.
pub fn miniature_solver(seed: u64, detach: bool) -> Result<MlbfSolver> {
    let cfg = SystemConfig::from_snr_db(2, 2, 10.0)?;
    let mcfg = MlbfConfig {
        outer_steps: 4,
        update_interval: 2,
        inner_u: 3,
        inner_w: 3,
        inner_v: 3,
        hidden: 8,
        lr_u: 1e-3,
        lr_w: 1e-3,
        lr_v: 1e-3,
        detach_grad_inputs: detach,
        ..MlbfConfig::default()
    };
    let mut rng = GaussianStream::new(seed, 106);
    let h = CMat::random_normal(2, 2, &mut rng);
    let v0 = crate::channel::scale_to_power(&CMat::random_normal(2, 2, &mut rng), 0.5 * cfg.power());
    let mut learners = Learners::new(&cfg, &mcfg, seed);
    for learner in [&mut learners.u, &mut learners.w, &mut learners.v] {
        let dim = learner.head_weight.value.dim();
        learner.head_weight.value = Array2::from_shape_simple_fn(dim, || 0.05 * rng.standard_normal());
        learner.head_bias.value.fill(0.01);
    }
    MlbfSolver::with_learners(&h, &v0, &cfg, &mcfg, learners)
}

/// Window loss as a function of one learner's parameter tensor.
fn window_loss(solver: &MlbfSolver) -> Result<f64> {
    let mut s = solver.clone();
    let mut win = s.begin_window();
    for _ in 0..2 {
        s.outer_step(&mut win)?;
    }
    Ok(win.loss_values().iter().sum::<f64>() / 2.0)
}

/// End-to-end meta-gradient of a window loss (M = N = 2, hidden 8, t_u = 2)
/// against central differences with step 10⁻⁵, with the LSTM gradient
/// inputs kept on the tape so the analytic gradient is the full derivative.
pub fn check_window_meta_gradient(seed: u64, coords_per_tensor: usize) -> Result<GradcheckReport> {
    let mut tr = Tracker::new("end-to-end window meta-gradient", WINDOW_TOL);
    let solver = miniature_solver(seed, false)?;
    let mut probe = solver.clone();
    let report = probe.run_window()?;
    let mut rng = GaussianStream::new(seed, 107);
    let mut idx = 0;
    for block in [Block::U, Block::W, Block::V] {
        let n_params = solver.learners.get(block).params().len();
        for which in 0..n_params {
            let analytic = &report.grads[idx];
            idx += 1;
            let len = analytic.len();
            for _ in 0..coords_per_tensor {
                let k = (rng.uniform() * len as f64) as usize % len;
                let step = 1e-5;
                let eval = |delta: f64| -> Result<f64> {
                    let mut s = solver.clone();
                    let p: &mut Parameter = s.learners.get_mut(block).params_mut().swap_remove(which);
                    let cols = p.value.ncols();
                    p.value[[k / cols, k % cols]] += delta;
                    window_loss(&s)
                };
                let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
                let a = analytic.iter().nth(k).copied().expect("in range");
                tr.record(a, numeric);
            }
        }
    }
    Ok(tr.finish())
}

/// Every suite, in order.
pub fn run_all(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut out = check_subproblem_gradients(100, seed);
    out.push(check_elementary_ops(seed)?);
    out.push(check_lstm_cell(seed)?);
    out.push(check_projection(seed)?);
    out.push(check_global_loss(20, seed)?);
    out.push(check_window_meta_gradient(seed, 3)?);
    Ok(out)
}
