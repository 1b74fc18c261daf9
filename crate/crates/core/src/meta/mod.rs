//! Meta-learning beamformer (MLBF).
//!
//! Each outer step runs three inner loops, one per variable block, in the
//! order `u`, `w`, `V`. Inside a loop the block moves by
//! `x ← x + m(∇f(x))`, where `m` is that block's coordinatewise LSTM and
//! `∇f` the block gradient of the global loss with the other blocks frozen.
//! Every `t_u` outer steps the averaged, weighted global loss of the window is
//! backpropagated through the unrolled window and the three LSTMs take one
//! Adam step each. Values and LSTM states carry over between windows with
//! their gradient history cut.
//!
//! The LSTMs start from a fresh initialization for every problem instance;
//! training happens inside the solve.

pub mod graph;
pub mod lstm;

use ndarray::Array2;

use crate::autodiff::{adam_step, AdamConfig, Tape, Var};
use crate::channel::{grad_subproblem, weighted_sum_rate, Block, SolverState, SystemConfig};
use crate::cmat::{cvec_from_coords, cvec_to_coords, CMat};
use crate::error::{check_finite, Error, Result};
use crate::rng::{derive_stream, streams, GaussianStream};
use crate::wmmse::Trajectory;

pub use graph::ProblemGraph;
pub use lstm::{lstm_update, BoundLearner, LstmState, MetaLearner};

/// Where the power projection is applied during the `V` inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// After every inner `V` step.
    #[default]
    EveryInnerStep,
    /// Once, after the `V` inner loop finishes.
    AfterInnerLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlbfConfig {
    /// Outer steps T.
    pub outer_steps: usize,
    /// Inner steps for `u` (I), `w` (J) and `V` (K).
    pub inner_u: usize,
    pub inner_w: usize,
    pub inner_v: usize,
    /// Update interval t_u: outer steps per meta-update window.
    pub update_interval: usize,
    /// Per-outer-step loss weights ω_t; `None` means all ones.
    pub omega: Option<Vec<f64>>,
    pub lr_v: f64,
    pub lr_u: f64,
    pub lr_w: f64,
    pub hidden: usize,
    /// Penalty coefficient μ in the global loss.
    pub mu: f64,
    /// Lower clamp applied to `w` after every inner step.
    pub w_floor: f64,
    /// Multiplier on the LSTM output.
    pub out_scale: f64,
    pub projection: ProjectionMode,
    /// Feed the LSTMs detached block gradients (first-order meta-gradient).
    /// When false, the gradient inputs stay on the tape and the
    /// meta-gradient includes their second-order contribution.
    pub detach_grad_inputs: bool,
}

impl Default for MlbfConfig {
    fn default() -> Self {
        Self {
            outer_steps: 500,
            inner_u: 10,
            inner_w: 10,
            inner_v: 10,
            update_interval: 5,
            omega: None,
            lr_v: 1e-4,
            lr_u: 1e-4,
            lr_w: 1e-4,
            hidden: 200,
            mu: 0.0,
            w_floor: 1e-6,
            out_scale: 1.0,
            projection: ProjectionMode::EveryInnerStep,
            detach_grad_inputs: true,
        }
    }
}

impl MlbfConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("outer_steps", self.outer_steps),
            ("inner_u", self.inner_u),
            ("inner_w", self.inner_w),
            ("inner_v", self.inner_v),
            ("update_interval", self.update_interval),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.outer_steps % self.update_interval != 0 {
            return Err(Error::Config(format!(
                "outer_steps ({}) must be a multiple of update_interval ({})",
                self.outer_steps, self.update_interval
            )));
        }
        if let Some(omega) = &self.omega {
            if omega.len() != self.outer_steps {
                return Err(Error::Config(format!(
                    "omega has {} entries, expected {}",
                    omega.len(),
                    self.outer_steps
                )));
            }
            if omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Config("omega entries must be nonnegative".into()));
            }
        }
        for (name, lr) in [("lr_v", self.lr_v), ("lr_u", self.lr_u), ("lr_w", self.lr_w)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {lr}")));
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if !(self.w_floor > 0.0) {
            return Err(Error::Config(format!("w_floor must be positive, got {}", self.w_floor)));
        }
        if !self.out_scale.is_finite() {
            return Err(Error::Config("out_scale must be finite".into()));
        }
        Ok(())
    }

    /// ω for outer step `t` (1-based).
    pub fn weight(&self, t: usize) -> f64 {
        self.omega.as_ref().map_or(1.0, |w| w[t - 1])
    }

    pub fn windows(&self) -> usize {
        self.outer_steps / self.update_interval
    }

    fn steps(&self, block: Block) -> usize {
        match block {
            Block::U => self.inner_u,
            Block::W => self.inner_w,
            Block::V => self.inner_v,
        }
    }

    fn lr(&self, block: Block) -> f64 {
        match block {
            Block::U => self.lr_u,
            Block::W => self.lr_w,
            Block::V => self.lr_v,
        }
    }
}

/// One LSTM per variable block, with disjoint parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Learners {
    pub u: MetaLearner,
    pub w: MetaLearner,
    pub v: MetaLearner,
}

const BLOCKS: [Block; 3] = [Block::U, Block::W, Block::V];

impl Learners {
    pub fn new(cfg: &SystemConfig, mcfg: &MlbfConfig, seed: u64) -> Self {
        let (n, m) = (cfg.users(), cfg.antennas());
        let make = |block: Block, tag: u64| {
            let mut rng = GaussianStream::new(seed, derive_stream(streams::THETA, &[tag]));
            MetaLearner::new(block.coords(n, m), mcfg.hidden, mcfg.out_scale, &mut rng)
        };
        Self {
            u: make(Block::U, 0),
            w: make(Block::W, 1),
            v: make(Block::V, 2),
        }
    }

    /// All-zero parameters.
    pub fn zeroed(cfg: &SystemConfig, mcfg: &MlbfConfig) -> Self {
        let (n, m) = (cfg.users(), cfg.antennas());
        let make = |block: Block| MetaLearner::zeroed(block.coords(n, m), mcfg.hidden, mcfg.out_scale);
        Self {
            u: make(Block::U),
            w: make(Block::W),
            v: make(Block::V),
        }
    }

    pub fn get(&self, block: Block) -> &MetaLearner {
        match block {
            Block::U => &self.u,
            Block::W => &self.w,
            Block::V => &self.v,
        }
    }

    pub fn get_mut(&mut self, block: Block) -> &mut MetaLearner {
        match block {
            Block::U => &mut self.u,
            Block::W => &mut self.w,
            Block::V => &mut self.v,
        }
    }
}

fn block_index(block: Block) -> usize {
    match block {
        Block::U => 0,
        Block::W => 1,
        Block::V => 2,
    }
}

/// The unrolled graph of one meta-update window.
#[derive(Debug)]
pub struct Window {
    pub tape: Tape,
    graph: ProblemGraph,
    bound: [BoundLearner; 3],
    u: Var,
    w: Var,
    v: Var,
    /// `(F_t node, ω_t)` for each outer step of the window.
    losses: Vec<(Var, f64)>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn loss_values(&self) -> Vec<f64> {
        self.losses.iter().map(|(f, _)| self.tape.scalar(*f)).collect()
    }

    fn var(&self, block: Block) -> Var {
        match block {
            Block::U => self.u,
            Block::W => self.w,
            Block::V => self.v,
        }
    }

    fn set_var(&mut self, block: Block, x: Var) {
        match block {
            Block::U => self.u = x,
            Block::W => self.w = x,
            Block::V => self.v = x,
        }
    }
}

/// Result of a meta-update.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    /// The accumulated loss `(1/t_u) Σ ω_t F_t`.
    pub loss: f64,
    /// θ-gradients in the order u, w, V; within a learner, the order of
    /// [`MetaLearner::params`].
    pub grads: Vec<Array2<f64>>,
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column")
}

/// In-progress MLBF solve for one channel.
#[derive(Debug, Clone)]
pub struct MlbfSolver {
    h: CMat,
    cfg: SystemConfig,
    mcfg: MlbfConfig,
    pub learners: Learners,
    u: Array2<f64>,
    w: Array2<f64>,
    v: Array2<f64>,
    outer_step: usize,
    trajectory: Trajectory,
    best: (f64, SolverState),
}

impl MlbfSolver {
    /// Fresh learners from `seed`; `u₀`, `w₀` are the closed-form MMSE
    /// receiver and weights for `v0`.
    pub fn new(h: &CMat, v0: &CMat, cfg: &SystemConfig, mcfg: &MlbfConfig, seed: u64) -> Result<Self> {
        let learners = Learners::new(cfg, mcfg, seed);
        Self::with_learners(h, v0, cfg, mcfg, learners)
    }

    pub fn with_learners(
        h: &CMat,
        v0: &CMat,
        cfg: &SystemConfig,
        mcfg: &MlbfConfig,
        learners: Learners,
    ) -> Result<Self> {
        mcfg.validate()?;
        cfg.check_shapes("solve_mlbf", h, v0)?;
        if v0.power() > cfg.power() {
            return Err(Error::Precondition(format!(
                "initial beamformer power {} exceeds P = {}",
                v0.power(),
                cfg.power()
            )));
        }
        let state = SolverState::consistent(h, v0.clone(), cfg.sigma2())?;
        let wsr0 = weighted_sum_rate(h, v0, cfg)?;
        let mut w0 = state.w.clone();
        for w in &mut w0 {
            *w = w.max(mcfg.w_floor);
        }
        Ok(Self {
            h: h.clone(),
            cfg: cfg.clone(),
            mcfg: mcfg.clone(),
            learners,
            u: column(&cvec_to_coords(&state.u)),
            w: column(&w0),
            v: column(v0.to_coords().as_slice().expect("contiguous")),
            outer_step: 0,
            trajectory: Trajectory::default(),
            best: (wsr0, state),
        })
    }

    pub fn outer_step_count(&self) -> usize {
        self.outer_step
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// Current iterate.
    pub fn state(&self) -> Result<SolverState> {
        self.state_from(&self.u, &self.w, &self.v)
    }

    fn state_from(&self, u: &Array2<f64>, w: &Array2<f64>, v: &Array2<f64>) -> Result<SolverState> {
        let u: Vec<f64> = u.iter().copied().collect();
        let v: Vec<f64> = v.iter().copied().collect();
        Ok(SolverState {
            v: CMat::from_coords(self.cfg.users(), self.cfg.antennas(), &v)?,
            u: cvec_from_coords(&u)?,
            w: w.iter().copied().collect(),
            outer_step: self.outer_step,
        })
    }

    /// Starts a window: learner parameters become gradient-carrying leaves;
    /// variables and LSTM states enter detached.
    pub fn begin_window(&self) -> Window {
        let mut tape = Tape::new();
        let graph = ProblemGraph::new(&mut tape, &self.h, &self.cfg, self.mcfg.mu);
        let bound = BLOCKS.map(|b| self.learners.get(b).bind(&mut tape));
        let u = tape.constant(self.u.clone());
        let w = tape.constant(self.w.clone());
        let v = tape.constant(self.v.clone());
        Window {
            tape,
            graph,
            bound,
            u,
            w,
            v,
            losses: Vec::new(),
        }
    }

    fn window_state(&self, win: &Window) -> Result<SolverState> {
        self.state_from(win.tape.value(win.u), win.tape.value(win.w), win.tape.value(win.v))
    }

    /// Gradient input for the block's LSTM at the window's current point.
    fn grad_input(&self, win: &mut Window, block: Block) -> Result<Var> {
        let grad = if self.mcfg.detach_grad_inputs {
            let state = self.window_state(win)?;
            let g = grad_subproblem(&state, &self.h, &self.cfg, self.mcfg.mu, block)?;
            check_finite("block gradient", &g)?;
            win.tape.constant(column(&g))
        } else {
            let g = win.graph.block_grad(&mut win.tape, block, win.u, win.w, win.v)?;
            check_finite("block gradient", win.tape.value(g).iter())?;
            g
        };
        Ok(grad)
    }

    /// Runs `steps` learned updates of one block with the others frozen.
    pub fn inner_loop(&self, win: &mut Window, block: Block, steps: usize) -> Result<()> {
        let idx = block_index(block);
        for _ in 0..steps {
            let input = self.grad_input(win, block)?;
            let delta = win.bound[idx].step(&mut win.tape, input)?;
            check_finite("learned update", win.tape.value(delta).iter())?;
            let x = win.tape.add(win.var(block), delta)?;
            let x = match block {
                Block::W => win.tape.clamp_min(x, self.mcfg.w_floor),
                Block::V if self.mcfg.projection == ProjectionMode::EveryInnerStep => {
                    win.graph.project(&mut win.tape, x)?
                }
                _ => x,
            };
            win.set_var(block, x);
        }
        if block == Block::V && self.mcfg.projection == ProjectionMode::AfterInnerLoop {
            let v = win.graph.project(&mut win.tape, win.v)?;
            win.v = v;
        }
        Ok(())
    }

    /// One outer step: inner loops for `u`, `w`, `V`, then the global loss.
    /// Records WSR, loss and power in the trajectory.
    pub fn outer_step(&mut self, win: &mut Window) -> Result<Var> {
        for block in BLOCKS {
            self.inner_loop(win, block, self.mcfg.steps(block))?;
        }
        self.outer_step += 1;
        let f = win.graph.loss(&mut win.tape, win.u, win.w, win.v)?;
        let f_value = win.tape.scalar(f);
        if !f_value.is_finite() {
            return Err(Error::Numeric {
                location: "global loss",
                index: self.outer_step,
                value: f_value,
            });
        }
        win.losses.push((f, self.mcfg.weight(self.outer_step)));

        let mut state = self.window_state(win)?;
        state.outer_step = self.outer_step;
        let wsr = weighted_sum_rate(&self.h, &state.v, &self.cfg)?;
        self.trajectory.push(wsr, state.v.power(), f_value);
        if wsr > self.best.0 {
            self.best = (wsr, state);
        }
        Ok(f)
    }

    /// Backpropagates `(1/t_u) Σ ω_t F_t` through the window, takes one Adam
    /// step per learner, and carries values and LSTM states forward detached.
    pub fn window_update(&mut self, mut win: Window) -> Result<WindowReport> {
        let t_u = self.mcfg.update_interval;
        if win.losses.len() != t_u {
            return Err(Error::State(format!(
                "window holds {} losses, expected {t_u}",
                win.losses.len()
            )));
        }
        let tape = &mut win.tape;
        let mut acc: Option<Var> = None;
        for &(f, omega) in &win.losses {
            let term = tape.scale(f, omega);
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let loss = tape.scale(acc.expect("t_u >= 1"), 1.0 / t_u as f64);
        tape.backward(loss)?;

        let mut grads = Vec::new();
        for block in BLOCKS {
            let bound = &win.bound[block_index(block)];
            let learner = self.learners.get_mut(block);
            learner.collect_grads(&win.tape, bound)?;
            let adam = AdamConfig::with_lr(self.mcfg.lr(block));
            for p in learner.params_mut() {
                grads.push(p.grad.clone().expect("collected above"));
                adam_step(p, &adam)?;
                p.zero_grad();
            }
            learner.store_state(&win.tape, bound);
        }
        self.u = win.tape.value(win.u).clone();
        self.w = win.tape.value(win.w).clone();
        self.v = win.tape.value(win.v).clone();
        Ok(WindowReport {
            loss: win.tape.scalar(loss),
            grads,
        })
    }

    /// Runs one full window of `t_u` outer steps plus the meta-update.
    pub fn run_window(&mut self) -> Result<WindowReport> {
        let mut win = self.begin_window();
        for _ in 0..self.mcfg.update_interval {
            self.outer_step(&mut win)?;
        }
        self.window_update(win)
    }

    /// Runs all remaining windows; returns the best state seen (including
    /// the start) and the per-outer-step trajectory.
    pub fn run(mut self) -> Result<(SolverState, Trajectory)> {
        while self.outer_step < self.mcfg.outer_steps {
            self.run_window()?;
        }
        self.trajectory.converged = true;
        Ok((self.best.1, self.trajectory))
    }

    pub fn best_wsr(&self) -> f64 {
        self.best.0
    }
}

/// Solves one instance with freshly initialized learners.
pub fn solve_mlbf(
    h: &CMat,
    v0: &CMat,
    cfg: &SystemConfig,
    mcfg: &MlbfConfig,
    seed: u64,
) -> Result<(SolverState, Trajectory)> {
    MlbfSolver::new(h, v0, cfg, mcfg, seed)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{global_loss, scale_to_power};
    use crate::gradcheck::{miniature_solver, rel_err};

    fn instance(seed: u64, m: usize, n: usize, snr_db: f64) -> (SystemConfig, CMat, CMat) {
        let cfg = SystemConfig::from_snr_db(m, n, snr_db).unwrap();
        let mut rng = GaussianStream::new(seed, 9);
        let h = CMat::random_normal(n, m, &mut rng);
        let v0 = scale_to_power(&CMat::random_normal(n, m, &mut rng), cfg.power());
        (cfg, h, v0)
    }

    fn small(outer_steps: usize, hidden: usize) -> MlbfConfig {
        MlbfConfig {
            outer_steps,
            hidden,
            ..MlbfConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = MlbfConfig::default();
        assert_eq!((c.outer_steps, c.inner_u, c.inner_w, c.inner_v), (500, 10, 10, 10));
        assert_eq!((c.update_interval, c.hidden), (5, 200));
        assert_eq!((c.lr_u, c.lr_w, c.lr_v), (1e-4, 1e-4, 1e-4));
        assert_eq!(c.projection, ProjectionMode::EveryInnerStep);
        assert!(c.detach_grad_inputs);
        assert_eq!(c.windows(), 100);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            MlbfConfig { outer_steps: 12, ..small(10, 4) },
            MlbfConfig { hidden: 0, ..small(10, 4) },
            MlbfConfig { update_interval: 0, ..small(10, 4) },
            MlbfConfig { omega: Some(vec![1.0; 3]), ..small(10, 4) },
            MlbfConfig { omega: Some(vec![-1.0; 10]), ..small(10, 4) },
            MlbfConfig { lr_u: -1.0, ..small(10, 4) },
            MlbfConfig { w_floor: 0.0, ..small(10, 4) },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn zero_learners_leave_variables_unchanged() {
        let (cfg, h, v0) = instance(1, 3, 3, 10.0);
        let mcfg = MlbfConfig { lr_u: 0.0, lr_w: 0.0, lr_v: 0.0, ..small(20, 6) };
        let learners = Learners::zeroed(&cfg, &mcfg);
        let mut solver = MlbfSolver::with_learners(&h, &v0, &cfg, &mcfg, learners).unwrap();
        let start = solver.state().unwrap();
        let f0 = global_loss(&start, &h, &cfg, 0.0).unwrap();
        for _ in 0..mcfg.windows() {
            let report = solver.run_window().unwrap();
            assert!((report.loss - f0).abs() < 1e-12);
        }
        let end = solver.state().unwrap();
        assert_eq!(end.v, start.v);
        assert_eq!(end.u, start.u);
        assert_eq!(end.w, start.w);
        let traj = solver.trajectory();
        assert_eq!(traj.wsr.len(), 20);
        assert!(traj.objective.iter().all(|f| (f - f0).abs() < 1e-12));
    }

    #[test]
    fn weights_never_drop_below_floor() {
        let (cfg, h, v0) = instance(2, 2, 2, 10.0);
        let mcfg = small(5, 4);
        let mut learners = Learners::zeroed(&cfg, &mcfg);
        learners.w.head_bias.value.fill(-50.0);
        let mut solver = MlbfSolver::with_learners(&h, &v0, &cfg, &mcfg, learners).unwrap();
        let mut win = solver.begin_window();
        solver.inner_loop(&mut win, Block::W, 3).unwrap();
        let w = win.tape.value(win.w);
        assert!(w.iter().all(|x| *x == mcfg.w_floor));
        solver.outer_step(&mut win).unwrap();
    }

    #[test]
    fn meta_gradient_reaches_every_learner() {
        let (cfg, h, v0) = instance(3, 3, 2, 10.0);
        let mut solver = MlbfSolver::new(&h, &v0, &cfg, &small(10, 6), 3).unwrap();
        let report = solver.run_window().unwrap();
        assert_eq!(report.grads.len(), 18);
        // The head weights of each learner (index 4 within a learner) see the
        // loss even though the head starts at zero.
        for learner in 0..3 {
            let g = &report.grads[learner * 6 + 4];
            assert!(g.iter().any(|x| *x != 0.0), "learner {learner}");
        }
    }

    #[test]
    fn zero_omega_freezes_parameters_but_counts_steps() {
        let (cfg, h, v0) = instance(4, 2, 2, 10.0);
        let mcfg = MlbfConfig { omega: Some(vec![0.0; 10]), ..small(10, 4) };
        let mut solver = MlbfSolver::new(&h, &v0, &cfg, &mcfg, 4).unwrap();
        let before = solver.learners.clone();
        solver.run_window().unwrap();
        for block in BLOCKS {
            for (a, b) in solver.learners.get(block).params().iter().zip(before.get(block).params()) {
                assert_eq!(a.value, b.value);
                assert_eq!(a.adam.step, b.adam.step + 1);
            }
        }
        assert_eq!(solver.outer_step_count(), 5);
    }

    #[test]
    fn wrong_window_length_is_an_error() {
        let (cfg, h, v0) = instance(5, 2, 2, 10.0);
        let mut solver = MlbfSolver::new(&h, &v0, &cfg, &small(10, 4), 5).unwrap();
        let mut win = solver.begin_window();
        solver.outer_step(&mut win).unwrap();
        assert!(matches!(solver.window_update(win), Err(Error::State(_))));
    }

    #[test]
    fn detaching_keeps_forward_values_and_changes_gradients() {
        let mut a = miniature_solver(11, true).unwrap();
        let mut b = miniature_solver(11, false).unwrap();
        let ra = a.run_window().unwrap();
        let rb = b.run_window().unwrap();
        assert!(rel_err(ra.loss, rb.loss) < 1e-12);
        assert_eq!(a.trajectory().wsr.len(), b.trajectory().wsr.len());
        for (x, y) in a.trajectory().wsr.iter().zip(&b.trajectory().wsr) {
            assert!((x - y).abs() < 1e-10);
        }
        let differs = ra.grads.iter().zip(&rb.grads).any(|(ga, gb)| {
            ga.iter().zip(gb).any(|(x, y)| rel_err(*x, *y) > 1e-6)
        });
        assert!(differs);
    }

    #[test]
    fn carried_state_is_outside_the_next_window_graph() {
        // After one window, the next window's meta-gradient must match a
        // finite difference that perturbs θ while holding the carried-over
        // variables and LSTM states fixed.
        let mut solver = miniature_solver(12, false).unwrap();
        solver.run_window().unwrap();
        let mut probe = solver.clone();
        let report = probe.run_window().unwrap();
        let step = 1e-5;
        for (idx, block) in BLOCKS.iter().enumerate() {
            for which in [0, 3, 4] {
                let eval = |delta: f64| {
                    let mut s = solver.clone();
                    s.learners.get_mut(*block).params_mut()[which].value[[0, 0]] += delta;
                    let mut win = s.begin_window();
                    for _ in 0..2 {
                        s.outer_step(&mut win).unwrap();
                    }
                    win.loss_values().iter().sum::<f64>() / 2.0
                };
                let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                let analytic = report.grads[idx * 6 + which][[0, 0]];
                assert!(rel_err(analytic, numeric) < 1e-3, "{block:?}/{which}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (cfg, h, v0) = instance(6, 2, 2, 10.0);
        let mcfg = small(10, 6);
        let (sa, ta) = solve_mlbf(&h, &v0, &cfg, &mcfg, 8).unwrap();
        let (sb, tb) = solve_mlbf(&h, &v0, &cfg, &mcfg, 8).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(sa, sb);
        let (_, tc) = solve_mlbf(&h, &v0, &cfg, &mcfg, 9).unwrap();
        assert_ne!(ta.wsr, tc.wsr);
    }

    #[test]
    fn miniature_run_is_feasible_and_never_worse_than_start() {
        let (cfg, h, v0) = instance(7, 2, 2, 10.0);
        let wsr0 = weighted_sum_rate(&h, &v0, &cfg).unwrap();
        for projection in [ProjectionMode::EveryInnerStep, ProjectionMode::AfterInnerLoop] {
            let mcfg = MlbfConfig { projection, ..small(50, 16) };
            let (best, traj) = solve_mlbf(&h, &v0, &cfg, &mcfg, 7).unwrap();
            assert_eq!(traj.wsr.len(), 50);
            assert!(traj.power.iter().all(|p| *p <= cfg.power() * (1.0 + 1e-9)));
            assert!(best.v.power() <= cfg.power() * (1.0 + 1e-9));
            let best_wsr = weighted_sum_rate(&h, &best.v, &cfg).unwrap();
            assert!(best_wsr >= wsr0);
            assert!(traj.wsr.iter().all(|w| *w <= best_wsr + 1e-12));
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let (cfg, h, v0) = instance(8, 2, 2, 10.0);
        let v_big = v0.scaled(2.0);
        assert!(matches!(
            MlbfSolver::new(&h, &v_big, &cfg, &small(5, 4), 1),
            Err(Error::Precondition(_))
        ));
    }
}
