//! L1 / ElasticNet regularized logistic regression over ±1 history features.
//!
//! The objective minimized by [`fit`] is
//!
//! ```text
//! (1/m) Σ_i [ log(1 + e^{η_i}) − y_i η_i ] + λ (α‖w‖₁ + (1−α)/2 ‖w‖₂²),   η_i = b + w·x_i
//! ```
//!
//! with the intercept `b` unpenalized. It is solved with cyclic coordinate
//! descent: each coordinate takes a proximal Newton step on the local
//! quadratic model of the loss (soft-thresholding for the L1 term), followed
//! by a backtracking check that the exact objective does not increase. After
//! every full sweep only the non-zero coordinates are iterated until they
//! settle, then a full sweep re-checks the zero set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::TrainingDataset;
use crate::Real;

/// Largest intercept magnitude used for constant-label datasets
/// (the unconstrained optimum is at infinity).
pub const BIAS_LIMIT: f64 = 16.0;

const MAX_HALVINGS: usize = 50;
const CURVATURE_FLOOR: f64 = 1e-6;
const BISECTION_RATIO: f64 = 1.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    pub lambda_min: T,
    pub lambda_max: T,
    pub accuracy_stop: f64,
    /// Cap on coordinate-descent sweeps per fit.
    pub max_iterations: usize,
    /// Convergence threshold on the largest parameter change in a sweep.
    pub tolerance: T,
    /// L1 share of the penalty; 1 is pure Lasso.
    pub elasticnet_alpha: T,
    /// Cap on fits per λ search.
    pub max_probes: usize,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            lambda_min: T::of(1e-4),
            lambda_max: T::of(1.0),
            accuracy_stop: 0.99,
            max_iterations: 1000,
            tolerance: T::of(1e-7),
            elasticnet_alpha: T::one(),
            max_probes: 20,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda_min > T::zero() && self.lambda_min <= self.lambda_max) {
            return Err(ModelError::Config("need 0 < lambda_min <= lambda_max".into()));
        }
        if !(self.accuracy_stop > 0.0 && self.accuracy_stop <= 1.0) {
            return Err(ModelError::Config("accuracy_stop must be in (0, 1]".into()));
        }
        if self.tolerance <= T::zero() {
            return Err(ModelError::Config("tolerance must be positive".into()));
        }
        if self.elasticnet_alpha < T::zero() || self.elasticnet_alpha > T::one() {
            return Err(ModelError::Config("elasticnet_alpha must be in [0, 1]".into()));
        }
        if self.max_probes < 2 {
            return Err(ModelError::Config("max_probes must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dataset for pc {0:#x} has no samples")]
    EmptyDataset(u64),
    #[error("malformed model dump at line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

/// A per-branch linear model `sign(b + Σ w_j x_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseModel<T> {
    pub pc: u64,
    /// Feature-vector length `gh + lh`.
    pub dim: usize,
    pub bias: T,
    /// Non-zero weights by history index.
    pub weights: BTreeMap<usize, T>,
    pub lambda: T,
    pub alpha: T,
    /// Training accuracy under the sign rule.
    pub accuracy: f64,
    pub m: usize,
    pub converged: bool,
    /// Set when the accuracy reaches the search target.
    pub sufficient: bool,
}

impl<T: Real> SparseModel<T> {
    pub fn zero(pc: u64, dim: usize) -> Self {
        Self {
            pc,
            dim,
            bias: T::zero(),
            weights: BTreeMap::new(),
            lambda: T::zero(),
            alpha: T::one(),
            accuracy: 0.0,
            m: 0,
            converged: true,
            sufficient: false,
        }
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// `b + Σ w_j x_j`, summed in ascending index order.
    pub fn decision(&self, x: &[i8]) -> T {
        self.weights.iter().fold(self.bias, |acc, (&j, &w)| if x[j] > 0 { acc + w } else { acc - w })
    }

    /// Taken iff the decision value is non-negative.
    pub fn predict(&self, x: &[i8]) -> bool {
        self.decision(x) >= T::zero()
    }

    /// Drops zero weights so that `weights` only holds non-zeros.
    pub fn prune(&mut self) {
        self.weights.retain(|_, w| *w != T::zero());
    }

    /// Model converted to another scalar type.
    pub fn cast<U: Real>(&self) -> SparseModel<U> {
        SparseModel {
            pc: self.pc,
            dim: self.dim,
            bias: U::of(self.bias.as_f64()),
            weights: self.weights.iter().map(|(&j, &w)| (j, U::of(w.as_f64()))).collect(),
            lambda: U::of(self.lambda.as_f64()),
            alpha: U::of(self.alpha.as_f64()),
            accuracy: self.accuracy,
            m: self.m,
            converged: self.converged,
            sufficient: self.sufficient,
        }
    }
}

/// Branch screening thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchScreen {
    pub min_occurrences: usize,
    pub bias_low: f64,
    pub bias_high: f64,
}

impl Default for BranchScreen {
    fn default() -> Self {
        Self { min_occurrences: 10_000, bias_low: 0.02, bias_high: 0.98 }
    }
}

/// True when the branch is frequent enough and not heavily biased.
pub fn screen(dataset: &TrainingDataset, screen: &BranchScreen) -> bool {
    screen.passes(dataset.m(), dataset.taken_count())
}

impl BranchScreen {
    /// The screening rule on raw counts.
    pub fn passes(&self, occurrences: usize, taken: usize) -> bool {
        if occurrences == 0 || occurrences < self.min_occurrences {
            return false;
        }
        let rate = taken as f64 / occurrences as f64;
        rate >= self.bias_low && rate <= self.bias_high
    }
}

/// Fraction of samples whose sign-rule prediction matches the label; 0 for an empty dataset.
pub fn eval_accuracy<T: Real>(model: &SparseModel<T>, dataset: &TrainingDataset) -> f64 {
    if dataset.m() == 0 {
        return 0.0;
    }
    correct_count(model, dataset) as f64 / dataset.m() as f64
}

pub fn correct_count<T: Real>(model: &SparseModel<T>, dataset: &TrainingDataset) -> usize {
    dataset.samples().filter(|(x, y)| model.predict(x) == *y).count()
}

/// Column-major design matrix shared by the fits of one λ search.
pub struct Design<T> {
    pc: u64,
    cols: Vec<Vec<i8>>,
    y: Vec<T>,
    taken: usize,
}

impl<T: Real> Design<T> {
    pub fn new(dataset: &TrainingDataset) -> Self {
        Self {
            pc: dataset.target_pc,
            cols: dataset.columns(),
            y: dataset.labels().iter().map(|&y| if y { T::one() } else { T::zero() }).collect(),
            taken: dataset.taken_count(),
        }
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn soft_threshold<T: Real>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Value of the regularized objective for given parameters.
pub fn objective<T: Real>(dataset: &TrainingDataset, bias: T, weights: &BTreeMap<usize, T>, lambda: T, alpha: T) -> T {
    let m = T::of(dataset.m() as f64);
    let loss = dataset.samples().fold(T::zero(), |acc, (x, y)| {
        let eta = weights.iter().fold(bias, |a, (&j, &w)| if x[j] > 0 { a + w } else { a - w });
        let yv = if y { T::one() } else { T::zero() };
        acc + softplus(eta) - yv * eta
    }) / m;
    loss + penalty(weights.values().copied(), lambda, alpha)
}

fn penalty<T: Real>(weights: impl Iterator<Item = T>, lambda: T, alpha: T) -> T {
    let half = T::of(0.5);
    let (l1, l2) = weights.fold((T::zero(), T::zero()), |(a, b), w| (a + w.abs(), b + w * w));
    lambda * (alpha * l1 + (T::one() - alpha) * half * l2)
}

struct Solver<'a, T> {
    design: &'a Design<T>,
    l1: T,
    /// Per-coordinate L2 strength.
    l2: Vec<T>,
    inv_m: T,
    w: Vec<T>,
    b: T,
    eta: Vec<T>,
    p: Vec<T>,
}

impl<'a, T: Real> Solver<'a, T> {
    fn new(design: &'a Design<T>, lambda: T, alpha: T, l2_scale: Option<&[T]>, w: Vec<T>, b: T) -> Self {
        let m = design.m();
        let l2 = lambda * (T::one() - alpha);
        let l2 = match l2_scale {
            Some(scale) => scale.iter().map(|&s| l2 * s).collect(),
            None => vec![l2; design.dim()],
        };
        let mut s = Self {
            design,
            l1: lambda * alpha,
            l2,
            inv_m: T::one() / T::of(m as f64),
            w,
            b,
            eta: vec![T::zero(); m],
            p: vec![T::zero(); m],
        };
        s.resync();
        s
    }

    fn resync(&mut self) {
        self.eta.iter_mut().for_each(|e| *e = self.b);
        for (j, &wj) in self.w.iter().enumerate() {
            if wj != T::zero() {
                for (e, &x) in self.eta.iter_mut().zip(&self.design.cols[j]) {
                    if x > 0 {
                        *e = *e + wj
                    } else {
                        *e = *e - wj
                    }
                }
            }
        }
        for (p, &e) in self.p.iter_mut().zip(&self.eta) {
            *p = sigmoid(e);
        }
    }

    fn objective(&self) -> T {
        let loss = self.eta.iter().zip(&self.design.y).fold(T::zero(), |acc, (&e, &y)| acc + softplus(e) - y * e);
        loss * self.inv_m
            + self.l1 * self.w.iter().fold(T::zero(), |a, w| a + w.abs())
            + T::of(0.5) * self.w.iter().zip(&self.l2).fold(T::zero(), |a, (&w, &l2)| a + l2 * w * w)
    }

    /// Loss change when `eta_i` moves by `delta * x_i` (`x = None` for the intercept).
    fn loss_delta(&self, col: Option<&[i8]>, delta: T) -> T {
        let up = delta.exp_m1();
        let down = (-delta).exp_m1();
        let mut acc = T::zero();
        match col {
            None => {
                for (&p, &y) in self.p.iter().zip(&self.design.y) {
                    acc = acc + (up * p).ln_1p() - y * delta;
                }
            }
            Some(col) => {
                for ((&p, &y), &x) in self.p.iter().zip(&self.design.y).zip(col) {
                    acc = acc + if x > 0 { (up * p).ln_1p() - y * delta } else { (down * p).ln_1p() + y * delta };
                }
            }
        }
        acc * self.inv_m
    }

    fn apply(&mut self, col: Option<usize>, delta: T) {
        match col {
            None => {
                self.b = self.b + delta;
                for (e, p) in self.eta.iter_mut().zip(self.p.iter_mut()) {
                    *e = *e + delta;
                    *p = sigmoid(*e);
                }
            }
            Some(j) => {
                self.w[j] = self.w[j] + delta;
                let col = &self.design.cols[j];
                for ((e, p), &x) in self.eta.iter_mut().zip(self.p.iter_mut()).zip(col) {
                    *e = if x > 0 { *e + delta } else { *e - delta };
                    *p = sigmoid(*e);
                }
            }
        }
    }

    fn gradient_curvature(&self, col: Option<&[i8]>) -> (T, T) {
        let mut g = T::zero();
        let mut h = T::zero();
        match col {
            None => {
                for (&p, &y) in self.p.iter().zip(&self.design.y) {
                    g = g + (p - y);
                    h = h + p * (T::one() - p);
                }
            }
            Some(col) => {
                for ((&p, &y), &x) in self.p.iter().zip(&self.design.y).zip(col) {
                    g = if x > 0 { g + (p - y) } else { g - (p - y) };
                    h = h + p * (T::one() - p);
                }
            }
        }
        (g * self.inv_m, (h * self.inv_m).max(T::of(CURVATURE_FLOOR)))
    }

    fn step_bias(&mut self) -> T {
        let (g, h) = self.gradient_curvature(None);
        if g == T::zero() {
            return T::zero();
        }
        let mut delta = -g / h;
        for _ in 0..MAX_HALVINGS {
            if self.loss_delta(None, delta) <= T::zero() {
                self.apply(None, delta);
                return delta.abs();
            }
            delta = delta * T::of(0.5);
        }
        T::zero()
    }

    fn step_coordinate(&mut self, j: usize) -> T {
        let col = &self.design.cols[j];
        let (g, h) = self.gradient_curvature(Some(col));
        let wj = self.w[j];
        let target = soft_threshold(h * wj - g, self.l1) / (h + self.l2[j]);
        if target == wj {
            return T::zero();
        }
        let mut delta = target - wj;
        let half = T::of(0.5);
        for _ in 0..MAX_HALVINGS {
            let cand = wj + delta;
            let change = self.loss_delta(Some(col), delta)
                + self.l1 * (cand.abs() - wj.abs())
                + self.l2[j] * half * (cand * cand - wj * wj);
            if change <= T::zero() {
                self.apply(Some(j), delta);
                return delta.abs();
            }
            delta = delta * half;
        }
        T::zero()
    }

    fn sweep(&mut self, coords: &[usize]) -> T {
        let before = if cfg!(debug_assertions) { Some(self.objective()) } else { None };
        let mut max_delta = self.step_bias();
        for &j in coords {
            max_delta = max_delta.max(self.step_coordinate(j));
        }
        if let Some(before) = before {
            let after = self.objective();
            // Worst-case rounding of an m-term sum.
            let m = self.design.m() as f64;
            let slack = T::epsilon() * T::of(4.0 * m) * (T::one() + before.abs());
            debug_assert!(after <= before + slack, "objective increased across a sweep: {before} -> {after}");
        }
        max_delta
    }
}

/// Raw coordinate-descent result.
struct FitOutcome<T> {
    w: Vec<T>,
    b: T,
    converged: bool,
}

fn run_descent<T: Real>(
    design: &Design<T>,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
    start: Option<(&[T], T)>,
    l2_scale: Option<&[T]>,
) -> FitOutcome<T> {
    let m = design.m();
    let dim = design.dim();
    if design.taken == 0 || design.taken == m {
        let b = if design.taken == m { T::of(BIAS_LIMIT) } else { T::of(-BIAS_LIMIT) };
        return FitOutcome { w: vec![T::zero(); dim], b, converged: true };
    }
    let (w0, b0) = match start {
        Some((w, b)) => (w.to_vec(), b),
        None => {
            let rate = design.taken as f64 / m as f64;
            (vec![T::zero(); dim], T::of((rate / (1.0 - rate)).ln()))
        }
    };
    let mut solver = Solver::new(design, lambda, alpha, l2_scale, w0, b0);
    let all: Vec<usize> = (0..dim).collect();
    let mut iterations = 0;
    let mut converged = false;
    'outer: while iterations < config.max_iterations {
        iterations += 1;
        if solver.sweep(&all) < config.tolerance {
            converged = true;
            break;
        }
        loop {
            if iterations >= config.max_iterations {
                break 'outer;
            }
            let active: Vec<usize> = (0..dim).filter(|&j| solver.w[j] != T::zero()).collect();
            iterations += 1;
            if solver.sweep(&active) < config.tolerance {
                break;
            }
        }
    }
    FitOutcome { w: solver.w, b: solver.b, converged }
}

fn finish<T: Real>(
    design: &Design<T>,
    dataset: &TrainingDataset,
    out: FitOutcome<T>,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
) -> SparseModel<T> {
    let cutoff = config.tolerance * T::of(10.0);
    let weights = out.w.iter().enumerate().filter(|(_, w)| w.abs() >= cutoff).map(|(j, &w)| (j, w)).collect();
    let mut model = SparseModel {
        pc: design.pc,
        dim: design.dim(),
        bias: out.b,
        weights,
        lambda,
        alpha,
        accuracy: 0.0,
        m: design.m(),
        converged: out.converged,
        sufficient: false,
    };
    model.accuracy = eval_accuracy(&model, dataset);
    model.sufficient = model.accuracy >= config.accuracy_stop;
    model
}

fn fit_design<T: Real>(
    design: &Design<T>,
    dataset: &TrainingDataset,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
    start: Option<&SparseModel<T>>,
) -> SparseModel<T> {
    let dense;
    let start = match start {
        Some(model) => {
            let mut w = vec![T::zero(); design.dim()];
            for (&j, &v) in &model.weights {
                w[j] = v;
            }
            dense = w;
            Some((dense.as_slice(), model.bias))
        }
        None => None,
    };
    let out = run_descent(design, lambda, alpha, config, start, None);
    finish(design, dataset, out, lambda, alpha, config)
}

/// Like [`refit_from`], with the L2 term of coordinate `j` scaled by
/// `l2_scale[j]`.
pub fn refit_scaled<T: Real>(
    dataset: &TrainingDataset,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
    start: &SparseModel<T>,
    l2_scale: &[T],
) -> Result<SparseModel<T>, ModelError> {
    config.validate()?;
    if dataset.m() == 0 {
        return Err(ModelError::EmptyDataset(dataset.target_pc));
    }
    if l2_scale.len() != dataset.dim() {
        return Err(ModelError::Config("l2 scale length differs from the feature count".into()));
    }
    let design = Design::new(dataset);
    let mut w = vec![T::zero(); design.dim()];
    for (&j, &v) in &start.weights {
        w[j] = v;
    }
    let out = run_descent(&design, lambda, alpha, config, Some((&w, start.bias)), Some(l2_scale));
    Ok(finish(&design, dataset, out, lambda, alpha, config))
}

/// Fits one model at a fixed `lambda` and L1 share `alpha`.
pub fn fit<T: Real>(
    dataset: &TrainingDataset,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
) -> Result<SparseModel<T>, ModelError> {
    config.validate()?;
    if dataset.m() == 0 {
        return Err(ModelError::EmptyDataset(dataset.target_pc));
    }
    let design = Design::new(dataset);
    Ok(fit_design(&design, dataset, lambda, alpha, config, None))
}

/// Binary search on log λ over `[lambda_min, lambda_max]`.
///
/// A probe that reaches `accuracy_stop` moves the search towards larger λ
/// (sparser models), a probe that misses moves it down. Returns the sparsest
/// sufficient probe, or the most accurate probe with `sufficient = false`.
pub fn lambda_search<T: Real>(
    dataset: &TrainingDataset,
    config: &SolverConfig<T>,
) -> Result<SparseModel<T>, ModelError> {
    config.validate()?;
    if dataset.m() == 0 {
        return Err(ModelError::EmptyDataset(dataset.target_pc));
    }
    let design = Design::new(dataset);
    let alpha = config.elasticnet_alpha;
    let mut probes: Vec<SparseModel<T>> = Vec::new();

    let top = fit_design(&design, dataset, config.lambda_max, alpha, config, None);
    if top.sufficient {
        return Ok(top);
    }
    probes.push(top);
    let bottom = fit_design(&design, dataset, config.lambda_min, alpha, config, None);
    if !bottom.sufficient {
        probes.push(bottom);
        return Ok(most_accurate(probes));
    }

    let (mut lo, mut hi) = (config.lambda_min, config.lambda_max);
    let mut lo_model = bottom.clone();
    probes.push(bottom);
    let ratio = T::of(BISECTION_RATIO);
    while probes.len() < config.max_probes && hi / lo > ratio {
        let mid = (lo * hi).sqrt();
        let model = fit_design(&design, dataset, mid, alpha, config, Some(&lo_model));
        if model.sufficient {
            lo = mid;
            lo_model = model.clone();
        } else {
            hi = mid;
        }
        probes.push(model);
    }
    Ok(probes
        .into_iter()
        .filter(|p| p.sufficient)
        .min_by(|a, b| {
            a.nnz().cmp(&b.nnz()).then(b.accuracy.total_cmp(&a.accuracy)).then(b.lambda.partial_cmp(&a.lambda).unwrap())
        })
        .expect("at least one sufficient probe"))
}

fn most_accurate<T: Real>(probes: Vec<SparseModel<T>>) -> SparseModel<T> {
    probes
        .into_iter()
        .reduce(|best, p| {
            if p.accuracy > best.accuracy || (p.accuracy == best.accuracy && p.nnz() < best.nnz()) {
                p
            } else {
                best
            }
        })
        .expect("non-empty probe list")
}

/// Refits at `lambda` starting from `start` (used by deduplication).
pub fn refit_from<T: Real>(
    dataset: &TrainingDataset,
    lambda: T,
    alpha: T,
    config: &SolverConfig<T>,
    start: &SparseModel<T>,
) -> Result<SparseModel<T>, ModelError> {
    config.validate()?;
    if dataset.m() == 0 {
        return Err(ModelError::EmptyDataset(dataset.target_pc));
    }
    let design = Design::new(dataset);
    Ok(fit_design(&design, dataset, lambda, alpha, config, Some(start)))
}

/// Writes models in the text dump format: a header line
/// `pc bias lambda accuracy m` followed by one `index value` line per weight.
pub fn dump_models<T: Real>(models: &[SparseModel<T>]) -> String {
    let mut out = String::new();
    for model in models {
        writeln!(
            out,
            "{:#x} {} {} {} {}",
            model.pc,
            model.bias.as_f64(),
            model.lambda.as_f64(),
            model.accuracy,
            model.m
        )
        .unwrap();
        for (j, w) in &model.weights {
            writeln!(out, "{j} {}", w.as_f64()).unwrap();
        }
    }
    out
}

/// Parses [`dump_models`] output; `dim` is the feature length the models were trained with.
pub fn parse_models(text: &str, dim: usize) -> Result<Vec<SparseModel<f64>>, ModelError> {
    let mut models: Vec<SparseModel<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |msg: &str| ModelError::Dump { line: line_no, msg: msg.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.len() {
            0 => continue,
            5 => {
                let pc_text = fields[0].trim_start_matches("0x");
                let pc = u64::from_str_radix(pc_text, 16).map_err(|_| err("bad pc"))?;
                let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
                let mut model = SparseModel::zero(pc, dim);
                model.bias = num(fields[1])?;
                model.lambda = num(fields[2])?;
                model.accuracy = num(fields[3])?;
                model.m = fields[4].parse().map_err(|_| err("bad sample count"))?;
                models.push(model);
            }
            2 => {
                let model = models.last_mut().ok_or_else(|| err("weight before header"))?;
                let j: usize = fields[0].parse().map_err(|_| err("bad index"))?;
                let w: f64 = fields[1].parse().map_err(|_| err("bad weight"))?;
                if j >= dim {
                    return Err(err("index out of range"));
                }
                if w != 0.0 {
                    model.weights.insert(j, w);
                }
            }
            _ => return Err(err("expected 5 header fields or 2 weight fields")),
        }
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(m: usize, dim: usize, seed: u64) -> Vec<Vec<i8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..dim).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()).collect()
    }

    fn copy_feature_dataset(m: usize, dim: usize, j: usize, seed: u64) -> TrainingDataset {
        let rows = random_rows(m, dim, seed);
        let samples: Vec<_> = rows
            .into_iter()
            .map(|x| {
                let y = x[j] > 0;
                (x, y)
            })
            .collect();
        TrainingDataset::from_samples(0x40, dim, &samples)
    }

    fn coin_dataset(m: usize, dim: usize, seed: u64) -> TrainingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let rows = random_rows(m, dim, seed);
        let samples: Vec<_> = rows.into_iter().map(|x| (x, rng.gen::<bool>())).collect();
        TrainingDataset::from_samples(0x80, dim, &samples)
    }

    #[test]
    fn large_lambda_gives_intercept_only_log_odds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(4000, 10, 3);
        let samples: Vec<_> = rows.into_iter().map(|x| (x, rng.gen_bool(0.7))).collect();
        let d = TrainingDataset::from_samples(1, 10, &samples);
        let model = fit(&d, 1.0, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(model.nnz(), 0);
        let rate = d.taken_rate();
        assert!((model.bias - (rate / (1.0 - rate)).ln()).abs() < 1e-6);
        assert!(model.converged);
    }

    #[test]
    fn single_copied_feature_is_recovered() {
        let d = copy_feature_dataset(20_000, 16, 7, 11);
        let model = fit(&d, 0.01, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(model.weights.keys().copied().collect::<Vec<_>>(), [7]);
        assert!(model.weights[&7] > 0.0);
        assert_eq!(model.accuracy, 1.0);
    }

    #[test]
    fn constant_labels() {
        let rows = random_rows(500, 6, 2);
        let samples: Vec<_> = rows.into_iter().map(|x| (x, true)).collect();
        let d = TrainingDataset::from_samples(1, 6, &samples);
        let model = fit(&d, 0.01, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(model.nnz(), 0);
        assert!(model.bias > 0.0);
        assert_eq!(model.accuracy, 1.0);
    }

    #[test]
    fn tie_predicts_taken() {
        let d = TrainingDataset::from_samples(1, 2, &[(vec![1, -1], true), (vec![-1, 1], true)]);
        let model = SparseModel::<f64>::zero(1, 2);
        assert_eq!(eval_accuracy(&model, &d), 1.0);
        assert_eq!(eval_accuracy(&model, &TrainingDataset::new(1, 2)), 0.0);
    }

    #[test]
    fn random_model_on_coin_data_is_near_half() {
        let d = coin_dataset(100_000, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut model = SparseModel::<f64>::zero(0x80, 8);
        for j in 0..8 {
            model.weights.insert(j, if rng.gen::<bool>() { 1.0 } else { -1.0 });
        }
        model.bias = 0.5;
        let acc = eval_accuracy(&model, &d);
        assert!((acc - 0.5).abs() <= 0.02, "{acc}");
    }

    #[test]
    fn lambda_search_finds_sparse_model() {
        let d = copy_feature_dataset(5_000, 24, 3, 4);
        let model = lambda_search(&d, &SolverConfig::<f64>::default()).unwrap();
        assert!(model.sufficient);
        assert!(model.accuracy >= 0.99);
        assert!(model.nnz() <= 3);
        assert!(model.weights.contains_key(&3));
    }

    #[test]
    fn lambda_search_flags_noise() {
        let d = coin_dataset(20_000, 16, 9);
        let model = lambda_search(&d, &SolverConfig::<f64>::default()).unwrap();
        assert!(!model.sufficient);
        assert!((model.accuracy - 0.5).abs() <= 0.02, "{}", model.accuracy);
        assert_eq!(model.sufficient, model.accuracy >= 0.99);
    }

    #[test]
    fn fit_is_deterministic_and_works_in_f32() {
        let d = copy_feature_dataset(3_000, 12, 5, 8);
        let cfg = SolverConfig::<f64>::default();
        assert_eq!(fit(&d, 0.05, 1.0, &cfg).unwrap(), fit(&d, 0.05, 1.0, &cfg).unwrap());
        let cfg32 = SolverConfig::<f32> { tolerance: 1e-5, ..Default::default() };
        let m32 = fit(&d, 0.05f32, 1.0, &cfg32).unwrap();
        assert_eq!(m32.weights.keys().copied().collect::<Vec<_>>(), [5]);
        assert_eq!(m32.accuracy, 1.0);
    }

    #[test]
    fn empty_dataset_and_bad_config() {
        assert!(matches!(
            fit(&TrainingDataset::new(9, 3), 0.1, 1.0, &SolverConfig::default()),
            Err(ModelError::EmptyDataset(9))
        ));
        let cfg = SolverConfig::<f64> { lambda_min: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn screening() {
        let rows = random_rows(10_000, 2, 1);
        let half: Vec<_> = rows.iter().enumerate().map(|(i, x)| (x.clone(), i % 2 == 0)).collect();
        let d = TrainingDataset::from_samples(1, 2, &half);
        assert!(screen(&d, &BranchScreen::default()));
        let d = TrainingDataset::from_samples(1, 2, &half[..9_999]);
        assert!(!screen(&d, &BranchScreen::default()));
        let biased: Vec<_> = rows.iter().enumerate().map(|(i, x)| (x.clone(), i % 100 == 0)).collect();
        let d = TrainingDataset::from_samples(1, 2, &biased);
        assert!((d.taken_rate() - 0.01).abs() < 1e-12);
        assert!(!screen(&d, &BranchScreen::default()));
    }

    #[test]
    fn dump_round_trip() {
        let d = copy_feature_dataset(2_000, 10, 2, 1);
        let model = fit(&d, 0.05, 1.0, &SolverConfig::default()).unwrap();
        let text = dump_models(std::slice::from_ref(&model));
        let parsed = parse_models(&text, 10).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].pc, model.pc);
        assert_eq!(parsed[0].bias, model.bias);
        assert_eq!(parsed[0].weights, model.weights);
        assert_eq!(parsed[0].accuracy, model.accuracy);
        assert!(parse_models("1 2\n", 10).is_err());
        assert!(parse_models("0x1 0 0 0 5\n10 1.0\n", 10).is_err());
    }
}
