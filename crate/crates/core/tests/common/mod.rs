//! Shared test oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbp_core::history::TrainingDataset;
use std::collections::BTreeMap;

/// A random small logistic problem with ±1 features and a sparse ground truth.
pub struct Instance {
    pub dataset: TrainingDataset,
    pub lambda: f64,
    pub alpha: f64,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(2..=12);
    let m = rng.gen_range(20..=200);
    let truth: Vec<f64> = (0..dim).map(|_| if rng.gen_bool(0.3) { rng.gen_range(-2.0..2.0) } else { 0.0 }).collect();
    let mut samples = Vec::with_capacity(m);
    for _ in 0..m {
        let x: Vec<i8> = (0..dim).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        let eta: f64 = x.iter().zip(&truth).map(|(&a, &w)| a as f64 * w).sum();
        let y = rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp());
        samples.push((x, y));
    }
    let lambda = 10f64.powf(rng.gen_range(-3.0..-1.0));
    let alpha = [1.0, 0.5, rng.gen_range(0.1..1.0)][rng.gen_range(0..3)];
    Instance { dataset: TrainingDataset::from_samples(0x40, dim, &samples), lambda, alpha }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense design with a leading intercept column.
fn design(d: &TrainingDataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows = d.samples().map(|(x, _)| std::iter::once(1.0).chain(x.iter().map(|&v| v as f64)).collect()).collect();
    let ys = d.labels().iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    (rows, ys)
}

/// Mean logistic loss and its gradient in `(bias, w…)` coordinates.
fn smooth(rows: &[Vec<f64>], ys: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let m = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (r, &y) in rows.iter().zip(ys) {
        let eta: f64 = r.iter().zip(theta).map(|(a, b)| a * b).sum();
        loss += softplus(eta) - y * eta;
        let g = sigmoid(eta) - y;
        for (gj, rj) in grad.iter_mut().zip(r) {
            *gj += g * rj;
        }
    }
    grad.iter_mut().for_each(|g| *g /= m);
    (loss / m, grad)
}

pub fn objective(inst: &Instance, theta: &[f64]) -> f64 {
    let (rows, ys) = design(&inst.dataset);
    let (loss, _) = smooth(&rows, &ys, theta);
    let w = &theta[1..];
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    loss + inst.lambda * (inst.alpha * l1 + (1.0 - inst.alpha) * 0.5 * l2)
}

/// Accelerated proximal gradient with adaptive restart. Returns `(bias, w…)`.
pub fn fista(inst: &Instance, iterations: usize) -> Vec<f64> {
    let (rows, ys) = design(&inst.dataset);
    let n = inst.dataset.dim() + 1;
    let l1 = inst.lambda * inst.alpha;
    let l2 = inst.lambda * (1.0 - inst.alpha);
    // ‖X‖² ≤ m·n for ±1 entries, and the logistic curvature is at most 1/4.
    let step = 1.0 / (n as f64 / 4.0 + l2);
    let prox = |z: f64| {
        let s = z.abs() - step * l1;
        if s > 0.0 {
            z.signum() * s / (1.0 + step * l2)
        } else {
            0.0
        }
    };
    let mut x = vec![0.0; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut prev_obj = f64::INFINITY;
    for _ in 0..iterations {
        let (_, g) = smooth(&rows, &ys, &y);
        let mut next = vec![0.0; n];
        next[0] = y[0] - step * g[0];
        for j in 1..n {
            next[j] = prox(y[j] - step * g[j]);
        }
        let obj = objective(inst, &next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if obj > prev_obj {
            t = 1.0;
            y = x.clone();
            continue;
        }
        let mom = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = next;
        t = t_next;
        prev_obj = obj;
    }
    x
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation(inst: &Instance, bias: f64, weights: &BTreeMap<usize, f64>) -> f64 {
    let (rows, ys) = design(&inst.dataset);
    let mut theta = vec![0.0; inst.dataset.dim() + 1];
    theta[0] = bias;
    for (&j, &w) in weights {
        theta[j + 1] = w;
    }
    let (_, g) = smooth(&rows, &ys, &theta);
    let l1 = inst.lambda * inst.alpha;
    let l2 = inst.lambda * (1.0 - inst.alpha);
    let mut worst = g[0].abs();
    for j in 1..theta.len() {
        let w = theta[j];
        let r = g[j] + l2 * w;
        let v = if w != 0.0 { (r + l1 * w.signum()).abs() } else { (r.abs() - l1).max(0.0) };
        worst = worst.max(v);
    }
    worst
}

use sbp_core::bits::ShiftRegister;
use sbp_core::hints::{score, HintEntry, HintSet, ScoredCandidate, SelectionPolicy, SlbiuConfig, SparsityHint};
use sbp_core::history::bit_to_feature;
use sbp_core::predictors::slbiu::SlbiuState;
use sbp_core::sparse_modeling::eval_accuracy;

/// One random sign-rule case at width `q`; true when the unit and the
/// trainer-side evaluator agree. Weights come from a coarse grid so exact
/// zero sums are common.
pub fn sign_rule_agrees(rng: &mut impl Rng, q: u32) -> bool {
    let (gh, lh) = (rng.gen_range(1..=16), rng.gen_range(1..=8));
    let dim = gh + lh;
    let mut entries: Vec<HintEntry> = Vec::new();
    for index in 0..dim {
        if rng.gen_bool(0.4) {
            let weight = rng.gen_range(-8i32..=8) as f64 * 0.25;
            if weight != 0.0 {
                entries.push(HintEntry { index, weight });
            }
        }
    }
    let nnz = entries.len().max(1);
    let hint = SparsityHint { pc: 0x40, intercept: rng.gen_range(-4i32..=4) as f64 * 0.25, entries };
    let hs = HintSet {
        phase_id: "sign".into(),
        config: SlbiuConfig { lh, gh, n: 1, nnz, q, p: 64 },
        hints: vec![hint.clone()],
    };
    let mut unit = SlbiuState::load(&hs).expect("valid hint set");
    let ghr_bits: Vec<bool> = (0..gh).map(|_| rng.gen()).collect();
    let lhr_bits: Vec<bool> = (0..lh).map(|_| rng.gen()).collect();
    for &b in lhr_bits.iter().rev() {
        unit.update(0x40, b);
    }
    let ghr = ShiftRegister::from_bits(&ghr_bits);
    let taken = unit.predict(0x40, &ghr).taken;
    let x: Vec<i8> = ghr_bits.iter().chain(&lhr_bits).map(|&b| bit_to_feature(b)).collect();
    let dataset = TrainingDataset::from_samples(0x40, dim, &[(x, taken)]);
    eval_accuracy(&hint.to_model(dim), &dataset) == 1.0
}

/// Exhaustive `(N, nnz)` grid: for each pair within budget the best subset is
/// the N highest positive scores among candidates with at most nnz weights.
/// Ties prefer larger N, then smaller nnz. Returns `(N, nnz, sum)`.
pub fn select_oracle(
    candidates: &[ScoredCandidate],
    policy: SelectionPolicy,
    budget_bits: u64,
    per_hint: impl Fn(usize) -> u64,
) -> (usize, usize, i64) {
    let max_nnz = candidates.iter().map(|c| c.model.nnz()).max().unwrap_or(0).max(1);
    let mut best: Option<(i64, usize, usize)> = None;
    for nnz in 1..=max_nnz {
        let mut scores: Vec<i64> = candidates
            .iter()
            .filter(|c| c.model.nnz() <= nnz)
            .filter_map(|c| score(c, policy))
            .filter(|&s| s > 0)
            .collect();
        if scores.is_empty() {
            continue;
        }
        scores.sort_unstable_by(|a, b| b.cmp(a));
        let mut n = 1;
        while n as u64 * per_hint(nnz) <= budget_bits {
            let sum: i64 = scores.iter().take(n).sum();
            let key = (sum, n, usize::MAX - nnz);
            if best.is_none_or(|(s, bn, bz)| key > (s, bn, usize::MAX - bz)) {
                best = Some((sum, n, nnz));
            }
            n += 1;
        }
    }
    best.map_or((0, 0, 0), |(s, n, z)| (n, z, s))
}
