//! Central finite-difference verification of reverse-mode gradients.
//!
//! Every check compares `∂L/∂θ` from [`Tape::backward`] against
//! `(L(θ+h) − L(θ−h)) / 2h` for scalar losses built at 64-bit precision.
//! Non-scalar outputs are reduced with [`weighted_sum`], a fixed random
//! projection, so every output element influences the loss.
//!
//! Relu makes the loss piecewise smooth. Each probe records the relu sign
//! pattern, and a stencil whose points do not all share the pattern of the
//! unperturbed input is replaced by a one-sided stencil on the smooth side,
//! or by a smaller step.

mod suite;

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;

use crate::{Mode, ParamId, ParamStore, Result, Rng, Session, Tape, Tensor, Var};

pub use suite::{describe, make_generic, module_suite, network_check, primitive_suite, CaseResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-8,
        }
    }
}

/// Worst disagreement found by a check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Elements left unchecked because every tried step crossed a relu kink.
    pub kinks: usize,
}

impl CheckReport {
    pub fn passed(&self, cfg: &GradCheck) -> bool {
        self.checked > 0 && self.max_rel_error <= cfg.tolerance
    }

    fn record(&mut self, cfg: &GradCheck, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let err = Float::abs(analytic - numeric) / Float::abs(analytic).max(cfg.floor);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some((input, elem, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// `Σ out ⊙ P` for a projection `P ~ N(0, 1)` drawn from `seed`.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::seed_from_u64(seed);
    let p = Tensor::randn(tape.shape(out), 1.0, &mut rng);
    let p = tape.leaf(p, false);
    let prod = tape.mul(out, p)?;
    Ok(tape.sum(prod))
}

fn chosen(len: usize, limit: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Loss and relu sign pattern of one forward.
type Probe = (f64, Vec<bool>);

fn probe(tape: &Tape<f64>, loss: Var) -> Probe {
    (tape.value(loss).item(), tape.relu_signs().unwrap_or_default().to_vec())
}

/// Derivative at `t = 0` of `t ↦ L(x + t·e)`, where `at(t)` probes the
/// loss. `None` when every step tried crosses a kink on both sides.
fn derivative(cfg: &GradCheck, mut at: impl FnMut(f64) -> Result<Probe>) -> Result<Option<f64>> {
    let (f0, base) = at(0.0)?;
    let mut h = cfg.step;
    for _ in 0..3 {
        let (up, up_signs) = at(h)?;
        let (down, down_signs) = at(-h)?;
        let (fwd, back) = (up_signs == base, down_signs == base);
        if fwd && back {
            return Ok(Some((up - down) / (2.0 * h)));
        }
        if fwd || back {
            let (side, near) = if fwd { (1.0, up) } else { (-1.0, down) };
            let (far, far_signs) = at(2.0 * side * h)?;
            if far_signs == base {
                return Ok(Some(side * (4.0 * near - 3.0 * f0 - far) / (2.0 * h)));
            }
        }
        h /= 10.0;
    }
    Ok(None)
}

fn record(report: &mut CheckReport, cfg: &GradCheck, input: usize, elem: usize, analytic: f64, numeric: Option<f64>) {
    match numeric {
        Some(n) => report.record(cfg, input, elem, analytic, n),
        None => report.kinks += 1,
    }
}

/// Checks the gradient of `f` with respect to every element of every input
/// (or `limit` random elements per input).
pub fn check_inputs<F>(
    cfg: &GradCheck,
    inputs: &[Tensor<f64>],
    limit: Option<usize>,
    seed: u64,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<Probe> {
        let mut tape = Tape::new();
        tape.record_relu_signs();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(probe(&tape, loss))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut rng = Rng::seed_from_u64(seed);
    let mut report = CheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape());
        let g = grads.get(*var).unwrap_or(&zero);
        for e in chosen(inputs[i].len(), limit, &mut rng) {
            let x0 = inputs[i].data()[e];
            let numeric = derivative(cfg, |t| {
                work[i].data_mut()[e] = x0 + t;
                let p = eval(&work);
                work[i].data_mut()[e] = x0;
                p
            })?;
            record(&mut report, cfg, i, e, g.data()[e], numeric);
        }
    }
    Ok(report)
}

fn session_probe<F>(store: &ParamStore<f64>, f: &F) -> Result<Probe>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let mut s = Session::new(store, Mode::Train);
    s.record_relu_signs();
    let loss = f(&mut s)?;
    Ok(probe(&s, loss))
}

fn analytic_grads<F>(store: &ParamStore<f64>, f: &F) -> Result<Vec<(ParamId, Tensor<f64>)>>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let mut s = Session::new(store, Mode::Train);
    let loss = f(&mut s)?;
    let g = s.backward(loss)?;
    Ok(s.param_grads(&g))
}

/// Checks parameter gradients of a train-mode forward built by `f`.
pub fn check_params<F>(
    cfg: &GradCheck,
    store: &ParamStore<f64>,
    params: &[ParamId],
    limit: Option<usize>,
    seed: u64,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let analytic = analytic_grads(store, &f)?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut report = CheckReport::default();
    let mut work = store.clone();
    for (pi, &id) in params.iter().enumerate() {
        let zero = Tensor::zeros(store.value(id).shape());
        let g = analytic.iter().find(|(p, _)| *p == id).map(|(_, g)| g).unwrap_or(&zero);
        for e in chosen(store.value(id).len(), limit, &mut rng) {
            let x0 = store.value(id).data()[e];
            let numeric = derivative(cfg, |t| {
                work.value_mut(id).data_mut()[e] = x0 + t;
                let p = session_probe(&work, &f);
                work.value_mut(id).data_mut()[e] = x0;
                p
            })?;
            record(&mut report, cfg, pi, e, g.data()[e], numeric);
        }
    }
    Ok(report)
}

/// Directional check along a random unit direction `d` over all listed
/// parameters: compares `∇L·d` with the derivative of `t ↦ L(θ+td)`.
pub fn check_direction<F>(
    cfg: &GradCheck,
    store: &ParamStore<f64>,
    params: &[ParamId],
    seed: u64,
    f: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let analytic = analytic_grads(store, &f)?;
    let mut rng = Rng::seed_from_u64(seed);
    let dirs: Vec<Tensor<f64>> = params
        .iter()
        .map(|&id| Tensor::randn(store.value(id).shape(), 1.0, &mut rng))
        .collect();
    let norm = Float::sqrt(dirs.iter().flat_map(|d| d.data()).map(|v| v * v).sum::<f64>());
    let mut dot = 0.0;
    for (&id, d) in params.iter().zip(&dirs) {
        if let Some((_, g)) = analytic.iter().find(|(p, _)| *p == id) {
            dot += g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>() / norm;
        }
    }
    let numeric = derivative(cfg, |t| {
        let mut work = store.clone();
        for (&id, d) in params.iter().zip(&dirs) {
            for (w, v) in work.value_mut(id).data_mut().iter_mut().zip(d.data()) {
                *w += t * v / norm;
            }
        }
        session_probe(&work, &f)
    })?;
    let mut report = CheckReport::default();
    record(&mut report, cfg, 0, 0, dot, numeric);
    Ok(report)
}
