//! Ready-made gradient checks for every differentiable primitive and module.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};

use super::{check_direction, check_inputs, check_params, weighted_sum, CheckReport, GradCheck};
use crate::attention::{Dca, SqueezeExcite, StyleRm};
use crate::autograd::PoolKind;
use crate::backbone::{Network, NetworkSpec};
use crate::{ParamId, ParamKind, ParamStore, Result, Rng, Session, Tensor, Var};

/// Named outcome of one check.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: CheckReport,
}

/// Moves parameters away from their structured initial values: norm scales
/// to `U(0.5, 1.5)`, shifts and biases to `N(0, 0.2²)`, per-channel
/// projection scales to `U(0.5, 1.5)`. Zero-initialised residual scales
/// would otherwise hide whole branches from the gradient.
pub fn make_generic(store: &mut ParamStore<f64>, rng: &mut Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        if p.kind == ParamKind::Buffer {
            continue;
        }
        let shape = p.value.shape().to_vec();
        if p.name.ends_with(".gamma") || p.name.ends_with(".depth") {
            p.value = Tensor::uniform(&shape, 0.5, 1.5, rng);
        } else if p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            p.value = Tensor::randn(&shape, 0.2, rng);
        }
    }
}

fn rn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;
type Tape = crate::Tape<f64>;

fn prim(cfg: &GradCheck, name: &'static str, inputs: Vec<Tensor<f64>>, seed: u64, f: Build) -> Result<CaseResult> {
    let report = check_inputs(cfg, &inputs, None, seed, f)?;
    Ok(CaseResult { name, report })
}

/// Checks every primitive once with inputs drawn from `seed`.
pub fn primitive_suite(cfg: &GradCheck, seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = Rng::seed_from_u64(seed);
    let r = &mut rng;
    let p = seed.wrapping_mul(31).wrapping_add(7);
    let mut out = Vec::new();
    out.push(prim(cfg, "add", vec![rn(&[2, 3], r), rn(&[1, 3], r)], p, |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 1)
    })?);
    out.push(prim(cfg, "mul", vec![rn(&[2, 3, 2], r), rn(&[3, 1], r)], p, |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 2)
    })?);
    out.push(prim(cfg, "relu", vec![rn(&[12], r)], p, |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 3)
    })?);
    out.push(prim(cfg, "sigmoid", vec![Tensor::randn(&[12], 3.0, r)], p, |t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y, 4)
    })?);
    out.push(prim(cfg, "reshape", vec![rn(&[2, 6], r)], p, |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        weighted_sum(t, y, 5)
    })?);
    out.push(prim(cfg, "sum", vec![rn(&[7], r)], p, |t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    })?);
    out.push(prim(cfg, "sum_last", vec![rn(&[2, 3, 4], r)], p, |t, v| {
        let y = t.sum_last(v[0])?;
        weighted_sum(t, y, 6)
    })?);
    out.push(prim(
        cfg,
        "stack_last",
        vec![rn(&[2, 3], r), rn(&[2, 3], r)],
        p,
        |t, v| {
            let y = t.stack_last(&[v[0], v[1]])?;
            weighted_sum(t, y, 7)
        },
    )?);
    out.push(prim(cfg, "matmul", vec![rn(&[3, 4], r), rn(&[4, 2], r)], p, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, 8)
    })?);
    out.push(prim(
        cfg,
        "linear",
        vec![rn(&[3, 5], r), rn(&[4, 5], r), rn(&[4], r)],
        p,
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted_sum(t, y, 9)
        },
    )?);
    out.push(prim(
        cfg,
        "conv2d",
        vec![rn(&[2, 2, 5, 5], r), rn(&[3, 2, 3, 3], r)],
        p,
        |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1)?;
            weighted_sum(t, y, 10)
        },
    )?);
    out.push(prim(
        cfg,
        "conv2d_stride2",
        vec![rn(&[1, 2, 6, 6], r), rn(&[2, 2, 3, 3], r)],
        p,
        |t, v| {
            let y = t.conv2d(v[0], v[1], 2, 1)?;
            weighted_sum(t, y, 11)
        },
    )?);
    out.push(prim(
        cfg,
        "depthwise_conv2d",
        vec![rn(&[2, 3, 5, 5], r), rn(&[3, 1, 3, 3], r)],
        p,
        |t, v| {
            let y = t.depthwise_conv2d(v[0], v[1], 1, 1)?;
            weighted_sum(t, y, 12)
        },
    )?);
    out.push(prim(
        cfg,
        "depthwise_separable",
        vec![rn(&[2, 3, 4, 4], r), rn(&[3, 1, 3, 3], r), rn(&[4, 3, 1, 1], r)],
        p,
        |t, v| {
            let y = t.depthwise_separable(v[0], v[1], v[2])?;
            weighted_sum(t, y, 13)
        },
    )?);
    out.push(prim(
        cfg,
        "batch_norm_train",
        vec![rn(&[3, 2, 3, 3], r), Tensor::uniform(&[2], 0.5, 1.5, r), rn(&[2], r)],
        p,
        |t, v| {
            let (y, _, _) = t.batch_norm_train(v[0], v[1], v[2])?;
            weighted_sum(t, y, 14)
        },
    )?);
    out.push(prim(
        cfg,
        "batch_norm_train_rank2",
        vec![rn(&[4, 3], r), Tensor::uniform(&[3], 0.5, 1.5, r), rn(&[3], r)],
        p,
        |t, v| {
            let (y, _, _) = t.batch_norm_train(v[0], v[1], v[2])?;
            weighted_sum(t, y, 15)
        },
    )?);
    out.push(prim(
        cfg,
        "batch_norm_eval",
        vec![rn(&[2, 2, 3, 3], r), Tensor::uniform(&[2], 0.5, 1.5, r), rn(&[2], r)],
        p,
        |t, v| {
            let rm = Tensor::from_f64(&[2], &[0.3, -0.2])?;
            let rv = Tensor::from_f64(&[2], &[0.8, 1.7])?;
            let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv)?;
            weighted_sum(t, y, 16)
        },
    )?);
    out.push(prim(cfg, "global_mean", vec![rn(&[2, 3, 4, 4], r)], p, |t, v| {
        let y = t.global_pool(v[0], PoolKind::Mean)?;
        weighted_sum(t, y, 17)
    })?);
    out.push(prim(cfg, "global_std", vec![rn(&[2, 3, 4, 4], r)], p, |t, v| {
        let y = t.global_pool(v[0], PoolKind::Std)?;
        weighted_sum(t, y, 18)
    })?);
    out.push(prim(cfg, "softmax", vec![rn(&[3, 4, 2], r)], p, |t, v| {
        let y = t.softmax(v[0], 1)?;
        weighted_sum(t, y, 19)
    })?);
    out.push(prim(cfg, "blur_pool", vec![rn(&[1, 2, 5, 6], r)], p, |t, v| {
        let y = t.blur_pool(v[0])?;
        weighted_sum(t, y, 20)
    })?);
    out.push(prim(cfg, "space_to_depth", vec![rn(&[1, 2, 8, 4], r)], p, |t, v| {
        let y = t.space_to_depth(v[0], 4)?;
        weighted_sum(t, y, 21)
    })?);
    out.push(prim(
        cfg,
        "channel_scale",
        vec![rn(&[2, 3, 4, 4], r), rn(&[2, 3], r)],
        p,
        |t, v| {
            let y = t.channel_scale(v[0], v[1])?;
            weighted_sum(t, y, 22)
        },
    )?);
    out.push(prim(
        cfg,
        "criss_cross",
        vec![
            rn(&[2, 2, 4, 5], r),
            rn(&[2, 2, 4, 5], r),
            rn(&[2, 3, 4, 5], r),
            rn(&[2, 3, 4, 5], r),
        ],
        p,
        |t, v| {
            let y = t.criss_cross(v[0], v[1], v[2], v[3])?;
            weighted_sum(t, y, 23)
        },
    )?);
    out.push(prim(
        cfg,
        "dense_attention",
        vec![
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
        ],
        p,
        |t, v| {
            let y = t.dense_attention(v[0], v[1], v[2], v[3], None)?;
            weighted_sum(t, y, 24)
        },
    )?);
    out.push(prim(
        cfg,
        "dense_attention_masked",
        vec![
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
            rn(&[1, 2, 3, 3], r),
        ],
        p,
        |t, v| {
            let mask = (0..81).map(|i| i % 10 == 0 || (i * 7) % 3 == 1).collect();
            let y = t.dense_attention(v[0], v[1], v[2], v[3], Some(mask))?;
            weighted_sum(t, y, 25)
        },
    )?);
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
    let logits = rn(&[4, 5], r);
    let report = check_inputs(cfg, &[logits], None, p, |t, v| t.cross_entropy(v[0], &labels))?;
    out.push(CaseResult {
        name: "cross_entropy",
        report,
    });
    Ok(out)
}

/// Store holding a module's parameters plus its input as an extra entry.
struct ModuleCase {
    store: ParamStore<f64>,
    input: ParamId,
}

impl ModuleCase {
    fn new(shape: &[usize], rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let input = store.add("input", ParamKind::Weight, Tensor::randn(shape, 1.0, rng));
        ModuleCase { store, input }
    }

    fn trainable(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.kind.trainable())
            .map(|(id, _)| id)
            .collect()
    }
}

fn module_check<F>(cfg: &GradCheck, name: &'static str, case: &ModuleCase, seed: u64, f: F) -> Result<CaseResult>
where
    F: Fn(&mut Session<'_, f64>, Var) -> Result<Var>,
{
    let input = case.input;
    let report = check_params(cfg, &case.store, &case.trainable(), None, seed, |s| {
        let x = s.param(input);
        let y = f(s, x)?;
        weighted_sum(s, y, seed)
    })?;
    Ok(CaseResult { name, report })
}

/// Checks style recalibration, SE, one criss-cross pass and the two-pass
/// block with respect to their inputs and every parameter.
pub fn module_suite(cfg: &GradCheck, seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = Rng::seed_from_u64(seed ^ 0xa5a5);
    let mut out = Vec::new();

    let mut c = ModuleCase::new(&[3, 4, 5, 5], &mut rng);
    let srm = StyleRm::new(&mut c.store, "stylerm", 4, &mut rng);
    make_generic(&mut c.store, &mut rng);
    out.push(module_check(cfg, "style_rm_forward", &c, seed, |s, x| {
        srm.forward(s, x)
    })?);

    let mut c = ModuleCase::new(&[2, 8, 4, 4], &mut rng);
    let se = SqueezeExcite::new(&mut c.store, "se", 8, 4, &mut rng)?;
    make_generic(&mut c.store, &mut rng);
    out.push(module_check(cfg, "se_forward", &c, seed, |s, x| se.forward(s, x))?);

    let mut c = ModuleCase::new(&[2, 8, 4, 5], &mut rng);
    let dca = Dca::new(&mut c.store, "dca", 8, 2, &mut rng)?;
    make_generic(&mut c.store, &mut rng);
    out.push(module_check(cfg, "cca_pass", &c, seed, |s, x| dca.cca_pass(s, x))?);
    out.push(module_check(cfg, "dca_forward", &c, seed, |s, x| dca.forward(s, x))?);
    Ok(out)
}

/// Checks the complete network: `per_tensor` random elements of every
/// parameter tensor, a sample of input pixels, and one random direction
/// through all parameters at once.
pub fn network_check(
    cfg: &GradCheck,
    spec: &NetworkSpec,
    batch: usize,
    per_tensor: usize,
    seed: u64,
) -> Result<Vec<CaseResult>> {
    let mut rng = Rng::seed_from_u64(seed ^ 0x5a5a);
    let mut store = ParamStore::new();
    let (h, w) = spec.input_size;
    let input = store.add(
        "input",
        ParamKind::Weight,
        Tensor::uniform(&[batch, 3, h, w], 0.0, 1.0, &mut rng),
    );
    let net = Network::build(spec, &mut store, &mut rng)?;
    make_generic(&mut store, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % spec.num_classes).collect();
    let forward = |s: &mut Session<'_, f64>| -> Result<Var> {
        let x = s.param(input);
        let logits = net.forward(s, x)?;
        s.cross_entropy(logits, &labels)
    };
    let params: Vec<ParamId> = store
        .iter()
        .filter(|(id, p)| p.kind.trainable() && *id != input)
        .map(|(id, _)| id)
        .collect();
    Ok(vec![
        CaseResult {
            name: "network_parameters",
            report: check_params(cfg, &store, &params, Some(per_tensor), seed, forward)?,
        },
        CaseResult {
            name: "network_input",
            report: check_params(cfg, &store, &[input], Some(4 * per_tensor), seed, forward)?,
        },
        CaseResult {
            name: "network_direction",
            report: check_direction(cfg, &store, &params, seed, forward)?,
        },
    ])
}

/// Formats a one-line summary of a case.
pub fn describe(case: &CaseResult) -> String {
    let mut line = alloc::format!(
        "{:<24} checked {:>5}  max rel err {:.3e}",
        case.name,
        case.report.checked,
        case.report.max_rel_error
    );
    if case.report.kinks > 0 {
        line.push_str(&alloc::format!("  ({} at relu kinks)", case.report.kinks));
    }
    line
}
