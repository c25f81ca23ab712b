//! Counts and times criss-cross against dense non-local attention.

use std::fmt::Write as _;
use std::time::Instant;

use fetr_core::attention::Dca;
use fetr_core::kernels::Counters;
use fetr_core::{seeded_rng, Mode, ParamStore, Session, Tensor};
use serde::Serialize;

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub c_prime: usize,
    pub cc_scores: u64,
    pub nl_scores: u64,
    pub cc_macs: u64,
    pub nl_macs: u64,
    pub cc_ms: f64,
    pub nl_ms: f64,
}

pub const CSV_HEADER: &str = "H,W,C,Cprime,cc_scores,nl_scores,cc_macs,nl_macs,cc_ms,nl_ms";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.4},{:.4}",
            self.h,
            self.w,
            self.c,
            self.c_prime,
            self.cc_scores,
            self.nl_scores,
            self.cc_macs,
            self.nl_macs,
            self.cc_ms,
            self.nl_ms
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `f` once to warm up, then `repeats` timed times. Returns the median
/// milliseconds and the counters of a single run.
fn measure(repeats: usize, mut f: impl FnMut() -> Result<Counters>) -> Result<(f64, Counters)> {
    let counters = f()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(times), counters))
}

/// One row per square map size, batch 1, `repeats` ≥ 3 timed forwards each.
pub fn run_bench(sizes: &[usize], channels: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats < 3 {
        return Err(fetr_core::Error::Config(format!("bench needs at least 3 repeats, got {repeats}")).into());
    }
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::<f32>::new();
    let dca = Dca::new(&mut store, "dca", channels, 1, &mut rng)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let x = Tensor::<f32>::randn(&[1, channels, n, n], 1.0, &mut rng);
        let (cc_ms, cc) = measure(repeats, || {
            let mut s = Session::new(&store, Mode::Eval);
            let r = s.input(x.clone());
            dca.cca_pass(&mut s, r)?;
            Ok(s.counters())
        })?;
        let (nl_ms, nl) = measure(repeats, || {
            let mut s = Session::new(&store, Mode::Eval);
            let r = s.input(x.clone());
            dca.nonlocal_forward(&mut s, r, None)?;
            Ok(s.counters())
        })?;
        log::info!("{n}x{n}: criss-cross {cc_ms:.3} ms, non-local {nl_ms:.3} ms");
        rows.push(BenchRow {
            h: n,
            w: n,
            c: channels,
            c_prime: dca.reduced,
            cc_scores: cc.score_elements,
            nl_scores: nl.score_elements,
            cc_macs: cc.score_macs,
            nl_macs: nl.score_macs,
            cc_ms,
            nl_ms,
        });
    }
    Ok(rows)
}
