use fetr_core::attention::{Dca, Projection};
use fetr_core::gradcheck::make_generic;
use fetr_core::{seeded_rng, Mode, ParamStore, Session, Tensor};

pub fn dca_store(c: usize, passes: usize, seed: u64) -> (ParamStore<f64>, Dca) {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let m = Dca::new(&mut store, "dca", c, passes, &mut rng).unwrap();
    make_generic(&mut store, &mut rng);
    (store, m)
}

pub fn projection(store: &ParamStore<f64>, p: &Projection, x: &[f64], c_in: usize, hw: usize, b: usize) -> Vec<f64> {
    let d = store.value(p.depth).data();
    let w = store.value(p.point).data();
    let c_out = w.len() / c_in;
    let mut out = vec![0.0; b * c_out * hw];
    for bi in 0..b {
        for o in 0..c_out {
            for u in 0..hw {
                out[(bi * c_out + o) * hw + u] = (0..c_in)
                    .map(|c| w[o * c_in + c] * d[c] * x[(bi * c_in + c) * hw + u])
                    .sum();
            }
        }
    }
    out
}

/// Brute-force attention over pairs admitted by `keep(query, key)`.
pub fn masked_attention_oracle(
    store: &ParamStore<f64>,
    m: &Dca,
    x: &Tensor<f64>,
    keep: impl Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let (b, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let cq = m.reduced;
    let q = projection(store, &m.query, x.data(), c, hw, b);
    let k = projection(store, &m.key, x.data(), c, hw, b);
    let v = projection(store, &m.value, x.data(), c, hw, b);
    let mut out = x.data().to_vec();
    for bi in 0..b {
        for u in 0..hw {
            let keys: Vec<usize> = (0..hw).filter(|&key| keep(u, key)).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&key| {
                    (0..cq)
                        .map(|ch| q[(bi * cq + ch) * hw + u] * k[(bi * cq + ch) * hw + key])
                        .sum()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for ch in 0..c {
                let agg: f64 = keys
                    .iter()
                    .zip(&scores)
                    .map(|(&key, s)| (s - mx).exp() / z * v[(bi * c + ch) * hw + key])
                    .sum();
                out[(bi * c + ch) * hw + u] += agg;
            }
        }
    }
    out
}

/// `|∂out(u)/∂in(v)|` summed over channels, as a `HW×HW` grid.
pub fn position_jacobian(store: &ParamStore<f64>, m: &Dca, passes: usize, x: &Tensor<f64>) -> Vec<f64> {
    let (_, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let mut jac = vec![0.0; hw * hw];
    for u in 0..hw {
        for ch in 0..c {
            let mut s = Session::new(store, Mode::Eval);
            let xv = s.input_with_grad(x.clone());
            let mut y = xv;
            for _ in 0..passes {
                y = m.cca_pass(&mut s, y).unwrap();
            }
            let mut sel = vec![0.0; c * hw];
            sel[ch * hw + u] = 1.0;
            let sel = s.input(Tensor::from_f64(&[1, c, h, w], &sel).unwrap());
            let picked = s.mul(y, sel).unwrap();
            let l = s.sum(picked);
            let g = s.backward(l).unwrap();
            let g = g.get(xv).unwrap().data();
            for v in 0..hw {
                for ci in 0..c {
                    jac[u * hw + v] += g[ci * hw + v].abs();
                }
            }
        }
    }
    jac
}
