use fetr_core::autograd::PoolKind;
use fetr_core::kernels::layout::depth_to_space;
use fetr_core::{seeded_rng, Error, Tape, Tensor, Var};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut seeded_rng(seed))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.leaf(t(&[1], &[0.0]), false);
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).data(), &[0.5]);
    let x = tape.leaf(t(&[2], &[-3.0, 3.0]), false);
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
    let a = tape.leaf(t(&[2], &[1.0, 2.0]), false);
    let b = tape.leaf(t(&[2], &[3.0, 4.0]), false);
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn sigmoid_stays_inside_open_interval() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[4], &[-30.0, -5.0, 5.0, 30.0]), false);
    let s = tape.sigmoid(x);
    assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
    let m = tape.leaf(t(&[2, 2], &[0.3, -1.0, 2.5, 7.0]), false);
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), tape.value(m).data());

    let a = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
    let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]), false);
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let (a, b) = (randn(&[3, 4], 1), randn(&[4, 2], 2));
    let mut oracle = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..4 {
                oracle[i * 2 + j] += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            }
        }
    }
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a, false), tape.leaf(b, false));
    let p = tape.matmul(va, vb).unwrap();
    assert!(max_diff(tape.value(p).data(), &oracle) <= 1e-12);
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let (b, c, h, wd) = x.dims4().unwrap();
    let (o, _, k, _) = w.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oc in 0..o {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ii = (oi * stride + ki) as isize - pad as isize;
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ic) * h + ii as usize) * wd + jj as usize]
                                    * w.data()[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + oi) * wo + oj] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn conv_identity_and_box_sum() {
    let mut tape = Tape::new();
    let x = randn(&[1, 1, 4, 5], 3);
    let xv = tape.leaf(x.clone(), false);
    let one = tape.leaf(t(&[1, 1, 1, 1], &[1.0]), false);
    let y = tape.conv2d(xv, one, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);

    let c = tape.leaf(Tensor::full(&[1, 1, 5, 5], 0.7), false);
    let ones = tape.leaf(Tensor::ones(&[1, 1, 3, 3]), false);
    let y = tape.conv2d(c, ones, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
    assert!(tape.value(y).data().iter().all(|v| (v - 9.0 * 0.7).abs() < 1e-12));
}

#[test]
fn conv_matches_six_loop_oracle() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let x = randn(&[1, 2, 5, 5], 4);
        let w = randn(&[3, 2, 3, 3], 5);
        let (oracle, ho, wo) = conv_oracle(&x, &w, stride, pad);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(x, false), tape.leaf(w, false));
        let y = tape.conv2d(xv, wv, stride, pad).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, ho, wo]);
        assert!(max_diff(tape.value(y).data(), &oracle) <= 1e-12);
    }
}

#[test]
fn conv_rejects_empty_output() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[1, 1, 2, 2]), false);
    let w = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]), false);
    assert!(matches!(tape.conv2d(x, w, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn depthwise_separable_identity_and_count() {
    let x = randn(&[2, 3, 4, 4], 6);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let d = tape.leaf(Tensor::ones(&[3, 1, 1, 1]), false);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let p = tape.leaf(t(&[3, 3, 1, 1], &eye), false);
    let y = tape.depthwise_separable(xv, d, p).unwrap();
    assert_eq!(tape.value(y), &x);

    let (c, o, k) = (8, 8, 3);
    assert_eq!(c * k * k + o * c, 136);
    assert_eq!(o * c * k * k, 576);
}

#[test]
fn depthwise_separable_matches_composition() {
    let x = randn(&[2, 3, 5, 5], 7);
    let wd = randn(&[3, 1, 3, 3], 8);
    let wp = randn(&[4, 3, 1, 1], 9);
    let mut filtered = vec![0.0; 2 * 3 * 25];
    for c in 0..3 {
        let xc: Vec<f64> = (0..2)
            .flat_map(|b| x.data()[(b * 3 + c) * 25..(b * 3 + c + 1) * 25].to_vec())
            .collect();
        let xc = t(&[2, 1, 5, 5], &xc);
        let wc = t(&[1, 1, 3, 3], &wd.data()[c * 9..(c + 1) * 9]);
        let (yc, _, _) = conv_oracle(&xc, &wc, 1, 1);
        for b in 0..2 {
            filtered[(b * 3 + c) * 25..(b * 3 + c + 1) * 25].copy_from_slice(&yc[b * 25..(b + 1) * 25]);
        }
    }
    let (oracle, _, _) = conv_oracle(&t(&[2, 3, 5, 5], &filtered), &wp, 1, 0);
    let mut tape = Tape::new();
    let (xv, dv, pv) = (tape.leaf(x, false), tape.leaf(wd, false), tape.leaf(wp, false));
    let y = tape.depthwise_separable(xv, dv, pv).unwrap();
    assert!(max_diff(tape.value(y).data(), &oracle) <= 1e-12);
}

#[test]
fn depthwise_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[1, 3, 4, 4]), false);
    let d = tape.leaf(Tensor::ones(&[2, 1, 3, 3]), false);
    let p = tape.leaf(Tensor::ones(&[2, 2, 1, 1]), false);
    assert!(matches!(tape.depthwise_separable(x, d, p), Err(Error::Dimension(_))));
}

fn channel_moments(y: &[f64], (b, c, s): (usize, usize, usize), ch: usize) -> (f64, f64) {
    let vals: Vec<f64> = (0..b)
        .flat_map(|bi| y[(bi * c + ch) * s..(bi * c + ch + 1) * s].to_vec())
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn batch_norm_normalises_and_applies_affine() {
    let x = Tensor::randn(&[4, 3, 5, 5], 3.0, &mut seeded_rng(10)).map(|v| v + 2.0);
    let mut tape = Tape::new();
    let xv = tape.leaf(x, false);
    let g = tape.leaf(Tensor::ones(&[3]), false);
    let b = tape.leaf(Tensor::zeros(&[3]), false);
    let (y, _, _) = tape.batch_norm_train(xv, g, b).unwrap();
    for ch in 0..3 {
        let (m, v) = channel_moments(tape.value(y).data(), (4, 3, 25), ch);
        assert!(m.abs() <= 1e-5);
        assert!((v - 1.0).abs() <= 1e-4);
    }
    let g2 = tape.leaf(Tensor::full(&[3], 2.0), false);
    let b3 = tape.leaf(Tensor::full(&[3], 3.0), false);
    let (y2, _, _) = tape.batch_norm_train(y, g2, b3).unwrap();
    for ch in 0..3 {
        let (m, v) = channel_moments(tape.value(y2).data(), (4, 3, 25), ch);
        assert!((m - 3.0).abs() <= 1e-5);
        assert!((v.sqrt() - 2.0).abs() <= 1e-4);
    }
}

#[test]
fn eval_batch_norm_is_deterministic() {
    let x = randn(&[2, 3, 4, 4], 11);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let g = tape.leaf(Tensor::full(&[3], 1.5), false);
        let b = tape.leaf(Tensor::full(&[3], -0.2), false);
        let rm = t(&[3], &[0.1, 0.2, 0.3]);
        let rv = t(&[3], &[1.0, 2.0, 0.5]);
        let y = tape.batch_norm_eval(xv, g, b, &rm, &rv).unwrap();
        tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn batch_norm_rejects_single_value() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::ones(&[1, 2, 1, 1]), false);
    let g = tape.leaf(Tensor::ones(&[2]), false);
    let b = tape.leaf(Tensor::zeros(&[2]), false);
    assert_eq!(tape.batch_norm_train(x, g, b).err(), Some(Error::DegenerateBatch(1)));
}

#[test]
fn global_pool_examples() {
    let mut tape = Tape::<f64>::new();
    let c = tape.leaf(Tensor::full(&[1, 1, 3, 3], 4.0), false);
    let m = tape.global_pool(c, PoolKind::Mean).unwrap();
    let s = tape.global_pool(c, PoolKind::Std).unwrap();
    assert!((tape.value(m).item() - 4.0).abs() < 1e-12);
    assert!(tape.value(s).item() <= 1e-5f64.sqrt() + 1e-15);

    let x = tape.leaf(t(&[1, 1, 1, 2], &[1.0, 3.0]), false);
    let m = tape.global_pool(x, PoolKind::Mean).unwrap();
    let s = tape.global_pool(x, PoolKind::Std).unwrap();
    assert_eq!(tape.value(m).item(), 2.0);
    assert!((tape.value(s).item() - 1.0).abs() < 1e-5);
}

#[test]
fn global_pool_matches_two_pass_loop() {
    let x = randn(&[2, 3, 4, 4], 12);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let m = tape.global_pool(xv, PoolKind::Mean).unwrap();
    let s = tape.global_pool(xv, PoolKind::Std).unwrap();
    for r in 0..6 {
        let vals = &x.data()[r * 16..(r + 1) * 16];
        let mut mean = 0.0;
        for v in vals {
            mean += v;
        }
        mean /= 16.0;
        let mut ss = 0.0;
        for v in vals {
            ss += (v - mean) * (v - mean);
        }
        let std = (ss / 16.0 + 1e-5).sqrt();
        assert!((tape.value(m).data()[r] - mean).abs() <= 1e-10);
        assert!((tape.value(s).data()[r] - std).abs() <= 1e-10);
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let u = tape.leaf(Tensor::full(&[5], 0.3), false);
    let p = tape.softmax(u, 0).unwrap();
    assert!(tape.value(p).data().iter().all(|v| (v - 0.2).abs() < 1e-15));

    let x = tape.leaf(t(&[2], &[0.0, 3f64.ln()]), false);
    let p = tape.softmax(x, 0).unwrap();
    assert!(max_diff(tape.value(p).data(), &[0.25, 0.75]) < 1e-15);

    let r = randn(&[3, 4], 13);
    let shifted = r.map(|v| v + 17.5);
    let a = tape.leaf(r, false);
    let b = tape.leaf(shifted, false);
    let pa = tape.softmax(a, 1).unwrap();
    let pb = tape.softmax(b, 1).unwrap();
    assert!(max_diff(tape.value(pa).data(), tape.value(pb).data()) <= 1e-12);
}

#[test]
fn blur_pool_preserves_constants() {
    let mut tape = Tape::new();
    let c = tape.leaf(Tensor::full(&[1, 2, 5, 6], 0.37), false);
    let y = tape.blur_pool(c).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 3, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.37));
}

#[test]
fn blur_pool_impulse_response() {
    // Oracle: zero-pad the impulse by one pixel, filter at full resolution
    // with the explicit 16ths kernel, then keep even positions.
    let kernel = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
    let mut x = vec![0.0; 16];
    x[2 * 4 + 2] = 1.0;
    let mut full = [[0.0f64; 4]; 4];
    for (i, row) in full.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            for (di, krow) in kernel.iter().enumerate() {
                for (dj, &kv) in krow.iter().enumerate() {
                    let (ii, jj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    if (0..4).contains(&ii) && (0..4).contains(&jj) {
                        *cell += kv / 16.0 * x[ii as usize * 4 + jj as usize];
                    }
                }
            }
        }
    }
    let oracle = [full[0][0], full[0][2], full[2][0], full[2][2]];

    let mut tape = Tape::new();
    let xv = tape.leaf(t(&[1, 1, 4, 4], &x), false);
    let y = tape.blur_pool(xv).unwrap();
    assert!(max_diff(tape.value(y).data(), &oracle) < 1e-15);

    // With the impulse far from the border the full-resolution response
    // carries the whole unit mass.
    let total: f64 = full.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-15);
}

#[test]
fn space_to_depth_round_trip_and_ramp() {
    let x = randn(&[2, 3, 8, 4], 14);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let y = tape.space_to_depth(xv, 4).unwrap();
    assert_eq!(tape.shape(y), &[2, 48, 2, 1]);
    assert_eq!(tape.value(y).len(), x.len());
    let back = depth_to_space(tape.value(y).data(), (2, 3, 8, 4), 4);
    assert!(back.iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let ramp: Vec<f64> = (0..16).map(f64::from).collect();
    let r = tape.leaf(t(&[1, 1, 4, 4], &ramp), false);
    let y = tape.space_to_depth(r, 4).unwrap();
    assert_eq!(tape.shape(y), &[1, 16, 1, 1]);
    let mut got = tape.value(y).data().to_vec();
    got.sort_by(f64::total_cmp);
    assert_eq!(got, ramp);
}

#[test]
fn space_to_depth_rejects_indivisible() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[1, 1, 6, 8]), false);
    assert!(matches!(tape.space_to_depth(x, 4), Err(Error::Dimension(_))));
}

#[test]
fn backward_examples_and_accumulation() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[0.5, -1.0, 2.0]), true);
    let l = tape.sum(x);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 3]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    let mut g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    let again = tape.backward(l).unwrap();
    g.accumulate(&again);
    assert_eq!(g.get(x).unwrap().data(), &[4.0, 8.0]);
}

#[test]
fn constant_graph_cannot_be_differentiated() {
    let mut tape = Tape::<f64>::new();
    let x: Var = tape.leaf(t(&[1], &[1.0]), false);
    let l = tape.sum(x);
    assert!(matches!(tape.backward(l), Err(Error::Contract(_))));
}
