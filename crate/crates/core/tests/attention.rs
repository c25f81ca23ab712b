mod support;

use fetr_core::attention::{Dca, SqueezeExcite, StyleRm};
use fetr_core::gradcheck::make_generic;
use fetr_core::{seeded_rng, Error, Mode, ParamStore, Session, Tensor};

use support::attention::{dca_store, masked_attention_oracle, position_jacobian, projection};

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut seeded_rng(seed))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn style_oracle(x: &Tensor<f64>) -> Vec<(f64, f64)> {
    let (b, c, h, w) = x.dims4().unwrap();
    let n = (h * w) as f64;
    (0..b * c)
        .map(|r| {
            let vals = &x.data()[r * h * w..(r + 1) * h * w];
            let mut mean = 0.0;
            for v in vals {
                mean += v;
            }
            mean /= n;
            let mut var = 0.0;
            for v in vals {
                var += (v - mean) * (v - mean);
            }
            (mean, (var / n + 1e-5).sqrt())
        })
        .collect()
}

#[test]
fn style_pool_examples() {
    let store = ParamStore::<f64>::new();
    let mut s = Session::new(&store, Mode::Eval);
    let x = s.input(Tensor::full(&[1, 1, 3, 3], 5.0));
    let t = StyleRm::style_pool(&mut s, x).unwrap();
    assert_eq!(s.shape(t), &[1, 1, 2]);
    assert!((s.value(t).data()[0] - 5.0).abs() < 1e-12);
    assert!(s.value(t).data()[1] <= 1e-5f64.sqrt() + 1e-15);

    let x = s.input(Tensor::from_f64(&[1, 1, 2, 2], &[0.0, 0.0, 2.0, 2.0]).unwrap());
    let t = StyleRm::style_pool(&mut s, x).unwrap();
    assert_eq!(s.value(t).data()[0], 1.0);
    assert!((s.value(t).data()[1] - 1.0).abs() < 1e-5);
}

#[test]
fn style_pool_matches_loop_oracle() {
    let x = randn(&[2, 3, 8, 8], 1);
    let store = ParamStore::<f64>::new();
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let t = StyleRm::style_pool(&mut s, xv).unwrap();
    for (r, (m, sd)) in style_oracle(&x).into_iter().enumerate() {
        assert!((s.value(t).data()[2 * r] - m).abs() <= 1e-10);
        assert!((s.value(t).data()[2 * r + 1] - sd).abs() <= 1e-10);
        assert!(s.value(t).data()[2 * r + 1] >= 0.0);
    }
}

fn stylerm_store(c: usize, seed: u64) -> (ParamStore<f64>, StyleRm) {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let m = StyleRm::new(&mut store, "srm", c, &mut rng);
    make_generic(&mut store, &mut rng);
    (store, m)
}

#[test]
fn zero_encoding_gives_sigmoid_of_shift() {
    let (mut store, m) = stylerm_store(3, 2);
    *store.value_mut(m.cfc) = Tensor::zeros(&[3, 2]);
    let beta = store.value(m.bn.ids.beta).clone();
    let mut s = Session::new(&store, Mode::Train);
    let t = s.input(randn(&[4, 3, 2], 3));
    let g = m.integrate(&mut s, t).unwrap();
    for b in 0..4 {
        for c in 0..3 {
            assert!((s.value(g).data()[b * 3 + c] - sigmoid(beta.data()[c])).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_styles_give_sigmoid_of_shift() {
    let (store, m) = stylerm_store(2, 4);
    let beta = store.value(m.bn.ids.beta).clone();
    let one = [0.7, 1.3, -0.4, 0.9];
    let t: Vec<f64> = one.iter().cycle().take(12).copied().collect();
    let mut s = Session::new(&store, Mode::Train);
    let tv = s.input(Tensor::from_f64(&[3, 2, 2], &t).unwrap());
    let g = m.integrate(&mut s, tv).unwrap();
    for b in 0..3 {
        for c in 0..2 {
            assert!((s.value(g).data()[b * 2 + c] - sigmoid(beta.data()[c])).abs() < 1e-12);
        }
    }
}

#[test]
fn gates_match_composition_oracle() {
    let (store, m) = stylerm_store(3, 5);
    let x = randn(&[4, 3, 5, 5], 6);
    let mut s = Session::new(&store, Mode::Train);
    let xv = s.input(x.clone());
    let t = StyleRm::style_pool(&mut s, xv).unwrap();
    let g = m.integrate(&mut s, t).unwrap();

    let styles = style_oracle(&x);
    let w = store.value(m.cfc).data();
    let gamma = store.value(m.bn.ids.gamma).data();
    let beta = store.value(m.bn.ids.beta).data();
    for c in 0..3 {
        let z: Vec<f64> = (0..4)
            .map(|b| {
                let (mu, sd) = styles[b * 3 + c];
                w[2 * c] * mu + w[2 * c + 1] * sd
            })
            .collect();
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        for b in 0..4 {
            let expect = sigmoid(gamma[c] * (z[b] - mean) / (var + 1e-5).sqrt() + beta[c]);
            assert!((s.value(g).data()[b * 3 + c] - expect).abs() <= 1e-10);
        }
    }
}

#[test]
fn stylerm_rejects_batch_of_one_in_training() {
    let (store, m) = stylerm_store(2, 7);
    let mut s = Session::new(&store, Mode::Train);
    let x = s.input(randn(&[1, 2, 4, 4], 8));
    assert!(matches!(m.forward(&mut s, x), Err(Error::DegenerateBatch(1))));
}

#[test]
fn gate_application_examples() {
    let store = ParamStore::<f64>::new();
    let mut s = Session::new(&store, Mode::Eval);
    let x = randn(&[2, 3, 4, 4], 9);
    let xv = s.input(x.clone());
    let ones = s.input(Tensor::ones(&[2, 3]));
    let y = s.channel_scale(xv, ones).unwrap();
    assert_eq!(s.value(y), &x);

    let twos = s.input(Tensor::full(&[1, 2, 3, 3], 2.0));
    let half = s.input(Tensor::full(&[1, 2], 0.5));
    let y = s.channel_scale(twos, half).unwrap();
    assert!(s.value(y).data().iter().all(|&v| v == 1.0));
}

#[test]
fn stylerm_output_is_channelwise_rescaled_input() {
    let (store, m) = stylerm_store(4, 10);
    let x = randn(&[3, 4, 5, 5], 11);
    let mut s = Session::new(&store, Mode::Train);
    let xv = s.input(x.clone());
    let y = m.forward(&mut s, xv).unwrap();
    assert_eq!(s.shape(y), x.shape());
    let g = m.gate(&mut s, xv).unwrap();
    assert!(s.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let out = s.value(y).data();
    for r in 0..12 {
        let ratio0 = out[r * 25] / x.data()[r * 25];
        for i in 0..25 {
            let ratio = out[r * 25 + i] / x.data()[r * 25 + i];
            assert!((ratio - ratio0).abs() <= 1e-12 * ratio0.abs().max(1.0));
        }
    }
}

fn se_store(c: usize, seed: u64) -> (ParamStore<f64>, SqueezeExcite) {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    let m = SqueezeExcite::new(&mut store, "se", c, 4, &mut rng).unwrap();
    (store, m)
}

#[test]
fn se_zero_logits_halve_input() {
    let (mut store, m) = se_store(8, 12);
    *store.value_mut(m.fc2.weight) = Tensor::zeros(&[8, 2]);
    let x = randn(&[2, 8, 3, 3], 13);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = m.forward(&mut s, xv).unwrap();
    assert!(s.value(y).data().iter().zip(x.data()).all(|(a, b)| *a == b / 2.0));
}

#[test]
fn se_is_batch_equivariant() {
    let (store, m) = se_store(8, 14);
    let x = randn(&[3, 8, 4, 4], 15);
    let per = 8 * 16;
    let perm = [2usize, 0, 1];
    let mut xp = Vec::new();
    for &b in &perm {
        xp.extend_from_slice(&x.data()[b * per..(b + 1) * per]);
    }
    let mut s = Session::new(&store, Mode::Eval);
    let a = s.input(x);
    let ya = m.forward(&mut s, a).unwrap();
    let b = s.input(Tensor::from_f64(&[3, 8, 4, 4], &xp).unwrap());
    let yb = m.forward(&mut s, b).unwrap();
    for (i, &src) in perm.iter().enumerate() {
        assert_eq!(
            &s.value(yb).data()[i * per..(i + 1) * per],
            &s.value(ya).data()[src * per..(src + 1) * per]
        );
    }
}

#[test]
fn se_matches_composition_oracle() {
    let (store, m) = se_store(8, 16);
    let x = randn(&[2, 8, 3, 4], 17);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = m.forward(&mut s, xv).unwrap();
    let (w1, w2) = (store.value(m.fc1.weight).data(), store.value(m.fc2.weight).data());
    for b in 0..2 {
        let pooled: Vec<f64> = (0..8)
            .map(|c| x.data()[(b * 8 + c) * 12..(b * 8 + c + 1) * 12].iter().sum::<f64>() / 12.0)
            .collect();
        let hidden: Vec<f64> = (0..2)
            .map(|j| (0..8).map(|c| w1[j * 8 + c] * pooled[c]).sum::<f64>().max(0.0))
            .collect();
        for c in 0..8 {
            let gate = sigmoid((0..2).map(|j| w2[c * 2 + j] * hidden[j]).sum());
            assert!(gate > 0.0 && gate < 1.0);
            for i in 0..12 {
                let k = (b * 8 + c) * 12 + i;
                assert!((s.value(y).data()[k] - x.data()[k] * gate).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn cca_singleton_map_adds_value() {
    let (store, m) = dca_store(4, 1, 18);
    let x = randn(&[2, 4, 1, 1], 19);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = m.cca_pass(&mut s, xv).unwrap();
    let v = projection(&store, &m.value, x.data(), 4, 1, 2);
    for i in 0..8 {
        assert!((s.value(y).data()[i] - (v[i] + x.data()[i])).abs() < 1e-14);
    }
}

#[test]
fn cca_scores_seven_positions_on_four_by_four() {
    let (store, m) = dca_store(8, 1, 20);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(randn(&[1, 8, 4, 4], 21));
    let before = s.counters();
    let y = m.cca_pass(&mut s, xv).unwrap();
    assert_eq!(s.counters().score_elements - before.score_elements, 7 * 16);
    assert_eq!(s.attention_weights(y).unwrap().len(), 7 * 16);
}

#[test]
fn cca_matches_masked_dense_oracle() {
    for n in 2..=6 {
        let (store, m) = dca_store(8, 1, 22 + n as u64);
        let x = randn(&[2, 8, n, n], 40 + n as u64);
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = m.cca_pass(&mut s, xv).unwrap();
        let oracle = masked_attention_oracle(&store, &m, &x, |u, key| u / n == key / n || u % n == key % n);
        let err = s
            .value(y)
            .data()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{n}x{n}: {err}");

        let mask: Vec<bool> = (0..n * n * n * n)
            .map(|i| {
                let (u, key) = (i / (n * n), i % (n * n));
                u / n == key / n || u % n == key % n
            })
            .collect();
        let d = m.nonlocal_forward(&mut s, xv, Some(mask)).unwrap();
        let err = s
            .value(y)
            .data()
            .iter()
            .zip(s.value(d).data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{n}x{n} masked non-local: {err}");
    }
}

#[test]
fn nonlocal_matches_dense_oracle_and_guards_size() {
    let (store, m) = dca_store(8, 1, 30);
    let x = randn(&[1, 8, 3, 4], 31);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = m.nonlocal_forward(&mut s, xv, None).unwrap();
    let oracle = masked_attention_oracle(&store, &m, &x, |_, _| true);
    let err = s
        .value(y)
        .data()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-10);

    let big = s.input(Tensor::zeros(&[1, 8, 65, 64]));
    assert!(matches!(m.nonlocal_forward(&mut s, big, None), Err(Error::Resource(_))));
}

#[test]
fn dca_singleton_applies_pass_twice() {
    let (store, m) = dca_store(4, 2, 32);
    let x = randn(&[1, 4, 1, 1], 33);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let y = m.forward(&mut s, xv).unwrap();
    let v1 = projection(&store, &m.value, x.data(), 4, 1, 1);
    let r1: Vec<f64> = x.data().iter().zip(&v1).map(|(a, b)| a + b).collect();
    let v2 = projection(&store, &m.value, &r1, 4, 1, 1);
    for i in 0..4 {
        assert!((s.value(y).data()[i] - (r1[i] + v2[i])).abs() < 1e-13);
    }
}

#[test]
fn dca_passes_share_parameters() {
    let mut one = ParamStore::<f64>::new();
    let mut two = ParamStore::<f64>::new();
    Dca::new(&mut one, "dca", 32, 1, &mut seeded_rng(1)).unwrap();
    Dca::new(&mut two, "dca", 32, 2, &mut seeded_rng(1)).unwrap();
    assert_eq!(one.num_trainable(), two.num_trainable());
    assert_eq!(one.num_trainable(), Dca::parameter_count(32));
    assert_eq!(Dca::parameter_count(32), 3 * 32 + 2 * 32 * 4 + 32 * 32);
}

#[test]
fn single_pass_is_local_and_two_passes_are_global() {
    let (store, m) = dca_store(8, 2, 34);
    let x = randn(&[1, 8, 5, 5], 35);
    let one = position_jacobian(&store, &m, 1, &x);
    let two = position_jacobian(&store, &m, 2, &x);
    for u in 0..25 {
        for v in 0..25 {
            let same_line = u / 5 == v / 5 || u % 5 == v % 5;
            if same_line {
                assert!(one[u * 25 + v] > 0.0);
            } else {
                assert_eq!(one[u * 25 + v], 0.0, "({u}, {v})");
            }
            assert!(two[u * 25 + v] > 0.0, "({u}, {v})");
        }
    }
}

#[test]
fn modules_preserve_shape() {
    let x = randn(&[2, 8, 4, 6], 36);
    let (store, dca) = dca_store(8, 2, 37);
    let mut s = Session::new(&store, Mode::Train);
    let xv = s.input(x.clone());
    let y = dca.forward(&mut s, xv).unwrap();
    assert_eq!(s.shape(y), x.shape());

    let (store, se) = se_store(8, 38);
    let mut s = Session::new(&store, Mode::Train);
    let xv = s.input(x.clone());
    let y = se.forward(&mut s, xv).unwrap();
    assert_eq!(s.shape(y), x.shape());
}

#[test]
fn se_reduction_must_divide_channels() {
    let mut store = ParamStore::<f64>::new();
    assert!(matches!(
        SqueezeExcite::new(&mut store, "se", 6, 4, &mut seeded_rng(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn counters_follow_closed_forms() {
    let c = 32;
    let mut store = ParamStore::<f32>::new();
    let m = Dca::new(&mut store, "dca", c, 1, &mut seeded_rng(50)).unwrap();
    let cq = (c / 8) as u64;
    for n in [8usize, 16, 32, 64] {
        let x = Tensor::<f32>::zeros(&[1, c, n, n]);
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x.clone());
        m.cca_pass(&mut s, xv).unwrap();
        let cc = s.counters();
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x);
        m.nonlocal_forward(&mut s, xv, None).unwrap();
        let nl = s.counters();
        let n = n as u64;
        let line = n * n * (2 * n - 1);
        assert_eq!(
            (cc.score_elements, cc.score_macs, cc.aggregate_macs),
            (line, line * cq, line * c as u64)
        );
        let dense = n * n * n * n;
        assert_eq!(
            (nl.score_elements, nl.score_macs, nl.aggregate_macs),
            (dense, dense * cq, dense * c as u64)
        );
        if n == 64 {
            assert_eq!(cc.score_elements * 4096, nl.score_elements * 127);
        }
    }
}
