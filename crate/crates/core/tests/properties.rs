use fetr_core::{Mode, ParamStore, Session, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, range: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-range..range, n).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

fn map4() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..4, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(b, c, h, w)| tensor(vec![b, c, 2 * h, 2 * w], 10.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        x in (1usize..5, 1usize..9).prop_flat_map(|(r, c)| tensor(vec![r, c], 30.0)),
        shift in -50.0f64..50.0,
    ) {
        let store = ParamStore::<f64>::new();
        let mut s = Session::new(&store, Mode::Eval);
        let cols = x.shape()[1];
        let a = s.input(x.clone());
        let b = s.input(x.map(|v| v + shift));
        let pa = s.softmax(a, 1).unwrap();
        let pb = s.softmax(b, 1).unwrap();
        for (ra, rb) in s.value(pa).data().chunks(cols).zip(s.value(pb).data().chunks(cols)) {
            prop_assert!((ra.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            for (u, v) in ra.iter().zip(rb) {
                prop_assert!(*u > 0.0);
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn train_batch_norm_standardises(x in map4()) {
        let (b, c, h, w) = x.dims4().unwrap();
        let n = b * h * w;
        let store = ParamStore::<f64>::new();
        let mut s = Session::new(&store, Mode::Train);
        let xv = s.input(x.clone());
        let g = s.input(Tensor::ones(&[c]));
        let beta = s.input(Tensor::zeros(&[c]));
        let (y, _, _) = s.batch_norm_train(xv, g, beta).unwrap();
        let y = s.value(y).data();
        for ch in 0..c {
            let vals: Vec<f64> = (0..b)
                .flat_map(|bi| y[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-5);
            // channels with (near-)zero spread stay near zero instead of unit variance
            let raw: Vec<f64> = (0..b)
                .flat_map(|bi| x.data()[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w].to_vec())
                .collect();
            let raw_mean = raw.iter().sum::<f64>() / n as f64;
            let raw_var = raw.iter().map(|v| (v - raw_mean) * (v - raw_mean)).sum::<f64>() / n as f64;
            if raw_var > 1e-1 {
                prop_assert!((var - 1.0).abs() <= 1e-4, "var {var}");
            }
        }
    }

    #[test]
    fn space_to_depth_round_trips(
        x in (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..4)
            .prop_flat_map(|(b, c, h, w, k)| (tensor(vec![b, c, h * k, w * k], 1.0), Just(k)))
    ) {
        let (x, k) = x;
        let store = ParamStore::<f64>::new();
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = s.space_to_depth(xv, k).unwrap();
        let (b, c, h, w) = x.dims4().unwrap();
        prop_assert_eq!(s.shape(y), &[b, c * k * k, h / k, w / k][..]);
        let mut seen = s.value(y).data().to_vec();
        let mut orig = x.data().to_vec();
        seen.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, orig);
        // the inverse permutation
        let out = s.value(y).data();
        for bi in 0..b {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let oc = ((i % k) * k + j % k) * c + ch;
                        let at = ((bi * c * k * k + oc) * (h / k) + i / k) * (w / k) + j / k;
                        prop_assert_eq!(out[at], x.data()[((bi * c + ch) * h + i) * w + j]);
                    }
                }
            }
        }
    }

    #[test]
    fn blur_pool_preserves_constants(
        dims in (1usize..3, 1usize..4, 2usize..9, 2usize..9),
        value in -100.0f64..100.0,
    ) {
        let (b, c, h, w) = dims;
        let store = ParamStore::<f64>::new();
        let mut s = Session::new(&store, Mode::Eval);
        let x = s.input(Tensor::full(&[b, c, h, w], value));
        let y = s.blur_pool(x).unwrap();
        prop_assert_eq!(s.shape(y), &[b, c, h.div_ceil(2), w.div_ceil(2)][..]);
        prop_assert!(s.value(y).data().iter().all(|&v| v == value));
    }
}
