mod common;

use common::TestRng;
use gazelearn_core::tape::{BnMode, Tape};
use gazelearn_core::Tensor;

#[test]
fn maxpool_ramp_takes_window_maxima() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap());
    let out = tape.maxpool2d(x, 2, 2, 0).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 2, 2]);
    assert_eq!(tape.value(out).data(), &[5.0, 7.0, 13.0, 15.0]);
}

#[test]
fn maxpool_constant_routes_gradient_to_first_cell() {
    let mut tape = Tape::new(true);
    let x = tape.leaf(Tensor::new(vec![1, 4, 4], vec![2.5f64; 16]).unwrap());
    let pooled = tape.maxpool2d(x, 2, 2, 0).unwrap();
    assert!(tape.value(pooled).data().iter().all(|&v| v == 2.5));
    let total = tape.sum(pooled).unwrap();
    let grads = tape.backward(total, 1.0).unwrap();
    let gx = grads.get(x).unwrap();
    // first (row-major) cell of each 2x2 window gets the gradient
    let want = [
        1.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, //
        1.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0,
    ];
    assert_eq!(gx.data(), &want);
}

#[test]
fn maxpool_matches_bruteforce_scan() {
    let mut rng = TestRng(314);
    for trial in 0..20 {
        let x = rng.vec(2 * 6 * 6);
        let (k, stride, padding) = ([3usize, 2, 3][trial % 3], [2usize, 1, 2][trial % 3], [0usize, 0, 1][trial % 3]);
        let mut tape = Tape::new(false);
        let xv = tape.leaf(Tensor::new(vec![2, 6, 6], x.clone()).unwrap());
        let out = tape.maxpool2d(xv, k, stride, padding).unwrap();
        let &[_, oh, ow] = tape.value(out).shape() else { panic!() };
        for c in 0..2 {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for n in 0..k {
                        for m in 0..k {
                            let ii = (i * stride + n) as isize - padding as isize;
                            let jj = (j * stride + m) as isize - padding as isize;
                            if ii >= 0 && ii < 6 && jj >= 0 && jj < 6 {
                                best = best.max(x[(c * 6 + ii as usize) * 6 + jj as usize]);
                            }
                        }
                    }
                    assert_eq!(tape.value(out).data()[(c * oh + i) * ow + j], best);
                }
            }
        }
    }
}

#[test]
fn global_avg_pool_cases() {
    let mut tape = Tape::new(false);
    let c = tape.leaf(Tensor::new(vec![2, 3, 3], vec![0.6f64; 18]).unwrap());
    let out = tape.global_avg_pool(c).unwrap();
    assert_eq!(tape.value(out).data(), &[0.6, 0.6]);

    let mut one_hot = vec![0.0f64; 4];
    one_hot[2] = 1.0;
    let oh = tape.leaf(Tensor::new(vec![1, 2, 2], one_hot).unwrap());
    let out = tape.global_avg_pool(oh).unwrap();
    assert_eq!(tape.value(out).data(), &[0.25]);

    // random map vs independent 64-bit summation
    let mut rng = TestRng(9);
    let x = rng.vec(3 * 4 * 5);
    let xv = tape.leaf(Tensor::new(vec![3, 4, 5], x.clone()).unwrap());
    let out = tape.global_avg_pool(xv).unwrap();
    for ch in 0..3 {
        let want: f64 = x[ch * 20..(ch + 1) * 20].iter().sum::<f64>() / 20.0;
        assert!((tape.value(out).data()[ch] - want).abs() < 1e-15);
    }
}

#[test]
fn activation_and_linear_basics() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(Tensor::new(vec![2], vec![-1.0f64, 2.0]).unwrap());
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 2.0]);

    let z = tape.leaf(Tensor::new(vec![1], vec![0.0f64]).unwrap());
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5]);

    let v = tape.leaf(Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap());
    let eye = tape.leaf(Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let zero = tape.leaf(Tensor::zeros(vec![3]));
    let out = tape.linear(v, eye, zero).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(v).data());
}

#[test]
fn softmax_spatial_contracts() {
    let mut tape = Tape::new(false);
    // constant map → uniform
    let a = tape.leaf(Tensor::new(vec![3, 4], vec![1.7f64; 12]).unwrap());
    let s = tape.softmax_spatial(a).unwrap();
    for &v in tape.value(s).data() {
        assert!((v - 1.0 / 12.0).abs() < 1e-12);
    }

    // dominant entry
    let mut big = vec![0.0f64; 12];
    big[5] = 1000.0;
    let b = tape.leaf(Tensor::new(vec![3, 4], big).unwrap());
    let s = tape.softmax_spatial(b).unwrap();
    assert!(tape.value(s).data()[5] > 0.999_999);

    // hand-evaluated two-entry case
    let c = tape.leaf(Tensor::new(vec![1, 2], vec![0.0f64, 3.0f64.ln()]).unwrap());
    let s = tape.softmax_spatial(c).unwrap();
    assert!((tape.value(s).data()[0] - 0.25).abs() < 1e-12);
    assert!((tape.value(s).data()[1] - 0.75).abs() < 1e-12);

    // sum-to-one and shift invariance on random maps
    let mut rng = TestRng(21);
    for _ in 0..50 {
        let raw = rng.vec(30);
        let shifted: Vec<f64> = raw.iter().map(|v| v + 123.456).collect();
        let a = tape.leaf(Tensor::new(vec![5, 6], raw).unwrap());
        let b = tape.leaf(Tensor::new(vec![5, 6], shifted).unwrap());
        let sa = tape.softmax_spatial(a).unwrap();
        let sb = tape.softmax_spatial(b).unwrap();
        let total: f64 = tape.value(sa).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(tape.value(sa).data().iter().all(|&v| v > 0.0));
        for (u, v) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_positivity_survives_extreme_spread_f32() {
    let mut tape = Tape::<f32>::new(false);
    let mut a = vec![0.0f32; 16];
    a[0] = 200.0; // e^-200 underflows f32; the floor must keep entries positive
    let av = tape.leaf(Tensor::new(vec![4, 4], a).unwrap());
    let s = tape.softmax_spatial(av).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v > 0.0));
    let total: f32 = tape.value(s).data().iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::new(false);
    let z = tape.leaf(Tensor::new(vec![4], vec![0.3f64; 4]).unwrap());
    let l = tape.cross_entropy(z, 2).unwrap();
    assert!((tape.value(l).data()[0] - 4.0f64.ln()).abs() < 1e-12);

    // dominant correct logit → loss → 0
    let z = tape.leaf(Tensor::new(vec![3], vec![100.0f64, 0.0, 0.0]).unwrap());
    let l = tape.cross_entropy(z, 0).unwrap();
    assert!(tape.value(l).data()[0] < 1e-12);

    // z=[1,2], label 0 → ln(1+e)
    let z = tape.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
    let l = tape.cross_entropy(z, 0).unwrap();
    assert!((tape.value(l).data()[0] - (1.0 + std::f64::consts::E).ln()).abs() < 1e-12);

    // out-of-range label
    let z = tape.leaf(Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap());
    assert!(tape.cross_entropy(z, 2).is_err());
}

#[test]
fn softmax_vec_matches_cross_entropy_probs() {
    let mut tape = Tape::new(false);
    let z = tape.leaf(Tensor::new(vec![3], vec![0.1f64, -1.2, 2.0]).unwrap());
    let p = tape.softmax_vec(z).unwrap();
    let total: f64 = tape.value(p).data().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    let l = tape.cross_entropy(z, 1).unwrap();
    assert!((tape.value(l).data()[0] + tape.value(p).data()[1].ln()).abs() < 1e-12);
}

#[test]
fn batchnorm_eval_identity_and_train_constant() {
    let mut tape = Tape::new(false);
    let rm = Tensor::zeros(vec![2]);
    let rv = Tensor::new(vec![2], vec![1.0f64, 1.0]).unwrap();
    let scale = tape.leaf(Tensor::new(vec![2], vec![1.0f64, 1.0]).unwrap());
    let shift = tape.leaf(Tensor::zeros(vec![2]));

    let mut rng = TestRng(3);
    let x = rng.vec(2 * 3 * 3);
    let xv = tape.leaf(Tensor::new(vec![2, 3, 3], x.clone()).unwrap());
    let (y, stats) = tape.batchnorm2d(xv, scale, shift, &rm, &rv, BnMode::Eval, 1e-5).unwrap();
    assert!(stats.is_none());
    for (a, b) in tape.value(y).data().iter().zip(&x) {
        assert!((a - b).abs() < 1e-4, "eval with unit running state ≈ identity");
    }

    let c = tape.leaf(Tensor::new(vec![2, 3, 3], vec![5.0f64; 18]).unwrap());
    let (y, stats) = tape.batchnorm2d(c, scale, shift, &rm, &rv, BnMode::Train, 1e-5).unwrap();
    let stats = stats.unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v.abs() < 1e-9), "constant channel → zeros");
    assert_eq!(stats.mean, vec![5.0, 5.0]);
    assert_eq!(stats.var, vec![0.0, 0.0]);
}

#[test]
fn batchnorm_train_eval_converge_on_fixed_input() {
    // feed the same sample repeatedly, fold its stats into running state
    // with momentum 0.1; eval must approach train output
    let mut rng = TestRng(17);
    let x = rng.vec(3 * 4 * 4);
    let mut rm = Tensor::zeros(vec![3]);
    let mut rv = Tensor::new(vec![3], vec![1.0f64; 3]).unwrap();
    let momentum = 0.1;
    let mut train_out = None;
    for _ in 0..200 {
        let mut tape = Tape::new(false);
        let scale = tape.leaf(Tensor::new(vec![3], vec![1.3f64; 3]).unwrap());
        let shift = tape.leaf(Tensor::new(vec![3], vec![-0.2f64; 3]).unwrap());
        let xv = tape.leaf(Tensor::new(vec![3, 4, 4], x.clone()).unwrap());
        let (y, stats) = tape.batchnorm2d(xv, scale, shift, &rm, &rv, BnMode::Train, 1e-5).unwrap();
        let stats = stats.unwrap();
        for c in 0..3 {
            let m = rm.data()[c] * (1.0 - momentum) + stats.mean[c] * momentum;
            let v = rv.data()[c] * (1.0 - momentum) + stats.var[c] * momentum;
            rm.data_mut()[c] = m;
            rv.data_mut()[c] = v;
        }
        train_out = Some(tape.value(y).clone());
    }
    let mut tape = Tape::new(false);
    let scale = tape.leaf(Tensor::new(vec![3], vec![1.3f64; 3]).unwrap());
    let shift = tape.leaf(Tensor::new(vec![3], vec![-0.2f64; 3]).unwrap());
    let xv = tape.leaf(Tensor::new(vec![3, 4, 4], x.clone()).unwrap());
    let (y, _) = tape.batchnorm2d(xv, scale, shift, &rm, &rv, BnMode::Eval, 1e-5).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(train_out.unwrap().data()) {
        assert!((a - b).abs() < 1e-3, "eval {a} vs train {b}");
    }
}

#[test]
fn kld_loss_cases() {
    let mut tape = Tape::new(false);
    let t = Tensor::new(vec![1, 2], vec![0.5f64, 0.5]).unwrap();
    let same = tape.leaf(t.clone());
    let l = tape.kld_loss(&t, same).unwrap();
    assert!(tape.value(l).data()[0].abs() < 1e-15);

    let p = tape.leaf(Tensor::new(vec![1, 2], vec![0.25f64, 0.75]).unwrap());
    let l = tape.kld_loss(&t, p).unwrap();
    assert!((tape.value(l).data()[0] - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-12);

    // zero target entries contribute nothing (0·log 0 := 0)
    let t0 = Tensor::new(vec![1, 2], vec![0.0f64, 1.0]).unwrap();
    let p = tape.leaf(Tensor::new(vec![1, 2], vec![0.5f64, 0.5]).unwrap());
    let l = tape.kld_loss(&t0, p).unwrap();
    assert!((tape.value(l).data()[0] - 2.0f64.ln()).abs() < 1e-12);

    // nonnegativity over random distribution pairs
    let mut rng = TestRng(55);
    for _ in 0..1000 {
        let mut a: Vec<f64> = rng.vec(8).iter().map(|v| v.abs() + 1e-3).collect();
        let mut b: Vec<f64> = rng.vec(8).iter().map(|v| v.abs() + 1e-3).collect();
        let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
        a.iter_mut().for_each(|v| *v /= sa);
        b.iter_mut().for_each(|v| *v /= sb);
        let t = Tensor::new(vec![2, 4], a).unwrap();
        let p = tape.leaf(Tensor::new(vec![2, 4], b).unwrap());
        let l = tape.kld_loss(&t, p).unwrap();
        assert!(tape.value(l).data()[0] >= -1e-12);
    }
}

#[test]
fn soft_argmax_cases() {
    let mut tape = Tape::new(false);
    let mut one_hot = vec![0.0f64; 16];
    one_hot[0] = 1.0;
    let p = tape.leaf(Tensor::new(vec![4, 4], one_hot).unwrap());
    let out = tape.soft_argmax(p, 32, 32).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 4.0]);

    let u = tape.leaf(Tensor::new(vec![4, 4], vec![1.0 / 16.0; 16]).unwrap());
    let out = tape.soft_argmax(u, 32, 32).unwrap();
    assert!((tape.value(out).data()[0] - 16.0).abs() < 1e-12);
    assert!((tape.value(out).data()[1] - 16.0).abs() < 1e-12);

    let mut two = vec![0.0f64; 16];
    two[0] = 0.5;
    two[15] = 0.5;
    let p = tape.leaf(Tensor::new(vec![4, 4], two).unwrap());
    let out = tape.soft_argmax(p, 32, 32).unwrap();
    assert_eq!(tape.value(out).data(), &[16.0, 16.0]);
}

#[test]
fn euclid_loss_cases() {
    let mut tape = Tape::new(true);
    let p = tape.leaf(Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap());
    let l = tape.euclid_loss((0.0, 0.0), p).unwrap();
    assert_eq!(tape.value(l).data()[0], 5.0);
    let grads = tape.backward(l, 1.0).unwrap();
    let g = grads.get(p).unwrap();
    // unit vector toward the prediction
    assert!((g.data()[0] - 0.6).abs() < 1e-12);
    assert!((g.data()[1] - 0.8).abs() < 1e-12);

    let mut tape = Tape::new(true);
    let p = tape.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
    let l = tape.euclid_loss((1.0, 2.0), p).unwrap();
    assert_eq!(tape.value(l).data()[0], 0.0);
    let grads = tape.backward(l, 1.0).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0], "gradient defined as 0 at coincidence");
}

#[test]
fn nonfinite_forward_is_an_error() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(Tensor::new(vec![1], vec![1e308f64]).unwrap());
    let w = tape.leaf(Tensor::new(vec![1, 1], vec![1e308f64]).unwrap());
    let b = tape.leaf(Tensor::zeros(vec![1]));
    let r = tape.linear(x, w, b);
    assert!(matches!(r, Err(gazelearn_core::Error::NonFinite(_))));
}
