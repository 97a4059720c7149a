mod common;

use common::{conv_naive, TestRng};
use gazelearn_core::tape::{ConvSpec, Tape};
use gazelearn_core::Tensor;

fn run_conv(
    x: Vec<f64>,
    x_shape: [usize; 3],
    w: Vec<f64>,
    w_shape: [usize; 4],
    bias: Option<Vec<f64>>,
    spec: ConvSpec,
) -> Tensor<f64> {
    let mut tape = Tape::new(false);
    let xv = tape.leaf(Tensor::new(x_shape.to_vec(), x).unwrap());
    let wv = tape.leaf(Tensor::new(w_shape.to_vec(), w).unwrap());
    let bv = bias.map(|b| tape.leaf(Tensor::new(vec![w_shape[0]], b).unwrap()));
    let out = tape.conv2d(xv, wv, bv, spec).unwrap();
    tape.value(out).clone()
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut rng = TestRng(7);
    let x = rng.vec(25);
    let mut w = vec![0.0; 9];
    w[4] = 1.0; // center of the 3x3 kernel
    let out = run_conv(
        x.clone(),
        [1, 5, 5],
        w,
        [1, 1, 3, 3],
        None,
        ConvSpec { stride: 1, dilation: 1, padding: 1, groups: 1 },
    );
    assert_eq!(out.shape(), &[1, 5, 5]);
    for (o, xi) in out.data().iter().zip(&x) {
        assert_eq!(o, xi);
    }
}

#[test]
fn dilated_ones_kernel_on_constant_input() {
    let c = 0.37;
    let out = run_conv(
        vec![c; 9 * 9],
        [1, 9, 9],
        vec![1.0; 9],
        [1, 1, 3, 3],
        None,
        ConvSpec { stride: 1, dilation: 2, padding: 2, groups: 1 },
    );
    assert_eq!(out.shape(), &[1, 9, 9]);
    // interior cells see all nine taps
    for i in 2..7 {
        for j in 2..7 {
            let v = out.data()[i * 9 + j];
            assert!((v - 9.0 * c).abs() < 1e-12, "cell ({i},{j}) = {v}");
        }
    }
}

#[test]
fn dilated_no_padding_matches_naive_oracle() {
    let mut rng = TestRng(42);
    let x = rng.vec(49);
    let w = rng.vec(9);
    let (want, oh, ow) = conv_naive(&x, (1, 7, 7), &w, (1, 1, 3), None, 1, 2, 0, 1);
    assert_eq!((oh, ow), (3, 3));
    let out = run_conv(
        x,
        [1, 7, 7],
        w,
        [1, 1, 3, 3],
        None,
        ConvSpec { stride: 1, dilation: 2, padding: 0, groups: 1 },
    );
    assert_eq!(out.shape(), &[1, 3, 3]);
    assert_eq!(out.data(), &want[..], "must match the nested-loop oracle element-for-element");
}

#[test]
fn plain_conv_bitexact_against_oracle_f64() {
    // stride/padding/bias combinations, l=1, groups=1: bit-for-bit equality
    let mut rng = TestRng(1001);
    for &(c_in, c_out, h, w, k, stride, padding) in &[
        (1usize, 1usize, 5usize, 5usize, 3usize, 1usize, 0usize),
        (2, 3, 6, 7, 3, 1, 1),
        (3, 2, 8, 8, 3, 2, 1),
        (2, 4, 9, 11, 1, 1, 0),
        (1, 2, 10, 10, 7, 2, 3),
    ] {
        let x = rng.vec(c_in * h * w);
        let ker = rng.vec(c_out * c_in * k * k);
        let bias = rng.vec(c_out);
        let (want, oh, ow) =
            conv_naive(&x, (c_in, h, w), &ker, (c_out, c_in, k), Some(&bias), stride, 1, padding, 1);
        let out = run_conv(
            x,
            [c_in, h, w],
            ker,
            [c_out, c_in, k, k],
            Some(bias),
            ConvSpec { stride, dilation: 1, padding, groups: 1 },
        );
        assert_eq!(out.shape(), &[c_out, oh, ow]);
        assert_eq!(out.data(), &want[..], "config {c_in}x{c_out} k{k} s{stride} p{padding}");
    }
}

#[test]
fn grouped_and_dilated_conv_matches_oracle() {
    let mut rng = TestRng(77);
    for &(c_in, c_out, groups, h, w, k, stride, dilation, padding) in &[
        (4usize, 4usize, 2usize, 8usize, 8usize, 3usize, 1usize, 1usize, 1usize),
        (4, 8, 4, 7, 9, 3, 2, 1, 1),
        (6, 6, 3, 10, 10, 3, 1, 2, 2),
        (8, 8, 8, 6, 6, 3, 1, 1, 1), // depthwise
        (4, 2, 2, 5, 5, 1, 1, 1, 0),
    ] {
        let c_g = c_in / groups;
        let x = rng.vec(c_in * h * w);
        let ker = rng.vec(c_out * c_g * k * k);
        let bias = rng.vec(c_out);
        let (want, oh, ow) = conv_naive(
            &x,
            (c_in, h, w),
            &ker,
            (c_out, c_g, k),
            Some(&bias),
            stride,
            dilation,
            padding,
            groups,
        );
        let out = run_conv(
            x,
            [c_in, h, w],
            ker,
            [c_out, c_g, k, k],
            Some(bias),
            ConvSpec { stride, dilation, padding, groups },
        );
        assert_eq!(out.shape(), &[c_out, oh, ow]);
        assert_eq!(out.data(), &want[..], "groups {groups} dilation {dilation}");
    }
}

#[test]
fn conv_linearity_f32() {
    let mut rng = TestRng(5);
    let xa: Vec<f32> = rng.vec(2 * 6 * 6).iter().map(|&v| v as f32).collect();
    let xb: Vec<f32> = rng.vec(2 * 6 * 6).iter().map(|&v| v as f32).collect();
    let ker: Vec<f32> = rng.vec(3 * 2 * 9).iter().map(|&v| v as f32).collect();
    let spec = ConvSpec { stride: 1, dilation: 1, padding: 1, groups: 1 };
    let (a, b) = (0.7f32, -1.3f32);

    let conv = |x: Vec<f32>| {
        let mut tape = Tape::new(false);
        let xv = tape.leaf(Tensor::new(vec![2, 6, 6], x).unwrap());
        let wv = tape.leaf(Tensor::new(vec![3, 2, 3, 3], ker.clone()).unwrap());
        let out = tape.conv2d(xv, wv, None, spec).unwrap();
        tape.value(out).clone()
    };

    let mixed: Vec<f32> = xa.iter().zip(&xb).map(|(&u, &v)| a * u + b * v).collect();
    let lhs = conv(mixed);
    let ca = conv(xa);
    let cb = conv(xb);
    for ((l, u), v) in lhs.data().iter().zip(ca.data()).zip(cb.data()) {
        assert!((l - (a * u + b * v)).abs() < 1e-5, "{l} vs {}", a * u + b * v);
    }
}

#[test]
fn conv_shape_and_validation_errors() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(Tensor::<f64>::zeros(vec![3, 5, 5]));
    let w_bad_group = tape.leaf(Tensor::<f64>::zeros(vec![4, 3, 3, 3]));
    // groups=2 with 3 input channels
    assert!(tape
        .conv2d(x, w_bad_group, None, ConvSpec { stride: 1, dilation: 1, padding: 0, groups: 2 })
        .is_err());
    // effective kernel larger than padded input
    let w_big = tape.leaf(Tensor::<f64>::zeros(vec![1, 3, 7, 7]));
    assert!(tape
        .conv2d(x, w_big, None, ConvSpec { stride: 1, dilation: 2, padding: 0, groups: 1 })
        .is_err());
    // kernel channel mismatch
    let w_chan = tape.leaf(Tensor::<f64>::zeros(vec![2, 2, 3, 3]));
    assert!(tape
        .conv2d(x, w_chan, None, ConvSpec { stride: 1, dilation: 1, padding: 1, groups: 1 })
        .is_err());
}

#[test]
fn f32_and_f64_agree_loosely() {
    // same computation in both dtypes; f32 should track f64 to float precision
    let mut rng = TestRng(13);
    let x = rng.vec(3 * 8 * 8);
    let ker = rng.vec(4 * 3 * 9);
    let spec = ConvSpec { stride: 2, dilation: 1, padding: 1, groups: 1 };
    let out64 = run_conv(x.clone(), [3, 8, 8], ker.clone(), [4, 3, 3, 3], None, spec);
    let mut tape = Tape::new(false);
    let xv = tape.leaf(Tensor::new(vec![3, 8, 8], x.iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap());
    let wv = tape.leaf(Tensor::new(vec![4, 3, 3, 3], ker.iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap());
    let out = tape.conv2d(xv, wv, None, spec).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(out64.data()) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}
