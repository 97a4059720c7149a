//! Shared test oracles: finite-difference gradient checking and a naive
//! convolution reference. Everything here is written against the op
//! *contracts*, independent of the optimized implementation paths.
#![allow(dead_code)]

/// Central-difference gradient check in f64.
///
/// `eval(x, want_grad)` evaluates the scalar function at the packed parameter
/// vector `x`, returning the analytic gradient too when asked. Each
/// coordinate is perturbed by `1e-6 · max(1, |x_i|)`; the analytic and
/// numeric gradients must agree to relative error `tol` (denominator floored
/// so near-zero gradients are compared absolutely).
pub fn check_grads(
    x0: &[f64],
    eval: &dyn Fn(&[f64], bool) -> (f64, Option<Vec<f64>>),
    tol: f64,
    label: &str,
) {
    let (_, grads) = eval(x0, true);
    let grads = grads.expect("analytic gradient");
    assert_eq!(grads.len(), x0.len(), "{label}: gradient length");
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let h = 1e-6 * x0[i].abs().max(1.0);
        x[i] = x0[i] + h;
        let (fp, _) = eval(&x, false);
        x[i] = x0[i] - h;
        let (fm, _) = eval(&x, false);
        x[i] = x0[i];
        let fd = (fp - fm) / (2.0 * h);
        let a = grads[i];
        if a.abs() < 1e-6 && fd.abs() < 1e-6 {
            // below the resolution of central differences (ε·|f|/2h);
            // treat as agreeing at zero
            continue;
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        assert!(
            rel < tol,
            "{label}: grad[{i}] analytic {a:.9e} vs fd {fd:.9e} (rel {rel:.3e})"
        );
    }
}

/// Naive five-nested-loop convolution (cross-correlation) directly off the
/// defining sum: out[o,i,j] = bias[o] + Σ_{c,n,m} x[c, i·s−p+l·n, j·s−p+l·m]·w[o,c,n,m],
/// contributions outside the input skipped (zero padding).
pub fn conv_naive(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    ker: &[f64],
    (c_out, c_g, k): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    dilation: usize,
    padding: usize,
    groups: usize,
) -> (Vec<f64>, usize, usize) {
    assert_eq!(c_in / groups, c_g);
    let out_h = (h + 2 * padding - ((k - 1) * dilation + 1)) / stride + 1;
    let out_w = (w + 2 * padding - ((k - 1) * dilation + 1)) / stride + 1;
    let group_out = c_out / groups;
    let mut out = vec![0.0f64; c_out * out_h * out_w];
    for o in 0..c_out {
        let c0 = (o / group_out) * c_g;
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for cg in 0..c_g {
                    let c = c0 + cg;
                    for n in 0..k {
                        for m in 0..k {
                            let ii = (i * stride + dilation * n) as isize - padding as isize;
                            let jj = (j * stride + dilation * m) as isize - padding as isize;
                            if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                                acc += x[(c * h + ii as usize) * w + jj as usize]
                                    * ker[((o * c_g + cg) * k + n) * k + m];
                            }
                        }
                    }
                }
                out[(o * out_h + i) * out_w + j] = acc;
            }
        }
    }
    (out, out_h, out_w)
}

/// Tiny deterministic generator for test inputs (xorshift64*), so tests do
/// not depend on the crate's own RNG being correct.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in (-1, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.unit()).collect()
    }
}
