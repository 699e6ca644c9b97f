use litefew_core::encoder::EncoderConfig;
use litefew_core::tensor::{conv_out_len, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct sliding-window convolution.
fn naive_conv(x: &[f64], c_in: usize, t: usize, w: &[f64], c_out: usize, k: usize, stride: usize, dilation: usize, causal: bool) -> Vec<f64> {
    let pad = if causal { dilation * (k - 1) } else { 0 };
    let span = dilation * (k - 1) + 1;
    let t_out = if causal { t } else { (t - span) / stride + 1 };
    let mut y = vec![0.0; c_out * t_out];
    for o in 0..c_out {
        for j in 0..t_out {
            let mut acc = 0.0;
            for i in 0..c_in {
                for kk in 0..k {
                    let pos = (j * stride + kk * dilation) as isize - pad as isize;
                    if pos >= 0 {
                        acc += w[(o * c_in + i) * k + kk] * x[i * t + pos as usize];
                    }
                }
            }
            y[o * t_out + j] = acc;
        }
    }
    y
}

fn conv(x: &[f64], c_in: usize, w: &[f64], c_out: usize, k: usize, stride: usize, dilation: usize, causal: bool) -> litefew_core::Result<Vec<f64>> {
    let t = x.len() / c_in;
    let mut tape = Tape::new();
    let xv = tape.constant(vec![c_in, t], x.to_vec())?;
    let wv = tape.constant(vec![c_out, c_in, k], w.to_vec())?;
    let y = tape.conv1d(xv, wv, stride, dilation, causal)?;
    Ok(tape.value(y).to_vec())
}

/// Abramowitz-Stegun style Maclaurin series for erf, independent of libm.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn gelu(xs: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(vec![xs.len()], xs.to_vec()).unwrap();
    let y = tape.gelu(v);
    tape.value(y).to_vec()
}

#[test]
fn conv_length_example_and_identity() {
    assert_eq!(conv_out_len(10, 3, 2, 1), Some(4));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eye = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(conv(&x, 2, &eye, 2, 1, 1, 1, false).unwrap(), x);
}

#[test]
fn full_stack_length_by_hand() {
    let mut t = 16_000usize;
    for (k, s) in [(10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2)] {
        t = (t - k) / s + 1;
    }
    assert_eq!(t, 49);
    assert_eq!(EncoderConfig::default().output_frames(16_000), Some(49));
}

#[test]
fn conv_rejects_bad_shapes() {
    assert!(conv(&[0.0; 6], 2, &[0.0; 9], 1, 3, 1, 1, false).is_err());
    assert!(conv(&[0.0; 4], 2, &[0.0; 6], 1, 3, 1, 1, false).is_err());
    assert!(conv(&[0.0; 8], 1, &[0.0; 3], 1, 3, 2, 1, true).is_err());
}

#[test]
fn gelu_values() {
    let phi1 = 0.5 * (1.0 + erf_series(std::f64::consts::FRAC_1_SQRT_2));
    let y = gelu(&[0.0, 1.0]);
    assert_eq!(y[0], 0.0);
    assert!((y[1] - phi1).abs() < 1e-12);
    assert!((y[1] - 0.841345).abs() < 1e-6);
    let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    for ((x, a), b) in xs.iter().zip(gelu(&xs)).zip(gelu(&neg)) {
        // x·Φ(x) − (−x)·Φ(−x) = x·(Φ(x) + Φ(−x)) = x.
        assert!((a - b - x).abs() < 1e-12);
        let oracle = x * 0.5 * (1.0 + erf_series(x / 2f64.sqrt()));
        assert!((a - oracle).abs() < 1e-12, "gelu({x})");
    }
}

fn inorm(x: &[f64], c: usize, eps: f64) -> litefew_core::Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(vec![c, x.len() / c], x.to_vec())?;
    let s = tape.constant(vec![c], vec![1.0; c])?;
    let b = tape.constant(vec![c], vec![0.0; c])?;
    let y = tape.instance_norm(xv, s, b, eps)?;
    Ok(tape.value(y).to_vec())
}

#[test]
fn instance_norm_examples() {
    assert_eq!(inorm(&[2.5; 6], 1, 1e-5).unwrap(), vec![0.0; 6]);
    assert_eq!(inorm(&[1.0, 3.0], 1, 0.0).unwrap(), vec![-1.0, 1.0]);
    assert!(inorm(&[1.0, 2.0], 2, 1e-5).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = inorm(&x, 4, 0.0).unwrap();
    for row in y.chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-8);
    }
}

#[test]
fn mse_and_backward_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let b = tape.constant(vec![2], vec![1.0, 3.0]).unwrap();
    let m = tape.mse(a, b).unwrap();
    assert_eq!(tape.scalar(m), 5.0);
    let same = tape.mse(a, a).unwrap();
    assert_eq!(tape.scalar(same), 0.0);

    let x = Tensor::param(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
    let frozen = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let mut tape = Tape::new();
    let (xv, fv) = (tape.leaf(&x), tape.leaf(&frozen));
    let s = tape.add(xv, fv).unwrap();
    let loss = tape.sum(s);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(xv).unwrap(), &[1.0, 1.0, 1.0]);
    assert!(g.get(fv).is_none());
    assert!(tape.backward(s).is_err());
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::param(vec![3, 40], (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::param(vec![4, 3, 3], (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let y = tape.conv1d(xv, wv, 1, 2, true).unwrap();
        let y = tape.gelu(y);
        let z = tape.constant(vec![4, 40], vec![0.3; 160]).unwrap();
        let loss = tape.mse(y, z).unwrap();
        let g = tape.backward(loss).unwrap();
        [g.get(xv).unwrap().to_vec(), g.get(wv).unwrap().to_vec()]
            .concat()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_oracle(
        c_in in 1usize..4, c_out in 1usize..4, k in 1usize..5, stride in 1usize..4,
        dilation in 1usize..4, extra in 0usize..40, causal in any::<bool>(), seed in any::<u64>(),
    ) {
        let stride = if causal { 1 } else { stride };
        let t = dilation * (k - 1) + 1 + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..c_in * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..c_out * c_in * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = conv(&x, c_in, &w, c_out, k, stride, dilation, causal).unwrap();
        let want = naive_conv(&x, c_in, t, &w, c_out, k, stride, dilation, causal);
        prop_assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_length_formula(t in 1usize..10_000, k in 1usize..12, stride in 1usize..6, dilation in 1usize..5) {
        let span = dilation * (k - 1) + 1;
        let expect = (t >= span).then(|| (t - span) / stride + 1);
        prop_assert_eq!(conv_out_len(t, k, stride, dilation), expect);
        if let Some(n) = expect {
            // Sliding-window oracle: count start positions whose span fits.
            let count = (0..t).step_by(stride).take_while(|s| s + span <= t).count();
            prop_assert_eq!(n, count);
        }
    }

    #[test]
    fn causal_conv_ignores_the_future(t in 2usize..60, k in 1usize..5, dilation in 1usize..4, cut in 0usize..59, seed in any::<u64>()) {
        let cut = cut % (t - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2 * 2 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = x.clone();
        for c in 0..2 {
            y[c * t + cut + 1] += 0.5;
        }
        let a = conv(&x, 2, &w, 2, k, 1, dilation, true).unwrap();
        let b = conv(&y, 2, &w, 2, k, 1, dilation, true).unwrap();
        for c in 0..2 {
            for j in 0..=cut {
                prop_assert_eq!(a[c * t + j].to_bits(), b[c * t + j].to_bits());
            }
        }
    }
}
