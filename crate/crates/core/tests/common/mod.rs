//! Shared oracles for the integration suites.
#![allow(dead_code)]

use litefew_core::encoder::AutoEncoder;
use litefew_core::tensor::{Module, Tape, Var};
use litefew_core::training::{distill_loss_tape, resk_loss_tape};
use litefew_core::wwd::{DilatedConvConfig, DilatedConvHead};
use litefew_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_CASES: u64 = 100;

/// Elements whose gradients are both below this magnitude are compared
/// absolutely; central differences carry ~1e-10 of rounding noise.
const REL_FLOOR: f64 = 1e-3;

pub type Inputs = Vec<(Vec<usize>, Vec<f64>)>;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Max relative error between the tape gradient of `f` and central
/// differences, over every element of every input.
pub fn gradcheck<'m>(inputs: &Inputs, f: &dyn Fn(&mut Tape<'m>, &[Var]) -> Result<Var>) -> f64 {
    let eval = |vals: &Inputs, rg: bool| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|(s, d)| tape.input(s.clone(), d.clone(), rg).unwrap())
            .collect();
        let loss = f(&mut tape, &vars).unwrap();
        let value = tape.scalar(loss);
        if !rg {
            return (value, None);
        }
        let g = tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(vals)
            .map(|(&v, (_, d))| g.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d.len()]))
            .collect();
        (value, Some(grads))
    };
    let analytic = eval(inputs, true).1.unwrap();
    let mut worst = 0.0f64;
    let mut probe = inputs.clone();
    for (i, (_, d)) in inputs.iter().enumerate() {
        for j in 0..d.len() {
            probe[i].1[j] = d[j] + FD_STEP;
            let up = eval(&probe, false).0;
            probe[i].1[j] = d[j] - FD_STEP;
            let down = eval(&probe, false).0;
            probe[i].1[j] = d[j];
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// One gradient-check family: name and a case builder from a seed.
pub struct GradFamily {
    pub name: &'static str,
    pub run: fn(u64) -> f64,
}

fn conv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let dilation = rng.random_range(1..=3);
    let causal = rng.random_bool(0.5);
    let stride = if causal { 1 } else { rng.random_range(1..=3) };
    let t = dilation * (k - 1) + rng.random_range(1..=8);
    let t_out = if causal { t } else { (t - dilation * (k - 1) - 1) / stride + 1 };
    let target = uniform(&mut rng, c_out * t_out);
    let inputs = vec![
        (vec![c_in, t], uniform(&mut rng, c_in * t)),
        (vec![c_out, c_in, k], uniform(&mut rng, c_out * c_in * k)),
    ];
    gradcheck(&inputs, &move |tape, v| {
        let y = tape.conv1d(v[0], v[1], stride, dilation, causal)?;
        let tg = tape.constant(vec![c_out, t_out], target.clone())?;
        tape.mse(y, tg)
    })
}

fn gelu_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=12);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let target = uniform(&mut rng, n);
    gradcheck(&vec![(vec![1, n], x)], &move |tape, v| {
        let y = tape.gelu(v[0]);
        let tg = tape.constant(vec![1, n], target.clone())?;
        tape.mse(y, tg)
    })
}

fn instance_norm_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=3);
    let t = rng.random_range(4..=10);
    let target = uniform(&mut rng, c * t);
    let inputs = vec![
        (vec![c, t], uniform(&mut rng, c * t)),
        (vec![c], uniform(&mut rng, c)),
        (vec![c], uniform(&mut rng, c)),
    ];
    gradcheck(&inputs, &move |tape, v| {
        let y = tape.instance_norm(v[0], v[1], v[2], 1e-5)?;
        let tg = tape.constant(vec![c, t], target.clone())?;
        tape.mse(y, tg)
    })
}

fn mse_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, t) = (rng.random_range(1..=4), rng.random_range(1..=6));
    let inputs = vec![(vec![c, t], uniform(&mut rng, c * t)), (vec![c, t], uniform(&mut rng, c * t))];
    gradcheck(&inputs, &|tape, v| tape.mse(v[0], v[1]))
}

fn focal_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=10);
    let gamma = [0.0, 0.5, 1.0, 2.0, 3.0][rng.random_range(0..5)];
    let p: Vec<f64> = (0..t).map(|_| rng.random_range(0.02..0.98)).collect();
    let y: Vec<bool> = (0..t).map(|_| rng.random_bool(0.4)).collect();
    gradcheck(&vec![(vec![t], p)], &move |tape, v| tape.focal(v[0], &y, gamma))
}

fn softmax_head_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=10);
    let y: Vec<bool> = (0..t).map(|_| rng.random_bool(0.4)).collect();
    let logits: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-3.0..3.0)).collect();
    gradcheck(&vec![(vec![2, t], logits)], &move |tape, v| {
        let p = tape.posterior(v[0])?;
        tape.focal(p, &y, 2.0)
    })
}

/// Full detector head on random features: gradient w.r.t. the features.
fn head_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let t = rng.random_range(2..=8);
    let cfg = DilatedConvConfig {
        residual_channels: 3,
        ..DilatedConvConfig::with_blocks(rng.random_range(1..=3), c)
    };
    let head = DilatedConvHead::new(cfg, &mut rng).unwrap();
    let y: Vec<bool> = (0..t).map(|_| rng.random_bool(0.4)).collect();
    let x = vec![(vec![c, t], uniform(&mut rng, c * t))];
    gradcheck(&x, &|tape, v| {
        let vars = head.bind(tape);
        let h = head.forward(tape, &vars, v[0])?;
        let p = tape.posterior(h)?;
        tape.focal(p, &y, 2.0)
    })
}

/// Distillation objective through a real auto-encoder, w.r.t. teacher and
/// student features.
fn distill_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_t = rng.random_range(2..=5);
    let c_s = rng.random_range(1..c_t);
    let t = rng.random_range(1..=5);
    let lambda = rng.random_range(0.0..=1.0);
    let ae = AutoEncoder::new(c_t, c_s, &mut rng).unwrap();
    let inputs = vec![(vec![c_t, t], uniform(&mut rng, c_t * t)), (vec![c_s, t], uniform(&mut rng, c_s * t))];
    gradcheck(&inputs, &|tape, v| {
        let vars = ae.bind(tape);
        let (z_r, z_hat) = ae.forward(tape, &vars, v[0])?;
        Ok(distill_loss_tape(tape, v[0], z_hat, z_r, v[1], lambda)?.total)
    })
}

fn resk_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=8);
    let inputs = vec![(vec![2, t], uniform(&mut rng, 2 * t)), (vec![2, t], uniform(&mut rng, 2 * t))];
    gradcheck(&inputs, &|tape, v| resk_loss_tape(tape, v[0], v[1]))
}

pub const GRAD_FAMILIES: &[GradFamily] = &[
    GradFamily { name: "conv1d", run: conv_case },
    GradFamily { name: "gelu", run: gelu_case },
    GradFamily { name: "instance_norm", run: instance_norm_case },
    GradFamily { name: "mse", run: mse_case },
    GradFamily { name: "focal_loss", run: focal_case },
    GradFamily { name: "softmax_head", run: softmax_head_case },
    GradFamily { name: "dilated_conv_head", run: head_case },
    GradFamily { name: "distill_loss", run: distill_case },
    GradFamily { name: "resk_loss", run: resk_case },
];

/// Worst relative error of a family over [`FD_CASES`] seeds.
pub fn family_worst(f: &GradFamily) -> f64 {
    (0..FD_CASES).map(|s| (f.run)(s)).fold(0.0, f64::max)
}

/// Random score set for the threshold oracle.
pub struct Case {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub hours: f64,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    // Coarse quantisation forces ties; some positives have no event.
    let levels = [10.0, 100.0, 1e6][rng.random_range(0..3)];
    let score = |rng: &mut ChaCha8Rng| ((rng.random_range(0.0..1.0f64) * levels).ceil() / levels).max(1.0 / levels);
    let pos = (0..rng.random_range(1..30))
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { score(rng) })
        .collect();
    let neg = (0..rng.random_range(0..40)).map(|_| score(rng)).collect();
    Case { pos, neg, hours: rng.random_range(0.05..5.0) }
}

/// Tries every distinct score as a threshold, plus one above everything,
/// and keeps the smallest that meets the budget.
pub fn brute_force(c: &Case, budget: f64) -> (f64, f64) {
    let mut candidates: Vec<f64> = c.pos.iter().chain(&c.neg).copied().filter(|&s| s > 0.0).collect();
    candidates.push(2.0);
    let mut best: Option<f64> = None;
    for &th in &candidates {
        let fa = c.neg.iter().filter(|&&s| s >= th).count();
        if fa as f64 / c.hours <= budget && best.is_none_or(|b| th < b) {
            best = Some(th);
        }
    }
    let th = best.expect("the top candidate always meets the budget");
    let missed = c.pos.iter().filter(|&&s| s < th).count();
    let fa = c.neg.iter().filter(|&&s| s >= th).count();
    (missed as f64 / c.pos.len() as f64, fa as f64 / c.hours)
}
