//! Independent f64 reference forwards plus a central finite-difference
//! gradient harness.
//!
//! The reference ops are deliberately naive loops, written against the op
//! contracts rather than the library code, and run in f64 throughout. That
//! matters for the difference quotients: an f32 forward carries ~1e-7
//! relative rounding noise, which a (f(x+h)-f(x-h))/2h quotient at h=1e-3
//! amplifies past the 1e-3 gradient tolerance. The f64 forwards keep the
//! quotient noise near 1e-13, so any disagreement is a real gradient bug.

use awp_core::tape::{Tape, Var};
use awp_core::{Norm, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| v * c).collect()
}

pub fn hadamard(x: &[f64], w: &[f64]) -> Vec<f64> {
    x.iter().zip(w).map(|(a, b)| a * b).collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Bias indexed by axis 1 of `shape`, broadcast over everything else.
pub fn add_bias(x: &[f64], shape: &[usize], bias: &[f64]) -> Vec<f64> {
    let ch = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut out = x.to_vec();
    for n in 0..shape[0] {
        for c in 0..ch {
            for i in 0..inner {
                out[(n * ch + c) * inner + i] += bias[c];
            }
        }
    }
    out
}

/// Valid cross-correlation, NCHW ⊛ FCkk → N F oh ow.
pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    kern: &[f64],
    (f, kh, kw): (usize, usize, usize),
    stride: usize,
) -> Vec<f64> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let xv = x[((ni * c + ci) * h + oy * stride + dy) * w
                                    + ox * stride
                                    + dx];
                                let kv = kern[((fi * c + ci) * kh + dy) * kw + dx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// N×L×d sequences ⊛ F×W×d kernels sliding over L → N×F×(L−W+1).
pub fn conv1d(
    x: &[f64],
    (n, l, d): (usize, usize, usize),
    kern: &[f64],
    (f, w): (usize, usize),
) -> Vec<f64> {
    let ol = l - w + 1;
    let mut out = vec![0.0; n * f * ol];
    for ni in 0..n {
        for fi in 0..f {
            for o in 0..ol {
                let mut acc = 0.0;
                for dw in 0..w {
                    for di in 0..d {
                        acc += x[(ni * l + o + dw) * d + di] * kern[(fi * w + dw) * d + di];
                    }
                }
                out[(ni * f + fi) * ol + o] = acc;
            }
        }
    }
    out
}

/// Floor-mode pooling: trailing rows/cols that don't fill a window drop.
pub fn maxpool2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    (wh, ww): (usize, usize),
) -> Vec<f64> {
    let oh = h / wh;
    let ow = w / ww;
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..wh {
                    for dx in 0..ww {
                        best = best.max(x[plane * h * w + (oy * wh + dy) * w + ox * ww + dx]);
                    }
                }
                out[plane * oh * ow + oy * ow + ox] = best;
            }
        }
    }
    out
}

pub fn max_over_time(x: &[f64], (n, f, l): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; n * f];
    for row in 0..n * f {
        out[row] = x[row * l..(row + 1) * l]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

pub fn embedding(table: &[f64], d: usize, ids: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        out.extend_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
    }
    out
}

pub fn select_rows(x: &[f64], k: usize, rows: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * k);
    for &r in rows {
        out.extend_from_slice(&x[r as usize * k..(r as usize + 1) * k]);
    }
    out
}

pub fn concat_cols(parts: &[(&[f64], usize)], n: usize) -> Vec<f64> {
    let total: usize = parts.iter().map(|(_, k)| k).sum();
    let mut out = vec![0.0; n * total];
    let mut offset = 0;
    for (data, k) in parts {
        for row in 0..n {
            out[row * total + offset..row * total + offset + k]
                .copy_from_slice(&data[row * k..(row + 1) * k]);
        }
        offset += k;
    }
    out
}

fn row_lse(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub fn sce_hard(logits: &[f64], k: usize, labels: &[u32]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        total += row_lse(row) - row[y as usize];
    }
    total / n as f64
}

pub fn sce_soft(logits: &[f64], k: usize, targets: &[f64]) -> f64 {
    let n = logits.len() / k;
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let lse = row_lse(row);
        for j in 0..k {
            total += targets[i * k + j] * (lse - row[j]);
        }
    }
    total / n as f64
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

const FD_STEP: f64 = 1e-3;

fn gradient_ok(analytic: f64, fd: f64) -> bool {
    let diff = (analytic - fd).abs();
    if fd.abs() >= 1e-4 {
        diff <= 1e-3 * fd.abs()
    } else {
        // near-zero true gradient: 1e-2 relative against the 1e-4 floor
        diff <= 1e-6
    }
}

/// Check one op instance end to end.
///
/// `build` wires the op into a tape over param leaves for `inputs` and
/// returns its output; `reference` computes the same output in f64. The
/// harness wraps both in the same random-weighted mean so the loss is a
/// scalar with nonzero sensitivity to every output coordinate, checks the
/// forward value at 1e-5 relative, then compares every analytic input
/// gradient against a central difference of the f64 reference.
pub fn check_op(
    name: &str,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> awp_core::Result<Var>,
    reference: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    rng: &mut ChaCha8Rng,
) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap_or_else(|e| panic!("{name}: build failed: {e}"));

    let out_shape = tape.value(out).shape().to_vec();
    let weights = Tensor::new(
        out_shape.clone(),
        (0..tape.value(out).len())
            .map(|_| (0.25 + rng.gen::<f32>()) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap();
    let weighted = tape.hadamard_const(out, &weights).unwrap();
    let loss = tape.mean(weighted).unwrap();

    let w64 = to_f64(&weights);
    let scalar_ref = |xs: &[Vec<f64>]| -> f64 { mean(&hadamard(&reference(xs), &w64)) };

    let x64: Vec<Vec<f64>> = inputs.iter().map(to_f64).collect();
    let got = tape.value(loss).item().unwrap() as f64;
    let want = scalar_ref(&x64);
    assert!(
        (got - want).abs() <= 1e-5 * want.abs().max(1.0),
        "{name}: forward value {got} vs reference {want}"
    );

    let grads = tape
        .backward(loss)
        .unwrap_or_else(|e| panic!("{name}: backward failed: {e}"));

    let mut probe = x64.clone();
    for (idx, input) in inputs.iter().enumerate() {
        let zero;
        let analytic = match grads.get(vars[idx]) {
            Some(g) => g.data(),
            None => {
                zero = vec![0.0f32; input.len()];
                &zero
            }
        };
        for coord in 0..input.len() {
            let orig = probe[idx][coord];
            probe[idx][coord] = orig + FD_STEP;
            let plus = scalar_ref(&probe);
            probe[idx][coord] = orig - FD_STEP;
            let minus = scalar_ref(&probe);
            probe[idx][coord] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[coord] as f64;
            assert!(
                gradient_ok(a, fd),
                "{name}: input {idx} coord {coord}: analytic {a} vs finite difference {fd}"
            );
        }
    }
}

/// Uniform values in ±[lo, hi]; keeping |v| ≥ lo dodges relu kinks and
/// near-tie max windows when lo is comfortably above the FD step.
pub fn signed_uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n)
        .map(|_| (lo + rng.gen::<f32>() * (hi - lo)) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// A shuffle of an arithmetic grid: all pairwise gaps ≥ `gap`, so a ±1e-3
/// probe can never flip which element a max picks.
pub fn separated_values(rng: &mut ChaCha8Rng, n: usize, gap: f32) -> Vec<f32> {
    use rand::seq::SliceRandom;
    let mut vals: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * gap).collect();
    vals.shuffle(rng);
    vals
}

// Brute-force weight-delta recomputation, shared by the metric and
// acceptance binaries. Plain f64 loops, independent of the library's
// accumulation order.

pub fn brute_norm(v: &[f32], p: Norm) -> f64 {
    match p {
        Norm::L1 => v.iter().map(|&x| (x as f64).abs()).sum(),
        Norm::L2 => v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt(),
        Norm::LInf => v.iter().fold(0.0, |m, &x| m.max((x as f64).abs())),
    }
}

pub fn brute_norm64(v: &[f64], p: Norm) -> f64 {
    match p {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

pub fn brute_delta_pct(theta: &[f32], theta_prime: &[f32], p: Norm) -> f64 {
    // f32 differences are exact in f64, so the quotient carries no rounding
    // beyond the final f64 ops.
    let diff: Vec<f64> = theta
        .iter()
        .zip(theta_prime)
        .map(|(&a, &b)| b as f64 - a as f64)
        .collect();
    brute_norm64(&diff, p) / brute_norm(theta, p) * 100.0
}

/// Nonzero vector plus a perturbed copy, lengths and magnitudes varied.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let n = rng.gen_range(1..=200);
    let scale = 10f32.powi(rng.gen_range(-2..=2));
    let theta: Vec<f32> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0) * scale;
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let theta_prime: Vec<f32> = theta
        .iter()
        .map(|&x| x + rng.gen_range(-0.5..0.5) * scale)
        .collect();
    (theta, theta_prime)
}
