//! Per-primitive finite-difference check families. Every family draws its
//! own seeded instances, so a pass is reproducible evidence, not a roll of
//! the dice.

use awp_core::tape::Targets;
use awp_core::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, check_op, separated_values, signed_uniform};

pub fn check_add(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xadd);
    for i in 0..instances {
        let shape = vec![rng.gen_range(1..=3), rng.gen_range(1..=4)];
        let len = shape.iter().product();
        let a = Tensor::new(shape.clone(), signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        let b = Tensor::new(shape, signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        check_op(
            &format!("add[{i}]"),
            &[a, b],
            &|tape, v| tape.add(v[0], v[1]),
            &|xs| oracle::add(&xs[0], &xs[1]),
            &mut rng,
        );
    }
}

pub fn check_scale(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    for i in 0..instances {
        let len = rng.gen_range(1..=8);
        let c = (0.3 + rng.gen::<f32>()) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let x = Tensor::new(vec![len], signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        check_op(
            &format!("scale[{i}]"),
            &[x],
            &|tape, v| Ok(tape.scale(v[0], c)),
            &|xs| oracle::scale(&xs[0], c as f64),
            &mut rng,
        );
    }
}

pub fn check_hadamard_const(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad);
    for i in 0..instances {
        let shape = vec![rng.gen_range(1..=3), rng.gen_range(1..=4)];
        let len: usize = shape.iter().product();
        let c = Tensor::new(shape.clone(), signed_uniform(&mut rng, len, 0.2, 1.2)).unwrap();
        let c64 = oracle::to_f64(&c);
        let x = Tensor::new(shape, signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        check_op(
            &format!("hadamard_const[{i}]"),
            &[x],
            &|tape, v| tape.hadamard_const(v[0], &c),
            &|xs| oracle::hadamard(&xs[0], &c64),
            &mut rng,
        );
    }
}

pub fn check_relu(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2e1);
    for i in 0..instances {
        let len = rng.gen_range(2..=12);
        // |v| ≥ 0.05 keeps every coordinate the same side of the kink
        // through the ±1e-3 probes
        let x = Tensor::new(vec![len], signed_uniform(&mut rng, len, 0.05, 1.5)).unwrap();
        check_op(
            &format!("relu[{i}]"),
            &[x],
            &|tape, v| Ok(tape.relu(v[0])),
            &|xs| oracle::relu(&xs[0]),
            &mut rng,
        );
    }
}

pub fn check_reshape(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e5);
    for i in 0..instances {
        let (a, b) = (rng.gen_range(1..=3), 2 * rng.gen_range(1..=3));
        let x = Tensor::new(vec![a, b], signed_uniform(&mut rng, a * b, 0.1, 1.0)).unwrap();
        let target = vec![a * b / 2, 2];
        check_op(
            &format!("reshape[{i}]"),
            &[x],
            &|tape, v| tape.reshape(v[0], target.clone()),
            &|xs| xs[0].clone(),
            &mut rng,
        );
    }
}

pub fn check_mean(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xea);
    for i in 0..instances {
        let len = rng.gen_range(1..=10);
        let x = Tensor::new(vec![len], signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        check_op(
            &format!("mean[{i}]"),
            &[x],
            &|tape, v| tape.mean(v[0]),
            &|xs| vec![oracle::mean(&xs[0])],
            &mut rng,
        );
    }
}

pub fn check_matmul(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa7);
    for i in 0..instances {
        let (m, k, n) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
        );
        let a = Tensor::new(vec![m, k], signed_uniform(&mut rng, m * k, 0.1, 1.0)).unwrap();
        let b = Tensor::new(vec![k, n], signed_uniform(&mut rng, k * n, 0.1, 1.0)).unwrap();
        check_op(
            &format!("matmul[{i}]"),
            &[a, b],
            &|tape, v| tape.matmul(v[0], v[1]),
            &|xs| oracle::matmul(&xs[0], m, k, &xs[1], n),
            &mut rng,
        );
    }
}

pub fn check_add_bias(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb1a5);
    for i in 0..instances {
        let shape = if i % 2 == 0 {
            vec![rng.gen_range(1..=3), rng.gen_range(1..=4)]
        } else {
            vec![
                rng.gen_range(1..=2),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
            ]
        };
        let len: usize = shape.iter().product();
        let ch = shape[1];
        let x = Tensor::new(shape.clone(), signed_uniform(&mut rng, len, 0.1, 1.0)).unwrap();
        let bias = Tensor::new(vec![ch], signed_uniform(&mut rng, ch, 0.1, 1.0)).unwrap();
        check_op(
            &format!("add_bias[{i}]"),
            &[x, bias],
            &|tape, v| tape.add_bias(v[0], v[1]),
            &|xs| oracle::add_bias(&xs[0], &shape, &xs[1]),
            &mut rng,
        );
    }
}

pub fn check_conv2d(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2d);
    for i in 0..instances {
        let stride = 1 + i % 2;
        let (n, c, f) = (
            rng.gen_range(1..=2),
            rng.gen_range(1..=2),
            rng.gen_range(1..=3),
        );
        let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let h = kh + rng.gen_range(0..=3);
        let w = kw + rng.gen_range(0..=3);
        let x = Tensor::new(
            vec![n, c, h, w],
            signed_uniform(&mut rng, n * c * h * w, 0.1, 1.0),
        )
        .unwrap();
        let kern = Tensor::new(
            vec![f, c, kh, kw],
            signed_uniform(&mut rng, f * c * kh * kw, 0.1, 1.0),
        )
        .unwrap();
        check_op(
            &format!("conv2d[{i} stride {stride}]"),
            &[x, kern],
            &|tape, v| tape.conv2d(v[0], v[1], stride),
            &|xs| oracle::conv2d(&xs[0], (n, c, h, w), &xs[1], (f, kh, kw), stride),
            &mut rng,
        );
    }
}

pub fn check_conv1d(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1d);
    for i in 0..instances {
        let (n, d, f) = (
            rng.gen_range(1..=2),
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
        );
        let w = rng.gen_range(1..=3);
        let l = w + rng.gen_range(0..=4);
        let x = Tensor::new(vec![n, l, d], signed_uniform(&mut rng, n * l * d, 0.1, 1.0)).unwrap();
        let kern =
            Tensor::new(vec![f, w, d], signed_uniform(&mut rng, f * w * d, 0.1, 1.0)).unwrap();
        check_op(
            &format!("conv1d[{i}]"),
            &[x, kern],
            &|tape, v| tape.conv1d_seq(v[0], v[1]),
            &|xs| oracle::conv1d(&xs[0], (n, l, d), &xs[1], (f, w)),
            &mut rng,
        );
    }
}

pub fn check_maxpool2d(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb001);
    for i in 0..instances {
        let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let (wh, ww) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        // +1 offsets leave ragged trailing rows on odd draws, exercising
        // the floor-mode drop
        let h = wh + rng.gen_range(0..=3);
        let w = ww + rng.gen_range(0..=3);
        let x = Tensor::new(
            vec![n, c, h, w],
            separated_values(&mut rng, n * c * h * w, 0.13),
        )
        .unwrap();
        check_op(
            &format!("maxpool2d[{i} window {wh}x{ww}]"),
            &[x],
            &|tape, v| tape.maxpool2d(v[0], (wh, ww)),
            &|xs| oracle::maxpool2d(&xs[0], (n, c, h, w), (wh, ww)),
            &mut rng,
        );
    }
}

pub fn check_max_over_time(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x707);
    for i in 0..instances {
        let (n, f, l) = (
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            rng.gen_range(1..=5),
        );
        let x = Tensor::new(vec![n, f, l], separated_values(&mut rng, n * f * l, 0.13)).unwrap();
        check_op(
            &format!("max_over_time[{i}]"),
            &[x],
            &|tape, v| tape.max_over_time(v[0]),
            &|xs| oracle::max_over_time(&xs[0], (n, f, l)),
            &mut rng,
        );
    }
}

pub fn check_embedding(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xeb);
    for i in 0..instances {
        let (v, d) = (rng.gen_range(3..=6), rng.gen_range(2..=4));
        let (n, seq) = (rng.gen_range(1..=2), rng.gen_range(2..=4));
        let mut ids: Vec<u32> = (0..n * seq).map(|_| rng.gen_range(0..v as u32)).collect();
        ids[1] = ids[0]; // force a repeated id so scatter accumulation is hit
        let table = Tensor::new(vec![v, d], signed_uniform(&mut rng, v * d, 0.1, 1.0)).unwrap();
        check_op(
            &format!("embedding[{i}]"),
            &[table],
            &|tape, vars| tape.embedding_lookup(vars[0], &ids, seq),
            &|xs| oracle::embedding(&xs[0], d, &ids),
            &mut rng,
        );
    }
}

pub fn check_select_rows(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1);
    for i in 0..instances {
        let (n, k) = (rng.gen_range(2..=5), rng.gen_range(1..=4));
        let picks = rng.gen_range(2..=5);
        let mut rows: Vec<u32> = (0..picks).map(|_| rng.gen_range(0..n as u32)).collect();
        rows[1] = rows[0]; // duplicate row: gradient must sum, not overwrite
        let x = Tensor::new(vec![n, k], signed_uniform(&mut rng, n * k, 0.1, 1.0)).unwrap();
        check_op(
            &format!("select_rows[{i}]"),
            &[x],
            &|tape, v| tape.select_rows(v[0], &rows),
            &|xs| oracle::select_rows(&xs[0], k, &rows),
            &mut rng,
        );
    }
}

pub fn check_concat_cols(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xcc);
    for i in 0..instances {
        let n = rng.gen_range(1..=3);
        let ks: Vec<usize> = (0..rng.gen_range(2..=3))
            .map(|_| rng.gen_range(1..=3))
            .collect();
        let inputs: Vec<Tensor> = ks
            .iter()
            .map(|&k| Tensor::new(vec![n, k], signed_uniform(&mut rng, n * k, 0.1, 1.0)).unwrap())
            .collect();
        let ks_ref = ks.clone();
        check_op(
            &format!("concat_cols[{i}]"),
            &inputs,
            &|tape, v| tape.concat_cols(v),
            &|xs| {
                let parts: Vec<(&[f64], usize)> = xs
                    .iter()
                    .zip(&ks_ref)
                    .map(|(x, &k)| (x.as_slice(), k))
                    .collect();
                oracle::concat_cols(&parts, n)
            },
            &mut rng,
        );
    }
}

pub fn check_softmax_cross_entropy(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ce);
    for i in 0..instances {
        let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=5));
        let logits =
            Tensor::new(vec![n, k], signed_uniform(&mut rng, n * k, 0.1, 2.0)).unwrap();
        if i % 2 == 0 {
            let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();
            check_op(
                &format!("softmax_cross_entropy[hard {i}]"),
                &[logits],
                &|tape, v| tape.softmax_cross_entropy(v[0], Targets::Hard(labels.clone())),
                &|xs| vec![oracle::sce_hard(&xs[0], k, &labels)],
                &mut rng,
            );
        } else {
            // random distributions, normalized in f32 exactly as handed in
            let mut t = vec![0.0f32; n * k];
            for row in t.chunks_mut(k) {
                let mut sum = 0.0f32;
                for v in row.iter_mut() {
                    *v = 0.05 + rng.gen::<f32>();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            let t64: Vec<f64> = t.iter().map(|&v| v as f64).collect();
            check_op(
                &format!("softmax_cross_entropy[soft {i}]"),
                &[logits],
                &|tape, v| {
                    tape.softmax_cross_entropy(
                        v[0],
                        Targets::Soft {
                            rows: t.clone(),
                            classes: k,
                        },
                    )
                },
                &|xs| vec![oracle::sce_soft(&xs[0], k, &t64)],
                &mut rng,
            );
        }
    }
}

/// Whole image stack: conv → bias → relu → pool, twice, then dense and
/// cross-entropy. Differentiates through every input including the pixels.
pub fn check_image_chain(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1c);
    for i in 0..instances {
        let (n, c, h, w) = (2, 1, 10, 10);
        let (f1, f2, k) = (2, 3, 2);
        let flat = f2; // 10 → conv 8 → pool 4 → conv 2 → pool 1
        let x = Tensor::new(
            vec![n, c, h, w],
            signed_uniform(&mut rng, n * c * h * w, 0.1, 1.0),
        )
        .unwrap();
        let k1 = Tensor::new(
            vec![f1, c, 3, 3],
            signed_uniform(&mut rng, f1 * c * 9, 0.1, 0.6),
        )
        .unwrap();
        let b1 = Tensor::new(vec![f1], signed_uniform(&mut rng, f1, 0.1, 0.4)).unwrap();
        let k2 = Tensor::new(
            vec![f2, f1, 3, 3],
            signed_uniform(&mut rng, f2 * f1 * 9, 0.1, 0.6),
        )
        .unwrap();
        let b2 = Tensor::new(vec![f2], signed_uniform(&mut rng, f2, 0.1, 0.4)).unwrap();
        let fcw = Tensor::new(vec![flat, k], signed_uniform(&mut rng, flat * k, 0.1, 0.8)).unwrap();
        let fcb = Tensor::new(vec![k], signed_uniform(&mut rng, k, 0.1, 0.4)).unwrap();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();

        check_op(
            &format!("image_chain[{i}]"),
            &[x, k1, b1, k2, b2, fcw, fcb],
            &|tape, v| {
                let c1 = tape.conv2d(v[0], v[1], 1)?;
                let c1 = tape.add_bias(c1, v[2])?;
                let r1 = tape.relu(c1);
                let p1 = tape.maxpool2d(r1, (2, 2))?;
                let c2 = tape.conv2d(p1, v[3], 1)?;
                let c2 = tape.add_bias(c2, v[4])?;
                let r2 = tape.relu(c2);
                let p2 = tape.maxpool2d(r2, (2, 2))?;
                let fl = tape.reshape(p2, vec![n, flat])?;
                let z = tape.matmul(fl, v[5])?;
                let z = tape.add_bias(z, v[6])?;
                tape.softmax_cross_entropy(z, Targets::Hard(labels.clone()))
            },
            &|xs| {
                let c1 = oracle::conv2d(&xs[0], (n, c, h, w), &xs[1], (f1, 3, 3), 1);
                let c1 = oracle::add_bias(&c1, &[n, f1, 8, 8], &xs[2]);
                let p1 = oracle::maxpool2d(&oracle::relu(&c1), (n, f1, 8, 8), (2, 2));
                let c2 = oracle::conv2d(&p1, (n, f1, 4, 4), &xs[3], (f2, 3, 3), 1);
                let c2 = oracle::add_bias(&c2, &[n, f2, 2, 2], &xs[4]);
                let p2 = oracle::maxpool2d(&oracle::relu(&c2), (n, f2, 2, 2), (2, 2));
                let z = oracle::matmul(&p2, n, flat, &xs[5], k);
                let z = oracle::add_bias(&z, &[n, k], &xs[6]);
                vec![oracle::sce_hard(&z, k, &labels)]
            },
            &mut rng,
        );
    }
}

/// Whole text stack: embedding → two conv widths → relu → max-over-time →
/// concat → dense → cross-entropy, differentiating the table and weights.
pub fn check_text_chain(instances: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7c);
    for i in 0..instances {
        let (v, d, l, n, k) = (6, 3, 5, 2, 2);
        let f = 2;
        let mut ids: Vec<u32> = (0..n * l).map(|_| rng.gen_range(0..v as u32)).collect();
        ids[2] = ids[0];
        let table = Tensor::new(vec![v, d], signed_uniform(&mut rng, v * d, 0.1, 0.8)).unwrap();
        let k2 = Tensor::new(vec![f, 2, d], separated_values(&mut rng, f * 2 * d, 0.11)).unwrap();
        let k3 = Tensor::new(vec![f, 3, d], separated_values(&mut rng, f * 3 * d, 0.11)).unwrap();
        let fcw = Tensor::new(vec![2 * f, k], signed_uniform(&mut rng, 2 * f * k, 0.1, 0.8)).unwrap();
        let fcb = Tensor::new(vec![k], signed_uniform(&mut rng, k, 0.1, 0.4)).unwrap();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();

        check_op(
            &format!("text_chain[{i}]"),
            &[table, k2, k3, fcw, fcb],
            &|tape, vars| {
                let e = tape.embedding_lookup(vars[0], &ids, l)?;
                let mut pooled = Vec::new();
                for kv in [vars[1], vars[2]] {
                    let conv = tape.conv1d_seq(e, kv)?;
                    let r = tape.relu(conv);
                    pooled.push(tape.max_over_time(r)?);
                }
                let cat = tape.concat_cols(&pooled)?;
                let z = tape.matmul(cat, vars[3])?;
                let z = tape.add_bias(z, vars[4])?;
                tape.softmax_cross_entropy(z, Targets::Hard(labels.clone()))
            },
            &|xs| {
                let e = oracle::embedding(&xs[0], d, &ids);
                let mut parts = Vec::new();
                for (kern, w) in [(&xs[1], 2usize), (&xs[2], 3usize)] {
                    let conv = oracle::conv1d(&e, (n, l, d), kern, (f, w));
                    parts.push(oracle::max_over_time(
                        &oracle::relu(&conv),
                        (n, f, l - w + 1),
                    ));
                }
                let part_refs: Vec<(&[f64], usize)> =
                    parts.iter().map(|p| (p.as_slice(), f)).collect();
                let cat = oracle::concat_cols(&part_refs, n);
                let z = oracle::matmul(&cat, n, 2 * f, &xs[3], k);
                let z = oracle::add_bias(&z, &[n, k], &xs[4]);
                vec![oracle::sce_hard(&z, k, &labels)]
            },
            &mut rng,
        );
    }
}

/// Run every family at the given instance count; returns (name, count)
/// rows for reporting.
pub fn run_all(instances: usize) -> Vec<(&'static str, usize)> {
    let families: Vec<(&'static str, fn(usize))> = vec![
        ("add", check_add),
        ("scale", check_scale),
        ("hadamard_const", check_hadamard_const),
        ("relu", check_relu),
        ("reshape", check_reshape),
        ("mean", check_mean),
        ("matmul", check_matmul),
        ("add_bias", check_add_bias),
        ("conv2d", check_conv2d),
        ("conv1d_seq", check_conv1d),
        ("maxpool2d", check_maxpool2d),
        ("max_over_time", check_max_over_time),
        ("embedding_lookup", check_embedding),
        ("select_rows", check_select_rows),
        ("concat_cols", check_concat_cols),
        ("softmax_cross_entropy", check_softmax_cross_entropy),
    ];
    let mut report = Vec::new();
    for (name, run) in families {
        run(instances);
        report.push((name, instances));
    }
    report
}
