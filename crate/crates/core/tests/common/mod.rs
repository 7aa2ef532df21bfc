#![allow(dead_code, clippy::needless_range_loop)]

use leakfl::leakage::{assemble_adversarial_model, craft_leak_module, LinearLeakModule};
use leakfl::nn::{softmax_cross_entropy, LayerTensors};
use leakfl::{Activation, EmpiricalCdf, GlobalModel, GradientSet, SeededRng, Sequential, Tensor};

pub fn random_tensor(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_labels(n: usize, classes: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..n).map(|_| rng.below(classes)).collect()
}

pub struct Crafted {
    pub model: GlobalModel,
    pub leak: LinearLeakModule,
    pub encoder: Sequential,
}

/// Random encoder + crafted leak module + random classifier tail.
pub fn random_crafted(rng: &mut SeededRng, input_dim: usize, d: usize, k: usize, o: usize, classes: usize) -> Crafted {
    let encoder = Sequential::random(&[input_dim, 24, d], Activation::Relu, Activation::Identity, rng);
    let aux = random_tensor(400, input_dim, 0.0, 1.0, rng);
    let cdf = EmpiricalCdf::fit(&encoder.predict(&aux).unwrap()).unwrap();
    let leak = craft_leak_module(&cdf, k, d, o, 1.0).unwrap();
    let tail = Sequential::random(&[o, classes], Activation::Identity, Activation::Identity, rng);
    let model = assemble_adversarial_model(&encoder, &leak, Some(&tail)).unwrap();
    Crafted { model, leak, encoder }
}

/// Forward pass with explicit loops, independent of the gemm path.
pub fn naive_forward(net: &Sequential, x: &Tensor) -> Tensor {
    let mut cur: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
    for layer in net.layers() {
        let (out, inp) = layer.dims();
        cur = cur
            .iter()
            .map(|row| {
                (0..out)
                    .map(|o| {
                        let mut z = layer.bias().data()[o];
                        for i in 0..inp {
                            z += layer.weight().data()[o * inp + i] * row[i];
                        }
                        match layer.activation() {
                            Activation::Relu => z.max(0.0),
                            Activation::Identity => z,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    Tensor::from_rows(&cur).unwrap()
}

pub fn ce_loss(net: &Sequential, x: &Tensor, labels: &[usize]) -> f64 {
    softmax_cross_entropy(&naive_forward(net, x), labels).unwrap().0
}

/// Sign pattern of every ReLU pre-activation.
fn relu_pattern(net: &Sequential, x: &Tensor) -> Vec<bool> {
    let (cache, _) = net.forward(x).unwrap();
    cache
        .pre_activations
        .iter()
        .zip(net.layers())
        .filter(|(_, l)| l.activation() == Activation::Relu)
        .flat_map(|(z, _)| z.data().iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        .collect()
}

pub struct FdResult {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central finite differences on the mean cross-entropy versus the analytic
/// gradient. Parameters whose perturbation flips a ReLU are skipped.
pub fn fd_check(net: &Sequential, x: &Tensor, labels: &[usize], eps: f64) -> FdResult {
    let (cache, logits) = net.forward(x).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&logits, labels).unwrap();
    let analytic = net.backward(&cache, &dlogits).unwrap();
    let base_pattern = relu_pattern(net, x);
    let theta = net.params();
    let mut res = FdResult {
        max_rel: 0.0,
        checked: 0,
        skipped: 0,
    };
    let a: Vec<f64> = analytic.values().collect();
    for (idx, &ga) in a.iter().enumerate() {
        let shifted = |delta: f64| {
            let mut p = theta.clone();
            *p.values_mut().nth(idx).unwrap() += delta;
            let mut n = net.clone();
            n.set_params(&p).unwrap();
            n
        };
        let (plus, minus) = (shifted(eps), shifted(-eps));
        if relu_pattern(&plus, x) != base_pattern || relu_pattern(&minus, x) != base_pattern {
            res.skipped += 1;
            continue;
        }
        let numeric = (ce_loss(&plus, x, labels) - ce_loss(&minus, x, labels)) / (2.0 * eps);
        let scale = ga.abs().max(numeric.abs());
        let err = if scale > 1e-6 { (ga - numeric).abs() / scale } else { (ga - numeric).abs() / 1e-6 };
        res.max_rel = res.max_rel.max(err);
        res.checked += 1;
    }
    res
}

/// Largest number of one-to-one pairs with PSNR >= `th`, by exhaustive search.
pub fn brute_force_successes(table: &[f64], m: usize, r: usize, th: f64) -> usize {
    fn go(i: usize, used: &mut Vec<bool>, table: &[f64], m: usize, r: usize, th: f64) -> usize {
        if i == m {
            return 0;
        }
        let mut best = go(i + 1, used, table, m, r, th);
        for j in 0..r {
            if !used[j] && table[i * r + j] >= th {
                used[j] = true;
                best = best.max(1 + go(i + 1, used, table, m, r, th));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; r], table, m, r, th)
}

/// Two-pass PSNR written out directly.
pub fn naive_psnr(a: &[f64], b: &[f64], max_i: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let diff = a[i] - b[i];
        sum += diff * diff;
    }
    let mse = sum / a.len() as f64;
    if mse < 1e-15 {
        return 300.0;
    }
    10.0 * (max_i * max_i / mse).log10()
}

/// Per-sample `dL/dy` at the first leak layer output, by hand: hidden
/// `o = relu(w2 y + b2)`, logits from the identity tail, mean cross-entropy.
pub fn hand_dy(after: &Sequential, y: &[f64], label: usize, m: usize) -> Vec<f64> {
    let (w2, b2) = (after.layers()[0].weight(), after.layers()[0].bias());
    let (tail, tb) = (after.layers()[1].weight(), after.layers()[1].bias());
    let o: Vec<f64> = (0..w2.rows())
        .map(|r| (b2.data()[r] + (0..w2.cols()).map(|s| w2.at(r, s) * y[s]).sum::<f64>()).max(0.0))
        .collect();
    let logits: Vec<f64> = (0..tail.rows())
        .map(|c| tb.data()[c] + (0..tail.cols()).map(|s| tail.at(c, s) * o[s]).sum::<f64>())
        .collect();
    let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
    let delta: Vec<f64> = (0..logits.len())
        .map(|c| ((logits[c] - mx).exp() / z - if c == label { 1.0 } else { 0.0 }) / m as f64)
        .collect();
    let d_o: Vec<f64> = (0..o.len())
        .map(|s| if o[s] > 0.0 { (0..delta.len()).map(|c| tail.at(c, s) * delta[c]).sum() } else { 0.0 })
        .collect();
    (0..w2.cols()).map(|n| (0..o.len()).map(|s| w2.at(s, n) * d_o[s]).sum()).collect()
}

pub fn random_set(rng: &mut SeededRng, shapes: &[(usize, usize)], scale: f64) -> GradientSet {
    GradientSet {
        layers: shapes
            .iter()
            .map(|&(o, i)| LayerTensors {
                weight: random_tensor(o, i, -scale, scale, rng),
                bias: Tensor::vector(random_tensor(1, o, -scale, scale, rng).into_data()),
            })
            .collect(),
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// 2 to 4 dense layers of random widths.
pub fn random_net(rng: &mut SeededRng) -> Sequential {
    let depth = 2 + rng.below(3);
    let widths: Vec<usize> = (0..=depth).map(|_| 2 + rng.below(6)).collect();
    Sequential::random(&widths, Activation::Relu, Activation::Identity, rng)
}
