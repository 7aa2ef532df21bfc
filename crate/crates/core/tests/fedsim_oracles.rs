mod common;

use common::{pearson, random_crafted, random_labels, random_set, random_tensor};
use leakfl::fedsim::{
    approx_aggregated_gradient, client_round, dp_clip_and_noise, net_masks, pairwise_masks, secure_aggregate,
    server_aggregate, ClientUpdate, DpConfig, FlMode, UpdateKind,
};
use leakfl::{execute_round, make_clients, GradientSet, SeededRng};

fn update(payload: GradientSet) -> ClientUpdate {
    ClientUpdate {
        kind: UpdateKind::GradientSum,
        payload,
        sample_count: 1,
    }
}

fn sum(sets: &[GradientSet]) -> GradientSet {
    let mut acc = sets[0].clone();
    for s in &sets[1..] {
        acc.add_assign(s).unwrap();
    }
    acc
}

#[test]
fn masked_sum_equals_plain_sum() {
    let mut rng = SeededRng::new(31, 0);
    for n in [2usize, 8, 32] {
        for _ in 0..100 {
            let shapes: Vec<(usize, usize)> = (0..1 + rng.below(3)).map(|_| (1 + rng.below(5), 1 + rng.below(5))).collect();
            let scale = 10f64.powf(rng.uniform_range(-3.0, 3.0));
            let deltas: Vec<GradientSet> = (0..n).map(|_| random_set(&mut rng, &shapes, scale)).collect();
            let updates: Vec<ClientUpdate> = deltas.iter().cloned().map(update).collect();
            let (masked, agg) = secure_aggregate(&updates, 1000.0, &mut rng).unwrap();
            assert_eq!(masked.len(), n);
            let max_delta = deltas.iter().map(GradientSet::max_abs).fold(0.0, f64::max);
            let err = agg.sub(&sum(&deltas)).unwrap().max_abs();
            assert!(err <= 1e-6 * max_delta.max(1.0) * n as f64, "n={n} err={err}");
        }
    }
}

#[test]
fn pair_masks_cover_every_pair_once_and_cancel() {
    let mut rng = SeededRng::new(32, 0);
    let template = random_set(&mut rng, &[(3, 4), (2, 3)], 1.0);
    let n = 6;
    let pairs = pairwise_masks(&template, n, 50.0, 7);
    let mut seen: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    seen.sort_unstable();
    let expect: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    assert_eq!(seen, expect);
    for p in &pairs {
        assert!(p.mask.max_abs() <= 50.0);
        let mut neg = p.mask.clone();
        neg.scale(-1.0);
        let mut zero = p.mask.clone();
        zero.add_assign(&neg).unwrap();
        assert!(zero.values().all(|v| v == 0.0));
    }
    let nets = net_masks(&template, n, &pairs).unwrap();
    assert!(sum(&nets).max_abs() <= 1e-12 * 50.0 * n as f64);
}

#[test]
fn masked_updates_do_not_correlate_with_updates() {
    let mut rng = SeededRng::new(33, 0);
    let deltas: Vec<GradientSet> = (0..10).map(|_| random_set(&mut rng, &[(40, 100)], 1.0)).collect();
    let updates: Vec<ClientUpdate> = deltas.iter().cloned().map(update).collect();
    let (masked, _) = secure_aggregate(&updates, 1000.0, &mut rng).unwrap();
    for (d, u) in deltas.iter().zip(&masked) {
        let a: Vec<f64> = d.values().collect();
        let b: Vec<f64> = u.payload.values().collect();
        assert!(pearson(&a, &b).abs() <= 0.05);
    }
}

#[test]
fn clipping_bounds_each_contribution() {
    let mut rng = SeededRng::new(34, 0);
    for _ in 0..50 {
        let scale = 10f64.powf(rng.uniform_range(-2.0, 2.0));
        let g = random_set(&mut rng, &[(5, 5), (3, 5)], scale);
        let c = rng.uniform_range(0.1, 3.0);
        let out = dp_clip_and_noise(std::slice::from_ref(&g), &DpConfig::new(c, 0.0), &mut rng).unwrap();
        assert!(out.l2_norm() <= c + 1e-12);
        if g.l2_norm() <= c {
            assert_eq!(out, g);
        }
    }
}

#[test]
fn noise_has_the_configured_variance() {
    let mut rng = SeededRng::new(35, 0);
    let zero = random_set(&mut rng, &[(100, 100)], 0.0);
    let (c, sigma) = (2.0, 0.5);
    let out = dp_clip_and_noise(&[zero], &DpConfig::new(c, sigma), &mut rng).unwrap();
    let v: Vec<f64> = out.values().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.05);
    assert!((var - (sigma * c).powi(2)).abs() < 0.05 * (sigma * c).powi(2), "var {var}");
}

#[test]
fn one_local_step_is_a_scaled_gradient() {
    let mut rng = SeededRng::new(36, 0);
    let c = random_crafted(&mut rng, 10, 4, 16, 6, 3);
    let x = random_tensor(12, 10, 0.0, 1.0, &mut rng);
    let labels = random_labels(12, 3, &mut rng);
    let eta = 0.05;
    let clients = make_clients(&x, &labels, 4, 1, eta).unwrap();
    let dp = DpConfig::disabled();
    let sgd = execute_round(&c.model, &clients, FlMode::FedSgd, &dp, None, &SeededRng::new(1, 0)).unwrap();
    let avg = execute_round(&c.model, &clients, FlMode::FedAvg, &dp, None, &SeededRng::new(1, 0)).unwrap();
    let approx = approx_aggregated_gradient(&c.model.params(), &avg, None).unwrap();
    let mut scaled = sgd.clone();
    scaled.scale(eta);
    assert!(approx.sub(&scaled).unwrap().max_abs() <= 1e-12);
}

#[test]
fn client_order_does_not_matter() {
    let mut rng = SeededRng::new(37, 0);
    let sets: Vec<GradientSet> = (0..7).map(|_| random_set(&mut rng, &[(6, 9)], 3.0)).collect();
    let w: Vec<f64> = (0..7).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    let refs: Vec<&GradientSet> = sets.iter().collect();
    let a = server_aggregate(&refs, &w).unwrap();
    let mut order: Vec<usize> = (0..7).collect();
    rng.shuffle(&mut order);
    let refs2: Vec<&GradientSet> = order.iter().map(|&i| &sets[i]).collect();
    let w2: Vec<f64> = order.iter().map(|&i| w[i]).collect();
    let b = server_aggregate(&refs2, &w2).unwrap();
    assert!(a.sub(&b).unwrap().max_abs() <= 1e-12 * a.max_abs().max(1.0));
}

#[test]
fn identical_clients_average_to_any_one_of_them() {
    let mut rng = SeededRng::new(38, 0);
    let c = random_crafted(&mut rng, 8, 4, 8, 4, 2);
    let x = random_tensor(3, 8, 0.0, 1.0, &mut rng);
    let labels = random_labels(3, 2, &mut rng);
    let mut clients = make_clients(&x, &labels, 1, 2, 0.1).unwrap();
    for id in 1..4 {
        let mut other = clients[0].clone();
        other.id = id;
        clients.push(other);
    }
    let dp = DpConfig::disabled();
    let agg = execute_round(&c.model, &clients, FlMode::FedAvg, &dp, None, &SeededRng::new(2, 0)).unwrap();
    let single = client_round(&clients[0], &c.model, FlMode::FedAvg, &dp, &mut SeededRng::new(3, 0)).unwrap();
    assert!(agg.sub(&single.payload).unwrap().max_abs() <= 1e-12);
}

#[test]
fn rounds_replay_bitwise_and_masking_preserves_the_aggregate() {
    let mut rng = SeededRng::new(39, 0);
    let c = random_crafted(&mut rng, 10, 4, 16, 6, 3);
    let x = random_tensor(16, 10, 0.0, 1.0, &mut rng);
    let labels = random_labels(16, 3, &mut rng);
    let clients = make_clients(&x, &labels, 4, 1, 0.01).unwrap();
    let dp = DpConfig::new(1.0, 0.3);
    let seed = SeededRng::new(5, 0);
    let a = execute_round(&c.model, &clients, FlMode::FedSgd, &dp, Some(1000.0), &seed).unwrap();
    let b = execute_round(&c.model, &clients, FlMode::FedSgd, &dp, Some(1000.0), &seed).unwrap();
    assert_eq!(a, b);
    let plain = execute_round(&c.model, &clients, FlMode::FedSgd, &dp, None, &seed).unwrap();
    assert!(a.sub(&plain).unwrap().max_abs() <= 1e-6 * plain.max_abs().max(1.0) * 4.0);
}
