mod common;

use common::{hand_dy, random_crafted, random_labels, random_tensor};
use leakfl::leakage::{bin_occupancy_oracle, bin_of, brightness_rows, recover_lsrs, BinStatus};
use leakfl::nn::softmax_cross_entropy;
use leakfl::{EmpiricalCdf, GlobalModel, GradientSet, SeededRng, Sequential, Tensor};
use proptest::prelude::*;

fn batch_gradient(model: &GlobalModel, x: &Tensor, labels: &[usize]) -> GradientSet {
    let (cache, logits) = model.net().forward(x).unwrap();
    let (_, dl) = softmax_cross_entropy(&logits, labels).unwrap();
    model.net().backward(&cache, &dl).unwrap()
}

#[test]
fn singly_occupied_bins_are_recovered_exactly() {
    let mut rng = SeededRng::new(21, 0);
    for _ in 0..30 {
        let c = random_crafted(&mut rng, 10, 6, 32, 8, 4);
        let x = random_tensor(8, 10, 0.0, 1.0, &mut rng);
        let labels = random_labels(8, 4, &mut rng);
        let g = batch_gradient(&c.model, &x, &labels);
        let (gw, gb) = c.model.leak_gradients(&g).unwrap();
        let bins = recover_lsrs(gw, gb).unwrap();
        let lsr = c.encoder.predict(&x).unwrap();
        let h = c.leak.thresholds();
        let bright = brightness_rows(&lsr).unwrap();
        let occ = bin_occupancy_oracle(&bright, &h).unwrap();
        for (r, status) in bins.bins.iter().enumerate() {
            match (occ.bins[r], status) {
                (0, BinStatus::Recovered(_)) => panic!("bin {r} is empty but was recovered"),
                (1, BinStatus::Recovered(v)) => {
                    let j = (0..8).find(|&j| bin_of(bright[j], &h) == Some(r)).unwrap();
                    let err = v.iter().zip(lsr.row(j)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err <= 1e-6, "bin {r} error {err}");
                }
                (1, BinStatus::Empty) => panic!("singly occupied bin {r} reported empty"),
                _ => {}
            }
        }
    }
}

#[test]
fn non_empty_bins_coincide_with_occupied_bins() {
    let mut rng = SeededRng::new(22, 0);
    for _ in 0..200 {
        let m = 1 + rng.below(24);
        let c = random_crafted(&mut rng, 8, 4, 16, 6, 3);
        let x = random_tensor(m, 8, 0.0, 1.0, &mut rng);
        let labels = random_labels(m, 3, &mut rng);
        let g = batch_gradient(&c.model, &x, &labels);
        let (gw, gb) = c.model.leak_gradients(&g).unwrap();
        let bins = recover_lsrs(gw, gb).unwrap();
        let bright = brightness_rows(&c.encoder.predict(&x).unwrap()).unwrap();
        let occ = bin_occupancy_oracle(&bright, &c.leak.thresholds()).unwrap();
        assert_eq!(bins.occupied_mask(), occ.occupied());
        assert_eq!(occ.bins.iter().sum::<usize>() + occ.below_range, m);
    }
}

/// Row `l` of the first leak layer's weight gradient is the sum, over samples
/// brighter than `h_l`, of `dL/dy_l * lsr`; `dL/dy` is identical across the
/// neurons of a sample because all rows of `w2` are equal.
#[test]
fn weight_gradient_rows_are_partial_sums() {
    let mut rng = SeededRng::new(23, 0);
    for _ in 0..10 {
        let c = random_crafted(&mut rng, 10, 5, 20, 6, 3);
        let m = 12;
        let x = random_tensor(m, 10, 0.0, 1.0, &mut rng);
        let labels = random_labels(m, 3, &mut rng);
        let g = batch_gradient(&c.model, &x, &labels);
        let (gw, _) = c.model.leak_gradients(&g).unwrap();
        let lsr = c.encoder.predict(&x).unwrap();
        let h = c.leak.thresholds();
        let (l1, _) = c.model.leak_layer_indices();
        let after = Sequential::new(c.model.net().layers()[l1 + 1..].to_vec()).unwrap();
        let y = c.model.net().truncated(l1 + 1).unwrap().predict(&x).unwrap();
        let dy: Vec<Vec<f64>> = (0..m).map(|j| hand_dy(&after, y.row(j), labels[j], m)).collect();
        for row in &dy {
            assert!(row.iter().all(|v| (v - row[0]).abs() <= 1e-12));
        }
        let bright = brightness_rows(&lsr).unwrap();
        for l in 0..h.len() {
            let mut expect = vec![0.0; lsr.cols()];
            for j in (0..m).filter(|&j| bright[j] > h[l]) {
                for (e, v) in expect.iter_mut().zip(lsr.row(j)) {
                    *e += dy[j][l] * v;
                }
            }
            let err = expect.iter().zip(gw.row(l)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "row {l}: {err}");
        }
    }
}

#[test]
fn quantiles_match_order_statistics() {
    let mut rng = SeededRng::new(24, 0);
    let n = 20_000;
    let values: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let cdf = EmpiricalCdf::from_values(values.clone()).unwrap();
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    assert!(cdf.inverse(0.0).is_err() && cdf.inverse(1.0).is_err());
    for q in [1e-4, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.9999] {
        let p = q * (n - 1) as f64;
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let expect = sorted[lo] + (p - lo as f64) * (sorted[hi] - sorted[lo]);
        assert!((cdf.inverse(q).unwrap() - expect).abs() <= 1e-12);
    }
    // Monte Carlo agreement with the standard normal quantiles.
    for (q, z) in [(0.1, -1.2815515655446004), (0.5, 0.0), (0.975, 1.959963984540054)] {
        assert!((cdf.inverse(q).unwrap() - z).abs() < 0.05, "q={q}");
    }
}

#[test]
fn crafted_bins_hold_equal_mass_on_fresh_draws() {
    let mut rng = SeededRng::new(25, 0);
    let k = 16;
    let aux: Vec<f64> = (0..50_000).map(|_| rng.uniform()).collect();
    let cdf = EmpiricalCdf::from_values(aux).unwrap();
    let leak = leakfl::craft_leak_module(&cdf, k, 1, 2, 1.0).unwrap();
    let h = leak.thresholds();
    let fresh: Vec<f64> = (0..50_000).map(|_| rng.uniform()).collect();
    let occ = bin_occupancy_oracle(&fresh, &h).unwrap();
    let expect = 50_000.0 / (k + 1) as f64;
    for c in occ.bins.iter().chain([&occ.below_range]) {
        assert!((*c as f64 - expect).abs() < 0.1 * expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bin_of_matches_linear_scan(mut h in prop::collection::vec(-5.0f64..5.0, 2..20), b in -6.0f64..6.0) {
        h.sort_by(f64::total_cmp);
        let scan = (0..h.len()).rev().find(|&r| b > h[r]);
        prop_assert_eq!(bin_of(b, &h), scan);
    }

    #[test]
    fn recovery_is_scale_invariant(seed in any::<u64>(), s in 1e-3f64..1e3) {
        let mut rng = SeededRng::new(seed, 0);
        let gw = random_tensor(8, 3, -1.0, 1.0, &mut rng);
        let gb = random_tensor(1, 8, -1.0, 1.0, &mut rng);
        let gb = Tensor::vector(gb.data().to_vec());
        let a = recover_lsrs(&gw, &gb).unwrap();
        let (mut gw2, mut gb2) = (gw.clone(), gb.clone());
        gw2.scale(s);
        gb2.scale(s);
        let b = recover_lsrs(&gw2, &gb2).unwrap();
        prop_assert_eq!(a.occupied_mask(), b.occupied_mask());
        for ((_, x), (_, y)) in a.recovered().zip(b.recovered()) {
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn thresholds_are_sorted(seed in any::<u64>(), k in 2usize..40) {
        let mut rng = SeededRng::new(seed, 0);
        let v: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let leak = leakfl::craft_leak_module(&EmpiricalCdf::from_values(v).unwrap(), k, 3, 2, 1.0).unwrap();
        let h = leak.thresholds();
        prop_assert!(h.windows(2).all(|w| w[0] <= w[1]));
    }
}
