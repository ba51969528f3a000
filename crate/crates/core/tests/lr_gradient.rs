//! Analytic softmax-regression gradient against central differences.

use bloomtax_core::features::FeatureVector;
use bloomtax_core::models::lr_objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=20);
        let n = rng.gen_range(1..=30);
        let l2 = if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(0.0..1.0)
        };
        let train: Vec<FeatureVector> = (0..n)
            .map(|_| {
                let mut pairs = Vec::new();
                for j in 0..dim as u32 {
                    if rng.gen_bool(0.4) {
                        pairs.push((j, rng.gen_range(1..4) as f64));
                    }
                }
                FeatureVector::from_pairs(pairs, 0)
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
        let w: Vec<f64> = (0..6 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));

        let (_, gw, gb) = lr_objective(&w, &b, &train, &labels, dim, l2);
        for i in 0..w.len() {
            let (mut hi, mut lo) = (w.clone(), w.clone());
            hi[i] += EPS;
            lo[i] -= EPS;
            let fd = (lr_objective(&hi, &b, &train, &labels, dim, l2).0
                - lr_objective(&lo, &b, &train, &labels, dim, l2).0)
                / (2.0 * EPS);
            worst = worst.max(rel_err(gw[i], fd));
        }
        for c in 0..6 {
            let (mut hi, mut lo) = (b, b);
            hi[c] += EPS;
            lo[c] -= EPS;
            let fd = (lr_objective(&w, &hi, &train, &labels, dim, l2).0
                - lr_objective(&w, &lo, &train, &labels, dim, l2).0)
                / (2.0 * EPS);
            worst = worst.max(rel_err(gb[c], fd));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}
