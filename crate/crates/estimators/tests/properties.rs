use proptest::prelude::*;
use rand::Rng;
use sbi_core::{RngKey, Tensor};
use sbi_estimators::cnf::{draw_path_noise, ot_path_sample, target_field};
use sbi_estimators::ratio::class_log_probs;
use sbi_estimators::{Maf, MafSpec};
use sbi_ndnet::NetParams;

fn rand_tensor(seed: u64, r: usize, c: usize, scale: f64) -> Tensor {
    let mut rng = RngKey::new(seed).rng();
    Tensor::matrix(r, c, (0..r * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
}

fn random_params(p: &NetParams, seed: u64, scale: f64) -> NetParams {
    let mut rng = RngKey::new(seed).rng();
    let flat: Vec<f64> = p.flat().iter().map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    p.with_flat(&flat)
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn maf_is_bijective(dim in 1usize..5, ctx in 0usize..3, layers in 1usize..4, seed in 0u64..10_000) {
        let maf = Maf::new(MafSpec::new(dim, ctx, layers, &[8])).unwrap();
        let p = random_params(&maf.init(RngKey::new(seed)).unwrap(), seed + 1, 0.4);
        let x = rand_tensor(seed + 2, 6, dim, 2.0);
        let c = rand_tensor(seed + 3, 6, ctx, 1.0);
        let (z, _) = maf.inverse(&p, &x, &c).unwrap();
        prop_assert!(max_abs_diff(&maf.forward(&p, &z, &c).unwrap(), &x) < 1e-9);
        let z2 = rand_tensor(seed + 4, 6, dim, 2.0);
        let (back, _) = maf.inverse(&p, &maf.forward(&p, &z2, &c).unwrap(), &c).unwrap();
        prop_assert!(max_abs_diff(&back, &z2) < 1e-9);
    }

    #[test]
    fn target_field_matches_path_velocity(d in 1usize..5, seed in 0u64..10_000, sigma in 1e-4f64..0.1) {
        let n = 16;
        let theta1 = rand_tensor(seed, n, d, 3.0);
        let (t, eps) = draw_path_noise(RngKey::new(seed + 1), n, d);
        let theta_t = ot_path_sample(&theta1, &t, &eps, sigma);
        let u = target_field(&theta_t, &theta1, &t, sigma);
        for i in 0..n {
            for j in 0..d {
                let want = theta1.get(i, j) - (1.0 - sigma) * eps.get(i, j);
                prop_assert!((u.get(i, j) - want).abs() < 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn class_probabilities_normalize(c in 1usize..8, gamma in 0.05f64..20.0, seed in 0u64..10_000) {
        let lp = class_log_probs(&rand_tensor(seed, 4, c, 10.0), gamma);
        for i in 0..4 {
            let s: f64 = lp.row(i).iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
