use blockcorr::partition::BlockStructure;
use blockcorr::testing::{
    max_cell_spread, random_cell_constant_spd, random_partition, weighted_projection_check,
};
use blockcorr::{loss, Partition, SigmaEstimate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random partition with at least one cluster of two or more variables.
fn coarse_partition(rng: &mut ChaCha8Rng, d: usize) -> Partition {
    loop {
        let g = random_partition(rng, d);
        if g.len() < d {
            return g;
        }
    }
}

fn random_tau(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.random_range(-0.9..0.9)).collect()
}

#[test]
fn generalized_least_squares_reduces_to_block_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..50 {
        let d = rng.random_range(3..=8);
        let g = random_partition(&mut rng, d);
        let sigma = random_cell_constant_spd(&mut rng, &g);
        assert!(max_cell_spread(&sigma, &g).unwrap() < 1e-12);
        let tau = random_tau(&mut rng, sigma.nrows());
        let gls = weighted_projection_check(&tau, &g, &sigma).unwrap();
        let means = BlockStructure::new(&g).unwrap().gamma_apply(&tau).unwrap();
        for (a, b) in gls.iter().zip(&means) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
    let g = Partition::new(4, vec![vec![0, 1, 2], vec![3]]).unwrap();
    let tau = random_tau(&mut rng, 6);
    let gls = weighted_projection_check(&tau, &g, &DMatrix::identity(6, 6)).unwrap();
    let means = BlockStructure::new(&g).unwrap().gamma_apply(&tau).unwrap();
    for (a, b) in gls.iter().zip(&means) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn unstructured_weights_move_the_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut differs = 0;
    for _ in 0..50 {
        let d = rng.random_range(3..=8);
        let g = coarse_partition(&mut rng, d);
        let p = d * (d - 1) / 2;
        let x = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &x * x.transpose() + DMatrix::identity(p, p) * 0.1;
        let tau = random_tau(&mut rng, p);
        let gls = weighted_projection_check(&tau, &g, &sigma).unwrap();
        let means = BlockStructure::new(&g).unwrap().gamma_apply(&tau).unwrap();
        let gap = gls
            .iter()
            .zip(&means)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-4 {
            differs += 1;
        }
    }
    assert!(differs >= 40, "{differs}");
}

#[test]
fn cell_constant_class_is_closed_under_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..50 {
        let d = rng.random_range(2..=8);
        let g = random_partition(&mut rng, d);
        let sigma = random_cell_constant_spd(&mut rng, &g);
        let inv = sigma.clone().try_inverse().unwrap();
        let spread = max_cell_spread(&inv, &g).unwrap();
        assert!(spread <= 1e-8 * inv.amax().max(1.0), "{spread}");
    }
}

#[test]
fn projection_reduces_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..40 {
        let d = rng.random_range(2..=7);
        let g = random_partition(&mut rng, d);
        let sigma = random_cell_constant_spd(&mut rng, &g);
        let gamma = BlockStructure::new(&g).unwrap().gamma_matrix().unwrap();
        let gs = &gamma * &sigma;
        // Γ commutes with cell-constant matrices
        assert!((&gs - &sigma * &gamma).abs().max() < 1e-10);
        let diff = &sigma - &gs;
        let sym = (&diff + diff.transpose()) * 0.5;
        let min = sym.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8, "{min}");
    }
}

/// Splits every cluster of `g` at random to get a refinement.
fn random_refinement(rng: &mut ChaCha8Rng, g: &Partition) -> Partition {
    let labels: Vec<usize> = (0..g.dim())
        .map(|i| g.label(i) * 2 + rng.random_range(0..2))
        .collect();
    Partition::from_labels(&labels).unwrap()
}

#[test]
fn loss_telescopes_along_refinements() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..30 {
        let d = rng.random_range(3..=7);
        let coarse = coarse_partition(&mut rng, d);
        let fine = random_refinement(&mut rng, &coarse);
        assert!(fine == coarse || fine.is_refinement_of(&coarse).unwrap());
        let sigma_m = random_cell_constant_spd(&mut rng, &coarse);
        let sigma = SigmaEstimate::full(sigma_m.clone(), 100);
        let tau = random_tau(&mut rng, sigma_m.nrows());
        let t_coarse = BlockStructure::new(&coarse)
            .unwrap()
            .gamma_apply(&tau)
            .unwrap();
        let t_fine = BlockStructure::new(&fine)
            .unwrap()
            .gamma_apply(&tau)
            .unwrap();
        let l_coarse = loss(&t_coarse, &tau, &sigma).unwrap();
        let l_fine = loss(&t_fine, &tau, &sigma).unwrap();
        let diff =
            DVector::from_iterator(tau.len(), t_fine.iter().zip(&t_coarse).map(|(a, b)| a - b));
        let extra = (diff.transpose() * sigma_m.clone().try_inverse().unwrap() * &diff)[(0, 0)];
        assert!(
            (l_coarse - l_fine - extra).abs() <= 1e-8 * (1.0 + l_coarse),
            "{l_coarse} {l_fine} {extra}"
        );
        assert!(l_coarse >= l_fine - 1e-10);
        assert!(l_fine >= -1e-10);
    }
}

#[test]
fn loss_examples() {
    let tau = vec![0.1, 0.4, -0.2];
    let id = SigmaEstimate::full(DMatrix::identity(3, 3), 10);
    assert_eq!(loss(&tau, &tau, &id).unwrap(), 0.0);
    let t = vec![0.0, 0.5, 0.0];
    let l = loss(&t, &tau, &id).unwrap();
    assert!((l - (0.01 + 0.01 + 0.04)).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let x = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
    let a = &x * x.transpose() + DMatrix::identity(3, 3) * 0.2;
    let e = DVector::from_vec(vec![0.1, -0.1, -0.2]);
    let oracle = (e.transpose() * a.clone().try_inverse().unwrap() * &e)[(0, 0)];
    let got = loss(&t, &tau, &SigmaEstimate::full(a, 10)).unwrap();
    assert!((got - oracle).abs() <= 1e-8);
}
