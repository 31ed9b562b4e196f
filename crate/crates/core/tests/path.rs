#![allow(clippy::excessive_precision)]

use blockcorr::covariance::rank_one_weight;
use blockcorr::simulate::Scenario;
use blockcorr::testing::cell_average;
use blockcorr::{
    alpha_values, build_path, build_path_from, chi_square_sf, score_partition, select_structure,
    CovarianceMode, DataMatrix, Error, Family, Partition, PluginCovariance, ShrinkageWeight,
    SigmaEstimate, TauEstimate,
};
use nalgebra::{DMatrix, DVector};

fn scenario(g: Partition, value: impl Fn(usize, usize) -> f64, family: Family) -> Scenario {
    Scenario {
        name: String::new(),
        true_tau: Scenario::block_matrix(&g, value),
        partition: g,
        family,
        n: 0,
        replicates: 0,
        w: 0.0,
        alpha_levels: vec![],
        seed: 0,
        mode: CovarianceMode::Full,
    }
}

fn four_variable_data(seed: u64, n: usize) -> DataMatrix {
    let g = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
    let s = scenario(g, |a, b| if a == b { 0.45 } else { 0.15 }, Family::Normal);
    s.sampler().unwrap().sample(n, seed, 0).unwrap()
}

fn w(x: f64) -> ShrinkageWeight {
    ShrinkageWeight::new(x).unwrap()
}

#[test]
fn two_variable_path_is_forced() {
    let data = DataMatrix::from_rows(&[
        vec![1.0, 1.5],
        vec![2.0, 2.5],
        vec![3.0, 2.0],
        vec![4.0, 5.0],
    ])
    .unwrap();
    let (tau, path) = build_path(&data, w(0.5), CovarianceMode::Full).unwrap();
    assert_eq!(
        path.partitions,
        vec![Partition::singletons(2), Partition::single_cluster(2)]
    );
    assert_eq!(path.alphas, vec![1.0, 1.0]);
    assert_eq!(path.taus[1].tau_tilde, tau.tau);
    let (sel, part) = select_structure(&path, 0.05).unwrap();
    assert_eq!(sel.i, 1);
    assert_eq!(part, &Partition::single_cluster(2));

    // perfectly concordant columns: the plug-in covariance vanishes
    let rows: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64, (k * k) as f64]).collect();
    let data = DataMatrix::from_rows(&rows).unwrap();
    let (tau, path) = build_path(&data, w(0.0), CovarianceMode::Full).unwrap();
    assert_eq!(tau.tau, vec![1.0]);
    assert_eq!(path.losses, vec![0.0, 0.0]);
    assert_eq!(path.taus[1].tau_tilde, vec![1.0]);
}

#[test]
fn path_shape_and_determinism() {
    let data = four_variable_data(3, 60);
    for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
        let (_, a) = build_path(&data, w(0.25), mode).unwrap();
        let (_, b) = build_path(&data, w(0.25), mode).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d(), 4);
        assert_eq!(a.partitions[0], Partition::singletons(4));
        assert_eq!(a.partitions[3], Partition::single_cluster(4));
        for k in 0..3 {
            assert_eq!(a.partitions[k].len(), 4 - k);
            assert!(a.partitions[k]
                .is_refinement_of(&a.partitions[k + 1])
                .unwrap());
        }
        assert!(a.alphas.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(a.losses[0], 0.0);
        for k in 0..4 {
            assert_eq!(a.block_counts[k], a.partitions[k].block_count());
        }
        let steps: Vec<usize> = a.steps().map(|s| s.i).collect();
        assert_eq!(steps, vec![4, 3, 2, 1]);
    }
}

/// Mean of `tau` over pairs whose endpoints fall in the same pair of clusters.
fn naive_block_means(tau: &[f64], g: &Partition) -> Vec<f64> {
    let d = g.dim();
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .collect();
    let key = |(i, j): (usize, usize)| {
        let (a, b) = (g.label(i), g.label(j));
        (a.min(b), a.max(b))
    };
    pairs
        .iter()
        .map(|&pr| {
            let members: Vec<f64> = pairs
                .iter()
                .zip(tau)
                .filter(|(q, _)| key(**q) == key(pr))
                .map(|(_, t)| *t)
                .collect();
            members.iter().sum::<f64>() / members.len() as f64
        })
        .collect()
}

fn naive_sigma(
    tau: &[f64],
    sigma_hat: &DMatrix<f64>,
    n: usize,
    g: &Partition,
    w: f64,
) -> DMatrix<f64> {
    let p = tau.len();
    let c = rank_one_weight(n);
    let theta = DMatrix::from_fn(p, p, |r, s| {
        sigma_hat[(r, s)] + c * (tau[r] + 1.0) * (tau[s] + 1.0)
    });
    let avg = cell_average(&theta, g).unwrap();
    let tilde = naive_block_means(tau, g);
    let structured = DMatrix::from_fn(p, p, |r, s| {
        avg[(r, s)] - c * (tilde[r] + 1.0) * (tilde[s] + 1.0)
    });
    DMatrix::from_fn(p, p, |r, s| {
        if r == s {
            structured[(r, s)]
        } else {
            (1.0 - w) * structured[(r, s)]
        }
    })
}

fn quad(e: &[f64], inv: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(e);
    (v.transpose() * inv * &v)[(0, 0)]
}

fn merge_naive(g: &Partition, a: usize, b: usize) -> Partition {
    let labels: Vec<usize> = (0..g.dim())
        .map(|i| if g.label(i) == b { a } else { g.label(i) })
        .collect();
    Partition::from_labels(&labels).unwrap()
}

#[test]
fn greedy_choices_match_exhaustive_rescoring() {
    for (seed, d, shrinkage) in [
        (1, 4, 0.0),
        (2, 4, 0.5),
        (3, 4, 1.0),
        (4, 5, 0.3),
        (5, 6, 0.75),
    ] {
        let g = Partition::new(d, vec![(0..d / 2).collect(), (d / 2..d).collect()]).unwrap();
        let s = scenario(g, |a, b| if a == b { 0.4 } else { 0.2 }, Family::Normal);
        let data = s.sampler().unwrap().sample(40, seed, 0).unwrap();
        let plug = PluginCovariance::from_data(&data).unwrap();
        let sigma_hat = plug.sigma_hat(CovarianceMode::Full).unwrap();
        let tau = plug.tau_hat().to_vec();
        let est = TauEstimate {
            tau: tau.clone(),
            d,
            n: 40,
        };
        let path = build_path_from(&est, &sigma_hat, w(shrinkage)).unwrap();
        let sh = sigma_hat.as_full().unwrap();

        for k in 0..d - 1 {
            let current = &path.partitions[k];
            let inv = naive_sigma(&tau, sh, 40, current, shrinkage)
                .try_inverse()
                .unwrap();
            let kk = current.len();
            let mut best: Option<(f64, Partition)> = None;
            for a in 0..kk {
                for b in (a + 1)..kk {
                    let cand = merge_naive(current, a, b);
                    let fit = naive_block_means(&tau, &cand);
                    let e: Vec<f64> = tau.iter().zip(&fit).map(|(x, y)| x - y).collect();
                    let l = quad(&e, &inv);
                    if best.as_ref().is_none_or(|(bl, _)| l < *bl) {
                        best = Some((l, cand));
                    }
                }
            }
            assert_eq!(
                best.unwrap().1,
                path.partitions[k + 1],
                "seed {seed}, step {k}"
            );

            let next = &path.partitions[k + 1];
            let inv_next = naive_sigma(&tau, sh, 40, next, shrinkage)
                .try_inverse()
                .unwrap();
            let fit = naive_block_means(&tau, next);
            let e: Vec<f64> = tau.iter().zip(&fit).map(|(x, y)| x - y).collect();
            let l = quad(&e, &inv_next);
            assert!(
                (l - path.losses[k + 1]).abs() <= 1e-8 * (1.0 + l),
                "{l} vs {}",
                path.losses[k + 1]
            );
        }
    }
}

#[test]
fn full_inputs_with_unit_weight_match_diagonal_inputs() {
    let data = four_variable_data(9, 80);
    let plug = PluginCovariance::from_data(&data).unwrap();
    let est = TauEstimate {
        tau: plug.tau_hat().to_vec(),
        d: 4,
        n: 80,
    };
    let full =
        build_path_from(&est, &plug.sigma_hat(CovarianceMode::Full).unwrap(), w(1.0)).unwrap();
    let diag = build_path_from(
        &est,
        &plug.sigma_hat(CovarianceMode::Diagonal).unwrap(),
        w(1.0),
    )
    .unwrap();
    assert_eq!(full.partitions, diag.partitions);
    for (a, b) in full.losses.iter().zip(&diag.losses) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
}

#[test]
fn singular_step_is_reported() {
    let est = TauEstimate {
        tau: vec![0.1, 0.2, 0.3],
        d: 3,
        n: 10,
    };
    let sigma = SigmaEstimate::diagonal(DVector::from_vec(vec![0.1, 0.0, 0.1]), 10);
    let err = build_path_from(&est, &sigma, w(1.0)).unwrap_err();
    assert!(
        matches!(err, Error::Singular { step: Some(3), .. }),
        "{err}"
    );
    assert!(err.to_string().contains("at path step 3"));
}

#[test]
fn selection_rule() {
    let data = four_variable_data(5, 50);
    let (_, mut path) = build_path(&data, w(0.5), CovarianceMode::Full).unwrap();
    let mut five = path.clone();
    five.partitions = (1..=5)
        .rev()
        .map(|k| Partition::from_labels(&(0..5).map(|i| i.min(k - 1)).collect::<Vec<_>>()).unwrap())
        .collect();
    five.alphas = vec![1.0, 1.0, 0.8, 0.01, 0.0];
    let (sel, part) = select_structure(&five, 0.5).unwrap();
    assert_eq!(sel.i, 3);
    assert_eq!(part.len(), 3);
    // any level inside the gap between steps 3 and 2 picks step 3
    for level in [0.02, 0.1, 0.5, 0.79] {
        assert_eq!(select_structure(&five, level).unwrap().0.i, 3);
    }

    path.alphas = vec![1.0; 4];
    assert_eq!(select_structure(&path, 0.05).unwrap().0.i, 1);
    path.alphas = vec![1.0, 0.0, 0.0, 0.0];
    assert_eq!(select_structure(&path, 0.05).unwrap().0.i, 4);
    for bad in [0.0, 1.0, -0.2, f64::NAN] {
        assert!(matches!(
            select_structure(&path, bad),
            Err(Error::Argument(_))
        ));
    }
}

#[test]
fn alpha_conventions() {
    assert_eq!(alpha_values(&[0.0, 0.0], &[10, 3], 10), vec![1.0, 1.0]);
    let a = alpha_values(&[3.841], &[44], 45);
    assert!((a[0] - 0.05).abs() < 1e-3);
    // 45 pairs and 6 blocks leave 39 degrees of freedom
    let g = Partition::new(
        10,
        vec![(0..4).collect(), (4..7).collect(), (7..10).collect()],
    )
    .unwrap();
    assert_eq!(45 - g.block_count(), 39);
}

#[test]
fn chi_square_survival() {
    assert_eq!(chi_square_sf(0.0, 3), 1.0);
    assert_eq!(chi_square_sf(f64::INFINITY, 3), 0.0);
    assert!((chi_square_sf(2.0 * 2f64.ln(), 2) - 0.5).abs() < 1e-15);

    // high-precision references
    let table = [
        (39, 39.0, 0.469_878_197_771_206_42),
        (1, 3.841, 0.050_013_683_763_956_699),
        (12, 20.5, 0.058_199_338_681_758_369),
        (5, 0.3, 0.997_643_086_260_528_86),
        (101, 80.25, 0.936_516_661_784_052_09),
        (5616, 5700.0, 0.213_318_662_478_190_70),
        (3, 1e-3, 0.999_991_592_080_941_95),
        (7, 44.0, 2.137_091_412_184_056_7e-7),
    ];
    for (df, x, expected) in table {
        let got = chi_square_sf(x, df);
        assert!(
            (got - expected).abs() <= 1e-10,
            "df {df} x {x}: {got} vs {expected}"
        );
    }

    // even degrees of freedom: Poisson tail
    for df in [2usize, 4, 10, 40] {
        for x in [0.5, 3.0, 17.0, 60.0] {
            let h = x / 2.0;
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..df / 2 {
                term *= h / k as f64;
                sum += term;
            }
            let expected = (-h).exp() * sum;
            assert!((chi_square_sf(x, df) - expected).abs() <= 1e-12);
        }
    }
    // one degree of freedom: erfc(sqrt(x / 2)), high-precision references
    for (x, expected) in [
        (0.1, 0.751_829_634_045_849_275_83),
        (1.0, 0.317_310_507_862_914_102_83),
        (4.0, 0.045_500_263_896_358_414_401),
        (9.0, 0.002_699_796_063_260_189_053_3),
    ] {
        assert!((chi_square_sf(x, 1) - expected).abs() <= 1e-12);
    }
}

#[test]
fn quadratic_form_dichotomy() {
    let truth = Partition::new(6, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let wrong = Partition::new(6, vec![vec![0, 1, 3], vec![2, 4, 5]]).unwrap();
    let s = scenario(
        truth.clone(),
        |a, b| match (a, b) {
            (0, 0) => 0.5,
            (1, 1) => 0.4,
            _ => 0.2,
        },
        Family::Normal,
    );
    let sampler = s.sampler().unwrap();
    let scaled = |n: usize, g: &Partition| -> f64 {
        (0..6)
            .map(|rep| {
                let data = sampler.sample(n, 31, rep).unwrap();
                let plug = PluginCovariance::from_data(&data).unwrap();
                let sh = plug.sigma_hat(CovarianceMode::Full).unwrap();
                let est = TauEstimate {
                    tau: plug.tau_hat().to_vec(),
                    d: 6,
                    n,
                };
                score_partition(&est, &sh, g, w(0.0)).unwrap().1 / n as f64
            })
            .sum::<f64>()
            / 6.0
    };
    let (t250, t4000) = (scaled(250, &truth), scaled(4000, &truth));
    let (w1000, w4000) = (scaled(1000, &wrong), scaled(4000, &wrong));
    assert!(t4000 < t250 && t4000 < 0.01, "{t250} -> {t4000}");
    assert!(
        w4000 > 0.05 && (w4000 / w1000 - 1.0).abs() < 0.5,
        "{w1000} -> {w4000}"
    );
}

#[test]
fn rank_pipeline_ignores_monotone_margins_and_heavy_tails() {
    let g = Partition::new(5, vec![vec![0, 1], vec![2, 3, 4]]).unwrap();
    let s = scenario(
        g,
        |a, b| if a == b { 0.5 } else { 0.2 },
        Family::StudentT { df: 1.0 },
    );
    let data = s.sampler().unwrap().sample(120, 77, 0).unwrap();
    let (tau, path) = build_path(&data, w(0.5), CovarianceMode::Full).unwrap();
    assert!(path.losses.iter().all(|l| l.is_finite()));
    let transformed = DataMatrix::new(data.values().map(|x| x.atan() * 3.0 + x.powi(3))).unwrap();
    let (tau2, path2) = build_path(&transformed, w(0.5), CovarianceMode::Full).unwrap();
    assert_eq!(tau, tau2);
    assert_eq!(path, path2);
}
