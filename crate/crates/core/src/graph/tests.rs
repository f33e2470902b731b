use proptest::prelude::*;

use super::*;
use crate::numerics::Rng;

fn edge() -> TrafficGraph {
    TrafficGraph::new(Tensor::matrix(&[&[0.0, 1.0], &[1.0, 0.0]]), NetworkKind::Sensor).unwrap()
}

fn path3() -> TrafficGraph {
    TrafficGraph::new(
        Tensor::matrix(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]),
        NetworkKind::Sensor,
    )
    .unwrap()
}

/// Random weighted graph; `p` is the edge probability.
fn random_graph(r: usize, p: f64, rng: &mut Rng) -> TrafficGraph {
    let mut a = Tensor::zeros(&[r, r]);
    for i in 0..r {
        for j in i + 1..r {
            if rng.uniform() < p {
                let w = rng.uniform_in(0.1, 2.0);
                a.set(&[i, j], w);
                a.set(&[j, i], w);
            }
        }
    }
    TrafficGraph::new(a, NetworkKind::Sensor).unwrap()
}

/// Random connected graph: a random spanning path plus extra edges.
fn random_connected(r: usize, rng: &mut Rng) -> TrafficGraph {
    let mut g = random_graph(r, 0.15, rng);
    let mut order: Vec<usize> = (0..r).collect();
    for i in (1..r).rev() {
        order.swap(i, rng.below(i + 1));
    }
    for w in order.windows(2) {
        let x = rng.uniform_in(0.1, 2.0);
        g.adjacency.set(&[w[0], w[1]], x);
        g.adjacency.set(&[w[1], w[0]], x);
    }
    g
}

fn components(g: &TrafficGraph) -> usize {
    let r = g.regions();
    let mut seen = vec![false; r];
    let mut count = 0;
    for s in 0..r {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..r {
                if g.adjacency.get(&[i, j]) != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

#[test]
fn grid_two_by_two() {
    let g = build_adjacency(&Geometry::Grid { rows: 2, cols: 2 }, 1.0, 0.0).unwrap();
    assert_eq!(g.edge_count(), 4);
    assert!(g.adjacency.data().iter().all(|&w| w == 0.0 || w == 1.0));
}

#[test]
fn coincident_sensors_have_unit_weight() {
    let g = build_adjacency(&Geometry::Sensor(vec![(0.5, 0.5), (0.5, 0.5)]), 1.0, 0.5).unwrap();
    assert_eq!(g.adjacency.get(&[0, 1]), 1.0);
    let err = build_adjacency(&Geometry::Sensor(vec![(0.0, 0.0), (0.0, 0.0)]), 1.0, 1.5);
    assert!(matches!(err, Err(Error::EmptyGraph)));
}

#[test]
fn collinear_sensors_prune_distant_pair() {
    let sigma = 2.0;
    let coords = vec![(0.0, 0.0), (sigma, 0.0), (2.0 * sigma, 0.0)];
    let thr = (-1.0f64).exp();
    let g = build_adjacency(&Geometry::Sensor(coords), sigma, thr * (1.0 - 1e-12)).unwrap();
    assert!((g.adjacency.get(&[0, 1]) - thr).abs() < 1e-15);
    assert!((g.adjacency.get(&[1, 2]) - thr).abs() < 1e-15);
    assert_eq!(g.adjacency.get(&[0, 2]), 0.0);
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize_adjacency(&edge()).data(), &[0.0, 1.0, 1.0, 0.0]);

    let mut a = Tensor::zeros(&[3, 3]);
    a.set(&[0, 1], 1.0);
    a.set(&[1, 0], 1.0);
    let isolated = TrafficGraph::new(a, NetworkKind::Sensor).unwrap();
    let n = normalize_adjacency(&isolated);
    for i in 0..3 {
        assert_eq!(n.get(&[2, i]), 0.0);
        assert_eq!(n.get(&[i, 2]), 0.0);
    }

    let p = normalize_adjacency(&path3());
    let h = 1.0 / 2f64.sqrt();
    assert!((p.get(&[0, 1]) - h).abs() < 1e-15);
    assert!((p.get(&[2, 1]) - h).abs() < 1e-15);
    assert_eq!(p.get(&[0, 2]), 0.0);
}

#[test]
fn laplacian_examples() {
    let l = normalized_laplacian(&edge());
    assert_eq!(l.data(), &[1.0, -1.0, -1.0, 1.0]);
    let e = symmetric_eigen(&l, JACOBI_TOL).unwrap();
    assert!(e.values[0].abs() < 1e-12 && (e.values[1] - 2.0).abs() < 1e-12);

    let empty = TrafficGraph::new(Tensor::zeros(&[3, 3]), NetworkKind::Grid).unwrap();
    assert_eq!(normalized_laplacian(&empty), Tensor::identity(3));

    let e = symmetric_eigen(&normalized_laplacian(&path3()), JACOBI_TOL).unwrap();
    for (v, want) in e.values.iter().zip([0.0, 1.0, 2.0]) {
        assert!((v - want).abs() < 1e-12, "{v}");
    }
}

#[test]
fn edge_embedding_sign_convention() {
    let emb = region_embeddings(&edge(), 1).unwrap();
    let h = 1.0 / 2f64.sqrt();
    assert!((emb.phi.get(&[0, 0]) - h).abs() < 1e-12);
    assert!((emb.phi.get(&[1, 0]) + h).abs() < 1e-12);
    assert!((emb.eigenvalues[0] - 2.0).abs() < 1e-12);
}

#[test]
fn rank_error_reports_available() {
    let err = region_embeddings(&path3(), 3).unwrap_err();
    assert!(matches!(err, Error::Rank { requested: 3, available: 2 }));
}

#[test]
fn default_embedding_width() {
    assert_eq!(DEFAULT_EMBEDDING_DIM, 8);
}

#[test]
fn eigenpair_residuals_up_to_200_regions() {
    let mut rng = Rng::seed_from(21);
    for r in [10, 60, 200] {
        let g = random_connected(r, &mut rng);
        let lap = normalized_laplacian(&g);
        let emb = region_embeddings(&g, 8).unwrap();
        let lu = lap.matmul(&emb.phi).unwrap();
        for c in 0..8 {
            let res: f64 = (0..r)
                .map(|i| (lu.get(&[i, c]) - emb.eigenvalues[c] * emb.phi.get(&[i, c])).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-6, "R={r} column {c}: residual {res}");
        }
        let gram = emb.phi.transpose().unwrap().matmul(&emb.phi).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(&[i, j]) - want).abs() <= 1e-8);
            }
        }
        assert!(emb.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn normalized_adjacency_spectral_radius_at_most_one() {
    let mut rng = Rng::seed_from(5);
    for _ in 0..10 {
        let g = random_graph(12, 0.4, &mut rng);
        let a = normalize_adjacency(&g);
        // Power iteration on Ā² (non-negative, PSD) bounds |λ|max².
        let a2 = a.matmul(&a).unwrap();
        let mut v = Tensor::from_fn(&[12, 1], |_| rng.uniform_in(0.1, 1.0));
        let mut rho2 = 0.0;
        for _ in 0..500 {
            let w = a2.matmul(&v).unwrap();
            let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let vnorm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            rho2 = norm / vnorm;
            v = Tensor::new(&[12, 1], w.data().iter().map(|x| x / norm).collect()).unwrap();
        }
        assert!(rho2.sqrt() <= 1.0 + 1e-9, "{rho2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_spectrum_and_zero_modes(seed in any::<u64>(), r in 2usize..30, p in 0.05f64..0.6) {
        let mut rng = Rng::seed_from(seed);
        let g = random_graph(r, p, &mut rng);
        let e = symmetric_eigen(&normalized_laplacian(&g), JACOBI_TOL).unwrap();
        prop_assert!(e.values.iter().all(|&v| (-1e-9..=2.0 + 1e-9).contains(&v)));
        let isolated = g.degrees().iter().filter(|&&d| d == 0.0).count();
        let zeros = e.values.iter().filter(|&&v| v < ZERO_EIGENVALUE_TOL).count();
        // Isolated nodes contribute eigenvalue 1 (Δ row is the identity row), not a zero mode.
        prop_assert_eq!(zeros, components(&g) - isolated);
    }

    #[test]
    fn connected_graph_has_constant_zero_mode(seed in any::<u64>(), r in 2usize..25) {
        let mut rng = Rng::seed_from(seed);
        let g = random_connected(r, &mut rng);
        let e = symmetric_eigen(&normalized_laplacian(&g), JACOBI_TOL).unwrap();
        let zeros = e.values.iter().filter(|&&v| v < ZERO_EIGENVALUE_TOL).count();
        prop_assert_eq!(zeros, 1);
        // The zero mode of I − D^{-1/2}AD^{-1/2} is D^{1/2}·1: constant after dividing by √deg.
        let deg = g.degrees();
        let ratios: Vec<f64> = (0..r).map(|i| e.vectors.get(&[i, 0]) / deg[i].sqrt()).collect();
        for w in ratios.windows(2) {
            prop_assert!((w[0] - w[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn permutation_conjugates_operators(seed in any::<u64>(), r in 2usize..15) {
        let mut rng = Rng::seed_from(seed);
        let g = random_graph(r, 0.4, &mut rng);
        let mut perm: Vec<usize> = (0..r).collect();
        for i in (1..r).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let pa = Tensor::from_fn(&[r, r], |k| g.adjacency.get(&[perm[k / r], perm[k % r]]));
        let pg = TrafficGraph::new(pa, NetworkKind::Sensor).unwrap();
        let (l, pl) = (normalized_laplacian(&g), normalized_laplacian(&pg));
        let (n, pn) = (normalize_adjacency(&g), normalize_adjacency(&pg));
        for i in 0..r {
            for j in 0..r {
                prop_assert!((pl.get(&[i, j]) - l.get(&[perm[i], perm[j]])).abs() <= 1e-12);
                prop_assert!((pn.get(&[i, j]) - n.get(&[perm[i], perm[j]])).abs() <= 1e-12);
            }
        }
    }
}
