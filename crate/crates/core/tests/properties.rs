//! Randomized invariants over generated graphs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distlap::aggregation::{congested_aggregation_congest, congested_aggregation_ncc, AggModel, AggOp, AggregationService, PartInputs, ProviderKind, Value};
use distlap::approxsc::{split_edges, Work};
use distlap::eliminate::{find_dd_subset, simulate_hitting_walks, walk_schur_laplacian};
use distlap::experiments::generators::{random_congested_partition, random_connected, reweight};
use distlap::experiments::{run_experiment, write_csv, ExperimentConfig};
use distlap::graph::{laplacian, WeightedGraph};
use distlap::io::{format_graph, format_vector, parse_graph, parse_vector};
use distlap::linalg::dot;
use distlap::minors::{compose_minors, contract_edges, contract_graph, identity_minor, minor_matvec, validate_minor, EdgeOperator};
use distlap::netsim::{Model, NetConfig};
use distlap::oracle::{laplacian_pinv, laplacian_schur, leverage_scores_exact, schur_complement, spectral_approx_check};
use distlap::solver::{Preconditioner, SolverParams};
use distlap::ultrasparsify::eliminate_degree12;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn graph(n: usize, density: f64, max_weight: u64, seed: u64) -> WeightedGraph {
    let mut r = rng(seed);
    let mut g = random_connected(n, density / n as f64, &mut r);
    if max_weight > 1 {
        reweight(&mut g, max_weight, &mut r);
    }
    g
}

fn any_graph(max_n: usize) -> impl Strategy<Value = WeightedGraph> {
    (3..=max_n, 1.0..4.0f64, prop_oneof![Just(1u64), 2..50u64], any::<u64>()).prop_map(|(n, d, w, s)| graph(n, d, w, s))
}

fn subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut t = rand::seq::index::sample(&mut rng(seed), n, k.clamp(1, n)).into_vec();
    t.sort_unstable();
    t
}

fn is_laplacian(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| {
        m.row(i).sum().abs() <= tol * scale
            && (0..m.ncols()).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale && (i == j || m[(i, j)] <= tol * scale))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_is_psd_with_constant_kernel(g in any_graph(40)) {
        let l = laplacian(&g);
        prop_assert!(is_laplacian(&l, 1e-12));
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        let scale = l.amax();
        prop_assert!(eig.iter().all(|&x| x >= -1e-9 * scale));
        prop_assert_eq!(eig.iter().filter(|&&x| x.abs() <= 1e-9 * scale).count(), 1);
    }

    #[test]
    fn leverage_scores_sum_to_n_minus_one(g in any_graph(60)) {
        let total: f64 = leverage_scores_exact(&g).iter().sum();
        prop_assert!((total - (g.n() - 1) as f64).abs() < 1e-6);
    }

    #[test]
    fn schur_complements_compose_and_stay_laplacian(g in any_graph(30), s in any::<u64>()) {
        let n = g.n();
        let t1 = subset(n, (n * 2 / 3).max(2), s);
        let t2: Vec<usize> = t1.iter().copied().step_by(2).collect();
        let sc1 = laplacian_schur(&g, &t1);
        prop_assert!(is_laplacian(&sc1, 1e-8));
        let pos: Vec<usize> = t2.iter().map(|v| t1.binary_search(v).unwrap()).collect();
        let twice = schur_complement(&sc1, &pos).unwrap();
        let once = laplacian_schur(&g, &t2);
        prop_assert!((twice - once).amax() <= 1e-8 * laplacian(&g).amax().max(1.0));
    }

    #[test]
    fn spectral_approximation_is_transitive(g in any_graph(25), s in any::<u64>(), spread in 0.05..0.8f64) {
        let mut r = rng(s);
        let scaled = |h: &WeightedGraph, r: &mut ChaCha8Rng| {
            WeightedGraph::from_edges(h.n(), h.edges().iter().map(|e| (e.u, e.v, e.weight * r.random_range(-spread..spread).exp()))).unwrap()
        };
        let b = scaled(&g, &mut r);
        let c = scaled(&b, &mut r);
        let (la, lb, lc) = (laplacian(&g), laplacian(&b), laplacian(&c));
        let eps = spectral_approx_check(&la, &lb, 0.0).unwrap().achieved_eps;
        let delta = spectral_approx_check(&lb, &lc, 0.0).unwrap().achieved_eps;
        prop_assert!(spectral_approx_check(&la, &lb, eps + 1e-9).unwrap().holds);
        prop_assert!(spectral_approx_check(&la, &lc, eps + delta + 1e-9).unwrap().holds);
    }

    #[test]
    fn degree_one_two_elimination_is_exact(g in any_graph(40), s in any::<u64>()) {
        let keep = subset(g.n(), 1 + (s % 3) as usize, s);
        let r = eliminate_degree12(&g, &keep).unwrap();
        prop_assert!(keep.iter().all(|v| r.terminals().contains(v)));
        let sc = laplacian_schur(&g, r.terminals());
        prop_assert!((laplacian(&r.ghat) - &sc).amax() < 1e-7 * sc.amax().max(1.0));
        let composite = r.ops.materialize(&laplacian_pinv(&laplacian(&r.ghat)).unwrap());
        let lp = laplacian_pinv(&laplacian(&g)).unwrap();
        prop_assert!((composite - &lp).amax() < 1e-7 * lp.amax().max(1.0));
    }

    #[test]
    fn dd_certificates_hold_row_wise(g in any_graph(80), s in any::<u64>()) {
        if let Ok(dd) = find_dd_subset(&g, 4.0, 10, &mut rng(s)) {
            prop_assert!(dd.validate(&g).is_ok());
            let deg = g.weighted_degrees();
            for &v in &dd.f {
                let within: f64 = g.proper_edges().filter(|(_, e)| (e.u == v && dd.f.contains(&e.v)) || (e.v == v && dd.f.contains(&e.u))).map(|(_, e)| e.weight).sum();
                prop_assert!(deg[v] >= 5.0 * within - 1e-12);
            }
        }
    }

    #[test]
    fn hitting_walks_end_on_terminals(g in any_graph(20), s in any::<u64>()) {
        let t = subset(g.n(), 2 + (s % 4) as usize, s);
        let b = simulate_hitting_walks(&g, &t, 3, 100_000, true, &mut rng(s)).unwrap();
        prop_assert!(b.records_kept);
        for r in &b.records {
            prop_assert!(t.contains(&r.from) && t.contains(&r.to));
        }
        let (h, image) = walk_schur_laplacian(&b);
        prop_assert_eq!(h.n(), t.len());
        prop_assert_eq!(image.len(), h.m());
        prop_assert!(is_laplacian(&laplacian(&h), 1e-12));
        for &v in &t {
            prop_assert_eq!(b.congestion[v], 0);
        }
    }

    #[test]
    fn splitting_preserves_the_schur_complement(g in any_graph(24), s in any::<u64>(), margin in 1.0..6.0f64) {
        let t = subset(g.n(), 2 + (s % 5) as usize, s);
        let d = identity_minor(&g);
        let mut r = rng(s);
        let lev: Vec<f64> = leverage_scores_exact(&g).iter().map(|l| l * r.random_range(0.8..1.25)).collect();
        let (split, _) = split_edges(&Work::new(&d, &t), &lev, margin);
        let sc = laplacian_schur(&g, &t);
        let scale = sc.amax().max(1.0);
        for w in [split.clone(), split.collapse()] {
            let got = laplacian_schur(&w.g, &w.terminal_positions(&t));
            prop_assert!((got - &sc).amax() < 1e-7 * scale);
            prop_assert!(w.into_distribution(&g).is_ok());
        }
    }

    #[test]
    fn contraction_matches_the_oracle_and_composes(g in any_graph(30), s in any::<u64>()) {
        let mut r = rng(s);
        let f1: Vec<usize> = (0..g.m()).filter(|_| r.random::<f64>() < 0.2).collect();
        let d1 = contract_edges(&identity_minor(&g), &f1).unwrap();
        let (oracle, _) = contract_graph(&g, &f1).unwrap();
        let key = |h: &WeightedGraph| {
            let mut v: Vec<(usize, usize, u64)> = h.edges().iter().map(|e| (e.u.min(e.v), e.u.max(e.v), e.weight.to_bits())).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(key(&d1.minor), key(&oracle));
        let rho1 = validate_minor(&d1).unwrap();
        let f2: Vec<usize> = (0..d1.minor.m()).filter(|_| r.random::<f64>() < 0.2).collect();
        let d2 = contract_edges(&identity_minor(&d1.minor), &f2).unwrap();
        let rho2 = validate_minor(&d2).unwrap();
        let c = compose_minors(&d2, &d1).unwrap();
        prop_assert!(validate_minor(&c).unwrap() <= rho1 * rho2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn aggregation_is_deterministic_and_respects_caps(g in any_graph(24), s in any::<u64>(), rho in 1..4usize) {
        let mut r = rng(s);
        let partition = random_congested_partition(&g, 1 + (s % 4) as usize, rho, &mut r);
        let inputs: PartInputs = partition.parts.iter().map(|p| p.iter().map(|&v| Value::with_id(r.random_range(0..100) as f64, v)).collect()).collect();
        let leaders: Vec<usize> = partition.parts.iter().map(|p| p[0]).collect();
        let net = NetConfig::with_seed(s);
        for model in [Model::Ncc, Model::Hybrid] {
            let a = congested_aggregation_ncc(model, &g, &partition, &leaders, &inputs, AggOp::Sum, &net).unwrap();
            let b = congested_aggregation_ncc(model, &g, &partition, &leaders, &inputs, AggOp::Sum, &net).unwrap();
            prop_assert_eq!(&a.outcome, &b.outcome);
            prop_assert!(a.outcome.ledger.max_global_received_per_round() <= net.global_cap(g.n()));
            prop_assert!(a.outcome.ledger.max_global_sent_per_round() <= net.global_cap(g.n()));
            prop_assert!(a.outcome.ledger.dropped.is_empty());
        }
        let a = congested_aggregation_congest(&g, &partition, &inputs, AggOp::Min, ProviderKind::Baseline, None, &net).unwrap();
        let b = congested_aggregation_congest(&g, &partition, &inputs, AggOp::Min, ProviderKind::Baseline, None, &net).unwrap();
        prop_assert_eq!(&a.outcome, &b.outcome);
        prop_assert!(a.outcome.ledger.max_local_per_edge_round() <= 1);
    }

    #[test]
    fn minor_matvec_matches_dense(g in any_graph(30), s in any::<u64>()) {
        let mut r = rng(s);
        let f: Vec<usize> = (0..g.m()).filter(|_| r.random::<f64>() < 0.3).collect();
        let d = contract_edges(&identity_minor(&g), &f).unwrap();
        let a = EdgeOperator::laplacian(&d.minor);
        let x: Vec<f64> = (0..d.n()).map(|_| r.random_range(-1.0..1.0)).collect();
        let svc = AggregationService::new(g.clone(), AggModel::Congest, NetConfig::with_seed(s));
        let out = minor_matvec(&d, &a, &x, &svc).unwrap();
        let want = laplacian(&d.minor) * DVector::from_column_slice(&x);
        for (u, w) in out.y.iter().zip(want.iter()) {
            prop_assert!((u - w).abs() <= 1e-9 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn preconditioner_is_linear_and_deterministic(g in any_graph(40), s in any::<u64>(), a in -3.0..3.0f64) {
        let svc = AggregationService::sequential(g.clone());
        let p = Preconditioner::build(&g, &SolverParams::default(), &svc, s).unwrap();
        let mut r = rng(s);
        let mut v = || -> Vec<f64> {
            let mut b: Vec<f64> = (0..g.n()).map(|_| r.random_range(-1.0..1.0)).collect();
            distlap::linalg::project_mean_zero(&mut b);
            b
        };
        let (b1, b2) = (v(), v());
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + y).collect();
        let (w1, w2, wm) = (p.apply(&b1), p.apply(&b2), p.apply(&mix));
        let scale = dot(&w1, &w1).sqrt() + dot(&w2, &w2).sqrt() + 1.0;
        for i in 0..g.n() {
            prop_assert!((wm[i] - (a * w1[i] + w2[i])).abs() <= 1e-9 * scale);
        }
        let again = Preconditioner::build(&g, &SolverParams::default(), &svc, s).unwrap();
        let (x1, x2) = (p.solve(&b1, 1e-6).unwrap(), again.solve(&b1, 1e-6).unwrap());
        prop_assert_eq!(x1.x, x2.x);
        prop_assert_eq!(x1.iterations, x2.iterations);
    }

    #[test]
    fn text_formats_round_trip(g in any_graph(50), xs in proptest::collection::vec(-1e6..1e6f64, 0..40)) {
        prop_assert_eq!(parse_graph(&format_graph(&g)).unwrap(), g);
        prop_assert_eq!(parse_vector(&format_vector(&xs)).unwrap(), xs);
    }
}

#[test]
fn experiment_csv_is_reproducible() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
  "name": "repro",
  "graphs": [{ "family": "grid", "sizes": [16] }, { "family": "ktree", "sizes": [20], "k": [2] }],
  "models": ["congest", "hybrid"],
  "module": "eliminate",
  "params": [{ "eps": 0.5 }],
  "seeds": [1, 2]
}"#,
    )
    .unwrap();
    let csv = |rows: &[distlap::experiments::Row]| {
        let mut out = Vec::new();
        write_csv(rows, &mut out).unwrap();
        out
    };
    let a = csv(&run_experiment(&cfg).unwrap());
    let b = csv(&run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("family,n,m,D,tw,model,module,params-json,seed,rounds_local,rounds_global,msgs_local,msgs_global,error_vs_oracle,status"));
    assert_eq!(text.lines().count(), 9);
}
