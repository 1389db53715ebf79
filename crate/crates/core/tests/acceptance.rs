//! Acceptance criteria 1–9. Every test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the harness capture) and then asserts on it. Extra
//! indented lines carry measured numbers and fitted constants.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distlap::aggregation::{
    build_ghat, check_diameter_claim, congested_aggregation_congest, congested_aggregation_ncc, lift_tree_decomposition,
    AggModel, AggOp, AggregationService, PartInputs, ProviderKind, Value,
};
use distlap::approxsc::{
    approx_column_sums, approx_leverage_scores, approx_sc, sc_energy_estimate, split_edges, ApproxScParams, Work,
};
use distlap::eliminate::{
    dd_size_bound, eliminate, find_dd_subset, simulate_hitting_walks, walk_schur_laplacian, EliminateParams,
};
use distlap::experiments::generators::{
    cycle, generate_graph, grid, path, random_congested_partition, star, Family, GraphSpec,
};
use distlap::experiments::{fit_linear, fit_proportional, random_rhs};
use distlap::graph::{hop_diameter, laplacian, validate_tree_decomposition, Partition, TreeDecomposition, WeightedGraph};
use distlap::linalg::{energy_norm, DenseFactory};
use distlap::minors::identity_minor;
use distlap::netsim::{Model, NetConfig};
use distlap::oracle::{generalized_eigen_range, laplacian_pinv, laplacian_schur, leverage_scores_exact, spectral_approx_check};
use distlap::solver::{ChainFactory, Preconditioner, SolverParams};
use distlap::ultrasparsify::{ultrasparsify, UltraParams};

fn say(line: &str) {
    let _ = std::io::stderr().write_all(format!("{line}\n").as_bytes());
}

fn verdict(id: usize, name: &str, pass: bool, detail: &str) {
    say(&format!("criterion {id} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn build(spec: GraphSpec, seed: u64) -> WeightedGraph {
    generate_graph(&spec, seed).expect("generator").graph
}

fn with_td(spec: GraphSpec, seed: u64) -> (WeightedGraph, TreeDecomposition) {
    let g = generate_graph(&spec, seed).expect("generator");
    (g.graph, g.decomposition.expect("family has a decomposition"))
}

fn random(n: usize, p: f64) -> GraphSpec {
    GraphSpec { family: Family::Random, n, p, ..GraphSpec::default() }
}

fn bounded_tw(n: usize, k: usize, keep: f64) -> GraphSpec {
    GraphSpec { family: Family::RandomBoundedTw, n, k, p: keep, ..GraphSpec::default() }
}

fn pinv(g: &WeightedGraph) -> DMatrix<f64> {
    laplacian_pinv(&laplacian(g)).expect("connected graph")
}

/// `k` distinct nodes drawn with a fixed seed, sorted.
fn pick(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut t = rand::seq::index::sample(&mut rng(seed), n, k.min(n)).into_vec();
    t.sort_unstable();
    t
}

fn named(name: &str, g: WeightedGraph) -> (String, WeightedGraph) {
    (format!("{name} (n={}, m={})", g.n(), g.m()), g)
}

fn solver_fixtures() -> Vec<(String, WeightedGraph)> {
    let mut out = Vec::new();
    for n in [20, 60, 150, 200] {
        out.push(named("path", path(n)));
    }
    for n in [25, 80, 200] {
        out.push(named("cycle", cycle(n)));
    }
    for (r, c) in [(4, 5), (6, 6), (8, 8), (10, 12), (14, 14)] {
        out.push(named("grid", grid(r, c)));
    }
    for (n, k) in [(30, 2), (60, 3), (100, 2), (150, 3), (200, 4)] {
        out.push(named("ktree", build(GraphSpec::ktree(n, k), 11)));
    }
    out.push(named("bounded-tw", build(bounded_tw(50, 3, 0.6), 12)));
    out.push(named("bounded-tw", build(bounded_tw(120, 4, 0.5), 13)));
    for (n, p) in [(30, 0.2), (60, 0.1), (100, 0.05), (150, 0.03), (200, 0.02)] {
        out.push(named("random", build(random(n, p), 14)));
    }
    out.push(named("weighted grid", build(GraphSpec::grid(8, 8).weighted(16), 15)));
    out.push(named("weighted ktree", build(GraphSpec::ktree(80, 2).weighted(100), 16)));
    out.push(named("weighted random", build(random(80, 0.08).weighted(50), 17)));
    out.push(named("weighted path", build(GraphSpec::new(Family::Path, 100).weighted(1000), 18)));
    out.push(named("weighted cycle", build(GraphSpec::new(Family::Cycle, 60).weighted(8), 19)));
    out.push(named("star", star(50)));
    out
}

const SEEDS: u64 = 20;
const NEED: usize = 19;

#[test]
fn criterion_1_solver_correctness() {
    let start = Instant::now();
    let fixtures = solver_fixtures();
    let params = SolverParams::default();
    let eps_list = [1e-2, 1e-3];
    let mut failing = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut solves = 0;
    for (name, g) in &fixtures {
        assert!(g.n() <= 200 && g.is_connected(), "{name}");
        let lp = pinv(g);
        let svc = AggregationService::sequential(g.clone());
        let mut ok = [0usize; 2];
        for seed in 0..SEEDS {
            let b = random_rhs(g.n(), 1000 + seed);
            let exact = &lp * DVector::from_column_slice(&b);
            let b_l = energy_norm(g, &b);
            let pre = Preconditioner::build(g, &params, &svc, seed);
            for (i, &eps) in eps_list.iter().enumerate() {
                let Ok(p) = &pre else { continue };
                let Ok(sol) = p.solve(&b, eps) else { continue };
                solves += 1;
                let diff: Vec<f64> = sol.x.iter().zip(exact.iter()).map(|(a, b)| a - b).collect();
                let ratio = energy_norm(g, &diff) / (eps * b_l);
                worst_ratio = worst_ratio.max(ratio);
                if ratio <= 1.0 {
                    ok[i] += 1;
                }
            }
        }
        for (i, &eps) in eps_list.iter().enumerate() {
            if ok[i] < NEED {
                failing.push(format!("{name} eps={eps}: {}/{SEEDS}", ok[i]));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = fixtures.len() >= 30 && failing.is_empty() && secs < 600.0;
    verdict(
        1,
        "solver error ||x - L^+b||_L <= eps ||b||_L",
        pass,
        &format!(
            "{} fixtures x {SEEDS} seeds x eps {{1e-2, 1e-3}}, {solves} solves, worst error/target {worst_ratio:.3}, {secs:.0} s{}",
            fixtures.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_ultrasparsifier() {
    let fixtures = vec![
        named("grid", grid(8, 8)),
        named("random", build(random(60, 0.1), 21)),
        named("ktree", build(GraphSpec::ktree(100, 3), 22)),
        named("cycle", cycle(50)),
        named("weighted random", build(random(40, 0.15).weighted(20), 23)),
        named("path", path(30)),
    ];
    let mut failing = Vec::new();
    let (mut lo_min, mut hi_over_k) = (f64::INFINITY, 0.0f64);
    for (name, g) in &fixtures {
        let svc = AggregationService::sequential(g.clone());
        let lg = laplacian(g);
        for k in [2.0, 4.0, 8.0] {
            let mut ok = 0;
            for seed in 0..SEEDS {
                let u = ultrasparsify(&identity_minor(g), &UltraParams { k, ..UltraParams::default() }, &svc, seed).unwrap();
                let (lo, hi) = generalized_eigen_range(&lg, &laplacian(&u.sampled.h)).unwrap();
                lo_min = lo_min.min(lo);
                hi_over_k = hi_over_k.max(hi / k);
                if lo >= 1.0 - 1e-9 && hi <= 2.0 * k {
                    ok += 1;
                }
            }
            if ok < NEED {
                failing.push(format!("{name} k={k}: {ok}/{SEEDS}"));
            }
        }
    }
    // The degree-1/2 elimination identity, on dense and on sparse samples.
    let small = vec![
        path(30),
        build(random(40, 0.08), 24),
        grid(5, 8),
        cycle(36),
        build(GraphSpec::ktree(40, 2), 25),
        build(random(36, 0.1).weighted(9), 26),
    ];
    let mut identity_err = 0.0f64;
    let mut sparse = (0, 0);
    let mut eliminated = 0;
    for g in &small {
        let svc = AggregationService::sequential(g.clone());
        for c_s in [2.0, 0.1] {
            for seed in 0..5 {
                let params = UltraParams { k: 4.0, c_s, ..UltraParams::default() };
                let u = ultrasparsify(&identity_minor(g), &params, &svc, seed).unwrap();
                let composite = u.reduced.ops.materialize(&pinv(&u.reduced.ghat));
                identity_err = identity_err.max((composite - pinv(&u.sampled.h)).amax());
                eliminated += g.n() - u.reduced.ghat.n();
                if c_s < 1.0 {
                    let (lo, hi) = generalized_eigen_range(&laplacian(g), &laplacian(&u.sampled.h)).unwrap();
                    sparse.1 += 1;
                    if lo >= 1.0 - 1e-9 && hi <= 8.0 {
                        sparse.0 += 1;
                    }
                }
            }
        }
    }
    let pass = failing.is_empty() && identity_err < 1e-7;
    verdict(
        2,
        "ultrasparsifier sandwich and degree-1/2 identity",
        pass,
        &format!(
            "sandwich over {} fixtures x k {{2,4,8}} x {SEEDS} seeds: min lambda {lo_min:.6}, max lambda/k {hi_over_k:.3}; identity max error {identity_err:.2e} over {} runs ({eliminated} nodes eliminated){}",
            fixtures.len(),
            small.len() * 10,
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
    say(&format!("  report: sparse sampling c_s=0.1, k=4: sandwich [1, 2k] held on {}/{} runs", sparse.0, sparse.1));
    assert!(pass);
}

#[test]
fn criterion_3_eliminate() {
    let params = EliminateParams::default();
    let large = vec![
        named("grid", grid(8, 8)),
        named("random", build(random(100, 0.05), 31)),
        named("random", build(random(200, 0.02), 32)),
        named("ktree", build(GraphSpec::ktree(120, 3), 33)),
        named("cycle", cycle(80)),
        named("path", path(60)),
    ];
    let mut size_fail = Vec::new();
    let mut size_runs = 0;
    let mut worst_frac = 0.0f64;
    for (name, g) in &large {
        let svc = AggregationService::sequential(g.clone());
        for d in 1..=3 {
            for seed in 0..10 {
                size_runs += 1;
                let bound = 0.98f64.powi(d as i32) * g.n() as f64;
                match eliminate(&identity_minor(g), d, 0.5, &params, &svc, seed) {
                    Ok(e) if e.stopped.is_none() => {
                        let t = e.terminals().len() as f64;
                        worst_frac = worst_frac.max(t / bound);
                        if t > bound {
                            size_fail.push(format!("{name} d={d} seed={seed}: |T|={t} > {bound:.1}"));
                        }
                    }
                    Ok(e) => size_fail.push(format!("{name} d={d} seed={seed}: {}", e.stopped.unwrap())),
                    Err(err) => size_fail.push(format!("{name} d={d} seed={seed}: {err}")),
                }
            }
        }
    }
    let small = vec![
        named("cycle", cycle(8)),
        named("path", path(40)),
        named("grid", grid(5, 6)),
        named("random", build(random(30, 0.15), 34)),
        named("ktree", build(GraphSpec::ktree(36, 2), 35)),
        named("weighted random", build(random(25, 0.2).weighted(10), 36)),
    ];
    let mut sandwich_fail = Vec::new();
    let mut worst = 0.0f64;
    for (name, g) in &small {
        let svc = AggregationService::sequential(g.clone());
        let lp = pinv(g);
        for (d, eps) in [(1, 0.3), (2, 0.3), (1, 0.5), (2, 0.5)] {
            let (lo_b, hi_b) = ((1.0f64 - eps).powi(d as i32), (1.0f64 + eps).powi(d as i32));
            let mut ok = 0;
            for seed in 0..SEEDS {
                let Ok(e) = eliminate(&identity_minor(g), d, eps, &params, &svc, seed) else { continue };
                let composite = e.ops.materialize(&pinv(&e.schur));
                let (lo, hi) = generalized_eigen_range(&lp, &composite).unwrap();
                worst = worst.max((hi.ln() / hi_b.ln()).max(lo.ln() / lo_b.ln()));
                if lo >= lo_b * (1.0 - 1e-9) && hi <= hi_b * (1.0 + 1e-9) {
                    ok += 1;
                }
            }
            if ok < NEED {
                sandwich_fail.push(format!("{name} d={d} eps={eps}: {ok}/{SEEDS}"));
            }
        }
    }
    let pass = size_fail.is_empty() && sandwich_fail.is_empty();
    let mut detail = format!(
        "|T| <= (49/50)^d n on {size_runs} runs (n >= 60, d <= 3, worst |T|/bound {worst_frac:.3}); composite sandwich on {} fixtures x 4 (d, eps) x {SEEDS} seeds, worst log-ratio to bound {worst:.3}",
        small.len()
    );
    for f in size_fail.iter().chain(&sandwich_fail).take(8) {
        detail.push_str(&format!("; {f}"));
    }
    verdict(3, "Eliminate size and operator sandwich", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_4_walk_schur() {
    let eps = 0.5;
    let cases: Vec<(String, WeightedGraph, Vec<usize>)> = vec![
        ("C5".into(), cycle(5), vec![0, 2, 4]),
        ("path".into(), path(20), vec![0, 7, 19]),
        ("grid boundary".into(), grid(5, 5), (0..25).filter(|v| v / 5 == 0 || v / 5 == 4 || v % 5 == 0 || v % 5 == 4).collect()),
        ("ktree".into(), build(GraphSpec::ktree(30, 2), 41), (0..30).step_by(3).collect()),
        ("random".into(), build(random(30, 0.15), 42), pick(30, 10, 43)),
        ("weighted random".into(), build(random(24, 0.2).weighted(10), 44), pick(24, 8, 45)),
        ("star leaves".into(), star(12), (1..=6).collect()),
    ];
    let mut failing = Vec::new();
    let mut worst = 0.0f64;
    for (name, g, t) in &cases {
        assert!(g.n() <= 30);
        let n = g.n().max(2) as f64;
        let mu = (4.0 * n.ln() / (eps * eps)).ceil() as usize;
        let cap = 50 * g.n() * g.n();
        let sc = laplacian_schur(g, t);
        let mut ok = 0;
        for seed in 0..SEEDS {
            let bundle = simulate_hitting_walks(g, t, mu, cap, false, &mut rng(seed)).unwrap();
            assert_eq!(&bundle.terminals, t);
            let (h, _) = walk_schur_laplacian(&bundle);
            let check = spectral_approx_check(&sc, &laplacian(&h), eps);
            if let Ok(c) = check {
                worst = worst.max(c.achieved_eps);
                if c.holds {
                    ok += 1;
                }
            }
        }
        if ok < NEED {
            failing.push(format!("{name}: {ok}/{SEEDS}"));
        }
    }
    // Series reduction: the unit path a-b-c onto {a, c} is the ½-weight edge.
    let g = path(3);
    let mu = (4.0 * 3f64.ln() / (eps * eps)).ceil() as usize;
    let w: Vec<f64> = (0..200)
        .map(|s| {
            let b = simulate_hitting_walks(&g, &[0, 2], mu, 1000, false, &mut rng(4000 + s)).unwrap();
            walk_schur_laplacian(&b).0.total_weight()
        })
        .collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
    let sigma = (var / w.len() as f64).sqrt();
    let series_ok = (mean - 0.5).abs() <= 3.0 * sigma.max(1e-12);
    let pass = failing.is_empty() && series_ok;
    verdict(
        4,
        "random-walk Schur complement",
        pass,
        &format!(
            "eps=0.5, mu=ceil(4 ln n/eps^2), {} fixtures x {SEEDS} seeds, worst achieved eps {worst:.3}; series mean {mean:.4} vs 0.5 (3 sigma = {:.4}){}",
            cases.len(),
            3.0 * sigma,
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_approx_sc() {
    let eps = 0.1;
    let cases: Vec<(String, WeightedGraph, Vec<usize>)> = vec![
        ("grid corners".into(), grid(6, 6), vec![0, 5, 30, 35]),
        ("random".into(), build(random(50, 0.1), 51), pick(50, 6, 52)),
        ("ktree".into(), build(GraphSpec::ktree(60, 2), 53), pick(60, 8, 54)),
        ("cycle".into(), cycle(40), vec![0, 8, 16, 24, 32]),
        ("weighted grid".into(), build(GraphSpec::grid(5, 5).weighted(8), 55), vec![0, 4, 12, 20, 24]),
    ];
    let mut failing = Vec::new();
    let mut split_err = 0.0f64;
    let mut sizes = Vec::new();
    let mut runs = 0;
    for (name, g, t) in &cases {
        assert!(g.n() <= 60);
        let d = identity_minor(g);
        let svc = AggregationService::sequential(g.clone());
        let sc = laplacian_schur(g, t);
        let scale = sc.amax().max(1.0);
        let mut ok = 0;
        for seed in 0..SEEDS {
            runs += 1;
            let factory = ChainFactory { params: SolverParams::default(), eps: 1e-3, seed };
            match approx_sc(&d, t, eps, &ApproxScParams::default(), &factory, &svc, seed) {
                Ok(r) => {
                    let got = laplacian_schur(r.h(), &r.terminal_positions);
                    if spectral_approx_check(&sc, &got, eps).is_ok_and(|c| c.holds) {
                        ok += 1;
                    }
                    if seed == 0 {
                        sizes.push(format!("{name}: |E(H)|={} vs |T| ln^2 n/eps^2 = {:.0}", r.h().m(), r.threshold));
                    }
                }
                Err(e) => failing.push(format!("{name} seed {seed}: {e}")),
            }
            // Splitting and collapsing never move the Schur complement.
            let lev = approx_leverage_scores(g, 0.1, 9.0, &DenseFactory, &mut rng(5000 + seed)).lev;
            let (split, _) = split_edges(&Work::new(&d, t), &lev, 1.1);
            let collapsed = split.collapse();
            for w in [&split, &collapsed] {
                let got = laplacian_schur(&w.g, &w.terminal_positions(t));
                split_err = split_err.max((got - &sc).amax() / scale);
            }
        }
        if ok < NEED {
            failing.push(format!("{name}: {ok}/{SEEDS}"));
        }
    }
    // The contraction loop itself, forced below its stopping threshold.
    let forced = ApproxScParams { edge_scale: 0.005, ..ApproxScParams::default() };
    let mut forced_eps = Vec::new();
    let mut forced_err = 0;
    let start = Instant::now();
    let (g, t) = (grid(6, 6), vec![0, 5, 14, 21, 30, 35]);
    let svc = AggregationService::sequential(g.clone());
    let sc = laplacian_schur(&g, &t);
    for seed in 0..4 {
        match approx_sc(&identity_minor(&g), &t, eps, &forced, &DenseFactory, &svc, seed) {
            Ok(r) => forced_eps.push(
                spectral_approx_check(&sc, &laplacian_schur(r.h(), &r.terminal_positions), eps).map_or(f64::INFINITY, |c| c.achieved_eps),
            ),
            Err(_) => forced_err += 1,
        }
    }
    let pass = failing.is_empty() && split_err < 1e-7;
    verdict(
        5,
        "ApproxSC Schur complement and split/collapse exactness",
        pass,
        &format!(
            "eps=0.1 on {} fixtures x {SEEDS} seeds; split/collapse max relative SC error {split_err:.2e} over {runs} runs{}",
            cases.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
    for s in &sizes {
        say(&format!("  report: {s}"));
    }
    let within = forced_eps.iter().filter(|&&e| e <= eps).count();
    say(&format!(
        "  report: forced contraction loop (edge_scale 0.005, grid 6x6, |T|=6): {within}/{} within eps, achieved eps {:?}, {forced_err} errors, {:.1} s",
        forced_eps.len(),
        forced_eps.iter().map(|e| (e * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        start.elapsed().as_secs_f64()
    ));
    assert!(pass);
}

/// A random connected graph from one of the bounded-treewidth families
/// together with its tree decomposition.
fn fuzz_graph(r: &mut ChaCha8Rng) -> (WeightedGraph, TreeDecomposition) {
    let seed = r.random();
    let spec = match r.random_range(0..5) {
        0 => GraphSpec::new(Family::Path, r.random_range(2..=24)),
        1 => GraphSpec::new(Family::Cycle, r.random_range(3..=24)),
        2 => GraphSpec::grid(r.random_range(2..=5), r.random_range(2..=6)),
        3 => GraphSpec::ktree(r.random_range(4..=26), r.random_range(1..=3)),
        _ => bounded_tw(r.random_range(6..=26), r.random_range(2..=4), 0.6),
    };
    with_td(spec, seed)
}

fn fuzz_inputs(partition: &Partition, r: &mut ChaCha8Rng) -> PartInputs {
    partition.parts.iter().map(|p| p.iter().map(|&v| Value::with_id(r.random_range(-50..=50) as f64, v)).collect()).collect()
}

const OPS: [AggOp; 4] = [AggOp::Min, AggOp::Max, AggOp::Sum, AggOp::MinId];

#[test]
fn criterion_6_aggregation_correctness() {
    let mut per_model = [(0usize, 0usize); 3];
    let mut failing = Vec::new();
    let mut max_rho = 0;
    for i in 0..510u64 {
        let mut r = rng(6000 + i);
        let (g, td) = fuzz_graph(&mut r);
        let rho = r.random_range(1..=3);
        let parts = r.random_range(1..=5);
        let partition = random_congested_partition(&g, parts, rho, &mut r);
        max_rho = max_rho.max(rho);
        let op = OPS[r.random_range(0..OPS.len())];
        let inputs = fuzz_inputs(&partition, &mut r);
        let net = NetConfig::with_seed(i);
        let which = (i % 3) as usize;
        let outcome = match which {
            0 => {
                let provider = [ProviderKind::Baseline, ProviderKind::TreeDec, ProviderKind::Empty][r.random_range(0..3)];
                congested_aggregation_congest(&g, &partition, &inputs, op, provider, Some(&td), &net).map(|c| c.outcome)
            }
            _ => {
                let model = if which == 1 { Model::Ncc } else { Model::Hybrid };
                let leaders: Vec<usize> = partition.parts.iter().map(|p| p[r.random_range(0..p.len())]).collect();
                congested_aggregation_ncc(model, &g, &partition, &leaders, &inputs, op, &net).map(|c| c.outcome)
            }
        };
        per_model[which].1 += 1;
        match outcome {
            Ok(o) if o.matches_oracle(&partition, &inputs, op, 0.0) => per_model[which].0 += 1,
            Ok(_) => failing.push(format!("instance {i}: mismatch")),
            Err(e) => failing.push(format!("instance {i}: {e}")),
        }
    }
    let total: usize = per_model.iter().map(|p| p.1).sum();
    let pass = failing.is_empty() && total >= 500;
    verdict(
        6,
        "congested aggregation matches the sequential oracle",
        pass,
        &format!(
            "{total} fuzzed instances (rho <= {max_rho}, ops min/max/sum/min-id): CONGEST {}/{}, NCC {}/{}, HYBRID {}/{}{}",
            per_model[0].0,
            per_model[0].1,
            per_model[1].0,
            per_model[1].1,
            per_model[2].0,
            per_model[2].1,
            if failing.is_empty() { String::new() } else { format!("; {}", failing.iter().take(5).cloned().collect::<Vec<_>>().join(", ")) }
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_ghat_structure() {
    let mut failing = Vec::new();
    let (mut diam_ok, mut width_ok, mut sim_ok) = (0, 0, 0);
    let mut widest = (0, 0);
    let mut sim_slack = f64::INFINITY;
    for i in 0..100u64 {
        let mut r = rng(7000 + i);
        let (g, td) = fuzz_graph(&mut r);
        let rho = r.random_range(1..=4);
        let partition = random_congested_partition(&g, r.random_range(1..=5), rho, &mut r);
        let ghat = build_ghat(&g, &partition).unwrap();
        if check_diameter_claim(&g, &ghat).unwrap() {
            diam_ok += 1;
        } else {
            failing.push(format!("instance {i}: diameter"));
        }
        let lifted = lift_tree_decomposition(&g, &td, &ghat).unwrap();
        let bound = ghat.rho() * (td.width() + 1) - 1;
        if validate_tree_decomposition(&ghat.graph, &lifted).is_ok() && lifted.width() <= bound {
            width_ok += 1;
            if lifted.width() > widest.0 {
                widest = (lifted.width(), bound);
            }
        } else {
            failing.push(format!("instance {i}: width {} > {bound}", lifted.width()));
        }
        let inputs = fuzz_inputs(&partition, &mut r);
        let res =
            congested_aggregation_congest(&g, &partition, &inputs, AggOp::Sum, ProviderKind::Baseline, Some(&td), &NetConfig::with_seed(i))
                .unwrap();
        if res.host_rounds <= res.simulation_bound() {
            sim_ok += 1;
            if res.simulation_bound() > 0 {
                sim_slack = sim_slack.min(res.simulation_bound() as f64 / res.host_rounds.max(1) as f64);
            }
        } else {
            failing.push(format!("instance {i}: host {} > rho^2 x {}", res.host_rounds, res.ghat_rounds));
        }
    }
    let pass = failing.is_empty();
    verdict(
        7,
        "augmented-graph diameter, lifted width and simulation overhead",
        pass,
        &format!(
            "100 fuzzed instances (rho <= 4): D(G^) <= D+1 on {diam_ok}, lifted width <= rho(w+1)-1 on {width_ok} (widest {} vs bound {}), host rounds <= rho^2 G^-rounds on {sim_ok} (min bound/host {sim_slack:.2}){}",
            widest.0,
            widest.1,
            if failing.is_empty() { String::new() } else { format!("; {}", failing.iter().take(5).cloned().collect::<Vec<_>>().join(", ")) }
        ),
    );
    assert!(pass);
}

fn congest_rounds(g: &WeightedGraph, td: &TreeDecomposition, parts: usize, rho: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let partition = random_congested_partition(g, parts, rho, &mut r);
    let inputs = fuzz_inputs(&partition, &mut r);
    congested_aggregation_congest(g, &partition, &inputs, AggOp::Sum, ProviderKind::TreeDec, Some(td), &NetConfig::with_seed(seed))
        .unwrap()
        .outcome
        .rounds
}

/// `len` cliques of size `k` in a row, consecutive cliques fully joined:
/// hop diameter `len − 1` and treewidth `2k − 1` for every `k`.
fn clique_path(len: usize, k: usize) -> (WeightedGraph, TreeDecomposition) {
    let mut g = WeightedGraph::new(len * k);
    for i in 0..len {
        for a in 0..k {
            for b in a + 1..k {
                g.add_edge(i * k + a, i * k + b, 1.0).unwrap();
            }
            if i + 1 < len {
                for b in 0..k {
                    g.add_edge(i * k + a, (i + 1) * k + b, 1.0).unwrap();
                }
            }
        }
    }
    let bags = (0..len.saturating_sub(1).max(1)).map(|i| (i * k..((i + 2).min(len)) * k).collect()).collect();
    let tree_edges = (1..len.saturating_sub(1)).map(|i| (i - 1, i)).collect();
    (g, TreeDecomposition { bags, tree_edges })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn nondecreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}

#[test]
fn criterion_8_round_scaling() {
    // CONGEST: k-tree sweep against ρ³·k·D·log²n.
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in [40, 80] {
        for k in 1..=3 {
            let (g, td) = with_td(GraphSpec::ktree(n, k), 80 + k as u64);
            let d = hop_diameter(&g).unwrap() as f64;
            let l = (n as f64).log2();
            for rho in 1..=3 {
                for seed in 0..3 {
                    xs.push((rho * rho * rho * k) as f64 * d * l * l);
                    ys.push(congest_rounds(&g, &td, 4, rho, 8000 + seed) as f64);
                }
            }
        }
    }
    let congest = fit_proportional(&xs, &ys).unwrap();

    // NCC: random graphs against ρ² + ρ·log n̄.
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in [20, 40, 80] {
        let g = build(random(n, 4.0 / n as f64), 81);
        for rho in 1..=4 {
            for seed in 0..3 {
                let mut r = rng(8100 + seed);
                let partition = random_congested_partition(&g, 4, rho, &mut r);
                let inputs = fuzz_inputs(&partition, &mut r);
                let leaders: Vec<usize> = partition.parts.iter().map(|p| p[0]).collect();
                let res = congested_aggregation_ncc(Model::Ncc, &g, &partition, &leaders, &inputs, AggOp::Sum, &NetConfig::with_seed(seed))
                    .unwrap();
                xs.push((rho * rho) as f64 + rho as f64 * (n as f64).log2());
                ys.push(res.outcome.rounds as f64);
            }
        }
    }
    let ncc = fit_proportional(&xs, &ys).unwrap();

    // Solver: rounds against ln(1/ε) in CONGEST, one fit per preconditioner.
    let mut eps_fits = Vec::new();
    for (name, g) in [("grid 6x6", grid(6, 6)), ("ktree 40", build(GraphSpec::ktree(40, 2), 82))] {
        let svc = AggregationService::new(g.clone(), AggModel::Congest, NetConfig::default());
        for seed in 0..2 {
            let p = Preconditioner::build(&g, &SolverParams::default(), &svc, seed).unwrap();
            let b = random_rhs(g.n(), 8200 + seed);
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for e in 1..=6 {
                let eps = 10f64.powi(-e);
                let s = p.solve(&b, eps).unwrap();
                xs.push((1.0 / eps).ln());
                ys.push((p.setup.total_rounds() + s.ledger.total_rounds()) as f64);
            }
            eps_fits.push((format!("{name} seed {seed}"), fit_linear(&xs, &ys).unwrap()));
        }
    }

    // Monotonicity, each on means over seeds with the other parameters held.
    let (gg, gtd) = with_td(GraphSpec::grid(6, 6), 0);
    let by_rho: Vec<f64> = (1..=4)
        .map(|rho| mean(&(0..4).map(|s| congest_rounds(&gg, &gtd, 4, rho, 8300 + s) as f64).collect::<Vec<_>>()))
        .collect();
    let by_d: Vec<f64> = [4, 8, 16, 32]
        .iter()
        .map(|&c| {
            let (g, td) = with_td(GraphSpec::grid(3, c), 0);
            mean(&(0..4).map(|s| congest_rounds(&g, &td, 3, 2, 8400 + s) as f64).collect::<Vec<_>>())
        })
        .collect();
    let by_k: Vec<f64> = (1..=4)
        .map(|k| {
            let (g, td) = clique_path(12, k);
            mean(&(0..4).map(|s| congest_rounds(&g, &td, 4, 2, 8500 + s) as f64).collect::<Vec<_>>())
        })
        .collect();
    let eps_ok = eps_fits.iter().all(|(_, f)| f.r2 >= 0.9 && f.slope > 0.0);
    let mono = nondecreasing(&by_rho) && nondecreasing(&by_d) && nondecreasing(&by_k);
    let pass = eps_ok && mono;
    verdict(
        8,
        "round-scaling fits and monotonicity",
        pass,
        &format!(
            "solver eps-sweep R^2 {}; monotone in rho {}, D {}, k {}",
            eps_fits.iter().map(|(n, f)| format!("{n} {:.3}", f.r2)).collect::<Vec<_>>().join(", "),
            nondecreasing(&by_rho),
            nondecreasing(&by_d),
            nondecreasing(&by_k)
        ),
    );
    say(&format!(
        "  report: CONGEST k-tree sweep rounds = {:.4} * rho^3 k D log^2 n (R^2 {:.3}, {} points)",
        congest.slope, congest.r2, congest.points
    ));
    say(&format!("  report: NCC rounds = {:.3} * (rho^2 + rho log n) (R^2 {:.3}, {} points)", ncc.slope, ncc.r2, ncc.points));
    for (name, f) in &eps_fits {
        say(&format!("  report: solver {name} CONGEST rounds = {:.0} + {:.1} ln(1/eps) (R^2 {:.4})", f.intercept, f.slope, f.r2));
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" <= ");
    say(&format!("  report: mean rounds by rho 1..4 on grid 6x6: {}", fmt(&by_rho)));
    say(&format!("  report: mean rounds by D on 3xc grids, c in 4,8,16,32: {}", fmt(&by_d)));
    say(&format!("  report: mean rounds by clique size 1..4 on 12-clique paths (D = 11, width 2k-1): {}", fmt(&by_k)));
    assert!(pass);
}

fn within_two(a: f64, b: f64) -> bool {
    (a.abs() < 1e-9 && b.abs() < 1e-9) || (a > 0.0 && b > 0.0 && a / b <= 2.0 && b / a <= 2.0)
}

fn exact_column_sums(g: &WeightedGraph, lp: &DMatrix<f64>, w: &[usize]) -> Vec<f64> {
    let ip = |e: usize, f: usize| {
        let (a, b) = (g.edge(e), g.edge(f));
        let x = lp[(a.u, b.u)] - lp[(a.u, b.v)] - lp[(a.v, b.u)] + lp[(a.v, b.v)];
        x * (a.weight * b.weight).sqrt()
    };
    w.iter().map(|&e| w.iter().filter(|&&f| f != e).map(|&f| ip(e, f).abs()).sum()).collect()
}

fn exact_energy(g: &WeightedGraph, lp: &DMatrix<f64>, t: &[usize]) -> Vec<f64> {
    let sc = laplacian_schur(g, t);
    g.edges()
        .iter()
        .map(|e| {
            let x = DVector::from_iterator(t.len(), t.iter().map(|&v| lp[(v, e.u)] - lp[(v, e.v)]));
            e.weight * (x.transpose() * &sc * &x)[(0, 0)]
        })
        .collect()
}

#[test]
fn criterion_9_estimator_audits() {
    let delta = 0.1;
    let fixtures = vec![
        named("grid", grid(6, 6)),
        named("random", build(random(50, 0.1), 91)),
        named("ktree", build(GraphSpec::ktree(60, 2), 92)),
        named("weighted cycle", build(GraphSpec::new(Family::Cycle, 40).weighted(10), 93)),
    ];
    let mut failing = Vec::new();
    let (mut lev_worst, mut sums_worst, mut energy_worst) = (0.0f64, 0.0f64, 0.0f64);
    for (name, g) in &fixtures {
        assert!(g.n() <= 60);
        let lp = pinv(g);
        let lev = leverage_scores_exact(g);
        let (mut ok_lev, mut ok_sums, mut ok_energy) = (0, 0, 0);
        for seed in 0..SEEDS {
            let est = approx_leverage_scores(g, delta, 9.0, &DenseFactory, &mut rng(9000 + seed));
            let worst = est.lev.iter().zip(&lev).map(|(a, b)| (a / b).ln().abs()).fold(0.0, f64::max);
            lev_worst = lev_worst.max(worst);
            if worst <= (1.0 + delta).ln() {
                ok_lev += 1;
            }

            let mut w = pick(g.m(), (g.m() / 3).max(2), 9100 + seed);
            w.retain(|&e| !g.edge(e).is_loop());
            let est = approx_column_sums(g, &w, 16.0, &DenseFactory, &mut rng(9200 + seed));
            let exact = exact_column_sums(g, &lp, &w);
            sums_worst = sums_worst.max(est.sums.iter().zip(&exact).map(|(a, b)| (a / b).ln().abs()).fold(0.0, f64::max));
            if est.sums.iter().zip(&exact).all(|(&a, &b)| within_two(a, b)) {
                ok_sums += 1;
            }

            let t = pick(g.n(), (g.n() / 4).max(2), 9300 + seed);
            let est = sc_energy_estimate(g, &t, 24.0, &DenseFactory, &mut rng(9400 + seed));
            let exact = exact_energy(g, &lp, &t);
            energy_worst =
                energy_worst.max(est.energy.iter().zip(&exact).filter(|(_, b)| **b > 1e-9).map(|(a, b)| (a / b).ln().abs()).fold(0.0, f64::max));
            if est.energy.iter().zip(&exact).all(|(&a, &b)| within_two(a, b)) {
                ok_energy += 1;
            }
        }
        for (what, ok) in [("leverage", ok_lev), ("column sums", ok_sums), ("energy", ok_energy)] {
            if ok < NEED {
                failing.push(format!("{name} {what}: {ok}/{SEEDS}"));
            }
        }
    }

    let alpha = 4.0;
    let dd_graphs = vec![
        named("random", build(random(100, 0.05), 94)),
        named("grid", grid(10, 10)),
        named("ktree", build(GraphSpec::ktree(150, 3), 95)),
        named("random", build(random(200, 0.02), 96)),
        named("path", path(120)),
    ];
    let (mut dd_ok, mut dd_runs, mut first_try) = (0, 0, 0);
    for (name, g) in &dd_graphs {
        let need = dd_size_bound(g.n(), alpha);
        let mut ok = 0;
        for seed in 0..SEEDS {
            dd_runs += 1;
            match find_dd_subset(g, alpha, 10, &mut rng(9500 + seed)) {
                Ok(dd) => {
                    if dd.validate(g).is_err() {
                        failing.push(format!("{name} seed {seed}: certificate"));
                        continue;
                    }
                    first_try += usize::from(dd.tries == 1);
                    if dd.f.len() >= need {
                        ok += 1;
                    }
                }
                Err(e) => failing.push(format!("{name} seed {seed}: {e}")),
            }
        }
        dd_ok += ok;
        if ok < NEED {
            failing.push(format!("{name} DD size: {ok}/{SEEDS}"));
        }
    }
    let pass = failing.is_empty();
    verdict(
        9,
        "estimator audits",
        pass,
        &format!(
            "{} fixtures x {SEEDS} seeds: worst |ln ratio| leverage {lev_worst:.3} (limit {:.3}), column sums {sums_worst:.3}, energy {energy_worst:.3} (limit {:.3}); alpha-DD valid and >= n/40 on {dd_ok}/{dd_runs} ({first_try} on the first draw){}",
            fixtures.len(),
            (1.0 + delta).ln(),
            2f64.ln(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
    assert!(pass);
}
