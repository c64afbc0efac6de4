use gpmnet::config::FitSettings;
use gpmnet::energy::{build_basis, Energy, EnergyModel};
use gpmnet::eval::{read_results, run_benchmark_with, scaling_curve, BenchmarkSpec, RESULTS_FILE, SUMMARY_FILE};
use gpmnet::gpm::{compute_gpm, dd_stat, extract_graph, Convention, GpmMatrix, ThresholdPolicy};
use gpmnet::graphs::{hamming, UndirectedGraph};
use gpmnet::oracle::{
    exact_ci, exact_dd_omega, exact_md_omega, lemma2_tables, random_ci_table, thm1_iff, uniform_grid, verify, GaussianEnergy, LookupModel,
    TabularDistribution, VerifyOptions,
};
use gpmnet::penalty::{penalty_value_and_gradient, PenaltyConfig, PenaltyKind};
use gpmnet::scorematch::mixed_loss;
use gpmnet::synthgen::{generate, Family, GenSpec};
use gpmnet::train::{fit, gradient_selfcheck, BasisConfig, TrainConfig};
use gpmnet::types::{Dataset, Schema, VariableSpec};
use gpmnet::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn coupled_pair() -> TabularDistribution {
    TabularDistribution::discrete(&[2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap()
}

#[test]
fn dd_statistic_of_coupled_table() {
    let m = LookupModel::new(coupled_pair()).unwrap();
    let want = 2.0 * 4f64.ln();
    for x in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]] {
        assert!((dd_stat(&m, &x, 0, 1, 1, 1).unwrap() - want).abs() < 1e-12);
    }
    let ds = Dataset::from_rows(Schema::discrete(&[2, 2]).unwrap(), &[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let g = compute_gpm(&m, &ds, Convention::Squared).unwrap();
    assert!((g.get(0, 1) - want * want).abs() < 1e-12);
    assert!((exact_dd_omega(&coupled_pair(), 0, 1).unwrap() - want * want).abs() < 1e-12);
    assert!(!exact_ci(&coupled_pair(), 0, 1).unwrap());
    assert!(dd_stat(&m, &[0.0, 0.0], 0, 1, 0, 1).is_err());
}

#[test]
fn product_lookup_has_zero_dd_entries() {
    let td = TabularDistribution::discrete_from_fn(&[2, 3, 2], |c| [0.3, 0.7][c[0]] * [0.2, 0.5, 0.3][c[1]] * [0.6, 0.4][c[2]]).unwrap();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        assert!(exact_ci(&td, i, j).unwrap());
        assert!(exact_dd_omega(&td, i, j).unwrap() < 1e-12);
    }
}

#[test]
fn chain_construction_is_ci_only_given_the_middle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let td = random_ci_table(&[3, 2, 3], 0, 1, &mut rng).unwrap();
        assert!(exact_ci(&td, 0, 1).unwrap());
        assert!(!exact_ci(&td, 0, 2).unwrap());
    }
}

#[test]
fn mixed_gaussian_shift_omegas() {
    let (nodes, weights) = uniform_grid(-6.0, 7.0, 131).unwrap();
    let build = |shift: f64| {
        let dens = move |cfg: &[usize], x: f64| {
            let mu = shift * cfg[0] as f64;
            (-(x - mu).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * 0.5
        };
        TabularDistribution::mixed(&[2], 0, nodes.clone(), weights.clone(), &dens, None).unwrap()
    };
    // Omega is the mean squared score gap, which is shift² for unit-variance normals.
    for (shift, want, tol) in [(0.0, 0.0, 1e-10), (1.0, 1.0, 1e-6), (2.0, 4.0, 1e-6)] {
        let td = build(shift);
        let got = exact_md_omega(&td, 0, 1).unwrap();
        assert!((got - want).abs() < tol, "shift {shift}: {got}");
    }
}

#[test]
fn gaussian_cross_statistics_match_precision() {
    let prec = vec![2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0];
    let g = GaussianEnergy::new(prec, 3).unwrap();
    let ds = Dataset::from_rows(Schema::continuous(3), &[vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.2]]).unwrap();
    let omega = compute_gpm(&g, &ds, Convention::Squared).unwrap();
    assert_eq!(omega.get(0, 2), 0.0);
    assert!((omega.get(0, 1) - 0.25).abs() < 1e-12);
    let graph = extract_graph(&omega, ThresholdPolicy::Absolute(1e-3));
    assert_eq!(graph.edges(), vec![(0, 1), (1, 2)]);
}

#[test]
fn two_dimensional_gaussian_gives_one_edge() {
    // Precision of a bivariate normal with unit variances and correlation 0.5.
    let prec = vec![4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0];
    let g = GaussianEnergy::new(prec, 2).unwrap();
    let ds = Dataset::from_rows(Schema::continuous(2), &[vec![0.1, 0.2]]).unwrap();
    let omega = compute_gpm(&g, &ds, Convention::Squared).unwrap();
    assert!((omega.get(0, 1) - 4.0 / 9.0).abs() < 1e-12);
    assert_eq!(extract_graph(&omega, ThresholdPolicy::Absolute(1e-3)).edges(), vec![(0, 1)]);
}

#[test]
fn gap_policy_example() {
    let schema = Schema::continuous(3);
    let g = GpmMatrix::from_pair_values(&schema, &[1e-12, 0.8, 0.9], Convention::Squared).unwrap();
    assert_eq!(extract_graph(&g, ThresholdPolicy::Gap).edges(), vec![(0, 2), (1, 2)]);
    let tiny = GpmMatrix::from_pair_values(&schema, &[1e-8, 1e-9, 1e-7], Convention::Squared).unwrap();
    assert_eq!(extract_graph(&tiny, ThresholdPolicy::Absolute(1e-6)).edge_count(), 0);
}

#[test]
fn mixed_row_closed_form() {
    let schema = Schema::new(vec![VariableSpec::continuous("x"), VariableSpec::discrete_indexed("z", 2)]).unwrap();
    let ds = Dataset::from_rows(schema.clone(), &[vec![0.0, 1.0]]).unwrap();
    let basis = build_basis(&ds, 1, 0.5, 1.0, 0).unwrap();
    let m = EnergyModel::zeros(schema, basis).unwrap();
    let r = mixed_loss(&m, &ds).unwrap();
    assert!((r.per_variable[0] + 1.0).abs() < 1e-12);
    assert!((r.per_variable[1] + 2.0).abs() < 1e-12);
    assert!((r.total + 3.0).abs() < 1e-12);
}

#[test]
fn penalty_gradient_vanishes_on_the_scad_plateau() {
    let (ds, _) = generate(&GenSpec::new(Family::ButterflyContinuous, 4, 30, 2)).unwrap();
    let basis = build_basis(&ds, 5, 0.05, 1.0, 0).unwrap();
    let zero = EnergyModel::zeros(ds.schema().clone(), basis).unwrap();
    let theta: Vec<f64> = (0..zero.n_params()).map(|p| 3.0 * ((p % 5) as f64 - 2.0)).collect();
    let m = zero.with_theta(&theta).unwrap();
    let om = compute_gpm(&m, &ds, Convention::Squared).unwrap();
    let lambda = om.pair_values().iter().cloned().fold(f64::INFINITY, f64::min) / 4.0;
    let cfg = PenaltyConfig::new(PenaltyKind::Scad, lambda);
    let (value, grad) = penalty_value_and_gradient(&cfg, &m, &ds, Convention::Squared).unwrap();
    assert!(grad.iter().all(|g| *g == 0.0));
    assert!((value - 6.0 * (cfg.scad_a + 1.0) * lambda * lambda / 2.0).abs() < 1e-12 * value);
    let (_, g0) = penalty_value_and_gradient(&PenaltyConfig::none(), &m, &ds, Convention::Squared).unwrap();
    assert!(g0.iter().all(|g| *g == 0.0));
}

#[test]
fn zero_iterations_return_the_zero_model() {
    let (ds, _) = generate(&GenSpec::new(Family::ButterflyMixed, 4, 50, 1)).unwrap();
    let train = TrainConfig { max_iters: 0, ..Default::default() };
    let r = fit(&ds, &BasisConfig::default(), &PenaltyConfig::default(), &train).unwrap();
    assert_eq!(r.iterations, 0);
    assert!(r.model.theta().iter().all(|t| *t == 0.0));
    assert_eq!(r.gpm, compute_gpm(&r.model, &gpmnet::types::standardize(&ds).0, Convention::Squared).unwrap());
}

#[test]
fn fits_are_reproducible() {
    let (ds, _) = generate(&GenSpec::new(Family::ButterflyDiscrete, 4, 100, 3)).unwrap();
    let train = TrainConfig { max_iters: 40, batch: Some(30), seed: 9, ..Default::default() };
    let a = fit(&ds, &BasisConfig::default(), &PenaltyConfig::default(), &train).unwrap();
    let b = fit(&ds, &BasisConfig::default(), &PenaltyConfig::default(), &train).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.theta(), b.model.theta());
    assert_eq!(a.gpm, b.gpm);
}

#[test]
fn selfcheck_fixtures() {
    let (ds, _) = generate(&GenSpec::new(Family::ButterflyMixed, 4, 20, 5)).unwrap();
    let basis = build_basis(&ds, 4, 0.05, 1.0, 0).unwrap();
    let m = EnergyModel::zeros(ds.schema().clone(), basis).unwrap();
    let r = gradient_selfcheck(&m, &ds, &PenaltyConfig::none()).unwrap();
    assert!(r.max_rel_error <= 1e-5, "{r:?}");
    let (cds, _) = generate(&GenSpec::new(Family::ButterflyContinuous, 2, 20, 5)).unwrap();
    let anchor = build_basis(&cds, 1, 0.05, 1.0, 0).unwrap();
    let m = EnergyModel::zeros(cds.schema().clone(), anchor).unwrap();
    assert!(gradient_selfcheck(&m, &cds, &PenaltyConfig::none()).unwrap().max_rel_error <= 1e-5);
}

#[test]
fn lemma2_uniform_constant_is_eight() {
    let tables = lemma2_tables().unwrap();
    assert_eq!(tables.len(), 3);
    let uniform = TabularDistribution::discrete(&[2, 2], vec![0.25; 4]).unwrap();
    let flat = |_: &[usize]| -> Result<f64> { Ok(0.0) };
    let pair = gpmnet::oracle::exact_discrete_objective_constant(&uniform, &flat).unwrap();
    assert!((pair.constant - 8.0).abs() < 1e-12);
}

fn flipped_dd_stat(model: &dyn Energy, x: &[f64], i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    let t = model.pair_log_table(x, i, j)?;
    let mj = model.schema().cardinality(j);
    let at = |a: usize, b: usize| t[a * mj + b];
    // Sign error on the second difference turns the double difference into a sum.
    Ok((at(0, 0) - at(k, 0)) + (at(0, l) - at(k, l)))
}

#[test]
fn injected_sign_bug_is_caught_by_thm1() {
    let tally = thm1_iff(40, 1, flipped_dd_stat).unwrap();
    assert!(tally.agree < tally.trials);
    let report = verify(&VerifyOptions { trials: 40, seed: 1, dd_stat: flipped_dd_stat });
    assert!(!report.passed);
    assert!(report.failing().contains(&"thm1-iff"));
    assert!(verify(&VerifyOptions { trials: 40, seed: 1, ..Default::default() }).passed);
}

/// Empirical lookup table of a discrete dataset with add-one smoothing.
fn lookup_estimate(ds: &Dataset) -> Result<UndirectedGraph> {
    let cards: Vec<usize> = (0..ds.d()).map(|i| ds.schema().cardinality(i)).collect();
    let total: usize = cards.iter().product();
    let mut counts = vec![1.0; total];
    for r in ds.rows() {
        let s = r.iter().zip(&cards).fold(0, |acc, (v, m)| acc * m + *v as usize);
        counts[s] += 1.0;
    }
    let z: f64 = counts.iter().sum();
    let td = TabularDistribution::discrete(&cards, counts.iter().map(|c| c / z).collect())?;
    let rows = Dataset::new(td.schema().clone(), ds.values().to_vec())?;
    let omega = compute_gpm(&LookupModel::new(td)?, &rows, Convention::Squared)?;
    Ok(extract_graph(&omega, ThresholdPolicy::Gap))
}

fn settings() -> FitSettings {
    gpmnet::config::Config::default().fit_settings().unwrap()
}

#[test]
fn lookup_oracle_benchmark_is_perfect_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BenchmarkSpec::new(vec![GenSpec::new(Family::ButterflyDiscrete, 4, 1000, 0)], &settings());
    spec.output_dir = Some(dir.path().to_path_buf());
    spec.deterministic = true;
    spec.jobs = 2;
    let est = |ds: &Dataset, _: &GenSpec| -> Result<(UndirectedGraph, bool)> { Ok((lookup_estimate(ds)?, true)) };
    let rows = run_benchmark_with(&spec, &est).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.hamming == 0 && r.status == "ok"), "{rows:?}");
    let results = std::fs::read(dir.path().join(RESULTS_FILE)).unwrap();
    let summary = std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap();
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let counting = |ds: &Dataset, g: &GenSpec| {
        calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        est(ds, g)
    };
    run_benchmark_with(&spec, &counting).unwrap();
    assert_eq!(calls.into_inner(), 0);
    assert_eq!(std::fs::read(dir.path().join(RESULTS_FILE)).unwrap(), results);
    assert_eq!(std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap(), summary);
    assert_eq!(read_results(&dir.path().join(RESULTS_FILE)).unwrap().len(), 5);
}

#[test]
fn failing_cells_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = BenchmarkSpec::new(vec![GenSpec::new(Family::ButterflyContinuous, 4, 50, 0)], &settings());
    spec.output_dir = Some(dir.path().to_path_buf());
    spec.seeds = vec![0, 1, 2];
    let est = |ds: &Dataset, g: &GenSpec| -> Result<(UndirectedGraph, bool)> {
        if g.seed == 1 {
            return Err(Error::NonFinite("injected".into()));
        }
        Ok((UndirectedGraph::from_edges(ds.d(), &[(0, 1), (2, 3)])?, true))
    };
    let rows = run_benchmark_with(&spec, &est).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        if r.seed == 1 {
            assert_ne!(r.status, "ok");
            assert!(!r.converged);
            assert_eq!(r.hamming, 2);
        } else {
            assert_eq!((r.status.as_str(), r.hamming), ("ok", 0));
        }
    }
}

#[test]
fn empty_spec_gives_empty_table() {
    let spec = BenchmarkSpec::new(Vec::new(), &settings());
    let est = |_: &Dataset, _: &GenSpec| -> Result<(UndirectedGraph, bool)> { unreachable!() };
    assert!(run_benchmark_with(&spec, &est).unwrap().is_empty());
}

#[test]
fn single_point_scaling_has_no_slope() {
    let train = TrainConfig { max_iters: 2, ..Default::default() };
    let basis = BasisConfig { k: Some(3), ..Default::default() };
    let r = scaling_curve(Family::ButterflyContinuous, &[4], 40, &basis, &PenaltyConfig::default(), &train).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.slope, None);
    assert!(scaling_curve(Family::ButterflyContinuous, &[6, 4], 40, &basis, &PenaltyConfig::default(), &train).is_err());
}

#[test]
fn butterfly_truth_for_two_pairs() {
    let (_, truth) = generate(&GenSpec::new(Family::ButterflyContinuous, 4, 10, 7)).unwrap();
    assert_eq!(truth.edges(), vec![(0, 1), (2, 3)]);
    assert_eq!(hamming(&truth, &UndirectedGraph::empty(4)).unwrap(), 2);
}
