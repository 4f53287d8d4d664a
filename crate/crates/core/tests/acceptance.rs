//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use gradwatch::cusum::{cusum_field, Grid};
use gradwatch::estimator::u0_at_threshold;
use gradwatch::features::{evaluate, FeatureFamily};
use gradwatch::harness::{median, run_mc, Design, DesignKind, McReport, McSetup};
use gradwatch::quantiles::{assemble_covariance, psd_repair, simulate_sup_draws, CovKernel};
use gradwatch::series::{embed_lags, reverse_time};
use gradwatch::TimeSeries;
use rand::Rng;

const SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, u64, fn() -> Outcome)> = vec![
        ("cusum field equals naive recomputation", 10, oracle_equivalence),
        ("exact algebraic invariants", 5, exact_invariants),
        ("known kernel, plug-in kernel and psd repair", 10, known_kernel),
        ("quantile curve properties", 120, quantile_properties),
        ("no-change coverage", 600, no_change_coverage),
        ("mu1 reproduction", 900, mu1_reproduction),
        ("mu2 bias exceeds mu1 bias", 900, mu2_vs_mu1),
        ("setting2 multivariate no-change", 900, setting2_no_change),
        ("from-right detection on returns", 600, from_right_returns),
        ("abrupt break in a piecewise design", 900, piecewise_break),
    ];
    let mut failed = 0;
    for (n, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let pass = out.pass && secs < budget as f64;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {} ({secs:.1}s, budget {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            n + 1,
            out.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = common::rng(SEED);
    let mut worst = 0.0f64;
    for s in 0..100 {
        let len = rng.random_range(5..=200);
        let dim = rng.random_range(1..=3);
        let (x, family) = match s % 4 {
            0 => (common::random_series(&mut rng, len, 1), FeatureFamily::mean()),
            1 => (common::random_series(&mut rng, len, 1), FeatureFamily::second_moment()),
            2 => {
                let p = rng.random_range(0..=3);
                let y = common::random_series(&mut rng, len, 1);
                (embed_lags(&y, p).unwrap(), FeatureFamily::autocovariance(p))
            }
            _ => (
                common::random_series(&mut rng, len, dim),
                FeatureFamily::covariance_matrix(dim).unwrap(),
            ),
        };
        let grid = Grid::full(x.len());
        let field = cusum_field(&evaluate(&family, &x).unwrap(), &grid).unwrap();
        let oracle = common::naive_field(&x, &family, &common::full_indices(&grid, x.len()));
        for (k, fk) in oracle.iter().enumerate() {
            for (i, row) in fk.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    worst = worst.max((field.get(i, j, k) - v).abs());
                }
            }
        }
        for (a, b) in field.sup_curve().iter().zip(common::naive_sup(&oracle)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over 100 series"))
}

fn exact_invariants() -> Outcome {
    let mut rng = common::rng(SEED + 1);
    let mut diag_ok = true;
    let mut mono_ok = true;
    for _ in 0..50 {
        let len = rng.random_range(10..=150);
        let x = common::random_series(&mut rng, len, 1);
        let field = cusum_field(
            &evaluate(&FeatureFamily::mean(), &x).unwrap(),
            &Grid::full(len),
        )
        .unwrap();
        diag_ok &= (0..len).all(|i| field.get(i, i, 0) == 0.0);
        let mut taus: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..30.0)).collect();
        taus.sort_by(f64::total_cmp);
        let us: Vec<f64> = taus.iter().map(|&t| u0_at_threshold(&field, t).unwrap()).collect();
        mono_ok &= us.windows(2).all(|w| w[0] <= w[1]);
    }

    // dyadic data and an integer shift keep every partial sum exact
    let mut shift_ok = true;
    for _ in 0..20 {
        let len = rng.random_range(10..=150);
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-64i32..64) as f64 / 16.0).collect();
        let c = rng.random_range(-20i32..20) as f64;
        let fam = FeatureFamily::mean();
        let a = cusum_field(&evaluate(&fam, &TimeSeries::univariate(v.clone()).unwrap()).unwrap(), &Grid::full(len)).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = cusum_field(&evaluate(&fam, &TimeSeries::univariate(shifted).unwrap()).unwrap(), &Grid::full(len)).unwrap();
        for i in 0..len {
            for j in 0..=i {
                shift_ok &= a.get(i, j, 0).to_bits() == b.get(i, j, 0).to_bits();
            }
        }
    }

    let mut rev_ok = true;
    for _ in 0..20 {
        let len = rng.random_range(2..=100);
        let dim = rng.random_range(1..=3);
        let x = common::random_series(&mut rng, len, dim);
        rev_ok &= reverse_time(&reverse_time(&x)) == x;
    }
    outcome(
        diag_ok && mono_ok && shift_ok && rev_ok,
        format!("diagonal {diag_ok}, monotone {mono_ok}, shift {shift_ok}, reverse {rev_ok}"),
    )
}

fn known_kernel() -> Outcome {
    let grid = Grid::equispaced(20).unwrap();
    let u = grid.points().to_vec();
    let pairs = common::pairs(u.len());
    let known = assemble_covariance(&CovKernel::known(), &grid, 1).unwrap();
    let mut known_dev = 0.0f64;
    for (a, &p) in pairs.iter().enumerate() {
        for (b, &q) in pairs.iter().enumerate() {
            known_dev = known_dev.max((known[(a, b)] - common::bridge_cov_oracle(&u, p, q)).abs());
        }
    }

    let plug = CovKernel::plug_in(&grid, 1, |u, _, _| Ok(u)).unwrap();
    let plugged = assemble_covariance(&plug, &grid, 1).unwrap();
    let plug_dev = (&plugged - &known).abs().max();

    let repaired = psd_repair(&known, 1e-10).unwrap();
    let eig = repaired.matrix.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let psd_ok = eig.eigenvalues.min() >= -1e-12 * lmax;

    outcome(
        known_dev <= 1e-12 && plug_dev <= 1e-12 && psd_ok,
        format!(
            "closed form dev {known_dev:.2e}, plug-in dev {plug_dev:.2e}, min eig / max eig {:.2e}, rank {}",
            eig.eigenvalues.min() / lmax,
            repaired.rank
        ),
    )
}

fn quantile_properties() -> Outcome {
    let grid = Grid::equispaced(50).unwrap();
    let kernel = CovKernel::known();
    let draws = simulate_sup_draws(&kernel, &grid, 1, 20_000, SEED, 1e-10).unwrap();
    let alphas = [0.01, 0.05, 0.1, 0.2, 0.5];
    let curves: Vec<_> = alphas.iter().map(|&a| draws.quantile_curve(a).unwrap()).collect();
    let in_u = curves.iter().all(|c| c.q.windows(2).all(|w| w[0] <= w[1]));
    let in_alpha = curves
        .windows(2)
        .all(|w| w[0].q.iter().zip(&w[1].q).all(|(a, b)| a >= b));

    let again = simulate_sup_draws(&kernel, &grid, 1, 20_000, SEED, 1e-10).unwrap();
    let reproducible = again
        .quantile_curve(0.1)
        .unwrap()
        .q
        .iter()
        .zip(&curves[2].q)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let terminal: Vec<f64> = (0..5)
        .map(|s| {
            simulate_sup_draws(&kernel, &grid, 1, 20_000, 1000 + s, 1e-10)
                .unwrap()
                .quantile_curve(0.1)
                .unwrap()
                .terminal()
        })
        .collect();
    let spread = terminal.iter().cloned().fold(f64::MIN, f64::max)
        - terminal.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        in_u && in_alpha && reproducible && spread <= 0.02,
        format!(
            "monotone in u {in_u}, in alpha {in_alpha}, reproducible {reproducible}, q0.1(1) over 5 seeds {:?} spread {spread:.4}",
            terminal.iter().map(|q| format!("{q:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn mc(kind: DesignKind, t_len: usize, n: usize) -> McReport {
    let design = Design::new(kind, t_len).unwrap();
    mc_design(design, n)
}

fn mc_design(design: Design, n: usize) -> McReport {
    let mut setup = McSetup::for_design(&design);
    setup.pipeline.seed = SEED;
    run_mc(&design, n, &setup, SEED).unwrap()
}

fn no_change_coverage() -> Outcome {
    let r = mc(DesignKind::NoChange, 500, 300);
    let below = r.summary.below_one.unwrap();
    outcome(
        below <= 0.15 && r.failures == 0,
        format!("P(u0 < 1) = {below:.3} (limit 0.15), failures {}", r.failures),
    )
}

fn break_criterion(kind: DesignKind) -> Outcome {
    let r500 = mc(kind, 500, 300);
    let r1000 = mc(kind, 1000, 300);
    let m500 = r500.summary.median.unwrap();
    let m1000 = r1000.summary.median.unwrap();
    let under = r500.summary.underestimation.unwrap();
    let (b500, b1000) = (m500 - 0.5, m1000 - 0.5);
    outcome(
        (0.5..=0.6).contains(&m500) && under <= 0.15 && b1000 <= b500 && r500.failures + r1000.failures == 0,
        format!(
            "T=500 median {m500:.3} (in [0.5, 0.6]), P(u0 < 0.5) = {under:.3} (limit 0.15), median bias T=1000 {b1000:.3} <= T=500 {b500:.3}"
        ),
    )
}

fn mu1_reproduction() -> Outcome {
    break_criterion(DesignKind::Mu1)
}

fn mu2_vs_mu1() -> Outcome {
    let a = mc(DesignKind::Mu1, 500, 300);
    let b = mc(DesignKind::Mu2, 500, 300);
    let bias1 = a.summary.mean.unwrap() - 0.5;
    let bias2 = b.summary.mean.unwrap() - 0.5;
    outcome(
        bias2 >= bias1,
        format!("mean bias mu2 {bias2:.4} >= mu1 {bias1:.4}"),
    )
}

fn setting2_no_change() -> Outcome {
    let design = Design::new(DesignKind::NoChange, 500).unwrap().with_dim(3).unwrap();
    let mut setup = McSetup::for_design(&design);
    setup.pipeline.seed = SEED;
    setup.pipeline.hac.bandwidth = 0;
    setup.pipeline.smoother = Some(gradwatch::longrun::SmootherConfig::new(0.1).unwrap());
    let r = run_mc(&design, 200, &setup, SEED).unwrap();
    let at_one = r.estimates.iter().filter(|&&u| u == 1.0).count() as f64 / 200.0;
    outcome(
        at_one >= 0.85,
        format!(
            "K = {}, P(u0 = 1) = {at_one:.3} (need 0.85), failures {}",
            setup.feature.family_for(3).unwrap().len(),
            r.failures
        ),
    )
}

fn from_right_returns() -> Outcome {
    let r = mc(DesignKind::Returns, 500, 300);
    let dev: Vec<f64> = r.estimates.iter().map(|u| (u - 0.6).abs()).collect();
    let m = median(&dev).unwrap();
    outcome(
        m <= 0.1 && r.failures == 0,
        format!(
            "median |u0 - 0.6| = {m:.3} (limit 0.1), median u0 {:.3}",
            r.summary.median.unwrap()
        ),
    )
}

fn piecewise_break() -> Outcome {
    break_criterion(DesignKind::Piecewise)
}
