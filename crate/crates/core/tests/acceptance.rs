//! End-to-end checks of the crate's headline guarantees: exact spectral,
//! extinction, and conductance oracles on the closed-form fixture models,
//! statistical reproduction of the limit behavior at desk scale, and
//! byte-level reproducibility of the command line driver.
//!
//! Each check prints one PASS/FAIL line (visible with `--nocapture`) and
//! then asserts. Tolerances and sample sizes are pinned here on purpose;
//! seeds are arbitrary fixed choices.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mgw::conductance::{
    classify_rwre, effective_conductance, mandelbrot_mean, occupation_check,
    recurrence_simulation_check, resistance_growth_check, Verdict,
};
use mgw::experiments::{
    corrector_decay, coupling_environment_check, cts_clt, degree_resolvent_average,
    imgwr_degree_stationarity, quadratic_variation_check, rayed_clt, rooted_clt, EnvMode,
};
use mgw::fixtures;
use mgw::harmonic::WCalc;
use mgw::model::{Flavor, Model};
use mgw::rng::derive_stream;
use mgw::sampler::{weak_limit_check, RootLaw, Sampler};
use mgw::tree::{GrowthLaw, Tree};

fn arc(model: Model) -> Arc<Model> {
    Arc::new(model)
}

/// Prints the single PASS/FAIL line for a check, then asserts it.
fn verdict(name: &str, pass: bool, details: &str) {
    println!("{} {name} [{details}]", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {details}");
}

fn close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() < tol)
}

#[test]
fn c01_two_type_eigendata_matches_closed_form() {
    let start = Instant::now();
    let sd = fixtures::two_type().spectral(Flavor::Unit).unwrap();
    let elapsed = start.elapsed();
    const TOL: f64 = 1e-10;
    let mut ok = (sd.rho - 2.0).abs() < TOL;
    ok &= close(&sd.right, &[0.5, 0.5], TOL);
    ok &= close(&sd.left, &[2.0 / 3.0, 1.0 / 3.0], TOL);
    ok &= close(&sd.ray_kernel[0], &[0.5, 0.5], TOL);
    ok &= close(&sd.ray_kernel[1], &[1.0, 0.0], TOL);
    ok &= close(&sd.stationary, &[2.0 / 3.0, 1.0 / 3.0], TOL);
    ok &= elapsed < Duration::from_secs(1);
    verdict(
        "c01 two-type eigendata matches closed form at 1e-10",
        ok,
        &format!("rho={} elapsed={elapsed:?}", sd.rho),
    );
}

#[test]
fn c02_extinction_and_descent_transform() {
    let m = fixtures::leafy();
    let ext = m.extinction_probs().unwrap();
    let mut ok = (ext.probs[0] - 1.0 / 3.0).abs() < 1e-12;

    // Survivor skeleton of the leafy model: one or two surviving children,
    // each with probability 1/2, and never zero.
    let skel = m.infinite_descent_transform(&ext).unwrap();
    let mut by_size = [0.0f64; 4];
    for atom in &skel.laws[0].atoms {
        by_size[atom.size()] += atom.p;
    }
    ok &= by_size[0] == 0.0;
    ok &= (by_size[1] - 0.5).abs() < 1e-12;
    ok &= (by_size[2] - 0.5).abs() < 1e-12;
    ok &= (skel.mean_matrix(0.0)[0][0] - 1.5).abs() < 1e-10;

    // On a genuinely two-type model the transformed mean matrix must be
    // the survival-probability conjugation of the original one.
    let m2 = fixtures::two_type_leafy();
    let ext2 = m2.extinction_probs().unwrap();
    let skel2 = m2.infinite_descent_transform(&ext2).unwrap();
    let a = m2.mean_matrix(0.0);
    let got = skel2.mean_matrix(0.0);
    for i in 0..2 {
        for j in 0..2 {
            let want = a[i][j] * (1.0 - ext2.probs[j]) / (1.0 - ext2.probs[i]);
            ok &= (got[i][j] - want).abs() < 1e-10;
        }
    }
    verdict(
        "c02 extinction probability 1/3 and descent law {1:1/2, 2:1/2}",
        ok,
        &format!("x={:.15} sizes={:?}", ext.probs[0], &by_size[..3]),
    );
}

#[test]
fn c03_population_estimate_recursion_on_sampled_trees() {
    const TOL: f64 = 1e-12;
    const HORIZON: u32 = 4;
    let models = [
        arc(fixtures::two_type()),
        arc(fixtures::weighted_mixed()),
        arc(fixtures::leafy()),
    ];
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let model = &models[(case % 3) as usize];
        let sampler = Sampler::new(model.clone()).unwrap();
        let mut rng = derive_stream(3, case);
        let tree = sampler.sample_mgw(RootLaw::Canonical, 3, &mut rng).unwrap();
        let spectral = Arc::new(model.spectral(model.flavor()).unwrap());
        let mut calc = WCalc::new(model.clone(), None, spectral.clone(), HORIZON);

        // The estimate at any grown vertex, scaled by rho, must equal the
        // weighted sum of its children's next-lower-horizon estimates.
        for v in 0..tree.len() as u32 {
            if !tree.is_grown(v) {
                continue;
            }
            for m in 1..=HORIZON {
                let lhs = spectral.rho * calc.w_rooted(&tree, v, m).unwrap();
                let mut rhs = 0.0;
                for w in tree.children(v) {
                    rhs += tree.node(w).weight * calc.w_rooted(&tree, w, m - 1).unwrap();
                }
                worst = worst.max((lhs - rhs).abs());
            }
        }

        // Virtual evaluation from the root key alone agrees with the
        // materialized arena.
        let root = tree.node(0);
        let virt = calc
            .w_virtual(tree.ty(0), root.law(), root.key, HORIZON)
            .unwrap();
        let mat = calc.w_rooted(&tree, 0, HORIZON).unwrap();
        worst = worst.max((virt - mat).abs());
    }
    verdict(
        "c03 tiered population estimates satisfy the rho recursion at 1e-12",
        worst < TOL,
        &format!("worst gap {worst:.3e} over 1000 trees"),
    );
}

#[test]
fn c04_degree_biased_rayed_law_is_one_step_stationary() {
    let start = Instant::now();
    let report = imgwr_degree_stationarity(&arc(fixtures::two_type()), 100_000, 0.01, 4).unwrap();
    let elapsed = start.elapsed();
    let ok = report.pass && elapsed < Duration::from_secs(60);
    verdict(
        "c04 origin degree law invariant under one critical step (p > 0.01)",
        ok,
        &format!(
            "p_before={:.4} p_after={:.4} elapsed={elapsed:?}",
            report.before.p_value, report.after.p_value
        ),
    );
}

#[test]
fn c05_resolvent_time_average_hits_space_mean() {
    let start = Instant::now();
    let report = degree_resolvent_average(&arc(fixtures::two_type()), 1_000_000, 5).unwrap();
    let elapsed = start.elapsed();
    let ok = report.rel_err <= 0.01 && elapsed < Duration::from_secs(60);
    verdict(
        "c05 time average of 1/(rho+d) within 1% of 0.25 over 1e6 steps",
        ok,
        &format!(
            "average={:.6} rel_err={:.5} elapsed={elapsed:?}",
            report.average, report.rel_err
        ),
    );
}

#[test]
fn c06_quadratic_variation_density() {
    let two = quadratic_variation_check(&arc(fixtures::two_type()), 8, 1_000_000, 6).unwrap();
    let want = 7.0 / 24.0;
    let mut ok = (two.v_n - want).abs() <= 0.02 * want;
    let bin = quadratic_variation_check(&arc(fixtures::binary()), 4, 1_000_000, 60).unwrap();
    ok &= bin.v_n == 1.0;
    verdict(
        "c06 V_1e6 within 2% of 7/24 on the two-type model, exactly 1 on binary",
        ok,
        &format!("two-type v={:.6} binary v={}", two.v_n, bin.v_n),
    );
}

#[test]
fn c07_quenched_rayed_clt() {
    let start = Instant::now();
    let run = rayed_clt(&arc(fixtures::two_type()), EnvMode::Quenched, 10_000, 10_000, 7).unwrap();
    let elapsed = start.elapsed();
    let mut ok = run.report.ks.statistic < 0.03;
    ok &= (run.report.sigma * run.report.sigma - 6.0 / 7.0).abs() < 1e-9;
    ok &= elapsed < Duration::from_secs(600);
    verdict(
        "c07 rayed heights on one environment are normal (KS < 0.03)",
        ok,
        &format!(
            "ks={:.4} sigma^2={:.6} elapsed={elapsed:?}",
            run.report.ks.statistic,
            run.report.sigma * run.report.sigma
        ),
    );
}

#[test]
fn c08_quenched_rooted_clt_and_corrector_decay() {
    let bin = rooted_clt(&arc(fixtures::binary()), EnvMode::Quenched, 10_000, 10_000, 8).unwrap();
    let mut ok = bin.report.ks.statistic < 0.02;
    let two = rooted_clt(&arc(fixtures::two_type()), EnvMode::Quenched, 10_000, 10_000, 80).unwrap();
    ok &= two.report.ks.statistic < 0.03;
    let corr = corrector_decay(
        &arc(fixtures::two_type()),
        8,
        &[10_000, 100_000, 1_000_000],
        800,
    )
    .unwrap();
    ok &= corr.strictly_decreasing;
    verdict(
        "c08 rooted depths are folded normal; corrector ratio strictly decreasing",
        ok,
        &format!(
            "binary ks={:.4} two-type ks={:.4} ratios={:?}",
            bin.report.ks.statistic, two.report.ks.statistic, corr.ratios
        ),
    );
}

#[test]
fn c09_continuous_time_scaling() {
    let run = cts_clt(&arc(fixtures::binary()), EnvMode::Quenched, 10_000.0, 10_000, 9).unwrap();
    let ok = run.report.ks.statistic < 0.03;
    verdict(
        "c09 continuous-time depths scale by sigma sqrt(2 rho t) (KS < 0.03)",
        ok,
        &format!("ks={:.4} scale={:.2}", run.report.ks.statistic, run.report.scale),
    );
}

#[test]
fn c10_marked_path_rerooting_converges_to_rayed_limit() {
    let report = weak_limit_check(&arc(fixtures::two_type()), 12, 2, 100_000, 10, 0.01).unwrap();
    verdict(
        "c10 re-rooted radius-2 balls match the rayed limit law (p > 0.01)",
        report.pass,
        &format!(
            "categories={} p={:?}",
            report.categories,
            report.chi2.as_ref().map(|c| c.p_value)
        ),
    );
}

#[test]
fn c11_shifted_coupling_marginals() {
    let report =
        coupling_environment_check(&arc(fixtures::two_type()), 10_000, 2_000, 2_000, 0, 3, 0.01, 11)
            .unwrap();
    verdict(
        "c11 coupled rayed balls match direct draws; rooted side bit-identical",
        report.pass,
        &format!(
            "p={:.4} x_bit_identical={} increments_aligned={} matched={}",
            report.ball.p_value,
            report.x_bit_identical,
            report.increments_aligned,
            report.matched_total
        ),
    );
}

#[test]
fn c12_conductance_closed_form_and_growth_trend() {
    // On the deterministic binary tree every level doubles the parallel
    // paths while the series resistance doubles per edge: C to level k is
    // exactly 2/k at lambda = 2. The tree is materialized, so stop at a
    // depth whose 2^k arena still fits comfortably in memory.
    let mut tree = Tree::new(arc(fixtures::binary()), None, 0, 0x5eed, GrowthLaw::Plain);
    let mut worst: f64 = 0.0;
    for k in 1..=16 {
        let c = effective_conductance(&mut tree, k, 2.0).unwrap();
        worst = worst.max((c - 2.0 / f64::from(k)).abs());
    }
    let mut ok = worst < 1e-12;

    let survey =
        resistance_growth_check(&fixtures::leafy(), Flavor::Unit, 0, &[4, 8, 16, 32], 1000, 0.5, 12)
            .unwrap();
    ok &= survey.p_upward > 0.05;
    verdict(
        "c12 binary k*C = 2 exactly; no upward k*C trend on survivor trees",
        ok,
        &format!(
            "worst closed-form gap {worst:.2e}, medians={:?} p_upward={:.3}",
            survey.medians, survey.p_upward
        ),
    );
}

#[test]
fn c13_occupation_identity_on_a_frozen_tree() {
    let model = arc(fixtures::two_type());
    let sampler = Sampler::new(model).unwrap();
    let mut rng = derive_stream(13, 0);
    let mut tree = sampler.sample_mgw(RootLaw::Canonical, 4, &mut rng).unwrap();
    let target = (0..tree.len() as u32)
        .find(|&v| tree.level(v) == 3)
        .expect("depth-3 vertex exists");
    let report = occupation_check(&mut tree, target, 2.0, 200_000, 12, 3.0, &mut rng).unwrap();

    // Independent closed form: visits per excursion equal the invariant
    // measure ratio (rho + d_v) / (d_o rho^3) at depth 3.
    let d_v = tree.children(target).count() as f64;
    let d_o = tree.children(0).count() as f64;
    let want = (2.0 + d_v) / (d_o * 8.0);
    let ok = report.pass && (report.expected - want).abs() < 1e-12;
    verdict(
        "c13 visits per excursion within 3 sigma of (rho+d_v)/(d_o rho^3)",
        ok,
        &format!(
            "expected={:.6} observed={:.6} sem={:.2e}",
            report.expected, report.observed, report.sem
        ),
    );
}

#[test]
fn c14_bias_classifier_and_simulation_cross_check() {
    const TOL: f64 = 1e-8;
    let model = fixtures::weighted_pair();
    let at2 = classify_rwre(&model, 2.0).unwrap();
    let at3 = classify_rwre(&model, 3.0).unwrap();
    let mut ok = (at2.p_lambda - 1.25).abs() < TOL;
    ok &= matches!(at2.verdict, Verdict::Transient);
    ok &= (at3.p_lambda - 5.0 / 6.0).abs() < TOL;
    ok &= matches!(at3.verdict, Verdict::PositiveRecurrent);
    ok &= (at2.rho_circ - 2.5).abs() < TOL;
    ok &= (at2.kappa - 1.0).abs() < TOL;

    // Walks agree with the verdicts: under the transient bias the fraction
    // of late root returns shrinks as the horizon grows; under the
    // recurrent one the maximum depth stays of the same order while the
    // horizon quadruples.
    let am = arc(model);
    let t_short = recurrence_simulation_check(&am, Flavor::Weighted, 2.0, 2_000, 200, 140).unwrap();
    let t_long = recurrence_simulation_check(&am, Flavor::Weighted, 2.0, 8_000, 200, 141).unwrap();
    ok &= t_long.last_return_ratio < t_short.last_return_ratio;
    let r_short = recurrence_simulation_check(&am, Flavor::Weighted, 3.0, 2_000, 200, 142).unwrap();
    let r_long = recurrence_simulation_check(&am, Flavor::Weighted, 3.0, 8_000, 200, 143).unwrap();
    ok &= r_long.max_depth_mean < 2.0 * r_short.max_depth_mean;
    verdict(
        "c14 classifier verdicts exact to 1e-8 and confirmed by walks",
        ok,
        &format!(
            "p(2)={} p(3)={:.10} rho_circ={:.10} kappa={:.10} ratios {:.4}->{:.4} depths {:.1}->{:.1}",
            at2.p_lambda,
            at3.p_lambda,
            at2.rho_circ,
            at2.kappa,
            t_short.last_return_ratio,
            t_long.last_return_ratio,
            r_short.max_depth_mean,
            r_long.max_depth_mean
        ),
    );
}

#[test]
fn c15_normalized_population_martingale_mean() {
    // Weighted pair: every vertex contributes child weight 2 + 1/2, so the
    // level sums are deterministic and the normalized population equals 1
    // with zero variance.
    let (mean_pair, sem_pair) =
        mandelbrot_mean(&arc(fixtures::weighted_pair()), 0, 1.0, 12, 100, 15).unwrap();
    let mut ok = mean_pair == 1.0 && sem_pair == 0.0;

    // Genuinely random cases: the Monte Carlo mean must cover the root's
    // sum-normalized right-eigenvector entry within three standard errors.
    let (mean_leafy, sem_leafy) =
        mandelbrot_mean(&arc(fixtures::leafy()), 0, 0.0, 12, 4_000, 150).unwrap();
    ok &= (mean_leafy - 1.0).abs() <= 3.0 * sem_leafy && sem_leafy > 0.0;

    let two = fixtures::two_type_leafy();
    let right = two.spectral(Flavor::Unit).unwrap().right.clone();
    let am = arc(two);
    for ty in 0..2 {
        let (mean_ty, sem_ty) = mandelbrot_mean(&am, ty, 0.0, 12, 4_000, 151 + ty as u64).unwrap();
        ok &= (mean_ty - right[ty]).abs() <= 3.0 * sem_ty && sem_ty > 0.0;
    }
    verdict(
        "c15 normalized population mean matches the eigenvector entry",
        ok,
        &format!("pair=({mean_pair}, {sem_pair}) leafy=({mean_leafy:.5}, {sem_leafy:.5})"),
    );
}

/// Runs the installed binary and returns stdout bytes plus the exit code.
fn run_cli(args: &[&str]) -> (Vec<u8>, Option<i32>) {
    let output = Command::new(env!("CARGO_BIN_EXE_mgw"))
        .args(args)
        .output()
        .expect("spawn the mgw binary");
    (output.stdout, output.status.code())
}

#[test]
fn c16_command_reruns_are_byte_identical() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
    let e0 = format!("{root}/models/e0.json");
    let e1 = format!("{root}/models/e1.json");
    let e2 = format!("{root}/models/e2.json");
    let e3 = format!("{root}/models/e3.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["spectral", "--model", &e2],
        vec![
            "sample", "--model", &e2, "--measure", "imgwr", "--replicas", "5", "--seed", "3",
            "--format", "csv",
        ],
        vec![
            "walk", "--model", &e2, "--kind", "rayed", "--steps", "500", "--seed", "4",
            "--format", "csv",
        ],
        vec![
            "clt", "--model", &e0, "--mode", "quenched", "--walk", "rooted", "--n", "2000",
            "--replicas", "500", "--seed", "5",
        ],
        vec![
            "reverse-check", "--model", &e2, "--samples", "4000", "--steps", "30000", "--seed",
            "6",
        ],
        vec![
            "rwre", "--model", &e3, "--sweep", "2,3", "--simulate", "1000", "50", "--seed", "7",
        ],
        vec![
            "couple", "--model", &e2, "--n", "500", "--replicas", "300", "--seed", "8",
        ],
        vec![
            "conductance", "--model", &e1, "--survey", "--replicas", "60", "--seed", "9",
            "--format", "csv",
        ],
    ];
    let mut ok = true;
    let mut failures = Vec::new();
    for case in &cases {
        let (first, code_first) = run_cli(case);
        let (again, code_again) = run_cli(case);
        let mut threaded = case.clone();
        threaded.extend_from_slice(&["--workers", "3"]);
        let (pooled, code_pooled) = run_cli(&threaded);
        let same = first == again && first == pooled;
        let codes = code_first == code_again
            && code_first == code_pooled
            && code_first.is_some_and(|c| c != 2);
        if !(same && codes && !first.is_empty()) {
            failures.push(format!("{} (codes {code_first:?}/{code_again:?}/{code_pooled:?})", case[0]));
            ok = false;
        }
    }
    verdict(
        "c16 every driver command reproduces byte for byte across reruns and worker counts",
        ok,
        &format!("{} commands checked; failures: {failures:?}", cases.len()),
    );
}
