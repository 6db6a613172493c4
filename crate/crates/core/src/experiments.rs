//! Seeded end-to-end experiment drivers shared by the CLI and the
//! acceptance tests: quenched central limit checks for the rooted, rayed,
//! and continuous-time walks, stationarity and ergodic checks of the
//! degree-biased ray-marked measure, the quadratic-variation and corrector
//! diagnostics of the harmonic coordinate, and the shifted-coupling
//! consistency check.
//!
//! Every driver derives all of its randomness from a master seed through
//! numbered streams, so each report is a pure function of its arguments
//! and re-runs are byte-identical regardless of worker count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MgwError, Result};
use crate::harmonic::{
    corrector_max_ratio, corrector_series, estimate_eta_sigma, martingale_series_rayed,
    martingale_series_rooted, McParams, MomentMethod, WCalc,
};
use crate::model::{Flavor, Model, TypeId};
use crate::rng::derive_stream;
use crate::sampler::{rayed_ball_code, two_sample_from_maps, RootLaw, Sampler};
use crate::stats::{
    chi_square_gof, ks_test, phi, reflected_normal_cdf, ChiSquareReport, KsReport,
};
use crate::tree::{NodeId, RayedTree};
use crate::walk::{
    run_rayed_walk, run_rooted_walk, run_rooted_walk_cts, shifted_coupling, step_rayed,
    x_machine_run, Record,
};

/// Relative tolerance of the ergodic resolvent average.
pub const ERGODIC_REL_TOL: f64 = 0.01;
/// Relative tolerance of the quadratic-variation estimate.
pub const VARIANCE_REL_TOL: f64 = 0.02;

// ---------------------------------------------------------------------------
// Central limit checks
// ---------------------------------------------------------------------------

/// Which walk a [`CltReport`] covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkKind {
    Rooted,
    Rayed,
    RootedCts,
}

/// Whether all paths share one environment or each path resamples its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvMode {
    Quenched,
    Annealed,
}

/// Endpoint distribution of many walks, tested against the predicted
/// Gaussian limit.
#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub kind: WalkKind,
    pub env: EnvMode,
    pub lambda: f64,
    /// Steps per walk for the discrete kinds, time horizon for the
    /// continuous kind.
    pub horizon: f64,
    pub paths: usize,
    pub sigma: f64,
    /// Denominator applied to the heights before the test.
    pub scale: f64,
    /// Whether the reference law is the reflected normal (rooted walks,
    /// whose height is nonnegative) or the full normal (rayed walks).
    pub folded: bool,
    /// Test of the final-time marginal.
    pub ks: KsReport,
}

/// A CLT check: the report plus the rescaled heights of every path at the
/// quarter, half, and full horizon.
pub struct CltRun {
    pub report: CltReport,
    pub samples: Vec<[f64; 3]>,
}

fn clt_moments(model: &Model, flavor: Flavor, seed: u64) -> Result<f64> {
    let report = estimate_eta_sigma(
        model,
        flavor,
        MomentMethod::ClosedForm,
        &McParams::default(),
        &mut derive_stream(seed, 1 << 32),
    )?;
    Ok(report.sigma)
}

fn height_triple(heights: &[i32], n: usize, scale: f64) -> Result<[f64; 3]> {
    if heights.len() <= n {
        return Err(MgwError::Walk(
            "a walk was absorbed before its horizon".into(),
        ));
    }
    Ok([
        heights[n / 4] as f64 / scale,
        heights[n / 2] as f64 / scale,
        heights[n] as f64 / scale,
    ])
}

fn finish_clt(
    kind: WalkKind,
    env: EnvMode,
    lambda: f64,
    horizon: f64,
    sigma: f64,
    scale: f64,
    folded: bool,
    samples: Vec<[f64; 3]>,
) -> CltRun {
    let last: Vec<f64> = samples.iter().map(|s| s[2]).collect();
    let ks = if folded {
        ks_test(&last, |x| reflected_normal_cdf(x, 1.0))
    } else {
        ks_test(&last, phi)
    };
    CltRun {
        report: CltReport {
            kind,
            env,
            lambda,
            horizon,
            paths: samples.len(),
            sigma,
            scale,
            folded,
            ks,
        },
        samples,
    }
}

/// Runs `paths` independent rooted walks at lambda = rho on survival-
/// conditioned trees and tests the depths over sigma * sqrt(n) against the
/// reflected normal. In quenched mode every path walks the same tree: each
/// worker clones the environment and rolls it back after every path, and
/// lazy regrowth reproduces the clone bit for bit.
pub fn rooted_clt(
    model: &Arc<Model>,
    env: EnvMode,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<CltRun> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = sampler.spectral.rho;
    let sigma = clt_moments(model, sampler.flavor, seed)?;
    let scale = sigma * (n as f64).sqrt();
    let samples: Vec<[f64; 3]> = match env {
        EnvMode::Quenched => {
            let tree =
                sampler.sample_mgw_nonextinct(RootLaw::Canonical, 0, &mut derive_stream(seed, 0))?;
            let base = tree.mark();
            (0..paths)
                .into_par_iter()
                .map_init(
                    || tree.clone(),
                    |t, i| {
                        let mut rng = derive_stream(seed, 1 + i as u64);
                        let traj = run_rooted_walk(t, lambda, n, Record::Heights, None, &mut rng)?;
                        t.truncate(base);
                        height_triple(&traj.heights, n, scale)
                    },
                )
                .collect::<Result<_>>()?
        }
        EnvMode::Annealed => (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_stream(seed, 1 + i as u64);
                let mut tree = sampler.sample_mgw_nonextinct(RootLaw::Canonical, 0, &mut rng)?;
                let traj = run_rooted_walk(&mut tree, lambda, n, Record::Heights, None, &mut rng)?;
                height_triple(&traj.heights, n, scale)
            })
            .collect::<Result<_>>()?,
    };
    Ok(finish_clt(
        WalkKind::Rooted,
        env,
        lambda,
        n as f64,
        sigma,
        scale,
        true,
        samples,
    ))
}

/// Runs `paths` independent rayed walks at lambda = rho on ray-marked
/// limit trees and tests the heights over sigma * sqrt(n) against the full
/// normal.
pub fn rayed_clt(
    model: &Arc<Model>,
    env: EnvMode,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<CltRun> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = sampler.spectral.rho;
    let sigma = clt_moments(model, sampler.flavor, seed)?;
    let scale = sigma * (n as f64).sqrt();
    // Extending the ray past the height range the walks plausibly reach
    // keeps per-path rollbacks from retreading extension work. Walks that
    // still outrun it extend on demand, deterministically per index.
    let pre = 3 * (n as f64).sqrt() as usize + 64;
    let samples: Vec<[f64; 3]> = match env {
        EnvMode::Quenched => {
            let rt =
                sampler.sample_imgw0(RootLaw::Stationary, pre, 0, &mut derive_stream(seed, 0))?;
            let base = rt.mark();
            (0..paths)
                .into_par_iter()
                .map_init(
                    || rt.clone(),
                    |t, i| {
                        let mut rng = derive_stream(seed, 1 + i as u64);
                        let traj = run_rayed_walk(t, lambda, n, Record::Heights, &mut rng)?;
                        t.truncate(base);
                        height_triple(&traj.heights, n, scale)
                    },
                )
                .collect::<Result<_>>()?
        }
        EnvMode::Annealed => (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_stream(seed, 1 + i as u64);
                let mut rt = sampler.sample_imgw0(RootLaw::Stationary, pre, 0, &mut rng)?;
                let traj = run_rayed_walk(&mut rt, lambda, n, Record::Heights, &mut rng)?;
                height_triple(&traj.heights, n, scale)
            })
            .collect::<Result<_>>()?,
    };
    Ok(finish_clt(
        WalkKind::Rayed,
        env,
        lambda,
        n as f64,
        sigma,
        scale,
        false,
        samples,
    ))
}

/// Runs `paths` continuous-time rooted walks at lambda = rho on survival-
/// conditioned trees, reads each off at times t/4, t/2, and t, and tests
/// the final depths over sigma * sqrt(2 rho t) against the reflected
/// normal. The sqrt(2 rho t) scale is the discrete scale at the mean jump
/// count: the stationary mean of the jump rate lambda + S equals 2 rho.
pub fn cts_clt(
    model: &Arc<Model>,
    env: EnvMode,
    t_final: f64,
    paths: usize,
    seed: u64,
) -> Result<CltRun> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = sampler.spectral.rho;
    let sigma = clt_moments(model, sampler.flavor, seed)?;
    let scale = sigma * (2.0 * lambda * t_final).sqrt();
    let s_max = model
        .laws
        .iter()
        .flat_map(|l| l.atoms.iter())
        .map(|a| a.total_weight())
        .fold(0.0, f64::max);
    // Jumps arrive no faster than rate lambda + s_max; the budget leaves a
    // 20% margin plus slack so exhausting it is an error, not a truncation.
    let budget = ((lambda + s_max) * t_final * 1.2) as usize + 200;
    let one_path = |t: &mut crate::tree::Tree, i: usize| -> Result<[f64; 3]> {
        let mut rng = derive_stream(seed, 1 + i as u64);
        let traj = run_rooted_walk_cts(t, lambda, budget, Record::Heights, None, &mut rng)?;
        let times = traj.jump_times.as_ref().expect("cts walk records jump times");
        if *times.last().expect("nonempty jump times") < t_final {
            return Err(MgwError::Walk(format!(
                "jump budget {budget} ran out before time {t_final}"
            )));
        }
        let mut triple = [0.0; 3];
        for (k, frac) in [0.25, 0.5, 1.0].iter().enumerate() {
            let j = times.partition_point(|&s| s <= frac * t_final) - 1;
            triple[k] = traj.heights[j] as f64 / scale;
        }
        Ok(triple)
    };
    let samples: Vec<[f64; 3]> = match env {
        EnvMode::Quenched => {
            let tree =
                sampler.sample_mgw_nonextinct(RootLaw::Canonical, 0, &mut derive_stream(seed, 0))?;
            let base = tree.mark();
            (0..paths)
                .into_par_iter()
                .map_init(
                    || tree.clone(),
                    |t, i| {
                        let triple = one_path(t, i)?;
                        t.truncate(base);
                        Ok(triple)
                    },
                )
                .collect::<Result<_>>()?
        }
        EnvMode::Annealed => (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut tree = sampler.sample_mgw_nonextinct(
                    RootLaw::Canonical,
                    0,
                    &mut derive_stream(seed, (1 << 33) + i as u64),
                )?;
                one_path(&mut tree, i)
            })
            .collect::<Result<_>>()?,
    };
    Ok(finish_clt(
        WalkKind::RootedCts,
        env,
        lambda,
        t_final,
        sigma,
        scale,
        true,
        samples,
    ))
}

// ---------------------------------------------------------------------------
// Stationarity of the environment seen from the walker
// ---------------------------------------------------------------------------

/// Number of increasing-height neighbors of `v`, growing it if necessary.
pub fn observation_degree(rt: &mut RayedTree, v: NodeId) -> Result<usize> {
    if !rt.tree.is_grown(v) {
        rt.tree.grow_node(v)?;
    }
    let (kids, ray_child) = rt.upward_neighbors(v);
    Ok(kids.len() + usize::from(ray_child.is_some()))
}

/// Total edge weight toward the increasing-height neighbors of `v` (equal
/// to [`observation_degree`] in the unit flavor), growing `v` if necessary.
pub fn observation_weight(rt: &mut RayedTree, v: NodeId) -> Result<f64> {
    if !rt.tree.is_grown(v) {
        rt.tree.grow_node(v)?;
    }
    let (_, ray_child) = rt.upward_neighbors(v);
    let mut s = rt.tree.child_weight_sum(v);
    if let Some(rc) = ray_child {
        s += rt.tree.node(rc).weight;
    }
    Ok(s)
}

/// Exact law of the observation degree under the degree-biased ray-marked
/// measure: root-pair weights stationary(a)/right(a) * p * (mass + rho)
/// grouped by configuration size, where mass is the size in the unit
/// flavor and the total offspring weight in the weighted one. Entry `d`
/// holds the probability of degree `d`.
pub fn imgwr_degree_law(model: &Model) -> Result<Vec<f64>> {
    let flavor = model.flavor();
    let sd = model.spectral(flavor)?;
    let max_size = model
        .laws
        .iter()
        .flat_map(|l| l.atoms.iter())
        .map(|a| a.size())
        .max()
        .unwrap_or(0);
    let mut probs = vec![0.0; max_size + 1];
    for a in 0..model.type_count() {
        for atom in &model.laws[a].atoms {
            let mass = match flavor {
                Flavor::Unit => atom.size() as f64,
                Flavor::Weighted => atom.total_weight(),
            };
            probs[atom.size()] += sd.stationary[a] / sd.right[a] * atom.p * (mass + sd.rho);
        }
    }
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(probs)
}

/// Goodness-of-fit of the observation degree against [`imgwr_degree_law`],
/// sampled at the origin and again after one walk step at lambda = rho.
/// Agreement of both tallies is the one-step stationarity of the
/// environment seen from the walker.
#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub samples: usize,
    /// Exact probability of observation degree `d` at index `d`.
    pub expected: Vec<f64>,
    pub before: ChiSquareReport,
    pub after: ChiSquareReport,
    pub pass: bool,
}

/// Samples `samples` degree-biased ray-marked environments, tallies the
/// origin's observation degree, takes one walk step at lambda = rho, and
/// tallies the degree at the new position.
pub fn imgwr_degree_stationarity(
    model: &Arc<Model>,
    samples: usize,
    p_floor: f64,
    seed: u64,
) -> Result<StationarityReport> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = sampler.spectral.rho;
    let expected = imgwr_degree_law(model)?;
    let tallies: Vec<(usize, usize)> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<(usize, usize)> {
            let mut rng = derive_stream(seed, i as u64);
            let mut rt = sampler.sample_imgwr(1, 0, &mut rng)?;
            let origin = rt.ray_vertex(0);
            let before = observation_degree(&mut rt, origin)?;
            let pos = step_rayed(&mut rt, origin, lambda, &mut rng)?;
            let after = observation_degree(&mut rt, pos)?;
            Ok((before, after))
        })
        .collect::<Result<_>>()?;
    let mut before = vec![0u64; expected.len()];
    let mut after = vec![0u64; expected.len()];
    for (b, a) in tallies {
        before[b] += 1;
        after[a] += 1;
    }
    let before = chi_square_gof(&before, &expected);
    let after = chi_square_gof(&after, &expected);
    let pass = before.p_value > p_floor && after.p_value > p_floor;
    Ok(StationarityReport {
        samples,
        expected,
        before,
        after,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Ergodic average of the jump resolvent
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicReport {
    pub steps: usize,
    pub average: f64,
    pub expected: f64,
    pub rel_err: f64,
}

/// Time average of 1 / (rho + S) along one long rayed walk at lambda = rho
/// under the degree-biased ray-marked measure, with S the observation
/// weight. The degree bias (S + rho) cancels against the resolvent, so the
/// space average is exactly 1 / (2 rho).
pub fn degree_resolvent_average(
    model: &Arc<Model>,
    steps: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    let sampler = Sampler::new(model.clone())?;
    let rho = sampler.spectral.rho;
    let mut rng = derive_stream(seed, 0);
    let mut rt = sampler.sample_imgwr(4, 1, &mut rng)?;
    let mut pos = rt.ray_vertex(0);
    let mut acc = 0.0;
    for _ in 0..steps {
        acc += 1.0 / (rho + observation_weight(&mut rt, pos)?);
        pos = step_rayed(&mut rt, pos, rho, &mut rng)?;
    }
    let average = acc / steps as f64;
    let expected = 1.0 / (2.0 * rho);
    Ok(ErgodicReport {
        steps,
        average,
        expected,
        rel_err: (average - expected).abs() / expected,
    })
}

// ---------------------------------------------------------------------------
// Quadratic variation of the harmonic coordinate
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct VarianceReport {
    pub steps: usize,
    /// Estimate horizon of the coordinate.
    pub horizon: u32,
    /// Mean conditional step variance along the run.
    pub v_n: f64,
    /// Closed-form second moment of the population limit.
    pub expected: f64,
    pub rel_err: f64,
}

/// Mean conditional step variance of the harmonic coordinate along one
/// long rayed walk at lambda = rho under the degree-biased ray-marked
/// measure, against the closed-form second moment of the population limit.
pub fn quadratic_variation_check(
    model: &Arc<Model>,
    horizon: u32,
    steps: usize,
    seed: u64,
) -> Result<VarianceReport> {
    let sampler = Sampler::new(model.clone())?;
    let rho = sampler.spectral.rho;
    let mut rng = derive_stream(seed, 0);
    let mut rt = sampler.sample_imgwr(4, 1, &mut rng)?;
    let traj = run_rayed_walk(&mut rt, rho, steps, Record::Vertices, &mut rng)?;
    let mut calc = WCalc::new(model.clone(), None, sampler.spectral.clone(), horizon);
    let series = martingale_series_rayed(&mut calc, &rt, &traj)?;
    let moments = estimate_eta_sigma(
        model,
        sampler.flavor,
        MomentMethod::ClosedForm,
        &McParams::default(),
        &mut derive_stream(seed, 1),
    )?;
    let expected = moments.w2_mean;
    Ok(VarianceReport {
        steps,
        horizon,
        v_n: series.v_mean,
        expected,
        rel_err: (series.v_mean - expected).abs() / expected,
    })
}

// ---------------------------------------------------------------------------
// Corrector decay
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CorrectorReport {
    pub horizons: Vec<usize>,
    /// max |eps_t| / sqrt(n) over the prefix of each horizon n.
    pub ratios: Vec<f64>,
    pub strictly_decreasing: bool,
}

/// Runs one rooted walk at lambda = rho to the largest horizon on a
/// survival-conditioned tree and reports max |eps_t| / sqrt(n) for each
/// prefix, where eps is the gap between the rescaled harmonic coordinate
/// and the depth. The ratios shrinking with n is the corrector bound that
/// lets the coordinate stand in for the depth at diffusive scale.
pub fn corrector_decay(
    model: &Arc<Model>,
    m: u32,
    horizons: &[usize],
    seed: u64,
) -> Result<CorrectorReport> {
    assert!(
        horizons.windows(2).all(|w| w[0] < w[1]),
        "horizons must increase"
    );
    let n_max = *horizons.last().expect("nonempty horizons");
    let sampler = Sampler::new(model.clone())?;
    let rho = sampler.spectral.rho;
    let mut tree =
        sampler.sample_mgw_nonextinct(RootLaw::Canonical, 0, &mut derive_stream(seed, 0))?;
    let mut rng = derive_stream(seed, 1);
    let traj = run_rooted_walk(&mut tree, rho, n_max, Record::Vertices, None, &mut rng)?;
    if traj.steps() < n_max {
        return Err(MgwError::Walk(
            "a walk was absorbed on a survival-conditioned tree".into(),
        ));
    }
    let mut calc = WCalc::new(model.clone(), tree.cond.clone(), sampler.spectral.clone(), m);
    let series = martingale_series_rooted(&mut calc, &tree, &traj)?;
    let moments = estimate_eta_sigma(
        model,
        sampler.flavor,
        MomentMethod::ClosedForm,
        &McParams::default(),
        &mut derive_stream(seed, 2),
    )?;
    let eps = corrector_series(&series.m_series, &traj.heights, moments.eta);
    let ratios: Vec<f64> = horizons
        .iter()
        .map(|&n| corrector_max_ratio(&eps[..=n]))
        .collect();
    let strictly_decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    Ok(CorrectorReport {
        horizons: horizons.to_vec(),
        ratios,
        strictly_decreasing,
    })
}

// ---------------------------------------------------------------------------
// Shifted-coupling consistency
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub runs: usize,
    /// Shift scale; the replay window near the origin has length ell(n).
    pub n: usize,
    pub steps: usize,
    /// Replayed excursion segments across all runs.
    pub matched_total: usize,
    /// Whether every rooted machine run reproduced bit for bit when re-run
    /// from its seed.
    pub x_bit_identical: bool,
    /// Whether depth and height increments agreed during every replay.
    pub increments_aligned: bool,
    /// Homogeneity of coupled versus directly sampled origin balls.
    pub ball: ChiSquareReport,
    pub pass: bool,
}

/// Checks the shifted coupling three ways: the rooted machine re-runs bit
/// for bit from its seed; replayed moves change depth and height in step;
/// and the coupled rayed tree's origin ball is distributed like a directly
/// sampled ray-marked limit tree, via a two-sample test on canonical ball
/// codes of radius `ball`.
pub fn coupling_environment_check(
    model: &Arc<Model>,
    runs: usize,
    n: usize,
    steps: usize,
    a0: TypeId,
    ball: usize,
    p_floor: f64,
    seed: u64,
) -> Result<CouplingReport> {
    let sampler = Sampler::new(model.clone())?;
    let per: Vec<(String, String, bool, bool, usize)> = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<(String, String, bool, bool, usize)> {
            let run_seed = derive_stream(seed, 2 * i as u64).gen::<u64>();
            let mut pair = shifted_coupling(model, n, steps, a0, run_seed)?;
            let coupled_code = rayed_ball_code(&mut pair.y_tree, ball)?;
            let (_, replay) = x_machine_run(model, steps, run_seed, 0)?;
            let identical =
                replay.heights == pair.x.heights && replay.vertices == pair.x.vertices;
            let mut rng = derive_stream(seed, 2 * i as u64 + 1);
            let mut direct = sampler.sample_imgw0(RootLaw::Stationary, ball, 0, &mut rng)?;
            let direct_code = rayed_ball_code(&mut direct, ball)?;
            Ok((
                coupled_code,
                direct_code,
                identical,
                pair.increments_equal,
                pair.matched,
            ))
        })
        .collect::<Result<_>>()?;
    let mut coupled: BTreeMap<String, u64> = BTreeMap::new();
    let mut direct: BTreeMap<String, u64> = BTreeMap::new();
    let mut x_bit_identical = true;
    let mut increments_aligned = true;
    let mut matched_total = 0usize;
    for (ca, cd, ident, inc, m) in per {
        *coupled.entry(ca).or_insert(0) += 1;
        *direct.entry(cd).or_insert(0) += 1;
        x_bit_identical &= ident;
        increments_aligned &= inc;
        matched_total += m;
    }
    let ball_report = two_sample_from_maps(&coupled, &direct);
    let pass = ball_report.p_value > p_floor && x_bit_identical && increments_aligned;
    Ok(CouplingReport {
        runs,
        n,
        steps,
        matched_total,
        x_bit_identical,
        increments_aligned,
        ball: ball_report,
        pass,
    })
}
