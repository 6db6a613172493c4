//! Electrical-network view of sampled trees and the analytic
//! transience/recurrence classifier for biased walks.
//!
//! A walk with downward bias `lambda` is reversible for the edge
//! conductances `c(parent, v) = lambda^(1-|v|) * prod(edge weights on the
//! path root..v)`, normalized so the root's invariant measure equals its
//! child weight sum. Effective conductances to a level follow the exact
//! series/parallel recursion. The classifier minimizes
//! `gamma -> rho_bar(gamma) / lambda^gamma` over `[0, 1]`, whose logarithm
//! is convex in `gamma`, and reads the verdict off the sign of the minimum
//! minus one.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MgwError, Result};
use crate::model::{Flavor, Model, TypeId};
use crate::rng::{child_key, derive_stream};
use crate::stats::{mean_and_sem, trend_test};
use crate::tree::{config_for, CondTables, GrowthLaw, NodeId, Tree};
use crate::walk::{run_rooted_walk, step_rooted, Record, StepOutcome};

/// Width of the indeterminate band around `p_lambda = 1` where the
/// classifier refuses to pick a verdict.
pub const CRITICAL_BAND: f64 = 1e-9;
/// Default exponent ceiling for the [`kappa`] search.
pub const KAPPA_GAMMA_MAX: f64 = 8.0;

/// Conductance of the edge between `w` and its parent under downward bias
/// `lambda`: `lambda^(1-|w|)` times the product of edge weights along the
/// path from the root to `w`.
pub fn edge_conductance(tree: &Tree, w: NodeId, lambda: f64) -> f64 {
    assert!(tree.parent(w).is_some(), "the root has no parent edge");
    let mut prod = 1.0;
    let mut u = w;
    while let Some(p) = tree.parent(u) {
        prod *= tree.node(u).weight;
        u = p;
    }
    lambda.powi(1 - tree.level(w)) * prod
}

/// Invariant measure of `v` under the biased walk: the total conductance of
/// its incident edges. `v` must be grown so that its children exist.
pub fn vertex_measure(tree: &Tree, v: NodeId, lambda: f64) -> f64 {
    let mut m: f64 = tree
        .children(v)
        .map(|w| edge_conductance(tree, w, lambda))
        .sum();
    if tree.parent(v).is_some() {
        m += edge_conductance(tree, v, lambda);
    }
    m
}

/// Effective conductance between the root and level `k`, growing the tree
/// as far as needed. Level-`k` vertices are a common short-circuited
/// boundary; a tree that dies out before level `k` has conductance zero.
pub fn effective_conductance(tree: &mut Tree, k: i32, lambda: f64) -> Result<f64> {
    if k < 1 {
        return Err(MgwError::Tree(format!(
            "conductance horizon must be positive, got {k}"
        )));
    }
    tree.grow_to_depth(k)?;
    Ok(c_sub(tree, tree.root(), 1.0, k, lambda))
}

/// Conductance from `v` to level `k` inside `v`'s subtree; `path_prod` is
/// the weight product along root..v. Per child: the edge in series with the
/// subtree below, then all children in parallel.
fn c_sub(tree: &Tree, v: NodeId, path_prod: f64, k: i32, lambda: f64) -> f64 {
    if tree.level(v) >= k {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for w in tree.children(v) {
        let prod = path_prod * tree.node(w).weight;
        let c_edge = lambda.powi(1 - tree.level(w)) * prod;
        let below = c_sub(tree, w, prod, k, lambda);
        total += if below.is_infinite() {
            c_edge
        } else {
            c_edge * below / (c_edge + below)
        };
    }
    total
}

/// The same computation as [`effective_conductance`], evaluated directly
/// from the growth keys without materializing the tree. Memory stays O(k)
/// however large the tree gets, which is what makes deep-horizon surveys
/// affordable; the result is bit-identical to growing and measuring.
pub fn effective_conductance_virtual(
    model: &Model,
    cond: Option<&CondTables>,
    root_ty: TypeId,
    law: GrowthLaw,
    root_key: u64,
    k: i32,
    lambda: f64,
) -> Result<f64> {
    if k < 1 {
        return Err(MgwError::Tree(format!(
            "conductance horizon must be positive, got {k}"
        )));
    }
    c_sub_virtual(model, cond, root_ty, law, root_key, 0, 1.0, k, lambda)
}

#[allow(clippy::too_many_arguments)]
fn c_sub_virtual(
    model: &Model,
    cond: Option<&CondTables>,
    ty: TypeId,
    law: GrowthLaw,
    key: u64,
    depth: i32,
    path_prod: f64,
    k: i32,
    lambda: f64,
) -> Result<f64> {
    if depth >= k {
        return Ok(f64::INFINITY);
    }
    let mut total = 0.0;
    for (slot, ch) in config_for(model, cond, ty, law, key)?.iter().enumerate() {
        let prod = path_prod * ch.weight;
        let c_edge = lambda.powi(-depth) * prod;
        let below = c_sub_virtual(
            model,
            cond,
            ch.ty,
            ch.law,
            child_key(key, slot as u32),
            depth + 1,
            prod,
            k,
            lambda,
        )?;
        total += if below.is_infinite() {
            c_edge
        } else {
            c_edge * below / (c_edge + below)
        };
    }
    Ok(total)
}

/// How the conductance to level `k` scales with `k` over trees conditioned
/// to survive, for the walk biased at `lambda = rho`.
#[derive(Clone, Debug, Serialize)]
pub struct ResistanceGrowthReport {
    pub lambda: f64,
    pub ks: Vec<usize>,
    /// Median of `k * C(root <-> k)` over the sampled trees, per horizon.
    pub medians: Vec<f64>,
    /// Fraction of trees whose resistance to level `k` exceeds
    /// `k^(1 + epsilon)`, per horizon.
    pub exceedance: Vec<f64>,
    pub epsilon: f64,
    /// One-sided Mann-Kendall p-value for an upward trend in the medians.
    pub p_upward: f64,
}

/// Measures `C(root <-> k)` for every horizon in `ks` on `n_trees`
/// environments conditioned to survive forever. The product `k * C` should
/// stay bounded: its medians must show no upward trend, and resistance
/// spikes beyond `k^(1+epsilon)` must get rarer as `k` grows. Trees are
/// evaluated virtually, so horizons with millions of vertices are fine.
pub fn resistance_growth_check(
    model: &Model,
    flavor: Flavor,
    root_ty: TypeId,
    ks: &[usize],
    n_trees: usize,
    epsilon: f64,
    seed: u64,
) -> Result<ResistanceGrowthReport> {
    assert!(ks.len() >= 3, "need at least three horizons for a trend");
    assert!(n_trees >= 2);
    let lambda = model.spectral(flavor)?.rho;
    let cond = CondTables::new(model)?;
    let per_tree: Vec<Vec<f64>> = (0..n_trees as u64)
        .into_par_iter()
        .map(|i| {
            let key = derive_stream(seed, i).gen::<u64>();
            ks.iter()
                .map(|&k| {
                    effective_conductance_virtual(
                        model,
                        Some(&cond),
                        root_ty,
                        GrowthLaw::Skeleton,
                        key,
                        k as i32,
                        lambda,
                    )
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut medians = Vec::with_capacity(ks.len());
    let mut exceedance = Vec::with_capacity(ks.len());
    for (j, &k) in ks.iter().enumerate() {
        let mut kc: Vec<f64> = per_tree.iter().map(|row| k as f64 * row[j]).collect();
        kc.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(median_of_sorted(&kc));
        let bar = (k as f64).powf(1.0 + epsilon);
        let over = per_tree.iter().filter(|row| 1.0 / row[j] >= bar).count();
        exceedance.push(over as f64 / n_trees as f64);
    }
    let p_upward = trend_test(&medians).p_upward;
    Ok(ResistanceGrowthReport {
        lambda,
        ks: ks.to_vec(),
        medians,
        exceedance,
        epsilon,
        p_upward,
    })
}

fn median_of_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-level sums of `gamma`-powered path weight products, together with
/// their eigenvalue-normalized martingale form.
#[derive(Clone, Debug, Serialize)]
pub struct LevelSums {
    pub gamma: f64,
    /// `sums[l] = sum over level-l vertices of (path weight product)^gamma`.
    pub sums: Vec<f64>,
    /// `z[l] = rho_bar(gamma)^(-l) * sum of r_bar[type] * (product)^gamma`;
    /// its mean over trees is the root's entry of `r_bar`.
    pub z: Vec<f64>,
}

/// Exact per-level conductance-power sums of a tree grown to depth `n`.
pub fn level_conductance_sums(
    tree: &Tree,
    model: &Model,
    gamma: f64,
    n: i32,
) -> Result<LevelSums> {
    if n < 0 {
        return Err(MgwError::Tree(format!("depth must be nonnegative, got {n}")));
    }
    let sd = model.spectral_gamma(gamma)?;
    let mut pow = vec![0.0f64; tree.len()];
    let mut sums = vec![0.0f64; n as usize + 1];
    let mut weighted = vec![0.0f64; n as usize + 1];
    for v in 0..tree.len() as NodeId {
        let lv = tree.level(v);
        if lv < 0 {
            return Err(MgwError::Tree("level sums need a rooted tree".into()));
        }
        if lv > n {
            continue;
        }
        if lv < n && !tree.is_grown(v) {
            return Err(MgwError::Tree(format!(
                "tree must be grown to depth {n} for level sums"
            )));
        }
        let c = match tree.parent(v) {
            None => 1.0,
            Some(p) => pow[p as usize] * tree.node(v).weight.powf(gamma),
        };
        pow[v as usize] = c;
        sums[lv as usize] += c;
        weighted[lv as usize] += sd.right[tree.ty(v)] * c;
    }
    let z = weighted
        .iter()
        .enumerate()
        .map(|(l, w)| w / sd.rho.powi(l as i32))
        .collect();
    Ok(LevelSums {
        gamma,
        sums,
        z,
    })
}

/// Monte Carlo mean and standard error of the depth-`n` normalized
/// conductance sum over fresh trees with the given root type. The mean
/// estimates the root's entry of the sum-normalized right eigenvector at
/// `gamma`; trees extinct before depth `n` contribute zero.
pub fn mandelbrot_mean(
    model: &Arc<Model>,
    root_ty: TypeId,
    gamma: f64,
    n: i32,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    assert!(replicas >= 2);
    let samples: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = derive_stream(seed, i);
            let mut tree = Tree::new(Arc::clone(model), None, root_ty, rng.gen(), GrowthLaw::Plain);
            tree.grow_to_depth(n)?;
            let sums = level_conductance_sums(&tree, model, gamma, n)?;
            Ok(*sums.z.last().expect("depth >= 0 gives at least one level"))
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_sem(&samples))
}

/// Classifier verdict for a biased walk on random environments.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    PositiveRecurrent,
    Transient,
    CriticalIndeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::PositiveRecurrent => "positive-recurrent",
            Verdict::Transient => "transient",
            Verdict::CriticalIndeterminate => "critical-indeterminate",
        })
    }
}

/// Verdict of the bias classifier together with the quantities behind it.
/// `kappa` serializes as null when the search ceiling reports infinity.
#[derive(Clone, Debug, Serialize)]
pub struct ClassifierReport {
    pub lambda: f64,
    pub p_lambda: f64,
    pub gamma_star: f64,
    pub verdict: Verdict,
    pub rho_circ: f64,
    pub kappa: f64,
}

/// Transience indicator of the bias `lambda`: the minimum over `gamma` in
/// `[0, 1]` of `rho_bar(gamma) / lambda^gamma`, returned together with the
/// minimizing `gamma`. Golden-section search on the convex logarithm,
/// refined to 1e-10 in `gamma` and compared against both endpoints.
pub fn p_lambda(model: &Model, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(MgwError::Model(format!(
            "bias must be positive, got {lambda}"
        )));
    }
    let curve = model.gamma_curve();
    let log_lambda = lambda.ln();
    let g = |gamma: f64| -> Result<f64> { Ok(curve.rho_bar(gamma)?.ln() - gamma * log_lambda) };

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c)?;
    let mut gd = g(d)?;
    while b - a > 1e-10 {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, g(mid)?);
    for endpoint in [0.0, 1.0] {
        let val = g(endpoint)?;
        if val < best.1 {
            best = (endpoint, val);
        }
    }
    Ok((best.1.exp(), best.0))
}

/// Full classification of the walk with bias `lambda`.
pub fn classify_rwre(model: &Model, lambda: f64) -> Result<ClassifierReport> {
    let (p, gamma_star) = p_lambda(model, lambda)?;
    let verdict = if (p - 1.0).abs() < CRITICAL_BAND {
        Verdict::CriticalIndeterminate
    } else if p > 1.0 {
        Verdict::Transient
    } else {
        Verdict::PositiveRecurrent
    };
    Ok(ClassifierReport {
        lambda,
        p_lambda: p,
        gamma_star,
        verdict,
        rho_circ: critical_bias(model)?,
        kappa: kappa(model, KAPPA_GAMMA_MAX)?,
    })
}

/// The bias at which the transience indicator crosses 1, by bisection; the
/// indicator is nonincreasing in the bias. Errors if it never crosses
/// inside the bracket.
pub fn critical_bias(model: &Model) -> Result<f64> {
    let curve = model.gamma_curve();
    let span = curve.rho_bar(0.0)?.max(curve.rho_bar(1.0)?) + 1.0;
    let (mut lo, mut hi) = (1e-6, span);
    if p_lambda(model, lo)?.0 <= 1.0 || p_lambda(model, hi)?.0 >= 1.0 {
        return Err(MgwError::Numeric(
            "transience indicator does not cross 1 inside the bias bracket".into(),
        ));
    }
    while hi - lo > 1e-10 * span {
        let mid = 0.5 * (lo + hi);
        if p_lambda(model, mid)?.0 >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First exponent `gamma >= 0` at which `rho_bar(gamma)` falls to
/// `rho_circ^gamma`: located on a 0.01 grid, refined by bisection to 1e-9.
/// Reports infinity when there is no crossing at or below `gamma_max`.
pub fn kappa(model: &Model, gamma_max: f64) -> Result<f64> {
    let rho_circ = critical_bias(model)?;
    let curve = model.gamma_curve();
    let f = |gamma: f64| -> Result<f64> { Ok(curve.rho_bar(gamma)? / rho_circ.powf(gamma)) };
    let step = 0.01;
    let steps = (gamma_max / step).ceil() as usize;
    let mut lo = 0.0;
    let mut bracket = None;
    for i in 1..=steps {
        let gamma = (i as f64 * step).min(gamma_max);
        if f(gamma)? <= 1.0 + CRITICAL_BAND {
            bracket = Some(gamma);
            break;
        }
        lo = gamma;
    }
    let Some(mut hi) = bracket else {
        return Ok(f64::INFINITY);
    };
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 1.0 + CRITICAL_BAND {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Summary of biased walks run on fresh environments.
#[derive(Clone, Debug, Serialize)]
pub struct RecurrenceReport {
    pub lambda: f64,
    pub t_steps: usize,
    pub walks: usize,
    /// Mean fraction of steps spent at the root.
    pub root_fraction: f64,
    /// Mean over walks of the deepest level reached.
    pub max_depth_mean: f64,
    /// Deepest level reached by any walk.
    pub max_depth_max: i32,
    /// Mean over walks of (last step at the root) / (steps taken).
    pub last_return_ratio: f64,
}

/// Runs `walks` biased walks of `t_steps` steps, each on a fresh
/// environment, and summarizes root occupation, depth reached, and the last
/// root visit. Recurrent biases keep the root fraction away from zero with
/// slowly growing depth; transient biases leave the root for good after an
/// initial stretch, so the last-return ratio shrinks as runs get longer.
pub fn recurrence_simulation_check(
    model: &Arc<Model>,
    flavor: Flavor,
    lambda: f64,
    t_steps: usize,
    walks: usize,
    seed: u64,
) -> Result<RecurrenceReport> {
    assert!(t_steps > 0 && walks > 0);
    let sd = model.spectral(flavor)?;
    let per_walk: Vec<(f64, i32, f64)> = (0..walks as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, i32, f64)> {
            let mut rng = derive_stream(seed, i);
            let root_ty = pick_root_type(&sd.left, rng.gen());
            let mut tree = Tree::new(Arc::clone(model), None, root_ty, rng.gen(), GrowthLaw::Plain);
            let traj = run_rooted_walk(&mut tree, lambda, t_steps, Record::Heights, None, &mut rng)?;
            let taken = (traj.heights.len() - 1).max(1) as f64;
            let mut visits = 0usize;
            let mut last = 0usize;
            let mut deepest = 0i32;
            for (t, &h) in traj.heights.iter().enumerate().skip(1) {
                if h == 0 {
                    visits += 1;
                    last = t;
                }
                deepest = deepest.max(h);
            }
            Ok((visits as f64 / taken, deepest, last as f64 / taken))
        })
        .collect::<Result<_>>()?;
    let n = walks as f64;
    Ok(RecurrenceReport {
        lambda,
        t_steps,
        walks,
        root_fraction: per_walk.iter().map(|w| w.0).sum::<f64>() / n,
        max_depth_mean: per_walk.iter().map(|w| f64::from(w.1)).sum::<f64>() / n,
        max_depth_max: per_walk.iter().map(|w| w.1).max().unwrap_or(0),
        last_return_ratio: per_walk.iter().map(|w| w.2).sum::<f64>() / n,
    })
}

fn pick_root_type(left: &[f64], u: f64) -> TypeId {
    let mut acc = 0.0;
    for (a, &w) in left.iter().enumerate() {
        acc += w;
        if u < acc {
            return a;
        }
    }
    left.len() - 1
}

/// Monte Carlo check of the occupation identity on a frozen tree: over
/// excursions of the biased walk from the root, the expected number of
/// visits to `target` equals `vertex_measure(target) / vertex_measure(root)`.
#[derive(Clone, Debug, Serialize)]
pub struct OccupationReport {
    pub expected: f64,
    pub observed: f64,
    pub sem: f64,
    pub excursions: usize,
    pub pass: bool,
}

/// Runs root excursions on the tree, capped at `depth_cap` so each one ends,
/// and counts visits to `target`. `pass` holds when the observed mean is
/// within `sigma` standard errors of the exact measure ratio.
pub fn occupation_check(
    tree: &mut Tree,
    target: NodeId,
    lambda: f64,
    excursions: usize,
    depth_cap: i32,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<OccupationReport> {
    assert!(excursions >= 2);
    if !tree.is_grown(target) {
        tree.grow_node(target)?;
    }
    let root = tree.root();
    if !tree.is_grown(root) {
        tree.grow_node(root)?;
    }
    let expected = vertex_measure(tree, target, lambda) / vertex_measure(tree, root, lambda);
    let mut counts = Vec::with_capacity(excursions);
    for _ in 0..excursions {
        let mut count = 0u64;
        let mut pos = root;
        loop {
            match step_rooted(tree, pos, lambda, Some(depth_cap), rng)? {
                StepOutcome::Moved(w) => pos = w,
                StepOutcome::Absorbed => {
                    return Err(MgwError::Walk(
                        "excursion walk absorbed at a childless root".into(),
                    ))
                }
            }
            if pos == root {
                break;
            }
            if pos == target {
                count += 1;
            }
        }
        counts.push(count as f64);
    }
    let (observed, sem) = mean_and_sem(&counts);
    Ok(OccupationReport {
        expected,
        observed,
        sem,
        excursions,
        pass: (observed - expected).abs() <= sigma * sem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn grown(model: Model, key: u64, depth: i32) -> Tree {
        let mut tree = Tree::new(Arc::new(model), None, 0, key, GrowthLaw::Plain);
        tree.grow_to_depth(depth).unwrap();
        tree
    }

    #[test]
    fn binary_conductance_closed_form() {
        let mut tree = grown(fixtures::binary(), 7, 9);
        for k in 1..=9 {
            let c = effective_conductance(&mut tree, k, 2.0).unwrap();
            assert_relative_eq!(c, 2.0 / k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn depth_one_conductance_is_child_weight_sum() {
        for (model, lambda) in [
            (fixtures::two_type(), 1.7),
            (fixtures::weighted_pair(), 2.3),
            (fixtures::leafy(), 1.5),
        ] {
            let model = Arc::new(model);
            for key in 0..20u64 {
                let mut tree = Tree::new(Arc::clone(&model), None, 0, key, GrowthLaw::Plain);
                let c = effective_conductance(&mut tree, 1, lambda).unwrap();
                assert_relative_eq!(
                    c,
                    tree.child_weight_sum(tree.root()),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn extinct_tree_has_zero_conductance() {
        let model = Arc::new(fixtures::leafy());
        let mut found = false;
        for key in 0..200u64 {
            let mut tree = Tree::new(Arc::clone(&model), None, 0, key, GrowthLaw::Plain);
            tree.grow_to_depth(4).unwrap();
            if (0..tree.len() as NodeId).all(|v| tree.level(v) < 4) {
                assert_eq!(effective_conductance(&mut tree, 4, 1.5).unwrap(), 0.0);
                found = true;
                break;
            }
        }
        assert!(found, "no environment extinct by depth 4 among 200 keys");
    }

    #[test]
    fn virtual_evaluation_matches_materialized() {
        for law in [GrowthLaw::Plain, GrowthLaw::Skeleton] {
            for (model, lambda) in [
                (fixtures::leafy(), 1.5),
                (fixtures::two_type(), 2.0),
                (fixtures::weighted_pair(), 2.5),
            ] {
                let model = Arc::new(model);
                let cond = Arc::new(CondTables::new(&model).unwrap());
                for key in [3u64, 11, 42] {
                    let mut tree =
                        Tree::new(Arc::clone(&model), Some(Arc::clone(&cond)), 0, key, law);
                    let direct = effective_conductance(&mut tree, 6, lambda).unwrap();
                    let virt = effective_conductance_virtual(
                        &model,
                        Some(&cond),
                        0,
                        law,
                        key,
                        6,
                        lambda,
                    )
                    .unwrap();
                    assert_eq!(direct.to_bits(), virt.to_bits());
                }
            }
        }
    }

    #[test]
    fn reversibility_matches_walk_ratios() {
        for (model, lambda) in [(fixtures::weighted_pair(), 1.3), (fixtures::two_type(), 2.0)] {
            let tree = grown(model, 5, 6);
            for v in 0..tree.len() as NodeId {
                if tree.parent(v).is_none() || tree.level(v) >= 6 {
                    continue;
                }
                let s = tree.child_weight_sum(v);
                let c_up = edge_conductance(&tree, v, lambda);
                for w in tree.children(v) {
                    let alpha = tree.node(w).weight;
                    let lhs = c_up * (alpha / (lambda + s));
                    let rhs = edge_conductance(&tree, w, lambda) * (lambda / (lambda + s));
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn level_sums_track_weight_products() {
        let model = Arc::new(fixtures::weighted_pair());
        let mut tree = Tree::new(Arc::clone(&model), None, 0, 9, GrowthLaw::Plain);
        tree.grow_to_depth(8).unwrap();
        let sums = level_conductance_sums(&tree, &model, 1.0, 8).unwrap();
        for (l, s) in sums.sums.iter().enumerate() {
            assert_relative_eq!(*s, 2.5f64.powi(l as i32), max_relative = 1e-12);
        }
        let sums = level_conductance_sums(&tree, &model, 0.7, 8).unwrap();
        for z in &sums.z {
            assert_relative_eq!(*z, 1.0, epsilon = 1e-10);
        }

        let model = Arc::new(fixtures::binary());
        let mut tree = Tree::new(Arc::clone(&model), None, 0, 4, GrowthLaw::Plain);
        tree.grow_to_depth(7).unwrap();
        let sums = level_conductance_sums(&tree, &model, 1.3, 7).unwrap();
        for (l, s) in sums.sums.iter().enumerate() {
            assert_relative_eq!(*s, 2.0f64.powi(l as i32), epsilon = 1e-12);
        }
    }

    #[test]
    fn mandelbrot_mean_matches_right_eigenvector() {
        let model = Arc::new(fixtures::weighted_mixed());
        let (mean, sem) = mandelbrot_mean(&model, 0, 1.0, 8, 4000, 77).unwrap();
        assert!(
            (mean - 1.0).abs() <= 3.5 * sem + 1e-12,
            "mean {mean}, sem {sem}"
        );

        let model = Arc::new(fixtures::weighted_pair());
        let (mean, sem) = mandelbrot_mean(&model, 0, 2.0, 6, 50, 3).unwrap();
        assert_relative_eq!(mean, 1.0, epsilon = 1e-10);
        assert!(sem < 1e-12, "deterministic environments, got sem {sem}");
    }

    #[test]
    fn classifier_weighted_pair() {
        let model = fixtures::weighted_pair();
        let rep = classify_rwre(&model, 2.0).unwrap();
        assert_relative_eq!(rep.p_lambda, 1.25, epsilon = 1e-10);
        assert_relative_eq!(rep.gamma_star, 1.0, epsilon = 1e-9);
        assert_eq!(rep.verdict, Verdict::Transient);
        assert_relative_eq!(rep.rho_circ, 2.5, epsilon = 1e-8);
        assert_relative_eq!(rep.kappa, 1.0, epsilon = 1e-8);

        let rep = classify_rwre(&model, 3.0).unwrap();
        assert_relative_eq!(rep.p_lambda, 2.5 / 3.0, epsilon = 1e-10);
        assert_eq!(rep.verdict, Verdict::PositiveRecurrent);
    }

    #[test]
    fn classifier_weighted_mixed_is_critical_at_two() {
        let model = fixtures::weighted_mixed();
        let rep = classify_rwre(&model, 2.0).unwrap();
        assert_eq!(rep.verdict, Verdict::CriticalIndeterminate);
        assert_relative_eq!(rep.rho_circ, 2.0, epsilon = 1e-8);
        assert_relative_eq!(rep.kappa, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn classifier_unit_models() {
        let model = fixtures::binary();
        let rep = classify_rwre(&model, 1.2).unwrap();
        assert_relative_eq!(rep.p_lambda, 2.0 / 1.2, epsilon = 1e-9);
        assert_eq!(rep.verdict, Verdict::Transient);

        let rep = classify_rwre(&model, 2.0).unwrap();
        assert_eq!(rep.verdict, Verdict::CriticalIndeterminate);
        assert_relative_eq!(rep.rho_circ, 2.0, epsilon = 1e-8);
        assert_relative_eq!(rep.kappa, 1.0, epsilon = 1e-8);

        let rep = classify_rwre(&model, 5.0).unwrap();
        assert_relative_eq!(rep.p_lambda, 0.4, epsilon = 1e-9);
        assert_eq!(rep.verdict, Verdict::PositiveRecurrent);

        let rep = classify_rwre(&fixtures::two_type(), 3.0).unwrap();
        assert_relative_eq!(rep.p_lambda, 2.0 / 3.0, epsilon = 1e-9);
        assert_eq!(rep.verdict, Verdict::PositiveRecurrent);
        assert_relative_eq!(rep.rho_circ, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn kappa_respects_search_ceiling() {
        assert!(kappa(&fixtures::weighted_pair(), 0.5).unwrap().is_infinite());
    }

    #[test]
    fn optimizer_matches_grid_scan() {
        for model in [
            fixtures::binary(),
            fixtures::two_type(),
            fixtures::weighted_pair(),
            fixtures::weighted_mixed(),
        ] {
            let curve = model.gamma_curve();
            let grid: Vec<f64> = (0..=10_000)
                .map(|i| curve.rho_bar(i as f64 / 10_000.0).unwrap().ln())
                .collect();
            for lambda in [1.15f64, 1.5, 2.0, 3.0] {
                let (p, _) = p_lambda(&model, lambda).unwrap();
                let best = grid
                    .iter()
                    .enumerate()
                    .map(|(i, lr)| lr - (i as f64 / 10_000.0) * lambda.ln())
                    .fold(f64::INFINITY, f64::min)
                    .exp();
                assert!(
                    (p - best).abs() <= 1e-8,
                    "optimizer {p} vs grid {best} at lambda {lambda}"
                );
            }
        }
    }

    #[test]
    fn indicator_monotone_and_bounded() {
        for model in [fixtures::weighted_pair(), fixtures::weighted_mixed()] {
            let curve = model.gamma_curve();
            let rho0 = curve.rho_bar(0.0).unwrap();
            let rho1 = curve.rho_bar(1.0).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..=30 {
                let lambda = 1.0 + 0.1 * f64::from(i);
                let (p, _) = p_lambda(&model, lambda).unwrap();
                assert!(p <= prev + 1e-12, "indicator rose at lambda {lambda}");
                assert!(p <= rho0 + 1e-12 && p <= rho1 / lambda + 1e-12);
                prev = p;
            }
        }
    }

    #[test]
    fn resistance_survey_binary_is_flat() {
        let model = fixtures::binary();
        let rep =
            resistance_growth_check(&model, Flavor::Unit, 0, &[2, 4, 8, 16], 25, 0.5, 5).unwrap();
        for m in &rep.medians {
            assert_relative_eq!(*m, 2.0, epsilon = 1e-12);
        }
        assert!(rep.p_upward > 0.05);
        for e in &rep.exceedance {
            assert_eq!(*e, 0.0);
        }
    }

    #[test]
    fn resistance_survey_leafy_has_no_upward_trend() {
        let model = fixtures::leafy();
        let rep =
            resistance_growth_check(&model, Flavor::Unit, 0, &[4, 8, 16], 150, 0.5, 6).unwrap();
        assert!(rep.p_upward > 0.05, "medians {:?}", rep.medians);
        assert!(
            rep.exceedance.iter().all(|e| *e < 0.1),
            "exceedance {:?}",
            rep.exceedance
        );
    }

    /// Deep resistance spikes get rarer as the horizon grows. This only
    /// shows beyond the saturation region: for small `k` the `k^1.5` bar
    /// sits near the largest resistance a surviving tree can produce at
    /// all, so the exceedance fraction starts at zero and first has to
    /// climb toward its tail regime.
    #[test]
    fn resistance_spikes_thin_out_at_deep_horizons() {
        let model = fixtures::leafy();
        let rep =
            resistance_growth_check(&model, Flavor::Unit, 0, &[16, 24, 32], 250, 0.5, 6).unwrap();
        assert!(
            rep.exceedance[0] > rep.exceedance[2],
            "exceedance {:?}",
            rep.exceedance
        );
        assert!(rep.p_upward > 0.05, "medians {:?}", rep.medians);
    }

    #[test]
    fn recurrent_bias_keeps_walk_near_root() {
        let model = Arc::new(fixtures::weighted_pair());
        let rep =
            recurrence_simulation_check(&model, Flavor::Weighted, 3.0, 20_000, 40, 11).unwrap();
        assert!(rep.root_fraction > 0.02, "root fraction {}", rep.root_fraction);
        assert!(rep.max_depth_mean < 100.0, "mean depth {}", rep.max_depth_mean);
        assert!(rep.max_depth_max < 200, "max depth {}", rep.max_depth_max);
    }

    #[test]
    fn transient_bias_escapes_for_good() {
        let model = Arc::new(fixtures::weighted_pair());
        let short =
            recurrence_simulation_check(&model, Flavor::Weighted, 2.0, 4_000, 50, 13).unwrap();
        let long =
            recurrence_simulation_check(&model, Flavor::Weighted, 2.0, 16_000, 50, 13).unwrap();
        assert!(long.last_return_ratio < short.last_return_ratio);
        assert!(long.last_return_ratio < 1.0);
        assert!(
            long.max_depth_mean > 2.0 * short.max_depth_mean,
            "depth should grow ballistically: {} vs {}",
            long.max_depth_mean,
            short.max_depth_mean
        );
    }

    #[test]
    fn critical_bias_walk_depth_scales_diffusively() {
        let model = Arc::new(fixtures::binary());
        let rep = recurrence_simulation_check(&model, Flavor::Unit, 2.0, 10_000, 60, 17).unwrap();
        let scaled = rep.max_depth_mean / 100.0;
        assert!(
            (0.6..=2.6).contains(&scaled),
            "max depth / sqrt(T) = {scaled}"
        );
    }

    #[test]
    fn occupation_visits_match_measure_ratio() {
        let model = Arc::new(fixtures::two_type());
        let mut tree = Tree::new(Arc::clone(&model), None, 0, 99, GrowthLaw::Plain);
        tree.grow_to_depth(4).unwrap();
        let target = (0..tree.len() as NodeId)
            .find(|&v| tree.level(v) == 3)
            .unwrap();
        let d_v = tree.child_weight_sum(target);
        let d_o = tree.child_weight_sum(tree.root());
        let mut rng = derive_stream(21, 0);
        let rep = occupation_check(&mut tree, target, 2.0, 40_000, 30, 3.5, &mut rng).unwrap();
        assert_relative_eq!(rep.expected, (2.0 + d_v) / (d_o * 8.0), max_relative = 1e-12);
        assert!(
            rep.pass,
            "observed {} vs expected {} (sem {})",
            rep.observed, rep.expected, rep.sem
        );
    }
}
