//! Harmonic coordinates for the critically biased walk: finite-horizon
//! population estimates per vertex, the mean-zero coordinate process along
//! a trajectory with its exact per-step variances, the corrector between
//! that process and the plain distance, and the limit constants eta and
//! sigma in closed form or by Monte Carlo.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::linalg;
use crate::model::{Flavor, Model, SpectralData, TypeId};
use crate::tree::{config_for, simulate_census, CondTables, GrowthLaw, NodeId, RayedTree, Tree};
use crate::walk::Trajectory;

/// Finite-horizon population estimates. Horizon h of a vertex is its
/// weighted descendant count h generations down, renormalized by rho^h and
/// the right eigenvector; horizon 0 is the right-eigenvector entry itself.
/// Values at materialized vertices are cached; anything lazy is evaluated
/// virtually from its key, so no tree growth ever happens here. One
/// instance must stay with one tree: the cache is keyed by vertex id.
pub struct WCalc {
    pub m: u32,
    model: Arc<Model>,
    cond: Option<Arc<CondTables>>,
    spectral: Arc<SpectralData>,
    cache: HashMap<(NodeId, u32), f64>,
}

impl WCalc {
    pub fn new(
        model: Arc<Model>,
        cond: Option<Arc<CondTables>>,
        spectral: Arc<SpectralData>,
        m: u32,
    ) -> WCalc {
        WCalc {
            m,
            model,
            cond,
            spectral,
            cache: HashMap::new(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.spectral.rho
    }

    /// Estimate at a vertex of a rooted tree, descending through arena
    /// children where they exist and through derived keys where they do
    /// not. Must not be called on a ray vertex; use `w_rayed` there.
    pub fn w_rooted(&mut self, tree: &Tree, v: NodeId, h: u32) -> Result<f64> {
        if h == 0 {
            return Ok(self.spectral.right[tree.ty(v)]);
        }
        if let Some(&x) = self.cache.get(&(v, h)) {
            return Ok(x);
        }
        let x = if tree.is_grown(v) {
            let mut acc = 0.0;
            for w in tree.children(v) {
                acc += tree.node(w).weight * self.w_rooted(tree, w, h - 1)?;
            }
            acc / self.spectral.rho
        } else {
            let node = tree.node(v);
            self.w_virtual(node.ty as TypeId, node.law(), node.key, h)?
        };
        self.cache.insert((v, h), x);
        Ok(x)
    }

    /// Estimate from a (type, law, key) triple alone: reproduces exactly
    /// what materializing the subtree would yield, because configurations
    /// are pure functions of their keys.
    pub fn w_virtual(&self, ty: TypeId, law: GrowthLaw, key: u64, h: u32) -> Result<f64> {
        if h == 0 {
            return Ok(self.spectral.right[ty]);
        }
        let config = config_for(&self.model, self.cond.as_deref(), ty, law, key)?;
        let mut acc = 0.0;
        for (j, c) in config.iter().enumerate() {
            acc += c.weight * self.w_virtual(c.ty, c.law, crate::rng::child_key(key, j as u32), h - 1)?;
        }
        Ok(acc / self.spectral.rho)
    }

    /// Estimate on a rayed tree: for a ray vertex the descendants in the
    /// increasing-height direction are its off-ray children plus the
    /// previous ray vertex; everything off the ray is plain.
    pub fn w_rayed(&mut self, rt: &RayedTree, v: NodeId, h: u32) -> Result<f64> {
        match rt.ray_index(v) {
            None | Some(0) => self.w_rooted(&rt.tree, v, h),
            Some(_) => {
                if h == 0 {
                    return Ok(self.spectral.right[rt.tree.ty(v)]);
                }
                if let Some(&x) = self.cache.get(&(v, h)) {
                    return Ok(x);
                }
                let (kids, ray_child) = rt.upward_neighbors(v);
                let mut acc = 0.0;
                for w in kids {
                    acc += rt.tree.node(w).weight * self.w_rooted(&rt.tree, w, h - 1)?;
                }
                if let Some(rc) = ray_child {
                    acc += rt.tree.node(rc).weight * self.w_rayed(rt, rc, h - 1)?;
                }
                let x = acc / self.spectral.rho;
                self.cache.insert((v, h), x);
                Ok(x)
            }
        }
    }
}

/// Coordinate of a vertex in a rooted tree: the sum of horizon-m estimates
/// at every vertex on the root-to-v path except the root.
pub fn s_rooted(calc: &mut WCalc, tree: &Tree, v: NodeId) -> Result<f64> {
    let m = calc.m;
    let mut acc = 0.0;
    let mut u = v;
    while let Some(p) = tree.parent(u) {
        acc += calc.w_rooted(tree, u, m)?;
        u = p;
    }
    Ok(acc)
}

/// Coordinate of a vertex in a rayed tree, anchored at zero on the origin:
/// climbing into a bush adds the estimate of each vertex entered, moving
/// down the ray subtracts the estimate of each ray vertex left behind.
pub fn s_rayed(calc: &mut WCalc, rt: &RayedTree, v: NodeId) -> Result<f64> {
    let m = calc.m;
    let mut acc = 0.0;
    let mut u = v;
    while rt.ray_index(u).is_none() {
        acc += calc.w_rayed(rt, u, m)?;
        u = rt.tree.node(u).parent;
    }
    let anchor = rt.ray_index(u).expect("climb ends on the ray");
    for j in 0..anchor {
        acc -= calc.w_rayed(rt, rt.ray_vertex(j), m)?;
    }
    Ok(acc)
}

/// The coordinate process along a trajectory together with its per-step
/// conditional variances.
#[derive(Clone, Debug)]
pub struct MartingaleSeries {
    /// Coordinate after 0, 1, ... steps, started at zero. Every crossing
    /// of an edge adds or removes the horizon-m estimate of the endpoint
    /// farther from the root (rooted) or of greater height (rayed).
    pub m_series: Vec<f64>,
    /// Exact conditional variance of the step taken from each position,
    /// pairing horizon m at the vertex against horizon m-1 at its upward
    /// neighbors so the one-step mean vanishes identically at lambda = rho.
    pub phi: Vec<f64>,
    /// Mean of `phi`: the quadratic-variation density of the run.
    pub v_mean: f64,
}

/// Builds the coordinate process for a rooted trajectory.
pub fn martingale_series_rooted(
    calc: &mut WCalc,
    tree: &Tree,
    traj: &Trajectory,
) -> Result<MartingaleSeries> {
    let verts = traj.require_vertices()?;
    let m = calc.m;
    let lambda = traj.lambda;
    let steps = verts.len() - 1;
    let mut m_series = Vec::with_capacity(steps + 1);
    m_series.push(0.0);
    let mut phi = Vec::with_capacity(steps);
    let mut cur = 0.0;
    for t in 0..steps {
        let from = verts[t];
        let to = verts[t + 1];
        phi.push(phi_rooted(calc, tree, from, lambda)?);
        if tree.level(to) > tree.level(from) {
            cur += calc.w_rooted(tree, to, m)?;
        } else {
            cur -= calc.w_rooted(tree, from, m)?;
        }
        m_series.push(cur);
    }
    let v_mean = if phi.is_empty() {
        0.0
    } else {
        phi.iter().sum::<f64>() / phi.len() as f64
    };
    Ok(MartingaleSeries {
        m_series,
        phi,
        v_mean,
    })
}

/// Builds the coordinate process for a rayed trajectory.
pub fn martingale_series_rayed(
    calc: &mut WCalc,
    rt: &RayedTree,
    traj: &Trajectory,
) -> Result<MartingaleSeries> {
    let verts = traj.require_vertices()?;
    let m = calc.m;
    let lambda = traj.lambda;
    let steps = verts.len() - 1;
    let mut m_series = Vec::with_capacity(steps + 1);
    m_series.push(0.0);
    let mut phi = Vec::with_capacity(steps);
    let mut cur = 0.0;
    for t in 0..steps {
        let from = verts[t];
        let to = verts[t + 1];
        phi.push(phi_rayed(calc, rt, from, lambda)?);
        if rt.height(to) > rt.height(from) {
            cur += calc.w_rayed(rt, to, m)?;
        } else {
            cur -= calc.w_rayed(rt, from, m)?;
        }
        m_series.push(cur);
    }
    let v_mean = if phi.is_empty() {
        0.0
    } else {
        phi.iter().sum::<f64>() / phi.len() as f64
    };
    Ok(MartingaleSeries {
        m_series,
        phi,
        v_mean,
    })
}

/// Exact second moment of the coordinate increment from `v` on a rooted
/// tree: horizon m at `v` with weight lambda downward, horizon m-1 at
/// each child upward. At the root the downward term is absent.
fn phi_rooted(calc: &mut WCalc, tree: &Tree, v: NodeId, lambda: f64) -> Result<f64> {
    let m = calc.m;
    let mut up_sq = 0.0;
    let mut s = 0.0;
    for w in tree.children(v) {
        let alpha = tree.node(w).weight;
        let val = calc.w_rooted(tree, w, m.saturating_sub(1))?;
        up_sq += alpha * val * val;
        s += alpha;
    }
    if tree.parent(v).is_none() {
        if s == 0.0 {
            return Ok(0.0);
        }
        return Ok(up_sq / s);
    }
    let down = calc.w_rooted(tree, v, m)?;
    Ok((lambda * down * down + up_sq) / (lambda + s))
}

/// Exact second moment of the coordinate increment from `v` on a rayed
/// tree; the previous ray vertex counts among the upward neighbors and
/// there is no boundary case.
fn phi_rayed(calc: &mut WCalc, rt: &RayedTree, v: NodeId, lambda: f64) -> Result<f64> {
    let m = calc.m;
    let (kids, ray_child) = rt.upward_neighbors(v);
    let mut up_sq = 0.0;
    let mut s = 0.0;
    for w in kids {
        let alpha = rt.tree.node(w).weight;
        let val = calc.w_rooted(&rt.tree, w, m.saturating_sub(1))?;
        up_sq += alpha * val * val;
        s += alpha;
    }
    if let Some(rc) = ray_child {
        let alpha = rt.tree.node(rc).weight;
        let val = calc.w_rayed(rt, rc, m.saturating_sub(1))?;
        up_sq += alpha * val * val;
        s += alpha;
    }
    let down = calc.w_rayed(rt, v, m)?;
    Ok((lambda * down * down + up_sq) / (lambda + s))
}

/// Difference between the rescaled coordinate process and the recorded
/// distance: eps_t = M_t / eta - (height_t - height_0).
pub fn corrector_series(m_series: &[f64], heights: &[i32], eta: f64) -> Vec<f64> {
    let h0 = heights[0];
    m_series
        .iter()
        .zip(heights)
        .map(|(m, h)| m / eta - (h - h0) as f64)
        .collect()
}

/// max_t |eps_t| / sqrt(n) over a corrector series of n steps.
pub fn corrector_max_ratio(eps: &[f64]) -> f64 {
    let max = eps.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    max / ((eps.len() - 1).max(1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Limit constants
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Clone, Debug)]
pub struct McParams {
    /// Generation at which the normalized population is read off.
    pub depth: usize,
    pub replicas: usize,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            depth: 14,
            replicas: 4_000,
        }
    }
}

/// The limit constants of the critically biased walk.
#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    /// Time-change density: mean squared population limit over the mean
    /// right-eigenvector entry under the canonical root mixture.
    pub eta: f64,
    /// Diffusivity of the rescaled distance process.
    pub sigma: f64,
    pub sigma_sq: f64,
    /// Second moment of the population limit under the canonical mixture.
    pub w2_mean: f64,
    /// Mean right-eigenvector entry under the canonical mixture.
    pub mean_r: f64,
    /// Per-type second moments of the population limit.
    pub m2: Vec<f64>,
    /// "closed-form" or "monte-carlo" (with "-fallback" when the linear
    /// system was singular).
    pub method: String,
    /// Half-width of a 95% interval on `w2_mean` for the Monte Carlo path.
    pub ci_half_width: Option<f64>,
}

/// Estimates eta and sigma. The closed form solves the linear system for
/// the per-type second moments of the population limit; if that system is
/// singular (the second-moment matrix reaches the criticality boundary)
/// the estimator falls back to Monte Carlo.
pub fn estimate_eta_sigma(
    model: &Model,
    flavor: Flavor,
    method: MomentMethod,
    params: &McParams,
    rng: &mut impl Rng,
) -> Result<MomentReport> {
    let sd = model.spectral(flavor)?;
    match method {
        MomentMethod::ClosedForm => match m2_closed_form(model, flavor, &sd) {
            Some(m2) => Ok(report_from_m2(&sd, m2, "closed-form".into(), None)),
            None => {
                let (m2, ci) = m2_monte_carlo(model, flavor, &sd, params, rng)?;
                Ok(report_from_m2(
                    &sd,
                    m2,
                    "monte-carlo-fallback".into(),
                    Some(ci),
                ))
            }
        },
        MomentMethod::MonteCarlo => {
            let (m2, ci) = m2_monte_carlo(model, flavor, &sd, params, rng)?;
            Ok(report_from_m2(&sd, m2, "monte-carlo".into(), Some(ci)))
        }
    }
}

fn report_from_m2(
    sd: &SpectralData,
    m2: Vec<f64>,
    method: String,
    ci_half_width: Option<f64>,
) -> MomentReport {
    let w2_mean = linalg::dot(&sd.left, &m2);
    let mean_r = linalg::dot(&sd.left, &sd.right);
    let eta = w2_mean / mean_r;
    let sigma_sq = mean_r * mean_r / w2_mean;
    MomentReport {
        eta,
        sigma: sigma_sq.sqrt(),
        sigma_sq,
        w2_mean,
        mean_r,
        m2,
        method,
        ci_half_width,
    }
}

/// Per-type second moments of the population limit by solving
/// (rho^2 I - A2) m2 = c, where A2 is the mean matrix with squared edge
/// weights and c_a is the variance contribution of one generation:
/// E[(sum_j alpha_j r(x_j))^2] - (A2 r^2)_a under the type-a offspring law.
fn m2_closed_form(model: &Model, flavor: Flavor, sd: &SpectralData) -> Option<Vec<f64>> {
    let q = model.type_count();
    let gamma = flavor.gamma();
    let a2 = model.mean_matrix(2.0 * gamma);
    let r_sq: Vec<f64> = sd.right.iter().map(|r| r * r).collect();
    let a2_rsq = linalg::mat_vec(&a2, &r_sq);
    let mut c = vec![0.0; q];
    for a in 0..q {
        let mut second = 0.0;
        for atom in &model.laws[a].atoms {
            let inner: f64 = atom
                .children
                .iter()
                .map(|ch| ch.weight.powf(gamma) * sd.right[ch.ty])
                .sum();
            second += atom.p * inner * inner;
        }
        c[a] = second - a2_rsq[a];
    }
    let mut lhs = a2;
    for (i, row) in lhs.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { sd.rho * sd.rho - *x } else { -*x };
        }
    }
    let m2 = linalg::solve(&lhs, &c)?;
    // A singular-adjacent system can produce garbage; accept only moments
    // at least as large as the squared means they dominate.
    if m2
        .iter()
        .zip(&sd.right)
        .any(|(m, r)| !m.is_finite() || *m < r * r - 1e-9)
    {
        return None;
    }
    Some(m2)
}

/// Monte Carlo per-type second moments of the normalized population at a
/// finite depth, with a 95% half-width on the canonical mixture's mean.
fn m2_monte_carlo(
    model: &Model,
    flavor: Flavor,
    sd: &SpectralData,
    params: &McParams,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)> {
    let q = model.type_count();
    let mut m2 = vec![0.0; q];
    let mut pooled_var = 0.0;
    for a in 0..q {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..params.replicas {
            let z = match flavor {
                Flavor::Unit => {
                    let census = simulate_census(model, a, params.depth, rng);
                    let end = &census[params.depth];
                    let num: f64 = end
                        .iter()
                        .enumerate()
                        .map(|(b, n)| *n as f64 * sd.right[b])
                        .sum();
                    num / sd.rho.powi(params.depth as i32)
                }
                Flavor::Weighted => weighted_population(model, a, params.depth, sd, rng)?,
            };
            let zsq = z * z;
            sum += zsq;
            sumsq += zsq * zsq;
        }
        let n = params.replicas as f64;
        m2[a] = sum / n;
        let var = (sumsq / n - m2[a] * m2[a]).max(0.0) / n;
        pooled_var += sd.left[a] * sd.left[a] * var;
    }
    Ok((m2, 1.96 * pooled_var.sqrt()))
}

/// Weighted-flavor normalized population at `depth`: sum over the level of
/// the path weight products times right entries, over rho^depth.
fn weighted_population(
    model: &Model,
    a: TypeId,
    depth: usize,
    sd: &SpectralData,
    rng: &mut impl Rng,
) -> Result<f64> {
    let model = Arc::new(model.clone());
    let mut tree = Tree::new(model, None, a, rng.gen(), GrowthLaw::Plain);
    tree.grow_to_depth(depth as i32)?;
    let mut prod: HashMap<NodeId, f64> = HashMap::new();
    prod.insert(tree.root(), 1.0);
    let mut acc = 0.0;
    let mut v: NodeId = 0;
    while (v as usize) < tree.len() {
        let level = tree.level(v);
        let p = match tree.parent(v) {
            Some(par) => prod[&par] * tree.node(v).weight,
            None => 1.0,
        };
        prod.insert(v, p);
        if level == depth as i32 {
            acc += p * sd.right[tree.ty(v)];
        }
        v += 1;
    }
    Ok(acc / sd.rho.powi(depth as i32))
}
