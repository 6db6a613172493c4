//! Nearest-neighbor biased walks on the sampled trees: discrete and
//! continuous-time runs, excursion decomposition of rooted trajectories,
//! and the shifted coupling that replays deep rooted excursions inside a
//! rayed tree.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{MgwError, Result};
use crate::model::{Model, TypeId};
use crate::rng::derive_stream;
use crate::sampler::{RootLaw, Sampler};
use crate::tree::{ChildSpec, GrowthLaw, NodeId, RayedTree, Tree};

/// What a walk run records beyond the height series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    Heights,
    Vertices,
}

/// Outcome of one rooted step; a childless root absorbs the walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Moved(NodeId),
    Absorbed,
}

/// A recorded walk. `heights` holds the depth (rooted walks) or height
/// (rayed walks) after 0, 1, 2, ... steps; a trajectory shorter than
/// requested means the walk was absorbed at a childless root.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub lambda: f64,
    pub heights: Vec<i32>,
    pub vertices: Option<Vec<NodeId>>,
    pub jump_times: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.heights.len() - 1
    }

    pub fn require_vertices(&self) -> Result<&[NodeId]> {
        self.vertices
            .as_deref()
            .ok_or_else(|| MgwError::Walk("trajectory was recorded without vertices".into()))
    }
}

fn pick_child(tree: &Tree, kids: std::ops::Range<NodeId>, mut u: f64) -> NodeId {
    let mut last = kids.start;
    for w in kids {
        last = w;
        u -= tree.node(w).weight;
        if u < 0.0 {
            return w;
        }
    }
    last
}

/// One step of the biased walk on a rooted tree: the parent carries weight
/// `lambda` against the total child weight (child count in the unit
/// flavor), the root moves to a child with probability proportional to its
/// edge weight, and a vertex at `depth_cap` is treated as a leaf.
pub fn step_rooted(
    tree: &mut Tree,
    v: NodeId,
    lambda: f64,
    depth_cap: Option<i32>,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let capped = depth_cap.is_some_and(|c| tree.level(v) >= c);
    if !capped && !tree.is_grown(v) {
        tree.grow_node(v)?;
    }
    let s = if capped { 0.0 } else { tree.child_weight_sum(v) };
    if v == tree.root() {
        if s <= 0.0 {
            return Ok(StepOutcome::Absorbed);
        }
        let u = rng.gen::<f64>() * s;
        return Ok(StepOutcome::Moved(pick_child(tree, tree.children(v), u)));
    }
    let u = rng.gen::<f64>() * (lambda + s);
    if u < lambda {
        Ok(StepOutcome::Moved(tree.parent(v).expect("non-root vertex")))
    } else {
        Ok(StepOutcome::Moved(pick_child(
            tree,
            tree.children(v),
            u - lambda,
        )))
    }
}

/// One step of the biased walk on a rayed tree: the walk never reflects;
/// moving down from a ray vertex continues along the ray (extending it on
/// demand), and for a ray vertex the previous ray vertex counts among the
/// upward neighbors with its edge weight.
pub fn step_rayed(
    rt: &mut RayedTree,
    v: NodeId,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    if !rt.tree.is_grown(v) {
        rt.tree.grow_node(v)?;
    }
    let (kids, ray_child) = rt.upward_neighbors(v);
    let mut s = rt.tree.child_weight_sum(v);
    if let Some(rc) = ray_child {
        s += rt.tree.node(rc).weight;
    }
    let u = rng.gen::<f64>() * (lambda + s);
    if u < lambda {
        return rt.downward_neighbor(v);
    }
    let mut u = u - lambda;
    if let Some(rc) = ray_child {
        let w = rt.tree.node(rc).weight;
        if u < w {
            return Ok(rc);
        }
        u -= w;
    }
    Ok(pick_child(&rt.tree, kids, u))
}

/// Jump rate of the continuous-time embedding at `v`: total neighbor
/// weight, i.e. lambda plus the child weights, with no lambda term at a
/// rooted root. Zero means absorption.
fn rooted_rate(tree: &mut Tree, v: NodeId, lambda: f64, depth_cap: Option<i32>) -> Result<f64> {
    let capped = depth_cap.is_some_and(|c| tree.level(v) >= c);
    if !capped && !tree.is_grown(v) {
        tree.grow_node(v)?;
    }
    let s = if capped { 0.0 } else { tree.child_weight_sum(v) };
    if v == tree.root() {
        Ok(s)
    } else {
        Ok(lambda + s)
    }
}

fn rayed_rate(rt: &mut RayedTree, v: NodeId, lambda: f64) -> Result<f64> {
    if !rt.tree.is_grown(v) {
        rt.tree.grow_node(v)?;
    }
    let (_, ray_child) = rt.upward_neighbors(v);
    let mut s = rt.tree.child_weight_sum(v);
    if let Some(rc) = ray_child {
        s += rt.tree.node(rc).weight;
    }
    Ok(lambda + s)
}

/// Runs the biased walk from the root for `steps` steps.
pub fn run_rooted_walk(
    tree: &mut Tree,
    lambda: f64,
    steps: usize,
    record: Record,
    depth_cap: Option<i32>,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut pos = tree.root();
    let mut heights = Vec::with_capacity(steps + 1);
    let mut vertices = (record == Record::Vertices).then(|| Vec::with_capacity(steps + 1));
    heights.push(tree.level(pos));
    if let Some(vs) = vertices.as_mut() {
        vs.push(pos);
    }
    for _ in 0..steps {
        match step_rooted(tree, pos, lambda, depth_cap, rng)? {
            StepOutcome::Moved(w) => pos = w,
            StepOutcome::Absorbed => break,
        }
        heights.push(tree.level(pos));
        if let Some(vs) = vertices.as_mut() {
            vs.push(pos);
        }
    }
    Ok(Trajectory {
        lambda,
        heights,
        vertices,
        jump_times: None,
    })
}

/// Runs the biased walk on a rayed tree from the origin for `steps` steps.
pub fn run_rayed_walk(
    rt: &mut RayedTree,
    lambda: f64,
    steps: usize,
    record: Record,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut pos = rt.ray_vertex(0);
    let mut heights = Vec::with_capacity(steps + 1);
    let mut vertices = (record == Record::Vertices).then(|| Vec::with_capacity(steps + 1));
    heights.push(rt.height(pos));
    if let Some(vs) = vertices.as_mut() {
        vs.push(pos);
    }
    for _ in 0..steps {
        pos = step_rayed(rt, pos, lambda, rng)?;
        heights.push(rt.height(pos));
        if let Some(vs) = vertices.as_mut() {
            vs.push(pos);
        }
    }
    Ok(Trajectory {
        lambda,
        heights,
        vertices,
        jump_times: None,
    })
}

/// Continuous-time rooted walk: exponential holding time at rate equal to
/// the total neighbor weight before each jump of the discrete chain.
pub fn run_rooted_walk_cts(
    tree: &mut Tree,
    lambda: f64,
    steps: usize,
    record: Record,
    depth_cap: Option<i32>,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut pos = tree.root();
    let mut heights = vec![tree.level(pos)];
    let mut vertices = (record == Record::Vertices).then(|| vec![pos]);
    let mut jump_times = vec![0.0];
    let mut t = 0.0;
    for _ in 0..steps {
        let rate = rooted_rate(tree, pos, lambda, depth_cap)?;
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate)
            .map_err(|e| MgwError::Walk(format!("bad jump rate: {e}")))?
            .sample(rng);
        match step_rooted(tree, pos, lambda, depth_cap, rng)? {
            StepOutcome::Moved(w) => pos = w,
            StepOutcome::Absorbed => break,
        }
        heights.push(tree.level(pos));
        if let Some(vs) = vertices.as_mut() {
            vs.push(pos);
        }
        jump_times.push(t);
    }
    Ok(Trajectory {
        lambda,
        heights,
        vertices,
        jump_times: Some(jump_times),
    })
}

/// Continuous-time rayed walk.
pub fn run_rayed_walk_cts(
    rt: &mut RayedTree,
    lambda: f64,
    steps: usize,
    record: Record,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut pos = rt.ray_vertex(0);
    let mut heights = vec![rt.height(pos)];
    let mut vertices = (record == Record::Vertices).then(|| vec![pos]);
    let mut jump_times = vec![0.0];
    let mut t = 0.0;
    for _ in 0..steps {
        let rate = rayed_rate(rt, pos, lambda)?;
        t += Exp::new(rate)
            .map_err(|e| MgwError::Walk(format!("bad jump rate: {e}")))?
            .sample(rng);
        pos = step_rayed(rt, pos, lambda, rng)?;
        heights.push(rt.height(pos));
        if let Some(vs) = vertices.as_mut() {
            vs.push(pos);
        }
        jump_times.push(t);
    }
    Ok(Trajectory {
        lambda,
        heights,
        vertices,
        jump_times: Some(jump_times),
    })
}

// ---------------------------------------------------------------------------
// Excursion decomposition
// ---------------------------------------------------------------------------

/// Depth cutoff for the excursion decomposition at time horizon `n`.
pub fn ell(n: usize) -> usize {
    4 * ((1.0 + n as f64).ln().powf(1.5).floor() as usize)
}

/// A closed excursion: the walk arrives at a fresh vertex at trajectory
/// index `start` and first stands on that vertex's parent at index `end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Excursion {
    pub start: usize,
    pub end: usize,
    pub vertex: NodeId,
}

#[derive(Clone, Debug)]
pub struct ExcursionDecomposition {
    pub ell: usize,
    pub excursions: Vec<Excursion>,
}

/// Scans a rooted trajectory for the closed deep excursions anchored at
/// type `a0`: a segment opens at the first visit of an `a0` vertex deeper
/// than `ell(n)/2` (outside any open segment) and closes when the walk
/// first returns to that vertex's parent. A segment still open at the end
/// of the trajectory is dropped.
pub fn excursion_decompose(
    traj: &Trajectory,
    tree: &Tree,
    n: usize,
    a0: TypeId,
) -> Result<ExcursionDecomposition> {
    let verts = traj.require_vertices()?;
    let l = ell(n);
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut excursions = Vec::new();
    let mut t = 0;
    while t < verts.len() {
        let v = verts[t];
        let fresh = seen.insert(v);
        if fresh && tree.ty(v) == a0 && 2 * tree.level(v).max(0) as usize > l {
            let parent = tree.parent(v).expect("deep vertex has a parent");
            if let Some(end) = (t + 1..verts.len()).find(|&u| verts[u] == parent) {
                for w in &verts[t..end] {
                    seen.insert(*w);
                }
                excursions.push(Excursion {
                    start: t,
                    end,
                    vertex: v,
                });
                t = end;
                continue;
            }
            break;
        }
        t += 1;
    }
    Ok(ExcursionDecomposition { ell: l, excursions })
}

// ---------------------------------------------------------------------------
// Shifted coupling
// ---------------------------------------------------------------------------

/// A coupled pair of runs: the rooted machine's trajectory, the rayed
/// walk built from it, and bookkeeping about the replayed segments.
pub struct CoupledPair {
    pub x: Trajectory,
    pub y: Trajectory,
    pub y_tree: RayedTree,
    /// Excursion segments replayed on the rayed side.
    pub matched: usize,
    /// Whether depth increments and ray-distance increments agreed
    /// move-for-move during every replayed segment.
    pub increments_equal: bool,
    /// Fresh rooted runs drawn after the excursion supply ran out.
    pub restarts: usize,
}

/// A self-contained rooted run at lambda = rho with recorded vertices,
/// reproducible from (seed, stream) alone.
pub fn x_machine_run(
    model: &Arc<Model>,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<(Tree, Trajectory)> {
    let sampler = Sampler::new(model.clone())?;
    let mut rng = derive_stream(seed, stream);
    let mut tree = sampler.sample_mgw(RootLaw::Canonical, 0, &mut rng)?;
    let lambda = sampler.spectral.rho;
    let traj = run_rooted_walk(&mut tree, lambda, steps, Record::Vertices, None, &mut rng)?;
    Ok((tree, traj))
}

/// Runs the rayed walk for `steps` steps, but every arrival at a fresh
/// vertex of type `a0` deeper than `ell(n)/2` into its bush replays the
/// next closed deep excursion of an independent rooted run instead of
/// stepping natively: the rooted moves are copied slot for slot onto the
/// rayed tree, carrying the rooted configurations with them. When the
/// rooted run has no excursions left, a fresh one is drawn.
pub fn shifted_coupling(
    model: &Arc<Model>,
    n: usize,
    steps: usize,
    a0: TypeId,
    seed: u64,
) -> Result<CoupledPair> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = sampler.spectral.rho;
    let l = ell(n);

    let (mut sup_tree, mut sup_traj) = x_machine_run(model, steps, seed, 0)?;
    let x_out = sup_traj.clone();
    let mut queue: VecDeque<Excursion> =
        excursion_decompose(&sup_traj, &sup_tree, n, a0)?.excursions.into();
    let mut restarts = 0usize;

    let mut rng_tree = derive_stream(seed, 1);
    let mut y_tree = sampler.sample_imgw0(RootLaw::Stationary, 0, 0, &mut rng_tree)?;
    let mut rng_walk = derive_stream(seed, 2);

    let mut pos = y_tree.ray_vertex(0);
    let mut heights = vec![y_tree.height(pos)];
    let mut vertices = vec![pos];
    let mut visited: HashSet<NodeId> = HashSet::new();
    let mut matched = 0usize;
    let mut increments_equal = true;
    let mut t = 0usize;

    while t < steps {
        let fresh = visited.insert(pos);
        let deep = 2 * y_tree.dist_to_ray(pos) as usize > l;
        if fresh && deep && y_tree.tree.ty(pos) == a0 {
            while queue.is_empty() {
                restarts += 1;
                if restarts > 64 {
                    return Err(MgwError::Walk(
                        "excursion supply stayed empty after 64 fresh runs".into(),
                    ));
                }
                let (nt, nj) = x_machine_run(model, steps, seed, 16 + restarts as u64)?;
                queue = excursion_decompose(&nj, &nt, n, a0)?.excursions.into();
                sup_tree = nt;
                sup_traj = nj;
            }
            let exc = queue.pop_front().expect("non-empty queue");
            let x_verts = sup_traj.require_vertices()?;
            for u in exc.start..exc.end {
                if t >= steps {
                    break;
                }
                let from = x_verts[u];
                let to = x_verts[u + 1];
                let dist_before = y_tree.dist_to_ray(pos) as i32;
                let next = if sup_tree.parent(from) == Some(to) {
                    y_tree.tree.node(pos).parent
                } else {
                    if !y_tree.tree.is_grown(pos) {
                        let spec: Vec<ChildSpec> = sup_tree
                            .children(from)
                            .map(|w| ChildSpec {
                                ty: sup_tree.ty(w),
                                weight: sup_tree.node(w).weight,
                                law: GrowthLaw::Plain,
                            })
                            .collect();
                        y_tree.tree.grow_node_with(pos, &spec)?;
                    }
                    let slot = to - sup_tree.children(from).start;
                    y_tree.tree.children(pos).start + slot
                };
                let dx = sup_tree.level(to) - sup_tree.level(from);
                let dy = y_tree.dist_to_ray(next) as i32 - dist_before;
                if dx != dy {
                    increments_equal = false;
                }
                pos = next;
                visited.insert(pos);
                heights.push(y_tree.height(pos));
                vertices.push(pos);
                t += 1;
            }
            matched += 1;
            continue;
        }
        pos = step_rayed(&mut y_tree, pos, lambda, &mut rng_walk)?;
        heights.push(y_tree.height(pos));
        vertices.push(pos);
        t += 1;
    }

    Ok(CoupledPair {
        x: x_out,
        y: Trajectory {
            lambda,
            heights,
            vertices: Some(vertices),
            jump_times: None,
        },
        y_tree,
        matched,
        increments_equal,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::stats::chi_square_gof;

    fn sampler_for(model: Model) -> Sampler {
        Sampler::new(Arc::new(model)).unwrap()
    }

    #[test]
    fn rooted_step_frequencies_binary() {
        // Depth-1 vertex of the binary tree at lambda = 2: parent with
        // probability 1/2, each child with 1/4.
        let s = sampler_for(fixtures::binary());
        let mut rng = derive_stream(21, 0);
        let mut tree = s.sample_mgw(RootLaw::Fixed(0), 2, &mut rng).unwrap();
        let v = tree.children(tree.root()).start;
        let parent = tree.root();
        let kids: Vec<NodeId> = tree.children(v).collect();
        let mut counts = [0u64; 3];
        let n = 30_000;
        for _ in 0..n {
            match step_rooted(&mut tree, v, 2.0, None, &mut rng).unwrap() {
                StepOutcome::Moved(w) if w == parent => counts[0] += 1,
                StepOutcome::Moved(w) if w == kids[0] => counts[1] += 1,
                StepOutcome::Moved(w) if w == kids[1] => counts[2] += 1,
                other => panic!("unexpected move {other:?}"),
            }
        }
        let report = chi_square_gof(&counts, &[0.5, 0.25, 0.25]);
        assert!(report.p_value > 0.001, "step law p {}", report.p_value);
    }

    #[test]
    fn weighted_step_frequencies() {
        // The weighted pair model at lambda = 1: from a depth-1 vertex the
        // parent has weight 1 against child weights 2 and 1/2.
        let s = sampler_for(fixtures::weighted_pair());
        let mut rng = derive_stream(22, 0);
        let mut tree = s.sample_mgw(RootLaw::Fixed(0), 2, &mut rng).unwrap();
        let v = tree.children(tree.root()).start; // the weight-2 child
        assert_eq!(tree.node(v).weight, 2.0);
        let kids: Vec<NodeId> = tree.children(v).collect();
        let mut counts = [0u64; 3];
        let n = 35_000;
        for _ in 0..n {
            match step_rooted(&mut tree, v, 1.0, None, &mut rng).unwrap() {
                StepOutcome::Moved(w) if w == tree.root() => counts[0] += 1,
                StepOutcome::Moved(w) if w == kids[0] => counts[1] += 1,
                StepOutcome::Moved(w) if w == kids[1] => counts[2] += 1,
                other => panic!("unexpected move {other:?}"),
            }
        }
        let report = chi_square_gof(&counts, &[2.0 / 7.0, 4.0 / 7.0, 1.0 / 7.0]);
        assert!(report.p_value > 0.001, "weighted step law p {}", report.p_value);
        // Root step: children drawn by weight alone.
        let root = tree.root();
        let mut heavy = 0u64;
        for _ in 0..n {
            if let StepOutcome::Moved(w) = step_rooted(&mut tree, root, 1.0, None, &mut rng).unwrap() {
                if w == v {
                    heavy += 1;
                }
            }
        }
        let freq = heavy as f64 / n as f64;
        let sigma = (0.8 * 0.2 / n as f64).sqrt();
        assert!((freq - 0.8).abs() < 3.5 * sigma, "root heavy-child freq {freq}");
    }

    #[test]
    fn leaf_always_returns_to_parent() {
        let s = sampler_for(fixtures::leafy());
        let mut rng = derive_stream(23, 0);
        // Find a tree with a leaf below the root.
        loop {
            let mut tree = s.sample_mgw(RootLaw::Fixed(0), 2, &mut rng).unwrap();
            let leaf = tree
                .children(tree.root())
                .find(|&w| tree.is_grown(w) && tree.n_children(w) == 0);
            if let Some(leaf) = leaf {
                for _ in 0..10 {
                    let out = step_rooted(&mut tree, leaf, 1.5, None, &mut rng).unwrap();
                    assert_eq!(out, StepOutcome::Moved(tree.root()));
                }
                return;
            }
        }
    }

    #[test]
    fn depth_cap_acts_as_leaf() {
        let s = sampler_for(fixtures::binary());
        let mut rng = derive_stream(24, 0);
        let mut tree = s.sample_mgw(RootLaw::Fixed(0), 3, &mut rng).unwrap();
        let v = tree.children(tree.root()).start;
        for _ in 0..10 {
            let out = step_rooted(&mut tree, v, 2.0, Some(1), &mut rng).unwrap();
            assert_eq!(out, StepOutcome::Moved(tree.root()));
        }
    }

    #[test]
    fn rayed_step_frequencies_binary() {
        // Ray vertex v_1 of the binary rayed tree at lambda = 2: one step
        // down the ray with probability 1/2, to the origin with 1/4, to the
        // off-ray child with 1/4.
        let s = sampler_for(fixtures::binary());
        let mut rng = derive_stream(25, 0);
        let mut rt = s.sample_imgw0(RootLaw::Fixed(0), 2, 1, &mut rng).unwrap();
        let v1 = rt.ray_vertex(1);
        let o = rt.ray_vertex(0);
        let v2 = rt.ray_vertex(2);
        let (kids, ray_child) = rt.upward_neighbors(v1);
        assert_eq!(ray_child, Some(o));
        let off: Vec<NodeId> = kids.collect();
        assert_eq!(off.len(), 1);
        let mut counts = [0u64; 3];
        let n = 30_000;
        for _ in 0..n {
            let w = step_rayed(&mut rt, v1, 2.0, &mut rng).unwrap();
            if w == v2 {
                counts[0] += 1;
            } else if w == o {
                counts[1] += 1;
            } else if w == off[0] {
                counts[2] += 1;
            } else {
                panic!("unexpected neighbor");
            }
        }
        let report = chi_square_gof(&counts, &[0.5, 0.25, 0.25]);
        assert!(report.p_value > 0.001, "rayed step law p {}", report.p_value);
    }

    #[test]
    fn binary_rooted_displacement_is_half_normal() {
        // At lambda = rho = 2 the depth of the walk on the binary tree is a
        // lazy reflected simple random walk, so E|X_n|/sqrt(n) approaches
        // sqrt(2/pi).
        let s = sampler_for(fixtures::binary());
        let mut rng = derive_stream(26, 0);
        let paths = 800;
        let steps = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..paths {
            let mut tree = s.sample_mgw(RootLaw::Fixed(0), 0, &mut rng).unwrap();
            let traj = run_rooted_walk(&mut tree, 2.0, steps, Record::Heights, None, &mut rng)
                .unwrap();
            let x = *traj.heights.last().unwrap() as f64 / (steps as f64).sqrt();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / paths as f64;
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        let sem = ((sumsq / paths as f64 - mean * mean).max(0.0) / paths as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.5 * sem + 0.01,
            "mean displacement {mean} vs {expect} (sem {sem})"
        );
    }

    #[test]
    fn walk_runs_are_reproducible() {
        let model = Arc::new(fixtures::two_type());
        let (_, a) = x_machine_run(&model, 2_000, 7, 0).unwrap();
        let (_, b) = x_machine_run(&model, 2_000, 7, 0).unwrap();
        let (_, c) = x_machine_run(&model, 2_000, 8, 0).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.heights, b.heights);
        assert_ne!(a.heights, c.heights);
    }

    #[test]
    fn zero_step_trajectory() {
        let s = sampler_for(fixtures::two_type());
        let mut rng = derive_stream(27, 0);
        let mut tree = s.sample_mgw(RootLaw::Fixed(0), 0, &mut rng).unwrap();
        let traj = run_rooted_walk(&mut tree, 2.0, 0, Record::Vertices, None, &mut rng).unwrap();
        assert_eq!(traj.heights, vec![0]);
        assert_eq!(traj.vertices.as_ref().unwrap().len(), 1);
        assert_eq!(traj.steps(), 0);
    }

    #[test]
    fn continuous_time_holding_matches_rates() {
        // Binary tree at lambda = 2: rate 4 away from the root, so the mean
        // holding time over a long run is close to 1/4 (root visits, at
        // rate 2, are a vanishing fraction).
        let s = sampler_for(fixtures::binary());
        let mut rng = derive_stream(28, 0);
        let mut tree = s.sample_mgw(RootLaw::Fixed(0), 0, &mut rng).unwrap();
        let steps = 20_000;
        let traj = run_rooted_walk_cts(&mut tree, 2.0, steps, Record::Heights, None, &mut rng)
            .unwrap();
        let times = traj.jump_times.as_ref().unwrap();
        assert_eq!(times.len(), steps + 1);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        let mean_holding = times.last().unwrap() / steps as f64;
        assert!(
            (mean_holding - 0.25).abs() < 0.01,
            "mean holding {mean_holding}"
        );
    }

    #[test]
    fn excursion_cutoff_pinned_value() {
        assert_eq!(ell(10), 12);
        assert!(ell(100) <= ell(10_000));
        assert_eq!(ell(0), 0);
    }

    #[test]
    fn excursion_decomposition_invariants() {
        let model = Arc::new(fixtures::binary());
        let (tree, traj) = x_machine_run(&model, 4_000, 29, 0).unwrap();
        let n = 10;
        let deco = excursion_decompose(&traj, &tree, n, 0).unwrap();
        assert_eq!(deco.ell, 12);
        assert!(!deco.excursions.is_empty(), "walk never went deep");
        let verts = traj.vertices.as_ref().unwrap();
        let mut prev_end = 0;
        for exc in &deco.excursions {
            assert!(exc.start >= prev_end, "segments must not overlap");
            assert!(exc.end > exc.start);
            assert_eq!(verts[exc.start], exc.vertex);
            assert!(2 * tree.level(exc.vertex) as usize > deco.ell);
            let parent = tree.parent(exc.vertex).unwrap();
            assert_eq!(verts[exc.end], parent);
            // First visit: the vertex appears nowhere before the segment.
            assert!(!verts[..exc.start].contains(&exc.vertex));
            // Confinement: the walk stays inside the subtree of the anchor
            // until it closes the segment.
            for &w in &verts[exc.start..exc.end] {
                let mut u = w;
                let mut inside = false;
                loop {
                    if u == exc.vertex {
                        inside = true;
                        break;
                    }
                    match tree.parent(u) {
                        Some(p) => u = p,
                        None => break,
                    }
                }
                assert!(inside, "excursion left the anchor subtree");
            }
            // No return to the parent strictly inside the segment.
            assert!(!verts[exc.start..exc.end].contains(&parent));
            prev_end = exc.end;
        }
    }

    #[test]
    fn coupling_increments_match_on_binary() {
        let model = Arc::new(fixtures::binary());
        let pair = shifted_coupling(&model, 10, 4_000, 0, 30).unwrap();
        assert!(pair.matched >= 1, "no excursion was replayed");
        assert!(pair.increments_equal);
        assert_eq!(pair.y.heights.len(), 4_001);
        for w in pair.y.heights.windows(2) {
            assert_eq!((w[1] - w[0]).abs(), 1, "rayed walk must move one step");
        }
        // The reported rooted trajectory is bit-identical to a standalone
        // run from the same stream.
        let (_, alone) = x_machine_run(&model, 4_000, 30, 0).unwrap();
        assert_eq!(pair.x.vertices, alone.vertices);
    }

    #[test]
    fn coupling_runs_on_two_type() {
        let model = Arc::new(fixtures::two_type());
        let pair = shifted_coupling(&model, 10, 3_000, 0, 31).unwrap();
        assert!(pair.increments_equal);
        assert_eq!(pair.y.heights.len(), 3_001);
        // Replays anchored on type a only.
        let verts = pair.y.vertices.as_ref().unwrap();
        assert_eq!(verts.len(), 3_001);
    }
}
