//! Samplers for the tree measures: plain branching trees, survival-
//! conditioned trees, ray-marked limit trees with their root reweightings,
//! and the size-biased marked-path law. Also the weak-limit consistency
//! check that ties the marked-path law to the rayed limit measure.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MgwError, Result};
use crate::model::{Atom, Flavor, InflatedLaw, Model, SpectralData, TypeId};
use crate::rng::derive_stream;
use crate::stats::{chi_square_two_sample, ChiSquareReport};
use crate::tree::{ChildSpec, CondTables, GrowthLaw, NodeId, RayedTree, Tree};

/// Which measure to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    /// The plain branching measure.
    Mgw,
    /// The branching measure conditioned on survival.
    MgwNonextinct,
    /// Ray-marked limit tree, stationary root type.
    Imgw0,
    /// Ray-marked limit tree with the root-type reweighting.
    Imgw,
    /// Ray-marked limit tree with root-type and root-degree reweighting
    /// (the reversing law of the critically biased walk).
    Imgwr,
    /// Size-biased tree with a marked root-to-level-n path.
    Qnstar,
}

/// How the root type is drawn.
#[derive(Clone, Copy, Debug)]
pub enum RootLaw {
    Fixed(TypeId),
    /// The canonical mixture: the left eigenvector.
    Canonical,
    /// The stationary law of the ray type chain.
    Stationary,
}

/// A sampling request: measure plus growth horizons.
#[derive(Clone, Debug)]
pub struct MeasureSpec {
    pub measure: Measure,
    pub root: RootLaw,
    /// Materialization horizon: depth for rooted trees; for rayed ones,
    /// how many generations to grow below each ray vertex. Anything beyond
    /// it stays lazy.
    pub depth: i32,
    /// Number of ray vertices to create for rayed measures.
    pub ray_depth: usize,
    /// Marked-path length for the marked-path measure.
    pub level_n: usize,
}

impl MeasureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.measure == Measure::Qnstar && self.level_n == 0 {
            return Err(MgwError::Sampler(
                "marked-path sampling needs a level of at least 1".into(),
            ));
        }
        if self.depth < 0 {
            return Err(MgwError::Sampler("negative growth horizon".into()));
        }
        Ok(())
    }
}

/// The outcome of a `MeasureSpec` draw.
pub enum Sampled {
    Rooted(Tree),
    Rayed(RayedTree),
    Marked(MarkedSample),
}

/// A tree with a marked root-to-level-n path.
pub struct MarkedSample {
    pub tree: Tree,
    /// Vertices of the marked path, root first.
    pub path: Vec<NodeId>,
    /// Importance weight; 1 for exact samplers.
    pub weight: f64,
}

/// Cumulative table over (type, atom) pairs for the exact root laws of the
/// reweighted rayed measures.
struct RootTable {
    entries: Vec<(TypeId, usize)>,
    cum: Vec<f64>,
}

impl RootTable {
    /// Root pair weights: stationary(a)/right(a) times the atom probability,
    /// and for the degree-biased variant an extra (offspring size + rho)
    /// factor (total offspring weight in the weighted flavor).
    fn build(model: &Model, sd: &SpectralData, flavor: Flavor, degree_biased: bool) -> RootTable {
        let mut entries = Vec::new();
        let mut weights = Vec::new();
        for a in 0..model.type_count() {
            for (i, atom) in model.laws[a].atoms.iter().enumerate() {
                let mut w = sd.stationary[a] / sd.right[a] * atom.p;
                if degree_biased {
                    let d = match flavor {
                        Flavor::Unit => atom.size() as f64,
                        Flavor::Weighted => atom.total_weight(),
                    };
                    w *= d + sd.rho;
                }
                entries.push((a, i));
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cum: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = f64::max(*last, 1.0);
        }
        RootTable { entries, cum }
    }

    fn draw(&self, u: f64) -> (TypeId, usize) {
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) | Err(i) => i.min(self.cum.len() - 1),
        };
        self.entries[i]
    }
}

/// Shared sampling state for one model: spectral data, the size-biased
/// offspring law, survival-conditioning tables, and the exact root tables
/// of the reweighted rayed measures.
pub struct Sampler {
    pub model: Arc<Model>,
    pub flavor: Flavor,
    pub spectral: Arc<SpectralData>,
    pub inflated: InflatedLaw,
    cond: Arc<CondTables>,
    imgw_root: RootTable,
    imgwr_root: RootTable,
}

impl Sampler {
    pub fn new(model: Arc<Model>) -> Result<Sampler> {
        let flavor = model.flavor();
        Sampler::with_flavor(model, flavor)
    }

    pub fn with_flavor(model: Arc<Model>, flavor: Flavor) -> Result<Sampler> {
        let spectral = Arc::new(model.spectral(flavor)?);
        let inflated = model.inflated_law(&spectral);
        let cond = Arc::new(CondTables::new(&model)?);
        let imgw_root = RootTable::build(&model, &spectral, flavor, false);
        let imgwr_root = RootTable::build(&model, &spectral, flavor, true);
        Ok(Sampler {
            model,
            flavor,
            spectral,
            inflated,
            cond,
            imgw_root,
            imgwr_root,
        })
    }

    pub fn draw_root_type(&self, law: RootLaw, rng: &mut impl Rng) -> TypeId {
        match law {
            RootLaw::Fixed(a) => a,
            RootLaw::Canonical => pick_weighted(&self.spectral.left, rng.gen()),
            RootLaw::Stationary => pick_weighted(&self.spectral.stationary, rng.gen()),
        }
    }

    /// Dispatches a `MeasureSpec`.
    pub fn sample(&self, spec: &MeasureSpec, rng: &mut impl Rng) -> Result<Sampled> {
        spec.validate()?;
        match spec.measure {
            Measure::Mgw => Ok(Sampled::Rooted(self.sample_mgw(spec.root, spec.depth, rng)?)),
            Measure::MgwNonextinct => Ok(Sampled::Rooted(self.sample_mgw_nonextinct(
                spec.root, spec.depth, rng,
            )?)),
            Measure::Imgw0 => Ok(Sampled::Rayed(self.sample_imgw0(
                spec.root,
                spec.ray_depth,
                spec.depth,
                rng,
            )?)),
            Measure::Imgw => Ok(Sampled::Rayed(self.sample_imgw(
                spec.ray_depth,
                spec.depth,
                rng,
            )?)),
            Measure::Imgwr => Ok(Sampled::Rayed(self.sample_imgwr(
                spec.ray_depth,
                spec.depth,
                rng,
            )?)),
            Measure::Qnstar => Ok(Sampled::Marked(self.sample_qnstar(
                spec.root,
                spec.level_n,
                rng,
            )?)),
        }
    }

    /// Plain branching tree, grown to `depth`.
    pub fn sample_mgw(&self, root: RootLaw, depth: i32, rng: &mut impl Rng) -> Result<Tree> {
        let ty = self.draw_root_type(root, rng);
        let mut tree = Tree::new(
            self.model.clone(),
            Some(self.cond.clone()),
            ty,
            rng.gen(),
            GrowthLaw::Plain,
        );
        tree.grow_to_depth(depth)?;
        Ok(tree)
    }

    /// Branching tree conditioned on survival, grown to `depth`: the
    /// leafless skeleton grows survival-conditioned configurations whose
    /// non-surviving children carry extinction-conditioned subtrees.
    pub fn sample_mgw_nonextinct(
        &self,
        root: RootLaw,
        depth: i32,
        rng: &mut impl Rng,
    ) -> Result<Tree> {
        let ty = self.draw_root_type(root, rng);
        let mut tree = Tree::new(
            self.model.clone(),
            Some(self.cond.clone()),
            ty,
            rng.gen(),
            GrowthLaw::Skeleton,
        );
        tree.grow_to_depth(depth)?;
        Ok(tree)
    }

    /// Ray-marked limit tree: ray types follow the reversed type chain up
    /// from a stationary (or fixed) root; everything off the ray is plain.
    /// Materializes `ray_depth` ray vertices and grows each bush `depth`
    /// generations below its ray vertex.
    pub fn sample_imgw0(
        &self,
        root: RootLaw,
        ray_depth: usize,
        depth: i32,
        rng: &mut impl Rng,
    ) -> Result<RayedTree> {
        let ty = self.draw_root_type(root, rng);
        let mut rt = RayedTree::new(
            self.model.clone(),
            self.spectral.clone(),
            self.flavor,
            ty,
            rng.gen(),
            None,
        )?;
        rt.extend_ray(ray_depth)?;
        grow_rayed_to_depth(&mut rt, depth.max(0) as u32)?;
        Ok(rt)
    }

    /// Ray-marked limit tree with the root-type reweighting: the (root
    /// type, root configuration) pair has density proportional to
    /// stationary(a)/right(a) times the atom probability.
    pub fn sample_imgw(
        &self,
        ray_depth: usize,
        depth: i32,
        rng: &mut impl Rng,
    ) -> Result<RayedTree> {
        self.sample_reweighted(&self.imgw_root, ray_depth, depth, rng)
    }

    /// Ray-marked limit tree with root-type and root-degree reweighting;
    /// the root pair density gains an (offspring size + rho) factor.
    pub fn sample_imgwr(
        &self,
        ray_depth: usize,
        depth: i32,
        rng: &mut impl Rng,
    ) -> Result<RayedTree> {
        self.sample_reweighted(&self.imgwr_root, ray_depth, depth, rng)
    }

    fn sample_reweighted(
        &self,
        table: &RootTable,
        ray_depth: usize,
        depth: i32,
        rng: &mut impl Rng,
    ) -> Result<RayedTree> {
        let (ty, atom_idx) = table.draw(rng.gen());
        let spec = atom_child_spec(&self.model.laws[ty].atoms[atom_idx]);
        let mut rt = RayedTree::new(
            self.model.clone(),
            self.spectral.clone(),
            self.flavor,
            ty,
            rng.gen(),
            Some(&spec),
        )?;
        rt.extend_ray(ray_depth)?;
        grow_rayed_to_depth(&mut rt, depth.max(0) as u32)?;
        Ok(rt)
    }

    /// Size-biased tree with a marked path from the root to level `n`:
    /// every path vertex draws its configuration from the size-biased
    /// offspring law and marks one child with probability proportional to
    /// its right-eigenvector entry (times the edge weight in the weighted
    /// flavor). Off-path subtrees stay lazy.
    pub fn sample_qnstar(
        &self,
        root: RootLaw,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<MarkedSample> {
        if n == 0 {
            return Err(MgwError::Sampler(
                "marked-path sampling needs a level of at least 1".into(),
            ));
        }
        let ty = self.draw_root_type(root, rng);
        let mut tree = Tree::new(
            self.model.clone(),
            Some(self.cond.clone()),
            ty,
            rng.gen(),
            GrowthLaw::Plain,
        );
        let mut path = Vec::with_capacity(n + 1);
        path.push(tree.root());
        for i in 0..n {
            let v = path[i];
            let vty = tree.ty(v);
            let atom_idx = self.inflated.pick(vty, rng.gen());
            let atom = &self.model.laws[vty].atoms[atom_idx];
            tree.grow_node_with(v, &atom_child_spec(atom))?;
            let kids: Vec<NodeId> = tree.children(v).collect();
            let weights: Vec<f64> = kids
                .iter()
                .map(|&w| {
                    let r = self.spectral.right[tree.ty(w)];
                    match self.flavor {
                        Flavor::Unit => r,
                        Flavor::Weighted => r * tree.node(w).weight,
                    }
                })
                .collect();
            let slot = pick_weighted(&weights, rng.gen());
            path.push(kids[slot]);
        }
        Ok(MarkedSample {
            tree,
            path,
            weight: 1.0,
        })
    }
}

/// Children of an atom as growth specs for a plain subtree.
pub fn atom_child_spec(atom: &Atom) -> Vec<ChildSpec> {
    atom.children
        .iter()
        .map(|c| ChildSpec {
            ty: c.ty,
            weight: c.weight,
            law: GrowthLaw::Plain,
        })
        .collect()
}

/// Grows each bush of a rayed tree `depth` generations below its ray
/// vertex: the whole subtree of the origin, and the off-ray subtrees
/// hanging from every other ray vertex. Cost stays linear in ray length.
pub fn grow_rayed_to_depth(rt: &mut RayedTree, depth: u32) -> Result<()> {
    if depth == 0 {
        return Ok(());
    }
    for i in 0..rt.ray_len() {
        let v = rt.ray_vertex(i);
        if i == 0 {
            grow_subtree(&mut rt.tree, v, depth)?;
        } else {
            let kids: Vec<NodeId> = rt.tree.children(v).collect();
            for w in kids {
                grow_subtree(&mut rt.tree, w, depth - 1)?;
            }
        }
    }
    Ok(())
}

/// Grows `budget` generations below `v`.
pub fn grow_subtree(tree: &mut Tree, v: NodeId, budget: u32) -> Result<()> {
    let mut frontier = vec![v];
    for _ in 0..budget {
        let mut next = Vec::new();
        for u in frontier {
            if !tree.is_grown(u) {
                tree.grow_node(u)?;
            }
            next.extend(tree.children(u));
        }
        frontier = next;
    }
    Ok(())
}

fn pick_weighted(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u * total < acc {
            return i;
        }
    }
    weights.len() - 1
}

// ---------------------------------------------------------------------------
// Canonical neighborhood encodings
// ---------------------------------------------------------------------------

/// Canonical code of the subtree below `v` to the given depth: type plus
/// the sorted child codes, so planar order does not matter. Grows lazy
/// vertices on demand.
pub fn subtree_code(tree: &mut Tree, v: NodeId, depth: u32) -> Result<String> {
    let ty = tree.ty(v);
    if depth == 0 {
        return Ok(ty.to_string());
    }
    if !tree.is_grown(v) {
        tree.grow_node(v)?;
    }
    let kids: Vec<NodeId> = tree.children(v).collect();
    let mut parts = Vec::with_capacity(kids.len());
    for w in kids {
        parts.push(subtree_code(tree, w, depth - 1)?);
    }
    parts.sort();
    Ok(format!("{}({})", ty, parts.join(",")))
}

/// Canonical code of the radius-k ball around the root of a rayed tree:
/// the root's subtree to depth k, then per ray vertex its type and the
/// codes of its off-ray children to the remaining radius.
pub fn rayed_ball_code(rt: &mut RayedTree, k: usize) -> Result<String> {
    rt.extend_ray(k)?;
    let origin = rt.ray_vertex(0);
    let mut segs = vec![subtree_code(&mut rt.tree, origin, k as u32)?];
    for j in 1..=k {
        let vj = rt.ray_vertex(j);
        segs.push(ray_segment(&mut rt.tree, vj, None, k, j)?);
    }
    Ok(segs.join("|"))
}

/// Same ball code computed from a marked-path sample re-rooted at the path
/// end: the path plays the ray, read endpoint first.
pub fn qnstar_ball_code(ms: &mut MarkedSample, k: usize) -> Result<String> {
    let n = ms.path.len() - 1;
    assert!(k < n, "ball radius must stay inside the marked path");
    let mut segs = vec![subtree_code(&mut ms.tree, ms.path[n], k as u32)?];
    for j in 1..=k {
        let vj = ms.path[n - j];
        let toward_end = ms.path[n - j + 1];
        segs.push(ray_segment(&mut ms.tree, vj, Some(toward_end), k, j)?);
    }
    Ok(segs.join("|"))
}

fn ray_segment(
    tree: &mut Tree,
    vj: NodeId,
    skip: Option<NodeId>,
    k: usize,
    j: usize,
) -> Result<String> {
    let ty = tree.ty(vj);
    if j == k {
        return Ok(ty.to_string());
    }
    let kids: Vec<NodeId> = tree.children(vj).filter(|w| Some(*w) != skip).collect();
    let mut parts = Vec::with_capacity(kids.len());
    for w in kids {
        parts.push(subtree_code(tree, w, (k - j - 1) as u32)?);
    }
    parts.sort();
    Ok(format!("{}[{}]", ty, parts.join(",")))
}

// ---------------------------------------------------------------------------
// Weak-limit check
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct WeakLimitReport {
    pub n: usize,
    pub k: usize,
    pub samples: usize,
    pub categories: usize,
    /// Two-sample statistic; absent when both sides saw one category.
    pub chi2: Option<ChiSquareReport>,
    pub identical_supports: bool,
    pub pass: bool,
}

/// Draws `samples` marked-path trees, re-roots each at the path end, and
/// compares radius-k root neighborhoods against direct draws of the rayed
/// limit measure by a two-sample chi-square test.
pub fn weak_limit_check(
    model: &Arc<Model>,
    n: usize,
    k: usize,
    samples: usize,
    seed: u64,
    p_threshold: f64,
) -> Result<WeakLimitReport> {
    let sampler = Sampler::new(model.clone())?;
    let q_counts: BTreeMap<String, u64> = (0..samples)
        .into_par_iter()
        .try_fold(BTreeMap::new, |mut m: BTreeMap<String, u64>, i| {
            let mut rng = derive_stream(seed, i as u64);
            let mut ms = sampler.sample_qnstar(RootLaw::Stationary, n, &mut rng)?;
            *m.entry(qnstar_ball_code(&mut ms, k)?).or_insert(0) += 1;
            Ok::<_, MgwError>(m)
        })
        .try_reduce(BTreeMap::new, |a, b| Ok(merge_counts(a, b)))?;
    let direct_counts: BTreeMap<String, u64> = (0..samples)
        .into_par_iter()
        .try_fold(BTreeMap::new, |mut m: BTreeMap<String, u64>, i| {
            let mut rng = derive_stream(seed, (samples + i) as u64);
            let mut rt = sampler.sample_imgw0(RootLaw::Stationary, k, 0, &mut rng)?;
            *m.entry(rayed_ball_code(&mut rt, k)?).or_insert(0) += 1;
            Ok::<_, MgwError>(m)
        })
        .try_reduce(BTreeMap::new, |a, b| Ok(merge_counts(a, b)))?;

    let keys: Vec<&String> = q_counts.keys().chain(direct_counts.keys()).collect();
    let mut uniq: Vec<&String> = keys;
    uniq.sort();
    uniq.dedup();
    let a: Vec<u64> = uniq.iter().map(|s| *q_counts.get(*s).unwrap_or(&0)).collect();
    let b: Vec<u64> = uniq
        .iter()
        .map(|s| *direct_counts.get(*s).unwrap_or(&0))
        .collect();
    let identical_supports = q_counts.len() == direct_counts.len()
        && q_counts.keys().eq(direct_counts.keys());
    let (chi2, pass) = if uniq.len() < 2 {
        (None, identical_supports)
    } else {
        let report = chi_square_two_sample(&a, &b);
        let pass = report.p_value > p_threshold;
        (Some(report), pass)
    };
    Ok(WeakLimitReport {
        n,
        k,
        samples,
        categories: uniq.len(),
        chi2,
        identical_supports,
        pass,
    })
}

pub(crate) fn merge_counts(
    mut a: BTreeMap<String, u64>,
    b: BTreeMap<String, u64>,
) -> BTreeMap<String, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

/// Turns two category-count maps into aligned count vectors and runs the
/// two-sample chi-square test.
pub fn two_sample_from_maps(
    a: &BTreeMap<String, u64>,
    b: &BTreeMap<String, u64>,
) -> ChiSquareReport {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let av: Vec<u64> = keys.iter().map(|k| *a.get(*k).unwrap_or(&0)).collect();
    let bv: Vec<u64> = keys.iter().map(|k| *b.get(*k).unwrap_or(&0)).collect();
    chi_square_two_sample(&av, &bv)
}
