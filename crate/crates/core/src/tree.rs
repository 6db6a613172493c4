//! Arena-backed trees with lazy, seed-deterministic growth.
//!
//! Every node carries a 64-bit key; its offspring configuration is a pure
//! function of (model, key, growth law). Child keys derive from the parent
//! key and child slot, so the whole tree is a function of the root key: it
//! does not matter in which order a walk (or several walks sharing the tree)
//! forces nodes to grow. This is what makes "one quenched environment, many
//! walks" both cheap and exactly reproducible, and it allows materialized
//! subtrees to be discarded and regrown bit-identically.
//!
//! Two shapes are supported: rooted trees (levels are depths, root at 0) and
//! ray-marked trees (levels are heights; the ray vertices sit at heights
//! 0, -1, -2, ... and everything hanging off the ray grows upward by +1 per
//! generation).

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{MgwError, Result};
use crate::model::{Flavor, Model, SpectralData, TypeId};
use crate::rng::{child_key, mix, KeyedRng};

pub type NodeId = u32;
pub const NO_NODE: NodeId = u32::MAX;

const FLAG_GROWN: u8 = 1;
const FLAG_RAY: u8 = 2;

/// How a node's offspring are drawn when it grows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthLaw {
    /// The model's offspring law.
    Plain,
    /// Conditioned on the subtree surviving forever: survivors of the
    /// original configuration stay on the skeleton, the rest die out.
    Skeleton,
    /// Conditioned on the subtree dying out.
    ExtinctTilted,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub parent: NodeId,
    first_child: NodeId,
    n_children: u16,
    flags: u8,
    law_tag: u8,
    pub ty: u8,
    /// Depth for rooted trees, height for ray-marked trees.
    pub level: i32,
    /// Weight of the edge to the parent (1.0 where weights do not matter).
    pub weight: f64,
    pub key: u64,
}

impl Node {
    pub fn is_grown(&self) -> bool {
        self.flags & FLAG_GROWN != 0
    }

    pub fn on_ray(&self) -> bool {
        self.flags & FLAG_RAY != 0
    }

    pub fn law(&self) -> GrowthLaw {
        match self.law_tag {
            0 => GrowthLaw::Plain,
            1 => GrowthLaw::Skeleton,
            _ => GrowthLaw::ExtinctTilted,
        }
    }
}

fn law_tag(law: GrowthLaw) -> u8 {
    match law {
        GrowthLaw::Plain => 0,
        GrowthLaw::Skeleton => 1,
        GrowthLaw::ExtinctTilted => 2,
    }
}

/// Tables for growing survival-conditioned trees: per type, the law of the
/// original atom given at least one surviving child, and the law of the
/// atom conditioned on total extinction.
#[derive(Clone, Debug)]
pub struct CondTables {
    /// Extinction probability per type.
    pub ext: Vec<f64>,
    /// Cumulative atom probabilities given survival, per type.
    nonext_cum: Vec<Vec<f64>>,
    /// Cumulative atom probabilities given extinction, per type
    /// (`None` for types that cannot die out).
    tilted_cum: Vec<Option<Vec<f64>>>,
}

impl CondTables {
    pub fn new(model: &Model) -> Result<CondTables> {
        let ext = model.extinction_probs()?.probs;
        let mut nonext_cum = Vec::with_capacity(model.type_count());
        for (a, law) in model.laws.iter().enumerate() {
            let survive_a = 1.0 - ext[a];
            if survive_a <= 0.0 {
                return Err(MgwError::Sampler(format!(
                    "type {:?} dies out almost surely",
                    model.types[a]
                )));
            }
            let mut cum = Vec::with_capacity(law.atoms.len());
            let mut acc = 0.0;
            for atom in &law.atoms {
                let all_die: f64 = atom.children.iter().map(|c| ext[c.ty]).product();
                acc += atom.p * (1.0 - all_die) / survive_a;
                cum.push(acc);
            }
            if let Some(last) = cum.last_mut() {
                *last = f64::max(*last, 1.0);
            }
            nonext_cum.push(cum);
        }
        let tilted_cum = model
            .extinct_tilted_atom_probs(&crate::model::ExtinctionData {
                probs: ext.clone(),
                iterations: 0,
            })
            .into_iter()
            .map(|row| {
                row.map(|probs| {
                    let mut acc = 0.0;
                    let mut cum: Vec<f64> = probs
                        .iter()
                        .map(|p| {
                            acc += p;
                            acc
                        })
                        .collect();
                    if let Some(last) = cum.last_mut() {
                        *last = f64::max(*last, 1.0);
                    }
                    cum
                })
            })
            .collect();
        Ok(CondTables {
            ext,
            nonext_cum,
            tilted_cum,
        })
    }
}

fn pick(cum: &[f64], u: f64) -> usize {
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => i.min(cum.len() - 1),
    }
}

/// One child of a sampled configuration, with the law its own subtree will
/// grow under.
#[derive(Clone, Copy, Debug)]
pub struct ChildSpec {
    pub ty: TypeId,
    pub weight: f64,
    pub law: GrowthLaw,
}

/// Samples the offspring configuration a node with this (type, law, key)
/// grows: a pure function, shared by actual growth and by virtual traversal
/// of not-yet-materialized subtrees.
pub fn config_for(
    model: &Model,
    cond: Option<&CondTables>,
    ty: TypeId,
    law: GrowthLaw,
    key: u64,
) -> Result<Vec<ChildSpec>> {
    let mut rng = KeyedRng::new(key);
    match law {
        GrowthLaw::Plain => {
            let atom = &model.laws[ty].atoms[model.laws[ty].pick(rng.gen::<f64>())];
            Ok(atom
                .children
                .iter()
                .map(|c| ChildSpec {
                    ty: c.ty,
                    weight: c.weight,
                    law: GrowthLaw::Plain,
                })
                .collect())
        }
        GrowthLaw::ExtinctTilted => {
            let tables =
                cond.ok_or_else(|| MgwError::Tree("conditioned growth needs tables".into()))?;
            let cum = tables.tilted_cum[ty]
                .as_ref()
                .ok_or_else(|| MgwError::Tree("type cannot die out of".into()))?;
            let atom = &model.laws[ty].atoms[pick(cum, rng.gen::<f64>())];
            Ok(atom
                .children
                .iter()
                .map(|c| ChildSpec {
                    ty: c.ty,
                    weight: c.weight,
                    law: GrowthLaw::ExtinctTilted,
                })
                .collect())
        }
        GrowthLaw::Skeleton => {
            let tables =
                cond.ok_or_else(|| MgwError::Tree("conditioned growth needs tables".into()))?;
            let atom =
                &model.laws[ty].atoms[pick(&tables.nonext_cum[ty], rng.gen::<f64>())];
            // Mark survivors child by child, conditioning on at least one
            // survivor overall. suffix_die[j] = P(children j.. all die).
            let k = atom.children.len();
            let mut suffix_die = vec![1.0; k + 1];
            for j in (0..k).rev() {
                suffix_die[j] = suffix_die[j + 1] * tables.ext[atom.children[j].ty];
            }
            let mut out = Vec::with_capacity(k);
            let mut have_survivor = false;
            for (j, c) in atom.children.iter().enumerate() {
                let survive_p = if have_survivor {
                    1.0 - tables.ext[c.ty]
                } else {
                    // P(j survives | someone among j.. survives)
                    (1.0 - tables.ext[c.ty]) / (1.0 - suffix_die[j])
                };
                let survives = rng.gen::<f64>() < survive_p;
                have_survivor |= survives;
                out.push(ChildSpec {
                    ty: c.ty,
                    weight: c.weight,
                    law: if survives {
                        GrowthLaw::Skeleton
                    } else {
                        GrowthLaw::ExtinctTilted
                    },
                });
            }
            debug_assert!(have_survivor);
            Ok(out)
        }
    }
}

/// Arena-backed tree. Nodes are appended in growth order; children of one
/// node are contiguous.
#[derive(Clone)]
pub struct Tree {
    pub model: Arc<Model>,
    pub cond: Option<Arc<CondTables>>,
    nodes: Vec<Node>,
}

impl Tree {
    /// A tree of just an ungrown root.
    pub fn new(
        model: Arc<Model>,
        cond: Option<Arc<CondTables>>,
        root_ty: TypeId,
        root_key: u64,
        law: GrowthLaw,
    ) -> Tree {
        let root = Node {
            parent: NO_NODE,
            first_child: NO_NODE,
            n_children: 0,
            flags: 0,
            law_tag: law_tag(law),
            ty: root_ty as u8,
            level: 0,
            weight: 1.0,
            key: root_key,
        };
        Tree {
            model,
            cond,
            nodes: vec![root],
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v as usize]
    }

    pub fn ty(&self, v: NodeId) -> TypeId {
        self.nodes[v as usize].ty as TypeId
    }

    pub fn level(&self, v: NodeId) -> i32 {
        self.nodes[v as usize].level
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let p = self.nodes[v as usize].parent;
        (p != NO_NODE).then_some(p)
    }

    pub fn n_children(&self, v: NodeId) -> usize {
        self.nodes[v as usize].n_children as usize
    }

    pub fn children(&self, v: NodeId) -> std::ops::Range<NodeId> {
        let n = &self.nodes[v as usize];
        if n.first_child == NO_NODE {
            0..0
        } else {
            n.first_child..n.first_child + NodeId::from(n.n_children)
        }
    }

    pub fn is_grown(&self, v: NodeId) -> bool {
        self.nodes[v as usize].is_grown()
    }

    /// Sum of child edge weights, as seen by a weighted walk.
    pub fn child_weight_sum(&self, v: NodeId) -> f64 {
        self.children(v).map(|w| self.node(w).weight).sum()
    }

    /// Grows `v`'s offspring from its key. Errors if `v` is already grown.
    pub fn grow_node(&mut self, v: NodeId) -> Result<()> {
        if self.is_grown(v) {
            return Err(MgwError::Tree(format!("node {v} already grown")));
        }
        let (ty, law, key) = {
            let n = self.node(v);
            (n.ty as TypeId, n.law(), n.key)
        };
        let spec = config_for(&self.model, self.cond.as_deref(), ty, law, key)?;
        self.attach(v, &spec);
        Ok(())
    }

    /// Installs an externally sampled configuration at `v` (backbone
    /// construction, copied excursion content). Errors if already grown.
    pub fn grow_node_with(&mut self, v: NodeId, spec: &[ChildSpec]) -> Result<()> {
        if self.is_grown(v) {
            return Err(MgwError::Tree(format!("node {v} already grown")));
        }
        self.attach(v, spec);
        Ok(())
    }

    fn attach(&mut self, v: NodeId, spec: &[ChildSpec]) {
        assert!(spec.len() < u16::MAX as usize);
        let first = self.nodes.len() as NodeId;
        let (level, key) = {
            let n = &self.nodes[v as usize];
            (n.level, n.key)
        };
        for (slot, c) in spec.iter().enumerate() {
            self.nodes.push(Node {
                parent: v,
                first_child: NO_NODE,
                n_children: 0,
                flags: 0,
                law_tag: law_tag(c.law),
                ty: c.ty as u8,
                level: level + 1,
                weight: c.weight,
                key: child_key(key, slot as u32),
            });
        }
        let n = &mut self.nodes[v as usize];
        n.first_child = if spec.is_empty() { NO_NODE } else { first };
        n.n_children = spec.len() as u16;
        n.flags |= FLAG_GROWN;
    }

    /// Grows every node of level less than `depth` (single pass works
    /// because children are appended after their parents).
    pub fn grow_to_depth(&mut self, depth: i32) -> Result<()> {
        let mut v = 0;
        while (v as usize) < self.nodes.len() {
            if self.nodes[v as usize].level < depth && !self.nodes[v as usize].is_grown() {
                self.grow_node(v)?;
            }
            v += 1;
        }
        Ok(())
    }

    /// Per-level, per-type population counts for levels `0..=depth`.
    /// Requires every node above the last level to be grown.
    pub fn level_census(&self, depth: i32) -> Result<LevelCensus> {
        let q = self.model.type_count();
        let mut counts = vec![vec![0u64; q]; depth as usize + 1];
        for n in &self.nodes {
            if n.level < depth && !n.is_grown() {
                return Err(MgwError::Tree(format!(
                    "census to depth {depth} needs all shallower nodes grown"
                )));
            }
            if (0..=depth).contains(&n.level) {
                counts[n.level as usize][n.ty as usize] += 1;
            }
        }
        Ok(LevelCensus { counts })
    }

    /// Marks the current arena extent; `truncate` rolls back to it.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Discards every node created after `mark` and reverts nodes whose
    /// children were discarded to ungrown. Regrowth reproduces the same
    /// subtrees bit for bit, so this is safe on shared quenched trees.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        let cutoff = mark as NodeId;
        for n in &mut self.nodes {
            if n.first_child != NO_NODE && n.first_child >= cutoff {
                n.first_child = NO_NODE;
                n.n_children = 0;
                n.flags &= !FLAG_GROWN;
            }
        }
    }

    /// Ungrown nodes (the growth frontier).
    pub fn frontier(&self) -> Vec<NodeId> {
        (0..self.nodes.len() as NodeId)
            .filter(|&v| !self.nodes[v as usize].is_grown())
            .collect()
    }

    /// Writes one JSON object per node: id, parent, type, edge weight, and
    /// the node's level under the given label ("depth" or "h").
    pub fn dump_jsonl(&self, out: &mut dyn Write, level_label: &str) -> Result<()> {
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = if n.parent == NO_NODE {
                serde_json::Value::Null
            } else {
                serde_json::Value::from(n.parent)
            };
            let obj = serde_json::json!({
                "id": id,
                "parent": parent,
                "type": self.model.types[n.ty as usize],
                "w": n.weight,
                level_label: n.level,
            });
            writeln!(out, "{obj}")?;
        }
        Ok(())
    }

    fn push_ray_node(&mut self, ty: TypeId, level: i32, weight: f64, key: u64) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            parent: NO_NODE,
            first_child: NO_NODE,
            n_children: 0,
            flags: FLAG_RAY,
            law_tag: law_tag(GrowthLaw::Plain),
            ty: ty as u8,
            level,
            weight,
            key,
        });
        id
    }
}

/// Per-level, per-type population counts.
#[derive(Clone, Debug)]
pub struct LevelCensus {
    pub counts: Vec<Vec<u64>>,
}

impl LevelCensus {
    pub fn total(&self, level: usize) -> u64 {
        self.counts[level].iter().sum()
    }

    /// The normalized population martingale per level: right-eigenvector
    /// mass of the level divided by rho^level.
    pub fn normalized_martingale(&self, sd: &SpectralData) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(level, row)| {
                let mass: f64 = row
                    .iter()
                    .zip(&sd.right)
                    .map(|(&c, r)| c as f64 * r)
                    .sum();
                mass / sd.rho.powi(level as i32)
            })
            .collect()
    }
}

/// Census-only simulation of the branching population: per level, per type
/// counts without materializing nodes. Exact in distribution for any
/// statistic of level censuses.
pub fn simulate_census(
    model: &Model,
    root_ty: TypeId,
    depth: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<u64>> {
    let q = model.type_count();
    let mut counts = vec![vec![0u64; q]; depth + 1];
    counts[0][root_ty] = 1;
    for level in 0..depth {
        for a in 0..q {
            let n = counts[level][a];
            if n == 0 {
                continue;
            }
            let law = &model.laws[a];
            // Multinomial split of n draws over the atoms.
            let mut remaining = n;
            let mut prob_left = 1.0;
            for (i, atom) in law.atoms.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let hits = if i + 1 == law.atoms.len() {
                    remaining
                } else {
                    let p = (atom.p / prob_left).clamp(0.0, 1.0);
                    let b = Binomial::new(remaining, p).expect("valid binomial");
                    b.sample(rng)
                };
                remaining -= hits;
                prob_left -= atom.p;
                if hits > 0 {
                    for (b, &c) in atom.counts.iter().enumerate() {
                        counts[level + 1][b] += hits * u64::from(c);
                    }
                }
            }
        }
    }
    counts
}

/// A tree with a marked ray: vertices `ray[0] = o, ray[1], ray[2], ...` at
/// heights 0, -1, -2, ...; all other vertices hang off the ray and descend
/// upward (height = level field). The ray extends on demand, driven by a
/// per-index stream so extension order never matters.
#[derive(Clone)]
pub struct RayedTree {
    pub tree: Tree,
    ray: Vec<NodeId>,
    ray_seed: u64,
    pub spectral: Arc<SpectralData>,
    pub flavor: Flavor,
}

impl RayedTree {
    /// Builds the root vertex of a rayed tree. `root_config`, if given, is
    /// installed eagerly (measures with an exact root law); otherwise the
    /// root grows lazily like any other vertex.
    pub fn new(
        model: Arc<Model>,
        spectral: Arc<SpectralData>,
        flavor: Flavor,
        root_ty: TypeId,
        seed: u64,
        root_config: Option<&[ChildSpec]>,
    ) -> Result<RayedTree> {
        let mut tree = Tree::new(model, None, root_ty, mix(seed, 0x6f72_6967_696e), GrowthLaw::Plain);
        tree.nodes[0].flags |= FLAG_RAY;
        if let Some(spec) = root_config {
            tree.grow_node_with(0, spec)?;
        }
        Ok(RayedTree {
            tree,
            ray: vec![0],
            ray_seed: mix(seed, 0x7261_79),
            spectral,
            flavor,
        })
    }

    pub fn ray_len(&self) -> usize {
        self.ray.len()
    }

    pub fn ray_vertex(&self, i: usize) -> NodeId {
        self.ray[i]
    }

    /// Ray index of a vertex on the ray (heights are -index there).
    pub fn ray_index(&self, v: NodeId) -> Option<usize> {
        self.tree.node(v).on_ray().then(|| (-self.tree.level(v)) as usize)
    }

    pub fn height(&self, v: NodeId) -> i32 {
        self.tree.level(v)
    }

    /// Distance from `v` to the ray (0 if `v` is on it).
    pub fn dist_to_ray(&self, v: NodeId) -> u32 {
        let mut d = 0;
        let mut u = v;
        while !self.tree.node(u).on_ray() {
            u = self.tree.node(u).parent;
            d += 1;
        }
        d
    }

    /// Ensures ray vertices up to index `upto` exist. Each new ray vertex
    /// gets a type from the reversed ray chain, a configuration conditioned
    /// on producing the previous ray vertex's type, and its off-ray children
    /// as lazy plain subtrees.
    pub fn extend_ray(&mut self, upto: usize) -> Result<()> {
        while self.ray.len() <= upto {
            let i = self.ray.len(); // creating ray vertex v_i
            let below = self.ray[i - 1];
            let below_ty = self.tree.ty(below);
            let mut rng = KeyedRng::new(mix(self.ray_seed, i as u64));

            let rev = self.spectral.reversed_kernel();
            let ty = sample_row(&rev[below_ty], rng.gen::<f64>());

            // Configuration of v_i given its ray child has type below_ty:
            // atoms reweighted by their type-below_ty mass.
            let model = self.tree.model.clone();
            let law = &model.laws[ty];
            let weights: Vec<f64> = law
                .atoms
                .iter()
                .map(|atom| {
                    let mass = match self.flavor {
                        Flavor::Unit => f64::from(atom.counts[below_ty]),
                        Flavor::Weighted => atom.weight_mass[below_ty],
                    };
                    atom.p * mass
                })
                .collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(MgwError::Sampler(
                    "reversed chain chose a type that cannot produce the required child".into(),
                ));
            }
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut atom_idx = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    atom_idx = j;
                    break;
                }
            }
            let atom = &law.atoms[atom_idx];

            // Which child slot of the configuration is the ray child:
            // uniform over the matching type for the unit flavor, weight-
            // proportional for the weighted flavor.
            let matching: Vec<usize> = atom
                .children
                .iter()
                .enumerate()
                .filter(|(_, c)| c.ty == below_ty)
                .map(|(j, _)| j)
                .collect();
            let marked_slot = match self.flavor {
                Flavor::Unit => matching[rng.gen_range(0..matching.len())],
                Flavor::Weighted => {
                    let wsum: f64 = matching.iter().map(|&j| atom.children[j].weight).sum();
                    let mut u = rng.gen::<f64>() * wsum;
                    let mut chosen = matching[matching.len() - 1];
                    for &j in &matching {
                        u -= atom.children[j].weight;
                        if u < 0.0 {
                            chosen = j;
                            break;
                        }
                    }
                    chosen
                }
            };

            let key = mix(self.ray_seed, 0x8000_0000_0000_0000 | i as u64);
            let vi = self.tree.push_ray_node(ty, -(i as i32), 1.0, key);
            // Attach off-ray children; the marked slot stays the existing
            // ray child, which keeps its own identity and key.
            let atom_children = atom.children.clone();
            let first = self.tree.nodes.len() as NodeId;
            let mut count = 0u16;
            for (slot, c) in atom_children.iter().enumerate() {
                if slot == marked_slot {
                    continue;
                }
                self.tree.nodes.push(Node {
                    parent: vi,
                    first_child: NO_NODE,
                    n_children: 0,
                    flags: 0,
                    law_tag: law_tag(GrowthLaw::Plain),
                    ty: c.ty as u8,
                    level: -(i as i32) + 1,
                    weight: c.weight,
                    key: child_key(key, slot as u32),
                });
                count += 1;
            }
            {
                let n = &mut self.tree.nodes[vi as usize];
                n.first_child = if count == 0 { NO_NODE } else { first };
                n.n_children = count;
                n.flags |= FLAG_GROWN;
            }
            // Record the ray child's edge weight on the ray child itself.
            self.tree.nodes[below as usize].weight = atom_children[marked_slot].weight;
            self.ray.push(vi);
        }
        Ok(())
    }

    /// Neighbors of `v` in the direction of increasing height: off-ray
    /// children plus, for a ray vertex other than the root, the previous
    /// ray vertex.
    pub fn upward_neighbors(&self, v: NodeId) -> (std::ops::Range<NodeId>, Option<NodeId>) {
        let arena = self.tree.children(v);
        match self.ray_index(v) {
            Some(i) if i >= 1 => (arena, Some(self.ray[i - 1])),
            _ => (arena, None),
        }
    }

    /// The decreasing-height neighbor of `v`: the arena parent off the ray,
    /// the next ray vertex (extending the ray if necessary) on it.
    pub fn downward_neighbor(&mut self, v: NodeId) -> Result<NodeId> {
        if let Some(i) = self.ray_index(v) {
            self.extend_ray(i + 1)?;
            Ok(self.ray[i + 1])
        } else {
            Ok(self.tree.node(v).parent)
        }
    }

    pub fn mark(&self) -> (usize, usize) {
        (self.tree.mark(), self.ray.len())
    }

    pub fn truncate(&mut self, mark: (usize, usize)) {
        self.tree.truncate(mark.0);
        self.ray.truncate(mark.1);
    }

    pub fn dump_jsonl(&self, out: &mut dyn Write) -> Result<()> {
        self.tree.dump_jsonl(out, "h")
    }
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}
