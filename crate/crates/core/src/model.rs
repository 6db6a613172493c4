//! Offspring models for multi-type branching trees.
//!
//! A model is a finite type alphabet together with one finite-support
//! offspring law per type. An atom of a law is a probability and an ordered
//! list of children, each child carrying a type and a positive edge weight
//! (weight 1 unless the file says otherwise).
//!
//! This module owns everything that can be computed from the model alone:
//! mean matrices, the Perron eigenvalue and eigenvectors, the type chain
//! seen along a distinguished ray and its stationary law, the size-biased
//! ("inflated") offspring law, extinction probabilities, the conditioned-on-
//! survival transform, and the one-parameter family of weighted mean
//! matrices used by the recurrence/transience classifier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{MgwError, Result};
use crate::linalg;

/// Index into `Model::types`.
pub type TypeId = usize;

/// Tolerance for per-type probability sums in a model file.
pub const PROB_SUM_TOL: f64 = 1e-9;
/// Convergence tolerance for the power iteration eigenvalue estimate.
pub const EIG_TOL: f64 = 1e-12;
/// Iteration cap for the power iteration.
pub const EIG_MAX_ITERS: usize = 1_000_000;
/// Convergence tolerance (sup norm) for the extinction fixed point.
pub const EXTINCTION_TOL: f64 = 1e-14;
/// Iteration cap for the extinction fixed point.
pub const EXTINCTION_MAX_ITERS: usize = 1_000_000;

/// One child slot of an offspring atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Child {
    pub ty: TypeId,
    pub weight: f64,
}

/// One atom of an offspring law: a configuration drawn with probability `p`.
#[derive(Clone, Debug)]
pub struct Atom {
    pub p: f64,
    pub children: Vec<Child>,
    /// Number of children of each type (indexed by `TypeId`).
    pub counts: Vec<u32>,
    /// Total edge weight of children of each type.
    pub weight_mass: Vec<f64>,
}

impl Atom {
    fn new(p: f64, children: Vec<Child>, q: usize) -> Self {
        let mut counts = vec![0u32; q];
        let mut weight_mass = vec![0.0; q];
        for c in &children {
            counts[c.ty] += 1;
            weight_mass[c.ty] += c.weight;
        }
        Atom {
            p,
            children,
            counts,
            weight_mass,
        }
    }

    pub fn size(&self) -> usize {
        self.children.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.children.iter().map(|c| c.weight).sum()
    }
}

/// Offspring law of a single type, with cached cumulative probabilities.
#[derive(Clone, Debug)]
pub struct OffspringLaw {
    pub atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl OffspringLaw {
    fn new(atoms: Vec<Atom>) -> Self {
        let cumulative = cumulative_from(atoms.iter().map(|a| a.p));
        OffspringLaw { atoms, cumulative }
    }

    /// Index of the atom selected by a uniform draw `u` in [0, 1).
    pub fn pick(&self, u: f64) -> usize {
        pick_cumulative(&self.cumulative, u)
    }
}

fn cumulative_from(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cum.last_mut() {
        *last = f64::max(*last, 1.0);
    }
    cum
}

fn pick_cumulative(cum: &[f64], u: f64) -> usize {
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => i.min(cum.len() - 1),
    }
}

/// Whether per-child edge weights enter the mean matrix and the walk.
/// `Unit` treats every edge as weight 1 regardless of the file contents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    Unit,
    Weighted,
}

impl Flavor {
    /// Exponent applied to edge weights in the mean matrix.
    pub fn gamma(self) -> f64 {
        match self {
            Flavor::Unit => 0.0,
            Flavor::Weighted => 1.0,
        }
    }
}

/// A validated offspring model.
#[derive(Clone, Debug)]
pub struct Model {
    pub types: Vec<String>,
    pub laws: Vec<OffspringLaw>,
    /// True if any edge weight differs from 1.
    pub has_weights: bool,
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ModelFile {
    types: Vec<String>,
    offspring: BTreeMap<String, Vec<AtomFile>>,
}

#[derive(Deserialize)]
struct AtomFile {
    p: ProbValue,
    children: Vec<ChildFile>,
}

/// Probabilities may be JSON numbers or decimal strings (the latter lets a
/// file state "0.1" without worrying about repeated-addition drift tests).
#[derive(Deserialize)]
#[serde(untagged)]
enum ProbValue {
    Num(f64),
    Text(String),
}

impl ProbValue {
    fn value(&self) -> Result<f64> {
        match self {
            ProbValue::Num(x) => Ok(*x),
            ProbValue::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|e| MgwError::Model(format!("bad probability {s:?}: {e}"))),
        }
    }
}

#[derive(Deserialize)]
struct ChildFile {
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    w: Option<f64>,
}

impl Model {
    pub fn load(path: &std::path::Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        Model::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text)?;
        let q = file.types.len();
        if q == 0 {
            return Err(MgwError::Model("empty type alphabet".into()));
        }
        let mut index = BTreeMap::new();
        for (i, name) in file.types.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(MgwError::Model(format!("duplicate type {name:?}")));
            }
        }
        let mut laws = Vec::with_capacity(q);
        for name in &file.types {
            let atoms_file = file
                .offspring
                .get(name)
                .ok_or_else(|| MgwError::Model(format!("no offspring law for type {name:?}")))?;
            let mut atoms = Vec::with_capacity(atoms_file.len());
            for af in atoms_file {
                let p = af.p.value()?;
                let children = af
                    .children
                    .iter()
                    .map(|cf| {
                        let ty = *index.get(&cf.ty).ok_or_else(|| {
                            MgwError::Model(format!("unknown child type {:?}", cf.ty))
                        })?;
                        Ok(Child {
                            ty,
                            weight: cf.w.unwrap_or(1.0),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                atoms.push(Atom::new(p, children, q));
            }
            laws.push(OffspringLaw::new(atoms));
        }
        for extra in file.offspring.keys() {
            if !index.contains_key(extra) {
                return Err(MgwError::Model(format!(
                    "offspring law for undeclared type {extra:?}"
                )));
            }
        }
        let has_weights = laws
            .iter()
            .flat_map(|l| l.atoms.iter())
            .flat_map(|a| a.children.iter())
            .any(|c| c.weight != 1.0);
        let model = Model {
            types: file.types,
            laws,
            has_weights,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut offspring = serde_json::Map::new();
        for (name, law) in self.types.iter().zip(&self.laws) {
            let atoms: Vec<_> = law
                .atoms
                .iter()
                .map(|a| {
                    let children: Vec<_> = a
                        .children
                        .iter()
                        .map(|c| {
                            if c.weight == 1.0 {
                                json!({"type": self.types[c.ty]})
                            } else {
                                json!({"type": self.types[c.ty], "w": c.weight})
                            }
                        })
                        .collect();
                    json!({"p": a.p, "children": children})
                })
                .collect();
            offspring.insert(name.clone(), serde_json::Value::Array(atoms));
        }
        json!({"types": self.types, "offspring": offspring})
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn flavor(&self) -> Flavor {
        if self.has_weights {
            Flavor::Weighted
        } else {
            Flavor::Unit
        }
    }

    /// Structural and spectral sanity: probabilities form distributions,
    /// weights are positive, the mean matrix is irreducible and acquires a
    /// strictly positive power within `2 q^2` steps, and the branching is
    /// supercritical.
    pub fn validate(&self) -> Result<()> {
        let q = self.type_count();
        for (name, law) in self.types.iter().zip(&self.laws) {
            if law.atoms.is_empty() {
                return Err(MgwError::Model(format!("type {name:?} has no atoms")));
            }
            let mut sum = 0.0;
            for a in &law.atoms {
                if !(a.p >= 0.0 && a.p <= 1.0) {
                    return Err(MgwError::Model(format!(
                        "type {name:?} has atom probability {} outside [0,1]",
                        a.p
                    )));
                }
                sum += a.p;
                for c in &a.children {
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(MgwError::Model(format!(
                            "type {name:?} has non-positive child weight {}",
                            c.weight
                        )));
                    }
                }
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(MgwError::Model(format!(
                    "type {name:?} probabilities sum to {sum}, not 1"
                )));
            }
        }

        let a = self.mean_matrix(self.flavor().gamma());
        let pattern: Vec<Vec<bool>> = a
            .iter()
            .map(|row| row.iter().map(|&x| x > 0.0).collect())
            .collect();
        if !linalg::strongly_connected(&pattern) {
            return Err(MgwError::Model("mean matrix is not irreducible".into()));
        }
        if !linalg::pattern_power_all_positive(&pattern, 2 * q * q) {
            return Err(MgwError::Model(
                "mean matrix has no strictly positive power (period > 1 up to 2q^2)".into(),
            ));
        }
        let pf = perron_frobenius(&a)?;
        if pf.rho <= 1.0 {
            return Err(MgwError::Model(format!(
                "branching is not supercritical (spectral radius {})",
                pf.rho
            )));
        }
        Ok(())
    }

    /// Mean matrix with edge weights raised to `gamma`:
    /// entry (a, b) is the expected total `weight^gamma` of type-b children
    /// of a type-a vertex. `gamma = 0` counts children; for unit-weight
    /// models every `gamma` gives the plain mean offspring matrix.
    pub fn mean_matrix(&self, gamma: f64) -> Vec<Vec<f64>> {
        let q = self.type_count();
        self.laws
            .iter()
            .map(|law| {
                let mut row = vec![0.0; q];
                for atom in &law.atoms {
                    for c in &atom.children {
                        row[c.ty] += atom.p * c.weight.powf(gamma);
                    }
                }
                row
            })
            .collect()
    }

    /// Spectral data for the flavor the model will be walked with.
    pub fn spectral(&self, flavor: Flavor) -> Result<SpectralData> {
        self.spectral_gamma(flavor.gamma())
    }

    /// Spectral data of the `gamma`-weighted mean matrix.
    pub fn spectral_gamma(&self, gamma: f64) -> Result<SpectralData> {
        let matrix = self.mean_matrix(gamma);
        let pf = perron_frobenius(&matrix)?;
        let q = self.type_count();
        let mut ray_kernel = vec![vec![0.0; q]; q];
        for a in 0..q {
            for b in 0..q {
                ray_kernel[a][b] = pf.right[b] * matrix[a][b] / (pf.rho * pf.right[a]);
            }
        }
        let rl = linalg::dot(&pf.right, &pf.left);
        let stationary: Vec<f64> = pf
            .right
            .iter()
            .zip(&pf.left)
            .map(|(r, l)| r * l / rl)
            .collect();
        Ok(SpectralData {
            matrix,
            rho: pf.rho,
            right: pf.right,
            left: pf.left,
            ray_kernel,
            stationary,
            gamma,
        })
    }

    /// Size-biased offspring law: each atom reweighted by the right-
    /// eigenvector mass of its children. The empty configuration gets
    /// probability zero.
    pub fn inflated_law(&self, sd: &SpectralData) -> InflatedLaw {
        let flavor = if sd.gamma == 0.0 {
            Flavor::Unit
        } else {
            Flavor::Weighted
        };
        let rows = self
            .laws
            .iter()
            .map(|law| {
                let weights: Vec<f64> = law
                    .atoms
                    .iter()
                    .map(|atom| atom.p * size_bias_factor(atom, &sd.right, flavor))
                    .collect();
                normalize_exact(weights)
            })
            .collect();
        InflatedLaw::new(rows)
    }

    /// Probability generating function of the offspring counts, evaluated
    /// at `s` (one coordinate per type). Edge weights play no role here.
    pub fn generating_function(&self, s: &[f64]) -> Vec<f64> {
        self.laws
            .iter()
            .map(|law| {
                law.atoms
                    .iter()
                    .map(|atom| {
                        let prod: f64 = atom
                            .counts
                            .iter()
                            .zip(s)
                            .map(|(&c, &sb)| sb.powi(c as i32))
                            .product();
                        atom.p * prod
                    })
                    .sum()
            })
            .collect()
    }

    /// Per-type extinction probabilities: the minimal fixed point of the
    /// generating function, reached by iterating from zero.
    pub fn extinction_probs(&self) -> Result<ExtinctionData> {
        let q = self.type_count();
        let mut s = vec![0.0; q];
        for iter in 1..=EXTINCTION_MAX_ITERS {
            let next = self.generating_function(&s);
            let diff = next
                .iter()
                .zip(&s)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            s = next;
            if diff < EXTINCTION_TOL {
                return Ok(ExtinctionData {
                    probs: s,
                    iterations: iter,
                });
            }
        }
        Err(MgwError::Numeric(
            "extinction fixed point did not converge".into(),
        ))
    }

    /// Offspring model of the tree of vertices with infinite lines of
    /// descent. Atom by atom, each child survives independently with its
    /// type's survival probability; every nonempty survivor set becomes an
    /// atom of the new law, conditioned on at least one survivor.
    pub fn infinite_descent_transform(&self, ext: &ExtinctionData) -> Result<Model> {
        let q = self.type_count();
        let mut laws = Vec::with_capacity(q);
        for (a, law) in self.laws.iter().enumerate() {
            let survive_a = 1.0 - ext.probs[a];
            if survive_a <= 0.0 {
                return Err(MgwError::Model(format!(
                    "type {:?} dies out almost surely; nothing to condition on",
                    self.types[a]
                )));
            }
            // Configurations are unordered for law purposes: merge survivor
            // sets that induce the same multiset of (type, weight) children.
            let mut merged: BTreeMap<Vec<(usize, u64)>, (f64, Vec<Child>)> = BTreeMap::new();
            for atom in &law.atoms {
                let k = atom.size();
                if k > 24 {
                    return Err(MgwError::Model(format!(
                        "atom with {k} children is too large to transform by enumeration"
                    )));
                }
                for mask in 1u32..(1 << k) {
                    let mut p = atom.p;
                    let mut survivors = Vec::new();
                    for (j, c) in atom.children.iter().enumerate() {
                        let x = ext.probs[c.ty];
                        if mask & (1 << j) != 0 {
                            p *= 1.0 - x;
                            survivors.push(*c);
                        } else {
                            p *= x;
                        }
                    }
                    if p == 0.0 {
                        continue;
                    }
                    let mut key: Vec<(usize, u64)> = survivors
                        .iter()
                        .map(|c| (c.ty, c.weight.to_bits()))
                        .collect();
                    key.sort_unstable();
                    let entry = merged.entry(key).or_insert((0.0, survivors));
                    entry.0 += p / survive_a;
                }
            }
            let atoms: Vec<Atom> = merged
                .into_values()
                .map(|(p, children)| Atom::new(p, children, q))
                .collect();
            laws.push(OffspringLaw::new(atoms));
        }
        let model = Model {
            types: self.types.clone(),
            laws,
            has_weights: self.has_weights,
        };
        model.validate()?;
        Ok(model)
    }

    /// Per-type atom probabilities of the offspring law conditioned on the
    /// whole subtree dying out: the original law tilted by the extinction
    /// probabilities of all children. `None` for types that survive almost
    /// surely (no conditioned law exists; it is never needed either).
    pub fn extinct_tilted_atom_probs(&self, ext: &ExtinctionData) -> Vec<Option<Vec<f64>>> {
        self.laws
            .iter()
            .enumerate()
            .map(|(a, law)| {
                let xa = ext.probs[a];
                if xa <= 0.0 {
                    return None;
                }
                let weights: Vec<f64> = law
                    .atoms
                    .iter()
                    .map(|atom| {
                        let tilt: f64 = atom.children.iter().map(|c| ext.probs[c.ty]).product();
                        atom.p * tilt / xa
                    })
                    .collect();
                Some(normalize_exact(weights))
            })
            .collect()
    }

    /// Evaluator for the spectral radius of the `gamma`-weighted mean
    /// matrix as a function of `gamma`.
    pub fn gamma_curve(&self) -> GammaCurve<'_> {
        GammaCurve { model: self }
    }
}

/// Contribution of one atom to the size-biased reweighting: total
/// right-eigenvector mass of its children (weighted by edge weight for the
/// weighted flavor).
pub fn size_bias_factor(atom: &Atom, right: &[f64], flavor: Flavor) -> f64 {
    match flavor {
        Flavor::Unit => atom
            .counts
            .iter()
            .zip(right)
            .map(|(&c, r)| f64::from(c) * r)
            .sum(),
        Flavor::Weighted => atom
            .weight_mass
            .iter()
            .zip(right)
            .map(|(m, r)| m * r)
            .sum(),
    }
}

/// Rescales nonnegative weights to probabilities that sum to exactly 1.0 in
/// floating point (the largest entry absorbs the rounding residue).
fn normalize_exact(mut weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "cannot normalize all-zero weights");
    for w in &mut weights {
        *w /= total;
    }
    let (imax, _) = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let others: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, w)| w)
        .sum();
    weights[imax] = 1.0 - others;
    weights
}

/// Eigendata of a mean matrix.
#[derive(Clone, Debug)]
pub struct PerronData {
    pub rho: f64,
    /// Right eigenvector, normalized to sum 1.
    pub right: Vec<f64>,
    /// Left eigenvector, normalized to sum 1.
    pub left: Vec<f64>,
    pub iterations: usize,
}

/// Perron eigenvalue and eigenvectors of a nonnegative irreducible matrix
/// by power iteration. Iterates on (A + I)/2, which is primitive whenever A
/// is irreducible, so periodic matrices converge too; the eigenvalue is
/// mapped back by rho = 2 rho' - 1 and the eigenvectors are shared.
pub fn perron_frobenius(a: &[Vec<f64>]) -> Result<PerronData> {
    let n = a.len();
    if n == 0 {
        return Err(MgwError::Model("empty matrix".into()));
    }
    let shifted: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &x)| (x + if i == j { 1.0 } else { 0.0 }) / 2.0)
                .collect()
        })
        .collect();

    let iterate = |transpose: bool| -> Result<(f64, Vec<f64>, usize)> {
        let mut v = vec![1.0 / n as f64; n];
        let mut lambda = 0.0;
        for iter in 1..=EIG_MAX_ITERS {
            let w = if transpose {
                linalg::mat_tvec(&shifted, &v)
            } else {
                linalg::mat_vec(&shifted, &v)
            };
            let sum: f64 = w.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(MgwError::Numeric("power iteration degenerated".into()));
            }
            let next: Vec<f64> = w.iter().map(|x| x / sum).collect();
            let vec_diff = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let lam_diff = (sum - lambda).abs();
            lambda = sum;
            v = next;
            if lam_diff < EIG_TOL && vec_diff < EIG_TOL {
                return Ok((lambda, v, iter));
            }
        }
        Err(MgwError::NonConvergence(EIG_MAX_ITERS))
    };

    let (lam_r, right, it_r) = iterate(false)?;
    let (lam_l, left, it_l) = iterate(true)?;
    let rho = 2.0 * 0.5 * (lam_r + lam_l) - 1.0;
    Ok(PerronData {
        rho,
        right,
        left,
        iterations: it_r.max(it_l),
    })
}

/// Spectral summary of a mean matrix: eigenvalue, eigenvectors, the type
/// chain along a distinguished ray, and its stationary law.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    pub matrix: Vec<Vec<f64>>,
    pub rho: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    /// Kernel of the type chain read top-down along a ray:
    /// entry (a, b) = right[b] * matrix\[a\]\[b\] / (rho * right[a]).
    pub ray_kernel: Vec<Vec<f64>>,
    /// Stationary law of `ray_kernel`, proportional to right * left.
    pub stationary: Vec<f64>,
    pub gamma: f64,
}

impl SpectralData {
    /// Kernel of the ray type chain read bottom-up (from a vertex towards
    /// the ray's far end). Reversal of `ray_kernel` with respect to the
    /// stationary law; simplifies to left[b] * matrix\[b\]\[a\] / (rho * left[a]).
    pub fn reversed_kernel(&self) -> Vec<Vec<f64>> {
        let q = self.right.len();
        let mut rk = vec![vec![0.0; q]; q];
        for a in 0..q {
            for b in 0..q {
                rk[a][b] = self.left[b] * self.matrix[b][a] / (self.rho * self.left[a]);
            }
        }
        rk
    }

    /// Mean total offspring weight of a type-a vertex (row sum).
    pub fn row_sum(&self, a: TypeId) -> f64 {
        self.matrix[a].iter().sum()
    }

    /// Mean of `right` under the canonical root mixture `left`.
    pub fn mean_right_under_left(&self) -> f64 {
        linalg::dot(&self.right, &self.left)
    }
}

/// Size-biased offspring law: per-type atom probabilities parallel to the
/// model's atoms, plus cached cumulatives for sampling.
#[derive(Clone, Debug)]
pub struct InflatedLaw {
    pub atom_probs: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl InflatedLaw {
    fn new(atom_probs: Vec<Vec<f64>>) -> Self {
        let cumulative = atom_probs
            .iter()
            .map(|row| cumulative_from(row.iter().copied()))
            .collect();
        InflatedLaw {
            atom_probs,
            cumulative,
        }
    }

    pub fn pick(&self, ty: TypeId, u: f64) -> usize {
        pick_cumulative(&self.cumulative[ty], u)
    }
}

/// Extinction probabilities and how many fixed-point iterations they took.
#[derive(Clone, Debug, Serialize)]
pub struct ExtinctionData {
    pub probs: Vec<f64>,
    pub iterations: usize,
}

/// Spectral radius of the `gamma`-weighted mean matrix as a function of
/// `gamma`. Strictly log-convex in `gamma` for genuinely weighted models;
/// constant for unit-weight ones.
pub struct GammaCurve<'a> {
    model: &'a Model,
}

impl GammaCurve<'_> {
    pub fn rho_bar(&self, gamma: f64) -> Result<f64> {
        Ok(perron_frobenius(&self.model.mean_matrix(gamma))?.rho)
    }

    pub fn spectral(&self, gamma: f64) -> Result<SpectralData> {
        self.model.spectral_gamma(gamma)
    }

    /// Checks log-convexity of the curve on a uniform grid over
    /// `[lo, hi]` by second differences (up to `slack`).
    pub fn log_convex_on_grid(&self, lo: f64, hi: f64, points: usize, slack: f64) -> Result<bool> {
        assert!(points >= 3);
        let step = (hi - lo) / (points - 1) as f64;
        let vals: Vec<f64> = (0..points)
            .map(|i| self.rho_bar(lo + step * i as f64).map(f64::ln))
            .collect::<Result<_>>()?;
        Ok(vals
            .windows(3)
            .all(|w| w[0] - 2.0 * w[1] + w[2] >= -slack))
    }
}
