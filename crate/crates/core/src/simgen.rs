//! Synthetic ground truth: graph topologies, precision matrices supported on them,
//! structural priors with controlled mis-specification, and Gaussian time series.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, n_pairs, upper_pairs, PrecisionEstimate, StructuralPrior, TimeSeriesData};

/// Minimum eigenvalue guaranteed by [`gen_precision`].
pub const PD_MARGIN: f64 = 0.1;
const MIN_ABS_WEIGHT: f64 = 1e-6;

/// Independent seed for stream `stream` of a master seed (SplitMix64 finaliser).
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    #[serde(alias = "er")]
    ErdosRenyi,
    #[serde(alias = "sw")]
    SmallWorld,
    #[serde(alias = "sf")]
    ScaleFree,
}

impl GraphKind {
    pub fn short_name(self) -> &'static str {
        match self {
            GraphKind::ErdosRenyi => "er",
            GraphKind::SmallWorld => "sw",
            GraphKind::ScaleFree => "sf",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "er" | "erdos_renyi" => Ok(GraphKind::ErdosRenyi),
            "sw" | "small_world" => Ok(GraphKind::SmallWorld),
            "sf" | "scale_free" => Ok(GraphKind::ScaleFree),
            other => Err(Error::input(format!("unknown graph structure '{other}' (expected er, sw or sf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTopology {
    pub kind: GraphKind,
    pub p: usize,
    pub er_prob: f64,
    pub sw_neighbors: usize,
    pub sw_rewire: f64,
    pub sf_attach: usize,
    pub seed: u64,
}

impl GraphTopology {
    pub fn new(kind: GraphKind, p: usize, seed: u64) -> Self {
        Self {
            kind,
            p,
            er_prob: 0.15,
            sw_neighbors: 2,
            sw_rewire: 0.1,
            sf_attach: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 3 {
            return Err(Error::input(format!("graph needs at least 3 nodes, got {}", self.p)));
        }
        for (name, v) in [("er_prob", self.er_prob), ("sw_rewire", self.sw_rewire)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.kind == GraphKind::SmallWorld && (self.sw_neighbors == 0 || 2 * self.sw_neighbors >= self.p) {
            return Err(Error::input("small-world needs 1 <= neighbors < p/2"));
        }
        if self.kind == GraphKind::ScaleFree && (self.sf_attach == 0 || self.sf_attach >= self.p) {
            return Err(Error::input("scale-free needs 1 <= attach < p"));
        }
        Ok(())
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Sorted list of unordered edges `(j, k)` with `j < k`.
pub fn gen_graph(topo: &GraphTopology) -> Result<Vec<(usize, usize)>> {
    topo.validate()?;
    let mut rng = rng(topo.seed);
    let p = topo.p;
    let edges: BTreeSet<(usize, usize)> = match topo.kind {
        GraphKind::ErdosRenyi => upper_pairs(p).filter(|_| rng.random::<f64>() < topo.er_prob).collect(),
        GraphKind::SmallWorld => {
            let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
            let mut lattice = Vec::new();
            for d in 1..=topo.sw_neighbors {
                for i in 0..p {
                    let j = (i + d) % p;
                    adj[i].insert(j);
                    adj[j].insert(i);
                    lattice.push((i, j));
                }
            }
            for (i, j) in lattice {
                if rng.random::<f64>() >= topo.sw_rewire {
                    continue;
                }
                if adj[i].len() + 1 >= p {
                    continue;
                }
                let target = loop {
                    let r = rng.random_range(0..p);
                    if r != i && !adj[i].contains(&r) {
                        break r;
                    }
                };
                adj[i].remove(&j);
                adj[j].remove(&i);
                adj[i].insert(target);
                adj[target].insert(i);
            }
            adj.iter()
                .enumerate()
                .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
                .collect()
        }
        GraphKind::ScaleFree => {
            let m = topo.sf_attach;
            let mut edges = BTreeSet::new();
            // seed clique on m + 1 nodes; `ends` lists each node once per incident edge
            let mut ends = Vec::new();
            for a in 0..=m {
                for b in a + 1..=m {
                    edges.insert((a, b));
                    ends.push(a);
                    ends.push(b);
                }
            }
            for new in m + 1..p {
                let mut targets = BTreeSet::new();
                while targets.len() < m {
                    targets.insert(ends[rng.random_range(0..ends.len())]);
                }
                for t in targets {
                    edges.insert(ordered(t, new));
                    ends.push(t);
                    ends.push(new);
                }
            }
            edges
        }
    };
    Ok(edges.into_iter().collect())
}

/// Precision matrix with unit diagonal and Uniform(−1, 1) weights on `graph`, shifted along
/// the diagonal so that its smallest eigenvalue is at least [`PD_MARGIN`].
pub fn gen_precision(graph: &[(usize, usize)], p: usize, seed: u64) -> Result<PrecisionEstimate> {
    let mut rng = rng(seed);
    let mut om = DMatrix::<f64>::identity(p, p);
    for &(j, k) in graph {
        if j >= p || k >= p || j == k {
            return Err(Error::input(format!("edge ({j}, {k}) invalid for p = {p}")));
        }
        let v = loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= MIN_ABS_WEIGHT {
                break v;
            }
        };
        om[(j, k)] = v;
        om[(k, j)] = v;
    }
    let lmin = model::min_eigenvalue(&om);
    if lmin < PD_MARGIN {
        let shift = PD_MARGIN - lmin;
        for i in 0..p {
            om[(i, i)] += shift;
        }
    }
    PrecisionEstimate::new(om)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    MI,
    MII,
}

impl Scenario {
    /// Probabilities that a strong-FC edge gets strong / moderate / weak SC.
    pub fn strong_fc_mix(self) -> [f64; 3] {
        match self {
            Scenario::MI => [0.50, 0.25, 0.25],
            Scenario::MII => [0.30, 0.35, 0.35],
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MI" => Ok(Scenario::MI),
            "MII" => Ok(Scenario::MII),
            other => Err(Error::input(format!("unknown scenario '{other}' (expected MI or MII)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScSpec {
    pub scenario: Scenario,
    /// Fraction of non-edges that receive nonzero SC.
    pub misspec_frac: f64,
    pub seed: u64,
}

impl ScSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.misspec_frac) {
            return Err(Error::input(format!(
                "misspecification fraction must be in [0, 1], got {}",
                self.misspec_frac
            )));
        }
        Ok(())
    }
}

const STRONG_SC: (f64, f64) = (0.7, 1.0);
const MODERATE_SC: (f64, f64) = (0.3, 0.7);
const WEAK_SC: (f64, f64) = (0.0, 0.3);
const MISSPEC_SC: (f64, f64) = (0.3, 1.0);

/// FC strength class of a true edge (terciles of |partial correlation|).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcClass {
    Strong,
    Moderate,
    Weak,
}

/// Classifies the edges of `omega_true` into |partial correlation| terciles.
pub fn fc_classes(omega_true: &PrecisionEstimate) -> Result<Vec<((usize, usize), FcClass)>> {
    let pc = model::partial_correlation(omega_true)?;
    let mut edges: Vec<(usize, usize)> = omega_true.edge_set().to_vec();
    edges.sort_by(|a, b| pc[*b].abs().total_cmp(&pc[*a].abs()).then(a.cmp(b)));
    let n = edges.len();
    let (c1, c2) = (n.div_ceil(3), (2 * n).div_ceil(3));
    Ok(edges
        .into_iter()
        .enumerate()
        .map(|(r, e)| {
            let class = if r < c1 {
                FcClass::Strong
            } else if r < c2 {
                FcClass::Moderate
            } else {
                FcClass::Weak
            };
            (e, class)
        })
        .collect())
}

pub fn gen_sc(omega_true: &PrecisionEstimate, spec: &ScSpec) -> Result<StructuralPrior> {
    spec.validate()?;
    let p = omega_true.dim();
    if omega_true.n_edges() < 3 {
        return Err(Error::input(format!(
            "structural prior needs at least 3 true edges, got {}",
            omega_true.n_edges()
        )));
    }
    let mut rng = rng(spec.seed);
    let mut sc = DMatrix::<f64>::zeros(p, p);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..hi);
    let mix = spec.scenario.strong_fc_mix();

    for ((j, k), class) in fc_classes(omega_true)? {
        let range = match class {
            FcClass::Strong => {
                let u: f64 = rng.random();
                if u < mix[0] {
                    STRONG_SC
                } else if u < mix[0] + mix[1] {
                    MODERATE_SC
                } else {
                    WEAK_SC
                }
            }
            FcClass::Moderate => MODERATE_SC,
            FcClass::Weak => WEAK_SC,
        };
        let v = draw(&mut rng, range);
        sc[(j, k)] = v;
        sc[(k, j)] = v;
    }

    let edges: BTreeSet<(usize, usize)> = omega_true.edge_set().iter().copied().collect();
    let non_edges: Vec<(usize, usize)> = upper_pairs(p).filter(|e| !edges.contains(e)).collect();
    let n_mis = (spec.misspec_frac * non_edges.len() as f64).round() as usize;
    let mut picked: Vec<usize> = index::sample(&mut rng, non_edges.len(), n_mis).into_vec();
    picked.sort_unstable();
    for i in picked {
        let (j, k) = non_edges[i];
        let v = draw(&mut rng, MISSPEC_SC);
        sc[(j, k)] = v;
        sc[(k, j)] = v;
    }
    StructuralPrior::new(sc)
}

/// `T` i.i.d. rows from `N(0, Ω⁻¹)`.
pub fn sample_timeseries(omega_true: &PrecisionEstimate, t: usize, seed: u64) -> Result<TimeSeriesData> {
    if t < 2 {
        return Err(Error::input("need at least 2 time points"));
    }
    let p = omega_true.dim();
    let sigma = model::cholesky(omega_true.matrix())
        .ok_or_else(|| Error::Invariant("precision matrix lost positive definiteness".into()))?
        .inverse();
    let l = model::cholesky(&sigma)
        .ok_or_else(|| Error::Invariant("covariance is not positive definite".into()))?
        .l();
    let mut rng = rng(seed);
    let mut y = DMatrix::<f64>::zeros(t, p);
    let mut z = DVector::<f64>::zeros(p);
    for row in 0..t {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for c in 0..p {
            y[(row, c)] = x[c];
        }
    }
    TimeSeriesData::new(y, None)
}

/// Everything needed to generate one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub structure: GraphKind,
    pub p: usize,
    pub t: usize,
    pub scenario: Scenario,
    pub misspec_frac: f64,
    pub seed: u64,
}

/// Derived per-stage seeds recorded alongside a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub graph: u64,
    pub precision: u64,
    pub sc: u64,
    pub timeseries: u64,
}

impl SimulationSpec {
    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds {
            graph: stream_seed(self.seed, 0),
            precision: stream_seed(self.seed, 1),
            sc: stream_seed(self.seed, 2),
            timeseries: stream_seed(self.seed, 3),
        }
    }

    pub fn topology(&self) -> GraphTopology {
        GraphTopology::new(self.structure, self.p, self.stage_seeds().graph)
    }

    pub fn sc_spec(&self) -> ScSpec {
        ScSpec {
            scenario: self.scenario,
            misspec_frac: self.misspec_frac,
            seed: self.stage_seeds().sc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub graph: Vec<(usize, usize)>,
    pub omega_true: PrecisionEstimate,
    pub sc: StructuralPrior,
    pub timeseries: TimeSeriesData,
}

pub fn generate(spec: &SimulationSpec) -> Result<GroundTruth> {
    generate_with(&spec.topology(), &spec.sc_spec(), spec.t, spec.stage_seeds())
}

pub fn generate_with(topo: &GraphTopology, sc_spec: &ScSpec, t: usize, seeds: StageSeeds) -> Result<GroundTruth> {
    let graph = gen_graph(topo)?;
    let omega_true = gen_precision(&graph, topo.p, seeds.precision)?;
    let sc = gen_sc(&omega_true, sc_spec)?;
    let timeseries = sample_timeseries(&omega_true, t, seeds.timeseries)?;
    Ok(GroundTruth {
        graph,
        omega_true,
        sc,
        timeseries,
    })
}

/// Problems found by [`verify`]; empty when the bundle is consistent.
pub fn verify(truth: &GroundTruth, misspec_frac: Option<f64>) -> Vec<String> {
    let mut problems = Vec::new();
    let p = truth.omega_true.dim();
    if truth.omega_true.edge_set() != truth.graph.as_slice() {
        problems.push("precision support differs from the graph".to_string());
    }
    let sc = truth.sc.matrix();
    if sc.nrows() != p || truth.timeseries.n_regions() != p {
        problems.push("component dimensions disagree".to_string());
        return problems;
    }
    if model::min_eigenvalue(truth.omega_true.matrix()) < PD_MARGIN - 1e-10 {
        problems.push("precision matrix eigenvalue margin violated".to_string());
    }
    for i in 0..p {
        if sc[(i, i)] != 0.0 {
            problems.push(format!("SC diagonal entry {i} is nonzero"));
        }
        for j in 0..p {
            if sc[(i, j)] != sc[(j, i)] {
                problems.push(format!("SC not symmetric at ({i}, {j})"));
            }
            if !(0.0..=1.0).contains(&sc[(i, j)]) {
                problems.push(format!("SC entry ({i}, {j}) outside [0, 1]"));
            }
        }
    }
    if let Some(frac) = misspec_frac {
        let edges: BTreeSet<(usize, usize)> = truth.graph.iter().copied().collect();
        let non_edges = n_pairs(p) - edges.len();
        let flagged = upper_pairs(p).filter(|e| !edges.contains(e) && sc[*e] > 0.0).count();
        if non_edges > 0 {
            let realised = flagged as f64 / non_edges as f64;
            if (realised - frac).abs() > 1.0 / non_edges as f64 {
                problems.push(format!(
                    "misspecified fraction {realised:.4} differs from requested {frac:.4}"
                ));
            }
        }
    }
    problems
}
