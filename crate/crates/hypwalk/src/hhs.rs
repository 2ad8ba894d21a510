//! Finite HHS skeletons, the orthogonality graph of unbounded domains, the
//! iterative coning schedule by largest cliques, factored balls and the
//! fiber-parallelism test for remnants of product regions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::algo::maximal_cliques;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::stream_rng;
use crate::groups::{GroupError, GroupModel, Word};
use crate::spaces::{cone_off, coset_rep, ConeTarget, FiniteGraph, SpaceError, Subgroup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HhsError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid skeleton: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("no fiber descriptor for {0}")]
    MissingFiber(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, HhsError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub unbounded: bool,
    /// Key into a region map naming the coset family to cone.
    pub family: Option<String>,
}

/// Domains with strict nesting, orthogonality and a unique maximal element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HHSSkeleton {
    pub domains: Vec<Domain>,
    pub maximal: usize,
    /// `(u, v)` for `u ⊑ v`, transitively closed, irreflexive.
    nest: BTreeSet<(usize, usize)>,
    /// Symmetric, irreflexive.
    orth: BTreeSet<(usize, usize)>,
}

impl HHSSkeleton {
    /// Builds and validates; every domain is nested into the maximal one.
    pub fn new(
        domains: Vec<Domain>,
        maximal: usize,
        nest: &[(usize, usize)],
        orth: &[(usize, usize)],
    ) -> Result<Self> {
        let n = domains.len();
        if maximal >= n {
            return Err(HhsError::Invalid("maximal domain out of range".into()));
        }
        let mut names = BTreeSet::new();
        for d in &domains {
            if !names.insert(d.name.as_str()) {
                return Err(HhsError::Invalid(format!("duplicate domain {}", d.name)));
            }
        }
        let mut closed: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(u, v) in nest {
            if u >= n || v >= n {
                return Err(HhsError::Invalid("nesting index out of range".into()));
            }
            if v == maximal && u == maximal {
                continue;
            }
            closed.insert((u, v));
        }
        for u in 0..n {
            if u != maximal {
                closed.insert((u, maximal));
            }
        }
        loop {
            let extra: Vec<(usize, usize)> = closed
                .iter()
                .flat_map(|&(a, b)| closed.range((b, 0)..(b + 1, 0)).map(move |&(_, c)| (a, c)))
                .filter(|p| !closed.contains(p))
                .collect();
            if extra.is_empty() {
                break;
            }
            closed.extend(extra);
        }
        if let Some(&(u, _)) = closed.iter().find(|(u, v)| u == v) {
            return Err(HhsError::Invalid(format!("nesting cycle through {}", domains[u].name)));
        }
        if closed.iter().any(|&(u, _)| u == maximal) {
            return Err(HhsError::Invalid("the maximal domain is nested into another".into()));
        }
        let mut o = BTreeSet::new();
        for &(u, v) in orth {
            if u >= n || v >= n {
                return Err(HhsError::Invalid("orthogonality index out of range".into()));
            }
            if u == v {
                return Err(HhsError::Invalid(format!("{} is orthogonal to itself", domains[u].name)));
            }
            if closed.contains(&(u, v)) || closed.contains(&(v, u)) {
                return Err(HhsError::Invalid(format!(
                    "{} and {} are both nested and orthogonal",
                    domains[u].name, domains[v].name
                )));
            }
            o.insert((u, v));
            o.insert((v, u));
        }
        Ok(HHSSkeleton { domains, maximal, nest: closed, orth: o })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn nested(&self, u: usize, v: usize) -> bool {
        self.nest.contains(&(u, v))
    }

    pub fn orthogonal(&self, u: usize, v: usize) -> bool {
        self.orth.contains(&(u, v))
    }

    /// Neither nested nor orthogonal.
    pub fn transverse(&self, u: usize, v: usize) -> bool {
        u != v && !self.nested(u, v) && !self.nested(v, u) && !self.orthogonal(u, v)
    }

    /// Every domain nested into a member of `set`, together with `set`.
    pub fn downward_closure(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = set.clone();
        out.extend(self.nest.iter().filter(|(_, v)| set.contains(v)).map(|(u, _)| *u));
        out
    }

    /// Text form: `domain NAME [max] [bounded] [family=TAG]`, `nest U V`
    /// for `U ⊑ V`, `orth U V`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut domains = Vec::new();
        let mut maximal = None;
        let mut pending: Vec<(usize, bool, String, String)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| HhsError::Syntax { line: ln + 1, msg: msg.into() };
            match toks[0] {
                "domain" => {
                    let name = toks.get(1).ok_or_else(|| err("missing domain name"))?;
                    let mut d = Domain { name: name.to_string(), unbounded: true, family: None };
                    for t in &toks[2..] {
                        match *t {
                            "max" => {
                                if maximal.replace(domains.len()).is_some() {
                                    return Err(err("second maximal domain"));
                                }
                            }
                            "bounded" => d.unbounded = false,
                            "unbounded" => d.unbounded = true,
                            t if t.starts_with("family=") => d.family = Some(t[7..].to_string()),
                            _ => return Err(err(&format!("unknown attribute {t}"))),
                        }
                    }
                    domains.push(d);
                }
                "nest" | "orth" if toks.len() == 3 => {
                    pending.push((ln + 1, toks[0] == "nest", toks[1].into(), toks[2].into()));
                }
                _ => return Err(err("expected domain, nest or orth")),
            }
        }
        let maximal = maximal.ok_or(HhsError::Invalid("no maximal domain".into()))?;
        let find = |line: usize, s: &str| {
            domains
                .iter()
                .position(|d| d.name == s)
                .ok_or(HhsError::Syntax { line, msg: format!("unknown domain {s}") })
        };
        let mut nest = Vec::new();
        let mut orth = Vec::new();
        for (line, is_nest, a, b) in &pending {
            let pair = (find(*line, a)?, find(*line, b)?);
            if *is_nest {
                nest.push(pair);
            } else {
                orth.push(pair);
            }
        }
        Self::new(domains, maximal, &nest, &orth)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, d) in self.domains.iter().enumerate() {
            out.push_str("domain ");
            out.push_str(&d.name);
            if i == self.maximal {
                out.push_str(" max");
            }
            if !d.unbounded {
                out.push_str(" bounded");
            }
            if let Some(f) = &d.family {
                out.push_str(" family=");
                out.push_str(f);
            }
            out.push('\n');
        }
        for &(u, v) in &self.nest {
            if v != self.maximal {
                out.push_str(&format!("nest {} {}\n", self.domains[u].name, self.domains[v].name));
            }
        }
        for &(u, v) in &self.orth {
            if u < v {
                out.push_str(&format!("orth {} {}\n", self.domains[u].name, self.domains[v].name));
            }
        }
        out
    }

    /// An abstract example whose schedule runs through clique numbers
    /// 4, 3, 2 and ends with two isolated non-maximal unbounded domains.
    pub fn figure_example() -> Self {
        Self::parse(FIGURE_SKELETON).expect("shipped skeleton")
    }

    /// `(Z^2 * Z) x Z`: every conjugate of `Z^2` and every free-factor line
    /// is orthogonal to the central direction.
    pub fn product_example() -> Self {
        Self::parse(PRODUCT_SKELETON).expect("shipped skeleton")
    }

    /// Refinement of [`Self::product_example`] with each `Z^2` split into
    /// two orthogonal lines under a bounded container, so rank-3 flats form
    /// the largest cliques and the free-factor lines survive as remnants.
    pub fn product_example_refined() -> Self {
        Self::parse(PRODUCT_SKELETON_REFINED).expect("shipped skeleton")
    }

    /// `F2 x Z`: the tree direction orthogonal to the central direction.
    pub fn f2_times_z_example() -> Self {
        Self::parse(F2Z_SKELETON).expect("shipped skeleton")
    }
}

const FIGURE_SKELETON: &str = "\
domain S max
domain A1
domain A2
domain A3
domain A4
domain E
domain B1
domain B2
domain B3
domain F bounded
domain C1
domain C2
domain D1
domain D2
nest E A1
nest F B1
orth A1 A2
orth A1 A3
orth A1 A4
orth A2 A3
orth A2 A4
orth A3 A4
orth A1 D1
orth B1 B2
orth B1 B3
orth B2 B3
orth B1 D2
orth C1 C2
orth E A2
orth E A3
orth E A4
orth E D1
orth F B2
orth F B3
orth F D2
";

const PRODUCT_SKELETON: &str = "\
domain S max
domain C family=center
domain Z2[e] family=flat
domain Z2[z] family=flat
domain Z2[z^-1] family=flat
domain L[e] family=line
domain L[x] family=line
domain L[y] family=line
orth C Z2[e]
orth C Z2[z]
orth C Z2[z^-1]
orth C L[e]
orth C L[x]
orth C L[y]
";

const PRODUCT_SKELETON_REFINED: &str = "\
domain S max
domain C family=center
domain Z2[e] bounded family=flat
domain X[e] family=flat
domain Y[e] family=flat
domain Z2[z] bounded family=flat
domain X[z] family=flat
domain Y[z] family=flat
domain L[e] family=line
domain L[x] family=line
nest X[e] Z2[e]
nest Y[e] Z2[e]
nest X[z] Z2[z]
nest Y[z] Z2[z]
orth X[e] Y[e]
orth X[z] Y[z]
orth C Z2[e]
orth C X[e]
orth C Y[e]
orth C Z2[z]
orth C X[z]
orth C Y[z]
orth C L[e]
orth C L[x]
";

const F2Z_SKELETON: &str = "\
domain S max
domain T family=tree
domain C family=center
orth T C
";

/// Edges join orthogonal unbounded domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrthGraph {
    pub vertices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl OrthGraph {
    pub fn is_edgeless(&self) -> bool {
        self.edges.is_empty()
    }

    /// Maximum-cardinality cliques and the clique number.
    pub fn largest_cliques(&self) -> (usize, Vec<BTreeSet<usize>>) {
        let mut g: UnGraph<usize, ()> = UnGraph::default();
        let idx: HashMap<usize, NodeIndex> = self.vertices.iter().map(|&v| (v, g.add_node(v))).collect();
        for &(u, v) in &self.edges {
            g.add_edge(idx[&u], idx[&v], ());
        }
        let all: Vec<BTreeSet<usize>> = maximal_cliques(&g)
            .into_iter()
            .map(|c| c.into_iter().map(|n| g[n]).collect())
            .collect();
        let omega = all.iter().map(|c| c.len()).max().unwrap_or(0);
        let mut best: Vec<BTreeSet<usize>> = all.into_iter().filter(|c| c.len() == omega).collect();
        best.sort();
        (omega, best)
    }
}

/// The orthogonality graph restricted to `alive`.
pub fn orth_graph_on(sk: &HHSSkeleton, alive: &BTreeSet<usize>) -> OrthGraph {
    let vertices: Vec<usize> = alive.iter().copied().collect();
    let edges = sk
        .orth
        .iter()
        .filter(|&&(u, v)| {
            u < v && alive.contains(&u) && alive.contains(&v) && sk.domains[u].unbounded && sk.domains[v].unbounded
        })
        .copied()
        .collect();
    OrthGraph { vertices, edges }
}

pub fn orth_graph(sk: &HHSSkeleton) -> OrthGraph {
    orth_graph_on(sk, &(0..sk.len()).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConingRound {
    pub clique_number: usize,
    pub cliques: Vec<Vec<String>>,
    /// `𝒰^i`, the downward closure of the union of largest cliques.
    pub removed: Vec<String>,
    /// Orthogonality graph of what remains.
    pub remaining_edges: Vec<(String, String)>,
    pub remaining: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConingSchedule {
    pub initial_clique_number: usize,
    pub rounds: Vec<ConingRound>,
    /// `𝒰`, everything removed.
    pub removed: Vec<String>,
    /// Isolated unbounded non-maximal domains left at the end.
    pub remnants: Vec<String>,
    pub termination_round: usize,
}

impl ConingSchedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }
}

/// Removes downward closures of largest cliques until no edge is left.
pub fn coning_schedule(sk: &HHSSkeleton) -> ConingSchedule {
    let name = |i: usize| sk.domains[i].name.clone();
    let mut alive: BTreeSet<usize> = (0..sk.len()).collect();
    let mut rounds = Vec::new();
    let mut removed_all = BTreeSet::new();
    let initial = orth_graph(sk).largest_cliques().0;
    loop {
        let g = orth_graph_on(sk, &alive);
        if g.is_edgeless() {
            break;
        }
        let (omega, cliques) = g.largest_cliques();
        let union: BTreeSet<usize> = cliques.iter().flatten().copied().collect();
        let closure: BTreeSet<usize> = sk.downward_closure(&union).intersection(&alive).copied().collect();
        for u in &closure {
            alive.remove(u);
        }
        removed_all.extend(closure.iter().copied());
        let after = orth_graph_on(sk, &alive);
        rounds.push(ConingRound {
            clique_number: omega,
            cliques: cliques.iter().map(|c| c.iter().map(|&i| name(i)).collect()).collect(),
            removed: closure.iter().map(|&i| name(i)).collect(),
            remaining_edges: after.edges.iter().map(|&(u, v)| (name(u), name(v))).collect(),
            remaining: alive.iter().map(|&i| name(i)).collect(),
        });
    }
    let remnants = alive
        .iter()
        .filter(|&&i| i != sk.maximal && sk.domains[i].unbounded)
        .filter(|&&i| removed_all.iter().any(|&r| sk.orthogonal(i, r)))
        .map(|&i| name(i))
        .collect();
    ConingSchedule {
        initial_clique_number: initial,
        termination_round: rounds.len(),
        rounds,
        removed: removed_all.iter().map(|&i| name(i)).collect(),
        remnants,
    }
}

/// A seeded skeleton on `n` domains: `S` plus random nesting from later to
/// earlier domains and random orthogonality between unrelated pairs,
/// inherited by nested domains where consistent.
pub fn random_skeleton(n: usize, seed: u64) -> HHSSkeleton {
    let mut rng = stream_rng(seed, 0);
    let n = n.max(1);
    let domains: Vec<Domain> = (0..n)
        .map(|i| Domain {
            name: if i == 0 { "S".into() } else { format!("U{i}") },
            unbounded: i == 0 || rng.gen_bool(0.8),
            family: None,
        })
        .collect();
    let mut nest = Vec::new();
    for u in 2..n {
        if rng.gen_bool(0.3) {
            nest.push((u, rng.gen_range(1..u)));
        }
    }
    let base = HHSSkeleton::new(domains.clone(), 0, &nest, &[]).expect("acyclic nesting");
    let related = |u: usize, v: usize| u == v || base.nested(u, v) || base.nested(v, u);
    let common_below = |u: usize, v: usize| (1..n).any(|w| base.nested(w, u) && base.nested(w, v));
    let mut orth: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 1..n {
        for v in u + 1..n {
            if !related(u, v) && !common_below(u, v) && rng.gen_bool(0.4) {
                orth.insert((u, v));
            }
        }
    }
    let base = &base;
    let inherited: Vec<(usize, usize)> = orth
        .iter()
        .flat_map(|&(u, v)| {
            (1..n).filter_map(move |w| {
                if base.nested(w, u) {
                    Some((w, v))
                } else if base.nested(w, v) {
                    Some((u, w))
                } else {
                    None
                }
            })
        })
        .filter(|&(a, b)| !related(a, b))
        .collect();
    orth.extend(inherited);
    let orth: Vec<(usize, usize)> = orth.into_iter().collect();
    HHSSkeleton::new(domains, 0, &nest, &orth).expect("consistent by construction")
}

/// Family tag to the subgroup whose cosets realise the family.
pub type RegionMap = BTreeMap<String, Subgroup>;

/// Shipped region map for `(Z^2 * Z) x Z` and `F2 x Z`.
pub fn default_region_map(model: &GroupModel) -> RegionMap {
    let mut m = RegionMap::new();
    match model.descriptor().as_str() {
        "(Z^2 * Z) x Z" => {
            m.insert("flat".into(), Subgroup::FactorCentral(0));
            m.insert("line".into(), Subgroup::FactorCentral(1));
        }
        "F2 x Z" => {
            m.insert("center".into(), Subgroup::Central);
        }
        _ => {}
    }
    m
}

/// Regions coned through round `round` (1-based; 0 cones nothing).
pub fn regions_through(sk: &HHSSkeleton, schedule: &ConingSchedule, round: usize, map: &RegionMap) -> Vec<Subgroup> {
    let mut out: Vec<Subgroup> = Vec::new();
    for r in schedule.rounds.iter().take(round) {
        for name in &r.removed {
            let idx = sk.index_of(name).expect("schedule of this skeleton");
            if let Some(sub) = sk.domains[idx].family.as_ref().and_then(|f| map.get(f)) {
                if !out.contains(sub) {
                    out.push(sub.clone());
                }
            }
        }
    }
    out
}

/// The ball of radius `radius` with every coset of the regions removed up
/// to `round` coned off.
pub fn factored_ball(
    model: &GroupModel,
    radius: usize,
    sk: &HHSSkeleton,
    schedule: &ConingSchedule,
    round: usize,
    map: &RegionMap,
) -> Result<FiniteGraph> {
    if round > schedule.rounds.len() {
        return Err(HhsError::Precondition(format!("schedule has {} rounds", schedule.rounds.len())));
    }
    let subs = regions_through(sk, schedule, round, map);
    let targets: Vec<ConeTarget> = subs.into_iter().map(ConeTarget::AllCosets).collect();
    let mut g = cone_off(model, radius, &targets)?;
    g.meta.coning = format!("round {round}: {}", g.meta.coning);
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiberVerdict {
    SameProductRegion,
    Far,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberReport {
    pub factored_distance: usize,
    pub sweep: Vec<usize>,
    pub hausdorff: Vec<usize>,
    pub verdict: FiberVerdict,
}

fn fiber(model: &GroupModel, x: &Word, gens: &[Word], r: usize) -> Vec<Word> {
    let depth = r + x.len();
    let mut seen: BTreeSet<Word> = BTreeSet::from([Word::identity()]);
    let mut layer = vec![Word::identity()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for h in &layer {
            for g in gens {
                for step in [g.clone(), model.inverse(g)] {
                    let k = model.mul(h, &step);
                    if seen.insert(k.clone()) {
                        next.push(k);
                    }
                }
            }
        }
        layer = next;
    }
    seen.iter().map(|h| model.mul(x, h)).filter(|w| w.len() <= r).collect()
}

fn hausdorff(model: &GroupModel, a: &[Word], b: &[Word]) -> usize {
    let one = |p: &[Word], q: &[Word]| {
        p.iter().map(|x| q.iter().map(|y| model.dist(x, y)).min().unwrap_or(usize::MAX)).max().unwrap_or(0)
    };
    one(a, b).max(one(b, a))
}

/// Compares truncated fibers `x H ∩ B(R)` and `y H ∩ B(R)` over the sweep:
/// bounded factored distance and constant Hausdorff distance give "same
/// product region", growing Hausdorff distance gives "far".
pub fn fiber_parallelism_check(
    model: &GroupModel,
    factored: &FiniteGraph,
    fiber_sub: Option<&Subgroup>,
    x: &Word,
    y: &Word,
    c: usize,
    sweep: &[usize],
) -> Result<FiberReport> {
    let sub = fiber_sub.ok_or_else(|| HhsError::MissingFiber(model.format_word(x)))?;
    if sweep.len() < 2 {
        return Err(HhsError::Precondition("need at least two radii".into()));
    }
    let vx = factored.vertex_of(x).ok_or_else(|| SpaceError::ForeignPoint(model.format_word(x)))?;
    let vy = factored.vertex_of(y).ok_or_else(|| SpaceError::ForeignPoint(model.format_word(y)))?;
    let fd = factored.distances_from(vx)[vy] as usize;
    let gens = sub.generators(model)?;
    let mut hd = Vec::new();
    for &r in sweep {
        if r < x.len().max(y.len()) {
            return Err(HhsError::Precondition(format!("radius {r} excludes x or y")));
        }
        let fx = fiber(model, x, &gens, r);
        let fy = fiber(model, y, &gens, r);
        hd.push(hausdorff(model, &fx, &fy));
    }
    let constant = hd.windows(2).all(|w| w[0] == w[1]);
    let growing = hd.windows(2).all(|w| w[1] > w[0]);
    let verdict = if constant && fd <= c {
        FiberVerdict::SameProductRegion
    } else if growing {
        FiberVerdict::Far
    } else {
        FiberVerdict::Inconclusive
    };
    Ok(FiberReport { factored_distance: fd, sweep: sweep.to_vec(), hausdorff: hd, verdict })
}

/// Summary of `d_factored - d_BS` over free-factor-separated pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BassSerreComparison {
    pub points: usize,
    pub cosets: usize,
    pub pairs: usize,
    pub min_gap: i64,
    pub max_gap: i64,
    pub tol: usize,
    pub violations: usize,
    pub witness: Option<(String, String, u32, u32)>,
}

/// Compares factored-ball distances with Bass–Serre tree distances on every
/// pair `g, h` whose quotient `g^-1 h`, central part dropped, has at least
/// two syllables. Tree distances come from BFS on the finite coset tree
/// spanned by the ball, with one edge `g A_0 -- g A_1` per point.
pub fn factored_vs_bass_serre(model: &GroupModel, factored: &FiniteGraph, tol: usize) -> Result<BassSerreComparison> {
    let inner = model.central_quotient().unwrap_or(model);
    if inner.factors().len() != 2 {
        return Err(HhsError::Precondition(format!("{} is not a two-factor free product", inner.descriptor())));
    }
    let labels = factored.labels();
    let mut ids: [HashMap<Word, usize>; 2] = [HashMap::new(), HashMap::new()];
    let mut side = [Vec::with_capacity(labels.len()), Vec::with_capacity(labels.len())];
    for g in labels {
        let h = model.split_central(g).map_or_else(|| g.clone(), |(h, _)| h);
        for f in 0..2 {
            let rep = coset_rep(inner, &h, f);
            let n = ids[f].len();
            side[f].push(*ids[f].entry(rep).or_insert(n));
        }
    }
    let (n0, n1) = (ids[0].len(), ids[1].len());
    let mut adj = vec![Vec::new(); n0 + n1];
    let edges: BTreeSet<(usize, usize)> = (0..labels.len()).map(|v| (side[0][v], n0 + side[1][v])).collect();
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let tree: Vec<Vec<u32>> = (0..n0)
        .into_par_iter()
        .map(|s| {
            let mut d = vec![u32::MAX; n0 + n1];
            let mut q = std::collections::VecDeque::from([s]);
            d[s] = 0;
            while let Some(v) = q.pop_front() {
                for &w in &adj[v] {
                    if d[w] == u32::MAX {
                        d[w] = d[v] + 1;
                        q.push_back(w);
                    }
                }
            }
            d.truncate(n0);
            d
        })
        .collect();
    type Acc = (usize, i64, i64, usize, Option<(usize, usize, u32, u32)>);
    let merge = |a: Acc, b: Acc| -> Acc {
        (a.0 + b.0, a.1.min(b.1), a.2.max(b.2), a.3 + b.3, a.4.or(b.4))
    };
    let (pairs, min_gap, max_gap, violations, wit) = (0..labels.len())
        .into_par_iter()
        .map(|v| {
            let row = factored.distances_from(v);
            let mut acc: Acc = (0, i64::MAX, i64::MIN, 0, None);
            for w in v + 1..labels.len() {
                if side[0][v] == side[0][w] || side[1][v] == side[1][w] {
                    continue;
                }
                let dt = tree[side[0][v]][side[0][w]];
                let gap = row[w] as i64 - dt as i64;
                acc.0 += 1;
                acc.1 = acc.1.min(gap);
                acc.2 = acc.2.max(gap);
                if gap.unsigned_abs() as usize > tol {
                    acc.3 += 1;
                    acc.4.get_or_insert((v, w, row[w], dt));
                }
            }
            acc
        })
        .reduce(|| (0, i64::MAX, i64::MIN, 0, None), merge);
    Ok(BassSerreComparison {
        points: labels.len(),
        cosets: n0 + n1,
        pairs,
        min_gap,
        max_gap,
        tol,
        violations,
        witness: wit.map(|(v, w, a, b)| (model.format_word(&labels[v]), model.format_word(&labels[w]), a, b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[String]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }

    #[test]
    fn validation() {
        assert!(HHSSkeleton::parse("domain S max\ndomain U\north U U\n").is_err());
        assert!(HHSSkeleton::parse("domain S max\ndomain U\ndomain V\nnest U V\north U V\n").is_err());
        assert!(HHSSkeleton::parse("domain S\ndomain U\n").is_err());
        assert!(HHSSkeleton::parse("domain S max\ndomain U\ndomain V\nnest U V\nnest V U\n").is_err());
        let sk = HHSSkeleton::figure_example();
        assert_eq!(HHSSkeleton::parse(&sk.to_text()).unwrap(), sk);
    }

    #[test]
    fn edgeless_and_triangle() {
        let sk = HHSSkeleton::parse("domain S max\ndomain U\ndomain V\n").unwrap();
        assert!(orth_graph(&sk).is_edgeless());
        let s = coning_schedule(&sk);
        assert!(s.rounds.is_empty() && s.removed.is_empty());
        let sk = HHSSkeleton::parse(
            "domain S max\ndomain U1\ndomain U2\ndomain U3\ndomain N\ndomain V\nnest N U1\north U1 U2\north U1 U3\north U2 U3\n",
        )
        .unwrap();
        let s = coning_schedule(&sk);
        assert_eq!(s.rounds.len(), 1);
        assert_eq!(names(&s.removed), ["U1", "U2", "U3", "N"]);
    }

    #[test]
    fn figure_schedule() {
        let sk = HHSSkeleton::figure_example();
        let s = coning_schedule(&sk);
        let omegas: Vec<usize> = s.rounds.iter().map(|r| r.clique_number).collect();
        assert_eq!(omegas, [4, 3, 2]);
        assert!(s.termination_round < s.initial_clique_number);
        assert_eq!(names(&s.rounds[0].removed), ["A1", "A2", "A3", "A4", "E"]);
        assert_eq!(names(&s.rounds[1].removed), ["B1", "B2", "B3", "F"]);
        assert!(s.rounds[2].remaining_edges.is_empty());
        assert_eq!(names(&s.remnants), ["D1", "D2"]);
        let mut alive: BTreeSet<usize> = (0..sk.len()).collect();
        for r in &s.rounds {
            let set: BTreeSet<usize> = r.removed.iter().map(|n| sk.index_of(n).unwrap()).collect();
            let closed: BTreeSet<usize> = sk.downward_closure(&set).intersection(&alive).copied().collect();
            assert_eq!(closed, set);
            alive = alive.difference(&set).copied().collect();
        }
    }

    #[test]
    fn product_skeleton_graph() {
        let sk = HHSSkeleton::product_example();
        let g = orth_graph(&sk);
        let c = sk.index_of("C").unwrap();
        assert_eq!(g.edges.len(), 6);
        assert!(g.edges.iter().all(|&(u, v)| u == c || v == c));
        let s = coning_schedule(&sk);
        assert_eq!(s.rounds.len(), 1);
        let refined = coning_schedule(&HHSSkeleton::product_example_refined());
        assert_eq!(refined.initial_clique_number, 3);
        assert_eq!(names(&refined.remnants), ["L[e]", "L[x]"]);
    }

    #[test]
    fn f2_times_z_fibers() {
        let m = GroupModel::parse("F2 x Z").unwrap();
        let sk = HHSSkeleton::f2_times_z_example();
        let s = coning_schedule(&sk);
        let map = default_region_map(&m);
        let g0 = factored_ball(&m, 4, &sk, &s, 0, &map).unwrap();
        let g1 = factored_ball(&m, 4, &sk, &s, 1, &map).unwrap();
        let f2 = GroupModel::parse("F2").unwrap();
        let e = g1.vertex_of(&Word::identity()).unwrap();
        let d1 = g1.distances_from(e);
        let d0 = g0.distances_from(e);
        for (i, w) in g1.labels().iter().enumerate() {
            let (base, _) = m.split_central(w).unwrap();
            let df = f2.normal_form(base.letters()).unwrap().len();
            assert!(d1[i] as usize == df || d1[i] as usize == df + 1);
            assert!(d1[i] <= d0[i]);
        }
    }

    #[test]
    fn fibers_verdicts() {
        let m = GroupModel::parse("(Z^2 * Z) x Z").unwrap();
        let sk = HHSSkeleton::product_example();
        let s = coning_schedule(&sk);
        let map = default_region_map(&m);
        let g = factored_ball(&m, 4, &sk, &s, 1, &map).unwrap();
        let w = |t: &str| m.parse_word(t).unwrap();
        let sub = Subgroup::Factor(0);
        let r = fiber_parallelism_check(&m, &g, Some(&sub), &w("e"), &w("x t"), 4, &[4, 6, 8]).unwrap();
        assert_eq!(r.verdict, FiberVerdict::SameProductRegion);
        let r = fiber_parallelism_check(&m, &g, Some(&sub), &w("x"), &w("x"), 4, &[4, 6]).unwrap();
        assert_eq!(r.verdict, FiberVerdict::SameProductRegion);
        let r = fiber_parallelism_check(&m, &g, Some(&sub), &w("e"), &w("z x z"), 4, &[4, 6, 8]).unwrap();
        assert_eq!(r.verdict, FiberVerdict::Far, "{r:?}");
        assert!(fiber_parallelism_check(&m, &g, None, &w("e"), &w("x"), 4, &[4, 6]).is_err());
    }

    #[test]
    fn factored_tracks_bass_serre() {
        let m = GroupModel::parse("(Z^2 * Z) x Z").unwrap();
        let sk = HHSSkeleton::product_example();
        let s = coning_schedule(&sk);
        let g = factored_ball(&m, 3, &sk, &s, s.rounds.len(), &default_region_map(&m)).unwrap();
        let c = factored_vs_bass_serre(&m, &g, 2).unwrap();
        assert_eq!(c.violations, 0);
        let rho = crate::spaces::OrbitMap::bass_serre(m.clone()).unwrap();
        let inner = m.central_quotient().unwrap();
        let (mut lo, mut hi, mut n) = (i64::MAX, i64::MIN, 0);
        for (v, x) in g.labels().iter().enumerate() {
            let row = g.distances_from(v);
            for (w, y) in g.labels().iter().enumerate().skip(v + 1) {
                let q = m.split_central(&m.quotient(x, y)).unwrap().0;
                if inner.syllables(&q).len() < 2 {
                    continue;
                }
                let gap = row[w] as i64 - rho.dist(x, y).unwrap() as i64;
                lo = lo.min(gap);
                hi = hi.max(gap);
                n += 1;
            }
        }
        assert_eq!((c.pairs, c.min_gap, c.max_gap), (n, lo, hi));
        assert!(factored_vs_bass_serre(&GroupModel::parse("F2").unwrap(), &g, 2).is_err());
    }

    #[test]
    fn random_schedules_terminate() {
        for seed in 0..50 {
            let sk = random_skeleton(12, seed);
            let s = coning_schedule(&sk);
            assert!(s.termination_round <= s.initial_clique_number);
            let omegas: Vec<usize> = s.rounds.iter().map(|r| r.clique_number).collect();
            assert!(omegas.windows(2).all(|w| w[1] < w[0]));
            assert_eq!(HHSSkeleton::parse(&sk.to_text()).unwrap(), sk);
        }
    }
}
