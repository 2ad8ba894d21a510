//! Hyperbolic-space models with a basepoint and an orbit map.
//!
//! Cayley trees of free groups and Bass–Serre trees of free products answer
//! distance queries by exact formulas. Finite graphs (coned-off balls) use
//! breadth-first search; coning is a diameter-one completion, stored as
//! cliques instead of explicit edges.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{GroupError, GroupModel, Letter, ModelKind, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("point is not in the model: {0}")]
    ForeignPoint(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("graph is not connected")]
    Disconnected,
    #[error("need at least four points, got {0}")]
    TooFewPoints(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed adjacency text on line {0}")]
    AdjacencySyntax(usize),
}

pub type Result<T> = std::result::Result<T, SpaceError>;

/// A point of a space model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Point {
    Elem(Word),
    /// The coset `rep * A_factor`, with `rep` canonical.
    Coset { rep: Word, factor: usize },
    Vertex(usize),
}

#[derive(Clone, Debug)]
pub enum SpaceModel {
    CayleyTree(GroupModel),
    BassSerreTree(GroupModel),
    Finite(FiniteGraph),
}

/// Strips the trailing syllable of `g` lying in `factor`.
pub fn coset_rep(model: &GroupModel, g: &Word, factor: usize) -> Word {
    let syl = model.syllables(g);
    match syl.last() {
        Some(&(f, start, _)) if f == factor => g.prefix(start),
        _ => g.clone(),
    }
}

impl SpaceModel {
    pub fn cayley_tree(model: GroupModel) -> Result<Self> {
        match model.kind() {
            ModelKind::FreeGroup(_) => Ok(SpaceModel::CayleyTree(model)),
            _ => Err(SpaceError::Mismatch(format!("{model} is not a free group"))),
        }
    }

    pub fn bass_serre(model: GroupModel) -> Result<Self> {
        match model.kind() {
            ModelKind::FreeProduct(_) => Ok(SpaceModel::BassSerreTree(model)),
            _ => Err(SpaceError::Mismatch(format!("{model} is not a free product"))),
        }
    }

    pub fn basepoint(&self) -> Point {
        match self {
            SpaceModel::CayleyTree(_) => Point::Elem(Word::identity()),
            SpaceModel::BassSerreTree(_) => Point::Coset { rep: Word::identity(), factor: 0 },
            SpaceModel::Finite(g) => Point::Vertex(g.basepoint),
        }
    }

    pub fn is_tree(&self) -> bool {
        !matches!(self, SpaceModel::Finite(_))
    }

    /// Exact graph distance.
    pub fn distance(&self, x: &Point, y: &Point) -> Result<usize> {
        match (self, x, y) {
            (SpaceModel::CayleyTree(m), Point::Elem(a), Point::Elem(b)) => {
                Ok(m.word_distance(a, b)?)
            }
            (
                SpaceModel::BassSerreTree(m),
                Point::Coset { rep: a, factor: i },
                Point::Coset { rep: b, factor: j },
            ) => {
                let n = m.factors().len();
                if *i >= n || *j >= n {
                    return Err(SpaceError::ForeignPoint(format!("factor index {i} or {j}")));
                }
                m.check(a)?;
                m.check(b)?;
                Ok(bass_serre_distance(m, a, *i, b, *j))
            }
            (SpaceModel::Finite(g), Point::Vertex(a), Point::Vertex(b)) => {
                if *a >= g.len() || *b >= g.len() {
                    return Err(SpaceError::ForeignPoint(format!("vertex {a} or {b}")));
                }
                Ok(g.distances_from(*a)[*b] as usize)
            }
            _ => Err(SpaceError::ForeignPoint(format!("{x:?} / {y:?}"))),
        }
    }

    /// Left action of the group on points of a tree model.
    pub fn act(&self, g: &Word, x: &Point) -> Result<Point> {
        match (self, x) {
            (SpaceModel::CayleyTree(m), Point::Elem(a)) => Ok(Point::Elem(m.mul(g, a))),
            (SpaceModel::BassSerreTree(m), Point::Coset { rep, factor }) => {
                let h = m.mul(g, rep);
                Ok(Point::Coset { rep: coset_rep(m, &h, *factor), factor: *factor })
            }
            _ => Err(SpaceError::Mismatch("no group action on this model".into())),
        }
    }
}

/// Distance between `a A_i` and `b A_j` in the Bass–Serre tree. Two factors
/// give the bipartite coset tree; three or more give the star tree with a
/// vertex per element, where every distance doubles.
pub(crate) fn bass_serre_distance(m: &GroupModel, a: &Word, i: usize, b: &Word, j: usize) -> usize {
    let k = m.quotient(a, b);
    let syl = m.syllables(&k);
    let mut lo = 0;
    let mut hi = syl.len();
    if hi > 0 && syl[0].0 == i {
        lo = 1;
    }
    if hi > lo && syl[hi - 1].0 == j {
        hi -= 1;
    }
    let rem = hi - lo;
    let d = if rem == 0 {
        usize::from(i != j)
    } else {
        rem + 1
    };
    if m.factors().len() >= 3 {
        2 * d
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitRule {
    Identity,
    /// `G x Z -> G`, then the identity on the Cayley tree of `G`.
    DropCentral,
    /// `g -> g A_factor`, optionally after dropping a central factor.
    Coset { factor: usize, drop_central: bool },
    /// Finite-graph label lookup.
    Lookup,
}

/// An orbit map `g -> g x0`.
#[derive(Clone, Debug)]
pub struct OrbitMap {
    pub group: GroupModel,
    pub space: SpaceModel,
    pub rule: OrbitRule,
}

impl OrbitMap {
    /// Free groups act on their Cayley tree; `F x Z` acts through `F`.
    pub fn cayley_tree(group: GroupModel) -> Result<Self> {
        match group.kind() {
            ModelKind::FreeGroup(_) => Ok(OrbitMap {
                space: SpaceModel::cayley_tree(group.clone())?,
                group,
                rule: OrbitRule::Identity,
            }),
            ModelKind::DirectProduct(inner) if matches!(inner.kind(), ModelKind::FreeGroup(_)) => {
                Ok(OrbitMap {
                    space: SpaceModel::cayley_tree((**inner).clone())?,
                    group,
                    rule: OrbitRule::DropCentral,
                })
            }
            _ => Err(SpaceError::Mismatch(format!("{group} has no Cayley-tree model"))),
        }
    }

    /// Free products (possibly times `Z`) act on the Bass–Serre tree,
    /// with basepoint the coset of the first factor.
    pub fn bass_serre(group: GroupModel) -> Result<Self> {
        match group.kind() {
            ModelKind::FreeProduct(_) => Ok(OrbitMap {
                space: SpaceModel::bass_serre(group.clone())?,
                group,
                rule: OrbitRule::Coset { factor: 0, drop_central: false },
            }),
            ModelKind::DirectProduct(inner)
                if matches!(inner.kind(), ModelKind::FreeProduct(_)) =>
            {
                Ok(OrbitMap {
                    space: SpaceModel::bass_serre((**inner).clone())?,
                    group,
                    rule: OrbitRule::Coset { factor: 0, drop_central: true },
                })
            }
            _ => Err(SpaceError::Mismatch(format!("{group} has no Bass–Serre model"))),
        }
    }

    /// Orbit map into a labelled finite graph built from a ball.
    pub fn finite(group: GroupModel, graph: FiniteGraph) -> Self {
        OrbitMap { group, space: SpaceModel::Finite(graph), rule: OrbitRule::Lookup }
    }

    fn drop(&self, g: &Word) -> Word {
        match self.group.split_central(g) {
            Some((h, _)) => h,
            None => g.clone(),
        }
    }

    pub fn apply(&self, g: &Word) -> Result<Point> {
        match (&self.rule, &self.space) {
            (OrbitRule::Identity, _) => Ok(Point::Elem(g.clone())),
            (OrbitRule::DropCentral, _) => Ok(Point::Elem(self.drop(g))),
            (OrbitRule::Coset { factor, drop_central }, SpaceModel::BassSerreTree(m)) => {
                let h = if *drop_central { self.drop(g) } else { g.clone() };
                Ok(Point::Coset { rep: coset_rep(m, &h, *factor), factor: *factor })
            }
            (OrbitRule::Lookup, SpaceModel::Finite(graph)) => graph
                .vertex_of(g)
                .map(Point::Vertex)
                .ok_or_else(|| SpaceError::ForeignPoint(self.group.format_word(g))),
            _ => Err(SpaceError::Mismatch("orbit rule does not fit the space".into())),
        }
    }

    pub fn basepoint(&self) -> Result<Point> {
        self.apply(&Word::identity())
    }

    /// `d_X(g x0, h x0)`.
    pub fn dist(&self, g: &Word, h: &Word) -> Result<usize> {
        match (&self.rule, &self.space) {
            (OrbitRule::Identity, SpaceModel::CayleyTree(m)) => Ok(m.dist(g, h)),
            (OrbitRule::Coset { factor, drop_central }, SpaceModel::BassSerreTree(m)) => {
                let (a, b) = if *drop_central {
                    (self.drop(g), self.drop(h))
                } else {
                    (g.clone(), h.clone())
                };
                Ok(bass_serre_distance(m, &a, *factor, &b, *factor))
            }
            _ => {
                let x = self.apply(g)?;
                let y = self.apply(h)?;
                self.space.distance(&x, &y)
            }
        }
    }

    /// Distance from an orbit point to an arbitrary point of the space.
    pub fn dist_to_point(&self, g: &Word, p: &Point) -> Result<usize> {
        let x = self.apply(g)?;
        self.space.distance(&x, p)
    }

    /// Largest displacement of the basepoint by a generator.
    pub fn lipschitz_constant(&self) -> Result<usize> {
        let e = Word::identity();
        let mut k = 0;
        for l in self.group.letters() {
            let s = self.group.generator(l)?;
            k = k.max(self.dist(&e, &s)?);
        }
        Ok(k)
    }

    /// `d_X(rho(g h), g rho(h))`; zero for an equivariant action.
    pub fn equivariance_defect(&self, g: &Word, h: &Word) -> Result<usize> {
        let gh = self.group.mul(g, h);
        let lhs = self.apply(&gh)?;
        let gx = match self.rule {
            OrbitRule::DropCentral | OrbitRule::Coset { drop_central: true, .. } => self.drop(g),
            _ => g.clone(),
        };
        let rhs = self.space.act(&gx, &self.apply(h)?)?;
        self.space.distance(&lhs, &rhs)
    }
}

/// Four-point defect summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub quadruples: u64,
    pub exhaustive: bool,
    pub points: usize,
}

/// Points up to which quadruples are enumerated exhaustively.
pub const DELTA_EXHAUSTIVE_LIMIT: usize = 200;
/// Sampled quadruples for larger point sets.
pub const DELTA_SAMPLES: usize = 2_000_000;

fn four_point(d: &[Vec<u32>], i: usize, j: usize, k: usize, l: usize) -> u32 {
    let mut s = [d[i][j] + d[k][l], d[i][k] + d[j][l], d[i][l] + d[j][k]];
    s.sort_unstable();
    s[2] - s[1]
}

/// Gromov four-point defect of a distance matrix, returned as `2 * delta`.
pub fn delta_from_matrix(d: &[Vec<u32>], seed: u64) -> Result<DeltaEstimate> {
    let n = d.len();
    if n < 4 {
        return Err(SpaceError::TooFewPoints(n));
    }
    if n <= DELTA_EXHAUSTIVE_LIMIT {
        let (best, count) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best = 0;
                let mut count = 0u64;
                for j in i + 1..n {
                    for k in j + 1..n {
                        for l in k + 1..n {
                            best = best.max(four_point(d, i, j, k, l));
                            count += 1;
                        }
                    }
                }
                (best, count)
            })
            .reduce(|| (0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
        return Ok(DeltaEstimate {
            delta: best as f64 / 2.0,
            quadruples: count,
            exhaustive: true,
            points: n,
        });
    }
    let chunks = 64usize;
    let per = DELTA_SAMPLES / chunks;
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut best = 0;
            for _ in 0..per {
                let q: [usize; 4] = std::array::from_fn(|_| rng.gen_range(0..n));
                best = best.max(four_point(d, q[0], q[1], q[2], q[3]));
            }
            best
        })
        .max()
        .unwrap_or(0);
    Ok(DeltaEstimate {
        delta: best as f64 / 2.0,
        quadruples: (per * chunks) as u64,
        exhaustive: false,
        points: n,
    })
}

/// Four-point estimate on a set of points of a space.
pub fn delta_estimate(space: &SpaceModel, points: &[Point], seed: u64) -> Result<DeltaEstimate> {
    if points.len() < 4 {
        return Err(SpaceError::TooFewPoints(points.len()));
    }
    let d = match space {
        SpaceModel::Finite(g) => {
            let ids = points
                .iter()
                .map(|p| match p {
                    Point::Vertex(v) if *v < g.len() => Ok(*v),
                    _ => Err(SpaceError::ForeignPoint(format!("{p:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            ids.par_iter()
                .map(|&a| {
                    let row = g.distances_from(a);
                    ids.iter().map(|&b| row[b]).collect()
                })
                .collect::<Vec<Vec<u32>>>()
        }
        _ => points
            .par_iter()
            .map(|a| {
                points
                    .iter()
                    .map(|b| space.distance(a, b).map(|x| x as u32))
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?,
    };
    delta_from_matrix(&d, seed)
}

/// A subgroup whose cosets can be coned off.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subgroup {
    Cyclic(Word),
    /// A free-product factor.
    Factor(usize),
    /// The central `Z` of `G x Z`.
    Central,
    /// A free-product factor times the central `Z`.
    FactorCentral(usize),
}

impl Subgroup {
    /// Generating words.
    pub fn generators(&self, model: &GroupModel) -> Result<Vec<Word>> {
        let fp = match model.kind() {
            ModelKind::DirectProduct(inner) => inner.as_ref(),
            _ => model,
        };
        let factor_gens = |i: usize| -> Result<Vec<Word>> {
            let f = fp
                .factors()
                .get(i)
                .ok_or_else(|| SpaceError::Mismatch(format!("{model} has no factor {i}")))?;
            Ok((f.base()..f.base() + f.rank())
                .map(|g| Word::from_normal(vec![Letter::pos(g)]))
                .collect())
        };
        let central = || -> Result<Word> {
            model
                .central_gen()
                .map(|c| Word::from_normal(vec![Letter::pos(c)]))
                .ok_or_else(|| SpaceError::Mismatch(format!("{model} has no central factor")))
        };
        match self {
            Subgroup::Cyclic(r) => {
                model.check(r)?;
                if r.is_identity() {
                    return Err(SpaceError::Precondition("cyclic subgroup of the identity".into()));
                }
                Ok(vec![r.clone()])
            }
            Subgroup::Factor(i) => factor_gens(*i),
            Subgroup::Central => Ok(vec![central()?]),
            Subgroup::FactorCentral(i) => {
                let mut g = factor_gens(*i)?;
                g.push(central()?);
                Ok(g)
            }
        }
    }

    pub fn describe(&self, model: &GroupModel) -> String {
        match self {
            Subgroup::Cyclic(r) => format!("<{}>", model.format_word(r)),
            Subgroup::Factor(i) => format!("A{i}"),
            Subgroup::Central => "Z(center)".into(),
            Subgroup::FactorCentral(i) => format!("A{i} x Z"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeTarget {
    Coset { rep: Word, sub: Subgroup },
    AllCosets(Subgroup),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub radius: Option<usize>,
    pub coning: String,
    pub coned: Vec<String>,
    pub warnings: Vec<String>,
}

/// A connected finite graph. Cliques stand for complete subgraphs added by
/// coning and are expanded lazily during search.
#[derive(Clone, Debug)]
pub struct FiniteGraph {
    adj: Vec<Vec<usize>>,
    cliques: Vec<Vec<usize>>,
    member: Vec<Vec<usize>>,
    labels: Vec<Word>,
    index: HashMap<Word, usize>,
    pub basepoint: usize,
    pub meta: GraphMeta,
}

impl FiniteGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(SpaceError::ForeignPoint(format!("edge ({a},{b})")));
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        let g = FiniteGraph {
            adj,
            cliques: Vec::new(),
            member: vec![Vec::new(); n],
            labels: Vec::new(),
            index: HashMap::new(),
            basepoint: 0,
            meta: GraphMeta { coning: "none".into(), ..GraphMeta::default() },
        };
        g.require_connected()?;
        Ok(g)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    fn require_connected(&self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.distances_from(0).iter().any(|&d| d == u32::MAX) {
            return Err(SpaceError::Disconnected);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn labels(&self) -> &[Word] {
        &self.labels
    }

    pub fn vertex_of(&self, w: &Word) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    /// Breadth-first distances; unreachable vertices get `u32::MAX`.
    pub fn distances_from(&self, src: usize) -> Vec<u32> {
        let n = self.len();
        let mut dist = vec![u32::MAX; n];
        let mut used = vec![false; self.cliques.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v] + 1;
            for &w in &self.adj[v] {
                if dist[w] == u32::MAX {
                    dist[w] = dv;
                    queue.push_back(w);
                }
            }
            for &c in &self.member[v] {
                if !used[c] {
                    used[c] = true;
                    for &w in &self.cliques[c] {
                        if dist[w] == u32::MAX {
                            dist[w] = dv;
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        dist
    }

    /// Distances from a set of sources at once.
    pub fn distances_from_set(&self, sources: &[usize]) -> Vec<u32> {
        let n = self.len();
        let mut dist = vec![u32::MAX; n];
        let mut used = vec![false; self.cliques.len()];
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            if dist[s] == u32::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let dv = dist[v] + 1;
            for &w in &self.adj[v] {
                if dist[w] == u32::MAX {
                    dist[w] = dv;
                    queue.push_back(w);
                }
            }
            for &c in &self.member[v] {
                if !used[c] {
                    used[c] = true;
                    for &w in &self.cliques[c] {
                        if dist[w] == u32::MAX {
                            dist[w] = dv;
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        dist
    }

    pub fn all_pairs(&self) -> Vec<Vec<u32>> {
        (0..self.len()).into_par_iter().map(|v| self.distances_from(v)).collect()
    }

    /// Neighbours including clique partners, sorted.
    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out = self.adj[v].clone();
        for &c in &self.member[v] {
            out.extend(self.cliques[c].iter().copied().filter(|&w| w != v));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// One line per vertex: its id followed by its neighbour ids.
    pub fn to_adjacency_text(&self) -> String {
        let mut s = String::new();
        for v in 0..self.len() {
            let _ = write!(s, "{v}");
            for w in self.neighbours(v) {
                let _ = write!(s, " {w}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_adjacency_text(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| SpaceError::AdjacencySyntax(lineno + 1)))
                .collect::<Result<Vec<_>>>()?;
            rows.push((nums[0], nums[1..].to_vec()));
        }
        let n = rows.iter().map(|(v, ns)| ns.iter().fold(*v, |m, &w| m.max(w)) + 1).max().unwrap_or(0);
        let edges: Vec<(usize, usize)> =
            rows.iter().flat_map(|(v, ns)| ns.iter().map(move |&w| (*v, w))).collect();
        Self::from_edges(n, &edges)
    }
}

/// Word-metric ball with the given cosets coned to diameter one.
pub fn cone_off(model: &GroupModel, radius: usize, targets: &[ConeTarget]) -> Result<FiniteGraph> {
    let labels = model.ball(&Word::identity(), radius)?;
    let index: HashMap<Word, usize> =
        labels.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    let gens = model.letters();
    let adj: Vec<Vec<usize>> = labels
        .par_iter()
        .map(|w| {
            let mut row: Vec<usize> =
                gens.iter().filter_map(|&l| index.get(&model.mul_letter(w, l)).copied()).collect();
            row.sort_unstable();
            row
        })
        .collect();
    let mut meta = GraphMeta {
        radius: Some(radius),
        coning: "diameter-1 completion".into(),
        ..GraphMeta::default()
    };
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    for t in targets {
        let found = match t {
            ConeTarget::Coset { rep, sub } => {
                let members = coset_members(model, radius, &index, rep, sub)?;
                meta.coned.push(format!("{} {}", model.format_word(rep), sub.describe(model)));
                if members.is_empty() {
                    meta.warnings.push(format!(
                        "coset {} {} misses the ball; skipped",
                        model.format_word(rep),
                        sub.describe(model)
                    ));
                    Vec::new()
                } else {
                    vec![members]
                }
            }
            ConeTarget::AllCosets(sub) => {
                meta.coned.push(format!("all cosets of {}", sub.describe(model)));
                all_coset_components(model, &labels, &index, sub)?
            }
        };
        cliques.extend(found.into_iter().filter(|c| c.len() >= 2));
    }
    let mut member = vec![Vec::new(); labels.len()];
    for (ci, c) in cliques.iter().enumerate() {
        for &v in c {
            member[v].push(ci);
        }
    }
    Ok(FiniteGraph { adj, cliques, member, labels, index, basepoint: 0, meta })
}

fn coset_members(
    model: &GroupModel,
    radius: usize,
    index: &HashMap<Word, usize>,
    rep: &Word,
    sub: &Subgroup,
) -> Result<Vec<usize>> {
    model.check(rep)?;
    let gens = sub.generators(model)?;
    let mut out = Vec::new();
    if let Subgroup::Cyclic(r) = sub {
        let bound = radius + rep.len();
        for dir in [r.clone(), model.inverse(r)] {
            let mut acc = Word::identity();
            loop {
                if let Some(&v) = index.get(&model.mul(rep, &acc)) {
                    out.push(v);
                }
                acc = model.mul(&acc, &dir);
                if acc.len() > bound {
                    break;
                }
            }
        }
    } else {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![Word::identity()];
        seen.insert(Word::identity());
        let all: Vec<Word> = gens.iter().flat_map(|g| [g.clone(), model.inverse(g)]).collect();
        while let Some(k) = stack.pop() {
            let w = model.mul(rep, &k);
            if let Some(&v) = index.get(&w) {
                out.push(v);
            }
            if k.len() > radius + rep.len() {
                continue;
            }
            for g in &all {
                let k2 = model.mul(&k, g);
                if seen.insert(k2.clone()) {
                    stack.push(k2);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn all_coset_components(
    model: &GroupModel,
    labels: &[Word],
    index: &HashMap<Word, usize>,
    sub: &Subgroup,
) -> Result<Vec<Vec<usize>>> {
    let gens = sub.generators(model)?;
    let all: Vec<Word> = gens.iter().flat_map(|g| [g.clone(), model.inverse(g)]).collect();
    let mut parent: Vec<usize> = (0..labels.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (i, w) in labels.iter().enumerate() {
        for g in &all {
            if let Some(&j) = index.get(&model.mul(w, g)) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..labels.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|c| c.len() >= 2).collect();
    out.sort();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Bounded,
    Growing,
}

/// Observed fibre-intersection diameters per truncation radius.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparationProfile {
    pub pairs: Vec<(usize, usize)>,
    pub verdict: Verdict,
    pub r: usize,
    pub s: usize,
}

/// For each truncation `R`, the word-metric diameter of
/// `N_s(rho^-1 B_r(x)) ∩ rho^-1 B_r(y)` inside `ball(e, R)`.
pub fn fibre_separation_profile(
    rho: &OrbitMap,
    x: &Point,
    y: &Point,
    r: usize,
    s: usize,
    truncations: &[usize],
) -> Result<SeparationProfile> {
    let dxy = rho.space.distance(x, y)?;
    if dxy <= 2 * r {
        return Err(SpaceError::Precondition(format!("d(x,y) = {dxy} is not larger than 2r = {}", 2 * r)));
    }
    if truncations.len() < 2 {
        return Err(SpaceError::Precondition("need at least two truncation radii".into()));
    }
    let mut radii = truncations.to_vec();
    radii.sort_unstable();
    radii.dedup();
    let g = &rho.group;
    let pairs = radii
        .par_iter()
        .map(|&big_r| -> Result<(usize, usize)> {
            let ball = g.ball(&Word::identity(), big_r)?;
            let mut px = Vec::new();
            let mut py = Vec::new();
            for w in &ball {
                if rho.dist_to_point(w, x)? <= r {
                    px.push(w);
                }
                if rho.dist_to_point(w, y)? <= r {
                    py.push(w);
                }
            }
            let inter: Vec<&Word> = py
                .into_iter()
                .filter(|w| px.iter().any(|v| g.dist(w, v) <= s))
                .collect();
            let mut diam = 0;
            for (i, a) in inter.iter().enumerate() {
                for b in &inter[i + 1..] {
                    diam = diam.max(g.dist(a, b));
                }
            }
            Ok((big_r, diam))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len();
    let verdict = if pairs[n - 1].1 == pairs[n - 2].1 { Verdict::Bounded } else { Verdict::Growing };
    Ok(SeparationProfile { pairs, verdict, r, s })
}
