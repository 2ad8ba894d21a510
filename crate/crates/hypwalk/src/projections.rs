//! Closest-point projections onto orbits of cyclic subgroups, coset
//! distances, `H_T` sets and distance-formula sums.
//!
//! An [`Axis`] is the orbit `{h r^n x0}` of a coset `h<r>`, where `r` is a
//! cyclically reduced primitive root. Projections return the full set of
//! nearest orbit points, encoded as exponents `n`.

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{GeodesicPath, GroupError, GroupModel, Letter, ModelKind, Word};
use crate::spaces::{OrbitMap, OrbitRule, SpaceError, SpaceModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("the identity has no axis")]
    Identity,
    #[error("element {0} is not loxodromic on this space")]
    NotLoxodromic(String),
    #[error("projection window of {0} steps did not stabilise")]
    WindowTooSmall(usize),
    #[error("the two axes coincide")]
    SameAxis,
    #[error("record is partial; {0}")]
    Partial(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no pivot within s = {s}; best found {best:?}")]
    NoPivot { s: usize, best: Box<Option<PivotResult>> },
}

pub type Result<T> = std::result::Result<T, ProjError>;

/// Outward steps after which a line-to-set projection is declared divergent.
pub const STABILISE_CAP: i64 = 4096;
/// Consecutive unchanged steps with growing distance that end a sweep.
const STABLE_STEPS: usize = 3;
/// Behrstock constant on trees.
pub const TREE_BEHRSTOCK_B: usize = 2;

/// The coset `rep <root>` and its orbit in the space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Axis {
    pub root: Word,
    pub rep: Word,
}

fn primitive_root(model: &GroupModel, w: &Word) -> Word {
    let ls = w.letters();
    let n = ls.len();
    for p in 1..=n {
        if n % p == 0 && (0..n).all(|i| ls[i] == ls[i % p]) {
            return model.normal_form(&ls[..p]).expect("prefix of a normal form");
        }
    }
    w.clone()
}

/// Writes `g = c core c^-1` with `core` cyclically reduced.
pub fn cyclic_reduction(model: &GroupModel, g: &Word) -> Result<(Word, Word)> {
    model.check(g)?;
    if g.is_identity() {
        return Err(ProjError::Identity);
    }
    match model.kind() {
        ModelKind::FreeGroup(_) => {
            let ls = g.letters();
            let (mut i, mut j) = (0, ls.len());
            while j - i >= 2 && ls[i] == ls[j - 1].inverse() {
                i += 1;
                j -= 1;
            }
            Ok((g.prefix(i), model.normal_form(&ls[i..j])?))
        }
        ModelKind::FreeProduct(_) => {
            let mut cur = g.clone();
            let mut conj = Word::identity();
            loop {
                let syl = model.syllables(&cur);
                if syl.len() <= 1 {
                    break;
                }
                let (f0, s0, e0) = syl[0];
                if f0 != syl[syl.len() - 1].0 {
                    break;
                }
                let s1 = model.normal_form(&cur.letters()[s0..e0])?;
                cur = model.mul(&model.mul(&model.inverse(&s1), &cur), &s1);
                conj = model.mul(&conj, &s1);
            }
            if model.syllables(&cur).len() <= 1 {
                return Err(ProjError::NotLoxodromic(model.format_word(g)));
            }
            Ok((conj, cur))
        }
        _ => Err(ProjError::Precondition(format!("no axes implemented for {model}"))),
    }
}

impl Axis {
    /// Canonical form: root is the length-lex smaller of `r`, `r^-1` and the
    /// representative is the length-lex least element of the coset.
    pub fn new(model: &GroupModel, root: &Word, rep: &Word) -> Result<Self> {
        model.check(root)?;
        model.check(rep)?;
        if root.is_identity() {
            return Err(ProjError::Identity);
        }
        let inv = model.inverse(root);
        let root = if inv < *root { inv } else { root.clone() };
        let n = (2 * rep.len() / root.len() + 2) as i64;
        let rinv = model.inverse(&root);
        let mut best = rep.clone();
        for step in [&root, &rinv] {
            let mut cur = rep.clone();
            for _ in 0..n {
                cur = model.mul(&cur, step);
                if cur < best {
                    best = cur.clone();
                }
            }
        }
        Ok(Axis { root, rep: best })
    }

    pub fn point(&self, model: &GroupModel, n: i64) -> Word {
        model.mul(&self.rep, &model.pow(&self.root, n))
    }

    /// Translate by `g` on the left.
    pub fn translate(&self, model: &GroupModel, g: &Word) -> Result<Self> {
        Axis::new(model, &self.root, &model.mul(g, &self.rep))
    }

    pub fn describe(&self, model: &GroupModel) -> String {
        format!("{}<{}>", model.format_word(&self.rep), model.format_word(&self.root))
    }
}

/// Axis of the elementary closure of `g`: the line `c<root>` for
/// `g = c root^k c^-1`.
pub fn axis_of(rho: &OrbitMap, g: &Word) -> Result<Axis> {
    let model = axis_model(rho)?;
    let (c, core) = cyclic_reduction(model, g)?;
    let root = primitive_root(model, &core);
    let axis = Axis::new(model, &root, &c)?;
    if translation_length(rho, &axis.root)? == 0 {
        return Err(ProjError::NotLoxodromic(model.format_word(g)));
    }
    Ok(axis)
}

/// The group the axes live in (the orbit map's group).
fn axis_model(rho: &OrbitMap) -> Result<&GroupModel> {
    Ok(&rho.group)
}

/// Stable translation length of `r` on a tree model.
pub fn translation_length(rho: &OrbitMap, r: &Word) -> Result<usize> {
    let m = &rho.group;
    let e = Word::identity();
    let r2 = m.mul(r, r);
    let d1 = rho.dist(&e, r)?;
    let d2 = rho.dist(&e, &r2)?;
    Ok(d2.saturating_sub(d1))
}

fn analytic_tree(rho: &OrbitMap) -> Option<&GroupModel> {
    match (&rho.rule, &rho.space) {
        (OrbitRule::Identity, SpaceModel::CayleyTree(m)) => Some(m),
        _ => None,
    }
}

/// Nearest points of an axis as exponents, with the common distance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nearest {
    pub exps: Vec<i64>,
    pub distance: usize,
    pub window: usize,
}

fn lcp_periodic(y: &[Letter], period: &[Letter]) -> usize {
    y.iter().enumerate().take_while(|(i, l)| **l == period[i % period.len()]).count()
}

fn tree_nearest(m: &GroupModel, axis: &Axis, x: &Word) -> Nearest {
    let y = m.quotient(&axis.rep, x);
    let r = axis.root.letters();
    let rinv = m.inverse(&axis.root);
    let f = lcp_periodic(y.letters(), r) as i64;
    let b = lcp_periodic(y.letters(), rinv.letters()) as i64;
    let pos = if f > 0 { f } else { -b };
    let off = y.len() as i64 - pos.abs();
    let l = r.len() as i64;
    let lo = pos.div_euclid(l);
    let cands = if pos.rem_euclid(l) == 0 { vec![lo] } else { vec![lo, lo + 1] };
    let dist = |n: i64| off + (n * l - pos).abs();
    let best = cands.iter().map(|&n| dist(n)).min().expect("candidates");
    Nearest {
        exps: cands.into_iter().filter(|&n| dist(n) == best).collect(),
        distance: best as usize,
        window: 0,
    }
}

/// Exact nearest orbit points of `axis` to `x x0`.
pub fn nearest_on_axis(rho: &OrbitMap, axis: &Axis, x: &Word) -> Result<Nearest> {
    if let Some(m) = analytic_tree(rho) {
        return Ok(tree_nearest(m, axis, x));
    }
    if !rho.space.is_tree() {
        return Err(ProjError::Precondition(
            "axis projection on finite graphs goes through project_to_set".into(),
        ));
    }
    let m = &rho.group;
    let tau = translation_length(rho, &axis.root)?;
    if tau == 0 {
        return Err(ProjError::NotLoxodromic(m.format_word(&axis.root)));
    }
    let d0 = rho.dist(x, &axis.rep)?;
    let n = (2 * d0 / tau + 1) as i64;
    let mut best = usize::MAX;
    let mut exps = Vec::new();
    for k in -n..=n {
        let d = rho.dist(x, &axis.point(m, k))?;
        if d < best {
            best = d;
            exps.clear();
        }
        if d == best {
            exps.push(k);
        }
    }
    Ok(Nearest { exps, distance: best, window: n as usize })
}

/// Diameter in `X` of a set of axis points.
pub fn axis_set_diameter(rho: &OrbitMap, axis: &Axis, exps: &BTreeSet<i64>) -> Result<usize> {
    if exps.is_empty() {
        return Ok(0);
    }
    if analytic_tree(rho).is_some() {
        let lo = *exps.iter().next().expect("nonempty");
        let hi = *exps.iter().next_back().expect("nonempty");
        return Ok(((hi - lo) as usize) * axis.root.len());
    }
    let pts: Vec<Word> = exps.iter().map(|&n| axis.point(&rho.group, n)).collect();
    set_diameter(rho, &pts)
}

pub fn set_diameter(rho: &OrbitMap, pts: &[Word]) -> Result<usize> {
    let mut d = 0;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            d = d.max(rho.dist(a, b)?);
        }
    }
    Ok(d)
}

/// Result of a closest-point projection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionValue {
    pub source: Word,
    pub target: String,
    pub nearest: Vec<Word>,
    pub distance: usize,
    pub diameter: usize,
    pub window: usize,
    pub note: Option<String>,
}

pub enum Target<'a> {
    Axis(&'a Axis),
    Set(&'a [Word]),
}

/// All nearest points of the target to `x x0`.
pub fn project_to_set(rho: &OrbitMap, x: &Word, target: Target<'_>) -> Result<ProjectionValue> {
    let m = &rho.group;
    match target {
        Target::Axis(axis) if rho.space.is_tree() => {
            let nr = nearest_on_axis(rho, axis, x)?;
            let set: BTreeSet<i64> = nr.exps.iter().copied().collect();
            Ok(ProjectionValue {
                source: x.clone(),
                target: axis.describe(m),
                nearest: nr.exps.iter().map(|&n| axis.point(m, n)).collect(),
                distance: nr.distance,
                diameter: axis_set_diameter(rho, axis, &set)?,
                window: nr.window,
                note: None,
            })
        }
        Target::Axis(axis) => {
            let SpaceModel::Finite(graph) = &rho.space else {
                return Err(ProjError::Precondition("unsupported space".into()));
            };
            let radius = graph.meta.radius.unwrap_or(0);
            let bound = radius + axis.rep.len();
            let mut members = Vec::new();
            for step in [axis.root.clone(), m.inverse(&axis.root)] {
                let mut acc = Word::identity();
                while acc.len() <= bound {
                    let p = m.mul(&axis.rep, &acc);
                    if graph.vertex_of(&p).is_some() {
                        members.push(p);
                    }
                    acc = m.mul(&acc, &step);
                }
            }
            members.sort();
            members.dedup();
            if members.is_empty() {
                return Err(ProjError::Precondition("axis misses the finite graph".into()));
            }
            let mut v = project_to_finite(rho, x, &members)?;
            v.target = axis.describe(m);
            v.window = radius;
            v.note = Some(format!("axis truncated to the radius-{radius} ball"));
            Ok(v)
        }
        Target::Set(set) => project_to_finite(rho, x, set),
    }
}

fn project_to_finite(rho: &OrbitMap, x: &Word, set: &[Word]) -> Result<ProjectionValue> {
    if set.is_empty() {
        return Err(ProjError::Precondition("empty target set".into()));
    }
    let dists: Vec<usize> = match &rho.space {
        SpaceModel::Finite(graph) => {
            let src = graph
                .vertex_of(x)
                .ok_or_else(|| SpaceError::ForeignPoint(rho.group.format_word(x)))?;
            let row = graph.distances_from(src);
            set.iter()
                .map(|q| {
                    graph
                        .vertex_of(q)
                        .map(|v| row[v] as usize)
                        .ok_or_else(|| SpaceError::ForeignPoint(rho.group.format_word(q)).into())
                })
                .collect::<Result<_>>()?
        }
        _ => set.iter().map(|q| rho.dist(x, q)).collect::<std::result::Result<_, _>>()?,
    };
    let best = *dists.iter().min().expect("nonempty");
    let nearest: Vec<Word> =
        set.iter().zip(&dists).filter(|(_, d)| **d == best).map(|(q, _)| q.clone()).collect();
    Ok(ProjectionValue {
        source: x.clone(),
        target: format!("finite set of {}", set.len()),
        diameter: set_diameter(rho, &nearest)?,
        nearest,
        distance: best,
        window: 0,
        note: None,
    })
}

/// `diam(pi(x) ∪ pi(y))` for an axis.
pub fn coset_distance(rho: &OrbitMap, axis: &Axis, x: &Word, y: &Word) -> Result<usize> {
    let a = nearest_on_axis(rho, axis, x)?;
    let b = nearest_on_axis(rho, axis, y)?;
    let set: BTreeSet<i64> = a.exps.into_iter().chain(b.exps).collect();
    axis_set_diameter(rho, axis, &set)
}

/// The projection of one axis onto another, as exponents of the target.
pub fn project_axis(rho: &OrbitMap, target: &Axis, source: &Axis) -> Result<BTreeSet<i64>> {
    if target == source {
        return Err(ProjError::SameAxis);
    }
    let m = &rho.group;
    let mut out = BTreeSet::new();
    let steps = [source.root.clone(), m.inverse(&source.root)];
    for step in &steps {
        let mut cur = source.rep.clone();
        let mut last: Option<Nearest> = None;
        let mut stable = 0;
        let mut n = 0;
        while stable < STABLE_STEPS {
            if n > STABILISE_CAP {
                return Err(ProjError::WindowTooSmall(STABILISE_CAP as usize));
            }
            let nr = nearest_on_axis(rho, target, &cur)?;
            match &last {
                Some(prev) if prev.exps == nr.exps && nr.distance > prev.distance => stable += 1,
                _ => stable = 0,
            }
            out.extend(nr.exps.iter().copied());
            last = Some(nr);
            cur = m.mul(&cur, step);
            n += 1;
        }
    }
    Ok(out)
}

/// `d_U(x, V) = diam(pi_U(x) ∪ pi_U(V))`.
pub fn point_axis_distance(
    rho: &OrbitMap,
    u: &Axis,
    x: &Word,
    proj_uv: &BTreeSet<i64>,
) -> Result<usize> {
    let nr = nearest_on_axis(rho, u, x)?;
    let set: BTreeSet<i64> = nr.exps.into_iter().chain(proj_uv.iter().copied()).collect();
    axis_set_diameter(rho, u, &set)
}

/// The equivariant projection used for strong Behrstock checks. On trees it
/// is the exact nearest-point projection.
pub fn strong_projection(rho: &OrbitMap, axis: &Axis, x: &Word) -> Result<ProjectionValue> {
    let mut v = project_to_set(rho, x, Target::Axis(axis))?;
    if !rho.space.is_tree() {
        v.note = Some("non-tree model: strong Behrstock property is checked, not guaranteed".into());
    }
    Ok(v)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehrstockReport {
    pub checked: usize,
    pub triggered: usize,
    pub violations: usize,
    pub strong_violations: usize,
}

/// For distinct pool axes `Q1, Q2` and each point: `d_Q1(x, Q2) > B` must
/// force `d_Q2(x, Q1) <= B` and, strongly, `pi_Q2(x) = pi_Q2(Q1)`.
pub fn behrstock_check(rho: &OrbitMap, pool: &[Axis], points: &[Word], b: usize) -> Result<BehrstockReport> {
    let n = pool.len();
    let mut cross: HashMap<(usize, usize), BTreeSet<i64>> = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cross.insert((i, j), project_axis(rho, &pool[i], &pool[j])?);
            }
        }
    }
    let parts = points
        .par_iter()
        .map(|x| -> Result<BehrstockReport> {
            let near = pool
                .iter()
                .map(|q| nearest_on_axis(rho, q, x))
                .collect::<Result<Vec<_>>>()?;
            let mut rep = BehrstockReport::default();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    rep.checked += 1;
                    let d = |u: usize, v: usize| -> Result<usize> {
                        let set: BTreeSet<i64> =
                            near[u].exps.iter().chain(cross[&(u, v)].iter()).copied().collect();
                        axis_set_diameter(rho, &pool[u], &set)
                    };
                    if d(i, j)? > b {
                        rep.triggered += 1;
                        if d(j, i)? > b {
                            rep.violations += 1;
                        }
                        let pj: BTreeSet<i64> = near[j].exps.iter().copied().collect();
                        if pj != cross[&(j, i)] {
                            rep.strong_violations += 1;
                        }
                    }
                }
            }
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(BehrstockReport::default(), |a, r| BehrstockReport {
        checked: a.checked + r.checked,
        triggered: a.triggered + r.triggered,
        violations: a.violations + r.violations,
        strong_violations: a.strong_violations + r.strong_violations,
    }))
}

/// One coset of `H_T(o, p)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HTEntry {
    pub axis: Axis,
    pub value: usize,
    pub proj_o: Vec<i64>,
    pub proj_p: Vec<i64>,
    pub order_key: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HTRecord {
    pub g: Word,
    pub root: Word,
    pub o: Word,
    pub p: Word,
    pub threshold: usize,
    pub entries: Vec<HTEntry>,
    pub window: usize,
    pub certified: bool,
    pub route: String,
    pub candidates: usize,
}

#[derive(Serialize)]
struct HTLine {
    #[serde(rename = "cosetRep")]
    coset_rep: String,
    root: String,
    value: usize,
    #[serde(rename = "orderIndex")]
    order_index: usize,
    projections: HTLineProj,
}

#[derive(Serialize)]
struct HTLineProj {
    o: Vec<String>,
    p: Vec<String>,
}

impl HTRecord {
    /// One JSON object per coset.
    pub fn to_json_lines(&self, model: &GroupModel) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            let line = HTLine {
                coset_rep: model.format_word(&e.axis.rep),
                root: model.format_word(&e.axis.root),
                value: e.value,
                order_index: i,
                projections: HTLineProj {
                    o: e.proj_o.iter().map(|&n| model.format_word(&e.axis.point(model, n))).collect(),
                    p: e.proj_p.iter().map(|&n| model.format_word(&e.axis.point(model, n))).collect(),
                },
            };
            out.push_str(&serde_json::to_string(&line).expect("serialisable"));
            out.push('\n');
        }
        out
    }
}

fn entry_for(rho: &OrbitMap, axis: Axis, o: &Word, p: &Word) -> Result<HTEntry> {
    let a = nearest_on_axis(rho, &axis, o)?;
    let b = nearest_on_axis(rho, &axis, p)?;
    let set: BTreeSet<i64> = a.exps.iter().chain(&b.exps).copied().collect();
    let value = axis_set_diameter(rho, &axis, &set)?;
    Ok(HTEntry { axis, value, proj_o: a.exps, proj_p: b.exps, order_key: a.distance })
}

/// Enumerates `H_T(o, p)` for the axis family of `g`.
///
/// On the Cayley tree of a free group the search is certified complete: a
/// line with projection distance above the tie width must share a vertex
/// with `[o, p]`. Elsewhere every line through `ball(o, window)` is tried and
/// the record is flagged partial.
pub fn enumerate_ht(
    rho: &OrbitMap,
    g: &Word,
    o: &Word,
    p: &Word,
    t: usize,
    window: usize,
) -> Result<HTRecord> {
    let m = &rho.group;
    if t == 0 {
        return Err(ProjError::Precondition("T must be at least 1".into()));
    }
    let dop = m.word_distance(o, p)?;
    if window < dop {
        return Err(ProjError::Precondition(format!("window {window} is below d(o,p) = {dop}")));
    }
    let base = axis_of(rho, g)?;
    let root = base.root.clone();
    let (cands, route, certified) = if analytic_tree(rho).is_some() {
        let path = m.geodesic(o, p)?;
        let mut c = BTreeSet::new();
        for v in &path.vertices {
            for i in 0..root.len() {
                let pre = root.prefix(i);
                c.insert(Axis::new(m, &root, &m.mul(v, &m.inverse(&pre)))?);
            }
        }
        let tie_free = root.len() == 1 || t > root.len();
        (c.into_iter().collect::<Vec<_>>(), "tree-geodesic".to_string(), tie_free)
    } else {
        (ball_axes(m, &root, o, window)?, "ball".to_string(), false)
    };
    let candidates = cands.len();
    let mut entries = cands
        .into_par_iter()
        .map(|a| entry_for(rho, a, o, p))
        .collect::<Result<Vec<_>>>()?;
    entries.retain(|e| e.value >= t);
    entries.sort_by(|a, b| a.order_key.cmp(&b.order_key).then_with(|| a.axis.cmp(&b.axis)));
    Ok(HTRecord {
        g: g.clone(),
        root,
        o: o.clone(),
        p: p.clone(),
        threshold: t,
        entries,
        window,
        certified,
        route,
        candidates,
    })
}

/// Every translate `k<root>` with `k ∈ ball(o, window)`, canonicalised.
pub fn ball_axes(m: &GroupModel, root: &Word, o: &Word, window: usize) -> Result<Vec<Axis>> {
    let ball = m.ball(o, window)?;
    let set: HashSet<Axis> = ball
        .par_iter()
        .map(|k| Axis::new(m, root, k))
        .collect::<Result<HashSet<_>>>()?;
    let mut v: Vec<Axis> = set.into_iter().collect();
    v.sort();
    Ok(v)
}

/// Brute-force `H_T(o, p)` over lines meeting `ball(o, window)`.
pub fn brute_force_ht(
    rho: &OrbitMap,
    g: &Word,
    o: &Word,
    p: &Word,
    t: usize,
    window: usize,
) -> Result<Vec<HTEntry>> {
    let base = axis_of(rho, g)?;
    let axes = ball_axes(&rho.group, &base.root, o, window)?;
    let mut out = axes
        .into_par_iter()
        .map(|a| entry_for(rho, a, o, p))
        .collect::<Result<Vec<_>>>()?;
    out.retain(|e| e.value >= t);
    out.sort_by(|a, b| a.order_key.cmp(&b.order_key).then_with(|| a.axis.cmp(&b.axis)));
    Ok(out)
}

/// `Σ_{H_T(o,p)} [x, y]`: coset distances over entries where the
/// projections of `x` and `y` differ.
pub fn df_sum(rho: &OrbitMap, record: &HTRecord, x: &Word, y: &Word) -> Result<usize> {
    if !record.certified {
        return Err(ProjError::Partial(format!("route {} is not certified", record.route)));
    }
    let mut total = 0;
    for e in &record.entries {
        let a = nearest_on_axis(rho, &e.axis, x)?;
        let b = nearest_on_axis(rho, &e.axis, y)?;
        if a.exps != b.exps {
            let set: BTreeSet<i64> = a.exps.into_iter().chain(b.exps).collect();
            total += axis_set_diameter(rho, &e.axis, &set)?;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDisagreement {
    pub earlier: usize,
    pub later: usize,
    pub forward: [bool; 4],
    pub backward: [bool; 4],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearOrderReport {
    pub order: Vec<usize>,
    pub pairs_checked: usize,
    pub disagreements: Vec<PairDisagreement>,
    /// Pairs involving `o γ` or `p γ` whose conditions do not all hold.
    pub endpoint_pairs: usize,
    pub endpoint_exceptions: usize,
}

/// The four order conditions for `U ≺ V`.
fn order_conditions(
    rho: &OrbitMap,
    o: &Word,
    p: &Word,
    u: &Axis,
    v: &Axis,
    b: usize,
) -> Result<[bool; 4]> {
    let uv = project_axis(rho, u, v)?;
    let vu = project_axis(rho, v, u)?;
    let po_v: BTreeSet<i64> = nearest_on_axis(rho, v, o)?.exps.into_iter().collect();
    let pp_u: BTreeSet<i64> = nearest_on_axis(rho, u, p)?.exps.into_iter().collect();
    Ok([
        point_axis_distance(rho, u, o, &uv)? > b,
        po_v == vu,
        point_axis_distance(rho, v, p, &vu)? > b,
        pp_u == uv,
    ])
}

/// Checks the four equivalent descriptions of the order on `H_T(o, p)`
/// against the order by position along `[o, p]`.
pub fn linear_order(rho: &OrbitMap, record: &HTRecord, b: usize) -> Result<LinearOrderReport> {
    let n = record.entries.len();
    let (o, p) = (&record.o, &record.p);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<Option<PairDisagreement>> {
            let (u, v) = (&record.entries[i].axis, &record.entries[j].axis);
            let fwd = order_conditions(rho, o, p, u, v, b)?;
            let bwd = order_conditions(rho, o, p, v, u, b)?;
            let ok = fwd.iter().all(|&c| c) && bwd.iter().all(|&c| !c);
            Ok((!ok).then_some(PairDisagreement { earlier: i, later: j, forward: fwd, backward: bwd }))
        })
        .collect::<Result<Vec<_>>>()?;
    let base = axis_of(rho, &record.g)?;
    let m = &rho.group;
    let o_line = base.translate(m, o)?;
    let p_line = base.translate(m, p)?;
    let mut endpoint_pairs = 0;
    let mut endpoint_exceptions = 0;
    for e in &record.entries {
        for (lo, hi) in [(&o_line, &e.axis), (&e.axis, &p_line)] {
            if lo == hi {
                continue;
            }
            endpoint_pairs += 1;
            if !order_conditions(rho, o, p, lo, hi, b)?.iter().all(|&c| c) {
                endpoint_exceptions += 1;
            }
        }
    }
    Ok(LinearOrderReport {
        order: (0..n).collect(),
        pairs_checked: pairs.len(),
        disagreements: results.into_iter().flatten().collect(),
        endpoint_pairs,
        endpoint_exceptions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub lhs: usize,
    pub rhs: f64,
    pub pass: bool,
}

/// `d_X(a x0, b x0) >= ½ Σ_{H_T(a,b)} [a, b]`.
pub fn df_lower_bound_check(rho: &OrbitMap, g: &Word, a: &Word, b: &Word, t: usize) -> Result<LowerBound> {
    let window = rho.group.word_distance(a, b)?;
    let rec = enumerate_ht(rho, g, a, b, t, window)?;
    let sum = df_sum(rho, &rec, a, b)?;
    let lhs = rho.dist(a, b)?;
    let rhs = sum as f64 / 2.0;
    Ok(LowerBound { lhs, rhs, pass: lhs as f64 >= rhs })
}

/// Smallest threshold in the sweep from which every larger threshold passes
/// the lower bound on all pairs.
pub fn minimal_passing_threshold(
    rho: &OrbitMap,
    g: &Word,
    pairs: &[(Word, Word)],
    sweep: &[usize],
) -> Result<Option<usize>> {
    let mut passes = Vec::new();
    for &t in sweep {
        let all = pairs
            .par_iter()
            .map(|(a, b)| match df_lower_bound_check(rho, g, a, b, t) {
                Ok(r) => Ok(r.pass),
                Err(ProjError::Partial(_)) => Ok(false),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|x| x);
        passes.push((t, all));
    }
    let mut best = None;
    for &(t, ok) in passes.iter().rev() {
        if !ok {
            break;
        }
        best = Some(t);
    }
    Ok(best)
}

/// Nearest points of a finite set to an orbit point, by index.
fn nearest_in_set(rho: &OrbitMap, set: &[Word], x: &Word) -> Result<(Vec<usize>, usize)> {
    let mut best = usize::MAX;
    let mut idx = Vec::new();
    for (i, q) in set.iter().enumerate() {
        let d = rho.dist(x, q)?;
        if d < best {
            best = d;
            idx.clear();
        }
        if d == best {
            idx.push(i);
        }
    }
    Ok((idx, best))
}

/// Projection of an axis onto a finite set of orbit points.
fn project_axis_to_set(rho: &OrbitMap, set: &[Word], axis: &Axis) -> Result<BTreeSet<usize>> {
    let m = &rho.group;
    let mut out = BTreeSet::new();
    for step in [axis.root.clone(), m.inverse(&axis.root)] {
        let mut cur = axis.rep.clone();
        let mut last: Option<(Vec<usize>, usize)> = None;
        let mut stable = 0;
        let mut n = 0;
        while stable < STABLE_STEPS {
            if n > STABILISE_CAP {
                return Err(ProjError::WindowTooSmall(STABILISE_CAP as usize));
            }
            let nr = nearest_in_set(rho, set, &cur)?;
            match &last {
                Some(prev) if prev.0 == nr.0 && nr.1 > prev.1 => stable += 1,
                _ => stable = 0,
            }
            out.extend(nr.0.iter().copied());
            last = Some(nr);
            cur = m.mul(&cur, &step);
            n += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotResult {
    pub q_prime: Word,
    /// `d_{hγ}(q' q^-1 α, p x0)`.
    pub along_axis: usize,
    /// `d_{q' q^-1 α}(hγ, q' x0)`.
    pub along_path: usize,
    pub pass: bool,
    pub evaluated: usize,
}

/// Shipped pairs of independent loxodromics used to seed the pivot search.
pub fn default_pivot_directions(m: &GroupModel) -> Vec<Word> {
    let names: &[&str] = match m.descriptor().as_str() {
        "F2" => &["a", "b"],
        "Z^2 * Z" => &["x z", "y z"],
        _ => &[],
    };
    if names.is_empty() {
        m.letters().iter().filter(|l| !l.inv).map(|&l| m.generator(l).expect("generator")).collect()
    } else {
        names.iter().map(|s| m.parse_word(s).expect("shipped direction")).collect()
    }
}

fn pivot_values(
    rho: &OrbitMap,
    alpha: &GeodesicPath,
    q: &Word,
    h_axis: &Axis,
    qp: &Word,
) -> Result<(usize, usize)> {
    let m = &rho.group;
    let shift = m.mul(qp, &m.inverse(q));
    let moved: Vec<Word> = alpha.vertices.iter().map(|v| m.mul(&shift, v)).collect();
    let p = alpha.first();
    let mut on_axis: BTreeSet<i64> = nearest_on_axis(rho, h_axis, p)?.exps.into_iter().collect();
    for v in &moved {
        on_axis.extend(nearest_on_axis(rho, h_axis, v)?.exps);
    }
    let v1 = axis_set_diameter(rho, h_axis, &on_axis)?;
    let mut on_path = project_axis_to_set(rho, &moved, h_axis)?;
    on_path.extend(nearest_in_set(rho, &moved, qp)?.0);
    let pts: Vec<Word> = on_path.into_iter().map(|i| moved[i].clone()).collect();
    let v2 = set_diameter(rho, &pts)?;
    Ok((v1, v2))
}

/// Searches `ball(p, s)` for `q'` with both pivot projections at most `e`,
/// trying `p` first and then powers of the seed directions.
pub fn pivot(
    rho: &OrbitMap,
    alpha: &GeodesicPath,
    q: &Word,
    h_axis: &Axis,
    s: usize,
    e: usize,
    directions: &[Word],
) -> Result<PivotResult> {
    let m = &rho.group;
    let p = alpha.first().clone();
    if !alpha.vertices.contains(q) {
        return Err(ProjError::Precondition("q is not on the path".into()));
    }
    let mut order = vec![p.clone()];
    for g in directions {
        for j in 1..=s as i64 {
            for sign in [1, -1] {
                let f = m.pow(g, sign * j);
                if f.len() <= s {
                    order.push(m.mul(&p, &f));
                }
            }
        }
    }
    order.extend(m.ball(&p, s)?);
    let mut seen = HashSet::new();
    let mut best: Option<PivotResult> = None;
    let mut evaluated = 0;
    for qp in order {
        if !seen.insert(qp.clone()) {
            continue;
        }
        evaluated += 1;
        let (v1, v2) = pivot_values(rho, alpha, q, h_axis, &qp)?;
        let res = PivotResult {
            q_prime: qp,
            along_axis: v1,
            along_path: v2,
            pass: v1 <= e && v2 <= e,
            evaluated,
        };
        if res.pass {
            return Ok(res);
        }
        let better = best
            .as_ref()
            .map_or(true, |b| v1.max(v2) < b.along_axis.max(b.along_path));
        if better {
            best = Some(res);
        }
    }
    Err(ProjError::NoPivot { s, best: Box::new(best) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f2() -> (GroupModel, OrbitMap) {
        let m = GroupModel::parse("F2").unwrap();
        (m.clone(), OrbitMap::cayley_tree(m).unwrap())
    }

    fn w(m: &GroupModel, s: &str) -> Word {
        m.parse_word(s).unwrap()
    }

    #[test]
    fn projections_to_a_axis() {
        let (m, rho) = f2();
        let ax = axis_of(&rho, &w(&m, "a")).unwrap();
        let v = project_to_set(&rho, &w(&m, "bab"), Target::Axis(&ax)).unwrap();
        assert_eq!(v.nearest, vec![Word::identity()]);
        let v = project_to_set(&rho, &w(&m, "a^4 b"), Target::Axis(&ax)).unwrap();
        assert_eq!(v.nearest, vec![w(&m, "a^4")]);
        let v = project_to_set(&rho, &w(&m, "a^-2"), Target::Axis(&ax)).unwrap();
        assert_eq!(v.nearest, vec![w(&m, "a^-2")]);
    }

    #[test]
    fn coset_distance_examples() {
        let (m, rho) = f2();
        let ax = axis_of(&rho, &w(&m, "a")).unwrap();
        assert_eq!(coset_distance(&rho, &ax, &w(&m, "a^3"), &w(&m, "b a^-2")).unwrap(), 3);
        let bx = Axis::new(&m, &w(&m, "a"), &w(&m, "b")).unwrap();
        assert_eq!(coset_distance(&rho, &bx, &Word::identity(), &w(&m, "b a^5 b")).unwrap(), 5);
    }

    #[test]
    fn axes_and_roots() {
        let (m, rho) = f2();
        let ax = axis_of(&rho, &w(&m, "a^2")).unwrap();
        assert_eq!((ax.root.clone(), ax.rep.clone()), (w(&m, "a"), Word::identity()));
        let ax = axis_of(&rho, &w(&m, "b a^2 b^-1")).unwrap();
        assert_eq!(ax.root, w(&m, "a"));
        assert_eq!(ax.rep, w(&m, "b"));
        let ax = axis_of(&rho, &w(&m, "a a b a a b")).unwrap();
        assert_eq!(ax.root, w(&m, "a^2 b"));
        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let bs = OrbitMap::bass_serre(fp.clone()).unwrap();
        assert!(matches!(axis_of(&bs, &w(&fp, "x")), Err(ProjError::NotLoxodromic(_))));
        assert!(matches!(axis_of(&bs, &w(&fp, "z x z^-1")), Err(ProjError::NotLoxodromic(_))));
        let ax = axis_of(&bs, &w(&fp, "z x z y z^-1")).unwrap();
        assert_eq!(ax.root.len(), 3);
    }

    #[test]
    fn strong_projection_example() {
        let (m, rho) = f2();
        let a = axis_of(&rho, &w(&m, "a")).unwrap();
        let ba = Axis::new(&m, &w(&m, "a"), &w(&m, "b")).unwrap();
        let x = w(&m, "b a^3");
        assert_eq!(project_axis(&rho, &a, &ba).unwrap(), BTreeSet::from([0]));
        assert_eq!(nearest_on_axis(&rho, &a, &x).unwrap().exps, vec![0]);
        let g = w(&m, "ab");
        let x = w(&m, "b^2");
        let ga = a.translate(&m, &g).unwrap();
        let left: Vec<Word> = strong_projection(&rho, &ga, &m.mul(&g, &x)).unwrap().nearest;
        let right: Vec<Word> =
            strong_projection(&rho, &a, &x).unwrap().nearest.iter().map(|v| m.mul(&g, v)).collect();
        assert_eq!(left, right);
    }

    #[test]
    fn ht_examples() {
        let (m, rho) = f2();
        let g = w(&m, "a");
        let p = w(&m, "b a^5 b");
        let rec = enumerate_ht(&rho, &g, &Word::identity(), &p, 4, 7).unwrap();
        assert!(rec.certified);
        assert_eq!(rec.entries.len(), 1);
        assert_eq!(rec.entries[0].axis.rep, w(&m, "b"));
        assert_eq!(rec.entries[0].value, 5);
        assert_eq!(df_sum(&rho, &rec, &Word::identity(), &p).unwrap(), 5);
        assert_eq!(df_sum(&rho, &rec, &p, &p).unwrap(), 0);
        let brute = brute_force_ht(&rho, &g, &Word::identity(), &p, 4, 9).unwrap();
        assert_eq!(brute, rec.entries);
        assert!(enumerate_ht(&rho, &g, &Word::identity(), &p, 10, 7).unwrap().entries.is_empty());
        assert!(enumerate_ht(&rho, &g, &p, &p, 1, 0).unwrap().entries.is_empty());
        assert!(enumerate_ht(&rho, &g, &Word::identity(), &p, 4, 3).is_err());
        let lb = df_lower_bound_check(&rho, &g, &Word::identity(), &p, 4).unwrap();
        assert_eq!(lb, LowerBound { lhs: 7, rhs: 2.5, pass: true });
        let lb = df_lower_bound_check(&rho, &g, &p, &p, 4).unwrap();
        assert_eq!(lb, LowerBound { lhs: 0, rhs: 0.0, pass: true });
    }

    #[test]
    fn order_example() {
        let (m, rho) = f2();
        let p = w(&m, "b a^4 b^2 a^4 b");
        let rec = enumerate_ht(&rho, &w(&m, "a"), &Word::identity(), &p, 3, p.len()).unwrap();
        let reps: Vec<Word> = rec.entries.iter().map(|e| e.axis.rep.clone()).collect();
        assert_eq!(reps, vec![w(&m, "b"), w(&m, "b a^4 b^2")]);
        let rep = linear_order(&rho, &rec, TREE_BEHRSTOCK_B).unwrap();
        assert_eq!(rep.pairs_checked, 1);
        assert!(rep.disagreements.is_empty());
    }

    #[test]
    fn bass_serre_ht_is_partial() {
        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let rho = OrbitMap::bass_serre(fp.clone()).unwrap();
        let g = w(&fp, "x z");
        let p = w(&fp, "x z x z x z");
        let rec = enumerate_ht(&rho, &g, &Word::identity(), &p, 2, 6).unwrap();
        assert!(!rec.certified);
        assert!(!rec.entries.is_empty());
        assert!(matches!(df_sum(&rho, &rec, &Word::identity(), &p), Err(ProjError::Partial(_))));
    }

    #[test]
    fn pivot_examples() {
        let (m, rho) = f2();
        let a = axis_of(&rho, &w(&m, "a")).unwrap();
        let alpha = m.geodesic(&Word::identity(), &w(&m, "a^5")).unwrap();
        let dirs = default_pivot_directions(&m);
        let r = pivot(&rho, &alpha, alpha.last(), &a, 3, 2, &dirs).unwrap();
        assert!(r.pass);
        assert_ne!(r.q_prime, Word::identity());
        let away = m.geodesic(&Word::identity(), &w(&m, "b^4")).unwrap();
        let r = pivot(&rho, &away, away.last(), &a, 3, 2, &dirs).unwrap();
        assert_eq!(r.q_prime, Word::identity());

        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let bs = OrbitMap::bass_serre(fp.clone()).unwrap();
        let h = axis_of(&bs, &w(&fp, "y z")).unwrap();
        let alpha = fp.geodesic(&Word::identity(), &w(&fp, "x z x z x z")).unwrap();
        let r = pivot(&bs, &alpha, alpha.last(), &h, 4, 4, &default_pivot_directions(&fp)).unwrap();
        assert!(r.along_axis <= 4 && r.along_path <= 4);
    }

    #[test]
    fn behrstock_on_small_pool() {
        let (m, rho) = f2();
        let a = w(&m, "a");
        let pool: Vec<Axis> = ["e", "b", "b^-1", "a b", "b a^2 b"]
            .iter()
            .map(|s| Axis::new(&m, &a, &w(&m, s)).unwrap())
            .collect();
        let pts = m.ball(&Word::identity(), 4).unwrap();
        let rep = behrstock_check(&rho, &pool, &pts, TREE_BEHRSTOCK_B).unwrap();
        assert!(rep.triggered > 0);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.strong_violations, 0);
    }
}
