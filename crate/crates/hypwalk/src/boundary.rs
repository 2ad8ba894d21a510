//! Eventually periodic boundary points of free-group trees, tripod centers,
//! cross-ratios and their behaviour under the shipped quasi-isometries.
//!
//! A boundary point is the reduced infinite word `prefix · period^∞`, kept in
//! a canonical form: primitive cyclically reduced period, shortest prefix.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{stream_rng, BijectiveQI, QiRule};
use crate::groups::{GroupError, GroupModel, Letter, ModelKind, Word};
use crate::spaces::FiniteGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("boundary points need a free group, got {0}")]
    NotTree(String),
    #[error("malformed boundary descriptor {0:?}")]
    Syntax(String),
    #[error("empty period")]
    EmptyPeriod,
    #[error("coincident boundary points")]
    Coincident,
    #[error("map does not act on boundary descriptors")]
    NoBoundaryAction,
}

pub type Result<T> = std::result::Result<T, BoundaryError>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryPoint {
    prefix: Vec<Letter>,
    period: Vec<Letter>,
}

fn free_model(m: &GroupModel) -> Result<()> {
    match m.kind() {
        ModelKind::FreeGroup(_) => Ok(()),
        _ => Err(BoundaryError::NotTree(m.descriptor())),
    }
}

fn reduce(letters: impl IntoIterator<Item = Letter>) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::new();
    for l in letters {
        if out.last() == Some(&l.inverse()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

fn primitive(p: &[Letter]) -> Vec<Letter> {
    let n = p.len();
    (1..=n)
        .find(|&k| n % k == 0 && (0..n).all(|i| p[i] == p[i % k]))
        .map(|k| p[..k].to_vec())
        .unwrap_or_else(|| p.to_vec())
}

impl BoundaryPoint {
    /// Canonical form of the infinite word `prefix · period^∞`.
    pub fn new(prefix: &[Letter], period: &[Letter]) -> Result<Self> {
        let mut per = reduce(period.iter().copied());
        if per.is_empty() {
            return Err(BoundaryError::EmptyPeriod);
        }
        let mut pre: Vec<Letter> = prefix.to_vec();
        // cyclic reduction: c r c^-1 repeated is c r^∞
        while per.len() >= 2 && per[0] == per[per.len() - 1].inverse() {
            let first = per.remove(0);
            per.pop();
            pre.push(first);
        }
        let mut pre = reduce(pre);
        let mut per = primitive(&per);
        loop {
            match pre.last() {
                Some(&l) if l == per[0].inverse() => {
                    pre.pop();
                    per.rotate_left(1);
                }
                Some(&l) if l == per[per.len() - 1] => {
                    pre.pop();
                    per.rotate_right(1);
                }
                _ => break,
            }
        }
        Ok(BoundaryPoint { prefix: pre, period: per })
    }

    pub fn prefix(&self) -> &[Letter] {
        &self.prefix
    }

    pub fn period(&self) -> &[Letter] {
        &self.period
    }

    pub fn letter(&self, i: usize) -> Letter {
        if i < self.prefix.len() {
            self.prefix[i]
        } else {
            self.period[(i - self.prefix.len()) % self.period.len()]
        }
    }

    /// The vertex at depth `n` along the ray from `e`.
    pub fn vertex(&self, model: &GroupModel, n: usize) -> Word {
        model.normal_form(&(0..n).map(|i| self.letter(i)).collect::<Vec<_>>()).expect("reduced ray")
    }

    /// Gromov product at `e`: length of the common prefix, `None` if equal.
    pub fn lcp(&self, other: &BoundaryPoint) -> Option<usize> {
        let bound = self.prefix.len().max(other.prefix.len()) + self.period.len() * other.period.len();
        (0..bound).find(|&i| self.letter(i) != other.letter(i))
    }

    /// `prefix.(period)`, with `e` for an empty prefix.
    pub fn parse(model: &GroupModel, text: &str) -> Result<Self> {
        free_model(model)?;
        let t = text.trim();
        let open = t.find('(').ok_or_else(|| BoundaryError::Syntax(text.into()))?;
        if !t.ends_with(')') {
            return Err(BoundaryError::Syntax(text.into()));
        }
        let head = t[..open].trim_end().trim_end_matches('.').trim();
        let body = &t[open + 1..t.len() - 1];
        let prefix = if head.is_empty() { Word::identity() } else { model.parse_word(head)? };
        let period = model.parse_word(body)?;
        Self::new(prefix.letters(), period.letters())
    }

    pub fn format(&self, model: &GroupModel) -> String {
        let w = |ls: &[Letter]| model.format_word(&model.normal_form(ls).expect("reduced"));
        format!("{}.({})", w(&self.prefix), w(&self.period))
    }

    /// `g · ξ`.
    pub fn translate(&self, g: &Word) -> Result<Self> {
        let pre: Vec<Letter> = g.letters().iter().chain(&self.prefix).copied().collect();
        Self::new(&pre, &self.period)
    }

    pub fn random<R: Rng + ?Sized>(model: &GroupModel, rng: &mut R, max_prefix: usize, max_period: usize) -> Self {
        loop {
            let (lp, lq) = (rng.gen_range(0..=max_prefix), rng.gen_range(1..=max_period));
            let pre = model.random_element(rng, lp);
            let per = model.random_element(rng, lq);
            if let Ok(p) = Self::new(pre.letters(), per.letters()) {
                return p;
            }
        }
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}.({:?})", self.prefix, self.period)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterSet {
    pub points: Vec<Word>,
    pub k: usize,
    pub diameter: usize,
    /// On trees the appendix constants degenerate to exact medians.
    pub note: String,
}

fn line_vertices(model: &GroupModel, x: &BoundaryPoint, y: &BoundaryPoint, lo: usize, hi: usize) -> Result<Vec<Word>> {
    let l = x.lcp(y).ok_or(BoundaryError::Coincident)?;
    let mut out = Vec::new();
    for r in [x, y] {
        for n in l.max(lo)..=hi {
            out.push(r.vertex(model, n));
        }
    }
    Ok(out)
}

/// `K`-centers of the ideal triple: the median for `K = 0`, otherwise the
/// `K`-ball about it intersected with the union of the three lines.
pub fn tripod_centers(model: &GroupModel, a: &BoundaryPoint, b: &BoundaryPoint, c: &BoundaryPoint, k: usize) -> Result<CenterSet> {
    free_model(model)?;
    let ls = [a.lcp(b), a.lcp(c), b.lcp(c)];
    let ls: Vec<usize> = ls.into_iter().collect::<Option<_>>().ok_or(BoundaryError::Coincident)?;
    let (depth, ray) = [(ls[0], a), (ls[1], a), (ls[2], b)].into_iter().max_by_key(|p| p.0).expect("three");
    let median = ray.vertex(model, depth);
    let mut points = vec![median.clone()];
    if k > 0 {
        let lo = depth.saturating_sub(k);
        let hi = depth + k;
        let mut all = Vec::new();
        for (x, y) in [(a, b), (a, c), (b, c)] {
            all.extend(line_vertices(model, x, y, lo, hi)?);
        }
        points = all.into_iter().filter(|v| model.dist(v, &median) <= k).collect();
        points.sort();
        points.dedup();
    }
    let diameter = diameter(model, &points);
    Ok(CenterSet { points, k, diameter, note: "tree: K and 20δ constants taken as 0".into() })
}

fn diameter(model: &GroupModel, pts: &[Word]) -> usize {
    let mut d = 0;
    for (i, x) in pts.iter().enumerate() {
        for y in &pts[i + 1..] {
            d = d.max(model.dist(x, y));
        }
    }
    d
}

/// `[a, b, c, d] = diam(m(a, b, c) ∪ m(a, d, c))`.
pub fn cross_ratio(model: &GroupModel, q: &[BoundaryPoint; 4], k: usize) -> Result<usize> {
    let [a, b, c, d] = q;
    let mut pts = tripod_centers(model, a, b, c, k)?.points;
    pts.extend(tripod_centers(model, a, d, c, k)?.points);
    Ok(diameter(model, &pts))
}

/// The boundary extension of a shipped quasi-isometry.
pub fn boundary_map(model: &GroupModel, f: &BijectiveQI, xi: &BoundaryPoint) -> Result<BoundaryPoint> {
    match &f.rule {
        QiRule::Identity | QiRule::BoundedPermutation { .. } => Ok(xi.clone()),
        QiRule::LeftTranslation(g) => xi.translate(g),
        QiRule::Automorphism { images, .. } => {
            let sub = |ls: &[Letter]| -> Vec<Letter> {
                ls.iter()
                    .flat_map(|l| {
                        let w = &images[l.gen as usize];
                        if l.inv { model.inverse(w).letters().to_vec() } else { w.letters().to_vec() }
                    })
                    .collect()
            };
            BoundaryPoint::new(&sub(&xi.prefix), &sub(&xi.period))
        }
        QiRule::Composition(maps) => maps.iter().try_fold(xi.clone(), |acc, g| boundary_map(model, g, &acc)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossRatioFit {
    pub lambda: f64,
    pub eps: f64,
    pub witness: Option<[String; 4]>,
    pub evaluated: usize,
    pub skipped: usize,
    /// Max distance between `f(m(a,b,c))` and `m(fa, fb, fc)`.
    pub center_shift: usize,
}

/// With `λ' = 1`, the least `ε'` such that
/// `[fa, fb, fc, fd] <= λ' [a, b, c, d] + ε'` on the sample.
pub fn qi_crossratio_check(model: &GroupModel, f: &BijectiveQI, quads: &[[BoundaryPoint; 4]]) -> Result<CrossRatioFit> {
    free_model(model)?;
    let rows: Vec<Option<(i64, usize, usize)>> = quads
        .par_iter()
        .enumerate()
        .map(|(i, q)| -> Result<Option<(i64, usize, usize)>> {
            let img: Vec<BoundaryPoint> = match q.iter().map(|x| boundary_map(model, f, x)).collect() {
                Ok(v) => v,
                Err(BoundaryError::NoBoundaryAction) => return Ok(None),
                Err(e) => return Err(e),
            };
            let img: [BoundaryPoint; 4] = img.try_into().expect("four points");
            let before = cross_ratio(model, q, 0)? as i64;
            let after = cross_ratio(model, &img, 0)? as i64;
            let m0 = tripod_centers(model, &q[0], &q[1], &q[2], 0)?.points[0].clone();
            let m1 = tripod_centers(model, &img[0], &img[1], &img[2], 0)?.points[0].clone();
            let shift = model.dist(&f.apply(&m0), &m1);
            Ok(Some((after - before, i, shift)))
        })
        .collect::<Result<_>>()?;
    let mut eps = 0i64;
    let mut witness = None;
    let mut skipped = 0;
    let mut shift = 0;
    for r in &rows {
        match r {
            None => skipped += 1,
            Some((excess, i, s)) => {
                shift = shift.max(*s);
                if *excess > eps {
                    eps = *excess;
                    witness = Some(quads[*i].clone().map(|x| x.format(model)));
                }
            }
        }
    }
    Ok(CrossRatioFit {
        lambda: 1.0,
        eps: eps as f64,
        witness,
        evaluated: rows.len() - skipped,
        skipped,
        center_shift: shift,
    })
}

/// Seeded quadruples of pairwise distinct boundary points.
pub fn random_quadruples(model: &GroupModel, count: usize, seed: u64) -> Vec<[BoundaryPoint; 4]> {
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let q: [BoundaryPoint; 4] = std::array::from_fn(|_| BoundaryPoint::random(model, &mut rng, 4, 3));
        let distinct = (0..4).all(|i| (i + 1..4).all(|j| q[i].lcp(&q[j]).is_some()));
        if distinct {
            out.push(q);
        }
    }
    out
}

/// Diagnostic centers of a vertex triple in a finite graph: vertices within
/// `k` of all three geodesic intervals.
pub fn vertex_triple_centers(g: &FiniteGraph, x: usize, y: usize, z: usize, k: u32) -> Vec<usize> {
    let rows = [g.distances_from(x), g.distances_from(y), g.distances_from(z)];
    let interval = |i: usize, j: usize| -> Vec<usize> {
        let dij = rows[i][[x, y, z][j]];
        (0..g.len()).filter(|&v| rows[i][v] + rows[j][v] == dij).collect()
    };
    let near: Vec<Vec<u32>> =
        [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| g.distances_from_set(&interval(i, j))).collect();
    (0..g.len()).filter(|&v| near.iter().all(|row| row[v] <= k)).collect()
}

impl PartialOrd for BoundaryPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BoundaryPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.prefix.len(), &self.prefix, self.period.len(), &self.period).cmp(&(
            other.prefix.len(),
            &other.prefix,
            other.period.len(),
            &other.period,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::FiniteGraph;
    use proptest::prelude::*;

    fn f2() -> GroupModel {
        GroupModel::parse("F2").unwrap()
    }

    fn bp(m: &GroupModel, s: &str) -> BoundaryPoint {
        BoundaryPoint::parse(m, s).unwrap()
    }

    #[test]
    fn canonical_forms() {
        let m = f2();
        assert_eq!(bp(&m, "a.(a)"), bp(&m, "(a)"));
        assert_eq!(bp(&m, "b a.(b a)"), bp(&m, "(b a)"));
        assert_eq!(bp(&m, "(a a)"), bp(&m, "e.(a)"));
        assert_eq!(bp(&m, "b.(a^-1 b a)"), bp(&m, "b a^-1.(b)"));
        assert_eq!(bp(&m, "b.(a)").format(&m), "b.(a)");
        assert!(BoundaryPoint::parse(&m, "b.a").is_err());
    }

    #[test]
    fn centers_and_ratios() {
        let m = f2();
        let w = |s: &str| m.parse_word(s).unwrap();
        let (a, b, ab, ba, bi) =
            (bp(&m, "(a)"), bp(&m, "(b)"), bp(&m, "a.(b)"), bp(&m, "b.(a)"), bp(&m, "(b^-1)"));
        assert_eq!(tripod_centers(&m, &a, &b, &bi, 0).unwrap().points, vec![Word::identity()]);
        assert_eq!(tripod_centers(&m, &a, &b, &ab, 0).unwrap().points, vec![w("a")]);
        assert_eq!(tripod_centers(&m, &a, &b, &ba, 0).unwrap().points, vec![w("b")]);
        let c1 = tripod_centers(&m, &a, &b, &ab, 1).unwrap();
        assert!(c1.points.contains(&w("a")) && c1.diameter <= 2);
        assert_eq!(cross_ratio(&m, &[a.clone(), b.clone(), ab.clone(), ba.clone()], 0).unwrap(), 0);
        assert_eq!(cross_ratio(&m, &[a.clone(), ab.clone(), b.clone(), ba.clone()], 0).unwrap(), 2);
        assert_eq!(cross_ratio(&m, &[a.clone(), b.clone(), ab.clone(), b.clone()], 0).unwrap(), 0);
        assert_eq!(tripod_centers(&m, &a, &a, &b, 0).unwrap_err(), BoundaryError::Coincident);
    }

    #[test]
    fn qi_fits() {
        let m = f2();
        let quads = random_quadruples(&m, 300, 5);
        let id = BijectiveQI::identity(&m);
        let r = qi_crossratio_check(&m, &id, &quads).unwrap();
        assert_eq!((r.lambda, r.eps), (1.0, 0.0));
        let g = m.parse_word("a b^-1").unwrap();
        let t = BijectiveQI::translation(&m, &g).unwrap();
        let r = qi_crossratio_check(&m, &t, &quads).unwrap();
        assert!(r.eps <= 2.0 * g.len() as f64);
        let sw = BijectiveQI::parity_swap(&m).unwrap();
        let r = qi_crossratio_check(&m, &sw, &quads).unwrap();
        assert!(r.eps <= 2.0 && r.center_shift <= 1);
    }

    #[test]
    fn finite_graph_centers() {
        let g = FiniteGraph::path(7).unwrap();
        assert_eq!(vertex_triple_centers(&g, 0, 6, 3, 0), vec![3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn cross_ratio_symmetries(seed in 0u64..100_000) {
            let m = f2();
            let q = random_quadruples(&m, 1, seed).pop().unwrap();
            let [a, b, c, d] = q.clone();
            let x = cross_ratio(&m, &q, 0).unwrap();
            prop_assert_eq!(x, cross_ratio(&m, &[c.clone(), b.clone(), a.clone(), d.clone()], 0).unwrap());
            prop_assert_eq!(x, cross_ratio(&m, &[c.clone(), d.clone(), a.clone(), b.clone()], 0).unwrap());
            let swap = BijectiveQI::generator_permutation(&m, &[(1, false), (0, true)]).unwrap();
            let img = q.clone().map(|p| boundary_map(&m, &swap, &p).unwrap());
            prop_assert_eq!(x, cross_ratio(&m, &img, 0).unwrap());
            for t in [tripod_centers(&m, &a, &b, &c, 0).unwrap(), tripod_centers(&m, &a, &d, &c, 0).unwrap()] {
                prop_assert_eq!(t.points.len(), 1);
                prop_assert_eq!(t.diameter, 0);
            }
        }
    }
}
