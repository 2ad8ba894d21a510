//! Window-scoped Morse certificates, detectability of geodesics in the
//! hyperbolic space, incompatibility witnesses and mutual projections of
//! rays.
//!
//! Detour paths are concatenations of two geodesics `[u, z] ∪ [z, v]` with
//! `u, v` on the segment and `z` in the `W`-neighbourhood; each one is checked
//! against the quasi-geodesic inequality at every index pair before it counts.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{nu_for_pair, Ray};
use crate::groups::{GeodesicPath, GroupError, GroupModel, ModelKind, Word, BALL_CAP};
use crate::projections::set_diameter;
use crate::projections::ProjError;
use crate::spaces::{OrbitMap, SpaceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorseError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Proj(#[from] ProjError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, MorseError>;

/// Evaluations allowed per certificate cell.
pub const CELL_BUDGET: usize = 20_000_000;

/// `(j - i)/λ - ε <= d(μ_i, μ_j) <= λ (j - i) + ε` at every index pair.
pub fn is_quasi_geodesic(m: &GroupModel, path: &[Word], lambda: f64, eps: f64) -> bool {
    (0..path.len()).all(|i| {
        (i + 1..path.len()).all(|j| {
            let d = m.dist(&path[i], &path[j]) as f64;
            let t = (j - i) as f64;
            d >= t / lambda - eps - 1e-9 && d <= lambda * t + eps + 1e-9
        })
    })
}

fn detour_path(m: &GroupModel, u: &Word, z: &Word, v: &Word) -> Vec<Word> {
    let mut p = m.geodesic(u, z).expect("checked words").vertices;
    p.extend(m.geodesic(z, v).expect("checked words").vertices.into_iter().skip(1));
    p
}

fn distance_to(m: &GroupModel, set: &[Word], x: &Word) -> usize {
    set.iter().map(|s| m.dist(s, x)).min().unwrap_or(usize::MAX)
}

/// Group elements within `w` of the path.
pub fn neighbourhood(m: &GroupModel, path: &[Word], w: usize) -> Result<Vec<Word>> {
    let mut out = BTreeSet::new();
    for v in path {
        out.extend(m.ball_capped(v, w, BALL_CAP)?);
        if out.len() > BALL_CAP {
            return Err(GroupError::CapExceeded { radius: w, cap: BALL_CAP }.into());
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    CertifiedOnWindow,
    WitnessFound,
    Skipped,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::CertifiedOnWindow => "certified-on-window",
            CellStatus::WitnessFound => "witness-found",
            CellStatus::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseCell {
    pub lambda: f64,
    pub eps: f64,
    pub max_detour: usize,
    pub status: CellStatus,
    pub witness: Option<Vec<Word>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseCertificate {
    pub segment: Vec<Word>,
    pub window: usize,
    pub cells: Vec<MorseCell>,
}

impl MorseCertificate {
    /// `lambda,eps,maxDetour,status` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,eps,maxDetour,status,window\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", c.lambda, c.eps, c.max_detour, c.status.as_str(), self.window);
        }
        out
    }

    pub fn cell(&self, lambda: f64, eps: f64) -> Option<&MorseCell> {
        self.cells.iter().find(|c| c.lambda == lambda && c.eps == eps)
    }

    /// Smallest recorded detour over cells dominating `(λ, ε)`.
    pub fn gauge(&self, lambda: f64, eps: f64) -> Option<usize> {
        self.cells
            .iter()
            .filter(|c| c.lambda >= lambda && c.eps >= eps && c.status != CellStatus::Skipped)
            .map(|c| c.max_detour)
            .min()
    }
}

/// The candidate grid `λ ∈ {1..=k}`, `ε ∈ {0..=c}`.
pub fn integer_grid(k: u32, c: u32) -> Vec<(f64, f64)> {
    (1..=k).flat_map(|l| (0..=c).map(move |e| (l as f64, e as f64))).collect()
}

fn cell_search(m: &GroupModel, seg: &[Word], cands: &[Word], lambda: f64, eps: f64) -> (usize, Option<Vec<Word>>, bool) {
    let n = seg.len();
    let mut evals = 0usize;
    let mut best: (usize, Option<Vec<Word>>) = (0, None);
    for i in 0..n {
        for j in i + 1..n {
            let (u, v) = (&seg[i], &seg[j]);
            let duv = m.dist(u, v) as f64;
            for z in cands {
                evals += 1;
                if evals > CELL_BUDGET {
                    return (best.0, best.1, false);
                }
                let len = (m.dist(u, z) + m.dist(z, v)) as f64;
                if duv < len / lambda - eps - 1e-9 {
                    continue;
                }
                let dz = distance_to(m, seg, z);
                if dz <= best.0 {
                    continue;
                }
                let path = detour_path(m, u, z, v);
                if is_quasi_geodesic(m, &path, lambda, eps) {
                    let det = path.iter().map(|p| distance_to(m, seg, p)).max().unwrap_or(0);
                    if det > best.0 {
                        best = (det, Some(path));
                    }
                }
            }
        }
    }
    (best.0, best.1, true)
}

/// Maximal detour of verified `(λ, ε)` detour paths within `N_W(segment)`,
/// made monotone over dominated cells.
pub fn morse_certificate(m: &GroupModel, segment: &GeodesicPath, grid: &[(f64, f64)], w: usize) -> Result<MorseCertificate> {
    let seg = &segment.vertices;
    if seg.is_empty() {
        return Err(MorseError::Precondition("empty segment".into()));
    }
    for (i, a) in seg.iter().enumerate() {
        m.check(a)?;
        if m.dist(&seg[0], a) != i {
            return Err(MorseError::Precondition("segment is not a geodesic".into()));
        }
    }
    let cands = neighbourhood(m, seg, w)?;
    let raw: Vec<(usize, Option<Vec<Word>>, bool)> =
        grid.par_iter().map(|&(l, e)| cell_search(m, seg, &cands, l, e)).collect();
    let mut cells = Vec::with_capacity(grid.len());
    for (idx, &(l, e)) in grid.iter().enumerate() {
        let mut det = 0;
        let mut witness = None;
        let mut complete = true;
        for (jdx, &(l2, e2)) in grid.iter().enumerate() {
            if l2 <= l && e2 <= e {
                let (d, wit, ok) = &raw[jdx];
                complete &= *ok || jdx != idx;
                if *d > det || (jdx == idx && *d == det && witness.is_none()) {
                    det = *d;
                    witness = wit.clone();
                }
            }
        }
        let status = if !complete {
            CellStatus::Skipped
        } else if det >= w && w > 0 {
            CellStatus::WitnessFound
        } else {
            CellStatus::CertifiedOnWindow
        };
        cells.push(MorseCell { lambda: l, eps: e, max_detour: det, status, witness });
    }
    Ok(MorseCertificate { segment: seg.clone(), window: w, cells })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detectability {
    QuasiGeodesic,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityReport {
    pub lambda_best: f64,
    pub image_diameter: usize,
    pub verdict: Detectability,
}

/// Least `λ` making `ρ ∘ segment` a parametrised `(λ, λ)`-quasi-geodesic.
pub fn detectability_check(rho: &OrbitMap, segment: &GeodesicPath) -> Result<DetectabilityReport> {
    let v = &segment.vertices;
    let mut lambda: f64 = 1.0;
    let mut diam = 0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            let d = rho.dist(&v[i], &v[j])?;
            diam = diam.max(d);
            lambda = lambda.max(nu_for_pair((j - i) as f64, d as f64));
        }
    }
    let verdict = if diam <= 2 { Detectability::Degenerate } else { Detectability::QuasiGeodesic };
    Ok(DetectabilityReport { lambda_best: lambda, image_diameter: diam, verdict })
}

/// Morse gauge used for incompatibility margins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gauge {
    /// `M(λ, ε) = a λ + b ε + c`.
    Affine { a: f64, b: f64, c: f64 },
    Table(MorseCertificate),
}

impl Gauge {
    pub fn eval(&self, lambda: f64, eps: f64) -> Option<f64> {
        match self {
            Gauge::Affine { a, b, c } => Some(a * lambda + b * eps + c),
            Gauge::Table(cert) => cert.gauge(lambda, eps).map(|d| d as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompatibilityWitness {
    pub mu: Vec<Word>,
    pub k: f64,
    pub c: f64,
    pub p: Word,
    pub distance: usize,
    pub margin: f64,
    pub kappa: f64,
    pub l: usize,
    pub corner: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompatibilitySearch {
    pub witness: Option<IncompatibilityWitness>,
    pub evaluated: usize,
    pub exhausted_budget: bool,
}

/// `d(p, β)` for a geodesic ray known through its prefix; the tail bound
/// `d(p, β_m) >= m - |p|` certifies the minimum.
pub fn ray_distance(m: &GroupModel, beta: &[Word], p: &Word) -> Result<usize> {
    let best = distance_to(m, beta, p);
    let tail = (beta.len()).saturating_sub(p.len());
    if tail < best {
        return Err(MorseError::Precondition("ray prefix too short to certify d(p, β)".into()));
    }
    Ok(best)
}

/// Corner points of flat pieces: for `u, v` on `β` in the same coset of an
/// abelian factor, the lattice corners of the box they span.
fn corner_points(m: &GroupModel, beta: &[Word]) -> Vec<(usize, usize, Word)> {
    let ModelKind::FreeProduct(factors) = m.kind() else { return Vec::new() };
    let mut out = Vec::new();
    for i in 0..beta.len() {
        for j in i + 2..beta.len() {
            let q = m.quotient(&beta[i], &beta[j]);
            let syl = m.syllables(&q);
            if syl.len() != 1 {
                continue;
            }
            let f = syl[0].0;
            if !matches!(factors[f].kind(), ModelKind::FreeAbelian(r) if *r >= 2) {
                continue;
            }
            let ls = q.letters();
            let split = (1..ls.len()).filter(|&s| ls[s].gen != ls[s - 1].gen);
            for s in split {
                let first = m.normal_form(&ls[..s]).expect("prefix");
                let second = m.normal_form(&ls[s..]).expect("suffix");
                out.push((i, j, m.mul(&beta[i], &first)));
                out.push((i, j, m.mul(&beta[i], &second)));
            }
        }
    }
    out
}

/// Searches detour paths with endpoints on `β[0, L]` for the maximal margin
/// `d(p, β) - (M(k, c + 2κ) + 2κ)` over the integer grid `k <= 4, c <= 8`.
pub fn incompatibility_witness(
    m: &GroupModel,
    beta: &GeodesicPath,
    gauge: &Gauge,
    kappa: f64,
    l: usize,
    window: usize,
    budget: usize,
) -> Result<IncompatibilitySearch> {
    let full = &beta.vertices;
    if full.len() <= l {
        return Err(MorseError::Precondition(format!("β prefix has {} < L + 1 points", full.len())));
    }
    let pre = &full[..=l];
    let grid = integer_grid(4, 8);
    let mut evaluated = 0;
    let mut best: Option<IncompatibilityWitness> = None;
    let mut seen: HashSet<Vec<Word>> = HashSet::new();

    let mut consider = |mu: Vec<Word>, corner: bool, evaluated: &mut usize| -> Result<()> {
        *evaluated += 1;
        if !seen.insert(mu.clone()) {
            return Ok(());
        }
        let (p, dp) = mu
            .iter()
            .map(|x| (x.clone(), distance_to(m, full, x)))
            .max_by_key(|(_, d)| *d)
            .expect("nonempty path");
        if dp == 0 {
            return Ok(());
        }
        let dp = ray_distance(m, full, &p)?;
        for &(k, c) in &grid {
            let Some(g) = gauge.eval(k, c + 2.0 * kappa) else { continue };
            let margin = dp as f64 - (g + 2.0 * kappa);
            if best.as_ref().is_some_and(|b| b.margin >= margin) {
                continue;
            }
            if margin > 0.0 && is_quasi_geodesic(m, &mu, k, c) {
                best = Some(IncompatibilityWitness {
                    mu: mu.clone(),
                    k,
                    c,
                    p: p.clone(),
                    distance: dp,
                    margin,
                    kappa,
                    l,
                    corner,
                });
            }
        }
        Ok(())
    };

    for (i, j, z) in corner_points(m, pre) {
        if evaluated >= budget {
            break;
        }
        consider(detour_path(m, &pre[i], &z, &pre[j]), true, &mut evaluated)?;
    }
    let cands = neighbourhood(m, pre, window)?;
    'outer: for i in 0..pre.len() {
        for j in i + 2..pre.len() {
            for z in &cands {
                if evaluated >= budget {
                    break 'outer;
                }
                let len = m.dist(&pre[i], z) + m.dist(z, &pre[j]);
                if (m.dist(&pre[i], &pre[j]) as f64) < len as f64 / 4.0 - 8.0 {
                    continue;
                }
                consider(detour_path(m, &pre[i], z, &pre[j]), false, &mut evaluated)?;
            }
        }
    }
    let exhausted_budget = evaluated >= budget;
    if let Some(w) = &best {
        let recheck = is_quasi_geodesic(m, &w.mu, w.k, w.c)
            && w.mu.first().is_some_and(|a| pre.contains(a))
            && w.mu.last().is_some_and(|b| pre.contains(b));
        if !recheck {
            return Err(MorseError::Precondition("witness failed re-validation".into()));
        }
    }
    Ok(IncompatibilitySearch { witness: best, evaluated, exhausted_budget })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutualProjection {
    pub alpha_of_beta: usize,
    pub beta_of_alpha: usize,
    pub window: usize,
    pub same_ray: bool,
    pub certified: bool,
}

fn finite_nearest(rho: &OrbitMap, set: &[Word], x: &Word) -> Result<Vec<usize>> {
    let ds: Vec<usize> = set.iter().map(|q| rho.dist(x, q)).collect::<std::result::Result<_, _>>()?;
    let best = *ds.iter().min().expect("nonempty");
    Ok(ds.iter().enumerate().filter(|(_, d)| **d == best).map(|(i, _)| i).collect())
}

/// `(diam π_α(β), diam π_β(α))` for ray prefixes of length `window`.
pub fn mutual_projection_check(rho: &OrbitMap, alpha: &Ray, beta: &Ray, window: usize) -> Result<MutualProjection> {
    let m = &rho.group;
    let a = alpha.points(m, window);
    let b = beta.points(m, window);
    let same_ray = alpha == beta;
    let mut certified = rho.space.is_tree() && !same_ray;
    let mut side = |onto: &[Word], from: &[Word]| -> Result<usize> {
        let mut idx = BTreeSet::new();
        for x in from {
            idx.extend(finite_nearest(rho, onto, x)?);
        }
        let last = finite_nearest(rho, onto, from.last().expect("nonempty"))?;
        if last.iter().any(|&i| i + 1 >= onto.len()) {
            certified = false;
        }
        let pts: Vec<Word> = idx.into_iter().map(|i| onto[i].clone()).collect();
        Ok(set_diameter(rho, &pts)?)
    };
    let ab = side(&a, &b)?;
    let ba = side(&b, &a)?;
    Ok(MutualProjection { alpha_of_beta: ab, beta_of_alpha: ba, window, same_ray, certified })
}

/// Mutual projections of two path prefixes from `e` in the word metric of
/// the group itself.
pub fn mutual_projection_paths(m: &GroupModel, alpha: &GeodesicPath, beta: &GeodesicPath) -> MutualProjection {
    let side = |onto: &[Word], from: &[Word]| -> usize {
        let mut idx = BTreeSet::new();
        for x in from {
            let ds: Vec<usize> = onto.iter().map(|q| m.dist(x, q)).collect();
            let best = *ds.iter().min().expect("nonempty");
            idx.extend(ds.iter().enumerate().filter(|(_, d)| **d == best).map(|(i, _)| i));
        }
        let pts: Vec<&Word> = idx.iter().map(|&i| &onto[i]).collect();
        let mut d = 0;
        for (i, x) in pts.iter().enumerate() {
            for y in &pts[i + 1..] {
                d = d.max(m.dist(x, y));
            }
        }
        d
    };
    MutualProjection {
        alpha_of_beta: side(&alpha.vertices, &beta.vertices),
        beta_of_alpha: side(&beta.vertices, &alpha.vertices),
        window: alpha.len().min(beta.len()),
        same_ray: alpha == beta,
        certified: false,
    }
}

/// The ray in `Z^2 * Z` that climbs the flat staircase `(y x)^size` to the
/// corner `(size, size)` and then follows `z`, cut at `tail` letters of `z`.
pub fn diagonal_crossing_ray(m: &GroupModel, size: usize, tail: usize) -> Result<GeodesicPath> {
    let w = m.parse_word(&format!("{} z^{tail}", "y x ".repeat(size)))?;
    Ok(GeodesicPath::from_word(m, &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(m: &GroupModel, s: &str) -> GeodesicPath {
        GeodesicPath::from_word(m, &m.parse_word(s).unwrap())
    }

    #[test]
    fn tree_segment_has_no_detour() {
        let m = GroupModel::parse("F2").unwrap();
        let c = morse_certificate(&m, &path(&m, "a^5"), &[(1.0, 0.0), (2.0, 1.0)], 2).unwrap();
        assert_eq!(c.cell(1.0, 0.0).unwrap().max_detour, 0);
        assert_eq!(c.cell(1.0, 0.0).unwrap().status, CellStatus::CertifiedOnWindow);
    }

    #[test]
    fn staircase_corner_detour() {
        let m = GroupModel::parse("Z^2").unwrap();
        let seg = path(&m, &"y x ".repeat(6));
        let c = morse_certificate(&m, &seg, &[(1.0, 0.0)], 6).unwrap();
        let cell = c.cell(1.0, 0.0).unwrap();
        assert!(cell.max_detour >= 6);
        let w = cell.witness.as_ref().unwrap();
        assert!(is_quasi_geodesic(&m, w, 1.0, 0.0));
        assert!(c.to_csv().starts_with("lambda,eps,maxDetour,status"));
    }

    #[test]
    fn free_factor_segment() {
        let m = GroupModel::parse("Z^2 * Z").unwrap();
        let c = morse_certificate(&m, &path(&m, "z^6"), &[(1.0, 0.0)], 2).unwrap();
        assert_eq!(c.cell(1.0, 0.0).unwrap().max_detour, 0);
    }

    #[test]
    fn certificate_is_monotone() {
        let m = GroupModel::parse("Z^2").unwrap();
        let grid = integer_grid(2, 2);
        let c = morse_certificate(&m, &path(&m, "y x y x y x"), &grid, 3).unwrap();
        for a in &c.cells {
            for b in &c.cells {
                if a.lambda <= b.lambda && a.eps <= b.eps {
                    assert!(a.max_detour <= b.max_detour);
                }
            }
        }
    }

    #[test]
    fn detectability_examples() {
        let f2 = GroupModel::parse("F2").unwrap();
        let rho = OrbitMap::cayley_tree(f2.clone()).unwrap();
        let r = detectability_check(&rho, &path(&f2, "a b^2 a^-1 b")).unwrap();
        assert_eq!(r.lambda_best, 1.0);
        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let bs = OrbitMap::bass_serre(fp.clone()).unwrap();
        let r = detectability_check(&bs, &path(&fp, "x z x z x z x z")).unwrap();
        assert_eq!(r.verdict, Detectability::QuasiGeodesic);
        assert!(r.lambda_best <= 2.0, "{}", r.lambda_best);
        let r = detectability_check(&bs, &path(&fp, "x y x y x y")).unwrap();
        assert_eq!(r.verdict, Detectability::Degenerate);
        let r = detectability_check(&bs, &path(&fp, "z^6")).unwrap();
        assert_eq!(r.verdict, Detectability::Degenerate);
    }

    #[test]
    fn incompatibility_examples() {
        let gauge = Gauge::Affine { a: 1.0, b: 1.0, c: 0.0 };
        let f2 = GroupModel::parse("F2").unwrap();
        let beta = path(&f2, "a^14");
        let r = incompatibility_witness(&f2, &beta, &gauge, 1.0, 10, 2, 1_000_000).unwrap();
        assert!(r.witness.is_none());

        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let beta = diagonal_crossing_ray(&fp, 6, 12).unwrap();
        let r = incompatibility_witness(&fp, &beta, &gauge, 1.0, 24, 0, 1_000_000).unwrap();
        let w = r.witness.unwrap();
        assert!(w.corner);
        assert!(w.margin >= 1.0);
        assert_eq!(w.distance, 6);
        let r = incompatibility_witness(&fp, &beta, &gauge, 1.0, 2, 1, 1_000_000).unwrap();
        assert!(r.witness.is_none());
    }

    #[test]
    fn mutual_projection_examples() {
        let m = GroupModel::parse("F2").unwrap();
        let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
        let w = |s: &str| m.parse_word(s).unwrap();
        let ra = Ray { base: Word::identity(), step: w("a") };
        let rb = Ray { base: Word::identity(), step: w("b") };
        let r = mutual_projection_check(&rho, &ra, &rb, 8).unwrap();
        assert_eq!((r.alpha_of_beta, r.beta_of_alpha), (0, 0));
        assert!(r.certified);
        let r = mutual_projection_check(&rho, &ra, &ra, 8).unwrap();
        assert!(r.same_ray && r.alpha_of_beta == 8);
        let r2 = mutual_projection_check(&rho, &ra, &ra, 12).unwrap();
        assert!(r2.alpha_of_beta > r.alpha_of_beta);
        let rba = Ray { base: w("b"), step: w("a") };
        let r = mutual_projection_check(&rho, &ra, &rba, 8).unwrap();
        assert!(r.alpha_of_beta <= 2 && r.beta_of_alpha <= 2);
        let fp = GroupModel::parse("Z^2 * Z").unwrap();
        let beta = diagonal_crossing_ray(&fp, 6, 12).unwrap();
        let r = mutual_projection_paths(&fp, &path(&fp, "z^18"), &beta);
        assert!(r.alpha_of_beta <= 2 && r.beta_of_alpha <= 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn tree_geodesics_certify_zero(letters in proptest::collection::vec(0usize..4, 1..7)) {
            let m = GroupModel::parse("F2").unwrap();
            let gens = m.letters();
            let raw: Vec<_> = letters.iter().map(|&i| gens[i]).collect();
            let w = m.normal_form(&raw).unwrap();
            let seg = GeodesicPath::from_word(&m, &w);
            let c = morse_certificate(&m, &seg, &[(1.0, 0.0)], 2).unwrap();
            prop_assert_eq!(c.cells[0].max_detour, 0);
        }
    }
}
