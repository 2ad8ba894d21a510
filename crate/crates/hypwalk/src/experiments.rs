//! Monte Carlo harness tying random walks to projections: drift, linear
//! progress, bounded projections, tail curves and the recursion inequality.
//!
//! Every estimate carries its sample count and binomial standard error.
//! Trajectory `i` always uses stream `i` of the master seed, so reruns are
//! byte-identical whatever the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{stream_rng, ChainError, MarkovKernel};
use crate::fit::least_squares;
use crate::groups::{GroupError, GroupModel, ModelKind, Word};
use crate::projections::{axis_of, axis_set_diameter, df_sum, enumerate_ht, nearest_on_axis, Axis, ProjError};
use crate::spaces::{OrbitMap, SpaceError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Cells below this many events are left out of log-linear fits.
pub const MIN_EVENTS: usize = 10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Proj(#[from] ProjError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("config: {0}")]
    Config(String),
    #[error("H_T enumeration for ({0}) is not certified")]
    Uncertified(String),
    #[error("t grid does not cover [t - D, t + D] for any t >= D")]
    Coverage,
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Plain `key = value` experiment description. Lists are comma-separated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: String,
    pub space: String,
    pub kernel: String,
    pub hold: Option<f64>,
    pub g: String,
    pub t: usize,
    pub c: Vec<f64>,
    pub n: Vec<usize>,
    pub samples: usize,
    pub seed: Option<u64>,
    pub window: usize,
    pub o: String,
    pub p: String,
    pub d: usize,
    pub eps: Option<f64>,
    pub tmax: usize,
    pub cells: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "F2".into(),
            space: "tree".into(),
            kernel: "srw".into(),
            hold: None,
            g: "a".into(),
            t: 4,
            c: vec![4.0],
            n: vec![50, 100, 200, 400],
            samples: 1000,
            seed: None,
            window: 12,
            o: "e".into(),
            p: "e".into(),
            d: 2,
            eps: None,
            tmax: 30,
            cells: 20,
        }
    }
}

pub const CONFIG_KEYS: [&str; 17] = [
    "model", "space", "kernel", "hold", "g", "T", "C", "n", "samples", "seed", "window", "o", "p", "D", "eps", "tmax",
    "cells",
];

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| ExperimentError::Config(format!("bad {key} entry {s:?}"))))
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| ExperimentError::Config(format!("bad value for {key}: {v:?}")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model" => self.model = v.into(),
            "space" => self.space = v.into(),
            "kernel" => self.kernel = v.into(),
            "hold" => self.hold = Some(one(key, v)?),
            "g" => self.g = v.into(),
            "T" => self.t = one(key, v)?,
            "C" => self.c = list(key, v)?,
            "n" => self.n = list(key, v)?,
            "samples" => self.samples = one(key, v)?,
            "seed" => self.seed = Some(one(key, v)?),
            "window" => self.window = one(key, v)?,
            "o" => self.o = v.into(),
            "p" => self.p = v.into(),
            "D" => self.d = one(key, v)?,
            "eps" => self.eps = Some(one(key, v)?),
            "tmax" => self.tmax = one(key, v)?,
            "cells" => self.cells = one(key, v)?,
            other => return Err(ExperimentError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v)?;
        }
        Ok(c)
    }

    /// Sorted `key = value` lines, the input to the config hash.
    pub fn canonical(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut m = BTreeMap::new();
        m.insert("model", self.model.clone());
        m.insert("space", self.space.clone());
        m.insert("kernel", self.kernel.clone());
        m.insert("hold", self.hold.map(|h| h.to_string()).unwrap_or_default());
        m.insert("g", self.g.clone());
        m.insert("T", self.t.to_string());
        m.insert("C", join(&self.c.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        m.insert("n", join(&self.n.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        m.insert("samples", self.samples.to_string());
        m.insert("seed", self.seed.map(|s| s.to_string()).unwrap_or_default());
        m.insert("window", self.window.to_string());
        m.insert("o", self.o.clone());
        m.insert("p", self.p.clone());
        m.insert("D", self.d.to_string());
        m.insert("eps", self.eps.map(|e| e.to_string()).unwrap_or_default());
        m.insert("tmax", self.tmax.to_string());
        m.insert("cells", self.cells.to_string());
        m.into_iter().filter(|(_, v)| !v.is_empty()).fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| ExperimentError::Config("seed is mandatory".into()))
    }

    pub fn resolve(&self) -> Result<Setup> {
        let model = GroupModel::parse(&self.model)?;
        let rho = match self.space.as_str() {
            "tree" | "cayley-tree" => OrbitMap::cayley_tree(model.clone())?,
            "bass-serre" => OrbitMap::bass_serre(model.clone())?,
            other => return Err(ExperimentError::Config(format!("unknown space {other:?}"))),
        };
        let kernel = MarkovKernel::by_name(&model, &self.kernel, self.hold)?;
        let g = model.parse_word(&self.g)?;
        let o = model.parse_word(&self.o)?;
        let p = model.parse_word(&self.p)?;
        if self.samples == 0 || self.n.is_empty() || self.c.iter().any(|&c| !(c > 0.0)) {
            return Err(ExperimentError::Config("need samples > 0, a nonempty n grid and positive C".into()));
        }
        Ok(Setup { model, rho, kernel, g, o, p })
    }
}

/// A config with every component resolved.
pub struct Setup {
    pub model: GroupModel,
    pub rho: OrbitMap,
    pub kernel: MarkovKernel,
    pub g: Word,
    pub o: Word,
    pub p: Word,
}

/// Provenance lines written at the top of every table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config_hash: String,
    /// `None` for deterministic runs.
    pub seed: Option<u64>,
    pub windows: String,
    pub version: String,
}

impl RunHeader {
    pub fn lines(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!("# config_hash={} seed={seed} windows={} version={}\n", self.config_hash, self.windows, self.version)
    }
}

/// Estimate with `successes / samples` and its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub successes: usize,
    pub samples: usize,
    pub p: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(successes: usize, samples: usize) -> Self {
        let p = successes as f64 / samples as f64;
        Estimate { successes, samples, p, se: (p * (1.0 - p) / samples as f64).sqrt() }
    }
}

/// Walks `n` steps on stream `stream`, calling `visit(r, w_r)` for `r = 0..=n`.
pub fn walk(kernel: &MarkovKernel, start: &Word, n: usize, seed: u64, stream: u64, mut visit: impl FnMut(usize, &Word)) {
    let mut rng = stream_rng(seed, stream);
    let mut w = start.clone();
    visit(0, &w);
    for r in 1..=n {
        let u: f64 = rng.gen();
        kernel.step_in_place(&mut w, u);
        visit(r, &w);
    }
}

/// `E[|w_n|] / n` for the simple random walk on the free group of rank `k`,
/// by the exact radial birth-death recursion.
pub fn drift_oracle(k: u16, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let up = (2.0 * k as f64 - 1.0) / (2.0 * k as f64);
    let mut dist = vec![0.0; n + 2];
    dist[0] = 1.0;
    for step in 0..n {
        let mut next = vec![0.0; n + 2];
        for r in 0..=step.min(n) {
            let p = dist[r];
            if p == 0.0 {
                continue;
            }
            if r == 0 {
                next[1] += p;
            } else {
                next[r + 1] += p * up;
                next[r - 1] += p * (1.0 - up);
            }
        }
        dist = next;
    }
    dist.iter().enumerate().map(|(r, p)| r as f64 * p).sum::<f64>() / n as f64
}

/// Exact `P[|w_n| < bound]` for the same radial chain.
pub fn radial_tail_oracle(k: u16, n: usize, bound: f64) -> f64 {
    let up = (2.0 * k as f64 - 1.0) / (2.0 * k as f64);
    let mut dist = vec![0.0; n + 2];
    dist[0] = 1.0;
    for _ in 0..n {
        let mut next = vec![0.0; n + 2];
        for (r, &p) in dist.iter().enumerate().take(n + 1) {
            if r == 0 {
                next[1] += p;
            } else {
                next[r + 1] += p * up;
                next[r - 1] += p * (1.0 - up);
            }
        }
        dist = next;
    }
    dist.iter().enumerate().filter(|(r, _)| (*r as f64) < bound).map(|(_, p)| p).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub n: usize,
    pub c: f64,
    /// Event `d(ρo, ρw_n) >= n / C`.
    pub progress: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub oracle: Option<f64>,
}

/// Log-linear fit of the failure probability `P[d < n / C]` against `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub used: Vec<usize>,
    pub excluded: Vec<usize>,
    pub nonincreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressTable {
    pub rows: Vec<ProgressRow>,
    pub drift: Vec<DriftRow>,
    pub fits: Vec<DecayFit>,
}

impl ProgressTable {
    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.lines();
        s.push_str("n,C,successes,samples,p,se\n");
        for r in &self.rows {
            let e = r.progress;
            let _ = writeln!(s, "{},{},{},{},{:.6},{:.6}", r.n, r.c, e.successes, e.samples, e.p, e.se);
        }
        s
    }

    pub fn drift_csv(&self, header: &RunHeader) -> String {
        let mut s = header.lines();
        s.push_str("n,mean_d_over_n,se,oracle\n");
        for r in &self.drift {
            let o = r.oracle.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.6},{:.6},{}", r.n, r.mean, r.se, o);
        }
        s
    }
}

fn log_linear(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|&(x, _)| vec![1.0, x]).collect();
    let y: Vec<f64> = points.iter().map(|&(_, p)| p.ln()).collect();
    let beta = least_squares(&rows, &y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().zip(&y).map(|(&(x, _), v)| (v - beta[0] - beta[1] * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((beta[1], beta[0], r2))
}

fn free_rank(m: &GroupModel) -> Option<u16> {
    match m.kind() {
        ModelKind::FreeGroup(k) => Some(*k),
        _ => None,
    }
}

/// `P[d(ρo, ρw_n) >= n / C]` over the config's `n` and `C` grids.
pub fn linear_progress_experiment(cfg: &ExperimentConfig) -> Result<ProgressTable> {
    let s = cfg.resolve()?;
    let seed = cfg.seed()?;
    let ns: BTreeSet<usize> = cfg.n.iter().copied().collect();
    let ns: Vec<usize> = ns.into_iter().collect();
    let nmax = *ns.last().expect("nonempty grid");
    let dists: Vec<Vec<usize>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<usize>> {
            let mut out = Vec::with_capacity(ns.len());
            let mut err = None;
            walk(&s.kernel, &s.o, nmax, seed, i, |r, w| {
                if ns.binary_search(&r).is_ok() {
                    match s.rho.dist(&s.o, w) {
                        Ok(d) => out.push(d),
                        Err(e) => err = Some(e),
                    }
                }
            });
            match err {
                Some(e) => Err(e.into()),
                None => Ok(out),
            }
        })
        .collect::<Result<_>>()?;
    let oracle_rank = if s.rho.space.is_tree() { free_rank(&s.model) } else { None };
    let mut rows = Vec::new();
    let mut drift = Vec::new();
    for (j, &n) in ns.iter().enumerate() {
        let col: Vec<f64> = dists.iter().map(|d| d[j] as f64).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (col.len().max(2) - 1) as f64;
        if n > 0 {
            drift.push(DriftRow {
                n,
                mean: mean / n as f64,
                se: (var / col.len() as f64).sqrt() / n as f64,
                oracle: oracle_rank.map(|k| drift_oracle(k, n)),
            });
        }
        for &c in &cfg.c {
            let hits = col.iter().filter(|&&d| d >= n as f64 / c).count();
            rows.push(ProgressRow { n, c, progress: Estimate::new(hits, cfg.samples) });
        }
    }
    let fits = cfg
        .c
        .iter()
        .map(|&c| {
            let cells: Vec<&ProgressRow> = rows.iter().filter(|r| r.c == c).collect();
            let fails: Vec<(usize, usize)> = cells.iter().map(|r| (r.n, r.progress.samples - r.progress.successes)).collect();
            let nonincreasing = fails.windows(2).all(|w| w[1].1 <= w[0].1);
            let (used, excluded): (Vec<_>, Vec<_>) = fails.iter().partition(|(_, f)| *f >= MIN_EVENTS);
            let pts: Vec<(f64, f64)> =
                used.iter().map(|&&(n, f)| (n as f64, f as f64 / cfg.samples as f64)).collect();
            let fit = log_linear(&pts);
            DecayFit {
                c,
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
                r2: fit.map(|f| f.2),
                used: used.iter().map(|x| x.0).collect(),
                excluded: excluded.iter().map(|x| x.0).collect(),
                nonincreasing,
            }
        })
        .collect();
    Ok(ProgressTable { rows, drift, fits })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCell {
    pub p: String,
    pub h: String,
    pub n: usize,
    pub estimate: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedProjectionReport {
    pub c: f64,
    pub cells: Vec<ProjectionCell>,
    pub min: f64,
    pub argmin: usize,
    pub eps_hat: f64,
    /// The quantifier domain actually sampled.
    pub domain: String,
}

impl BoundedProjectionReport {
    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.lines();
        let _ = writeln!(s, "# domain: {}", self.domain);
        s.push_str("p,h,n,C,successes,samples,prob,se\n");
        for c in &self.cells {
            let e = c.estimate;
            let _ = writeln!(s, "{},{},{},{},{},{},{:.6},{:.6}", c.p, c.h, c.n, self.c, e.successes, e.samples, e.p, e.se);
        }
        s
    }
}

/// Seeded `(p, h)` pairs: `p` of length at most 6, `h = p · k` with
/// `|k| <= 3`, so the translated axis passes near `p` as often as not.
pub fn sample_cells(model: &GroupModel, count: usize, seed: u64) -> Vec<(Word, Word)> {
    let mut rng = stream_rng(seed, u64::MAX);
    (0..count)
        .map(|_| {
            let lp = rng.gen_range(0..=6);
            let lk = rng.gen_range(0..=3);
            let p = model.random_element(&mut rng, lp);
            let k = model.random_element(&mut rng, lk);
            let h = model.mul(&p, &k);
            (p, h)
        })
        .collect()
}

/// `d_{hE(g)}(x, y)`: diameter of the union of both projections.
pub fn projection_distance(rho: &OrbitMap, axis: &Axis, x: &Word, y: &Word) -> Result<usize> {
    let a = nearest_on_axis(rho, axis, x)?;
    let b = nearest_on_axis(rho, axis, y)?;
    let set: BTreeSet<i64> = a.exps.into_iter().chain(b.exps).collect();
    Ok(axis_set_diameter(rho, axis, &set)?)
}

/// `P[d_{hE(g)}(p, w_n^p) <= C]` per cell, with the minimum over cells.
pub fn bounded_projection_experiment(
    cfg: &ExperimentConfig,
    pairs: &[(Word, Word)],
    n_list: &[usize],
) -> Result<BoundedProjectionReport> {
    let s = cfg.resolve()?;
    let seed = cfg.seed()?;
    let c = cfg.c.first().copied().unwrap_or(2.0);
    let base = axis_of(&s.rho, &s.g)?;
    let ns: Vec<usize> = n_list.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let nmax = ns.last().copied().unwrap_or(0);
    let mut cells = Vec::new();
    for (ci, (p, h)) in pairs.iter().enumerate() {
        let axis = base.translate(&s.model, h)?;
        let hits: Vec<Vec<bool>> = (0..cfg.samples as u64)
            .into_par_iter()
            .map(|i| -> Result<Vec<bool>> {
                let mut out = Vec::with_capacity(ns.len());
                let mut err = None;
                let stream = (ci as u64) << 32 | i;
                walk(&s.kernel, p, nmax, seed, stream, |r, w| {
                    if ns.binary_search(&r).is_ok() {
                        match projection_distance(&s.rho, &axis, p, w) {
                            Ok(d) => out.push(d as f64 <= c),
                            Err(e) => err = Some(e),
                        }
                    }
                });
                match err {
                    Some(e) => Err(e),
                    None => Ok(out),
                }
            })
            .collect::<Result<_>>()?;
        for (j, &n) in ns.iter().enumerate() {
            let k = hits.iter().filter(|v| v[j]).count();
            cells.push(ProjectionCell {
                p: s.model.format_word(p),
                h: s.model.format_word(h),
                n,
                estimate: Estimate::new(k, cfg.samples),
            });
        }
    }
    let (argmin, min) = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.estimate.p))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let domain = format!(
        "{} (p, h) pairs x n in {:?}, axis h<{}>, {} trajectories per cell",
        pairs.len(),
        ns,
        s.model.format_word(&base.root),
        cfg.samples
    );
    Ok(BoundedProjectionReport { c, cells, min, argmin, eps_hat: min, domain })
}

/// Empirical `g(t)` (running maximum) and `f(t)` (endpoint) curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub t: Vec<usize>,
    pub g: Vec<Estimate>,
    pub f: Vec<Estimate>,
    pub n: usize,
    pub d: usize,
    /// `-1 / slope` of the least-squares fit of `ln g(t)`, when negative.
    pub c_prime: Option<f64>,
    /// Smallest `C'` with `g(t) <= 2 e^{-t/C'}` at every fitted cell.
    pub c_prime_min: Option<f64>,
    pub fitted_cells: Vec<usize>,
    pub envelope: Vec<Option<bool>>,
    pub envelope_holds: bool,
    pub containment: bool,
    pub entries: usize,
    /// Per trajectory: `(max_{r <= n} S_r, S_n)`.
    pub sums: Vec<(usize, usize)>,
}

impl TailCurve {
    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.lines();
        let cp = self.c_prime.map(|x| format!("{x:.6}")).unwrap_or_else(|| "inf".into());
        let _ = writeln!(s, "# n={} D={} C'={} H_T entries={}", self.n, self.d, cp, self.entries);
        s.push_str("t,g,g_se,f,f_se,g_successes,f_successes,envelope\n");
        for (i, t) in self.t.iter().enumerate() {
            let env = match self.envelope[i] {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "excluded",
            };
            let _ = writeln!(
                s,
                "{t},{:.6},{:.6},{:.6},{:.6},{},{},{env}",
                self.g[i].p, self.g[i].se, self.f[i].p, self.f[i].se, self.g[i].successes, self.f[i].successes
            );
        }
        s
    }
}

/// Tail curve of `Σ_{H_T(o,p)} [p, w_r^p]` for walks started at `p`.
pub fn tail_experiment(cfg: &ExperimentConfig) -> Result<TailCurve> {
    let s = cfg.resolve()?;
    let seed = cfg.seed()?;
    let n = *cfg.n.iter().max().expect("nonempty grid");
    let record = enumerate_ht(&s.rho, &s.g, &s.o, &s.p, cfg.t, cfg.window)?;
    if !record.certified {
        return Err(ExperimentError::Uncertified(format!(
            "{}, {}",
            s.model.format_word(&s.o),
            s.model.format_word(&s.p)
        )));
    }
    let sums: Vec<(usize, usize)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<(usize, usize)> {
            let (mut best, mut last) = (0, 0);
            let mut err = None;
            walk(&s.kernel, &s.p, n, seed, i, |_, w| match df_sum(&s.rho, &record, &s.p, w) {
                Ok(v) => {
                    best = best.max(v);
                    last = v;
                }
                Err(e) => err = Some(e),
            });
            match err {
                Some(e) => Err(e.into()),
                None => Ok((best, last)),
            }
        })
        .collect::<Result<_>>()?;
    let ts: Vec<usize> = (0..=cfg.tmax).collect();
    let m = sums.len();
    let g: Vec<Estimate> = ts.iter().map(|&t| Estimate::new(sums.iter().filter(|x| x.0 >= t).count(), m)).collect();
    let f: Vec<Estimate> = ts.iter().map(|&t| Estimate::new(sums.iter().filter(|x| x.1 >= t).count(), m)).collect();
    let containment = (0..ts.len()).all(|i| {
        let fd = f.get(i + cfg.d).map_or(0, |e| e.successes);
        g[i].successes >= f[i].successes && f[i].successes >= fd
    });
    let fitted: Vec<usize> = (0..ts.len()).filter(|&i| g[i].successes >= MIN_EVENTS).collect();
    let pts: Vec<(f64, f64)> = fitted.iter().filter(|&&i| g[i].p < 1.0).map(|&i| (ts[i] as f64, g[i].p)).collect();
    let c_prime = log_linear(&pts).and_then(|(slope, _, _)| (slope < 0.0).then(|| -1.0 / slope));
    let c_prime_min = fitted
        .iter()
        .filter(|&&i| ts[i] > 0)
        .map(|&i| ts[i] as f64 / (2.0 / g[i].p).ln())
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let envelope: Vec<Option<bool>> = (0..ts.len())
        .map(|i| {
            (g[i].successes >= MIN_EVENTS)
                .then(|| c_prime.is_some_and(|c| g[i].p <= 2.0 * (-(ts[i] as f64) / c).exp()))
        })
        .collect();
    let envelope_holds = c_prime.is_some() && envelope.iter().all(|e| e.unwrap_or(true));
    Ok(TailCurve {
        t: ts,
        g,
        f,
        n,
        d: cfg.d,
        c_prime,
        c_prime_min,
        fitted_cells: fitted,
        envelope,
        envelope_holds,
        containment,
        entries: record.entries.len(),
        sums,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionRow {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    /// Not refuted at 95%: `rhs - lhs + 1.96 se >= 0`.
    pub pass: bool,
    /// Confirmed at 95%: `rhs - lhs - 1.96 se >= 0`.
    pub confirmed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub eps: f64,
    pub d: usize,
    pub rows: Vec<RecursionRow>,
    pub passed: usize,
    pub majority: bool,
    /// `2D / ln(1 + ε)`.
    pub implied_c_prime: Option<f64>,
    pub fitted_c_prime: Option<f64>,
}

/// Checks `ε g(t) <= f(t - D) - f(t + D)` on the curve's own samples.
pub fn recursion_check(curve: &TailCurve, d: usize, eps: f64) -> Result<RecursionReport> {
    let tmax = *curve.t.last().unwrap_or(&0);
    let ts: Vec<usize> = curve.t.iter().copied().filter(|&t| t >= d && t + d <= tmax).collect();
    if ts.is_empty() {
        return Err(ExperimentError::Coverage);
    }
    let m = curve.sums.len() as f64;
    let rows: Vec<RecursionRow> = ts
        .iter()
        .map(|&t| {
            let y: Vec<f64> = curve
                .sums
                .iter()
                .map(|&(mx, last)| {
                    let band = (last >= t - d && last < t + d) as u8 as f64;
                    band - eps * (mx >= t) as u8 as f64
                })
                .collect();
            let mean = y.iter().sum::<f64>() / m;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            let se = (var / m).sqrt();
            let lhs = eps * curve.sums.iter().filter(|x| x.0 >= t).count() as f64 / m;
            RecursionRow { t, lhs, rhs: lhs + mean, se, pass: mean + 1.96 * se >= 0.0, confirmed: mean - 1.96 * se >= 0.0 }
        })
        .collect();
    let passed = rows.iter().filter(|r| r.pass).count();
    Ok(RecursionReport {
        eps,
        d,
        majority: 2 * passed > rows.len(),
        passed,
        rows,
        implied_c_prime: (eps > 0.0).then(|| 2.0 * d as f64 / (1.0 + eps).ln()),
        fitted_c_prime: curve.c_prime,
    })
}

impl RecursionReport {
    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut s = header.lines();
        let ic = self.implied_c_prime.map(|x| format!("{x:.6}")).unwrap_or_else(|| "inf".into());
        let _ = writeln!(s, "# eps={} D={} implied C'={ic}", self.eps, self.d);
        s.push_str("t,eps_g,f_band,se,pass,confirmed\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{},{}", r.t, r.lhs, r.rhs, r.se, r.pass, r.confirmed);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::parse(&format!("seed = 7\n{extra}")).unwrap()
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = cfg("n = 1, 2\nC = 1\n# comment\nsamples = 10");
        assert_eq!(c.n, vec![1, 2]);
        let again = ExperimentConfig::parse(&c.canonical()).unwrap();
        assert_eq!(again, c);
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("samples = x").is_err());
        assert!(matches!(ExperimentConfig::default().seed(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn drift_oracle_values() {
        assert_eq!(drift_oracle(2, 1), 1.0);
        assert!((drift_oracle(2, 2) - 0.75).abs() < 1e-12);
        assert!((drift_oracle(2, 2000) - 0.5).abs() < 0.01);
        assert!((radial_tail_oracle(2, 1, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn one_step_always_progresses() {
        let t = linear_progress_experiment(&cfg("n = 1\nC = 1\nsamples = 200")).unwrap();
        assert_eq!(t.rows[0].progress.p, 1.0);
    }

    #[test]
    fn progress_is_reproducible() {
        let c = cfg("n = 20, 40\nC = 4\nsamples = 300");
        let a = linear_progress_experiment(&c).unwrap();
        let b = linear_progress_experiment(&c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounded_projections_small() {
        let c = cfg("C = 2\nsamples = 200");
        let m = GroupModel::parse("F2").unwrap();
        let w = |s: &str| m.parse_word(s).unwrap();
        let r = bounded_projection_experiment(&c, &[(w("e"), w("e")), (w("b b b"), w("e"))], &[0, 10, 50]).unwrap();
        assert!(r.cells.iter().filter(|c| c.n == 0).all(|c| c.estimate.p == 1.0));
        let far = r.cells.iter().filter(|c| c.p == "b^3").map(|c| c.estimate.p).fold(1.0, f64::min);
        assert!(far > 0.9);
        assert!(r.min >= 0.2);
    }

    #[test]
    fn tail_trivial_points_and_containment() {
        let c = cfg("p = a^5 b a^6 b a^5\nn = 40\nsamples = 400\ntmax = 400\nwindow = 20");
        let t = tail_experiment(&c).unwrap();
        assert_eq!(t.g[0].p, 1.0);
        assert!(t.containment);
        assert_eq!(t.g.last().unwrap().successes, 0);
        let r = recursion_check(&t, 2, 0.0).unwrap();
        assert!(r.rows.iter().all(|r| r.pass));
        assert!(r.implied_c_prime.is_none());
        assert!(recursion_check(&t, 500, 0.1).is_err());
    }

    #[test]
    fn uncertified_tail_is_rejected() {
        let c = cfg("model = Z^2 * Z\nspace = bass-serre\ng = z\np = z^5\nn = 5\nsamples = 5");
        assert!(tail_experiment(&c).is_err());
    }
}
