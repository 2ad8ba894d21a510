//! Markov chains on groups with bounded jumps, push-forwards under bijective
//! quasi-isometries, and exact or fitted tameness diagnostics.
//!
//! Transition laws are ordered lists `(target, probability)`. Sampling is by
//! inverse CDF over that order, so a translated start with the same random
//! stream yields the translated path.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit;
use crate::groups::{GroupError, GroupModel, Letter, Word};
use crate::projections::{set_diameter, ProjError};
use crate::spaces::OrbitMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Proj(#[from] ProjError),
    #[error("invalid law: {0}")]
    Law(String),
    #[error("map is not bijective: {0}")]
    NotBijective(String),
    #[error("no witness constructor for this kernel")]
    NoWitness,
    #[error("dynamic programming budget of {0} states exceeded")]
    Budget(usize),
    #[error("probability stays 0 up to k = {0}")]
    NeverReached(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, ChainError>;

/// State budget for exact distribution propagation.
pub const DP_BUDGET: usize = 1_500_000;
const LAW_TOLERANCE: f64 = 1e-12;

/// Ordered transition law from one state.
pub type Law = Vec<(Word, f64)>;

/// A bijection `G -> G` given by a finite rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QiRule {
    Identity,
    LeftTranslation(Word),
    /// Images and inverse images of the positive generators.
    Automorphism { images: Vec<Word>, inverse_images: Vec<Word> },
    /// `x = k t_i ↦ k t_σ(i)` where `i = χ(x)` for a homomorphism
    /// `χ: G -> Z/m` and a transversal `t_i` with `χ(t_i) = i`.
    BoundedPermutation { modulus: u32, chi: Vec<u32>, transversal: Vec<Word>, sigma: Vec<usize> },
    /// Applied left to right.
    Composition(Vec<BijectiveQI>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BijectiveQI {
    #[serde(skip)]
    model: Option<GroupModel>,
    pub rule: QiRule,
    /// Claimed constant.
    pub nu: f64,
}

/// Measured constants of a map on a finite window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QiCheck {
    pub radius: usize,
    pub bijective: bool,
    pub nu: f64,
    pub displacement: usize,
}

/// Smallest `ν >= 1` with `d/ν - ν <= d' <= ν d + ν` at one pair.
pub fn nu_for_pair(d: f64, d_image: f64) -> f64 {
    let upper = d_image / (d + 1.0);
    let lower = (-d_image + (d_image * d_image + 4.0 * d).sqrt()) / 2.0;
    upper.max(lower).max(1.0)
}

impl BijectiveQI {
    fn with(model: &GroupModel, rule: QiRule, nu: f64) -> Self {
        BijectiveQI { model: Some(model.clone()), rule, nu }
    }

    fn model(&self) -> &GroupModel {
        self.model.as_ref().expect("map built through a constructor")
    }

    pub fn identity(model: &GroupModel) -> Self {
        Self::with(model, QiRule::Identity, 1.0)
    }

    pub fn translation(model: &GroupModel, g: &Word) -> Result<Self> {
        model.check(g)?;
        Ok(Self::with(model, QiRule::LeftTranslation(g.clone()), 1.0))
    }

    pub fn automorphism(model: &GroupModel, images: Vec<Word>, inverse_images: Vec<Word>, nu: f64) -> Result<Self> {
        let rank = model.rank() as usize;
        if images.len() != rank || inverse_images.len() != rank {
            return Err(ChainError::Precondition(format!("need {rank} generator images")));
        }
        for w in images.iter().chain(&inverse_images) {
            model.check(w)?;
        }
        let f = Self::with(model, QiRule::Automorphism { images, inverse_images }, nu);
        for g in 0..rank as u16 {
            let x = model.generator(Letter::pos(g))?;
            if f.apply(&f.apply_inverse(&x)) != x || f.apply_inverse(&f.apply(&x)) != x {
                return Err(ChainError::NotBijective("inverse images do not invert".into()));
            }
        }
        Ok(f)
    }

    /// Signed permutation of generators: generator `i` maps to `perm[i]^{±1}`.
    pub fn generator_permutation(model: &GroupModel, perm: &[(u16, bool)]) -> Result<Self> {
        let rank = model.rank() as usize;
        let seen: HashSet<u16> = perm.iter().map(|p| p.0).collect();
        if perm.len() != rank || seen.len() != rank || perm.iter().any(|p| p.0 as usize >= rank) {
            return Err(ChainError::NotBijective("not a permutation of the generators".into()));
        }
        let mut images = Vec::new();
        let mut inv = vec![Word::identity(); rank];
        for (i, &(j, flip)) in perm.iter().enumerate() {
            images.push(model.generator(Letter::new(j, flip))?);
            inv[j as usize] = model.generator(Letter::new(i as u16, flip))?;
        }
        Self::automorphism(model, images, inv, 1.0)
    }

    pub fn bounded_permutation(
        model: &GroupModel,
        modulus: u32,
        chi: Vec<u32>,
        transversal: Vec<Word>,
        sigma: Vec<usize>,
    ) -> Result<Self> {
        let m = modulus as usize;
        if modulus == 0 || chi.len() != model.rank() as usize || transversal.len() != m || sigma.len() != m {
            return Err(ChainError::Precondition("malformed permutation table".into()));
        }
        let seen: HashSet<usize> = sigma.iter().copied().collect();
        if seen.len() != m || sigma.iter().any(|&s| s >= m) {
            return Err(ChainError::NotBijective("σ is not a permutation".into()));
        }
        let f = QiRule::BoundedPermutation { modulus, chi, transversal, sigma };
        let mut out = Self::with(model, f, 1.0);
        if let QiRule::BoundedPermutation { transversal, .. } = &out.rule {
            for (i, t) in transversal.iter().enumerate() {
                model.check(t)?;
                if out.character(t) != i as u32 {
                    return Err(ChainError::Precondition(format!("χ(t_{i}) ≠ {i}")));
                }
            }
        }
        let disp = out.table_displacement();
        out.nu = 1.0 + 2.0 * disp as f64;
        Ok(out)
    }

    /// Transposes the `a` and `b` branches at the identity on F2, repeated
    /// over cosets of the kernel of `a ↦ 1, b ↦ 2 (mod 3)`.
    pub fn branch_swap(model: &GroupModel) -> Result<Self> {
        if model.descriptor() != "F2" {
            return Err(ChainError::Precondition("branch swap is defined on F2".into()));
        }
        let a = model.parse_word("a")?;
        let b = model.parse_word("b")?;
        Self::bounded_permutation(model, 3, vec![1, 2], vec![Word::identity(), a, b], vec![0, 2, 1])
    }

    /// Swaps `x` and `x a` over cosets of the `a`-parity kernel.
    pub fn parity_swap(model: &GroupModel) -> Result<Self> {
        let a = model.generator(Letter::pos(0))?;
        let mut chi = vec![0; model.rank() as usize];
        chi[0] = 1;
        Self::bounded_permutation(model, 2, chi, vec![Word::identity(), a], vec![1, 0])
    }

    pub fn compose(model: &GroupModel, maps: Vec<BijectiveQI>) -> Self {
        let nu = maps.iter().map(|m| m.nu).product::<f64>().max(1.0);
        Self::with(model, QiRule::Composition(maps), nu)
    }

    fn character(&self, w: &Word) -> u32 {
        match &self.rule {
            QiRule::BoundedPermutation { modulus, chi, .. } => {
                let m = *modulus as i64;
                let s: i64 = w
                    .letters()
                    .iter()
                    .map(|l| if l.inv { -(chi[l.gen as usize] as i64) } else { chi[l.gen as usize] as i64 })
                    .sum();
                s.rem_euclid(m) as u32
            }
            _ => 0,
        }
    }

    fn table_displacement(&self) -> usize {
        match &self.rule {
            QiRule::BoundedPermutation { transversal, sigma, .. } => {
                let m = self.model();
                (0..sigma.len()).map(|i| m.dist(&transversal[i], &transversal[sigma[i]])).max().unwrap_or(0)
            }
            _ => 0,
        }
    }

    pub fn apply(&self, x: &Word) -> Word {
        let m = self.model();
        match &self.rule {
            QiRule::Identity => x.clone(),
            QiRule::LeftTranslation(g) => m.mul(g, x),
            QiRule::Automorphism { images, .. } => substitute(m, images, x),
            QiRule::BoundedPermutation { transversal, sigma, .. } => {
                let i = self.character(x) as usize;
                let k = m.mul(x, &m.inverse(&transversal[i]));
                m.mul(&k, &transversal[sigma[i]])
            }
            QiRule::Composition(maps) => maps.iter().fold(x.clone(), |acc, f| f.apply(&acc)),
        }
    }

    pub fn apply_inverse(&self, y: &Word) -> Word {
        self.inverse().apply(y)
    }

    pub fn inverse(&self) -> BijectiveQI {
        let m = self.model();
        let rule = match &self.rule {
            QiRule::Identity => QiRule::Identity,
            QiRule::LeftTranslation(g) => QiRule::LeftTranslation(m.inverse(g)),
            QiRule::Automorphism { images, inverse_images } => QiRule::Automorphism {
                images: inverse_images.clone(),
                inverse_images: images.clone(),
            },
            QiRule::BoundedPermutation { modulus, chi, transversal, sigma } => {
                let mut inv = vec![0; sigma.len()];
                for (i, &s) in sigma.iter().enumerate() {
                    inv[s] = i;
                }
                QiRule::BoundedPermutation {
                    modulus: *modulus,
                    chi: chi.clone(),
                    transversal: transversal.clone(),
                    sigma: inv,
                }
            }
            QiRule::Composition(maps) => QiRule::Composition(maps.iter().rev().map(|f| f.inverse()).collect()),
        };
        Self::with(m, rule, self.nu)
    }

    /// Bijectivity and measured constants on `ball(e, radius)`.
    pub fn verify(&self, radius: usize) -> Result<QiCheck> {
        let m = self.model();
        let ball = m.ball(&Word::identity(), radius)?;
        let images: Vec<Word> = ball.par_iter().map(|x| self.apply(x)).collect();
        let distinct: HashSet<&Word> = images.iter().collect();
        let roundtrip = ball.par_iter().zip(&images).all(|(x, y)| self.apply_inverse(y) == *x);
        let displacement = ball.iter().zip(&images).map(|(x, y)| m.dist(x, y)).max().unwrap_or(0);
        let nu = (0..ball.len())
            .into_par_iter()
            .map(|i| {
                let mut best: f64 = 1.0;
                for j in i + 1..ball.len() {
                    let d = m.dist(&ball[i], &ball[j]) as f64;
                    let di = m.dist(&images[i], &images[j]) as f64;
                    best = best.max(nu_for_pair(d, di));
                }
                best
            })
            .reduce(|| 1.0, f64::max);
        Ok(QiCheck { radius, bijective: distinct.len() == ball.len() && roundtrip, nu, displacement })
    }

    pub fn describe(&self) -> String {
        let m = self.model();
        match &self.rule {
            QiRule::Identity => "identity".into(),
            QiRule::LeftTranslation(g) => format!("translation by {}", m.format_word(g)),
            QiRule::Automorphism { images, .. } => {
                let parts: Vec<String> = images
                    .iter()
                    .enumerate()
                    .map(|(i, w)| format!("{}->{}", m.name_of(i as u16), m.format_word(w)))
                    .collect();
                format!("automorphism {}", parts.join(", "))
            }
            QiRule::BoundedPermutation { modulus, sigma, .. } => {
                format!("bounded permutation mod {modulus} {sigma:?}")
            }
            QiRule::Composition(maps) => {
                maps.iter().map(|f| f.describe()).collect::<Vec<_>>().join(" then ")
            }
        }
    }
}

fn substitute(m: &GroupModel, images: &[Word], x: &Word) -> Word {
    let mut out = Word::identity();
    for l in x.letters() {
        let img = &images[l.gen as usize];
        let img = if l.inv { m.inverse(img) } else { img.clone() };
        out = m.mul(&out, &img);
    }
    out
}

/// Class of a state for a local rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classifier {
    Constant,
    /// `0` at the identity, otherwise `1 + index` of the last letter.
    LastLetter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRule {
    pub classifier: Classifier,
    pub measures: Vec<Vec<(Word, f64)>>,
    pub declared_invariant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelKind {
    GroupInvariant(Vec<(Word, f64)>),
    PushForward(Box<MarkovKernel>, BijectiveQI),
    LocalRule(LocalRule),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovKernel {
    pub model: GroupModel,
    pub kind: KernelKind,
    pub name: String,
}

fn check_measure(model: &GroupModel, mu: &[(Word, f64)]) -> Result<()> {
    if mu.is_empty() {
        return Err(ChainError::Law("empty jump set".into()));
    }
    let mut total = 0.0;
    for (w, p) in mu {
        model.check(w)?;
        if !(*p >= 0.0) {
            return Err(ChainError::Law(format!("negative probability {p}")));
        }
        total += p;
    }
    let distinct: HashSet<&Word> = mu.iter().map(|(w, _)| w).collect();
    if distinct.len() != mu.len() {
        return Err(ChainError::Law("repeated jump".into()));
    }
    if (total - 1.0).abs() > LAW_TOLERANCE {
        return Err(ChainError::Law(format!("probabilities sum to {total}")));
    }
    Ok(())
}

impl MarkovKernel {
    pub fn group_invariant(model: &GroupModel, mu: Vec<(Word, f64)>) -> Result<Self> {
        check_measure(model, &mu)?;
        Ok(MarkovKernel { model: model.clone(), kind: KernelKind::GroupInvariant(mu), name: "invariant".into() })
    }

    /// Uniform on generators and inverses, in generator order.
    pub fn srw(model: &GroupModel) -> Result<Self> {
        let gens = model.letters();
        let p = 1.0 / gens.len() as f64;
        let mu = gens.iter().map(|&l| Ok((model.generator(l)?, p))).collect::<Result<_>>()?;
        let mut k = Self::group_invariant(model, mu)?;
        k.name = "srw".into();
        Ok(k)
    }

    /// Stays put with probability `hold`, otherwise a simple random walk step.
    pub fn lazy_srw(model: &GroupModel, hold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&hold) {
            return Err(ChainError::Law(format!("hold probability {hold}")));
        }
        let gens = model.letters();
        let p = (1.0 - hold) / gens.len() as f64;
        let mut mu = vec![(Word::identity(), hold)];
        for l in gens {
            mu.push((model.generator(l)?, p));
        }
        let mut k = Self::group_invariant(model, mu)?;
        k.name = format!("lazy({hold})");
        Ok(k)
    }

    pub fn local_rule(model: &GroupModel, rule: LocalRule) -> Result<Self> {
        let need = match rule.classifier {
            Classifier::Constant => 1,
            Classifier::LastLetter => 1 + model.letters().len(),
        };
        if rule.measures.len() != need {
            return Err(ChainError::Law(format!("need {need} class measures")));
        }
        for mu in &rule.measures {
            check_measure(model, mu)?;
        }
        Ok(MarkovKernel { model: model.clone(), kind: KernelKind::LocalRule(rule), name: "local".into() })
    }

    /// `φ_♯`: the law at `g` is the law at `φ^-1(g)` carried by `φ`.
    pub fn push_forward(&self, phi: &BijectiveQI, window: usize) -> Result<Self> {
        let check = phi.verify(window)?;
        if !check.bijective {
            return Err(ChainError::NotBijective(format!("on ball(e, {window})")));
        }
        Ok(MarkovKernel {
            model: self.model.clone(),
            kind: KernelKind::PushForward(Box::new(self.clone()), phi.clone()),
            name: format!("push({}, {})", self.name, phi.describe()),
        })
    }

    /// Kernel by name: `srw`, `lazy` (`hold`), `branch-swap`.
    pub fn by_name(model: &GroupModel, name: &str, hold: Option<f64>) -> Result<Self> {
        match name {
            "srw" => Self::srw(model),
            "lazy" => Self::lazy_srw(model, hold.unwrap_or(0.5)),
            "branch-swap" => Self::srw(model)?.push_forward(&BijectiveQI::branch_swap(model)?, 3),
            other => Err(ChainError::Precondition(format!("unknown kernel {other}"))),
        }
    }

    pub fn law(&self, g: &Word) -> Law {
        let m = &self.model;
        match &self.kind {
            KernelKind::GroupInvariant(mu) => mu.iter().map(|(s, p)| (m.mul(g, s), *p)).collect(),
            KernelKind::PushForward(base, phi) => base
                .law(&phi.apply_inverse(g))
                .into_iter()
                .map(|(h, p)| (phi.apply(&h), p))
                .collect(),
            KernelKind::LocalRule(rule) => {
                let class = match rule.classifier {
                    Classifier::Constant => 0,
                    Classifier::LastLetter => match g.letters().last() {
                        None => 0,
                        Some(l) => 1 + m.letters().iter().position(|x| x == l).expect("letter"),
                    },
                };
                rule.measures[class].iter().map(|(s, p)| (m.mul(g, s), *p)).collect()
            }
        }
    }

    /// One-step probability `p(g, h)`.
    pub fn prob(&self, g: &Word, h: &Word) -> f64 {
        self.law(g).into_iter().filter(|(x, _)| x == h).map(|(_, p)| p).sum()
    }

    /// Inverse-CDF step with uniform `u ∈ [0, 1)`.
    pub fn step(&self, g: &Word, u: f64) -> Word {
        let law = self.law(g);
        let mut acc = 0.0;
        for (h, p) in &law {
            acc += p;
            if u < acc {
                return h.clone();
            }
        }
        law.last().expect("nonempty law").0.clone()
    }

    /// Same move as [`MarkovKernel::step`], without rebuilding the law when
    /// the next state is `g · s` for a sampled increment `s`.
    pub fn step_in_place(&self, g: &mut Word, u: f64) {
        let mu = match &self.kind {
            KernelKind::GroupInvariant(mu) => mu,
            KernelKind::LocalRule(_) | KernelKind::PushForward(..) => {
                *g = self.step(g, u);
                return;
            }
        };
        let mut acc = 0.0;
        let s = mu
            .iter()
            .find(|(_, p)| {
                acc += p;
                u < acc
            })
            .unwrap_or_else(|| mu.last().expect("nonempty law"));
        for &l in s.0.letters() {
            self.model.push_letter(g, l);
        }
    }

    /// Union of increments `g^-1 h` over states of `ball(e, window)`.
    pub fn jump_set(&self, window: usize) -> Result<Vec<Word>> {
        let m = &self.model;
        let mut out: Vec<Word> = m
            .ball(&Word::identity(), window)?
            .par_iter()
            .flat_map_iter(|g| {
                self.law(g)
                    .into_iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(h, _)| m.quotient(g, &h))
                    .collect::<Vec<_>>()
            })
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        out.sort();
        Ok(out)
    }

    /// Exact distribution after `n` steps from `start`.
    pub fn distribution(&self, start: &Word, n: usize) -> Result<BTreeMap<Word, f64>> {
        let mut dist = BTreeMap::from([(start.clone(), 1.0)]);
        for _ in 0..n {
            dist = self.advance(&dist)?;
        }
        Ok(dist)
    }

    fn advance(&self, dist: &BTreeMap<Word, f64>) -> Result<BTreeMap<Word, f64>> {
        let mut next = BTreeMap::new();
        for (g, pg) in dist {
            for (h, p) in self.law(g) {
                if p > 0.0 {
                    *next.entry(h).or_insert(0.0) += pg * p;
                }
            }
        }
        if next.len() > DP_BUDGET {
            return Err(ChainError::Budget(DP_BUDGET));
        }
        Ok(next)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub start: Word,
    pub states: Vec<Word>,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    seed: u64,
    stream: u64,
    start: String,
    n: usize,
    states: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<&'a str>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &Word {
        self.states.last().expect("nonempty")
    }

    pub fn to_json_line(&self, model: &GroupModel) -> String {
        let line = TrajectoryLine {
            seed: self.seed,
            stream: self.stream,
            start: model.format_word(&self.start),
            n: self.n(),
            states: self.states.iter().map(|w| model.format_word(w)).collect(),
            kernel: None,
        };
        serde_json::to_string(&line).expect("serialisable")
    }
}

/// The random stream for trajectory `index` under a master seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate(kernel: &MarkovKernel, start: &Word, n: usize, seed: u64) -> Result<Trajectory> {
    simulate_stream(kernel, start, n, seed, 0)
}

pub fn simulate_stream(kernel: &MarkovKernel, start: &Word, n: usize, seed: u64, stream: u64) -> Result<Trajectory> {
    kernel.model.check(start)?;
    let mut rng = stream_rng(seed, stream);
    let mut states = Vec::with_capacity(n + 1);
    states.push(start.clone());
    for _ in 0..n {
        let u: f64 = rng.gen();
        let next = kernel.step(states.last().expect("nonempty"), u);
        states.push(next);
    }
    Ok(Trajectory { seed, stream, start: start.clone(), states })
}

/// `count` trajectories on streams `0..count`, in stream order.
pub fn simulate_many(kernel: &MarkovKernel, start: &Word, n: usize, seed: u64, count: usize) -> Result<Vec<Trajectory>> {
    (0..count as u64).into_par_iter().map(|i| simulate_stream(kernel, start, n, seed, i)).collect()
}

/// Every step of the trajectory has positive probability under the kernel.
pub fn verify_bounded_jumps(kernel: &MarkovKernel, t: &Trajectory) -> bool {
    t.states.first() == Some(&t.start) && t.states.windows(2).all(|w| kernel.prob(&w[0], &w[1]) > 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Irreducibility {
    pub epsilon: f64,
    pub k: usize,
    pub per_k: Vec<f64>,
}

/// `max_{k <= kMax} min_g P[w_k^g = g s]` over the base points.
pub fn check_irreducibility(kernel: &MarkovKernel, s: &Word, k_max: usize, base: &[Word]) -> Result<Irreducibility> {
    let m = &kernel.model;
    m.check(s)?;
    if base.is_empty() {
        return Err(ChainError::Precondition("no base points".into()));
    }
    let mut per_k = vec![f64::INFINITY; k_max];
    for g in base {
        let target = m.mul(g, s);
        let mut dist = BTreeMap::from([(g.clone(), 1.0)]);
        for slot in per_k.iter_mut() {
            dist = kernel.advance(&dist)?;
            let p = dist.get(&target).copied().unwrap_or(0.0);
            *slot = slot.min(p);
        }
    }
    let (mut best, mut k) = (0.0, 0);
    for (i, &p) in per_k.iter().enumerate() {
        if p > best {
            best = p;
            k = i + 1;
        }
    }
    if k == 0 {
        return Err(ChainError::NeverReached(k_max));
    }
    Ok(Irreducibility { epsilon: best, k, per_k })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayVerdict {
    ConsistentWithTame,
    AmenableTrend,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub n: usize,
    pub value: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub rho_hat: Option<f64>,
    pub exponent: Option<f64>,
    pub monotone_tail: bool,
    pub verdict: DecayVerdict,
}

/// Fitted-decay threshold for the tame verdict.
pub const DECAY_THRESHOLD: f64 = 0.97;

/// `sup_h P[w_n^e = h]` exactly while the state budget allows, then Monte
/// Carlo return frequencies. Fits `log p = a + n log ρ + β log n`.
pub fn estimate_nonamenability(kernel: &MarkovKernel, n_list: &[usize], samples: usize, seed: u64) -> Result<DecayReport> {
    if n_list.is_empty() {
        return Err(ChainError::Precondition("empty n list".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let e = Word::identity();
    let mut rows = Vec::new();
    let mut dist = BTreeMap::from([(e.clone(), 1.0)]);
    let mut reached = 0;
    let mut exact = true;
    for &n in &ns {
        while exact && reached < n {
            match kernel.advance(&dist) {
                Ok(d) => {
                    dist = d;
                    reached += 1;
                }
                Err(ChainError::Budget(_)) => exact = false,
                Err(err) => return Err(err),
            }
        }
        if exact {
            let sup = dist.values().copied().fold(0.0, f64::max);
            rows.push(DecayRow { n, value: sup, exact: true });
        } else {
            let hits: usize = (0..samples as u64)
                .into_par_iter()
                .map(|i| simulate_stream(kernel, &e, n, seed, i).map(|t| usize::from(t.last().is_identity())))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum();
            rows.push(DecayRow { n, value: hits as f64 / samples.max(1) as f64, exact: false });
        }
    }
    // Even times only: the standard generating sets give bipartite graphs.
    let pick = |exact_only: bool| -> Vec<&DecayRow> {
        rows.iter()
            .filter(|r| r.value > 0.0 && r.n > 0 && r.n % 2 == 0 && (r.exact || !exact_only))
            .collect()
    };
    let used = if pick(true).len() >= 4 { pick(true) } else { pick(false) };
    let design: Vec<Vec<f64>> = used.iter().map(|r| vec![1.0, r.n as f64, (r.n as f64).ln()]).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.value.ln()).collect();
    let coef = if used.len() >= 4 { fit::least_squares(&design, &ys) } else { None };
    let monotone_tail = {
        let tail: Vec<f64> = rows.iter().filter(|r| r.exact).map(|r| r.value).collect();
        let k = tail.len().min(4);
        tail[tail.len() - k..].windows(2).all(|w| w[1] <= w[0] + 1e-15)
    };
    let (rho_hat, exponent) = match &coef {
        Some(c) => (Some(c[1].exp()), Some(c[2])),
        None => (None, None),
    };
    let verdict = match rho_hat {
        Some(r) if r < DECAY_THRESHOLD && monotone_tail => DecayVerdict::ConsistentWithTame,
        Some(r) if r >= DECAY_THRESHOLD => DecayVerdict::AmenableTrend,
        _ => DecayVerdict::Inconclusive,
    };
    Ok(DecayReport { rows, rho_hat, exponent, monotone_tail, verdict })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessCheck {
    pub states: usize,
    pub exact_match: bool,
    pub maps_p_to_q: bool,
}

/// A bijective quasi-isometry with `φ(p) = q` and `φ_♯(w^x) = w^{φ(x)}`,
/// verified on one-step laws at sampled states.
pub fn quasi_homogeneity_witness(
    kernel: &MarkovKernel,
    p: &Word,
    q: &Word,
    seed: u64,
) -> Result<(BijectiveQI, WitnessCheck)> {
    let m = &kernel.model;
    m.check(p)?;
    m.check(q)?;
    let phi = match &kernel.kind {
        KernelKind::GroupInvariant(_) => {
            if p == q {
                BijectiveQI::identity(m)
            } else {
                BijectiveQI::translation(m, &m.mul(q, &m.inverse(p)))?
            }
        }
        KernelKind::LocalRule(rule) if rule.declared_invariant => {
            BijectiveQI::translation(m, &m.mul(q, &m.inverse(p)))?
        }
        KernelKind::PushForward(base, psi) if matches!(base.kind, KernelKind::GroupInvariant(_)) => {
            if p == q {
                BijectiveQI::identity(m)
            } else {
                let pi = psi.apply_inverse(p);
                let qi = psi.apply_inverse(q);
                let c = m.mul(&qi, &m.inverse(&pi));
                BijectiveQI::compose(m, vec![psi.inverse(), BijectiveQI::translation(m, &c)?, psi.clone()])
            }
        }
        _ => return Err(ChainError::NoWitness),
    };
    let states = sample_states(m, p, q, 20, seed);
    let exact_match = states.iter().all(|x| laws_match(kernel, &phi, x));
    let check = WitnessCheck { states: states.len(), exact_match, maps_p_to_q: phi.apply(p) == *q };
    Ok((phi, check))
}

fn sample_states(m: &GroupModel, p: &Word, q: &Word, count: usize, seed: u64) -> Vec<Word> {
    let mut rng = stream_rng(seed, 0);
    let mut out = vec![p.clone(), q.clone()];
    while out.len() < count {
        let len = rng.gen_range(0..=5);
        let g = m.random_element(&mut rng, len);
        out.push(m.mul(p, &g));
    }
    out
}

/// `p(φ x, φ h) = p(x, h)` for every `h` in the law at `x`, exactly.
pub fn laws_match(kernel: &MarkovKernel, phi: &BijectiveQI, x: &Word) -> bool {
    let src: BTreeMap<Word, f64> = kernel.law(x).into_iter().map(|(h, p)| (phi.apply(&h), p)).collect();
    let dst: BTreeMap<Word, f64> = kernel.law(&phi.apply(x)).into_iter().collect();
    src == dst
}

/// A ray `base · step^n`, `n >= 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ray {
    pub base: Word,
    pub step: Word,
}

impl Ray {
    pub fn points(&self, m: &GroupModel, len: usize) -> Vec<Word> {
        let mut out = Vec::with_capacity(len + 1);
        let mut cur = self.base.clone();
        for _ in 0..=len {
            out.push(cur.clone());
            cur = m.mul(&cur, &self.step);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionComparison {
    pub a: f64,
    pub witness: Option<Word>,
    pub samples: usize,
}

fn finite_projection(rho: &OrbitMap, set: &[Word], x: &Word) -> Result<Vec<Word>> {
    let ds: Vec<usize> = set.iter().map(|q| rho.dist(x, q)).collect::<std::result::Result<_, _>>().map_err(ProjError::from)?;
    let best = *ds.iter().min().ok_or(ChainError::Precondition("empty ray".into()))?;
    Ok(set.iter().zip(ds).filter(|(_, d)| *d == best).map(|(q, _)| q.clone()).collect())
}

fn finite_coset_distance(rho: &OrbitMap, set: &[Word], x: &Word, y: &Word) -> Result<usize> {
    let mut pts = finite_projection(rho, set, x)?;
    pts.extend(finite_projection(rho, set, y)?);
    Ok(set_diameter(rho, &pts)?)
}

/// Smallest `A >= 1` with `d_{φξ}(φ p', φ h) >= d_ξ(p', h)/A - A` on the sample.
pub fn qi_projection_comparison(
    rho: &OrbitMap,
    phi: &BijectiveQI,
    ray: &Ray,
    p_prime: &Word,
    sample: &[Word],
) -> Result<ProjectionComparison> {
    let m = &rho.group;
    let reach = sample.iter().chain(std::iter::once(p_prime)).map(|w| w.len()).max().unwrap_or(0);
    let len = 2 * reach + 8;
    let xi = ray.points(m, len);
    let phi_xi: Vec<Word> = xi.iter().map(|w| phi.apply(w)).collect();
    let p = phi.apply(p_prime);
    let vals = sample
        .par_iter()
        .map(|h| -> Result<(f64, Word)> {
            let d2 = finite_coset_distance(rho, &xi, p_prime, h)? as f64;
            let d1 = finite_coset_distance(rho, &phi_xi, &p, &phi.apply(h))? as f64;
            let a = ((-d1 + (d1 * d1 + 4.0 * d2).sqrt()) / 2.0).max(1.0);
            Ok((a, h.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = (1.0, None);
    for (a, h) in vals {
        if a > best.0 {
            best = (a, Some(h));
        }
    }
    Ok(ProjectionComparison { a: best.0, witness: best.1, samples: sample.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GetAnywhere {
    pub t: usize,
    pub probability: f64,
    pub epsilon0: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Maximum over `t <= d U` of `P[w_t^q = p]`, compared with `ε0^d` where
/// `ε0` is the least generator irreducibility constant within `U` steps.
pub fn get_anywhere_check(kernel: &MarkovKernel, p: &Word, q: &Word, u: usize) -> Result<GetAnywhere> {
    let m = &kernel.model;
    let d = m.word_distance(p, q)?;
    if d > 6 {
        return Err(ChainError::Precondition(format!("d = {d} exceeds the exact range")));
    }
    let mut eps0 = f64::INFINITY;
    for l in m.letters() {
        let s = m.generator(l)?;
        eps0 = eps0.min(check_irreducibility(kernel, &s, u.max(1), std::slice::from_ref(q))?.epsilon);
    }
    let mut dist = BTreeMap::from([(q.clone(), 1.0)]);
    let mut best = (0, dist.get(p).copied().unwrap_or(0.0));
    for t in 1..=d * u {
        dist = kernel.advance(&dist)?;
        let pr = dist.get(p).copied().unwrap_or(0.0);
        if pr > best.1 {
            best = (t, pr);
        }
    }
    let bound = eps0.powi(d as i32);
    Ok(GetAnywhere { t: best.0, probability: best.1, epsilon0: eps0, bound, holds: best.1 >= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f2() -> GroupModel {
        GroupModel::parse("F2").unwrap()
    }

    #[test]
    fn trivial_and_parity() {
        let m = f2();
        let k = MarkovKernel::srw(&m).unwrap();
        let t = simulate(&k, &Word::identity(), 0, 9).unwrap();
        assert_eq!(t.states, vec![Word::identity()]);
        let t = simulate(&k, &Word::identity(), 3, 9).unwrap();
        assert_eq!(t, simulate(&k, &Word::identity(), 3, 9).unwrap());
        assert!([1, 3].contains(&t.last().len()));
        assert!(verify_bounded_jumps(&k, &t));
    }

    #[test]
    fn branch_swap_law_at_identity() {
        let m = f2();
        let phi = BijectiveQI::branch_swap(&m).unwrap();
        let chk = phi.verify(4).unwrap();
        assert!(chk.bijective);
        assert_eq!(chk.displacement, 2);
        assert!(chk.nu <= phi.nu);
        let pf = MarkovKernel::srw(&m).unwrap().push_forward(&phi, 3).unwrap();
        let w = |s: &str| m.parse_word(s).unwrap();
        assert_eq!(pf.prob(&Word::identity(), &w("a")), 0.25);
        assert_eq!(pf.prob(&Word::identity(), &w("b")), 0.25);
        let targets: Vec<Word> = pf.law(&Word::identity()).into_iter().map(|x| x.0).collect();
        assert_eq!(targets[0], w("b"));
        assert_eq!(targets[2], w("a"));
        let jumps = pf.jump_set(3).unwrap();
        assert!(jumps.iter().all(|j| j.len() <= 5));
    }

    #[test]
    fn irreducibility_examples() {
        let m = f2();
        let a = m.parse_word("a").unwrap();
        let base = m.ball(&Word::identity(), 1).unwrap();
        let r = check_irreducibility(&MarkovKernel::srw(&m).unwrap(), &a, 3, &base).unwrap();
        assert_eq!((r.epsilon, r.k), (0.25, 1));
        let r = check_irreducibility(&MarkovKernel::lazy_srw(&m, 0.5).unwrap(), &a, 3, &base).unwrap();
        assert_eq!((r.epsilon, r.k), (0.125, 1));
        let pf = MarkovKernel::by_name(&m, "branch-swap", None).unwrap();
        let r = check_irreducibility(&pf, &a, 2, &[Word::identity()]).unwrap();
        assert_eq!((r.epsilon, r.k), (0.25, 1));
        let reps = [Word::identity(), a.clone(), m.parse_word("b").unwrap()];
        assert!(check_irreducibility(&pf, &a, 4, &reps).is_err());
        let r = check_irreducibility(&pf, &a, 5, &reps).unwrap();
        assert_eq!(r.k, 5);
        assert!(r.epsilon > 0.0);
    }

    #[test]
    fn decay_verdicts() {
        let m = f2();
        let k = MarkovKernel::srw(&m).unwrap();
        assert_eq!(k.distribution(&Word::identity(), 2).unwrap()[&Word::identity()], 0.25);
        let ns: Vec<usize> = (1..=12).collect();
        let r = estimate_nonamenability(&k, &ns, 0, 1).unwrap();
        assert!(r.rho_hat.unwrap() < 0.95, "{:?}", r.rho_hat);
        assert_eq!(r.verdict, DecayVerdict::ConsistentWithTame);
        let z2 = GroupModel::parse("Z^2").unwrap();
        let ns: Vec<usize> = (1..=16).collect();
        let r = estimate_nonamenability(&MarkovKernel::srw(&z2).unwrap(), &ns, 0, 1).unwrap();
        assert_eq!(r.verdict, DecayVerdict::AmenableTrend, "{:?}", r.rho_hat);
    }

    #[test]
    fn witnesses() {
        let m = f2();
        let k = MarkovKernel::srw(&m).unwrap();
        let e = Word::identity();
        let (phi, c) = quasi_homogeneity_witness(&k, &e, &e, 1).unwrap();
        assert_eq!(phi.rule, QiRule::Identity);
        assert!(c.exact_match);
        let ab = m.parse_word("ab").unwrap();
        let (phi, c) = quasi_homogeneity_witness(&k, &e, &ab, 1).unwrap();
        assert_eq!(phi.rule, QiRule::LeftTranslation(ab));
        assert!(c.exact_match && c.maps_p_to_q);
        let pf = MarkovKernel::by_name(&m, "branch-swap", None).unwrap();
        let a = m.parse_word("a").unwrap();
        let (_, c) = quasi_homogeneity_witness(&pf, &e, &a, 3).unwrap();
        assert!(c.exact_match && c.maps_p_to_q);
        let rule = LocalRule {
            classifier: Classifier::Constant,
            measures: vec![vec![(a.clone(), 1.0)]],
            declared_invariant: false,
        };
        let lr = MarkovKernel::local_rule(&m, rule).unwrap();
        assert_eq!(quasi_homogeneity_witness(&lr, &e, &a, 1).unwrap_err(), ChainError::NoWitness);
    }

    #[test]
    fn projection_comparison() {
        let m = f2();
        let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
        let ray = Ray { base: Word::identity(), step: m.parse_word("a").unwrap() };
        let e = Word::identity();
        let sample = m.ball(&e, 4).unwrap();
        let id = BijectiveQI::identity(&m);
        assert_eq!(qi_projection_comparison(&rho, &id, &ray, &e, &sample).unwrap().a, 1.0);
        let tr = BijectiveQI::translation(&m, &m.parse_word("b a").unwrap()).unwrap();
        assert_eq!(qi_projection_comparison(&rho, &tr, &ray, &e, &sample).unwrap().a, 1.0);
        let sw = BijectiveQI::branch_swap(&m).unwrap();
        let r = qi_projection_comparison(&rho, &sw, &ray, &e, &sample).unwrap();
        assert!(r.a.is_finite() && r.a >= 1.0);
    }

    #[test]
    fn get_anywhere_examples() {
        let m = f2();
        let k = MarkovKernel::srw(&m).unwrap();
        let e = Word::identity();
        let r = get_anywhere_check(&k, &e, &e, 1).unwrap();
        assert_eq!((r.t, r.probability), (0, 1.0));
        let ab = m.parse_word("ab").unwrap();
        let r = get_anywhere_check(&k, &ab, &e, 1).unwrap();
        assert_eq!((r.t, r.probability), (2, 1.0 / 16.0));
        assert!(r.holds);
        let lazy = MarkovKernel::lazy_srw(&m, 0.5).unwrap();
        let r = get_anywhere_check(&lazy, &ab, &e, 3).unwrap();
        assert!((2..=6).contains(&r.t) && r.holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn translated_start_translates_path(seed in 0u64..1000, g in proptest::collection::vec(0usize..4, 0..6)) {
            let m = f2();
            let k = MarkovKernel::srw(&m).unwrap();
            let gens = m.letters();
            let raw: Vec<Letter> = g.iter().map(|&i| gens[i]).collect();
            let g = m.normal_form(&raw).unwrap();
            let t0 = simulate(&k, &Word::identity(), 12, seed).unwrap();
            let t1 = simulate(&k, &g, 12, seed).unwrap();
            for (x, y) in t0.states.iter().zip(&t1.states) {
                prop_assert_eq!(m.mul(&g, x), y.clone());
            }
        }

        #[test]
        fn push_forward_law_identity(seed in 0u64..1000) {
            let m = f2();
            let phi = BijectiveQI::branch_swap(&m).unwrap();
            let base = MarkovKernel::srw(&m).unwrap();
            let pf = base.push_forward(&phi, 2).unwrap();
            let mut rng = stream_rng(seed, 0);
            let x = m.random_element(&mut rng, 6);
            let h = m.random_element(&mut rng, 8);
            let h = m.mul(&x, &h.prefix(h.len().min(3)));
            prop_assert_eq!(pf.prob(&phi.apply(&x), &phi.apply(&h)), base.prob(&x, &h));
        }

        #[test]
        fn bounded_permutation_is_an_involution(seed in 0u64..1000) {
            let m = f2();
            let phi = BijectiveQI::branch_swap(&m).unwrap();
            let mut rng = stream_rng(seed, 1);
            let x = m.random_element(&mut rng, 10);
            prop_assert_eq!(phi.apply(&phi.apply(&x)), x.clone());
            prop_assert_eq!(phi.apply_inverse(&phi.apply(&x)), x.clone());
            prop_assert!(m.dist(&x, &phi.apply(&x)) <= 2);
        }
    }
}
