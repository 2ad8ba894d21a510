//! Concrete finitely generated groups with exact normal forms.
//!
//! Four families are supported: free groups, free abelian groups, free
//! products of supported groups, and direct products `G x Z`. Generators are
//! indexed globally; a free product's factors own consecutive index ranges and
//! the central generator of `G x Z` comes last.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on the number of elements a ball may hold.
pub const BALL_CAP: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("unknown generator index {0}")]
    UnknownGenerator(u16),
    #[error("unknown generator name `{0}`")]
    UnknownName(String),
    #[error("cannot parse model descriptor: {0}")]
    Descriptor(String),
    #[error("cannot parse word: {0}")]
    WordSyntax(String),
    #[error("word is not a normal form of model {model}: {word}")]
    ForeignWord { model: String, word: String },
    #[error("ball of radius {radius} exceeds the cap of {cap} elements")]
    CapExceeded { radius: usize, cap: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, GroupError>;

/// A generator or its inverse.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Letter {
    pub gen: u16,
    pub inv: bool,
}

impl Letter {
    pub const fn new(gen: u16, inv: bool) -> Self {
        Letter { gen, inv }
    }

    pub const fn pos(gen: u16) -> Self {
        Letter { gen, inv: false }
    }

    pub const fn neg(gen: u16) -> Self {
        Letter { gen, inv: true }
    }

    pub fn inverse(self) -> Self {
        Letter { gen: self.gen, inv: !self.inv }
    }
}

/// A group element stored as its normal-form letter sequence.
///
/// Words compare length-lexicographically. A `Word` does not carry its model;
/// operations on [`GroupModel`] validate foreign words where it matters.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    /// Wraps letters that the caller guarantees are already in normal form.
    pub(crate) fn from_normal(letters: Vec<Letter>) -> Self {
        Word(letters)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelKind {
    FreeGroup(u16),
    FreeAbelian(u16),
    FreeProduct(Vec<GroupModel>),
    /// `G x Z`; the central generator has index `base + G.rank()`.
    DirectProduct(Box<GroupModel>),
}

/// A concrete group with its standard generating set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupModel {
    kind: ModelKind,
    base: u16,
    rank: u16,
    names: Vec<String>,
}

/// Unnamed structure used while building a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Free(u16),
    Abelian(u16),
    Product(Vec<Shape>),
    TimesZ(Box<Shape>),
}

#[derive(Default)]
struct Namer {
    free: usize,
    abelian: usize,
    central: usize,
}

const FREE_NAMES: [&str; 10] = ["a", "b", "c", "d", "f", "g", "h", "k", "m", "n"];
const ABELIAN_NAMES: [&str; 6] = ["x", "y", "z", "u", "v", "w"];
const CENTRAL_NAMES: [&str; 4] = ["t", "s", "r", "q"];

impl Namer {
    fn take(pool: &[&str], counter: &mut usize, index: u16) -> String {
        let name = pool
            .get(*counter)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("g{index}"));
        *counter += 1;
        name
    }
}

impl GroupModel {
    pub fn free(rank: u16) -> Result<Self> {
        Self::from_shape(&Shape::Free(rank))
    }

    pub fn free_abelian(rank: u16) -> Result<Self> {
        Self::from_shape(&Shape::Abelian(rank))
    }

    /// Parses a compact descriptor such as `F2`, `Z^2 * Z` or `(Z^2 * Z) x Z`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let shape = DescriptorParser::new(descriptor).parse()?;
        Self::from_shape(&shape)
    }

    pub fn from_shape(shape: &Shape) -> Result<Self> {
        let mut namer = Namer::default();
        let mut next = 0u16;
        let model = Self::build(shape, &mut next, &mut namer)?;
        let distinct: HashSet<&String> = model.names.iter().collect();
        if distinct.len() != model.names.len() {
            return Err(GroupError::InvalidModel("generator names collide".into()));
        }
        Ok(model)
    }

    fn build(shape: &Shape, next: &mut u16, namer: &mut Namer) -> Result<Self> {
        let base = *next;
        match shape {
            Shape::Free(r) | Shape::Abelian(r) => {
                if *r == 0 {
                    return Err(GroupError::InvalidModel("rank must be at least 1".into()));
                }
                let is_free = matches!(shape, Shape::Free(_));
                let names = (0..*r)
                    .map(|i| {
                        if is_free {
                            Namer::take(&FREE_NAMES, &mut namer.free, base + i)
                        } else {
                            Namer::take(&ABELIAN_NAMES, &mut namer.abelian, base + i)
                        }
                    })
                    .collect();
                *next += r;
                let kind = if is_free {
                    ModelKind::FreeGroup(*r)
                } else {
                    ModelKind::FreeAbelian(*r)
                };
                Ok(GroupModel { kind, base, rank: *r, names })
            }
            Shape::Product(parts) => {
                if parts.len() < 2 {
                    return Err(GroupError::InvalidModel(
                        "a free product needs at least two factors".into(),
                    ));
                }
                let factors = parts
                    .iter()
                    .map(|p| Self::build(p, next, namer))
                    .collect::<Result<Vec<_>>>()?;
                let names = factors.iter().flat_map(|f| f.names.clone()).collect();
                Ok(GroupModel {
                    kind: ModelKind::FreeProduct(factors),
                    base,
                    rank: *next - base,
                    names,
                })
            }
            Shape::TimesZ(inner) => {
                let g = Self::build(inner, next, namer)?;
                let mut names = g.names.clone();
                names.push(Namer::take(&CENTRAL_NAMES, &mut namer.central, *next));
                *next += 1;
                Ok(GroupModel {
                    kind: ModelKind::DirectProduct(Box::new(g)),
                    base,
                    rank: *next - base,
                    names,
                })
            }
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn rank(&self) -> u16 {
        self.rank
    }

    pub fn base(&self) -> u16 {
        self.base
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self) -> Shape {
        match &self.kind {
            ModelKind::FreeGroup(r) => Shape::Free(*r),
            ModelKind::FreeAbelian(r) => Shape::Abelian(*r),
            ModelKind::FreeProduct(fs) => Shape::Product(fs.iter().map(|f| f.shape()).collect()),
            ModelKind::DirectProduct(g) => Shape::TimesZ(Box::new(g.shape())),
        }
    }

    pub fn descriptor(&self) -> String {
        fn go(m: &GroupModel, top: bool) -> String {
            match &m.kind {
                ModelKind::FreeGroup(r) => format!("F{r}"),
                ModelKind::FreeAbelian(1) => "Z".into(),
                ModelKind::FreeAbelian(r) => format!("Z^{r}"),
                ModelKind::FreeProduct(fs) => {
                    let inner = fs.iter().map(|f| go(f, false)).collect::<Vec<_>>().join(" * ");
                    if top {
                        inner
                    } else {
                        format!("({inner})")
                    }
                }
                ModelKind::DirectProduct(g) => {
                    let inner = format!("{} x Z", go(g, false));
                    if top {
                        inner
                    } else {
                        format!("({inner})")
                    }
                }
            }
        }
        go(self, true)
    }

    /// Generators and inverses in the canonical order `(gen, inv)`.
    pub fn letters(&self) -> Vec<Letter> {
        (self.base..self.base + self.rank)
            .flat_map(|g| [Letter::pos(g), Letter::neg(g)])
            .collect()
    }

    fn owns(&self, l: Letter) -> bool {
        l.gen >= self.base && l.gen < self.base + self.rank
    }

    /// Index of the free-product factor owning a generator.
    pub fn factor_of(&self, gen: u16) -> Option<usize> {
        match &self.kind {
            ModelKind::FreeProduct(fs) => fs.iter().position(|f| f.owns(Letter::pos(gen))),
            _ => None,
        }
    }

    pub fn factors(&self) -> &[GroupModel] {
        match &self.kind {
            ModelKind::FreeProduct(fs) => fs,
            _ => &[],
        }
    }

    /// Index of the central generator of `G x Z`.
    pub fn central_gen(&self) -> Option<u16> {
        match &self.kind {
            ModelKind::DirectProduct(_) => Some(self.base + self.rank - 1),
            _ => None,
        }
    }

    fn push(&self, nf: &mut Vec<Letter>, l: Letter) {
        match &self.kind {
            ModelKind::FreeGroup(_) => {
                if nf.last() == Some(&l.inverse()) {
                    nf.pop();
                } else {
                    nf.push(l);
                }
            }
            ModelKind::FreeAbelian(_) => {
                let start = nf.partition_point(|x| x.gen < l.gen);
                let end = nf.partition_point(|x| x.gen <= l.gen);
                if start == end || nf[start].inv == l.inv {
                    nf.insert(end, l);
                } else {
                    nf.remove(start);
                }
            }
            ModelKind::FreeProduct(fs) => {
                let fi = fs.iter().position(|f| f.owns(l)).expect("letter owned by a factor");
                let f = &fs[fi];
                let tail = nf.iter().rev().take_while(|x| f.owns(**x)).count();
                let mut syl = nf.split_off(nf.len() - tail);
                f.push(&mut syl, l);
                nf.extend(syl);
            }
            ModelKind::DirectProduct(g) => {
                let c = self.base + self.rank - 1;
                if l.gen == c {
                    if nf.last() == Some(&l.inverse()) {
                        nf.pop();
                    } else {
                        nf.push(l);
                    }
                } else {
                    let tail = nf.iter().rev().take_while(|x| x.gen == c).count();
                    let t = nf.split_off(nf.len() - tail);
                    g.push(nf, l);
                    nf.extend(t);
                }
            }
        }
    }

    fn validate_letters(&self, raw: &[Letter]) -> Result<()> {
        match raw.iter().find(|l| !self.owns(**l)) {
            Some(l) => Err(GroupError::UnknownGenerator(l.gen)),
            None => Ok(()),
        }
    }

    /// Canonical form of an arbitrary product of letters.
    pub fn normal_form(&self, raw: &[Letter]) -> Result<Word> {
        self.validate_letters(raw)?;
        let mut nf = Vec::with_capacity(raw.len());
        for &l in raw {
            self.push(&mut nf, l);
        }
        Ok(Word(nf))
    }

    /// Rejects words that are not normal forms of this model.
    pub fn check(&self, w: &Word) -> Result<()> {
        let ok = w.0.iter().all(|l| self.owns(*l)) && {
            let mut nf = Vec::with_capacity(w.len());
            for &l in &w.0 {
                self.push(&mut nf, l);
            }
            nf == w.0
        };
        if ok {
            Ok(())
        } else {
            Err(GroupError::ForeignWord { model: self.descriptor(), word: format!("{:?}", w.0) })
        }
    }

    pub fn generator(&self, l: Letter) -> Result<Word> {
        self.normal_form(&[l])
    }

    pub fn mul(&self, a: &Word, b: &Word) -> Word {
        let mut nf = a.0.clone();
        for &l in &b.0 {
            self.push(&mut nf, l);
        }
        Word(nf)
    }

    pub fn mul_letter(&self, a: &Word, l: Letter) -> Word {
        let mut nf = a.0.clone();
        self.push(&mut nf, l);
        Word(nf)
    }

    /// Right-multiplies in place by one letter.
    pub fn push_letter(&self, a: &mut Word, l: Letter) {
        self.push(&mut a.0, l);
    }

    pub fn inverse(&self, a: &Word) -> Word {
        let mut nf = Vec::with_capacity(a.len());
        for &l in a.0.iter().rev() {
            self.push(&mut nf, l.inverse());
        }
        Word(nf)
    }

    pub fn pow(&self, a: &Word, n: i64) -> Word {
        let base = if n < 0 { self.inverse(a) } else { a.clone() };
        let mut acc = Word::identity();
        for _ in 0..n.unsigned_abs() {
            acc = self.mul(&acc, &base);
        }
        acc
    }

    /// `g^-1 h`.
    pub fn quotient(&self, g: &Word, h: &Word) -> Word {
        let gi = self.inverse(g);
        self.mul(&gi, h)
    }

    /// Word metric with respect to the standard generators.
    pub fn word_distance(&self, g: &Word, h: &Word) -> Result<usize> {
        self.check(g)?;
        self.check(h)?;
        Ok(self.quotient(g, h).len())
    }

    /// Unchecked word metric for internal hot loops.
    pub fn dist(&self, g: &Word, h: &Word) -> usize {
        self.quotient(g, h).len()
    }

    /// All `h` with `d(center, h) <= radius`, ordered by distance to the
    /// center and then lexicographically by `center^-1 h`.
    pub fn ball(&self, center: &Word, radius: usize) -> Result<Vec<Word>> {
        self.ball_capped(center, radius, BALL_CAP)
    }

    pub fn ball_capped(&self, center: &Word, radius: usize, cap: usize) -> Result<Vec<Word>> {
        self.check(center)?;
        let gens = self.letters();
        let mut seen: HashSet<Word> = HashSet::new();
        seen.insert(Word::identity());
        let mut layers = vec![vec![Word::identity()]];
        for _ in 0..radius {
            let mut next: Vec<Word> = Vec::new();
            for w in layers.last().expect("nonempty") {
                for &l in &gens {
                    let v = self.mul_letter(w, l);
                    if !seen.contains(&v) {
                        seen.insert(v.clone());
                        next.push(v);
                        if seen.len() > cap {
                            return Err(GroupError::CapExceeded { radius, cap });
                        }
                    }
                }
            }
            next.sort();
            layers.push(next);
        }
        Ok(layers
            .into_iter()
            .flatten()
            .map(|off| self.mul(center, &off))
            .collect())
    }

    /// Deterministic geodesic from `g` to `h`; at each step the
    /// lexicographically least admissible letter is taken.
    pub fn geodesic(&self, g: &Word, h: &Word) -> Result<GeodesicPath> {
        self.check(g)?;
        self.check(h)?;
        let k = self.quotient(g, h);
        let mut cur = g.clone();
        let mut vertices = vec![cur.clone()];
        for &l in k.letters() {
            self.push_letter(&mut cur, l);
            vertices.push(cur.clone());
        }
        Ok(GeodesicPath { vertices })
    }

    pub fn name_of(&self, gen: u16) -> &str {
        &self.names[(gen - self.base) as usize]
    }

    fn name_table(&self) -> HashMap<&str, u16> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), self.base + i as u16))
            .collect()
    }

    /// Parses `name` / `name^k` tokens, e.g. `b a^5 b` or `ba^-2`. A lone `e`
    /// (or `1`) is the identity.
    pub fn parse_word(&self, text: &str) -> Result<Word> {
        let table = self.name_table();
        let mut longest: Vec<&str> = table.keys().copied().collect();
        longest.sort_by_key(|n| std::cmp::Reverse(n.len()));
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        let mut raw = Vec::new();
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() || c == '*' || c == '.' {
                i += 1;
                continue;
            }
            let rest: String = chars[i..].iter().collect();
            let name = longest.iter().find(|n| rest.starts_with(**n));
            let gen = match name {
                Some(n) => {
                    i += n.chars().count();
                    Some(table[n])
                }
                None if c == 'e' || c == '1' => {
                    i += 1;
                    None
                }
                None => {
                    let tok: String = rest.chars().take_while(|c| c.is_alphanumeric()).collect();
                    return Err(GroupError::UnknownName(tok));
                }
            };
            let mut exp: i64 = 1;
            if i < chars.len() && chars[i] == '^' {
                i += 1;
                let start = i;
                if i < chars.len() && chars[i] == '-' {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let num: String = chars[start..i].iter().collect();
                exp = num
                    .parse()
                    .map_err(|_| GroupError::WordSyntax(format!("bad exponent `{num}`")))?;
            }
            if let Some(g) = gen {
                let l = Letter::new(g, exp < 0);
                raw.extend(std::iter::repeat(l).take(exp.unsigned_abs() as usize));
            }
        }
        self.normal_form(&raw)
    }

    /// Renders a word with `^` powers, `e` for the identity.
    pub fn format_word(&self, w: &Word) -> String {
        if w.is_empty() {
            return "e".into();
        }
        let mut parts = Vec::new();
        let mut i = 0;
        let ls = w.letters();
        while i < ls.len() {
            let mut j = i;
            while j < ls.len() && ls[j] == ls[i] {
                j += 1;
            }
            let n = (j - i) as i64;
            let name = self.name_of(ls[i].gen);
            let e = if ls[i].inv { -n } else { n };
            parts.push(if e == 1 { name.to_string() } else { format!("{name}^{e}") });
            i = j;
        }
        parts.join(" ")
    }

    /// A random element obtained by normalising `len` uniform letters.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Word {
        let gens = self.letters();
        let mut w = Word::identity();
        for _ in 0..len {
            let l = gens[rng.gen_range(0..gens.len())];
            self.push_letter(&mut w, l);
        }
        w
    }

    /// Syllables of a free-product normal form as `(factor, start, end)`.
    pub fn syllables(&self, w: &Word) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (i, l) in w.letters().iter().enumerate() {
            let f = self.factor_of(l.gen).unwrap_or(0);
            match out.last_mut() {
                Some(last) if last.0 == f => last.2 = i + 1,
                _ => out.push((f, i, i + 1)),
            }
        }
        out
    }

    /// Splits an element of `G x Z` into its `G` part and central exponent.
    pub fn split_central(&self, w: &Word) -> Option<(Word, i64)> {
        let c = self.central_gen()?;
        let tail = w.letters().iter().rev().take_while(|l| l.gen == c).count();
        let k = w.letters()[w.len() - tail..]
            .iter()
            .map(|l| if l.inv { -1i64 } else { 1 })
            .sum();
        Some((Word(w.letters()[..w.len() - tail].to_vec()), k))
    }

    /// The non-central factor of `G x Z`.
    pub fn central_quotient(&self) -> Option<&GroupModel> {
        match &self.kind {
            ModelKind::DirectProduct(g) => Some(g),
            _ => None,
        }
    }
}

impl fmt::Display for GroupModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// Consecutive vertices at word distance one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub vertices: Vec<Word>,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() <= 1
    }

    pub fn first(&self) -> &Word {
        &self.vertices[0]
    }

    pub fn last(&self) -> &Word {
        self.vertices.last().expect("paths have at least one vertex")
    }

    /// Path through the prefixes of a normal form word, starting at `e`.
    pub fn from_word(model: &GroupModel, w: &Word) -> Self {
        let mut cur = Word::identity();
        let mut vertices = vec![cur.clone()];
        for &l in w.letters() {
            model.push_letter(&mut cur, l);
            vertices.push(cur.clone());
        }
        GeodesicPath { vertices }
    }
}

struct DescriptorParser {
    toks: Vec<String>,
    pos: usize,
}

impl DescriptorParser {
    fn new(s: &str) -> Self {
        let mut toks = Vec::new();
        let mut cur = String::new();
        for c in s.chars() {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            } else if "()*^x".contains(c) {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            toks.push(cur);
        }
        DescriptorParser { toks, pos: 0 }
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|s| s.as_str())
    }

    fn bump(&mut self) -> Option<String> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(GroupError::Descriptor(format!("{msg} at token {}", self.pos)))
    }

    fn parse(mut self) -> Result<Shape> {
        let s = self.direct()?;
        if self.pos != self.toks.len() {
            return self.err("trailing input");
        }
        Ok(s)
    }

    fn direct(&mut self) -> Result<Shape> {
        let mut s = self.freeprod()?;
        while self.peek() == Some("x") {
            self.bump();
            match self.bump().as_deref() {
                Some("Z") => s = Shape::TimesZ(Box::new(s)),
                _ => return self.err("only `x Z` direct factors are supported"),
            }
        }
        Ok(s)
    }

    fn freeprod(&mut self) -> Result<Shape> {
        let mut parts = vec![self.atom()?];
        while self.peek() == Some("*") {
            self.bump();
            parts.push(self.atom()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one part") } else { Shape::Product(parts) })
    }

    fn atom(&mut self) -> Result<Shape> {
        match self.bump() {
            Some(t) if t == "(" => {
                let s = self.direct()?;
                if self.bump().as_deref() != Some(")") {
                    return self.err("expected `)`");
                }
                Ok(s)
            }
            Some(t) if t == "Z" => {
                if self.peek() == Some("^") {
                    self.bump();
                    let n = self.number()?;
                    Ok(Shape::Abelian(n))
                } else {
                    Ok(Shape::Abelian(1))
                }
            }
            Some(t) if t.starts_with('F') => match t[1..].parse::<u16>() {
                Ok(n) => Ok(Shape::Free(n)),
                Err(_) => self.err("bad free-group rank"),
            },
            _ => self.err("expected `Fn`, `Z`, `Z^n` or `(`"),
        }
    }

    fn number(&mut self) -> Result<u16> {
        match self.bump().and_then(|t| t.parse::<u16>().ok()) {
            Some(n) => Ok(n),
            None => self.err("expected a number"),
        }
    }
}
