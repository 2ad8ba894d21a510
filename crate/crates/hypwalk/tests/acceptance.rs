//! Acceptance gate: one line per criterion, tolerances pinned below.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;

use hypwalk::boundary::{cross_ratio, qi_crossratio_check, random_quadruples, BoundaryPoint};
use hypwalk::chains::{stream_rng, BijectiveQI};
use hypwalk::experiments::{
    bounded_projection_experiment, linear_progress_experiment, radial_tail_oracle, sample_cells, tail_experiment,
    ExperimentConfig,
};
use hypwalk::groups::{GeodesicPath, GroupModel, Word};
use hypwalk::hhs::{
    coning_schedule, default_region_map, factored_ball, factored_vs_bass_serre, random_skeleton, HHSSkeleton,
};
use hypwalk::morse::{diagonal_crossing_ray, incompatibility_witness, mutual_projection_paths, Gauge};
use hypwalk::projections::{
    axis_of, behrstock_check, df_lower_bound_check, df_sum, enumerate_ht, linear_order, minimal_passing_threshold,
    nearest_on_axis, Axis, TREE_BEHRSTOCK_B,
};
use hypwalk::spaces::{fibre_separation_profile, FiniteGraph, OrbitMap, Point, Verdict};

const ORACLE_RADIUS: usize = 7;
const ORACLE_AXES: usize = 10;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const POOL_SIZE: usize = 20;
const BEHRSTOCK_RADIUS: usize = 6;
const T: usize = 4;
const TRIPLES: usize = 1000;
const ORDER_RECORDS: usize = 100;
const LOWER_BOUND_PAIRS: usize = 1000;
const DRIFT_N: usize = 2000;
const DRIFT_SAMPLES: usize = 2000;
const DRIFT_TOL: f64 = 0.02;
const DRIFT_BUDGET: Duration = Duration::from_secs(60);
const PROGRESS_N: [usize; 4] = [50, 100, 200, 400];
const PROGRESS_SAMPLES: usize = 10_000;
const PROGRESS_C: f64 = 4.0;
const MAX_SLOPE: f64 = -0.01;
const MIN_R2: f64 = 0.9;
const BP_CELLS: usize = 20;
const BP_N: [usize; 5] = [10, 25, 50, 100, 200];
const BP_SAMPLES: usize = 1000;
const BP_C: f64 = 2.0;
const BP_MIN: f64 = 0.2;
const RANDOM_SKELETONS: usize = 50;
const SKELETON_DOMAINS: usize = 12;
const FACTORED_RADIUS: usize = 6;
const FACTORED_TOL: usize = 2;
const QUADRUPLES: usize = 1000;
const SWAP_EPS: f64 = 2.0;
const TRUNCATIONS: [usize; 3] = [4, 6, 8];

struct Gate {
    lines: Vec<(bool, String)>,
}

impl Gate {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let line = format!("[{tag}] {id:02} {name}: {detail}");
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push((pass, line));
    }
}

fn f2() -> GroupModel {
    GroupModel::parse("F2").unwrap()
}

fn random_word(m: &GroupModel, rng: &mut impl Rng, lo: usize, hi: usize) -> Word {
    let len = rng.gen_range(lo..=hi);
    m.random_element(rng, len)
}

fn axis_pool(rho: &OrbitMap, n: usize, seed: u64) -> Vec<Axis> {
    let m = &rho.group;
    let mut rng = stream_rng(seed, 0);
    let mut pool = BTreeSet::new();
    while pool.len() < n {
        let g = random_word(m, &mut rng, 1, 3);
        if g.is_identity() {
            continue;
        }
        let h = random_word(m, &mut rng, 0, 2);
        pool.insert(axis_of(rho, &g).unwrap().translate(m, &h).unwrap());
    }
    pool.into_iter().collect()
}

/// Nearest orbit points of each axis found by BFS on a prefix-closed, hence
/// convex, subtree containing the ball and a window of the axis.
fn criterion_1(gate: &mut Gate) {
    let start = Instant::now();
    let m = f2();
    let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
    let ball = m.ball(&Word::identity(), ORACLE_RADIUS).unwrap();
    let mut checked = 0;
    let mut mismatches = 0;
    for axis in axis_pool(&rho, ORACLE_AXES, 101) {
        let (rl, pl) = (axis.root.len(), axis.rep.len());
        let window = ((2 * ORACLE_RADIUS + 2 * pl) / rl + 1) as i64;
        let orbit: Vec<(i64, Word)> = (-window..=window).map(|n| (n, axis.point(&m, n))).collect();
        let mut verts: BTreeSet<Word> = ball.iter().cloned().collect();
        for (_, q) in &orbit {
            for k in 0..=q.len() {
                verts.insert(q.prefix(k));
            }
        }
        let verts: Vec<Word> = verts.into_iter().collect();
        let index: HashMap<&Word, usize> = verts.iter().enumerate().map(|(i, w)| (w, i)).collect();
        let edges: Vec<(usize, usize)> =
            verts.iter().skip(1).map(|w| (index[w], index[&w.prefix(w.len() - 1)])).collect();
        let graph = FiniteGraph::from_edges(verts.len(), &edges).unwrap();
        let rows: Vec<(i64, Vec<u32>)> = orbit.iter().map(|(n, q)| (*n, graph.distances_from(index[q]))).collect();
        for x in &ball {
            let xi = index[x];
            let best = rows.iter().map(|(_, r)| r[xi]).min().unwrap();
            let exps: Vec<i64> = rows.iter().filter(|(_, r)| r[xi] == best).map(|(n, _)| *n).collect();
            let got = nearest_on_axis(&rho, &axis, x).unwrap();
            checked += 1;
            if got.exps != exps || got.distance != best as usize {
                mismatches += 1;
            }
        }
    }
    let took = start.elapsed();
    gate.record(
        1,
        "projection oracle equivalence",
        mismatches == 0 && took < ORACLE_BUDGET,
        format!("{checked} (x, axis) pairs, {mismatches} mismatches, {:.2}s", took.as_secs_f64()),
    );
}

/// Distinct cosets `h<g>` of one axis, as in the Behrstock setting.
fn coset_pool(rho: &OrbitMap, g: &str, n: usize, seed: u64) -> Vec<Axis> {
    let m = &rho.group;
    let base = axis_of(rho, &m.parse_word(g).unwrap()).unwrap();
    let mut rng = stream_rng(seed, 0);
    let mut pool = BTreeSet::new();
    while pool.len() < n {
        let h = random_word(m, &mut rng, 0, 4);
        pool.insert(base.translate(m, &h).unwrap());
    }
    pool.into_iter().collect()
}

fn criteria_2_3(gate: &mut Gate) {
    let m = f2();
    let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
    let ball = m.ball(&Word::identity(), BEHRSTOCK_RADIUS).unwrap();
    let parts: Vec<_> = [("a", 202), ("a b", 203)]
        .iter()
        .map(|&(g, seed)| behrstock_check(&rho, &coset_pool(&rho, g, POOL_SIZE, seed), &ball, TREE_BEHRSTOCK_B).unwrap())
        .collect();
    let r = hypwalk::projections::BehrstockReport {
        checked: parts.iter().map(|p| p.checked).sum(),
        triggered: parts.iter().map(|p| p.triggered).sum(),
        violations: parts.iter().map(|p| p.violations).sum(),
        strong_violations: parts.iter().map(|p| p.strong_violations).sum(),
    };
    gate.record(
        2,
        "Behrstock alternative",
        r.violations == 0,
        format!("{} checks, {} triggered, {} violations, B = {}", r.checked, r.triggered, r.violations, TREE_BEHRSTOCK_B),
    );
    gate.record(
        3,
        "strong Behrstock property",
        r.strong_violations == 0,
        format!("{} strong violations", r.strong_violations),
    );
}

/// Two to four long powers of `a` or `a b`, glued by short random words, so
/// that `H_T` is rarely empty.
fn structured_word(m: &GroupModel, rng: &mut impl Rng) -> Word {
    let mut w = Word::identity();
    for _ in 0..rng.gen_range(2..=4) {
        w = m.mul(&w, &random_word(m, rng, 1, 2));
        let piece = m.parse_word(if rng.gen_bool(0.7) { "a" } else { "a b" }).unwrap();
        let k = rng.gen_range(4..=7) * if rng.gen_bool(0.5) { 1 } else { -1 };
        w = m.mul(&w, &m.pow(&piece, k));
    }
    w
}

fn random_pair(m: &GroupModel, rng: &mut impl Rng) -> (Word, Word) {
    let o = random_word(m, rng, 0, 3);
    let p = m.mul(&o, &structured_word(m, rng));
    (o, p)
}

fn criterion_4(gate: &mut Gate) {
    let m = f2();
    let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
    let mut rng = stream_rng(404, 0);
    let mut violations = 0;
    let mut nonzero = 0;
    for i in 0..TRIPLES {
        let g = if i % 2 == 0 { m.parse_word("a").unwrap() } else { m.parse_word("a b").unwrap() };
        let (o, p) = random_pair(&m, &mut rng);
        let rec = enumerate_ht(&rho, &g, &o, &p, T, m.dist(&o, &p)).unwrap();
        let near = |rng: &mut rand_chacha::ChaCha8Rng| {
            let base = if rng.gen_bool(0.5) { &o } else { &p };
            m.mul(base, &random_word(&m, rng, 0, 8))
        };
        let (x, y, z) = (near(&mut rng), near(&mut rng), near(&mut rng));
        let xz = df_sum(&rho, &rec, &x, &z).unwrap();
        let xy = df_sum(&rho, &rec, &x, &y).unwrap();
        let yz = df_sum(&rho, &rec, &y, &z).unwrap();
        nonzero += usize::from(xz > 0);
        violations += usize::from(xz > xy + yz);
    }
    gate.record(
        4,
        "distance-formula triangle inequality",
        violations == 0,
        format!("{TRIPLES} triples at T = {T}, {nonzero} with nonzero sums, {violations} violations"),
    );
}

fn criterion_5(gate: &mut Gate) {
    let m = f2();
    let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
    let g = m.parse_word("a").unwrap();
    let mut rng = stream_rng(505, 0);
    let (mut pairs, mut disagreements, mut entries) = (0, 0, 0);
    for _ in 0..ORDER_RECORDS {
        let (o, p) = random_pair(&m, &mut rng);
        let rec = enumerate_ht(&rho, &g, &o, &p, T, m.dist(&o, &p)).unwrap();
        entries += rec.entries.len();
        let r = linear_order(&rho, &rec, TREE_BEHRSTOCK_B).unwrap();
        pairs += r.pairs_checked;
        disagreements += r.disagreements.len();
    }
    gate.record(
        5,
        "linear order consistency",
        disagreements == 0,
        format!("{ORDER_RECORDS} records, {entries} cosets, {pairs} pairs, {disagreements} disagreements"),
    );
}

fn criterion_6(gate: &mut Gate) {
    let m = f2();
    let rho = OrbitMap::cayley_tree(m.clone()).unwrap();
    let g = m.parse_word("a").unwrap();
    let mut rng = stream_rng(606, 0);
    let pairs: Vec<(Word, Word)> = (0..LOWER_BOUND_PAIRS)
        .map(|_| random_pair(&m, &mut rng))
        .collect();
    let mut failures = 0;
    for t in T..=T + 4 {
        for (a, b) in &pairs {
            failures += usize::from(!df_lower_bound_check(&rho, &g, a, b, t).unwrap().pass);
        }
    }
    let sweep: Vec<usize> = (1..=T + 4).collect();
    let min_t = minimal_passing_threshold(&rho, &g, &pairs, &sweep).unwrap();
    gate.record(
        6,
        "distance-formula lower bound",
        failures == 0,
        format!("{LOWER_BOUND_PAIRS} pairs x T in {T}..={}, {failures} failures, minimal passing T = {min_t:?}", T + 4),
    );
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

fn criterion_7(gate: &mut Gate) {
    let start = Instant::now();
    let c = config(&format!("seed = 707\nn = {DRIFT_N}\nC = 4\nsamples = {DRIFT_SAMPLES}"));
    let t = linear_progress_experiment(&c).unwrap();
    let took = start.elapsed();
    let row = &t.drift[0];
    let oracle = row.oracle.unwrap();
    let gap = (row.mean - oracle).abs();
    gate.record(
        7,
        "drift",
        gap <= DRIFT_TOL && took < DRIFT_BUDGET,
        format!(
            "mean d/n = {:.4} (se {:.4}), oracle {:.4}, gap {:.4} <= {DRIFT_TOL}, {:.2}s",
            row.mean,
            row.se,
            oracle,
            gap,
            took.as_secs_f64()
        ),
    );
}

fn criterion_8(gate: &mut Gate) {
    let grid: Vec<String> = PROGRESS_N.iter().map(|n| n.to_string()).collect();
    let c = config(&format!("seed = 808\nn = {}\nC = {PROGRESS_C}\nsamples = {PROGRESS_SAMPLES}", grid.join(",")));
    let t = linear_progress_experiment(&c).unwrap();
    let fit = &t.fits[0];
    let fails: Vec<usize> = t.rows.iter().map(|r| r.progress.samples - r.progress.successes).collect();
    let slope = fit.slope.unwrap_or(f64::NAN);
    let r2 = fit.r2.unwrap_or(f64::NAN);
    let oracle: Vec<String> =
        PROGRESS_N.iter().map(|&n| format!("{:.2e}", radial_tail_oracle(2, n, n as f64 / PROGRESS_C))).collect();
    gate.record(
        8,
        "linear progress with exponential decay",
        fit.nonincreasing && slope <= MAX_SLOPE && r2 >= MIN_R2,
        format!(
            "failures {fails:?} of {PROGRESS_SAMPLES}, fitted on n = {:?} (excluded {:?}), slope {slope:.4}, R^2 {r2:.3}; exact tail {oracle:?}",
            fit.used, fit.excluded
        ),
    );
}

fn criterion_9(gate: &mut Gate) -> f64 {
    let m = f2();
    let c = config(&format!("seed = 909\nC = {BP_C}\nsamples = {BP_SAMPLES}"));
    let cells = sample_cells(&m, BP_CELLS, 909);
    let r = bounded_projection_experiment(&c, &cells, &BP_N).unwrap();
    let worst = &r.cells[r.argmin];
    gate.record(
        9,
        "bounded projections",
        r.min >= BP_MIN,
        format!("min {:.3} >= {BP_MIN} at p = {}, h = {}, n = {}; domain: {}", r.min, worst.p, worst.h, worst.n, r.domain),
    );
    r.eps_hat
}

fn criterion_10(gate: &mut Gate, eps: f64) {
    let c = config("seed = 1010\np = a^5 b a^6 b a^5\nn = 200\nsamples = 4000\ntmax = 40\nwindow = 20\nD = 2");
    let t = tail_experiment(&c).unwrap();
    let rec = hypwalk::experiments::recursion_check(&t, c.d, eps).unwrap();
    gate.record(
        10,
        "tail proposition",
        t.c_prime.is_some_and(f64::is_finite) && t.envelope_holds && t.containment,
        format!(
            "C' = {:.3}, envelope over {} cells {}, containment {}, smallest working C' {:.3}; recursion at eps {:.3}: {}/{} t pass, implied C' {:.1}",
            t.c_prime.unwrap_or(f64::INFINITY),
            t.fitted_cells.len(),
            if t.envelope_holds { "holds" } else { "fails" },
            if t.containment { "exact" } else { "broken" },
            t.c_prime_min.unwrap_or(f64::NAN),
            eps,
            rec.passed,
            rec.rows.len(),
            rec.implied_c_prime.unwrap_or(f64::INFINITY),
        ),
    );
}

fn criterion_11(gate: &mut Gate) {
    let sk = HHSSkeleton::figure_example();
    let s = coning_schedule(&sk);
    let strs = |v: &[String]| v.join(" ");
    let edges = |v: &[(String, String)]| v.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(" ");
    let got: Vec<(usize, String, String)> =
        s.rounds.iter().map(|r| (r.clique_number, strs(&r.removed), edges(&r.remaining_edges))).collect();
    let want: Vec<(usize, String, String)> = vec![
        (4, "A1 A2 A3 A4 E".into(), "B1-B2 B1-B3 B1-D2 B2-B3 C1-C2".into()),
        (3, "B1 B2 B3 F".into(), "C1-C2".into()),
        (2, "C1 C2".into(), String::new()),
    ];
    let figure_ok = sort_edges(&got) == sort_edges(&want) && strs(&s.remnants) == "D1 D2";
    let mut worst = i64::MIN;
    let mut omegas = BTreeSet::new();
    let mut all_ok = true;
    for seed in 0..RANDOM_SKELETONS as u64 {
        let r = coning_schedule(&random_skeleton(SKELETON_DOMAINS, seed));
        all_ok &= r.termination_round <= r.initial_clique_number;
        omegas.insert(r.initial_clique_number);
        worst = worst.max(r.termination_round as i64 - r.initial_clique_number as i64);
    }
    gate.record(
        11,
        "coning schedule",
        figure_ok && all_ok,
        format!(
            "figure rounds {:?} remnants [{}] {}; {RANDOM_SKELETONS} random skeletons with clique numbers {omegas:?}, max(rounds - clique number) = {worst}",
            got.iter().map(|g| g.0).collect::<Vec<_>>(),
            strs(&s.remnants),
            if figure_ok { "match" } else { "differ" }
        ),
    );
}

fn sort_edges(v: &[(usize, String, String)]) -> Vec<(usize, String, Vec<String>)> {
    v.iter()
        .map(|(w, r, e)| {
            let mut es: Vec<String> = e
                .split_whitespace()
                .map(|x| {
                    let mut ends: Vec<&str> = x.split('-').collect();
                    ends.sort();
                    ends.join("-")
                })
                .collect();
            es.sort();
            (*w, r.clone(), es)
        })
        .collect()
}

fn criterion_12(gate: &mut Gate) {
    let m = GroupModel::parse("(Z^2 * Z) x Z").unwrap();
    let sk = HHSSkeleton::product_example();
    let s = coning_schedule(&sk);
    let g = factored_ball(&m, FACTORED_RADIUS, &sk, &s, s.rounds.len(), &default_region_map(&m)).unwrap();
    let c = factored_vs_bass_serre(&m, &g, FACTORED_TOL).unwrap();
    gate.record(
        12,
        "factored space vs Bass-Serre tree",
        c.violations == 0 && c.pairs > 0,
        format!(
            "{} points, {} separated pairs, d_F - d_BS in [{}, {}], {} beyond {FACTORED_TOL}",
            c.points, c.pairs, c.min_gap, c.max_gap, c.violations
        ),
    );
}

fn criterion_13(gate: &mut Gate) {
    let m = GroupModel::parse("Z^2 * Z").unwrap();
    let beta = diagonal_crossing_ray(&m, 6, 12).unwrap();
    let gauge = Gauge::Affine { a: 1.0, b: 1.0, c: 0.0 };
    let r = incompatibility_witness(&m, &beta, &gauge, 1.0, 24, 0, 1_000_000).unwrap();
    let margin = r.witness.as_ref().map_or(f64::NEG_INFINITY, |w| w.margin);
    let alpha = GeodesicPath::from_word(&m, &m.parse_word("z^18").unwrap());
    let mp = mutual_projection_paths(&m, &alpha, &beta);
    gate.record(
        13,
        "incompatibility",
        margin >= 1.0 && mp.alpha_of_beta <= 2 && mp.beta_of_alpha <= 2,
        format!("witness margin {margin}, mutual projections ({}, {})", mp.alpha_of_beta, mp.beta_of_alpha),
    );
}

fn criterion_14(gate: &mut Gate) {
    let m = f2();
    let bp = |s: &str| BoundaryPoint::parse(&m, s).unwrap();
    let (a, b, ab, ba) = (bp("(a)"), bp("(b)"), bp("a.(b)"), bp("b.(a)"));
    let x0 = cross_ratio(&m, &[a.clone(), b.clone(), ab.clone(), ba.clone()], 0).unwrap();
    let x2 = cross_ratio(&m, &[a, ab, b, ba], 0).unwrap();
    let quads = random_quadruples(&m, QUADRUPLES, 1414);
    let id = qi_crossratio_check(&m, &BijectiveQI::identity(&m), &quads).unwrap();
    let sw = qi_crossratio_check(&m, &BijectiveQI::parity_swap(&m).unwrap(), &quads).unwrap();
    gate.record(
        14,
        "cross-ratio",
        x0 == 0 && x2 == 2 && (id.lambda, id.eps) == (1.0, 0.0) && sw.eps <= SWAP_EPS,
        format!(
            "values ({x0}, {x2}), identity ({}, {}), swap eps {} over {} quadruples (center shift {})",
            id.lambda, id.eps, sw.eps, sw.evaluated, sw.center_shift
        ),
    );
}

fn criterion_15(gate: &mut Gate) {
    let f2 = f2();
    let tree = OrbitMap::cayley_tree(f2.clone()).unwrap();
    let e = Point::Elem(Word::identity());
    let a3 = Point::Elem(f2.parse_word("a^3").unwrap());
    let p1 = fibre_separation_profile(&tree, &e, &a3, 1, 2, &TRUNCATIONS).unwrap();
    let f2z = GroupModel::parse("F2 x Z").unwrap();
    let prod = OrbitMap::cayley_tree(f2z).unwrap();
    let a = Point::Elem(f2.parse_word("a").unwrap());
    let p2 = fibre_separation_profile(&prod, &e, &a, 0, 1, &TRUNCATIONS).unwrap();
    gate.record(
        15,
        "fibre separation",
        p1.verdict == Verdict::Bounded && p2.verdict == Verdict::Growing,
        format!("F2 {:?} {:?}; F2 x Z {:?} {:?}", p1.verdict, p1.pairs, p2.verdict, p2.pairs),
    );
}

#[test]
fn acceptance() {
    let mut gate = Gate { lines: Vec::new() };
    criterion_1(&mut gate);
    criteria_2_3(&mut gate);
    criterion_4(&mut gate);
    criterion_5(&mut gate);
    criterion_6(&mut gate);
    criterion_7(&mut gate);
    criterion_8(&mut gate);
    let eps = criterion_9(&mut gate);
    criterion_10(&mut gate, eps);
    criterion_11(&mut gate);
    criterion_12(&mut gate);
    criterion_13(&mut gate);
    criterion_14(&mut gate);
    criterion_15(&mut gate);
    let failed: Vec<&String> = gate.lines.iter().filter(|l| !l.0).map(|l| &l.1).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
