use std::fmt::Write as _;
use std::fs;

use serde::Serialize;
use serde_json::{json, Value};

use hypwalk::boundary::{cross_ratio, qi_crossratio_check, random_quadruples, BoundaryPoint};
use hypwalk::chains::{simulate_many, BijectiveQI, MarkovKernel};
use hypwalk::experiments::{
    bounded_projection_experiment, linear_progress_experiment, recursion_check, sample_cells, tail_experiment,
    ExperimentConfig, RunHeader,
};
use hypwalk::groups::{GeodesicPath, GroupModel, Word};
use hypwalk::hhs::{
    coning_schedule, default_region_map, factored_ball, fiber_parallelism_check, regions_through, HHSSkeleton,
};
use hypwalk::morse::{detectability_check, incompatibility_witness, integer_grid, morse_certificate, Gauge};
use hypwalk::projections::{
    axis_of, default_pivot_directions, enumerate_ht, linear_order, nearest_on_axis, pivot, HTRecord, TREE_BEHRSTOCK_B,
};
use hypwalk::spaces::{cone_off, fibre_separation_profile, ConeTarget, OrbitMap, Point, Subgroup};

use crate::error::CliError;
use crate::output::{header, Output};
use crate::{suite, Command, ExperimentArgs, SpaceKind};

type Result<T> = std::result::Result<T, CliError>;

/// Artifacts to emit, and the failure to report after emitting them.
pub struct Run {
    pub outputs: Vec<Output>,
    pub failure: Option<CliError>,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run { outputs: vec![o], failure: None }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn model(descriptor: &str) -> Result<GroupModel> {
    Ok(GroupModel::parse(descriptor)?)
}

fn orbit(m: &GroupModel, space: SpaceKind) -> Result<OrbitMap> {
    Ok(match space {
        SpaceKind::Tree => OrbitMap::cayley_tree(m.clone())?,
        SpaceKind::BassSerre => OrbitMap::bass_serre(m.clone())?,
    })
}

fn usize_list(key: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(format!("bad {key} entry {s:?}"))))
        .collect()
}

fn fmt_words(m: &GroupModel, ws: &[Word]) -> Vec<String> {
    ws.iter().map(|w| m.format_word(w)).collect()
}

fn format_point(m: &GroupModel, p: &Point) -> String {
    match p {
        Point::Elem(w) => m.format_word(w),
        Point::Coset { rep, factor } => format!("{} A{factor}", m.format_word(rep)),
        Point::Vertex(v) => format!("v{v}"),
    }
}

fn json_of<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

/// Header for a deterministic subcommand, hashed over its arguments.
fn det_header(cmd: &Command, windows: impl Into<String>) -> RunHeader {
    header(&format!("{cmd:?}"), None, windows.into())
}

fn out(name: &str, header: RunHeader, text: String, json: Value) -> Output {
    Output { name: name.into(), header, text, csv: None, json, jsonl: None }
}

/// `factor:I`, `cyclic:WORD`, `central` or `factor-central:I`.
fn parse_sub(m: &GroupModel, spec: &str) -> Result<Subgroup> {
    let index = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad factor index {s:?}")));
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind.trim() {
        "factor" => Subgroup::Factor(index(arg)?),
        "factor-central" => Subgroup::FactorCentral(index(arg)?),
        "central" => Subgroup::Central,
        "cyclic" => Subgroup::Cyclic(m.parse_word(arg)?),
        other => return Err(bad(format!("unknown subgroup kind {other:?}"))),
    })
}

fn load_skeleton(name: &str) -> Result<HHSSkeleton> {
    Ok(match name {
        "figure" => HHSSkeleton::figure_example(),
        "product" => HHSSkeleton::product_example(),
        "product-refined" => HHSSkeleton::product_example_refined(),
        "f2xz" => HHSSkeleton::f2_times_z_example(),
        path => HHSSkeleton::parse(&fs::read_to_string(path)?)?,
    })
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    cfg.seed()?;
    Ok(cfg)
}

fn exp_header(cfg: &ExperimentConfig, windows: String) -> RunHeader {
    header(&cfg.canonical(), cfg.seed, windows)
}

pub fn dispatch(cmd: &Command) -> Result<Run> {
    match cmd {
        Command::Ball { model: d, radius } => {
            let m = model(d)?;
            let ball = fmt_words(&m, &m.ball(&Word::identity(), *radius)?);
            let h = det_header(cmd, format!("radius={radius}"));
            let mut text = String::new();
            for w in &ball {
                let _ = writeln!(text, "{w}");
            }
            let csv = format!("{}element\n{text}", h.lines());
            let json = json!({ "model": m.descriptor(), "radius": radius, "size": ball.len(), "elements": ball });
            Ok(Output { csv: Some(csv), ..out("ball", h, text, json) }.into())
        }
        Command::Project { model: d, space, g, h: rep, x } => {
            let m = model(d)?;
            let rho = orbit(&m, *space)?;
            let axis = axis_of(&rho, &m.parse_word(g)?)?.translate(&m, &m.parse_word(rep)?)?;
            let x = m.parse_word(x)?;
            let near = nearest_on_axis(&rho, &axis, &x)?;
            let pts: Vec<String> = near.exps.iter().map(|&n| m.format_word(&axis.point(&m, n))).collect();
            let hd = det_header(cmd, format!("projection={}", near.window));
            let text = format!("axis {}\nnearest {}\ndistance {}\n", axis.describe(&m), pts.join(", "), near.distance);
            let json = json!({
                "axis": axis.describe(&m),
                "exponents": near.exps,
                "points": pts,
                "distance": near.distance,
                "window": near.window,
            });
            Ok(out("project", hd, text, json).into())
        }
        Command::Htsum { model: d, space, g, o, p, t, window } => {
            let m = model(d)?;
            let rho = orbit(&m, *space)?;
            let (o, p) = (m.parse_word(o)?, m.parse_word(p)?);
            let w = window.unwrap_or(m.dist(&o, &p));
            let rec = enumerate_ht(&rho, &m.parse_word(g)?, &o, &p, *t, w)?;
            let hd = det_header(cmd, format!("ball={w}"));
            let run = ht_output(&m, &rec, hd);
            let failure = (!rec.certified).then(|| {
                CliError::Certification(format!("record is partial; route {} over {} candidates", rec.route, rec.candidates))
            });
            Ok(Run { outputs: vec![run], failure })
        }
        Command::Order { model: d, g, o, p, t } => {
            let m = model(d)?;
            let rho = OrbitMap::cayley_tree(m.clone())?;
            let (o, p) = (m.parse_word(o)?, m.parse_word(p)?);
            let rec = enumerate_ht(&rho, &m.parse_word(g)?, &o, &p, *t, m.dist(&o, &p))?;
            let rep = linear_order(&rho, &rec, TREE_BEHRSTOCK_B)?;
            let hd = det_header(cmd, format!("B={TREE_BEHRSTOCK_B}"));
            let mut text = String::new();
            for (i, &k) in rep.order.iter().enumerate() {
                let _ = writeln!(text, "{i} {}", rec.entries[k].axis.describe(&m));
            }
            let _ = writeln!(
                text,
                "pairs {} disagreements {} endpoint exceptions {}/{}",
                rep.pairs_checked,
                rep.disagreements.len(),
                rep.endpoint_exceptions,
                rep.endpoint_pairs
            );
            let axes: Vec<String> = rep.order.iter().map(|&k| rec.entries[k].axis.describe(&m)).collect();
            let json = json!({ "order": axes, "report": json_of(&rep), "certified": rec.certified });
            let failure = (!rep.disagreements.is_empty())
                .then(|| CliError::Certification(format!("{} order disagreements", rep.disagreements.len())));
            Ok(Run { outputs: vec![out("order", hd, text, json)], failure })
        }
        Command::Pivot { model: d, alpha, q, g, h, s, e } => {
            let m = model(d)?;
            let rho = OrbitMap::cayley_tree(m.clone())?;
            let alpha = GeodesicPath::from_word(&m, &m.parse_word(alpha)?);
            let axis = axis_of(&rho, &m.parse_word(g)?)?.translate(&m, &m.parse_word(h)?)?;
            let r = pivot(&rho, &alpha, &m.parse_word(q)?, &axis, *s, *e, &default_pivot_directions(&m))?;
            let hd = det_header(cmd, format!("s={s}"));
            let text = format!(
                "q' {}\nalong axis {}\nalong path {}\nevaluated {}\n",
                m.format_word(&r.q_prime),
                r.along_axis,
                r.along_path,
                r.evaluated
            );
            let json = json!({
                "q_prime": m.format_word(&r.q_prime),
                "along_axis": r.along_axis,
                "along_path": r.along_path,
                "pass": r.pass,
                "evaluated": r.evaluated,
            });
            Ok(out("pivot", hd, text, json).into())
        }
        Command::Simulate { model: d, kernel, hold, start, n, count, seed } => {
            let seed = seed.ok_or_else(|| bad("seed is mandatory"))?;
            let m = model(d)?;
            let k = MarkovKernel::by_name(&m, kernel, *hold)?;
            let trajs = simulate_many(&k, &m.parse_word(start)?, *n, seed, *count)?;
            let hd = header(&format!("{cmd:?}"), Some(seed), "-".into());
            let mut lines = String::new();
            for t in &trajs {
                lines.push_str(&t.to_json_line(&m));
                lines.push('\n');
            }
            let mut text = String::new();
            for t in &trajs {
                let _ = writeln!(text, "{} {}", t.stream, fmt_words(&m, &t.states).join(" "));
            }
            let json: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).expect("own output")).collect();
            Ok(Output { jsonl: Some(lines), ..out("simulate", hd, text, Value::Array(json)) }.into())
        }
        Command::Progress(args) => {
            let cfg = experiment_config(args)?;
            let table = linear_progress_experiment(&cfg)?;
            let hd = exp_header(&cfg, "-".into());
            let csv = table.to_csv(&hd);
            let drift = table.drift_csv(&hd);
            let text = format!("{}\n{}", strip_header(&csv), strip_header(&drift));
            let mut o = out("progress", hd, text, json_of(&table));
            o.csv = Some(csv);
            Ok(o.into())
        }
        Command::BoundedProj(args) => {
            let cfg = experiment_config(args)?;
            let m = model(&cfg.model)?;
            let cells = sample_cells(&m, cfg.cells, cfg.seed()?);
            let rep = bounded_projection_experiment(&cfg, &cells, &cfg.n)?;
            let hd = exp_header(&cfg, format!("cells={}", cfg.cells));
            let csv = rep.to_csv(&hd);
            let text = format!(
                "{}min {} at cell {}; eps_hat {}\n",
                strip_header(&csv),
                rep.min,
                rep.argmin,
                rep.eps_hat
            );
            let mut o = out("bounded-proj", hd, text, json_of(&rep));
            o.csv = Some(csv);
            Ok(o.into())
        }
        Command::Tail(args) => {
            let cfg = experiment_config(args)?;
            let curve = tail_experiment(&cfg)?;
            let hd = exp_header(&cfg, format!("ball={} tmax={}", cfg.window, cfg.tmax));
            let csv = curve.to_csv(&hd);
            let mut text = strip_header(&csv).to_string();
            let _ = writeln!(
                text,
                "C' {:?} (smallest working {:?}); envelope holds {}",
                curve.c_prime, curve.c_prime_min, curve.envelope_holds
            );
            let mut outputs = Vec::new();
            let mut tail = out("tail", hd.clone(), text, json_of(&curve));
            tail.csv = Some(csv);
            outputs.push(tail);
            if let Some(eps) = cfg.eps {
                let rec = recursion_check(&curve, cfg.d, eps)?;
                let csv = rec.to_csv(&hd);
                let text = format!(
                    "{}passed {}/{}; majority {}\n",
                    strip_header(&csv),
                    rec.passed,
                    rec.rows.len(),
                    rec.majority
                );
                let mut r = out("recursion", hd, text, json_of(&rec));
                r.csv = Some(csv);
                outputs.push(r);
            }
            Ok(Run { outputs, failure: None })
        }
        Command::Morse { model: d, segment, window, k, c, space } => {
            let m = model(d)?;
            let seg = GeodesicPath::from_word(&m, &m.parse_word(segment)?);
            let cert = morse_certificate(&m, &seg, &integer_grid(*k, *c), *window)?;
            let hd = det_header(cmd, format!("neighbourhood={window}"));
            let csv = format!("{}{}", hd.lines(), cert.to_csv());
            let mut text = cert.to_csv();
            let mut json = json!({ "segment": fmt_words(&m, &cert.segment), "window": cert.window,
                "cells": cert.cells.iter().map(|c| json!({
                    "lambda": c.lambda, "eps": c.eps, "max_detour": c.max_detour, "status": c.status.as_str(),
                    "witness": c.witness.as_ref().map(|w| fmt_words(&m, w)),
                })).collect::<Vec<_>>() });
            if let Some(sp) = space {
                let det = detectability_check(&orbit(&m, *sp)?, &seg)?;
                let _ = writeln!(
                    text,
                    "detectability {:?}: lambda {} image diameter {}",
                    det.verdict, det.lambda_best, det.image_diameter
                );
                json["detectability"] = json_of(&det);
            }
            Ok(Output { csv: Some(csv), ..out("morse", hd, text, json) }.into())
        }
        Command::Incompat { model: d, beta, gauge, kappa, l, window, budget } => {
            let m = model(d)?;
            let g: Vec<f64> = gauge
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad(format!("bad gauge entry {s:?}"))))
                .collect::<Result<_>>()?;
            let [a, b, c] = g[..] else {
                return Err(bad("gauge expects a,b,c"));
            };
            let beta = GeodesicPath::from_word(&m, &m.parse_word(beta)?);
            let r = incompatibility_witness(&m, &beta, &Gauge::Affine { a, b, c }, *kappa, *l, *window, *budget)?;
            let hd = det_header(cmd, format!("detour={window} budget={budget}"));
            let (text, wj) = match &r.witness {
                Some(w) => (
                    format!(
                        "margin {}\nk {} c {}\np {} at distance {}\npath {}\n",
                        w.margin,
                        w.k,
                        w.c,
                        m.format_word(&w.p),
                        w.distance,
                        fmt_words(&m, &w.mu).join(" ")
                    ),
                    json!({ "margin": w.margin, "k": w.k, "c": w.c, "p": m.format_word(&w.p),
                        "distance": w.distance, "path": fmt_words(&m, &w.mu), "corner": w.corner }),
                ),
                None => ("no witness\n".to_string(), Value::Null),
            };
            let json = json!({ "witness": wj, "evaluated": r.evaluated, "exhausted_budget": r.exhausted_budget });
            let failure = r.exhausted_budget.then(|| CliError::Certification("search budget exhausted".into()));
            Ok(Run { outputs: vec![out("incompat", hd, text, json)], failure })
        }
        Command::Cone { model: d, radius, subs, cosets, skeleton } => {
            if let Some(name) = skeleton {
                let sk = load_skeleton(name)?;
                let s = coning_schedule(&sk);
                let hd = det_header(cmd, "-");
                let mut text = String::new();
                for (i, r) in s.rounds.iter().enumerate() {
                    let _ = writeln!(text, "round {} omega {} removed {}", i + 1, r.clique_number, r.removed.join(" "));
                }
                let _ = writeln!(text, "remnants {}", s.remnants.join(" "));
                return Ok(out("cone", hd, text, json_of(&s)).into());
            }
            let (Some(d), Some(radius)) = (d, radius) else {
                return Err(bad("cone needs --skeleton, or --model and --radius"));
            };
            let m = model(d)?;
            let mut targets = Vec::new();
            for s in subs {
                targets.push(ConeTarget::AllCosets(parse_sub(&m, s)?));
            }
            for c in cosets {
                let (rep, spec) = c.split_once('=').ok_or_else(|| bad(format!("--coset expects REP=SPEC, got {c:?}")))?;
                targets.push(ConeTarget::Coset { rep: m.parse_word(rep)?, sub: parse_sub(&m, spec)? });
            }
            let g = cone_off(&m, *radius, &targets)?;
            let hd = det_header(cmd, format!("radius={radius}"));
            let adj = g.to_adjacency_text();
            let mut text = format!("# {}\n", g.meta.coning);
            for w in &g.meta.warnings {
                let _ = writeln!(text, "# warning: {w}");
            }
            text.push_str(&adj);
            let json = json!({
                "vertices": fmt_words(&m, g.labels()),
                "cliques": g.cliques(),
                "meta": json_of(&g.meta),
                "adjacency": adj,
            });
            Ok(out("cone", hd, text, json).into())
        }
        Command::Fibers { model: d, skeleton, radius, round, fiber, x, y, c, sweep } => {
            let m = model(d)?;
            let sk = load_skeleton(skeleton)?;
            let s = coning_schedule(&sk);
            let map = default_region_map(&m);
            let round = round.unwrap_or(s.rounds.len());
            let g = factored_ball(&m, *radius, &sk, &s, round, &map)?;
            let sub = match fiber {
                Some(f) => Some(parse_sub(&m, f)?),
                None => regions_through(&sk, &s, round, &map).into_iter().next(),
            };
            let sweep = usize_list("sweep", sweep)?;
            let r = fiber_parallelism_check(&m, &g, sub.as_ref(), &m.parse_word(x)?, &m.parse_word(y)?, *c, &sweep)?;
            let hd = det_header(cmd, format!("radius={radius} sweep={}", sweep.len()));
            let text = format!(
                "{}\nfactored distance {}\nhausdorff {:?} over {:?}\nverdict {:?}\n",
                g.meta.coning, r.factored_distance, r.hausdorff, r.sweep, r.verdict
            );
            Ok(out("fibers", hd, text, json_of(&r)).into())
        }
        Command::Separation { model: d, space, x, y, r, s, truncations } => {
            let m = model(d)?;
            let rho = orbit(&m, *space)?;
            let px = rho.apply(&m.parse_word(x)?)?;
            let py = rho.apply(&m.parse_word(y)?)?;
            let prof = fibre_separation_profile(&rho, &px, &py, *r, *s, &usize_list("truncations", truncations)?)?;
            let hd = det_header(cmd, format!("truncations={truncations}"));
            let mut text = format!("x {} y {}\n", format_point(&m, &px), format_point(&m, &py));
            for (big_r, diam) in &prof.pairs {
                let _ = writeln!(text, "R {big_r} diameter {diam}");
            }
            let _ = writeln!(text, "verdict {:?}", prof.verdict);
            let csv = prof.pairs.iter().fold(format!("{}R,diameter\n", hd.lines()), |mut acc, (a, b)| {
                let _ = writeln!(acc, "{a},{b}");
                acc
            });
            Ok(Output { csv: Some(csv), ..out("separation", hd, text, json_of(&prof)) }.into())
        }
        Command::Crossratio { model: d, points, k, qi, samples, seed } => {
            let m = model(d)?;
            if let Some(spec) = qi {
                let seed = seed.ok_or_else(|| bad("seed is mandatory with --qi"))?;
                let f = match spec.as_str() {
                    "identity" => BijectiveQI::identity(&m),
                    "parity-swap" => BijectiveQI::parity_swap(&m)?,
                    "branch-swap" => BijectiveQI::branch_swap(&m)?,
                    other => match other.strip_prefix("translate:") {
                        Some(w) => BijectiveQI::translation(&m, &m.parse_word(w)?)?,
                        None => return Err(bad(format!("unknown map {other:?}"))),
                    },
                };
                let quads = random_quadruples(&m, *samples, seed);
                let fit = qi_crossratio_check(&m, &f, &quads)?;
                let hd = header(&format!("{cmd:?}"), Some(seed), format!("samples={samples}"));
                let text = format!(
                    "lambda' {} eps' {}\nevaluated {} skipped {}\ncenter shift {}\n",
                    fit.lambda, fit.eps, fit.evaluated, fit.skipped, fit.center_shift
                );
                return Ok(out("crossratio", hd, text, json_of(&fit)).into());
            }
            if points.len() != 4 {
                return Err(bad("crossratio needs four --point values or --qi"));
            }
            let q: Vec<BoundaryPoint> = points.iter().map(|p| BoundaryPoint::parse(&m, p)).collect::<std::result::Result<_, _>>()?;
            let q: [BoundaryPoint; 4] = q.try_into().expect("four points");
            let v = cross_ratio(&m, &q, *k)?;
            let hd = det_header(cmd, format!("K={k}"));
            let names: Vec<String> = q.iter().map(|p| p.format(&m)).collect();
            let text = format!("[{}] = {v}\n", names.join(", "));
            Ok(out("crossratio", hd, text, json!({ "points": names, "k": k, "value": v })).into())
        }
        Command::Check => suite::run(det_header(cmd, "-")),
    }
}

fn strip_header(csv: &str) -> &str {
    let mut s = csv;
    while s.starts_with('#') {
        s = s.split_once('\n').map_or("", |(_, rest)| rest);
    }
    s
}

fn ht_output(m: &GroupModel, rec: &HTRecord, hd: RunHeader) -> Output {
    let sum: usize = rec.entries.iter().map(|e| e.value).sum();
    let mut text = String::new();
    for e in &rec.entries {
        let _ = writeln!(text, "{} value {}", e.axis.describe(m), e.value);
    }
    let _ = writeln!(text, "cosets {} sum {sum} certified {}", rec.entries.len(), rec.certified);
    let csv = rec.entries.iter().enumerate().fold(
        format!("{}orderIndex,cosetRep,root,value\n", hd.lines()),
        |mut acc, (i, e)| {
            let _ = writeln!(acc, "{i},{},{},{}", m.format_word(&e.axis.rep), m.format_word(&e.axis.root), e.value);
            acc
        },
    );
    let lines = rec.to_json_lines(m);
    let entries: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).expect("own output")).collect();
    let json = json!({
        "cosets": rec.entries.len(),
        "sum": sum,
        "certified": rec.certified,
        "route": rec.route,
        "candidates": rec.candidates,
        "entries": entries,
    });
    Output { csv: Some(csv), jsonl: Some(lines), ..out("htsum", hd, text, json) }
}
