//! Fast self-checks behind `hypwalk check`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde_json::json;

use hypwalk::boundary::{cross_ratio, qi_crossratio_check, random_quadruples, BoundaryPoint};
use hypwalk::chains::{simulate_many, verify_bounded_jumps, BijectiveQI, MarkovKernel};
use hypwalk::experiments::{drift_oracle, walk, RunHeader};
use hypwalk::groups::{GroupModel, Word};
use hypwalk::hhs::{coning_schedule, HHSSkeleton};
use hypwalk::projections::{axis_of, behrstock_check, enumerate_ht, linear_order, TREE_BEHRSTOCK_B};
use hypwalk::spaces::{fibre_separation_profile, OrbitMap, Point, Verdict};

use crate::commands::Run;
use crate::error::CliError;
use crate::output::Output;

const SEED: u64 = 7;
const DRIFT_STEPS: usize = 200;
const DRIFT_SAMPLES: u64 = 1000;
const DRIFT_TOL: f64 = 0.02;

type Outcome = Result<(bool, String), CliError>;

fn f2() -> Result<(GroupModel, OrbitMap), CliError> {
    let m = GroupModel::parse("F2")?;
    let rho = OrbitMap::cayley_tree(m.clone())?;
    Ok((m, rho))
}

fn balls() -> Outcome {
    let sizes = [("F2", 2, 17), ("F2", 3, 53), ("Z^2", 2, 13), ("Z^2 * Z", 1, 7)];
    let mut got = Vec::new();
    for (d, r, _) in sizes {
        got.push(GroupModel::parse(d)?.ball(&Word::identity(), r)?.len());
    }
    let ok = sizes.iter().zip(&got).all(|(s, g)| s.2 == *g);
    Ok((ok, format!("sizes {got:?}")))
}

fn ht_sum() -> Outcome {
    let (m, rho) = f2()?;
    let rec = enumerate_ht(&rho, &m.parse_word("a")?, &Word::identity(), &m.parse_word("b a^5 b")?, 4, 7)?;
    let sum: usize = rec.entries.iter().map(|e| e.value).sum();
    Ok((rec.entries.len() == 1 && sum == 5 && rec.certified, format!("{} coset(s), sum {sum}", rec.entries.len())))
}

fn order() -> Outcome {
    let (m, rho) = f2()?;
    let p = m.parse_word("b a^5 b a^-6 b^2 a^7")?;
    let rec = enumerate_ht(&rho, &m.parse_word("a")?, &Word::identity(), &p, 4, p.len())?;
    let rep = linear_order(&rho, &rec, TREE_BEHRSTOCK_B)?;
    Ok((
        rec.entries.len() == 3 && rep.disagreements.is_empty(),
        format!("{} cosets, {} disagreements", rec.entries.len(), rep.disagreements.len()),
    ))
}

fn behrstock() -> Outcome {
    let (m, rho) = f2()?;
    let base = axis_of(&rho, &m.parse_word("a")?)?;
    let pool: BTreeSet<_> = m
        .ball(&Word::identity(), 2)?
        .iter()
        .map(|h| base.translate(&m, h))
        .collect::<Result<_, _>>()?;
    let pool: Vec<_> = pool.into_iter().collect();
    let pts = m.ball(&Word::identity(), 3)?;
    let r = behrstock_check(&rho, &pool, &pts, TREE_BEHRSTOCK_B)?;
    Ok((
        r.violations == 0 && r.strong_violations == 0,
        format!("{} checks, {} triggered, {} violations", r.checked, r.triggered, r.violations),
    ))
}

fn determinism() -> Outcome {
    let (m, _) = f2()?;
    let k = MarkovKernel::srw(&m)?;
    let a = simulate_many(&k, &Word::identity(), 50, SEED, 8)?;
    let b = simulate_many(&k, &Word::identity(), 50, SEED, 8)?;
    let jumps = a.iter().all(|t| verify_bounded_jumps(&k, t));
    Ok((a == b && jumps, format!("8 trajectories, identical {}, bounded jumps {jumps}", a == b)))
}

fn drift() -> Outcome {
    let (m, _) = f2()?;
    let k = MarkovKernel::srw(&m)?;
    let mut total = 0usize;
    for i in 0..DRIFT_SAMPLES {
        walk(&k, &Word::identity(), DRIFT_STEPS, SEED, i, |step, w| {
            if step == DRIFT_STEPS {
                total += w.len();
            }
        });
    }
    let est = total as f64 / (DRIFT_SAMPLES as f64 * DRIFT_STEPS as f64);
    let oracle = drift_oracle(2, DRIFT_STEPS);
    Ok(((est - oracle).abs() <= DRIFT_TOL, format!("estimate {est:.4}, exact {oracle:.4}")))
}

fn schedule() -> Outcome {
    let s = coning_schedule(&HHSSkeleton::figure_example());
    let omegas: Vec<usize> = s.rounds.iter().map(|r| r.clique_number).collect();
    Ok((omegas == [4, 3, 2], format!("clique numbers {omegas:?}")))
}

fn crossratios() -> Outcome {
    let (m, _) = f2()?;
    let bp = |s: &str| BoundaryPoint::parse(&m, s);
    let (a, b, ab, ba) = (bp("(a)")?, bp("(b)")?, bp("a.(b)")?, bp("b.(a)")?);
    let x0 = cross_ratio(&m, &[a.clone(), b.clone(), ab.clone(), ba.clone()], 0)?;
    let x2 = cross_ratio(&m, &[a, ab, b, ba], 0)?;
    let fit = qi_crossratio_check(&m, &BijectiveQI::identity(&m), &random_quadruples(&m, 200, SEED))?;
    Ok((x0 == 0 && x2 == 2 && fit.eps == 0.0, format!("values ({x0}, {x2}), identity eps {}", fit.eps)))
}

fn separation() -> Outcome {
    let (m, rho) = f2()?;
    let p = fibre_separation_profile(
        &rho,
        &Point::Elem(Word::identity()),
        &Point::Elem(m.parse_word("a^3")?),
        1,
        2,
        &[4, 6],
    )?;
    Ok((p.verdict == Verdict::Bounded, format!("{:?} {:?}", p.verdict, p.pairs)))
}

pub fn run(header: RunHeader) -> Result<Run, CliError> {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("balls", balls),
        ("ht-sum", ht_sum),
        ("linear-order", order),
        ("behrstock", behrstock),
        ("determinism", determinism),
        ("drift", drift),
        ("coning-schedule", schedule),
        ("cross-ratio", crossratios),
        ("fibre-separation", separation),
    ];
    let mut text = String::new();
    let mut rows = Vec::new();
    let mut failed = 0;
    for (name, f) in checks {
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!ok);
        let _ = writeln!(text, "[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        rows.push(json!({ "check": name, "pass": ok, "detail": detail }));
    }
    let jsonl = rows.iter().map(|r| format!("{r}\n")).collect();
    let output = Output {
        name: "check".into(),
        header,
        text,
        csv: None,
        json: json!({ "checks": rows, "failed": failed }),
        jsonl: Some(jsonl),
    };
    Ok(Run { outputs: vec![output], failure: (failed > 0).then_some(CliError::Suite(failed)) })
}
