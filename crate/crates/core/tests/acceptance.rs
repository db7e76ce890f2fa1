//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero when any of them fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use hfl_core::balance::{kld, shannon_entropy, Distribution, ReferenceKind};
use hfl_core::eara::{dba_assign, eara_assign, Assignment, EaraConfig};
use hfl_core::experiment::{
    compare_strategies, distance_sweep, parse_participation, participation_sweep, skewed_training_config, Comparison,
    Strategy, TaskKind, TaskSpec,
};
use hfl_core::fixtures::{clustered_scenario, default_radio, random_scenario, table2_scenario, table3_scenario};
use hfl_core::flsim::*;
use hfl_core::lp::{build_p2_from_parts, solve_lp, LpStatus};
use hfl_core::radio::{rate, required_power, transmit_energy};
use hfl_core::scenario::{ClassHistogram, LabeledDataset, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Seeds of the training ensemble behind criteria 5, 6, 7 and 9.
const SEEDS: u64 = 12;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12)
}

fn fedsgd_equivalence() -> Verdict {
    let h = |c: &[u64]| ClassHistogram::from_counts(c.to_vec());
    let s = clustered_scenario(
        3,
        &[
            vec![h(&[30, 0, 5]), h(&[0, 25, 0]), h(&[10, 10, 10])],
            vec![h(&[0, 0, 40]), h(&[20, 5, 0]), h(&[3, 30, 7])],
        ],
    );
    let task = TaskSpec {
        kind: TaskKind::Blobs { separation: 2.0 },
        dim: 8,
        test_per_class: 100,
        seed: 5,
    }
    .build(&s)
    .map_err(|e| e.to_string())?;
    let a = eara_assign(&s, &EaraConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 0.5,
        local_work: LocalWork::Steps(1),
        edge_rounds: 1,
        batch_size: None,
        optimizer: Optimizer::Sgd,
        max_central_rounds: 50,
        record_weights: true,
        ..TrainConfig::default()
    };
    let fed = hierarchical_train(&s, &a, &task.shards, &task.test, &cfg).map_err(|e| e.to_string())?;
    let cen = centralized_train(&task.pool, &task.test, 3, 2, &cfg).map_err(|e| e.to_string())?;
    let worst = fed
        .weights
        .iter()
        .zip(&cen.weights)
        .map(|(f, c)| rel_inf(f, c))
        .fold(0.0f64, f64::max);
    check(
        fed.weights.len() == 50 && cen.weights.len() == 50 && a.dual_users().is_empty() && worst < 1e-6,
        format!("50 rounds, worst relative deviation {worst:.2e}"),
    )
}

fn lp_oracles() -> Verdict {
    let mut lp_worst = 0.0f64;
    for seed in 0..200 {
        let p = common::random_boxed_lp(seed);
        let s = solve_lp(&p).map_err(|e| e.to_string())?;
        match common::vertex_enumeration(&p) {
            Some(best) if s.status == LpStatus::Optimal => {
                lp_worst = lp_worst.max((s.objective_value - best).abs() / (1.0 + best.abs()));
            }
            None if s.status == LpStatus::Infeasible => {}
            other => return Err(format!("random LP {seed}: status {:?} vs oracle {other:?}", s.status)),
        }
    }
    let mut p2_worst = 0.0f64;
    for (idx, case) in common::load_p2_cases().iter().enumerate() {
        let p2 = build_p2_from_parts(&case.inputs()).map_err(|e| e.to_string())?;
        let s = solve_lp(&p2.program).map_err(|e| e.to_string())?;
        match (case.status.as_str(), s.status) {
            ("optimal", LpStatus::Optimal) => {
                let want = case.objective.unwrap_or(f64::NAN);
                p2_worst = p2_worst.max((s.objective_value - want).abs() / (1.0 + want.abs()));
                if let Some(int) = case.integer_optimum() {
                    if s.objective_value > int + 1e-7 {
                        return Err(format!("P2 case {idx}: relaxation {} above integer {int}", s.objective_value));
                    }
                }
            }
            ("infeasible", LpStatus::Infeasible) => {}
            (want, got) => return Err(format!("P2 case {idx}: {got:?}, oracle says {want}")),
        }
    }
    check(
        lp_worst <= 1e-7 && p2_worst <= 1e-7,
        format!("200 random LPs (worst {lp_worst:.1e}), 50 P2 instances (worst {p2_worst:.1e})"),
    )
}

fn total(a: &Assignment, s: &Scenario) -> f64 {
    a.kld_report(s, ReferenceKind::Uniform).map_or(f64::NAN, |r| r.total)
}

fn rounding_near_optimality() -> Verdict {
    let results: Vec<(bool, f64)> = (0..600u64)
        .into_par_iter()
        .map(|seed| {
            let m = 3 + (seed % 6) as usize;
            let n = 2 + (seed / 6 % 2) as usize;
            let k = 2 + (seed / 12 % 2) as usize;
            let s = random_scenario(seed, m, n, k, true);
            let opt = common::integer_optimum_kld(&s);
            let got = eara_assign(&s, &EaraConfig::default()).map_or(f64::INFINITY, |a| total(&a, &s));
            let dba = dba_assign(&s).map_or(f64::NAN, |a| total(&a, &s));
            (got <= opt + (0.1 * opt).max(0.05) && got <= dba + 1e-12, got - opt)
        })
        .collect();
    let failures = results.iter().filter(|r| !r.0).count();
    let worst_gap = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    check(
        failures == 0,
        format!("{failures}/600 instances outside tolerance or worse than DBA, worst gap {worst_gap:.4} nats"),
    )
}

fn distance_shape() -> Verdict {
    let base = table3_scenario(1);
    let scales = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let points = distance_sweep(&base, &scales, &Strategy::ALL, &EaraConfig::default(), 4).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = true;
    for p in &points {
        let k = |s: Strategy| p.kld.iter().find(|x| x.0 == s).map_or(f64::NAN, |x| x.1);
        let (dca, sca, dba) = (k(Strategy::EaraDca), k(Strategy::EaraSca), k(Strategy::Dba));
        ok &= dca <= sca + 1e-12 && sca <= dba + 1e-12;
        detail.push(format!("{}:{dca:.3}/{sca:.3}/{dba:.3}", p.scale));
    }
    let last = points.last().ok_or("empty sweep")?;
    let lam = |s: Strategy| &last.assignments.iter().find(|x| x.0 == s).expect("strategy ran").1.lambda;
    let meet = lam(Strategy::EaraSca) == lam(Strategy::Dba) && lam(Strategy::EaraDca) == lam(Strategy::Dba);
    check(
        ok && meet,
        format!("scale:dca/sca/dba {}; identical at largest scale: {meet}", detail.join(" ")),
    )
}

struct Ensemble {
    runs: Vec<(u64, Comparison)>,
}

impl Ensemble {
    fn skewed() -> hfl_core::Result<Ensemble> {
        let s = table3_scenario(50);
        let runs = (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let task = TaskSpec::default().with_seed(seed).build(&s)?;
                let cfg = TrainConfig {
                    seed,
                    traffic_param_count: Some(14_789),
                    ..skewed_training_config()
                };
                Ok((seed, compare_strategies(&s, &task, &[Strategy::EaraSca, Strategy::Dba], &EaraConfig::default(), &cfg)?))
            })
            .collect::<hfl_core::Result<Vec<_>>>()?;
        Ok(Ensemble { runs })
    }

    /// Rounds to target; a run that never gets there counts as one round
    /// past the horizon.
    fn rounds(c: &Comparison, s: Strategy) -> usize {
        let horizon = c.trace(s).map_or(0, |t| t.records.len());
        c.rounds_to_target(s).unwrap_or(horizon + 1)
    }
}

fn round_reduction(e: &Ensemble) -> Verdict {
    let mut sca = 0;
    let mut dba = 0;
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for (seed, c) in &e.runs {
        let (a, b) = (Ensemble::rounds(c, Strategy::EaraSca), Ensemble::rounds(c, Strategy::Dba));
        sca += a;
        dba += b;
        wins += usize::from(a as f64 <= 0.7 * b as f64);
        per_seed.push(format!("{seed}:{a}/{b}"));
    }
    let ratio = sca as f64 / dba as f64;
    check(
        ratio <= 0.7,
        format!(
            "rounds to 95% of centralized plateau, EARA-SCA {sca} vs DBA {dba} over {SEEDS} seeds (ratio {ratio:.2}, reduction {:.0}%); per seed sca/dba {}; {wins}/{SEEDS} seeds individually ≤ 0.7",
            100.0 * (1.0 - ratio),
            per_seed.join(" ")
        ),
    )
}

fn accuracy_direction(e: &Ensemble) -> Verdict {
    let n = e.runs.len() as f64;
    let fin = |c: &Comparison, s: Strategy| c.trace(s).and_then(TrainTrace::final_accuracy).unwrap_or(f64::NAN);
    let sca = e.runs.iter().map(|(_, c)| fin(c, Strategy::EaraSca)).sum::<f64>() / n;
    let dba = e.runs.iter().map(|(_, c)| fin(c, Strategy::Dba)).sum::<f64>() / n;
    let wins = e
        .runs
        .iter()
        .filter(|(_, c)| fin(c, Strategy::EaraSca) >= fin(c, Strategy::Dba))
        .count();
    check(
        sca >= dba,
        format!(
            "mean final accuracy EARA-SCA {sca:.4} vs DBA {dba:.4} (+{:.1} points); SCA ≥ DBA on {wins}/{SEEDS} seeds",
            100.0 * (sca - dba)
        ),
    )
}

fn traffic(e: &Ensemble) -> Verdict {
    let per_link = traffic_per_round(14_789, 1, DEFAULT_MULTICAST_FACTOR);
    let mut recorded_ok = true;
    let mut sca = 0.0;
    let mut dba = 0.0;
    for (_, c) in &e.runs {
        for s in [Strategy::EaraSca, Strategy::Dba] {
            let recs = &c.trace(s).expect("strategy ran").records;
            recorded_ok &= recs[0].bytes_up_per_user == 59_156.0 && recs[0].bytes_down_per_user == 59_156.0;
            let r = Ensemble::rounds(c, s);
            let bytes = recs.get(r - 1).map_or(recs[recs.len() - 1].bytes_up_per_user + 59_156.0, |x| x.bytes_up_per_user);
            if s == Strategy::Dba {
                dba += bytes;
            } else {
                sca += bytes;
            }
        }
    }
    check(
        per_link == 59_156.0 && recorded_ok && sca < dba,
        format!(
            "{per_link} bytes per direction per round per SC link; uplink bytes per user to target EARA-SCA {sca:.0} vs DBA {dba:.0} (summed over {SEEDS} seeds)"
        ),
    )
}

fn invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = [0.0f64; 4];
    for _ in 0..2000 {
        let k = rng.gen_range(2..9);
        let raw: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() }).collect();
        let Some(h) = Distribution::from_counts(&raw) else { continue };
        let lhs = kld(&h, &Distribution::uniform(k)).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max((lhs - ((k as f64).ln() - shannon_entropy(&h))).abs());

        let p = default_radio();
        let b = 10f64.powf(rng.gen_range(4.0..8.0));
        let g = 10f64.powf(rng.gen_range(-12.0..-3.0));
        let r = rng.gen_range(0.01..20.0) * b;
        let w = 10f64.powf(rng.gen_range(3.0..7.0));
        let pw = required_power(r, b, g, &p);
        worst[1] = worst[1].max((rate(b, pw, g, &p) - r).abs() / r);
        let e = transmit_energy(w, r, b, g, &p);
        worst[2] = worst[2].max((e - pw * w / r).abs() / e);

        let sizes: Vec<f64> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(0.0..1e6)).collect();
        if sizes.iter().sum::<f64>() > 0.0 {
            let s = sigma_weights(&sizes).map_err(|e| e.to_string())?;
            worst[3] = worst[3].max((s.iter().sum::<f64>() - 1.0).abs());
        }
    }

    let mut grad_worst = 0.0f64;
    for seed in 0..40u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let features: Vec<f64> = (0..n * 4).map(|_| r.gen_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let data = LabeledDataset::new(4, features, labels).map_err(|e| e.to_string())?;
        let shape = if seed % 2 == 0 { ModelShape::linear(4, 3) } else { ModelShape::mlp(4, 5, 3) };
        let mut m = ModelParams::init(shape, seed).map_err(|e| e.to_string())?;
        for (k, w) in m.weights.iter_mut().enumerate() {
            *w += 0.5 * ((k as f64 + 1.0) * 0.7 + seed as f64).sin();
        }
        let (_, g) = m.loss_and_grad(&data, None).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd: Vec<f64> = (0..m.weights.len())
            .map(|k| {
                let mut plus = m.clone();
                plus.weights[k] += h;
                let mut minus = m.clone();
                minus.weights[k] -= h;
                (plus.loss(&data).unwrap_or(f64::NAN) - minus.loss(&data).unwrap_or(f64::NAN)) / (2.0 * h)
            })
            .collect();
        grad_worst = grad_worst.max(rel_inf(&g, &fd));
    }

    let mut budget_violations = 0;
    for seed in 0..200u64 {
        let s = random_scenario(50_000 + seed, 4 + (seed % 12) as usize, 2 + (seed % 3) as usize, 3, false);
        for a in [
            eara_assign(&s, &EaraConfig::default()),
            eara_assign(&s, &EaraConfig::dual()),
            dba_assign(&s),
        ] {
            let a = a.map_err(|e| e.to_string())?;
            budget_violations += usize::from(a.check(&s).is_err());
        }
    }
    check(
        worst[0] <= 1e-12 && worst[1] <= 1e-9 && worst[2] <= 1e-12 && grad_worst <= 1e-4 && worst[3] <= 1e-12 && budget_violations == 0,
        format!(
            "KLD/entropy {:.1e}, rate/power roundtrip {:.1e}, energy {:.1e}, gradient {grad_worst:.1e}, σ sum {:.1e}, {budget_violations} budget violations in 600 assignments",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn participation_ordering() -> Verdict {
    let s = table2_scenario();
    let presets = ["1", "0.8", "scd", "dcd"]
        .iter()
        .map(|v| parse_participation(v, s.num_classes))
        .collect::<hfl_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let a = Strategy::EaraSca.assign(&s, &EaraConfig::default()).map_err(|e| e.to_string())?;
    let mut mean = [0.0; 4];
    let mut ordered = 0;
    for seed in 0..SEEDS {
        let task = TaskSpec::default().with_seed(seed).build(&s).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { seed, ..skewed_training_config() };
        let res = participation_sweep(&s, &a, &task, &cfg, &presets, 4).map_err(|e| e.to_string())?;
        let acc: Vec<f64> = res.iter().map(|(_, t)| t.final_accuracy().unwrap_or(f64::NAN)).collect();
        ordered += usize::from(acc.windows(2).all(|w| w[0] >= w[1]));
        for (m, x) in mean.iter_mut().zip(&acc) {
            *m += x / SEEDS as f64;
        }
    }
    check(
        mean.windows(2).all(|w| w[0] >= w[1]),
        format!(
            "mean final accuracy over {SEEDS} seeds: UPP=1 {:.3}, UPP=0.8 {:.3}, SCD {:.3}, DCD {:.3}; fully ordered on {ordered}/{SEEDS} seeds",
            mean[0], mean[1], mean[2], mean[3]
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, started: Instant, v: Verdict| {
        let secs = started.elapsed().as_secs_f64();
        match v {
            Ok(d) => println!("criterion {n}: PASS ({secs:.1} s) {d}"),
            Err(d) => {
                all = false;
                println!("criterion {n}: FAIL ({secs:.1} s) {d}");
            }
        }
    };
    let t = Instant::now();
    report(1, t, guarded(fedsgd_equivalence));
    let t = Instant::now();
    report(2, t, guarded(lp_oracles));
    let t = Instant::now();
    report(3, t, guarded(rounding_near_optimality));
    let t = Instant::now();
    report(4, t, guarded(distance_shape));

    let t = Instant::now();
    match guarded(|| Ensemble::skewed().map_err(|e| e.to_string())) {
        Ok(e) => {
            report(5, t, guarded(|| round_reduction(&e)));
            report(6, t, guarded(|| accuracy_direction(&e)));
            report(7, t, guarded(|| traffic(&e)));
        }
        Err(msg) => {
            for n in 5..=7 {
                report(n, t, Err(format!("training ensemble failed: {msg}")));
            }
        }
    }
    let t = Instant::now();
    report(8, t, guarded(invariants));
    let t = Instant::now();
    report(9, t, guarded(participation_ordering));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
