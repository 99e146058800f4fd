//! Acceptance gate. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use hexfusion::consensus::{
    average_consensus, optimal_fusion, run_wise, two_channel_fusion, uniform_weights,
    wise_matrices, wise_step, ConsensusOptions, ConsensusState, FusionGraph,
};
use hexfusion::estimator::{invert_measurements, InversionError};
use hexfusion::field::{forward_phi, GaussianParams, MeasurementQuad, NoiseStream};
use hexfusion::harness::io::write_json;
use hexfusion::harness::{
    bootstrap_preference, median, method_errors, run_experiment, ErrorChannel, ExperimentConfig,
    FusionMethod,
};
use hexfusion::lattice::{coverage_area, TessellationKind};
use hexfusion::sensitivity::{
    closed_form_variances_with, monte_carlo_variances, numeric_oracle_variances, Channel,
    ClosedFormVariant,
};
use hexfusion::spacing::{canonical_root, minimize_spacing, spacing_bounds};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn p(c1: f64, c2: f64, m1: f64, m2: f64) -> GaussianParams {
    GaussianParams::new(c1, c2, m1, m2).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn round_trip() -> Verdict {
    // centre components are compared on the scale max(|m_k|, 1)
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let axis = linspace(-2.0, 2.0, 11);
    for c1 in [0.5, 1.0, 2.0] {
        for c2 in [0.5, 1.0, 2.0] {
            for &m1 in &axis {
                for &m2 in &axis {
                    for l in [0.5, 1.0, 2.0] {
                        let truth = p(c1, c2, m1, m2);
                        let Ok(got) = invert_measurements(&forward_phi(&truth, l)) else {
                            return verdict(false, format!("inversion failed at {truth:?}, l={l}"));
                        };
                        for (g, t) in got.to_array().iter().zip(truth.to_array()) {
                            worst = worst.max((g - t).abs() / t.abs().max(1.0));
                        }
                        count += 1;
                    }
                }
            }
        }
    }
    verdict(
        worst <= 1e-9,
        format!("{count} configurations, worst relative error {worst:.2e}"),
    )
}

fn precondition() -> Verdict {
    let mut rng = NoiseStream::new(2);
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_uniform();
    let mut wrong = 0;
    for k in 0..10_000 {
        let (a, b, c) = (draw(1e-3, 10.0), draw(1e-3, 10.0), draw(1e-3, 10.0));
        let shrink = if k % 10 == 0 { 1.0 } else { draw(0.3, 1.0) };
        let mu1 = (a * b * c).cbrt() * shrink;
        if invert_measurements(&MeasurementQuad::new([mu1, a, b, c], draw(0.1, 3.0)))
            != Err(InversionError::WidthDegenerate)
        {
            wrong += 1;
        }
    }
    let mut rng = NoiseStream::new(3);
    let (mut valid, mut bad) = (0, 0);
    for _ in 0..100_000 {
        let mu: [f64; 4] = std::array::from_fn(|_| 10f64.powf(-6.0 + 7.0 * rng.next_uniform()));
        let l = 0.1 + 2.9 * rng.next_uniform();
        if let Ok(q) = invert_measurements(&MeasurementQuad::new(mu, l)) {
            valid += 1;
            if !(q.c2() > 0.0 && q.c1() > 0.0 && mu[1] * mu[2] * mu[3] < mu[0].powi(3)) {
                bad += 1;
            }
        }
    }
    verdict(
        wrong == 0 && bad == 0,
        format!("{wrong}/10000 violating quads accepted; {valid} valid of 1e5 fuzzed, {bad} with C2 <= 0 or broken precondition"),
    )
}

fn oracle_agreement() -> Verdict {
    let mut worst_corrected = [0.0f64; 4];
    let mut worst_uncorrected = [0.0f64; 4];
    let mut points = 0;
    let axis = linspace(-1.5, 1.5, 10);
    for l in [0.5, 1.0] {
        for c2 in [0.5, 1.0] {
            for &m1 in &axis {
                for &m2 in &axis {
                    if m1.hypot(m2) < 0.05 {
                        continue;
                    }
                    let q = p(1.0, c2, m1, m2);
                    let Ok(oracle) = numeric_oracle_variances(l, &q, 1.0) else {
                        return verdict(false, format!("oracle failed at {q:?}"));
                    };
                    let fixed =
                        closed_form_variances_with(l, &q, 1.0, ClosedFormVariant::Corrected);
                    let wrong =
                        closed_form_variances_with(l, &q, 1.0, ClosedFormVariant::Uncorrected);
                    for (k, ch) in Channel::ALL.iter().enumerate() {
                        worst_corrected[k] =
                            worst_corrected[k].max(rel(fixed.get(*ch), oracle.get(*ch)));
                        worst_uncorrected[k] =
                            worst_uncorrected[k].max(rel(wrong.get(*ch), oracle.get(*ch)));
                    }
                    points += 1;
                }
            }
        }
    }
    let flagged: Vec<String> = Channel::ALL
        .iter()
        .zip(worst_uncorrected)
        .filter(|(_, w)| *w > 1e-6)
        .map(|(ch, w)| format!("{}={w:.1e}", ch.name()))
        .collect();
    let pass = worst_corrected.iter().all(|&w| w <= 1e-6);
    verdict(
        pass,
        format!(
            "{points} points; corrected worst (c1,c2,modm,angle) = {:.1e},{:.1e},{:.1e},{:.1e}; uncorrected forms disagree on [{}]",
            worst_corrected[0],
            worst_corrected[1],
            worst_corrected[2],
            worst_corrected[3],
            flagged.join(", ")
        ),
    )
}

fn monte_carlo() -> Verdict {
    let q = p(1.0, 1.0, 0.4, 0.2);
    let sigma = 1e-4;
    let mc = match monte_carlo_variances(1.0, &q, sigma, 100_000, 2024) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let oracle = numeric_oracle_variances(1.0, &q, sigma * sigma).unwrap();
    let errs: Vec<f64> = Channel::ALL
        .iter()
        .map(|&ch| rel(mc.variances.get(ch), oracle.get(ch)))
        .collect();
    verdict(
        errs.iter().all(|&e| e <= 0.1),
        format!(
            "relative deviation (c1,c2,modm,angle) = {:.3},{:.3},{:.3},{:.3}",
            errs[0], errs[1], errs[2], errs[3]
        ),
    )
}

fn spacing_root() -> Verdict {
    let root = canonical_root(1.0);
    let found = minimize_spacing(Channel::C2, &p(1.0, 1.0, 0.0, 0.0), 1.0)
        .unwrap()
        .l_opt;
    verdict(
        (root - 1.11691).abs() <= 1e-5 && (found - root).abs() <= 1e-3,
        format!("root {root:.8}, grid search {found:.8}"),
    )
}

fn bounds() -> Verdict {
    let mut worst_margin = f64::INFINITY;
    let mut checked = 0;
    for c2 in [0.25f64, 1.0, 4.0] {
        for k in 0..=8 {
            let r = 2.0 * c2.sqrt() * k as f64 / 8.0;
            for j in 0..12 {
                let a = std::f64::consts::TAU * j as f64 / 12.0;
                let q = p(1.0, c2, r * a.cos(), r * a.sin());
                let l = match minimize_spacing(Channel::C2, &q, 1.0) {
                    Ok(res) => res.l_opt,
                    Err(e) => return verdict(false, format!("{q:?}: {e}")),
                };
                let (lo, hi) = spacing_bounds(c2, r);
                worst_margin = worst_margin.min((l - lo).min(hi - l));
                checked += 1;
            }
        }
    }
    verdict(
        worst_margin > 0.0,
        format!("{checked} points, smallest margin {worst_margin:.4}"),
    )
}

fn scaling() -> Verdict {
    let centres = [[0.3, -0.2], [0.8, 0.5], [-1.1, 0.4]];
    let mut worst_c1: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for ch in Channel::ALL {
        for c2 in [0.5, 1.0] {
            for m in centres {
                let base = minimize_spacing(ch, &p(1.0, c2, m[0], m[1]), 1.0)
                    .unwrap()
                    .l_opt;
                for c1 in [0.1, 10.0] {
                    let l = minimize_spacing(ch, &p(c1, c2, m[0], m[1]), 1.0)
                        .unwrap()
                        .l_opt;
                    worst_c1 = worst_c1.max(rel(l, base));
                }
                for lam in [0.5, 2.0] {
                    let q = p(1.0, lam * lam * c2, lam * m[0], lam * m[1]);
                    let l = minimize_spacing(ch, &q, 1.0).unwrap().l_opt;
                    worst_scale = worst_scale.max(rel(l, lam * base));
                }
            }
        }
    }
    verdict(
        worst_c1 <= 1e-6 && worst_scale <= 1e-3,
        format!("amplitude change {worst_c1:.1e}, dilation mismatch {worst_scale:.1e}"),
    )
}

fn coverage() -> Verdict {
    let s3 = 3f64.sqrt();
    let mut worst: f64 = 0.0;
    for l in [0.5, 1.0, 2.5] {
        for n in [1usize, 12, 1000] {
            let nf = n as f64;
            worst = worst
                .max(
                    (coverage_area(TessellationKind::Hexagonal, l, n)
                        - 3.0 * s3 / 4.0 * l * l * nf)
                        .abs(),
                )
                .max(
                    (coverage_area(TessellationKind::Triangular, l, n) - s3 / 2.0 * l * l * nf)
                        .abs(),
                )
                .max((coverage_area(TessellationKind::Square, l, n) - l * l * nf).abs());
        }
    }
    verdict(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn random_graph(rng: &mut NoiseStream) -> FusionGraph {
    let n = 2 + rng.next_index(19);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.next_index(i), i));
    }
    let density = rng.next_uniform() * 0.4;
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_uniform() < density && !edges.contains(&(i, j)) {
                edges.push((i, j));
            }
        }
    }
    FusionGraph::from_edges(n, &edges).unwrap()
}

fn consensus_invariants() -> Verdict {
    let mut rng = NoiseStream::new(99);
    let mut worst_row: f64 = 0.0;
    let mut s_escape = 0;
    let mut envelope_breaks = 0;
    let mut slowest = 0;
    let mut unconverged = 0;
    for _ in 0..1000 {
        let graph = random_graph(&mut rng);
        let n = graph.len();
        let x0: Vec<f64> = (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect();
        let s0: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(-2.0 + 4.0 * rng.next_uniform()))
            .collect();
        let (s_lo, s_hi) = s0
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        let mut state = ConsensusState {
            x: x0.clone(),
            s: s0.clone(),
            t: 0,
        };
        let env = |x: &[f64]| {
            x.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                })
        };
        let (mut lo, mut hi) = env(&state.x);
        while hi - lo > 1e-9 && state.t < 10_000 {
            let (pm, mm) = wise_matrices(&graph, &state.s);
            for i in 0..n {
                worst_row = worst_row
                    .max((pm.row(i).sum() - 1.0).abs())
                    .max((mm.row(i).sum() - 1.0).abs());
            }
            state = wise_step(&state, &graph);
            if state
                .s
                .iter()
                .any(|&s| s < s_lo * (1.0 - 1e-12) || s > s_hi * (1.0 + 1e-12))
            {
                s_escape += 1;
            }
            let (nlo, nhi) = env(&state.x);
            if nlo < lo - 1e-12 || nhi > hi + 1e-12 {
                envelope_breaks += 1;
            }
            (lo, hi) = (nlo, nhi);
        }
        slowest = slowest.max(state.t);
        let report = run_wise(&graph, &x0, &s0, &ConsensusOptions::default()).unwrap();
        if !report.converged || report.iterations > 10_000 {
            unconverged += 1;
        }
    }
    verdict(
        worst_row <= 1e-12 && s_escape == 0 && envelope_breaks == 0 && unconverged == 0,
        format!(
            "1000 graphs: row-sum error {worst_row:.1e}, quality escapes {s_escape}, envelope breaks {envelope_breaks}, unconverged {unconverged}, slowest {slowest} steps"
        ),
    )
}

fn hand_example() -> Verdict {
    let graph = FusionGraph::complete(2).unwrap();
    let next = wise_step(
        &ConsensusState {
            x: vec![0.0, 1.0],
            s: vec![1.0, 3.0],
            t: 0,
        },
        &graph,
    );
    let ok = next.x.iter().all(|&x| (x - 0.25).abs() <= 1e-12)
        && next.s.iter().all(|&s| (s - 1.2).abs() <= 1e-12);
    verdict(ok, format!("x = {:?}, s = {:?}", next.x, next.s))
}

fn reductions() -> Verdict {
    let mut rng = NoiseStream::new(5);
    let traced = ConsensusOptions {
        record_trace: true,
        ..ConsensusOptions::default()
    };
    let mut worst_trace: f64 = 0.0;
    let mut worst_fusion: f64 = 0.0;
    let mut graphs = vec![
        FusionGraph::cycle(6).unwrap(),
        FusionGraph::complete(5).unwrap(),
    ];
    graphs.extend((0..20).map(|_| random_graph(&mut rng)));
    for graph in &graphs {
        let n = graph.len();
        let x0: Vec<f64> = (0..n).map(|_| rng.next_uniform()).collect();
        let wise = run_wise(graph, &x0, &vec![0.7; n], &traced).unwrap();
        let avg = average_consensus(graph, &x0, &uniform_weights(graph), &traced).unwrap();
        let (wt, at) = (wise.trace.unwrap(), avg.trace.unwrap());
        if wt.len() != at.len() {
            worst_trace = f64::INFINITY;
        }
        for (a, b) in wt.iter().zip(&at) {
            for (u, v) in a.x.iter().zip(&b.x) {
                worst_trace = worst_trace.max((u - v).abs());
            }
        }
        let var: Vec<f64> = (0..n).map(|_| 0.1 + rng.next_uniform()).collect();
        let tight = ConsensusOptions {
            tol: 1e-12,
            ..ConsensusOptions::default()
        };
        let fused = two_channel_fusion(graph, &x0, &var, &tight).unwrap();
        let best = optimal_fusion(&x0, &var).unwrap();
        for x in &fused.x {
            worst_fusion = worst_fusion.max((x - best).abs());
        }
    }
    verdict(
        worst_trace <= 1e-12 && worst_fusion <= 1e-8,
        format!(
            "{} graphs: trace gap {worst_trace:.1e}, two-channel gap {worst_fusion:.1e}",
            graphs.len()
        ),
    )
}

fn statistical_reproduction() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (k, centre) in [[0.0, 0.0], [0.5, 0.5], [1.0, 1.0], [1.5, 1.5]]
        .into_iter()
        .enumerate()
    {
        let mut cfg = ExperimentConfig::twelve_node_setup(centre, 1000, 1000 + k as u64);
        cfg.methods = vec![FusionMethod::Average, FusionMethod::Wise];
        let res = run_experiment(&cfg).unwrap();
        let med = |m| {
            median(&mut method_errors(&res.trials, m, ErrorChannel::Center)).unwrap_or(f64::NAN)
        };
        let (w, a) = (med(FusionMethod::Wise), med(FusionMethod::Average));
        let conf = bootstrap_preference(
            &res.trials,
            FusionMethod::Wise,
            FusionMethod::Average,
            ErrorChannel::Center,
            1000,
            7,
        )
        .unwrap_or(0.0);
        let usable = method_errors(&res.trials, FusionMethod::Wise, ErrorChannel::Center).len();
        if k > 0 && !(w <= a && conf >= 0.9) {
            pass = false;
        }
        lines.push(format!(
            "({},{}) wise {w:.3} avg {a:.3} conf {conf:.3} n={usable}",
            centre[0], centre[1]
        ));
    }
    verdict(pass, lines.join("; "))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::twelve_node_setup([1.0, 0.5], 5, 31);
    let mut bytes = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("run{k}.json"));
        write_json(&path, &run_experiment(&cfg).unwrap()).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    verdict(
        bytes[0] == bytes[1],
        format!("{} bytes per result file", bytes[0].len()),
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(u32, &str, Option<Duration>, Check); 13] = [
        (
            1,
            "round-trip inversion",
            Some(Duration::from_secs(1)),
            round_trip,
        ),
        (2, "invertibility precondition", None, precondition),
        (
            3,
            "variance oracle agreement",
            Some(Duration::from_secs(10)),
            oracle_agreement,
        ),
        (
            4,
            "Monte Carlo validation",
            Some(Duration::from_secs(30)),
            monte_carlo,
        ),
        (5, "canonical spacing root", None, spacing_root),
        (
            6,
            "optimal spacing bounds",
            Some(Duration::from_secs(60)),
            bounds,
        ),
        (7, "spacing scaling properties", None, scaling),
        (8, "coverage formulas", None, coverage),
        (9, "consensus invariants", None, consensus_invariants),
        (10, "wise consensus two-node example", None, hand_example),
        (11, "consensus reductions", None, reductions),
        (
            12,
            "twelve-node statistical reproduction",
            Some(Duration::from_secs(120)),
            statistical_reproduction,
        ),
        (13, "determinism", None, determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|lim| took <= lim);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |lim| format!(" (limit {}s)", lim.as_secs()));
        println!(
            "{} criterion {id:>2} {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
