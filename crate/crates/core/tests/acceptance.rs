//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line:
//!
//! ```text
//! cargo test -p commlfm --test acceptance
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use commlfm::classify::{fit_logreg, Init, LogRegOptions};
use commlfm::eval::{accuracy_at_percentile, global_metrics, pr_curve};
use commlfm::features::DesignMode;
use commlfm::graph::{k_core, network_stats};
use commlfm::linkmf::{cost, gradients, sample_pairs, CostWeights, Pair, PairSample, SampleRole};
use commlfm::pipeline::{run_pipeline, ModelSettings, PipelineConfig};
use commlfm::synth::{generate_instance, run_benchmark, SbmSpec};
use commlfm::{Graph, LinkModel};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    ensure(e < limit, || format!("took {e:.2?}, limit {limit:?}"))?;
    Ok(e)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

fn all_pairs(g: &Graph) -> Vec<Pair> {
    let n = g.node_count();
    let mut pairs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pairs.push(Pair { i, j, label: g.has_edge(i, j) });
            }
        }
    }
    pairs
}

fn uniform_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

// Straight transcription of the weighted cross-entropy with the per-pair
// ridge term. Kept separate from the library so the two can disagree.
fn oracle_cost(m: &LinkModel, pairs: &[Pair], omega: usize, zeta: usize, gamma: f64) -> f64 {
    let mut total = 0.0;
    for p in pairs {
        let mut h = m.alpha + m.beta[p.i] + m.beta[p.j];
        for c in 0..m.u.ncols() {
            h += m.u[[p.i, c]] * m.v[[p.j, c]];
        }
        let prob = 1.0 / (1.0 + (-h).exp());
        total += if p.label {
            -(prob.ln()) / (2.0 * omega as f64)
        } else {
            -((1.0 - prob).ln()) / (2.0 * zeta as f64)
        };
        let ridge: f64 = m.u.row(p.i).iter().map(|x| x * x).sum::<f64>()
            + m.v.row(p.j).iter().map(|x| x * x).sum::<f64>()
            + m.beta[p.i].powi(2)
            + m.beta[p.j].powi(2);
        total += gamma * ridge;
    }
    total
}

fn gradient_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut done = 0;
    while done < 20 {
        let n = rng.gen_range(4..=15);
        let k = rng.gen_range(1..=3);
        let g = random_graph(&mut rng, n, 0.35);
        let omega = 2 * g.edge_count();
        let zeta = n * (n - 1) - omega;
        if omega == 0 || zeta == 0 {
            continue;
        }
        let mut pairs = all_pairs(&g);
        pairs.shuffle(&mut rng);
        pairs.truncate(rng.gen_range(pairs.len() / 2..=pairs.len()));
        let gamma = if done % 4 == 0 { 0.0 } else { rng.gen_range(0.0..0.05) };
        let w = CostWeights::new(omega, zeta, gamma).unwrap();
        let model = LinkModel {
            u: uniform_array(&mut rng, n, k),
            v: uniform_array(&mut rng, n, k),
            beta: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
            alpha: rng.gen_range(-2.0..2.0),
        };
        let sample = PairSample::new(pairs.clone(), SampleRole::Train);
        let lib = cost(&model, &sample, &w).unwrap();
        let ours = oracle_cost(&model, &pairs, omega, zeta, gamma);
        ensure((lib - ours).abs() <= 1e-12 * ours.abs().max(1.0), || {
            format!("instance {done}: cost {lib} vs oracle {ours}")
        })?;
        let grad = gradients(&model, &sample, &w).unwrap();

        let h = 1e-6;
        let fd = |bump: &dyn Fn(&mut LinkModel, f64)| {
            let mut plus = model.clone();
            bump(&mut plus, h);
            let mut minus = model.clone();
            bump(&mut minus, -h);
            (oracle_cost(&plus, &pairs, omega, zeta, gamma) - oracle_cost(&minus, &pairs, omega, zeta, gamma))
                / (2.0 * h)
        };
        let mut compare = |analytic: f64, numeric: f64, what: String| -> Result<(), String> {
            coords += 1;
            let diff = (analytic - numeric).abs();
            let rel = diff / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            ensure(diff <= 1e-8 || rel < 1e-4, || {
                format!("instance {done} {what}: analytic {analytic}, numeric {numeric}")
            })
        };
        for i in 0..n {
            for c in 0..k {
                compare(grad.u[[i, c]], fd(&|m, d| m.u[[i, c]] += d), format!("U[{i},{c}]"))?;
                compare(grad.v[[i, c]], fd(&|m, d| m.v[[i, c]] += d), format!("V[{i},{c}]"))?;
            }
            compare(grad.beta[i], fd(&|m, d| m.beta[i] += d), format!("beta[{i}]"))?;
        }
        compare(grad.alpha, fd(&|m, d| m.alpha += d), "alpha".into())?;
        done += 1;
    }
    let e = within(t, Duration::from_secs(5))?;
    Ok(format!("{coords} coordinates, worst relative error {worst:.1e}, {e:.2?}"))
}

fn cost_anchor() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for n in [5, 20, 50] {
        let g = loop {
            let g = random_graph(&mut rng, n, 0.3);
            if g.edge_count() > 0 {
                break g;
            }
        };
        let w = CostWeights::from_graph(&g, 0.0).unwrap();
        let sample = PairSample::new(all_pairs(&g), SampleRole::Train);
        let c = cost(&LinkModel::zeros(n, 3), &sample, &w).unwrap();
        let err = (c - std::f64::consts::LN_2).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("n={n}: cost {c}"))?;
    }
    Ok(format!("|cost - ln 2| <= {worst:.1e} for n in {{5, 20, 50}}"))
}

fn peel(g: &Graph, k: usize) -> BTreeSet<usize> {
    let mut alive: BTreeSet<usize> = (0..g.node_count()).collect();
    loop {
        let weak = alive
            .iter()
            .copied()
            .find(|&v| g.neighbors(v).iter().filter(|w| alive.contains(w)).count() < k);
        match weak {
            Some(v) => {
                alive.remove(&v);
            }
            None => return alive,
        }
    }
}

fn kcore_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonempty = 0;
    for case in 0..100 {
        let n = rng.gen_range(1..=50);
        let p = rng.gen_range(0.02..0.4);
        let k = rng.gen_range(0..=6);
        let g = random_graph(&mut rng, n, p);
        let (core, map) = k_core(&g, k);
        let expected = peel(&g, k);
        let got: BTreeSet<usize> = map.iter().copied().collect();
        ensure(got == expected, || format!("case {case} (n={n}, k={k}): nodes {got:?} vs {expected:?}"))?;
        let got_edges: BTreeSet<(usize, usize)> = core.edges().map(|(a, b)| (map[a].min(map[b]), map[a].max(map[b]))).collect();
        let want_edges: BTreeSet<(usize, usize)> =
            g.edges().filter(|(a, b)| expected.contains(a) && expected.contains(b)).collect();
        ensure(got_edges == want_edges, || format!("case {case}: edge sets differ"))?;
        nonempty += usize::from(!expected.is_empty());
    }
    let e = within(t, Duration::from_secs(5))?;
    Ok(format!("100 graphs ({nonempty} non-empty cores), {e:.2?}"))
}

fn graph_with(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    all.shuffle(rng);
    all.truncate(m);
    Graph::from_edges(n, all).unwrap()
}

fn stats_convention() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (n, m) in [(10, 17), (37, 120), (200, 999)] {
        let s = network_stats(&graph_with(n, m, &mut rng)).unwrap();
        ensure(s.nodes == n && s.edges == m, || format!("counts {}/{} for {n}/{m}", s.nodes, s.edges))?;
        ensure(s.avg_degree == 2.0 * m as f64 / n as f64, || format!("avg_degree {} for {n}/{m}", s.avg_degree))?;
        ensure(s.density == m as f64 / (n as f64 * (n - 1) as f64), || {
            format!("density {} for {n}/{m}", s.density)
        })?;
    }
    let s = network_stats(&graph_with(587, 4122, &mut rng)).unwrap();
    let avg = (s.avg_degree * 100.0).round() / 100.0;
    let dens = (s.density * 1000.0).round() / 1000.0;
    ensure(avg == 14.04, || format!("avg_degree {} rounds to {avg}", s.avg_degree))?;
    ensure(dens == 0.012, || format!("density {} rounds to {dens}", s.density))?;
    Ok(format!("n=587, m=4122: avg_degree {:.4}, density {:.5}", s.avg_degree, s.density))
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    for case in 0..200 {
        let n = rng.gen_range(1..=30);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let conf: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        // Half the cases decouple the hard predictions from the confidences.
        let predicted: Vec<bool> = if case % 2 == 0 {
            conf.iter().map(|&c| c >= 0.5).collect()
        } else {
            (0..n).map(|_| rng.gen_bool(0.5)).collect()
        };
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            match (y[i], predicted[i]) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (false, false) => tn += 1.0,
                (true, false) => fn_ += 1.0,
            }
        }
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let nf = n as f64;
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = div(2.0 * precision * recall, precision + recall);
        let bcr = 0.5 * (recall + div(tn, tn + fp));
        let truth = |i: usize| if y[i] { 1.0 } else { 0.0 };
        let rmse = ((0..n).map(|i| (conf[i] - truth(i)).powi(2)).sum::<f64>() / nf).sqrt();
        let nll = -(0..n)
            .map(|i| if y[i] { conf[i].ln() } else { (1.0 - conf[i]).ln() })
            .sum::<f64>();
        let accuracy = (tp + tn) / nf;

        let m = global_metrics(&y, &predicted, &conf).unwrap();
        let fields = [
            ("accuracy", m.accuracy, accuracy),
            ("rmse", m.rmse, rmse),
            ("precision", m.precision, precision),
            ("recall", m.recall, recall),
            ("f1", m.f1, f1),
            ("bcr", m.bcr, bcr),
            ("neg_log_likelihood", m.neg_log_likelihood, nll),
            ("pct_pred_positive", m.pct_pred_positive, (tp + fp) / nf),
            ("pct_actual_positive", m.pct_actual_positive, (tp + fn_) / nf),
        ];
        for (name, got, want) in fields {
            ensure(close(got, want), || format!("case {case} {name}: {got} vs {want}"))?;
        }

        let curve = accuracy_at_percentile(&y, &conf, &predicted, 5).unwrap();
        ensure(curve.x.last() == Some(&100.0), || format!("case {case}: last percentile {:?}", curve.x.last()))?;
        let last = *curve.y.last().unwrap();
        ensure(last == m.accuracy, || format!("case {case}: accuracy at 100% {last} vs {}", m.accuracy))?;

        // The PR curve ranks by confidence and thresholds at 0.5, so its end
        // point matches the global metrics of the thresholded predictions.
        if case % 2 == 0 && y.iter().any(|&v| v) {
            let pr = pr_curve(&y, &conf).unwrap();
            let (p, r) = (*pr.precision.last().unwrap(), *pr.recall.last().unwrap());
            ensure(p == m.precision && r == m.recall, || {
                format!("case {case}: PR end ({p}, {r}) vs ({}, {})", m.precision, m.recall)
            })?;
        }
    }
    Ok("200 cases, 9 fields each, percentile and PR end points".into())
}

fn sbm(seed: u64, frac: f64, p_in: f64, p_out: f64) -> SbmSpec {
    SbmSpec {
        block_sizes: vec![100, 100],
        p_in,
        p_out,
        degree_bias_spread: 0.0,
        label_flip_rate: 0.1,
        feature_informative_frac: frac,
        feature_dim: 10,
        feature_noise: 1.0,
        seed,
    }
}

fn mean_accuracies(frac: f64, p_in: f64, p_out: f64) -> (f64, f64) {
    let settings = ModelSettings::default();
    let (mut x, mut f) = (0.0, 0.0);
    for seed in 0..5 {
        let report = run_benchmark(&sbm(seed, frac, p_in, p_out), &settings).unwrap();
        x += report.accuracy(DesignMode::X).unwrap();
        f += report.accuracy(DesignMode::F).unwrap();
    }
    (x / 5.0, f / 5.0)
}

fn communities_rescue() -> Check {
    let t = Instant::now();
    let (x, f) = mean_accuracies(0.0, 0.1, 0.01);
    let summary = format!("mean X {x:.3}, mean F {f:.3}");
    ensure(x >= 0.75, || format!("{summary}: X below 0.75"))?;
    ensure(x - f >= 0.15, || format!("{summary}: margin {:.3} below 0.15", x - f))?;
    let e = within(t, Duration::from_secs(60))?;
    Ok(format!("{summary}, {e:.1?}"))
}

fn no_harm() -> Check {
    let (x, f) = mean_accuracies(1.0, 0.05, 0.05);
    let summary = format!("mean F {f:.3}, mean X {x:.3}");
    ensure((f - x).abs() <= 0.05, || format!("{summary}: gap {:.3}", (f - x).abs()))?;
    Ok(summary)
}

fn sampling_ratios() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut graphs = 0;
    while graphs < 25 {
        let n = rng.gen_range(8..=60);
        let p = rng.gen_range(0.05..0.25);
        let g = random_graph(&mut rng, n, p);
        let omega = 2 * g.edge_count();
        let splits = match sample_pairs(&g, rng.gen()) {
            Ok(s) => s,
            // Too few edges, or too few non-edges for the 2.5ω draw.
            Err(_) => continue,
        };
        let expect = [
            (&splits.train, omega / 2, omega),
            (&splits.validation, omega / 4, omega / 2),
            (&splits.test, omega - omega / 2 - omega / 4, omega / 2),
        ];
        for (s, edges, non_edges) in expect {
            ensure(s.edge_count() == edges && s.non_edge_count() == non_edges, || {
                format!(
                    "n={n} omega={omega} {:?}: {} edges / {} non-edges, want {edges} / {non_edges}",
                    s.role(),
                    s.edge_count(),
                    s.non_edge_count()
                )
            })?;
        }
        let mut seen = HashSet::new();
        for s in [&splits.train, &splits.validation, &splits.test] {
            for p in s.pairs() {
                ensure(p.i != p.j && p.i < n && p.j < n, || format!("bad pair {p:?}"))?;
                ensure(p.label == g.has_edge(p.i, p.j), || format!("mislabelled pair {p:?}"))?;
                ensure(seen.insert((p.i, p.j)), || format!("pair {p:?} drawn twice"))?;
            }
        }
        graphs += 1;
    }
    Ok("25 graphs, counts exact, all pairs distinct and correctly labelled".into())
}

fn end_to_end_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SbmSpec {
        block_sizes: vec![40, 40],
        p_in: 0.15,
        p_out: 0.02,
        degree_bias_spread: 0.0,
        label_flip_rate: 0.1,
        feature_informative_frac: 0.5,
        feature_dim: 6,
        feature_noise: 1.0,
        seed: 9,
    };
    generate_instance(&spec).unwrap().write(dir.path()).unwrap();
    let mut config = PipelineConfig::new(dir.path().join("edges.txt"));
    config.features = Some(dir.path().join("features.csv"));
    config.labels = Some(dir.path().join("labels.csv"));
    config.out_dir = dir.path().join("out");
    config.seed = 17;
    let report = config.out_dir.join("eval_report.json");

    let first = run_pipeline(&config).map_err(|e| e.to_string())?;
    let first_bytes = fs::read(&report).map_err(|e| e.to_string())?;
    let second = run_pipeline(&config).map_err(|e| e.to_string())?;
    let second_bytes = fs::read(&report).map_err(|e| e.to_string())?;
    ensure(first_bytes == second_bytes, || "eval_report.json differs between runs".into())?;
    let json = |s: &commlfm::pipeline::RunSummary| s.report.as_ref().map(|r| r.to_json().unwrap());
    ensure(json(&first) == json(&second), || "in-memory reports differ".into())?;
    Ok(format!("{} identical bytes", first_bytes.len()))
}

fn classifier_convexity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n = rng.gen_range(40..=120);
        let d = rng.gen_range(2..=8);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let w_true: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let y: Vec<bool> = (0..n)
            .map(|i| {
                let z: f64 = (0..d).map(|c| x[[i, c]] * w_true[c]).sum();
                rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp())
            })
            .collect();
        let lambda = rng.gen_range(0.005..0.5);
        let fit = |seed| {
            let opts = LogRegOptions {
                init: Init::Random(seed),
                ..LogRegOptions::default()
            };
            fit_logreg(x.view(), &y, lambda, &opts).unwrap()
        };
        let (a, b) = (fit(2 * case + 1), fit(2 * case + 2));
        let gap = a
            .weights
            .iter()
            .zip(&b.weights)
            .map(|(p, q)| (p - q).abs())
            .fold((a.intercept - b.intercept).abs(), f64::max);
        worst = worst.max(gap);
        ensure(gap <= 1e-4, || format!("case {case} (lambda {lambda:.3}): weights differ by {gap:.2e}"))?;
    }
    Ok(format!("10 instances, largest coefficient gap {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient matches finite differences", gradient_oracle),
        ("zero model costs ln 2", cost_anchor),
        ("k-core equals brute-force peeling", kcore_oracle),
        ("degree and density conventions", stats_convention),
        ("metrics equal brute-force oracle", metrics_oracle),
        ("communities rescue weak features", communities_rescue),
        ("no harm with sufficient features", no_harm),
        ("pair sampling ratios and disjointness", sampling_ratios),
        ("end-to-end determinism", end_to_end_determinism),
        ("classifier convexity", classifier_convexity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
