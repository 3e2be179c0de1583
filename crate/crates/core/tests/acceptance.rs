//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;

use rbaca_core::clustering::{gmm_fit, kmeans};
use rbaca_core::harness::config::desk_base;
use rbaca_core::harness::{preset, run_configured, run_rbaca, run_seed, run_seqfinetune, Event, RunConfig};
use rbaca_core::learner::TaskModel;
use rbaca_core::memory::{select, MemoryEvent, MemoryItem, MemoryMode, PruneParams, PruningStrategy};
use rbaca_core::metrics::{bwt, fwt, il_score, PerformanceMatrix};
use rbaca_core::rng::RngStream;
use rbaca_core::stream::Scenario;
use rbaca_core::types::{LabeledSample, Sample, StyleEmbedding};
use rbaca_core::Error;

const IL_TOL: f64 = 1e-3;
const TRANSFER_TOL: f64 = 1e-12;
const EGL_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const MONOTONE_SLACK: f64 = 1e-7;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Check; 10] = [
        ("IL-Score reproduces the reference segmentation and classification rows", il_rows),
        ("BWT/FWT match direct summation on random matrices", transfer_oracle),
        ("analytic EGL matches central finite differences", egl_finite_differences),
        ("head expansion leaves existing logits bitwise unchanged", expansion_bitwise),
        ("k-means inertia non-increasing, GMM log-likelihood non-decreasing, exhaustive 6-point k-means", clustering_monotone),
        ("every pruning strategy matches its subset oracle", pruning_oracles),
        ("randomized pipeline fuzz keeps budget and memory bounds", pipeline_fuzz),
        ("drift preset ordering against static replacement and sequential fine-tuning", drift_preset),
        ("runs are bitwise reproducible", determinism),
        ("degenerate streams: no shift gives one context, zero budget freezes the model", degenerate),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail})", i + 1);
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

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

// (name, BWT, FWT, task metric, IL-Score)
const SEG_ROWS: [(&str, f64, f64, f64, f64); 19] = [
    ("S", -0.032, 0.493, 0.554, 0.338),
    ("R11", -0.005, 0.583, 0.727, 0.435),
    ("C11", 0.002, 0.557, 0.709, 0.423),
    ("R41", 0.001, 0.581, 0.741, 0.441),
    ("C41", 0.003, 0.577, 0.729, 0.436),
    ("R81", 0.012, 0.579, 0.743, 0.445),
    ("C81", 0.012, 0.579, 0.743, 0.445),
    ("R12", -0.002, 0.577, 0.719, 0.431),
    ("C12", -0.001, 0.566, 0.7, 0.422),
    ("R42", 0.008, 0.578, 0.739, 0.442),
    ("C42", -0.007, 0.581, 0.734, 0.436),
    ("R82", 0.001, 0.582, 0.736, 0.44),
    ("C82", -0.013, 0.562, 0.718, 0.422),
    ("R13", 0.004, 0.562, 0.711, 0.426),
    ("C13", 0.005, 0.557, 0.69, 0.417),
    ("R43", 0.008, 0.582, 0.739, 0.443),
    ("C43", 0.006, 0.575, 0.731, 0.437),
    ("R83", 0.01, 0.582, 0.742, 0.445),
    ("C83", 0.003, 0.575, 0.732, 0.437),
];

const CLS_ROWS: [(&str, f64, f64, f64, f64); 19] = [
    ("S", -0.733, 0.074, 0.308, -0.117),
    ("R11", 0.025, 0.178, 0.114, 0.106),
    ("C11", 0.037, 0.165, 0.107, 0.103),
    ("R41", 0.027, 0.182, 0.118, 0.109),
    ("C41", 0.041, 0.166, 0.109, 0.105),
    ("R81", 0.027, 0.179, 0.118, 0.108),
    ("C81", 0.032, 0.17, 0.107, 0.103),
    ("R12", 0.025, 0.178, 0.114, 0.106),
    ("C12", 0.027, 0.163, 0.098, 0.096),
    ("R42", 0.027, 0.184, 0.119, 0.11),
    ("C42", 0.04, 0.164, 0.104, 0.103),
    ("R82", 0.035, 0.179, 0.118, 0.111),
    ("C82", 0.035, 0.168, 0.105, 0.103),
    ("R13", 0.016, 0.181, 0.111, 0.103),
    ("C13", 0.034, 0.166, 0.105, 0.102),
    ("R43", 0.024, 0.181, 0.118, 0.108),
    ("C43", 0.042, 0.167, 0.109, 0.106),
    ("R83", 0.03, 0.183, 0.119, 0.111),
    ("C83", 0.036, 0.169, 0.108, 0.104),
];

fn il_rows() -> Outcome {
    let mut worst: f64 = 0.0;
    for (table, rows) in [("segmentation", &SEG_ROWS), ("classification", &CLS_ROWS)] {
        for &(name, b, f, metric, il) in rows.iter() {
            let got = il_score(metric, b, f).map_err(|e| format!("{table} {name}: {e}"))?;
            worst = worst.max((got - il).abs());
            ensure((got - il).abs() <= IL_TOL, || format!("{table} {name}: {got} vs {il}"))?;
        }
    }
    Ok(format!("38 rows, max deviation {worst:.1e} <= {IL_TOL}"))
}

fn transfer_oracle() -> Outcome {
    let mut rng = RngStream::new(7).derive("transfer");
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let t = 2 + rng.below(9);
        let a: Vec<Vec<f64>> = (0..t).map(|_| (0..t).map(|_| rng.next_f64()).collect()).collect();
        let b: Vec<f64> = (0..t).map(|_| rng.next_f64()).collect();
        // 1-based copies so the sums read as written: R[i][j], b[j]
        let mut r = vec![vec![0.0; t + 1]; t + 1];
        let mut base = vec![0.0; t + 1];
        for i in 1..=t {
            base[i] = b[i - 1];
            for j in 1..=t {
                r[i][j] = a[i - 1][j - 1];
            }
        }
        let mut bwt_sum = 0.0;
        for i in 1..t {
            bwt_sum += r[t][i] - r[i][i];
        }
        let mut fwt_sum = 0.0;
        for i in 2..=t {
            fwt_sum += r[i - 1][i] - base[i];
        }
        let (want_b, want_f) = (bwt_sum / (t - 1) as f64, fwt_sum / (t - 1) as f64);
        let m = PerformanceMatrix::new(a, b).map_err(|e| e.to_string())?;
        let got_b = bwt(&m).map_err(|e| e.to_string())?;
        let got_f = fwt(&m).map_err(|e| e.to_string())?;
        let err = (got_b - want_b).abs().max((got_f - want_f).abs());
        worst = worst.max(err);
        ensure(err <= TRANSFER_TOL, || format!("case {case} (T={t}): error {err:e}"))?;
    }
    Ok(format!("1000 matrices, max error {worst:.1e} <= {TRANSFER_TOL:e}"))
}

fn model_from(classes: &[usize], weights: &[Vec<f64>], biases: &[f64]) -> Result<TaskModel<f64>, String> {
    let mut text = format!("rbaca-task-model 1\ndim {}\nclasses {}\n", weights[0].len(), classes.len());
    for ((c, w), b) in classes.iter().zip(weights).zip(biases) {
        text.push_str(&format!("unit {c} {b}"));
        for v in w {
            text.push_str(&format!(" {v}"));
        }
        text.push('\n');
    }
    TaskModel::read_checkpoint(text.as_bytes()).map_err(|e| e.to_string())
}

fn ce_loss(w: &[Vec<f64>], b: &[f64], x: &[f64], y: usize) -> f64 {
    let z: Vec<f64> = w
        .iter()
        .zip(b)
        .map(|(row, bj)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bj)
        .collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

fn egl_finite_differences() -> Outcome {
    let mut rng = RngStream::new(11).derive("egl");
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = 1 + rng.below(6);
        let k = 2 + rng.below(4);
        let w: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gaussian()).collect()).collect();
        let b: Vec<f64> = (0..k).map(|_| 0.5 * rng.gaussian()).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let classes: Vec<usize> = (0..k).map(|j| 3 * j + 1).collect();
        let model = model_from(&classes, &w, &b)?;
        let analytic = model.egl(&x).map_err(|e| e.to_string())?;
        let p = model.predict_proba(&x).map_err(|e| e.to_string())?;

        let mut expected = 0.0;
        for y in 0..k {
            let mut sq = 0.0;
            let fd = |w: &[Vec<f64>], b: &[f64]| ce_loss(w, b, &x, y);
            for j in 0..k {
                for i in 0..d {
                    let (mut wp, mut wm) = (w.clone(), w.clone());
                    wp[j][i] += FD_STEP;
                    wm[j][i] -= FD_STEP;
                    let g = (fd(&wp, &b) - fd(&wm, &b)) / (2.0 * FD_STEP);
                    sq += g * g;
                }
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[j] += FD_STEP;
                bm[j] -= FD_STEP;
                let g = (fd(&w, &bp) - fd(&w, &bm)) / (2.0 * FD_STEP);
                sq += g * g;
            }
            expected += p[y] * sq.sqrt();
        }
        let rel = (analytic - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure(rel < EGL_REL_TOL, || format!("case {case}: analytic {analytic} vs {expected}"))?;
    }
    Ok(format!("100 cases, max relative error {worst:.1e} < {EGL_REL_TOL:e}"))
}

fn expansion_bitwise() -> Outcome {
    let mut rng = RngStream::new(5).derive("expand");
    let dim = 6;
    let mut model =
        TaskModel::<f64>::random_init(dim, &[0, 1, 2], 0.5, &mut rng.derive("init")).map_err(|e| e.to_string())?;
    let inputs: Vec<Vec<f64>> = (0..50).map(|_| (0..dim).map(|_| 3.0 * rng.gaussian()).collect()).collect();
    let before: Vec<Vec<u64>> = inputs
        .iter()
        .map(|x| model.logits(x).map(|z| z.iter().map(|v| v.to_bits()).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for e in 0..20 {
        model.expand_head(3 + e).map_err(|e| e.to_string())?;
        for (i, x) in inputs.iter().enumerate() {
            let z = model.logits(x).map_err(|e| e.to_string())?;
            ensure(z.len() == 4 + e, || format!("head size {} after {} expansions", z.len(), e + 1))?;
            let old: Vec<u64> = z[..3].iter().map(|v| v.to_bits()).collect();
            ensure(old == before[i], || format!("input {i} changed after expansion {}", e + 1))?;
        }
    }
    Ok("50 inputs x 20 expansions".into())
}

fn inertia(points: &[[f64; 2]], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&[f64; 2]> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        let n = members.len() as f64;
        let mx = members.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = members.iter().map(|p| p[1]).sum::<f64>() / n;
        total += members.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>();
    }
    total
}

/// Partition as a set of member sets, so cluster numbering does not matter.
fn partition(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().insert(i);
    }
    groups.into_values().collect()
}

fn clustering_monotone() -> Outcome {
    let slack = |v: f64| MONOTONE_SLACK * v.abs().max(1.0);
    for seed in 0..200u64 {
        let mut rng = RngStream::new(seed).derive("clusters");
        let dim = 1 + rng.below(4);
        let n = 20 + rng.below(60);
        let centres: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| uniform(&mut rng, -6.0, 6.0)).collect()).collect();
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centres[rng.below(4)];
                c.iter().map(|m| m + rng.gaussian()).collect()
            })
            .collect();
        let k = 2 + rng.below(4);
        let km = kmeans(&pts, k, &mut rng.derive("kmeans"), 100, 1e-9).map_err(|e| e.to_string())?;
        for w in km.objective_trace.windows(2) {
            ensure(w[1] <= w[0] + slack(w[0]), || format!("seed {seed}: inertia rose {} -> {}", w[0], w[1]))?;
        }
        let gmm = gmm_fit(&pts, k, &mut rng.derive("gmm"), 100, 1e-9, 1e-6).map_err(|e| e.to_string())?;
        for w in gmm.log_likelihood_trace.windows(2) {
            ensure(w[1] >= w[0] - slack(w[0]), || format!("seed {seed}: log-likelihood fell {} -> {}", w[0], w[1]))?;
        }
    }

    let layouts: [(usize, [[f64; 2]; 6]); 2] = [
        (2, [[0.0, 0.0], [0.4, 0.9], [1.1, 0.2], [6.0, 5.0], [6.7, 5.8], [5.5, 6.1]]),
        (3, [[0.0, 0.0], [0.4, 0.9], [8.0, 8.0], [8.6, 7.1], [16.0, 0.3], [16.5, 1.4]]),
    ];
    for (k, points) in layouts {
        let mut best = (f64::INFINITY, Vec::new());
        for code in 0..k.pow(points.len() as u32) {
            let labels: Vec<usize> = (0..points.len()).map(|i| code / k.pow(i as u32) % k).collect();
            let v = inertia(&points, &labels, k);
            if v < best.0 - 1e-12 {
                best = (v, labels);
            }
        }
        let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        for seed in 0..10 {
            let r = kmeans(&pts, k, &mut RngStream::new(seed), 100, 1e-12).map_err(|e| e.to_string())?;
            let labels: Vec<usize> = r.assignments.iter().map(|a| a.expect("k-means assigns all")).collect();
            ensure(partition(&labels) == partition(&best.1), || format!("k={k} seed {seed}: partition differs"))?;
            let got = *r.objective_trace.last().expect("trace");
            ensure((got - best.0).abs() < 1e-9, || format!("k={k}: inertia {got} vs optimum {}", best.0))?;
        }
    }
    Ok("200 seeded runs within 1e-7 slack; k=2,3 optimum on 6 points".into())
}

fn item(id: u64, emb: &[f64], features: &[f64], last_used: usize) -> MemoryItem<f64> {
    MemoryItem {
        labeled: LabeledSample {
            sample: Sample {
                id,
                features: features.to_vec(),
                true_label: 0,
                context_tag: 0,
                stream_index: last_used,
            },
            label: 0,
            annotation_time: last_used,
        },
        embedding: StyleEmbedding::new(emb.to_vec()),
        last_used,
    }
}

fn subsets(n: usize, size: usize) -> Vec<BTreeSet<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn argbest<F: Fn(&BTreeSet<usize>) -> f64>(n: usize, size: usize, score: F) -> BTreeSet<usize> {
    let mut best: Option<(f64, BTreeSet<usize>)> = None;
    for s in subsets(n, size) {
        let v = score(&s);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, s));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean(points: &[&[f64]]) -> Vec<f64> {
    let n = points.len() as f64;
    (0..points[0].len()).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n).collect()
}

fn sign_model() -> Result<TaskModel<f64>, String> {
    model_from(&[0, 1], &[vec![4.0], vec![-4.0]], &[0.0, 0.0])
}

fn pruning_oracles() -> Outcome {
    let model = sign_model()?;
    let mut params = PruneParams {
        kmeans_clusters: 2,
        gmm_components: 2,
        dbscan_eps: 1.0,
        dbscan_min_pts: 2,
        ..PruneParams::default()
    };
    let mut rng = RngStream::new(3).derive("pruning-oracle");
    let mut checked = 0;

    // two blobs of 5 and 3 items, far apart
    let blob_a: [[f64; 2]; 5] = [[0.0, 0.0], [0.31, 0.05], [-0.12, 0.47], [0.58, -0.21], [-0.4, -0.36]];
    let blob_b: [[f64; 2]; 3] = [[20.0, 20.0], [20.27, 19.6], [19.5, 20.41]];
    let groups: [Vec<usize>; 2] = [(0..5).collect(), (5..8).collect()];
    // largest remainder of target t over sizes 5 and 3, worked by hand
    let quotas = [(1, 0), (1, 1), (2, 1), (3, 1)];

    for trial in 0..20 {
        let mut recency: Vec<usize> = (0..8).map(|i| 10 * i + 3).collect();
        rng.shuffle(&mut recency);
        let items: Vec<MemoryItem<f64>> = blob_a
            .iter()
            .chain(&blob_b)
            .enumerate()
            .map(|(i, e)| item(i as u64, e, &[uniform(&mut rng, -1.0, 1.0)], recency[i]))
            .collect();
        let unc: Vec<f64> = items.iter().map(|it| model.uncertainty(it.labeled.features()).unwrap()).collect();
        let egl: Vec<f64> = items.iter().map(|it| model.egl(it.labeled.features()).unwrap()).collect();
        let embs: Vec<&[f64]> = items.iter().map(|it| it.embedding.as_slice()).collect();
        let centres: Vec<Vec<f64>> =
            groups.iter().map(|g| mean(&g.iter().map(|&i| embs[i]).collect::<Vec<_>>())).collect();

        for target in 1..=4 {
            let (qa, qb) = quotas[target - 1];
            // nearest q of a group: the q-subset with the smallest total distance
            let nearest = |g: usize, q: usize| -> BTreeSet<usize> {
                let members = &groups[g];
                argbest(members.len(), q, |s| -s.iter().map(|&i| dist(embs[members[i]], &centres[g])).sum::<f64>())
                    .into_iter()
                    .map(|i| members[i])
                    .collect()
            };
            // ceil(q/2) nearest plus the best-scoring floor(q/2) of the rest
            let hybrid = |g: usize, q: usize, scores: &[f64]| -> BTreeSet<usize> {
                let near = nearest(g, q.div_ceil(2));
                let members = &groups[g];
                argbest(members.len(), q, |s| {
                    let chosen: BTreeSet<usize> = s.iter().map(|&i| members[i]).collect();
                    if !near.is_subset(&chosen) {
                        return f64::NEG_INFINITY;
                    }
                    chosen.difference(&near).map(|&i| scores[i]).sum()
                })
                .into_iter()
                .map(|i| members[i])
                .collect()
            };
            let proximity: BTreeSet<usize> = nearest(0, qa).union(&nearest(1, qb)).copied().collect();
            let expectations: Vec<(PruningStrategy, BTreeSet<usize>)> = vec![
                (PruningStrategy::Lru, argbest(8, target, |s| s.iter().map(|&i| recency[i] as f64).sum())),
                (PruningStrategy::LruClosest, argbest(8, target, |s| s.iter().map(|&i| recency[i] as f64).sum())),
                (PruningStrategy::Uncertainty, argbest(8, target, |s| s.iter().map(|&i| unc[i]).sum())),
                (PruningStrategy::Egl, argbest(8, target, |s| s.iter().map(|&i| egl[i]).sum())),
                (PruningStrategy::KMeans, proximity.clone()),
                (PruningStrategy::Gmm, proximity.clone()),
                (PruningStrategy::Dbscan, proximity.clone()),
                (PruningStrategy::KU, hybrid(0, qa, &unc).union(&hybrid(1, qb, &unc)).copied().collect()),
                (PruningStrategy::EglGmm, hybrid(0, qa, &egl).union(&hybrid(1, qb, &egl)).copied().collect()),
            ];
            for (strategy, want) in expectations {
                let got: BTreeSet<usize> = select(&items, target, strategy, &params, Some(&model), &mut rng)
                    .map_err(|e| format!("{}: {e}", strategy.name()))?
                    .into_iter()
                    .collect();
                ensure(got == want, || {
                    format!("trial {trial} {} target {target}: kept {got:?}, oracle {want:?}", strategy.name())
                })?;
                checked += 1;
            }
        }
    }

    // hand trace of the proximity/informativeness split in a single cluster:
    // centroid -0.22; distance order 2, 0, 1, 3, 4; item 3 is the most
    // uncertain and has the largest EGL, item 1 comes next on both
    params.kmeans_clusters = 1;
    params.gmm_components = 1;
    let xs = [0.0, 0.1, -0.2, 3.0, -4.0];
    let feats = [2.0, 0.05, 1.5, 0.0, -1.0];
    let items: Vec<MemoryItem<f64>> =
        (0..5).map(|i| item(i as u64, &[xs[i]], &[feats[i]], i)).collect();
    let traces: [(usize, &[usize]); 4] = [(1, &[2]), (2, &[2, 3]), (3, &[0, 2, 3]), (4, &[0, 1, 2, 3])];
    for strategy in [PruningStrategy::KU, PruningStrategy::EglGmm] {
        for (q, want) in traces {
            let got = select(&items, q, strategy, &params, Some(&model), &mut rng).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("{} q={q}: kept {got:?}, expected {want:?}", strategy.name()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} selections, 9 strategies, 8 items, targets 1..=4"))
}

fn random_config(rng: &mut RngStream) -> RunConfig {
    let mut cfg = desk_base();
    let s = &mut cfg.stream;
    s.n_contexts = 2 + rng.below(3);
    s.context_order = (0..s.n_contexts).collect();
    rng.shuffle(&mut s.context_order);
    s.samples_per_context = 50 + rng.below(100);
    s.base_size = 20 + rng.below(40);
    s.val_per_context = 10;
    s.test_per_context = 20;
    s.n_classes = 2 + rng.below(2);
    s.scenario = if rng.below(2) == 0 { Scenario::DomainIL } else { Scenario::ClassIL };
    s.feature_dim = (s.n_contexts + 2).max(3) + rng.below(3);
    s.context_shift = uniform(rng, 0.0, 6.0);
    cfg.pd_threshold = uniform(rng, 2.0, 6.0);
    cfg.d_new = uniform(rng, 1.5, 4.0);
    cfg.m_new = 2 + rng.below(6);
    cfg.max_age = 20 + rng.below(200);
    cfg.beta = rng.below(120);
    cfg.memory.mode = if rng.below(2) == 0 {
        MemoryMode::Static { capacity: 1 + rng.below(60) }
    } else {
        let k = 1 + rng.below(20);
        MemoryMode::Dynamic {
            k,
            dm_i: 1 + rng.below(4),
            max_system: k + rng.below(80),
        }
    };
    cfg.memory.pruning = PruningStrategy::ALL[rng.below(PruningStrategy::ALL.len())];
    cfg.memory.params.kmeans_clusters = 1 + rng.below(5);
    cfg.memory.params.gmm_components = 1 + rng.below(4);
    cfg.memory.params.dbscan_eps = uniform(rng, 0.5, 3.0);
    cfg.policy = if rng.below(2) == 0 {
        rbaca_core::al_policy::AlPolicy::Perf { threshold: uniform(rng, 0.3, 1.0) }
    } else {
        rbaca_core::al_policy::AlPolicy::UncertaintyThreshold { u_th: uniform(rng, 0.0, 0.9) }
    };
    cfg.train.base_epochs = 3;
    cfg.train.rehearsal_epochs = 1;
    cfg.train.retrain_patience = 1 + rng.below(20);
    cfg.seeds = vec![rng.below(1000) as u64];
    cfg
}

fn pipeline_fuzz() -> Outcome {
    let mut rng = RngStream::new(2024).derive("fuzz");
    let mut events_checked = 0;
    for case in 0..50 {
        let cfg = random_config(&mut rng);
        cfg.validate().map_err(|e| format!("case {case}: generated config invalid: {e}"))?;
        let seed = cfg.seeds[0];
        let run = match run_seed::<f64>(&cfg, seed) {
            Ok(r) => r,
            Err(e @ Error::InvariantBreach { .. }) => return Err(format!("case {case}: {e}")),
            Err(e) => return Err(format!("case {case}: run failed: {e}")),
        };
        let bound = cfg.memory.mode.total_bound();
        let mut stored: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        let mut annotations = 0;
        for (i, ev) in run.events.iter().enumerate() {
            match ev {
                Event::Annotation { .. } => annotations += 1,
                Event::Memory(MemoryEvent::Insert { pc, sample_id }) => {
                    stored.entry(*pc).or_default().insert(*sample_id);
                }
                Event::Memory(MemoryEvent::Evict { pc, sample_id }) => {
                    stored.entry(*pc).or_default().remove(sample_id);
                }
                _ => {}
            }
            let total: usize = stored.values().map(BTreeSet::len).sum();
            ensure(total <= bound, || format!("case {case} event {i}: {total} stored > bound {bound}"))?;
            ensure(annotations <= cfg.beta, || format!("case {case} event {i}: {annotations} labels > {}", cfg.beta))?;
            events_checked += 1;
        }
        let r = &run.report;
        ensure(r.label_counter == annotations && r.label_counter <= cfg.beta, || {
            format!("case {case}: label counter {} vs {annotations} events", r.label_counter)
        })?;
        let mut snap: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for rec in &r.memory {
            snap.entry(rec.pc_id).or_default().insert(rec.sample_id);
        }
        stored.retain(|_, v| !v.is_empty());
        ensure(snap == stored, || format!("case {case}: replayed memory differs from snapshot"))?;
    }
    Ok(format!("50 configs, {events_checked} event prefixes, 0 violations"))
}

fn drift_preset() -> Outcome {
    let dm3 = run_rbaca::<f64>(&preset("desk-dm3-kmeans-perf").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let dbs = run_rbaca::<f64>(&preset("desk-static-dbscan-uth").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let casa = run_configured::<f64>(&preset("desk-casa").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let seq = run_seqfinetune::<f64>(&desk_base()).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut above_seq = 0;
    let mut lines = Vec::new();
    for i in 0..3 {
        let best = dm3.seeds[i].il_score.max(dbs.seeds[i].il_score);
        let (c, s) = (casa.seeds[i].il_score, seq.seeds[i].il_score);
        wins += usize::from(best > c);
        above_seq += usize::from(best > s && c > s);
        lines.push(format!("seed {}: {best:.4}/{c:.4}/{s:.4}", dm3.seeds[i].seed));
    }
    let detail = format!("rbaca/casa/seq IL {}; wins {wins}/3, above seq {above_seq}/3", lines.join(", "));
    ensure(wins >= 2 && above_seq == 3, || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let mut checked = Vec::new();
    for name in ["desk-dm3-kmeans-perf", "desk-static-dbscan-uth"] {
        let cfg = preset(name).map_err(|e| e.to_string())?;
        let a = run_rbaca::<f64>(&cfg).map_err(|e| e.to_string())?;
        let b = run_rbaca::<f64>(&cfg).map_err(|e| e.to_string())?;
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut ja).map_err(|e| e.to_string())?;
        b.write_jsonl(&mut jb).map_err(|e| e.to_string())?;
        ensure(a == b && ja == jb, || format!("{name}: f64 reports differ"))?;
        let a = run_rbaca::<f32>(&cfg).map_err(|e| e.to_string())?;
        let b = run_rbaca::<f32>(&cfg).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name}: f32 reports differ"))?;
        checked.push(name);
    }
    Ok(format!("{} repeated in f64 and f32", checked.join(", ")))
}

fn degenerate() -> Outcome {
    let mut cfg = preset("desk-dm3-kmeans-perf").map_err(|e| e.to_string())?;
    cfg.stream.context_shift = 0.0;
    let r = run_rbaca::<f64>(&cfg).map_err(|e| e.to_string())?;
    for s in &r.seeds {
        ensure(s.n_pcs == 1, || format!("shift 0, seed {}: {} pseudo-contexts", s.seed, s.n_pcs))?;
    }

    let mut cfg = preset("desk-dm3-kmeans-perf").map_err(|e| e.to_string())?;
    cfg.beta = 0;
    for &seed in &cfg.seeds {
        let run = run_seed::<f64>(&cfg, seed).map_err(|e| e.to_string())?;
        let s = &run.report;
        ensure(s.label_counter == 0, || format!("beta 0, seed {seed}: {} labels", s.label_counter))?;
        let first: Vec<u64> = s.matrix.rows()[0].iter().map(|v| v.to_bits()).collect();
        for (i, row) in s.matrix.rows().iter().enumerate() {
            let bits: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            ensure(bits == first, || format!("beta 0, seed {seed}: row {i} differs from the base model"))?;
        }
        let after_init = &run.events[run.initial_events..];
        ensure(after_init.is_empty(), || {
            format!("beta 0, seed {seed}: {} events after initialisation", after_init.len())
        })?;
    }
    Ok("shift 0 gives 1 pseudo-context per seed; beta 0 gives 0 labels and identical rows".into())
}
