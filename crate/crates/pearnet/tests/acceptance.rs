//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pearnet::cli::{cmd_ablate, cmd_train, RunConfig};
use pearnet::diff::gradcheck::check_gradients;
use pearnet::diff::{Padding, Tape, Tensor};
use pearnet::graph::{
    aggregate, learn_adjacency, normalize_attention, AdjacencyInit, GraphAttention, GraphConfig, Mechanism,
};
use pearnet::model::{weighted_cross_entropy_value, ModelConfig, PearNetModel};
use pearnet::nodegen::vif::{modified_sigmoid, pearson_matrix, vif_all, vif_loss, vif_loss_value};
use pearnet::nodegen::{node_count, NodeGenerator, SpatialConfig, TemporalConfig};
use pearnet::params::{Bound, ParamStore};
use pearnet::signal::SynthConfig;
use pearnet::train::{AdamW, AdamWConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), uniform(rng, shape.iter().product())).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ----- 1 ---------------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let model = PearNetModel::new(ModelConfig::tiny(), 0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let epochs: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, 40).iter().map(|v| 2.0 * v).collect()).collect();
    let batch: Vec<&[f64]> = epochs.iter().map(Vec::as_slice).collect();
    let weights = [1.0, 1.5, 1.0, 0.8, 1.2];
    let report = check_gradients(model.store.values(), 1e-6, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let mut dropout = ChaCha8Rng::seed_from_u64(7);
        Ok(model.total_loss(tape, &p, &batch, &[0, 3], &weights, true, true, &mut dropout)?.total)
    })
    .map_err(err)?;
    let elapsed = start.elapsed();
    ensure(report.passes(1e-5), || format!("max relative error {:.3e}", report.max_rel_error))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} scalars in {} tensors, max rel err {:.2e}, {:.1?}",
        report.checked,
        model.store.len(),
        report.max_rel_error,
        elapsed
    ))
}

// ----- 2 ---------------------------------------------------------------------

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// `1/(1-R²)` from regressing node `i` on the other nodes plus an intercept.
fn regression_vif(rows: &[Vec<f64>], i: usize) -> f64 {
    let f = rows[0].len();
    let y = &rows[i];
    let design: Vec<Vec<f64>> = (0..f)
        .map(|t| {
            std::iter::once(1.0).chain(rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r[t])).collect()
        })
        .collect();
    let m = design[0].len();
    let xtx = (0..m).map(|a| (0..m).map(|b| (0..f).map(|t| design[t][a] * design[t][b]).sum()).collect()).collect();
    let xty = (0..m).map(|a| (0..f).map(|t| design[t][a] * y[t]).sum()).collect();
    let beta = solve(xtx, xty);
    let mean = y.iter().sum::<f64>() / f as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse: f64 = (0..f).map(|t| (y[t] - (0..m).map(|a| beta[a] * design[t][a]).sum::<f64>()).powi(2)).sum();
    sst / sse
}

fn vif_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 200 {
        let n = rng.random_range(3..=10);
        let f = rng.random_range((n + 4).max(8)..=32);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut rng, f)).collect();
        let p = pearson_matrix(&Tensor::from_rows(&rows).unwrap()).map_err(err)?;
        let factors = match vif_all(&p) {
            Ok(v) => v,
            Err(_) => continue,
        };
        for (i, v) in factors.iter().enumerate() {
            let r = regression_vif(&rows, i);
            worst = worst.max((v - r).abs() / r);
        }
        instances += 1;
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-8, || format!("worst relative gap {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:.1?}"))?;
    Ok(format!("200 node sets, worst relative gap {worst:.2e}, {elapsed:.1?}"))
}

// ----- 3 ---------------------------------------------------------------------

fn hadamard_rows(order: usize, n: usize) -> Tensor {
    let h = |i: usize, j: usize| if (i & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
    Tensor::from_rows(&(1..=n).map(|i| (0..order).map(|j| h(i, j)).collect()).collect::<Vec<_>>()).unwrap()
}

fn vif_fixed_point() -> Outcome {
    let mut max_loss = 0.0f64;
    for (order, n) in [(4, 3), (8, 5), (8, 7), (16, 12), (32, 15)] {
        let nodes = hadamard_rows(order, n);
        for v in vif_all(&pearson_matrix(&nodes).map_err(err)?).map_err(err)? {
            ensure((v - 1.0).abs() <= 1e-9, || format!("VIF {v} for {n} orthogonal nodes"))?;
            ensure((modified_sigmoid(v) - 0.5).abs() <= 1e-12, || format!("delta(VIF) = {}", modified_sigmoid(v)))?;
        }
        let mut tape = Tape::new();
        let x = tape.constant(nodes.clone());
        let l = vif_loss(&mut tape, x).map_err(err)?;
        max_loss = max_loss.max(tape.value(l).item()).max(vif_loss_value(&nodes).map_err(err)?);
    }
    ensure(max_loss <= 1e-18, || format!("L_vif = {max_loss:e}"))?;
    Ok(format!("5 orthogonal sets, max L_vif {max_loss:.1e}"))
}

// ----- 4 ---------------------------------------------------------------------

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for inst in 0..200 {
        let mechanism = Mechanism::ALL[inst % 3];
        let n = rng.random_range(3..=12);
        let f = rng.random_range(2..=8);
        let init = if inst % 2 == 0 { AdjacencyInit::Zero } else { AdjacencyInit::Uniform };
        let cfg = GraphConfig {
            mechanism,
            heads: 2,
            out_dim: rng.random_range(2..=6),
            adjacency_init: init,
            ..GraphConfig::default()
        };
        let mut store = ParamStore::new();
        let ga = GraphAttention::new(&mut store, &mut rng, &cfg, f).map_err(err)?;
        for head in &ga.heads {
            if let Some(b) = head.beta {
                *store.get_mut(b) = Tensor::vector(vec![rng.random_range(0.1..3.0)]);
            }
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(tensor(&mut rng, &[n, f]));
        let trace = ga.forward(&mut tape, &p, x).map_err(err)?;
        for (h, head) in trace.heads.iter().enumerate() {
            let e = tape.value(head.e);
            let alpha = tape.value(head.alpha);
            let a = &head.adjacency.a;
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    let member = i == j || a.at2(i, j) > 0.0;
                    let v = alpha.at2(i, j);
                    ensure(member || v == 0.0, || {
                        format!("instance {inst}: alpha[{i}][{j}] = {v} off the neighbourhood")
                    })?;
                    sum += v;
                    ensure(a.at2(i, j) >= 0.0, || format!("instance {inst}: negative adjacency"))?;
                }
                ensure((sum - 1.0).abs() <= 1e-12, || format!("instance {inst}: row {i} sums to {sum}"))?;
            }
            let support: Vec<(usize, usize)> =
                (0..n * n).filter(|&k| a.data()[k] > 0.0).map(|k| (k / n, k % n)).collect();
            ensure(head.adjacency.edges == support, || format!("instance {inst}: edge set differs from support"))?;
            if mechanism == Mechanism::Pearson {
                let beta = tape.value(p.var(ga.heads[h].beta.unwrap())).item();
                for i in 0..n {
                    for j in 0..n {
                        let r = e.at2(i, j) / beta;
                        ensure((0.0..=1.0 + 1e-15).contains(&r), || format!("instance {inst}: e/beta = {r}"))?;
                        ensure((e.at2(i, j) - e.at2(j, i)).abs() <= 1e-12, || {
                            format!("instance {inst}: e asymmetric")
                        })?;
                    }
                }
                if init == AdjacencyInit::Zero {
                    ensure(a == e, || format!("instance {inst}: A != e under a zero MLP"))?;
                }
            }
        }
    }
    Ok("200 random instances over all three mechanisms".into())
}

// ----- 5 ---------------------------------------------------------------------

fn causality_and_structure() -> Outcome {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (s, l_max) = (5, 3);
    let g = NodeGenerator::new(&mut store, &mut rng, &SpatialConfig::tiny(), &TemporalConfig::default(), 60, s, l_max)
        .map_err(err)?;
    let x = uniform(&mut rng, 60);
    let base = g.generate_nodes(&store, &x).map_err(err)?;
    let mut checked = 0;
    for t in 1..s {
        let mut y = x.clone();
        for v in &mut y[t * 12..(t + 1) * 12] {
            *v += rng.random_range(0.5..1.5);
        }
        let moved = g.generate_nodes(&store, &y).map_err(err)?;
        for (k, info) in base.provenance.iter().enumerate() {
            if info.segment < t {
                ensure(base.features.row(k) == moved.features.row(k), || {
                    format!("level {} segment {} changed after perturbing segment {t}", info.level, info.segment)
                })?;
                checked += 1;
            } else if info.segment == t && info.level == 0 {
                ensure(base.features.row(k) != moved.features.row(k), || "perturbation had no effect".into())?;
            }
        }
    }
    for s in [2, 5, 8] {
        for l in [0, 2, 3] {
            let cfg = ModelConfig { s_count: s, l_max: l, ..ModelConfig::default() };
            let mut store = ParamStore::new();
            let g = NodeGenerator::new(&mut store, &mut rng, &cfg.spatial, &cfg.temporal, cfg.epoch_len, s, l)
                .map_err(err)?;
            let nodes = g.generate_nodes(&store, &vec![0.1; cfg.epoch_len]).map_err(err)?;
            ensure(nodes.node_count() == s * (l + 1) && node_count(s, l) == s * (l + 1), || {
                format!("S={s} L={l}: {} nodes", nodes.node_count())
            })?;
            ensure(nodes.features.shape()[0] == s * (l + 1), || "feature rows".into())?;
        }
    }
    Ok(format!("{checked} past nodes unchanged across 3 levels; |V| correct on 9 grid points"))
}

// ----- 6 ---------------------------------------------------------------------

fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, d: usize, pad: Padding) -> Option<Tensor> {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let span = (k - 1) * d;
    let (left, right) = match pad {
        Padding::None => (0, 0),
        Padding::CausalLeft => (span, 0),
        Padding::Symmetric => (span / 2, span - span / 2),
    };
    let padded = len + left + right;
    if padded <= span {
        return None;
    }
    let l_out = (padded - span - 1) / stride + 1;
    let mut out = vec![0.0; c_out * l_out];
    for o in 0..c_out {
        for h in 0..l_out {
            // anchor at the newest input covered by the window
            let anchor = (h * stride + span) as isize - left as isize;
            for c in 0..c_in {
                for i in 0..k {
                    let pos = anchor - (i * d) as isize;
                    if pos >= 0 && (pos as usize) < len {
                        out[o * l_out + h] += w.data()[(o * c_in + c) * k + i] * x.data()[c * len + pos as usize];
                    }
                }
            }
        }
    }
    Some(Tensor::new(vec![c_out, l_out], out).unwrap())
}

fn oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs());

    // conv1d
    let mut convs = 0;
    while convs < 60 {
        let (c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let len = rng.random_range(3..=20);
        let k = rng.random_range(1..=4);
        let (stride, d) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let pad = [Padding::None, Padding::CausalLeft, Padding::Symmetric][rng.random_range(0..3)];
        let x = tensor(&mut rng, &[c_in, len]);
        let w = tensor(&mut rng, &[c_out, c_in, k]);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        match (tape.conv1d(xv, wv, None, stride, d, pad), conv_oracle(&x, &w, stride, d, pad)) {
            (Ok(y), Some(want)) => {
                ensure(tape.shape(y) == want.shape(), || "conv shape".into())?;
                for (a, b) in tape.value(y).data().iter().zip(want.data()) {
                    track(*a, *b);
                }
                convs += 1;
            }
            (Err(_), None) => {}
            _ => return Err("conv1d and oracle disagree on validity".into()),
        }
    }

    // adjacency, attention normalisation and aggregation
    for _ in 0..60 {
        let n = rng.random_range(2..=7);
        let hidden = rng.random_range(1..=16);
        let (w1, w2) = (uniform(&mut rng, hidden), uniform(&mut rng, hidden));
        let e = tensor(&mut rng, &[n, n]);
        let adj = learn_adjacency(&e, &w1, &w2).map_err(err)?;
        for i in 0..n {
            for j in 0..n {
                let x = e.at2(i, j);
                let inner: f64 = (0..hidden).map(|k| w2[k] * (w1[k] * x).max(0.0)).sum();
                track(adj.a.at2(i, j), (x + inner).max(0.0));
            }
        }
        let fo = rng.random_range(1..=5);
        let wh = tensor(&mut rng, &[n, fo]);
        let mut tape = Tape::new();
        let (ev, whv) = (tape.constant(e.clone()), tape.constant(wh.clone()));
        let alpha = normalize_attention(&mut tape, ev, &adj).map_err(err)?;
        let out = aggregate(&mut tape, alpha, whv).map_err(err)?;
        let al = tape.value(alpha).clone();
        for i in 0..n {
            let members: Vec<usize> = (0..n).filter(|&j| j == i || adj.a.at2(i, j) > 0.0).collect();
            let z: f64 = members.iter().map(|&j| e.at2(i, j).exp()).sum();
            for &j in &members {
                track(al.at2(i, j), e.at2(i, j).exp() / z);
            }
            for c in 0..fo {
                let mut s = 0.0;
                for j in 0..n {
                    s += al.at2(i, j) * wh.at2(j, c);
                }
                track(tape.value(out).at2(i, c), s);
            }
        }
    }

    // weighted cross-entropy
    for _ in 0..60 {
        let b = rng.random_range(1..=8);
        let mut probs = Vec::new();
        for _ in 0..b {
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / z));
        }
        let labels: Vec<u8> = (0..b).map(|_| rng.random_range(0..5)).collect();
        let mut w = [0.0; 5];
        w.iter_mut().for_each(|v| *v = rng.random_range(0.1..3.0));
        let got =
            weighted_cross_entropy_value(&Tensor::new(vec![b, 5], probs.clone()).unwrap(), &labels, &w).map_err(err)?;
        let mut want = 0.0;
        for i in 0..b {
            for k in 0..5 {
                if labels[i] as usize == k {
                    want -= w[k] * probs[i * 5 + k].ln();
                }
            }
        }
        track(got, want / b as f64);
    }

    // attention mechanisms
    for inst in 0..60 {
        let mechanism = Mechanism::ALL[inst % 3];
        let (n, f, fo) = (rng.random_range(3..=6), rng.random_range(2..=6), rng.random_range(2..=5));
        let cfg = GraphConfig { mechanism, heads: 1, out_dim: fo, ..GraphConfig::default() };
        let mut store = ParamStore::new();
        let ga = GraphAttention::new(&mut store, &mut rng, &cfg, f).map_err(err)?;
        let head = &ga.heads[0];
        let beta = rng.random_range(0.2..2.0);
        if let Some(b) = head.beta {
            *store.get_mut(b) = Tensor::vector(vec![beta]);
        }
        let h = tensor(&mut rng, &[n, f]);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(h.clone());
        let t = ga.forward(&mut tape, &p, x).map_err(err)?;
        let w = store.get(head.w);
        let wh: Vec<Vec<f64>> =
            (0..n).map(|i| (0..fo).map(|o| (0..f).map(|k| h.at2(i, k) * w.at2(k, o)).sum()).collect()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&wh[i], &wh[j]);
                let want = match mechanism {
                    Mechanism::Pearson => {
                        let (ma, mb) = (mean(a), mean(b));
                        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
                        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
                        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
                        beta * (cov / (va * vb).sqrt()).abs()
                    }
                    Mechanism::Cosine => {
                        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                        beta * dot / (na * nb)
                    }
                    Mechanism::GatFf => {
                        let (a1, a2) = head.ff.unwrap();
                        let (a1, a2) = (store.get(a1).data(), store.get(a2).data());
                        let s: f64 = (0..fo).map(|o| a1[o] * a[o] + a2[o] * b[o]).sum();
                        if s >= 0.0 {
                            s
                        } else {
                            0.2 * s
                        }
                    }
                };
                track(tape.value(t.heads[0].e).at2(i, j), want);
            }
        }
    }

    ensure(worst <= 1e-12, || format!("worst absolute gap {worst:.3e}"))?;
    Ok(format!("60 instances each of conv1d, adjacency, attention softmax, aggregation, cross-entropy, 3 mechanisms; worst gap {worst:.1e}"))
}

// ----- 7 ---------------------------------------------------------------------

fn synthetic_run_config(seed: u64) -> RunConfig {
    RunConfig {
        tag: "acceptance".into(),
        synth: SynthConfig::default(),
        model: ModelConfig::default(),
        train: TrainConfig { epochs: 40, batch_size: 32, k_folds: 5, ..TrainConfig::default() },
        ..RunConfig::default()
    }
    .with_seed(seed)
}

fn synthetic_end_to_end(root: &Path) -> Outcome {
    let cfg = synthetic_run_config(0);
    let start = Instant::now();
    let first = cmd_train(&cfg, &root.join("run_a"), false, |_| {}).map_err(err)?;
    let elapsed = start.elapsed();
    let second = cmd_train(&cfg, &root.join("run_b"), false, |_| {}).map_err(err)?;
    let read = |dir: &Path| std::fs::read(dir.join("metrics.json")).map_err(err);
    let (a, b) = (read(&first.dir)?, read(&second.dir)?);
    let pooled = &first.outcome.report.pooled;
    ensure(a == b, || "metrics.json differs between identical runs".into())?;
    ensure(pooled.total == 250, || format!("{} evaluated epochs", pooled.total))?;
    ensure(pooled.accuracy >= 0.90, || format!("accuracy {:.4}", pooled.accuracy))?;
    ensure(pooled.macro_f1 >= 0.88, || format!("macro-F1 {:.4}", pooled.macro_f1))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "accuracy {:.4}, macro-F1 {:.4}, {:.1?} per run, rerun byte-identical",
        pooled.accuracy, pooled.macro_f1, elapsed
    ))
}

// ----- 8 ---------------------------------------------------------------------

fn ablation_harness(root: &Path) -> Outcome {
    let cfg = RunConfig {
        tag: "ablate".into(),
        synth: SynthConfig { n_per_class: 10, ..SynthConfig::default() },
        train: TrainConfig { epochs: 2, batch_size: 25, k_folds: 2, ..TrainConfig::default() },
        ..RunConfig::default()
    }
    .with_seed(8);
    let dir = root.join("ablate");
    let rows = cmd_ablate(&cfg, &dir, false, |_| {}).map_err(err)?;
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let expected = [
        "Base(2, 2)",
        "Base(5, 2)",
        "Base(8, 2)",
        "Level(5, 0)",
        "Level(5, 3)",
        "Atten(5, 2) gat_ff",
        "Atten(5, 2) cosine",
        "Atten(5, 2) pearson",
        "VIF(5, 2) without VIF",
        "VIF(5, 2) with VIF",
    ];
    ensure(labels == expected, || format!("rows {labels:?}"))?;
    let table = std::fs::read_to_string(dir.join("ablation.txt")).map_err(err)?;
    ensure(table.lines().count() == 11, || "table should have a header and 10 rows".into())?;
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("ablation.json")).map_err(err)?).map_err(err)?;
    ensure(parsed.as_array().map(Vec::len) == Some(10), || "ablation.json rows".into())?;
    ensure(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.macro_f1)), || {
        "metric out of range".into()
    })?;

    let single = cmd_train(&cfg, &root.join("single"), false, |_| {}).map_err(err)?;
    let pooled = &single.outcome.report.pooled;
    let mut gap = 0.0f64;
    for r in rows.iter().filter(|r| r.s_count == 5 && r.l_max == 2 && r.mechanism == Mechanism::Pearson && r.vif_loss) {
        gap = gap.max((r.accuracy - pooled.accuracy).abs()).max((r.macro_f1 - pooled.macro_f1).abs());
        for k in 0..5 {
            gap = gap.max((r.per_class_f1[k] - pooled.per_class_f1[k]).abs());
        }
    }
    ensure(gap <= 1e-12, || format!("base row differs from a separate training run by {gap:e}"))?;
    let report: Vec<String> = rows.iter().map(|r| format!("{} {:.3}/{:.3}", r.label, r.accuracy, r.macro_f1)).collect();
    Ok(format!("10 rows, base row matches separate run (gap {gap:.0e}); acc/MF1: {}", report.join("; ")))
}

// ----- 9 ---------------------------------------------------------------------

fn optimizer_trace() -> Outcome {
    let mut worst = 0.0f64;
    for (amsgrad, wd) in [(true, 1e-4), (true, 0.05), (false, 0.0)] {
        let cfg = AdamWConfig { lr: 0.05, amsgrad, weight_decay: wd, ..AdamWConfig::default() };
        // hand-stepped reference on f(θ) = 2(θ + 1)², gradient 4(θ + 1)
        let (mut theta, mut m, mut v, mut vmax) = (2.5f64, 0.0, 0.0, 0.0f64);
        let mut params = vec![Tensor::vector(vec![2.5])];
        let mut opt = AdamW::new(cfg.clone(), &params);
        for t in 1..=10 {
            let g = 4.0 * (theta + 1.0);
            theta -= cfg.lr * cfg.weight_decay * theta;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            vmax = vmax.max(v);
            let second = if amsgrad { vmax } else { v };
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = second / (1.0 - cfg.beta2.powi(t));
            theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);

            let grad = 4.0 * (params[0].data()[0] + 1.0);
            opt.step(&mut params, &[Tensor::vector(vec![grad])]).map_err(err)?;
            worst = worst.max((params[0].data()[0] - theta).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("trajectory gap {worst:e}"))?;
    Ok(format!("10 steps x 3 settings, worst gap {worst:.1e}"))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("VIF oracle equivalence", Box::new(vif_oracle_equivalence)),
        ("VIF loss fixed point", Box::new(vif_fixed_point)),
        ("attention invariants", Box::new(attention_invariants)),
        ("causality and structure", Box::new(causality_and_structure)),
        ("oracle equivalence suite", Box::new(oracle_suite)),
        ("synthetic end-to-end", Box::new(|| synthetic_end_to_end(root.path()))),
        ("ablation harness", Box::new(|| ablation_harness(root.path()))),
        ("optimizer trace", Box::new(optimizer_trace)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
