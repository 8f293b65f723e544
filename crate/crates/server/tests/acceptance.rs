//! Acceptance suite. Runs every criterion in order and prints one line each:
//!
//! ```text
//! PASS  gradient oracle (0.04 s)
//! SKIP  smoking dimension (EN/DE): set SUPDIM_EN_VECTORS and SUPDIM_DE_VECTORS
//! ```
//!
//! The two criteria that need public aligned fastText vectors are skipped
//! unless `SUPDIM_EN_VECTORS` (and, for German, `SUPDIM_DE_VECTORS`) point at
//! `.vec` files or embedding caches. `SUPDIM_DE_ALIGNMENT` optionally names an
//! alignment map for spaces that are not pre-aligned.
//!
//! Exits non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};
use supdim::classifier::{self, LabeledSet, TrainConfig};
use supdim::crosslingual::{apply_dimension_foreign, procrustes_align, AlignmentMap, BilingualLexicon};
use supdim::curation::{evaluate_holdout, CurationSession, HoldoutOptions};
use supdim::docfeatures::StopWords;
use supdim::embedding::{open_embeddings, EmbeddingMatrix, WordId};
use supdim::ranking::top_k;
use supdim::synthetic::{random_unit, rng, ClusterWorld, TransferCorpus, TransferCorpusSpec};
use supdim::transfer::{demo_downstream, DownstreamMode};

enum Verdict {
    Pass(String),
    Skip(String),
}

type Check = Result<Verdict, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradient

/// Objective written out directly: weighted cross-entropy plus L2.
fn oracle_loss(points: &[(Vec<f64>, bool)], c_pos: f64, lambda: f64, w: &[f64], b: f64) -> f64 {
    let softplus = |t: f64| if t > 30.0 { t } else { t.exp().ln_1p() };
    let data: f64 = points
        .iter()
        .map(|(x, pos)| {
            let z = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            if *pos {
                c_pos * softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    data + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

fn labeled_matrix(points: &[(Vec<f64>, bool)]) -> Result<(EmbeddingMatrix, LabeledSet), String> {
    let m = EmbeddingMatrix::from_pairs(points.iter().enumerate().map(|(i, (x, _))| (format!("p{i}"), x.clone())))
        .and_then(EmbeddingMatrix::normalize)
        .map_err(err)?;
    let ids = |want: bool| {
        points.iter().enumerate().filter(move |(_, p)| p.1 == want).map(|(i, _)| WordId(i as u32)).collect::<Vec<_>>()
    };
    Ok((m, LabeledSet::new(ids(true), ids(false))))
}

fn gradient_oracle() -> Check {
    let mut r = rng(2718);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let d = r.random_range(1..=5);
        let n = r.random_range(2..=7);
        let points: Vec<(Vec<f64>, bool)> =
            (0..n).map(|i| (random_unit(&mut r, d), i == 0 || (i > 1 && r.random_bool(0.5)))).collect();
        let (m, labels) = labeled_matrix(&points)?;
        let normalized: Vec<(Vec<f64>, bool)> =
            points.iter().enumerate().map(|(i, p)| (m.row(WordId(i as u32)).to_vec(), p.1)).collect();
        let cfg = TrainConfig {
            positive_class_weight: r.random_range(1.0..3.0),
            l2_strength: r.random_range(0.1..2.0),
            ..Default::default()
        };
        let w: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let b = r.random_range(-2.0..2.0);
        let lg = classifier::loss_and_gradient(&m, &labels, &cfg, &w, b).map_err(err)?;
        let f = |w: &[f64], b: f64| oracle_loss(&normalized, cfg.positive_class_weight, cfg.l2_strength, w, b);
        ensure((lg.loss - f(&w, b)).abs() <= 1e-10 * f(&w, b).max(1.0), || {
            format!("instance {instance}: loss {} vs oracle {}", lg.loss, f(&w, b))
        })?;

        let mut analytic = lg.grad_weights.clone();
        analytic.push(lg.grad_bias);
        for (j, &a) in analytic.iter().enumerate() {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if j < d {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let numeric = (f(&wp, bp) - f(&wm, bm)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            ensure(rel < 1e-4, || format!("instance {instance} component {j}: {a} vs {numeric}"))?;
        }
    }
    Ok(Verdict::Pass(format!("worst relative error {worst:.1e}")))
}

// --------------------------------------------------------------- optimizer

fn grid(step: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Minimum of the objective over the 0.01 grid on [-5,5]^3 for a positive at
/// (1,0) and a negative at (0,1). For fixed b the terms for w1 and w2 are
/// independent, so each axis is minimized separately.
fn axis_toy_grid_min(c_pos: f64) -> f64 {
    let g = grid(0.01, -5.0, 5.0);
    let mut best = f64::INFINITY;
    for &b in &g {
        let pos =
            g.iter().map(|&w| oracle_loss(&[(vec![1.0], true)], c_pos, 1.0, &[w], b)).fold(f64::INFINITY, f64::min);
        let neg =
            g.iter().map(|&w| oracle_loss(&[(vec![1.0], false)], c_pos, 1.0, &[w], b)).fold(f64::INFINITY, f64::min);
        best = best.min(pos + neg);
    }
    best
}

fn optimizer_oracle() -> Check {
    let points = vec![(vec![1.0, 0.0], true), (vec![0.0, 1.0], false)];
    let (m, labels) = labeled_matrix(&points)?;
    let mut at_positive = Vec::new();
    let mut notes = Vec::new();
    for c in [2.0, 1.0] {
        let oracle = axis_toy_grid_min(c);
        let cfg = TrainConfig { positive_class_weight: c, ..Default::default() };
        let t = classifier::train("toy", &m, &labels, &cfg).map_err(err)?;
        let gap = (t.report.loss - oracle).abs();
        ensure(gap < 1e-3, || format!("weight {c}: loss {} vs grid {oracle}", t.report.loss))?;
        let d = &t.dimension;
        let (p, n) = (d.decision_value(&[1.0, 0.0]).map_err(err)?, d.decision_value(&[0.0, 1.0]).map_err(err)?);
        ensure(p > n, || format!("weight {c}: decision {p} <= {n}"))?;
        at_positive.push(d.score(&[1.0, 0.0]).map_err(err)?);
        notes.push(format!("c={c} gap {gap:.1e}"));
    }
    ensure(at_positive[0] > at_positive[1], || format!("positive score not raised by weight 2: {at_positive:?}"))?;

    let (m1, l1) = labeled_matrix(&[(vec![1.0], true), (vec![-1.0], false)])?;
    let cfg = TrainConfig { positive_class_weight: 1.0, ..Default::default() };
    let t = classifier::train("mirror", &m1, &l1, &cfg).map_err(err)?;
    let (w, b) = (t.dimension.weights[0], t.dimension.bias);
    ensure(b.abs() < 1e-6 && w > 0.0, || format!("1-D mirror: w {w}, b {b}"))?;
    notes.push(format!("1-D |b| {:.1e}", b.abs()));
    Ok(Verdict::Pass(notes.join(", ")))
}

// ---------------------------------------------------------------- curation

fn scripted_curation(world: &ClusterWorld, seed: u64) -> Result<CurationSession, String> {
    let m = &world.matrix;
    let cfg = TrainConfig::default();
    let mut s = CurationSession::init("sep", "cluster-a", m, &world.cluster_a[..3], seed).map_err(err)?;
    for _ in 0..2 {
        let top: Vec<String> = s.run_round(m, &cfg, 5).map_err(err)?.words().map(str::to_owned).collect();
        s.apply_labels(m, &top, &[] as &[String]).map_err(err)?;
    }
    s.run_round(m, &cfg, 5).map_err(err)?;
    Ok(s)
}

fn separable_curation() -> Check {
    let mut worst_a = usize::MAX;
    for seed in [42u64, 7, 1234] {
        let world = ClusterWorld::antipodal(20, 50, 2000, 0.3, seed);
        let s = scripted_curation(&world, seed)?;
        let dict = s.export_dictionary(&world.matrix, 0.5).map_err(err)?;
        let a = world.cluster_a.iter().filter(|w| dict.contains(w)).count();
        let b = world.cluster_b.iter().filter(|w| dict.contains(w)).count();
        ensure(a >= 48 && b == 0, || format!("seed {seed}: {a} of A, {b} of B"))?;
        worst_a = worst_a.min(a);
        let again = scripted_curation(&world, seed)?;
        ensure(again == s, || format!("seed {seed}: rerun differs"))?;
        ensure(again.export_dictionary(&world.matrix, 0.5).map_err(err)? == dict, || {
            format!("seed {seed}: dictionary differs")
        })?;
    }
    Ok(Verdict::Pass(format!("at least {worst_a}/50 of A, 0 of B, deterministic")))
}

// ----------------------------------------------------------------- holdout

/// Cluster A positive, cluster B negative; every `flip_every`-th pair swapped.
fn paired_labels(world: &ClusterWorld, flip_every: usize) -> LabeledSet {
    let mut pos = BTreeSet::new();
    let mut neg = BTreeSet::new();
    for (i, (x, y)) in world.ids(&world.cluster_a).into_iter().zip(world.ids(&world.cluster_b)).enumerate() {
        let (p, n) = if flip_every > 0 && i % flip_every == 0 { (y, x) } else { (x, y) };
        pos.insert(p);
        neg.insert(n);
    }
    LabeledSet { positives: pos, negatives: neg }
}

fn holdout_harness() -> Check {
    let cfg = TrainConfig::default();
    let opts = HoldoutOptions::default();
    let clean = ClusterWorld::antipodal(20, 50, 0, 0.3, 42);
    let r = evaluate_holdout(&clean.matrix, &paired_labels(&clean, 0), &cfg, &opts).map_err(err)?;
    ensure(r.f1 == 1.0, || format!("separable F1 {}", r.f1))?;
    let noisy = ClusterWorld::antipodal(20, 250, 0, 0.3, 42);
    let n = evaluate_holdout(&noisy.matrix, &paired_labels(&noisy, 5), &cfg, &opts).map_err(err)?;
    ensure(n.f1 > 0.5 && n.f1 < 1.0, || format!("20% noise F1 {}", n.f1))?;
    Ok(Verdict::Pass(format!("separable F1 1, noisy F1 {:.4}", n.f1)))
}

// --------------------------------------------------------------- procrustes

fn unit_rows(prefix: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<EmbeddingMatrix, String> {
    EmbeddingMatrix::from_pairs(rows.into_iter().enumerate().map(|(i, v)| (format!("{prefix}{i}"), v)))
        .and_then(EmbeddingMatrix::normalize)
        .map_err(err)
}

/// Gram-Schmidt on random columns; row-major.
fn random_rotation(d: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v = random_unit(&mut r, d);
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    (0..d * d).map(|k| cols[k % d][k / d]).collect()
}

fn rotate(m: &EmbeddingMatrix, q: &[f64], prefix: &str) -> Result<EmbeddingMatrix, String> {
    let d = m.dim();
    unit_rows(prefix, m.iter_rows().map(|x| (0..d).map(|i| (0..d).map(|j| q[i * d + j] * x[j]).sum()).collect()))
}

fn same_index_lexicon(n: usize, a: &str, b: &str) -> BilingualLexicon {
    BilingualLexicon::new((0..n).map(|i| (format!("{a}{i}"), format!("{b}{i}"))))
}

/// max |(QᵀQ − I)_ij|, computed here rather than by the library.
fn orthogonality_gap(map: &AlignmentMap) -> f64 {
    let d = map.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| map.get(k, i) * map.get(k, j)).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

fn procrustes_recovery() -> Check {
    let angles = [0.1f64, 0.9, 1.7, 2.6, 4.0];
    let plane = unit_rows("s", angles.iter().map(|t| vec![t.cos(), t.sin()]))?;
    let quarter = [0.0, -1.0, 1.0, 0.0];
    let map =
        procrustes_align(&plane, &rotate(&plane, &quarter, "t")?, &same_index_lexicon(5, "s", "t")).map_err(err)?;
    let mut worst: f64 = map.matrix().iter().zip(quarter).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    for seed in 0..3u64 {
        let d = 16;
        let q = random_rotation(d, 500 + seed);
        let mut r = rng(seed);
        let source = unit_rows("s", (0..60).map(|_| random_unit(&mut r, d)))?;
        let map =
            procrustes_align(&source, &rotate(&source, &q, "t")?, &same_index_lexicon(40, "s", "t")).map_err(err)?;
        worst = worst.max(map.matrix().iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(worst < 1e-8, || format!("rotation recovered only to {worst:.2e}"))?;

    let mut ortho: f64 = 0.0;
    for seed in 0..20u64 {
        let d = 8 + (seed as usize % 9);
        let mut r = rng(9000 + seed);
        let source = unit_rows("s", (0..80).map(|_| random_unit(&mut r, d)))?;
        let target = unit_rows("t", (0..80).map(|_| random_unit(&mut r, d)))?;
        let map =
            procrustes_align(&source, &target, &same_index_lexicon(4 + 3 * seed as usize, "s", "t")).map_err(err)?;
        ortho = ortho.max(orthogonality_gap(&map));
    }
    ensure(ortho < 1e-8, || format!("max |QᵀQ-I| {ortho:.2e}"))?;
    Ok(Verdict::Pass(format!("recovery error {worst:.1e}, orthogonality {ortho:.1e}")))
}

// ------------------------------------------------------- real-vector checks

const EN_ENV: &str = "SUPDIM_EN_VECTORS";
const DE_ENV: &str = "SUPDIM_DE_VECTORS";
const DE_MAP_ENV: &str = "SUPDIM_DE_ALIGNMENT";
const REAL_VOCAB: usize = 250_000;

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn overlap(got: &[String], want: &[&str]) -> usize {
    got.iter().filter(|w| want.contains(&w.as_str())).count()
}

fn trained_session(m: &EmbeddingMatrix, seeds: &[&str], k: usize) -> Result<(CurationSession, Vec<String>), String> {
    let mut s = CurationSession::init("real", seeds.join("+"), m, seeds, 0).map_err(err)?;
    let c = s.run_round(m, &TrainConfig::default(), k).map_err(err)?;
    Ok((s, c.words().map(str::to_owned).collect()))
}

fn smoking_dimension() -> Check {
    let (Some(en_path), Some(de_path)) = (env_path(EN_ENV), env_path(DE_ENV)) else {
        return Ok(Verdict::Skip(format!("set {EN_ENV} and {DE_ENV}")));
    };
    let en = open_embeddings(&en_path, Some(REAL_VOCAB)).map_err(err)?;
    let de = open_embeddings(&de_path, Some(REAL_VOCAB)).map_err(err)?;
    let map = env_path(DE_MAP_ENV).map(|p| AlignmentMap::load(&p)).transpose().map_err(err)?;
    let started = Instant::now();

    let (s, _) = trained_session(&en, &["smoking", "smoker", "tobacco"], 8)?;
    let dim = s.current_dimension().ok_or("no dimension after a round")?;
    let scores = en.score_all(&dim.weights, dim.bias).map_err(err)?;
    let en_top: Vec<String> = top_k(en.vocab(), &scores, 8, |_| true).words().map(str::to_owned).collect();
    let de_top: Vec<String> =
        apply_dimension_foreign(dim, &de, map.as_ref(), 8).map_err(err)?.words().map(str::to_owned).collect();

    let en_hits =
        overlap(&en_top, &["smoking", "smoker", "tobacco", "smokers", "smoke", "cigarettes", "cigarette", "Smoking"]);
    let de_hits = overlap(
        &de_top,
        &["Rauchen", "rauchen", "Raucher", "geraucht", "Rauchens", "Zigaretten", "Zigarette", "raucht"],
    );
    ensure(en_hits >= 6 && de_hits >= 5, || format!("EN {en_hits}/8 {en_top:?}; DE {de_hits}/8 {de_top:?}"))?;
    ensure(started.elapsed() < Duration::from_secs(120), || format!("took {:?} after loading", started.elapsed()))?;
    Ok(Verdict::Pass(format!("EN {en_hits}/8, DE {de_hits}/8")))
}

fn polysemy() -> Check {
    let Some(en_path) = env_path(EN_ENV) else {
        return Ok(Verdict::Skip(format!("set {EN_ENV}")));
    };
    let en = open_embeddings(&en_path, Some(REAL_VOCAB)).map_err(err)?;
    let rows: [(&[&str], [&str; 8]); 3] = [
        (&["play", "bat", "run"], ["playing", "runs", "plays", "played", "running", "paly", "game", "go"]),
        (
            &["play", "script", "art"],
            ["scripts", "scripting", "plays", "playwriting", "script.", "theatre", "playing", "artwork"],
        ),
        (&["bat", "animal", "fly"], ["bats", "flies", "bird", "flying", "mammal", "animals", "insect", "Bat"]),
    ];
    let mut lists = Vec::new();
    let mut notes = Vec::new();
    for (seeds, expected) in &rows {
        let (_, top) = trained_session(&en, seeds, 8)?;
        let hits = overlap(&top, expected);
        ensure(hits >= 4, || format!("{}: {hits}/8 {top:?}", seeds.join("+")))?;
        notes.push(format!("{}/8", hits));
        lists.push(top);
    }
    for i in 0..lists.len() {
        for j in i + 1..lists.len() {
            let shared = lists[i].iter().filter(|w| lists[j].contains(w)).count();
            ensure(shared <= 3, || format!("lists {i} and {j} share {shared}"))?;
        }
    }
    Ok(Verdict::Pass(format!("row overlaps {}", notes.join(" "))))
}

// ---------------------------------------------------------------- transfer

fn transfer_demo() -> Check {
    let spec = TransferCorpusSpec::default();
    ensure(spec.train_docs == 200 && spec.test_docs == 200, || "corpus size changed".into())?;
    let cfg = TrainConfig::default();
    let mut gains = Vec::new();
    for seed in 0..10 {
        let corpus = TransferCorpus::generate(&spec, seed);
        let dims = corpus.dictionary_dimensions(200, &cfg).map_err(err)?;
        let run = |mode| {
            demo_downstream(&corpus.train, &corpus.test, &dims, &corpus.matrix, mode, &cfg, &StopWords::none())
                .map_err(err)
        };
        gains.push(run(DownstreamMode::Augmented)?.accuracy - run(DownstreamMode::Plain)?.accuracy);
    }
    gains.sort_by(f64::total_cmp);
    let median = (gains[4] + gains[5]) / 2.0;
    ensure(median >= 0.05, || format!("median gain {median:.4}, gains {gains:?}"))?;
    Ok(Verdict::Pass(format!("median gain {median:.4} (range {:.3}..{:.3})", gains[0], gains[9])))
}

// ------------------------------------------------------- crash consistency

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(config: &Path) -> Result<Server, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_supdim"))
            .args(["serve", "--config"])
            .arg(config)
            .args(["--listen", "127.0.0.1:0"])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().ok_or("no stdout")?).read_line(&mut line).map_err(err)?;
        let Some(addr) = line.trim().strip_prefix("listening on ") else {
            let _ = child.kill();
            return Err(format!("unexpected startup output {line:?}"));
        };
        Ok(Server { base: format!("http://{addr}"), child })
    }

    fn send(&self, method: &str, path: &str, body: Option<Value>) -> Result<Value, String> {
        let url = format!("{}{path}", self.base);
        let mut resp = match (method, body) {
            ("GET", _) => ureq::get(&url).call(),
            (_, Some(b)) => ureq::post(&url).send_json(b),
            (_, None) => ureq::post(&url).send_empty(),
        }
        .map_err(|e| format!("{method} {path}: {e}"))?;
        resp.body_mut().read_json::<Value>().map_err(err)
    }

    fn kill(mut self) -> Result<(), String> {
        self.child.kill().map_err(err)?;
        self.child.wait().map_err(err)?;
        Ok(())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_fixture(dir: &Path, world: &ClusterWorld, data: &str) -> Result<PathBuf, String> {
    let vec_path = dir.join("space.vec");
    if !vec_path.exists() {
        let m = &world.matrix;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&vec_path).map_err(err)?);
        writeln!(f, "{} {}", m.len(), m.dim()).map_err(err)?;
        for (w, row) in m.vocab().words().iter().zip(m.iter_rows()) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(f, "{w} {}", cells.join(" ")).map_err(err)?;
        }
        f.flush().map_err(err)?;
    }
    let config = dir.join(format!("{data}.conf"));
    std::fs::write(&config, format!("data_dir = {data}\nembeddings.en = space.vec\ndefault_k = 10\n")).map_err(err)?;
    Ok(config)
}

/// Creates a session and issues 100 label mutations, with a training round
/// before every 20th. Returns the session id.
fn drive(server: &Server, world: &ClusterWorld) -> Result<String, String> {
    let created = server.send(
        "POST",
        "/sessions",
        Some(json!({ "dimension_name": "cluster-a", "seeds": &world.cluster_a[..3], "rng_seed": 11 })),
    )?;
    let id = created["session_id"].as_str().ok_or("no session_id")?.to_owned();
    for i in 0..100usize {
        if i % 20 == 0 {
            server.send("POST", &format!("/sessions/{id}/round"), Some(json!({ "k": 10 })))?;
        }
        // accepts from A, rejects from B and the background, and some relabels
        let (accept, reject): (Vec<&str>, Vec<&str>) = match i % 5 {
            0 | 1 => (vec![world.cluster_a[3 + i / 2 % 47].as_str()], vec![]),
            2 => (vec![], vec![world.cluster_b[i % 50].as_str()]),
            3 => (vec![], vec![world.background[i].as_str(), world.background[i + 100].as_str()]),
            _ => (vec![world.background[i - 4].as_str()], vec![world.cluster_a[3 + (i - 4) / 2 % 47].as_str()]),
        };
        let ack = server.send(
            "POST",
            &format!("/sessions/{id}/labels"),
            Some(json!({ "accept": accept, "reject": reject })),
        )?;
        if ack.get("positives").is_none() {
            return Err(format!("mutation {i} not acknowledged: {ack}"));
        }
    }
    Ok(id)
}

fn observable_state(server: &Server, id: &str) -> Result<Value, String> {
    let mut view = server.send("GET", &format!("/sessions/{id}"), None)?;
    view.as_object_mut().ok_or("session view is not an object")?.remove("session_id");
    let dict = server.send("GET", &format!("/sessions/{id}/dictionary?threshold=0.5"), None)?;
    Ok(json!({ "session": view, "dictionary": dict["entries"] }))
}

fn continue_round(server: &Server, id: &str) -> Result<Value, String> {
    server.send("POST", &format!("/sessions/{id}/round"), Some(json!({ "k": 10 })))
}

fn crash_consistency() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let world = ClusterWorld::antipodal(16, 50, 400, 0.3, 8);

    let reference_cfg = write_fixture(dir.path(), &world, "reference")?;
    let reference = Server::start(&reference_cfg)?;
    let ref_id = drive(&reference, &world)?;
    let expected = observable_state(&reference, &ref_id)?;

    let crash_cfg = write_fixture(dir.path(), &world, "crashed")?;
    let victim = Server::start(&crash_cfg)?;
    let id = drive(&victim, &world)?;
    victim.kill()?;

    let restarted = Server::start(&crash_cfg)?;
    let got = observable_state(&restarted, &id)?;
    ensure(got == expected, || "restored session differs from the reference run".into())?;
    let (a, b) = (continue_round(&reference, &ref_id)?, continue_round(&restarted, &id)?);
    ensure(a == b, || format!("next round differs: {a} vs {b}"))?;
    Ok(Verdict::Pass("state after SIGKILL and restart equals the reference".into()))
}

// -------------------------------------------------------------------- main

fn main() {
    // name, check, runtime limit in seconds
    type Criterion = (&'static str, fn() -> Check, Option<u64>);
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle, Some(5)),
        ("optimizer oracle", optimizer_oracle, Some(10)),
        ("separable curation", separable_curation, Some(5)),
        ("holdout harness", holdout_harness, None),
        ("procrustes recovery", procrustes_recovery, Some(2)),
        ("smoking dimension (EN/DE)", smoking_dimension, None),
        ("polysemous seed sets", polysemy, None),
        ("transfer demo", transfer_demo, Some(30)),
        ("crash consistency", crash_consistency, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        let outcome = match (outcome, budget) {
            (Ok(Verdict::Pass(_)), Some(limit)) if secs > limit as f64 => {
                Err(format!("took {secs:.2} s, limit {limit} s"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(Verdict::Pass(note)) if note.is_empty() => println!("PASS  {name} ({secs:.2} s)"),
            Ok(Verdict::Pass(note)) => println!("PASS  {name} ({secs:.2} s): {note}"),
            Ok(Verdict::Skip(why)) => println!("SKIP  {name}: {why}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
