//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mosaiclip::batch::{build_batch, epoch_order, BatchConfig, SentenceCache};
use mosaiclip::decompose::{decompose, DecompositionConfig};
use mosaiclip::graph::{brute_force_subgraphs, canonicalize, GraphBuilder, SceneGraph};
use mosaiclip::loss::{
    check_gradients, clip_loss, mosaiclip_i2t, mosaiclip_loss, mosaiclip_t2i, RandomBatch, Temperature,
};
use mosaiclip::negatives::{mine_negatives, NegativeSpec, SubGraphSample};
use mosaiclip::parser::parse_caption;
use mosaiclip::render::render;
use mosaiclip::seed;
use mosaiclip::synth::{self, Perturbation, SynthConfig, ATTRIBUTES, OBJECTS, RELATIONS};
use mosaiclip::train::{evaluate_swap_retrieval, train, BatchLogEntry, CurriculumSchedule, Objective, TrainConfig};
use ndarray::{array, s};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};
use rand::seq::IndexedRandom;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail.push_str(&format!("; runtime over {limit:?}"));
        }
    }
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("C{id:<2} {verdict} {name}: {} [{:.2}s]", o.detail, took.as_secs_f64());
    o.pass
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mosaiclip"))
}

fn run_ok(args: &[&str]) -> bool {
    bin().args(args).status().map(|s| s.success()).unwrap_or(false)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

// ---- 1 ----

fn loss_oracle() -> Outcome {
    let u = array![[1.0, 0.0], [0.0, 1.0]];
    let v = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
    let sets = vec![vec![0], vec![1]];
    let owners = vec![0, 1];
    let tau = Temperature::new(1.0, true).unwrap();
    // Direct sums: image 1 sees logits (1, 0, 1), image 2 sees (0, 1, 0);
    // text 1 sees (1, 0), text 2 sees (0, 1).
    let e = 1f64.exp();
    let oracle_i2t = -(e / (2.0 * e + 1.0)).ln() - (e / (e + 2.0)).ln();
    let oracle_t2i = -2.0 * (e / (e + 1.0)).ln();
    let oracle = (oracle_i2t + oracle_t2i) / 2.0;
    let i2t = mosaiclip_i2t(u.view(), v.view(), &sets, tau).unwrap().value;
    let t2i = mosaiclip_t2i(u.view(), v.view(), &owners, tau).unwrap().value;
    let both = mosaiclip_loss(u.view(), v.view(), &sets, &owners, tau).unwrap().value;
    let err = [(i2t - oracle_i2t).abs(), (t2i - oracle_t2i).abs(), (both - oracle).abs()];
    let worst = err.iter().cloned().fold(0.0, f64::max);
    // The quoted literals are sums of rounded terms, good to about 1e-5.
    let printed = (i2t - 1.41343).abs() <= 1e-5 && (t2i - 0.62652).abs() <= 1e-5 && (both - 1.01998).abs() <= 1e-5;
    outcome(
        worst <= 1e-9 && printed,
        format!("i2t={i2t:.5} t2i={t2i:.5} combined={both:.5}, max |Δ oracle|={worst:.1e} (tol 1e-9)"),
    )
}

// ---- 2 ----

fn reduction_identity() -> Outcome {
    let mut rng = seed::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let b = RandomBatch::with_shape(&mut rng, n, n, 0, d);
        let mosaic = mosaiclip_loss(b.u.view(), b.v.view(), &b.pos_sets, &b.pos_owner, b.tau).unwrap().value;
        let clip = clip_loss(b.u.view(), b.v.view(), b.tau).unwrap().value;
        worst = worst.max((mosaic - n as f64 * clip).abs() / mosaic.abs());
    }
    outcome(worst <= 1e-12, format!("200 batches, max rel |mosaic − n·clip|={worst:.1e} (tol 1e-12)"))
}

// ---- 3 ----

fn gradient_checks() -> Outcome {
    let mut rng = seed::rng(3);
    let (mut clip_worst, mut mosaic_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let b = RandomBatch::generate(&mut rng, 8, 32, 16);
        let n = b.u.nrows();
        let v_pairs = b.v.slice(s![..n, ..]).to_owned();
        clip_worst = clip_worst.max(check_gradients(clip_loss, b.u.view(), v_pairs.view(), b.tau, 1e-5).unwrap());
        let f = |u: ndarray::ArrayView2<f64>, v: ndarray::ArrayView2<f64>, t| mosaiclip_loss(u, v, &b.pos_sets, &b.pos_owner, t);
        mosaic_worst = mosaic_worst.max(check_gradients(f, b.u.view(), b.v.view(), b.tau, 1e-5).unwrap());
    }
    outcome(
        clip_worst <= 1e-5 && mosaic_worst <= 1e-5,
        format!("100 batches, max rel error clip={clip_worst:.1e} mosaic={mosaic_worst:.1e} (tol 1e-5)"),
    )
}

// ---- 4 ----

fn sample_graphs<S: Strategy<Value = common::Shape>>(strategy: S, count: usize, seed: u8) -> Vec<SceneGraph> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]);
    let mut runner = TestRunner::new_with_rng(Default::default(), rng);
    (0..count).map(|_| strategy.new_tree(&mut runner).unwrap().current().build()).collect()
}

fn decomposition_oracle() -> Outcome {
    let graphs = sample_graphs(common::graph(4, 4), 50, 4);
    let mismatches = graphs
        .iter()
        .filter(|g| {
            let ours: BTreeSet<_> = decompose(g, &DecompositionConfig::uncapped())
                .unwrap()
                .iter()
                .map(|s| canonicalize(s).unwrap())
                .collect();
            ours != brute_force_subgraphs(g, 2).into_keys().collect()
        })
        .count();
    let mut b = GraphBuilder::new();
    let (cat, table) = (b.object("cat"), b.object("table"));
    b.attribute(cat, "black").attribute(table, "wooden");
    b.relation(cat, "on", table);
    let fixture = b.build().unwrap();
    let capped = decompose(&fixture, &DecompositionConfig { max_subgraphs: 10, max_attr_subset: 2, ..Default::default() })
        .unwrap()
        .len();
    outcome(mismatches == 0 && capped == 8, format!("{mismatches}/50 graphs differ from the oracle; fixture yields {capped} (want 8)"))
}

// ---- 5 ----

/// Captions whose positives give every category at least six candidates.
fn rich_positives(images: usize) -> Vec<Vec<SceneGraph>> {
    let mut rng = seed::rng(5);
    (0..images)
        .map(|_| {
            let nouns: Vec<&str> = OBJECTS.choose_multiple(&mut rng, 2).copied().collect();
            let attrs: Vec<&str> = ATTRIBUTES.choose_multiple(&mut rng, 4).copied().collect();
            let mut b = GraphBuilder::new();
            let (x, y) = (b.object(nouns[0]), b.object(nouns[1]));
            b.attribute(x, attrs[0]).attribute(x, attrs[1]).attribute(y, attrs[2]).attribute(y, attrs[3]);
            b.relation(x, RELATIONS.choose(&mut rng).unwrap(), y);
            decompose(&b.build().unwrap(), &DecompositionConfig::default()).unwrap()
        })
        .collect()
}

/// Category frequencies over each image's first `prefix` draws.
fn prefix_frequencies<'a>(images: impl Iterator<Item = &'a [SubGraphSample]>, prefix: usize) -> ([f64; 3], usize) {
    let mut counts = [0usize; 3];
    for samples in images {
        for n in samples.iter().flat_map(|s| &s.negatives).filter(|n| n.draw < prefix) {
            counts[n.category.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    (counts.map(|c| c as f64 / total as f64), total)
}

fn negative_statistics(config: &Path, work: &Path) -> Outcome {
    let spec = NegativeSpec::default();
    let positives = rich_positives(2000);
    let mut mined = Vec::new();
    let mut bad = 0;
    let mut samples = 0;
    for (k, pos) in positives.iter().enumerate() {
        let out = mine_negatives(pos, &synth::vocab(), &spec.for_item(k as u64)).unwrap();
        for s in &out {
            samples += 1;
            let key = canonicalize(&s.positive).unwrap();
            bad += s.negatives.iter().filter(|n| canonicalize(&n.graph).unwrap() == key).count();
        }
        mined.push(out);
    }
    let (freq, draws) = prefix_frequencies(mined.iter().map(Vec::as_slice), spec.max_negatives_per_positive);
    let freq_ok = freq.iter().zip(spec.probs).all(|(f, p)| (f - p).abs() <= 0.02);

    // The same corpus through the CLI, with probabilities read from the config file.
    let pos_path = work.join("c5_positives.jsonl");
    let lines: Vec<String> = positives
        .iter()
        .enumerate()
        .map(|(k, pos)| serde_json::json!({"image_id": format!("img{k}"), "positives": pos}).to_string())
        .collect();
    fs::write(&pos_path, lines.join("\n") + "\n").unwrap();
    let vocab_dir = work.join("vocab");
    let out_conf = work.join("c5_conf.jsonl");
    let out_flags = work.join("c5_flags.jsonl");
    let base = ["augment", "--positives", p(&pos_path), "--vocab-dir", p(&vocab_dir)];
    let ran = run_ok(&[&base[..], &["--config", p(config), "--out", p(&out_conf)]].concat())
        && run_ok(&[&base[..], &["--p-obj", "0.15", "--p-rel", "0.425", "--p-attr", "0.425", "--out", p(&out_flags)]].concat());
    // A config with other values must change the output, so the file is really read.
    let skewed = work.join("c5_skewed.conf");
    let out_skewed = work.join("c5_skewed.jsonl");
    fs::write(&skewed, "p_obj = 0.6\np_rel = 0.2\np_attr = 0.2\n").unwrap();
    let ran = ran && run_ok(&[&base[..], &["--config", p(&skewed), "--out", p(&out_skewed)]].concat());
    let text = fs::read_to_string(&out_conf).unwrap_or_default();
    let same = ran
        && fs::read(&out_flags).ok() == Some(text.clone().into_bytes())
        && fs::read_to_string(&out_skewed).ok() != Some(text.clone());
    let cli: Vec<Vec<SubGraphSample>> = text
        .lines()
        .map(|l| serde_json::from_value(serde_json::from_str::<serde_json::Value>(l).unwrap()["samples"].clone()).unwrap())
        .collect();
    let (cli_freq, _) = prefix_frequencies(cli.iter().map(Vec::as_slice), 6);
    let cli_ok = cli.len() == positives.len() && cli_freq.iter().zip(spec.probs).all(|(f, p)| (f - p).abs() <= 0.02);
    let config_text = fs::read_to_string(config).unwrap_or_default();
    let defaults = config_text.contains("p_obj = 0.15") && config_text.contains("p_rel = 0.425") && config_text.contains("p_attr = 0.425");

    let fmt = |f: [f64; 3]| format!("({:.4}, {:.4}, {:.4})", f[0], f[1], f[2]);
    outcome(
        bad == 0 && samples >= 10_000 && freq_ok && cli_ok && same && defaults,
        format!(
            "{samples} samples, {bad} negatives equal to their positive; {draws} prefix draws, frequencies {} vs {:?} (tol ±0.02); CLI via config {} matches flags: {same}",
            fmt(freq),
            spec.probs,
            fmt(cli_freq),
        ),
    )
}

// ---- 6 ----

fn batch_contracts() -> Outcome {
    let c = synth::generate(&SynthConfig { records: 400, eval_pairs: 0, ..Default::default() });
    let lex = synth::lexicon();
    let data: Vec<(usize, Vec<SubGraphSample>)> = c
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let g = parse_caption(&r.caption, &lex).unwrap();
            let pos = decompose(&g, &DecompositionConfig::default().for_item(k as u64)).unwrap();
            (k, mine_negatives(&pos, &synth::vocab(), &NegativeSpec::default().for_item(k as u64)).unwrap())
        })
        .collect();
    let defaults = BatchConfig::new(8, 0);
    let mut failures = Vec::new();
    let mut batches = 0;
    let mut warm_full = 0;
    let mut warm_total = 0;
    let mut rng = seed::rng(6);
    while batches < 1000 {
        let n = rng.random_range(2..=16);
        let stage = rng.random_range(1..=2u8);
        let cfg = BatchConfig::new(n, rng.random()).for_stage(stage);
        let mut cache = SentenceCache::new(cfg.text_batch_size);
        let order = epoch_order(data.len(), cfg.seed, 0);
        for (b, chunk) in order.chunks_exact(n).take(8).enumerate() {
            let picked: Vec<_> = chunk.iter().map(|&k| data[k].clone()).collect();
            let t = build_batch(&picked, &cfg, &mut cache).unwrap();
            batches += 1;
            let mut neg_counts = vec![0; n];
            for i in t.neg_owner.iter().flatten() {
                neg_counts[*i] += 1;
            }
            let partition: BTreeSet<usize> = t.pos_sets.iter().flatten().copied().collect();
            let ok_maps = partition.len() == t.n_pos
                && partition.iter().copied().eq(0..t.n_pos)
                && t.pos_sets.iter().enumerate().all(|(i, s)| !s.is_empty() && s.len() <= cfg.max_pos && s.iter().all(|&j| t.pos_owner[j] == i));
            let unique = (0..n).all(|i| {
                let own: Vec<&String> = t.pos_sets[i]
                    .iter()
                    .map(|&j| &t.texts[j])
                    .chain(t.neg_owner.iter().enumerate().filter(|(_, o)| **o == Some(i)).map(|(k, _)| &t.texts[t.n_pos + k]))
                    .collect();
                own.iter().collect::<BTreeSet<_>>().len() == own.len()
            });
            let caps = neg_counts.iter().all(|&c| c <= cfg.max_neg);
            let stage1 = stage == 2 || (t.n_pos == n && neg_counts.iter().all(|&c| c <= 1));
            if b > 0 {
                warm_total += 1;
                warm_full += usize::from(t.texts.len() == cfg.text_batch_size);
            }
            if !(ok_maps && unique && caps && stage1) {
                failures.push(format!("n={n} stage={stage} batch={b}"));
            }
        }
    }
    let defaults_ok = (defaults.max_pos, defaults.max_neg) == (3, 6);
    outcome(
        failures.is_empty() && warm_full == warm_total && defaults_ok,
        format!(
            "{batches} batches, {} invariant failures; {warm_full}/{warm_total} warmed batches at text_batch_size; defaults {}/{}",
            failures.len(),
            defaults.max_pos,
            defaults.max_neg
        ),
    )
}

// ---- 7 ----

fn round_trip() -> Outcome {
    let mut rng = seed::rng(7);
    let lex = synth::lexicon();
    let mut failures = Vec::new();
    for _ in 0..600 {
        let mut b = GraphBuilder::new();
        let mut node = |b: &mut GraphBuilder| {
            let head = OBJECTS.choose(&mut rng).unwrap().to_string();
            let modifiers = if rng.random_bool(0.2) { vec![OBJECTS.choose(&mut rng).unwrap().to_string()] } else { vec![] };
            let id = b.object_parts(head, modifiers);
            let k = rng.random_range(0..=2);
            for a in ATTRIBUTES.choose_multiple(&mut rng, k) {
                b.attribute(id, a);
            }
            id
        };
        let (x, y) = (node(&mut b), node(&mut b));
        b.relation(x, RELATIONS.choose(&mut rng).unwrap(), y);
        let g = b.build().unwrap();
        let text = render(&g).unwrap();
        match parse_caption(&text, &lex) {
            Ok(back) if canonicalize(&back).unwrap() == canonicalize(&g).unwrap() => {}
            _ => failures.push(text),
        }
    }
    outcome(failures.is_empty(), format!("600 one-relation graphs, {} round-trip failures {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()))
}

// ---- 8 ----

fn training_effect() -> Outcome {
    let corpus = synth::generate(&SynthConfig::default());
    let (lex, vocab) = (synth::lexicon(), synth::vocab());
    let cfg = TrainConfig { seed: 7, ..Default::default() };
    let mosaic = train(&corpus.records, &corpus.eval_pairs, &lex, &vocab, &cfg, None).unwrap();
    let clip_cfg = TrainConfig { objective: Objective::Clip, ..cfg.clone() };
    let clip = train(&corpus.records, &corpus.eval_pairs, &lex, &vocab, &clip_cfg, None).unwrap();
    let acc = mosaic.history.last().unwrap().swap_accuracy;
    let clip_acc = clip.history.last().unwrap().swap_accuracy;
    let base = mosaic.initial_accuracy;
    let loss_drop = mosaic.history[5].loss < mosaic.history[0].loss;
    // Relation-direction pairs are reported only.
    let objects = synth::generate(&SynthConfig {
        records: 0,
        perturbations: vec![Perturbation::ObjectSwap],
        ..Default::default()
    })
    .eval_pairs;
    let obj = evaluate_swap_retrieval(&mosaic.params, &objects);
    let obj_clip = evaluate_swap_retrieval(&clip.params, &objects);
    outcome(
        acc >= 0.80 && acc - clip_acc >= 0.10 && (base - 0.5).abs() <= 0.05 && loss_drop,
        format!(
            "swap accuracy {acc:.3} (gate 0.80), clip {clip_acc:.3} (gap {:.3}, gate 0.10), untrained {base:.3} (0.50 ± 0.05), loss epoch 5 {:.3} < epoch 0 {:.3}; object-swap (info) {obj:.3} vs clip {obj_clip:.3}",
            acc - clip_acc,
            mosaic.history[5].loss,
            mosaic.history[0].loss,
        ),
    )
}

// ---- 9 ----

fn curriculum() -> Outcome {
    let corpus = synth::generate(&SynthConfig::default());
    let (lex, vocab) = (synth::lexicon(), synth::vocab());
    let run = |stage1: usize| {
        let cfg = TrainConfig { seed: 7, schedule: CurriculumSchedule { stage1_epochs: stage1, total_epochs: 20 }, ..Default::default() };
        let mut log = Vec::new();
        let out = train(&corpus.records, &corpus.eval_pairs, &lex, &vocab, &cfg, Some(&mut log)).unwrap();
        let entries: Vec<BatchLogEntry> = String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        (out.history, entries)
    };
    let (hist, log) = run(5);
    let (hist2, log2) = run(5);
    let (flat, flat_log) = run(0);
    let deterministic = hist == hist2 && log == log2;
    let first_stage2 = log.iter().find(|e| e.max_pos_per_image > 1).map(|e| e.epoch);
    let stage1_clean = log.iter().filter(|e| e.epoch < 5).all(|e| e.stage == 1 && e.max_pos_per_image == 1 && e.positives == e.images);
    let stage2_full = log.iter().filter(|e| e.epoch >= 5).all(|e| e.stage == 2 && e.max_pos_per_image == 3);
    let flat_ok = flat_log.iter().all(|e| e.stage == 2);
    let acc = hist.last().unwrap().swap_accuracy;
    let flat_acc = flat.last().unwrap().swap_accuracy;
    outcome(
        deterministic && first_stage2 == Some(5) && stage1_clean && stage2_full && flat_ok,
        format!(
            "reruns identical: {deterministic}; max positives per image jumps 1 → 3 at epoch {first_stage2:?}; final accuracy (5,20) {acc:.3} vs (0,20) {flat_acc:.3} (info)"
        ),
    )
}

// ---- 10 ----

fn determinism(work: &Path) -> Outcome {
    let mut checked = Vec::new();
    let mut differing = Vec::new();
    let mut compare = |name: &str, runs: [Vec<(String, Vec<u8>)>; 2]| {
        checked.push(name.to_string());
        if runs[0] != runs[1] || runs[0].iter().any(|(_, b)| b.is_empty()) {
            differing.push(name.to_string());
        }
    };

    let synth_run = |tag: &str| {
        let dir = work.join(format!("c10_synth_{tag}"));
        run_ok(&["synth", "--seed", "7", "--out-dir", p(&dir)]);
        ["corpus.jsonl", "pairs.jsonl"]
            .map(|f| (f.to_string(), fs::read(dir.join(f)).unwrap_or_default()))
            .to_vec()
    };
    compare("synth", [synth_run("a"), synth_run("b")]);

    let corpus = work.join("corpus.jsonl");
    let captions = work.join("c10_captions.txt");
    let caps: Vec<String> = fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .take(300)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["caption"].as_str().unwrap().to_string())
        .collect();
    fs::write(&captions, caps.join("\n")).unwrap();
    let pipe = |tag: &str| {
        let out = work.join(format!("c10_pipe_{tag}.jsonl"));
        run_ok(&[
            "pipeline", "--captions", p(&captions), "--lexicon-dir", p(&work.join("lexicon")), "--vocab-dir",
            p(&work.join("vocab")), "--seed", "7", "--n", "32", "--epochs", "2", "--out", p(&out),
        ]);
        vec![("pipeline".to_string(), fs::read(&out).unwrap_or_default())]
    };
    compare("pipeline", [pipe("a"), pipe("b")]);

    let lossck = || {
        let out = bin().args(["losscheck", "--seed", "7"]).output().unwrap();
        vec![("losscheck".to_string(), out.stdout)]
    };
    compare("losscheck", [lossck(), lossck()]);

    let trainer = |tag: &str| {
        let metrics = work.join(format!("c10_metrics_{tag}.csv"));
        let params = work.join(format!("c10_params_{tag}.json"));
        run_ok(&[
            "train-toy", "--corpus", p(&corpus), "--pairs", p(&work.join("pairs.jsonl")), "--epochs", "20",
            "--stage1-epochs", "5", "--n", "64", "--max-pos", "3", "--max-neg", "6", "--lr", "0.1", "--seed", "7",
            "--metrics-out", p(&metrics), "--params-out", p(&params),
        ]);
        vec![("metrics".to_string(), fs::read(&metrics).unwrap_or_default()), ("params".to_string(), fs::read(&params).unwrap_or_default())]
    };
    let runs = [trainer("a"), trainer("b")];
    let rows = String::from_utf8_lossy(&runs[0][0].1).lines().count();
    compare("train-toy", runs);
    outcome(
        differing.is_empty() && rows == 21,
        format!("byte-identical reruns of {checked:?}; differing: {differing:?}; metrics CSV rows {rows} (header + 20)"),
    )
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let work = tempfile::TempDir::new().expect("temp dir");
    // Corpus, lexicon and vocab shared by the CLI criteria.
    assert!(run_ok(&["synth", "--seed", "7", "--out-dir", p(work.path())]), "synth failed");

    let secs = Duration::from_secs;
    let results = [
        criterion(1, "loss-value oracle", Some(secs(1)), loss_oracle),
        criterion(2, "reduction identity", Some(secs(10)), reduction_identity),
        criterion(3, "gradient checks", Some(secs(60)), gradient_checks),
        criterion(4, "decomposition oracle equivalence", Some(secs(5)), decomposition_oracle),
        criterion(5, "negative validity and category statistics", None, || {
            negative_statistics(&root.join("configs/negative_defaults.conf"), work.path())
        }),
        criterion(6, "batch contracts", Some(secs(30)), batch_contracts),
        criterion(7, "parse/render round trip", Some(secs(5)), round_trip),
        criterion(8, "directional training effect", Some(secs(300)), training_effect),
        criterion(9, "curriculum regression", None, curriculum),
        criterion(10, "CLI determinism", None, || determinism(work.path())),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
