//! Acceptance suite. Each test prints one PASS line (visible with
//! `cargo test --test acceptance -- --nocapture`) and enforces its own
//! runtime budget. Criterion 9 depends on the official shared-task files
//! and skips itself when `SPANFORGE_DATA_DIR` is not set.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use spanforge::files;
use spanforge::pipeline::score_decoded;
use spanforge_core::corpus::{split_holdout_folds, Post};
use spanforge_core::ensemble::{hard_vote, soft_vote, EnsembleConfig, TokenPrediction, VoteStrategy};
use spanforge_core::logistic::{example_gradient, example_loss};
use spanforge_core::metrics::{corpus_f1, per_post_prf, roc_auc};
use spanforge_core::model::FeatureVector;
use spanforge_core::rng::SeededRng;
use spanforge_core::span::{
    intervals_to_offsets, offsets_to_intervals, tokenize_with_offsets, SpanSet,
};

fn finish(criterion: u8, what: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "criterion {criterion} took {elapsed:?}, budget {budget:?}"
    );
    println!(
        "acceptance {criterion}: PASS — {what} ({} ms)",
        elapsed.as_millis()
    );
}

fn random_spanset(rng: &mut SeededRng, max_offset: usize, max_len: usize) -> SpanSet {
    let len = rng.gen_range(max_len + 1);
    (0..len).map(|_| rng.gen_range(max_offset)).collect()
}

#[test]
fn criterion_1_metric_oracle_suite() {
    let start = Instant::now();

    let gold: SpanSet = (10..16).chain(51..57).collect();
    assert_eq!(per_post_prf(&gold, &gold), (1.0, 1.0, 1.0));

    let pred: SpanSet = (10..16).collect();
    let (p, r, f1) = per_post_prf(&pred, &gold);
    assert_eq!(p, 1.0);
    assert_eq!(r, 0.5);
    assert!((f1 - 0.666667).abs() < 1e-6 + 1e-9);
    assert!((f1 - 2.0 / 3.0).abs() <= 1e-9);

    // the four degenerate conventions
    let empty = SpanSet::new();
    let one: SpanSet = [0].into_iter().collect();
    let other: SpanSet = [9].into_iter().collect();
    assert_eq!(per_post_prf(&empty, &empty), (1.0, 1.0, 1.0));
    assert_eq!(per_post_prf(&one, &empty), (0.0, 0.0, 0.0));
    assert_eq!(per_post_prf(&empty, &one), (0.0, 0.0, 0.0));
    assert_eq!(per_post_prf(&one, &other), (0.0, 0.0, 0.0));

    finish(1, "metric oracle suite", start, Duration::from_secs(1));
}

#[test]
fn criterion_2_metric_properties() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0x5eed_0002);
    for _ in 0..10_000 {
        let a = random_spanset(&mut rng, 300, 60);
        let b = random_spanset(&mut rng, 300, 60);
        let (_, _, f_ab) = per_post_prf(&a, &b);
        let (_, _, f_ba) = per_post_prf(&b, &a);
        assert_eq!(f_ab, f_ba, "symmetry must hold exactly");
        assert_eq!(f_ab == 1.0, a == b, "F1 = 1 iff sets are equal");

        // recall is monotone when predictions grow (gold kept nonempty)
        let gold = {
            let mut g = random_spanset(&mut rng, 300, 59);
            if g.is_empty() {
                g = [rng.gen_range(300)].into_iter().collect();
            }
            g
        };
        let extra = random_spanset(&mut rng, 300, 20);
        let bigger = a.union(&extra);
        if !a.is_empty() {
            let (_, r_small, _) = per_post_prf(&a, &gold);
            let (_, r_big, _) = per_post_prf(&bigger, &gold);
            assert!(r_small <= r_big);
        }
    }
    finish(2, "metric properties on 10,000 pairs", start, Duration::from_secs(10));
}

#[test]
fn criterion_3_span_algebra_roundtrips() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0x5eed_0003);

    for _ in 0..10_000 {
        let s = random_spanset(&mut rng, 400, 80);
        let intervals = offsets_to_intervals(&s);
        assert_eq!(intervals_to_offsets(&intervals), s);
        assert_eq!(offsets_to_intervals(&intervals_to_offsets(&intervals)), intervals);
    }

    // fuzz corpus with the worked example and the mid-word annotation case
    const EXAMPLE: &str = "This is a stupid example, so thank you for nothing a!@#!@";
    const MID_WORD: &str = "And you are a complete moron who obviously doesn't know the \
                            meaning of the word narcissist. By the way your bias is showing";
    let pool: Vec<char> = "ab cZ9 é中\tß!@',.😊—\n  'x".chars().collect();
    let mut corpus: Vec<String> = vec![EXAMPLE.to_string(), MID_WORD.to_string()];
    for _ in 0..998 {
        let len = rng.gen_range(200);
        corpus.push((0..len).map(|_| pool[rng.gen_range(pool.len())]).collect());
    }

    for text in &corpus {
        let tokens = tokenize_with_offsets(text);
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        for t in &tokens {
            assert_eq!(t.end - t.start, t.text.chars().count());
            let slice: String = chars[t.start..t.end].iter().collect();
            assert_eq!(slice, t.text);
            for i in t.start..t.end {
                assert!(!covered[i]);
                covered[i] = true;
            }
        }
        for (i, c) in chars.iter().enumerate() {
            assert_eq!(covered[i], !c.is_whitespace(), "offset {i} of {text:?}");
        }
    }

    let tokens = tokenize_with_offsets(EXAMPLE);
    let stupid = tokens.iter().find(|t| t.text == "stupid").unwrap();
    assert_eq!((stupid.start, stupid.end), (10, 16));

    finish(3, "span algebra round-trips and tokenizer fuzz", start, Duration::from_secs(10));
}

#[test]
fn criterion_4_auc_matches_brute_force() {
    let start = Instant::now();

    fn brute(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / pairs
    }

    let mut rng = SeededRng::new(0x5eed_0004);
    for case in 0..1_000 {
        let n = 2 + rng.gen_range(49);
        // quantized scores so ties actually occur
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(11) as f64) / 10.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        labels[0] = true;
        labels[1] = false;
        let fast = roc_auc(&scores, &labels).unwrap();
        assert_eq!(fast, brute(&scores, &labels), "case {case}");
    }

    let all_tied = roc_auc(&[0.3; 10], &[true, false, true, false, true, false, true, false, true, false]).unwrap();
    assert_eq!(all_tied, 0.5);

    finish(4, "rank-based AUC equals pairwise oracle", start, Duration::from_secs(5));
}

#[test]
fn criterion_5_gradient_checks() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0x5eed_0005);
    let step = 1e-5;

    let check = |weights: &[f64], bias: f64, fv: &FeatureVector, target: f64, l2: f64| {
        let (grad, grad_bias) = example_gradient(weights, bias, fv, target, l2);
        for j in 0..weights.len() {
            let mut plus = weights.to_vec();
            let mut minus = weights.to_vec();
            plus[j] += step;
            minus[j] -= step;
            let fd = (example_loss(&plus, bias, fv, target, l2)
                - example_loss(&minus, bias, fv, target, l2))
                / (2.0 * step);
            let denom = grad[j].abs().max(fd.abs()).max(1.0);
            assert!(
                (grad[j] - fd).abs() / denom < 1e-4,
                "weight {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
        let fd_bias = (example_loss(weights, bias + step, fv, target, l2)
            - example_loss(weights, bias - step, fv, target, l2))
            / (2.0 * step);
        let denom = grad_bias.abs().max(fd_bias.abs()).max(1.0);
        assert!((grad_bias - fd_bias).abs() / denom < 1e-4);
    };

    // tagger-shaped draws: wide sparse binary features
    for _ in 0..100 {
        let dim = 40;
        let weights: Vec<f64> = (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let bias = rng.next_f64() - 0.5;
        let nnz = 1 + rng.gen_range(10);
        let pairs: Vec<(usize, f64)> =
            (0..nnz).map(|_| (rng.gen_range(dim), 1.0)).collect();
        let fv = FeatureVector::from_pairs(pairs);
        let target = if rng.next_f64() < 0.5 { 0.0 } else { 1.0 };
        check(&weights, bias, &fv, target, 1e-3);
    }

    // meta-shaped draws: short dense probability features
    for _ in 0..100 {
        let dim = 2 + rng.gen_range(5);
        let weights: Vec<f64> = (0..dim).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        let bias = rng.next_f64() * 2.0 - 1.0;
        let pairs: Vec<(usize, f64)> = (0..dim).map(|j| (j, rng.next_f64())).collect();
        let fv = FeatureVector::from_pairs(pairs);
        let target = if rng.next_f64() < 0.5 { 0.0 } else { 1.0 };
        check(&weights, bias, &fv, target, 1e-6);
    }

    finish(5, "gradients match finite differences", start, Duration::from_secs(5));
}

#[test]
fn criterion_6_ensemble_laws() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0x5eed_0006);

    // anti-monotonicity of hard voting in the vote count
    for _ in 0..1_000 {
        let n_models = 1 + rng.gen_range(5);
        let by_model: BTreeMap<String, SpanSet> = (0..n_models)
            .map(|m| (format!("m{m}"), random_spanset(&mut rng, 60, 30)))
            .collect();
        let mut prev = hard_vote(&by_model, 1).unwrap();
        for m in 2..=n_models {
            let cur = hard_vote(&by_model, m).unwrap();
            assert!(cur.is_subset(&prev));
            prev = cur;
        }
    }

    // per-post union recall dominance and the soft/hard equivalence
    for _ in 0..1_000 {
        let n_models = 2 + rng.gen_range(4); // 2..=5
        let n_tokens = 2 + rng.gen_range(8);
        let text: String = (0..n_tokens)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        let tokens = tokenize_with_offsets(&text);
        let preds: BTreeMap<String, TokenPrediction> = (0..n_models)
            .map(|m| {
                let triples: Vec<(usize, usize, f64)> = tokens
                    .iter()
                    .map(|t| {
                        let p = if rng.next_f64() < 0.5 { 1.0 } else { 0.0 };
                        (t.start, t.end, p)
                    })
                    .collect();
                let id = format!("m{m}");
                (id.clone(), TokenPrediction::new("p".into(), id, triples).unwrap())
            })
            .collect();

        let by_model: BTreeMap<String, SpanSet> = preds
            .iter()
            .map(|(id, p)| (id.clone(), p.decode(&text, 0.5, false).unwrap()))
            .collect();

        let gold: SpanSet = {
            let t = &tokens[rng.gen_range(tokens.len())];
            (t.start..t.end).collect()
        };
        let union = hard_vote(&by_model, 1).unwrap();
        let (_, r_union, _) = per_post_prf(&union, &gold);
        for spans in by_model.values() {
            let (_, r_model, _) = per_post_prf(spans, &gold);
            assert!(r_union >= r_model);
        }

        for min_votes in 1..=n_models {
            let cfg = EnsembleConfig {
                strategy: VoteStrategy::Hard { min_votes },
                threshold: 0.5,
                gap_fill: false,
            };
            let hard =
                spanforge_core::ensemble::apply_strategy(&text, &preds, &cfg, None).unwrap();
            // with 0/1 probabilities and equal weights the combined value is
            // votes/n, so any threshold between (m-1)/n and m/n separates
            let threshold = (2 * min_votes - 1) as f64 / (2 * n_models) as f64;
            let (_, soft) = soft_vote(&text, &preds, None, threshold, false).unwrap();
            assert_eq!(hard, soft);
        }
    }

    finish(6, "ensemble voting laws", start, Duration::from_secs(10));
}

/// Strip the timing section; everything else in the report must be stable.
fn report_without_timings(path: &Path) -> serde_json::Value {
    let mut value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    value
        .as_object_mut()
        .unwrap()
        .insert("timings_ms".into(), serde_json::Value::Null);
    value
}

fn collect_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_7_end_to_end_run() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    // seed-fixed 200-post corpus whose toxicity is a planted lexicon
    let train_posts = common::planted_posts(200, 2024, "p");
    let test_posts = common::planted_posts(60, 2025, "t");
    let train_csv = base.join("train.csv");
    let test_csv = base.join("test.csv");
    files::write_span_corpus(&train_csv, &train_posts).unwrap();
    files::write_span_corpus(&test_csv, &test_posts).unwrap();
    let cls_csv = base.join("cls.csv");
    common::write_classification_csv(&cls_csv, &train_posts, 200, 2026);

    // the lexicon-tagging oracle scores 1.0 on this corpus
    for posts in [&train_posts, &test_posts] {
        let decoded: Vec<SpanSet> = posts.iter().map(|p| common::oracle_spans(p.text())).collect();
        let eval = corpus_f1(
            decoded
                .iter()
                .zip(posts.iter())
                .map(|(pred, post)| (pred, post.gold().unwrap(), post.id())),
        )
        .unwrap();
        assert_eq!(eval.mean_f1, 1.0, "oracle must reproduce the gold spans");
    }

    let config = base.join("run.toml");
    fs::write(
        &config,
        format!(
            "seed = 90210\n\
             [paths]\n\
             span_corpus = {:?}\n\
             test_corpus = {:?}\n\
             classification_corpus = {:?}\n\
             output_dir = {:?}\n\
             [split]\nholdout_frac = 0.14\nk = 5\n\
             [classification]\n\
             id_col = \"rowid\"\ntext_col = \"body\"\nscore_col = \"tox\"\n",
            train_csv.to_str().unwrap(),
            test_csv.to_str().unwrap(),
            cls_csv.to_str().unwrap(),
            base.join("out").to_str().unwrap(),
        ),
    )
    .unwrap();

    let run = || {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_spanforge"))
            .args(["run", "--config"])
            .arg(&config)
            .env("SPANFORGE_LOG", "off")
            .current_dir(base)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    // first run, snapshot the artifacts, then rerun with the same config
    run();
    let out_a = base.join("out-a");
    for rel in collect_files(&base.join("out")) {
        let from = base.join("out").join(&rel);
        let to = out_a.join(&rel);
        fs::create_dir_all(to.parent().unwrap()).unwrap();
        fs::copy(&from, &to).unwrap();
    }
    run();
    fs::rename(base.join("out"), base.join("out-b")).unwrap();

    let report: spanforge::RunReport =
        files::load_json(&base.join("out-a/report.json")).unwrap();
    let test_eval = report.test_eval.as_ref().expect("test corpus has gold");
    assert!(
        test_eval.mean_f1 >= 0.95,
        "final ensemble F1 {} below 0.95 (selected {})",
        test_eval.mean_f1,
        report.selected_strategy
    );
    assert!(report.strategy_table.len() >= 7);

    // rerun is byte-identical apart from timings
    let files_a = collect_files(&base.join("out-a"));
    let files_b = collect_files(&base.join("out-b"));
    assert_eq!(files_a, files_b);
    for rel in &files_a {
        let a = base.join("out-a").join(rel);
        let b = base.join("out-b").join(rel);
        if rel.file_name().is_some_and(|n| n == "report.json") {
            assert_eq!(
                report_without_timings(&a),
                report_without_timings(&b),
                "report differs beyond timings"
            );
        } else {
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{rel:?} differs");
        }
    }

    // reported test F1 equals rescoring the persisted spans
    let decoded = files::load_spans_file(&base.join("out-a/spans/test.txt")).unwrap();
    let rescored = score_decoded(&decoded, &test_posts).unwrap();
    assert_eq!(rescored.mean_f1, test_eval.mean_f1);

    finish(7, "end-to-end determinism and learnability", start, Duration::from_secs(60));
}

#[test]
fn criterion_8_split_arithmetic() {
    let start = Instant::now();

    let posts: Vec<Post> = (0..8621)
        .map(|i| Post::new(i.to_string(), "text", None).unwrap())
        .collect();
    let plan = split_holdout_folds(&posts, 0.14, 5, 1).unwrap();
    assert_eq!(plan.holdout_ids().len(), 1207);
    let mut sizes = plan.fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![1483, 1483, 1483, 1483, 1482]);

    let mut rng = SeededRng::new(0x5eed_0008);
    for _ in 0..1_000 {
        let n = 5 + rng.gen_range(500);
        let k = 2 + rng.gen_range(5);
        let frac = 0.05 + rng.next_f64() * 0.4;
        let posts: Vec<Post> = (0..n)
            .map(|i| Post::new(format!("p{i}"), "t", None).unwrap())
            .collect();
        match split_holdout_folds(&posts, frac, k, rng.next_u64()) {
            Ok(plan) => {
                let ids = posts.iter().map(|p| p.id()).collect();
                plan.validate(&ids).unwrap();
                assert_eq!(plan.holdout_ids().len(), (frac * n as f64).round() as usize);
            }
            Err(_) => {
                let holdout = (frac * n as f64).round() as usize;
                assert!(n < k || n - holdout < k);
            }
        }
    }

    finish(8, "split arithmetic and plan invariants", start, Duration::from_secs(5));
}

#[test]
fn criterion_9_official_corpus_counts() {
    let Some(data_dir) = std::env::var_os("SPANFORGE_DATA_DIR") else {
        println!("acceptance 9: SKIP — set SPANFORGE_DATA_DIR to the official corpus directory");
        return;
    };
    let data_dir = std::path::PathBuf::from(data_dir);
    let expectations = [
        ("tsd_train.csv", 7939usize),
        ("tsd_trial.csv", 690),
        ("tsd_test.csv", 2000),
    ];
    for (name, expected) in expectations {
        let path = data_dir.join(name);
        if !path.exists() {
            println!("acceptance 9: SKIP — {} not found", path.display());
            return;
        }
        let posts = files::load_text_corpus(&path).unwrap();
        assert_eq!(posts.len(), expected, "{name}");
    }
    println!("acceptance 9: PASS — official corpus counts 7939/690/2000");
}
