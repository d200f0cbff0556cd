//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p f4its-core --test acceptance`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use f4its::encoder::{load_embedding_file, write_embedding_file, SyntheticEncoder};
use f4its::eval::{with_workers, write_report, ReportFormat, SweepMetric};
use f4its::index::{load_index, save_index};
use f4its::metrics::{average_precision, derive_k};
use f4its::retrieval::{search_fused, RankedEntry};
use f4its::synth::{generate, GenParams, SyntheticCorpus};
use f4its::{
    parse_items, rerank, retrieve_and_rerank, search_bidirectional, search_topk, search_topk_naive,
    sweep_fusion_weight, Caption, CaptionIndex, CaptionKind, EmbeddingVector, EvalConfig,
    FusionWeights, QueryBundle, RankedList, Stage, TextSource,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn acceptance_corpus() -> &'static SyntheticCorpus {
    static CORPUS: OnceLock<SyntheticCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate(&GenParams::default()).expect("seed-42 corpus"))
}

fn rerank_corpus() -> &'static SyntheticCorpus {
    static CORPUS: OnceLock<SyntheticCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate(&GenParams::rerank_fixture(42)).expect("rerank fixture"))
}

fn dense_bundles() -> Vec<QueryBundle> {
    acceptance_corpus().bundles(CaptionKind::Dense).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    EmbeddingVector::new(v).unwrap().l2_normalize().unwrap()
}

fn criterion_1() -> Outcome {
    let c = acceptance_corpus();
    let enc = c.encoder();
    let index = &c.dense_index;
    ensure!(index.len() == 1000 && index.dim() == 64, "index is {}x{}", index.len(), index.dim());
    let bundles = dense_bundles();
    for b in &bundles[..500] {
        for source in [TextSource::Dense, TextSource::Sparse] {
            let fused = search_fused(b, index, FusionWeights::IMAGE_ONLY, source, &enc, index.len())
                .map_err(|e| e.to_string())?;
            let base = search_topk(&b.e_img, index, index.len()).map_err(|e| e.to_string())?;
            ensure!(fused.entries == base.entries, "{} ranking differs ({source})", b.image_id);
        }
    }
    Ok("500 queries, full 1000-deep rankings identical for both text sources".into())
}

fn criterion_2() -> Outcome {
    let mut checked = 0;
    for seed in 0..10u64 {
        for dim in [8, 32, 256] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + dim as u64);
            let mut vectors: Vec<EmbeddingVector> = (0..1000).map(|_| random_unit(&mut rng, dim)).collect();
            // Exact duplicates force score ties through the id tie-break.
            for i in 0..20 {
                vectors[999 - i] = vectors[i].clone();
            }
            let captions: Vec<Caption> = (0..1000)
                .map(|i| Caption::dense(format!("c{:04}", (i * 7919) % 1000), format!("caption {i}")))
                .collect();
            let index = CaptionIndex::from_parts(captions, vectors, format!("synthetic;dim={dim};seed={seed}"))
                .map_err(|e| e.to_string())?;
            for q in 0..5 {
                let query = if q == 0 {
                    EmbeddingVector::new(index.row(3).to_vec()).unwrap()
                } else {
                    random_unit(&mut rng, dim)
                };
                for k in [1, 5, 37] {
                    let fast = search_topk(&query, &index, k).map_err(|e| e.to_string())?;
                    let slow = search_topk_naive(&query, &index, k).map_err(|e| e.to_string())?;
                    ensure!(fast.len() == k && slow.len() == k, "length mismatch at k={k}");
                    for (a, b) in fast.entries.iter().zip(&slow.entries) {
                        ensure!(
                            a.caption_id == b.caption_id,
                            "seed {seed} dim {dim} k {k}: {} vs {}",
                            a.caption_id,
                            b.caption_id
                        );
                        ensure!((a.score - b.score).abs() <= 1e-6, "score {} vs {}", a.score, b.score);
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} (seed, dim, query, k) comparisons exact"))
}

fn list(ids: &[&str]) -> RankedList {
    RankedList {
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankedEntry {
                caption_id: id.to_string(),
                score: 1.0 - i as f64 * 0.1,
            })
            .collect(),
        k: ids.len(),
        stage: Stage::Initial,
    }
}

fn criterion_3() -> Outcome {
    let gt: HashSet<&str> = ["a", "b"].into();
    let ap = average_precision(&list(&["a", "x", "b"]), &gt, 3).map_err(|e| e.to_string())?;
    // precision 1/1 at rank 1 and 2/3 at rank 3, over |gt| = 2
    let oracle = (1.0 + 2.0 / 3.0) / 2.0;
    ensure!((ap - oracle).abs() <= 1e-9 && (ap - 0.833333).abs() < 1e-6, "AP {ap}");
    let perfect = average_precision(&list(&["a", "b", "x"]), &gt, 3).map_err(|e| e.to_string())?;
    ensure!(perfect == 1.0, "perfect ranking AP {perfect}");
    let miss = average_precision(&list(&["x", "y", "z"]), &gt, 3).map_err(|e| e.to_string())?;
    ensure!(miss == 0.0, "miss AP {miss}");
    let k = derive_k("scallop, cauliflower, greens, herb oil").map_err(|e| e.to_string())?;
    ensure!(k == 4, "derive_k gave {k}");
    Ok(format!("AP {ap:.9}, perfect 1, miss 0, k=4"))
}

fn recall_at_1(config: &EvalConfig) -> Result<f64, String> {
    let c = acceptance_corpus();
    f4its::evaluate_corpus("acceptance", &dense_bundles(), &c.dense_index, config, &c.encoder())
        .map(|r| r.recall_at_1)
        .map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let recorded = acceptance_corpus().manifest.baseline.dense_recall_at_1;
    ensure!((0.30..=0.60).contains(&recorded), "recorded baseline R@1 {recorded} outside [0.30, 0.60]");
    let baseline = recall_at_1(&EvalConfig::baseline())?;
    ensure!(baseline == recorded, "baseline R@1 {baseline} differs from recorded {recorded}");
    let fused = recall_at_1(&EvalConfig::fused(FusionWeights::QUERY_DEFAULT, TextSource::Dense))?;
    ensure!(fused >= baseline + 0.05, "fused R@1 {fused} vs baseline {baseline}");
    Ok(format!("baseline R@1 {baseline:.3} -> fused (0.7,0.3) {fused:.3} (+{:.3})", fused - baseline))
}

fn criterion_5() -> Outcome {
    let c = acceptance_corpus();
    let sweep = sweep_fusion_weight(
        &dense_bundles(),
        &c.dense_index,
        &[0.0, 0.2, 0.3, 1.0],
        &EvalConfig::fused(FusionWeights::QUERY_DEFAULT, TextSource::Dense),
        SweepMetric::RecallAt1,
        &c.encoder(),
    )
    .map_err(|e| e.to_string())?;
    let at = |w| sweep.value_at(w).unwrap();
    let (lo, hi) = (at(0.0), at(1.0));
    for w in [0.2, 0.3] {
        ensure!(at(w) > lo && at(w) > hi, "R@1 at {w} = {} vs 0: {lo}, 1: {hi}", at(w));
    }
    Ok(format!(
        "R@1 w0 {lo:.3} | w0.2 {:.3} | w0.3 {:.3} | w1 {hi:.3}",
        at(0.2),
        at(0.3)
    ))
}

fn criterion_6() -> Outcome {
    let c = rerank_corpus();
    let index = &c.sparse_index;
    ensure!(index.len() == 200, "{} item captions", index.len());
    let bundles = c.bundles(CaptionKind::Sparse).map_err(|e| e.to_string())?;
    ensure!(bundles.len() == 100, "{} queries", bundles.len());
    let enc = c.encoder();
    let (mut plain, mut reranked) = (0.0, 0.0);
    for b in &bundles {
        let k = derive_k(b.gt_sparse_caption.as_deref().unwrap()).map_err(|e| e.to_string())?;
        let gt: HashSet<&str> = b.gt_caption_ids.iter().map(String::as_str).collect();
        let before = search_topk(&b.e_img, index, k).map_err(|e| e.to_string())?;
        let after = retrieve_and_rerank(b, index, FusionWeights::IMAGE_ONLY, 50, k, &enc)
            .map_err(|e| e.to_string())?;
        plain += average_precision(&before, &gt, k).map_err(|e| e.to_string())?;
        reranked += average_precision(&after, &gt, k).map_err(|e| e.to_string())?;
    }
    let (plain, reranked) = (plain / 100.0, reranked / 100.0);
    ensure!(reranked >= plain + 0.10, "rerank mAP {reranked} vs {plain}");
    Ok(format!("mAP {plain:.3} -> {reranked:.3} (+{:.3}) with N=50", reranked - plain))
}

fn criterion_7() -> Outcome {
    let enc = SyntheticEncoder::new(32, 11);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut captions = Vec::new();
    let mut vectors = Vec::new();
    for i in 0..60 {
        let n = rng.gen_range(1..=4);
        let text = words.choose_multiple(&mut rng, n).cloned().collect::<Vec<_>>().join(", ");
        vectors.push(f4its::encoder::encode_text_synthetic(&text, &f4its::EncoderSpec::synthetic(32, 11)).unwrap());
        captions.push(Caption::sparse(format!("s{i:02}"), text));
    }
    let index = CaptionIndex::from_parts(captions, vectors, "synthetic;dim=32;seed=11").unwrap();
    for case in 0..1000 {
        let query = random_unit(&mut rng, 32);
        let pool = rng.gen_range(1..=index.len());
        let initial = search_topk(&query, &index, pool).map_err(|e| e.to_string())?;
        let n_items = rng.gen_range(1..=6);
        let mut phrases: Vec<String> = words
            .choose_multiple(&mut rng, n_items)
            .cloned()
            .collect();
        let items = parse_items(&phrases.join(", ")).unwrap();
        let once = rerank(&initial, &items, &index, &enc).map_err(|e| e.to_string())?;

        let before: HashSet<&str> = initial.ids().collect();
        let after: HashSet<&str> = once.ids().collect();
        ensure!(before == after && once.len() == initial.len(), "case {case}: candidate set changed");

        let twice = rerank(&once, &items, &index, &enc).map_err(|e| e.to_string())?;
        ensure!(twice.entries == once.entries, "case {case}: not idempotent");

        phrases.shuffle(&mut rng);
        let permuted = parse_items(&phrases.join(", ")).unwrap();
        let other = rerank(&initial, &permuted, &index, &enc).map_err(|e| e.to_string())?;
        ensure!(other.entries == once.entries, "case {case}: depends on item order");
    }
    Ok("1000 cases: set preserved, idempotent, item-order independent".into())
}

fn criterion_8() -> Outcome {
    let c = acceptance_corpus();
    let enc = c.encoder();
    let index = &c.dense_index;
    let bundles = dense_bundles();
    let w = FusionWeights::QUERY_DEFAULT;
    let mut worst: f64 = 0.0;
    for b in &bundles[..100] {
        let uni = search_fused(b, index, w, TextSource::Dense, &enc, 50).map_err(|e| e.to_string())?;
        let bi = search_bidirectional(b, index, w, FusionWeights::TEXT_ONLY, TextSource::Dense, &enc, 50)
            .map_err(|e| e.to_string())?;
        for (u, v) in uni.entries.iter().zip(&bi.entries) {
            ensure!(u.caption_id == v.caption_id, "{}: {} vs {}", b.image_id, u.caption_id, v.caption_id);
            worst = worst.max((u.score - v.score).abs());
        }
        let flat = search_bidirectional(b, index, w, FusionWeights::IMAGE_ONLY, TextSource::Dense, &enc, index.len())
            .map_err(|e| e.to_string())?;
        let ids: Vec<&str> = flat.ids().collect();
        ensure!(ids.windows(2).all(|p| p[0] < p[1]), "{}: w_index=(1,0) order not ascending", b.image_id);
    }
    ensure!(worst <= 1e-6, "max score gap {worst}");
    Ok(format!("100 queries, max score gap {worst:.2e}, (1,0) ascending by id"))
}

fn criterion_9() -> Outcome {
    let c = acceptance_corpus();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e1 = dir.path().join("a.f4e");
    let e2 = dir.path().join("b.f4e");
    write_embedding_file(&c.images, &e1).map_err(|e| e.to_string())?;
    let loaded = load_embedding_file(&e1).map_err(|e| e.to_string())?;
    ensure!(loaded.len() == c.images.len(), "F4E count");
    for ((id_a, a), (id_b, b)) in c.images.iter().zip(&loaded) {
        ensure!(id_a == id_b, "F4E id {id_a} vs {id_b}");
        ensure!(
            a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= 1e-7),
            "F4E values for {id_a}"
        );
    }
    write_embedding_file(&loaded, &e2).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&e1).unwrap() == std::fs::read(&e2).unwrap(), "F4E double save differs");

    for (name, index) in [("dense", &c.dense_index), ("sparse", &c.sparse_index)] {
        let (i1, i2) = (dir.path().join(format!("{name}1.f4i")), dir.path().join(format!("{name}2.f4i")));
        save_index(index, &i1).map_err(|e| e.to_string())?;
        let back = load_index(&i1).map_err(|e| e.to_string())?;
        ensure!(back.captions() == index.captions(), "{name} captions differ");
        ensure!(back.kind() == index.kind(), "{name} kind");
        ensure!(back.encoder_fingerprint() == index.encoder_fingerprint(), "{name} fingerprint");
        ensure!(
            back.matrix().iter().zip(index.matrix()).all(|(x, y)| (x - y).abs() <= 1e-7)
                && back.matrix().len() == index.matrix().len(),
            "{name} embeddings"
        );
        save_index(&back, &i2).map_err(|e| e.to_string())?;
        ensure!(std::fs::read(&i1).unwrap() == std::fs::read(&i2).unwrap(), "{name} F4I double save differs");
    }
    Ok("F4E (1000 images) and F4I (dense, sparse) round-trip; double saves byte-identical".into())
}

fn criterion_10() -> Outcome {
    let c = acceptance_corpus();
    let enc = c.encoder();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rerank_cfg = EvalConfig::fused(FusionWeights::QUERY_DEFAULT, TextSource::Sparse);
    rerank_cfg.rerank = true;
    let mut bi_cfg = EvalConfig::fused(FusionWeights::QUERY_DEFAULT, TextSource::Dense);
    bi_cfg.bidirectional = true;
    let runs = [
        (CaptionKind::Dense, EvalConfig::fused(FusionWeights::QUERY_DEFAULT, TextSource::Dense)),
        (CaptionKind::Dense, bi_cfg),
        (CaptionKind::Sparse, rerank_cfg),
    ];
    for (n, (kind, cfg)) in runs.iter().enumerate() {
        let bundles = c.bundles(*kind).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for workers in [1, 8] {
            let report = with_workers(workers, || {
                f4its::evaluate_corpus("seed-42", &bundles, c.index_for(*kind), cfg, &enc)
            })
            .map_err(|e| e.to_string())?;
            for format in [ReportFormat::Json, ReportFormat::Csv] {
                let path = dir.path().join(format!("{n}-{workers}-{format:?}"));
                write_report(&report, &path, format).map_err(|e| e.to_string())?;
                files.push(std::fs::read(&path).unwrap());
            }
        }
        ensure!(files[0] == files[2] && files[1] == files[3], "run {n}: reports differ across workers");
    }
    Ok("fused, bi-directional and reranked reports byte-identical with 1 and 8 workers".into())
}

fn main() -> ExitCode {
    let setup = Instant::now();
    acceptance_corpus();
    rerank_corpus();
    println!("setup: generated seed-42 corpus and rerank fixture in {:.2?}", setup.elapsed());

    let criteria: [Criterion; 10] = [
        ("fusion degeneration", 5, criterion_1),
        ("oracle equivalence", 30, criterion_2),
        ("metric correctness", 1, criterion_3),
        ("fusion lift", 20, criterion_4),
        ("sweep shape", 60, criterion_5),
        ("rerank lift", 20, criterion_6),
        ("rerank properties", 10, criterion_7),
        ("bi-directional consistency", 5, criterion_8),
        ("persistence", 5, criterion_9),
        ("determinism under parallelism", 30, criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok(d) if elapsed < budget => (true, d),
            Ok(d) => (false, format!("{d}; over runtime budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.2?} / budget {:?})",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed,
            budget
        );
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
