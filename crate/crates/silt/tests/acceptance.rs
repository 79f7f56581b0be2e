//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

// `ensure!` negates comparisons on purpose so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use silt::experiment::{run_experiment, run_quickstart, write_report, ExperimentConfig, QuickstartConfig};
use silt_core::cot::{build_training_example, CotMode};
use silt_core::ctc_align::{ctc_forced_align, min_frames, FramePosteriors, WordAlignment, WordSpan};
use silt_core::eval::length_ratio_stats;
use silt_core::interleave::{interleave, schedule_text_ratio, InterleaveConfig, InterleaveMode, Schedule};
use silt_core::interleave::{units_to_global, DEFAULT_DELTA, DEFAULT_INTERVAL, DEFAULT_P0};
use silt_core::model::{loss_and_grads, masked_nll, ModelConfig, Params};
use silt_core::quantizer::{kmeans_fit, kmeans_fit_traced, Features};
use silt_core::rng;
use silt_core::synth::{generate_pairs, CorpusParams, ToyLanguage};
use silt_core::vocab::{BpeModel, JointVocab};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn c1_schedule() -> Outcome {
    let s = Schedule::scheduled_default();
    let f = |t| schedule_text_ratio(t, DEFAULT_P0, DEFAULT_DELTA, DEFAULT_INTERVAL).unwrap();
    let cases = [(0, 0.9), (300, 0.8), (2699, 0.1), (2700, 0.0), (3000, 0.0), (1_000_000, 0.0)];
    for (step, want) in cases {
        ensure!(f(step) == want, "step {step}: {} != {want}", f(step));
        ensure!(s.text_ratio(step) == want, "Schedule::text_ratio({step}) = {}", s.text_ratio(step));
    }
    Ok("0.9, 0.8, 0.1, 0.0 at 0, 300, 2699, 2700+".into())
}

const WORDS: [&str; 8] = ["ka", "lumi", "so", "tepa", "ni", "ru", "bodek", "a"];

fn interleave_setup() -> (JointVocab, BpeModel) {
    let bpe = BpeModel::train(&WORDS, 300).unwrap();
    (JointVocab::new(300, 16).unwrap(), bpe)
}

fn random_instance<R: Rng>(r: &mut R, n_words: usize) -> (Vec<u32>, WordAlignment) {
    let mut units = Vec::new();
    let mut spans = Vec::new();
    for _ in 0..n_words {
        let d = r.gen_range(1..8);
        let start = units.len();
        units.extend((0..d).map(|_| r.gen_range(0..16u32)));
        spans.push(WordSpan::new(start, units.len() - 1, WORDS[r.gen_range(0..WORDS.len())]));
    }
    (units, WordAlignment::new(spans))
}

fn c2_bracketing() -> Outcome {
    let (vocab, bpe) = interleave_setup();
    let mut r = rng::stream(2, &[]);
    for i in 0..1000u64 {
        let n = r.gen_range(1..=50);
        let p = r.gen_range(1..=9) as f64 / 10.0;
        let lambda = r.gen_range(0..=2) as f64;
        let (units, align) = random_instance(&mut r, n);
        let run = |p: f64| {
            let cfg = InterleaveConfig { p, lambda, mode: InterleaveMode::Text };
            interleave(&units, &align, &cfg, &vocab, &bpe, &mut rng::stream(i, &[1])).unwrap()
        };
        let out = run(p);
        let f = out.realized_text_fraction();
        let last = out.replacements.last().map_or(0.0, |x| x.words() as f64 / n as f64);
        ensure!(f >= p, "instance {i}: f={f} < p={p}");
        ensure!(f - last < p, "instance {i}: f - last = {} >= p={p}", f - last);
        let zero = run(0.0);
        ensure!(zero.realized_text_fraction() == 0.0, "instance {i}: f != 0 at p=0");
        ensure!(zero.tokens == units_to_global(&units, &vocab).unwrap(), "instance {i}: p=0 changed the sequence");
    }
    Ok("1000 instances".into())
}

fn c3_determinism() -> Outcome {
    let (vocab, bpe) = interleave_setup();
    let mut r = rng::stream(3, &[]);
    for i in 0..1000u64 {
        let n = r.gen_range(1..=50);
        let (units, align) = random_instance(&mut r, n);
        let mode = if r.gen_bool(0.5) { InterleaveMode::Text } else { InterleaveMode::Mask };
        let cfg = InterleaveConfig { p: r.gen_range(0..=10) as f64 / 10.0, lambda: r.gen_range(0..=2) as f64, mode };
        let a = interleave(&units, &align, &cfg, &vocab, &bpe, &mut rng::stream(i, &[7])).unwrap();
        let b = interleave(&units, &align, &cfg, &vocab, &bpe, &mut rng::stream(i, &[7])).unwrap();
        ensure!(a.tokens == b.tokens && a.replacements == b.replacements, "instance {i}: not reproducible");
        let speech: Vec<u32> = a.tokens.iter().copied().filter(|&t| vocab.is_unit(t)).collect();
        let full = units_to_global(&units, &vocab).unwrap();
        let mut it = full.iter();
        ensure!(speech.iter().all(|x| it.any(|y| y == x)), "instance {i}: speech is not a subsequence of S");
    }
    Ok("1000 instances".into())
}

fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != 0 {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

fn c4_ctc_oracle() -> Outcome {
    let mut r = rng::stream(4, &[]);
    let mut feasible = 0;
    for i in 0..100 {
        let v = r.gen_range(2..=3usize);
        let t = r.gen_range(1..=8usize);
        let n = r.gen_range(1..=3usize);
        let reference: Vec<u32> = (0..n).map(|_| r.gen_range(1..v as u32)).collect();
        let mut probs = Vec::with_capacity(t * v);
        for _ in 0..t {
            let row: Vec<f64> = (0..v).map(|_| r.gen_range(0.01..1.0f64).powi(3)).collect();
            let z: f64 = row.iter().sum();
            probs.extend(row.iter().map(|x| x / z));
        }
        let post = FramePosteriors::from_probs(t, v, &probs).unwrap();
        let mut best: Option<f64> = None;
        let mut path = vec![0u32; t];
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            for slot in path.iter_mut() {
                *slot = (c % v) as u32;
                c /= v;
            }
            if collapse(&path) == reference {
                let lp: f64 = path.iter().enumerate().map(|(f, &k)| post.get(f, k as usize)).sum();
                best = Some(best.map_or(lp, |b: f64| b.max(lp)));
            }
        }
        match (ctc_forced_align(&post, &reference, 0), best) {
            (Ok(a), Some(b)) => {
                feasible += 1;
                ensure!((a.log_prob - b).abs() < 1e-9, "instance {i}: {} vs oracle {b}", a.log_prob);
                ensure!(
                    collapse(&a.frame_labels) == reference,
                    "instance {i}: path does not collapse to the reference"
                );
            }
            (Err(_), None) => ensure!(t < min_frames(&reference), "instance {i}: infeasible with enough frames"),
            (got, want) => return Err(format!("instance {i}: aligner {got:?}, oracle {want:?}")),
        }
    }
    Ok(format!("100 instances, {feasible} feasible"))
}

fn c5_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n_params = 0;
    for tie in [false, true] {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 10,
            vocab_size: 11,
            dropout_rate: 0.0,
            seed: 3,
            tie_embeddings: tie,
            init_std: 0.3,
        };
        let mut p = Params::init(&cfg).unwrap();
        ensure!(p.len() <= 5000, "{} parameters", p.len());
        n_params = n_params.max(p.len());
        let tokens = [1, 5, 2, 7, 7, 3, 9, 0, 4, 6];
        let mask = [0, 0, 0, 1, 1, 1, 0, 1, 1, 1];
        let (_, g) = loss_and_grads(&p, &tokens, &mask).unwrap();
        let h = 1e-5;
        for t in p.layout.tensors.clone() {
            for i in t.range.clone() {
                let orig = p.data[i];
                p.data[i] = orig + h;
                let up = masked_nll(&p, &tokens, &mask).unwrap().mean();
                p.data[i] = orig - h;
                let down = masked_nll(&p, &tokens, &mask).unwrap().mean();
                p.data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                ensure!(rel < 1e-4, "tie={tie} {}[{}]: relative error {rel:e}", t.name, i - t.range.start);
                worst = worst.max(rel);
            }
        }
    }
    Ok(format!("max relative error {worst:.2e} over every tensor, {n_params} parameters"))
}

fn c6_factorization() -> Outcome {
    let vocab = JointVocab::new(12, 10).unwrap();
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        max_seq_len: 48,
        vocab_size: vocab.total(),
        init_std: 0.2,
        seed: 5,
        ..Default::default()
    };
    let params = Params::init(&cfg).unwrap();
    let mut r = rng::stream(6, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let mut seg =
            |lo: usize, hi: usize, text: bool| -> Vec<u32> {
                let n = r.gen_range(lo..=hi);
                (0..n)
                    .map(|_| {
                        if text || r.gen_bool(0.3) {
                            r.gen_range(0..12)
                        } else {
                            vocab.unit(r.gen_range(0..10)).unwrap()
                        }
                    })
                    .collect()
            };
        let (a, b, c, d) = (seg(1, 12, false), seg(1, 5, true), seg(1, 5, true), seg(1, 12, false));
        let ex = build_training_example(&a, &b, &c, &d, CotMode::Cot, &vocab).unwrap();
        let full = masked_nll(&params, &ex.tokens, &ex.loss_mask).unwrap();
        let regions = ex.factor_regions();
        let mut parts = 0.0;
        for region in [regions.t_src, regions.t_tgt, regions.i_tgt] {
            let mut mask = vec![0u8; ex.len()];
            mask[region].fill(1);
            parts += masked_nll(&params, &ex.tokens, &mask).unwrap().sum;
        }
        let diff = (full.sum - parts).abs();
        ensure!(diff < 1e-9, "example {i}: {} vs {parts}", full.sum);
        worst = worst.max(diff);
    }
    Ok(format!("50 examples, max difference {worst:.1e}"))
}

fn random_features(seed: u64) -> Features {
    let mut r = rng::stream(seed, &[7]);
    let dim = r.gen_range(1..=5);
    let n = r.gen_range(20..200);
    let centers: Vec<f64> = (0..4 * dim).map(|_| r.gen_range(-5.0..5.0)).collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = r.gen_range(0..4);
        for j in 0..dim {
            data.push(centers[c * dim + j] + rng::standard_normal(&mut r));
        }
    }
    Features::new(dim, data).unwrap()
}

fn c7_kmeans() -> Outcome {
    for seed in 0..20 {
        let f = random_features(seed);
        let trace = kmeans_fit_traced(&f, 2 + seed as usize % 6, 100, seed).unwrap();
        for w in trace.inertia_history.windows(2) {
            ensure!(w[1] <= w[0], "dataset {seed}: inertia {} -> {}", w[0], w[1]);
        }
        let cb = kmeans_fit(&f, 1, 10, seed).unwrap();
        for j in 0..f.dim {
            let mean = (0..f.rows()).map(|i| f.row(i)[j]).sum::<f64>() / f.rows() as f64;
            ensure!((cb.centroids[j] - mean).abs() < 1e-12, "dataset {seed}: k=1 centroid differs from the mean");
        }
    }
    Ok("20 datasets".into())
}

fn c8_length_gap() -> Outcome {
    let params = CorpusParams { expansion_r: 10, jitter: 2, ..Default::default() };
    let lang = ToyLanguage::generate(&params, 8).unwrap();
    let raw = generate_pairs(&lang, &params, 8, 200).unwrap();
    let text: Vec<&str> = raw.iter().flat_map(|p| [p.src_text.as_str(), p.tgt_text.as_str()]).collect();
    let bpe = BpeModel::train(&text, 512).unwrap();
    let vocab = JointVocab::new(bpe.vocab_size(), params.n_units as usize).unwrap();
    let pairs: Vec<_> = raw.iter().map(|p| p.aligned(&bpe)).collect();
    let r = params.expansion_r as f64;
    let implied_src = pairs.iter().map(|p| r * p.src_align.len() as f64 / p.src_text.len() as f64).sum::<f64>() / 200.0;
    let implied_tgt = pairs.iter().map(|p| r * p.tgt_align.len() as f64 / p.tgt_text.len() as f64).sum::<f64>() / 200.0;
    let rows = length_ratio_stats(&pairs, &[0.0, 0.3, 0.6, 0.9], 1.0, InterleaveMode::Text, &vocab, &bpe, 8).unwrap();
    for (got, want, side) in [(rows[0].src_ratio, implied_src, "src"), (rows[0].tgt_ratio, implied_tgt, "tgt")] {
        ensure!((got / want - 1.0).abs() <= 0.15, "{side}: ratio {got:.3} at p=0 vs implied {want:.3}");
    }
    for w in rows.windows(2) {
        ensure!(w[1].src_ratio <= w[0].src_ratio && w[1].tgt_ratio <= w[0].tgt_ratio, "not monotone at p={}", w[1].p);
    }
    let fmt: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.src_ratio)).collect();
    Ok(format!("src |I_p|/|T| = {} for p = 0, .3, .6, .9; implied {implied_src:.2}", fmt.join(", ")))
}

fn files_equal(a: &Path, b: &Path) -> std::result::Result<usize, String> {
    let qa = silt::experiment::QuickstartOutputs::in_dir(a).files();
    let qb = silt::experiment::QuickstartOutputs::in_dir(b).files();
    ensure!(qa.len() == qb.len(), "{} vs {} artifact files", qa.len(), qb.len());
    for (x, y) in qa.iter().zip(&qb) {
        let (bx, by) = (
            std::fs::read(x).map_err(|e| format!("{}: {e}", x.display()))?,
            std::fs::read(y).map_err(|e| e.to_string())?,
        );
        ensure!(bx == by, "{} differs between runs", x.file_name().unwrap().to_string_lossy());
    }
    Ok(qa.len())
}

fn c10_end_to_end() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = QuickstartConfig::new(0);
    let start = Instant::now();
    run_quickstart(a.path(), &cfg).map_err(|e| e.to_string())?;
    let once = start.elapsed().as_secs_f64();
    run_quickstart(b.path(), &cfg).map_err(|e| e.to_string())?;
    let n = files_equal(a.path(), b.path())?;
    Ok(format!("{n} artifacts byte-identical; one pipeline run took {once:.0}s"))
}

fn run(n: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &out {
        Ok(d) => println!("PASS  {n:>2} [PRIMARY] {name}: {d} ({secs:.1}s)"),
        Err(d) => println!("FAIL  {n:>2} [PRIMARY] {name}: {d} ({secs:.1}s)"),
    }
    out.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "schedule exactness", c1_schedule);
    ok &= run(2, "interleave ratio bracketing", c2_bracketing);
    ok &= run(3, "interleave determinism and order", c3_determinism);
    ok &= run(4, "CTC oracle equivalence", c4_ctc_oracle);
    ok &= run(5, "gradient check", c5_gradients);
    ok &= run(6, "loss factorization", c6_factorization);
    ok &= run(7, "k-means monotonicity", c7_kmeans);
    ok &= run(8, "length-gap trend", c8_length_gap);

    // 9 and 11 share one set of training runs.
    let start = Instant::now();
    let cfg = ExperimentConfig::low_resource();
    let report = catch_unwind(AssertUnwindSafe(|| {
        run_experiment(&cfg, |r| {
            eprintln!(
                "  {} seed {}: unit BLEU {:.4}, final loss {:.3} ({:.0}s)",
                r.arm, r.seed, r.unit_bleu, r.final_loss, r.seconds
            )
        })
    }));
    let secs = start.elapsed().as_secs_f64();
    let report = match report {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("experiment panicked".to_string()),
    };
    if let (Ok(r), Some(dir)) = (&report, std::env::var_os("SILT_EXPERIMENT_OUT")) {
        let _ = write_report(&Path::new(&dir).join("experiment.json"), r);
    }
    ok &= run(9, "scheduled ILT >= baseline (median unit BLEU, 3 seeds)", || {
        let r = report.as_ref().map_err(Clone::clone)?;
        let (b, s) = (r.arm("baseline").unwrap(), r.arm("scheduled").unwrap());
        let per: Vec<String> = r.runs.iter().map(|x| format!("{}/{}={:.3}", x.arm, x.seed, x.unit_bleu)).collect();
        let detail = format!(
            "scheduled {:.4} vs baseline {:.4} [{}], {} train pairs, {secs:.0}s",
            s.median_unit_bleu,
            b.median_unit_bleu,
            per.join(" "),
            r.n_train
        );
        ensure!(s.median_unit_bleu >= b.median_unit_bleu, "{detail}");
        Ok(detail)
    });
    ok &= run(10, "end-to-end determinism", c10_end_to_end);
    ok &= run(11, "similarity well-formed; early scheduled src S-T > baseline", || {
        let r = report.as_ref().map_err(Clone::clone)?;
        for run in &r.runs {
            for s in &run.similarity {
                for v in [s.src_st, s.src_tgt_t, s.tgt_ts] {
                    ensure!((-1.0..=1.0).contains(&v), "{} seed {} step {}: similarity {v}", run.arm, run.seed, s.step);
                }
            }
        }
        let step = 300;
        let p = Schedule::scheduled_default().text_ratio(step);
        ensure!(p >= 0.7, "step {step} is outside the early phase (p={p})");
        let (s, b) = (r.median_src_st("scheduled", step), r.median_src_st("baseline", step));
        let detail = format!("median src S-T at step {step} (p={p}): scheduled {s:.4} vs baseline {b:.4}");
        ensure!(s > b, "{detail}");
        Ok(detail)
    });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
