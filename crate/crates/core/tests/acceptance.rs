//! End-to-end acceptance checks. Every criterion runs in one test so that the
//! wall-clock limits are measured without other tests competing for the CPU.
//! Each criterion prints one PASS/FAIL (or SKIPPED) line to stderr.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::{Duration as Days, NaiveDate, TimeZone, Utc};
use newsmil::corpus::{
    build_bags, derive_labels, load_corpus, split, synthesize, Bag, CorpusSource, Dataset, NewsItem,
    ParseMode, PriceBar, PriceField, SplitName, SynthCorpus, SynthSpec,
};
use newsmil::model::{
    aggregate_bag, attend, bag_predict, forward, instance_prob, load_checkpoint, lstm_step,
    run_gradcheck, save_checkpoint, AttnParams, BagClassifierParams, Checkpoint, Dims,
    GradcheckOptions, Gradients, InstanceClassifierParams, LstmParams, Mode, ModelParams, Variant,
};
use newsmil::tensor::{dropout_mask, Matrix, Rng};
use newsmil::textprep::{build_vocab, EmbeddingMatrix, Stopwords, Vocabulary};
use newsmil::train::{adadelta_step, evaluate, fit, instance_report, roc_auc, AdadeltaConfig, AdadeltaState, TrainConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

fn report(id: u32, name: &str, outcome: &Outcome) {
    let tag = if outcome.passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{tag}] criterion {id}: {name}: {}", outcome.detail);
}

// ---------------------------------------------------------------- helpers

fn uniform_vec(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, uniform_vec(rows * cols, -1.0, 1.0, rng)).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `W·x + b` with explicit loops.
fn affine_loop(w: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let mut acc = b[r];
        for c in 0..w.cols() {
            acc += w.data()[r * w.cols() + c] * x[c];
        }
        out.push(acc);
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Experiment dimensions for the synthetic runs: small enough for one core.
const SYNTH_DIMS: Dims = Dims { embed: 16, hidden: 8, attn: 8, mlp: 16 };

/// Stand-in for pretrained word vectors: uniform in [-1, 1], zero unknown row.
fn pseudo_pretrained(vocab: &Vocabulary, d: usize, rng: &mut Rng) -> EmbeddingMatrix {
    let mut vectors = Matrix::uniform(vocab.len(), d, 1.0, rng);
    vectors.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
    EmbeddingMatrix { vectors, trainable: true }
}

struct Prepared {
    corpus: SynthCorpus,
    vocab: Vocabulary,
    data: Dataset<Bag>,
}

fn prepare(spec: &SynthSpec) -> Prepared {
    let corpus = synthesize(spec).unwrap();
    let sw = Stopwords::none();
    let vocab = build_vocab(&corpus.days.train_titles(), &sw, 1).unwrap();
    let data = corpus.days.encode(&vocab, &sw);
    Prepared { corpus, vocab, data }
}

fn init_params(p: &Prepared, variant: Variant, seed: u64) -> ModelParams {
    let mut rng = Rng::new(seed ^ 0x5eed);
    let emb = pseudo_pretrained(&p.vocab, SYNTH_DIMS.embed, &mut rng);
    ModelParams::new(SYNTH_DIMS, variant, emb, &mut rng).unwrap()
}

fn synth_train_config(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 50,
        patience: 0,
        seed,
        variant,
        fine_tune_embeddings: true,
        ..TrainConfig::default()
    }
}

struct RunResult {
    test_accuracy: f64,
    auc: Option<f64>,
    elapsed: Duration,
}

fn planted_run(p: &Prepared, variant: Variant, seed: u64) -> RunResult {
    let start = Instant::now();
    let params = init_params(p, variant, seed);
    let fitted = fit(params, &p.data, &synth_train_config(variant, seed)).unwrap();
    let test_accuracy = evaluate(&fitted.params, &p.data.test).unwrap().accuracy;
    let auc = if variant.uses_instance_classifier() {
        let rows = instance_report(&fitted.params, &p.data.test).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| r.p_hat).collect();
        let truth: Vec<u8> = rows
            .iter()
            .map(|r| p.corpus.truth.get(r.date, r.instance_index).unwrap())
            .collect();
        roc_auc(&scores, &truth)
    } else {
        None
    };
    RunResult { test_accuracy, auc, elapsed: start.elapsed() }
}

/// Bag-of-words logistic regression: per-bag token frequencies, full-batch
/// gradient descent on the training split.
fn bow_logistic_accuracy(p: &Prepared) -> f64 {
    let v = p.vocab.len();
    let features = |bag: &Bag| {
        let mut x = vec![0.0; v];
        let mut total = 0.0;
        for seq in &bag.instances {
            for &id in seq.ids() {
                x[id as usize] += 1.0;
                total += 1.0;
            }
        }
        x.iter_mut().for_each(|c| *c /= total);
        x
    };
    let train: Vec<(Vec<f64>, f64)> = p.data.train.iter().map(|b| (features(b), b.label as f64)).collect();
    let mut w = vec![0.0; v];
    let mut b = 0.0;
    let lr = 20.0;
    for _ in 0..400 {
        let mut gw = vec![0.0; v];
        let mut gb = 0.0;
        for (x, y) in &train {
            let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            let e = sig(z) - y;
            for (g, c) in gw.iter_mut().zip(x) {
                *g += e * c;
            }
            gb += e;
        }
        let n = train.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    let correct = p
        .data
        .test
        .iter()
        .filter(|bag| {
            let x = features(bag);
            let z: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b;
            u8::from(sig(z) >= 0.5) == bag.label
        })
        .count();
    correct as f64 / p.data.test.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// ------------------------------------------------------------- criteria

fn criterion_1_gradcheck() -> Outcome {
    let start = Instant::now();
    let opts = GradcheckOptions::default();
    let report = run_gradcheck(&opts).unwrap();
    let elapsed = start.elapsed();
    let mut err = std::io::stderr().lock();
    for f in &report.families {
        let _ = writeln!(err, "    {:<12} max_rel_error {:.3e} ({} entries)", f.family, f.max_rel_error, f.entries);
    }
    let worst = report.families.iter().map(|f| f.max_rel_error).fold(0.0, f64::max);
    let ok = report.passed()
        && report.families.len() == 26
        && opts.seeds.len() == 5
        && elapsed < Duration::from_secs(30);
    Outcome::new(
        ok,
        format!(
            "{} families x {} seeds, worst relative error {worst:.3e} (limit 1e-5), {:.2?} (limit 30s)",
            report.families.len(),
            opts.seeds.len(),
            elapsed
        ),
    )
}

fn oracle_lstm(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut x = h_prev.to_vec();
    x.extend_from_slice(e);
    let f: Vec<f64> = affine_loop(&p.w_f, &x, &p.b_f).into_iter().map(sig).collect();
    let i: Vec<f64> = affine_loop(&p.w_i, &x, &p.b_i).into_iter().map(sig).collect();
    let g: Vec<f64> = affine_loop(&p.w_c, &x, &p.b_c).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = affine_loop(&p.w_o, &x, &p.b_o).into_iter().map(sig).collect();
    let mut c = Vec::new();
    let mut h = Vec::new();
    for k in 0..f.len() {
        let ck = f[k] * c_prev[k] + i[k] * g[k];
        c.push(ck);
        h.push(o[k] * ck.tanh());
    }
    (h, c)
}

fn oracle_attend(p: &AttnParams, hs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut scores = Vec::new();
    for h in hs {
        let u: Vec<f64> = affine_loop(&p.w, h, &p.b).into_iter().map(f64::tanh).collect();
        let mut s = 0.0;
        for k in 0..u.len() {
            s += p.ctx[k] * u[k];
        }
        scores.push(s);
    }
    let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut out = vec![0.0; hs[0].len()];
    for (a, h) in alpha.iter().zip(hs) {
        for k in 0..out.len() {
            out[k] += a * h[k];
        }
    }
    (alpha, out)
}

fn oracle_instance(p: &InstanceClassifierParams, n: &[f64], mask: Option<&[f64]>) -> f64 {
    let x: Vec<f64> = match mask {
        Some(m) => n.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => n.to_vec(),
    };
    let hidden: Vec<f64> = affine_loop(&p.w_hid, &x, &p.b_hid).into_iter().map(f64::tanh).collect();
    let mut s = p.b_news;
    for k in 0..hidden.len() {
        s += p.w_news[k] * hidden[k];
    }
    sig(s)
}

fn oracle_aggregate(items: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let mut z = vec![0.0; items[0].1.len()];
    for (p, n) in items {
        for k in 0..z.len() {
            z[k] += p * n[k];
        }
    }
    for v in &mut z {
        *v /= items.len() as f64;
    }
    z
}

fn oracle_bag(p: &BagClassifierParams, z: &[f64], mask: Option<&[f64]>) -> f64 {
    let mut s = p.b_day;
    for k in 0..z.len() {
        let m = mask.map_or(1.0, |m| m[k]);
        s += p.w_day[k] * m * z[k];
    }
    sig(s)
}

fn criterion_2_forward_oracles() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |name: &'static str, d: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(d);
    };
    for _ in 0..100 {
        let u = rng.range_inclusive(1, 4);
        let d = rng.range_inclusive(1, 5);
        let a = rng.range_inclusive(1, 4);
        let hdim = rng.range_inclusive(1, 4);
        let t = rng.range_inclusive(1, 6);

        let mut lstm = LstmParams::zeros(u, d);
        for m in [&mut lstm.w_f, &mut lstm.w_i, &mut lstm.w_c, &mut lstm.w_o] {
            *m = random_matrix(u, u + d, &mut rng);
        }
        for b in [&mut lstm.b_f, &mut lstm.b_i, &mut lstm.b_c, &mut lstm.b_o] {
            *b = uniform_vec(u, -1.0, 1.0, &mut rng);
        }
        let h_prev = uniform_vec(u, -1.0, 1.0, &mut rng);
        let c_prev = uniform_vec(u, -2.0, 2.0, &mut rng);
        let e = uniform_vec(d, -2.0, 2.0, &mut rng);
        let step = lstm_step(&lstm, &h_prev, &c_prev, &e).unwrap();
        let (h, c) = oracle_lstm(&lstm, &h_prev, &c_prev, &e);
        bump("lstm_step", max_abs_diff(&step.h, &h).max(max_abs_diff(&step.c, &c)));

        let attn = AttnParams {
            w: random_matrix(a, 2 * u, &mut rng),
            b: uniform_vec(a, -1.0, 1.0, &mut rng),
            ctx: uniform_vec(a, -2.0, 2.0, &mut rng),
        };
        let hs: Vec<Vec<f64>> = (0..t).map(|_| uniform_vec(2 * u, -1.0, 1.0, &mut rng)).collect();
        let tr = attend(&attn, &hs).unwrap();
        let (alpha, out) = oracle_attend(&attn, &hs);
        bump("attend", max_abs_diff(&tr.alpha, &alpha).max(max_abs_diff(&tr.output, &out)));

        let inst = InstanceClassifierParams {
            w_hid: random_matrix(hdim, 2 * u, &mut rng),
            b_hid: uniform_vec(hdim, -1.0, 1.0, &mut rng),
            w_news: uniform_vec(hdim, -2.0, 2.0, &mut rng),
            b_news: rng.uniform(-1.0, 1.0),
        };
        let n = uniform_vec(2 * u, -1.0, 1.0, &mut rng);
        let mask = dropout_mask(2 * u, 0.5, &mut rng).unwrap();
        let p_plain = instance_prob(&inst, &n, None).unwrap().p;
        let p_masked = instance_prob(&inst, &n, Some(&mask)).unwrap().p;
        bump(
            "instance_prob",
            (p_plain - oracle_instance(&inst, &n, None))
                .abs()
                .max((p_masked - oracle_instance(&inst, &n, Some(mask.values()))).abs()),
        );

        let k = rng.range_inclusive(1, 6);
        let items: Vec<(f64, Vec<f64>)> =
            (0..k).map(|_| (rng.uniform(0.0, 1.0), uniform_vec(2 * u, -1.0, 1.0, &mut rng))).collect();
        let borrowed: Vec<(f64, &[f64])> = items.iter().map(|(p, n)| (*p, n.as_slice())).collect();
        let z = aggregate_bag(&borrowed).unwrap();
        bump("aggregate_bag", max_abs_diff(&z, &oracle_aggregate(&items)));

        let bag = BagClassifierParams { w_day: uniform_vec(2 * u, -2.0, 2.0, &mut rng), b_day: rng.uniform(-1.0, 1.0) };
        let zmask = dropout_mask(2 * u, 0.5, &mut rng).unwrap();
        let y_plain = bag_predict(&bag, &z, None).unwrap().y;
        let y_masked = bag_predict(&bag, &z, Some(&zmask)).unwrap().y;
        bump(
            "bag_predict",
            (y_plain - oracle_bag(&bag, &z, None))
                .abs()
                .max((y_masked - oracle_bag(&bag, &z, Some(zmask.values()))).abs()),
        );
    }
    let ok = worst.len() == 5 && worst.values().all(|&d| d <= 1e-9);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(ok, format!("100 random inputs each, max abs diff: {detail} (limit 1e-9)"))
}

fn criterion_3_structural() -> Outcome {
    let mut spec = SynthSpec::planted(33);
    spec.n_train = 400;
    spec.n_val = 50;
    spec.n_test = 50;
    let prepared = prepare(&spec);
    let params = init_params(&prepared, Variant::MilRep, 33);
    let bags: Vec<&Bag> = prepared.data.train.iter().chain(&prepared.data.val).chain(&prepared.data.test).collect();

    let mut alpha_dev: f64 = 0.0;
    let mut instances = 0;
    let mut perm_dev: f64 = 0.0;
    let mut bit_exact = true;
    let mut rng = Rng::new(7);
    for bag in &bags {
        let (y, trace) = forward(&params, bag, Mode::Infer, &mut Rng::new(1)).unwrap();
        for inst in &trace.instances {
            let a = &inst.attention.as_ref().unwrap().alpha;
            alpha_dev = alpha_dev.max((a.iter().sum::<f64>() - 1.0).abs());
            instances += 1;
        }
        let (y_again, _) = forward(&params, bag, Mode::Infer, &mut Rng::new(99)).unwrap();
        bit_exact &= y.to_bits() == y_again.to_bits();

        let mut order: Vec<usize> = (0..bag.instances.len()).collect();
        rng.shuffle(&mut order);
        let permuted = Bag {
            day: bag.day,
            instances: order.iter().map(|&i| bag.instances[i].clone()).collect(),
            headlines: order.iter().map(|&i| bag.headlines[i].clone()).collect(),
            label: bag.label,
        };
        let (y_perm, _) = forward(&params, &permuted, Mode::Infer, &mut Rng::new(1)).unwrap();
        perm_dev = perm_dev.max((y - y_perm).abs());
    }
    let ok = bags.len() == 500 && alpha_dev <= 1e-6 && perm_dev <= 1e-9 && bit_exact;
    Outcome::new(
        ok,
        format!(
            "{} bags / {instances} instances: max |sum(alpha) - 1| {alpha_dev:.1e} (limit 1e-6), \
             permutation max |dy| {perm_dev:.1e} (limit 1e-9), infer bit-exact {bit_exact}",
            bags.len()
        ),
    )
}

fn criterion_4_planted(prepared: &Prepared) -> Outcome {
    let oracle = bow_logistic_accuracy(prepared);
    let run = planted_run(prepared, Variant::MilRep, 0);
    let auc = run.auc.unwrap_or(f64::NAN);
    let ok = oracle > 0.95
        && run.test_accuracy >= 0.90
        && auc >= 0.80
        && run.elapsed < Duration::from_secs(300);
    Outcome::new(
        ok,
        format!(
            "bag-of-words oracle accuracy {oracle:.4} (need > 0.95), MIL-rep test accuracy {:.4} (need >= 0.90), \
             instance ROC-AUC {auc:.4} (need >= 0.80; orientation-free {:.4}), {:.1?} (limit 300s)",
            run.test_accuracy,
            auc.max(1.0 - auc),
            run.elapsed
        ),
    )
}

fn criterion_5_baselines() -> Outcome {
    let mut rep = Vec::new();
    let mut mean = Vec::new();
    for seed in 1..=3 {
        let mut spec = SynthSpec::planted(seed);
        spec.dominant_frac = 0.6;
        let prepared = prepare(&spec);
        rep.push(planted_run(&prepared, Variant::MilRep, seed).test_accuracy);
        mean.push(planted_run(&prepared, Variant::MilS, seed).test_accuracy);
    }
    let (mr, ms) = (median(rep.clone()), median(mean.clone()));
    Outcome::new(
        mr >= ms,
        format!("60/40 mixing, seeds 1-3: MIL-rep {rep:.4?} median {mr:.4} vs MIL-s {mean:.4?} median {ms:.4}"),
    )
}

fn criterion_6_optimizer() -> Outcome {
    let mut rng = Rng::new(6);
    let vocab = Vocabulary::from_tokens(vec!["<unk>".into(), "a".into(), "b".into()], 1).unwrap();
    let dims = Dims { embed: 2, hidden: 2, attn: 2, mlp: 2 };
    let mut emb = EmbeddingMatrix::random(&vocab, 2, &mut rng);
    emb.trainable = true;
    let mut params = ModelParams::new(dims, Variant::MilRep, emb, &mut rng).unwrap();
    let cfg = AdadeltaConfig::default();

    // Zero gradient from a fresh state: parameters and accumulators untouched.
    let before = params.clone();
    let mut state = AdadeltaState::new(&params, cfg);
    let zero = Gradients::zeros_like(&params);
    adadelta_step(&mut state, &mut params, &zero).unwrap();
    let identity = params == before
        && state.dense().iter().flatten().chain(state.embeddings()).all(|a| a.sq_grad == 0.0 && a.sq_update == 0.0);

    // 100 random steps against a per-scalar recurrence.
    let mut state = AdadeltaState::new(&params, cfg);
    let flat = |p: &ModelParams| -> Vec<f64> {
        let mut v: Vec<f64> = p.weights.tensors().iter().flat_map(|t| t.data.to_vec()).collect();
        v.extend_from_slice(p.embeddings.vectors.data());
        v
    };
    let mut x = flat(&params);
    let mut eg = vec![0.0; x.len()];
    let mut edx = vec![0.0; x.len()];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut g = Gradients::zeros_like(&params);
        for t in g.weights.slices_mut() {
            t.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
        }
        g.add_embedding_row(1, &[rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]);
        let mut gflat: Vec<f64> = g.weights.tensors().iter().flat_map(|t| t.data.to_vec()).collect();
        let mut emb_g = vec![0.0; 6];
        emb_g[2..4].copy_from_slice(&g.embeddings[&1]);
        gflat.extend(emb_g);

        adadelta_step(&mut state, &mut params, &g).unwrap();
        for k in 0..x.len() {
            eg[k] = cfg.rho * eg[k] + (1.0 - cfg.rho) * gflat[k] * gflat[k];
            let delta = -((edx[k] + cfg.eps).sqrt() / (eg[k] + cfg.eps).sqrt()) * gflat[k];
            edx[k] = cfg.rho * edx[k] + (1.0 - cfg.rho) * delta * delta;
            x[k] += cfg.lr * delta;
        }
        worst = worst.max(max_abs_diff(&flat(&params), &x));
    }
    Outcome::new(
        identity && worst <= 1e-12,
        format!("zero-gradient identity exact: {identity}; 100-step max deviation {worst:.1e} (limit 1e-12)"),
    )
}

fn random_bars(rng: &mut Rng, n: usize, start: NaiveDate) -> Vec<PriceBar> {
    let mut date = start;
    (0..n)
        .map(|_| {
            date += Days::days(rng.range_inclusive(1, 4) as i64);
            let close = rng.range_inclusive(95, 105) as f64;
            PriceBar {
                date,
                open: close,
                high: close + 1.0,
                low: close - 1.0,
                close,
                adj_close: close * 0.5,
                volume: 1000,
            }
        })
        .collect()
}

fn criterion_7_pipeline() -> Outcome {
    let mut rng = Rng::new(77);
    let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();

    let mut label_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.range_inclusive(2, 30);
        let bars = random_bars(&mut rng, n, start);
        let labels = derive_labels(&bars, PriceField::Close).unwrap();
        let mut oracle = HashMap::new();
        for k in 1..bars.len() {
            let up = if bars[k].close > bars[k - 1].close { 1 } else { 0 };
            oracle.insert(bars[k].date, up);
        }
        if labels.len() != oracle.len() || labels.iter().any(|(d, l)| oracle.get(d) != Some(l)) {
            label_mismatch += 1;
        }
    }

    let mut invariant_failures = 0;
    for _ in 0..200 {
        let n = rng.range_inclusive(2, 40);
        let bars = random_bars(&mut rng, n, start);
        let labels = derive_labels(&bars, PriceField::Close).unwrap();
        let lag = rng.range_inclusive(0, 2) as i64;
        let span = (bars.last().unwrap().date - start).num_days() + 5;
        let news: Vec<NewsItem> = (0..rng.range_inclusive(1, 80))
            .map(|i| {
                let day = start + Days::days(rng.range_inclusive(0, span as usize) as i64);
                let ts = Utc.from_utc_datetime(&day.and_hms_opt(rng.range_inclusive(0, 23) as u32, 0, 0).unwrap());
                NewsItem::new(ts, format!("headline {i}"))
            })
            .collect();
        let total = news.len();
        let expected_day = |item: &NewsItem| {
            let date = item.timestamp.date_naive() + Days::days(lag);
            bars.iter().map(|b| b.date).find(|d| *d >= date)
        };
        let mut want: BTreeMap<NaiveDate, usize> = BTreeMap::new();
        for item in &news {
            if let Some(d) = expected_day(item).filter(|d| labels.contains_key(d)) {
                *want.entry(d).or_default() += 1;
            }
        }
        let asg = build_bags(news, &bars, &labels, lag);
        let assigned: usize = asg.days.iter().map(|d| d.items.len()).sum();
        let got: BTreeMap<NaiveDate, usize> = asg.days.iter().map(|d| (d.day, d.items.len())).collect();
        let conserved = assigned + asg.dropped_late + asg.dropped_unlabeled == total;
        let placed = asg.days.iter().all(|d| d.items.iter().all(|it| expected_day(it) == Some(d.day)));
        let labelled = asg.days.iter().all(|d| labels.get(&d.day) == Some(&d.label));
        if !(conserved && placed && labelled && got == want) {
            invariant_failures += 1;
            continue;
        }
        if asg.days.is_empty() {
            continue;
        }
        let first = asg.days[0].day;
        let train_end = first + Days::days(rng.range_inclusive(0, 30) as i64);
        let val_end = train_end + Days::days(rng.range_inclusive(1, 30) as i64);
        let mut days: Vec<NaiveDate> = asg.days.iter().map(|d| d.day).collect();
        let ds = split(asg.days, train_end, val_end).unwrap();
        let cover: Vec<NaiveDate> = SplitName::ALL.iter().flat_map(|&s| ds.get(s).iter().map(|d| d.day)).collect();
        days.sort();
        let ordered = ds.train.iter().all(|d| d.day <= train_end)
            && ds.val.iter().all(|d| d.day > train_end && d.day <= val_end)
            && ds.test.iter().all(|d| d.day > val_end);
        if cover != days || !ordered {
            invariant_failures += 1;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let mut round_trips = true;
    for (i, variant) in [Variant::MilRep, Variant::MilS, Variant::SAvg].into_iter().enumerate() {
        let mut spec = SynthSpec::planted(i as u64);
        spec.n_train = 20;
        spec.n_val = 5;
        spec.n_test = 5;
        let prepared = prepare(&spec);
        let params = init_params(&prepared, variant, i as u64);
        let ck = Checkpoint::new(params, prepared.vocab.clone()).unwrap();
        let a = dir.path().join(format!("a{i}.ckpt"));
        let b = dir.path().join(format!("b{i}.ckpt"));
        save_checkpoint(&a, &ck).unwrap();
        save_checkpoint(&b, &load_checkpoint(&a).unwrap()).unwrap();
        round_trips &= std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    }

    Outcome::new(
        label_mismatch == 0 && invariant_failures == 0 && round_trips,
        format!(
            "label mismatches {label_mismatch}/1000, calendar invariant failures {invariant_failures}/200, \
             checkpoint round trip byte-identical {round_trips}"
        ),
    )
}

/// Directory holding `news.tsv`, `prices.csv` and optionally `keywords.txt`.
const ORIGINAL_CORPUS_VAR: &str = "NEWSMIL_ORIGINAL_CORPUS";

fn criterion_8_original_corpus() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os(ORIGINAL_CORPUS_VAR)?);
    let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
    let keywords = dir.join("keywords.txt");
    let src = CorpusSource {
        news: dir.join("news.tsv"),
        prices: dir.join("prices.csv"),
        keywords: keywords.exists().then_some(keywords),
        mode: ParseMode::Lenient,
        price_field: PriceField::Close,
        lag_days: 0,
        train_end: date("2012-06-27"),
        val_end: date("2013-03-13"),
    };
    let loaded = match load_corpus(&src) {
        Ok(l) => l,
        Err(e) => return Some(Outcome::new(false, format!("could not load corpus: {e}"))),
    };
    let (first, last) = (date("2006-10-20"), date("2013-11-20"));
    let days = loaded.days.map(|d| d.iter().filter(|b| b.day >= first && b.day <= last).cloned().collect());
    let stats = days.stats();
    let get = |s: SplitName| stats.iter().find(|(n, _)| *n == s).and_then(|(_, st)| st.clone());
    let (train, val, test) = (get(SplitName::Train), get(SplitName::Val), get(SplitName::Test));
    let counts = [&train, &val, &test].map(|s| s.as_ref().map_or(0, |s| s.news));
    let mean = train.as_ref().map_or(f64::NAN, |s| s.mean);
    Some(Outcome::new(
        (mean - 11.078795).abs() <= 1e-6 && counts == [38454, 13237, 11712],
        format!("training mean {mean:.6} (want 11.078795 +- 1e-6), news counts {counts:?} (want [38454, 13237, 11712])"),
    ))
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut run = |id: u32, name: &str, outcome: Outcome| {
        report(id, name, &outcome);
        if !outcome.passed {
            failed.push(id);
        }
    };
    run(1, "gradient check", criterion_1_gradcheck());
    run(2, "forward oracle equivalence", criterion_2_forward_oracles());
    run(3, "structural invariants", criterion_3_structural());
    run(4, "planted polarity end to end", criterion_4_planted(&prepare(&SynthSpec::planted(0))));
    run(5, "baseline ordering", criterion_5_baselines());
    run(6, "optimizer", criterion_6_optimizer());
    run(7, "data pipeline", criterion_7_pipeline());
    match criterion_8_original_corpus() {
        Some(outcome) => run(8, "original corpus statistics", outcome),
        None => {
            let _ = writeln!(
                std::io::stderr().lock(),
                "[SKIPPED] criterion 8: original corpus statistics: set {ORIGINAL_CORPUS_VAR} to a directory with news.tsv and prices.csv"
            );
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
