//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. The Cora and MUTAG runs are full size, so a
//! complete pass takes tens of minutes on one core.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use common::reference::{reference, to_mat};
use common::*;
use gcot::cot::{
    cot_forward, standard_prompt_apply, CotConfig, FrozenContext, PromptState, StdPromptConfig,
};
use gcot::encoder::{encode_graph, load_checkpoint, save_checkpoint, EncoderConfig};
use gcot::fewshot::{
    init_prompt_state, run_benchmark, sample_task, support_loss, tune, write_results_csv,
    AblationVariant, BenchConfig, ResultsRecord, TuneConfig,
};
use gcot::graphdata::{load_dataset, PreparedGraph, TaskKind};
use gcot::numcore::Tensor;
use gcot::pretrain::{pretrain_run, PretrainConfig};
use gcot::rng::stream;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} [{id}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn secs(t: Instant) -> String {
    format!("{:.1}s", t.elapsed().as_secs_f64())
}

// ---- 1 ------------------------------------------------------------------------

fn params_mut(state: &mut PromptState) -> Vec<&mut Tensor> {
    let mut out: Vec<&mut Tensor> = vec![&mut state.fusion];
    out.extend(state.condnet.params_mut());
    out.extend(state.standard.params_mut());
    out
}

/// Worst norm-wise relative error over the fusion, condition-net and standard-prompt tensors.
fn gradient_check() -> (f64, usize) {
    let step = 1e-4;
    let (d, l, h) = (5, 3, 8);
    let c = node_collection(12, 12, d, 3);
    let ctx = FrozenContext::new(prepared(&c), frozen_encoder(13, l, d, h)).unwrap();
    let cot = CotConfig {
        steps: 2,
        cond_hidden: 4,
        std_prompt: StdPromptConfig {
            kind: "gpf_plus".into(),
            num_prompts: 2,
        },
        chain_features: false,
    };
    let task = sample_task(ctx.graph(), TaskKind::Node, 2, &mut stream(3, &[])).unwrap();
    let mut state = PromptState::init(
        &cot,
        EncoderConfig::new(l, d, h).unwrap(),
        &mut stream(4, &[]),
    )
    .unwrap();
    perturb(&mut state, 5, 0.3);
    let tau = 0.5;
    let loss_of = |s: &PromptState| {
        let (out, loss) = support_loss(&ctx, &task, s, tau).unwrap();
        out.tape.value(loss).item().unwrap()
    };

    let (out, loss) = support_loss(&ctx, &task, &state, tau).unwrap();
    let grads = out.tape.backward(loss).unwrap();
    let mut vars = vec![out.params.fusion.unwrap()];
    vars.extend(out.params.condnet.unwrap());
    vars.extend(out.params.standard.iter().copied());
    assert_eq!(vars.len(), params_mut(&mut state).len());

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var, out.tape.value(var).shape());
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for e in 0..analytic.values().len() {
            let mut plus = state.clone();
            params_mut(&mut plus)[pi].values_mut()[e] += step;
            let mut minus = state.clone();
            params_mut(&mut minus)[pi].values_mut()[e] -= step;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            let a = analytic.values()[e];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            entries += 1;
        }
        worst = worst.max(diff2.sqrt() / f64::max(a2, n2).sqrt().max(1e-12));
    }
    (worst, entries)
}

// ---- 3 ------------------------------------------------------------------------

fn answer(ctx: &FrozenContext, state: &PromptState) -> Tensor {
    let out = cot_forward(ctx, state, None).unwrap();
    out.tape.value(out.answer).clone()
}

fn structural_equivalences() -> Vec<(String, bool)> {
    let (d, l, h) = (5, 3, 6);
    let c = node_collection(31, 40, d, 3);
    let graph = prepared(&c);
    let enc = frozen_encoder(32, l, d, h);
    let ctx = FrozenContext::new(graph.clone(), enc.clone()).unwrap();
    let cot = CotConfig {
        steps: 2,
        cond_hidden: 4,
        std_prompt: StdPromptConfig {
            kind: "gpf_plus".into(),
            num_prompts: 3,
        },
        chain_features: false,
    };
    let mut checks = Vec::new();

    let mut one = init_prompt_state(&ctx, &cot, AblationVariant::NoCot, 7).unwrap();
    perturb(&mut one, 8, 0.3);
    let plain = encode_graph(&graph, &enc).unwrap();
    let pipeline = standard_prompt_apply(plain.last().unwrap(), one.standard.as_ref()).unwrap();
    checks.push((
        "K=1 equals encoder then standard prompt".into(),
        answer(&ctx, &one) == pipeline,
    ));

    let mut two = init_prompt_state(&ctx, &cot, AblationVariant::Full, 7).unwrap();
    two.standard = one.standard.clone();
    checks.push((
        "K=2 at initialization equals K=1".into(),
        answer(&ctx, &two) == answer(&ctx, &one),
    ));

    let task = sample_task(&graph, TaskKind::Node, 2, &mut stream(9, &[])).unwrap();
    let tuning = TuneConfig {
        epochs: 5,
        ..TuneConfig::default()
    };
    for layer in 1..=l {
        let mut pinned =
            init_prompt_state(&ctx, &cot, AblationVariant::LayerOnly(layer), 10).unwrap();
        perturb(&mut pinned, 11, 0.3);
        let out = cot_forward(&ctx, &pinned, None).unwrap();
        let thought_is_layer = *out.tape.value(out.thoughts[0]) == plain[layer - 1];
        // the same state with e_l as ordinary, unpinned fusion weights
        let mut free = pinned.clone();
        free.fusion_pinned = false;
        let mut e = vec![0.0; l];
        e[layer - 1] = 1.0;
        let same_as_free =
            free.fusion == Tensor::row_vector(&e) && answer(&ctx, &free) == answer(&ctx, &pinned);
        let tuned = tune(&ctx, &task, pinned, &tuning).unwrap().state;
        let stays = tuned.fusion == Tensor::row_vector(&e);
        checks.push((
            format!("layer_only({layer}) thought is layer {layer} and its fusion stays e_{layer}"),
            thought_is_layer && same_as_free && stays,
        ));
    }
    checks
}

// ---- 4 ------------------------------------------------------------------------

fn oracle_deviation() -> f64 {
    let (d, l, h) = (4, 3, 6);
    let c = node_collection(41, 5, d, 2);
    let enc = frozen_encoder(42, l, d, h);
    let ctx = FrozenContext::new(prepared(&c), enc.clone()).unwrap();
    let cot = CotConfig {
        steps: 3,
        cond_hidden: 3,
        std_prompt: StdPromptConfig {
            kind: "gpf_plus".into(),
            num_prompts: 2,
        },
        chain_features: false,
    };
    let mut state = PromptState::init(&cot, enc.config(), &mut stream(43, &[])).unwrap();
    perturb(&mut state, 44, 0.5);
    let got = to_mat(&answer(&ctx, &state));
    let want = reference(&c.graphs[0], &enc, &state);
    let mut dev: f64 = 0.0;
    for (g, w) in got.iter().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            dev = dev.max((a - b).abs());
        }
    }
    dev
}

// ---- 7 ------------------------------------------------------------------------

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Median wall time of a full-graph forward for K = 1..=4.
fn forward_times(ctx: &FrozenContext) -> Vec<f64> {
    (1..=4)
        .map(|k| {
            let cot = CotConfig {
                steps: k,
                ..CotConfig::for_task(TaskKind::Node)
            };
            let state = init_prompt_state(ctx, &cot, AblationVariant::Full, 0).unwrap();
            let _ = cot_forward(ctx, &state, None).unwrap();
            let mut times: Vec<f64> = (0..7)
                .map(|_| {
                    let t = Instant::now();
                    let out = cot_forward(ctx, &state, None).unwrap();
                    std::hint::black_box(out.tape.len());
                    t.elapsed().as_secs_f64()
                })
                .collect();
            times.sort_by(f64::total_cmp);
            times[times.len() / 2]
        })
        .collect()
}

// ---- 9 ------------------------------------------------------------------------

fn results_bytes(ctx: &FrozenContext, config: &BenchConfig, jobs: usize, dir: &Path) -> Vec<u8> {
    let record = run_benchmark(ctx, config, jobs).unwrap();
    let path = dir.join(format!("results_{jobs}.csv"));
    write_results_csv(&[record], &path).unwrap();
    std::fs::read(path).unwrap()
}

fn determinism(ctx: &FrozenContext, kind: TaskKind, dir: &Path) -> bool {
    let config = BenchConfig {
        num_tasks: 4,
        num_seeds: 2,
        base_seed: 5,
        tune: TuneConfig {
            epochs: 10,
            ..TuneConfig::default()
        },
        ..BenchConfig::new(kind)
    };
    let first = results_bytes(ctx, &config, 1, dir);
    first == results_bytes(ctx, &config, 1, dir) && first == results_bytes(ctx, &config, 3, dir)
}

// -------------------------------------------------------------------------------

fn pretrained_context(name: &str, dir: &Path) -> (FrozenContext, Vec<f64>, Vec<f64>, [u8; 32]) {
    let collection = load_dataset(fixture(name)).unwrap();
    let graph = Arc::new(PreparedGraph::from_collection(&collection));
    let encoder = EncoderConfig::new(3, graph.feature_dim(), 256).unwrap();
    let config = PretrainConfig::default();
    let first = pretrain_run(&graph, encoder, &config).unwrap();
    let again = pretrain_run(&graph, encoder, &config).unwrap();
    let path = dir.join(format!("{name}.ckpt"));
    save_checkpoint(&first.weights, &path).unwrap();
    let weights = load_checkpoint(&path).unwrap();
    let digest = weights.digest();
    let ctx = FrozenContext::new(graph, Arc::new(weights)).unwrap();
    (ctx, first.losses, again.losses, digest)
}

fn bench(ctx: &FrozenContext, kind: TaskKind, variant: AblationVariant) -> ResultsRecord {
    let config = BenchConfig {
        variant,
        ..BenchConfig::new(kind)
    };
    run_benchmark(ctx, &config, 1).unwrap()
}

fn main() {
    let mut report = Report { failed: 0 };
    let dir = tempfile::tempdir().unwrap();

    let t = Instant::now();
    let (worst, entries) = gradient_check();
    report.line(
        1,
        "gradient soundness",
        worst < 1e-3,
        format!(
            "worst relative error {worst:.2e} over {entries} entries (< 1e-3) in {}",
            secs(t)
        ),
    );

    let checks = structural_equivalences();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.1)
        .map(|c| c.0.as_str())
        .collect();
    report.line(
        3,
        "structural equivalences",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} exact checks hold", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    );

    let dev = oracle_deviation();
    report.line(
        4,
        "K=3 oracle",
        dev < 1e-9,
        format!("max abs deviation {dev:.2e} (< 1e-9)"),
    );

    let t = Instant::now();
    let (cora, losses, rerun, cora_digest) = pretrained_context("cora", dir.path());
    let (l1, l200) = (losses[0], losses[losses.len() - 1]);
    let identical = losses
        .iter()
        .map(|v| v.to_bits())
        .eq(rerun.iter().map(|v| v.to_bits()));
    report.line(
        8,
        "pre-training health",
        losses.len() == 200 && l200 < l1 && identical,
        format!(
            "Cora loss {l1:.3} at epoch 1, {l200:.3} at epoch {}; rerun bit-identical: {identical} ({})",
            losses.len(),
            secs(t)
        ),
    );

    let t = Instant::now();
    let times = forward_times(&cora);
    let r2 = r_squared(&[1.0, 2.0, 3.0, 4.0], &times);
    let ms: Vec<String> = times.iter().map(|s| format!("{:.1}", s * 1e3)).collect();
    report.line(
        7,
        "timing linearity",
        r2 >= 0.9,
        format!(
            "forward ms for K=1..4: [{}], R^2 {r2:.4} (>= 0.9) in {}",
            ms.join(", "),
            secs(t)
        ),
    );

    let t = Instant::now();
    let deterministic = determinism(&cora, TaskKind::Node, dir.path());
    report.line(
        9,
        "determinism",
        deterministic,
        format!(
            "Cora results CSV byte-identical on rerun and with 3 workers: {deterministic} ({})",
            secs(t)
        ),
    );

    let t = Instant::now();
    let full = bench(&cora, TaskKind::Node, AblationVariant::Full);
    let full_time = secs(t);
    let t = Instant::now();
    let no_cot = bench(&cora, TaskKind::Node, AblationVariant::NoCot);
    let gap = full.mean - no_cot.mean;
    report.line(
        5,
        "ablation direction",
        gap > 0.0,
        format!(
            "Cora 1-shot over {} runs: full {:.2} vs no_cot {:.2}, gap {:+.2} points (> 0) ({full_time} + {})",
            full.runs.len(),
            100.0 * full.mean,
            100.0 * no_cot.mean,
            100.0 * gap,
            secs(t)
        ),
    );

    let t = Instant::now();
    let (mutag, _, _, mutag_digest) = pretrained_context("mutag", dir.path());
    let graph_full = bench(&mutag, TaskKind::Graph, AblationVariant::Full);
    let cora_pct = 100.0 * full.mean;
    let mutag_pct = 100.0 * graph_full.mean;
    report.line(
        6,
        "banded reproduction",
        (52.0..=68.0).contains(&cora_pct) && (50.0..=67.0).contains(&mutag_pct),
        format!(
            "Cora 1-shot {cora_pct:.2} ± {:.2} in [52, 68]; MUTAG 1-shot {mutag_pct:.2} ± {:.2} in [50, 67] ({})",
            100.0 * full.std,
            100.0 * graph_full.std,
            secs(t)
        ),
    );

    let frozen = cora.encoder().digest() == cora_digest
        && load_checkpoint(dir.path().join("cora.ckpt"))
            .unwrap()
            .digest()
            == cora_digest
        && mutag.encoder().digest() == mutag_digest
        && load_checkpoint(dir.path().join("mutag.ckpt"))
            .unwrap()
            .digest()
            == mutag_digest;
    report.line(
        2,
        "frozen encoder",
        frozen,
        format!("encoder digests equal their checkpoints after every tuning run: {frozen}"),
    );

    println!("{} of 9 criteria failed", report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}
