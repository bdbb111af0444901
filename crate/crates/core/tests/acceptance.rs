//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use gqr_core::align::{
    accumulate_dpo_grad, beam_search_chosen, dpo_loss, AlignConfig, DpoExample, PreferenceTriple,
};
use gqr_core::ctr::{bce_gradient, bce_loss, CtrInstance, CtrModel, Featurizer};
use gqr_core::metrics::{auc, diff_ctr, EvalReport};
use gqr_core::optim::SparseGrad;
use gqr_core::pipeline::*;
use gqr_core::policy::{CandidatePool, Policy, PreparedPrompt};
use gqr_core::prompt::{ComponentKind, PromptRecord};
use gqr_core::reward::{reward_multi, reward_oracle, reward_single, score_list, ClickScorer};
use gqr_core::text::{self, hash_parts, unit_interval};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Relative error with the denominator floored at 1e-5. Central differences
/// at h = 1e-5 carry round-off near 1e-11 / h, so components smaller than the
/// floor (including exact zeros) are compared on an absolute scale instead.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn config(toml: &str) -> PipelineConfig {
    PipelineConfig::from_toml(toml).expect("fixture config")
}

fn uniform(cfg: &PipelineConfig) -> Policy {
    Policy::uniform(cfg.policy.hash_dim, cfg.policy.temperature).unwrap()
}

fn simulate_uniform(world: &World, cfg: &PipelineConfig) -> Logs {
    let policy = uniform(cfg);
    let server = Serving {
        factory: PromptFactory::new(&world.universe, cfg, None),
        policy: &policy,
    };
    simulate_period(world, &server, cfg, 1).unwrap()
}

// ---------------------------------------------------------------- 1

fn formula_oracles() -> Verdict {
    let mut rng = text::rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = 1 + i % 10;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        worst = worst.max(
            (reward_multi(&p).unwrap() - reward_oracle(&p, ComponentKind::MultiChoice).unwrap())
                .abs(),
        );
        // single-choice needs sum(p) <= 1 to be a probability
        let q: Vec<f64> = p.iter().map(|x| x / n as f64).collect();
        worst = worst.max(
            (reward_single(&q).unwrap() - reward_oracle(&q, ComponentKind::SingleChoice).unwrap())
                .abs(),
        );
    }
    let d1 = (diff_ctr(&[0.10, 0.20], &[0.12, 0.16]).unwrap() - 0.08 / 3.0).abs();
    let d2 = diff_ctr(&[0.3], &[0.7]).unwrap().abs();
    let d3 = diff_ctr(&[0.2, 0.4, 0.1], &[0.1, 0.2, 0.05]).unwrap().abs();
    let diff_ok = d1.max(d2).max(d3) <= 1e-9;
    let auc_ok = auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap() == 1.0
        && auc(&[0.3; 4], &[true, false, true, false]).unwrap() == 0.5
        && auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap() == 0.75;
    verdict(
        worst <= 1e-12 && diff_ok && auc_ok,
        format!(
            "reward max |err| {worst:.1e}, diff_ctr max |err| {:.1e}, auc fixtures exact {auc_ok}",
            d1.max(d2).max(d3)
        ),
    )
}

// ---------------------------------------------------------------- 2

fn ctr_gradient_error(case: u64) -> f64 {
    let h = 1e-5;
    let mut rng = text::rng(7000 + case);
    let mut m = CtrModel::zeros(Featurizer::with_dim(1 << 6).unwrap()).unwrap();
    for w in &mut m.weights {
        *w = rng.gen_range(-0.5..0.5);
    }
    m.bias = rng.gen_range(-1.0..1.0);
    let insts: Vec<CtrInstance> = (0..8)
        .map(|i| CtrInstance {
            user_query: format!("u{} w{}", rng.gen_range(0..3), rng.gen_range(0..3)),
            context: (0..i % 3)
                .map(|k| format!("c{k} w{}", rng.gen_range(0..3)))
                .collect(),
            target: format!("t{} w{}", rng.gen_range(0..4), rng.gen_range(0..3)),
            slot: 1 + i % 3,
            label: Some(rng.gen()),
        })
        .collect();
    let (gw, gb) = bce_gradient(&m, &insts).unwrap();
    let mut worst: f64 = 0.0;
    for (j, &gj) in gw.iter().enumerate() {
        let (mut a, mut b) = (m.clone(), m.clone());
        a.weights[j] += h;
        b.weights[j] -= h;
        let num = (bce_loss(&a, &insts).unwrap() - bce_loss(&b, &insts).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(gj, num));
    }
    let (mut a, mut b) = (m.clone(), m.clone());
    a.bias += h;
    b.bias -= h;
    let num = (bce_loss(&a, &insts).unwrap() - bce_loss(&b, &insts).unwrap()) / (2.0 * h);
    worst.max(rel_err(gb, num))
}

fn toy_prompt(m: usize, n: usize, dim: u32, tag: usize) -> PreparedPrompt {
    let p = PromptRecord::new(format!("user {tag} w1"), n, ComponentKind::MultiChoice).unwrap();
    let pool = CandidatePool {
        queries: (0..m).map(|j| format!("q{j} w{}", j % 3)).collect(),
        cor_rank: (0..m).map(|j| (j < 2).then_some(j)).collect(),
    };
    PreparedPrompt::new(p, pool, dim)
}

fn random_policy(rng: &mut rand_chacha::ChaCha8Rng, dim: u32) -> Policy {
    let mut p = Policy::uniform(dim, rng.gen_range(0.5..1.5)).unwrap();
    for w in &mut p.weights {
        *w = rng.gen_range(-1.0..1.0);
    }
    p
}

fn dpo_gradient_error(case: u64) -> f64 {
    let h = 1e-5;
    let dim = 1 << 6;
    let mut rng = text::rng(9000 + case);
    let reference = random_policy(&mut rng, dim).snapshot();
    let p = random_policy(&mut rng, dim);
    let prompts: Vec<PreparedPrompt> = (0..3)
        .map(|t| toy_prompt(5 + t, 1 + (case as usize + t) % 3, dim, t))
        .collect();
    let ex: Vec<DpoExample<'_>> = prompts
        .iter()
        .map(|pp| {
            let m = pp.pool.len();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            DpoExample::new(
                &reference,
                pp,
                idx[..pp.n()].to_vec(),
                idx[m - pp.n()..].to_vec(),
            )
            .unwrap()
        })
        .collect();
    let beta = rng.gen_range(0.05..2.0);
    let refs: Vec<&DpoExample<'_>> = ex.iter().collect();
    let mut g = SparseGrad::new(dim as usize);
    accumulate_dpo_grad(&p, &refs, beta, 1.0 / ex.len() as f64, &mut g);
    let g = g.to_dense();
    let mut worst: f64 = 0.0;
    for (j, &gj) in g.iter().enumerate() {
        let (mut a, mut b) = (p.clone(), p.clone());
        a.weights[j] += h;
        b.weights[j] -= h;
        let num = (dpo_loss(&a, &ex, beta).unwrap() - dpo_loss(&b, &ex, beta).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(gj, num));
    }
    worst
}

fn gradient_checks() -> Verdict {
    let ctr = (0..50).map(ctr_gradient_error).fold(0.0, f64::max);
    let dpo = (0..50).map(dpo_gradient_error).fold(0.0, f64::max);
    verdict(
        ctr <= 1e-4 && dpo <= 1e-4,
        format!("max relative error: CTR BCE {ctr:.2e}, DPO {dpo:.2e} (50 configurations each)"),
    )
}

// ---------------------------------------------------------------- 3

fn dpo_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = text::rng(11_000 + case);
        let dim = 1 << 7;
        let p = random_policy(&mut rng, dim);
        let reference = p.snapshot();
        let prompts: Vec<PreparedPrompt> = (0..4)
            .map(|t| toy_prompt(rng.gen_range(3..12), 1 + t % 3, dim, t + 10 * case as usize))
            .collect();
        let ex: Vec<DpoExample<'_>> = prompts
            .iter()
            .map(|pp| {
                let m = pp.pool.len();
                let mut a: Vec<usize> = (0..m).collect();
                let mut b = a.clone();
                a.shuffle(&mut rng);
                b.shuffle(&mut rng);
                DpoExample::new(&reference, pp, a[..pp.n()].to_vec(), b[..pp.n()].to_vec()).unwrap()
            })
            .collect();
        let beta = rng.gen_range(0.01..5.0);
        worst = worst.max((dpo_loss(&p, &ex, beta).unwrap() - std::f64::consts::LN_2).abs());
    }
    verdict(
        worst <= 1e-9,
        format!("max |loss - ln 2| {worst:.1e} over 100 random batches"),
    )
}

// ---------------------------------------------------------------- 4

/// Context- and slot-dependent pseudo-random click probabilities.
struct Hashed(u64);

impl ClickScorer for Hashed {
    fn click_prob(&self, u: &str, ctx: &[&str], t: &str, slot: usize) -> f64 {
        let mut parts = vec![u, t];
        parts.extend_from_slice(ctx);
        let s = slot.to_string();
        parts.push(&s);
        0.6 * unit_interval(hash_parts(self.0 as u32, &parts))
    }
}

fn brute_force(ctr: &dyn ClickScorer, pp: &PreparedPrompt) -> (Vec<usize>, f64) {
    fn go(
        ctr: &dyn ClickScorer,
        pp: &PreparedPrompt,
        prefix: &mut Vec<usize>,
        best: &mut (Vec<usize>, f64),
    ) {
        if prefix.len() == pp.n() {
            let qs: Vec<String> = prefix.iter().map(|&j| pp.pool.queries[j].clone()).collect();
            let v = score_list(ctr, &pp.prompt.user_query, &qs, pp.prompt.component).value;
            if v > best.1 {
                *best = (prefix.clone(), v);
            }
            return;
        }
        for j in 0..pp.pool.len() {
            if !prefix.contains(&j) {
                prefix.push(j);
                go(ctr, pp, prefix, best);
                prefix.pop();
            }
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    go(ctr, pp, &mut Vec::new(), &mut best);
    best
}

fn beam_vs_brute_force() -> Verdict {
    let mut rng = text::rng(4);
    let (mut exact, mut ratio_sum) = (0, 0.0);
    for i in 0..100u64 {
        let m = rng.gen_range(3..=8);
        let n = rng.gen_range(1..=3);
        let kind = if i % 2 == 0 {
            ComponentKind::MultiChoice
        } else {
            ComponentKind::SingleChoice
        };
        let p = PromptRecord::new(format!("user {i}"), n, kind).unwrap();
        let pool = CandidatePool {
            queries: (0..m).map(|j| format!("cand {j} x{}", j % 2)).collect(),
            cor_rank: vec![None; m],
        };
        let pp = PreparedPrompt::new(p, pool, 1 << 8);
        let policy = random_policy(&mut rng, 1 << 8);
        let ctr = Hashed(i);
        let (best_idx, best_v) = brute_force(&ctr, &pp);
        let wide = AlignConfig {
            beam_size: m * m * m,
            expansions: m,
            ..AlignConfig::default()
        };
        let w = beam_search_chosen(&policy, &ctr, &pp, &wide).unwrap();
        if w[0].indices == best_idx && (w[0].reward.value - best_v).abs() < 1e-12 {
            exact += 1;
        }
        let d = beam_search_chosen(&policy, &ctr, &pp, &AlignConfig::default()).unwrap();
        ratio_sum += if best_v > 0.0 {
            d[0].reward.value / best_v
        } else {
            1.0
        };
    }
    let mean_ratio = ratio_sum / 100.0;
    verdict(
        exact == 100 && mean_ratio >= 0.95,
        format!(
            "exhaustive width exact on {exact}/100; default B=4 mean reward ratio {mean_ratio:.4}"
        ),
    )
}

// ---------------------------------------------------------------- 5

/// A world with sharp topic contrast and strong intent bonuses, so clicks are
/// close to deterministic given the features.
const SNR_FIXTURE: &str = r#"
[data]
impressions_per_day = 20000
train_days = 5
[eval]
days = 7
[click]
base_rate = 0.01
same_topic_affinity = 2.5
cross_topic_affinity = -5.0
relatedness_bonus = 2.5
successor_bonus = 5.0
noise_scale = 0.0
"#;

fn ctr_quality() -> Verdict {
    let cfg = config(SNR_FIXTURE);
    let world = World::build(&cfg).unwrap();
    let logs = simulate_uniform(&world, &cfg);
    let model = train_ctr(&logs.train, &cfg).unwrap().model;
    let mut r = EvalReport::default();
    ctr_metrics(&model, &logs.eval, &mut r).unwrap();
    let a = r.get("ctr_auc", "ctr").unwrap();
    let d = r.get("diff_ctr", "ctr").unwrap();
    let (pred, emp) = (
        r.get("ctr_mean_predicted", "ctr").unwrap(),
        r.get("ctr_mean_empirical", "ctr").unwrap(),
    );
    let cal = (pred - emp) / emp;
    verdict(
        a >= 0.85 && d <= 0.02 && cal.abs() <= 0.10,
        format!("AUC {a:.4}, diff_ctr {d:.5} over 7 days, mean predicted {pred:.4} vs empirical {emp:.4} ({:+.1}%)", 100.0 * cal),
    )
}

// ---------------------------------------------------------------- 6, 9, 10

/// The default configuration is the acceptance fixture: 3 topics, 300
/// queries, 20,000 impressions per day for 14 days, three-query suggestions.
struct DefaultRun {
    cfg: PipelineConfig,
    out: PeriodOutput,
    elapsed: Duration,
}

fn default_run() -> DefaultRun {
    let cfg = PipelineConfig::default();
    let t0 = Instant::now();
    let world = World::build(&cfg).unwrap();
    let out = run_period(&world, &cfg, 1, &uniform(&cfg), None).unwrap();
    DefaultRun {
        cfg,
        out,
        elapsed: t0.elapsed(),
    }
}

fn alignment_lift(run: &DefaultRun) -> Verdict {
    let r = &run.out.report;
    let (aec_s, aec_a) = (
        r.get("aec", "sft").unwrap(),
        r.get("aec", "aligned").unwrap(),
    );
    let (tr_s, tr_a) = (
        r.get("true_reward", "sft").unwrap(),
        r.get("true_reward", "aligned").unwrap(),
    );
    let iters = run.out.aligned.trace.len();
    verdict(
        aec_a >= 1.3 * aec_s && tr_a >= 1.2 * tr_s && iters <= 10 && run.elapsed < Duration::from_secs(600),
        format!(
            "AEC {aec_s:.4} -> {aec_a:.4} (x{:.3}), true reward {tr_s:.4} -> {tr_a:.4} (x{:.3}), {iters} iterations, {:.0}s",
            aec_a / aec_s,
            tr_a / tr_s,
            run.elapsed.as_secs_f64()
        ),
    )
}

/// Re-run only the alignment stage of the default run under a modified align config.
fn realign(run: &DefaultRun, edit: impl FnOnce(&mut AlignConfig)) -> gqr_core::align::AlignOutcome {
    let mut cfg = run.cfg.clone();
    edit(&mut cfg.align);
    run_align(
        &run.out.sft.policy,
        &run.out.ctr.model,
        &run.out.sets,
        &cfg,
        1,
    )
    .unwrap()
}

fn overlap_filter(run: &DefaultRun) -> Verdict {
    let off = realign(run, |a| a.overlap.enabled = false);
    // both rates use the enabled filter's similarity predicate
    let rate = |p: &Policy| {
        near_duplicate_rate(p, &run.out.sets.test, 1000, &run.cfg, run.cfg.seeds().eval).unwrap()
    };
    let (r_on, r_off) = (rate(&run.out.aligned.policy), rate(&off.policy));
    verdict(
        r_off > r_on,
        format!(
            "near-duplicate pair rate over 1000 responses: filter on {r_on:.4}, off {r_off:.4}"
        ),
    )
}

fn length_ratio(d: &[PreferenceTriple]) -> f64 {
    let c: usize = d.iter().map(|t| t.chosen.char_len()).sum();
    let r: usize = d.iter().map(|t| t.rejected.char_len()).sum();
    c as f64 / r as f64
}

fn length_control(run: &DefaultRun) -> Verdict {
    let off = realign(run, |a| a.length_pairing = false);
    let on_ratio = length_ratio(&run.out.aligned.triples[0]);
    let off_ratio = length_ratio(&off.triples[0]);
    verdict(
        off_ratio > 1.10 && (on_ratio - 1.0).abs() <= 0.10,
        format!(
            "D_1 mean chosen/rejected length: pairing off {off_ratio:.3} ({} triples), on {on_ratio:.3} ({} triples)",
            off.triples[0].len(),
            run.out.aligned.triples[0].len()
        ),
    )
}

// ---------------------------------------------------------------- 7, 8

/// Intent successors are followed often and clicked eagerly, so the
/// co-occurrence channel carries real signal.
const COOC_FIXTURE: &str = r#"
[world]
successor_follow = 0.7
[click]
successor_bonus = 3.0
[data]
train_days = 3
[eval]
days = 1
"#;

struct SeedResult {
    first_s: f64,
    final_s: f64,
    true_cor: f64,
    true_no_cor: f64,
}

fn cooc_seed(seed: u64) -> SeedResult {
    let cfg = PipelineConfig {
        seed,
        ..config(COOC_FIXTURE)
    };
    let world = World::build(&cfg).unwrap();
    let logs = simulate_uniform(&world, &cfg);
    let ctr = train_ctr(&logs.train, &cfg).unwrap().model;
    let mut out = Vec::new();
    for use_cor in [true, false] {
        let c = PipelineConfig {
            use_cor,
            ..cfg.clone()
        };
        let cor =
            use_cor.then(|| build_retriever(build_coo(&logs.train), &logs.train, &c).unwrap());
        let factory = PromptFactory::new(&world.universe, &c, cor.as_ref());
        let (_, sets) = period_prompts(&factory, &logs.train, &c, 1).unwrap();
        let gold = annotate(&sets.train, &c, prompt_seed(&c, 1)).unwrap();
        let sft = run_sft(&sets.train, &gold, &c).unwrap().policy;
        let aligned = run_align(&sft, &ctr, &sets, &c, 1).unwrap();
        let mut r = EvalReport::default();
        policy_metrics(
            &world,
            &ctr,
            &sets.test,
            &[("aligned", &aligned.policy)],
            &c,
            &mut r,
        )
        .unwrap();
        out.push((aligned, r.get("true_reward", "aligned").unwrap()));
    }
    let trace = &out[0].0.trace;
    SeedResult {
        first_s: trace[0].s,
        final_s: trace.last().unwrap().s,
        true_cor: out[0].1,
        true_no_cor: out[1].1,
    }
}

fn iterative_beats_single(seeds: &[SeedResult]) -> Verdict {
    let first: Vec<f64> = seeds.iter().map(|s| s.first_s).collect();
    let last: Vec<f64> = seeds.iter().map(|s| s.final_s).collect();
    let per: Vec<String> = seeds
        .iter()
        .map(|s| format!("{:.4}->{:.4}", s.first_s, s.final_s))
        .collect();
    verdict(
        median(&last) >= median(&first),
        format!(
            "median test AEC first iteration {:.4}, final {:.4} [{}]",
            median(&first),
            median(&last),
            per.join(", ")
        ),
    )
}

fn cor_ablation(seeds: &[SeedResult]) -> Verdict {
    let with: Vec<f64> = seeds.iter().map(|s| s.true_cor).collect();
    let without: Vec<f64> = seeds.iter().map(|s| s.true_no_cor).collect();
    verdict(
        median(&without) < median(&with),
        format!(
            "median true reward with COR {:.4}, without {:.4}",
            median(&with),
            median(&without)
        ),
    )
}

// ---------------------------------------------------------------- 11

const REPRO_FIXTURE: &str = r#"
seed = 21
periods = 2
[world]
n_queries = 120
[data]
impressions_per_day = 3000
train_days = 2
n_train_prompts = 80
n_test_prompts = 40
[eval]
days = 2
overlap_samples = 200
[align]
max_iterations = 3
"#;

fn reproducibility() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let reports: Vec<Vec<EvalReport>> = dirs
        .iter()
        .map(|d| {
            let cfg = PipelineConfig {
                out_dir: d.path().to_path_buf(),
                ..config(REPRO_FIXTURE)
            };
            let m = cmd_pipeline(&cfg).unwrap();
            m.periods
                .iter()
                .map(|p| {
                    stages::read_report(&d.path().join(&p.dir).join(stages::REPORT_JSON)).unwrap()
                })
                .collect()
        })
        .collect();
    let bits = |rs: &[EvalReport]| -> Vec<(String, String, u64)> {
        rs.iter()
            .flat_map(|r| {
                r.rows
                    .iter()
                    .map(|x| (x.metric.clone(), x.policy_tag.clone(), x.value.to_bits()))
            })
            .collect()
    };
    let (a, b) = (bits(&reports[0]), bits(&reports[1]));
    verdict(
        !a.is_empty() && a == b,
        format!(
            "{} report values over 2 periods, bit-identical: {}",
            a.len(),
            a == b
        ),
    )
}

// ----------------------------------------------------------------

fn run(id: u8, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id:>2} [{name}]: {} | {} | {:.1}s",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        t0.elapsed().as_secs_f64()
    );
    v.pass
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> impl FnOnce() -> Verdict {
    move || {
        let t0 = Instant::now();
        let mut v = f();
        if t0.elapsed() > limit {
            v.pass = false;
            v.detail += &format!(" (over the {}s budget)", limit.as_secs());
        }
        v
    }
}

fn main() -> ExitCode {
    // `cargo test -- --list` and name-filtered runs must not start the suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return ExitCode::SUCCESS;
        }
    }
    // ACCEPTANCE_ONLY=2,5 runs a subset while iterating on one criterion.
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let mut results = Vec::new();
    if want(1) {
        results.push(run(
            1,
            "formula oracles",
            timed(Duration::from_secs(5), formula_oracles),
        ));
    }
    if want(2) {
        results.push(run(
            2,
            "gradient checks",
            timed(Duration::from_secs(30), gradient_checks),
        ));
    }
    if want(3) {
        results.push(run(3, "DPO identity", dpo_identity));
    }
    if want(4) {
        results.push(run(4, "beam vs brute force", beam_vs_brute_force));
    }
    if want(5) {
        results.push(run(
            5,
            "CTR quality",
            timed(Duration::from_secs(120), ctr_quality),
        ));
    }

    let shared = [6, 9, 10]
        .into_iter()
        .any(want)
        .then(|| catch_unwind(default_run).ok())
        .flatten();
    let with_run = |f: fn(&DefaultRun) -> Verdict| {
        let shared = &shared;
        move || match shared {
            Some(r) => f(r),
            None => verdict(false, "default pipeline run failed"),
        }
    };
    let seeds = [7, 8]
        .into_iter()
        .any(want)
        .then(|| catch_unwind(|| (0..5).map(cooc_seed).collect::<Vec<_>>()).ok())
        .flatten();
    let with_seeds = |f: fn(&[SeedResult]) -> Verdict| {
        let seeds = &seeds;
        move || match seeds {
            Some(s) => f(s),
            None => verdict(false, "seeded co-occurrence runs failed"),
        }
    };
    if want(6) {
        results.push(run(6, "alignment lift", with_run(alignment_lift)));
    }
    if want(7) {
        results.push(run(
            7,
            "iterative vs single-shot",
            with_seeds(iterative_beats_single),
        ));
    }
    if want(8) {
        results.push(run(8, "COR ablation", with_seeds(cor_ablation)));
    }
    if want(9) {
        results.push(run(9, "overlap filter", with_run(overlap_filter)));
    }
    if want(10) {
        results.push(run(10, "length control", with_run(length_control)));
    }
    if want(11) {
        results.push(run(11, "reproducibility", reproducibility));
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
