//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketch_cli::output::{read_metrics, AblationRow};
use sketch_cli::pipeline::{
    multitask_rows, new_independent, new_joint, new_modular, run, zero_shot_rows, RunOptions, METRICS_FILE,
    PERIODIC_CHECKPOINT,
};
use sketch_cli::spec::ExperimentSpec;
use sketch_core::baselines::{completion_rate, EvalRow, MetaPolicy};
use sketch_core::checkpoint::Checkpoint;
use sketch_core::critic::{CriticParams, CriticVariant};
use sketch_core::curriculum::CurriculumMode;
use sketch_core::env::oracle::Oracle;
use sketch_core::env::registry::{find_task, task_registry};
use sketch_core::env::{Task, TaskId, DEFAULT_STEP_CAP};
use sketch_core::nn::{log_softmax_at, DenseNet, Parameters};
use sketch_core::policy::{empirical_returns, run_episode, PolicyFamily};
use sketch_core::trainer::{
    episodes_to_threshold, learning_curve_area, ActorModel, StopReason, Trainer, TrainerConfig, UpdateRecord,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const LENGTH_TWO: [&str; 4] = ["make plank", "make stick", "make cloth", "make rope"];
const MULTITASK_BUDGET: u64 = 500_000;
const BASELINE_BUDGET: u64 = 500_000;
const GENERALISATION_BUDGET: u64 = 3_000_000;
const ADAPTATION_BUDGET: u64 = 100_000;
const CRITIC_ABLATION_BUDGET: u64 = 200_000;
const EVAL_EPISODES: usize = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tasks(names: &[&str]) -> Vec<Task> {
    let all = task_registry();
    names.iter().map(|n| find_task(&all, n).unwrap().clone()).collect()
}

struct Run<M> {
    trainer: Trainer<M>,
    records: Vec<UpdateRecord>,
    reason: StopReason,
}

fn train<M: ActorModel>(mut trainer: Trainer<M>) -> Run<M> {
    let mut records = Vec::new();
    let reason = trainer
        .run(|_, r| {
            records.push(r.clone());
            Ok(())
        })
        .unwrap();
    Run { trainer, records, reason }
}

fn config(seed: u64, max_episodes: u64) -> TrainerConfig {
    TrainerConfig { seed, max_episodes, ..TrainerConfig::default() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mean_rate(rows: &[EvalRow]) -> f64 {
    rows.iter().map(|r| r.completion_rate).sum::<f64>() / rows.len() as f64
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut policy_worst: f64 = 0.0;
    for _ in 0..100 {
        let (i, hd, o) = (rng.gen_range(1..9), rng.gen_range(1..12), rng.gen_range(2..7));
        let mut net = DenseNet::random(i, hd, o, &mut rng);
        net.b1_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        net.b2_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let x = loop {
            let x: Vec<f64> = (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let clear = (0..hd).all(|k| (net.b1()[k] + (0..i).map(|j| net.w1(k, j) * x[j]).sum::<f64>()).abs() > 1e-3);
            if clear {
                break x;
            }
        };
        let action = rng.gen_range(0..o);
        let scale = rng.gen_range(-3.0..3.0);
        let grad = net.logprob_gradient(&x, action, scale).unwrap();
        let f = |n: &DenseNet| scale * log_softmax_at(&n.logits(&x).unwrap(), action).unwrap();
        let lens: Vec<usize> = net.arrays().iter().map(|a| a.len()).collect();
        for (a, &len) in lens.iter().enumerate() {
            for k in 0..len {
                let (mut p, mut m) = (net.clone(), net.clone());
                p.arrays_mut()[a][k] += h;
                m.arrays_mut()[a][k] -= h;
                policy_worst = policy_worst.max(relative_error(grad.arrays[a][k], (f(&p) - f(&m)) / (2.0 * h)));
            }
        }
    }

    let mut critic_worst: f64 = 0.0;
    for case in 0..100 {
        let dim = rng.gen_range(1..10);
        let ids = [(TaskId(0), dim), (TaskId(1), dim)];
        let mut critic = CriticParams::with_dims(CriticVariant::ALL[case % 4], &ids).unwrap();
        for b in critic.blocks_mut() {
            b.arrays_mut().into_iter().flatten().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let task = ids[case % 2].0;
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = rng.gen_range(0.0..1.0);
        let grads = critic.gradient(task, &x, q).unwrap();
        let f = |c: &CriticParams| -0.5 * (q - c.value(task, &x).unwrap()).powi(2);
        for b in 0..critic.blocks().len() {
            let lens: Vec<usize> = critic.blocks()[b].arrays().iter().map(|a| a.len()).collect();
            for (a, &len) in lens.iter().enumerate() {
                for k in 0..len {
                    let (mut p, mut m) = (critic.clone(), critic.clone());
                    p.blocks_mut()[b].arrays_mut()[a][k] += h;
                    m.blocks_mut()[b].arrays_mut()[a][k] -= h;
                    critic_worst = critic_worst.max(relative_error(grads[b].arrays[a][k], (f(&p) - f(&m)) / (2.0 * h)));
                }
            }
        }
    }
    verdict(
        policy_worst <= 1e-4 && critic_worst <= 1e-6,
        format!("policy max rel err {policy_worst:.2e} (<= 1e-4), critic {critic_worst:.2e} (<= 1e-6)"),
    )
}

fn return_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..60);
        let gamma = rng.gen_range(0.0..1.0);
        // Reward of each visited state s_0..s_{n-1}.
        let state_rewards: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        let fast = empirical_returns(&state_rewards[1..], gamma);
        for (i, q) in fast.iter().enumerate() {
            let brute: f64 = (i + 1..n).map(|j| gamma.powi((j - i - 1) as i32) * state_rewards[j]).sum();
            worst = worst.max((q - brute).abs());
        }
    }
    verdict(worst <= 1e-12, format!("max abs err {worst:.2e} over 1000 sequences (<= 1e-12)"))
}

fn solvability() -> Verdict {
    let mut failures = Vec::new();
    let all = task_registry();
    for task in &all {
        for seed in 0..100 {
            let r = run_episode(&mut Oracle::new(), task, seed, DEFAULT_STEP_CAP, 0.9).unwrap();
            if !r.completed {
                failures.push(format!("{} seed {seed}", task.name));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!("{} tasks x 100 seeds, {} failures {:?}", all.len(), failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    )
}

/// Runs shared by the multitask and curriculum criteria.
fn multitask_runs() -> Vec<Run<PolicyFamily>> {
    SEEDS
        .iter()
        .map(|&s| train(new_modular(&tasks(&LENGTH_TWO), &config(s, MULTITASK_BUDGET)).unwrap()))
        .collect()
}

fn desk_multitask(runs: &[Run<PolicyFamily>]) -> Verdict {
    let hits: Vec<Option<u64>> = runs.iter().map(|r| episodes_to_threshold(&r.records, 0.8)).collect();
    let mastered = runs.iter().filter(|r| r.reason == StopReason::Mastered).count();
    verdict(mastered >= 2, format!("{mastered}/3 seeds reach 0.8 on all four within {MULTITASK_BUDGET} episodes; episodes {hits:?}"))
}

fn baseline_ordering() -> Verdict {
    let set = tasks(&["make plank", "make stick", "make cloth", "make rope", "make bridge"]);
    let cfg = TrainerConfig { stop_when_mastered: false, ..config(0, BASELINE_BUDGET) };
    let m = train(new_modular(&set, &cfg).unwrap());
    let modular = mean_rate(&multitask_rows(m.trainer.model(), "modular", &set, EVAL_EPISODES, 0, cfg.step_cap).unwrap());
    let j = train(new_joint(&set, &cfg).unwrap());
    let joint = mean_rate(&multitask_rows(j.trainer.model(), "joint", &set, EVAL_EPISODES, 0, cfg.step_cap).unwrap());
    let i = train(new_independent(&set, &cfg).unwrap());
    let independent =
        mean_rate(&multitask_rows(i.trainer.model(), "independent", &set, EVAL_EPISODES, 0, cfg.step_cap).unwrap());
    verdict(
        modular - joint.max(independent) >= 0.15,
        format!("modular {modular:.3} joint {joint:.3} independent {independent:.3} (margin >= 0.15, {BASELINE_BUDGET} episodes each)"),
    )
}

struct Generalisation {
    family: PolicyFamily,
    modular_zero_shot: Vec<EvalRow>,
    joint_zero_shot: Vec<EvalRow>,
    episodes: u64,
}

fn generalisation_runs() -> Generalisation {
    let held = tasks(&["make bed", "make axe"]);
    let train_set: Vec<Task> =
        task_registry().into_iter().filter(|t| t.env == sketch_core::env::EnvKind::Craft && !t.held_out).collect();
    let cfg = config(0, GENERALISATION_BUDGET);
    let m = train(new_modular(&train_set, &cfg).unwrap());
    let episodes = m.trainer.episodes;
    let modular_zero_shot = zero_shot_rows(m.trainer.model(), "modular", &held, EVAL_EPISODES, 0, cfg.step_cap).unwrap();
    let j = train(new_joint(&train_set, &TrainerConfig { stop_when_mastered: false, max_episodes: episodes, ..cfg }).unwrap());
    let joint_zero_shot = zero_shot_rows(j.trainer.model(), "joint", &held, EVAL_EPISODES, 0, cfg.step_cap).unwrap();
    Generalisation { family: m.trainer.learner.model, modular_zero_shot, joint_zero_shot, episodes }
}

fn zero_shot(g: &Generalisation) -> Verdict {
    let (m, j) = (mean_rate(&g.modular_zero_shot), mean_rate(&g.joint_zero_shot));
    let per: Vec<String> = g.modular_zero_shot.iter().map(|r| format!("{} {:.3}", r.task, r.completion_rate)).collect();
    verdict(
        m >= 0.5 && j <= 0.1,
        format!("modular {m:.3} [{}] (>= 0.5), joint {j:.3} (<= 0.1), {} training episodes", per.join(", "), g.episodes),
    )
}

fn adaptation(g: &Generalisation) -> Verdict {
    let held = tasks(&["make bed", "make axe"]);
    let cfg = TrainerConfig { curriculum: CurriculumMode::Uniform, ..config(0, ADAPTATION_BUDGET) };
    let (mut meta_rates, mut ind_rates) = (Vec::new(), Vec::new());
    for t in &held {
        let one = std::slice::from_ref(t);
        let meta = MetaPolicy::new(g.family.clone(), t.env, cfg.hidden_dim, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let m = train(Trainer::new(meta, one.to_vec(), cfg.clone()).unwrap());
        meta_rates.push(completion_rate(m.trainer.model(), t, EVAL_EPISODES, 0, cfg.step_cap).unwrap());
        let i = train(new_independent(one, &cfg).unwrap());
        ind_rates.push(completion_rate(i.trainer.model(), t, EVAL_EPISODES, 0, cfg.step_cap).unwrap());
    }
    let (m, i) = (meta_rates.iter().sum::<f64>() / 2.0, ind_rates.iter().sum::<f64>() / 2.0);
    verdict(
        m >= 0.5 && i <= 0.1,
        format!("high-level learner {m:.3} {meta_rates:.3?} (>= 0.5), independent {i:.3} {ind_rates:.3?} (<= 0.1)"),
    )
}

fn critic_ablation() -> Verdict {
    let set = tasks(&LENGTH_TWO);
    let mut rows = Vec::new();
    for variant in CriticVariant::ALL {
        for &s in &SEEDS {
            let cfg = TrainerConfig { critic: variant, stop_when_mastered: false, ..config(s, CRITIC_ABLATION_BUDGET) };
            let r = train(new_modular(&set, &cfg).unwrap());
            rows.push(AblationRow {
                study: "critic".into(),
                setting: variant.name().into(),
                seed: s,
                auc: learning_curve_area(&r.records, CRITIC_ABLATION_BUDGET),
                episodes_to_threshold: None,
            });
        }
    }
    let med = |v: CriticVariant| median(rows.iter().filter(|r| r.setting == v.name()).map(|r| r.auc).collect());
    let (full, state, task, constant) = (
        med(CriticVariant::StateAndTask),
        med(CriticVariant::StateOnly),
        med(CriticVariant::TaskOnly),
        med(CriticVariant::Constant),
    );
    let pass = full > state.max(task) && state.max(task) > constant && constant <= 0.7 * full;
    verdict(
        pass,
        format!("median AUC state_and_task {full:.4} state_only {state:.4} task_only {task:.4} constant {constant:.4} (constant <= {:.4})", 0.7 * full),
    )
}

fn curriculum_ablation(length_and_weight: &[Run<PolicyFamily>]) -> Verdict {
    let set = tasks(&LENGTH_TWO);
    let hit = |records: &[UpdateRecord]| episodes_to_threshold(records, 0.8).map_or(f64::INFINITY, |e| e as f64);
    let reference = median(length_and_weight.iter().map(|r| hit(&r.records)).collect());
    let mut pass = true;
    let mut detail = format!("median episodes to 0.8: length_and_weight {reference}");
    for mode in [CurriculumMode::LengthOnly, CurriculumMode::WeightOnly, CurriculumMode::Uniform] {
        let m = median(
            SEEDS
                .iter()
                .map(|&s| hit(&train(new_modular(&set, &TrainerConfig { curriculum: mode, ..config(s, MULTITASK_BUDGET) }).unwrap()).records))
                .collect(),
        );
        pass &= reference <= m;
        detail.push_str(&format!(", {} {m}", mode.name()));
    }
    verdict(pass, detail)
}

fn determinism_and_resume() -> Verdict {
    let text = |out: &std::path::Path| {
        format!(
            "name = \"d\"\nmode = \"multitask\"\nseed = 3\noutput_dir = \"{}\"\n[tasks]\nnames = [\"make plank\", \"make stick\", \"make bridge\"]\n[trainer]\nbatch_size = 500\nhidden_dim = 32\nmax_episodes = 30000\n[eval]\nepisodes = 10\n",
            out.display()
        )
    };
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let metrics: Vec<Vec<u8>> = dirs[..2]
        .iter()
        .map(|d| {
            let r = run(&ExperimentSpec::from_toml(&text(d.path())).unwrap(), &RunOptions::default()).unwrap();
            std::fs::read(r.dir.join(METRICS_FILE)).unwrap()
        })
        .collect();
    let identical = metrics[0] == metrics[1];

    let spec = ExperimentSpec::from_toml(&text(dirs[2].path())).unwrap();
    let first = run(&spec, &RunOptions::default()).unwrap();
    std::fs::remove_file(first.dir.join("final.skck")).unwrap();
    let ck = Checkpoint::load(&first.dir.join(PERIODIC_CHECKPOINT)).unwrap();
    let resumed = run(&spec, &RunOptions { resume: true, progress_every: 0 }).unwrap();
    let resumed_bytes = std::fs::read(resumed.dir.join(METRICS_FILE)).unwrap();
    let updates = read_metrics(&resumed.dir.join(METRICS_FILE)).unwrap().len();
    let checkpoint_updates = ck.scalar("run/updates").unwrap();
    verdict(
        identical && resumed_bytes == metrics[0],
        format!(
            "repeat runs identical: {identical}; resume from update {checkpoint_updates} of {updates} identical: {}",
            resumed_bytes == metrics[0]
        ),
    )
}

fn report(index: usize, name: &str, start: Instant, v: Verdict, failed: &mut usize) {
    if !v.pass {
        *failed += 1;
    }
    println!(
        "criterion {index:>2} {name:<28} {} ({:.0}s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        v.detail
    );
}

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let wanted = |i: usize| filter.is_empty() || filter.contains(&i);
    let mut failed = 0;

    if wanted(1) {
        let t = Instant::now();
        report(1, "gradient correctness", t, gradient_correctness(), &mut failed);
    }
    if wanted(2) {
        let t = Instant::now();
        report(2, "return oracle", t, return_oracle(), &mut failed);
    }
    if wanted(3) {
        let t = Instant::now();
        report(3, "environment solvability", t, solvability(), &mut failed);
    }
    if wanted(4) || wanted(9) {
        let t = Instant::now();
        let runs = multitask_runs();
        if wanted(4) {
            report(4, "desk-scale multitask", t, desk_multitask(&runs), &mut failed);
        }
        if wanted(9) {
            let t = Instant::now();
            report(9, "curriculum ablation", t, curriculum_ablation(&runs), &mut failed);
        }
    }
    if wanted(5) {
        let t = Instant::now();
        report(5, "baseline ordering", t, baseline_ordering(), &mut failed);
    }
    if wanted(6) || wanted(7) {
        let t = Instant::now();
        let g = generalisation_runs();
        if wanted(6) {
            report(6, "zero-shot composition", t, zero_shot(&g), &mut failed);
        }
        if wanted(7) {
            let t = Instant::now();
            report(7, "adaptation", t, adaptation(&g), &mut failed);
        }
    }
    if wanted(8) {
        let t = Instant::now();
        report(8, "critic ablation", t, critic_ablation(), &mut failed);
    }
    if wanted(10) {
        let t = Instant::now();
        report(10, "determinism and persistence", t, determinism_and_resume(), &mut failed);
    }

    if failed == 0 {
        println!("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
