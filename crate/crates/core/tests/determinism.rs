use sketch_core::env::registry::{find_task, task_registry};
use sketch_core::env::Task;
use sketch_core::policy::PolicyFamily;
use sketch_core::trainer::{Tick, Trainer, TrainerConfig, UpdateRecord};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tasks() -> Vec<Task> {
    let all = task_registry();
    ["make plank", "make stick", "make bridge"]
        .iter()
        .map(|n| find_task(&all, n).unwrap().clone())
        .collect()
}

fn config(workers: usize) -> TrainerConfig {
    TrainerConfig {
        batch_size: 300,
        hidden_dim: 16,
        seed: 5,
        max_episodes: 4000,
        workers,
        ..TrainerConfig::default()
    }
}

fn trainer(workers: usize) -> Trainer<PolicyFamily> {
    let tasks = tasks();
    let family = PolicyFamily::new(&tasks, 16, &mut ChaCha8Rng::seed_from_u64(9));
    Trainer::new(family, tasks, config(workers)).unwrap()
}

fn records(mut t: Trainer<PolicyFamily>) -> Vec<UpdateRecord> {
    let mut out = Vec::new();
    t.run(|_, r| {
        out.push(r.clone());
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn identical_config_gives_identical_records() {
    let a = records(trainer(1));
    assert!(a.len() > 5);
    assert_eq!(a, records(trainer(1)));
}

#[test]
fn worker_count_does_not_change_records() {
    assert_eq!(records(trainer(1)), records(trainer(3)));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let full = records(trainer(1));

    let mut first = trainer(1);
    let mut head = Vec::new();
    while head.len() < 4 {
        if let Tick::Updated(r) = first.tick().unwrap() {
            head.push(r);
        }
    }
    let bytes = first.snapshot().unwrap().to_bytes();
    drop(first);

    let mut second = trainer(1);
    second
        .restore(&sketch_core::checkpoint::Checkpoint::from_bytes(&bytes).unwrap())
        .unwrap();
    head.extend(records(second));
    assert_eq!(head, full);
}
