use cafcn::nn::NetConfig;
use cafcn::synth::{synthesize, AugmentParams, RenderStyle, Sample};
use cafcn::train::{decode_checkpoint, RunOptions, TrainSchedule, Trainer};

fn small_net() -> NetConfig {
    NetConfig {
        widths: [8, 12, 16, 16, 16],
        stage_convs: [1, 1, 1],
        pyramid_width: 12,
        attention_width: 6,
        ..NetConfig::default()
    }
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    synthesize(n, &RenderStyle::default(), 0.3, seed)
        .unwrap()
        .into_iter()
        .map(|r| r.sample)
        .collect()
}

fn schedule(epochs: usize, augment: AugmentParams) -> TrainSchedule {
    TrainSchedule {
        base_lr: 3e-3,
        epochs,
        decay_epochs: vec![],
        batch_size: 4,
        augment,
        ..TrainSchedule::default()
    }
}

#[test]
fn overfits_a_small_set() {
    let data = samples(16, 5);
    let mut sched = schedule(50, AugmentParams::resize_only(vec![(32, 128)]));
    sched.base_lr = 1e-3;
    let mut t = Trainer::new(&data, NetConfig::default(), sched, 1, 0).unwrap();
    let history = t.run(&RunOptions::default(), |_| {}).unwrap();
    assert_eq!(history.len(), 200);
    let mean = |ms: &[cafcn::train::StepMetrics]| {
        ms.iter().map(|m| m.total()).sum::<f64>() / ms.len() as f64
    };
    let first = mean(&history[..4]);
    let last = mean(&history[196..]);
    assert!(last < 0.1 * first, "loss went from {first} to {last}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = samples(6, 9);
    let sched = schedule(2, AugmentParams::default());
    let mut straight = Trainer::new(&data, small_net(), sched.clone(), 3, 1).unwrap();
    straight.run(&RunOptions::default(), |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        jobs: 1,
        out_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(3),
    };
    let mut first = Trainer::new(&data, small_net(), sched.clone(), 3, 1).unwrap();
    first.run(&opts, |_| {}).unwrap();
    let bytes = std::fs::read(dir.path().join("last.cafw")).unwrap();
    let ckpt = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ckpt.step, 3);
    let mut resumed = Trainer::resume(&data, ckpt, sched, 1).unwrap();
    resumed
        .run(
            &RunOptions {
                stop_after: None,
                ..opts
            },
            |_| {},
        )
        .unwrap();
    assert_eq!(resumed.step, straight.step);
    assert_eq!(
        resumed.checkpoint_bytes().unwrap(),
        straight.checkpoint_bytes().unwrap()
    );
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), straight.step);
}

#[test]
fn result_does_not_depend_on_thread_count() {
    let data = samples(8, 11);
    let sched = schedule(1, AugmentParams::default());
    let run = |jobs| {
        let mut t = Trainer::new(&data, small_net(), sched.clone(), 4, jobs).unwrap();
        t.run(&RunOptions::default(), |_| {}).unwrap();
        t.checkpoint_bytes().unwrap()
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn different_seeds_give_different_models() {
    let data = samples(4, 12);
    let sched = schedule(1, AugmentParams::default());
    let run = |seed| {
        let mut t = Trainer::new(&data, small_net(), sched.clone(), seed, 1).unwrap();
        t.run(&RunOptions::default(), |_| {}).unwrap();
        t.checkpoint_bytes().unwrap()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn learning_rate_follows_the_decay_schedule() {
    let data = samples(4, 13);
    let sched = TrainSchedule {
        base_lr: 1e-2,
        epochs: 3,
        decay_epochs: vec![2, 3],
        batch_size: 2,
        augment: AugmentParams::resize_only(vec![(32, 128)]),
        ..TrainSchedule::default()
    };
    let mut t = Trainer::new(&data, small_net(), sched, 0, 1).unwrap();
    let h = t.run(&RunOptions::default(), |_| {}).unwrap();
    let lrs: Vec<f64> = h.iter().map(|m| m.lr).collect();
    assert_eq!(lrs.len(), 6);
    assert_eq!(lrs[..2], [1e-2, 1e-2]);
    assert!((lrs[2] - 1e-3).abs() < 1e-15 && (lrs[5] - 1e-4).abs() < 1e-16);
    assert_eq!(
        h.iter().map(|m| m.epoch).collect::<Vec<_>>(),
        [1, 1, 2, 2, 3, 3]
    );
}
