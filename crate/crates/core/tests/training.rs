//! Regression bounds for the training stages on the shipped task and seed.

use gain_core::experiment::{build_task, pretrained_bundle, ExperimentConfig, GazetteerTask, TaskConfig};
use gain_core::model::{AdaptationLoss, ModelBundle, ModelConfig};
use gain_core::train::{checkpoint_from_bytes, checkpoint_to_bytes, stage1_adapt, stage2_train, TrainConfig};

fn setup() -> (GazetteerTask, ModelBundle, ExperimentConfig, f64) {
    let cfg = ExperimentConfig::default();
    let task = build_task(&cfg.task, cfg.train.seed).unwrap();
    let (pre, report) = pretrained_bundle(&task, &cfg).unwrap();
    (task, pre, cfg, report.token_accuracy.unwrap())
}

#[test]
fn training_stages_meet_their_bounds() {
    let (task, pre, cfg, accuracy) = setup();
    assert_eq!(task.pretrain.len(), 2000);
    assert!(accuracy > 0.9, "pre-training token accuracy {accuracy}");

    let mut kl = ModelBundle::with_encoder_from(cfg.model.clone(), &pre, 1).unwrap();
    let rep = stage1_adapt(&mut kl, &task.train, &cfg.train).unwrap();
    let final_kl = rep.final_loss.unwrap();
    assert!(final_kl < 0.1, "stage-1 KL {final_kl}");
    assert!(rep.epochs[0].mean_loss > final_kl, "{rep:?}");
    // Pre-trained encoder weights are untouched by stage 1.
    for (_, p) in pre.params.iter().filter(|(_, p)| p.name.starts_with("encoder.")) {
        assert_eq!(kl.params.value(kl.params.id(&p.name).unwrap()), &p.value, "{}", p.name);
    }

    let mut mse = ModelBundle::with_encoder_from(cfg.model.clone(), &pre, 1).unwrap();
    let mse_cfg = TrainConfig { adaptation_loss: AdaptationLoss::Mse, ..cfg.train.clone() };
    let curve = stage1_adapt(&mut mse, &task.train, &mse_cfg).unwrap();
    let losses: Vec<f64> = curve.epochs.iter().map(|e| e.mean_loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[0] > losses[4], "{losses:?}");
    assert_ne!(losses, rep.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>());

    // A short stage 2, then predictions through a checkpoint round trip.
    let trie = kl.build_trie(&task.gazetteer);
    let short = TrainConfig { stage2_epochs: 2, ..cfg.train.clone() };
    stage2_train(&mut kl, &task.train, Some(&task.val), &trie, &short).unwrap();
    let loaded = checkpoint_from_bytes(&checkpoint_to_bytes(&kl).unwrap()).unwrap();
    let trie2 = loaded.build_trie(&task.gazetteer);
    for s in task.val.sentences.iter().take(100) {
        assert_eq!(kl.predict(&s.tokens, Some(&trie)).unwrap(), loaded.predict(&s.tokens, Some(&trie2)).unwrap());
    }
}

#[test]
fn small_task_is_seed_stable() {
    let cfg = ExperimentConfig {
        task: TaskConfig { pretrain_sentences: 40, train_sentences: 30, val_sentences: 10, ..TaskConfig::default() },
        model: ModelConfig { embed_dim: 8, hidden: 8, gaz_hidden: 4, ..ModelConfig::default() },
        train: TrainConfig { pretrain_epochs: 1, ..TrainConfig::default() },
    };
    let a = build_task(&cfg.task, 5).unwrap();
    let b = build_task(&cfg.task, 6).unwrap();
    assert_ne!(a.train, b.train);
    let (p1, r1) = pretrained_bundle(&a, &cfg).unwrap();
    let (p2, r2) = pretrained_bundle(&a, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(checkpoint_to_bytes(&p1).unwrap(), checkpoint_to_bytes(&p2).unwrap());
}
