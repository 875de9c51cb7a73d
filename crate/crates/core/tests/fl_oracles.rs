use fltb_core::config::ExperimentConfig;
use fltb_core::dataset::{generate_synthetic, ClientShard};
use fltb_core::fl::{aggregate_weighted, creff_client_head_grads, local_update_fedavg, local_update_fedprox};
use fltb_core::nn::{features, init_model, sgd_epochs, Batch, Head};
use fltb_core::orchestrator::run_experiment_with_model;
use fltb_core::{Arch, ModelConfig, ModelParams, TrainConfig};

fn train_cfg(lr: f64, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        local_epochs: 1,
        weight_decay: 1e-3,
        shuffle_seed: seed,
    }
}

fn rel_dist(a: &ModelParams, b: &ModelParams) -> f64 {
    let mut d = a.clone();
    d.add_scaled(b, -1.0);
    d.sq_norm().sqrt() / b.sq_norm().sqrt().max(1e-300)
}

#[test]
fn fedavg_round_equals_centralized_full_batch_step() {
    let data = generate_synthetic(4, 20, 5, 1.0, 11).unwrap();
    for arch in [Arch::LinearSoftmax, Arch::Mlp1h { hidden: 7 }] {
        let cfg = ModelConfig::new(arch, 5, 4, 3);
        let global = init_model(&cfg);
        let all = data.all_indices();
        let full = train_cfg(0.3, all.len(), 0);
        let central = sgd_epochs(&global, &cfg, &full, &data, &all, None).unwrap();

        // four equal shards, each one full-batch step
        let updates: Vec<_> = (0..4)
            .map(|k| {
                let shard = ClientShard::new(k, all.iter().copied().filter(|i| i % 4 == k).collect());
                local_update_fedavg(&global, &cfg, &train_cfg(0.3, 1000, k as u64), &data, &shard).unwrap()
            })
            .collect();
        let fl = aggregate_weighted(&updates).unwrap();
        assert!(
            rel_dist(&fl, &central) <= 1e-6,
            "{arch:?}: {}",
            rel_dist(&fl, &central)
        );
    }
}

#[test]
fn huge_mu_keeps_fedprox_near_the_global_model() {
    let data = generate_synthetic(3, 30, 4, 1.0, 5).unwrap();
    let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 6 }, 4, 3, 1);
    let global = init_model(&cfg);
    let shard = ClientShard::new(0, data.all_indices());
    let tc = TrainConfig {
        learning_rate: 1e-6,
        batch_size: 10,
        local_epochs: 1,
        weight_decay: 0.0,
        shuffle_seed: 2,
    };
    let avg = local_update_fedavg(&global, &cfg, &tc, &data, &shard)
        .unwrap()
        .params;
    let prox = local_update_fedprox(&global, &cfg, &tc, &data, &shard, 1e6)
        .unwrap()
        .params;
    let moved = |p: &ModelParams| {
        let mut d = p.clone();
        d.add_scaled(&global, -1.0);
        d.sq_norm().sqrt()
    };
    assert!(moved(&prox) <= moved(&avg), "{} > {}", moved(&prox), moved(&avg));
    assert!(moved(&prox) > 0.0);
}

#[test]
fn class_head_gradients_recompose_the_shard_gradient() {
    let data = generate_synthetic(4, 12, 3, 1.0, 8).unwrap();
    let cfg = ModelConfig::new(Arch::Mlp1h { hidden: 5 }, 3, 4, 2);
    let params = init_model(&cfg);
    // class 3 absent from the shard
    let shard = ClientShard::new(0, (0..36).filter(|i| i % 3 != 1).collect());
    let per_class = creff_client_head_grads(&params, &cfg, &data, &shard).unwrap();
    assert!(per_class.grads[3].is_none());

    let f = cfg.feature_dim();
    let feats = features(&params, &cfg, &Batch::new(&data, &shard.indices)).unwrap();
    let labels: Vec<usize> = shard.indices.iter().map(|&i| data.label(i)).collect();
    let (_, mean) = Head::new(&params.head, 4, f).loss_and_grad(&feats, &labels);

    let mut summed = vec![0.0; mean.len()];
    for (g, &n) in per_class.grads.iter().zip(&per_class.counts) {
        if let Some(g) = g {
            for (s, v) in summed.iter_mut().zip(g) {
                *s += n as f64 * v;
            }
        }
    }
    let n_k = shard.len() as f64;
    for (s, m) in summed.iter().zip(&mean) {
        assert!(
            (s - n_k * m).abs() <= 1e-10 * (1.0 + s.abs()),
            "{s} vs {}",
            n_k * m
        );
    }
}

fn balanced(algo: &str) -> ExperimentConfig {
    let extra = if algo == "creff" {
        "\n[algorithm.creff]\nff_per_class = 20\nff_steps = 50\nretrain_steps = 100\n"
    } else {
        ""
    };
    ExperimentConfig::from_toml_str(&format!(
        r#"
master_seed = 4
eval_every = 10

[dataset.synthetic]
classes = 10
per_class = 200
test_per_class = 100
dim = 16
spread = 1.0
separation = 4.0

[partition]
kind = "iid"
num_clients = 10

[model]
kind = "mlp1h"
hidden = 64

[train]
learning_rate = 0.05
batch_size = 32
local_epochs = 1

[algorithm]
name = "{algo}"
rounds = 40
{extra}"#
    ))
    .unwrap()
}

#[test]
fn creff_matches_fedavg_on_balanced_data() {
    let (avg, _) = run_experiment_with_model(&balanced("fedavg")).unwrap();
    let (creff, ckpt) = run_experiment_with_model(&balanced("creff")).unwrap();
    assert!(
        (avg.final_accuracy - creff.final_accuracy).abs() <= 0.02,
        "FedAvg {} vs CReFF {}",
        avg.final_accuracy,
        creff.final_accuracy
    );
    assert!(ckpt.features.is_some());
}

#[test]
fn fedprox_with_zero_mu_is_fedavg() {
    let avg = balanced("fedavg");
    let mut prox = avg.clone();
    prox.algorithm.name = fltb_core::config::AlgorithmName::FedProx;
    prox.algorithm.mu = Some(0.0);
    prox.algorithm.rounds = 10;
    let mut avg = avg;
    avg.algorithm.rounds = 10;
    let (a, ca) = run_experiment_with_model(&avg).unwrap();
    let (p, cp) = run_experiment_with_model(&prox).unwrap();
    assert_eq!(a.evals, p.evals);
    assert_eq!(ca.to_bytes().unwrap(), cp.to_bytes().unwrap());
}
