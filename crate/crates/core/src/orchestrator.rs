//! Experiment runner: data preparation, the round loop, evaluation and
//! sweeps over algorithm x setting grids.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, GridConfig, TableKind};
use crate::dataset::{stratified_split, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::fl::{
    aggregate_weighted, creff_client_head_grads, local_update_fedavg, local_update_fedper,
    local_update_fedprox, Algorithm, ClientUpdate, CreffRound, CreffServer,
};
use crate::metrics::{ClassGroup, GroupThresholds, Metrics};
use crate::nn::{evaluate, init_model, Batch, ModelConfig, ModelParams};
use crate::partition::{partition, Partition, PartitionReport};
use crate::rng;
use crate::shaping::{exponential_profile, shape_long_tailed};

pub use crate::metrics::head_tail_groups;

/// Train and test sets of a config, with the training set long-tailed when
/// `dataset.imbalance_factor` is set.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = config.dataset.source(config.master_seed)?.load()?;
    let Some(target_if) = config.dataset.imbalance_factor else {
        return Ok((train, test));
    };
    let n_max = train.class_counts().into_iter().min().unwrap_or(0);
    let profile = exponential_profile(n_max, train.num_classes(), target_if)?;
    let shaped = shape_long_tailed(&train, &profile, config.seed("lt-shape"))?;
    Ok((shaped, test))
}

pub fn prepare_partition(config: &ExperimentConfig, train: &Dataset) -> Result<Partition> {
    partition(train, &config.partition_spec()?)
}

/// A client's shard split into the part it trains on and its test shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub train: ClientShard,
    pub test: ClientShard,
}

pub fn split_clients(
    config: &ExperimentConfig,
    train: &Dataset,
    partition: &Partition,
) -> Result<Vec<ClientData>> {
    let fraction = config.partition.client_test_fraction;
    partition
        .shards
        .iter()
        .map(|s| {
            let (tr, te) = if fraction > 0.0 {
                let seed = rng::derive_seed(config.master_seed, "client-holdout", 0, s.client_id as u64);
                stratified_split(train, &s.indices, fraction, seed)?
            } else {
                (s.indices.clone(), Vec::new())
            };
            Ok(ClientData {
                train: ClientShard::new(s.client_id, tr),
                test: ClientShard::new(s.client_id, te),
            })
        })
        .collect()
}

/// `ceil(C * N)` distinct clients for `round`, ascending.
pub fn sample_clients(master_seed: u64, round: usize, num_clients: usize, per_round: usize) -> Vec<usize> {
    let mut r = rng::stream(master_seed, "client-sampling", round as u64, 0);
    let mut picked = index::sample(&mut r, num_clients, per_round.min(num_clients)).into_vec();
    picked.sort_unstable();
    picked
}

/// Mean accuracy over clients that have a non-empty test shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub mean_accuracy: f64,
    pub per_client: Vec<Option<f64>>,
}

impl ClientEval {
    fn from_metrics(per_client: &[Option<Metrics>]) -> Option<Self> {
        let accs: Vec<Option<f64>> = per_client
            .iter()
            .map(|m| m.as_ref().map(|m| m.accuracy))
            .collect();
        let present: Vec<f64> = accs.iter().flatten().copied().collect();
        if present.is_empty() {
            return None;
        }
        Some(Self {
            mean_accuracy: present.iter().sum::<f64>() / present.len() as f64,
            per_client: accs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub round: usize,
    /// Global model on the balanced test set.
    pub test: Metrics,
    /// Global model on every client's test shard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_test: Option<ClientEval>,
    /// Each client's personalized model on its own test shard (FedPer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personalized: Option<ClientEval>,
    /// Server diagnostics of the latest CReFF round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creff: Option<CreffRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub algorithm: String,
    pub config: ExperimentConfig,
    pub train_class_counts: Vec<u64>,
    pub test_class_counts: Vec<u64>,
    pub groups: Vec<ClassGroup>,
    pub partition: PartitionReport,
    pub evals: Vec<EvalPoint>,
    pub best_accuracy: f64,
    pub best_round: usize,
    pub final_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_personalized_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_personalized_accuracy: Option<f64>,
    /// Per-client personalized metrics at the last evaluation (FedPer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_personalized: Option<Vec<Option<Metrics>>>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn final_eval(&self) -> &EvalPoint {
        self.evals.last().expect("round 0 is always evaluated")
    }

    /// Flat `round,split,metric,class,value` rows.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["round", "split", "metric", "class", "value"])
            .expect("in-memory write");
        let mut row = |round: usize, split: &str, metric: &str, class: &str, value: f64| {
            w.write_record([&round.to_string(), split, metric, class, &value.to_string()])
                .expect("in-memory write");
        };
        for e in &self.evals {
            let t = &e.test;
            row(e.round, "test", "accuracy", "", t.accuracy);
            for (c, a) in t.per_class.iter().enumerate() {
                if let Some(a) = a {
                    row(e.round, "test", "class_accuracy", &c.to_string(), *a);
                }
            }
            for (name, a) in [
                ("head", t.groups.head),
                ("medium", t.groups.medium),
                ("tail", t.groups.tail),
            ] {
                if let Some(a) = a {
                    row(e.round, "test", "group_accuracy", name, a);
                }
            }
            if let Some(c) = &e.client_test {
                row(e.round, "client_test", "mean_accuracy", "", c.mean_accuracy);
            }
            if let Some(p) = &e.personalized {
                row(e.round, "personalized", "mean_accuracy", "", p.mean_accuracy);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

/// Server-side state that differs per algorithm.
enum ServerState {
    Plain,
    FedPer {
        heads: Vec<Vec<f64>>,
    },
    CReFF {
        server: CreffServer,
        head: Option<Vec<f64>>,
        last: Option<CreffRound>,
    },
}

struct Run<'a> {
    config: &'a ExperimentConfig,
    model: ModelConfig,
    algorithm: Algorithm,
    train: &'a Dataset,
    test: &'a Dataset,
    clients: Vec<ClientData>,
    held_out: Vec<bool>,
    groups: Vec<ClassGroup>,
    global: ModelParams,
    state: ServerState,
}

impl Run<'_> {
    /// The model whose accuracy is reported.
    fn eval_model(&self) -> ModelParams {
        match &self.state {
            ServerState::Plain => self.global.clone(),
            ServerState::FedPer { heads } => {
                let total: u64 = self.clients.iter().map(|c| c.train.len() as u64).sum();
                let mut head = vec![0.0; self.global.head.len()];
                for (c, h) in self.clients.iter().zip(heads) {
                    let w = c.train.len() as f64 / total as f64;
                    for (a, v) in head.iter_mut().zip(h) {
                        *a += w * v;
                    }
                }
                ModelParams {
                    rep: self.global.rep.clone(),
                    head,
                }
            }
            ServerState::CReFF { head, .. } => ModelParams {
                rep: self.global.rep.clone(),
                head: head.clone().unwrap_or_else(|| self.global.head.clone()),
            },
        }
    }

    fn on_client_tests(&self, params: impl Fn(usize) -> ModelParams + Sync) -> Result<Vec<Option<Metrics>>> {
        self.clients
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                if c.test.is_empty() {
                    return Ok(None);
                }
                let m = evaluate(
                    &params(k),
                    &self.model,
                    &Batch::new(self.train, &c.test.indices),
                    None,
                )?;
                Ok(Some(m))
            })
            .collect()
    }

    fn evaluate(&self, round: usize) -> Result<(EvalPoint, Option<Vec<Option<Metrics>>>)> {
        let model = self.eval_model();
        let all: Vec<usize> = self.test.all_indices();
        let test = evaluate(
            &model,
            &self.model,
            &Batch::new(self.test, &all),
            Some(&self.groups),
        )?;
        let client_test = ClientEval::from_metrics(&self.on_client_tests(|_| model.clone())?);
        let (personalized, per_client, creff) = match &self.state {
            ServerState::FedPer { heads } => {
                let per = self.on_client_tests(|k| ModelParams {
                    rep: self.global.rep.clone(),
                    head: heads[k].clone(),
                })?;
                (ClientEval::from_metrics(&per), Some(per), None)
            }
            ServerState::CReFF { last, .. } => (None, None, last.clone()),
            ServerState::Plain => (None, None, None),
        };
        Ok((
            EvalPoint {
                round,
                test,
                client_test,
                personalized,
                creff,
            },
            per_client,
        ))
    }

    fn check_isolation(&self, sampled: &[usize]) -> Result<()> {
        for &k in sampled {
            if let Some(&i) = self.clients[k].train.indices.iter().find(|&&i| self.held_out[i]) {
                return Err(Error::InvalidArgument(format!(
                    "evaluation isolation violated: client {k} trains on held-out sample {i}"
                )));
            }
        }
        Ok(())
    }

    fn round(&mut self, round: usize, per_round: usize) -> Result<()> {
        let sampled = sample_clients(self.config.master_seed, round, self.clients.len(), per_round);
        self.check_isolation(&sampled)?;
        let fedper_heads = match &self.state {
            ServerState::FedPer { heads } => Some(heads),
            _ => None,
        };
        let results: Vec<(ClientUpdate, Option<Vec<f64>>)> = sampled
            .par_iter()
            .map(|&k| {
                let shard = &self.clients[k].train;
                let tc = self.config.train_config(round, k);
                match (&self.algorithm, fedper_heads) {
                    (Algorithm::FedPer, Some(heads)) => {
                        let (u, h) = local_update_fedper(
                            &self.global.rep,
                            &heads[k],
                            &self.model,
                            &tc,
                            self.train,
                            shard,
                        )?;
                        Ok((u, Some(h)))
                    }
                    (Algorithm::FedProx { mu }, _) => Ok((
                        local_update_fedprox(&self.global, &self.model, &tc, self.train, shard, *mu)?,
                        None,
                    )),
                    (Algorithm::CReFF(_), _) => {
                        let grads = creff_client_head_grads(&self.global, &self.model, self.train, shard)?;
                        let mut u = local_update_fedavg(&self.global, &self.model, &tc, self.train, shard)?;
                        u.head_class_grads = Some(grads);
                        Ok((u, None))
                    }
                    _ => Ok((
                        local_update_fedavg(&self.global, &self.model, &tc, self.train, shard)?,
                        None,
                    )),
                }
            })
            .collect::<Result<_>>()?;

        let (updates, heads): (Vec<ClientUpdate>, Vec<Option<Vec<f64>>>) = results.into_iter().unzip();
        let aggregated = aggregate_weighted(&updates)?;
        match &mut self.state {
            ServerState::Plain => self.global = aggregated,
            ServerState::FedPer { heads: local } => {
                for (u, h) in updates.iter().zip(heads) {
                    local[u.client_id] = h.expect("fedper returns a head");
                }
                self.global = ModelParams {
                    rep: aggregated.rep,
                    head: self.global.head.clone(),
                };
            }
            ServerState::CReFF { server, head, last } => {
                let grads: Vec<_> = updates
                    .iter()
                    .filter_map(|u| u.head_class_grads.as_ref())
                    .collect();
                let (retrained, diag) = server.round(&self.global.head, &aggregated.head, &grads)?;
                *head = Some(retrained);
                *last = Some(diag);
                self.global = aggregated;
            }
        }
        if !self.global.is_finite() {
            return Err(Error::NonFinite("global model diverged".into()));
        }
        Ok(())
    }
}

/// Run one configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_model(config).map(|(report, _)| report)
}

/// Like [`run_experiment`], also returning the final evaluated model (and
/// CReFF's federated features).
pub fn run_experiment_with_model(config: &ExperimentConfig) -> Result<(ExperimentReport, Checkpoint)> {
    config.validate()?;
    let (train, test) = prepare_data(config)?;
    let part = prepare_partition(config, &train)?;
    run_prepared(config, &train, &test, &part)
}

/// Run on already prepared data and partition.
pub fn run_prepared(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    part: &Partition,
) -> Result<(ExperimentReport, Checkpoint)> {
    if train.num_classes() != test.num_classes() || train.dim() != test.dim() {
        return Err(Error::ShapeMismatch(
            "train and test sets disagree in classes or dim".into(),
        ));
    }
    let model = config.model_config(train.dim(), train.num_classes())?;
    let algo = config.algo_config();
    algo.validate()?;
    let clients = split_clients(config, train, part)?;
    let mut held_out = vec![false; train.len()];
    for c in &clients {
        for &i in &c.test.indices {
            held_out[i] = true;
        }
    }
    let train_counts = train.class_counts();
    let groups = head_tail_groups(&train_counts, GroupThresholds::scaled_for(&train_counts));
    let global = init_model(&model);
    let state = match &algo.algorithm {
        Algorithm::FedPer => ServerState::FedPer {
            heads: vec![global.head.clone(); clients.len()],
        },
        Algorithm::CReFF(c) => ServerState::CReFF {
            server: CreffServer::new(
                *c,
                model.num_classes,
                model.feature_dim(),
                config.seed("creff-features"),
            ),
            head: None,
            last: None,
        },
        _ => ServerState::Plain,
    };
    let mut run = Run {
        config,
        model,
        algorithm: algo.algorithm.clone(),
        train,
        test,
        clients,
        held_out,
        groups,
        global,
        state,
    };

    let per_round = algo.clients_per_round(run.clients.len());
    let mut evals = Vec::new();
    let mut final_personalized = None;
    for round in 0..=algo.rounds {
        if round > 0 {
            run.round(round, per_round).map_err(|e| e.at_round(round))?;
        }
        if round == 0 || round % config.eval_every == 0 || round == algo.rounds {
            let (point, per_client) = run.evaluate(round).map_err(|e| e.at_round(round))?;
            evals.push(point);
            final_personalized = per_client;
        }
    }

    let (best_round, best_accuracy) = evals
        .iter()
        .map(|e| (e.round, e.test.accuracy))
        .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
    let personal: Vec<f64> = evals
        .iter()
        .filter_map(|e| e.personalized.as_ref().map(|p| p.mean_accuracy))
        .collect();
    let report = ExperimentReport {
        algorithm: algo.algorithm.label().to_string(),
        config: config.clone(),
        train_class_counts: train_counts,
        test_class_counts: test.class_counts(),
        groups: run.groups.clone(),
        partition: part.report(),
        best_accuracy,
        best_round,
        final_accuracy: evals.last().expect("round 0 evaluated").test.accuracy,
        best_personalized_accuracy: personal.iter().copied().reduce(f64::max),
        final_personalized_accuracy: personal.last().copied(),
        final_personalized,
        evals,
    };
    let features = match &run.state {
        ServerState::CReFF { server, .. } => Some(server.features.clone()),
        _ => None,
    };
    let checkpoint = Checkpoint {
        config: run.model,
        params: run.eval_model(),
        features,
    };
    Ok((report, checkpoint))
}

/// One cell of a sweep for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub row: usize,
    pub col: usize,
    pub seed: u64,
    pub algorithm: String,
    pub setting: String,
    pub outcome: std::result::Result<ExperimentReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub table: TableKind,
    pub algorithms: Vec<String>,
    pub settings: Vec<String>,
    pub cells: Vec<SweepCell>,
}

/// Run every (algorithm, setting, seed) cell on a pool of `workers`
/// threads. Failed cells are recorded, not fatal.
pub fn run_sweep(grid: &GridConfig, workers: usize) -> Result<SweepOutcome> {
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    let mut jobs = Vec::new();
    for row in 0..grid.algorithms.len() {
        for col in 0..grid.settings.len() {
            for seed in grid.seeds() {
                jobs.push((row, col, seed));
            }
        }
    }
    let cells = pool.install(|| {
        jobs.par_iter()
            .map(|&(row, col, seed)| SweepCell {
                row,
                col,
                seed,
                algorithm: grid.algorithms[row].label().to_string(),
                setting: grid.settings[col].label.clone(),
                outcome: run_experiment(&grid.cell(row, col, seed)).map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(SweepOutcome {
        table: grid.table,
        algorithms: grid.algorithms.iter().map(|a| a.label().to_string()).collect(),
        settings: grid.settings.iter().map(|s| s.label.clone()).collect(),
        cells,
    })
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    /// Mean over seeds of `pick`, or `None` when any seed failed or lacks
    /// the value.
    pub fn cell_mean(
        &self,
        row: usize,
        col: usize,
        pick: impl Fn(&ExperimentReport) -> Option<f64>,
    ) -> Option<f64> {
        let vals: Option<Vec<f64>> = self
            .cells
            .iter()
            .filter(|c| c.row == row && c.col == col)
            .map(|c| c.outcome.as_ref().ok().and_then(&pick))
            .collect();
        let vals = vals.filter(|v| !v.is_empty())?;
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Rows are algorithms, columns settings; values are mean best test
    /// accuracies. FedPer also gets a personalized row.
    pub fn table_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["algorithm".to_string()];
        header.extend(self.settings.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        let fmt = |v: Option<f64>| v.map_or_else(|| "ERROR".to_string(), |v| format!("{v:.4}"));
        for (row, name) in self.algorithms.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(
                (0..self.settings.len()).map(|col| fmt(self.cell_mean(row, col, |r| Some(r.best_accuracy)))),
            );
            w.write_record(&rec).expect("in-memory write");
            if name == "FedPer" {
                let mut rec = vec![format!("{name} (personalized)")];
                rec.extend(
                    (0..self.settings.len())
                        .map(|col| fmt(self.cell_mean(row, col, |r| r.best_personalized_accuracy))),
                );
                w.write_record(&rec).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(algo: &str, rounds: usize) -> ExperimentConfig {
        let extra = if algo == "creff" {
            "\n[algorithm.creff]\nff_per_class = 5\nff_steps = 5\nretrain_steps = 10\n"
        } else {
            ""
        };
        ExperimentConfig::from_toml_str(&format!(
            r#"
master_seed = 3
eval_every = 2

[dataset.synthetic]
classes = 3
per_class = 40
test_per_class = 10
dim = 4
spread = 1.0

[partition]
kind = "dirichlet"
alpha = 1.0
num_clients = 3
min_shard_size = 5

[model]
kind = "mlp1h"
hidden = 8

[train]
learning_rate = 0.1
batch_size = 8
local_epochs = 1

[algorithm]
name = "{algo}"
rounds = {rounds}
participation = 0.7
{extra}"#
        ))
        .unwrap()
    }

    #[test]
    fn zero_rounds_is_init_eval_only() {
        let r = run_experiment(&quick("fedavg", 0)).unwrap();
        assert_eq!(r.evals.len(), 1);
        assert_eq!(r.evals[0].round, 0);
        assert_eq!(r.best_accuracy, r.final_accuracy);
    }

    #[test]
    fn eval_schedule_includes_last_round() {
        let r = run_experiment(&quick("fedavg", 5)).unwrap();
        let rounds: Vec<usize> = r.evals.iter().map(|e| e.round).collect();
        assert_eq!(rounds, vec![0, 2, 4, 5]);
        let best = r.evals.iter().map(|e| e.test.accuracy).fold(f64::MIN, f64::max);
        assert_eq!(r.best_accuracy, best);
    }

    #[test]
    fn every_algorithm_runs_and_repeats() {
        for algo in ["fedavg", "fedprox", "fedper", "creff"] {
            let cfg = quick(algo, 3);
            let a = run_experiment(&cfg).unwrap();
            assert_eq!(a, run_experiment(&cfg).unwrap(), "{algo}");
            assert_eq!(a.best_personalized_accuracy.is_some(), algo == "fedper");
            assert!(a.final_eval().client_test.is_some());
            assert_eq!(a.final_eval().creff.is_some(), algo == "creff");
        }
    }

    #[test]
    fn sampling_is_sorted_distinct_and_round_keyed() {
        let a = sample_clients(1, 4, 10, 4);
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_clients(1, 4, 10, 4));
        assert_eq!(sample_clients(1, 1, 5, 5), vec![0, 1, 2, 3, 4]);
        let differs = (0..20).any(|r| sample_clients(1, r, 10, 4) != a);
        assert!(differs);
    }

    #[test]
    fn client_test_shards_are_disjoint_from_training() {
        let cfg = quick("fedavg", 1);
        let (train, _) = prepare_data(&cfg).unwrap();
        let part = prepare_partition(&cfg, &train).unwrap();
        let clients = split_clients(&cfg, &train, &part).unwrap();
        for (c, s) in clients.iter().zip(&part.shards) {
            assert_eq!(c.train.len() + c.test.len(), s.len());
            assert!(c.train.indices.iter().all(|i| !c.test.indices.contains(i)));
        }
    }

    #[test]
    fn metrics_csv_shape() {
        let r = run_experiment(&quick("fedper", 2)).unwrap();
        let csv = r.metrics_csv();
        assert!(csv.starts_with("round,split,metric,class,value\n0,test,accuracy,,"));
        assert!(csv.contains(",personalized,mean_accuracy,,"));
        assert!(!csv.contains('\r'));
    }
}
