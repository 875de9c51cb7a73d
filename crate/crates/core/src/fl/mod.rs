//! Client update rules and server aggregation.

mod creff;

pub use creff::{
    creff_client_head_grads, matching_loss, matching_loss_and_grad, retrain_head, ClassHeadGrads,
    CreffConfig, CreffRound, CreffServer, FederatedFeatures,
};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{sgd_epochs, GradHook, ModelConfig, ModelParams, TrainConfig};

fn default_mu() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Representation shared and averaged; classifier head kept per client.
    FedPer,
    CReFF(CreffConfig),
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "FedAvg",
            Algorithm::FedProx { .. } => "FedProx",
            Algorithm::FedPer => "FedPer",
            Algorithm::CReFF(_) => "CReFF",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Algorithm::FedProx { mu } if !(*mu >= 0.0 && mu.is_finite()) => Err(Error::InvalidArgument(
                format!("FedProx mu must be >= 0, got {mu}"),
            )),
            Algorithm::CReFF(c) => c.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Fraction of clients sampled each round, in (0, 1].
    pub participation: f64,
    pub rounds: usize,
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        self.algorithm.validate()
    }

    pub fn clients_per_round(&self, num_clients: usize) -> usize {
        ((self.participation * num_clients as f64).ceil() as usize).clamp(1, num_clients)
    }
}

/// What one client sends back after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Full parameters, or representation only (empty head) for FedPer.
    pub params: ModelParams,
    pub n_k: u64,
    /// Per-class head gradients at the round's global model (CReFF only).
    pub head_class_grads: Option<ClassHeadGrads>,
}

fn client_update(
    global: &ModelParams,
    config: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    shard: &ClientShard,
    hook: Option<GradHook<'_>>,
) -> Result<ClientUpdate> {
    let params = sgd_epochs(global, config, train, data, &shard.indices, hook)?;
    Ok(ClientUpdate {
        client_id: shard.client_id,
        params,
        n_k: shard.len() as u64,
        head_class_grads: None,
    })
}

pub fn local_update_fedavg(
    global: &ModelParams,
    config: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    shard: &ClientShard,
) -> Result<ClientUpdate> {
    client_update(global, config, train, data, shard, None)
}

/// FedAvg local training with `mu * (w - w_global)` added to every batch
/// gradient.
pub fn local_update_fedprox(
    global: &ModelParams,
    config: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    shard: &ClientShard,
    mu: f64,
) -> Result<ClientUpdate> {
    let hook = proximal_hook(global, mu);
    client_update(global, config, train, data, shard, Some(&hook))
}

pub fn proximal_hook(global: &ModelParams, mu: f64) -> impl Fn(&ModelParams, &mut ModelParams) + Sync + '_ {
    move |w: &ModelParams, g: &mut ModelParams| {
        for ((gi, wi), wg) in g.iter_mut().zip(w.iter()).zip(global.iter()) {
            *gi += mu * (wi - wg);
        }
    }
}

/// Train `(global_rep, local_head)` on the shard. The update carries only
/// the representation; the trained head is returned separately and stays
/// with the client.
pub fn local_update_fedper(
    global_rep: &[f64],
    local_head: &[f64],
    config: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    shard: &ClientShard,
) -> Result<(ClientUpdate, Vec<f64>)> {
    let start = ModelParams {
        rep: global_rep.to_vec(),
        head: local_head.to_vec(),
    };
    let trained = sgd_epochs(&start, config, train, data, &shard.indices, None)?;
    let update = ClientUpdate {
        client_id: shard.client_id,
        params: ModelParams {
            rep: trained.rep,
            head: Vec::new(),
        },
        n_k: shard.len() as u64,
        head_class_grads: None,
    };
    Ok((update, trained.head))
}

/// `sum_k (n_k / sum n) * params_k`, reduced in ascending client order.
pub fn aggregate_weighted(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::EmptyInput("no client updates to aggregate".into()))?;
    let total: u64 = updates.iter().map(|u| u.n_k).sum();
    if total == 0 {
        return Err(Error::ZeroTotalSamples);
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let mut acc = ModelParams {
        rep: vec![0.0; first.params.rep.len()],
        head: vec![0.0; first.params.head.len()],
    };
    for u in ordered {
        if u.params.rep.len() != acc.rep.len() || u.params.head.len() != acc.head.len() {
            return Err(Error::ShapeMismatch(format!(
                "update from client {} has a different shape",
                u.client_id
            )));
        }
        acc.add_scaled(&u.params, u.n_k as f64 / total as f64);
    }
    Ok(acc)
}
