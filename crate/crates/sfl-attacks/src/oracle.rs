//! The attacker's query environment in the fine-tuning setting: a frozen
//! victim server behind the gradient query, plus the white-box client part
//! to move between input space and the cut.

use sfl_core::{CoreError, GradientQueryRecord, QueryFeedback, QueryLog, SflServer, SplitModel};
use sfl_core::{ServerOptConfig, SflMode};
use sfl_nn::net::{forward, input_deltas};
use sfl_nn::{ParamSet, Tensor, UnitSpec};

use crate::error::AttackError;

/// Client id recorded for direct attacker queries.
pub const ATTACKER_ID: u32 = u32::MAX;

pub struct WhiteBoxEnv {
    server: SflServer,
    client_units: Vec<UnitSpec>,
    client_params: ParamSet,
    budget: u64,
    used: u64,
    step: u64,
    pub log: QueryLog,
}

impl WhiteBoxEnv {
    /// Freeze the victim behind the query API.
    pub fn new(victim: &SplitModel, budget: u64) -> Self {
        let server = SflServer::new(
            victim.server_units().to_vec(),
            victim.server.clone(),
            SflMode::FineTune { server_frozen: true, server_lr: 0.0 },
            ServerOptConfig { lr: 0.0, momentum: 0.0, milestones: vec![], factor: 1.0 },
            None,
        );
        WhiteBoxEnv {
            server,
            client_units: victim.client_units().to_vec(),
            client_params: victim.client.clone(),
            budget,
            used: 0,
            step: 0,
            log: QueryLog::default(),
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.budget.saturating_sub(self.used)
    }

    pub fn can_afford(&self, batch: usize) -> bool {
        self.used + batch as u64 <= self.budget
    }

    /// One round trip: input batch in, cut gradient and its pullback to
    /// input space out.
    pub fn query(&mut self, x: &Tensor<f32>, labels: &[u32]) -> Result<QueryFeedback, AttackError> {
        let batch = x.dims()[0] as u64;
        if self.used + batch > self.budget {
            return Err(AttackError::BudgetTooSmall {
                budget: self.budget,
                steps: batch as u32,
            });
        }
        let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let acts = forward(&self.client_units, &self.client_params, x).map_err(CoreError::Nn)?;
        let activation = acts.last().unwrap().clone();
        let cut_grad = self.server.probe_gradient(&activation, &y)?;
        let deltas = input_deltas(&self.client_units, &self.client_params, &acts, &cut_grad)
            .map_err(CoreError::Nn)?;
        let input_grad = deltas.into_iter().next().unwrap();
        self.used += batch;
        let step = self.step;
        self.step += 1;
        self.log.push(GradientQueryRecord {
            client: ATTACKER_ID,
            step,
            epoch: 0,
            activation: activation.clone(),
            labels: labels.to_vec(),
            grad: cut_grad.clone(),
        });
        Ok(QueryFeedback {
            epoch: 0,
            step,
            input: x.clone(),
            labels: labels.to_vec(),
            activation,
            cut_grad,
            input_grad,
        })
    }
}

/// Mean-over-batch gradients scaled back to per-sample gradients.
pub fn per_sample(grad: &Tensor<f32>) -> Tensor<f32> {
    let b = grad.dims()[0] as f32;
    grad.map(|v| v * b)
}
