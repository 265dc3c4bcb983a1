//! The server side of the protocol. Its entire client-facing surface is
//! the gradient query: (activation, labels) in, cut gradient out. There is
//! no operation that returns logits, probabilities or predicted labels.

use sfl_nn::loss::cross_entropy_hard;
use sfl_nn::net::{backward, forward};
use sfl_nn::optim::{OptimKind, Optimizer, Schedule};
use sfl_nn::{ParamSet, Tensor, UnitSpec};
use sfl_transport::bus::ServerActor;
use sfl_transport::TransportError;

use crate::error::CoreError;
use crate::sync::fedavg_tensors;

/// How the server treats its own parameters during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SflMode {
    /// Training from scratch: W_S updated once per global step.
    FromScratch,
    /// Fine-tuning a pre-trained model: W_S frozen, or nudged with a very
    /// small learning rate.
    FineTune { server_frozen: bool, server_lr: f64 },
}

impl SflMode {
    pub fn updates_server(&self) -> bool {
        match *self {
            SflMode::FromScratch => true,
            SflMode::FineTune { server_frozen, .. } => !server_frozen,
        }
    }
}

/// L1 defense strength on client-side weights; 0 disables it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DefenseConfig {
    pub l1_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ServerOptConfig {
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

pub struct SflServer {
    units: Vec<UnitSpec>,
    pub params: ParamSet,
    mode: SflMode,
    optimizer: Optimizer,
    grad_accum: ParamSet,
    batches_in_step: usize,
    epoch: u32,
    loss_sum: f64,
    loss_batches: usize,
    pub epoch_losses: Vec<f32>,
    /// Fixed (activation, labels) probe; snapshots taken at each epoch end.
    probe: Option<(Tensor<f32>, Vec<usize>)>,
    pub probe_grads: Vec<Tensor<f32>>,
}

impl SflServer {
    pub fn new(
        units: Vec<UnitSpec>,
        params: ParamSet,
        mode: SflMode,
        opt: ServerOptConfig,
        probe: Option<(Tensor<f32>, Vec<usize>)>,
    ) -> Self {
        let lr = match mode {
            SflMode::FromScratch => opt.lr,
            SflMode::FineTune { server_lr, .. } => server_lr,
        };
        let grad_accum = params.zeros_like();
        SflServer {
            units,
            params,
            mode,
            optimizer: Optimizer::new(
                OptimKind::sgd(lr, opt.momentum),
                Schedule::new(opt.milestones, opt.factor),
            ),
            grad_accum,
            batches_in_step: 0,
            epoch: 0,
            loss_sum: 0.0,
            loss_batches: 0,
            epoch_losses: Vec::new(),
            probe: probe.map(|(a, y)| (a, y)),
            probe_grads: Vec::new(),
        }
    }

    pub fn mode(&self) -> SflMode {
        self.mode
    }

    pub fn server_units(&self) -> &[UnitSpec] {
        &self.units
    }

    /// The gradient query of the protocol: server forward, loss, server
    /// backward; returns dLoss/dActivation (mean-over-batch convention).
    /// In updating modes the parameter gradient joins the step accumulator.
    pub fn gradient_query(
        &mut self,
        activation: &Tensor<f32>,
        labels: &[usize],
    ) -> Result<Tensor<f32>, CoreError> {
        let acts = forward(&self.units, &self.params, activation)?;
        let (loss, grad_logits) = cross_entropy_hard(acts.last().unwrap(), labels)?;
        if !loss.is_finite() {
            return Err(CoreError::Diverged { epoch: self.epoch, loss: f64::from(loss) });
        }
        self.loss_sum += f64::from(loss);
        self.loss_batches += 1;
        let (param_grads, input_grad) = backward(&self.units, &self.params, &acts, &grad_logits)?;
        if self.mode.updates_server() {
            self.grad_accum.add_assign(&param_grads);
            self.batches_in_step += 1;
        }
        Ok(input_grad)
    }

    /// Evaluate the cut gradient without mutating any state (consistency
    /// probes, frozen fine-tune queries).
    pub fn probe_gradient(
        &self,
        activation: &Tensor<f32>,
        labels: &[usize],
    ) -> Result<Tensor<f32>, CoreError> {
        let acts = forward(&self.units, &self.params, activation)?;
        let (_, grad_logits) = cross_entropy_hard(acts.last().unwrap(), labels)?;
        let (_, input_grad) = backward(&self.units, &self.params, &acts, &grad_logits)?;
        Ok(input_grad)
    }

    fn finish_step(&mut self) {
        if self.mode.updates_server() && self.batches_in_step > 0 {
            let scale = (1.0 / self.batches_in_step as f64) as f32;
            self.grad_accum.scale_assign(scale);
            self.optimizer.step(&mut self.params, &self.grad_accum);
            self.grad_accum = self.params.zeros_like();
            self.batches_in_step = 0;
        }
    }

    fn finish_epoch(&mut self, epoch: u32) -> Result<(), CoreError> {
        if self.loss_batches > 0 {
            self.epoch_losses.push((self.loss_sum / self.loss_batches as f64) as f32);
            self.loss_sum = 0.0;
            self.loss_batches = 0;
        }
        if let Some((a, y)) = self.probe.clone() {
            let g = self.probe_gradient(&a, &y)?;
            self.probe_grads.push(g);
        }
        self.epoch = epoch + 1;
        Ok(())
    }
}

impl ServerActor for SflServer {
    fn synchronize(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        // Epoch boundary: the schedule keys off the epoch that now begins.
        self.optimizer.advance_epoch(self.epoch as usize);
        fedavg_tensors(uploads).map_err(TransportError::from)
    }

    fn handle_activation(
        &mut self,
        _client: u32,
        _step: u64,
        activation: &Tensor<f32>,
        labels: &[u32],
    ) -> Result<Tensor<f32>, TransportError> {
        let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        self.gradient_query(activation, &labels).map_err(TransportError::from)
    }

    fn end_step(&mut self) -> Result<(), TransportError> {
        self.finish_step();
        Ok(())
    }

    fn end_epoch(&mut self, epoch: u32) -> Result<(), TransportError> {
        self.finish_epoch(epoch).map_err(TransportError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfl_nn::loss::softmax_rows;
    use sfl_nn::unit::{init_params, UnitParams};
    use sfl_nn::Rng;

    fn frozen_linear_server(seed: u64) -> SflServer {
        let units = vec![UnitSpec::Linear { inputs: 6, outputs: 4 }];
        let params = init_params(&units, &Rng::from_seed(seed));
        SflServer::new(
            units,
            params,
            SflMode::FineTune { server_frozen: true, server_lr: 0.0 },
            ServerOptConfig { lr: 0.05, momentum: 0.0, milestones: vec![], factor: 0.2 },
            None,
        )
    }

    #[test]
    fn gradient_dims_match_activation_dims() {
        let mut server = frozen_linear_server(1);
        let a = Tensor::new(vec![3, 6], (0..18).map(|i| i as f32 * 0.1).collect()).unwrap();
        let g = server.gradient_query(&a, &[0, 1, 3]).unwrap();
        assert_eq!(g.dims(), a.dims());
    }

    #[test]
    fn frozen_server_answers_identically_twice() {
        let mut server = frozen_linear_server(2);
        let a = Tensor::new(vec![2, 6], (0..12).map(|i| (i as f32).sin()).collect()).unwrap();
        let g1 = server.gradient_query(&a, &[1, 2]).unwrap();
        let g2 = server.gradient_query(&a, &[1, 2]).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn linear_server_gradient_matches_closed_form() {
        // Server = single Linear W (zero bias) + CE:
        //   dL/dA = W^T (softmax(W A) - onehot(y)) / batch.
        let units = vec![UnitSpec::Linear { inputs: 3, outputs: 2 }];
        let w = Tensor::new(vec![2, 3], vec![0.4, -0.2, 0.1, 0.3, 0.5, -0.6]).unwrap();
        let params = ParamSet::from_entries(vec![Some(UnitParams {
            weight: w.clone(),
            bias: Tensor::zeros(vec![2]),
        })]);
        let mut server = SflServer::new(
            units.clone(),
            params.clone(),
            SflMode::FineTune { server_frozen: true, server_lr: 0.0 },
            ServerOptConfig { lr: 0.0, momentum: 0.0, milestones: vec![], factor: 1.0 },
            None,
        );
        let a = Tensor::new(vec![2, 3], vec![0.5, 1.0, -0.5, -1.0, 0.25, 0.75]).unwrap();
        let y = [1usize, 0];
        let got = server.gradient_query(&a, &y).unwrap();

        let logits = sfl_nn::net::forward_logits(&units, &params, &a).unwrap();
        let p = softmax_rows(&logits);
        for i in 0..2 {
            for k in 0..3 {
                let mut expected = 0.0f64;
                for o in 0..2 {
                    let s = f64::from(p.data()[i * 2 + o]) - f64::from((y[i] == o) as u8);
                    expected += f64::from(w.data()[o * 3 + k]) * s / 2.0;
                }
                assert!((f64::from(got.data()[i * 3 + k]) - expected).abs() < 1e-6);
            }
        }
    }
}
