//! SGD(+momentum) and Adam with a milestone learning-rate schedule.

use crate::tensor::{Real, Tensor};
use crate::unit::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimKind::Sgd { lr, momentum }
    }

    /// Adam with the standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam(lr: f64) -> Self {
        OptimKind::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn base_lr(&self) -> f64 {
        match *self {
            OptimKind::Sgd { lr, .. } | OptimKind::Adam { lr, .. } => lr,
        }
    }
}

/// Multiply the learning rate by `factor` at each milestone epoch boundary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Schedule {
    pub fn new(milestones: Vec<usize>, factor: f64) -> Self {
        Schedule { milestones, factor }
    }

    /// Effective lr at a (0-based) epoch.
    pub fn lr_at(&self, base_lr: f64, epoch: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| epoch >= m).count();
        base_lr * self.factor.powi(hits as i32)
    }
}

/// Optimizer state for one ParamSet. Moment buffers mirror the parameter
/// layout; `advance_epoch` applies the milestone schedule.
#[derive(Debug, Clone)]
pub struct Optimizer<S: Real = f32> {
    kind: OptimKind,
    schedule: Schedule,
    lr: f64,
    steps: u64,
    momentum_buf: Option<ParamSet<S>>,
    adam_m: Option<ParamSet<S>>,
    adam_v: Option<ParamSet<S>>,
}

impl<S: Real> Optimizer<S> {
    pub fn new(kind: OptimKind, schedule: Schedule) -> Self {
        Optimizer {
            kind,
            schedule,
            lr: kind.base_lr(),
            steps: 0,
            momentum_buf: None,
            adam_m: None,
            adam_v: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Set the current (0-based) epoch; the schedule decides the lr.
    pub fn advance_epoch(&mut self, epoch: usize) {
        self.lr = self.schedule.lr_at(self.kind.base_lr(), epoch);
    }

    /// One update. `grads` must mirror the layout of `params`.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &ParamSet<S>) {
        self.steps += 1;
        match self.kind {
            OptimKind::Sgd { momentum, .. } => self.sgd_step(params, grads, momentum),
            OptimKind::Adam { beta1, beta2, eps, .. } => {
                self.adam_step(params, grads, beta1, beta2, eps)
            }
        }
    }

    fn sgd_step(&mut self, params: &mut ParamSet<S>, grads: &ParamSet<S>, momentum: f64) {
        let lr = S::from_f64(self.lr);
        if momentum == 0.0 {
            for (p, g) in params.entries_mut().iter_mut().zip(grads.entries()) {
                if let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) {
                    axpy(&mut p.weight, &g.weight, lr);
                    axpy(&mut p.bias, &g.bias, lr);
                }
            }
            return;
        }
        let mu = S::from_f64(momentum);
        let buf = self
            .momentum_buf
            .get_or_insert_with(|| params.zeros_like());
        for ((p, g), v) in params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(buf.entries_mut())
        {
            if let (Some(p), Some(g), Some(v)) = (p.as_mut(), g.as_ref(), v.as_mut()) {
                momentum_update(&mut p.weight, &g.weight, &mut v.weight, mu, lr);
                momentum_update(&mut p.bias, &g.bias, &mut v.bias, mu, lr);
            }
        }
    }

    fn adam_step(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &ParamSet<S>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        let t = self.steps as i32;
        let corr1 = 1.0 - beta1.powi(t);
        let corr2 = 1.0 - beta2.powi(t);
        let m_buf = self.adam_m.get_or_insert_with(|| params.zeros_like());
        let v_buf = self.adam_v.get_or_insert_with(|| params.zeros_like());
        for (((p, g), m), v) in params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(m_buf.entries_mut())
            .zip(v_buf.entries_mut())
        {
            if let (Some(p), Some(g), Some(m), Some(v)) =
                (p.as_mut(), g.as_ref(), m.as_mut(), v.as_mut())
            {
                adam_update(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight,
                            beta1, beta2, eps, self.lr, corr1, corr2);
                adam_update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias,
                            beta1, beta2, eps, self.lr, corr1, corr2);
            }
        }
    }
}

fn axpy<S: Real>(w: &mut Tensor<S>, g: &Tensor<S>, lr: S) {
    for (w, &g) in w.data_mut().iter_mut().zip(g.data()) {
        *w = *w - lr * g;
    }
}

fn momentum_update<S: Real>(w: &mut Tensor<S>, g: &Tensor<S>, v: &mut Tensor<S>, mu: S, lr: S) {
    for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        *v = mu * *v + g;
        *w = *w - lr * *v;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update<S: Real>(
    w: &mut Tensor<S>,
    g: &Tensor<S>,
    m: &mut Tensor<S>,
    v: &mut Tensor<S>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    corr1: f64,
    corr2: f64,
) {
    let (b1, b2) = (S::from_f64(beta1), S::from_f64(beta2));
    let one_m_b1 = S::from_f64(1.0 - beta1);
    let one_m_b2 = S::from_f64(1.0 - beta2);
    let (c1, c2) = (S::from_f64(corr1), S::from_f64(corr2));
    let lr = S::from_f64(lr);
    let eps = S::from_f64(eps);
    for ((w, &g), (m, v)) in w
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut()))
    {
        *m = b1 * *m + one_m_b1 * g;
        *v = b2 * *v + one_m_b2 * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *w = *w - lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unit::UnitParams;

    fn scalar_params(v: f64) -> ParamSet<f64> {
        ParamSet::from_entries(vec![Some(UnitParams {
            weight: Tensor::scalar(v),
            bias: Tensor::zeros(vec![1]),
        })])
    }

    #[test]
    fn plain_sgd_applies_lr_times_grad() {
        let mut params = scalar_params(1.0);
        let grads = scalar_params(2.0);
        let mut opt = Optimizer::new(OptimKind::sgd(0.05, 0.0), Schedule::default());
        opt.step(&mut params, &grads);
        assert!((params.get(0).unwrap().weight.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn milestones_multiply_lr() {
        let sched = Schedule::new(vec![60, 120, 160], 0.2);
        assert!((sched.lr_at(0.05, 59) - 0.05).abs() < 1e-12);
        assert!((sched.lr_at(0.05, 60) - 0.01).abs() < 1e-12);
        assert!((sched.lr_at(0.05, 160) - 0.05 * 0.2f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_has_magnitude_close_to_lr() {
        let mut params = scalar_params(0.0);
        let grads = scalar_params(0.3);
        let lr = 0.1;
        let mut opt = Optimizer::new(OptimKind::adam(lr), Schedule::default());
        opt.step(&mut params, &grads);
        let w = params.get(0).unwrap().weight.data()[0];
        // First step: m_hat = g, v_hat = g^2, so |dw| = lr * g/(|g| + eps') ~ lr.
        assert!((w.abs() - lr).abs() < 1e-6);
        assert!(w < 0.0);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut params = scalar_params(0.0);
        let grads = scalar_params(1.0);
        let mut opt = Optimizer::new(OptimKind::sgd(0.1, 0.9), Schedule::default());
        opt.step(&mut params, &grads);
        opt.step(&mut params, &grads);
        // v1 = 1, w -= 0.1; v2 = 1.9, w -= 0.19
        let w = params.get(0).unwrap().weight.data()[0];
        assert!((w + 0.29).abs() < 1e-12);
    }
}
