//! Model splitting: the last N units live on the server, the first L-N on
//! the clients.

use sfl_nn::net::{forward_logits, forward};
use sfl_nn::unit::chain_shapes;
use sfl_nn::{NnError, ParamSet, Rng, Tensor, UnitSpec};

use crate::error::CoreError;

/// A model partitioned at unit L-N. Parameter sets are re-based to their
/// half (index 0 = first unit of the half).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    units: Vec<UnitSpec>,
    n_server: usize,
    pub client: ParamSet,
    pub server: ParamSet,
}

impl SplitModel {
    /// Partition a full parameter set. Requires 1 <= N <= L-1: the client
    /// always keeps at least one unit, and so does the server.
    pub fn split(
        units: Vec<UnitSpec>,
        params: ParamSet,
        n_server: usize,
    ) -> Result<Self, CoreError> {
        let total = units.len();
        if total < 2 {
            return Err(CoreError::Nn(NnError::TooFewUnits(total)));
        }
        if n_server == 0 || n_server >= total {
            return Err(CoreError::BadSplit { n_server, total });
        }
        let cut = total - n_server;
        let mut entries = params.entries().to_vec();
        let server_entries = entries.split_off(cut);
        Ok(SplitModel {
            units,
            n_server,
            client: ParamSet::from_entries(entries),
            server: ParamSet::from_entries(server_entries),
        })
    }

    /// Initialize a fresh model and split it. Drawing is per full-chain unit
    /// index, so the values do not depend on N.
    pub fn init(units: Vec<UnitSpec>, n_server: usize, rng: &Rng) -> Result<Self, CoreError> {
        let params = sfl_nn::unit::init_params(&units, rng);
        Self::split(units, params, n_server)
    }

    pub fn n_server(&self) -> usize {
        self.n_server
    }

    /// Index of the first server unit.
    pub fn cut(&self) -> usize {
        self.units.len() - self.n_server
    }

    pub fn units(&self) -> &[UnitSpec] {
        &self.units
    }

    pub fn client_units(&self) -> &[UnitSpec] {
        &self.units[..self.cut()]
    }

    pub fn server_units(&self) -> &[UnitSpec] {
        &self.units[self.cut()..]
    }

    /// Feature shape at the cut for the given input shape.
    pub fn cut_shape(&self, input: &[usize]) -> Result<Vec<usize>, CoreError> {
        let shapes = chain_shapes(self.client_units(), input)?;
        Ok(shapes.last().unwrap().clone())
    }

    /// Reassemble the full-chain parameter set.
    pub fn merged_params(&self) -> ParamSet {
        let mut entries = self.client.entries().to_vec();
        entries.extend_from_slice(self.server.entries());
        ParamSet::from_entries(entries)
    }

    /// Full forward pass (client then server half).
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        let a = forward_logits(self.client_units(), &self.client, x)?;
        Ok(forward_logits(self.server_units(), &self.server, &a)?)
    }

    /// Cut activation for a batch.
    pub fn client_forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        Ok(forward_logits(self.client_units(), &self.client, x)?)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>, CoreError> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

/// Anything that maps input batches to logits: victims, surrogates, naive
/// re-trainings. The evaluation layer only sees this surface.
pub trait Classifier {
    fn logits_of(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError>;

    fn predict_of(&self, x: &Tensor<f32>) -> Result<Vec<usize>, CoreError> {
        Ok(argmax_rows(&self.logits_of(x)?))
    }
}

impl Classifier for SplitModel {
    fn logits_of(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, CoreError> {
        self.logits(x)
    }
}

/// A classifier that can also expose dLoss/dInput for given labels; what
/// adversarial-example crafting needs from a surrogate.
pub trait InputGradModel: Classifier {
    fn input_gradient(&self, x: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>, CoreError>;
}

impl InputGradModel for SplitModel {
    fn input_gradient(&self, x: &Tensor<f32>, labels: &[usize]) -> Result<Tensor<f32>, CoreError> {
        let mut units = self.client_units().to_vec();
        units.extend_from_slice(self.server_units());
        let params = self.merged_params();
        let acts = forward(&units, &params, x)?;
        let (_, grad_logits) =
            sfl_nn::loss::cross_entropy_hard(acts.last().unwrap(), labels)?;
        let deltas = sfl_nn::net::input_deltas(&units, &params, &acts, &grad_logits)?;
        Ok(deltas.into_iter().next().unwrap())
    }
}

/// Row-wise argmax (first max wins ties).
pub fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let (bsz, k) = (logits.dims()[0], logits.dims()[1]);
    (0..bsz)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Full-chain logits for a plain (units, params) model.
pub fn model_logits(
    units: &[UnitSpec],
    params: &ParamSet,
    x: &Tensor<f32>,
) -> Result<Tensor<f32>, CoreError> {
    let acts = forward(units, params, x)?;
    Ok(acts.into_iter().next_back().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eleven_units() -> Vec<UnitSpec> {
        // An 11-unit stack of flat layers.
        let mut units = vec![UnitSpec::Flatten];
        for _ in 0..5 {
            units.push(UnitSpec::Linear { inputs: 16, outputs: 16 });
            units.push(UnitSpec::ReLU);
        }
        units
    }

    #[test]
    fn split_counts_match() {
        let m = SplitModel::init(eleven_units(), 5, &Rng::from_seed(1)).unwrap();
        assert_eq!(m.client_units().len(), 6);
        assert_eq!(m.server_units().len(), 5);
        let m2 = SplitModel::init(eleven_units(), 2, &Rng::from_seed(1)).unwrap();
        assert_eq!(m2.client_units().len(), 9);
    }

    #[test]
    fn n_equal_l_is_rejected() {
        let units = eleven_units();
        let n = units.len();
        assert!(matches!(
            SplitModel::init(units, n, &Rng::from_seed(0)),
            Err(CoreError::BadSplit { .. })
        ));
    }

    #[test]
    fn split_point_does_not_change_values() {
        let a = SplitModel::init(eleven_units(), 2, &Rng::from_seed(3)).unwrap();
        let b = SplitModel::init(eleven_units(), 7, &Rng::from_seed(3)).unwrap();
        assert_eq!(a.merged_params(), b.merged_params());
    }

    #[test]
    fn split_model_forward_equals_full_forward() {
        let units = eleven_units();
        let m = SplitModel::init(units.clone(), 4, &Rng::from_seed(5)).unwrap();
        let x = Tensor::new(vec![2, 16], (0..32).map(|i| i as f32 / 31.0).collect()).unwrap();
        let full = model_logits(&units, &m.merged_params(), &x).unwrap();
        let split = m.logits(&x).unwrap();
        assert_eq!(full, split);
    }
}
