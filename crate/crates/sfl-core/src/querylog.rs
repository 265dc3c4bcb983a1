//! The attacker's collected gradient-query records, and their file form:
//! a sequence of Activation/Gradient frame pairs grouped per epoch, each
//! group closed by an EndEpoch marker (the transport wire ABI).

use std::io::{Read, Write};

use sfl_nn::Tensor;
use sfl_transport::wire::{decode, encode, read_frame, write_frame};
use sfl_transport::{Message, TransportError};

use crate::error::CoreError;

/// One round-trip of the query API. Structurally free of logits,
/// probabilities and predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientQueryRecord {
    pub client: u32,
    pub step: u64,
    pub epoch: u32,
    pub activation: Tensor<f32>,
    pub labels: Vec<u32>,
    pub grad: Tensor<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLog {
    pub records: Vec<GradientQueryRecord>,
}

impl QueryLog {
    pub fn push(&mut self, record: GradientQueryRecord) {
        debug_assert_eq!(record.grad.dims(), record.activation.dims());
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total queries in samples (rows), the unit query budgets count.
    pub fn sample_count(&self) -> u64 {
        self.records.iter().map(|r| r.activation.dims()[0] as u64).sum()
    }

    /// Keep only records from the last `k` distinct global steps.
    pub fn late_k(&self, k: usize) -> QueryLog {
        let mut steps: Vec<u64> = self.records.iter().map(|r| r.step).collect();
        steps.sort_unstable();
        steps.dedup();
        let cutoff = steps.len().saturating_sub(k);
        let keep_from = steps.get(cutoff).copied().unwrap_or(0);
        QueryLog {
            records: self
                .records
                .iter()
                .filter(|r| r.step >= keep_from)
                .cloned()
                .collect(),
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), CoreError> {
        let mut current_epoch: Option<u32> = None;
        for r in &self.records {
            if let Some(e) = current_epoch {
                if e != r.epoch {
                    write_frame(w, &encode(&Message::EndEpoch { epoch: e }))?;
                    current_epoch = Some(r.epoch);
                }
            } else {
                current_epoch = Some(r.epoch);
            }
            write_frame(
                w,
                &encode(&Message::Activation {
                    client: r.client,
                    step: r.step,
                    activation: r.activation.clone(),
                    labels: r.labels.clone(),
                }),
            )?;
            write_frame(
                w,
                &encode(&Message::Gradient {
                    client: r.client,
                    step: r.step,
                    grad: r.grad.clone(),
                }),
            )?;
        }
        if let Some(e) = current_epoch {
            write_frame(w, &encode(&Message::EndEpoch { epoch: e }))?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<QueryLog, CoreError> {
        let mut log = QueryLog::default();
        let mut pending: Option<(u32, u64, Tensor<f32>, Vec<u32>)> = None;
        let mut epoch_batch: Vec<GradientQueryRecord> = Vec::new();
        loop {
            let frame = match read_frame(r) {
                Ok(f) => f,
                Err(TransportError::Truncated(msg)) => {
                    if pending.is_some() || !epoch_batch.is_empty() {
                        return Err(CoreError::QueryLog(format!(
                            "log ends mid-group: {msg}"
                        )));
                    }
                    return Ok(log);
                }
                Err(e) => return Err(e.into()),
            };
            match decode(&frame)? {
                Message::Activation { client, step, activation, labels } => {
                    if pending.is_some() {
                        return Err(CoreError::QueryLog(
                            "activation not answered by a gradient".into(),
                        ));
                    }
                    pending = Some((client, step, activation, labels));
                }
                Message::Gradient { client, step, grad } => {
                    let Some((ac, astep, activation, labels)) = pending.take() else {
                        return Err(CoreError::QueryLog("gradient without activation".into()));
                    };
                    if ac != client || astep != step {
                        return Err(CoreError::QueryLog(
                            "gradient answers a different activation".into(),
                        ));
                    }
                    if grad.dims() != activation.dims() {
                        return Err(CoreError::QueryLog(format!(
                            "gradient dims {:?} do not match activation dims {:?}",
                            grad.dims(),
                            activation.dims()
                        )));
                    }
                    epoch_batch.push(GradientQueryRecord {
                        client,
                        step,
                        epoch: 0, // assigned at the epoch marker
                        activation,
                        labels,
                        grad,
                    });
                }
                Message::EndEpoch { epoch } => {
                    for mut rec in epoch_batch.drain(..) {
                        rec.epoch = epoch;
                        log.records.push(rec);
                    }
                }
                other => {
                    return Err(CoreError::QueryLog(format!(
                        "unexpected message in query log: {other:?}"
                    )))
                }
            }
        }
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<(), CoreError> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(sfl_nn::NnError::Io)?,
        );
        self.write(&mut f)
    }

    pub fn read_file(path: &std::path::Path) -> Result<QueryLog, CoreError> {
        let mut f = std::io::BufReader::new(
            std::fs::File::open(path).map_err(sfl_nn::NnError::Io)?,
        );
        QueryLog::read(&mut f)
    }
}
