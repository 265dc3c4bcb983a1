//! Deterministic in-process message bus realizing the protocol's phase
//! structure: per step, all Activations are delivered before any Gradient,
//! and within a phase clients are served in ascending id order.

use sfl_nn::Tensor;

use crate::error::TransportError;
use crate::message::Message;
use crate::wire::{encode, Frame};

/// A client-side participant. Actors own their state; all cross-actor
/// traffic flows through the bus.
pub trait ClientActor: Send {
    fn id(&self) -> u32;
    /// Current client-part parameters, uploaded for synchronization.
    fn upload_model(&self) -> Vec<Tensor<f32>>;
    /// Replace the local client part with the synchronized average.
    fn download_model(&mut self, tensors: &[Tensor<f32>]) -> Result<(), TransportError>;
    /// Compute the cut activation and labels for one step.
    fn produce_activation(
        &mut self,
        epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), TransportError>;
    /// Receive the answering cut gradient; local backward + update.
    fn apply_gradient(
        &mut self,
        epoch: u32,
        step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), TransportError>;
}

/// The server-side participant. Serialized by construction: the bus calls
/// it from one thread in a fixed order.
pub trait ServerActor {
    /// Average the uploads (given in ascending client-id order) and return
    /// the model every client must adopt.
    fn synchronize(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError>;
    /// Server forward + backward for one client's batch; returns the cut
    /// gradient. Never exposes logits or predictions.
    fn handle_activation(
        &mut self,
        client: u32,
        step: u64,
        activation: &Tensor<f32>,
        labels: &[u32],
    ) -> Result<Tensor<f32>, TransportError>;
    /// Called once per global step, after the sequential client loop.
    fn end_step(&mut self) -> Result<(), TransportError>;
    fn end_epoch(&mut self, epoch: u32) -> Result<(), TransportError>;
}

/// How the bus reaches the server: directly (in-process) or through a
/// framed byte stream. Both produce identical transcripts.
pub trait ServerLink {
    fn hello(&mut self, clients: &[u32]) -> Result<(), TransportError>;
    fn sync_round(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError>;
    /// Submit the step's activations (ascending id) and collect the
    /// answering gradients in the same order.
    fn step_round(
        &mut self,
        acts: &[(u32, u64, Tensor<f32>, Vec<u32>)],
    ) -> Result<Vec<Tensor<f32>>, TransportError>;
    fn epoch_end(&mut self, epoch: u32) -> Result<(), TransportError>;
}

/// In-process link: calls the server actor directly.
pub struct LocalLink<'a> {
    pub server: &'a mut dyn ServerActor,
}

impl ServerLink for LocalLink<'_> {
    fn hello(&mut self, _clients: &[u32]) -> Result<(), TransportError> {
        Ok(())
    }

    fn sync_round(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        self.server.synchronize(uploads)
    }

    fn step_round(
        &mut self,
        acts: &[(u32, u64, Tensor<f32>, Vec<u32>)],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        let mut grads = Vec::with_capacity(acts.len());
        for (client, step, a, y) in acts {
            grads.push(self.server.handle_activation(*client, *step, a, y)?);
        }
        self.server.end_step()?;
        Ok(grads)
    }

    fn epoch_end(&mut self, epoch: u32) -> Result<(), TransportError> {
        self.server.end_epoch(epoch)
    }
}

/// The delivered message sequence of one run, replayable and serializable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.messages {
            out.extend_from_slice(&encode(m).to_bytes());
        }
        out
    }

    pub fn from_frames(frames: &[Frame]) -> Result<Self, TransportError> {
        let messages = frames
            .iter()
            .map(crate::wire::decode)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Transcript { messages })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

impl<C: ClientActor + ?Sized> ClientActor for Box<C> {
    fn id(&self) -> u32 {
        (**self).id()
    }
    fn upload_model(&self) -> Vec<Tensor<f32>> {
        (**self).upload_model()
    }
    fn download_model(&mut self, tensors: &[Tensor<f32>]) -> Result<(), TransportError> {
        (**self).download_model(tensors)
    }
    fn produce_activation(
        &mut self,
        epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), TransportError> {
        (**self).produce_activation(epoch, step)
    }
    fn apply_gradient(
        &mut self,
        epoch: u32,
        step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), TransportError> {
        (**self).apply_gradient(epoch, step, grad)
    }
}

fn par_map_clients<C: ClientActor, T: Send>(
    clients: &mut [C],
    workers: usize,
    f: &(dyn Fn(&mut C) -> Result<T, TransportError> + Sync),
) -> Result<Vec<T>, TransportError> {
    if workers <= 1 || clients.len() <= 1 {
        return clients.iter_mut().map(f).collect();
    }
    let chunk = clients.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<T, TransportError>>> =
        (0..clients.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_clients, chunk_slots) in clients.chunks_mut(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (c, slot) in chunk_clients.iter_mut().zip(chunk_slots.iter_mut()) {
                    *slot = Some(f(c));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}

/// What `bus_run` keeps of the delivered messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recording {
    Full,
    /// Deliver without keeping copies (large runs).
    Off,
}

/// Drive `epochs` x `steps_per_epoch` of the protocol over the given link.
///
/// Client forward/backward phases may run on `workers` threads; the
/// delivery order (and therefore the transcript and every result) is fixed
/// regardless. `_schedule_seed` is accepted for interface stability; the
/// schedule is fully determined by the phase structure.
pub fn bus_run<C: ClientActor>(
    link: &mut dyn ServerLink,
    clients: &mut [C],
    epochs: u32,
    steps_per_epoch: u64,
    workers: usize,
    _schedule_seed: u64,
    recording: Recording,
) -> Result<Transcript, TransportError> {
    let ids: Vec<u32> = clients.iter().map(|c| c.id()).collect();
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TransportError::Protocol(
            "clients must be ordered by strictly ascending id".into(),
        ));
    }
    let record = recording == Recording::Full;
    let mut transcript = Transcript::default();
    if record {
        for &id in &ids {
            transcript.messages.push(Message::Hello { client: id });
        }
    }
    link.hello(&ids)?;

    for epoch in 0..epochs {
        // Synchronization: uploads ascending, one averaged download.
        let uploads: Vec<Vec<Tensor<f32>>> = clients.iter().map(|c| c.upload_model()).collect();
        if record {
            for up in &uploads {
                transcript.messages.push(Message::SyncModel { tensors: up.clone() });
            }
        }
        let merged = link.sync_round(&uploads)?;
        if record {
            transcript.messages.push(Message::SyncModel { tensors: merged.clone() });
        }
        for c in clients.iter_mut() {
            c.download_model(&merged)?;
        }

        for step in 0..steps_per_epoch {
            let global_step = u64::from(epoch) * steps_per_epoch + step;
            // Client forward, in parallel; recorded ascending.
            let produced = par_map_clients(clients, workers, &|c| {
                c.produce_activation(epoch, global_step)
            })?;
            let acts: Vec<(u32, u64, Tensor<f32>, Vec<u32>)> = ids
                .iter()
                .zip(produced)
                .map(|(&id, (a, y))| (id, global_step, a, y))
                .collect();
            if record {
                for (client, step, a, y) in &acts {
                    transcript.messages.push(Message::Activation {
                        client: *client,
                        step: *step,
                        activation: a.clone(),
                        labels: y.clone(),
                    });
                }
            }
            // Server, sequential.
            let grads = link.step_round(&acts)?;
            if grads.len() != acts.len() {
                return Err(TransportError::Protocol(format!(
                    "{} gradients answer {} activations",
                    grads.len(),
                    acts.len()
                )));
            }
            for ((client, step, a, _), g) in acts.iter().zip(&grads) {
                if g.dims() != a.dims() {
                    return Err(TransportError::GradientShape {
                        activation: a.dims().to_vec(),
                        grad: g.dims().to_vec(),
                    });
                }
                if record {
                    transcript.messages.push(Message::Gradient {
                        client: *client,
                        step: *step,
                        grad: g.clone(),
                    });
                }
            }
            // Client backward, in parallel; each client picks its own reply.
            let grads_ref = &grads;
            let ids_ref = &ids;
            par_map_clients(clients, workers, &|c| {
                let pos = ids_ref.iter().position(|&id| id == c.id()).unwrap();
                c.apply_gradient(epoch, global_step, &grads_ref[pos])
            })?;
        }
        if record {
            transcript.messages.push(Message::EndEpoch { epoch });
        }
        link.epoch_end(epoch)?;
    }
    Ok(transcript)
}

/// Feed a transcript's activation stream back into a fresh server actor,
/// reproducing its parameter trajectory. Recorded gradients are checked
/// against the recomputed ones.
pub fn replay_transcript(
    server: &mut dyn ServerActor,
    transcript: &Transcript,
) -> Result<(), TransportError> {
    let mut pending_step: Option<u64> = None;
    let mut expected: Vec<Tensor<f32>> = Vec::new();
    let mut recomputed: Vec<Tensor<f32>> = Vec::new();
    let flush = |server: &mut dyn ServerActor,
                     expected: &mut Vec<Tensor<f32>>,
                     recomputed: &mut Vec<Tensor<f32>>|
     -> Result<(), TransportError> {
        if expected.len() != recomputed.len() {
            return Err(TransportError::Protocol(
                "gradient count differs from activation count".into(),
            ));
        }
        for (e, r) in expected.iter().zip(recomputed.iter()) {
            if e != r {
                return Err(TransportError::Protocol(
                    "replayed gradient differs from recorded gradient".into(),
                ));
            }
        }
        expected.clear();
        recomputed.clear();
        server.end_step()
    };
    for msg in &transcript.messages {
        match msg {
            Message::Activation { client, step, activation, labels } => {
                if pending_step.is_some_and(|s| s != *step) {
                    flush(server, &mut expected, &mut recomputed)?;
                }
                pending_step = Some(*step);
                recomputed.push(server.handle_activation(*client, *step, activation, labels)?);
            }
            Message::Gradient { grad, .. } => {
                expected.push(grad.clone());
            }
            Message::EndEpoch { epoch } => {
                if pending_step.take().is_some() {
                    flush(server, &mut expected, &mut recomputed)?;
                }
                server.end_epoch(*epoch)?;
            }
            Message::Hello { .. } | Message::SyncModel { .. } => {}
        }
    }
    if pending_step.take().is_some() {
        flush(server, &mut expected, &mut recomputed)?;
    }
    Ok(())
}
