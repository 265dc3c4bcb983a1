//! Socket transport: the same frames over a TCP stream, no reordering.
//! Running the bus through `TcpLink` against `serve_connection` yields a
//! transcript byte-identical to the in-process one.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;

use sfl_nn::Tensor;

use crate::bus::{ServerActor, ServerLink};
use crate::error::TransportError;
use crate::message::Message;
use crate::wire::{decode, encode, read_frame, write_frame};

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    pub fn connect(addr: &str) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(TcpLink { reader, writer: BufWriter::new(stream) })
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        write_frame(&mut self.writer, &encode(msg))
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        decode(&read_frame(&mut self.reader)?)
    }
}

impl ServerLink for TcpLink {
    fn hello(&mut self, clients: &[u32]) -> Result<(), TransportError> {
        for &client in clients {
            self.send(&Message::Hello { client })?;
        }
        self.writer.flush()?;
        Ok(())
    }

    fn sync_round(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        for up in uploads {
            self.send(&Message::SyncModel { tensors: up.clone() })?;
        }
        self.writer.flush()?;
        match self.recv()? {
            Message::SyncModel { tensors } => Ok(tensors),
            other => Err(TransportError::Protocol(format!(
                "expected SyncModel reply, got {other:?}"
            ))),
        }
    }

    fn step_round(
        &mut self,
        acts: &[(u32, u64, Tensor<f32>, Vec<u32>)],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        for (client, step, a, y) in acts {
            self.send(&Message::Activation {
                client: *client,
                step: *step,
                activation: a.clone(),
                labels: y.clone(),
            })?;
        }
        self.writer.flush()?;
        let mut grads = Vec::with_capacity(acts.len());
        for (client, step, ..) in acts {
            match self.recv()? {
                Message::Gradient { client: gc, step: gs, grad }
                    if gc == *client && gs == *step =>
                {
                    grads.push(grad);
                }
                other => {
                    return Err(TransportError::Protocol(format!(
                        "expected Gradient for client {client} step {step}, got {other:?}"
                    )))
                }
            }
        }
        Ok(grads)
    }

    fn epoch_end(&mut self, epoch: u32) -> Result<(), TransportError> {
        self.send(&Message::EndEpoch { epoch })?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Serve one bus run arriving on `stream`. Returns when the peer closes
/// the connection.
pub fn serve_connection(
    server: &mut dyn ServerActor,
    stream: TcpStream,
) -> Result<(), TransportError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut clients: Vec<u32> = Vec::new();
    let mut uploads: Vec<Vec<Tensor<f32>>> = Vec::new();
    let mut step_grads: Vec<Message> = Vec::new();
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(TransportError::Truncated(_)) => return Ok(()), // peer closed
            Err(e) => return Err(e),
        };
        match decode(&frame)? {
            Message::Hello { client } => clients.push(client),
            Message::SyncModel { tensors } => {
                uploads.push(tensors);
                if uploads.len() == clients.len() {
                    let merged = server.synchronize(&uploads)?;
                    uploads.clear();
                    write_frame(&mut writer, &encode(&Message::SyncModel { tensors: merged }))?;
                    writer.flush()?;
                }
            }
            Message::Activation { client, step, activation, labels } => {
                let grad = server.handle_activation(client, step, &activation, &labels)?;
                if grad.dims() != activation.dims() {
                    return Err(TransportError::GradientShape {
                        activation: activation.dims().to_vec(),
                        grad: grad.dims().to_vec(),
                    });
                }
                step_grads.push(Message::Gradient { client, step, grad });
                if step_grads.len() == clients.len() {
                    for msg in step_grads.drain(..) {
                        write_frame(&mut writer, &encode(&msg))?;
                    }
                    writer.flush()?;
                    server.end_step()?;
                }
            }
            Message::EndEpoch { epoch } => server.end_epoch(epoch)?,
            Message::Gradient { .. } => {
                return Err(TransportError::Protocol(
                    "client sent a Gradient message".into(),
                ))
            }
        }
    }
}
