//! Binary wire format.
//!
//! Frame layout (little-endian):
//!   length  u32  -- payload byte count, msg_type excluded
//!   msg_type u8
//!   payload  [u8; length]
//!
//! Tensors are carried as (rank u8, dims u32 x rank, data f32 x n).
//! Encoding is canonical: every message has exactly one byte sequence, and
//! decode consumes the payload fully.

use std::io::{Read, Write};

use sfl_nn::Tensor;

use crate::error::TransportError;
use crate::message::Message;

pub const TAG_HELLO: u8 = 1;
pub const TAG_SYNC_MODEL: u8 = 2;
pub const TAG_ACTIVATION: u8 = 3;
pub const TAG_GRADIENT: u8 = 4;
pub const TAG_END_EPOCH: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.msg_type);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), TransportError> {
    w.write_all(&(frame.payload.len() as u32).to_le_bytes())?;
    w.write_all(&[frame.msg_type])?;
    w.write_all(&frame.payload)?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, TransportError> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)
        .map_err(|_| TransportError::Truncated("frame header".into()))?;
    let len = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
    let msg_type = head[4];
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|_| TransportError::Truncated(format!(
            "frame payload: header promises {len} bytes"
        )))?;
    Ok(Frame { msg_type, payload })
}

// ---- payload primitives ----

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        if self.at + n > self.buf.len() {
            return Err(TransportError::Truncated(format!(
                "payload needs {n} more bytes at offset {}",
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, TransportError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), TransportError> {
        if self.at != self.buf.len() {
            return Err(TransportError::Malformed(format!(
                "{} trailing bytes after message body",
                self.buf.len() - self.at
            )));
        }
        Ok(())
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.push(t.dims().len() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_tensor(r: &mut Reader) -> Result<Tensor<f32>, TransportError> {
    let rank = r.u8()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f32()?);
    }
    Tensor::new(dims, data).map_err(|e| TransportError::Malformed(e.to_string()))
}

// ---- message codec ----

pub fn encode(msg: &Message) -> Frame {
    let mut p = Vec::new();
    let tag = match msg {
        Message::Hello { client } => {
            p.extend_from_slice(&client.to_le_bytes());
            TAG_HELLO
        }
        Message::SyncModel { tensors } => {
            p.extend_from_slice(&(tensors.len() as u16).to_le_bytes());
            for t in tensors {
                put_tensor(&mut p, t);
            }
            TAG_SYNC_MODEL
        }
        Message::Activation { client, step, activation, labels } => {
            p.extend_from_slice(&client.to_le_bytes());
            p.extend_from_slice(&step.to_le_bytes());
            put_tensor(&mut p, activation);
            p.extend_from_slice(&(labels.len() as u32).to_le_bytes());
            for &l in labels {
                p.extend_from_slice(&l.to_le_bytes());
            }
            TAG_ACTIVATION
        }
        Message::Gradient { client, step, grad } => {
            p.extend_from_slice(&client.to_le_bytes());
            p.extend_from_slice(&step.to_le_bytes());
            put_tensor(&mut p, grad);
            TAG_GRADIENT
        }
        Message::EndEpoch { epoch } => {
            p.extend_from_slice(&epoch.to_le_bytes());
            TAG_END_EPOCH
        }
    };
    Frame { msg_type: tag, payload: p }
}

pub fn decode(frame: &Frame) -> Result<Message, TransportError> {
    let mut r = Reader::new(&frame.payload);
    let msg = match frame.msg_type {
        TAG_HELLO => Message::Hello { client: r.u32()? },
        TAG_SYNC_MODEL => {
            let count = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let mut tensors = Vec::with_capacity(count);
            for _ in 0..count {
                tensors.push(get_tensor(&mut r)?);
            }
            Message::SyncModel { tensors }
        }
        TAG_ACTIVATION => {
            let client = r.u32()?;
            let step = r.u64()?;
            let activation = get_tensor(&mut r)?;
            let n = r.u32()? as usize;
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                labels.push(r.u32()?);
            }
            Message::Activation { client, step, activation, labels }
        }
        TAG_GRADIENT => Message::Gradient {
            client: r.u32()?,
            step: r.u64()?,
            grad: get_tensor(&mut r)?,
        },
        TAG_END_EPOCH => Message::EndEpoch { epoch: r.u32()? },
        tag => return Err(TransportError::UnknownTag(tag)),
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_tag_is_rejected() {
        let frame = Frame { msg_type: 0xFF, payload: vec![] };
        assert!(matches!(decode(&frame), Err(TransportError::UnknownTag(0xFF))));
    }

    #[test]
    fn short_payload_is_a_truncation_error() {
        // Header promises 5 payload bytes but only 4 follow.
        let mut bytes = 5u32.to_le_bytes().to_vec();
        bytes.push(TAG_END_EPOCH);
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            read_frame(&mut bytes.as_slice()),
            Err(TransportError::Truncated(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut frame = encode(&Message::EndEpoch { epoch: 3 });
        frame.payload.push(0);
        assert!(matches!(decode(&frame), Err(TransportError::Malformed(_))));
    }

    #[test]
    fn activation_round_trip() {
        let msg = Message::Activation {
            client: 7,
            step: 123,
            activation: Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 9.5, -3.25]).unwrap(),
            labels: vec![1, 9],
        };
        let frame = encode(&msg);
        assert_eq!(decode(&frame).unwrap(), msg);
        // Canonical: re-encoding the decoded message gives the same bytes.
        assert_eq!(encode(&decode(&frame).unwrap()).to_bytes(), frame.to_bytes());
    }
}
