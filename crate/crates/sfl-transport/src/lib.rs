//! Message layer between clients and server: typed messages, a
//! deterministic in-process ordered bus, binary wire framing, and a TCP
//! transport speaking the identical byte format.

pub mod bus;
pub mod error;
pub mod message;
pub mod tcp;
pub mod wire;

pub use bus::{bus_run, replay_transcript, ClientActor, LocalLink, Recording, ServerActor, ServerLink, Transcript};
pub use error::TransportError;
pub use message::Message;
pub use tcp::{serve_connection, TcpLink};
pub use wire::{decode, encode, read_frame, write_frame, Frame};
