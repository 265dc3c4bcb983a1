//! Wire fuzzing and bus/socket equivalence on toy actors.

use proptest::prelude::*;
use sfl_nn::Tensor;
use sfl_transport::bus::{bus_run, replay_transcript, ClientActor, LocalLink, Recording, ServerActor};
use sfl_transport::tcp::{serve_connection, TcpLink};
use sfl_transport::{decode, encode, Message, TransportError};

fn tensor_strategy() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..4, 1usize..4, proptest::collection::vec(-1e6f32..1e6, 1..=9)).prop_map(
        |(r, c, mut data)| {
            data.resize(r * c, 0.25);
            Tensor::new(vec![r, c], data).unwrap()
        },
    )
}

fn message_strategy() -> impl Strategy<Value = Message> {
    prop_oneof![
        any::<u32>().prop_map(|client| Message::Hello { client }),
        proptest::collection::vec(tensor_strategy(), 0..3)
            .prop_map(|tensors| Message::SyncModel { tensors }),
        (any::<u32>(), any::<u64>(), tensor_strategy(), proptest::collection::vec(any::<u32>(), 0..5))
            .prop_map(|(client, step, activation, labels)| Message::Activation {
                client,
                step,
                activation,
                labels
            }),
        (any::<u32>(), any::<u64>(), tensor_strategy())
            .prop_map(|(client, step, grad)| Message::Gradient { client, step, grad }),
        any::<u32>().prop_map(|epoch| Message::EndEpoch { epoch }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]
    #[test]
    fn fuzzed_messages_round_trip_bit_exactly(msg in message_strategy()) {
        let frame = encode(&msg);
        let back = decode(&frame).unwrap();
        prop_assert_eq!(&back, &msg);
        // Canonical: one byte sequence per message.
        prop_assert_eq!(encode(&back).to_bytes(), frame.to_bytes());
    }
}

// ---- toy actors ----

struct ToyClient {
    id: u32,
    state: f32,
}

impl ClientActor for ToyClient {
    fn id(&self) -> u32 {
        self.id
    }

    fn upload_model(&self) -> Vec<Tensor<f32>> {
        vec![Tensor::new(vec![1], vec![self.state]).unwrap()]
    }

    fn download_model(&mut self, tensors: &[Tensor<f32>]) -> Result<(), TransportError> {
        self.state = tensors[0].data()[0];
        Ok(())
    }

    fn produce_activation(
        &mut self,
        _epoch: u32,
        step: u64,
    ) -> Result<(Tensor<f32>, Vec<u32>), TransportError> {
        let v = self.state + self.id as f32 + step as f32 * 0.5;
        Ok((
            Tensor::new(vec![1, 2], vec![v, -v]).unwrap(),
            vec![self.id % 3],
        ))
    }

    fn apply_gradient(
        &mut self,
        _epoch: u32,
        _step: u64,
        grad: &Tensor<f32>,
    ) -> Result<(), TransportError> {
        self.state -= 0.01 * grad.data().iter().sum::<f32>();
        Ok(())
    }
}

#[derive(Clone)]
struct ToyServer {
    weight: f32,
    accum: f32,
}

impl ServerActor for ToyServer {
    fn synchronize(
        &mut self,
        uploads: &[Vec<Tensor<f32>>],
    ) -> Result<Vec<Tensor<f32>>, TransportError> {
        let mean =
            uploads.iter().map(|u| u[0].data()[0]).sum::<f32>() / uploads.len() as f32;
        Ok(vec![Tensor::new(vec![1], vec![mean]).unwrap()])
    }

    fn handle_activation(
        &mut self,
        _client: u32,
        _step: u64,
        activation: &Tensor<f32>,
        labels: &[u32],
    ) -> Result<Tensor<f32>, TransportError> {
        let scale = self.weight + labels[0] as f32;
        self.accum += activation.data().iter().sum::<f32>();
        Ok(activation.map(|v| v * scale))
    }

    fn end_step(&mut self) -> Result<(), TransportError> {
        self.weight += 0.001 * self.accum;
        self.accum = 0.0;
        Ok(())
    }

    fn end_epoch(&mut self, _epoch: u32) -> Result<(), TransportError> {
        Ok(())
    }
}

fn toy_clients() -> Vec<Box<dyn ClientActor>> {
    (0..4)
        .map(|id| Box::new(ToyClient { id, state: 0.1 * id as f32 }) as Box<dyn ClientActor>)
        .collect()
}

#[test]
fn transcript_is_invariant_to_worker_count() {
    let mut outcomes = Vec::new();
    for workers in [1usize, 3] {
        let mut server = ToyServer { weight: 0.5, accum: 0.0 };
        let mut clients = toy_clients();
        let mut link = LocalLink { server: &mut server };
        let t = bus_run(&mut link, &mut clients, 2, 3, workers, 7, Recording::Full).unwrap();
        outcomes.push((t.to_bytes(), server.weight.to_bits()));
    }
    assert_eq!(outcomes[0], outcomes[1]);
}

#[test]
fn phase_order_holds_per_step() {
    let mut server = ToyServer { weight: 0.5, accum: 0.0 };
    let mut clients = toy_clients();
    let mut link = LocalLink { server: &mut server };
    let t = bus_run(&mut link, &mut clients, 1, 2, 1, 0, Recording::Full).unwrap();
    let mut step_msgs: std::collections::BTreeMap<u64, Vec<u8>> = Default::default();
    for m in &t.messages {
        match m {
            Message::Activation { step, .. } => step_msgs.entry(*step).or_default().push(b'A'),
            Message::Gradient { step, .. } => step_msgs.entry(*step).or_default().push(b'G'),
            _ => {}
        }
    }
    for (_, seq) in step_msgs {
        assert_eq!(seq, b"AAAAGGGG");
    }
}

#[test]
fn socket_and_local_transcripts_are_byte_identical() {
    let mut local_server = ToyServer { weight: 0.5, accum: 0.0 };
    let local_transcript = {
        let mut clients = toy_clients();
        let mut link = LocalLink { server: &mut local_server };
        bus_run(&mut link, &mut clients, 2, 3, 1, 0, Recording::Full).unwrap()
    };

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut server = ToyServer { weight: 0.5, accum: 0.0 };
        let (stream, _) = listener.accept().unwrap();
        serve_connection(&mut server, stream).unwrap();
        server.weight
    });
    let socket_transcript = {
        let mut clients = toy_clients();
        let mut link = TcpLink::connect(&addr.to_string()).unwrap();
        bus_run(&mut link, &mut clients, 2, 3, 1, 0, Recording::Full).unwrap()
    };
    let remote_weight = handle.join().unwrap();

    assert_eq!(local_transcript.to_bytes(), socket_transcript.to_bytes());
    assert_eq!(remote_weight.to_bits(), local_server.weight.to_bits());
}

#[test]
fn replay_reproduces_server_state() {
    let mut server = ToyServer { weight: 0.5, accum: 0.0 };
    let transcript = {
        let mut clients = toy_clients();
        let mut link = LocalLink { server: &mut server };
        bus_run(&mut link, &mut clients, 2, 3, 1, 0, Recording::Full).unwrap()
    };
    let mut fresh = ToyServer { weight: 0.5, accum: 0.0 };
    replay_transcript(&mut fresh, &transcript).unwrap();
    assert_eq!(fresh.weight.to_bits(), server.weight.to_bits());
}
