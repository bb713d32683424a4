use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fl::wire::{read_frame, write_frame, FlMessage};
use crate::fl::{FlTask, ModelParameters};
use crate::rag::RagSystem;
use crate::trainers::TrainExample;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub client_id: String,
    /// How long to keep retrying the initial connection. Zero means one attempt.
    pub connect_timeout: Duration,
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            connect_timeout: Duration::ZERO,
        }
    }
}

fn connect(address: &str, timeout: Duration) -> Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(address) {
            Ok(stream) => return Ok(stream),
            Err(source) if start.elapsed() >= timeout => {
                return Err(Error::Connection {
                    address: address.to_owned(),
                    source,
                })
            }
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Joins the server at `server_address`, trains locally on every broadcast and
/// returns the final parameters, which are also loaded into `system`.
pub fn run_client(
    task: &FlTask,
    system: &mut RagSystem,
    dataset: &[TrainExample],
    server_address: &str,
    config: &ClientConfig,
) -> Result<ModelParameters> {
    let mut stream = connect(server_address, config.connect_timeout)?;
    stream.set_nodelay(true)?;
    write_frame(
        &mut stream,
        &FlMessage::Join {
            client_id: config.client_id.clone(),
        },
    )?;
    let mut expected_round = 1;
    loop {
        let msg = read_frame(&mut stream).map_err(|e| match e {
            Error::Io(source) => Error::Connection {
                address: server_address.to_owned(),
                source,
            },
            other => other,
        })?;
        match msg {
            FlMessage::Params { round, tensors } => {
                if round != expected_round {
                    let err = Error::Protocol(format!(
                        "expected params for round {expected_round}, got round {round}"
                    ));
                    let _ = write_frame(&mut stream, &FlMessage::error("protocol", err.to_string()));
                    return Err(err);
                }
                let trained = task
                    .load_parameters(system, &tensors)
                    .and_then(|()| task.train_local(system, dataset, round));
                let result = match trained {
                    Ok(r) => r,
                    Err(err) => {
                        let _ = write_frame(&mut stream, &FlMessage::error("training", err.to_string()));
                        return Err(err);
                    }
                };
                write_frame(
                    &mut stream,
                    &FlMessage::Update {
                        round,
                        tensors: task.parameters(system),
                        num_examples: result.examples_seen as u64,
                    },
                )?;
                expected_round += 1;
            }
            FlMessage::Done { tensors } => {
                task.load_parameters(system, &tensors)?;
                return Ok(tensors);
            }
            FlMessage::Error { code, detail } => return Err(Error::Remote { code, detail }),
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected {} message from server",
                    other.kind()
                )))
            }
        }
    }
}
