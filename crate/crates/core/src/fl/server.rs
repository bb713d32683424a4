use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;

use crate::error::{Error, Result};
use crate::fl::wire::{read_frame, write_frame, FlMessage};
use crate::fl::{fedavg, ClientUpdate, FlTask, ModelParameters};

/// Reported after every aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub total_examples: u64,
    pub norm: f64,
}

struct Connection {
    client_id: String,
    stream: TcpStream,
}

pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(address: &str) -> Result<Self> {
        let listener = TcpListener::bind(address).map_err(|source| Error::Bind {
            address: address.to_owned(),
            source,
        })?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Runs `rounds` rounds of synchronous FedAvg with exactly `clients`
    /// participants and returns the final global parameters.
    pub fn run(
        self,
        task: &FlTask,
        initial: ModelParameters,
        rounds: u64,
        clients: usize,
        mut on_round: impl FnMut(&RoundSummary),
    ) -> Result<ModelParameters> {
        if rounds == 0 || clients == 0 {
            return Err(Error::InvalidConfig(
                "rounds and expected clients must be at least 1".into(),
            ));
        }
        task.check_parameters(&initial)?;
        let mut conns = self.accept_clients(clients)?;
        let mut global = initial;
        for round in 1..=rounds {
            let broadcast = FlMessage::Params {
                round,
                tensors: global.clone(),
            };
            for c in conns.iter_mut() {
                if let Err(e) = write_frame(&mut c.stream, &broadcast) {
                    let err = Error::ClientDropped {
                        client_id: c.client_id.clone(),
                        reason: e.to_string(),
                    };
                    return Err(abort(&mut conns, "client_dropped", err));
                }
            }
            let replies = collect_replies(&mut conns);
            let mut updates = Vec::with_capacity(conns.len());
            for (conn, reply) in conns.iter().zip(replies) {
                match check_reply(conn, reply, round, &global) {
                    Ok(u) => updates.push(u),
                    Err((code, err)) => return Err(abort(&mut conns, code, err)),
                }
            }
            global = match fedavg(&updates) {
                Ok(p) => p,
                Err(err @ Error::ZeroExamples) => return Err(abort(&mut conns, "zero_examples", err)),
                Err(err) => return Err(abort(&mut conns, "aggregation", err)),
            };
            on_round(&RoundSummary {
                round,
                total_examples: updates.iter().map(|u| u.num_examples).sum(),
                norm: global.l2_norm(),
            });
        }
        let done = FlMessage::Done {
            tensors: global.clone(),
        };
        for c in conns.iter_mut() {
            // The model is final at this point; a client that leaves during DONE
            // only loses its own copy.
            let _ = write_frame(&mut c.stream, &done);
        }
        Ok(global)
    }

    fn accept_clients(&self, expected: usize) -> Result<Vec<Connection>> {
        let mut conns: Vec<Connection> = Vec::with_capacity(expected);
        while conns.len() < expected {
            let (mut stream, peer) = self.listener.accept()?;
            stream.set_nodelay(true)?;
            match read_frame(&mut stream) {
                Ok(FlMessage::Join { client_id }) => {
                    if conns.iter().any(|c| c.client_id == client_id) {
                        let _ = write_frame(
                            &mut stream,
                            &FlMessage::error("duplicate_client", client_id.clone()),
                        );
                        let err = Error::Protocol(format!("duplicate client id {client_id:?}"));
                        return Err(abort(&mut conns, "protocol", err));
                    }
                    conns.push(Connection { client_id, stream });
                }
                Ok(other) => {
                    let err = Error::Protocol(format!(
                        "{peer} sent {} before joining",
                        other.kind()
                    ));
                    let _ = write_frame(&mut stream, &FlMessage::error("protocol", err.to_string()));
                    return Err(abort(&mut conns, "protocol", err));
                }
                Err(e) => {
                    let err = Error::ClientDropped {
                        client_id: peer.to_string(),
                        reason: e.to_string(),
                    };
                    return Err(abort(&mut conns, "client_dropped", err));
                }
            }
        }
        Ok(conns)
    }
}

/// One reader per connection; the round barrier is the join.
fn collect_replies(conns: &mut [Connection]) -> Vec<Result<FlMessage>> {
    thread::scope(|scope| {
        let handles: Vec<_> = conns
            .iter_mut()
            .map(|c| scope.spawn(move || read_frame(&mut c.stream)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("reader thread panicked"))
            .collect()
    })
}

fn check_reply(
    conn: &Connection,
    reply: Result<FlMessage>,
    round: u64,
    global: &ModelParameters,
) -> std::result::Result<ClientUpdate, (&'static str, Error)> {
    let client_id = conn.client_id.clone();
    match reply {
        Ok(FlMessage::Update {
            round: r,
            tensors,
            num_examples,
        }) => {
            if r != round {
                return Err((
                    "round_mismatch",
                    Error::RoundMismatch {
                        expected: round,
                        actual: r,
                    },
                ));
            }
            if !tensors.same_layout(global) {
                return Err((
                    "shape_mismatch",
                    Error::ShapeMismatch(format!("update from {client_id:?} has the wrong layout")),
                ));
            }
            Ok(ClientUpdate {
                client_id,
                round,
                params: tensors,
                num_examples,
            })
        }
        Ok(FlMessage::Error { code, detail }) => Err(("client_error", Error::Remote { code, detail })),
        Ok(other) => Err((
            "protocol",
            Error::Protocol(format!("{client_id:?} sent {} instead of update", other.kind())),
        )),
        Err(e) => Err((
            "client_dropped",
            Error::ClientDropped {
                client_id,
                reason: e.to_string(),
            },
        )),
    }
}

/// Tells every connected client the run is over, then hands back `err`.
fn abort(conns: &mut [Connection], code: &str, err: Error) -> Error {
    let msg = FlMessage::error(code, err.to_string());
    for c in conns.iter_mut() {
        let _ = write_frame(&mut c.stream, &msg);
    }
    err
}

/// Binds `listen_address` and runs the server to completion.
pub fn run_server(
    task: &FlTask,
    initial: ModelParameters,
    rounds: u64,
    expected_clients: usize,
    listen_address: &str,
) -> Result<ModelParameters> {
    Server::bind(listen_address)?.run(task, initial, rounds, expected_clients, |_| {})
}
