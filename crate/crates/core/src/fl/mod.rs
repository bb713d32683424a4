//! Federated fine-tuning: parameter maps, FedAvg, the frame codec and the
//! synchronous TCP server/client.
//!
//! Protocol, per connection:
//!
//! 1. client sends `JOIN{client_id}`; the server waits for exactly `C` joins;
//! 2. for each round `r = 1..=R` the server sends `PARAMS{r, tensors}` to every
//!    client and waits for one `UPDATE{r, tensors, num_examples}` from each;
//!    the round's global model is the FedAvg of those updates;
//! 3. the server sends `DONE{tensors}` with the final model.
//!
//! Any failure aborts the whole run: the server sends `ERROR{code, detail}` to
//! every client still connected.

mod client;
mod fedavg;
mod params;
mod server;
mod task;
pub mod wire;

pub use client::{run_client, ClientConfig};
pub use fedavg::{fedavg, fedavg_with, ClientUpdate};
pub use params::{ModelParameters, Tensor};
pub use server::{run_server, RoundSummary, Server};
pub use task::{get_federated_task, FlTask};
pub use wire::{decode_frame, encode_frame, read_frame, write_frame, FlMessage, MAX_FRAME_BYTES};
