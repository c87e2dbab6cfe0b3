//! Network service exposing the state repository to remote adaptation
//! agents: framed length-prefixed messages over TCP, one endpoint per
//! operation (`InitService`, `CreateAgent`, `TransformState`,
//! `LabelSelection`, `Register`, plus `Health`).

mod client;
mod server;
mod wire;

pub use client::{Client, TransformStateResponse};
pub use server::{serve, ServiceConfig, ServiceHandle};
pub use wire::{RpcMessage, MAX_FRAME_BYTES, PROTOCOL_TAG};
