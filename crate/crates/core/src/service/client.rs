//! Blocking client for the repository service.

use crate::error::{Error, Result};
use crate::service::wire::RpcMessage;
use crate::state_math::{KernelSpec, StateSet};
use crate::transformer::RegimeModel;
use std::net::{TcpStream, ToSocketAddrs};

pub struct Client {
    stream: TcpStream,
    next_id: u64,
}

/// What `TransformState` returns: everything an agent needs to project
/// locally and warm-start training.
#[derive(Debug)]
pub struct TransformStateResponse {
    pub matched_env_id: String,
    pub mmd: f64,
    pub medoid_cluster: usize,
    pub comparisons: usize,
    pub transform_blob: Vec<u8>,
    pub model_blob: Vec<u8>,
    pub transformed_samples: StateSet,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client { stream, next_id: 1 })
    }

    /// Send one request and wait for its correlated response.
    pub fn call(&mut self, msg_type: &str, build: impl FnOnce(RpcMessage) -> RpcMessage) -> Result<RpcMessage> {
        let id = self.next_id;
        self.next_id += 1;
        let msg = build(RpcMessage::new(msg_type, id));
        msg.write_to(&mut self.stream)?;
        let resp = RpcMessage::read_from(&mut self.stream)?;
        if resp.request_id != id {
            return Err(Error::Protocol(format!(
                "response correlates to request {} but {} was sent",
                resp.request_id, id
            )));
        }
        if !resp.is_ok() {
            return Err(Error::Protocol(format!(
                "server error: {}",
                resp.get_opt("error").unwrap_or("unspecified")
            )));
        }
        Ok(resp)
    }

    pub fn init_service(&mut self) -> Result<RpcMessage> {
        self.call("InitService", |m| m)
    }

    pub fn create_agent(&mut self, agent_id: &str, org_tag: &str) -> Result<()> {
        self.call("CreateAgent", |m| {
            m.set("agent_id", agent_id).set("org_tag", org_tag)
        })?;
        Ok(())
    }

    pub fn transform_state(
        &mut self,
        agent_id: &str,
        target: &StateSet,
    ) -> Result<TransformStateResponse> {
        let resp = self.call("TransformState", |m| {
            m.set("agent_id", agent_id)
                .set("env_id", target.env_id.clone())
                .set("bandwidth", target.kernel.bandwidth.to_string())
                .set_bytes("samples", target.to_csv().as_bytes())
        })?;
        let bw = resp.get_f64("transformed_bandwidth")?;
        let csv = String::from_utf8(resp.get_bytes("transformed_samples")?)
            .map_err(|_| Error::Protocol("transformed samples are not UTF-8".into()))?;
        let transformed =
            StateSet::from_csv(target.env_id.clone(), KernelSpec::gaussian(bw)?, &csv)?;
        Ok(TransformStateResponse {
            matched_env_id: resp.get("matched_env_id")?.to_string(),
            mmd: resp.get_f64("mmd")?,
            medoid_cluster: resp.get_u64("medoid_cluster")? as usize,
            comparisons: resp.get_u64("comparisons")? as usize,
            transform_blob: resp.get_bytes("transform_blob")?,
            model_blob: resp.get_bytes("model_blob")?,
            transformed_samples: transformed,
        })
    }

    /// Decode the transform from a `TransformState` response for local
    /// projection.
    pub fn decode_transform(blob: &[u8]) -> Result<RegimeModel> {
        RegimeModel::from_bytes(blob)
    }

    /// Notify the service of labels acquired client-side. `rows` are CSV
    /// lines `sample_id,label,cost_paid,round`.
    pub fn label_selection(&mut self, agent_id: &str, env_id: &str, rows: &str) -> Result<usize> {
        let resp = self.call("LabelSelection", |m| {
            m.set("agent_id", agent_id)
                .set("env_id", env_id)
                .set_bytes("rows", rows.as_bytes())
        })?;
        Ok(resp.get_u64("recorded")? as usize)
    }

    pub fn register(
        &mut self,
        agent_id: &str,
        env_id: &str,
        model_blob: &[u8],
        samples: &StateSet,
        accuracy: f64,
    ) -> Result<String> {
        let resp = self.call("Register", |m| {
            m.set("agent_id", agent_id)
                .set("env_id", env_id)
                .set("accuracy", accuracy.to_string())
                .set("bandwidth", samples.kernel.bandwidth.to_string())
                .set_bytes("model_blob", model_blob)
                .set_bytes("samples", samples.to_csv().as_bytes())
        })?;
        Ok(resp.get("env_id")?.to_string())
    }

    pub fn health(&mut self) -> Result<(usize, usize)> {
        let resp = self.call("Health", |m| m)?;
        Ok((
            resp.get_u64("entries")? as usize,
            resp.get_u64("store_bytes")? as usize,
        ))
    }
}
