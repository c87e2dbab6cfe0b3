//! The repository service: accepts framed connections from adaptation
//! agents and serves source matching, transform fitting, labeling
//! bookkeeping, and state registration on top of the shared store.
//!
//! One handler thread per connection; all handlers share the store through
//! a reader-writer lock, so registrations serialize while matching and
//! lookups read consistent snapshots. Shutdown stops accepting and then
//! drains in-flight connections.

use crate::error::{Error, Result};
use crate::service::wire::RpcMessage;
use crate::state_math::{
    dkw_sample_size, median_bandwidth, subsample, KernelSpec, StateSet, DEFAULT_DKW_DELTA,
    DEFAULT_DKW_EPSILON,
};
use crate::store::{NewEntry, StateStore, StorePolicy};
use crate::transformer::{apply_regime_aware_to_source, fit_regime_aware, fit_source_aligner, match_source};
use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

/// Service configuration.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Listen address, e.g. `127.0.0.1:4650`; port 0 picks a free port.
    pub listen: String,
    pub store_root: PathBuf,
    pub policy: StorePolicy,
    /// Transform fit parameters.
    pub latent_dims: Option<usize>,
    pub mu: f64,
    pub regimes: usize,
    /// Per-side cap on fit samples.
    pub fit_sample_cap: usize,
    /// Requests with more target samples than this are rejected outright.
    pub max_target_samples: usize,
}

impl ServiceConfig {
    pub fn new(listen: impl Into<String>, store_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            listen: listen.into(),
            store_root: store_root.into(),
            policy: StorePolicy::default(),
            latent_dims: None,
            mu: crate::transformer::DEFAULT_MU,
            regimes: crate::transformer::DEFAULT_REGIMES,
            fit_sample_cap: 738,
            max_target_samples: dkw_sample_size(DEFAULT_DKW_EPSILON, DEFAULT_DKW_DELTA)
                .expect("default DKW parameters are valid"),
        }
    }
}

struct Shared {
    store: RwLock<StateStore>,
    agents: RwLock<BTreeMap<String, String>>,
    cfg: ServiceConfig,
    /// Label-selection bookkeeping, appended per notification.
    label_log: Mutex<()>,
    started_unix_days: f64,
    label_rows: AtomicU64,
}

impl Shared {
    fn now_days(&self) -> f64 {
        wall_clock_days().max(self.started_unix_days)
    }
}

fn wall_clock_days() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64() / 86_400.0)
        .unwrap_or(0.0)
}

/// A running service. Dropping the handle shuts the service down.
pub struct ServiceHandle {
    addr: std::net::SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    /// Stop accepting and drain in-flight connections.
    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Start the service. Fails fast on an unusable listen address or a corrupt
/// store root.
pub fn serve(cfg: ServiceConfig) -> Result<ServiceHandle> {
    let store = StateStore::open(&cfg.store_root, cfg.policy)
        .map_err(|e| Error::Store(format!("store startup: {e}")))?;
    let listener = TcpListener::bind(&cfg.listen)
        .map_err(|e| Error::Store(format!("bind {}: {e}", cfg.listen)))?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;

    let shared = Arc::new(Shared {
        store: RwLock::new(store),
        agents: RwLock::new(BTreeMap::new()),
        cfg,
        label_log: Mutex::new(()),
        started_unix_days: wall_clock_days(),
        label_rows: AtomicU64::new(0),
    });
    let shutdown = Arc::new(AtomicBool::new(false));

    let accept_shutdown = Arc::clone(&shutdown);
    let accept_shared = Arc::clone(&shared);
    let accept_thread = std::thread::spawn(move || {
        let mut handlers: Vec<std::thread::JoinHandle<()>> = Vec::new();
        while !accept_shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let shared = Arc::clone(&accept_shared);
                    let stop = Arc::clone(&accept_shutdown);
                    handlers.push(std::thread::spawn(move || {
                        let _ = handle_connection(stream, shared, stop);
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
            handlers.retain(|h| !h.is_finished());
        }
        // Drain: handlers poll the shutdown flag between frames, so they
        // finish any in-flight request and then exit even when their client
        // keeps the connection open.
        for h in handlers {
            let _ = h.join();
        }
    });

    Ok(ServiceHandle {
        addr,
        shutdown,
        accept_thread: Some(accept_thread),
    })
}

fn handle_connection(
    stream: TcpStream,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
) -> Result<()> {
    use std::io::Read;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 64 * 1024];
    loop {
        // Serve every complete frame already buffered.
        while buf.len() >= 4 {
            let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
            if len > crate::service::wire::MAX_FRAME_BYTES {
                let _ = RpcMessage::error_response(0, "frame too large").write_to(&mut writer);
                return Ok(());
            }
            if buf.len() < 4 + len {
                break;
            }
            let body: Vec<u8> = buf[4..4 + len].to_vec();
            buf.drain(..4 + len);
            let response = match RpcMessage::decode(&body) {
                Ok(request) => {
                    let id = request.request_id;
                    match dispatch(&request, &shared) {
                        Ok(resp) => resp,
                        Err(e) => RpcMessage::error_response(id, e.to_string()),
                    }
                }
                Err(e) => RpcMessage::error_response(0, e.to_string()),
            };
            response.write_to(&mut writer)?;
        }
        if stop.load(Ordering::SeqCst) && buf.is_empty() {
            return Ok(()); // drained and idle
        }
        match reader.read(&mut chunk) {
            Ok(0) => return Ok(()), // connection closed
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => return Ok(()),
        }
    }
}

fn dispatch(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    match req.msg_type.as_str() {
        "InitService" => handle_init(req, shared),
        "CreateAgent" => handle_create_agent(req, shared),
        "TransformState" => handle_transform_state(req, shared),
        "LabelSelection" => handle_label_selection(req, shared),
        "Register" => handle_register(req, shared),
        "Health" => handle_health(req, shared),
        other => Err(Error::Protocol(format!("unknown endpoint {other}"))),
    }
}

fn org_of(req: &RpcMessage, shared: &Shared) -> Result<String> {
    let agent_id = req.get("agent_id")?;
    shared
        .agents
        .read()
        .expect("agents lock")
        .get(agent_id)
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("unknown agent {agent_id}")))
}

fn handle_init(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let store = shared.store.read().expect("store lock");
    Ok(RpcMessage::ok_response(req.request_id)
        .set("entries", store.len().to_string())
        .set("store_bytes", store.model_bytes().to_string())
        .set(
            "max_target_samples",
            shared.cfg.max_target_samples.to_string(),
        ))
}

fn handle_create_agent(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let agent_id = req.get("agent_id")?.to_string();
    let org_tag = req.get("org_tag")?.to_string();
    if agent_id.is_empty() {
        return Err(Error::input("agent_id must be nonempty"));
    }
    shared
        .agents
        .write()
        .expect("agents lock")
        .insert(agent_id.clone(), org_tag);
    Ok(RpcMessage::ok_response(req.request_id).set("agent_id", agent_id))
}

fn parse_samples(req: &RpcMessage, field: &str) -> Result<StateSet> {
    let csv_bytes = req.get_bytes(field)?;
    let csv = String::from_utf8(csv_bytes)
        .map_err(|_| Error::Protocol(format!("field `{field}` is not UTF-8 CSV")))?;
    let bandwidth = req
        .get_opt("bandwidth")
        .map(|b| {
            b.parse::<f64>()
                .map_err(|_| Error::Protocol("bandwidth is not a number".into()))
        })
        .transpose()?
        .unwrap_or(1.0);
    let env_id = req.get_opt("env_id").unwrap_or("request").to_string();
    StateSet::from_csv(env_id, KernelSpec::gaussian(bandwidth)?, &csv)
}

fn handle_transform_state(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let org = org_of(req, shared)?;
    let target = parse_samples(req, "samples")?;
    if target.len() > shared.cfg.max_target_samples {
        return Err(Error::input(format!(
            "target has {} samples; the server accepts at most {} (DKW size). Subsample first.",
            target.len(),
            shared.cfg.max_target_samples
        )));
    }

    let store = shared.store.read().expect("store lock");
    let candidates = store.candidates_for(&org);
    if candidates.is_empty() {
        return Err(Error::NotFound("no visible repository entries".into()));
    }
    let matched = match_source(&target, &candidates)?;
    let entry = store
        .entry(&matched.source_env_id)
        .expect("matched entry exists");

    let cfg = &shared.cfg;
    let cap = cfg.fit_sample_cap;
    let mut src = subsample(&entry.samples, cap, 0);
    let mut tgt = subsample(&target, cap, 1);
    let spec = KernelSpec::gaussian(median_bandwidth(&src, &tgt))?;
    src.kernel = spec;
    tgt.kernel = spec;
    let latent_dims = cfg
        .latent_dims
        .unwrap_or(target.dim())
        .min(src.len() + tgt.len());
    let regimes = cfg.regimes.min(src.len()).min(tgt.len()).max(1);
    let rm = fit_regime_aware(&src, &tgt, regimes, latent_dims, cfg.mu, 0)?;
    // Return the dataset carried into the matched source's input space,
    // which is what the matched model consumes.
    let aligner = fit_source_aligner(&rm)?;
    let transformed = apply_regime_aware_to_source(&rm, &aligner, &target)?;

    let model_blob = entry.model_blob.clone();
    let env_id = entry.env_id.clone();
    let key = entry.key.clone();
    drop(store);
    {
        let mut store = shared.store.write().expect("store lock");
        let now = shared.now_days();
        let _ = store.touch(&env_id, now);
    }

    Ok(RpcMessage::ok_response(req.request_id)
        .set("matched_env_id", key)
        .set("mmd", matched.mmd_distance.to_string())
        .set("medoid_cluster", matched.medoid_cluster.to_string())
        .set("comparisons", matched.comparisons.to_string())
        .set_bytes("transform_blob", &rm.to_bytes())
        .set_bytes("model_blob", &model_blob)
        .set_bytes("transformed_samples", transformed.to_csv().as_bytes())
        .set("transformed_bandwidth", transformed.kernel.bandwidth.to_string()))
}

fn handle_label_selection(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let _org = org_of(req, shared)?;
    let env_id = req.get("env_id")?;
    let rows_bytes = req.get_bytes("rows")?;
    let rows = String::from_utf8(rows_bytes)
        .map_err(|_| Error::Protocol("rows must be UTF-8 CSV".into()))?;
    let count = rows.lines().filter(|l| !l.trim().is_empty()).count();

    // Append-only bookkeeping log: sample_id, label, cost_paid, round.
    let _guard = shared.label_log.lock().expect("label log lock");
    let path = shared.cfg.store_root.join("labels.csv");
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    for line in rows.lines().filter(|l| !l.trim().is_empty()) {
        writeln!(file, "{env_id},{line}")?;
    }
    shared
        .label_rows
        .fetch_add(count as u64, Ordering::Relaxed);
    Ok(RpcMessage::ok_response(req.request_id).set("recorded", count.to_string()))
}

fn handle_register(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let org = org_of(req, shared)?;
    let env_id = req.get("env_id")?.to_string();
    let model_blob = req.get_bytes("model_blob")?;
    if model_blob.is_empty() {
        return Err(Error::input("model blob must be nonempty"));
    }
    let samples = parse_samples(req, "samples")?;
    let accuracy = req.get_f64("accuracy")?;

    let mut store = shared.store.write().expect("store lock");
    let now = shared.now_days();
    let key = store.register(
        NewEntry {
            env_id,
            model_blob,
            samples,
            accuracy,
            org_tag: org,
        },
        now,
    )?;
    Ok(RpcMessage::ok_response(req.request_id).set("env_id", key))
}

fn handle_health(req: &RpcMessage, shared: &Shared) -> Result<RpcMessage> {
    let store = shared.store.read().expect("store lock");
    Ok(RpcMessage::ok_response(req.request_id)
        .set("entries", store.len().to_string())
        .set("store_bytes", store.model_bytes().to_string())
        .set(
            "label_rows",
            shared.label_rows.load(Ordering::Relaxed).to_string(),
        ))
}
