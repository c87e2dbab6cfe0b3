//! C ABI for the model adaptation toolkit.
//!
//! Opaque handles wrap the store, fitted transforms, the service, and the
//! RPC client; every function returns an [`EmaStatus`] code and the last
//! error message is retrievable per thread. Sample sets cross the boundary
//! as CSV text in the crate's own column format (`f0,...,f{d-1},label,cost`),
//! binary blobs as pointer/length pairs.
//!
//! Memory rules: strings and byte buffers returned by this library are
//! owned by the library and must be released with [`ema_string_free`] /
//! [`ema_bytes_free`]. Handles are released with their `_close`/`_free`
//! function. Passing null where a handle or pointer is required yields
//! `EMA_STATUS_NULL_ARGUMENT`.

// Entry points null-check every pointer before dereferencing; a non-null
// but invalid pointer is undefined behavior here as in any C interface,
// which the header documents per function.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use ema_core::error::Error;
use ema_core::service::{serve, Client, ServiceConfig, ServiceHandle};
use ema_core::state_math::{dkw_sample_size, median_bandwidth, mmd, KernelSpec, StateSet};
use ema_core::store::{NewEntry, NoiseSpec, StateStore, StorePolicy};
use ema_core::transformer::{
    apply_regime_aware_to_source, fit_regime_aware, fit_source_aligner, match_source,
    RegimeModel, SourceAligner,
};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmaStatus {
    EmaStatusOk = 0,
    EmaStatusInput = 1,
    EmaStatusNotFound = 2,
    EmaStatusStore = 3,
    EmaStatusProtocol = 4,
    EmaStatusIo = 5,
    EmaStatusFit = 6,
    EmaStatusConfig = 7,
    EmaStatusNullArgument = 8,
    EmaStatusUtf8 = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).ok();
    });
}

fn status_of(err: &Error) -> EmaStatus {
    match err {
        Error::Input(_) => EmaStatus::EmaStatusInput,
        Error::NotFound(_) => EmaStatus::EmaStatusNotFound,
        Error::Store(_) => EmaStatus::EmaStatusStore,
        Error::Protocol(_) => EmaStatus::EmaStatusProtocol,
        Error::Io(_) => EmaStatus::EmaStatusIo,
        Error::Fit { .. } => EmaStatus::EmaStatusFit,
        Error::Config { .. } => EmaStatus::EmaStatusConfig,
    }
}

fn fail(err: Error) -> EmaStatus {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

/// Message for the most recent error on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ema_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, EmaStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(EmaStatus::EmaStatusNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        EmaStatus::EmaStatusUtf8
    })
}

fn export_string(s: String, out: *mut *mut c_char) -> EmaStatus {
    match CString::new(s.replace('\0', " ")) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            EmaStatus::EmaStatusOk
        }
        Err(_) => {
            set_error("string contains interior NUL");
            EmaStatus::EmaStatusInput
        }
    }
}

fn export_bytes(bytes: Vec<u8>, out: *mut *mut u8, out_len: *mut usize) -> EmaStatus {
    let boxed = bytes.into_boxed_slice();
    unsafe {
        *out_len = boxed.len();
        *out = Box::into_raw(boxed) as *mut u8;
    }
    EmaStatus::EmaStatusOk
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn ema_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Release a byte buffer returned by this library.
///
/// # Safety
/// `(ptr, len)` must be a pair returned by this library and not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn ema_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(std::slice::from_raw_parts_mut(ptr, len)));
    }
}

fn parse_samples(env_id: &str, csv: &str, bandwidth: f64) -> Result<StateSet, Error> {
    let kernel = KernelSpec::gaussian(bandwidth)?;
    StateSet::from_csv(env_id, kernel, csv)
}

// ---------------------------------------------------------------------------
// Pure math.

/// DKW subset size for a CDF deviation bound `epsilon` at confidence
/// `delta`.
#[no_mangle]
pub extern "C" fn ema_dkw_sample_size(
    epsilon: f64,
    delta: f64,
    out_size: *mut usize,
) -> EmaStatus {
    if out_size.is_null() {
        set_error("null output argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    match dkw_sample_size(epsilon, delta) {
        Ok(m) => {
            unsafe { *out_size = m };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

/// MMD between two sample sets given as CSV text, under a shared Gaussian
/// bandwidth.
#[no_mangle]
pub extern "C" fn ema_mmd(
    csv_a: *const c_char,
    csv_b: *const c_char,
    bandwidth: f64,
    out_mmd: *mut f64,
) -> EmaStatus {
    if out_mmd.is_null() {
        set_error("null output argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (a, b) = unsafe {
        match (cstr(csv_a), cstr(csv_b)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        }
    };
    let parsed = parse_samples("a", a, bandwidth)
        .and_then(|sa| parse_samples("b", b, bandwidth).map(|sb| (sa, sb)));
    match parsed.and_then(|(sa, sb)| mmd(&sa, &sb)) {
        Ok(v) => {
            unsafe { *out_mmd = v };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Store.

/// Opaque repository handle.
pub struct EmaStore {
    inner: StateStore,
}

/// Open or create a state repository rooted at `root`.
#[no_mangle]
pub extern "C" fn ema_store_open(
    root: *const c_char,
    capacity: usize,
    noise_sigma: f64,
    noise_clamp: f64,
    out_store: *mut *mut EmaStore,
) -> EmaStatus {
    if out_store.is_null() {
        set_error("null output argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let root = match unsafe { cstr(root) } {
        Ok(r) => r,
        Err(c) => return c,
    };
    let noise = match NoiseSpec::new(noise_sigma, noise_clamp) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    let policy = StorePolicy {
        capacity: capacity.max(1),
        noise,
        ..StorePolicy::default()
    };
    match StateStore::open(root, policy) {
        Ok(inner) => {
            unsafe { *out_store = Box::into_raw(Box::new(EmaStore { inner })) };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Close a store handle.
///
/// # Safety
/// `store` must have come from [`ema_store_open`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn ema_store_close(store: *mut EmaStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of entries currently held (0 for a null handle).
#[no_mangle]
pub extern "C" fn ema_store_len(store: *const EmaStore) -> usize {
    if store.is_null() {
        return 0;
    }
    unsafe { (*store).inner.len() }
}

/// Register an environment state snapshot; returns the entry key.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn ema_store_register(
    store: *mut EmaStore,
    env_id: *const c_char,
    org_tag: *const c_char,
    samples_csv: *const c_char,
    bandwidth: f64,
    model_blob: *const u8,
    model_blob_len: usize,
    accuracy: f64,
    now_days: f64,
    out_key: *mut *mut c_char,
) -> EmaStatus {
    if store.is_null() || model_blob.is_null() || out_key.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (env_id, org_tag, csv) = unsafe {
        match (cstr(env_id), cstr(org_tag), cstr(samples_csv)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(c), _, _) | (_, Err(c), _) | (_, _, Err(c)) => return c,
        }
    };
    let samples = match parse_samples(env_id, csv, bandwidth) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let blob = unsafe { std::slice::from_raw_parts(model_blob, model_blob_len) }.to_vec();
    let store = unsafe { &mut *store };
    match store.inner.register(
        NewEntry {
            env_id: env_id.to_string(),
            model_blob: blob,
            samples,
            accuracy,
            org_tag: org_tag.to_string(),
        },
        now_days,
    ) {
        Ok(key) => export_string(key, out_key),
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Transform.

/// Opaque fitted transform: regime-aware projection plus the decoders that
/// carry inputs into the matched source's space.
pub struct EmaTransform {
    model: RegimeModel,
    aligner: SourceAligner,
}

/// Match `samples_csv` against the visible store entries and fit a
/// regime-aware transform onto the best source. Outputs the transform
/// handle, the matched entry key, and the measured MMD.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn ema_transform_fit(
    store: *const EmaStore,
    org_tag: *const c_char,
    samples_csv: *const c_char,
    bandwidth: f64,
    regimes: usize,
    latent_dims: usize,
    out_transform: *mut *mut EmaTransform,
    out_matched_key: *mut *mut c_char,
    out_mmd: *mut f64,
) -> EmaStatus {
    if store.is_null() || out_transform.is_null() || out_matched_key.is_null() || out_mmd.is_null()
    {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (org, csv) = unsafe {
        match (cstr(org_tag), cstr(samples_csv)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        }
    };
    let target = match parse_samples("request", csv, bandwidth) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let store = unsafe { &(*store).inner };
    let candidates = store.candidates_for(org);
    let matched = match match_source(&target, &candidates) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let entry = store.entry(&matched.source_env_id).expect("matched entry");

    let result = (|| -> Result<EmaTransform, Error> {
        let cap = 738usize;
        let mut src = ema_core::state_math::subsample(&entry.samples, cap, 0);
        let mut tgt = ema_core::state_math::subsample(&target, cap, 1);
        let spec = KernelSpec::gaussian(median_bandwidth(&src, &tgt))?;
        src.kernel = spec;
        tgt.kernel = spec;
        let regimes = regimes.clamp(1, src.len().min(tgt.len()));
        let latent = latent_dims.clamp(1, src.len() + tgt.len());
        let model = fit_regime_aware(&src, &tgt, regimes, latent, 1.0, 0)?;
        let aligner = fit_source_aligner(&model)?;
        Ok(EmaTransform { model, aligner })
    })();
    match result {
        Ok(t) => {
            unsafe {
                *out_mmd = matched.mmd_distance;
                *out_transform = Box::into_raw(Box::new(t));
            }
            export_string(matched.source_env_id, out_matched_key)
        }
        Err(e) => fail(e),
    }
}

/// Apply a fitted transform: carry `samples_csv` into the matched source's
/// input space. Returns CSV text.
#[no_mangle]
pub extern "C" fn ema_transform_apply(
    transform: *const EmaTransform,
    samples_csv: *const c_char,
    bandwidth: f64,
    out_csv: *mut *mut c_char,
) -> EmaStatus {
    if transform.is_null() || out_csv.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let csv = match unsafe { cstr(samples_csv) } {
        Ok(c) => c,
        Err(c) => return c,
    };
    let samples = match parse_samples("request", csv, bandwidth) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let t = unsafe { &*transform };
    match apply_regime_aware_to_source(&t.model, &t.aligner, &samples) {
        Ok(mapped) => export_string(mapped.to_csv(), out_csv),
        Err(e) => fail(e),
    }
}

/// Serialize a transform to its versioned binary form.
#[no_mangle]
pub extern "C" fn ema_transform_encode(
    transform: *const EmaTransform,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> EmaStatus {
    if transform.is_null() || out_bytes.is_null() || out_len.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let t = unsafe { &*transform };
    export_bytes(t.model.to_bytes(), out_bytes, out_len)
}

/// Decode a transform from its versioned binary form.
#[no_mangle]
pub extern "C" fn ema_transform_decode(
    bytes: *const u8,
    len: usize,
    out_transform: *mut *mut EmaTransform,
) -> EmaStatus {
    if bytes.is_null() || out_transform.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let raw = unsafe { std::slice::from_raw_parts(bytes, len) };
    let model = match RegimeModel::from_bytes(raw) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match fit_source_aligner(&model) {
        Ok(aligner) => {
            unsafe { *out_transform = Box::into_raw(Box::new(EmaTransform { model, aligner })) };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Release a transform handle.
///
/// # Safety
/// `transform` must have come from this library and not be used after.
#[no_mangle]
pub unsafe extern "C" fn ema_transform_free(transform: *mut EmaTransform) {
    if !transform.is_null() {
        drop(Box::from_raw(transform));
    }
}

// ---------------------------------------------------------------------------
// Service and client.

/// Opaque running service.
pub struct EmaService {
    handle: Option<ServiceHandle>,
}

/// Start the repository service. `listen` may use port 0 to pick a free
/// port; read the bound address back with [`ema_service_addr`].
#[no_mangle]
pub extern "C" fn ema_service_start(
    listen: *const c_char,
    store_root: *const c_char,
    out_service: *mut *mut EmaService,
) -> EmaStatus {
    if out_service.is_null() {
        set_error("null output argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (listen, root) = unsafe {
        match (cstr(listen), cstr(store_root)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        }
    };
    match serve(ServiceConfig::new(listen, root)) {
        Ok(handle) => {
            unsafe {
                *out_service = Box::into_raw(Box::new(EmaService {
                    handle: Some(handle),
                }))
            };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

/// The service's bound address as `host:port`.
#[no_mangle]
pub extern "C" fn ema_service_addr(
    service: *const EmaService,
    out_addr: *mut *mut c_char,
) -> EmaStatus {
    if service.is_null() || out_addr.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let svc = unsafe { &*service };
    match &svc.handle {
        Some(h) => export_string(h.addr().to_string(), out_addr),
        None => {
            set_error("service already stopped");
            EmaStatus::EmaStatusStore
        }
    }
}

/// Stop the service, draining in-flight requests, and release the handle.
///
/// # Safety
/// `service` must have come from [`ema_service_start`] and not be used
/// after.
#[no_mangle]
pub unsafe extern "C" fn ema_service_stop(service: *mut EmaService) {
    if service.is_null() {
        return;
    }
    let mut svc = Box::from_raw(service);
    if let Some(h) = svc.handle.take() {
        h.shutdown();
    }
}

/// Opaque RPC client.
pub struct EmaClient {
    inner: Client,
}

/// Connect to a running service.
#[no_mangle]
pub extern "C" fn ema_client_connect(
    addr: *const c_char,
    out_client: *mut *mut EmaClient,
) -> EmaStatus {
    if out_client.is_null() {
        set_error("null output argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let addr = match unsafe { cstr(addr) } {
        Ok(a) => a,
        Err(c) => return c,
    };
    match Client::connect(addr) {
        Ok(inner) => {
            unsafe { *out_client = Box::into_raw(Box::new(EmaClient { inner })) };
            EmaStatus::EmaStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Register this agent under a bearer org tag.
#[no_mangle]
pub extern "C" fn ema_client_create_agent(
    client: *mut EmaClient,
    agent_id: *const c_char,
    org_tag: *const c_char,
) -> EmaStatus {
    if client.is_null() {
        set_error("null client");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (agent, org) = unsafe {
        match (cstr(agent_id), cstr(org_tag)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        }
    };
    let client = unsafe { &mut *client };
    match client.inner.create_agent(agent, org) {
        Ok(()) => EmaStatus::EmaStatusOk,
        Err(e) => fail(e),
    }
}

/// Register a model and state snapshot through the service; returns the
/// entry key.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn ema_client_register(
    client: *mut EmaClient,
    agent_id: *const c_char,
    env_id: *const c_char,
    samples_csv: *const c_char,
    bandwidth: f64,
    model_blob: *const u8,
    model_blob_len: usize,
    accuracy: f64,
    out_key: *mut *mut c_char,
) -> EmaStatus {
    if client.is_null() || model_blob.is_null() || out_key.is_null() {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (agent, env, csv) = unsafe {
        match (cstr(agent_id), cstr(env_id), cstr(samples_csv)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(c), _, _) | (_, Err(c), _) | (_, _, Err(c)) => return c,
        }
    };
    let samples = match parse_samples(env, csv, bandwidth) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let blob = unsafe { std::slice::from_raw_parts(model_blob, model_blob_len) };
    let client = unsafe { &mut *client };
    match client.inner.register(agent, env, blob, &samples, accuracy) {
        Ok(key) => export_string(key, out_key),
        Err(e) => fail(e),
    }
}

/// Ask the service to match and transform a state. On success fills the
/// matched key, the measured MMD, the transform blob (decode with
/// [`ema_transform_decode`]), the matched model blob, and the transformed
/// samples as CSV.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn ema_client_transform_state(
    client: *mut EmaClient,
    agent_id: *const c_char,
    samples_csv: *const c_char,
    bandwidth: f64,
    out_matched_key: *mut *mut c_char,
    out_mmd: *mut f64,
    out_transform_blob: *mut *mut u8,
    out_transform_len: *mut usize,
    out_model_blob: *mut *mut u8,
    out_model_len: *mut usize,
    out_transformed_csv: *mut *mut c_char,
) -> EmaStatus {
    if client.is_null()
        || out_matched_key.is_null()
        || out_mmd.is_null()
        || out_transform_blob.is_null()
        || out_transform_len.is_null()
        || out_model_blob.is_null()
        || out_model_len.is_null()
        || out_transformed_csv.is_null()
    {
        set_error("null argument");
        return EmaStatus::EmaStatusNullArgument;
    }
    let (agent, csv) = unsafe {
        match (cstr(agent_id), cstr(samples_csv)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(c), _) | (_, Err(c)) => return c,
        }
    };
    let samples = match parse_samples("request", csv, bandwidth) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let client = unsafe { &mut *client };
    match client.inner.transform_state(agent, &samples) {
        Ok(resp) => {
            unsafe { *out_mmd = resp.mmd };
            let code = export_string(resp.matched_env_id, out_matched_key);
            if code != EmaStatus::EmaStatusOk {
                return code;
            }
            export_bytes(resp.transform_blob, out_transform_blob, out_transform_len);
            export_bytes(resp.model_blob, out_model_blob, out_model_len);
            export_string(resp.transformed_samples.to_csv(), out_transformed_csv)
        }
        Err(e) => fail(e),
    }
}

/// Close a client connection.
///
/// # Safety
/// `client` must have come from [`ema_client_connect`] and not be used
/// after.
#[no_mangle]
pub unsafe extern "C" fn ema_client_close(client: *mut EmaClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}
