//! Persistent repository of environment states.
//!
//! Each entry caches a trained model blob next to a DKW-sized subset of the
//! environment's (privacy-noised) input samples and bookkeeping metadata.
//! Entries live one directory each under the store root:
//!
//! ```text
//! store/<env_id>/meta.txt      key=value, leading format tag
//! store/<env_id>/samples.csv   leading format tag, then the StateSet CSV
//! store/<env_id>/model.bin     opaque model bytes
//! store/index.txt              rebuildable cache of cluster state
//! ```
//!
//! Re-registering an env_id is a versioned overwrite: the new version lands
//! in `<env_id>@v<N>` and the old one stays on disk, invisible to lookups,
//! until eviction claims it (superseded versions go first). Crash recovery
//! is a directory scan; `index.txt` only caches the medoid clustering.
//!
//! Eviction is decay-aware LFU: access frequencies decay by `decay_factor`
//! per elapsed day, and the minimum-frequency entry is the candidate. When
//! the candidate has a near-duplicate (pairwise MMD below the similarity
//! threshold tau, the 25th percentile of stored pairwise distances), the
//! lower-accuracy member of the pair is evicted instead, keeping the better
//! model of the two.
//!
//! Concurrency contract: one writer at a time; any number of readers may
//! hold shared references between writes. The service wraps the store in a
//! reader-writer lock to enforce this.

use crate::error::{Error, Result};
use crate::state_math::{
    dkw_sample_size, median_bandwidth_features, mmd_features, subsample, KernelSpec, StateSet,
};
use crate::transformer::{kmedoids, optimal_cluster_count, CandidateState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

const META_TAG: &str = "ema-meta-v1";
const SAMPLES_TAG: &str = "# ema-samples-v1";
const INDEX_TAG: &str = "ema-index-v1";

/// Subset size used when two stored entries are compared for clustering and
/// similarity; keeps repository maintenance cheap.
const CLUSTER_REP_SIZE: usize = 128;

/// Privacy noise applied to samples at registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    /// Per-sample noise norm bound; a drawn noise vector is rescaled onto
    /// the bound whenever it exceeds it.
    pub clamp: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, clamp: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::input(format!(
                "sigma must be nonnegative, got {sigma}"
            )));
        }
        if !(clamp > 0.0) || !clamp.is_finite() {
            return Err(Error::input(format!("clamp must be positive, got {clamp}")));
        }
        Ok(NoiseSpec { sigma, clamp })
    }

    /// No noise.
    pub fn off() -> Self {
        NoiseSpec {
            sigma: 0.0,
            clamp: 1.0,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::off()
    }
}

/// Store limits and policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorePolicy {
    /// Maximum number of entries (including superseded versions).
    pub capacity: usize,
    /// Daily decay of access frequencies.
    pub decay_factor: f64,
    /// DKW parameters sizing the stored sample subset (defaults keep a few
    /// hundred samples per state).
    pub dkw_epsilon: f64,
    pub dkw_delta: f64,
    /// Noise applied to samples at registration.
    pub noise: NoiseSpec,
}

impl Default for StorePolicy {
    fn default() -> Self {
        StorePolicy {
            capacity: 512,
            decay_factor: 0.9,
            dkw_epsilon: 0.05,
            dkw_delta: 0.95,
            noise: NoiseSpec::off(),
        }
    }
}

impl StorePolicy {
    fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(Error::input("capacity must be at least 1"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::input(format!(
                "decay factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        dkw_sample_size(self.dkw_epsilon, self.dkw_delta)?;
        Ok(())
    }
}

/// One repository record.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    /// Directory key: `env_id` for version 1, `env_id@v<N>` after.
    pub key: String,
    pub env_id: String,
    pub version: u32,
    pub model_blob: Vec<u8>,
    pub samples: StateSet,
    pub accuracy: f64,
    pub decayed_freq: f64,
    /// Logical timestamps in days.
    pub last_access: f64,
    pub created: f64,
    pub org_tag: String,
    pub medoid_cluster: usize,
    /// Registration order; larger is newer.
    pub recency: u64,
    /// True when a newer version of the same env_id exists.
    pub superseded: bool,
}

/// What a caller submits for registration.
#[derive(Debug, Clone)]
pub struct NewEntry {
    pub env_id: String,
    pub model_blob: Vec<u8>,
    pub samples: StateSet,
    pub accuracy: f64,
    pub org_tag: String,
}

/// Zero-mean Gaussian noise per sample, rescaled onto the norm bound when it
/// exceeds `spec.clamp`. Deterministic per seed; `sigma = 0` returns the
/// input unchanged.
pub fn add_privacy_noise(samples: &StateSet, spec: &NoiseSpec, seed: u64) -> StateSet {
    if spec.sigma == 0.0 {
        return samples.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 {
        let u1: f64 = rng.gen_range(1e-300..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut out = samples.clone();
    for s in &mut out.samples {
        let mut eta: Vec<f64> = s.features.iter().map(|_| spec.sigma * normal()).collect();
        let norm: f64 = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > spec.clamp {
            let scale = spec.clamp / norm;
            for e in &mut eta {
                *e *= scale;
            }
        }
        for (f, e) in s.features.iter_mut().zip(&eta) {
            *f += e;
        }
    }
    out
}

/// The repository. Writes go through `&mut self`; reads are `&self`.
#[derive(Debug)]
pub struct StateStore {
    root: PathBuf,
    policy: StorePolicy,
    entries: Vec<StateEntry>,
    /// Cached pairwise MMD over representative subsets, keyed by entry key.
    distances: BTreeMap<(String, String), f64>,
    /// Keys of the current medoids.
    medoids: Vec<String>,
    next_recency: u64,
}

impl StateStore {
    /// Open or create a store rooted at `root`. Existing entries are
    /// recovered by directory scan; the index file is only a cache.
    pub fn open(root: impl Into<PathBuf>, policy: StorePolicy) -> Result<Self> {
        policy.validate()?;
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut store = StateStore {
            root,
            policy,
            entries: Vec::new(),
            distances: BTreeMap::new(),
            medoids: Vec::new(),
            next_recency: 0,
        };
        store.recover()?;
        Ok(store)
    }

    pub fn policy(&self) -> &StorePolicy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Total bytes of model blobs currently held.
    pub fn model_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.model_blob.len()).sum()
    }

    pub fn entry(&self, key: &str) -> Option<&StateEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn entries(&self) -> &[StateEntry] {
        &self.entries
    }

    /// Latest non-superseded entry for an env_id.
    pub fn latest(&self, env_id: &str) -> Option<&StateEntry> {
        self.entries
            .iter()
            .filter(|e| e.env_id == env_id && !e.superseded)
            .max_by_key(|e| e.version)
    }

    /// Entries visible under a caller tag: latest versions whose org tag
    /// matches the caller's or is `public`. Never exposes superseded
    /// versions.
    pub fn lookup_visible(&self, policy_tag: &str) -> Vec<&StateEntry> {
        self.entries
            .iter()
            .filter(|e| !e.superseded && (e.org_tag == policy_tag || e.org_tag == "public"))
            .collect()
    }

    /// Matcher view of the visible entries.
    pub fn candidates_for<'a>(&'a self, policy_tag: &str) -> Vec<CandidateState<'a>> {
        self.lookup_visible(policy_tag)
            .into_iter()
            .map(|e| CandidateState {
                env_id: &e.key,
                samples: &e.samples,
                cluster: e.medoid_cluster,
                is_medoid: self.medoids.iter().any(|m| *m == e.key),
                recency: e.recency,
            })
            .collect()
    }

    /// Register a new environment state.
    ///
    /// Applies the policy's privacy noise, restricts samples to the DKW
    /// subset size, assigns the entry to the nearest medoid cluster, and
    /// evicts while over capacity. Returns the entry key.
    pub fn register(&mut self, new: NewEntry, now: f64) -> Result<String> {
        if new.model_blob.is_empty() {
            return Err(Error::input("model blob must be nonempty"));
        }
        if new.env_id.is_empty() || new.env_id.contains(['/', '@', '\n', ',']) {
            return Err(Error::input(format!(
                "env_id must be nonempty and free of '/', '@', ',' and newlines: {:?}",
                new.env_id
            )));
        }
        let recency = self.next_recency;
        self.next_recency += 1;

        let noised = add_privacy_noise(&new.samples, &self.policy.noise, recency);
        let m = dkw_sample_size(self.policy.dkw_epsilon, self.policy.dkw_delta)?;
        let stored_samples = subsample(&noised, m, recency);

        let version = self
            .entries
            .iter()
            .filter(|e| e.env_id == new.env_id)
            .map(|e| e.version)
            .max()
            .map(|v| v + 1)
            .unwrap_or(1);
        for e in &mut self.entries {
            if e.env_id == new.env_id {
                e.superseded = true;
            }
        }
        let key = if version == 1 {
            new.env_id.clone()
        } else {
            format!("{}@v{}", new.env_id, version)
        };

        let mut entry = StateEntry {
            key: key.clone(),
            env_id: new.env_id,
            version,
            model_blob: new.model_blob,
            samples: stored_samples,
            accuracy: new.accuracy,
            decayed_freq: 1.0,
            last_access: now,
            created: now,
            org_tag: new.org_tag,
            medoid_cluster: 0,
            recency,
            superseded: false,
        };

        // Distances to existing entries feed cluster assignment, tau, and
        // later reclustering.
        for other in &self.entries {
            let d = entry_distance(&entry, other);
            self.distances.insert(pair_key(&entry.key, &other.key), d);
        }
        entry.medoid_cluster = self.nearest_medoid_cluster(&entry.key);

        self.persist_entry(&entry)?;
        // Persist superseded flags of older versions.
        let older: Vec<StateEntry> = self
            .entries
            .iter()
            .filter(|e| e.env_id == entry.env_id)
            .cloned()
            .collect();
        for e in older {
            self.persist_entry(&e)?;
        }
        self.entries.push(entry);

        while self.entries.len() > self.policy.capacity {
            self.evict(now)?;
        }
        self.maintain_clusters()?;
        self.write_index()?;
        Ok(key)
    }

    /// Record an access: decay the frequency for the elapsed time, then
    /// increment it, and stamp the access time.
    pub fn touch(&mut self, env_id: &str, now: f64) -> Result<()> {
        let decay = self.policy.decay_factor;
        let entry = self
            .entries
            .iter_mut()
            .filter(|e| e.env_id == env_id && !e.superseded)
            .max_by_key(|e| e.version)
            .ok_or_else(|| Error::NotFound(format!("no entry for env {env_id}")))?;
        let days = (now - entry.last_access).max(0.0);
        entry.decayed_freq = entry.decayed_freq * decay.powf(days) + 1.0;
        entry.last_access = now;
        let snapshot = entry.clone();
        self.persist_entry(&snapshot)?;
        Ok(())
    }

    /// Apply time decay to every entry without incrementing.
    pub fn decay_all(&mut self, now: f64) -> Result<()> {
        let decay = self.policy.decay_factor;
        for entry in &mut self.entries {
            let days = (now - entry.last_access).max(0.0);
            entry.decayed_freq *= decay.powf(days);
            entry.last_access = now;
        }
        let snapshots: Vec<StateEntry> = self.entries.clone();
        for e in snapshots {
            self.persist_entry(&e)?;
        }
        Ok(())
    }

    /// Evict one entry and return its key.
    ///
    /// Superseded versions go first. Otherwise the minimum-decayed-frequency
    /// entry is the candidate; if its nearest neighbor sits within the
    /// similarity threshold tau, the lower-accuracy member of that pair is
    /// evicted instead.
    pub fn evict(&mut self, _now: f64) -> Result<String> {
        if self.entries.is_empty() {
            return Err(Error::Store("evict on an empty store".into()));
        }
        let lfu_order = |a: &&StateEntry, b: &&StateEntry| {
            a.decayed_freq
                .partial_cmp(&b.decayed_freq)
                .unwrap()
                .then(a.created.partial_cmp(&b.created).unwrap())
                .then(a.key.cmp(&b.key))
        };
        if let Some(old) = self.entries.iter().filter(|e| e.superseded).min_by(lfu_order) {
            let key = old.key.clone();
            self.remove_entry(&key)?;
            return Ok(key);
        }

        let candidate = self
            .entries
            .iter()
            .min_by(lfu_order)
            .expect("nonempty")
            .clone();

        let mut victim = candidate.key.clone();
        if let Some(tau) = self.similarity_tau() {
            // Nearest neighbor of the candidate.
            let nearest = self
                .entries
                .iter()
                .filter(|e| e.key != candidate.key)
                .map(|e| {
                    let d = self
                        .distances
                        .get(&pair_key(&candidate.key, &e.key))
                        .copied()
                        .unwrap_or(f64::INFINITY);
                    (e, d)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.key.cmp(&b.0.key)));
            if let Some((neighbor, d)) = nearest {
                if d < tau && neighbor.accuracy < candidate.accuracy {
                    victim = neighbor.key.clone();
                }
            }
        }
        self.remove_entry(&victim)?;
        self.maintain_clusters()?;
        self.write_index()?;
        Ok(victim)
    }

    /// 25th percentile (linear interpolation) of stored pairwise distances;
    /// `None` below two entries.
    pub fn similarity_tau(&self) -> Option<f64> {
        let mut ds: Vec<f64> = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, a)| {
                self.entries[i + 1..]
                    .iter()
                    .filter_map(|b| self.distances.get(&pair_key(&a.key, &b.key)).copied())
            })
            .collect();
        if ds.is_empty() {
            return None;
        }
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 0.25 * (ds.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        Some(if lo + 1 < ds.len() {
            ds[lo] + frac * (ds[lo + 1] - ds[lo])
        } else {
            ds[lo]
        })
    }

    pub fn medoid_keys(&self) -> &[String] {
        &self.medoids
    }

    fn nearest_medoid_cluster(&self, key: &str) -> usize {
        let mut best = (0usize, f64::INFINITY);
        for (cluster, medoid) in self.medoids.iter().enumerate() {
            if medoid == key {
                return cluster;
            }
            let d = self
                .distances
                .get(&pair_key(key, medoid))
                .copied()
                .unwrap_or(f64::INFINITY);
            if d < best.1 {
                best = (cluster, d);
            }
        }
        best.0
    }

    /// Keep the clustering healthy: target K = round(sqrt(M)) clusters, and
    /// re-run K-medoids when the medoid set is stale or a cluster grows past
    /// twice the mean size.
    fn maintain_clusters(&mut self) -> Result<()> {
        let m = self.entries.len();
        if m == 0 {
            self.medoids.clear();
            return Ok(());
        }
        let k = optimal_cluster_count(m);
        let medoids_alive = self
            .medoids
            .iter()
            .all(|mk| self.entries.iter().any(|e| e.key == *mk));

        let mut needs = self.medoids.len() != k || !medoids_alive;
        if !needs {
            let mut sizes = vec![0usize; k];
            for e in &self.entries {
                if e.medoid_cluster < k {
                    sizes[e.medoid_cluster] += 1;
                } else {
                    needs = true;
                }
            }
            let mean = m as f64 / k as f64;
            if sizes.iter().any(|&s| s as f64 > 2.0 * mean) {
                needs = true;
            }
        }
        if !needs {
            return Ok(());
        }

        let keys: Vec<String> = self.entries.iter().map(|e| e.key.clone()).collect();
        let matrix: Vec<Vec<f64>> = keys
            .iter()
            .map(|a| {
                keys.iter()
                    .map(|b| {
                        if a == b {
                            0.0
                        } else {
                            self.distances
                                .get(&pair_key(a, b))
                                .copied()
                                .unwrap_or(f64::INFINITY)
                        }
                    })
                    .collect()
            })
            .collect();
        let (medoid_idx, assign) = kmedoids(&matrix, k, 0)?;
        self.medoids = medoid_idx.iter().map(|&i| keys[i].clone()).collect();
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.medoid_cluster = assign[i];
        }
        Ok(())
    }

    fn remove_entry(&mut self, key: &str) -> Result<()> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.key == key)
            .ok_or_else(|| Error::NotFound(format!("no entry {key}")))?;
        self.entries.remove(pos);
        self.distances.retain(|(a, b), _| a != key && b != key);
        let dir = self.root.join(key);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        Ok(())
    }

    fn persist_entry(&self, e: &StateEntry) -> Result<()> {
        let dir = self.root.join(&e.key);
        fs::create_dir_all(&dir)?;
        let mut meta = String::new();
        meta.push_str(META_TAG);
        meta.push('\n');
        meta.push_str(&format!("env_id={}\n", e.env_id));
        meta.push_str(&format!("version={}\n", e.version));
        meta.push_str(&format!("accuracy={}\n", e.accuracy));
        meta.push_str(&format!("decayed_freq={}\n", e.decayed_freq));
        meta.push_str(&format!("last_access={}\n", e.last_access));
        meta.push_str(&format!("created={}\n", e.created));
        meta.push_str(&format!("org_tag={}\n", e.org_tag));
        meta.push_str(&format!("medoid_cluster={}\n", e.medoid_cluster));
        meta.push_str(&format!("recency={}\n", e.recency));
        meta.push_str(&format!("superseded={}\n", e.superseded));
        meta.push_str(&format!("model_bytes={}\n", e.model_blob.len()));
        meta.push_str(&format!(
            "kernel_bandwidth={}\n",
            e.samples.kernel.bandwidth
        ));
        fs::write(dir.join("meta.txt"), meta)?;
        let mut csv = String::from(SAMPLES_TAG);
        csv.push('\n');
        csv.push_str(&e.samples.to_csv());
        fs::write(dir.join("samples.csv"), csv)?;
        fs::write(dir.join("model.bin"), &e.model_blob)?;
        Ok(())
    }

    fn write_index(&self) -> Result<()> {
        let mut out = String::from(INDEX_TAG);
        out.push('\n');
        for m in &self.medoids {
            out.push_str(&format!("medoid={m}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("entry={},{}\n", e.key, e.medoid_cluster));
        }
        fs::write(self.root.join("index.txt"), out)?;
        Ok(())
    }

    fn recover(&mut self) -> Result<()> {
        let mut loaded = Vec::new();
        for dirent in fs::read_dir(&self.root)? {
            let dirent = dirent?;
            if !dirent.file_type()?.is_dir() {
                continue;
            }
            let key = dirent.file_name().to_string_lossy().to_string();
            match self.load_entry(&key) {
                Ok(e) => loaded.push(e),
                Err(err) => {
                    return Err(Error::Store(format!(
                        "corrupt entry directory {key}: {err}"
                    )))
                }
            }
        }
        loaded.sort_by_key(|e| e.recency);
        self.next_recency = loaded.iter().map(|e| e.recency + 1).max().unwrap_or(0);
        for i in 0..loaded.len() {
            for j in (i + 1)..loaded.len() {
                let d = entry_distance(&loaded[i], &loaded[j]);
                self.distances
                    .insert(pair_key(&loaded[i].key, &loaded[j].key), d);
            }
        }
        self.entries = loaded;
        // Clustering is cache state; rebuild it rather than trusting the
        // index file.
        self.medoids.clear();
        self.maintain_clusters()?;
        if !self.entries.is_empty() {
            self.write_index()?;
        }
        Ok(())
    }

    fn load_entry(&self, key: &str) -> Result<StateEntry> {
        let dir = self.root.join(key);
        let meta_text = fs::read_to_string(dir.join("meta.txt"))?;
        let mut lines = meta_text.lines();
        if lines.next() != Some(META_TAG) {
            return Err(Error::Store(format!("{key}: bad meta format tag")));
        }
        let mut kv = BTreeMap::new();
        for line in lines {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Store(format!("{key}: missing meta key {k}")))
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| Error::Store(format!("{key}: bad meta value for {k}")))
        };
        let bandwidth = parse_f("kernel_bandwidth")?;
        let csv = fs::read_to_string(dir.join("samples.csv"))?;
        if !csv.starts_with(SAMPLES_TAG) {
            return Err(Error::Store(format!("{key}: bad samples format tag")));
        }
        let env_id = get("env_id")?.clone();
        let samples = StateSet::from_csv(env_id.clone(), KernelSpec::gaussian(bandwidth)?, &csv)?;
        let model_blob = fs::read(dir.join("model.bin"))?;
        let expected = get("model_bytes")?
            .parse::<usize>()
            .map_err(|_| Error::Store(format!("{key}: bad model_bytes")))?;
        if model_blob.len() != expected {
            return Err(Error::Store(format!(
                "{key}: model.bin is {} bytes, meta says {expected}",
                model_blob.len()
            )));
        }
        Ok(StateEntry {
            key: key.to_string(),
            env_id,
            version: get("version")?
                .parse()
                .map_err(|_| Error::Store(format!("{key}: bad version")))?,
            model_blob,
            samples,
            accuracy: parse_f("accuracy")?,
            decayed_freq: parse_f("decayed_freq")?,
            last_access: parse_f("last_access")?,
            created: parse_f("created")?,
            org_tag: get("org_tag")?.clone(),
            medoid_cluster: get("medoid_cluster")?
                .parse()
                .map_err(|_| Error::Store(format!("{key}: bad medoid_cluster")))?,
            recency: get("recency")?
                .parse()
                .map_err(|_| Error::Store(format!("{key}: bad recency")))?,
            superseded: get("superseded")? == "true",
        })
    }
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// MMD between two entries over representative subsets, with a
/// median-heuristic bandwidth over the pair's union.
fn entry_distance(a: &StateEntry, b: &StateEntry) -> f64 {
    let ra = subsample(&a.samples, CLUSTER_REP_SIZE, 0);
    let rb = subsample(&b.samples, CLUSTER_REP_SIZE, 0);
    let feats_a: Vec<&[f64]> = ra.samples.iter().map(|s| s.features.as_slice()).collect();
    let feats_b: Vec<&[f64]> = rb.samples.iter().map(|s| s.features.as_slice()).collect();
    let union: Vec<&[f64]> = feats_a.iter().chain(feats_b.iter()).copied().collect();
    let bw = median_bandwidth_features(&union);
    let spec = KernelSpec::gaussian(bw).expect("median bandwidth is positive");
    mmd_features(&feats_a, &feats_b, &spec).unwrap_or(f64::INFINITY)
}
