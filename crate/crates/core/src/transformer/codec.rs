//! Versioned binary form of fitted transforms (magic `EMA1`).
//!
//! Floats are stored as little-endian IEEE-754 bits, so a decode reproduces
//! the encoder's values exactly and projection with a shipped blob is
//! bit-identical to projection at the producer.

use crate::error::{Error, Result};
use crate::state_math::{KernelKind, KernelSpec, StateSample, StateSet};
use crate::transformer::regime::{Regime, RegimeModel};
use crate::transformer::tca::TransformModel;
use nalgebra::DMatrix;

pub const MAGIC: &[u8; 4] = b"EMA1";
const VERSION: u8 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::input("truncated transform blob"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::input("non-UTF-8 string in transform blob"))
    }
}

fn write_kernel(w: &mut Writer, k: &KernelSpec) {
    let KernelKind::Gaussian = k.kind;
    w.u8(0);
    w.f64(k.bandwidth);
}

fn read_kernel(r: &mut Reader) -> Result<KernelSpec> {
    match r.u8()? {
        0 => Ok(KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidth: r.f64()?,
        }),
        k => Err(Error::input(format!("unknown kernel kind {k}"))),
    }
}

fn write_transform(w: &mut Writer, t: &TransformModel) {
    write_kernel(w, &t.kernel);
    write_kernel(w, &t.latent_kernel);
    w.f64(t.mu);
    w.u32(t.latent_dims as u32);
    w.u32(t.n_source as u32);
    let n = t.n_ref();
    let d = t.reference_samples.dim();
    w.u32(n as u32);
    w.u32(d as u32);
    w.str(&t.reference_samples.env_id);
    for s in &t.reference_samples.samples {
        for &f in &s.features {
            w.f64(f);
        }
        match s.label {
            Some(l) => {
                w.u8(1);
                w.f64(l);
            }
            None => {
                w.u8(0);
                w.f64(0.0);
            }
        }
        w.f64(s.labeling_cost);
    }
    for i in 0..n {
        for j in 0..t.latent_dims {
            w.f64(t.coefficients[(i, j)]);
        }
    }
}

fn read_transform(r: &mut Reader) -> Result<TransformModel> {
    let kernel = read_kernel(r)?;
    let latent_kernel = read_kernel(r)?;
    let mu = r.f64()?;
    let latent_dims = r.u32()? as usize;
    let n_source = r.u32()? as usize;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let env_id = r.str()?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut features = Vec::with_capacity(d);
        for _ in 0..d {
            features.push(r.f64()?);
        }
        let has_label = r.u8()? == 1;
        let label_value = r.f64()?;
        let labeling_cost = r.f64()?;
        samples.push(StateSample {
            features,
            label: if has_label { Some(label_value) } else { None },
            labeling_cost,
        });
    }
    let mut coefficients = DMatrix::zeros(n, latent_dims);
    for i in 0..n {
        for j in 0..latent_dims {
            coefficients[(i, j)] = r.f64()?;
        }
    }
    Ok(TransformModel {
        reference_samples: StateSet::new(env_id, samples, kernel)?,
        coefficients,
        kernel,
        latent_kernel,
        mu,
        latent_dims,
        n_source,
    })
}

impl TransformModel {
    /// Encode as a versioned `EMA1` blob without a regime table.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.u8(0);
        write_transform(&mut w, self);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = header(bytes)?;
        match r.u8()? {
            0 => read_transform(&mut r),
            f => Err(Error::input(format!(
                "blob carries a regime table (flag {f}); decode it as a RegimeModel"
            ))),
        }
    }

    /// Line-oriented text dump for debugging.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        out.push_str("transform ema1\n");
        out.push_str(&format!(
            "kernel=gaussian bandwidth={}\n",
            self.kernel.bandwidth
        ));
        out.push_str(&format!(
            "latent_kernel=gaussian bandwidth={}\n",
            self.latent_kernel.bandwidth
        ));
        out.push_str(&format!(
            "mu={} latent_dims={} n_source={} n_ref={}\n",
            self.mu,
            self.latent_dims,
            self.n_source,
            self.n_ref()
        ));
        out.push_str("reference_samples:\n");
        out.push_str(&self.reference_samples.to_csv());
        out.push_str("coefficients:\n");
        for i in 0..self.n_ref() {
            let row: Vec<String> = (0..self.latent_dims)
                .map(|j| format!("{}", self.coefficients[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl RegimeModel {
    /// Encode as a versioned `EMA1` blob with the regime table attached.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.u8(1);
        write_transform(&mut w, &self.global);
        w.u32(self.regimes.len() as u32);
        for reg in &self.regimes {
            for &c in &reg.target_centroid {
                w.f64(c);
            }
            w.u32(reg.matched_source_regime as u32);
            w.u8(if reg.used_global_fallback { 1 } else { 0 });
            if !reg.used_global_fallback {
                write_transform(&mut w, &reg.transform);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = header(bytes)?;
        let flag = r.u8()?;
        let global = read_transform(&mut r)?;
        if flag == 0 {
            // A plain transform decodes as a single-regime model.
            let centroid = vec![0.0; global.latent_dims];
            return Ok(RegimeModel {
                regimes: vec![Regime {
                    target_centroid: centroid,
                    matched_source_regime: 0,
                    transform: global.clone(),
                    used_global_fallback: false,
                }],
                global,
            });
        }
        let count = r.u32()? as usize;
        let mut regimes = Vec::with_capacity(count);
        for _ in 0..count {
            let mut centroid = Vec::with_capacity(global.latent_dims);
            for _ in 0..global.latent_dims {
                centroid.push(r.f64()?);
            }
            let matched = r.u32()? as usize;
            let fallback = r.u8()? == 1;
            let transform = if fallback {
                global.clone()
            } else {
                read_transform(&mut r)?
            };
            regimes.push(Regime {
                target_centroid: centroid,
                matched_source_regime: matched,
                transform,
                used_global_fallback: fallback,
            });
        }
        Ok(RegimeModel { global, regimes })
    }
}

fn header(bytes: &[u8]) -> Result<Reader<'_>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::input("bad magic: not an EMA1 transform blob"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::input(format!(
            "unsupported transform blob version {version}"
        )));
    }
    Ok(r)
}
