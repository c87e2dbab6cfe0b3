//! Kernel-space transform fitting and projection.
//!
//! Given source samples S (n_s points) and target samples T (n_t points),
//! build the Gram matrix K over the union (n = n_s + n_t) and solve
//!
//! ```text
//! maximize  tr(W' K H K W)        (retain variance)
//! subject to W' (K L K + mu I) W = I    (align distributions)
//! ```
//!
//! where L_ij = v_i v_j with v_i = 1/n_s on source rows and -1/n_t on target
//! rows, and H = I - (1/n) 11' is the centering matrix. The solution is the
//! top eigenvectors of (K L K + mu I)^{-1} K H K, solved here in symmetrized
//! form B^{-1/2} (K H K) B^{-1/2} with B = K L K + mu I.
//!
//! Because L = v v', B is mu I plus a rank-one term u u' (u = K v), so
//! B^{-1/2} has the closed form (1/sqrt(mu)) (I - beta u u'); no general
//! factorization is needed and the reduction costs O(n^2) beyond the single
//! Gram-product K H K.

use crate::error::{Error, Result};
use crate::state_math::{
    gaussian_kernel, median_bandwidth_features, KernelSpec, StateSample, StateSet,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// A fitted state transformation.
///
/// `coefficients` holds the projection W (n_ref x latent_dims), columns
/// ordered by descending eigenvalue. Projection of a new point x is the
/// kernel vector of x against `reference_samples` times W, so the model is
/// self-contained: ship it and project locally.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformModel {
    /// Union sample (source rows first, then target rows) used at fit time.
    pub reference_samples: StateSet,
    /// Projection W, n_ref x latent_dims, eigencolumns in descending order.
    pub coefficients: DMatrix<f64>,
    /// Input-space kernel used to build the Gram matrix.
    pub kernel: KernelSpec,
    /// Kernel stamped onto projected output (median heuristic over the
    /// fit-time embedding), so latent sets from one model are comparable.
    pub latent_kernel: KernelSpec,
    pub mu: f64,
    pub latent_dims: usize,
    /// Number of source rows at the head of `reference_samples`.
    pub n_source: usize,
}

impl TransformModel {
    pub fn n_ref(&self) -> usize {
        self.reference_samples.len()
    }

    /// The source rows of the fit-time union.
    pub fn source_rows(&self) -> &[StateSample] {
        &self.reference_samples.samples[..self.n_source]
    }

    /// Fit the latent-to-source decoder: a ridge regression from the source
    /// rows' latent embedding back to their raw coordinates. Composed with
    /// [`project_one`], it carries a target input into the source's own
    /// input space, where the source's model and labeled data live.
    pub fn source_decoder(&self) -> Result<SourceDecoder> {
        let ns = self.n_source;
        let d = self.reference_samples.dim();
        let ld = self.latent_dims;
        if ns == 0 {
            return Err(Error::input("transform has no source rows"));
        }
        // Design matrix: latent embedding of source rows, plus intercept.
        let mut design = DMatrix::zeros(ns, ld + 1);
        let mut targets = DMatrix::zeros(ns, d);
        for (i, s) in self.source_rows().iter().enumerate() {
            let z = project_one(self, &s.features)?;
            for j in 0..ld {
                design[(i, j)] = z[j];
            }
            design[(i, ld)] = 1.0;
            for j in 0..d {
                targets[(i, j)] = s.features[j];
            }
        }
        let gram = design.transpose() * &design;
        let scale = gram.trace() / (ld + 1) as f64;
        let ridge = &gram + DMatrix::identity(ld + 1, ld + 1) * (1e-8 * scale.max(1e-12));
        let rhs = design.transpose() * targets;
        let weights = ridge
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Fit {
                reason: "decoder ridge system is singular".into(),
                diag_norm: scale,
                jitter: 1e-8,
            })?;
        Ok(SourceDecoder { weights })
    }
}

/// Maps latent coordinates into the source's raw input space.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDecoder {
    /// (latent_dims + 1) x d, last row is the intercept.
    pub weights: DMatrix<f64>,
}

impl SourceDecoder {
    pub fn decode(&self, latent: &[f64]) -> Vec<f64> {
        let ld = self.weights.nrows() - 1;
        debug_assert_eq!(latent.len(), ld);
        let d = self.weights.ncols();
        (0..d)
            .map(|j| {
                let mut acc = self.weights[(ld, j)];
                for (i, &z) in latent.iter().enumerate() {
                    acc += self.weights[(i, j)] * z;
                }
                acc
            })
            .collect()
    }
}

/// Project one point and decode it into the source's input space.
pub fn project_one_to_source(
    model: &TransformModel,
    decoder: &SourceDecoder,
    features: &[f64],
) -> Result<Vec<f64>> {
    Ok(decoder.decode(&project_one(model, features)?))
}

/// Eigensolve of the symmetrized reduction, with escalating diagonal jitter
/// if the iteration fails to converge.
fn symmetric_eigen_with_jitter(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let diag_norm = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max);
    let mut jitter = 0.0f64;
    loop {
        let mut mj = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                mj[(i, i)] += jitter;
            }
        }
        if let Some(eig) = SymmetricEigen::try_new(mj, f64::EPSILON, 0) {
            return Ok(eig);
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        if jitter > 1e-2 {
            return Err(Error::Fit {
                reason: "eigensolver did not converge".into(),
                diag_norm,
                jitter,
            });
        }
    }
}

/// Fit the transformation aligning `target` to `source`.
///
/// Both sets must share dimension and kernel, and should already be
/// subsampled to a DKW-bounded size; the Gram matrix is dense over the
/// union. `latent_dims` must not exceed the union size.
pub fn fit_transform(
    source: &StateSet,
    target: &StateSet,
    latent_dims: usize,
    mu: f64,
) -> Result<TransformModel> {
    if source.dim() != target.dim() {
        return Err(Error::input(format!(
            "source dimension {} != target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    if source.kernel != target.kernel {
        return Err(Error::input("source and target kernels differ"));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::input(format!("mu must be positive, got {mu}")));
    }
    let (ns, nt) = (source.len(), target.len());
    let n = ns + nt;
    if latent_dims == 0 || latent_dims > n {
        return Err(Error::input(format!(
            "latent_dims must lie in [1, {n}], got {latent_dims}"
        )));
    }
    let kernel = source.kernel;

    let mut union: Vec<StateSample> = Vec::with_capacity(n);
    union.extend(source.samples.iter().cloned());
    union.extend(target.samples.iter().cloned());
    let feats: Vec<&[f64]> = union.iter().map(|s| s.features.as_slice()).collect();

    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = gaussian_kernel(feats[i], feats[j], &kernel)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }

    // u = K v, where v carries the MMD coefficients.
    let v = DVector::from_fn(n, |i, _| {
        if i < ns {
            1.0 / ns as f64
        } else {
            -1.0 / nt as f64
        }
    });
    let u = &k * &v;

    // C = K H K = G' G with G the column-centered Gram matrix.
    let col_means = k.row_mean();
    let mut g = k.clone();
    for j in 0..n {
        let m = col_means[j];
        for i in 0..n {
            g[(i, j)] -= m;
        }
    }
    let c = g.transpose() * &g;

    // B^{-1/2} = (1/sqrt(mu)) (I - beta u u'), beta = (1 - sqrt(mu/(mu+s)))/s.
    let s = u.dot(&u);
    let beta = if s > 1e-300 {
        (1.0 - (mu / (mu + s)).sqrt()) / s
    } else {
        0.0
    };

    // M = B^{-1/2} C B^{-1/2}, expanded so only O(n^2) work remains.
    let w_vec = &c * &u;
    let alpha = u.dot(&w_vec);
    let mut m = c.clone();
    if beta != 0.0 {
        let corr = &u * w_vec.transpose();
        m -= (&corr + corr.transpose()) * beta;
        m += (&u * u.transpose()) * (beta * beta * alpha);
    }
    m /= mu;
    let m = (&m + m.transpose()) * 0.5;

    let eig = symmetric_eigen_with_jitter(m)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    // W = B^{-1/2} Q_top, one eigencolumn at a time, sign-normalized so the
    // entry of largest magnitude is positive.
    let mut w = DMatrix::zeros(n, latent_dims);
    let inv_sqrt_mu = 1.0 / mu.sqrt();
    for (col, &ei) in order.iter().take(latent_dims).enumerate() {
        let q = eig.eigenvectors.column(ei);
        let mut wcol = DVector::from_column_slice(q.as_slice());
        if beta != 0.0 {
            let uq = u.dot(&q);
            wcol -= &u * (beta * uq);
        }
        wcol *= inv_sqrt_mu;
        let mut max_abs = 0.0;
        let mut max_sign = 1.0;
        for &x in wcol.iter() {
            if x.abs() > max_abs {
                max_abs = x.abs();
                max_sign = if x >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        if max_sign < 0.0 {
            wcol.neg_mut();
        }
        w.set_column(col, &wcol);
    }

    // Latent kernel: median heuristic over the fit-time embedding K W.
    let z = &k * &w;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| z.row(i).iter().copied().collect())
        .collect();
    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let latent_kernel = KernelSpec::gaussian(median_bandwidth_features(&row_refs))?;

    let reference_samples = StateSet::new(
        format!("{}+{}", source.env_id, target.env_id),
        union,
        kernel,
    )?;
    Ok(TransformModel {
        reference_samples,
        coefficients: w,
        kernel,
        latent_kernel,
        mu,
        latent_dims,
        n_source: ns,
    })
}

/// Project one point: kernel vector against the references times W.
pub fn project_one(model: &TransformModel, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != model.reference_samples.dim() {
        return Err(Error::input(format!(
            "sample dimension {} != reference dimension {}",
            features.len(),
            model.reference_samples.dim()
        )));
    }
    let n = model.n_ref();
    let mut kvec = DVector::zeros(n);
    for (i, r) in model.reference_samples.samples.iter().enumerate() {
        kvec[i] = gaussian_kernel(features, &r.features, &model.kernel)?;
    }
    let z = model.coefficients.transpose() * kvec;
    Ok(z.iter().copied().collect())
}

/// Project a whole set into latent space. Labels and costs carry over; the
/// output is stamped with the model's latent kernel.
pub fn project(model: &TransformModel, samples: &StateSet) -> Result<StateSet> {
    let projected = samples
        .samples
        .iter()
        .map(|s| {
            Ok(StateSample {
                features: project_one(model, &s.features)?,
                label: s.label,
                labeling_cost: s.labeling_cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StateSet::new(samples.env_id.clone(), projected, model.latent_kernel)
}
