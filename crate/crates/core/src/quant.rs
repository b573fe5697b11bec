//! Block quantization: an orthogonal transform followed by an element-wise
//! uniform scalar quantizer on `2^R` points spanning `[-U, U]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::gmm::FeatureVector;

/// Largest supported bits per feature; keeps every grid point exactly
/// representable as an `f64` index.
pub const MAX_BITS: u32 = 52;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("clip range must be positive and finite, got {0}")]
    Clip(f64),
    #[error("bits per feature must be in 1..={MAX_BITS}, got {0}")]
    Bits(u32),
    #[error("transform is not orthogonal (max deviation {0:e})")]
    NotOrthogonal(f64),
    #[error("matrix is not square and symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Quantization step for `bits` per feature over `[-clip, clip]`.
pub fn resolution(bits: u32, clip: f64) -> f64 {
    2.0 * clip / levels_minus_one(bits)
}

fn levels_minus_one(bits: u32) -> f64 {
    (2.0f64).powi(bits as i32) - 1.0
}

/// Variance of the end-to-end distortion, `Δ²/12 = U²/(3(2^R − 1)²)`.
pub fn noise_variance(bits: u32, clip: f64) -> f64 {
    clip * clip / (3.0 * levels_minus_one(bits).powi(2))
}

#[derive(Debug, Clone)]
pub struct QuantizerConfig {
    clip: f64,
    bits: u32,
    basis: DMatrix<f64>,
}

impl QuantizerConfig {
    pub fn new(clip: f64, bits: u32, basis: DMatrix<f64>) -> Result<Self, QuantError> {
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(QuantError::Clip(clip));
        }
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(QuantError::Bits(bits));
        }
        if !basis.is_square() {
            return Err(QuantError::NotSymmetric);
        }
        let d = basis.nrows();
        let deviation = (basis.transpose() * &basis - DMatrix::identity(d, d)).amax();
        if deviation > 1e-8 {
            return Err(QuantError::NotOrthogonal(deviation));
        }
        Ok(Self { clip, bits, basis })
    }

    /// Quantizer whose transform is the KLT of `sigma`.
    pub fn with_klt(clip: f64, bits: u32, sigma: &DMatrix<f64>) -> Result<Self, QuantError> {
        Self::new(clip, bits, klt_basis(sigma)?)
    }

    pub fn with_bits(&self, bits: u32) -> Result<Self, QuantError> {
        Self::new(self.clip, bits, self.basis.clone())
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn resolution(&self) -> f64 {
        resolution(self.bits, self.clip)
    }

    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.bits, self.clip)
    }
}

/// Karhunen–Loève basis of an SPD matrix: rows are eigenvectors ordered by
/// descending eigenvalue.
///
/// Within a (numerically) repeated eigenvalue the basis is made canonical by
/// Gram–Schmidt on the projections of `e₁, e₂, …` onto the eigenspace, so
/// `Σ = I` maps to the identity. Each row is signed so its first nonzero
/// entry is positive.
pub fn klt_basis(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, QuantError> {
    if !sigma.is_square() {
        return Err(QuantError::NotSymmetric);
    }
    let d = sigma.nrows();
    let scale = sigma.amax().max(1.0);
    if (sigma - sigma.transpose()).amax() > 1e-12 * scale {
        return Err(QuantError::NotSymmetric);
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let cluster_tol = 1e-10 * scale;
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && eig.eigenvalues[order[start]] - eig.eigenvalues[order[end]] <= cluster_tol {
            end += 1;
        }
        let span: Vec<DVector<f64>> = order[start..end]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        rows.extend(canonical_span(&span, d));
        start = end;
    }

    let mut basis = DMatrix::zeros(d, d);
    for (i, mut v) in rows.into_iter().enumerate() {
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        basis.set_row(i, &v.transpose());
    }
    Ok(basis)
}

fn canonical_span(span: &[DVector<f64>], d: usize) -> Vec<DVector<f64>> {
    if span.len() == 1 {
        return span.to_vec();
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(span.len());
    for j in 0..d {
        if out.len() == span.len() {
            break;
        }
        let mut v: DVector<f64> = span.iter().map(|u| u * u[j]).fold(DVector::zeros(d), |acc, p| acc + p);
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            out.push(v / n);
        }
    }
    out
}

/// Maps `v` to the grid point whose half-open cell `[u − Δ/2, u + Δ/2)`
/// contains it. Values outside the outermost cells saturate to `±U`.
pub fn scalar_quantize(v: f64, config: &QuantizerConfig) -> f64 {
    let delta = config.resolution();
    let top = levels_minus_one(config.bits);
    let index = ((v + config.clip) / delta + 0.5).floor().clamp(0.0, top);
    -config.clip + index * delta
}

/// Output of the encoder: quantized transform coefficients and the payload
/// size in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub values: DVector<f64>,
    pub bit_count: usize,
}

pub fn encode(x: &FeatureVector, config: &QuantizerConfig) -> Result<Encoded, QuantError> {
    check_dim(x.len(), config)?;
    let values = (config.basis() * x).map(|v| scalar_quantize(v, config));
    Ok(Encoded {
        values,
        bit_count: config.bits as usize * config.dim(),
    })
}

pub fn decode(xq: &DVector<f64>, config: &QuantizerConfig) -> Result<FeatureVector, QuantError> {
    check_dim(xq.len(), config)?;
    Ok(config.basis().tr_mul(xq))
}

fn check_dim(got: usize, config: &QuantizerConfig) -> Result<(), QuantError> {
    if got != config.dim() {
        return Err(QuantError::Dimension {
            expected: config.dim(),
            got,
        });
    }
    Ok(())
}
