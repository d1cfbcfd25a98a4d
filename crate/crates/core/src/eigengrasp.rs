//! Principal components of a hand-posture dataset. A few coefficients over
//! the leading components stand in for the full hand joint vector.

use std::path::Path;

pub use nalgebra::DMatrix;
use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum EigengraspError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("eigengrasp dimension {m} outside 1..={d}")]
    Dimension { m: usize, d: usize },
    #[error("coefficient vector has length {got}, basis has {expected}")]
    CoefficientLength { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Joint limits and finger grouping of a hand, enough to synthesise grasps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspHand {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Flexion joint indices per finger, proximal first.
    pub fingers: Vec<Vec<usize>>,
    /// Abduction joint indices.
    pub spread: Vec<usize>,
}

impl GraspHand {
    pub fn dof(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, (lo, hi)) in q.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspMetadata {
    pub hand: String,
    pub count: usize,
    pub dof: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspDataset {
    pub hand: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// N × d, one posture per row.
    pub postures: DMatrix<f64>,
}

impl GraspDataset {
    pub fn new(hand: impl Into<String>, lower: Vec<f64>, upper: Vec<f64>, postures: DMatrix<f64>) -> Result<Self, EigengraspError> {
        let d = lower.len();
        if upper.len() != d || postures.ncols() != d {
            return Err(EigengraspError::InvalidDataset("limit and posture widths differ".into()));
        }
        if postures.nrows() < d {
            return Err(EigengraspError::InvalidDataset(format!("{} postures for {} joints", postures.nrows(), d)));
        }
        for r in 0..postures.nrows() {
            for c in 0..d {
                let v = postures[(r, c)];
                if !(v >= lower[c] && v <= upper[c]) {
                    return Err(EigengraspError::InvalidDataset(format!("row {r} joint {c} = {v} outside limits")));
                }
            }
        }
        Ok(GraspDataset { hand: hand.into(), lower, upper, postures })
    }

    pub fn dof(&self) -> usize {
        self.lower.len()
    }

    pub fn metadata(&self) -> GraspMetadata {
        GraspMetadata { hand: self.hand.clone(), count: self.postures.nrows(), dof: self.dof(), lower: self.lower.clone(), upper: self.upper.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigengraspBasis {
    pub mean: Vec<f64>,
    /// Column-major: `eigenvectors[i]` is component `i`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Cumulative explained-variance fraction for every dimension 1..=d.
    pub accumulated_ratio: Vec<f64>,
    /// Components whose eigenvalue is numerically zero.
    pub degenerate: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EigengraspBasis {
    pub fn dim(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn dof(&self) -> usize {
        self.mean.len()
    }

    /// `Σ aᵢ eᵢ`, plus the mean unless `strict`, clamped to the joint limits.
    pub fn reconstruct(&self, coeffs: &[f64], include_mean: bool) -> Result<Vec<f64>, EigengraspError> {
        let mut q = vec![0.0; self.dof()];
        self.reconstruct_into(coeffs, include_mean, &mut q)?;
        Ok(q)
    }

    pub fn reconstruct_into(&self, coeffs: &[f64], include_mean: bool, q: &mut [f64]) -> Result<(), EigengraspError> {
        if coeffs.len() != self.dim() {
            return Err(EigengraspError::CoefficientLength { expected: self.dim(), got: coeffs.len() });
        }
        for (j, v) in q.iter_mut().enumerate() {
            let base = if include_mean { self.mean[j] } else { 0.0 };
            let s: f64 = coeffs.iter().zip(&self.eigenvectors).map(|(a, e)| a * e[j]).sum();
            *v = (base + s).clamp(self.lower[j], self.upper[j]);
        }
        Ok(())
    }

    /// `Eᵀ (q − μ)`.
    pub fn project(&self, q: &[f64]) -> Vec<f64> {
        self.eigenvectors.iter().map(|e| e.iter().zip(q.iter().zip(&self.mean)).map(|(ei, (qi, mi))| ei * (qi - mi)).sum()).collect()
    }

    /// Keep only the leading `m` components.
    pub fn truncated(&self, m: usize) -> Result<Self, EigengraspError> {
        if m == 0 || m > self.dim() {
            return Err(EigengraspError::Dimension { m, d: self.dim() });
        }
        let mut b = self.clone();
        b.eigenvectors.truncate(m);
        b.eigenvalues.truncate(m);
        b.degenerate.truncate(m);
        Ok(b)
    }
}

pub fn fit_pca(data: &GraspDataset, m: usize) -> Result<EigengraspBasis, EigengraspError> {
    let d = data.dof();
    if m == 0 || m > d {
        return Err(EigengraspError::Dimension { m, d });
    }
    let x = &data.postures;
    let n = x.nrows();
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut row = DVector::<f64>::zeros(d);
    for r in 0..n {
        for c in 0..d {
            row[c] = x[(r, c)] - mean[c];
        }
        cov.ger(1.0, &row, &row, 1.0);
    }
    cov /= (n.max(2) - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    let accumulated_ratio: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 { acc / total } else { 1.0 }
        })
        .collect();
    let tiny = 1e-12 * values.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let eigenvectors: Vec<Vec<f64>> = order[..m]
        .iter()
        .map(|&i| {
            let col: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // sign: the largest-magnitude entry (first on ties) is positive
            let k = (0..d).fold(0, |best, j| if col[j].abs() > col[best].abs() { j } else { best });
            let flip = if col[k] < 0.0 { -1.0 } else { 1.0 };
            col.into_iter().map(|v| v * flip).collect()
        })
        .collect();
    Ok(EigengraspBasis {
        mean: mean.iter().copied().collect(),
        eigenvectors,
        eigenvalues: values[..m].to_vec(),
        accumulated_ratio,
        degenerate: values[..m].iter().map(|v| *v <= tiny).collect(),
        lower: data.lower.clone(),
        upper: data.upper.clone(),
    })
}

/// Coordinated-closure grasps: one global closure level, per-finger
/// deviations from it, a shared spread level, and small per-joint jitter.
pub fn synth_grasp_dataset(hand: &GraspHand, count: usize, seed: u64) -> Result<GraspDataset, EigengraspError> {
    let d = hand.dof();
    if count < d {
        return Err(EigengraspError::InvalidDataset(format!("{count} postures for {d} joints")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let finger_dev = Normal::new(0.0, 0.1).expect("valid sigma");
    let jitter = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut data = vec![0.0; count * d];
    let mut mid = vec![0.0; d];
    for (j, m) in mid.iter_mut().enumerate() {
        *m = 0.5 * (hand.lower[j] + hand.upper[j]);
    }
    for r in 0..count {
        let row = &mut data[r * d..(r + 1) * d];
        let closure: f64 = rng.random_range(0.1..0.9);
        let spread: f64 = rng.random_range(-1.0..1.0);
        row.copy_from_slice(&mid);
        for finger in &hand.fingers {
            let c = (closure + finger_dev.sample(&mut rng)).clamp(0.0, 1.0);
            for (k, &j) in finger.iter().enumerate() {
                // distal joints curl slightly less than proximal ones
                let w = 1.0 - 0.15 * k as f64;
                let range = hand.upper[j] - hand.lower[j];
                row[j] = hand.lower[j] + range * (c * w + jitter.sample(&mut rng));
            }
        }
        for &j in &hand.spread {
            let half = 0.5 * (hand.upper[j] - hand.lower[j]);
            row[j] = mid[j] + half * (0.6 * spread + jitter.sample(&mut rng));
        }
        hand.clamp(row);
    }
    GraspDataset::new(hand.name.clone(), hand.lower.clone(), hand.upper.clone(), DMatrix::from_row_slice(count, d, &data))
}

const MAGIC: &[u8; 4] = b"EGDS";

pub fn encode_egds(data: &DMatrix<f64>) -> Vec<u8> {
    let (n, d) = data.shape();
    let mut out = Vec::with_capacity(12 + 8 * n * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for r in 0..n {
        for c in 0..d {
            out.extend_from_slice(&data[(r, c)].to_le_bytes());
        }
    }
    out
}

pub fn decode_egds(bytes: &[u8]) -> Result<DMatrix<f64>, String> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err("missing EGDS header".into());
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != 8 * n * d {
        return Err(format!("expected {} payload bytes for {n}x{d}, found {}", 8 * n * d, body.len()));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(n, d, &vals))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes the matrix file and its `<path>.json` metadata sidecar.
pub fn write_dataset(path: &Path, data: &GraspDataset) -> Result<(), EigengraspError> {
    io::write_bytes(path, &encode_egds(&data.postures))?;
    io::write_json(&sidecar_path(path), &data.metadata())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<GraspDataset, EigengraspError> {
    let bytes = io::read_bytes(path)?;
    let postures = decode_egds(&bytes).map_err(|msg| IoError::Format { path: path.display().to_string(), msg })?;
    let meta: GraspMetadata = io::read_json(&sidecar_path(path))?;
    if meta.count != postures.nrows() || meta.dof != postures.ncols() {
        return Err(EigengraspError::InvalidDataset("sidecar shape does not match the matrix".into()));
    }
    GraspDataset::new(meta.hand, meta.lower, meta.upper, postures)
}
