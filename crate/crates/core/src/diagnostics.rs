//! Domain-gap measurements between real and synthetic embedding sets.
//!
//! * `frechet_gap`: Fréchet distance under a diagonal-covariance Gaussian fit,
//!   `sqrt(|mu_r - mu_s|^2 + sum_d (sigma_r,d - sigma_s,d)^2)` with population
//!   standard deviations. An approximation of the full-covariance distance that
//!   avoids matrix square roots.
//! * `nn_coverage`: fraction of real anchors that have a synthetic point within
//!   the median real nearest-neighbour distance.
//! * `project_2d`: top-two principal-component projection for plotting.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::hash::SampleId;
use crate::model::Origin;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagError {
    #[error("{what} needs at least {need} samples, got {got}")]
    TooFewSamples {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("projection needs dim >= 2, got {0}")]
    DimTooSmall(usize),
    #[error("all points are identical; principal components are undefined")]
    RankZero,
    #[error("non-finite embedding component")]
    NonFinite,
}

fn common_dim<V: AsRef<[f64]>>(sets: &[&[V]]) -> Result<usize, DiagError> {
    let mut dim = None;
    for set in sets {
        for v in set.iter() {
            let v = v.as_ref();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DiagError::NonFinite);
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(DiagError::DimMismatch {
                        expected: d,
                        found: v.len(),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(dim.unwrap_or(0))
}

/// Per-dimension mean and population standard deviation.
fn moments<V: AsRef<[f64]>>(set: &[V], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = set.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in set {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in set {
        for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

pub fn frechet_gap<V: AsRef<[f64]>>(real: &[V], syn: &[V]) -> Result<f64, DiagError> {
    for (what, set) in [("real set", real), ("synthetic set", syn)] {
        if set.len() < 2 {
            return Err(DiagError::TooFewSamples {
                what,
                need: 2,
                got: set.len(),
            });
        }
    }
    let dim = common_dim(&[real, syn])?;
    let (mu_r, sd_r) = moments(real, dim);
    let (mu_s, sd_s) = moments(syn, dim);
    let mean_term: f64 = mu_r.iter().zip(&mu_s).map(|(a, b)| (a - b) * (a - b)).sum();
    let std_term: f64 = sd_r.iter().zip(&sd_s).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((mean_term + std_term).sqrt())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn nn_coverage<V: AsRef<[f64]>>(real: &[V], syn: &[V]) -> Result<f64, DiagError> {
    if real.len() < 2 {
        return Err(DiagError::TooFewSamples {
            what: "real set",
            need: 2,
            got: real.len(),
        });
    }
    common_dim(&[real, syn])?;
    let mut nn: Vec<f64> = real
        .iter()
        .enumerate()
        .map(|(i, a)| {
            real.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| dist(a.as_ref(), b.as_ref()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    // nearest-rank median
    let radius = nn[nn.len().div_ceil(2) - 1];
    let covered = real
        .iter()
        .filter(|r| syn.iter().any(|s| dist(r.as_ref(), s.as_ref()) <= radius))
        .count();
    Ok(covered as f64 / real.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub id: SampleId,
    pub origin: Origin,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: SampleId,
    pub u: f64,
    pub v: f64,
    pub origin: Origin,
}

/// Unit vector with its largest-magnitude entry made positive.
fn fix_sign(mut w: DVector<f64>) -> DVector<f64> {
    let norm = w.norm();
    if norm > 0.0 {
        w /= norm;
    }
    let lead = w.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if lead < 0.0 {
        w = -w;
    }
    w
}

/// The two leading principal axes of `centered` (rows are samples).
fn leading_axes(centered: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let (n, d) = centered.shape();
    let top2 = |values: &DVector<f64>| {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        (order[0], order[1])
    };
    if d <= n {
        let cov = centered.transpose() * centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let (a, b) = top2(&eig.eigenvalues);
        (
            eig.eigenvectors.column(a).into_owned(),
            eig.eigenvectors.column(b).into_owned(),
        )
    } else {
        // Fewer samples than dimensions: diagonalize the Gram matrix instead
        // and map its eigenvectors back to feature space.
        let gram = centered * centered.transpose();
        let eig = SymmetricEigen::new(gram);
        let (a, b) = top2(&eig.eigenvalues);
        let back = |i: usize| centered.transpose() * eig.eigenvectors.column(i);
        (back(a), back(b))
    }
}

/// Projects onto the top two principal components. Output is in id order and
/// independent of input order.
pub fn project_2d(points: &[EmbeddedPoint]) -> Result<Vec<ProjectedPoint>, DiagError> {
    if points.len() < 3 {
        return Err(DiagError::TooFewSamples {
            what: "projection",
            need: 3,
            got: points.len(),
        });
    }
    let vecs: Vec<&[f64]> = points.iter().map(|p| p.vec.as_slice()).collect();
    let dim = common_dim(&[&vecs])?;
    if dim < 2 {
        return Err(DiagError::DimTooSmall(dim));
    }
    let mut sorted: Vec<&EmbeddedPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let n = sorted.len();
    let data = DMatrix::from_fn(n, dim, |i, j| sorted[i].vec[j]);
    let mean = data.row_mean();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    if centered.iter().all(|&x| x == 0.0) {
        return Err(DiagError::RankZero);
    }
    let (a, b) = leading_axes(&centered);
    let (a, b) = (fix_sign(a), fix_sign(b));
    let u = &centered * a;
    let v = &centered * b;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, p)| ProjectedPoint {
            id: p.id.clone(),
            u: u[i],
            v: v[i],
            origin: p.origin,
        })
        .collect())
}

fn fixed9(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    format!("{:.9}", if r == 0.0 { 0.0 } else { r })
}

/// `id,u,v,origin` CSV with nine-decimal coordinates.
pub fn projection_csv(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("id,u,v,origin\n");
    for p in points {
        let origin = match p.origin {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
        };
        writeln!(out, "{},{},{},{}", p.id, fixed9(p.u), fixed9(p.v), origin).expect("write to String");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub frechet_gap: f64,
    pub nn_coverage: f64,
    pub n_real: usize,
    pub n_syn: usize,
    pub dim: usize,
    pub frechet_method: String,
}

pub fn gap_summary(real: &[EmbeddedPoint], syn: &[EmbeddedPoint]) -> Result<GapSummary, DiagError> {
    let r: Vec<&[f64]> = real.iter().map(|p| p.vec.as_slice()).collect();
    let s: Vec<&[f64]> = syn.iter().map(|p| p.vec.as_slice()).collect();
    Ok(GapSummary {
        frechet_gap: frechet_gap(&r, &s)?,
        nn_coverage: nn_coverage(&r, &s)?,
        n_real: r.len(),
        n_syn: s.len(),
        dim: common_dim(&[&r, &s])?,
        frechet_method: "diagonal covariance, population std".into(),
    })
}
