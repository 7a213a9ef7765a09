//! Seeded k-means++ initialization followed by Lloyd iterations.
//!
//! The assignment step keeps Hamerly-style distance bounds so points whose
//! nearest centre provably cannot have changed skip the full scan. The bounds
//! only prune work; the result is the plain Lloyd fixed point.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

/// `K x D` centroid matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Array2<f64>,
}

impl Codebook {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::InvalidInput("codebook needs at least one centroid".into()));
        }
        if let Some(((row, col), _)) = vectors.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self {
            vectors: vectors.as_standard_layout().into_owned(),
        })
    }

    pub fn k(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn centroid(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Nearest centroid by squared L2 (ties go to the lowest index) and its squared distance.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let flat = self.vectors.as_slice().expect("standard layout");
        nearest_in(flat, self.dim(), x)
    }

    /// Rounds every centroid component to single precision.
    pub(crate) fn round_to_f32(&mut self) {
        self.vectors.mapv_inplace(|v| v as f32 as f64);
    }
}

/// Squared Euclidean distance with four independent accumulators.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn nearest_in(centers: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest and second-nearest centre (distances, not squared).
fn two_nearest(centers: &[f64], dim: usize, x: &[f64]) -> (usize, f64, f64) {
    let (mut a, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
    for (j, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < d1 {
            d2 = d1;
            d1 = d;
            a = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (a, d1.sqrt(), d2.sqrt())
}

/// Nearest-centroid index for every row of `points`.
pub fn kmeans_assign(cb: &Codebook, points: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    if points.ncols() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            got: points.ncols(),
        });
    }
    let points = points.as_standard_layout();
    let flat = points.as_slice().expect("standard layout");
    let dim = cb.dim().max(1);
    Ok(flat
        .par_chunks(dim)
        .map(|x| cb.nearest(x).0)
        .collect())
}

/// Diagnostics from one k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    /// Sum of squared distances to the assigned centres after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: usize,
}

pub fn kmeans_fit(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Codebook> {
    kmeans_fit_with_report(points, k, seed).map(|(cb, _)| cb)
}

/// Deterministic k-means: k-means++ seeding from `seed`, Lloyd iterations
/// until the largest centroid shift drops below [`SHIFT_TOLERANCE`] or
/// [`MAX_ITERATIONS`] is reached. Empty clusters are re-seeded from the
/// points farthest from their centres.
pub fn kmeans_fit_with_report(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
) -> Result<(Codebook, KMeansReport)> {
    let n = points.nrows();
    let dim = points.ncols();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientFrames { needed: k, got: n });
    }
    if dim == 0 {
        return Err(Error::InvalidInput("points have zero dimension".into()));
    }
    let points = points.as_standard_layout();
    let data = points.as_slice().expect("standard layout");
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i / dim,
            col: i % dim,
        });
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(data, dim, k, &mut rng);

    let mut assign = vec![0usize; n];
    let mut upper = vec![0.0f64; n];
    let mut lower = vec![0.0f64; n];
    full_scan(data, dim, &centers, &mut assign, &mut upper, &mut lower, None);

    let mut report = KMeansReport {
        inertia: Vec::new(),
        iterations: 0,
        converged: false,
        reseeded: 0,
    };
    let mut half_gap = vec![0.0f64; k];

    for iter in 0..MAX_ITERATIONS {
        if iter > 0 {
            centre_half_gaps(&centers, dim, &mut half_gap);
            // Exact distance to the current centre, then prune.
            let todo: Vec<bool> = data
                .par_chunks(dim)
                .zip(assign.par_iter())
                .zip(upper.par_iter_mut())
                .zip(lower.par_iter())
                .map(|(((x, &a), u), &l)| {
                    *u = sq_dist(x, &centers[a * dim..(a + 1) * dim]).sqrt();
                    *u >= half_gap[a].max(l)
                })
                .collect();
            full_scan(
                data,
                dim,
                &centers,
                &mut assign,
                &mut upper,
                &mut lower,
                Some(&todo),
            );
        }
        let inertia: f64 = upper.iter().map(|u| u * u).sum();
        if let Some(prev) = report.inertia.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-9) + 1e-12);
        }
        report.inertia.push(inertia);
        report.iterations = iter + 1;

        // Update step.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut new_centers = centers.clone();
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in new_centers[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&sums[j * dim..(j + 1) * dim])
            {
                *c = s * inv;
            }
        }
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| upper[b].total_cmp(&upper[a]).then(a.cmp(&b)));
            for (j, &p) in empty.iter().zip(order.iter()) {
                new_centers[j * dim..(j + 1) * dim].copy_from_slice(row(p));
            }
            report.reseeded += empty.len();
            lower.iter_mut().for_each(|l| *l = 0.0);
        }
        let shifts: Vec<f64> = (0..k)
            .map(|j| {
                sq_dist(
                    &centers[j * dim..(j + 1) * dim],
                    &new_centers[j * dim..(j + 1) * dim],
                )
                .sqrt()
            })
            .collect();
        centers = new_centers;
        let max_shift = shifts.iter().copied().fold(0.0, f64::max);
        if max_shift < SHIFT_TOLERANCE && empty.is_empty() {
            report.converged = true;
            break;
        }
        lower.iter_mut().for_each(|l| *l = (*l - max_shift).max(0.0));
    }

    let vectors = Array2::from_shape_vec((k, dim), centers)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((Codebook::new(vectors)?, report))
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut d2: Vec<f64> = data.par_chunks(dim).map(|x| sq_dist(x, row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 {
                    if target < *w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
            }
            // Guard against landing on a zero-weight tail through rounding.
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        d2.par_iter_mut()
            .zip(data.par_chunks(dim))
            .for_each(|(d, x)| *d = d.min(sq_dist(x, &c)));
        centers.extend_from_slice(&c);
    }
    centers
}

fn centre_half_gaps(centers: &[f64], dim: usize, out: &mut [f64]) {
    let k = out.len();
    out.iter_mut().for_each(|v| *v = f64::INFINITY);
    for a in 0..k {
        for b in a + 1..k {
            let d = 0.5 * sq_dist(&centers[a * dim..(a + 1) * dim], &centers[b * dim..(b + 1) * dim]).sqrt();
            if d < out[a] {
                out[a] = d;
            }
            if d < out[b] {
                out[b] = d;
            }
        }
    }
}

fn full_scan(
    data: &[f64],
    dim: usize,
    centers: &[f64],
    assign: &mut [usize],
    upper: &mut [f64],
    lower: &mut [f64],
    todo: Option<&[bool]>,
) {
    data.par_chunks(dim)
        .zip(assign.par_iter_mut())
        .zip(upper.par_iter_mut())
        .zip(lower.par_iter_mut())
        .enumerate()
        .for_each(|(i, (((x, a), u), l))| {
            if todo.is_some_and(|t| !t[i]) {
                return;
            }
            let (na, d1, d2) = two_nearest(centers, dim, x);
            *a = na;
            *u = d1;
            *l = d2;
        });
}

/// Sum of squared distances from each point to its nearest centroid.
pub fn inertia(cb: &Codebook, points: ArrayView2<'_, f64>) -> f64 {
    points
        .outer_iter()
        .map(|p| cb.nearest(p.as_slice().expect("contiguous row")).1)
        .sum()
}
