//! The orbit space `V/G` as a metric space, in chamber coordinates.
//!
//! For both matrix models a section is given by the real diagonal matrices
//! and the Weyl group is `S_n` permuting the diagonal, so `V/G` is the
//! sorted cone `a_1 >= ... >= a_n`. The quotient distance between two
//! orbits is the Euclidean distance between their sorted spectra, and the
//! unique minimal segment is the affine interpolation of the two.

use std::ops::Range;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::MatrixModel;

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// A point of the closed Weyl chamber: a non-increasing spectrum together
/// with its multiplicity partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamberPoint {
    values: Vec<f64>,
    partition: Vec<usize>,
    tol: f64,
}

impl ChamberPoint {
    /// Builds a chamber point from already sorted values. Fails if the values
    /// are not non-increasing or not finite.
    pub fn new(values: Vec<f64>, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::input("degeneracy tolerance must be non-negative"));
        }
        if values.is_empty() {
            return Err(Error::input("chamber point needs at least one coordinate"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("chamber coordinates must be finite"));
        }
        if let Some(k) = values.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::input(format!(
                "chamber coordinates must be non-increasing (a_{} = {} < a_{} = {})",
                k + 1,
                values[k],
                k + 2,
                values[k + 1]
            )));
        }
        let partition = multiplicity_partition(&values, tol);
        Ok(ChamberPoint { values, partition, tol })
    }

    /// Sorts arbitrary coordinates into the chamber (stable, non-increasing).
    pub fn from_unsorted(mut values: Vec<f64>, tol: f64) -> Result<Self> {
        values.sort_by(|a, b| b.total_cmp(a));
        ChamberPoint::new(values, tol)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_regular(&self) -> bool {
        self.partition.iter().all(|&m| m == 1)
    }

    /// Index ranges of the multiplicity blocks.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        blocks_of(&self.partition)
    }
}

/// Groups maximal runs of consecutive sorted entries whose gaps are `<= tol`.
pub fn multiplicity_partition(sorted: &[f64], tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run = 0;
    for (k, v) in sorted.iter().enumerate() {
        if k > 0 && sorted[k - 1] - v > tol {
            out.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        out.push(run);
    }
    out
}

pub(crate) fn blocks_of(partition: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    partition
        .iter()
        .map(|&m| {
            let r = start..start + m;
            start += m;
            r
        })
        .collect()
}

/// Projects a matrix to the chamber representative of its orbit.
pub fn chamber_map(a: &CMatrix, model: MatrixModel, tol: f64) -> Result<ChamberPoint> {
    model.validate(a)?;
    let values = linalg::eigvals_sorted(a, model.is_real());
    ChamberPoint::new(values, tol)
}

/// Quotient distance between two orbits.
pub fn distance(p: &ChamberPoint, q: &ChamberPoint) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    Ok(p.values
        .iter()
        .zip(&q.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalSegment {
    pub start: ChamberPoint,
    pub end: ChamberPoint,
    pub length: f64,
}

impl MinimalSegment {
    /// The point `(1 - t) start + t end`, `t` in `[0, 1]`.
    pub fn point_at(&self, t: f64) -> ChamberPoint {
        let values = self
            .start
            .values
            .iter()
            .zip(&self.end.values)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        // Convex combinations of sorted vectors stay sorted, also in floating point.
        ChamberPoint::new(values, self.start.tol).expect("minimal segment left the chamber")
    }
}

pub fn minimal_segment(p: &ChamberPoint, q: &ChamberPoint) -> Result<MinimalSegment> {
    let length = distance(p, q)?;
    Ok(MinimalSegment { start: p.clone(), end: q.clone(), length })
}

/// Isotropy type of a chamber point: its multiplicity partition.
pub fn strata_type(p: &ChamberPoint) -> Vec<usize> {
    p.partition.clone()
}

/// True if every block of `fine` lies inside a block of `coarse`.
pub fn refines(fine: &[usize], coarse: &[usize]) -> bool {
    let cuts = |p: &[usize]| -> Vec<usize> {
        p.iter()
            .scan(0, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    };
    let fine_cuts = cuts(fine);
    let coarse_cuts = cuts(coarse);
    if fine_cuts.last() != coarse_cuts.last() {
        return false;
    }
    coarse_cuts.iter().all(|c| fine_cuts.contains(c))
}

/// Checks that the isotropy of every sampled interior point of `s` is
/// contained in the isotropy of both endpoints, i.e. that its multiplicity
/// partition refines both endpoint partitions.
pub fn segment_stratum_check(s: &MinimalSegment, samples: usize) -> bool {
    let samples = samples.max(1);
    (1..=samples).all(|k| {
        let t = k as f64 / (samples + 1) as f64;
        let interior = s.point_at(t);
        refines(interior.partition(), s.start.partition())
            && refines(interior.partition(), s.end.partition())
    })
}

/// Angle between two directions at `p`, minimized over the stabilizer of `p`
/// in the Weyl group (permutations inside the multiplicity blocks).
pub fn segment_angle(p: &ChamberPoint, u: &[f64], v: &[f64], model: MatrixModel) -> Result<f64> {
    check_dim(model.n, p.dim())?;
    check_dim(p.dim(), u.len())?;
    check_dim(p.dim(), v.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::input("zero-length direction"));
    }

    let mut best = f64::INFINITY;
    for_each_block_permutation(&p.blocks(), p.dim(), &mut |perm| {
        // 2·atan2(|û - v̂|, |û + v̂|) stays accurate near 0 and π.
        let (mut d2, mut s2) = (0.0, 0.0);
        for i in 0..u.len() {
            let (a, b) = (u[i] / nu, v[perm[i]] / nv);
            d2 += (a - b) * (a - b);
            s2 += (a + b) * (a + b);
        }
        let ang = 2.0 * d2.sqrt().atan2(s2.sqrt());
        best = best.min(ang);
    });
    Ok(best)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Calls `f` with every permutation that maps each block onto itself.
pub(crate) fn for_each_block_permutation(
    blocks: &[Range<usize>],
    n: usize,
    f: &mut dyn FnMut(&[usize]),
) {
    fn rec(
        blocks: &[Range<usize>],
        perm: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]),
    ) {
        let Some((first, rest)) = blocks.split_first() else {
            f(perm);
            return;
        };
        let mut idx: Vec<usize> = first.clone().collect();
        heap_permute(&mut idx, first.len(), &mut |p| {
            for (slot, &src) in first.clone().zip(p) {
                perm[slot] = src;
            }
            rec(rest, perm, f);
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rec(blocks, &mut perm, f);
}

fn heap_permute(a: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k <= 1 {
        f(a);
        return;
    }
    for i in 0..k - 1 {
        heap_permute(a, k - 1, f);
        if k.is_multiple_of(2) {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permute(a, k - 1, f);
}
