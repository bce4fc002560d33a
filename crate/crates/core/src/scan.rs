//! Token scan orders over `T×H×W` grids.
//!
//! A scan maps every grid coordinate `(t, y, x)` to a position in a 1-D
//! sequence. Rotary-major scan (RMS) cycles through four raster orders with
//! period 4 in the layer index:
//!
//! | `l mod 4` | order                 | position                   |
//! |-----------|-----------------------|----------------------------|
//! | 0         | spatial row-major     | `t·H·W + y·W + x`          |
//! | 1         | spatial column-major  | `t·H·W + x·H + y`          |
//! | 2         | temporal row-major    | `y·T·W + x·T + t`          |
//! | 3         | temporal column-major | `x·T·H + y·T + t`          |
//!
//! Every scan also has a flipped twin that visits the sequence backwards;
//! position `p` becomes `N − 1 − p`.
//!
//! The zigzag family uses the same four axis orders but reverses the
//! direction of every other line (boustrophedon), so consecutive positions
//! are always grid neighbours.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Shape3, TokenSeq, TokenTensor};

/// Grid axis, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    T = 0,
    Y = 1,
    X = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::T, Axis::Y, Axis::X];

    pub fn name(self) -> &'static str {
        match self {
            Axis::T => "t",
            Axis::Y => "y",
            Axis::X => "x",
        }
    }
}

/// One of the four axis nestings used by RMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MajorOrder {
    SpatialRow,
    SpatialColumn,
    TemporalRow,
    TemporalColumn,
}

impl MajorOrder {
    pub fn from_layer(layer: usize) -> Self {
        match layer % 4 {
            0 => MajorOrder::SpatialRow,
            1 => MajorOrder::SpatialColumn,
            2 => MajorOrder::TemporalRow,
            _ => MajorOrder::TemporalColumn,
        }
    }

    /// Axes from slowest to fastest varying.
    pub fn nesting(self) -> [Axis; 3] {
        match self {
            MajorOrder::SpatialRow => [Axis::T, Axis::Y, Axis::X],
            MajorOrder::SpatialColumn => [Axis::T, Axis::X, Axis::Y],
            MajorOrder::TemporalRow => [Axis::Y, Axis::X, Axis::T],
            MajorOrder::TemporalColumn => [Axis::X, Axis::Y, Axis::T],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVariant {
    /// Plain nested loops.
    Raster(MajorOrder),
    /// Nested loops with every other line reversed.
    Zigzag(MajorOrder),
}

impl ScanVariant {
    pub fn order(self) -> MajorOrder {
        match self {
            ScanVariant::Raster(o) | ScanVariant::Zigzag(o) => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Flipped,
}

/// The scan used by one layer in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanSchedule {
    pub layer_index: usize,
    pub variant: ScanVariant,
    pub direction: Direction,
}

impl ScanSchedule {
    /// Rotary-major schedule for `layer`.
    pub fn rms(layer: usize, direction: Direction) -> Self {
        ScanFamily::Rms.schedule(layer, direction)
    }

    pub fn flipped(self) -> Self {
        let direction = match self.direction {
            Direction::Forward => Direction::Flipped,
            Direction::Flipped => Direction::Forward,
        };
        ScanSchedule { direction, ..self }
    }
}

/// A rule assigning a scan variant to every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanFamily {
    /// Spatial row-major in every layer.
    RowMajor,
    /// Rotary-major scan.
    Rms,
    /// Boustrophedon scans rotated like RMS.
    Zigzag,
}

impl ScanFamily {
    pub fn schedule(self, layer: usize, direction: Direction) -> ScanSchedule {
        let variant = match self {
            ScanFamily::RowMajor => ScanVariant::Raster(MajorOrder::SpatialRow),
            ScanFamily::Rms => ScanVariant::Raster(MajorOrder::from_layer(layer)),
            ScanFamily::Zigzag => ScanVariant::Zigzag(MajorOrder::from_layer(layer)),
        };
        ScanSchedule {
            layer_index: layer,
            variant,
            direction,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScanFamily::RowMajor => "rowmajor",
            ScanFamily::Rms => "rms",
            ScanFamily::Zigzag => "zigzag",
        }
    }
}

impl core::str::FromStr for ScanFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rowmajor" | "row-major" => Ok(ScanFamily::RowMajor),
            "rms" => Ok(ScanFamily::Rms),
            "zigzag" => Ok(ScanFamily::Zigzag),
            other => Err(Error::domain(format!("unknown scan family `{other}`"))),
        }
    }
}

fn check_coord(shape: Shape3, coord: (usize, usize, usize)) -> Result<()> {
    if !shape.contains(coord) {
        return Err(Error::domain(format!(
            "coordinate {coord:?} outside shape {shape}"
        )));
    }
    Ok(())
}

/// Sequence position of `coord` under the rotary-major scan of `layer`
/// (forward direction).
pub fn rms_index(shape: Shape3, layer: usize, coord: (usize, usize, usize)) -> Result<usize> {
    check_coord(shape, coord)?;
    let (t, y, x) = coord;
    let Shape3 {
        t_len,
        h_len,
        w_len,
    } = shape;
    Ok(match layer % 4 {
        0 => t * (h_len * w_len) + y * w_len + x,
        1 => t * (h_len * w_len) + x * h_len + y,
        2 => y * (t_len * w_len) + x * t_len + t,
        _ => x * (t_len * h_len) + y * t_len + t,
    })
}

/// Sequence position of `coord` under an arbitrary schedule.
pub fn scan_position(
    shape: Shape3,
    schedule: ScanSchedule,
    coord: (usize, usize, usize),
) -> Result<usize> {
    check_coord(shape, coord)?;
    Ok(position_unchecked(shape, schedule, coord))
}

#[inline]
fn position_unchecked(shape: Shape3, schedule: ScanSchedule, coord: (usize, usize, usize)) -> usize {
    let c = [coord.0, coord.1, coord.2];
    let len = shape.dims();
    let [o, m, i] = schedule.variant.order().nesting().map(|a| a as usize);
    let pos = match schedule.variant {
        ScanVariant::Raster(_) => (c[o] * len[m] + c[m]) * len[i] + c[i],
        ScanVariant::Zigzag(_) => {
            let m_pos = if c[o].is_multiple_of(2) { c[m] } else { len[m] - 1 - c[m] };
            let line = c[o] * len[m] + m_pos;
            let i_pos = if line.is_multiple_of(2) { c[i] } else { len[i] - 1 - c[i] };
            line * len[i] + i_pos
        }
    };
    match schedule.direction {
        Direction::Forward => pos,
        Direction::Flipped => shape.n_tokens() - 1 - pos,
    }
}

/// An explicit bijection between grid storage and sequence order.
///
/// `forward[i]` is the sequence position of the token stored at linear
/// index `i`; `inverse[p]` is the storage index of the token at position `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Permutation {
            inverse: forward.clone(),
            forward,
        }
    }

    /// Validates `forward` as a bijection and derives the inverse.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in forward.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::domain(format!(
                    "not a permutation: position {p} at index {i}"
                )));
            }
            inverse[p] = i;
        }
        Ok(Permutation { forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Reorders a storage-ordered sequence into scan order.
    pub fn permute(&self, seq: &TokenSeq) -> Result<TokenSeq> {
        self.check_len(seq.len())?;
        let mut out = TokenSeq::zeros(seq.len(), seq.dim());
        for (i, &p) in self.forward.iter().enumerate() {
            out.token_mut(p).copy_from_slice(seq.token(i));
        }
        Ok(out)
    }

    /// Reorders a scan-ordered sequence back into storage order.
    pub fn unpermute(&self, seq: &TokenSeq) -> Result<TokenSeq> {
        self.check_len(seq.len())?;
        let mut out = TokenSeq::zeros(seq.len(), seq.dim());
        for (p, &i) in self.inverse.iter().enumerate() {
            out.token_mut(i).copy_from_slice(seq.token(p));
        }
        Ok(out)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::domain(format!(
                "permutation over {} tokens applied to {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Materializes the permutation realizing `schedule` on `shape`.
pub fn build_permutation(shape: Shape3, schedule: ScanSchedule) -> Permutation {
    let n = shape.n_tokens();
    let mut forward = Vec::with_capacity(n);
    let mut inverse = vec![0usize; n];
    for i in 0..n {
        let p = position_unchecked(shape, schedule, shape.coord(i));
        forward.push(p);
        inverse[p] = i;
    }
    Permutation { forward, inverse }
}

/// Scans a grid into a sequence: output position `p` holds the token whose
/// forward image is `p`.
pub fn apply_permutation(tensor: &TokenTensor, perm: &Permutation) -> Result<TokenSeq> {
    perm.permute(&tensor.to_seq())
}

/// Inverse of [`apply_permutation`].
pub fn apply_inverse(seq: &TokenSeq, perm: &Permutation, shape: Shape3) -> Result<TokenTensor> {
    if shape.n_tokens() != perm.len() {
        return Err(Error::domain("shape does not match permutation length"));
    }
    TokenTensor::from_seq(shape, perm.unpermute(seq)?)
}

/// Adjacency-preservation summary for one scan family.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyReport {
    pub shape: Shape3,
    pub k: usize,
    /// Mean minimum distance of pairs adjacent along each axis (t, y, x);
    /// `None` where the axis has no pairs.
    pub per_axis_min_mean: [Option<f64>; 3],
    /// Number of pairs per axis.
    pub pair_counts: [u64; 3],
    /// Mean over every pair.
    pub d_k: f64,
}

/// Mean over adjacent pairs inside aligned 2×2×2 cubes of the minimum
/// sequence distance reached across layers `0..k` of `family`.
///
/// Flipped scans preserve `|Δposition|`, so only forward schedules are
/// evaluated. Axes of length 1 contribute no pairs; odd trailing slices that
/// do not fill a cube are ignored.
pub fn adjacency_d_k(shape: Shape3, family: ScanFamily, k: usize) -> Result<AdjacencyReport> {
    if k == 0 {
        return Err(Error::domain("k must be >= 1"));
    }
    let len = shape.dims();
    if len.iter().all(|&l| l < 2) {
        return Err(Error::domain(format!(
            "shape {shape} has no adjacent pairs"
        )));
    }
    let layers: Vec<Vec<usize>> = (0..k)
        .map(|l| build_permutation(shape, family.schedule(l, Direction::Forward)).forward)
        .collect();

    // extent along each axis covered by aligned cubes
    let covered = len.map(|l| if l == 1 { 1 } else { 2 * (l / 2) });
    let mut sums = [0u64; 3];
    let mut counts = [0u64; 3];
    for axis in Axis::ALL {
        let a = axis as usize;
        if len[a] < 2 {
            continue;
        }
        for t in 0..covered[0] {
            for y in 0..covered[1] {
                for x in 0..covered[2] {
                    let c = [t, y, x];
                    if c[a] % 2 != 0 {
                        continue;
                    }
                    let mut n = c;
                    n[a] += 1;
                    let ia = shape.linear((c[0], c[1], c[2]));
                    let ib = shape.linear((n[0], n[1], n[2]));
                    let dist = layers
                        .iter()
                        .map(|f| f[ia].abs_diff(f[ib]))
                        .min()
                        .unwrap_or(0);
                    sums[a] += dist as u64;
                    counts[a] += 1;
                }
            }
        }
    }
    let total: u64 = sums.iter().sum();
    let pairs: u64 = counts.iter().sum();
    let mut per_axis = [None; 3];
    for a in 0..3 {
        if counts[a] > 0 {
            per_axis[a] = Some(sums[a] as f64 / counts[a] as f64);
        }
    }
    Ok(AdjacencyReport {
        shape,
        k,
        per_axis_min_mean: per_axis,
        pair_counts: counts,
        d_k: total as f64 / pairs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: usize, h: usize, w: usize) -> Shape3 {
        Shape3::new(t, h, w).unwrap()
    }

    #[test]
    fn rms_index_examples() {
        let sh = s(2, 2, 2);
        for l in 0..8 {
            assert_eq!(rms_index(sh, l, (0, 0, 0)).unwrap(), 0);
        }
        assert_eq!(rms_index(sh, 0, (1, 0, 1)).unwrap(), 5);
        assert_eq!(rms_index(sh, 2, (1, 0, 1)).unwrap(), 3);
        assert!(rms_index(sh, 0, (2, 0, 0)).is_err());
    }

    #[test]
    fn rms_index_matches_permutation_for_every_case() {
        let sh = s(3, 4, 5);
        for l in 0..4 {
            let perm = build_permutation(sh, ScanSchedule::rms(l, Direction::Forward));
            for i in 0..sh.n_tokens() {
                assert_eq!(perm.forward()[i], rms_index(sh, l, sh.coord(i)).unwrap());
            }
        }
    }

    #[test]
    fn singleton_and_identity() {
        let p = build_permutation(s(1, 1, 1), ScanSchedule::rms(3, Direction::Flipped));
        assert_eq!(p.forward(), &[0]);
        assert_eq!(p.inverse(), &[0]);
        let p = build_permutation(s(2, 2, 2), ScanSchedule::rms(0, Direction::Forward));
        assert_eq!(p.forward(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        let p = build_permutation(s(2, 2, 2), ScanSchedule::rms(4, Direction::Flipped));
        assert_eq!(p.forward(), &[7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn temporal_orders_on_cube() {
        let sh = s(2, 2, 2);
        let values: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let tensor = TokenTensor::from_vec(sh, 1, values).unwrap();
        let scan = |l| {
            let p = build_permutation(sh, ScanSchedule::rms(l, Direction::Forward));
            apply_permutation(&tensor, &p).unwrap().into_vec()
        };
        // y-major, then x, then t fastest
        assert_eq!(scan(2), [0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
        // x-major, then y, then t fastest
        assert_eq!(scan(3), [0.0, 4.0, 2.0, 6.0, 1.0, 5.0, 3.0, 7.0]);
    }

    #[test]
    fn zigzag_steps_are_unit_moves() {
        let sh = s(3, 4, 5);
        for l in 0..4 {
            let p = build_permutation(sh, ScanFamily::Zigzag.schedule(l, Direction::Forward));
            for w in p.inverse().windows(2) {
                let (a, b) = (sh.coord(w[0]), sh.coord(w[1]));
                let manhattan = a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2);
                assert_eq!(manhattan, 1);
            }
        }
    }

    #[test]
    fn from_forward_rejects_duplicates() {
        assert!(Permutation::from_forward(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_forward(vec![0, 3, 1]).is_err());
        let p = Permutation::from_forward(vec![2, 0, 1]).unwrap();
        assert_eq!(p.inverse(), &[1, 2, 0]);
    }

    #[test]
    fn size_mismatch_is_domain_error() {
        let p = Permutation::identity(4);
        let t = TokenTensor::zeros(s(1, 1, 3), 2);
        assert!(matches!(apply_permutation(&t, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn adjacency_small_cube() {
        let r = adjacency_d_k(s(2, 2, 2), ScanFamily::Rms, 1).unwrap();
        assert!((r.d_k - 28.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.pair_counts, [4, 4, 4]);
        assert!(adjacency_d_k(s(1, 1, 1), ScanFamily::Rms, 1).is_err());
        assert!(adjacency_d_k(s(2, 2, 2), ScanFamily::Rms, 0).is_err());
    }

    #[test]
    fn adjacency_degenerate_axes() {
        // 1x4x4: only y and x pairs, cube is 1x2x2
        let r = adjacency_d_k(s(1, 4, 4), ScanFamily::RowMajor, 1).unwrap();
        assert_eq!(r.pair_counts, [0, 8, 8]);
        assert_eq!(r.per_axis_min_mean, [None, Some(4.0), Some(1.0)]);
        assert!((r.d_k - 2.5).abs() < 1e-12);
        // odd lengths drop the trailing slice
        let r = adjacency_d_k(s(1, 1, 5), ScanFamily::RowMajor, 1).unwrap();
        assert_eq!(r.pair_counts, [0, 0, 2]);
    }
}
