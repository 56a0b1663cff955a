//! Axis-aligned boxes: volumes, intersections, overlap ratio.

use serde::{Deserialize, Serialize};

use crate::diff::{softplus, Tape, Var};
use crate::error::{invalid, Error, Result};

/// A box given by its center and non-negative offset (half edge lengths).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    center: Vec<f64>,
    offset: Vec<f64>,
}

impl Hyperbox {
    pub fn new(center: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if center.len() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: offset.len(),
            });
        }
        if center.is_empty() {
            return Err(invalid("box of dimension 0"));
        }
        if center.iter().any(|c| !c.is_finite()) || offset.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(invalid("box offsets must be finite and non-negative"));
        }
        Ok(Hyperbox { center, offset })
    }

    /// Box spanning `lo..=hi`; requires `lo ⪯ hi`.
    pub fn from_corners(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let offset = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        Hyperbox::new(center, offset)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn min_corner(&self) -> Vec<f64> {
        self.center.iter().zip(&self.offset).map(|(c, f)| c - f).collect()
    }

    pub fn max_corner(&self) -> Vec<f64> {
        self.center.iter().zip(&self.offset).map(|(c, f)| c + f).collect()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.center.iter().zip(&self.offset))
            .all(|(x, (c, f))| c - f <= *x && *x <= c + f)
    }

    /// Region containment `other ⊆ self`.
    pub fn contains(&self, other: &Hyperbox) -> bool {
        let (lo, hi) = (self.min_corner(), self.max_corner());
        let (olo, ohi) = (other.min_corner(), other.max_corner());
        (0..self.dim()).all(|i| lo[i] <= olo[i] && ohi[i] <= hi[i])
    }

    /// Coordinates `start..start + len` as a lower-dimensional box.
    pub fn sub_box(&self, start: usize, len: usize) -> Hyperbox {
        Hyperbox {
            center: self.center[start..start + len].to_vec(),
            offset: self.offset[start..start + len].to_vec(),
        }
    }

    /// Concatenates boxes dimension-wise.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Hyperbox>) -> Hyperbox {
        let mut center = Vec::new();
        let mut offset = Vec::new();
        for p in parts {
            center.extend_from_slice(&p.center);
            offset.extend_from_slice(&p.offset);
        }
        Hyperbox { center, offset }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.center, self.offset)
    }
}

/// Per-dimension bounds of an intersection; possibly empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Intersection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Intersection {
    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(a, b)| a > b)
    }

    pub fn to_box(&self) -> Option<Hyperbox> {
        if self.is_empty() {
            None
        } else {
            Hyperbox::from_corners(&self.lo, &self.hi).ok()
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = f64> + '_ {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a)
    }

    pub fn volume(&self, vol: Volume) -> f64 {
        vol.of_edges(self.edges())
    }
}

/// Volume function applied to edge lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Volume {
    /// `∏ ReLU(edge)`
    Hard,
    /// `∏ softplus_β(edge)`
    Smooth { beta: f64 },
}

impl Volume {
    pub fn edge(self, x: f64) -> f64 {
        match self {
            Volume::Hard => x.max(0.0),
            Volume::Smooth { beta } => softplus(x, beta),
        }
    }

    pub fn of_edges(self, edges: impl IntoIterator<Item = f64>) -> f64 {
        edges.into_iter().map(|e| self.edge(e)).product()
    }

    pub fn of_box(self, b: &Hyperbox) -> f64 {
        self.of_edges(b.offset.iter().map(|f| 2.0 * f))
    }
}

pub fn hard_volume(b: &Hyperbox) -> f64 {
    Volume::Hard.of_box(b)
}

pub fn smooth_volume(b: &Hyperbox, beta: f64) -> f64 {
    Volume::Smooth { beta }.of_box(b)
}

fn check_dims(a: &Hyperbox, b: &Hyperbox) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

pub fn intersect(a: &Hyperbox, b: &Hyperbox) -> Result<Intersection> {
    check_dims(a, b)?;
    let (alo, ahi) = (a.min_corner(), a.max_corner());
    let (blo, bhi) = (b.min_corner(), b.max_corner());
    Ok(Intersection {
        lo: alo.iter().zip(&blo).map(|(x, y)| x.max(*y)).collect(),
        hi: ahi.iter().zip(&bhi).map(|(x, y)| x.min(*y)).collect(),
    })
}

/// Intersection volume computed without allocating.
pub fn intersection_volume(a: &Hyperbox, b: &Hyperbox, vol: Volume) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut v = 1.0;
    for i in 0..a.dim() {
        let lo = (a.center[i] - a.offset[i]).max(b.center[i] - b.offset[i]);
        let hi = (a.center[i] + a.offset[i]).min(b.center[i] + b.offset[i]);
        v *= vol.edge(hi - lo);
    }
    v
}

/// Inclusion-exclusion `V(A) + V(B) - V(A∩B)`.
pub fn union_volume(a: &Hyperbox, b: &Hyperbox, vol: Volume) -> Result<f64> {
    check_dims(a, b)?;
    Ok(vol.of_box(a) + vol.of_box(b) - intersection_volume(a, b, vol))
}

/// Box overlap ratio `½ (V(A∩B)/V(A) + V(A∩B)/V(B))`.
pub fn bor(a: &Hyperbox, b: &Hyperbox, vol: Volume) -> Result<f64> {
    check_dims(a, b)?;
    Ok(bor_unchecked(a, b, vol))
}

pub(crate) fn bor_unchecked(a: &Hyperbox, b: &Hyperbox, vol: Volume) -> f64 {
    let vi = intersection_volume(a, b, vol);
    let (va, vb) = (vol.of_box(a), vol.of_box(b));
    let ra = if va > 0.0 { vi / va } else { 0.0 };
    let rb = if vb > 0.0 { vi / vb } else { 0.0 };
    0.5 * (ra + rb)
}

/// Set-algebra expression over boxes, evaluated by point membership.
#[derive(Clone, Debug)]
pub enum Region {
    Box(Hyperbox),
    Intersection(Box<Region>, Box<Region>),
    Union(Box<Region>, Box<Region>),
}

impl Region {
    pub fn and(self, other: Region) -> Region {
        Region::Intersection(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Region) -> Region {
        Region::Union(Box::new(self), Box::new(other))
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::Box(b) => b.contains_point(p),
            Region::Intersection(a, b) => a.contains(p) && b.contains(p),
            Region::Union(a, b) => a.contains(p) || b.contains(p),
        }
    }

    /// Smallest box enclosing the region, `None` when provably empty.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Region::Box(b) => Some((b.min_corner(), b.max_corner())),
            Region::Intersection(a, b) => {
                let (alo, ahi) = a.bounding_box()?;
                let (blo, bhi) = b.bounding_box()?;
                let lo: Vec<f64> = alo.iter().zip(&blo).map(|(x, y)| x.max(*y)).collect();
                let hi: Vec<f64> = ahi.iter().zip(&bhi).map(|(x, y)| x.min(*y)).collect();
                if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                    None
                } else {
                    Some((lo, hi))
                }
            }
            Region::Union(a, b) => match (a.bounding_box(), b.bounding_box()) {
                (None, x) | (x, None) => x,
                (Some((alo, ahi)), Some((blo, bhi))) => Some((
                    alo.iter().zip(&blo).map(|(x, y)| x.min(*y)).collect(),
                    ahi.iter().zip(&bhi).map(|(x, y)| x.max(*y)).collect(),
                )),
            },
        }
    }
}

/// A box recorded on a tape. Both fields have length `n·d` for a batch of
/// `n` boxes laid out one after another.
#[derive(Clone, Copy, Debug)]
pub struct TapeBox {
    pub center: Var,
    pub offset: Var,
}

impl TapeBox {
    pub fn constant(t: &mut Tape, b: &Hyperbox) -> TapeBox {
        TapeBox {
            center: t.constant(b.center()),
            offset: t.constant(b.offset()),
        }
    }

    pub fn corners(self, t: &mut Tape) -> Corners {
        Corners {
            lo: t.sub(self.center, self.offset),
            hi: t.add(self.center, self.offset),
        }
    }

    /// Current value as a pure box (first box of a batch if `n > 1`).
    pub fn value(self, t: &Tape) -> Hyperbox {
        Hyperbox {
            center: t.value(self.center).to_vec(),
            offset: t.value(self.offset).to_vec(),
        }
    }

    pub fn concat(t: &mut Tape, parts: &[TapeBox]) -> TapeBox {
        let cs: Vec<Var> = parts.iter().map(|p| p.center).collect();
        let fs: Vec<Var> = parts.iter().map(|p| p.offset).collect();
        TapeBox {
            center: t.concat(&cs),
            offset: t.concat(&fs),
        }
    }
}

/// Min and max corners on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    pub lo: Var,
    pub hi: Var,
}

impl Corners {
    pub fn meet(self, t: &mut Tape, other: Corners) -> Corners {
        Corners {
            lo: t.max(self.lo, other.lo),
            hi: t.min(self.hi, other.hi),
        }
    }

    /// Smoothed volume of each consecutive `dim`-block.
    pub fn smooth_volume(self, t: &mut Tape, beta: f64, dim: usize) -> Var {
        let e = t.sub(self.hi, self.lo);
        let s = t.softplus(e, beta);
        t.group_prod(s, dim)
    }
}

/// Smoothed volume of a (batched) tape box.
pub fn tape_smooth_volume(t: &mut Tape, b: TapeBox, beta: f64, dim: usize) -> Var {
    let e = t.scale(b.offset, 2.0);
    let s = t.softplus(e, beta);
    t.group_prod(s, dim)
}

/// Box overlap ratio on a tape with smoothed volumes.
pub fn tape_bor(t: &mut Tape, a: TapeBox, b: TapeBox, beta: f64) -> Var {
    let dim = t.len_of(a.center);
    let (ca, cb) = (a.corners(t), b.corners(t));
    let vi = ca.meet(t, cb).smooth_volume(t, beta, dim);
    let va = tape_smooth_volume(t, a, beta, dim);
    let vb = tape_smooth_volume(t, b, beta, dim);
    let ra = t.div(vi, va);
    let rb = t.div(vi, vb);
    let s = t.add(ra, rb);
    t.scale(s, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(c: &[f64], f: &[f64]) -> Hyperbox {
        Hyperbox::new(c.to_vec(), f.to_vec()).unwrap()
    }

    fn square(lo: f64, hi: f64) -> Hyperbox {
        Hyperbox::from_corners(&[lo, lo], &[hi, hi]).unwrap()
    }

    #[test]
    fn hard_volumes() {
        assert_eq!(hard_volume(&bx(&[0.0, 0.0], &[0.5, 0.5])), 1.0);
        assert_eq!(hard_volume(&bx(&[0.0, 0.0], &[1.0, 0.5])), 2.0);
        assert_eq!(hard_volume(&bx(&[0.0, 0.0], &[0.0, 1.0])), 0.0);
        assert!(Hyperbox::new(vec![0.0], vec![-0.1]).is_err());
    }

    #[test]
    fn smooth_volumes() {
        let b = bx(&[0.0, 0.0], &[1.0, 0.5]);
        let want = ((1.0 + (8.0f64).exp()).ln() / 4.0) * ((1.0 + (4.0f64).exp()).ln() / 4.0);
        assert!((smooth_volume(&b, 4.0) - want).abs() < 1e-12);
        assert!((smooth_volume(&b, 4.0) - 2.0091).abs() < 1e-4);
        let z = bx(&[0.0; 3], &[0.0; 3]);
        assert!((smooth_volume(&z, 1.0) - std::f64::consts::LN_2.powi(3)).abs() < 1e-15);
        assert!((smooth_volume(&b, 1e4) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn intersections_and_unions() {
        let (a, b) = (square(0.0, 2.0), square(1.0, 3.0));
        let i = intersect(&a, &b).unwrap();
        assert_eq!(i.to_box().unwrap(), square(1.0, 2.0));
        assert_eq!(i.volume(Volume::Hard), 1.0);
        assert_eq!(union_volume(&a, &b, Volume::Hard).unwrap(), 7.0);
        assert_eq!(union_volume(&a, &a, Volume::Hard).unwrap(), 4.0);
        let far = square(5.0, 6.0);
        assert!(intersect(&a, &far).unwrap().is_empty());
        assert_eq!(intersection_volume(&a, &far, Volume::Hard), 0.0);
        let c = Hyperbox::from_corners(&[10.0, 0.0], &[13.0, 1.0]).unwrap();
        let d = Hyperbox::from_corners(&[0.0, 0.0], &[2.0, 1.0]).unwrap();
        assert_eq!(union_volume(&c, &d, Volume::Hard).unwrap(), 5.0);
        assert!(intersect(&a, &bx(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn overlap_ratio() {
        let a = square(1.0, 2.0);
        let b = square(0.0, 2.0);
        assert_eq!(bor(&a, &b, Volume::Hard).unwrap(), 0.625);
        assert_eq!(bor(&a, &a, Volume::Smooth { beta: 2.0 }).unwrap(), 1.0);
        let far = bor(&a, &square(40.0, 41.0), Volume::Smooth { beta: 1.0 }).unwrap();
        assert!(far > 0.0 && far < 1e-6);
    }

    #[test]
    fn tape_matches_pure() {
        let a = bx(&[0.1, -0.3, 0.2], &[0.4, 0.2, 0.9]);
        let b = bx(&[0.5, 0.0, -0.1], &[0.3, 0.6, 0.2]);
        let mut t = Tape::new();
        let (ta, tb) = (TapeBox::constant(&mut t, &a), TapeBox::constant(&mut t, &b));
        let v = tape_bor(&mut t, ta, tb, 2.0);
        let want = bor(&a, &b, Volume::Smooth { beta: 2.0 }).unwrap();
        assert!((t.scalar(v) - want).abs() < 1e-14);
        let va = tape_smooth_volume(&mut t, ta, 2.0, 3);
        assert!((t.scalar(va) - smooth_volume(&a, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn region_membership() {
        let r = Region::Box(square(0.0, 1.0)).or(Region::Box(square(2.0, 3.0)));
        assert!(r.contains(&[0.5, 0.5]));
        assert!(r.contains(&[2.5, 2.5]));
        assert!(!r.contains(&[1.5, 1.5]));
        assert_eq!(r.bounding_box().unwrap(), (vec![0.0, 0.0], vec![3.0, 3.0]));
        let e = Region::Box(square(0.0, 1.0)).and(Region::Box(square(2.0, 3.0)));
        assert!(e.bounding_box().is_none());
    }
}
