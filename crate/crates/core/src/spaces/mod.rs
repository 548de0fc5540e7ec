//! Canonical and instance spaces: projections `f_i`, unprojections `g_i` and
//! the weighted aggregation `A` that merges unprojected views.
//!
//! Three regimes are represented: bijective relabellings and crops
//! (1-to-1), nearest-neighbour inner-disc rotations (1-to-n, one canonical
//! pixel can feed several instance pixels) and multiplane composites
//! (n-to-1, each instance pixel averages several canonical planes).

mod operator;
pub(crate) mod rotation;

pub use operator::{OperatorKind, ProjectionOperator, Unprojection};

use crate::error::{ensure_shape, Error, Result};
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonicalKind {
    SingleSlab,
    Multiplane,
}

/// A canonical variable: one slab, or `M` equally shaped planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalState {
    kind: CanonicalKind,
    slabs: Vec<Field>,
}

impl CanonicalState {
    pub fn single(slab: Field) -> Self {
        Self {
            kind: CanonicalKind::SingleSlab,
            slabs: vec![slab],
        }
    }

    pub fn multiplane(planes: Vec<Field>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Contract(
                "multiplane state needs at least one plane".into(),
            ));
        }
        for p in &planes[1..] {
            ensure_shape(planes[0].shape(), p.shape())?;
        }
        Ok(Self::from_planes_unchecked(planes))
    }

    pub(crate) fn from_planes_unchecked(planes: Vec<Field>) -> Self {
        Self {
            kind: CanonicalKind::Multiplane,
            slabs: planes,
        }
    }

    /// Splits a flat field of `planes * slab` values, plane-major.
    pub fn from_flat(
        kind: CanonicalKind,
        slab_shape: &[usize],
        planes: usize,
        values: &[f64],
    ) -> Result<Self> {
        let slab_len: usize = slab_shape.iter().product();
        if values.len() != slab_len * planes {
            return Err(Error::Contract(format!(
                "expected {} values for {planes} plane(s) of {slab_shape:?}, got {}",
                slab_len * planes,
                values.len()
            )));
        }
        let slabs = values
            .chunks(slab_len)
            .map(|c| Field::new(slab_shape.to_vec(), c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        match kind {
            CanonicalKind::SingleSlab if planes == 1 => {
                Ok(Self::single(slabs.into_iter().next().unwrap()))
            }
            CanonicalKind::SingleSlab => Err(Error::Contract(
                "single-slab state has exactly one plane".into(),
            )),
            CanonicalKind::Multiplane => Self::multiplane(slabs),
        }
    }

    pub fn kind(&self) -> CanonicalKind {
        self.kind
    }

    pub fn slabs(&self) -> &[Field] {
        &self.slabs
    }

    pub fn num_planes(&self) -> usize {
        self.slabs.len()
    }

    pub fn slab_shape(&self) -> &[usize] {
        self.slabs[0].shape()
    }

    /// All plane values concatenated plane-major.
    pub fn flat_values(&self) -> Vec<f64> {
        self.slabs
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect()
    }

    pub fn map_slabs(&self, f: impl Fn(&Field) -> Result<Field>) -> Result<Self> {
        Ok(Self {
            kind: self.kind,
            slabs: self.slabs.iter().map(f).collect::<Result<_>>()?,
        })
    }

    pub fn zip_slabs(
        &self,
        other: &Self,
        f: impl Fn(&Field, &Field) -> Result<Field>,
    ) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            kind: self.kind,
            slabs: self
                .slabs
                .iter()
                .zip(&other.slabs)
                .map(|(a, b)| f(a, b))
                .collect::<Result<_>>()?,
        })
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.kind != other.kind || self.num_planes() != other.num_planes() {
            return Err(Error::Contract(format!(
                "canonical states differ: {:?}x{} vs {:?}x{}",
                self.kind,
                self.num_planes(),
                other.kind,
                other.num_planes()
            )));
        }
        ensure_shape(self.slab_shape(), other.slab_shape())
    }

    pub fn linf_distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut max = 0.0f64;
        for (a, b) in self.slabs.iter().zip(&other.slabs) {
            max = max.max(a.linf_distance(b)?);
        }
        Ok(max)
    }

    /// Plane average (the slab itself for single-slab states).
    pub fn mean_plane(&self) -> Field {
        if self.slabs.len() == 1 {
            return self.slabs[0].clone();
        }
        let m = self.slabs.len() as f64;
        let mut acc = vec![0.0; self.slabs[0].len()];
        for s in &self.slabs {
            for (a, v) in acc.iter_mut().zip(s.values()) {
                *a += v;
            }
        }
        Field::from_parts(
            self.slab_shape().to_vec(),
            acc.into_iter().map(|v| v / m).collect(),
        )
    }
}

/// One unprojected view: canonical values, the slab pixels it covers and
/// optional per-pixel aggregation weights (uniform when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub values: CanonicalState,
    pub mask: Vec<bool>,
    pub weights: Option<Field>,
}

impl Partial {
    fn weight(&self, p: usize) -> f64 {
        if !self.mask[p] {
            return 0.0;
        }
        self.weights.as_ref().map_or(1.0, |w| w.values()[p])
    }
}

/// Per-pixel weighted mean over the partials covering it, summed in partial
/// order. Every slab pixel must receive positive total weight.
pub fn aggregate(partials: &[Partial]) -> Result<CanonicalState> {
    let (state, total) = weighted_mean(partials)?;
    if let Some(index) = total.iter().position(|w| *w <= 0.0) {
        return Err(Error::Coverage { index });
    }
    Ok(state)
}

/// Like [`aggregate`] but uncovered pixels are left at zero and reported in
/// the returned mask instead of failing.
pub fn aggregate_lenient(partials: &[Partial]) -> Result<(CanonicalState, Vec<bool>)> {
    let (state, total) = weighted_mean(partials)?;
    Ok((state, total.iter().map(|w| *w > 0.0).collect()))
}

fn weighted_mean(partials: &[Partial]) -> Result<(CanonicalState, Vec<f64>)> {
    let first = partials
        .first()
        .ok_or_else(|| Error::Contract("aggregate needs at least one partial".into()))?;
    for p in &partials[1..] {
        first.values.check_compatible(&p.values)?;
    }
    let n = first.mask.len();
    let planes = first.values.num_planes();
    let mut total = vec![0.0; n];
    let mut acc = vec![vec![0.0; n]; planes];
    for part in partials {
        for p in 0..n {
            let w = part.weight(p);
            if w == 0.0 {
                continue;
            }
            total[p] += w;
            for (j, slab) in part.values.slabs().iter().enumerate() {
                acc[j][p] += w * slab.values()[p];
            }
        }
    }
    let shape = first.values.slab_shape().to_vec();
    let slabs = acc
        .into_iter()
        .map(|plane| {
            let values = plane
                .iter()
                .zip(&total)
                .map(|(v, w)| if *w > 0.0 { v / w } else { 0.0 })
                .collect();
            Field::from_parts(shape.clone(), values)
        })
        .collect();
    let state = CanonicalState {
        kind: first.values.kind(),
        slabs,
    };
    Ok((state, total))
}

/// Checks that `ops` share one canonical layout and returns it as
/// `(kind, slab shape, planes)`.
pub fn canonical_layout(ops: &[ProjectionOperator]) -> Result<(CanonicalKind, Vec<usize>, usize)> {
    let first = ops
        .first()
        .ok_or_else(|| Error::Config("at least one projection operator is required".into()))?;
    let kind = if first.kind() == OperatorKind::Multiplane {
        CanonicalKind::Multiplane
    } else {
        CanonicalKind::SingleSlab
    };
    for (i, op) in ops.iter().enumerate() {
        let k = if op.kind() == OperatorKind::Multiplane {
            CanonicalKind::Multiplane
        } else {
            CanonicalKind::SingleSlab
        };
        if k != kind
            || op.planes() != first.planes()
            || op.canonical_shape() != first.canonical_shape()
        {
            return Err(Error::Config(format!(
                "operator {i} ({}) does not share the canonical layout of operator 0 ({})",
                op.label(),
                first.label()
            )));
        }
    }
    Ok((kind, first.canonical_shape().to_vec(), first.planes()))
}

/// `A({g_i(w_i)})`.
pub fn unproject_aggregate(ops: &[ProjectionOperator], views: &[Field]) -> Result<CanonicalState> {
    aggregate(&unproject_all(ops, views)?)
}

pub(crate) fn unproject_all(ops: &[ProjectionOperator], views: &[Field]) -> Result<Vec<Partial>> {
    if ops.len() != views.len() {
        return Err(Error::Contract(format!(
            "{} operators but {} instance fields",
            ops.len(),
            views.len()
        )));
    }
    ops.iter()
        .zip(views)
        .map(|(op, w)| op.unproject(w))
        .collect()
}

/// `{f_i(z)}`.
pub fn project_all(ops: &[ProjectionOperator], z: &CanonicalState) -> Result<Vec<Field>> {
    ops.iter().map(|op| op.project(z)).collect()
}

/// The resynchronisation operator `F_i({w_j}) = f_i(A({g_j(w_j)}))` applied
/// for every view at once.
pub fn synchronize(ops: &[ProjectionOperator], views: &[Field]) -> Result<Vec<Field>> {
    project_all(ops, &unproject_aggregate(ops, views)?)
}
