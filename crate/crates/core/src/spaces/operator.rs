use rand::seq::SliceRandom;

use super::rotation::disc_rotation_table;
use super::{CanonicalState, Partial};
use crate::error::{ensure_shape, Error, Result};
use crate::field::Field;
use crate::noise::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Permutation,
    Crop,
    InnerRotation,
    Multiplane,
}

/// How instance values are carried back to the canonical grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unprojection {
    /// Scatter along the forward map, averaging instance pixels that share a
    /// canonical source. Canonical pixels that are never sampled stay uncovered.
    ScatterMean,
    /// Gather through an explicit canonical-to-instance nearest-neighbour map
    /// (the inverse transform resampled on the grid). Covers every canonical pixel.
    InverseNearest(Vec<usize>),
}

/// A projection `f` from the canonical grid to one instance grid, paired with
/// its unprojection `g` and optional aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    kind: OperatorKind,
    label: String,
    canonical_shape: Vec<usize>,
    instance_shape: Vec<usize>,
    forward_map: Vec<usize>,
    pullback_offsets: Vec<usize>,
    pullback_indices: Vec<usize>,
    unprojection: Unprojection,
    mix_weights: Option<Vec<f64>>,
    weights: Option<Field>,
    rotation_angle: Option<f64>,
}

impl ProjectionOperator {
    fn from_map(
        kind: OperatorKind,
        label: String,
        canonical_shape: Vec<usize>,
        instance_shape: Vec<usize>,
        forward_map: Vec<usize>,
    ) -> Result<Self> {
        let canonical_len: usize = canonical_shape.iter().product();
        let instance_len: usize = instance_shape.iter().product();
        if canonical_len == 0 || instance_len == 0 {
            return Err(Error::Config(format!("{label}: shapes must be nonempty")));
        }
        if forward_map.len() != instance_len {
            return Err(Error::Config(format!(
                "{label}: forward map has {} entries for {instance_len} instance pixels",
                forward_map.len()
            )));
        }
        if let Some(&bad) = forward_map.iter().find(|&&s| s >= canonical_len) {
            return Err(Error::Config(format!(
                "{label}: forward map index {bad} outside canonical grid of {canonical_len}"
            )));
        }

        // CSR pullback, instance indices ascending within each canonical pixel.
        let mut counts = vec![0usize; canonical_len + 1];
        for &s in &forward_map {
            counts[s + 1] += 1;
        }
        for p in 0..canonical_len {
            counts[p + 1] += counts[p];
        }
        let mut cursor = counts.clone();
        let mut indices = vec![0usize; instance_len];
        for (q, &s) in forward_map.iter().enumerate() {
            indices[cursor[s]] = q;
            cursor[s] += 1;
        }

        Ok(Self {
            kind,
            label,
            canonical_shape,
            instance_shape,
            forward_map,
            pullback_offsets: counts,
            pullback_indices: indices,
            unprojection: Unprojection::ScatterMean,
            mix_weights: None,
            weights: None,
            rotation_angle: None,
        })
    }

    /// A bijective relabelling of the grid: `forward_map[q]` is the canonical
    /// pixel shown at instance pixel `q`.
    pub fn permutation(shape: &[usize], forward_map: Vec<usize>, label: &str) -> Result<Self> {
        let op = Self::from_map(
            OperatorKind::Permutation,
            label.to_string(),
            shape.to_vec(),
            shape.to_vec(),
            forward_map,
        )?;
        if (0..op.canonical_len()).any(|p| op.pullback(p).len() != 1) {
            return Err(Error::Config(format!(
                "{label}: forward map is not a bijection"
            )));
        }
        Ok(op)
    }

    pub fn identity(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::permutation(shape, (0..n).collect(), "identity")
    }

    /// Upside-down flip of a 2-D grid.
    pub fn flip_vertical(shape: &[usize]) -> Result<Self> {
        let (h, w) = dims2(shape)?;
        let map = (0..h * w).map(|q| (h - 1 - q / w) * w + q % w).collect();
        Self::permutation(shape, map, "flip_vertical")
    }

    pub fn flip_horizontal(shape: &[usize]) -> Result<Self> {
        let (h, w) = dims2(shape)?;
        let map = (0..h * w).map(|q| (q / w) * w + (w - 1 - q % w)).collect();
        Self::permutation(shape, map, "flip_horizontal")
    }

    /// Transpose of a square grid.
    pub fn transpose(shape: &[usize]) -> Result<Self> {
        let n = square(shape)?;
        let map = (0..n * n).map(|q| (q % n) * n + q / n).collect();
        Self::permutation(shape, map, "transpose")
    }

    /// Quarter turn of a square grid.
    pub fn rotate90(shape: &[usize]) -> Result<Self> {
        let n = square(shape)?;
        let map = (0..n * n)
            .map(|q| {
                let (i, j) = (q / n, q % n);
                j * n + (n - 1 - i)
            })
            .collect();
        Self::permutation(shape, map, "rotate90")
    }

    /// Uniformly random relabelling drawn from `seed`.
    pub fn random_permutation(shape: &[usize], seed: u64) -> Result<Self> {
        let n = shape.iter().product();
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(&mut stream_rng(seed, 0x5045_524d));
        Self::permutation(shape, map, &format!("random_permutation({seed})"))
    }

    /// The `window`-sized block of a 2-D `canvas` whose top-left corner is `origin`.
    pub fn crop(canvas: &[usize], window: &[usize], origin: [usize; 2]) -> Result<Self> {
        let (ch, cw) = dims2(canvas)?;
        let (h, w) = dims2(window)?;
        if origin[0] + h > ch || origin[1] + w > cw {
            return Err(Error::Config(format!(
                "crop window {window:?} at {origin:?} exceeds canvas {canvas:?}"
            )));
        }
        let map = (0..h * w)
            .map(|q| (origin[0] + q / w) * cw + origin[1] + q % w)
            .collect();
        Self::from_map(
            OperatorKind::Crop,
            format!("crop({},{})", origin[0], origin[1]),
            canvas.to_vec(),
            window.to_vec(),
            map,
        )
    }

    /// Windows placed at every multiple of `stride` so that together they
    /// cover `canvas`. Fails if the placement would leave any pixel uncovered.
    pub fn crop_tiling(
        canvas: &[usize],
        window: &[usize],
        stride: [usize; 2],
    ) -> Result<Vec<Self>> {
        let (ch, cw) = dims2(canvas)?;
        let (h, w) = dims2(window)?;
        let rows = tile_positions(ch, h, stride[0], "row")?;
        let cols = tile_positions(cw, w, stride[1], "column")?;
        let mut ops = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                ops.push(Self::crop(canvas, window, [r, c])?);
            }
        }
        Ok(ops)
    }

    /// Rotates the inscribed disc of a square grid by `angle_deg`, sampling
    /// the canonical grid with nearest-neighbour lookup.
    pub fn inner_rotation(shape: &[usize], angle_deg: f64) -> Result<Self> {
        let n = square(shape)?;
        if !(0.0..360.0).contains(&angle_deg) {
            return Err(Error::Config(format!(
                "rotation angle must lie in [0, 360), got {angle_deg}"
            )));
        }
        let map = disc_rotation_table(n, -angle_deg);
        let mut op = Self::from_map(
            OperatorKind::InnerRotation,
            format!("inner_rotation({angle_deg})"),
            shape.to_vec(),
            shape.to_vec(),
            map,
        )?;
        op.rotation_angle = Some(angle_deg);
        Ok(op)
    }

    /// Switches an inner rotation to unproject through the inverse rotation
    /// resampled with nearest-neighbour lookup instead of scatter-averaging.
    pub fn with_inverse_nearest_unprojection(mut self) -> Result<Self> {
        let (OperatorKind::InnerRotation, Some(angle)) = (self.kind, self.rotation_angle) else {
            return Err(Error::Config(format!(
                "{}: inverse-nearest unprojection is only defined for inner rotations",
                self.label
            )));
        };
        let n = self.canonical_shape[0];
        self.unprojection = Unprojection::InverseNearest(disc_rotation_table(n, angle));
        Ok(self)
    }

    /// Uniform `planes`-layer multiplane composite: planes are averaged, then
    /// `transform` is applied.
    pub fn multiplane(planes: usize, transform: ProjectionOperator) -> Result<Self> {
        if planes == 0 {
            return Err(Error::Config("multiplane needs at least one plane".into()));
        }
        Self::multiplane_weighted(vec![1.0 / planes as f64; planes], transform)
    }

    /// Multiplane composite with explicit nonnegative plane weights summing to 1.
    pub fn multiplane_weighted(
        mix_weights: Vec<f64>,
        transform: ProjectionOperator,
    ) -> Result<Self> {
        if mix_weights.is_empty() {
            return Err(Error::Config("multiplane needs at least one plane".into()));
        }
        if transform.kind == OperatorKind::Multiplane {
            return Err(Error::Config(
                "multiplane transforms cannot be nested".into(),
            ));
        }
        if mix_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("plane weights must be nonnegative".into()));
        }
        let total: f64 = mix_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "plane weights must sum to 1 (got {total})"
            )));
        }
        let mut op = transform;
        op.label = format!("multiplane({}, {})", mix_weights.len(), op.label);
        op.kind = OperatorKind::Multiplane;
        op.mix_weights = Some(mix_weights);
        Ok(op)
    }

    /// Attaches per-pixel aggregation weights over the canonical slab grid.
    pub fn with_weights(mut self, weights: Field) -> Result<Self> {
        ensure_shape(&self.canonical_shape, weights.shape())?;
        if weights.values().iter().any(|w| *w < 0.0) {
            return Err(Error::Config(format!(
                "{}: aggregation weights must be nonnegative",
                self.label
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Shape of one canonical slab.
    pub fn canonical_shape(&self) -> &[usize] {
        &self.canonical_shape
    }

    pub fn instance_shape(&self) -> &[usize] {
        &self.instance_shape
    }

    pub fn forward_map(&self) -> &[usize] {
        &self.forward_map
    }

    pub fn unprojection(&self) -> &Unprojection {
        &self.unprojection
    }

    pub fn mix_weights(&self) -> Option<&[f64]> {
        self.mix_weights.as_deref()
    }

    pub fn weights(&self) -> Option<&Field> {
        self.weights.as_ref()
    }

    /// Number of canonical planes this operator reads (1 unless multiplane).
    pub fn planes(&self) -> usize {
        self.mix_weights.as_ref().map_or(1, Vec::len)
    }

    fn canonical_len(&self) -> usize {
        self.pullback_offsets.len() - 1
    }

    /// Rotation angle in degrees for inner rotations.
    pub fn rotation_angle(&self) -> Option<f64> {
        self.rotation_angle
    }

    /// Instance pixels whose forward lookup lands on canonical pixel `p`.
    pub fn pullback(&self, p: usize) -> &[usize] {
        &self.pullback_indices[self.pullback_offsets[p]..self.pullback_offsets[p + 1]]
    }

    pub fn max_pullback_multiplicity(&self) -> usize {
        (0..self.canonical_len())
            .map(|p| self.pullback(p).len())
            .max()
            .unwrap_or(0)
    }

    /// True when `f` is a bijection and `g` its exact inverse.
    pub fn is_one_to_one(&self) -> bool {
        self.canonical_len() == self.forward_map.len()
            && (0..self.canonical_len()).all(|p| self.pullback(p).len() == 1)
            && matches!(self.unprojection, Unprojection::ScatterMean)
            && self.planes() == 1
    }

    fn check_state(&self, z: &CanonicalState) -> Result<()> {
        ensure_shape(&self.canonical_shape, z.slab_shape())?;
        if z.num_planes() != self.planes() {
            return Err(Error::Contract(format!(
                "{} reads {} plane(s) but the canonical state has {}",
                self.label,
                self.planes(),
                z.num_planes()
            )));
        }
        Ok(())
    }

    /// `f(z)`: reduce planes by their mix weights, then gather.
    pub fn project(&self, z: &CanonicalState) -> Result<Field> {
        self.check_state(z)?;
        let values = match &self.mix_weights {
            None => {
                let slab = z.slabs()[0].values();
                self.forward_map.iter().map(|&s| slab[s]).collect()
            }
            Some(mix) => self
                .forward_map
                .iter()
                .map(|&s| {
                    mix.iter()
                        .zip(z.slabs())
                        .map(|(m, slab)| m * slab.values()[s])
                        .sum()
                })
                .collect(),
        };
        Ok(Field::from_parts(self.instance_shape.clone(), values))
    }

    /// `g(w)` as a partial canonical state with its coverage mask. For
    /// multiplane operators the slab value `v` is spread as the minimum-norm
    /// plane assignment `p_j = m_j v / sum(m^2)`, which is `p_j = v` for
    /// uniform weights.
    pub fn unproject(&self, w: &Field) -> Result<Partial> {
        ensure_shape(&self.instance_shape, w.shape())?;
        let n = self.canonical_len();
        let wv = w.values();
        let mut slab = vec![0.0; n];
        let mut mask = vec![false; n];
        match &self.unprojection {
            Unprojection::ScatterMean => {
                for p in 0..n {
                    let hits = self.pullback(p);
                    match hits.len() {
                        0 => {}
                        1 => {
                            slab[p] = wv[hits[0]];
                            mask[p] = true;
                        }
                        k => {
                            slab[p] = hits.iter().map(|&q| wv[q]).sum::<f64>() / k as f64;
                            mask[p] = true;
                        }
                    }
                }
            }
            Unprojection::InverseNearest(inverse) => {
                for (p, &q) in inverse.iter().enumerate() {
                    slab[p] = wv[q];
                    mask[p] = true;
                }
            }
        }

        let slab = Field::from_parts(self.canonical_shape.clone(), slab);
        let values = match &self.mix_weights {
            None => CanonicalState::single(slab),
            Some(mix) => {
                let uniform = mix.iter().all(|m| *m == mix[0]);
                let norm: f64 = mix.iter().map(|m| m * m).sum();
                let planes = mix
                    .iter()
                    .map(|m| {
                        if uniform {
                            slab.clone()
                        } else {
                            slab.scale(m / norm)
                        }
                    })
                    .collect();
                CanonicalState::from_planes_unchecked(planes)
            }
        };
        Ok(Partial {
            values,
            mask,
            weights: self.weights.clone(),
        })
    }

    /// `|| w - f(g(w)) ||_2` using this operator alone.
    pub fn reprojection_error(&self, w: &Field) -> Result<f64> {
        let partial = self.unproject(w)?;
        let back = self.project(&partial.values)?;
        Ok(w.squared_distance(&back)?.sqrt())
    }
}

fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(Error::Config(format!(
            "expected a 2-D shape, got {shape:?}"
        ))),
    }
}

fn square(shape: &[usize]) -> Result<usize> {
    let (h, w) = dims2(shape)?;
    if h != w {
        return Err(Error::Config(format!(
            "expected a square grid, got {shape:?}"
        )));
    }
    Ok(h)
}

fn tile_positions(extent: usize, window: usize, stride: usize, axis: &str) -> Result<Vec<usize>> {
    if window > extent {
        return Err(Error::Config(format!(
            "{axis} window {window} larger than canvas {extent}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config(format!("{axis} stride must be positive")));
    }
    if stride > window {
        return Err(Error::Config(format!(
            "{axis} stride {stride} exceeds window {window}: tiling leaves gaps"
        )));
    }
    if !(extent - window).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "{axis} stride {stride} does not reach the canvas edge ({extent} - {window} is not a multiple): tiling leaves gaps"
        )));
    }
    Ok((0..=(extent - window) / stride)
        .map(|k| k * stride)
        .collect())
}
