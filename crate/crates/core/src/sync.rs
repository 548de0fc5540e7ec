//! The synchronization engine.
//!
//! A [`DenoisingPlan`] picks the space whose variables are denoised, the
//! trajectory (where the Tweedie estimate `phi` and the DDIM step `psi` are
//! evaluated) and a mask of slots at which `F_i = f_i o A o {g_j}` is applied.
//! Every numbered case is one such plan; [`DenoisingPlan::for_case`] holds the
//! table.
//!
//! Slots per `(space, trajectory)`:
//!
//! ```text
//! instance 1   eps_input eps_output tweedie_input tweedie_output ddim_input
//! instance 2   eps_input ddim_input          (phi in Z, psi in W)
//! instance 3   eps_input                     (phi in Z, psi in Z)
//! instance 4   eps_input eps_output tweedie_input   (phi in W, psi in Z)
//! canonical 1  eps_output tweedie_output     (phi in W, psi in W)
//! canonical 2  -                             (phi in Z, psi in W)
//! canonical 3  -                             (phi in Z, psi in Z)
//! canonical 4  eps_output                    (phi in W, psi in Z)
//! ```
//!
//! On instance trajectory 1 the three input slots together mean the state
//! itself is resynchronized after every step, `w <- F(psi(w, phi(w, eps(w))))`;
//! any other subset of input slots feeds `F(w)` to the marked functions.

use rayon::prelude::*;

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::noise::gaussian_noise_stream;
use crate::schedule::{ddim_step, tweedie, NoiseSchedule};
use crate::spaces::{
    aggregate_lenient, canonical_layout, project_all, unproject_aggregate, unproject_all,
    CanonicalKind, CanonicalState, ProjectionOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenoiseSpace {
    Instance,
    Canonical,
}

/// Where `phi` and `psi` are computed: 1 = both in W, 2 = phi in Z and psi
/// in W, 3 = both in Z, 4 = phi in W and psi in Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trajectory {
    One,
    Two,
    Three,
    Four,
}

impl Trajectory {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            4 => Ok(Self::Four),
            _ => Err(Error::Config(format!("trajectory must be 1..=4, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
            Self::Four => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitPolicy {
    /// `w_i = f_i(z_T)` with `z_T ~ N(0, I)`.
    ProjectFromCanonical,
    /// Independent `w_i ~ N(0, I)` per view.
    DirectInstance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    NoSync,
    Case(u8),
}

impl CaseId {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("nosync") {
            return Ok(Self::NoSync);
        }
        let n: u8 = s
            .parse()
            .map_err(|_| Error::Config(format!("unknown case `{s}`")))?;
        if !(1..=53).contains(&n) {
            return Err(Error::Config(format!(
                "case must be 1..=53 or nosync, got {n}"
            )));
        }
        Ok(Self::Case(n))
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NoSync => f.write_str("nosync"),
            Self::Case(n) => write!(f, "{n}"),
        }
    }
}

const INSTANCE_T1_SLOTS: &[&str] = &[
    "eps_input",
    "eps_output",
    "tweedie_input",
    "tweedie_output",
    "ddim_input",
];
const INSTANCE_T2_SLOTS: &[&str] = &["eps_input", "ddim_input"];
const INSTANCE_T3_SLOTS: &[&str] = &["eps_input"];
const INSTANCE_T4_SLOTS: &[&str] = &["eps_input", "eps_output", "tweedie_input"];
const CANONICAL_T1_SLOTS: &[&str] = &["eps_output", "tweedie_output"];
const CANONICAL_T4_SLOTS: &[&str] = &["eps_output"];

// (case, space, trajectory, mask bits with bit k = slot k)
const CASE_TABLE: &[(u8, DenoiseSpace, Trajectory, u8)] = {
    use DenoiseSpace::{Canonical as C, Instance as I};
    use Trajectory::{Four, One, Three, Two};
    &[
        (1, I, One, 0b00010),
        (2, I, One, 0b01000),
        (3, I, One, 0b10101),
        (4, C, Three, 0),
        (5, C, Four, 0),
        (6, C, One, 0),
        (7, I, One, 0b00001),
        (8, I, One, 0b00011),
        (9, I, One, 0b00100),
        (10, I, One, 0b00101),
        (11, I, One, 0b00110),
        (12, I, One, 0b00111),
        (13, I, One, 0b01001),
        (14, I, One, 0b01010),
        (15, I, One, 0b01011),
        (16, I, One, 0b01100),
        (17, I, One, 0b01101),
        (18, I, One, 0b01110),
        (19, I, One, 0b01111),
        (20, I, One, 0b10000),
        (21, I, One, 0b10001),
        (22, I, One, 0b10010),
        (23, I, One, 0b10011),
        (24, I, One, 0b10100),
        (25, I, One, 0b10110),
        (26, I, One, 0b10111),
        (27, I, One, 0b11000),
        (28, I, One, 0b11001),
        (29, I, One, 0b11010),
        (30, I, One, 0b11011),
        (31, I, One, 0b11100),
        (32, I, One, 0b11101),
        (33, I, One, 0b11110),
        (34, I, One, 0b11111),
        (35, I, Two, 0b00),
        (36, I, Two, 0b01),
        (37, I, Two, 0b10),
        (38, I, Two, 0b11),
        (39, I, Three, 0),
        (40, I, Three, 1),
        (41, I, Four, 0b000),
        (42, I, Four, 0b001),
        (43, I, Four, 0b010),
        (44, I, Four, 0b011),
        (45, I, Four, 0b100),
        (46, I, Four, 0b101),
        (47, I, Four, 0b110),
        (48, I, Four, 0b111),
        (49, C, Four, 1),
        (50, C, One, 0b01),
        (51, C, One, 0b10),
        (52, C, One, 0b11),
        (53, C, Two, 0),
    ]
};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DenoisingPlan {
    space: DenoiseSpace,
    trajectory: Trajectory,
    sync_mask: Vec<bool>,
    init: InitPolicy,
}

impl DenoisingPlan {
    pub fn new(
        space: DenoiseSpace,
        trajectory: Trajectory,
        sync_mask: Vec<bool>,
        init: InitPolicy,
    ) -> Result<Self> {
        let slots = Self::slot_names(space, trajectory).len();
        if sync_mask.len() != slots {
            return Err(Error::Config(format!(
                "{space:?} trajectory {} has {slots} sync slot(s) but the mask has {}",
                trajectory.index(),
                sync_mask.len()
            )));
        }
        if space == DenoiseSpace::Canonical && init == InitPolicy::DirectInstance {
            return Err(Error::Config(
                "canonical denoising cannot start from direct instance noise".into(),
            ));
        }
        Ok(Self {
            space,
            trajectory,
            sync_mask,
            init,
        })
    }

    pub fn slot_names(space: DenoiseSpace, trajectory: Trajectory) -> &'static [&'static str] {
        match (space, trajectory) {
            (DenoiseSpace::Instance, Trajectory::One) => INSTANCE_T1_SLOTS,
            (DenoiseSpace::Instance, Trajectory::Two) => INSTANCE_T2_SLOTS,
            (DenoiseSpace::Instance, Trajectory::Three) => INSTANCE_T3_SLOTS,
            (DenoiseSpace::Instance, Trajectory::Four) => INSTANCE_T4_SLOTS,
            (DenoiseSpace::Canonical, Trajectory::One) => CANONICAL_T1_SLOTS,
            (DenoiseSpace::Canonical, Trajectory::Four) => CANONICAL_T4_SLOTS,
            (DenoiseSpace::Canonical, _) => &[],
        }
    }

    /// The plan realizing `case`. `init` is ignored for canonical cases.
    pub fn for_case(case: CaseId, init: InitPolicy) -> Result<Self> {
        let n = match case {
            CaseId::NoSync => {
                return Self::new(
                    DenoiseSpace::Instance,
                    Trajectory::One,
                    vec![false; 5],
                    init,
                )
            }
            CaseId::Case(n) => n,
        };
        let &(_, space, trajectory, bits) = CASE_TABLE
            .iter()
            .find(|row| row.0 == n)
            .ok_or_else(|| Error::Config(format!("case must be 1..=53 or nosync, got {n}")))?;
        let slots = Self::slot_names(space, trajectory).len();
        let mask = (0..slots).map(|k| bits >> k & 1 == 1).collect();
        let init = match space {
            DenoiseSpace::Canonical => InitPolicy::ProjectFromCanonical,
            DenoiseSpace::Instance => init,
        };
        Self::new(space, trajectory, mask, init)
    }

    /// The numbered case (or `NoSync`) this plan realizes, ignoring init.
    pub fn case(&self) -> Option<CaseId> {
        let bits = self
            .sync_mask
            .iter()
            .enumerate()
            .fold(0u8, |acc, (k, &on)| acc | (u8::from(on) << k));
        if self.space == DenoiseSpace::Instance && self.trajectory == Trajectory::One && bits == 0 {
            return Some(CaseId::NoSync);
        }
        CASE_TABLE
            .iter()
            .find(|row| row.1 == self.space && row.2 == self.trajectory && row.3 == bits)
            .map(|row| CaseId::Case(row.0))
    }

    /// All 32 masks of instance trajectory 1.
    pub fn trajectory_one_plans(init: InitPolicy) -> Vec<Self> {
        (0u8..32)
            .map(|bits| Self {
                space: DenoiseSpace::Instance,
                trajectory: Trajectory::One,
                sync_mask: (0..5).map(|k| bits >> k & 1 == 1).collect(),
                init,
            })
            .collect()
    }

    pub fn space(&self) -> DenoiseSpace {
        self.space
    }

    pub fn trajectory(&self) -> Trajectory {
        self.trajectory
    }

    pub fn sync_mask(&self) -> &[bool] {
        &self.sync_mask
    }

    pub fn init(&self) -> InitPolicy {
        self.init
    }

    fn slot(&self, k: usize) -> bool {
        self.sync_mask[k]
    }
}

/// Default initialization: direct instance noise when some operator reads
/// several planes, projection of a canonical sample otherwise.
pub fn default_init(ops: &[ProjectionOperator]) -> InitPolicy {
    if ops.iter().any(|op| op.planes() > 1) {
        InitPolicy::DirectInstance
    } else {
        InitPolicy::ProjectFromCanonical
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Trace {
    #[default]
    Off,
    /// Per-step variances only.
    Summary,
    /// Variances plus the canonical state after every step.
    Snapshots,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Timestep of the recorded state (`T`-side value first).
    pub t: usize,
    /// Population variance of each view's instance variable.
    pub view_variances: Vec<f64>,
    /// Canonical state after the step; uncovered pixels are zero.
    pub canonical: Option<CanonicalState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncRunResult {
    pub plan: DenoisingPlan,
    pub final_canonical: CanonicalState,
    pub final_instances: Vec<Field>,
    pub trace: Option<Vec<TraceStep>>,
}

pub struct SyncEngine<'a> {
    ops: &'a [ProjectionOperator],
    predictor: &'a dyn NoisePredictor,
    sched: &'a NoiseSchedule,
    kind: CanonicalKind,
    slab_shape: Vec<usize>,
    planes: usize,
    trace: Trace,
}

impl<'a> SyncEngine<'a> {
    pub fn new(
        ops: &'a [ProjectionOperator],
        predictor: &'a dyn NoisePredictor,
        sched: &'a NoiseSchedule,
    ) -> Result<Self> {
        let (kind, slab_shape, planes) = canonical_layout(ops)?;
        if let Some(shape) = predictor.input_shape() {
            for (i, op) in ops.iter().enumerate() {
                if op.instance_shape() != shape {
                    return Err(Error::Config(format!(
                        "operator {i} ({}) produces {:?} but the predictor expects {:?}",
                        op.label(),
                        op.instance_shape(),
                        shape
                    )));
                }
            }
        }
        Ok(Self {
            ops,
            predictor,
            sched,
            kind,
            slab_shape,
            planes,
            trace: Trace::Off,
        })
    }

    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.trace = trace;
        self
    }

    pub fn run_case(&self, case: CaseId, seed: u64) -> Result<SyncRunResult> {
        let plan = DenoisingPlan::for_case(case, default_init(self.ops))?;
        self.run_plan(&plan, seed)
    }

    pub fn run_plan(&self, plan: &DenoisingPlan, seed: u64) -> Result<SyncRunResult> {
        if plan.space == DenoiseSpace::Canonical && plan.init == InitPolicy::DirectInstance {
            return Err(Error::Config(
                "canonical denoising cannot start from direct instance noise".into(),
            ));
        }
        let mut trace = (self.trace != Trace::Off).then(Vec::new);
        let t_start = self.sched.steps().last().copied().unwrap_or(0);
        match plan.space {
            DenoiseSpace::Instance => {
                let mut w = self.init_instances(plan.init, seed)?;
                self.record_instances(&mut trace, t_start, &w)?;
                for (t, t_prev) in self.sched.transitions() {
                    w = self.instance_step(plan, &w, t, t_prev)?;
                    self.record_instances(&mut trace, t_prev, &w)?;
                }
                let final_canonical = unproject_aggregate(self.ops, &w)?;
                Ok(SyncRunResult {
                    plan: plan.clone(),
                    final_canonical,
                    final_instances: w,
                    trace,
                })
            }
            DenoiseSpace::Canonical => {
                let mut z = self.canonical_noise(seed)?;
                self.record_canonical(&mut trace, t_start, &z)?;
                for (t, t_prev) in self.sched.transitions() {
                    z = self.canonical_step(plan, &z, t, t_prev)?;
                    self.record_canonical(&mut trace, t_prev, &z)?;
                }
                let final_instances = project_all(self.ops, &z)?;
                Ok(SyncRunResult {
                    plan: plan.clone(),
                    final_canonical: z,
                    final_instances,
                    trace,
                })
            }
        }
    }

    fn canonical_noise(&self, seed: u64) -> Result<CanonicalState> {
        let len: usize = self.slab_shape.iter().product();
        let noise = gaussian_noise_stream(&[self.planes * len], seed, 0)?;
        CanonicalState::from_flat(self.kind, &self.slab_shape, self.planes, noise.values())
    }

    fn init_instances(&self, init: InitPolicy, seed: u64) -> Result<Vec<Field>> {
        match init {
            InitPolicy::ProjectFromCanonical => project_all(self.ops, &self.canonical_noise(seed)?),
            InitPolicy::DirectInstance => self
                .ops
                .iter()
                .enumerate()
                .map(|(i, op)| gaussian_noise_stream(op.instance_shape(), seed, i as u64 + 1))
                .collect(),
        }
    }

    fn record_instances(
        &self,
        trace: &mut Option<Vec<TraceStep>>,
        t: usize,
        w: &[Field],
    ) -> Result<()> {
        let Some(steps) = trace else { return Ok(()) };
        let canonical = if self.trace == Trace::Snapshots {
            Some(aggregate_lenient(&unproject_all(self.ops, w)?)?.0)
        } else {
            None
        };
        steps.push(TraceStep {
            t,
            view_variances: w.iter().map(Field::variance).collect(),
            canonical,
        });
        Ok(())
    }

    fn record_canonical(
        &self,
        trace: &mut Option<Vec<TraceStep>>,
        t: usize,
        z: &CanonicalState,
    ) -> Result<()> {
        let Some(steps) = trace else { return Ok(()) };
        let views = project_all(self.ops, z)?;
        steps.push(TraceStep {
            t,
            view_variances: views.iter().map(Field::variance).collect(),
            canonical: (self.trace == Trace::Snapshots).then(|| z.clone()),
        });
        Ok(())
    }

    fn predict_all(&self, views: &[Field], t: usize) -> Result<Vec<Field>> {
        views
            .par_iter()
            .map(|w| self.predictor.predict(w, t, self.sched))
            .collect()
    }

    fn sync(&self, views: &[Field]) -> Result<Vec<Field>> {
        project_all(self.ops, &self.merge(views)?)
    }

    fn merge(&self, views: &[Field]) -> Result<CanonicalState> {
        unproject_aggregate(self.ops, views)
    }

    fn tweedie_all(&self, x: &[Field], eps: &[Field], t: usize) -> Result<Vec<Field>> {
        x.iter()
            .zip(eps)
            .map(|(x, e)| tweedie(x, e, t, self.sched))
            .collect()
    }

    fn ddim_all(&self, x: &[Field], x0: &[Field], t: usize, t_prev: usize) -> Result<Vec<Field>> {
        x.iter()
            .zip(x0)
            .map(|(x, x0)| ddim_step(x, x0, t, t_prev, self.sched))
            .collect()
    }

    fn tweedie_z(
        &self,
        z: &CanonicalState,
        eps: &CanonicalState,
        t: usize,
    ) -> Result<CanonicalState> {
        z.zip_slabs(eps, |z, e| tweedie(z, e, t, self.sched))
    }

    fn ddim_z(
        &self,
        z: &CanonicalState,
        x0: &CanonicalState,
        t: usize,
        t_prev: usize,
    ) -> Result<CanonicalState> {
        z.zip_slabs(x0, |z, x0| ddim_step(z, x0, t, t_prev, self.sched))
    }

    fn instance_step(
        &self,
        plan: &DenoisingPlan,
        w: &[Field],
        t: usize,
        t_prev: usize,
    ) -> Result<Vec<Field>> {
        match plan.trajectory {
            Trajectory::One => self.instance_t1(plan, w, t, t_prev),
            Trajectory::Two => {
                let zbar = self.merge(w)?;
                let fz = project_all(self.ops, &zbar)?;
                let eps = self.predict_all(if plan.slot(0) { &fz } else { w }, t)?;
                let x0z = self.tweedie_z(&zbar, &self.merge(&eps)?, t)?;
                let x0 = project_all(self.ops, &x0z)?;
                self.ddim_all(if plan.slot(1) { &fz } else { w }, &x0, t, t_prev)
            }
            Trajectory::Three => {
                let zbar = self.merge(w)?;
                let eps = if plan.slot(0) {
                    self.predict_all(&project_all(self.ops, &zbar)?, t)?
                } else {
                    self.predict_all(w, t)?
                };
                let x0z = self.tweedie_z(&zbar, &self.merge(&eps)?, t)?;
                project_all(self.ops, &self.ddim_z(&zbar, &x0z, t, t_prev)?)
            }
            Trajectory::Four => {
                let zbar = self.merge(w)?;
                let fz = if plan.slot(0) || plan.slot(2) {
                    Some(project_all(self.ops, &zbar)?)
                } else {
                    None
                };
                let pick = |on: bool| match (&fz, on) {
                    (Some(f), true) => f.as_slice(),
                    _ => w,
                };
                let mut eps = self.predict_all(pick(plan.slot(0)), t)?;
                if plan.slot(1) {
                    eps = self.sync(&eps)?;
                }
                let x0 = self.tweedie_all(pick(plan.slot(2)), &eps, t)?;
                let x0z = self.merge(&x0)?;
                project_all(self.ops, &self.ddim_z(&zbar, &x0z, t, t_prev)?)
            }
        }
    }

    fn instance_t1(
        &self,
        plan: &DenoisingPlan,
        w: &[Field],
        t: usize,
        t_prev: usize,
    ) -> Result<Vec<Field>> {
        let (eps_in, eps_out, phi_in, phi_out, psi_in) = (
            plan.slot(0),
            plan.slot(1),
            plan.slot(2),
            plan.slot(3),
            plan.slot(4),
        );
        let state_sync = eps_in && phi_in && psi_in;
        let synced = if !state_sync && (eps_in || phi_in || psi_in) {
            Some(self.sync(w)?)
        } else {
            None
        };
        let pick = |on: bool| match (&synced, on) {
            (Some(f), true) => f.as_slice(),
            _ => w,
        };
        let mut eps = self.predict_all(pick(eps_in), t)?;
        if eps_out {
            eps = self.sync(&eps)?;
        }
        let mut x0 = self.tweedie_all(pick(phi_in), &eps, t)?;
        if phi_out {
            x0 = self.sync(&x0)?;
        }
        let next = self.ddim_all(pick(psi_in), &x0, t, t_prev)?;
        if state_sync {
            self.sync(&next)
        } else {
            Ok(next)
        }
    }

    fn canonical_step(
        &self,
        plan: &DenoisingPlan,
        z: &CanonicalState,
        t: usize,
        t_prev: usize,
    ) -> Result<CanonicalState> {
        let w = project_all(self.ops, z)?;
        let mut eps = self.predict_all(&w, t)?;
        match plan.trajectory {
            Trajectory::One => {
                if plan.slot(0) {
                    eps = self.sync(&eps)?;
                }
                let mut x0 = self.tweedie_all(&w, &eps, t)?;
                if plan.slot(1) {
                    x0 = self.sync(&x0)?;
                }
                self.merge(&self.ddim_all(&w, &x0, t, t_prev)?)
            }
            Trajectory::Two => {
                let x0z = self.tweedie_z(z, &self.merge(&eps)?, t)?;
                let x0 = project_all(self.ops, &x0z)?;
                self.merge(&self.ddim_all(&w, &x0, t, t_prev)?)
            }
            Trajectory::Three => {
                let x0z = self.tweedie_z(z, &self.merge(&eps)?, t)?;
                self.ddim_z(z, &x0z, t, t_prev)
            }
            Trajectory::Four => {
                if plan.slot(0) {
                    eps = self.sync(&eps)?;
                }
                let x0z = self.merge(&self.tweedie_all(&w, &eps, t)?)?;
                self.ddim_z(z, &x0z, t, t_prev)
            }
        }
    }
}

/// Runs a numbered case (or the unsynchronized baseline) with the default
/// initialization for `ops`.
pub fn run_case(
    case: CaseId,
    ops: &[ProjectionOperator],
    predictor: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<SyncRunResult> {
    SyncEngine::new(ops, predictor, sched)?.run_case(case, seed)
}

pub fn run_plan(
    plan: &DenoisingPlan,
    ops: &[ProjectionOperator],
    predictor: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<SyncRunResult> {
    SyncEngine::new(ops, predictor, sched)?.run_plan(plan, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyClass {
    ExactOneToOne,
    Approximate,
}

/// Residuals of the two idempotency conditions on random inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub trials: usize,
    /// `max |z - A({g_i(f_i(z))})|`; pixels no view covers count as reconstructed to 0.
    pub init_residual: f64,
    /// `max |A({g_i(w_i)}) - A({g_i(f_i(A({g_j(w_j)})))})|` over covered pixels.
    pub sync_residual: f64,
    pub uncovered_pixels: usize,
    pub max_multiplicity: usize,
    pub class: FamilyClass,
}

pub const EXACT_RESIDUAL: f64 = 1e-12;

pub fn verify_idempotency_conditions(
    ops: &[ProjectionOperator],
    trials: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if trials == 0 {
        return Err(Error::Contract("at least one trial is required".into()));
    }
    let (kind, slab_shape, planes) = canonical_layout(ops)?;
    let len: usize = slab_shape.iter().product();
    let mut init_residual: f64 = 0.0;
    let mut sync_residual: f64 = 0.0;
    let mut uncovered_pixels = 0;
    for trial in 0..trials as u64 {
        let base = trial << 16;
        let noise = gaussian_noise_stream(&[planes * len], seed, base)?;
        let z = CanonicalState::from_flat(kind, &slab_shape, planes, noise.values())?;
        let (back, mask) = aggregate_lenient(&unproject_all(ops, &project_all(ops, &z)?)?)?;
        uncovered_pixels = uncovered_pixels.max(mask.iter().filter(|m| !**m).count());
        init_residual = init_residual.max(z.linf_distance(&back)?);

        let w = ops
            .iter()
            .enumerate()
            .map(|(i, op)| gaussian_noise_stream(op.instance_shape(), seed, base + 1 + i as u64))
            .collect::<Result<Vec<_>>>()?;
        let (u, covered) = aggregate_lenient(&unproject_all(ops, &w)?)?;
        let (u2, _) = aggregate_lenient(&unproject_all(ops, &project_all(ops, &u)?)?)?;
        for (a, b) in u.slabs().iter().zip(u2.slabs()) {
            for p in (0..len).filter(|&p| covered[p]) {
                sync_residual = sync_residual.max((a.values()[p] - b.values()[p]).abs());
            }
        }
    }
    let max_multiplicity = ops
        .iter()
        .map(ProjectionOperator::max_pullback_multiplicity)
        .max()
        .unwrap_or(0);
    let class = if init_residual < EXACT_RESIDUAL && sync_residual < EXACT_RESIDUAL {
        FamilyClass::ExactOneToOne
    } else {
        FamilyClass::Approximate
    };
    Ok(ConditionReport {
        trials,
        init_residual,
        sync_residual,
        uncovered_pixels,
        max_multiplicity,
        class,
    })
}
