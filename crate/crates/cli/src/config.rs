//! Experiment configuration: a TOML file with unknown keys rejected.
//!
//! Parsing only checks syntax and types; [`ExperimentConfig::build`] checks
//! every reference and reports the first problem with its key path.

use std::path::{Path, PathBuf};

use diffsync::sync::default_init;
use diffsync::{
    CaseId, DenoiseSpace, DenoisingPlan, Field, GaussianMixture, InitPolicy, MixtureLayout,
    NoiseSchedule, ProjectionOperator, Trajectory,
};
use serde::Deserialize;

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Checked<T> = Result<T, ConfigError>;

fn err<T>(path: &str, msg: impl std::fmt::Display) -> Checked<T> {
    Err(ConfigError(format!("{path}: {msg}")))
}

fn required<'a, T>(value: &'a Option<T>, path: &str) -> Checked<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| ConfigError(format!("{path}: missing required field")))
}

fn lib<T>(path: &str, r: diffsync::Result<T>) -> Checked<T> {
    r.map_err(|e| ConfigError(format!("{path}: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub trace: Option<bool>,
    /// Data range mapped onto 0..=255 in PGM images.
    pub range: Option<[f64; 2]>,
    pub schedule: Option<ScheduleSpec>,
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
    pub plan: Option<PlanSpec>,
    pub verify: Option<VerifySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub train_steps: Option<usize>,
    pub num_steps: Option<usize>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub layout: Option<String>,
    pub weights: Option<Vec<f64>>,
    /// One constant mean per component.
    pub means: Option<Vec<f64>>,
    /// One flat per-pixel mean pattern per component.
    pub patterns: Option<Vec<Vec<f64>>>,
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: Option<String>,
    pub size: Option<Vec<usize>>,
    pub canvas: Option<Vec<usize>>,
    pub origin: Option<[usize; 2]>,
    pub stride: Option<[usize; 2]>,
    pub transform: Option<String>,
    pub seed: Option<u64>,
    pub angle: Option<f64>,
    pub count: Option<usize>,
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub include_identity: Option<bool>,
    pub unprojection: Option<String>,
    pub planes: Option<usize>,
    pub plane_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub case: Option<toml::Value>,
    pub space: Option<String>,
    pub trajectory: Option<u8>,
    pub sync_mask: Option<Vec<bool>>,
    pub init: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub family: Option<String>,
    pub trials: Option<usize>,
}

/// A validated experiment ready to run.
pub struct Experiment {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub trace: bool,
    pub range: [f64; 2],
    pub sched: NoiseSchedule,
    pub prior: GaussianMixture,
    pub ops: Vec<ProjectionOperator>,
    pub plan: DenoisingPlan,
    pub case: Option<CaseId>,
    pub declared_one_to_one: bool,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(Into::into)
    }

    pub fn parse(text: &str) -> Checked<Self> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn build(&self) -> Checked<Experiment> {
        let sched = self.build_schedule()?;
        if self.operators.is_empty() {
            return err("operators", "at least one operator is required");
        }
        let mut ops = Vec::new();
        for (i, spec) in self.operators.iter().enumerate() {
            ops.extend(spec.build(&format!("operators[{i}]"))?);
        }
        lib("operators", diffsync::spaces::canonical_layout(&ops))?;
        let shape = ops[0].instance_shape().to_vec();
        for (i, op) in ops.iter().enumerate() {
            if op.instance_shape() != shape.as_slice() {
                return err(
                    "operators",
                    format!(
                        "all views must share one instance shape; view {i} is {:?}, view 0 is {:?}",
                        op.instance_shape(),
                        shape
                    ),
                );
            }
        }
        let prior = self.build_prior(&shape)?;
        let (plan, case) = self.build_plan(&ops)?;
        let (declared_one_to_one, trials) = match &self.verify {
            None => (false, 4),
            Some(v) => {
                let one = match v.family.as_deref() {
                    None | Some("any") => false,
                    Some("one_to_one") => true,
                    Some(other) => {
                        return err(
                            "verify.family",
                            format!("expected one_to_one or any, got `{other}`"),
                        )
                    }
                };
                let trials = v.trials.unwrap_or(4);
                if trials == 0 {
                    return err("verify.trials", "must be at least 1");
                }
                (one, trials)
            }
        };
        let range = self.range.unwrap_or([-3.0, 3.0]);
        if !(range[0] < range[1] && range[0].is_finite() && range[1].is_finite()) {
            return err("range", "expected [low, high] with low < high");
        }
        Ok(Experiment {
            seed: self.seed.unwrap_or(0),
            output: self.output.clone(),
            trace: self.trace.unwrap_or(false),
            range,
            sched,
            prior,
            ops,
            plan,
            case,
            declared_one_to_one,
            trials,
        })
    }

    fn build_schedule(&self) -> Checked<NoiseSchedule> {
        let s = required(&self.schedule, "schedule")?;
        let train = *required(&s.train_steps, "schedule.train_steps")?;
        let steps = *required(&s.num_steps, "schedule.num_steps")?;
        let lo = s.beta_min.unwrap_or(1e-4);
        let hi = s.beta_max.unwrap_or(0.02);
        lib("schedule", NoiseSchedule::linear(train, steps, lo, hi))
    }

    fn build_prior(&self, shape: &[usize]) -> Checked<GaussianMixture> {
        let p = required(&self.prior, "prior")?;
        let layout = match p.layout.as_deref() {
            None | Some("pixelwise") => MixtureLayout::Pixelwise,
            Some("joint") => MixtureLayout::Joint,
            Some(other) => {
                return err(
                    "prior.layout",
                    format!("expected pixelwise or joint, got `{other}`"),
                )
            }
        };
        let weights = required(&p.weights, "prior.weights")?.clone();
        let variances = required(&p.variances, "prior.variances")?.clone();
        let n: usize = shape.iter().product();
        let means = match (&p.means, &p.patterns) {
            (Some(_), Some(_)) => return err("prior", "give either means or patterns, not both"),
            (None, None) => return err("prior.means", "missing required field"),
            (Some(c), None) => c
                .iter()
                .map(|&m| Field::filled(shape, m))
                .collect::<diffsync::Result<Vec<_>>>()
                .map_err(|e| ConfigError(format!("prior.means: {e}")))?,
            (None, Some(pats)) => {
                let mut fields = Vec::new();
                for (k, pat) in pats.iter().enumerate() {
                    if pat.len() != n {
                        return err(
                            &format!("prior.patterns[{k}]"),
                            format!(
                                "expected {n} values for instance shape {shape:?}, got {}",
                                pat.len()
                            ),
                        );
                    }
                    fields.push(lib(
                        &format!("prior.patterns[{k}]"),
                        Field::new(shape.to_vec(), pat.clone()),
                    )?);
                }
                fields
            }
        };
        lib(
            "prior",
            GaussianMixture::new(weights, means, variances, layout),
        )
    }

    fn build_plan(&self, ops: &[ProjectionOperator]) -> Checked<(DenoisingPlan, Option<CaseId>)> {
        let p = required(&self.plan, "plan")?;
        let init = match p.init.as_deref() {
            None => None,
            Some("project_from_canonical") => Some(InitPolicy::ProjectFromCanonical),
            Some("direct_instance") => Some(InitPolicy::DirectInstance),
            Some(other) => {
                return err(
                    "plan.init",
                    format!("expected project_from_canonical or direct_instance, got `{other}`"),
                )
            }
        };
        if let Some(case) = &p.case {
            if p.space.is_some() || p.trajectory.is_some() || p.sync_mask.is_some() {
                return err(
                    "plan",
                    "give either case or space/trajectory/sync_mask, not both",
                );
            }
            let id = parse_case_value(case).map_err(|m| ConfigError(format!("plan.case: {m}")))?;
            let plan = lib(
                "plan",
                DenoisingPlan::for_case(id, init.unwrap_or_else(|| default_init(ops))),
            )?;
            if init == Some(InitPolicy::DirectInstance) && plan.space() == DenoiseSpace::Canonical {
                return err("plan.init", "canonical cases cannot use direct_instance");
            }
            return Ok((plan, Some(id)));
        }
        let space = match required(&p.space, "plan.space")?.as_str() {
            "instance" => DenoiseSpace::Instance,
            "canonical" => DenoiseSpace::Canonical,
            other => {
                return err(
                    "plan.space",
                    format!("expected instance or canonical, got `{other}`"),
                )
            }
        };
        let trajectory = lib(
            "plan.trajectory",
            Trajectory::from_index(*required(&p.trajectory, "plan.trajectory")?),
        )?;
        let mask = p.sync_mask.clone().unwrap_or_default();
        let init = init.unwrap_or(match space {
            DenoiseSpace::Canonical => InitPolicy::ProjectFromCanonical,
            DenoiseSpace::Instance => default_init(ops),
        });
        let plan = lib("plan", DenoisingPlan::new(space, trajectory, mask, init))?;
        let case = plan.case();
        Ok((plan, case))
    }
}

pub fn parse_case_value(v: &toml::Value) -> Result<CaseId, String> {
    match v {
        toml::Value::Integer(n) => CaseId::parse(&n.to_string()).map_err(|e| e.to_string()),
        toml::Value::String(s) => CaseId::parse(s).map_err(|e| e.to_string()),
        other => Err(format!("expected a case number or \"nosync\", got {other}")),
    }
}

fn dims(path: &str, v: &[usize]) -> Checked<()> {
    if v.len() != 2 || v.contains(&0) {
        return err(path, format!("expected two positive dimensions, got {v:?}"));
    }
    Ok(())
}

impl OperatorSpec {
    fn build(&self, path: &str) -> Checked<Vec<ProjectionOperator>> {
        let kind = required(&self.kind, &format!("{path}.kind"))?;
        let size_path = format!("{path}.size");
        let mut ops = match kind.as_str() {
            "permutation" => {
                let size = required(&self.size, &size_path)?;
                dims(&size_path, size)?;
                let op = match self.transform.as_deref().unwrap_or("identity") {
                    "identity" => ProjectionOperator::identity(size),
                    "flip_vertical" => ProjectionOperator::flip_vertical(size),
                    "flip_horizontal" => ProjectionOperator::flip_horizontal(size),
                    "transpose" => ProjectionOperator::transpose(size),
                    "rot90" => ProjectionOperator::rotate90(size),
                    "random" => {
                        ProjectionOperator::random_permutation(size, self.seed.unwrap_or(0))
                    }
                    other => {
                        return err(
                            &format!("{path}.transform"),
                            format!("unknown transform `{other}`"),
                        )
                    }
                };
                vec![lib(path, op)?]
            }
            "crop" => {
                let size = required(&self.size, &size_path)?;
                dims(&size_path, size)?;
                let canvas = required(&self.canvas, &format!("{path}.canvas"))?;
                dims(&format!("{path}.canvas"), canvas)?;
                let origin = *required(&self.origin, &format!("{path}.origin"))?;
                vec![lib(path, ProjectionOperator::crop(canvas, size, origin))?]
            }
            "crop_tiling" => {
                let size = required(&self.size, &size_path)?;
                dims(&size_path, size)?;
                let canvas = required(&self.canvas, &format!("{path}.canvas"))?;
                dims(&format!("{path}.canvas"), canvas)?;
                let stride = *required(&self.stride, &format!("{path}.stride"))?;
                lib(path, ProjectionOperator::crop_tiling(canvas, size, stride))?
            }
            "inner_rotation" => {
                let size = required(&self.size, &size_path)?;
                dims(&size_path, size)?;
                let angle = *required(&self.angle, &format!("{path}.angle"))?;
                vec![self.rotation(path, size, angle)?]
            }
            "rotation_sweep" => {
                let size = required(&self.size, &size_path)?;
                dims(&size_path, size)?;
                let count = self.count.unwrap_or(14);
                let (start, end) = (self.start.unwrap_or(45.0), self.end.unwrap_or(175.0));
                if count == 0 {
                    return err(&format!("{path}.count"), "must be at least 1");
                }
                let mut ops = Vec::new();
                if self.include_identity.unwrap_or(true) {
                    ops.push(lib(path, ProjectionOperator::identity(size))?);
                }
                for k in 0..count {
                    let angle = if count == 1 {
                        start
                    } else {
                        start + (end - start) * k as f64 / (count - 1) as f64
                    };
                    ops.push(self.rotation(path, size, angle)?);
                }
                ops
            }
            other => {
                return err(
                    &format!("{path}.kind"),
                    format!("unknown operator kind `{other}`"),
                )
            }
        };
        if self.unprojection.is_some()
            && !matches!(kind.as_str(), "inner_rotation" | "rotation_sweep")
        {
            return err(
                &format!("{path}.unprojection"),
                "only rotations accept an unprojection mode",
            );
        }
        match (self.planes, &self.plane_weights) {
            (Some(_), Some(_)) => {
                return err(path, "give either planes or plane_weights, not both")
            }
            (Some(m), None) => {
                ops = ops
                    .into_iter()
                    .map(|op| {
                        lib(
                            &format!("{path}.planes"),
                            ProjectionOperator::multiplane(m, op),
                        )
                    })
                    .collect::<Checked<_>>()?;
            }
            (None, Some(w)) => {
                ops = ops
                    .into_iter()
                    .map(|op| {
                        lib(
                            &format!("{path}.plane_weights"),
                            ProjectionOperator::multiplane_weighted(w.clone(), op),
                        )
                    })
                    .collect::<Checked<_>>()?;
            }
            (None, None) => {}
        }
        Ok(ops)
    }

    fn rotation(&self, path: &str, size: &[usize], angle: f64) -> Checked<ProjectionOperator> {
        let op = lib(path, ProjectionOperator::inner_rotation(size, angle))?;
        match self.unprojection.as_deref() {
            None | Some("scatter_mean") => Ok(op),
            Some("inverse_nearest") => lib(path, op.with_inverse_nearest_unprojection()),
            Some(other) => err(
                &format!("{path}.unprojection"),
                format!("expected scatter_mean or inverse_nearest, got `{other}`"),
            ),
        }
    }
}
