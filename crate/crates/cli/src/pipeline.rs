use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use quadretarget::kinematics::{uvm_retarget, GeneralizedCoord};
use quadretarget::metrics::{metrics_csv, recovery_rate, MetricsReport, TravelAxis};
use quadretarget::motion::{
    detect_contacts, load_heightmap, load_motion, motion_to_json, ContactFlags, Heightmap, Motion,
};
use quadretarget::robot::{load_robot_json, parse_urdf_subset, RobotModel};
use quadretarget::smr::{smr, SmrOutput};
use quadretarget::tmr::{history_csv, solution_motion, tmr, TmrResult, WarpedTargets};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// What a command produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
    pub reports: Vec<MetricsReport>,
    pub best_alpha: Option<Vec<f64>>,
    pub motion: Motion,
}

pub fn load_robot(path: &Path) -> Result<RobotModel, CliError> {
    let is_urdf = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("urdf"));
    if is_urdf {
        let text = std::fs::read_to_string(path).map_err(|source| {
            CliError::io("load robot", path)(quadretarget::Error::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        parse_urdf_subset(&text).map_err(CliError::io("load robot", path))
    } else {
        load_robot_json(path).map_err(CliError::io("load robot", path))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha256(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| {
            CliError::io("write", dir)(quadretarget::Error::Io {
                path: dir.to_path_buf(),
                source,
            })
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| {
            CliError::io("write", &path)(quadretarget::Error::Io {
                path: path.clone(),
                source,
            })
        })?;
        self.files.insert(name.to_string(), sha256(contents.as_bytes()));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Writes the manifest last: config, its hash, seed, versions, input and
    /// output digests. Contains nothing run-specific beyond those, so equal
    /// runs give equal manifests.
    fn finish(
        mut self,
        command: &str,
        cfg: &RunConfig,
        result: serde_json::Value,
    ) -> Result<BTreeMap<String, String>, CliError> {
        let config = serde_json::to_value(cfg).map_err(|e| CliError::config(e.to_string()))?;
        let config_hash = sha256(config.to_string().as_bytes());
        let mut inputs = BTreeMap::new();
        for (name, path) in [
            ("robot", &cfg.robot),
            ("source_robot", &cfg.source_robot),
            ("motion", &cfg.motion),
            ("reference", &cfg.reference),
            ("terrain", &cfg.terrain),
        ] {
            if let Some(p) = path {
                if let Ok(bytes) = std::fs::read(p) {
                    inputs.insert(name, sha256(&bytes));
                }
            }
        }
        let manifest = json!({
            "command": command,
            "versions": {"quadretarget": quadretarget::VERSION, "cli": env!("CARGO_PKG_VERSION")},
            "seed": cfg.seed,
            "config_sha256": config_hash,
            "config": config,
            "inputs": inputs,
            "outputs": self.files.clone(),
            "result": result,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(self.files)
    }
}

struct Inputs {
    model: RobotModel,
    source_model: Option<RobotModel>,
    motion: Motion,
    terrain: Heightmap,
    schedule: Vec<ContactFlags>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    cfg.validate()?;
    let robot = cfg.require(&cfg.robot, "robot")?;
    let motion_path = cfg.require(&cfg.motion, "motion")?;
    let model = load_robot(robot)?;
    let source_model = cfg.source_robot.as_deref().map(load_robot).transpose()?;
    let motion = load_motion(motion_path).map_err(CliError::io("load motion", motion_path))?;
    let terrain = match &cfg.terrain {
        Some(p) => load_heightmap(p).map_err(CliError::io("load terrain", p))?,
        None => Heightmap::flat(0.0),
    };
    let schedule = schedule_of(&motion, cfg, &terrain)?;
    Ok(Inputs {
        model,
        source_model,
        motion,
        terrain,
        schedule,
    })
}

fn schedule_of(motion: &Motion, cfg: &RunConfig, terrain: &Heightmap) -> Result<Vec<ContactFlags>, CliError> {
    match &motion.contacts {
        Some(c) => Ok(c.clone()),
        None => detect_contacts(motion, &cfg.contacts, Some(terrain)).map_err(CliError::stage("contacts")),
    }
}

fn label(path: &Option<PathBuf>) -> String {
    path.as_deref()
        .and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Base stripping and morphology mapping ahead of SMR.
fn prepare(inp: &Inputs, strip_base: bool) -> Result<Motion, CliError> {
    let mut m = if strip_base {
        inp.motion.without_base()
    } else {
        inp.motion.clone()
    };
    if let Some(src) = &inp.source_model {
        m = uvm_retarget(&m, src, &inp.model).map_err(CliError::stage("uvm"))?;
    }
    Ok(m)
}

fn run_smr(cfg: &RunConfig, inp: &Inputs, motion: &Motion) -> Result<SmrOutput, CliError> {
    let use_base = motion.base_pose.is_some();
    smr(&inp.model, motion, &inp.schedule, &inp.terrain, &cfg.smr, use_base).map_err(CliError::stage("smr"))
}

fn report(
    cfg: &RunConfig,
    method: &str,
    inp: &Inputs,
    result: &Motion,
    result_schedule: &[ContactFlags],
) -> Result<MetricsReport, CliError> {
    let recomputed = detect_contacts(result, &cfg.contacts, Some(&inp.terrain)).map_err(CliError::stage("metrics"))?;
    MetricsReport::evaluate(
        (&label(&cfg.motion), &label(&cfg.robot), method),
        &inp.motion,
        &inp.schedule,
        result,
        result_schedule,
        &recomputed,
    )
    .map_err(CliError::stage("metrics"))
}

fn smr_result(out: &SmrOutput) -> serde_json::Value {
    json!({
        "frames": out.motion.num_frames(),
        "joint_clamps": out.joint_clamps,
        "capped_frames": out.capped_frames,
        "ik_residual_frame0": out.ik_residual_frame0,
    })
}

/// SMR only.
pub fn cmd_smr(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let inp = load_inputs(cfg)?;
    let working = prepare(&inp, cfg.no_base)?;
    let out = run_smr(cfg, &inp, &working)?;
    let mut files = Outputs::new(&cfg.out)?;
    files.write(
        "motion.json",
        &motion_to_json(&out.motion).map_err(CliError::stage("write"))?,
    )?;
    let mut reports = Vec::new();
    if cfg.metrics {
        reports.push(report(cfg, "smr", &inp, &out.motion, &out.contacts)?);
        files.write("metrics.csv", &metrics_csv(&reports))?;
    }
    let files = files.finish("smr", cfg, json!({ "smr": smr_result(&out) }))?;
    Ok(RunSummary {
        out_dir: cfg.out.clone(),
        files,
        reports,
        best_alpha: None,
        motion: out.motion,
    })
}

fn initial_config(model: &RobotModel, motion: &Motion) -> Result<GeneralizedCoord, CliError> {
    let base = motion.base_pose.as_ref().map(|b| b[0]);
    let joints = motion.joint_angles.as_ref().map(|j| j[0].clone());
    match (base, joints) {
        (Some(base), Some(j)) if j.len() == model.num_dofs() => Ok(GeneralizedCoord::new(base, DVector::from_vec(j))),
        _ => Err(CliError::config(
            "tmr input needs base poses and joint angles for the target robot (an smr output)",
        )),
    }
}

struct TmrStage {
    result: TmrResult,
    motion: Motion,
    ik_residual: f64,
}

fn run_tmr(cfg: &RunConfig, model: &RobotModel, motion: &Motion) -> Result<TmrStage, CliError> {
    let q0 = initial_config(model, motion)?;
    let result = tmr(motion, model, &cfg.tmr_options()).map_err(CliError::stage("tmr"))?;
    let targets = WarpedTargets::new(model, motion, &result.best_alpha).map_err(CliError::stage("tmr"))?;
    let (out, ik_residual) = solution_motion(model, &result.best.states(), &targets.contacts, targets.dt, &q0);
    Ok(TmrStage {
        result,
        motion: out,
        ik_residual,
    })
}

fn write_tmr(files: &mut Outputs, stage: &TmrStage) -> Result<serde_json::Value, CliError> {
    let best = &stage.result.best;
    files.write(
        "motion.json",
        &motion_to_json(&stage.motion).map_err(CliError::stage("write"))?,
    )?;
    files.write_json(
        "solution.json",
        &json!({
            "alpha": best.alphas,
            "dt": best.dt,
            "score": best.score,
            "parts": best.parts,
            "max_violation": best.max_violation,
            "solution": best.solution,
        }),
    )?;
    files.write("tmr_history.csv", &history_csv(&stage.result.history))?;
    Ok(json!({
        "alpha": best.alphas,
        "score": best.score,
        "evaluations": stage.result.history.len(),
        "converged": best.converged,
        "foot_ik_residual": stage.ik_residual,
    }))
}

/// TMR on a motion that already went through SMR for this robot.
pub fn cmd_tmr(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let inp = load_inputs(cfg)?;
    let mut motion = inp.motion.clone();
    motion.contacts = Some(inp.schedule.clone());
    let stage = run_tmr(cfg, &inp.model, &motion)?;
    let mut files = Outputs::new(&cfg.out)?;
    let result = write_tmr(&mut files, &stage)?;
    let mut reports = Vec::new();
    if cfg.metrics {
        let schedule = stage.motion.contacts.clone().unwrap_or_default();
        reports.push(report(cfg, "tmr", &inp, &stage.motion, &schedule)?);
        files.write("metrics.csv", &metrics_csv(&reports))?;
    }
    let files = files.finish("tmr", cfg, json!({ "tmr": result }))?;
    Ok(RunSummary {
        out_dir: cfg.out.clone(),
        files,
        reports,
        best_alpha: Some(stage.result.best_alpha.alphas),
        motion: stage.motion,
    })
}

/// Full pipeline: optional unit-vector mapping, SMR, then TMR.
pub fn cmd_retarget(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let inp = load_inputs(cfg)?;
    let working = prepare(&inp, cfg.no_base)?;
    let spatial = run_smr(cfg, &inp, &working)?;
    let stage = run_tmr(cfg, &inp.model, &spatial.motion)?;
    let mut files = Outputs::new(&cfg.out)?;
    files.write(
        "smr_motion.json",
        &motion_to_json(&spatial.motion).map_err(CliError::stage("write"))?,
    )?;
    let tmr_result = write_tmr(&mut files, &stage)?;
    let mut reports = Vec::new();
    if cfg.metrics {
        reports.push(report(cfg, "smr", &inp, &spatial.motion, &spatial.contacts)?);
        let schedule = stage.motion.contacts.clone().unwrap_or_default();
        reports.push(report(cfg, "stmr", &inp, &stage.motion, &schedule)?);
        files.write("metrics.csv", &metrics_csv(&reports))?;
    }
    let files = files.finish(
        "retarget",
        cfg,
        json!({ "smr": smr_result(&spatial), "tmr": tmr_result }),
    )?;
    Ok(RunSummary {
        out_dir: cfg.out.clone(),
        files,
        reports,
        best_alpha: Some(stage.result.best_alpha.alphas),
        motion: stage.motion,
    })
}

/// Drops the base pose and lets SMR rebuild it from the feet alone. When
/// the input had a base, the report carries the recovery rate.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let inp = load_inputs(cfg)?;
    let working = prepare(&inp, true)?;
    let out = run_smr(cfg, &inp, &working)?;
    let mut files = Outputs::new(&cfg.out)?;
    files.write(
        "motion.json",
        &motion_to_json(&out.motion).map_err(CliError::stage("write"))?,
    )?;
    let mut rep = report(cfg, "reconstruct", &inp, &out.motion, &out.contacts)?;
    if inp.motion.base_pose.is_some() {
        rep.recovery_rate_pct = Some(
            recovery_rate(&inp.motion, &out.motion, TravelAxis::Longitudinal).map_err(CliError::stage("metrics"))?,
        );
    }
    let reports = vec![rep];
    files.write("metrics.csv", &metrics_csv(&reports))?;
    let files = files.finish(
        "reconstruct",
        cfg,
        json!({
            "smr": smr_result(&out),
            "travel_distance_m": reports[0].travel_distance_m,
            "recovery_rate_pct": reports[0].recovery_rate_pct,
        }),
    )?;
    Ok(RunSummary {
        out_dir: cfg.out.clone(),
        files,
        reports,
        best_alpha: None,
        motion: out.motion,
    })
}

/// Compares `motion` against `reference`.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let motion_path = cfg.require(&cfg.motion, "motion")?;
    let reference_path = cfg.require(&cfg.reference, "reference")?;
    let motion = load_motion(motion_path).map_err(CliError::io("load motion", motion_path))?;
    let reference = load_motion(reference_path).map_err(CliError::io("load reference", reference_path))?;
    let terrain = match &cfg.terrain {
        Some(p) => load_heightmap(p).map_err(CliError::io("load terrain", p))?,
        None => Heightmap::flat(0.0),
    };
    let schedule = schedule_of(&motion, cfg, &terrain)?;
    let ref_schedule = schedule_of(&reference, cfg, &terrain)?;
    let recomputed = detect_contacts(&motion, &cfg.contacts, Some(&terrain)).map_err(CliError::stage("metrics"))?;
    let mut rep = MetricsReport::evaluate(
        (&label(&cfg.motion), &label(&cfg.robot), "metrics"),
        &reference,
        &ref_schedule,
        &motion,
        &schedule,
        &recomputed,
    )
    .map_err(CliError::stage("metrics"))?;
    if reference.base_pose.is_some() && motion.base_pose.is_some() {
        rep.recovery_rate_pct = recovery_rate(&reference, &motion, TravelAxis::Longitudinal).ok();
    }
    let reports = vec![rep];
    let mut files = Outputs::new(&cfg.out)?;
    files.write("metrics.csv", &metrics_csv(&reports))?;
    let files = files.finish("metrics", cfg, json!({}))?;
    Ok(RunSummary {
        out_dir: cfg.out.clone(),
        files,
        reports,
        best_alpha: None,
        motion,
    })
}

/// Synthetic inputs for trying the pipeline without data.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    /// trot, pace, bound, walk, fast-trot, hop or bounce.
    pub kind: String,
    pub scale: f64,
    pub heavier: f64,
    pub weaker: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            kind: "trot".into(),
            scale: 1.0,
            heavier: 1.0,
            weaker: 1.0,
        }
    }
}

pub fn cmd_fixture(spec: &FixtureSpec, out: &Path) -> Result<RunSummary, CliError> {
    use quadretarget::fixtures::{
        bounce_motion, gait_motion, hop_motion, BounceParams, GaitParams, HopParams, QuadrupedDims,
    };
    for (what, v) in [
        ("scale", spec.scale),
        ("heavier", spec.heavier),
        ("weaker", spec.weaker),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::config(format!("--{what} must be positive, got {v}")));
        }
    }
    let mut dims = QuadrupedDims::default();
    if spec.scale != 1.0 {
        dims = dims.scaled(spec.scale);
    }
    if spec.heavier != 1.0 {
        dims = dims.heavier(spec.heavier);
    }
    if spec.weaker != 1.0 {
        dims = dims.weaker(spec.weaker);
    }
    let model = dims.model();
    let motion = match spec.kind.as_str() {
        "hop" => hop_motion(&model, &HopParams::default()),
        "bounce" => bounce_motion(&model, &BounceParams::default()),
        "fast-trot" => gait_motion(&model, &GaitParams::fast_trot()),
        other => {
            let gait = other.parse().map_err(|_| {
                CliError::config(format!(
                    "unknown fixture {other:?} (trot, pace, bound, walk, fast-trot, hop, bounce)"
                ))
            })?;
            gait_motion(&model, &GaitParams::slow(gait))
        }
    }
    .map_err(CliError::stage("fixture"))?;
    let mut files = Outputs::new(out)?;
    files.write("robot.json", &quadretarget::robot::robot_to_json(&model))?;
    files.write(
        "motion.json",
        &motion_to_json(&motion).map_err(CliError::stage("write"))?,
    )?;
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        files: files.files,
        reports: Vec::new(),
        best_alpha: None,
        motion,
    })
}
