//! Circuit evaluators behind the optimizer: built-in analytic mock models
//! shaped after four benchmark circuits, and a file-based adapter for an
//! external simulator command.
//!
//! The mock models are smooth first-order surrogates (square-law
//! transconductance, Early-voltage output resistance, single-pole phase
//! margin, capacitive switching power). They exist to exercise the
//! optimizer and the relative guided-vs-unguided behavior at desk scale;
//! they are NOT models of any silicon process. Coefficients live in JSON
//! data files so tests can perturb them; each file carries a certified
//! feasible point for its shipped spec.

use crate::par;
use crate::score::Measurement;
use crate::space::{DesignSpace, VarSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("point is outside the design space: {0}")]
    OutOfBounds(String),
    #[error("evaluator failure: {0}")]
    Failure(String),
    #[error("mock model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Space(#[from] crate::space::SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    InitSample,
    TrustRegion,
    AdvisorSuggested,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignPoint {
    pub values: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub measurement: Measurement,
    pub wall_time: f64,
    pub evaluator_id: String,
}

pub trait Evaluator: Send + Sync {
    fn id(&self) -> &str;
    fn space(&self) -> &DesignSpace;
    fn metric_names(&self) -> Vec<String>;
    fn run(&self, values: &BTreeMap<String, f64>) -> Result<Measurement, EvalError>;
}

/// Evaluate one point, counting it toward the sample budget exactly once.
/// The bounds precondition is checked before any evaluation.
pub fn evaluate(
    point: &DesignPoint,
    backend: &dyn Evaluator,
    counter: &AtomicU64,
) -> Result<EvalResult, EvalError> {
    if !backend.space().in_bounds(&point.values) {
        return Err(EvalError::OutOfBounds(format!(
            "point does not satisfy the bounds of `{}`",
            backend.id()
        )));
    }
    counter.fetch_add(1, Ordering::SeqCst);
    let start = Instant::now();
    let measurement = backend.run(&point.values)?;
    Ok(EvalResult {
        measurement,
        wall_time: start.elapsed().as_secs_f64(),
        evaluator_id: backend.id().to_string(),
    })
}

/// Batch evaluation; parallel over points with the `parallel` feature. An
/// evaluator failure surfaces as an all-failed measurement, not an abort.
pub fn evaluate_batch(
    points: &[DesignPoint],
    backend: &dyn Evaluator,
    counter: &AtomicU64,
) -> Vec<EvalResult> {
    let names = backend.metric_names();
    par::map_collect(points, |p| match evaluate(p, backend, counter) {
        Ok(result) => result,
        Err(err) => {
            log::warn!("evaluation failed: {err}");
            EvalResult {
                measurement: Measurement::all_failed(&names),
                wall_time: 0.0,
                evaluator_id: backend.id().to_string(),
            }
        }
    })
}

/// Sequential reference path for the benchmark suite.
pub fn evaluate_batch_seq(
    points: &[DesignPoint],
    backend: &dyn Evaluator,
    counter: &AtomicU64,
) -> Vec<EvalResult> {
    let names = backend.metric_names();
    par::map_collect_seq(points, |p| match evaluate(p, backend, counter) {
        Ok(result) => result,
        Err(err) => {
            log::warn!("evaluation failed: {err}");
            EvalResult {
                measurement: Measurement::all_failed(&names),
                wall_time: 0.0,
                evaluator_id: backend.id().to_string(),
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Mock models

#[derive(Debug, Clone, Deserialize)]
pub struct MockModelFile {
    pub version: u32,
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub description: String,
    pub vars: Vec<VarSpec>,
    pub coeffs: BTreeMap<String, f64>,
    pub certified_point: BTreeMap<String, f64>,
}

pub struct MockModel {
    name: String,
    kind: ModelKind,
    space: DesignSpace,
    coeffs: BTreeMap<String, f64>,
    certified: BTreeMap<String, f64>,
    description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModelKind {
    TwoStageOta,
    FoldedCascodeOta,
    StrongarmLatch,
    Ldo,
}

const MODEL_OTA: &str = include_str!("../data/models/ota.json");
const MODEL_FCOTA: &str = include_str!("../data/models/fcota.json");
const MODEL_SACMP: &str = include_str!("../data/models/sacmp.json");
const MODEL_LDO: &str = include_str!("../data/models/ldo.json");

/// The four built-in analytic models.
pub fn mock_models() -> Vec<MockModel> {
    [MODEL_OTA, MODEL_FCOTA, MODEL_SACMP, MODEL_LDO]
        .iter()
        .map(|json| MockModel::from_json(json).expect("builtin model is valid"))
        .collect()
}

pub fn mock_model(name: &str) -> Result<MockModel, EvalError> {
    mock_models()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| EvalError::BadModel(format!("no mock model named `{name}`")))
}

impl MockModel {
    pub fn from_json(json: &str) -> Result<MockModel, EvalError> {
        let file: MockModelFile =
            serde_json::from_str(json).map_err(|e| EvalError::BadModel(e.to_string()))?;
        if file.version != 1 {
            return Err(EvalError::BadModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let kind = match file.kind.as_str() {
            "two_stage_ota" => ModelKind::TwoStageOta,
            "folded_cascode_ota" => ModelKind::FoldedCascodeOta,
            "strongarm_latch" => ModelKind::StrongarmLatch,
            "ldo" => ModelKind::Ldo,
            other => return Err(EvalError::BadModel(format!("unknown kind `{other}`"))),
        };
        let space = DesignSpace::new(file.vars)?;
        if !space.in_bounds(&file.certified_point) {
            return Err(EvalError::BadModel(format!(
                "{}: certified point is out of bounds",
                file.name
            )));
        }
        Ok(MockModel {
            name: file.name,
            kind,
            space,
            coeffs: file.coeffs,
            certified: file.certified_point,
            description: file.description,
        })
    }

    pub fn certified_point(&self) -> &BTreeMap<String, f64> {
        &self.certified
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

struct Ctx<'a> {
    values: &'a BTreeMap<String, f64>,
    coeffs: &'a BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn v(&self, name: &str) -> Result<f64, EvalError> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::Failure(format!("point is missing variable `{name}`")))
    }

    fn c(&self, name: &str) -> Result<f64, EvalError> {
        self.coeffs
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::BadModel(format!("missing coefficient `{name}`")))
    }
}

const TWO_PI: f64 = std::f64::consts::TAU;

fn parallel_r(a: f64, b: f64) -> f64 {
    a * b / (a + b)
}

fn db20(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Square-law transconductance at drain current `id`.
fn gm(kp: f64, w_over_l: f64, id: f64) -> f64 {
    (2.0 * kp * w_over_l * id).sqrt()
}

impl Evaluator for MockModel {
    fn id(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn metric_names(&self) -> Vec<String> {
        match self.kind {
            ModelKind::TwoStageOta => vec!["Gain", "GBW", "PM", "Power"],
            ModelKind::FoldedCascodeOta => {
                vec!["Gain", "GBW", "PM", "Power", "PSRR", "CMRR", "Noise"]
            }
            ModelKind::StrongarmLatch => vec!["Power", "SetDelay", "ResetDelay", "Noise"],
            ModelKind::Ldo => vec!["DeltaV", "SetupTime", "PSRR", "Noise", "Dropout"],
        }
        .into_iter()
        .map(String::from)
        .collect()
    }

    fn run(&self, values: &BTreeMap<String, f64>) -> Result<Measurement, EvalError> {
        let ctx = Ctx {
            values,
            coeffs: &self.coeffs,
        };
        let metrics = match self.kind {
            ModelKind::TwoStageOta => two_stage_ota(&ctx)?,
            ModelKind::FoldedCascodeOta => folded_cascode_ota(&ctx)?,
            ModelKind::StrongarmLatch => strongarm_latch(&ctx)?,
            ModelKind::Ldo => ldo(&ctx)?,
        };
        Ok(Measurement::from_values(metrics))
    }
}

/// Two-stage Miller OTA: input pair into a mirror load, common-source
/// second stage, Miller compensation with the right-half-plane zero assumed
/// cancelled by a nulling resistor.
fn two_stage_ota(x: &Ctx) -> Result<BTreeMap<String, f64>, EvalError> {
    let (vdd, kp_n, kp_p, ea, ib, cl) = (
        x.c("vdd")?,
        x.c("kp_n")?,
        x.c("kp_p")?,
        x.c("ea")?,
        x.c("ib")?,
        x.c("cl")?,
    );
    let itail = x.v("r1")? * ib;
    let id1 = itail / 2.0;
    let i2 = x.v("r2")? * ib;

    let gm1 = gm(kp_n, x.v("w1")? / x.v("l1")?, id1);
    let gm4 = gm(kp_p, x.v("w4")? / x.v("l4")?, i2);
    let r_stage1 = parallel_r(ea * x.v("l1")? / id1, ea * x.v("l2")? / id1);
    let r_stage2 = parallel_r(ea * x.v("l4")? / i2, ea * x.v("l3")? / i2);

    let gain_db = db20(gm1 * r_stage1 * gm4 * r_stage2);
    let gbw = gm1 / (TWO_PI * x.v("cc")?);
    let p2 = gm4 / (TWO_PI * cl);
    let pm = 90.0 - (gbw / p2).atan().to_degrees();
    let power = vdd * (ib + itail + i2);

    Ok(BTreeMap::from([
        ("Gain".into(), gain_db),
        ("GBW".into(), gbw),
        ("PM".into(), pm),
        ("Power".into(), power),
    ]))
}

/// Folded-cascode OTA with a class-AB output stage. The split input-pair
/// and mirror symbols enter through symmetric sums so the surface stays
/// smooth at (and away from) the matched point.
fn folded_cascode_ota(x: &Ctx) -> Result<BTreeMap<String, f64>, EvalError> {
    let (vdd, kp_n, kp_p, ea, ib, cl, kn_noise) = (
        x.c("vdd")?,
        x.c("kp_n")?,
        x.c("kp_p")?,
        x.c("ea")?,
        x.c("ib")?,
        x.c("cl")?,
        x.c("kn_noise")?,
    );
    let itail = x.v("r1")? * ib;
    let id1 = itail / 2.0;
    let i_out = ib * (x.v("r2")? + x.v("r3")?) / 2.0;
    let i_ab = x.v("r4")? * ib;

    let wl_pair = (x.v("w1a")? + x.v("w1b")?) / (x.v("l1a")? + x.v("l1b")?);
    let gm1 = gm(kp_n, wl_pair, id1);

    let gm_casc_n = gm(kp_n, x.v("w4")? / x.v("l4")?, i_out);
    let ro_n = ea * x.v("l4")? / i_out;
    let r_down = gm_casc_n * ro_n * ro_n;
    let gm_casc_p = gm(kp_p, x.v("w3")? / x.v("l3")?, i_out);
    let ro_p = ea * x.v("l3")? / i_out;
    let ro_src = ea * x.v("l2b")? / i_out;
    let r_up = gm_casc_p * ro_p * ro_src;
    let r1 = parallel_r(r_down, r_up);
    let a1 = gm1 * r1;

    let gm6 = gm(kp_p, x.v("w6")? / x.v("l6")?, i_ab);
    let r2 = parallel_r(ea * x.v("l6")?, ea * x.v("l7")?) / i_ab;
    let a2 = gm6 * r2;

    let gain_db = db20(a1 * a2);
    let gbw = gm1 / (TWO_PI * x.v("cc1")?);
    let p2 = gm6 / (TWO_PI * (cl + x.v("cc2")?));
    let pm = 90.0 - (gbw / p2).atan().to_degrees();
    let power = vdd * (ib + itail + 2.0 * i_out + i_ab);

    let gm_tail = gm(kp_n, x.v("w5")? / x.v("l5")?, itail);
    let ro_tail = ea * x.v("l5")? / itail;
    let psrr_db = gain_db + 6.0;
    let cmrr_db = gain_db + db20(2.0 * gm_tail * ro_tail);
    // Output-referred noise surrogate in volts: shrinks with input device area.
    let noise_v = kn_noise / ((x.v("w1a")? + x.v("w1b")?) * 1e6).sqrt();

    Ok(BTreeMap::from([
        ("Gain".into(), gain_db),
        ("GBW".into(), gbw),
        ("PM".into(), pm),
        ("Power".into(), power),
        ("PSRR".into(), psrr_db),
        ("CMRR".into(), cmrr_db),
        ("Noise".into(), noise_v),
    ]))
}

/// StrongArm latch comparator: capacitive switching power, integration plus
/// regeneration set delay, precharge reset delay, kT/C sampling noise
/// referred through the integration gain.
fn strongarm_latch(x: &Ctx) -> Result<BTreeMap<String, f64>, EvalError> {
    let (vdd, kp_n, kp_p, cox, fclk, vov, kt2) = (
        x.c("vdd")?,
        x.c("kp_n")?,
        x.c("kp_p")?,
        x.c("cox")?,
        x.c("fclk")?,
        x.c("vov")?,
        x.c("kt2")?,
    );
    let ceff_q = x.v("cq")? + cox * (x.v("w2")? * x.v("l2")? + x.v("w3")? * x.v("l3")?);
    let ceff_x =
        x.v("cx")? + cox * (x.v("w1a")? * x.v("l1a")? + x.v("w1b")? * x.v("l1b")?);

    let itail = 0.5 * kp_n * (x.v("w5")? / x.v("l5")?) * vov * vov;
    let t_integrate = ceff_x * 0.4 * vdd / (itail / 2.0);
    let gm_latch = gm(kp_n, x.v("w2")? / x.v("l2")?, itail / 2.0)
        + gm(kp_p, x.v("w3")? / x.v("l3")?, itail / 2.0);
    let t_regen = 4.8 * ceff_q / gm_latch;
    let set_delay = t_integrate + t_regen;

    let i_pre_q = 0.5 * kp_p * (x.v("w4")? / x.v("l4")?) * vov * vov;
    let i_pre_x = 0.5 * kp_p * (x.v("w6")? / x.v("l6")?) * vov * vov;
    let reset_delay = ceff_q * 0.8 * vdd / i_pre_q + ceff_x * 0.8 * vdd / i_pre_x;

    let power = fclk * vdd * vdd * 2.0 * (ceff_q + ceff_x);

    let wl_pair = (x.v("w1a")? + x.v("w1b")?) / (x.v("l1a")? + x.v("l1b")?);
    let gm_in = gm(kp_n, wl_pair, itail / 2.0);
    let integration_gain = gm_in * t_integrate / ceff_x;
    let noise_v = (kt2 / ceff_x).sqrt() / integration_gain;

    Ok(BTreeMap::from([
        ("Power".into(), power),
        ("SetDelay".into(), set_delay),
        ("ResetDelay".into(), reset_delay),
        ("Noise".into(), noise_v),
    ]))
}

/// Low-dropout regulator: two-stage error amplifier, source-follower gate
/// buffer, segmented PMOS pass device, resistive feedback divider.
fn ldo(x: &Ctx) -> Result<BTreeMap<String, f64>, EvalError> {
    let (kp_n, kp_p, ea, ib, iload, istep, vov, vout, c_par, kt4) = (
        x.c("kp_n")?,
        x.c("kp_p")?,
        x.c("ea")?,
        x.c("ib")?,
        x.c("iload")?,
        x.c("istep")?,
        x.c("vov")?,
        x.c("vout")?,
        x.c("c_par")?,
        x.c("kt4")?,
    );
    let i1 = x.v("r1")? * ib;
    let id1 = i1 / 2.0;
    let i2 = x.v("r2")? * ib;

    let wl_pair = (x.v("w1a")? + x.v("w1b")?) / (x.v("l1a")? + x.v("l1b")?);
    let gm_ea = gm(kp_n, wl_pair, id1);
    let r_1 = parallel_r(ea * x.v("l1a")?, ea * x.v("l2a")?) / id1;
    let a1 = gm_ea * r_1;
    let gm3 = gm(kp_p, x.v("w3")? / x.v("l3")?, i2);
    let r_2 = parallel_r(ea * x.v("l3")?, ea * x.v("l6")?) / i2;
    let a2 = gm3 * r_2;
    let a_ea = a1 * a2;

    let gm_pass = gm(kp_p, x.v("w8")? * x.v("r4")? / x.v("l8")?, iload);
    let dropout = iload * x.v("l8")? / (kp_p * x.v("w8")? * x.v("r4")? * vov);

    let rf1 = x.v("rf1")?;
    let rf2 = x.v("rf2")?;
    let fb = rf2 / (rf1 + rf2);
    let r_load = 1.0 / (iload / vout + iload / (ea * x.v("l8")?) + 1.0 / (rf1 + rf2));
    let a_loop = a_ea * gm_pass * r_load * fb;
    let psrr_db = db20(a_loop);

    let tau_ea = c_par / gm_ea;
    let delta_v = istep / gm_pass + istep * tau_ea / x.v("cout")?;
    let setup = 3.0 * (x.v("cout")? / gm_pass + tau_ea);

    let noise = ((kt4 * (1.0 / gm_ea + parallel_r(rf1, rf2))).sqrt() / fb) * 1e6; // uV/sqrt(Hz)

    Ok(BTreeMap::from([
        ("DeltaV".into(), delta_v),
        ("SetupTime".into(), setup),
        ("PSRR".into(), psrr_db),
        ("Noise".into(), noise),
        ("Dropout".into(), dropout),
    ]))
}

// ---------------------------------------------------------------------------
// External simulator adapter

pub const POINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct PointFile {
    pub version: u32,
    pub values: BTreeMap<String, f64>,
}

/// File-based adapter: writes `point.json`, invokes the configured command
/// through `sh -c` with `AMSIZER_POINT_FILE` / `AMSIZER_RESULT_FILE` in the
/// environment (and `{point}` / `{result}` placeholders substituted), then
/// reads `result.json` as `{metric: value}`.
pub struct ExternEvaluator {
    command: String,
    space: DesignSpace,
    metrics: Vec<String>,
    workdir: std::path::PathBuf,
    timeout: Duration,
}

impl ExternEvaluator {
    pub fn new(
        command: &str,
        space: DesignSpace,
        metrics: Vec<String>,
        workdir: impl Into<std::path::PathBuf>,
        timeout: Duration,
    ) -> ExternEvaluator {
        ExternEvaluator {
            command: command.to_string(),
            space,
            metrics,
            workdir: workdir.into(),
            timeout,
        }
    }
}

impl Evaluator for ExternEvaluator {
    fn id(&self) -> &str {
        "extern"
    }

    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn metric_names(&self) -> Vec<String> {
        self.metrics.clone()
    }

    fn run(&self, values: &BTreeMap<String, f64>) -> Result<Measurement, EvalError> {
        std::fs::create_dir_all(&self.workdir)
            .map_err(|e| EvalError::Failure(format!("workdir: {e}")))?;
        let point_path = self.workdir.join("point.json");
        let result_path = self.workdir.join("result.json");
        let _ = std::fs::remove_file(&result_path);
        let point = PointFile {
            version: POINT_SCHEMA_VERSION,
            values: values.clone(),
        };
        std::fs::write(&point_path, serde_json::to_string_pretty(&point).unwrap())
            .map_err(|e| EvalError::Failure(format!("writing point.json: {e}")))?;

        let command = self
            .command
            .replace("{point}", &point_path.display().to_string())
            .replace("{result}", &result_path.display().to_string());
        let mut child = std::process::Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(&self.workdir)
            .env("AMSIZER_POINT_FILE", &point_path)
            .env("AMSIZER_RESULT_FILE", &result_path)
            .spawn()
            .map_err(|e| EvalError::Failure(format!("spawning `{command}`: {e}")))?;

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if Instant::now() > deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(EvalError::Failure(format!(
                            "`{command}` timed out after {:?}",
                            self.timeout
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(EvalError::Failure(format!("waiting: {e}"))),
            }
        };
        if !status.success() {
            return Err(EvalError::Failure(format!("`{command}` exited {status}")));
        }
        let text = std::fs::read_to_string(&result_path).map_err(|e| {
            EvalError::Failure(format!("missing result file {}: {e}", result_path.display()))
        })?;
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| EvalError::Failure(format!("result.json: {e}")))?;
        let mut values = BTreeMap::new();
        for name in &self.metrics {
            match raw.get(name) {
                Some(serde_json::Value::Number(n)) => {
                    values.insert(
                        name.clone(),
                        crate::score::MetricValue::Value(n.as_f64().unwrap_or(f64::NAN)),
                    );
                }
                _ => {
                    values.insert(name.clone(), crate::score::MetricValue::Failed);
                }
            }
        }
        Ok(Measurement { values })
    }
}
