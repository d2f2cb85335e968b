//! Run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use lama_core::init::TrainParams;
use lama_core::solver::SolverParams;
use lama_core::tomo::{Geometry, ViewSelector};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Multiplies the rasterized phantom.
    pub scale: f64,
    /// Interior ellipse count for random phantoms.
    pub ellipses: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::SheppLogan,
            scale: 1.0,
            ellipses: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RegularizerSpec {
    Tv { weight: f64 },
    SinogramDefault { weight: f64 },
    Zero,
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    ZeroFillFbp,
    Interpolation,
    Learned { map: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub dataset_size: usize,
    pub ellipses: usize,
    /// Odd kernel extent of the single linear layer.
    pub kernel: usize,
    pub epochs: usize,
    /// Fixed gradient step; `None` derives a safe step from the data.
    pub step_size: Option<f64>,
    pub include_wrap: bool,
    /// Start from the interpolation stencil instead of a zero kernel.
    pub warm_start: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let p = TrainParams::default();
        TrainSpec {
            dataset_size: 20,
            ellipses: 6,
            kernel: 3,
            epochs: p.epochs,
            step_size: None,
            include_wrap: p.include_wrap,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySpec {
    pub sigmas: Vec<f64>,
    pub text: String,
    /// Intensity added inside the stamp mask.
    pub contrast: f64,
    /// Pixels per font cell.
    pub stamp_scale: usize,
    pub text_stamp: bool,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        StabilitySpec {
            sigmas: vec![0.01, 0.03, 0.05],
            text: "LAMA".into(),
            contrast: 0.5,
            stamp_scale: 2,
            text_stamp: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub selector: ViewSelector,
    pub phantom: PhantomSpec,
    pub lambda: f64,
    pub solver: SolverParams,
    /// Replace the step sizes in `solver` by ones matched to the problem.
    pub auto_steps: bool,
    pub power_iters: usize,
    pub lipschitz_samples: usize,
    pub image_regularizer: RegularizerSpec,
    pub sinogram_regularizer: RegularizerSpec,
    pub init: InitSpec,
    pub train: TrainSpec,
    pub stability: StabilitySpec,
    /// Directory holding `simulate` outputs to reconstruct from; when unset
    /// the data are simulated in memory.
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: Geometry {
                image_size: 128,
                n_views: 128,
                n_detectors: 185,
                detector_spacing: 1.0,
            },
            selector: ViewSelector::new(2, 0).expect("valid"),
            phantom: PhantomSpec::default(),
            lambda: 1.0,
            solver: SolverParams {
                eps0: 0.01,
                max_outer_iters: 600,
                ..SolverParams::default()
            },
            auto_steps: true,
            power_iters: 50,
            lipschitz_samples: 2,
            image_regularizer: RegularizerSpec::Tv { weight: 3.0 },
            sinogram_regularizer: RegularizerSpec::SinogramDefault { weight: 0.01 },
            init: InitSpec::ZeroFillFbp,
            train: TrainSpec::default(),
            stability: StabilitySpec::default(),
            data_dir: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Sections merged field by field rather than replaced.
const STRUCT_SECTIONS: [&str; 6] = ["geometry", "selector", "phantom", "solver", "train", "stability"];

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn check_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(invalid(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn check_weight(spec: &RegularizerSpec, what: &str) -> CliResult<()> {
    match spec {
        RegularizerSpec::Tv { weight } | RegularizerSpec::SinogramDefault { weight } => {
            if !(*weight >= 0.0 && weight.is_finite()) {
                return Err(invalid(format!("{what} weight must be non-negative, got {weight}")));
            }
        }
        RegularizerSpec::File { path } => check_file(path, &format!("{what} file"))?,
        RegularizerSpec::Zero => {}
    }
    Ok(())
}

impl RunConfig {
    /// Parses a possibly partial document. Struct sections are overlaid on
    /// the run defaults key by key, so `{"solver": {"max_outer_iters": 5}}`
    /// keeps every other default of this config.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let err = |e: serde_json::Error| invalid(format!("config: {e}"));
        let user: Value = serde_json::from_str(text).map_err(err)?;
        let Value::Object(user) = user else {
            return Err(invalid("config must be a JSON object"));
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::default()).map_err(err)? else {
            unreachable!("config serializes to an object");
        };
        for (key, value) in user {
            match (merged.get_mut(&key), value) {
                (Some(Value::Object(base)), Value::Object(part)) if STRUCT_SECTIONS.contains(&key.as_str()) => {
                    base.extend(part);
                }
                (_, value) => {
                    merged.insert(key, value);
                }
            }
        }
        serde_json::from_value(Value::Object(merged)).map_err(err)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every precondition the pipelines rely on.
    pub fn validate(&self) -> CliResult<()> {
        self.geometry.validate()?;
        self.selector.count(self.geometry.n_views)?;
        if self.geometry.image_size < 16 {
            return Err(invalid(format!(
                "image_size must be at least 16 for the phantoms, got {}",
                self.geometry.image_size
            )));
        }
        if !(self.phantom.scale > 0.0 && self.phantom.scale.is_finite()) {
            return Err(invalid(format!("phantom scale must be positive, got {}", self.phantom.scale)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        self.solver.validate()?;
        if self.power_iters == 0 {
            return Err(invalid("power_iters must be positive"));
        }
        if self.lipschitz_samples < 2 {
            return Err(invalid("lipschitz_samples must be at least 2"));
        }
        check_weight(&self.image_regularizer, "image_regularizer")?;
        check_weight(&self.sinogram_regularizer, "sinogram_regularizer")?;
        match &self.init {
            InitSpec::Learned { map } => check_file(map, "advance map")?,
            InitSpec::Interpolation if self.selector.rate() < 2 => {
                return Err(invalid("interpolation init needs rate >= 2"));
            }
            _ => {}
        }
        if (self.init != InitSpec::ZeroFillFbp) && self.selector.offset() != 0 {
            return Err(invalid("sinogram completion assumes selector offset 0"));
        }
        let t = &self.train;
        if t.dataset_size == 0 || t.epochs == 0 {
            return Err(invalid("train needs dataset_size and epochs > 0"));
        }
        if t.kernel.is_multiple_of(2) {
            return Err(invalid(format!("train kernel must be odd, got {}", t.kernel)));
        }
        if t.warm_start && t.kernel < 3 {
            return Err(invalid("train warm_start needs kernel >= 3"));
        }
        if let Some(s) = t.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("train step_size must be positive, got {s}")));
            }
        }
        let st = &self.stability;
        if st.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("stability sigmas must be non-negative"));
        }
        if st.text_stamp {
            if st.stamp_scale == 0 || !(st.contrast > 0.0 && st.contrast.is_finite()) {
                return Err(invalid("stamp needs positive scale and contrast"));
            }
            crate::stability::stamp_mask(&st.text, st.stamp_scale, self.geometry.image_size)?;
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return Err(invalid(format!("data_dir {} does not exist", d.display())));
            }
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.train.epochs,
            step_size: self.train.step_size.unwrap_or(1e-3),
            include_wrap: self.train.include_wrap,
        }
    }
}
