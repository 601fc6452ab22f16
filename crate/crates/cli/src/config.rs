use std::path::{Path, PathBuf};

use quadretarget::motion::ContactDetection;
use quadretarget::smr::SmrConfig;
use quadretarget::tmr::TmrOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs. Loaded from a JSON file and/or built from flags;
/// relative paths resolve against the working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target robot, `.urdf` or `.json`.
    pub robot: Option<PathBuf>,
    /// Robot the motion was recorded on. When set, the motion is first
    /// mapped onto the target morphology with the unit-vector method.
    pub source_robot: Option<PathBuf>,
    pub motion: Option<PathBuf>,
    /// Second motion for `metrics`.
    pub reference: Option<PathBuf>,
    pub terrain: Option<PathBuf>,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    /// Treat the motion as baseless (drop its base pose before retargeting).
    pub no_base: bool,
    /// Used when the motion carries no contact schedule.
    pub contacts: ContactDetection,
    pub smr: SmrConfig,
    pub tmr: TmrOptions,
    pub metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            robot: None,
            source_robot: None,
            motion: None,
            reference: None,
            terrain: None,
            out: PathBuf::from("out"),
            seed: 0,
            no_base: false,
            contacts: ContactDetection::default(),
            smr: SmrConfig::default(),
            tmr: TmrOptions::default(),
            metrics: true,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub robot: Option<PathBuf>,
    pub source_robot: Option<PathBuf>,
    pub motion: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub terrain: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub segments: Option<usize>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub budget_warm: Option<usize>,
    pub budget_iter: Option<usize>,
    pub no_base: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {$(if let Some(v) = o.$field { $target = v; })*};
        }
        set!(out => self.out, seed => self.seed, segments => self.tmr.segments,
             alpha_min => self.tmr.bounds.0, alpha_max => self.tmr.bounds.1,
             budget_warm => self.tmr.n_warm, budget_iter => self.tmr.n_iter);
        macro_rules! set_opt {
            ($($field:ident),*) => {$(if o.$field.is_some() { self.$field = o.$field; })*};
        }
        set_opt!(robot, source_robot, motion, reference, terrain);
        self.no_base |= o.no_base;
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::config(format!("missing --{flag}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.smr.validate().map_err(|e| CliError::config(e.to_string()))?;
        let (lo, hi) = self.tmr.bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(CliError::config(format!(
                "alpha bounds must satisfy 0 < min ≤ max, got ({lo}, {hi})"
            )));
        }
        if self.tmr.segments == 0 {
            return Err(CliError::config("--segments must be at least 1"));
        }
        Ok(())
    }

    /// The TMR options with the run seed applied.
    pub fn tmr_options(&self) -> TmrOptions {
        TmrOptions {
            seed: self.seed,
            ..self.tmr.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "tmr": {"segments": 2}}"#).unwrap();
        assert_eq!(cfg.tmr.n_warm, TmrOptions::default().n_warm);
        cfg.apply(Overrides {
            seed: Some(9),
            alpha_max: Some(1.5),
            no_base: true,
            ..Default::default()
        });
        assert_eq!(
            (cfg.seed, cfg.tmr.segments, cfg.tmr.bounds.1, cfg.no_base),
            (9, 2, 1.5, true)
        );
        assert_eq!(cfg.tmr_options().seed, 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn bad_bounds_rejected() {
        let mut cfg = RunConfig::default();
        cfg.tmr.bounds = (2.0, 1.0);
        assert!(cfg.validate().is_err());
    }
}
