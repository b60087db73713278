//! Config schema (TOML), validation, and resolution into a runnable plan.
//!
//! Unknown keys are rejected. Presets hard-code their system; `[family]`
//! and `[model]` sections are only accepted for `preset = "custom"`.

use std::path::PathBuf;

use serde::Deserialize;

use fpe_project_core::expfam::{BackgroundDensity, ExpFamily, NaturalParams};
use fpe_project_core::field::Poly;
use fpe_project_core::oracle::Grid1D;
use fpe_project_core::presets;
use fpe_project_core::projection::GalerkinBasis;
use fpe_project_core::sde::SdeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    OuGaussian,
    HeatGalerkin,
    QuarticResidual,
    EigenMle,
    SynthesizeSde,
    Custom,
}

impl PresetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::OuGaussian => "ou-gaussian",
            PresetName::HeatGalerkin => "heat-galerkin",
            PresetName::QuarticResidual => "quartic-residual",
            PresetName::EigenMle => "eigen-mle",
            PresetName::SynthesizeSde => "synthesize-sde",
            PresetName::Custom => "custom",
        }
    }

    pub fn all() -> &'static [(&'static str, &'static str)] {
        &[
            ("ou-gaussian", "projected OU flow on the Gaussian family; exact case"),
            ("heat-galerkin", "Galerkin heat flow over the Gaussian background"),
            ("quartic-residual", "double-well drift on the Gaussian family; nonzero residual"),
            ("eigen-mle", "Hermite eigenfunction statistics vs the grid truth"),
            ("synthesize-sde", "modified-drift SDE reproducing the projected flow"),
            ("custom", "family and model taken from the config file"),
        ]
    }
}

/// Either explicit coefficient vectors or a named basis like
/// "hermite:4" / "monomial:2".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StatSpec {
    Named(String),
    Coefficients(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub statistics: StatSpec,
    #[serde(default = "default_background")]
    pub background: String,
    pub theta0: Vec<f64>,
}

fn default_background() -> String {
    "lebesgue".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub h0: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    #[serde(default)]
    pub plot: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetName,
    pub family: Option<FamilyConfig>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub time: TimeConfig,
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A config-shaped failure; exits with code 2 and the offending field.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResolvedTime {
    pub t0: f64,
    pub t1: f64,
    pub h0: f64,
    pub rtol: f64,
    pub atol: f64,
}

pub struct OracleSetup {
    pub grid: Grid1D,
    pub dt: f64,
}

/// Everything the runner needs, with preset defaults applied.
pub struct Plan {
    pub preset: PresetName,
    pub fam: ExpFamily,
    pub model: SdeModel,
    /// Set for heat-galerkin: the flow uses the Galerkin right-hand side.
    pub galerkin: Option<GalerkinBasis>,
    /// Initial parameter; for eigen-mle the runner replaces it with the
    /// moment projection of the bimodal start.
    pub theta0: NaturalParams,
    pub time: ResolvedTime,
    pub oracle: Option<OracleSetup>,
    pub out_dir: PathBuf,
    pub plot: bool,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ValidationError> {
    toml::from_str(text).map_err(|e| ValidationError(format!("config parse error: {e}")))
}

fn resolve_time(
    cfg: &TimeConfig,
    defaults: (f64, f64, f64, f64, f64),
) -> Result<ResolvedTime, ValidationError> {
    let t = ResolvedTime {
        t0: cfg.t0.unwrap_or(defaults.0),
        t1: cfg.t1.unwrap_or(defaults.1),
        h0: cfg.h0.unwrap_or(defaults.2),
        rtol: cfg.rtol.unwrap_or(defaults.3),
        atol: cfg.atol.unwrap_or(defaults.4),
    };
    if !(t.t1 > t.t0) {
        return Err(ValidationError(format!(
            "time.t1 must exceed time.t0 (got t0 = {}, t1 = {})",
            t.t0, t.t1
        )));
    }
    if !(t.h0 > 0.0) {
        return Err(ValidationError("time.h0 must be positive".into()));
    }
    if !(t.rtol > 0.0 && t.atol > 0.0) {
        return Err(ValidationError("time.rtol and time.atol must be positive".into()));
    }
    Ok(t)
}

fn resolve_oracle(cfg: &OracleConfig) -> Result<OracleSetup, ValidationError> {
    let grid = Grid1D::new(cfg.lo, cfg.hi, cfg.m)
        .map_err(|e| ValidationError(format!("oracle grid: {e}")))?;
    if !(cfg.dt > 0.0) {
        return Err(ValidationError("oracle.dt must be positive".into()));
    }
    Ok(OracleSetup { grid, dt: cfg.dt })
}

fn parse_background(name: &str) -> Result<BackgroundDensity, ValidationError> {
    match name {
        "lebesgue" => Ok(BackgroundDensity::lebesgue()),
        "gaussian" => Ok(BackgroundDensity::gaussian_m()),
        other => {
            if let Some(m) = other.strip_prefix("generalized:") {
                let m: u32 = m.parse().map_err(|_| {
                    ValidationError(format!("family.background: bad generalized order {m:?}"))
                })?;
                BackgroundDensity::generalized_m(m)
                    .map_err(|e| ValidationError(format!("family.background: {e}")))
            } else {
                Err(ValidationError(format!(
                    "family.background must be lebesgue | gaussian | generalized:m, got {other:?}"
                )))
            }
        }
    }
}

fn parse_statistics(spec: &StatSpec) -> Result<Vec<Poly>, ValidationError> {
    match spec {
        StatSpec::Coefficients(rows) => {
            if rows.is_empty() {
                return Err(ValidationError("family.statistics is empty".into()));
            }
            Ok(rows.iter().map(|c| Poly::new(c)).collect())
        }
        StatSpec::Named(name) => {
            let (kind, k) = name
                .split_once(':')
                .ok_or_else(|| ValidationError(format!("family.statistics: bad name {name:?}")))?;
            let k: usize = k.parse().map_err(|_| {
                ValidationError(format!("family.statistics: bad order in {name:?}"))
            })?;
            if k == 0 {
                return Err(ValidationError("family.statistics: order must be >= 1".into()));
            }
            match kind {
                "hermite" => Ok((1..=k).map(presets::hermite_poly).collect()),
                "monomial" => Ok((1..=k).map(Poly::monomial).collect()),
                other => Err(ValidationError(format!(
                    "family.statistics: unknown basis {other:?} (use hermite:k or monomial:k)"
                ))),
            }
        }
    }
}

fn build_custom_family(cfg: &FamilyConfig) -> Result<ExpFamily, ValidationError> {
    let stats = parse_statistics(&cfg.statistics)?;
    let background = parse_background(&cfg.background)?;
    ExpFamily::new(stats, background).map_err(|e| ValidationError(format!("family: {e}")))
}

/// Static feasibility of a polynomial exponent: decay at infinity needs
/// an even top degree with a negative leading coefficient.
fn check_theta0(fam: &ExpFamily, theta0: &[f64]) -> Result<NaturalParams, ValidationError> {
    if theta0.len() != fam.n() {
        return Err(ValidationError(format!(
            "family.theta0 has {} entries, family has {} statistics",
            theta0.len(),
            fam.n()
        )));
    }
    let theta = NaturalParams::new(theta0.to_vec());
    let exponent = fam
        .exponent(&theta)
        .map_err(|e| ValidationError(format!("family.theta0: {e}")))?;
    let d = exponent.degree();
    let lead = exponent.coeffs()[d];
    if d == 0 || d % 2 != 0 || lead >= 0.0 {
        return Err(ValidationError(format!(
            "family.theta0 infeasible: exponent has degree {d} with leading coefficient {lead}; \
             an even top degree with negative leading coefficient (or a generalized background) \
             is required"
        )));
    }
    Ok(theta)
}

fn forbid_system_sections(cfg: &ExperimentConfig) -> Result<(), ValidationError> {
    if cfg.family.is_some() {
        return Err(ValidationError(format!(
            "family: section not allowed for preset {:?}; presets hard-code the system",
            cfg.preset.as_str()
        )));
    }
    if cfg.model.is_some() {
        return Err(ValidationError(format!(
            "model: section not allowed for preset {:?}",
            cfg.preset.as_str()
        )));
    }
    Ok(())
}

/// Validate the parsed config and assemble the plan. `out_override` comes
/// from `--out`.
pub fn resolve(
    cfg: &ExperimentConfig,
    out_override: Option<&str>,
) -> Result<Plan, ValidationError> {
    let out_dir = PathBuf::from(
        out_override
            .map(str::to_owned)
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| "out".into()),
    );
    let plot = cfg.output.plot;

    let oracle = match (&cfg.oracle, cfg.preset) {
        (Some(o), _) => Some(resolve_oracle(o)?),
        // the eigen-mle benchmark carries its reference grid with it
        (None, PresetName::EigenMle) => Some(OracleSetup {
            grid: Grid1D::new(-10.0, 10.0, 2001).expect("static grid"),
            dt: 1e-4,
        }),
        (None, _) => None,
    };

    let plan = match cfg.preset {
        PresetName::OuGaussian => {
            forbid_system_sections(cfg)?;
            Plan {
                preset: cfg.preset,
                fam: presets::gaussian_family(),
                model: presets::ou_model(),
                galerkin: None,
                theta0: NaturalParams::new([1.0, -1.0]),
                time: resolve_time(&cfg.time, (0.0, 5.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
        PresetName::HeatGalerkin => {
            forbid_system_sections(cfg)?;
            let basis = presets::galerkin_basis(&[1.0])
                .map_err(|e| ValidationError(format!("galerkin basis: {e}")))?;
            let model = basis
                .equivalent_sde()
                .map_err(|e| ValidationError(format!("galerkin basis: {e}")))?;
            Plan {
                preset: cfg.preset,
                fam: basis.family().clone(),
                model,
                galerkin: Some(basis),
                theta0: NaturalParams::new([0.0, 0.0]),
                time: resolve_time(&cfg.time, (0.0, 5.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
        PresetName::QuarticResidual => {
            forbid_system_sections(cfg)?;
            Plan {
                preset: cfg.preset,
                fam: presets::monomial_family(2)
                    .map_err(|e| ValidationError(format!("family: {e}")))?,
                model: presets::double_well_model(),
                galerkin: None,
                theta0: NaturalParams::new([0.0, -0.5]),
                time: resolve_time(&cfg.time, (0.0, 3.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
        PresetName::EigenMle => {
            forbid_system_sections(cfg)?;
            Plan {
                preset: cfg.preset,
                fam: presets::hermite_family(4)
                    .map_err(|e| ValidationError(format!("family: {e}")))?,
                model: presets::ou_model(),
                galerkin: None,
                // replaced by the moment projection of the bimodal start
                theta0: NaturalParams::new([0.0, -0.5, 0.0, -0.01]),
                time: resolve_time(&cfg.time, (0.0, 2.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
        PresetName::SynthesizeSde => {
            forbid_system_sections(cfg)?;
            Plan {
                preset: cfg.preset,
                fam: presets::gaussian_family(),
                model: presets::ou_model(),
                galerkin: None,
                theta0: NaturalParams::new([1.0, -1.0]),
                time: resolve_time(&cfg.time, (0.0, 1.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
        PresetName::Custom => {
            let fam_cfg = cfg
                .family
                .as_ref()
                .ok_or_else(|| ValidationError("family: required for preset custom".into()))?;
            let model_cfg = cfg
                .model
                .as_ref()
                .ok_or_else(|| ValidationError("model: required for preset custom".into()))?;
            if model_cfg.drift.is_empty() || model_cfg.a.is_empty() {
                return Err(ValidationError(
                    "model.drift and model.a need coefficients".into(),
                ));
            }
            let fam = build_custom_family(fam_cfg)?;
            let theta0 = check_theta0(&fam, &fam_cfg.theta0)?;
            if cfg.time.t1.is_none() {
                return Err(ValidationError("time.t1: required for preset custom".into()));
            }
            Plan {
                preset: cfg.preset,
                fam,
                model: SdeModel::from_polys(&model_cfg.drift, &model_cfg.a),
                galerkin: None,
                theta0,
                time: resolve_time(&cfg.time, (0.0, 1.0, 1e-2, 1e-10, 1e-12))?,
                oracle,
                out_dir,
                plot,
            }
        }
    };
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_config_parses() {
        let cfg = parse("preset = \"ou-gaussian\"").unwrap();
        let plan = resolve(&cfg, None).unwrap();
        assert_eq!(plan.preset, PresetName::OuGaussian);
        assert_eq!(plan.time.t1, 5.0);
        assert_eq!(plan.theta0.0, vec![1.0, -1.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("preset = \"ou-gaussian\"\nbogus = 1").unwrap_err();
        assert!(err.0.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_time_span_names_the_field() {
        let cfg = parse("preset = \"ou-gaussian\"\n[time]\nt1 = -1.0").unwrap();
        let err = resolve(&cfg, None).unwrap_err();
        assert!(err.0.contains("time.t1"), "{err}");
    }

    #[test]
    fn custom_requires_family_and_model() {
        let cfg = parse("preset = \"custom\"").unwrap();
        let err = resolve(&cfg, None).unwrap_err();
        assert!(err.0.contains("family"), "{err}");
    }

    #[test]
    fn custom_round_trip() {
        let text = r#"
preset = "custom"

[family]
statistics = "monomial:2"
background = "lebesgue"
theta0 = [0.0, -0.5]

[model]
drift = [0.0, -1.0]
a = [2.0]

[time]
t1 = 2.0
"#;
        let cfg = parse(text).unwrap();
        let plan = resolve(&cfg, None).unwrap();
        assert_eq!(plan.fam.n(), 2);
        assert_eq!(plan.time.t1, 2.0);
    }

    #[test]
    fn infeasible_monomial_theta_rejected() {
        // odd top degree over Lebesgue cannot normalize
        let text = r#"
preset = "custom"

[family]
statistics = "monomial:3"
theta0 = [0.0, -0.5, 0.1]

[model]
drift = [0.0, -1.0]
a = [2.0]

[time]
t1 = 1.0
"#;
        let cfg = parse(text).unwrap();
        let err = resolve(&cfg, None).unwrap_err();
        assert!(err.0.contains("family.theta0"), "{err}");
    }

    #[test]
    fn positive_leading_theta_rejected() {
        let text = r#"
preset = "custom"

[family]
statistics = "monomial:2"
theta0 = [0.0, 0.5]

[model]
drift = [0.0, -1.0]
a = [2.0]

[time]
t1 = 1.0
"#;
        let cfg = parse(text).unwrap();
        assert!(resolve(&cfg, None).is_err());
    }

    #[test]
    fn generalized_background_lifts_the_restriction() {
        let text = r#"
preset = "custom"

[family]
statistics = "monomial:4"
background = "generalized:6"
theta0 = [0.0, 0.5, 0.0, 0.2]

[model]
drift = [0.0, -1.0]
a = [2.0]

[time]
t1 = 0.5
"#;
        let cfg = parse(text).unwrap();
        let plan = resolve(&cfg, None).unwrap();
        assert!(plan.fam.feasible(&plan.theta0));
    }

    #[test]
    fn presets_reject_system_sections() {
        let text = r#"
preset = "ou-gaussian"

[model]
drift = [0.0, -2.0]
a = [1.0]
"#;
        let cfg = parse(text).unwrap();
        let err = resolve(&cfg, None).unwrap_err();
        assert!(err.0.contains("model"), "{err}");
    }

    #[test]
    fn eigen_mle_carries_default_oracle() {
        let cfg = parse("preset = \"eigen-mle\"").unwrap();
        let plan = resolve(&cfg, None).unwrap();
        let oracle = plan.oracle.expect("default oracle");
        assert_eq!(oracle.grid.m, 2001);
        assert_eq!(oracle.dt, 1e-4);
    }
}
