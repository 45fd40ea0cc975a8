//! Run configuration: an INI-style file, dotted-key overrides, and strict
//! validation with a complete rejection report.
//!
//! The format is deliberately small — sections of `key = value` pairs,
//! `#`/`;` comments — and strictly checked: unknown sections or keys are
//! parse errors, not silently ignored, so a typo cannot quietly run the
//! wrong experiment. Parsing and validation are separate stages: a file
//! that parses may still be rejected, and then the report lists *every*
//! violated requirement, not just the first.
//!
//! ```text
//! [grid]                        [scheme]
//! dim = 2                       dt = 1e-3
//! nx = 64                       n_steps = 200
//! ny = 64                       mode = full            # full | sourceless |
//! lx = 1.0                      #   old_model | approximation:N
//! ly = 1.0                      newton_tol = 1e-11
//!                               newton_max_iter = 50
//! [potential]                   lin_tol = 1e-12
//! kind = flory_huggins          theta_cross = 0.0
//! lambda = 1.0
//! regularize = 0                [ic]
//!                               phi = cosine_bump:0.5
//! [params]                      sigma = uniform:1.0
//! chi = 0.5                     seed = 0
//! eps = 1.0
//! m = 1.0                       [output]
//! h = 0.0                       dir = out
//! kappa0 = 1.0                  csv = diagnostics.csv
//! kappa_inf = 1.0               fields_every = 0
//! p = 2.0                       subvolume = 0,0.5,0,1
//! beta_cap = 1.0
//! beta_floor = 1.0              [twin]
//! mob_m = constant:1.0          perturbation = 1e-3
//! mob_n = constant:1.0          seed = 7
//! strict_3d = false
//!                               [nconv]
//!                               levels = 4,8,16
//! ```
//!
//! Initial-condition presets (usable for both fields):
//! `uniform:VALUE`, `cosine_bump:AMPLITUDE[,MEAN]`,
//! `random_perturbed:AMPLITUDE[,MEAN]` (cell-wise symmetric noise from the
//! documented splitmix stream seeded by `ic.seed`), and
//! `tumor_seed:RADIUS,WIDTH[,AMPLITUDE]` (a `tanh` disc centered in the
//! domain, amplitude 0.9 by default).

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::coefficients::{validate, BetaSpec, HSpec, MobilityKind, ModelParams};
use crate::diagnostics::SubVolume;
use crate::error::{Error, Result};
use crate::grid::{mean, Field, Grid};
use crate::potentials::{PotentialSpec, SingularKind};
use crate::rng::SplitMix64;
use crate::stepper::{SchemeConfig, SchemeMode};

/// Parsed but untyped configuration: sections of key/value pairs with the
/// line each value came from (overrides get line 0).
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("grid", &["dim", "nx", "ny", "lx", "ly"]),
    ("potential", &["kind", "lambda", "regularize"]),
    (
        "params",
        &[
            "chi", "eps", "m", "h", "kappa0", "kappa_inf", "p", "beta_cap", "beta_floor",
            "mob_m", "mob_n", "strict_3d",
        ],
    ),
    (
        "scheme",
        &["dt", "n_steps", "mode", "newton_tol", "newton_max_iter", "lin_tol", "theta_cross"],
    ),
    ("ic", &["phi", "sigma", "seed"]),
    ("output", &["dir", "csv", "fields_every", "subvolume"]),
    ("twin", &["perturbation", "seed"]),
    ("nconv", &["levels"]),
];

impl RawConfig {
    /// Parse INI text. Unknown sections or keys are errors.
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut cfg = RawConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find(['#', ';']) {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        message: format!("unterminated section header {line:?}"),
                    });
                };
                let name = name.trim().to_string();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        message: format!(
                            "unknown section [{name}] (expected one of: {})",
                            KNOWN.iter().map(|(s, _)| *s).collect::<Vec<_>>().join(", ")
                        ),
                    });
                }
                section = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("expected `key = value`, got {line:?}"),
                });
            };
            let Some(section) = section.clone() else {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: "key before any [section] header".into(),
                });
            };
            cfg.insert(&section, key.trim(), value.trim(), line_no)?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        let keys = KNOWN
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, ks)| *ks)
            .ok_or_else(|| Error::ConfigParse {
                line,
                message: format!("unknown section [{section}]"),
            })?;
        if !keys.contains(&key) {
            return Err(Error::ConfigParse {
                line,
                message: format!(
                    "unknown key {key:?} in [{section}] (expected one of: {})",
                    keys.join(", ")
                ),
            });
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), (value.to_string(), line));
        Ok(())
    }

    /// Apply one `section.key=value` override (the `--override` flag).
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let err = |message: String| Error::ConfigParse { line: 0, message };
        let (path, value) =
            spec.split_once('=').ok_or_else(|| err(format!("override {spec:?} has no `=`")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| err(format!("override key {path:?} is not `section.key`")))?;
        self.insert(section.trim(), key.trim(), value.trim(), 0)
    }

    fn get(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.sections.get(section)?.get(key)
    }

    fn typed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some((raw, line)) => raw.parse().map_err(|_| Error::ConfigParse {
                line: *line,
                message: format!(
                    "{section}.{key}: cannot parse {raw:?} as {}",
                    std::any::type_name::<T>()
                ),
            }),
        }
    }

    fn string(&self, section: &str, key: &str, default: &str) -> (String, usize) {
        match self.get(section, key) {
            None => (default.to_string(), 0),
            Some((raw, line)) => (raw.clone(), *line),
        }
    }
}

/// Initial-condition preset, parsed from its `name:args` text form.
#[derive(Clone, Debug, PartialEq)]
pub enum IcPreset {
    Uniform { value: f64 },
    CosineBump { amplitude: f64, mean: f64 },
    RandomPerturbed { amplitude: f64, mean: f64 },
    TumorSeed { radius: f64, width: f64, amplitude: f64 },
}

impl IcPreset {
    pub fn parse(text: &str, line: usize) -> Result<IcPreset> {
        let err = |message: String| Error::ConfigParse { line, message };
        let (name, args) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (text.trim(), ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| err(format!("preset argument {a:?} is not a number")))
                })
                .collect::<Result<_>>()?
        };
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if nums.len() < lo || nums.len() > hi {
                Err(err(format!(
                    "preset {name:?} takes {lo}..={hi} arguments, got {}",
                    nums.len()
                )))
            } else {
                Ok(())
            }
        };
        match name {
            "uniform" => {
                arity(1, 1)?;
                Ok(IcPreset::Uniform { value: nums[0] })
            }
            "cosine_bump" => {
                arity(1, 2)?;
                Ok(IcPreset::CosineBump {
                    amplitude: nums[0],
                    mean: nums.get(1).copied().unwrap_or(0.0),
                })
            }
            "random_perturbed" => {
                arity(1, 2)?;
                Ok(IcPreset::RandomPerturbed {
                    amplitude: nums[0],
                    mean: nums.get(1).copied().unwrap_or(0.0),
                })
            }
            "tumor_seed" => {
                arity(2, 3)?;
                Ok(IcPreset::TumorSeed {
                    radius: nums[0],
                    width: nums[1],
                    amplitude: nums.get(2).copied().unwrap_or(0.9),
                })
            }
            other => Err(err(format!(
                "unknown initial-condition preset {other:?} (expected uniform, cosine_bump, random_perturbed, tumor_seed)"
            ))),
        }
    }

    /// Realize the preset on a grid. `seed` feeds the documented
    /// deterministic noise stream; cell order is row-major.
    pub fn build(&self, grid: Grid, seed: u64) -> Field {
        use std::f64::consts::PI;
        match *self {
            IcPreset::Uniform { value } => Field::constant(grid, value),
            IcPreset::CosineBump { amplitude, mean } => Field::from_fn(grid, |x, y| {
                let mut v = amplitude * (PI * x / grid.lx).cos();
                if grid.ny > 1 {
                    v *= (PI * y / grid.ly).cos();
                }
                mean + v
            }),
            IcPreset::RandomPerturbed { amplitude, mean } => {
                let mut rng = SplitMix64::new(seed);
                Field::from_fn(grid, |_, _| mean + amplitude * rng.next_symmetric())
            }
            IcPreset::TumorSeed { radius, width, amplitude } => {
                let (cx, cy) = (0.5 * grid.lx, 0.5 * grid.ly);
                Field::from_fn(grid, |x, y| {
                    let r = if grid.ny > 1 {
                        ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
                    } else {
                        (x - cx).abs()
                    };
                    amplitude * ((radius - r) / width).tanh()
                })
            }
        }
    }
}

/// Everything one experiment needs, fully typed and validated.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub grid: Grid,
    /// Analysis dimension (matches the grid: 1 or 2).
    pub dim: usize,
    pub spec: PotentialSpec,
    pub params: ModelParams,
    pub scheme: SchemeConfig,
    pub n_steps: usize,
    pub phi0: Field,
    pub sigma0: Field,
    pub out_dir: PathBuf,
    pub csv_name: String,
    /// Field snapshot cadence in steps (0 = final state only).
    pub fields_every: usize,
    pub subvolume: Option<SubVolume>,
    pub twin_perturbation: f64,
    pub twin_seed: u64,
    pub nconv_levels: Vec<u32>,
}

/// Flag-level overrides applied after the file and `--override` pairs.
#[derive(Clone, Debug, Default)]
pub struct FlagOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Parse, override, and validate a configuration.
///
/// Parse failures are `ConfigParse`; anything structurally valid but
/// violating a model requirement is `ConfigRejected`, whose report lists
/// every violation (coefficient requirements first, then initial data, then
/// scheme controls).
pub fn load_config(text: &str, overrides: &[String], flags: &FlagOverrides) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    for o in overrides {
        raw.apply_override(o)?;
    }

    // --- grid ---
    let dim: usize = raw.typed("grid", "dim", 2)?;
    let nx: usize = raw.typed("grid", "nx", 64)?;
    let ny: usize = raw.typed("grid", "ny", 64)?;
    let lx: f64 = raw.typed("grid", "lx", 1.0)?;
    let ly: f64 = raw.typed("grid", "ly", 1.0)?;
    let mut violations: Vec<String> = Vec::new();
    let grid = match dim {
        1 => Grid::line(nx, lx),
        2 => Grid::rect(nx, ny, lx, ly),
        other => Err(Error::InvalidGrid {
            context: format!("grid dimension {other} not supported (this build computes in 1 or 2 dimensions)"),
        }),
    }
    .map_err(|e| Error::ConfigRejected { report: e.to_string() })?;

    // --- potential ---
    let (kind_text, kind_line) = raw.string("potential", "kind", "flory_huggins");
    let lambda: f64 = raw.typed("potential", "lambda", 1.0)?;
    let regularize: u32 = raw.typed("potential", "regularize", 0)?;
    let base = match kind_text.as_str() {
        "flory_huggins" => SingularKind::FloryHuggins,
        "neg_log" => SingularKind::NegLog,
        other => {
            return Err(Error::ConfigParse {
                line: kind_line,
                message: format!(
                    "unknown potential kind {other:?} (expected flory_huggins or neg_log)"
                ),
            })
        }
    };
    let spec = if regularize == 0 {
        PotentialSpec { kind: crate::potentials::PotentialKind::Singular(base), lambda }
    } else {
        PotentialSpec::regularized(base, regularize, lambda)
    };
    if lambda < 0.0 {
        violations.push(format!("expansion parameter lambda = {lambda} is negative"));
    }

    // --- params ---
    let parse_mobility = |key: &str| -> Result<MobilityKind> {
        let (text, line) = raw.string("params", key, "constant:1.0");
        let err = |message: String| Error::ConfigParse { line, message };
        let (name, args) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (text.trim(), ""),
        };
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| err(format!("mobility argument {a:?} is not a number")))
                })
                .collect::<Result<_>>()?
        };
        match (name, nums.len()) {
            ("constant", 1) => Ok(MobilityKind::Constant(nums[0])),
            ("nutrient_saturating", 2) => {
                Ok(MobilityKind::NutrientSaturating { m0: nums[0], gain: nums[1] })
            }
            ("phase_gated", 2) => Ok(MobilityKind::PhaseGated { m0: nums[0], gain: nums[1] }),
            _ => Err(err(format!(
                "params.{key}: expected constant:c, nutrient_saturating:m0,gain, or phase_gated:m0,gain; got {text:?}"
            ))),
        }
    };
    let params = ModelParams {
        chi: raw.typed("params", "chi", 0.5)?,
        eps: raw.typed("params", "eps", 1.0)?,
        m: raw.typed("params", "m", 1.0)?,
        h: HSpec::Constant(raw.typed("params", "h", 0.0)?),
        kappa0: raw.typed("params", "kappa0", 1.0)?,
        kappa_inf: raw.typed("params", "kappa_inf", 1.0)?,
        p: raw.typed("params", "p", 2.0)?,
        beta: BetaSpec {
            cap: raw.typed("params", "beta_cap", 1.0)?,
            floor: raw.typed("params", "beta_floor", 1.0)?,
        },
        mob_m: parse_mobility("mob_m")?,
        mob_n: parse_mobility("mob_n")?,
    };
    let strict_3d: bool = raw.typed("params", "strict_3d", false)?;
    violations.extend(validate(&params, dim, strict_3d).violations);

    // --- scheme ---
    let (mode_text, mode_line) = raw.string("scheme", "mode", "full");
    let mode = match mode_text.as_str() {
        "full" => SchemeMode::Full,
        "sourceless" => SchemeMode::Sourceless,
        "old_model" => SchemeMode::OldModel,
        other => match other.strip_prefix("approximation:").map(str::parse::<u32>) {
            Some(Ok(level)) if level >= 1 => SchemeMode::Approximation(level),
            _ => {
                return Err(Error::ConfigParse {
                    line: mode_line,
                    message: format!(
                        "unknown scheme mode {other:?} (expected full, sourceless, old_model, or approximation:N with N >= 1)"
                    ),
                })
            }
        },
    };
    let scheme = SchemeConfig {
        dt: raw.typed("scheme", "dt", 1e-3)?,
        mode,
        newton_tol: raw.typed("scheme", "newton_tol", 1e-11)?,
        newton_max_iter: raw.typed("scheme", "newton_max_iter", 50)?,
        lin_tol: raw.typed("scheme", "lin_tol", 1e-12)?,
        theta_cross: raw.typed("scheme", "theta_cross", 0.0)?,
    };
    let n_steps: usize = raw.typed("scheme", "n_steps", 100)?;
    if !(scheme.dt > 0.0) {
        violations.push(format!("time step dt = {} must be positive", scheme.dt));
    }
    if !(scheme.newton_tol > 0.0) || !(scheme.lin_tol > 0.0) {
        violations.push(format!(
            "solver tolerances must be positive (newton_tol = {}, lin_tol = {})",
            scheme.newton_tol, scheme.lin_tol
        ));
    }
    if !(0.0..=1.0).contains(&scheme.theta_cross) {
        violations.push(format!(
            "cross-diffusion implicitness theta_cross = {} outside [0, 1]",
            scheme.theta_cross
        ));
    }

    // --- initial conditions ---
    let seed: u64 = match flags.seed {
        Some(s) => s,
        None => raw.typed("ic", "seed", 0)?,
    };
    let (phi_text, phi_line) = raw.string("ic", "phi", "uniform:0.0");
    let (sigma_text, sigma_line) = raw.string("ic", "sigma", "uniform:1.0");
    let phi0 = IcPreset::parse(&phi_text, phi_line)?.build(grid, seed);
    // Independent noise stream for the nutrient so the two fields never
    // share samples.
    let sigma0 = IcPreset::parse(&sigma_text, sigma_line)?.build(grid, seed.wrapping_add(1));

    let phi_mean = mean(&phi0);
    if !(-1.0 < phi_mean && phi_mean < 1.0) {
        violations.push(format!(
            "initial phase mean {phi_mean} outside the open interval (-1, 1)"
        ));
    }
    if spec.is_singular() && phi0.norm_linf() >= 1.0 {
        violations.push(format!(
            "initial phase field reaches |phi| = {} (a singular potential requires |phi| < 1 everywhere)",
            phi0.norm_linf()
        ));
    }
    if sigma0.min() < 0.0 {
        violations.push(format!("initial nutrient minimum {} is negative", sigma0.min()));
    }

    // --- output & experiment knobs ---
    let out_dir = match &flags.out {
        Some(p) => p.clone(),
        None => PathBuf::from(raw.string("output", "dir", "out").0),
    };
    let csv_name = raw.string("output", "csv", "diagnostics.csv").0;
    let fields_every: usize = raw.typed("output", "fields_every", 0)?;
    let subvolume = match raw.get("output", "subvolume") {
        None => None,
        Some((text, line)) => {
            let nums: Vec<f64> = text
                .split(',')
                .map(|a| {
                    a.trim().parse::<f64>().map_err(|_| Error::ConfigParse {
                        line: *line,
                        message: format!("subvolume coordinate {a:?} is not a number"),
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(Error::ConfigParse {
                    line: *line,
                    message: format!("subvolume needs x0,x1,y0,y1 (got {} values)", nums.len()),
                });
            }
            match SubVolume::from_coords(grid, nums[0], nums[1], nums[2], nums[3]) {
                Ok(v) => Some(v),
                Err(e) => {
                    violations.push(e.to_string());
                    None
                }
            }
        }
    };
    let twin_perturbation: f64 = raw.typed("twin", "perturbation", 1e-3)?;
    let twin_seed: u64 = raw.typed("twin", "seed", 7)?;
    // An empty list is allowed: the study then runs only the reference.
    let (levels_text, levels_line) = raw.string("nconv", "levels", "4,8,16");
    let nconv_levels: Vec<u32> = levels_text
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| {
            a.trim().parse::<u32>().map_err(|_| Error::ConfigParse {
                line: levels_line,
                message: format!("truncation level {a:?} is not a positive integer"),
            })
        })
        .collect::<Result<_>>()?;
    if nconv_levels.contains(&0) {
        violations.push(format!("truncation levels {nconv_levels:?} must all be >= 1"));
    }
    if !(twin_perturbation > 0.0) {
        violations.push(format!(
            "twin perturbation amplitude {twin_perturbation} must be positive"
        ));
    }

    if !violations.is_empty() {
        return Err(Error::ConfigRejected { report: violations.join("\n") });
    }

    Ok(RunConfig {
        grid,
        dim,
        spec,
        params,
        scheme,
        n_steps,
        phi0,
        sigma0,
        out_dir,
        csv_name,
        fields_every,
        subvolume,
        twin_perturbation,
        twin_seed,
        nconv_levels,
    })
}
