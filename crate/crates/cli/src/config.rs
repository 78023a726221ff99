//! Run configuration: one TOML document, unknown keys rejected, with
//! `RELHARTREE_<SECTION>__<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use relhartree::hartree::RadialTable;
use relhartree::identities::CheckSpec;
use relhartree::{Grid, Kernel, ModelParams, Nonlinearity, SolverOptions};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "RELHARTREE_";

/// A configuration problem, reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {msg}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub run: RunOptions,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    #[serde(rename = "L", alias = "l")]
    pub extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { dim: 3, n: 32, extent: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub m: f64,
    pub omega: f64,
    pub lambda: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { m: 1.0, omega: 0.5, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Newton {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_r: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_radius: Option<f64>,
    },
    Yukawa {
        mu: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_r: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_radius: Option<f64>,
    },
    /// Two-column text file `r W(r)`.
    Tabulated {
        table: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_r: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split_radius: Option<f64>,
    },
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::Newton { split_r: None, split_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Zero,
    /// `sign·coeff·|s|^p/p`
    Power {
        #[serde(default = "one")]
        sign: f64,
        #[serde(default = "one")]
        coeff: f64,
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<f64>,
    },
    /// `c1|s|^ell/ell + c2|s|^p/p`
    TwoPower { c1: f64, ell: f64, c2: f64, p: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        Self::Power { sign: 1.0, coeff: 1.0, p: 2.5, k: None }
    }
}

impl NonlinearitySpec {
    pub fn build(&self, key: &str) -> Result<Nonlinearity, ConfigError> {
        let f = match *self {
            Self::Zero => Ok(Nonlinearity::zero()),
            Self::Power { sign, coeff, p, k } => {
                Nonlinearity::power(sign, coeff, p).and_then(|f| match k {
                    Some(k) => f.with_ar_constant(k),
                    None => Ok(f),
                })
            }
            Self::TwoPower { c1, ell, c2, p } => Nonlinearity::two_power(c1, ell, c2, p),
        };
        f.map_err(|e| err(key, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `amplitude · exp(-|x|²/(2 width²))`
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    /// Seeded sum of Gaussian bumps.
    Random,
    /// Snapshot stem written by an earlier run.
    Snapshot { path: PathBuf },
}

fn default_width() -> f64 {
    std::f64::consts::SQRT_2
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self::Gaussian { amplitude: 1.0, width: default_width() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Restart from `|v|` after convergence when `F(s) >= F(|s|)`.
    pub polish: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { polish: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub eps: f64,
    pub q: f64,
    #[serde(rename = "radius_R", alias = "radius_r")]
    pub radius_r: f64,
    pub rho: f64,
    /// Random trials behind the empirical convolution constant.
    pub conv_trials: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        let c = CheckSpec::default();
        Self {
            eps: c.eps,
            q: c.q,
            radius_r: c.radius_r,
            rho: c.rho,
            conv_trials: 20,
        }
    }
}

impl CheckConfig {
    pub fn spec(&self) -> CheckSpec {
        CheckSpec {
            eps: self.eps,
            q: self.q,
            radius_r: self.radius_r,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub starts: usize,
    /// Axis values; empty means the single value from `[model]`.
    pub m: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Empty means the single `[nonlinearity]`.
    pub nonlinearities: Vec<NonlinearitySpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            m: Vec::new(),
            omega: Vec::new(),
            lambda: Vec::new(),
            nonlinearities: Vec::new(),
        }
    }
}

impl SweepConfig {
    /// Apply an inline grid spec `key=v1,v2;key=...` with keys `m`, `omega`,
    /// `lambda` and `p` (power exponents of `+|s|^p/p`, or `zero`).
    pub fn apply_grid_spec(&mut self, spec: &str) -> Result<(), ConfigError> {
        for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, vals) = part
                .split_once('=')
                .ok_or_else(|| err("sweep", format!("grid spec entry `{part}` is not key=values")))?;
            let key = key.trim();
            let items: Vec<&str> = vals.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if items.is_empty() {
                return Err(err(&format!("sweep.{key}"), "no values given"));
            }
            let nums = |k: &str| -> Result<Vec<f64>, ConfigError> {
                items
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(&format!("sweep.{k}"), format!("`{s}` is not a number"))))
                    .collect()
            };
            match key {
                "m" => self.m = nums("m")?,
                "omega" => self.omega = nums("omega")?,
                "lambda" => self.lambda = nums("lambda")?,
                "p" => {
                    self.nonlinearities = items
                        .iter()
                        .map(|s| {
                            if *s == "zero" {
                                Ok(NonlinearitySpec::Zero)
                            } else {
                                s.parse::<f64>()
                                    .map(|p| NonlinearitySpec::Power { sign: 1.0, coeff: 1.0, p, k: None })
                                    .map_err(|_| err("sweep.p", format!("`{s}` is neither a number nor `zero`")))
                            }
                        })
                        .collect::<Result<_, _>>()?
                }
                other => return Err(err("sweep", format!("unknown grid spec key `{other}` (use m, omega, lambda, p)"))),
            }
        }
        Ok(())
    }
}

/// Library objects resolved from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub grid: Grid,
    pub params: ModelParams,
    pub kernel: Kernel,
    pub nonlinearity: Nonlinearity,
}

fn kernel_of(spec: &KernelSpec, base: &Path) -> Result<Kernel, ConfigError> {
    let (k, r, a) = match spec {
        KernelSpec::Newton { split_r, split_radius } => (Kernel::newton(), split_r, split_radius),
        KernelSpec::Yukawa { mu, split_r, split_radius } => {
            (Kernel::yukawa(*mu).map_err(|e| err("kernel.mu", e))?, split_r, split_radius)
        }
        KernelSpec::Tabulated { table, split_r, split_radius } => {
            let path = if table.is_absolute() { table.clone() } else { base.join(table) };
            let t = RadialTable::from_path(&path).map_err(|e| err("kernel.table", format!("{}: {e}", path.display())))?;
            (Kernel::tabulated(t), split_r, split_radius)
        }
    };
    let (dr, da) = (k.split_r, k.split_radius);
    k.with_split(r.unwrap_or(dr), a.unwrap_or(da)).map_err(|e| err("kernel", e))
}

impl RunConfig {
    /// Parse `text`, apply environment overrides from `env`, and deserialize.
    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(format!("config: {e}")))?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (k, v) in overrides {
            apply_override(&mut doc, &k, &v)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("config: {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, std::env::vars())
    }

    /// Check every numeric range and build the library objects. `base` is the
    /// directory relative paths in the config are resolved against.
    pub fn resolve(&self, base: &Path) -> Result<Resolved, ConfigError> {
        let g = self.grid;
        let grid = Grid::new(g.dim, g.n, g.extent).map_err(|e| err("grid", e))?;
        let m = self.model;
        let params = ModelParams::new(m.m, m.omega, m.lambda).map_err(|e| ConfigError(e.to_string()))?;
        let kernel = kernel_of(&self.kernel, base)?;
        let nonlinearity = self.nonlinearity.build("nonlinearity")?;
        self.solver.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.check.spec().validate(g.dim).map_err(|e| ConfigError(e.to_string()))?;
        if self.check.conv_trials == 0 {
            return Err(err("check.conv_trials", "need at least one trial"));
        }
        if self.sweep.starts == 0 {
            return Err(err("sweep.starts", "need at least one start per point"));
        }
        if let Some(0) = self.threads {
            return Err(err("threads", "must be at least 1"));
        }
        match &self.initial {
            InitialSpec::Gaussian { amplitude, width } => {
                if !(amplitude.is_finite() && *amplitude != 0.0) {
                    return Err(err("initial.amplitude", "must be finite and nonzero"));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(err("initial.width", "must be positive"));
                }
            }
            InitialSpec::Random | InitialSpec::Snapshot { .. } => {}
        }
        for (i, f) in self.sweep.nonlinearities.iter().enumerate() {
            f.build(&format!("sweep.nonlinearities[{i}]"))?;
        }
        for (key, vals) in [("sweep.m", &self.sweep.m), ("sweep.omega", &self.sweep.omega), ("sweep.lambda", &self.sweep.lambda)] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err(key, "values must be finite"));
            }
        }
        Ok(Resolved {
            grid,
            params,
            kernel,
            nonlinearity,
        })
    }
}

/// `RELHARTREE_SOLVER__TOL=1e-9` sets `solver.tol`. Values are read as TOML
/// literals, falling back to plain strings.
fn apply_override(doc: &mut toml::Table, name: &str, raw: &str) -> Result<(), ConfigError> {
    let path: Vec<String> = name[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(ConfigError(format!("{name}: malformed override name")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = doc;
    for key in &path[..path.len() - 1] {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("{name}: `{key}` is not a table")))?;
    }
    let last = path.last().expect("nonempty path");
    // keep the canonical spelling of mixed-case keys
    let key = match last.as_str() {
        "l" => "L".to_string(),
        "radius_r" => "radius_R".to_string(),
        _ => last.clone(),
    };
    table.insert(key, value);
    Ok(())
}
