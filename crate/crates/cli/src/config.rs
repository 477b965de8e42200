//! Line-oriented run configuration: `section.key = value`, `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use specpart_core::grid::{Domain, Grid, Mask, Shape};
use specpart_core::optimizer::{geometric_ladder, ContinuationSchedule, InnerParams};
use specpart_core::specfun::SpectralCost;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Constraint { key: String, msg: String },
}

fn constraint(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        key: key.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
    /// SPMASK file; relative paths resolve against the config directory.
    Custom { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostSpec {
    PlainSum,
    PowerSum,
    Product,
}

impl fmt::Display for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostSpec::PlainSum => "plain_sum",
            CostSpec::PowerSum => "power_sum",
            CostSpec::Product => "product",
        })
    }
}

/// Which fields the diagnostics read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    /// The relaxed state with its multipliers.
    Relaxed,
    /// Eigenfunctions of the extracted cells.
    Cells,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub shape: ShapeSpec,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupsConfig {
    pub m: usize,
    pub k: Vec<usize>,
    pub cost: CostSpec,
    pub p_ladder: Vec<f64>,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub q: f64,
    pub beta_ladder: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub armijo: f64,
    pub min_step: f64,
    pub seed: u64,
    pub restarts: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub threshold: f64,
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub fields: FieldSource,
    /// Fixed sample center; the interface midpoint when absent.
    pub center: Option<(f64, f64)>,
    /// Radii `r_min·h ..= r_max·h`.
    pub r_min: usize,
    pub r_max: usize,
    pub probes: usize,
    /// Probe offset along the normal, in units of h.
    pub probe_distance: f64,
    pub interaction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub fields: bool,
    pub plotdata: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub groups: GroupsConfig,
    pub solver: SolverConfig,
    pub partition: PartitionConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
}

const KEYS: &[&str] = &[
    "domain.shape",
    "domain.width",
    "domain.height",
    "domain.radius",
    "domain.mask",
    "domain.h",
    "groups.m",
    "groups.k",
    "groups.cost",
    "groups.p_ladder",
    "groups.warm_start",
    "solver.q",
    "solver.beta_ladder",
    "solver.beta_start",
    "solver.beta_max",
    "solver.max_iter",
    "solver.tol",
    "solver.armijo",
    "solver.min_step",
    "solver.seed",
    "solver.restarts",
    "solver.eig_tol",
    "solver.eig_max_iter",
    "partition.threshold",
    "partition.smoothing",
    "diagnostics.enabled",
    "diagnostics.fields",
    "diagnostics.center",
    "diagnostics.r_min",
    "diagnostics.r_max",
    "diagnostics.probes",
    "diagnostics.probe_distance",
    "diagnostics.interaction",
    "output.dir",
    "output.fields",
    "output.plotdata",
];

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

fn parse_f64(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

impl Entries {
    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        self.0.get(key)
    }

    fn bad(&self, key: &str, what: &str) -> ConfigError {
        let e = &self.0[key];
        ConfigError::Syntax {
            line: e.line,
            msg: format!("{key}: expected {what}, got `{}`", e.value),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => parse_f64(&e.value).ok_or_else(|| self.bad(key, "a number")),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| self.bad(key, "a nonnegative integer")),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| self.bad(key, "a nonnegative integer")),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key).map(|e| e.value.as_str()) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(_) => Err(self.bad(key, "`true` or `false`")),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<&str>> {
        self.raw(key).map(|e| {
            e.value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.list(key) {
            None => Ok(None),
            Some(items) => items
                .iter()
                .map(|s| parse_f64(s).ok_or_else(|| self.bad(key, "a list of numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.list(key) {
            None => Ok(None),
            Some(items) => items
                .iter()
                .map(|s| s.parse().map_err(|_| self.bad(key, "a list of integers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn word(&self, key: &str) -> Option<&str> {
        self.raw(key).map(|e| e.value.as_str())
    }
}

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("expected `section.key = value`, got `{body}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("key `{key}` lacks a section prefix"),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("unknown key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("`{key}` has no value"),
            });
        }
        if let Some(prev) = map.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        ) {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("`{key}` already set on line {}", prev.line),
            });
        }
    }
    Ok(Entries(map))
}

fn read_mask(path: &Path) -> Result<(Mask, f64), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Read {
        path: path.display().to_string(),
        reason: err.to_string(),
    })?;
    Mask::parse_spmask(&text).map_err(|err| constraint("domain.mask", err.to_string()))
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(constraint(key, "must be positive and finite"))
    }
}

fn increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl RunConfig {
    /// Reads and validates a config file. Relative mask paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let e = tokenize(text)?;

        let shape = match e.word("domain.shape").unwrap_or("rectangle") {
            "rectangle" => ShapeSpec::Rectangle {
                width: positive("domain.width", e.f64_or("domain.width", 1.0)?)?,
                height: positive("domain.height", e.f64_or("domain.height", 1.0)?)?,
            },
            "disk" => ShapeSpec::Disk {
                radius: positive("domain.radius", e.f64_or("domain.radius", 0.5)?)?,
            },
            "custom" => match e.word("domain.mask") {
                Some(p) => ShapeSpec::Custom { path: base.join(p) },
                None => return Err(constraint("domain.mask", "required when domain.shape = custom")),
            },
            _ => return Err(e.bad("domain.shape", "`rectangle`, `disk` or `custom`")),
        };
        let used = |keys: &[&str]| keys.iter().find(|k| e.has(k)).map(|k| k.to_string());
        let stray = match &shape {
            ShapeSpec::Rectangle { .. } => used(&["domain.radius", "domain.mask"]),
            ShapeSpec::Disk { .. } => used(&["domain.width", "domain.height", "domain.mask"]),
            ShapeSpec::Custom { .. } => used(&["domain.width", "domain.height", "domain.radius"]),
        };
        if let Some(k) = stray {
            return Err(constraint(&k, "does not apply to this domain.shape"));
        }
        let h = match &shape {
            ShapeSpec::Custom { path } => {
                let (_, file_h) = read_mask(path)?;
                if e.has("domain.h") && e.f64_or("domain.h", file_h)? != file_h {
                    return Err(constraint("domain.h", format!("disagrees with the mask file spacing {file_h}")));
                }
                file_h
            }
            _ => positive("domain.h", e.f64_or("domain.h", 1.0 / 32.0)?)?,
        };

        let m = e.usize_or("groups.m", 2)?;
        if m == 0 {
            return Err(constraint("groups.m", "must be at least 1"));
        }
        let k = e.usize_list("groups.k")?.unwrap_or_else(|| vec![1; m]);
        if k.len() != m {
            return Err(constraint(
                "groups.k",
                format!("has {} entries but groups.m = {m}", k.len()),
            ));
        }
        if k.contains(&0) {
            return Err(constraint("groups.k", "entries must be at least 1"));
        }
        let cost = match e.word("groups.cost").unwrap_or("plain_sum") {
            "plain_sum" => CostSpec::PlainSum,
            "power_sum" => CostSpec::PowerSum,
            "product" => CostSpec::Product,
            _ => return Err(e.bad("groups.cost", "`plain_sum`, `power_sum` or `product`")),
        };
        let p_ladder = e.f64_list("groups.p_ladder")?.unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
        if p_ladder.is_empty() || p_ladder.iter().any(|p| !(*p >= 1.0) || !p.is_finite()) {
            return Err(constraint("groups.p_ladder", "exponents must be finite and at least 1"));
        }
        if !increasing(&p_ladder) {
            return Err(constraint("groups.p_ladder", "must be strictly increasing"));
        }
        if cost != CostSpec::PowerSum && e.has("groups.p_ladder") {
            return Err(constraint("groups.p_ladder", "only applies to groups.cost = power_sum"));
        }
        let groups = GroupsConfig {
            m,
            k,
            cost,
            p_ladder,
            warm_start: e.bool_or("groups.warm_start", true)?,
        };

        let q = e.f64_or("solver.q", 2.0)?;
        if !(q > 1.0) || !q.is_finite() {
            return Err(constraint("solver.q", "q must exceed 1"));
        }
        let beta_ladder = match e.f64_list("solver.beta_ladder")? {
            Some(l) => {
                if let Some(k) = used(&["solver.beta_start", "solver.beta_max"]) {
                    return Err(constraint(&k, "conflicts with solver.beta_ladder"));
                }
                l
            }
            None => {
                let start = e.f64_or("solver.beta_start", 1.0)?;
                if !(start > 0.0) || !start.is_finite() {
                    return Err(constraint("solver.beta_start", "must be positive and finite"));
                }
                let stop = e.f64_or("solver.beta_max", 16.0 / (h * h))?;
                if !(stop >= start) || !stop.is_finite() {
                    return Err(constraint("solver.beta_max", "must be finite and at least solver.beta_start"));
                }
                geometric_ladder(start, stop)
            }
        };
        let solver = SolverConfig {
            q,
            beta_ladder,
            max_iter: e.usize_or("solver.max_iter", 20_000)?,
            tol: e.f64_or("solver.tol", 1e-6)?,
            armijo: e.f64_or("solver.armijo", 1e-4)?,
            min_step: e.f64_or("solver.min_step", 1e-12)?,
            seed: e.u64_or("solver.seed", 0)?,
            restarts: e.usize_or("solver.restarts", 1)?,
            eig_tol: e.f64_or("solver.eig_tol", 1e-8)?,
            eig_max_iter: e.usize_or("solver.eig_max_iter", 5000)?,
        };

        let partition = PartitionConfig {
            threshold: e.f64_or("partition.threshold", 1e-3)?,
            smoothing: e.bool_or("partition.smoothing", false)?,
        };
        if !(0.0..1.0).contains(&partition.threshold) {
            return Err(constraint("partition.threshold", "must lie in [0, 1)"));
        }

        let center = match e.f64_list("diagnostics.center")? {
            None => None,
            Some(v) if v.len() == 2 => Some((v[0], v[1])),
            Some(_) => return Err(constraint("diagnostics.center", "needs two coordinates `x y`")),
        };
        let diagnostics = DiagnosticsConfig {
            enabled: e.bool_or("diagnostics.enabled", true)?,
            fields: match e.word("diagnostics.fields").unwrap_or("both") {
                "relaxed" => FieldSource::Relaxed,
                "cells" => FieldSource::Cells,
                "both" => FieldSource::Both,
                _ => return Err(e.bad("diagnostics.fields", "`relaxed`, `cells` or `both`")),
            },
            center,
            r_min: e.usize_or("diagnostics.r_min", 6)?,
            r_max: e.usize_or("diagnostics.r_max", 16)?,
            probes: e.usize_or("diagnostics.probes", 10)?,
            probe_distance: e.f64_or("diagnostics.probe_distance", 2.0)?,
            interaction: e.bool_or("diagnostics.interaction", false)?,
        };
        if diagnostics.r_min < 2 {
            return Err(constraint("diagnostics.r_min", "radii below 2h are not resolved"));
        }
        if diagnostics.r_max < diagnostics.r_min + 2 {
            return Err(constraint("diagnostics.r_max", "must exceed diagnostics.r_min by at least 2"));
        }
        positive("diagnostics.probe_distance", diagnostics.probe_distance)?;

        let output = OutputConfig {
            dir: PathBuf::from(e.word("output.dir").unwrap_or("specpart_out")),
            fields: e.bool_or("output.fields", true)?,
            plotdata: e.bool_or("output.plotdata", true)?,
        };

        let cfg = RunConfig {
            domain: DomainConfig { shape, h },
            groups,
            solver,
            partition,
            diagnostics,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks against the module preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.solver;
        if s.beta_ladder.is_empty() {
            return Err(constraint("solver.beta_ladder", "is empty"));
        }
        if s.beta_ladder.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(constraint("solver.beta_ladder", "values must be finite and nonnegative"));
        }
        if !increasing(&s.beta_ladder) {
            return Err(constraint("solver.beta_ladder", "must be strictly increasing"));
        }
        if s.max_iter == 0 {
            return Err(constraint("solver.max_iter", "must be at least 1"));
        }
        positive("solver.tol", s.tol)?;
        if !(s.armijo > 0.0 && s.armijo < 1.0) {
            return Err(constraint("solver.armijo", "must lie in (0, 1)"));
        }
        positive("solver.min_step", s.min_step)?;
        if s.restarts == 0 {
            return Err(constraint("solver.restarts", "must be at least 1"));
        }
        positive("solver.eig_tol", s.eig_tol)?;
        if s.eig_max_iter == 0 {
            return Err(constraint("solver.eig_max_iter", "must be at least 1"));
        }
        let grid = self.grid()?;
        let total: usize = self.groups.k.iter().sum();
        if total > grid.dofs() {
            return Err(constraint(
                "groups.k",
                format!("needs {total} fields but the grid has {} nodes", grid.dofs()),
            ));
        }
        Ok(())
    }

    fn grid(&self) -> Result<Grid<f64>, ConfigError> {
        let h = self.domain.h;
        let shape = match &self.domain.shape {
            ShapeSpec::Rectangle { width, height } => Shape::Rectangle {
                width: *width,
                height: *height,
            },
            ShapeSpec::Disk { radius } => Shape::Disk { radius: *radius },
            ShapeSpec::Custom { path } => Shape::Custom(read_mask(path)?.0),
        };
        Grid::build(shape, h).map_err(|err| constraint("domain", err.to_string()))
    }

    pub fn build_domain(&self) -> Result<Domain<f64>, ConfigError> {
        Ok(Domain::new(self.grid()?))
    }

    /// Costs at the first rung of the p ladder.
    pub fn costs(&self) -> Result<Vec<SpectralCost<f64>>, ConfigError> {
        self.costs_at(self.groups.p_ladder[0])
    }

    /// Costs at the last rung of the p ladder, as held by a finished run.
    pub fn final_costs(&self) -> Result<Vec<SpectralCost<f64>>, ConfigError> {
        self.costs_at(*self.groups.p_ladder.last().expect("validated nonempty"))
    }

    fn costs_at(&self, p: f64) -> Result<Vec<SpectralCost<f64>>, ConfigError> {
        self.groups
            .k
            .iter()
            .map(|&k| match self.groups.cost {
                CostSpec::PlainSum => Ok(SpectralCost::plain_sum(k)),
                CostSpec::Product => Ok(SpectralCost::product(k)),
                CostSpec::PowerSum => {
                    SpectralCost::power_sum(p, k).map_err(|err| constraint("groups.p_ladder", err.to_string()))
                }
            })
            .collect()
    }

    pub fn schedule(&self) -> ContinuationSchedule<f64> {
        ContinuationSchedule {
            beta_ladder: self.solver.beta_ladder.clone(),
            p_ladder: self.groups.p_ladder.clone(),
            inner: InnerParams {
                max_iter: self.solver.max_iter,
                tol: self.solver.tol,
                armijo: self.solver.armijo,
                min_step_rel: self.solver.min_step,
            },
            warm_start: self.groups.warm_start,
        }
    }
}
