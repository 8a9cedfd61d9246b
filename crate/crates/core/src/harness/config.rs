//! Experiment configs: TOML documents with dotted keys.
//!
//! Any scalar key given as an array becomes a sweep axis, and cells are the
//! Cartesian product of all axes. An optional `[[experiment]]` array holds
//! blocks whose keys override the top level; the sweep is then the union of
//! the blocks' products.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use toml::Value;

use crate::distributions::{Component, GaussianMixture};
use crate::error::{Error, Result};
use crate::samplers::Scheme;
use crate::schedules::{
    build_exp_decreasing_grid, build_exp_decreasing_grid_with_steps, build_uniform_grid, power_threshold_steps,
    DiscretizationGrid, VarianceSchedule,
};
use crate::score_models::BudgetPolicy;

const KNOWN_KEYS: &[&str] = &[
    "schedule.kind",
    "schedule.alpha",
    "grid.kind",
    "grid.delta",
    "grid.T",
    "grid.N",
    "grid.c",
    "grid.floor",
    "grid.K",
    "distribution.preset",
    "distribution.d",
    "distribution.mu",
    "distribution.var",
    "distribution.L",
    "distribution.name",
    "distribution.components",
    "score.kind",
    "score.eps0",
    "score.policy",
    "score.n_fit",
    "score.seed",
    "score.direction",
    "sampler.scheme",
    "sampler.n_samples",
    "sampler.seed",
    "sampler.rescale",
    "sampler.reference_refine",
    "metric.projections",
    "metric.n_mc",
    "metric.sigma_sq",
];

/// Keys whose array values are data, not sweep axes.
const ARRAY_VALUED: &[&str] = &["distribution.components"];

/// A parsed experiment: sweep blocks plus run-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub blocks: Vec<Vec<(String, Vec<Value>)>>,
    pub metrics: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

/// The parameters of one sweep cell, keyed by dotted name.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub params: BTreeMap<String, Value>,
}

impl Cell {
    /// Stable identity of the cell: sorted `key=value` pairs.
    pub fn key(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn axes_of(entries: Vec<(String, Value)>) -> Result<Vec<(String, Vec<Value>)>> {
    entries
        .into_iter()
        .map(|(k, v)| {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            let values = match v {
                Value::Array(a) if !ARRAY_VALUED.contains(&k.as_str()) => a,
                other => vec![other],
            };
            Ok((k, values))
        })
        .collect()
}

fn as_u64(v: &Value, what: &str) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::Config(format!("`{what}` must be a non-negative integer"))),
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut seed = 0;
        let mut workers = 1;
        let mut out = None;
        let mut metrics = Vec::new();
        let mut blocks_raw = Vec::new();
        let mut rest = toml::Table::new();
        for (k, v) in table {
            match k.as_str() {
                "seed" => seed = as_u64(&v, "seed")?,
                "workers" => workers = as_u64(&v, "workers")?.max(1) as usize,
                "out" => {
                    out = Some(PathBuf::from(v.as_str().ok_or_else(|| Error::Config("`out` must be a string".into()))?))
                }
                "metrics" => {
                    let list = match v {
                        Value::Array(a) => a,
                        other => vec![other],
                    };
                    metrics = list
                        .into_iter()
                        .map(|m| m.as_str().map(str::to_string).ok_or_else(|| Error::Config("metrics must be strings".into())))
                        .collect::<Result<_>>()?;
                }
                "experiment" => {
                    let arr = v.as_array().ok_or_else(|| Error::Config("`experiment` must be an array of tables".into()))?;
                    for b in arr {
                        let t = b.as_table().ok_or_else(|| Error::Config("`experiment` entries must be tables".into()))?;
                        blocks_raw.push(t.clone());
                    }
                }
                _ => {
                    rest.insert(k, v);
                }
            }
        }
        for m in &metrics {
            if !super::sweep::METRICS.contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown metric `{m}`")));
            }
        }
        let mut base = Vec::new();
        flatten("", &rest, &mut base);
        let blocks = if blocks_raw.is_empty() {
            vec![axes_of(base)?]
        } else {
            blocks_raw
                .iter()
                .map(|b| {
                    let mut over = Vec::new();
                    flatten("", b, &mut over);
                    let mut merged: BTreeMap<String, Value> = base.iter().cloned().collect();
                    merged.extend(over);
                    axes_of(merged.into_iter().collect())
                })
                .collect::<Result<_>>()?
        };
        Ok(Self { blocks, metrics, seed, workers, out })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Every cell in block order; within a block the last key varies fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for axes in &self.blocks {
            let total: usize = axes.iter().map(|(_, v)| v.len()).product();
            for flat in 0..total {
                let mut rem = flat;
                let mut params = BTreeMap::new();
                for (k, v) in axes.iter().rev() {
                    params.insert(k.clone(), v[rem % v.len()].clone());
                    rem /= v.len();
                }
                cells.push(Cell { params });
            }
        }
        cells
    }

    /// Names of keys that take more than one value in some block.
    pub fn swept_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .blocks
            .iter()
            .flat_map(|b| b.iter().filter(|(_, v)| v.len() > 1).map(|(k, _)| k.clone()))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Exact,
    Perturbed,
    DsmAffine,
}

impl ScoreKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Perturbed => "perturbed",
            Self::DsmAffine => "dsm_affine",
        }
    }
}

/// Fully typed and validated settings of one cell.
#[derive(Debug, Clone)]
pub struct CellConfig {
    pub schedule: VarianceSchedule,
    pub grid_kind: String,
    pub grid: DiscretizationGrid,
    pub delta: f64,
    pub t_end: f64,
    /// Step factor of an exponentially decreasing grid.
    pub c: Option<f64>,
    pub data: GaussianMixture,
    /// `1/λ_min` of the data covariance for single-Gaussian data.
    pub lipschitz: Option<f64>,
    pub score_kind: ScoreKind,
    pub eps0: f64,
    pub policy: BudgetPolicy,
    pub random_direction: bool,
    pub n_fit: usize,
    pub score_seed: Option<u64>,
    pub scheme: Scheme,
    pub n_samples: usize,
    pub sampler_seed: Option<u64>,
    pub rescale: bool,
    pub reference_refine: usize,
    pub projections: usize,
    pub n_mc: usize,
    pub sigma_sq: Option<f64>,
}

struct Params<'a>(&'a BTreeMap<String, Value>);

impl Params<'_> {
    fn get(&self, k: &str) -> Option<&Value> {
        self.0.get(k)
    }

    fn f64(&self, k: &str) -> Result<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(Error::Config(format!("`{k}` must be a number"))),
        }
    }

    fn f64_or(&self, k: &str, default: f64) -> Result<f64> {
        Ok(self.f64(k)?.unwrap_or(default))
    }

    fn usize(&self, k: &str) -> Result<Option<usize>> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => Ok(Some(as_u64(v, k)? as usize)),
        }
    }

    fn str_or<'b>(&'b self, k: &str, default: &'b str) -> Result<&'b str> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(Error::Config(format!("`{k}` must be a string"))),
        }
    }

    fn bool_or(&self, k: &str, default: bool) -> Result<bool> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(Error::Config(format!("`{k}` must be a boolean"))),
        }
    }
}

fn parse_cov(v: Option<&Value>, d: usize) -> Result<DMatrix<f64>> {
    let num = |x: &Value| x.as_float().or_else(|| x.as_integer().map(|i| i as f64));
    match v {
        None => Ok(DMatrix::identity(d, d)),
        Some(Value::String(s)) if s == "identity" => Ok(DMatrix::identity(d, d)),
        Some(Value::String(s)) if s == "zero" => Ok(DMatrix::zeros(d, d)),
        Some(Value::Array(rows)) => {
            if rows.len() != d {
                return Err(Error::Config(format!("covariance needs {d} rows")));
            }
            let mut m = DMatrix::zeros(d, d);
            for (r, row) in rows.iter().enumerate() {
                let row = row.as_array().filter(|a| a.len() == d).ok_or_else(|| Error::Config(format!("covariance row {r} needs {d} entries")))?;
                for (c, x) in row.iter().enumerate() {
                    m[(r, c)] = num(x).ok_or_else(|| Error::Config("covariance entries must be numbers".into()))?;
                }
            }
            Ok(m)
        }
        Some(x) => num(x)
            .map(|s| DMatrix::identity(d, d) * s)
            .ok_or_else(|| Error::Config("cov must be \"identity\", \"zero\", a number or a matrix".into())),
    }
}

fn parse_components(v: &Value) -> Result<GaussianMixture> {
    let arr = v.as_array().ok_or_else(|| Error::Config("components must be an array of tables".into()))?;
    let comps = arr
        .iter()
        .map(|c| {
            let t = c.as_table().ok_or_else(|| Error::Config("component must be a table".into()))?;
            let weight = t
                .get("weight")
                .and_then(|w| w.as_float().or_else(|| w.as_integer().map(|i| i as f64)))
                .ok_or_else(|| Error::Config("component needs a numeric weight".into()))?;
            let mean: Vec<f64> = t
                .get("mean")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Config("component needs a mean array".into()))?
                .iter()
                .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Config("mean entries must be numbers".into()))?;
            let d = mean.len();
            Ok(Component::new(weight, DVector::from_vec(mean), parse_cov(t.get("cov"), d)?))
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(comps).map_err(|e| Error::Config(e.to_string()))
}

fn build_distribution(p: &Params) -> Result<(GaussianMixture, Option<f64>)> {
    let cfg = |e: Error| Error::Config(e.to_string());
    if let Some(c) = p.get("distribution.components") {
        let mix = parse_components(c)?;
        return Ok((mix, None));
    }
    let d = p.usize("distribution.d")?.unwrap_or(1);
    let mu = p.f64_or("distribution.mu", 0.0)?;
    let var = p.f64_or("distribution.var", 1.0)?;
    let shift = || {
        let mut m = DVector::zeros(d);
        if d > 0 {
            m[0] = mu;
        }
        m
    };
    let mix = match p.str_or("distribution.preset", "standard_gaussian")? {
        "standard_gaussian" => GaussianMixture::standard_gaussian(d),
        "gaussian" => GaussianMixture::gaussian(shift(), DMatrix::identity(d, d) * var),
        "point_mass" => GaussianMixture::point_mass(shift()),
        "two_point" => GaussianMixture::two_point(d, mu, var),
        "anisotropic" => {
            let l = p.f64("distribution.L")?.ok_or_else(|| Error::Config("anisotropic needs distribution.L".into()))?;
            if !(l > 0.0) {
                return Err(Error::Config("distribution.L must be positive".into()));
            }
            let mut diag = DVector::from_element(d, 1.0);
            diag[0] = 1.0 / l;
            GaussianMixture::gaussian(shift(), DMatrix::from_diagonal(&diag))
        }
        "gmm" => GaussianMixture::preset(p.str_or("distribution.name", "")?, d),
        other => return Err(Error::Config(format!("unknown distribution preset `{other}`"))),
    }
    .map_err(cfg)?;
    let lipschitz = if mix.is_single_gaussian() {
        crate::metrics::precision_norm(&mix.components()[0].cov).ok()
    } else {
        None
    };
    Ok((mix, lipschitz))
}

impl CellConfig {
    pub fn from_cell(cell: &Cell) -> Result<Self> {
        let p = Params(&cell.params);
        let cfg = |e: Error| Error::Config(e.to_string());

        let schedule = match p.str_or("schedule.kind", "constant")? {
            "constant" => VarianceSchedule::Constant,
            "power" => VarianceSchedule::power(p.f64_or("schedule.alpha", 1.0)?).map_err(cfg)?,
            other => return Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        };
        let (data, lipschitz) = build_distribution(&p)?;
        let d = data.dim();

        let delta = p.f64_or("grid.delta", 1e-3)?;
        let t_end = p.f64_or("grid.T", 8.0)?;
        let floor = p.f64("grid.floor")?;
        let k_const = p.f64_or("grid.K", 2.0)?;
        let n_steps = match p.get("grid.N") {
            None => None,
            Some(Value::String(s)) if s == "auto" => {
                let alpha = schedule
                    .alpha_param()
                    .ok_or_else(|| Error::Config("grid.N = \"auto\" needs a power schedule".into()))?;
                Some(power_threshold_steps(alpha, delta, t_end, d, k_const).map_err(cfg)?)
            }
            Some(_) => p.usize("grid.N")?,
        };
        let grid_kind = p.str_or("grid.kind", "uniform")?.to_string();
        let (grid, c) = match grid_kind.as_str() {
            "uniform" => {
                let n = n_steps.ok_or_else(|| Error::Config("uniform grid needs grid.N".into()))?;
                (build_uniform_grid(delta, t_end, n).map_err(cfg)?, None)
            }
            "exp_decreasing" => match (p.f64("grid.c")?, n_steps) {
                (Some(c), _) => (build_exp_decreasing_grid(delta, t_end, c, floor).map_err(cfg)?, Some(c)),
                (None, Some(n)) => {
                    let (g, c) = build_exp_decreasing_grid_with_steps(delta, t_end, n, floor).map_err(cfg)?;
                    (g, Some(c))
                }
                (None, None) => return Err(Error::Config("exp_decreasing grid needs grid.c or grid.N".into())),
            },
            other => return Err(Error::Config(format!("unknown grid kind `{other}`"))),
        };

        let score_kind = match p.str_or("score.kind", "exact")? {
            "exact" => ScoreKind::Exact,
            "perturbed" => ScoreKind::Perturbed,
            "dsm_affine" => ScoreKind::DsmAffine,
            other => return Err(Error::Config(format!("unknown score kind `{other}`"))),
        };
        let eps0 = p.f64_or("score.eps0", 0.0)?;
        if eps0 < 0.0 {
            return Err(Error::Config("score.eps0 must be non-negative".into()));
        }
        let policy = BudgetPolicy::parse(p.str_or("score.policy", "uniform")?)?;
        let random_direction = match p.str_or("score.direction", "axis")? {
            "axis" => false,
            "random" => true,
            other => return Err(Error::Config(format!("unknown score direction `{other}`"))),
        };
        let n_fit = p.usize("score.n_fit")?.unwrap_or(1000);
        if score_kind == ScoreKind::DsmAffine && n_fit < d + 2 {
            return Err(Error::Config(format!("score.n_fit must be at least d + 2 = {}", d + 2)));
        }

        let reference_refine = p.usize("sampler.reference_refine")?.unwrap_or(0);
        if reference_refine == 1 {
            return Err(Error::Config("sampler.reference_refine must be 0 (off) or at least 2".into()));
        }
        let sigma_sq = p.f64("metric.sigma_sq")?;
        if sigma_sq.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("metric.sigma_sq must be positive".into()));
        }
        Ok(Self {
            schedule,
            grid_kind,
            grid,
            delta,
            t_end,
            c,
            data,
            lipschitz,
            score_kind,
            eps0,
            policy,
            random_direction,
            n_fit,
            score_seed: p.usize("score.seed")?.map(|s| s as u64),
            scheme: Scheme::parse(p.str_or("sampler.scheme", "ei")?)?,
            n_samples: p.usize("sampler.n_samples")?.unwrap_or(1000),
            sampler_seed: p.usize("sampler.seed")?.map(|s| s as u64),
            rescale: p.bool_or("sampler.rescale", false)?,
            reference_refine,
            projections: p.usize("metric.projections")?.unwrap_or(100).max(1),
            n_mc: p.usize("metric.n_mc")?.unwrap_or(100_000).max(2),
            sigma_sq,
        })
    }
}
