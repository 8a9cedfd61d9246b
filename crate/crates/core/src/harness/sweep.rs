//! Sweep execution and the CSV row format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{Cell, CellConfig, ExperimentSpec, ScoreKind};
use crate::distributions::{forward_marginal, kl_to_standard_gaussian};
use crate::error::{Error, Result};
use crate::linalg::{sym_operator_norm, Samples};
use crate::metrics::{
    energy_distance, hessian_tail_proxy, kl_gaussian, rate_fit, sliced_w2, theoretical_bound, w2_gaussian,
    BoundParams, BoundSetting,
};
use crate::rng::derive_seed;
use crate::samplers::{propagate_affine_law, reference_chain, rescale_output, run_chain, GaussianLaw, SamplerConfig, Scheme};
use crate::schedules::{exp_pi_reference, pi_functional, power_pi_reference, schedule_functionals};
use crate::score_models::{fit_dsm_affine, make_perturbed, weighted_score_error, BiasDirection, ScoreModel};

/// Metric names accepted in `metrics`.
pub const METRICS: &[&str] = &[
    "kl",
    "w2",
    "sliced_w2",
    "energy",
    "forward_kl",
    "schedule_pi",
    "score_error",
    "hessian_proxy",
    "lipschitz",
];

/// CSV header. The first sixteen columns are the fixed schema; `params` holds
/// the cell's remaining coordinates and `error` the failure message, if any.
pub const COLUMNS: &[&str] = &[
    "scheme",
    "schedule_kind",
    "alpha",
    "grid_kind",
    "N",
    "c",
    "d",
    "delta",
    "T",
    "eps0",
    "score_kind",
    "metric",
    "value",
    "stderr",
    "predicted_bound",
    "seed",
    "params",
    "error",
];

/// Maps config keys to the fixed columns that record them.
const KEY_COLUMNS: &[(&str, &str)] = &[
    ("sampler.scheme", "scheme"),
    ("schedule.kind", "schedule_kind"),
    ("schedule.alpha", "alpha"),
    ("grid.kind", "grid_kind"),
    ("grid.N", "N"),
    ("grid.c", "c"),
    ("distribution.d", "d"),
    ("grid.delta", "delta"),
    ("grid.T", "T"),
    ("score.eps0", "eps0"),
    ("score.kind", "score_kind"),
];

/// One CSV line, kept as text so rows read back from disk compare equal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub fields: BTreeMap<String, String>,
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn get(&self, col: &str) -> &str {
        self.fields.get(col).map(String::as_str).unwrap_or("")
    }

    pub fn num(&self, col: &str) -> Option<f64> {
        self.get(col).parse().ok()
    }

    pub fn set(&mut self, col: &str, v: impl Into<String>) {
        self.fields.insert(col.to_string(), v.into());
    }

    pub fn is_slope(&self) -> bool {
        self.get("metric").starts_with("slope:")
    }

    pub fn is_error(&self) -> bool {
        !self.get("error").is_empty()
    }

    pub fn record(&self) -> Vec<&str> {
        COLUMNS.iter().map(|c| self.get(c)).collect()
    }

    pub fn from_record(rec: &csv::StringRecord) -> Self {
        let fields = COLUMNS.iter().zip(rec.iter()).map(|(c, v)| (c.to_string(), v.to_string())).collect();
        Self { fields }
    }

    /// Parameters of the cell that have no column of their own.
    pub fn params(&self) -> BTreeMap<String, String> {
        self.get("params")
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect()
    }
}

/// Rows of every cell followed by the fitted slopes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub rows: Vec<Row>,
    pub slopes: Vec<Row>,
}

impl ExperimentResult {
    pub fn all_rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().chain(&self.slopes)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(COLUMNS)?;
        for r in self.all_rows() {
            wr.write_record(r.record())?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != COLUMNS {
            return Err(Error::InvalidInput(format!("{} does not have the result columns", path.display())));
        }
        let mut out = Self::default();
        for rec in rd.records() {
            let row = Row::from_record(&rec?);
            if row.is_slope() {
                out.slopes.push(row);
            } else {
                out.rows.push(row);
            }
        }
        Ok(out)
    }
}

/// Row skeleton holding the cell coordinates.
fn base_row(cell: &Cell, c: &CellConfig, seed: u64) -> Row {
    let mut row = Row::default();
    row.set("scheme", c.scheme.short_name());
    row.set("schedule_kind", c.schedule.kind_name());
    row.set("alpha", fmt_opt(c.schedule.alpha_param()));
    row.set("grid_kind", c.grid_kind.clone());
    row.set("N", c.grid.n_steps().to_string());
    row.set("c", fmt_opt(c.c));
    row.set("d", c.data.dim().to_string());
    row.set("delta", c.delta.to_string());
    row.set("T", c.t_end.to_string());
    row.set("eps0", c.eps0.to_string());
    row.set("score_kind", c.score_kind.name());
    row.set("seed", seed.to_string());
    let params: Vec<String> = cell
        .params
        .iter()
        .filter(|(k, _)| !KEY_COLUMNS.iter().any(|(key, _)| key == k))
        .map(|(k, v)| format!("{k}={}", v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
        .collect();
    row.set("params", params.join(";"));
    row
}

/// Lazily built pieces shared by the metrics of one cell.
struct CellRun<'a> {
    cfg: &'a CellConfig,
    seed: u64,
    model: Option<ScoreModel>,
    law: Option<GaussianLaw>,
    samples: Option<(Samples, Samples)>,
}

impl<'a> CellRun<'a> {
    fn sub_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    fn model(&mut self) -> Result<&ScoreModel> {
        if self.model.is_none() {
            let c = self.cfg;
            let m = match c.score_kind {
                ScoreKind::Exact => ScoreModel::exact(&c.data, &c.grid, &c.schedule)?,
                ScoreKind::Perturbed => {
                    let exact = ScoreModel::exact(&c.data, &c.grid, &c.schedule)?;
                    let dir = if c.random_direction {
                        BiasDirection::Random(self.sub_seed("direction"))
                    } else {
                        BiasDirection::FirstAxis
                    };
                    make_perturbed(&exact, &c.grid, &c.schedule, c.eps0, c.policy, dir)?
                }
                ScoreKind::DsmAffine => {
                    let seed = c.score_seed.unwrap_or_else(|| self.sub_seed("score"));
                    fit_dsm_affine(&c.data, &c.grid, &c.schedule, c.n_fit, seed)?
                }
            };
            self.model = Some(m);
        }
        Ok(self.model.as_ref().expect("just built"))
    }

    fn sampler_seed(&self) -> u64 {
        self.cfg.sampler_seed.unwrap_or_else(|| self.sub_seed("sampler"))
    }

    /// Output law of the chain and the matching Gaussian target.
    fn laws(&mut self) -> Result<(GaussianLaw, GaussianLaw)> {
        let c = self.cfg;
        let target = if c.rescale {
            c.data.clone()
        } else {
            forward_marginal(&c.data, &c.schedule, c.grid.start())?.mixture().clone()
        };
        let (m, cov) = match target.components() {
            [one] => (one.mean.clone(), one.cov.clone()),
            _ => return Err(Error::UnsupportedModel("law metrics need single-Gaussian data".into())),
        };
        if self.law.is_none() {
            let seed = self.sampler_seed();
            let model = self.model()?.clone();
            let sc = SamplerConfig::new(c.scheme, &c.grid, &c.schedule, &model, seed, 0);
            let mut law = propagate_affine_law(&sc)?;
            if c.rescale {
                law = rescale_output(law, c.grid.start(), &c.schedule)?;
            }
            self.law = Some(law);
        }
        Ok((GaussianLaw { mean: m, cov }, self.law.clone().expect("just built")))
    }

    /// Chain output and target samples of equal size.
    fn samples(&mut self) -> Result<&(Samples, Samples)> {
        if self.samples.is_none() {
            let c = self.cfg;
            let seed = self.sampler_seed();
            let target_seed = self.sub_seed("target");
            let model = self.model()?.clone();
            let sc = SamplerConfig::new(c.scheme, &c.grid, &c.schedule, &model, seed, c.n_samples);
            let mut out = run_chain(&sc)?;
            let mut target = if c.reference_refine >= 2 {
                let rc = SamplerConfig { seed: target_seed, ..sc.clone() };
                reference_chain(&rc, &c.data, c.reference_refine)?
            } else if c.rescale {
                c.data.sample(c.n_samples, target_seed)
            } else {
                crate::distributions::sample_forward(&c.data, &c.schedule, c.grid.start(), c.n_samples, target_seed)
            };
            if c.rescale {
                out = rescale_output(out, c.grid.start(), &c.schedule)?;
                if c.reference_refine >= 2 {
                    target = rescale_output(target, c.grid.start(), &c.schedule)?;
                }
            }
            self.samples = Some((out, target));
        }
        Ok(self.samples.as_ref().expect("just built"))
    }

    fn kl_bound(&self) -> Option<f64> {
        let c = self.cfg;
        let f = schedule_functionals(&c.grid, &c.schedule);
        let eps0_sq = match c.score_kind {
            ScoreKind::Exact => 0.0,
            ScoreKind::Perturbed => c.eps0 * c.eps0,
            ScoreKind::DsmAffine => return None,
        };
        let params = BoundParams {
            m2: Some(c.data.second_moment()),
            d: Some(c.data.dim() as f64),
            g_t: Some(c.schedule.cumulative(c.grid.end())),
            eps0_sq: Some(eps0_sq),
            lipschitz: c.lipschitz,
            pi2: Some(f.pi2),
            pi3: Some(f.pi3),
            pi: f.pi,
            n: Some(c.grid.n_steps() as f64),
        };
        let em = c.scheme == Scheme::EulerMaruyama;
        let setting = match (f.pi.is_some(), em) {
            (true, false) => BoundSetting::GeneralEi,
            (true, true) => BoundSetting::GeneralEm,
            (false, false) => BoundSetting::SmoothEi,
            (false, true) => BoundSetting::SmoothEm,
        };
        theoretical_bound(setting, &params).ok()
    }

    /// `(value, stderr, predicted)` of one metric.
    fn metric(&mut self, name: &str) -> Result<(f64, f64, Option<f64>)> {
        let c = self.cfg;
        let d = c.data.dim() as f64;
        match name {
            "kl" => {
                let (target, law) = self.laws()?;
                Ok((kl_gaussian(&target, &law)?, 0.0, self.kl_bound()))
            }
            "w2" => {
                let (target, law) = self.laws()?;
                Ok((w2_gaussian(&target, &law), 0.0, None))
            }
            "sliced_w2" => {
                let seed = self.sub_seed("projections");
                let projections = c.projections;
                let (a, b) = self.samples()?;
                let (v, se) = sliced_w2(a, b, projections, seed)?;
                Ok((v, se, None))
            }
            "energy" => {
                let (a, b) = self.samples()?;
                Ok((energy_distance(a, b)?, 0.0, None))
            }
            "forward_kl" => {
                let m = forward_marginal(&c.data, &c.schedule, c.t_end)?;
                let kl = kl_to_standard_gaussian(&m, c.n_mc, self.sub_seed("forward_kl"))?;
                let bound = (d + c.data.second_moment()) * (-c.schedule.cumulative(c.t_end)).exp();
                Ok((kl.value.max(0.0), kl.stderr, Some(bound)))
            }
            "schedule_pi" => {
                let pi = pi_functional(&c.grid, &c.schedule)?;
                let g_delta = c.schedule.cumulative(c.grid.start());
                let g_t = c.schedule.cumulative(c.grid.end());
                let reference = match (c.grid_kind.as_str(), c.c) {
                    ("exp_decreasing", Some(step)) => Some(exp_pi_reference(step, c.grid.start(), c.grid.end())),
                    ("uniform", _) => Some(power_pi_reference(
                        c.schedule.alpha_param().unwrap_or(0.0),
                        g_delta,
                        g_t,
                        c.grid.n_steps(),
                    )),
                    _ => None,
                };
                Ok((pi, 0.0, reference))
            }
            "score_error" => {
                let seed = self.sub_seed("score_error");
                let n_mc = c.n_mc;
                let model = self.model()?;
                let (v, se) = weighted_score_error(model, &c.data, &c.grid, &c.schedule, n_mc, seed)?;
                let predicted = (c.score_kind == ScoreKind::Perturbed).then_some(c.eps0 * c.eps0);
                Ok((v, se, predicted))
            }
            "hessian_proxy" => {
                let s2 = c.sigma_sq.unwrap_or_else(|| c.schedule.sigma_sq(c.grid.start()));
                let v = hessian_tail_proxy(&c.data, s2, c.n_mc, self.sub_seed("hessian"))?;
                Ok((v, 0.0, Some(d / s2)))
            }
            "lipschitz" => {
                let l = c
                    .lipschitz
                    .ok_or_else(|| Error::UnsupportedModel("lipschitz metric needs single-Gaussian data".into()))?;
                let t = c.grid.start();
                let m = forward_marginal(&c.data, &c.schedule, t)?;
                let h = m.hessian_log_density(&DVector::zeros(c.data.dim()))?;
                let (a, s2) = (c.schedule.alpha_at(t), c.schedule.sigma_sq(t));
                let predicted = (s2 <= a / (2.0 * l)).then_some(2.0 * l / a);
                Ok((sym_operator_norm(&h), 0.0, predicted))
            }
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Evaluates every metric of one cell; failures become error rows.
pub fn run_cell(cell: &Cell, cfg: &CellConfig, metrics: &[String], master_seed: u64) -> Vec<Row> {
    let seed = derive_seed(master_seed, &cell.key());
    let mut run = CellRun { cfg, seed, model: None, law: None, samples: None };
    metrics
        .iter()
        .map(|m| {
            let mut row = base_row(cell, cfg, seed);
            row.set("metric", m.clone());
            match run.metric(m) {
                Ok((v, se, pred)) => {
                    row.set("value", v.to_string());
                    row.set("stderr", se.to_string());
                    row.set("predicted_bound", fmt_opt(pred));
                }
                Err(e) => row.set("error", e.to_string()),
            }
            row
        })
        .collect()
}

/// Log-log slopes of each metric along every swept numeric key, holding the
/// other coordinates fixed. Groups need three or more positive points.
pub fn fit_slopes(rows: &[Row], swept: &[String]) -> Vec<Row> {
    let mut out = Vec::new();
    for key in swept {
        let col = KEY_COLUMNS.iter().find(|(k, _)| k == key).map(|(_, c)| *c);
        let x_of = |r: &Row| -> Option<f64> {
            match col {
                Some(c) => r.num(c),
                None => r.params().get(key.as_str()).and_then(|v| v.parse().ok()),
            }
        };
        let group_of = |r: &Row| -> Row {
            let mut g = r.clone();
            for c in ["value", "stderr", "predicted_bound", "seed"] {
                g.set(c, "");
            }
            match col {
                Some("N") | Some("c") => {
                    g.set("N", "");
                    g.set("c", "");
                }
                Some(c) => g.set(c, ""),
                None => {
                    let p: Vec<String> = r
                        .params()
                        .into_iter()
                        .filter(|(k, _)| k != key)
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    g.set("params", p.join(";"));
                }
            }
            g
        };
        let mut groups: Vec<(Row, Vec<&Row>)> = Vec::new();
        for r in rows.iter().filter(|r| !r.is_error() && x_of(r).is_some()) {
            let g = group_of(r);
            match groups.iter_mut().find(|(k, _)| *k == g) {
                Some((_, members)) => members.push(r),
                None => groups.push((g, vec![r])),
            }
        }
        for (mut g, members) in groups {
            let pts: Vec<(f64, f64)> = members.iter().filter_map(|r| Some((x_of(r)?, r.num("value")?))).collect();
            let Ok(fit) = rate_fit(&pts) else { continue };
            let predicted: Option<Vec<(f64, f64)>> =
                members.iter().map(|r| Some((x_of(r)?, r.num("predicted_bound")?))).collect();
            let pred_slope = predicted.and_then(|p| rate_fit(&p).ok()).map(|f| f.slope);
            let metric = g.get("metric").to_string();
            g.set("metric", format!("slope:{metric}:{key}"));
            g.set("value", fit.slope.to_string());
            g.set("stderr", fit.stderr.to_string());
            g.set("predicted_bound", fmt_opt(pred_slope));
            out.push(g);
        }
    }
    out
}

/// Runs all cells on `spec.workers` threads and, when `spec.out` is set,
/// writes the CSV as cells finish (in cell order).
pub fn run_sweep(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let cells = spec.cells();
    let configs = cells
        .iter()
        .map(|c| CellConfig::from_cell(c).map_err(|e| Error::Config(format!("cell [{}]: {e}", c.key()))))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut writer = match &spec.out {
        Some(path) => {
            let mut w = csv::Writer::from_writer(File::create(path)?);
            w.write_record(COLUMNS)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut result = ExperimentResult::default();
    let jobs: Vec<(&Cell, &CellConfig)> = cells.iter().zip(&configs).collect();
    for chunk in jobs.chunks(spec.workers.max(1)) {
        let rows: Vec<Vec<Row>> =
            pool.install(|| chunk.par_iter().map(|(cell, cfg)| run_cell(cell, cfg, &spec.metrics, spec.seed)).collect());
        for r in rows.into_iter().flatten() {
            if let Some(w) = writer.as_mut() {
                w.write_record(r.record())?;
            }
            result.rows.push(r);
        }
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
    }
    result.slopes = fit_slopes(&result.rows, &spec.swept_keys());
    if let Some(w) = writer.as_mut() {
        for r in &result.slopes {
            w.write_record(r.record())?;
        }
        w.flush()?;
    }
    Ok(result)
}
