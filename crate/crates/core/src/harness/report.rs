use std::path::Path;

use serde::Serialize;

use super::evaluate::Evaluation;
use super::pipeline::{Reconstruction, StageTiming};
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::geometry::DiscreteManifold;
use crate::potential::{PotentialEstimate, PotentialParams};
use crate::slicing::CellPartition;

fn csv_err(e: csv::Error) -> Error {
    Error::Config(e.to_string())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ScenarioRecord<'a> {
    hash: String,
    scenario: &'a Scenario,
}

/// Effective configuration with its hash.
pub fn write_scenario(s: &Scenario, dir: &Path) -> Result<()> {
    write_json(
        &ScenarioRecord {
            hash: s.hash_hex()?,
            scenario: s,
        },
        &dir.join("scenario.json"),
    )
}

pub fn write_partition(part: &CellPartition, dir: &Path) -> Result<()> {
    let man = part.manifold();
    write_rows(
        &dir.join("partition.csv"),
        &["cell", "anchor", "grid", "x1", "x2", "cell_size"],
        part.net().iter().enumerate().map(|(k, &z)| {
            let c = man.coords(z);
            vec![
                k.to_string(),
                (k < part.anchor_count()).to_string(),
                z.0.to_string(),
                format!("{:.10}", c[0]),
                format!("{:.10}", c[1]),
                part.cells()[k].len().to_string(),
            ]
        }),
    )
}

pub fn write_near(estimate: &PotentialEstimate, man: &DiscreteManifold, dir: &Path) -> Result<()> {
    write_rows(
        &dir.join("near.csv"),
        &["grid", "x1", "x2", "q_hat"],
        estimate.near.iter().map(|r| {
            let c = man.coords(r.point);
            vec![
                r.point.0.to_string(),
                format!("{:.10}", c[0]),
                format!("{:.10}", c[1]),
                format!("{:.10}", r.q_hat),
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterEcho {
    pub c1: f64,
    pub sigma_target: f64,
    pub energy_bound: f64,
    pub eps1: f64,
    pub r_l: f64,
    pub u_radius: f64,
    pub metric_radius: f64,
    pub potential: PotentialParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub metric_max_error: f64,
    pub metric_mean_error: f64,
    pub metric_worst_pair: (String, String),
    pub q_far_max_error: Option<f64>,
    pub q_near_max_error: Option<f64>,
    pub covering_radius: f64,
    pub proximity: f64,
    pub c3: f64,
    pub empty_slices: usize,
    pub overlap_points: usize,
    pub overlap_max_gap: f64,
    pub overlap_allowance: f64,
    pub overlap_holds: bool,
    pub sigma_achieved_max: Option<f64>,
    pub blind_evaluations: usize,
}

/// Deterministic summary of a run; timings are kept apart so that repeated
/// runs produce identical reports.
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub scenario_hash: String,
    pub scenario: Scenario,
    pub parameters: ParameterEcho,
    pub cells: usize,
    pub anchors: usize,
    pub classes: usize,
    pub accepted: f64,
    pub threshold: f64,
    pub inner_entries: usize,
    pub triangle_excess: f64,
    pub lower_bound_violation: f64,
    pub base_consistency: f64,
    pub carried_slices: usize,
    pub near_points: usize,
    pub memo_size: usize,
    pub evaluation: Option<EvaluationSummary>,
}

impl ReconstructionReport {
    pub fn new(r: &Reconstruction, eval: Option<&Evaluation>) -> Result<Self> {
        let s = &r.scenario;
        let lambda1 = r.data.eigenvalues()[0];
        let eps = s.eps;
        let evaluation = eval.map(|e| EvaluationSummary {
            metric_max_error: e.metric.max,
            metric_mean_error: e.metric.mean,
            metric_worst_pair: (
                r.space.labels[e.metric.worst.0].clone(),
                r.space.labels[e.metric.worst.1].clone(),
            ),
            q_far_max_error: e.q_far_max,
            q_near_max_error: e.q_near_max,
            covering_radius: e.covering_radius,
            proximity: e.proximity,
            c3: e.c3(eps),
            empty_slices: e.empty_slices.len(),
            overlap_points: e.overlap.points,
            overlap_max_gap: e.overlap.max_gap,
            overlap_allowance: e.overlap.allowance,
            overlap_holds: e.overlap.holds,
            sigma_achieved_max: e.sigma_max(),
            blind_evaluations: e.sigma.len(),
        });
        Ok(Self {
            scenario_hash: s.hash_hex()?,
            scenario: s.clone(),
            parameters: ParameterEcho {
                c1: r.c1,
                sigma_target: r.sigma,
                energy_bound: s.energy(lambda1),
                eps1: s.eps1(r.sigma),
                r_l: s.r_l(),
                u_radius: s.u_radius(),
                metric_radius: r.space.radius,
                potential: r.estimate.params,
            },
            cells: r.partition.len(),
            anchors: r.partition.anchor_count(),
            classes: r.catalog.class_count(),
            accepted: r.catalog.accepted,
            threshold: r.catalog.threshold,
            inner_entries: r.catalog.inner.len(),
            triangle_excess: r.space.triangle_excess(),
            lower_bound_violation: r.space.lower_bound_violation(eps),
            base_consistency: r.space.base_consistency(&r.partition),
            carried_slices: r.estimate.carried().count(),
            near_points: r.estimate.near.len(),
            memo_size: r.functional.memo_len(),
            evaluation,
        })
    }
}

pub fn write_timings(timings: &[StageTiming], dir: &Path) -> Result<()> {
    write_json(&timings, &dir.join("timings.json"))
}

/// summary.json plus the evaluation tables.
pub fn write_report(r: &Reconstruction, eval: Option<&Evaluation>, dir: &Path) -> Result<ReconstructionReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = ReconstructionReport::new(r, eval)?;
    write_json(&report, &dir.join("summary.json"))?;
    write_timings(&r.timings, dir)?;
    let Some(e) = eval else { return Ok(report) };
    let man = &r.forward.manifold;
    write_rows(
        &dir.join("points.csv"),
        &["entry", "grid", "x1", "x2"],
        e.points.iter().enumerate().map(|(i, x)| match x {
            Some(x) => {
                let c = man.coords(*x);
                vec![
                    r.space.labels[i].clone(),
                    x.0.to_string(),
                    format!("{:.10}", c[0]),
                    format!("{:.10}", c[1]),
                ]
            }
            None => vec![r.space.labels[i].clone(), String::new(), String::new(), String::new()],
        }),
    )?;
    write_rows(
        &dir.join("metric_errors.csv"),
        &["entry_i", "entry_k", "d_hat", "d", "abs_error"],
        e.metric_pairs(r).into_iter().map(|(i, k, dh, d)| {
            vec![
                r.space.labels[i].clone(),
                r.space.labels[k].clone(),
                format!("{dh:.6}"),
                format!("{d:.6}"),
                format!("{:.6}", (dh - d).abs()),
            ]
        }),
    )?;
    r.estimate.write_csv(&dir.join("potential.csv"), Some(&e.oracle_q))?;
    let q = r.forward.potential.values();
    write_rows(
        &dir.join("near.csv"),
        &["grid", "x1", "x2", "q_hat", "oracle_q", "abs_error"],
        r.estimate.near.iter().map(|n| {
            let c = man.coords(n.point);
            vec![
                n.point.0.to_string(),
                format!("{:.10}", c[0]),
                format!("{:.10}", c[1]),
                format!("{:.10}", n.q_hat),
                format!("{:.10}", q[n.point.0]),
                format!("{:.10}", (n.q_hat - q[n.point.0]).abs()),
            ]
        }),
    )?;
    if !e.sigma.is_empty() {
        write_rows(
            &dir.join("sigma.csv"),
            &["alpha", "blind", "oracle", "sigma_achieved", "kkt_residual"],
            e.sigma.iter().map(|s| {
                vec![
                    s.key.clone(),
                    format!("{:.12}", s.blind),
                    format!("{:.12}", s.oracle),
                    format!("{:.6e}", s.sigma),
                    format!("{:.3e}", s.residual),
                ]
            }),
        )?;
    }
    Ok(report)
}
