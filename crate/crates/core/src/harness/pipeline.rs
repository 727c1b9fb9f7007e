use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{Mode, Scenario};
use crate::control::{InfluenceFunctional, QcqpOptions};
use crate::error::{Error, Result, Stage};
use crate::geometry::{DiscreteManifold, GridPoint};
use crate::metric::{build_metric, FiniteMetricSpace, MetricConfig};
use crate::potential::{recover_q_far, recover_q_near, PotentialEstimate, PotentialParams, SliceField};
use crate::slicing::{build_catalog, build_partition, slice_functional, CatalogSource, CellPartition, SliceCatalog, SliceVariant};
use crate::spectra::{estimate_c1, perturb, solve_forward, write_archive, ForwardSolution, PotentialField, SpectralData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Exact forward data for a scenario: the oracle side of every comparison.
#[derive(Clone)]
pub struct ForwardArtifacts {
    pub manifold: DiscreteManifold,
    pub potential: PotentialField,
    pub solution: Arc<ForwardSolution>,
    pub seconds: f64,
}

/// Everything the reconstruction stages produced.
pub struct Reconstruction {
    pub scenario: Scenario,
    pub forward: ForwardArtifacts,
    pub base: GridPoint,
    pub data: Arc<SpectralData>,
    pub c1: f64,
    pub sigma: f64,
    pub partition: CellPartition,
    pub functional: Arc<InfluenceFunctional>,
    pub catalog: SliceCatalog,
    pub space: FiniteMetricSpace,
    /// ∫_{V_j}φ² per class.
    pub integrals: Vec<f64>,
    pub estimate: PotentialEstimate,
    pub timings: Vec<StageTiming>,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().map_err(|e| e.at_stage(stage));
    let seconds = t.elapsed().as_secs_f64();
    info!("stage {stage}: {seconds:.2} s");
    timings.push(StageTiming { stage, seconds });
    out
}

pub fn run_forward(s: &Scenario) -> Result<ForwardArtifacts> {
    let t = Instant::now();
    let run = || -> Result<ForwardArtifacts> {
        s.validate()?;
        let manifold = DiscreteManifold::flat_torus(s.n, s.m)?;
        let potential = PotentialField::sample(&manifold, &s.potential, s.c0)?;
        let mut solution = solve_forward(&manifold, &potential, s.modes)?;
        if let Some(seed) = s.rotation {
            solution = solution.with_random_cluster_rotation(seed);
        }
        Ok(ForwardArtifacts {
            manifold,
            potential,
            solution: Arc::new(solution),
            seconds: 0.0,
        })
    };
    let mut f = run().map_err(|e| e.at_stage(Stage::Forward))?;
    f.seconds = t.elapsed().as_secs_f64();
    Ok(f)
}

impl ForwardArtifacts {
    pub fn base_point(&self, s: &Scenario) -> GridPoint {
        self.manifold.point_at(&s.base)
    }

    /// Interior data on U = B(p, u_radius), δ-perturbed with the scenario seed.
    pub fn interior_data(&self, s: &Scenario) -> Result<SpectralData> {
        let p = self.base_point(s);
        let exact = self.solution.restrict(&self.manifold.ball_points(p, s.u_radius()));
        perturb(&exact, s.delta, s.seed)
    }
}

/// 𝓛ᵃ source for a scenario: exact integrals in oracle mode, the
/// admissible-set minimization on `data` in blind mode.
pub fn make_functional(
    s: &Scenario,
    forward: &ForwardArtifacts,
    data: &Arc<SpectralData>,
    part: &CellPartition,
    sigma: f64,
) -> Result<InfluenceFunctional> {
    match s.mode {
        Mode::Oracle => InfluenceFunctional::oracle(part.geometry().clone(), forward.solution.mode(0)),
        Mode::Blind => {
            let lambda1 = data.eigenvalues()[0];
            Ok(InfluenceFunctional::blind(
                part.geometry().clone(),
                data.clone(),
                s.energy(lambda1),
                s.eps1(sigma),
                sigma,
                QcqpOptions::default(),
            ))
        }
    }
}

pub fn catalog_source(s: &Scenario, forward: &ForwardArtifacts, functional: &Arc<InfluenceFunctional>) -> CatalogSource {
    match s.mode {
        Mode::Oracle => CatalogSource::Oracle {
            phi1: Arc::new(forward.solution.mode(0).to_vec()),
        },
        Mode::Blind => CatalogSource::Blind {
            functional: functional.clone(),
            budget: s.budget,
        },
    }
}

/// ∫_{V_j}φ² for every class through the memoized functional.
pub fn slice_integrals(func: &InfluenceFunctional, part: &CellPartition, catalog: &SliceCatalog) -> Result<Vec<f64>> {
    catalog
        .outer
        .par_iter()
        .map(|e| slice_functional(func, part, &e.tau, SliceVariant::Star))
        .collect()
}

pub fn metric_config(s: &Scenario) -> MetricConfig {
    MetricConfig {
        radius: s.metric_radius,
        ..MetricConfig::default()
    }
}

/// Forward solve followed by the reconstruction stages.
pub fn run_pipeline(s: &Scenario, out: Option<&Path>) -> Result<Reconstruction> {
    let forward = run_forward(s)?;
    reconstruct(s, &forward, out)
}

/// Perturbation through potential recovery on precomputed forward data.
/// With an output directory every stage writes its artifacts as soon as it
/// completes, so a failing run keeps the earlier ones.
pub fn reconstruct(s: &Scenario, forward: &ForwardArtifacts, out: Option<&Path>) -> Result<Reconstruction> {
    s.validate()?;
    let mut timings = vec![StageTiming {
        stage: Stage::Forward,
        seconds: forward.seconds,
    }];
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        super::report::write_scenario(s, dir)?;
    }
    let t = &mut timings;
    let base = forward.base_point(s);
    let data = Arc::new(timed(t, Stage::Perturb, || {
        let d = forward.interior_data(s)?;
        if let Some(dir) = out {
            write_archive(&d, &dir.join("data.bin"))?;
        }
        Ok(d)
    })?);
    let (partition, c1) = timed(t, Stage::Partition, || {
        let c1 = estimate_c1(&data)?;
        let part = build_partition(&forward.manifold, base, s.r0, s.eps, s.r_l(), s.smallness)?;
        if let Some(dir) = out {
            super::report::write_partition(&part, dir)?;
        }
        Ok((part, c1))
    })?;
    let sigma = s.sigma(partition.anchor_count());
    let (functional, catalog) = timed(t, Stage::Catalog, || {
        let functional = Arc::new(make_functional(s, forward, &data, &partition, sigma)?);
        let catalog = build_catalog(&partition, c1, &catalog_source(s, forward, &functional))?;
        if let Some(dir) = out {
            catalog.write_csv(&dir.join("catalog.csv"))?;
        }
        Ok((functional, catalog))
    })?;
    let space = timed(t, Stage::Metric, || {
        let space = build_metric(&partition, &catalog, &metric_config(s))?;
        if let Some(dir) = out {
            space.write_csv(&dir.join("metric.csv"))?;
        }
        Ok(space)
    })?;
    let (integrals, estimate) = timed(t, Stage::Potential, || {
        let integrals = slice_integrals(&functional, &partition, &catalog)?;
        let params = PotentialParams::new(
            s.n,
            s.eps,
            s.r0,
            data.eigenvalues()[0],
            c1,
            space.base_consistency(&partition),
        );
        let field = SliceField::new(params, &space, &integrals)?;
        let slices = recover_q_far(&field);
        let near = recover_q_near(&data, base, s.r0, params.rho)?;
        let estimate = PotentialEstimate { params, slices, near };
        if let Some(dir) = out {
            estimate.write_csv(&dir.join("potential.csv"), None)?;
            super::report::write_near(&estimate, &forward.manifold, dir)?;
        }
        Ok((integrals, estimate))
    })?;
    Ok(Reconstruction {
        scenario: s.clone(),
        forward: forward.clone(),
        base,
        data,
        c1,
        sigma,
        partition,
        functional,
        catalog,
        space,
        integrals,
        estimate,
        timings,
    })
}
