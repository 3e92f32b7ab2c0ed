//! Long runs of the full process on a torus, each paired with a control run
//! without fires that uses the same seed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stats::Moments;
use super::{Estimate, Runner};
use crate::engine::{Halt, ObserverPlan, Simulation, StopRule};
use crate::error::{config, Error, Result};
use crate::lattice::{Boundary, Lattice, SiteState};
use crate::processes::{check_condition_1, ConditionReport, InitialConfig, TwoTypeParams};
use crate::rng::{rng_from_seed, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceConfig {
    pub params: TwoTypeParams,
    /// Torus side.
    pub size: u32,
    #[serde(default = "full_mix")]
    pub initial: InitialConfig,
    pub t_max: f64,
    pub sample_dt: f64,
    /// Critical value the parameters are checked against.
    pub lambda_c: f64,
}

fn full_mix() -> InitialConfig {
    InitialConfig::Random { p1: 0.5, p2: 0.5 }
}

/// Mean densities across replicates at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub t: f64,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub survive1: bool,
    pub survive2: bool,
    /// Extinction time of the 1's in the control, if it happened.
    pub control_extinction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceOutcome {
    pub survive1: Estimate,
    pub survive2: Estimate,
    pub both: Estimate,
    pub series: Vec<DensityPoint>,
    /// Control run: fires off, halted once the 1's are gone.
    pub control: Vec<DensityPoint>,
    /// Control type-1 mean density never increases between samples and
    /// ends below where it started.
    pub control_monotone_decline: bool,
    pub control_survive1: Estimate,
    pub condition: ConditionReport,
    pub records: Vec<ReplicateRecord>,
}

impl CoexistenceOutcome {
    pub fn raw_csv(&self) -> String {
        let mut s = String::from("replicate,survive1,survive2,control_extinction\n");
        for (i, r) in self.records.iter().enumerate() {
            let ext = r
                .control_extinction
                .map_or(String::new(), |t| t.to_string());
            s.push_str(&format!(
                "{i},{},{},{ext}\n",
                r.survive1 as u8, r.survive2 as u8
            ));
        }
        s
    }

    /// Long-format series: `run,t,rho1,rho2`.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("run,t,rho1,rho2\n");
        for (run, pts) in [("fire", &self.series), ("control", &self.control)] {
            for p in pts {
                s.push_str(&format!("{run},{},{},{}\n", p.t, p.rho1, p.rho2));
            }
        }
        s
    }
}

fn densities(samples: &[crate::engine::Sample], n: usize, sites: f64) -> Vec<(f64, f64)> {
    // a halted run stops sampling; everything after is extinct
    let mut v: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.n1 as f64 / sites, s.n2 as f64 / sites))
        .collect();
    let last2 = v.last().map_or(0.0, |p| p.1);
    v.resize(n, (0.0, last2));
    v
}

fn mean_series(times: &[f64], runs: &[Vec<(f64, f64)>]) -> Vec<DensityPoint> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (mut a, mut b) = (Moments::default(), Moments::default());
            for r in runs {
                a.push(r[k].0);
                b.push(r[k].1);
            }
            DensityPoint {
                t,
                rho1: a.mean(),
                rho2: b.mean(),
            }
        })
        .collect()
}

pub fn coexistence_run(
    cfg: &CoexistenceConfig,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<CoexistenceOutcome> {
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    if !(cfg.t_max > 0.0 && cfg.sample_dt > 0.0) {
        return Err(config("need t_max > 0 and sample_dt > 0"));
    }
    let p = &cfg.params;
    let condition = check_condition_1(p.beta1, p.beta2, p.delta1, p.delta2, cfg.lambda_c)?;
    if !condition.pass {
        return Err(Error::Precondition(format!(
            "rates fail the coexistence condition at lambda_c = {}: beta2/(1+beta1/delta1) = {:.4} vs delta2 lambda_c = {:.4}; beta1/delta1 = {:.4} vs {:.4}",
            cfg.lambda_c, condition.type2_lhs, condition.type2_rhs, condition.type1_lhs, condition.type1_rhs
        )));
    }
    let fire = Arc::new(p.to_params()?);
    let mut q = *p;
    q.delta0 = 0.0;
    let control = Arc::new(q.to_params()?);

    let n = (cfg.t_max / cfg.sample_dt).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * cfg.sample_dt).collect();
    let plan = ObserverPlan {
        sample_times: times.clone(),
        ..Default::default()
    };
    let sites = (cfg.size as f64).powi(2);

    let runs = runner.try_map(base_seed, replicates, |_, seed| {
        let mut start = Lattice::new(cfg.size, cfg.size, Boundary::Torus)?;
        cfg.initial
            .apply(&mut start, &mut rng_from_seed(splitmix64(seed ^ 0xC0E1)));

        let mut sim = Simulation::new(start.clone(), fire.clone(), seed)?;
        let tr = sim.run_until(
            StopRule {
                t_max: cfg.t_max,
                halt: Halt::AllExtinct,
            },
            &plan,
        );
        let survive1 = sim.lattice().count(SiteState::One) > 0;
        let survive2 = sim.lattice().count(SiteState::Two) > 0;
        let with_fire = densities(&tr.samples, times.len(), sites);

        let mut sim = Simulation::new(start, control.clone(), seed)?;
        let tr = sim.run_until(
            StopRule {
                t_max: cfg.t_max,
                halt: Halt::Extinct(SiteState::One),
            },
            &plan,
        );
        let record = ReplicateRecord {
            survive1,
            survive2,
            control_extinction: sim.extinction()[0],
        };
        Ok((
            record,
            with_fire,
            densities(&tr.samples, times.len(), sites),
        ))
    })?;

    let records: Vec<ReplicateRecord> = runs.iter().map(|r| r.0).collect();
    let fire_runs: Vec<_> = runs.iter().map(|r| r.1.clone()).collect();
    let control_runs: Vec<_> = runs.into_iter().map(|r| r.2).collect();
    let series = mean_series(&times, &fire_runs);
    let control_series = mean_series(&times, &control_runs);
    let monotone = control_series.windows(2).all(|w| w[1].rho1 <= w[0].rho1)
        && control_series.last().map(|p| p.rho1) < control_series.first().map(|p| p.rho1);

    let count =
        |f: &dyn Fn(&ReplicateRecord) -> bool| records.iter().filter(|r| f(r)).count() as u64;
    Ok(CoexistenceOutcome {
        survive1: Estimate::proportion(count(&|r| r.survive1), replicates, "coexist-1", base_seed)?,
        survive2: Estimate::proportion(count(&|r| r.survive2), replicates, "coexist-2", base_seed)?,
        both: Estimate::proportion(
            count(&|r| r.survive1 && r.survive2),
            replicates,
            "coexist-both",
            base_seed,
        )?,
        control_survive1: Estimate::proportion(
            count(&|r| r.control_extinction.is_none()),
            replicates,
            "control-1",
            base_seed,
        )?,
        series,
        control: control_series,
        control_monotone_decline: monotone,
        condition,
        records,
    })
}
