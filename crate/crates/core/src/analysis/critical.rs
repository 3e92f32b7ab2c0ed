//! Survival probabilities and the critical value of the contact process.
//!
//! The critical value is located by bisection on `lambda = beta/delta`.
//! Both indicators compare a finite-time ratio against the power law that
//! holds exactly at criticality for directed percolation in 2+1
//! dimensions: survival `P(tau > t) ~ t^-0.4505` from one seed, density
//! `rho(t) ~ t^-0.4505` from a full lattice. A ratio above the critical
//! power-law value means the process decays more slowly than a critical
//! one, i.e. it is supercritical.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Estimate, Runner};
use crate::engine::Simulation;
use crate::engine::{Flow, Halt, Monitor, ObserverPlan, ProcessParams, StopRule, Transition};
use crate::error::{config, Error, Result};
use crate::kernels::KernelSpec;
use crate::lattice::{Boundary, Lattice, SiteState};
use crate::processes::{center, Process};

/// Survival exponent of 2+1 dimensional directed percolation.
pub const DP_SURVIVAL_EXPONENT: f64 = 0.4505;
/// Density decay exponent of 2+1 dimensional directed percolation.
pub const DP_DECAY_EXPONENT: f64 = 0.4505;

/// Fraction of replicates in which the focal species is still present at `t`.
pub fn survival_probability(
    process: &Process,
    t: f64,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<Estimate> {
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    let stop = StopRule {
        t_max: t,
        halt: Halt::Extinct(process.focal),
    };
    stop.validate()?;
    let alive = runner.try_map(base_seed, replicates, |_, seed| {
        let mut sim = process.simulation(seed)?;
        sim.run_until(stop, &ObserverPlan::default());
        Ok(sim.lattice().count(process.focal) > 0)
    })?;
    let s = alive.iter().filter(|&&a| a).count() as u64;
    Estimate::proportion(s, replicates, "survival", base_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalMethod {
    /// Single seed; compares `P(tau > 2T) / P(tau > T)` with `2^-0.4505`.
    SurvivalCrossing,
    /// Full start; compares `rho(2T) / rho(T)` with `2^-0.4505`.
    DensityDecay,
}

impl CriticalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticalMethod::SurvivalCrossing => "survival-crossing",
            CriticalMethod::DensityDecay => "density-decay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaCConfig {
    pub method: CriticalMethod,
    #[serde(default = "moore")]
    pub kernel: KernelSpec,
    /// Torus side.
    pub size: u32,
    /// Base horizon T; each probe runs to 2T.
    pub horizon: f64,
    pub replicates: u64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
}

fn moore() -> KernelSpec {
    KernelSpec::Moore
}

fn default_lo() -> f64 {
    0.5
}

fn default_hi() -> f64 {
    4.0
}

fn default_iterations() -> u32 {
    8
}

impl LambdaCConfig {
    pub fn new(method: CriticalMethod, size: u32, horizon: f64, replicates: u64) -> Self {
        LambdaCConfig {
            method,
            kernel: KernelSpec::Moore,
            size,
            horizon,
            replicates,
            lo: default_lo(),
            hi: default_hi(),
            iterations: default_iterations(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 3 {
            return Err(config("size must be >= 3"));
        }
        if !(self.horizon > 0.0) {
            return Err(config("horizon must be > 0"));
        }
        if self.replicates == 0 {
            return Err(config("replicates must be >= 1"));
        }
        if !(self.lo > 0.0 && self.hi > self.lo) {
            return Err(config(format!(
                "need 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Outcome of one indicator evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    /// Observed ratio at 2T over T.
    pub ratio: f64,
    /// Ratio a critical process would show.
    pub threshold: f64,
    pub supercritical: bool,
}

/// Stops a run once the population reaches a cap (counted as surviving).
struct Cap {
    cap: usize,
    reached: bool,
}

impl Monitor for Cap {
    fn on_event(&mut self, _: f64, _: &Transition, lattice: &Lattice) -> Flow {
        if lattice.count(SiteState::One) >= self.cap {
            self.reached = true;
            Flow::Stop
        } else {
            Flow::Continue
        }
    }
}

/// Evaluate the supercriticality indicator at one value of `lambda`
/// (death rate 1). Replicate seeds are shared across probes.
pub fn probe(cfg: &LambdaCConfig, lambda: f64, base_seed: u64, runner: &Runner) -> Result<Probe> {
    cfg.validate()?;
    let kernel = cfg.kernel.build()?;
    let params =
        Arc::new(ProcessParams::new([lambda, 0.0], [1.0, 0.0]).with_kernel(SiteState::One, kernel));
    let t = cfg.horizon;
    let n = cfg.size;
    let (ratio, threshold) = match cfg.method {
        CriticalMethod::SurvivalCrossing => {
            let mut start = Lattice::new(n, n, Boundary::Torus)?;
            start.set(center(&start), SiteState::One)?;
            let cap = start.len() / 2;
            let taus = runner.try_map(base_seed, cfg.replicates, |_, seed| {
                let mut sim = Simulation::new(start.clone(), params.clone(), seed)?;
                let mut m = Cap {
                    cap,
                    reached: false,
                };
                let stop = StopRule {
                    t_max: 2.0 * t,
                    halt: Halt::Extinct(SiteState::One),
                };
                sim.run_with(stop, &ObserverPlan::default(), &mut m);
                Ok(if m.reached {
                    f64::INFINITY
                } else {
                    sim.extinction()[0].unwrap_or(f64::INFINITY)
                })
            })?;
            let s1 = taus.iter().filter(|&&x| x > t).count();
            let s2 = taus.iter().filter(|&&x| x > 2.0 * t).count();
            let ratio = if s1 == 0 { 0.0 } else { s2 as f64 / s1 as f64 };
            (ratio, 2f64.powf(-DP_SURVIVAL_EXPONENT))
        }
        CriticalMethod::DensityDecay => {
            let start = Lattice::filled(n, n, Boundary::Torus, SiteState::One)?;
            let plan = ObserverPlan {
                sample_times: vec![t, 2.0 * t],
                ..Default::default()
            };
            let pairs = runner.try_map(base_seed, cfg.replicates, |_, seed| {
                let mut sim = Simulation::new(start.clone(), params.clone(), seed)?;
                let tr = sim.run_until(StopRule::at(2.0 * t), &plan);
                let at = |k: usize| tr.samples.get(k).map_or(0.0, |s| s.n1 as f64);
                Ok((at(0), at(1)))
            })?;
            let (a, b) = pairs
                .iter()
                .fold((0.0, 0.0), |(x, y), &(p, q)| (x + p, y + q));
            let ratio = if a == 0.0 { 0.0 } else { b / a };
            (ratio, 2f64.powf(-DP_DECAY_EXPONENT))
        }
    };
    Ok(Probe {
        lambda,
        ratio,
        threshold,
        supercritical: ratio > threshold,
    })
}

/// Result of a bisection, with the probes it made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCOutcome {
    pub estimate: Estimate,
    pub probes: Vec<Probe>,
}

/// Bisect on `lambda` between `cfg.lo` and `cfg.hi`. The bracket ends must
/// test sub- and supercritical respectively.
pub fn estimate_lambda_c(
    cfg: &LambdaCConfig,
    base_seed: u64,
    runner: &Runner,
) -> Result<LambdaCOutcome> {
    cfg.validate()?;
    let mut probes = Vec::new();
    let lo_probe = probe(cfg, cfg.lo, base_seed, runner)?;
    probes.push(lo_probe);
    if lo_probe.supercritical {
        return Err(Error::Range(format!(
            "lambda = {} already tests supercritical (ratio {:.4} > {:.4})",
            cfg.lo, lo_probe.ratio, lo_probe.threshold
        )));
    }
    let hi_probe = probe(cfg, cfg.hi, base_seed, runner)?;
    probes.push(hi_probe);
    if !hi_probe.supercritical {
        return Err(Error::Range(format!(
            "lambda = {} still tests subcritical (ratio {:.4} <= {:.4})",
            cfg.hi, hi_probe.ratio, hi_probe.threshold
        )));
    }
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    for _ in 0..cfg.iterations {
        let mid = 0.5 * (lo + hi);
        let p = probe(cfg, mid, base_seed, runner)?;
        probes.push(p);
        if p.supercritical {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(LambdaCOutcome {
        estimate: Estimate::bracket(lo, hi, cfg.replicates, cfg.method.as_str(), base_seed),
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{make_process, InitialConfig, ProcessSpec, Variant};

    fn contact(beta: f64, size: u32, initial: InitialConfig) -> Process {
        make_process(&ProcessSpec::new(
            Variant::Contact {
                beta,
                delta: 1.0,
                kernel: KernelSpec::Moore,
            },
            size,
            initial,
        ))
        .unwrap()
    }

    #[test]
    fn pure_death_dies() {
        let runner = Runner::new(1).unwrap();
        let p = contact(
            0.0,
            16,
            InitialConfig::Full {
                species: SiteState::One,
            },
        );
        // 256 exponential(1) lifetimes; all gone by t = 30 except with prob ~ 256 e^-30
        let e = survival_probability(&p, 30.0, 50, 1, &runner).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn richardson_always_survives() {
        let runner = Runner::new(1).unwrap();
        let p = make_process(&ProcessSpec::new(
            Variant::Richardson {
                beta: 1.0,
                kernel: KernelSpec::Moore,
            },
            16,
            InitialConfig::Single {
                species: SiteState::One,
            },
        ))
        .unwrap();
        let e = survival_probability(&p, 10.0, 20, 1, &runner).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn extreme_probes_classify() {
        let runner = Runner::new(1).unwrap();
        for method in [
            CriticalMethod::SurvivalCrossing,
            CriticalMethod::DensityDecay,
        ] {
            let cfg = LambdaCConfig::new(method, 32, 10.0, 40);
            assert!(!probe(&cfg, 0.01, 3, &runner).unwrap().supercritical);
            assert!(probe(&cfg, 100.0, 3, &runner).unwrap().supercritical);
        }
    }

    #[test]
    fn bad_bracket_is_a_range_error() {
        let runner = Runner::new(1).unwrap();
        let mut cfg = LambdaCConfig::new(CriticalMethod::DensityDecay, 16, 5.0, 4);
        cfg.lo = 50.0;
        cfg.hi = 100.0;
        assert!(matches!(
            estimate_lambda_c(&cfg, 1, &runner),
            Err(Error::Range(_))
        ));
        cfg.lo = 0.01;
        cfg.hi = 0.02;
        assert!(matches!(
            estimate_lambda_c(&cfg, 1, &runner),
            Err(Error::Range(_))
        ));
    }
}
