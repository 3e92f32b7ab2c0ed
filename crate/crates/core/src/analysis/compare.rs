//! Comparisons between the two-type process and its flip-environment
//! relative.
//!
//! In the flip environment every site not holding a 2 flips 0 -> 1 at rate
//! `beta1` and 1 -> 0 at rate `delta1`. As `delta1` grows at fixed
//! `r = beta1/delta1`, the 2's see a site free with probability
//! `1/(1+r)`, so they should behave like a contact process with birth rate
//! `gamma = beta2/(1+r)`.

use serde::{Deserialize, Serialize};

use super::stats::Moments;
use super::Runner;
use crate::engine::{ObserverPlan, StopRule};
use crate::error::{config, Result};
use crate::kernels::KernelSpec;
use crate::lattice::SiteState;
use crate::processes::{make_process, InitialConfig, Process, ProcessSpec, TwoTypeParams, Variant};

/// Upper 0.001 quantile of the standard normal.
pub const Z_ONE_SIDED_1E3: f64 = 3.090_232_306_167_813;

/// Mean density of one species across replicates at each sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl DensitySeries {
    pub fn time_average(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }
}

fn sample_times(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_max > 0.0 && dt > 0.0 && dt <= t_max) {
        return Err(config(format!(
            "need 0 < dt <= t_max, got dt={dt}, t_max={t_max}"
        )));
    }
    let n = (t_max / dt).floor() as usize;
    Ok((1..=n).map(|i| i as f64 * dt).collect())
}

/// Density series of `species` for `process`.
pub fn density_series(
    process: &Process,
    species: SiteState,
    times: &[f64],
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<DensitySeries> {
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let plan = ObserverPlan {
        sample_times: times.to_vec(),
        ..Default::default()
    };
    let sites = (process.width() as f64).powi(2);
    let runs = runner.try_map(base_seed, replicates, |_, seed| {
        let mut sim = process.simulation(seed)?;
        let tr = sim.run_until(StopRule::at(t_max), &plan);
        Ok(tr
            .samples
            .iter()
            .map(|s| {
                let n = if species == SiteState::One {
                    s.n1
                } else {
                    s.n2
                };
                n as f64 / sites
            })
            .collect::<Vec<f64>>())
    })?;
    let mut moments = vec![Moments::default(); times.len()];
    for run in &runs {
        for (m, &x) in moments.iter_mut().zip(run) {
            m.push(x);
        }
    }
    Ok(DensitySeries {
        times: times.to_vec(),
        mean: moments.iter().map(|m| m.mean()).collect(),
        std_error: moments.iter().map(|m| m.std_error()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaGapConfig {
    /// `beta1 / delta1`.
    pub r: f64,
    pub delta1: f64,
    pub beta2: f64,
    pub delta2: f64,
    #[serde(default)]
    pub kernel2: KernelSpec,
    pub size: u32,
    pub t_max: f64,
    pub sample_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaContactGap {
    pub delta1: f64,
    pub gamma: f64,
    /// Time average of `|zeta(t) - contact(t)|` over the sample times.
    pub gap: f64,
    pub zeta: DensitySeries,
    pub contact: DensitySeries,
}

/// Type-2 density gap between the flip environment (from all 2's) and the
/// contact process with rate `gamma` (from all occupied).
pub fn zeta_contact_gap(
    cfg: &ZetaGapConfig,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<ZetaContactGap> {
    if !(cfg.r > 0.0 && cfg.delta1 > 0.0) {
        return Err(config("need r > 0 and delta1 > 0"));
    }
    let times = sample_times(cfg.t_max, cfg.sample_dt)?;
    let gamma = cfg.beta2 / (1.0 + cfg.r);
    let zeta = make_process(&ProcessSpec::new(
        Variant::ZetaFlip {
            beta1: cfg.r * cfg.delta1,
            delta1: cfg.delta1,
            beta2: cfg.beta2,
            delta2: cfg.delta2,
            kernel2: cfg.kernel2,
        },
        cfg.size,
        InitialConfig::Full {
            species: SiteState::Two,
        },
    ))?;
    let contact = make_process(&ProcessSpec::new(
        Variant::Contact {
            beta: gamma,
            delta: cfg.delta2,
            kernel: cfg.kernel2,
        },
        cfg.size,
        InitialConfig::Full {
            species: SiteState::One,
        },
    ))?;
    let zs = density_series(&zeta, SiteState::Two, &times, replicates, base_seed, runner)?;
    let cs = density_series(
        &contact,
        SiteState::One,
        &times,
        replicates,
        base_seed,
        runner,
    )?;
    let gap = zs
        .mean
        .iter()
        .zip(&cs.mean)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / times.len() as f64;
    Ok(ZetaContactGap {
        delta1: cfg.delta1,
        gamma,
        gap,
        zeta: zs,
        contact: cs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipConfig {
    /// Rates of both processes; fires are switched off.
    pub params: TwoTypeParams,
    pub size: u32,
    pub initial: InitialConfig,
    pub t_max: f64,
    pub sample_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipComparison {
    pub two_type: DensitySeries,
    pub zeta: DensitySeries,
    /// `(two_type - zeta) / se` at each sample time.
    pub z: Vec<f64>,
    pub max_z: f64,
    /// No time rejects `two_type <= zeta` at one-sided level 1e-3.
    pub pass: bool,
}

/// Type-1 density of the competing process (without fires) against the
/// flip environment with the same rates and start.
pub fn flip_domination(
    cfg: &FlipConfig,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<FlipComparison> {
    let times = sample_times(cfg.t_max, cfg.sample_dt)?;
    let mut p = cfg.params;
    p.delta0 = 0.0;
    let two_type = make_process(&ProcessSpec::new(
        Variant::TwoTypeFire(p),
        cfg.size,
        cfg.initial,
    ))?;
    let zeta = make_process(&ProcessSpec::new(
        Variant::ZetaFlip {
            beta1: p.beta1,
            delta1: p.delta1,
            beta2: p.beta2,
            delta2: p.delta2,
            kernel2: p.kernel2,
        },
        cfg.size,
        cfg.initial,
    ))?;
    let xs = density_series(
        &two_type,
        SiteState::One,
        &times,
        replicates,
        base_seed,
        runner,
    )?;
    // distinct seeds keep the two samples independent
    let zs = density_series(
        &zeta,
        SiteState::One,
        &times,
        replicates,
        !base_seed,
        runner,
    )?;
    let z: Vec<f64> = (0..times.len())
        .map(|i| {
            let d = xs.mean[i] - zs.mean[i];
            let se = xs.std_error[i].hypot(zs.std_error[i]);
            if se > 0.0 {
                d / se
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let max_z = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FlipComparison {
        two_type: xs,
        zeta: zs,
        pass: max_z < Z_ONE_SIDED_1E3,
        max_z,
        z,
    })
}

/// Whether the gaps strictly decrease in the given order.
pub fn strictly_decreasing(gaps: &[ZetaContactGap]) -> bool {
    gaps.windows(2).all(|w| w[1].gap < w[0].gap)
}
