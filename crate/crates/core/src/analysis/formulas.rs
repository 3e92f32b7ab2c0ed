//! Closed-form fire and dispersal bounds, and engine-driven Monte Carlo
//! frequencies of the events they describe.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Estimate, Runner};
use crate::engine::{Flow, Monitor, ObserverPlan, ProcessParams, Simulation, StopRule, Transition};
use crate::error::{config, Result};
use crate::lattice::{Boundary, Lattice, Site, SiteState};

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 {
        Ok(())
    } else {
        Err(config(format!("{name} must be >= 0, got {v}")))
    }
}

/// Side of the square of fire centers whose blocks can touch the box
/// `[-(L+2n), L+2n]^2`, as used in the fire-avoidance bound.
pub fn enlarged_box_side(f: u32, l: u32, n: u32) -> u64 {
    f as u64 + 2 * l as u64 + 4 * n as u64 + 1
}

/// Probability that no fire center falls in the enlarged box during
/// `[0, T+1]`: `exp(-delta0 (F+2L+4n+1)^2 (T+1))`.
pub fn block_unaffected_prob(delta0: f64, f: u32, l: u32, n: u32, t: f64) -> Result<f64> {
    non_negative("delta0", delta0)?;
    non_negative("T", t)?;
    let side = enlarged_box_side(f, l, n) as f64;
    Ok((-delta0 * side * side * (t + 1.0)).exp())
}

/// `(1 - exp(-delta0 (W-F)^2 T/2)) * exp(-14 delta0 F^2 T)`.
pub fn fire_gap_probability(delta0: f64, w: f64, f: f64, t: f64) -> Result<f64> {
    non_negative("delta0", delta0)?;
    non_negative("F", f)?;
    non_negative("T", t)?;
    if w < f {
        return Err(config(format!("need W >= F, got W={w}, F={f}")));
    }
    let clear = -(-delta0 * (w - f).powi(2) * t / 2.0).exp_m1();
    Ok(clear * (-14.0 * delta0 * f * f * t).exp())
}

/// `1 - exp(-u T/2)` with `u = c2 beta1 (4kW)^(-rho) L^2`.
pub fn spread_success_bound(
    c2: f64,
    beta1: f64,
    k: f64,
    w: f64,
    rho: f64,
    l: f64,
    t: f64,
) -> Result<f64> {
    for (name, v) in [("c2", c2), ("beta1", beta1), ("k", k), ("W", w), ("L", l)] {
        if !(v > 0.0) {
            return Err(config(format!("{name} must be > 0, got {v}")));
        }
    }
    non_negative("T", t)?;
    let u = c2 * beta1 * (4.0 * k * w).powf(-rho) * l * l;
    if u.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(-(-u * t / 2.0).exp_m1())
}

/// All three bounds evaluated from one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormulaInputs {
    pub delta0: f64,
    #[serde(rename = "F")]
    pub fire_width: u32,
    #[serde(rename = "L")]
    pub l: u32,
    pub n: u32,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub c2: f64,
    pub beta1: f64,
    pub k: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormulaValues {
    pub block_unaffected: f64,
    pub fire_gap: f64,
    pub spread_success: f64,
}

pub fn evaluate_all(p: &FormulaInputs) -> Result<FormulaValues> {
    Ok(FormulaValues {
        block_unaffected: block_unaffected_prob(p.delta0, p.fire_width, p.l, p.n, p.t)?,
        fire_gap: fire_gap_probability(p.delta0, p.w, p.fire_width as f64, p.t)?,
        spread_success: spread_success_bound(p.c2, p.beta1, p.k, p.w, p.rho, p.l as f64, p.t)?,
    })
}

struct BoxWatch {
    lost: bool,
}

impl Monitor for BoxWatch {
    fn on_event(&mut self, _: f64, tr: &Transition, _: &Lattice) -> Flow {
        match tr {
            Transition::Fire { removed, .. } if *removed > 0 => {
                self.lost = true;
                Flow::Stop
            }
            _ => Flow::Continue,
        }
    }
}

/// Frequency with which a fully occupied box `[-(L+2n), L+2n]^2` survives
/// fires alone for time `T+1`. The box sits inside a torus wide enough that
/// each dangerous fire center is a distinct site, so for even `F` the
/// frequency estimates `block_unaffected_prob`.
pub fn block_unaffected_frequency(
    delta0: f64,
    f: u32,
    l: u32,
    n: u32,
    t: f64,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<Estimate> {
    non_negative("delta0", delta0)?;
    non_negative("T", t)?;
    let half = (l + 2 * n) as i32;
    let side = enlarged_box_side(f, l, n) as u32 + f.max(1);
    let params = Arc::new(ProcessParams::new([0.0, 0.0], [0.0, 0.0]).with_fire(delta0, f.max(1)));
    params.validate()?;
    let mut base = Lattice::new(side, side, Boundary::Torus)?;
    let c = (side / 2) as i32;
    for y in -half..=half {
        for x in -half..=half {
            base.set(Site::new(c + x, c + y), SiteState::One)?;
        }
    }
    let kept = runner.try_map(base_seed, replicates, |_, seed| {
        let mut sim = Simulation::new(base.clone(), params.clone(), seed)?;
        let mut watch = BoxWatch { lost: false };
        sim.run_with(StopRule::at(t + 1.0), &ObserverPlan::default(), &mut watch);
        Ok(!watch.lost)
    })?;
    let s = kept.iter().filter(|&&k| k).count() as u64;
    Estimate::proportion(s, replicates, "fire-avoidance", base_seed)
}

struct GapWatch {
    side: i32,
    region: i32,
    f: i32,
    t: f64,
    clearing: Option<Site>,
    spoiled: bool,
}

impl GapWatch {
    fn within(&self, a: Site, center: Site) -> bool {
        let wrap = |d: i32| d.rem_euclid(self.side);
        let dx = wrap(a.x - center.x + self.f);
        let dy = wrap(a.y - center.y + self.f);
        dx < 2 * self.f && dy < 2 * self.f
    }
}

impl Monitor for GapWatch {
    fn on_event(&mut self, time: f64, tr: &Transition, _: &Lattice) -> Flow {
        let Transition::Fire { center, .. } = *tr else {
            return Flow::Continue;
        };
        if time <= self.t / 2.0 {
            if self.clearing.is_none() && center.x < self.region && center.y < self.region {
                self.clearing = Some(center);
            }
            return Flow::Continue;
        }
        match self.clearing {
            None => Flow::Stop,
            Some(c) if self.within(center, c) => {
                self.spoiled = true;
                Flow::Stop
            }
            Some(_) => Flow::Continue,
        }
    }
}

/// Frequency of: a fire centered in a fixed `(W-F)^2` region during
/// `[0, T/2]`, followed by no fire centered in the `(2F)^2` square around
/// that clearing during `[T/2, 4T]`. Estimates `fire_gap_probability`.
pub fn fire_gap_frequency(
    delta0: f64,
    w: u32,
    f: u32,
    t: f64,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<Estimate> {
    non_negative("delta0", delta0)?;
    non_negative("T", t)?;
    if w < f || f == 0 {
        return Err(config(format!("need W >= F >= 1, got W={w}, F={f}")));
    }
    let side = w.max(2 * f);
    let params = Arc::new(ProcessParams::new([0.0, 0.0], [0.0, 0.0]).with_fire(delta0, f));
    let base = Lattice::new(side, side, Boundary::Torus)?;
    let hits = runner.try_map(base_seed, replicates, |_, seed| {
        let mut sim = Simulation::new(base.clone(), params.clone(), seed)?;
        let mut watch = GapWatch {
            side: side as i32,
            region: (w - f) as i32,
            f: f as i32,
            t,
            clearing: None,
            spoiled: false,
        };
        sim.run_with(StopRule::at(4.0 * t), &ObserverPlan::default(), &mut watch);
        Ok(watch.clearing.is_some() && !watch.spoiled)
    })?;
    let s = hits.iter().filter(|&&h| h).count() as u64;
    Estimate::proportion(s, replicates, "fire-gap", base_seed)
}
