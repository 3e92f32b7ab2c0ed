//! Colonization of a cleared gap by a single type-1 immigrant.
//!
//! Three nested squares centered at the origin: `B1` (half-width L), `B2`
//! (half-width `r1 L`) and `B3` (half-width `r2 L`). At time 0, `B3` is
//! vacant except for one type-1 particle at a uniform site of `B1`, and
//! every site outside `B3` holds a 2. Fires are off.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Estimate, Runner};
use crate::engine::{Flow, Monitor, ObserverPlan, Simulation, StopRule, Transition};
use crate::error::{config, Error, Result};
use crate::lattice::{Boundary, Lattice, Site, SiteState};
use crate::processes::TwoTypeParams;
use crate::rng::{rng_from_seed, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapExperimentConfig {
    #[serde(rename = "L")]
    pub l: u32,
    pub r1: f64,
    pub r2: f64,
    #[serde(rename = "T")]
    pub t: f64,
    /// Width of the band of 2's outside `B3`; defaults to `r2 L`.
    #[serde(default)]
    pub margin: Option<u32>,
}

impl GapExperimentConfig {
    pub fn new(l: u32, r1: f64, r2: f64, t: f64) -> Self {
        GapExperimentConfig {
            l,
            r1,
            r2,
            t,
            margin: None,
        }
    }

    /// Half-widths of B1, B2, B3 in sites.
    pub fn half_widths(&self) -> (u32, u32, u32) {
        let h2 = (self.r1 * self.l as f64).floor() as u32;
        let h3 = (self.r2 * self.l as f64).floor() as u32;
        (self.l, h2, h3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(config("L must be >= 1"));
        }
        if !(1.0 < self.r1 && self.r1 < self.r2) {
            return Err(config(format!(
                "need 1 < r1 < r2, got r1={}, r2={}",
                self.r1, self.r2
            )));
        }
        let (h1, h2, h3) = self.half_widths();
        if !(h1 < h2 && h2 < h3) {
            return Err(config(format!(
                "box half-widths {h1}, {h2}, {h3} are not strictly nested; increase L or the ratios"
            )));
        }
        if !(self.t > 0.0) {
            return Err(config("T must be > 0"));
        }
        Ok(())
    }

    fn side(&self) -> u32 {
        let (_, _, h3) = self.half_widths();
        2 * (h3 + self.margin.unwrap_or(h3).max(1)) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapOutcome {
    /// P(1's persist in B2 to 7T/2 | they persist to T).
    pub persist: Estimate,
    /// P(no 2 is born into B2 by 7T/2).
    pub no_invasion: Estimate,
    /// Per replicate: time the 1's in B2 first hit zero (infinite if never
    /// before 7T/2) and the time a 2 first entered B2.
    pub records: Vec<(f64, f64)>,
}

impl GapOutcome {
    pub fn raw_csv(&self) -> String {
        let mut s = String::from("replicate,tau_b2,invasion_time\n");
        for (i, (a, b)) in self.records.iter().enumerate() {
            s.push_str(&format!("{i},{a},{b}\n"));
        }
        s
    }
}

struct GapWatch {
    c: i32,
    h2: i32,
    ones: usize,
    tau: f64,
    invaded: f64,
}

impl GapWatch {
    fn in_b2(&self, s: Site) -> bool {
        (s.x - self.c).abs() <= self.h2 && (s.y - self.c).abs() <= self.h2
    }
}

impl Monitor for GapWatch {
    fn on_event(&mut self, time: f64, tr: &Transition, lattice: &Lattice) -> Flow {
        match *tr {
            Transition::Birth {
                species,
                target: Some(t),
                success: true,
                ..
            } if self.in_b2(lattice.site_of(t)) => {
                if species == SiteState::One {
                    self.ones += 1;
                } else if self.invaded.is_infinite() {
                    self.invaded = time;
                }
            }
            Transition::Death {
                species: SiteState::One,
                site,
            } if self.in_b2(lattice.site_of(site)) => {
                self.ones -= 1;
                if self.ones == 0 && self.tau.is_infinite() {
                    self.tau = time;
                }
            }
            _ => {}
        }
        if self.tau.is_finite() && self.invaded.is_finite() {
            Flow::Stop
        } else {
            Flow::Continue
        }
    }
}

pub fn gap_experiment(
    cfg: &GapExperimentConfig,
    params: &TwoTypeParams,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<GapOutcome> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    let mut p = params.to_params()?;
    p.fire_rate = 0.0;
    let p = Arc::new(p);
    let (h1, h2, h3) = cfg.half_widths();
    let side = cfg.side();
    let c = (side / 2) as i32;
    let mut base = Lattice::filled(side, side, Boundary::Torus, SiteState::Two)?;
    let h3 = h3 as i32;
    for y in -h3..=h3 {
        for x in -h3..=h3 {
            base.set(Site::new(c + x, c + y), SiteState::Vacant)?;
        }
    }
    let t_end = 3.5 * cfg.t;
    let records = runner.try_map(base_seed, replicates, |_, seed| {
        let mut lattice = base.clone();
        let mut rng = rng_from_seed(splitmix64(seed ^ 0x6A9_0B1));
        let h1 = h1 as i32;
        let seed_site = Site::new(
            c + rng.random_range(-h1..=h1),
            c + rng.random_range(-h1..=h1),
        );
        lattice.set(seed_site, SiteState::One)?;
        let mut sim = Simulation::new(lattice, p.clone(), seed)?;
        let mut watch = GapWatch {
            c,
            h2: h2 as i32,
            ones: 1,
            tau: f64::INFINITY,
            invaded: f64::INFINITY,
        };
        sim.run_with(StopRule::at(t_end), &ObserverPlan::default(), &mut watch);
        Ok((watch.tau, watch.invaded))
    })?;
    let passed: Vec<&(f64, f64)> = records.iter().filter(|r| r.0 >= cfg.t).collect();
    if passed.is_empty() {
        return Err(Error::Estimation(
            "no replicate kept 1's in B2 up to T; nothing to condition on".into(),
        ));
    }
    let kept = passed.iter().filter(|r| r.0 >= t_end).count() as u64;
    let clean = records.iter().filter(|r| r.1 > t_end).count() as u64;
    Ok(GapOutcome {
        persist: Estimate::proportion(kept, passed.len() as u64, "gap-persist", base_seed)?,
        no_invasion: Estimate::proportion(clean, replicates, "gap-no-invasion", base_seed)?,
        records,
    })
}
