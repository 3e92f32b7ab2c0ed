//! Finite-box events of the block construction for the contact process.
//!
//! The process lives on the truncated box `[-(L+2n), L+2n]^2` and starts
//! from `[-n, n]^2` fully occupied. Two events are estimated:
//!
//! * full: at time `T+1` some translate `x + [-n, n]^2` with `x` in
//!   `[0, L]^2` is fully occupied;
//! * side: at some time `s` in `[1, T+1)` some translate with `x` on the
//!   slab `{L+n} x [0, L]` is fully occupied.
//!
//! A square can only become full through a birth, so checking the slab at
//! `s = 1` and after every birth landing in it detects the side event
//! exactly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::formulas::block_unaffected_prob;
use super::{Estimate, Runner};
use crate::engine::{
    Flow, Halt, Monitor, ObserverPlan, ProcessParams, Simulation, StopRule, Transition,
};
use crate::error::{config, Result};
use crate::kernels::KernelSpec;
use crate::lattice::{Boundary, Lattice, SiteState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockCriterionConfig {
    pub n: u32,
    #[serde(rename = "L")]
    pub l: u32,
    #[serde(rename = "T")]
    pub t: f64,
    /// Target: the full event should have probability above `1 - eps`.
    #[serde(default)]
    pub eps: Option<f64>,
}

impl BlockCriterionConfig {
    pub fn new(n: u32, l: u32, t: f64) -> Self {
        BlockCriterionConfig { n, l, t, eps: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l == 0 {
            return Err(config(format!(
                "need n, L >= 1, got n={}, L={}",
                self.n, self.l
            )));
        }
        if !(self.t > 0.0) {
            return Err(config(format!("need T > 0, got {}", self.t)));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e < 1.0) {
                return Err(config(format!("eps must lie in (0, 1), got {e}")));
            }
        }
        Ok(())
    }

    /// Half-width `L + 2n` of the truncated box.
    pub fn half_width(&self) -> u32 {
        self.l + 2 * self.n
    }

    pub fn side(&self) -> u32 {
        2 * self.half_width() + 1
    }
}

/// Contact-process rates for the block experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDynamics {
    pub beta: f64,
    pub delta: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub delta0: f64,
    #[serde(default = "one", rename = "F")]
    pub fire_width: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub full: Estimate,
    pub side: Estimate,
    /// `exp(-delta0 tau)` for this geometry; 1 without fires.
    pub fire_factor: f64,
    /// Per replicate: (full event, side event).
    pub records: Vec<(bool, bool)>,
}

impl BlockOutcome {
    pub fn raw_csv(&self) -> String {
        let mut s = String::from("replicate,full,side\n");
        for (i, (a, b)) in self.records.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", *a as u8, *b as u8));
        }
        s
    }
}

/// Coordinates of the box relative to its center.
struct Geometry {
    n: i32,
    l: i32,
    /// Grid coordinate of the origin.
    c: i32,
    side: i32,
}

impl Geometry {
    fn occupied(&self, lattice: &Lattice, x: i32, y: i32) -> bool {
        lattice.states()[((y + self.c) * self.side + x + self.c) as usize] == SiteState::One
    }

    /// Is `(cx, cy) + [-n, n]^2` fully occupied?
    fn full_square(&self, lattice: &Lattice, cx: i32, cy: i32) -> bool {
        (-self.n..=self.n)
            .all(|dy| (-self.n..=self.n).all(|dx| self.occupied(lattice, cx + dx, cy + dy)))
    }

    fn side_hit_near(&self, lattice: &Lattice, y: i32) -> bool {
        let lo = (y - self.n).max(0);
        let hi = (y + self.n).min(self.l);
        (lo..=hi).any(|j| self.full_square(lattice, self.l + self.n, j))
    }

    fn side_hit_any(&self, lattice: &Lattice) -> bool {
        (0..=self.l).any(|j| self.full_square(lattice, self.l + self.n, j))
    }

    /// Full-event check with 2D prefix sums over the whole box.
    fn full_hit(&self, lattice: &Lattice) -> bool {
        let s = self.side as usize;
        let mut pre = vec![0u32; (s + 1) * (s + 1)];
        for y in 0..s {
            let mut row = 0;
            for x in 0..s {
                row += (lattice.states()[y * s + x] == SiteState::One) as u32;
                pre[(y + 1) * (s + 1) + x + 1] = pre[y * (s + 1) + x + 1] + row;
            }
        }
        let need = ((2 * self.n + 1) * (2 * self.n + 1)) as u32;
        let rect = |x0: i32, y0: i32| {
            let (x0, y0) = (
                (x0 + self.c - self.n) as usize,
                (y0 + self.c - self.n) as usize,
            );
            let w = (2 * self.n + 1) as usize;
            let (x1, y1) = (x0 + w, y0 + w);
            pre[y1 * (s + 1) + x1] + pre[y0 * (s + 1) + x0]
                - pre[y0 * (s + 1) + x1]
                - pre[y1 * (s + 1) + x0]
        };
        (0..=self.l).any(|y| (0..=self.l).any(|x| rect(x, y) == need))
    }
}

struct SideWatch<'a> {
    g: &'a Geometry,
    t_end: f64,
    hit: bool,
}

impl Monitor for SideWatch<'_> {
    fn on_event(&mut self, time: f64, tr: &Transition, lattice: &Lattice) -> Flow {
        if self.hit || time < 1.0 || time >= self.t_end {
            return Flow::Continue;
        }
        if let Transition::Birth {
            target: Some(t),
            success: true,
            ..
        } = *tr
        {
            let s = lattice.site_of(t);
            let (x, y) = (s.x - self.g.c, s.y - self.g.c);
            if x >= self.g.l && y >= -self.g.n && y <= self.g.l + self.g.n {
                self.hit = self.g.side_hit_near(lattice, y);
            }
        }
        Flow::Continue
    }

    fn on_sample(&mut self, time: f64, lattice: &Lattice) -> Flow {
        if !self.hit && time >= 1.0 && time < self.t_end {
            self.hit = self.g.side_hit_any(lattice);
        }
        Flow::Continue
    }
}

/// Estimate both block events. With `delta0 > 0`, fires act on the box with
/// centers ranging over the box enlarged by the fire radius, so that for
/// even `F` the chance of no fire touching the box is exactly
/// [`block_unaffected_prob`].
pub fn block_event_prob(
    cfg: &BlockCriterionConfig,
    dynamics: &BlockDynamics,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<BlockOutcome> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    let mut params = ProcessParams::new([dynamics.beta, 0.0], [dynamics.delta, 0.0])
        .with_kernel(SiteState::One, dynamics.kernel.build()?);
    if dynamics.delta0 > 0.0 {
        params = params.with_fire(dynamics.delta0, dynamics.fire_width);
        params.fire_halo = true;
    }
    params.validate()?;
    let params = Arc::new(params);
    let side = cfg.side();
    let g = Geometry {
        n: cfg.n as i32,
        l: cfg.l as i32,
        c: cfg.half_width() as i32,
        side: side as i32,
    };
    let mut start = Lattice::new(side, side, Boundary::TruncatedBox)?;
    for y in -g.n..=g.n {
        for x in -g.n..=g.n {
            start.set_index(((y + g.c) * g.side + x + g.c) as u32, SiteState::One);
        }
    }
    let t_end = cfg.t + 1.0;
    let plan = ObserverPlan {
        sample_times: vec![1.0],
        ..Default::default()
    };
    let records = runner.try_map(base_seed, replicates, |_, seed| {
        let mut sim = Simulation::new(start.clone(), params.clone(), seed)?;
        let mut watch = SideWatch {
            g: &g,
            t_end,
            hit: false,
        };
        let stop = StopRule {
            t_max: t_end,
            halt: Halt::Extinct(SiteState::One),
        };
        sim.run_with(stop, &plan, &mut watch);
        let full = sim.time() >= t_end && g.full_hit(sim.lattice());
        Ok((full, watch.hit))
    })?;
    let full = records.iter().filter(|r| r.0).count() as u64;
    let side_hits = records.iter().filter(|r| r.1).count() as u64;
    let fire_factor =
        block_unaffected_prob(dynamics.delta0, dynamics.fire_width, cfg.l, cfg.n, cfg.t)?;
    Ok(BlockOutcome {
        full: Estimate::proportion(full, replicates, "block-full", base_seed)?,
        side: Estimate::proportion(side_hits, replicates, "block-side", base_seed)?,
        fire_factor,
        records,
    })
}
