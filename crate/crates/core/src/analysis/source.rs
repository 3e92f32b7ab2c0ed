//! Propagation of type-1 sources across the block grid.
//!
//! Geometry, with `k = F^alpha`, `W = F + F^(1+alpha)`:
//!
//! * cells `B(i, j) = [iW, (i+1)W) x [jW, (j+1)W)`;
//! * `J_+ = (0, kW]^2` and `J_- = [-kW, 0)^2` (as unions of k x k cells);
//!   `J_{m,±}` is `J_±` shifted by `2mkW` along the first axis;
//! * a source in a cell during `[a, b]` is a square `B2` of half-width
//!   `r1 L`, contained in the cell, free of 2's and holding at least one 1
//!   at every checkpoint in `[a, b]`.
//!
//! A replicate starts with a cleared fire block around a `B2` full of 1's
//! in the first cell of `J_{0,+}`, on a background of 2's that has burned
//! in from a full lattice. It counts when that source persists through
//! stage 0 (`[0, 2T]`); it succeeds when `J_{-1,-}` and `J_{1,-}` both hold
//! sources during stage 1 (`[2T, 4T]`).

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Estimate, Runner};
use crate::engine::{Flow, Monitor, ObserverPlan, ProcessParams, Simulation, StopRule};
use crate::error::{config, Error, Result};
use crate::kernels::KernelSpec;
use crate::lattice::{Boundary, Lattice, Site, SiteState};
use crate::processes::TwoTypeParams;
use crate::rng::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceGridConfig {
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: u32,
    pub r1: f64,
    #[serde(rename = "T")]
    pub t: f64,
    /// Checkpoint spacing as a fraction of T.
    #[serde(default = "eighth")]
    pub checkpoint: f64,
    /// Time the 2's spend relaxing from the full lattice before the source
    /// is placed.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Replace the derived `k = F^alpha`.
    #[serde(default)]
    pub k: Option<u32>,
    /// Force the type-1 kernel cutoff to `4kW`.
    #[serde(default = "yes")]
    pub enforce_cutoff: bool,
}

fn eighth() -> f64 {
    0.125
}

fn default_burn_in() -> f64 {
    20.0
}

fn yes() -> bool {
    true
}

/// Integer grid constants derived from a config and a fire width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConstants {
    #[serde(rename = "F")]
    pub f: u32,
    pub k: u32,
    #[serde(rename = "W")]
    pub w: u32,
    #[serde(rename = "M")]
    pub m: u32,
    /// Half-width of B2.
    pub h2: u32,
}

impl SourceGridConfig {
    pub fn new(alpha: f64, l: u32, r1: f64, t: f64) -> Self {
        SourceGridConfig {
            alpha,
            l,
            r1,
            t,
            checkpoint: eighth(),
            burn_in: default_burn_in(),
            k: None,
            enforce_cutoff: true,
        }
    }

    pub fn constants(&self, f: u32) -> Result<GridConstants> {
        if !(self.alpha > 0.0) {
            return Err(config("alpha must be > 0"));
        }
        if f < 2 {
            return Err(config("F must be >= 2"));
        }
        let ff = f as f64;
        let k = self
            .k
            .unwrap_or_else(|| ff.powf(self.alpha).round().max(1.0) as u32);
        if k == 0 {
            return Err(config("k must be >= 1"));
        }
        let w = (ff + ff.powf(1.0 + self.alpha)).round() as u32;
        let h2 = (self.r1 * self.l as f64).floor() as u32;
        if self.l == 0 || h2 == 0 {
            return Err(config("need L >= 1 and r1 L >= 1"));
        }
        if h2 > f / 2 {
            return Err(config(format!(
                "B2 half-width {h2} exceeds the cleared block radius {}",
                f / 2
            )));
        }
        if 2 * h2 + 1 > w {
            return Err(config("B2 does not fit in a W x W cell"));
        }
        Ok(GridConstants {
            f,
            k,
            w,
            m: 4 * k * w,
            h2,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) {
            return Err(config("T must be > 0"));
        }
        if !(self.checkpoint > 0.0 && self.checkpoint <= 1.0) {
            return Err(config(
                "checkpoint spacing must lie in (0, 1] (fraction of T)",
            ));
        }
        if !(self.burn_in >= 0.0) {
            return Err(config("burn_in must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub estimate: Estimate,
    pub constants: GridConstants,
    /// Replicates whose initial source survived stage 0.
    pub conditioned: u64,
    pub warnings: Vec<String>,
    /// Per replicate: (source kept through stage 0, success at stage 1).
    pub records: Vec<(bool, bool)>,
}

impl SourceOutcome {
    pub fn raw_csv(&self) -> String {
        let mut s = String::from("replicate,kept,success\n");
        for (i, (a, b)) in self.records.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", *a as u8, *b as u8));
        }
        s
    }
}

/// Candidate B2 positions of one cell, with the ones still good.
struct Cell {
    x0: i32,
    y0: i32,
    good: Vec<bool>,
}

struct Region {
    cells: Vec<Cell>,
}

impl Region {
    /// `i0..i0+k` by `j0..j0+k` cells, in grid coordinates.
    fn new(i0: i32, j0: i32, k: u32, w: u32, h2: u32, ox: i32, oy: i32) -> Self {
        let span = (w - 2 * h2) as usize;
        let mut cells = Vec::new();
        for j in j0..j0 + k as i32 {
            for i in i0..i0 + k as i32 {
                cells.push(Cell {
                    x0: i * w as i32 + ox,
                    y0: j * w as i32 + oy,
                    good: vec![true; span * span],
                });
            }
        }
        Region { cells }
    }

    fn alive(&self) -> bool {
        self.cells.iter().any(|c| c.good.iter().any(|&g| g))
    }

    fn update(&mut self, p: &Prefix, w: u32, h2: u32) {
        let span = (w - 2 * h2) as i32;
        let side = 2 * h2 as i32 + 1;
        for c in &mut self.cells {
            for dy in 0..span {
                for dx in 0..span {
                    let g = &mut c.good[(dy * span + dx) as usize];
                    if *g {
                        let (x, y) = (c.x0 + dx, c.y0 + dy);
                        *g = p.sum(1, x, y, side) == 0 && p.sum(0, x, y, side) > 0;
                    }
                }
            }
        }
    }
}

/// Prefix sums of 1's and 2's over the grid.
struct Prefix {
    w: usize,
    sums: [Vec<u32>; 2],
}

impl Prefix {
    fn new(lattice: &Lattice) -> Self {
        let (w, h) = (lattice.width() as usize, lattice.height() as usize);
        let mut sums = [vec![0u32; (w + 1) * (h + 1)], vec![0u32; (w + 1) * (h + 1)]];
        for (k, state) in [SiteState::One, SiteState::Two].into_iter().enumerate() {
            let s = &mut sums[k];
            for y in 0..h {
                let mut row = 0;
                for x in 0..w {
                    row += (lattice.states()[y * w + x] == state) as u32;
                    s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
                }
            }
        }
        Prefix { w, sums }
    }

    /// Count of species `k` in the square `[x, x+side) x [y, y+side)`.
    fn sum(&self, k: usize, x: i32, y: i32, side: i32) -> u32 {
        let s = &self.sums[k];
        let stride = self.w + 1;
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + side as usize, y0 + side as usize);
        s[y1 * stride + x1] + s[y0 * stride + x0] - s[y0 * stride + x1] - s[y1 * stride + x0]
    }
}

struct Stages {
    t: f64,
    c: GridConstants,
    origin: Region,
    left: Region,
    right: Region,
    kept: bool,
    success: bool,
}

impl Monitor for Stages {
    fn on_sample(&mut self, time: f64, lattice: &Lattice) -> Flow {
        let p = Prefix::new(lattice);
        if time <= 2.0 * self.t {
            self.origin.update(&p, self.c.w, self.c.h2);
            if !self.origin.alive() {
                self.kept = false;
                return Flow::Stop;
            }
        }
        if time >= 2.0 * self.t {
            self.left.update(&p, self.c.w, self.c.h2);
            self.right.update(&p, self.c.w, self.c.h2);
            self.success = self.left.alive() && self.right.alive();
            if !self.success {
                return Flow::Stop;
            }
        }
        Flow::Continue
    }
}

fn kernel_rho(spec: &KernelSpec) -> Option<f64> {
    match *spec {
        KernelSpec::Moore => None,
        KernelSpec::Power { rho, .. } | KernelSpec::Weights { rho, .. } => Some(rho),
    }
}

pub fn source_propagation(
    cfg: &SourceGridConfig,
    params: &TwoTypeParams,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<SourceOutcome> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(config("replicates must be >= 1"));
    }
    let c = cfg.constants(params.fire_width)?;
    let mut warnings = Vec::new();
    let mut p = *params;
    if cfg.enforce_cutoff {
        p.kernel1 = p.kernel1.with_cutoff(c.m)?;
    } else if p.kernel1.cutoff() != c.m {
        warnings.push(format!(
            "type-1 kernel cutoff {} differs from 4kW = {}",
            p.kernel1.cutoff(),
            c.m
        ));
    }
    if let Some(rho) = kernel_rho(&p.kernel1) {
        if (1.0 + 2.0 * cfg.alpha) * rho >= 3.0 {
            warnings.push(format!(
                "(1 + 2 alpha) rho = {:.3} >= 3: the spread bound is vacuous",
                (1.0 + 2.0 * cfg.alpha) * rho
            ));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let engine = Arc::new(p.to_params()?);
    let twos_only = Arc::new(ProcessParams {
        birth: [0.0, p.beta2],
        death: [0.0, p.delta2],
        fire_rate: 0.0,
        ..(*engine).clone()
    });

    let kw = c.k * c.w;
    let (width, height) = (6 * kw, 2 * kw + 2 * c.w);
    let (ox, oy) = (3 * kw as i32, (kw + c.w) as i32);
    let k = c.k as i32;
    let wi = c.w as i32;
    // J_{0,+} starts at cell (0, 0); J_{-1,-} at (-3k, -k); J_{1,-} at (k, -k)
    let origin = Region::new(0, 0, c.k, c.w, c.h2, ox, oy);
    let left = || Region::new(-3 * k, -k, c.k, c.w, c.h2, ox, oy);
    let right = || Region::new(k, -k, c.k, c.w, c.h2, ox, oy);
    let source = Site::new(ox + wi / 2, oy + wi / 2);

    let step = cfg.checkpoint * cfg.t;
    let n_checks = (4.0 / cfg.checkpoint).round() as usize;
    let plan = ObserverPlan {
        sample_times: (0..=n_checks).map(|j| j as f64 * step).collect(),
        ..Default::default()
    };

    let records = runner.try_map(base_seed, replicates, |_, seed| {
        let start = Lattice::filled(width, height, Boundary::Torus, SiteState::Two)?;
        let mut burn = Simulation::new(start, twos_only.clone(), splitmix64(seed ^ 0xB0B))?;
        burn.run_until(StopRule::at(cfg.burn_in), &ObserverPlan::default());
        let mut lattice = burn.into_lattice();
        lattice.clear_block(source, c.f);
        let h = c.h2 as i32;
        for dy in -h..=h {
            for dx in -h..=h {
                lattice.set(source.offset(dx, dy), SiteState::One)?;
            }
        }
        let mut sim = Simulation::new(lattice, engine.clone(), seed)?;
        let mut stages = Stages {
            t: cfg.t,
            c,
            origin: Region {
                cells: origin
                    .cells
                    .iter()
                    .map(|x| Cell {
                        x0: x.x0,
                        y0: x.y0,
                        good: x.good.clone(),
                    })
                    .collect(),
            },
            left: left(),
            right: right(),
            kept: true,
            success: false,
        };
        sim.run_with(StopRule::at(4.0 * cfg.t), &plan, &mut stages);
        Ok((stages.kept, stages.kept && stages.success))
    })?;
    let conditioned = records.iter().filter(|r| r.0).count() as u64;
    if conditioned == 0 {
        return Err(Error::Estimation(
            "the initial source never survived stage 0; nothing to condition on".into(),
        ));
    }
    let successes = records.iter().filter(|r| r.1).count() as u64;
    Ok(SourceOutcome {
        estimate: Estimate::proportion(successes, conditioned, "source-propagation", base_seed)?,
        constants: c,
        conditioned,
        warnings,
        records,
    })
}
