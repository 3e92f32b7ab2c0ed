//! Growth-shape measurements for the contact and Richardson processes.
//!
//! `H_t` is the set of sites occupied at some time up to `t` by the process
//! started from the origin. `K_t` is the set of sites where that process
//! agrees with the one started from the full lattice when both are driven by
//! the same clocks.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stats::linear_fit;
use super::{Estimate, Runner};
use crate::engine::{
    CoupledSimulation, Flow, Monitor, ObserverPlan, ProcessParams, Simulation, StopRule, Transition,
};
use crate::error::{config, Result};
use crate::kernels::KernelSpec;
use crate::lattice::{Boundary, Lattice, Site, SiteState};
use crate::processes::center;

/// Compass directions E, NE, N, NW, W, SW, S, SE as unit vectors.
pub const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (0.0, -1.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub beta: f64,
    /// 0 gives the Richardson model.
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub size: u32,
    pub horizon: f64,
    /// Number of sample intervals; samples are taken at `k * horizon / samples`.
    pub samples: usize,
    /// Also run the copy started from the full lattice and record `K_t`.
    #[serde(default)]
    pub coupled: bool,
    /// Tolerance of the per-sample shape check.
    #[serde(default = "half")]
    pub eps: f64,
}

fn half() -> f64 {
    0.5
}

impl ShapeConfig {
    pub fn richardson(beta: f64, size: u32, horizon: f64, samples: usize) -> Self {
        ShapeConfig {
            beta,
            delta: 0.0,
            kernel: KernelSpec::Moore,
            size,
            horizon,
            samples,
            coupled: false,
            eps: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 5 {
            return Err(config("size must be >= 5"));
        }
        if !(self.horizon > 0.0) || self.samples < 2 {
            return Err(config("need horizon > 0 and at least 2 samples"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(config("eps must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSample {
    pub t: f64,
    /// |H_t|
    pub area: u64,
    /// Support function of `H_t - origin` in each compass direction.
    pub extents: [f64; 8],
    /// Largest r with the square of half-width r inside H_t.
    pub inner_radius: i64,
    /// Largest sup-norm distance of a hit site from the origin.
    pub outer_radius: i64,
    /// |H_t ∩ K_t| (coupled runs only).
    pub coupled_in_hit: Option<u64>,
    /// Largest r with the square of half-width r inside H_t ∩ K_t.
    pub coupled_inner_radius: Option<i64>,
    /// |H_t| over the number of sites inside the octagon cut out by the
    /// eight support lines; 1 for a filled convex octagon.
    pub convexity: f64,
    /// False once H_t has come within one site of the lattice edge.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeData {
    pub samples: Vec<ShapeSample>,
    /// Directional speeds fitted over the second half of valid samples.
    pub speeds: [f64; 8],
    pub inner_speed: f64,
    pub outer_speed: f64,
    /// Speeds of the inner and outer box radii.
    pub inner_box_speed: f64,
    pub outer_box_speed: f64,
    /// (slope, intercept, R^2) of sqrt(area)/2 against t.
    pub radius_fit: (f64, f64, f64),
    pub size: u32,
    /// First time H_t came within one site of the edge.
    pub boundary_time: f64,
    /// First-hit time of each grid site (infinite if never hit).
    #[serde(skip)]
    pub hit_times: Vec<f64>,
    /// K_t per sample as a bitset over grid indices (coupled runs only).
    #[serde(skip)]
    pub k_regions: Vec<Vec<u64>>,
}

impl ShapeData {
    fn origin(&self) -> Site {
        Site::new((self.size / 2) as i32, (self.size / 2) as i32)
    }

    /// Is grid index `idx` in H at sample `k`?
    pub fn in_h(&self, k: usize, idx: usize) -> bool {
        self.hit_times[idx] <= self.samples[k].t
    }

    /// Is grid index `idx` in K at sample `k`?
    pub fn in_k(&self, k: usize, idx: usize) -> Option<bool> {
        self.k_regions
            .get(k)
            .map(|b| b[idx / 64] >> (idx % 64) & 1 == 1)
    }

    /// Per-sample shape check: the coupled (or hit) set covers the square
    /// of half-width `(1-eps) t v_in` and H_t lies inside the square of
    /// half-width `(1+eps) t v_out`, with the fitted box speeds.
    pub fn shape_flags(&self, eps: f64) -> Vec<bool> {
        self.samples
            .iter()
            .map(|s| {
                let inner = s.coupled_inner_radius.unwrap_or(s.inner_radius) as f64;
                s.valid
                    && inner >= ((1.0 - eps) * self.inner_box_speed * s.t).floor()
                    && s.outer_radius as f64 <= (1.0 + eps) * self.outer_box_speed * s.t + 1.0
            })
            .collect()
    }

    /// Fraction of the square of half-width `(1-eps) t v_in` that is both
    /// hit and coupled at sample `k`.
    pub fn coupled_fraction(&self, k: usize, eps: f64) -> Option<f64> {
        self.k_regions.get(k)?;
        let s = &self.samples[k];
        let r = ((1.0 - eps) * self.inner_box_speed * s.t).floor() as i32;
        let o = self.origin();
        let mut inside = 0u64;
        let mut good = 0u64;
        for dy in -r..=r {
            for dx in -r..=r {
                let x = (o.x + dx).rem_euclid(self.size as i32);
                let y = (o.y + dy).rem_euclid(self.size as i32);
                let idx = (y * self.size as i32 + x) as usize;
                inside += 1;
                if self.in_h(k, idx) && self.in_k(k, idx) == Some(true) {
                    good += 1;
                }
            }
        }
        Some(good as f64 / inside as f64)
    }
}

fn ring_of(o: Site, s: Site) -> usize {
    (s.x - o.x).abs().max((s.y - o.y).abs()) as usize
}

/// Measure H_t (and K_t) for one run from a single seed at the center.
pub fn shape_measure(cfg: &ShapeConfig, seed: u64) -> Result<ShapeData> {
    cfg.validate()?;
    let kernel = cfg.kernel.build()?;
    let params =
        ProcessParams::new([cfg.beta, 0.0], [cfg.delta, 0.0]).with_kernel(SiteState::One, kernel);
    params.validate()?;
    let n = cfg.size;
    let mut start = Lattice::new(n, n, Boundary::Torus)?;
    let o = center(&start);
    start.set(o, SiteState::One)?;
    let times: Vec<f64> = (0..=cfg.samples)
        .map(|k| cfg.horizon * k as f64 / cfg.samples as f64)
        .collect();

    let words = start.len().div_ceil(64);
    let (hits, k_regions) = if cfg.coupled {
        let full = Lattice::filled(n, n, Boundary::Torus, SiteState::One)?;
        let mut sim = CoupledSimulation::new(start, full, &params, seed)?;
        sim.track_hits_a();
        let mut regions = Vec::with_capacity(times.len());
        sim.run_until(cfg.horizon, &times, |_, s| {
            let mut bits = vec![0u64; words];
            for (i, (a, b)) in s.a().states().iter().zip(s.b().states()).enumerate() {
                if a == b {
                    bits[i / 64] |= 1 << (i % 64);
                }
            }
            regions.push(bits);
            Flow::Continue
        });
        (
            sim.hit_times_a().expect("tracking enabled").to_vec(),
            regions,
        )
    } else {
        let mut sim = Simulation::new(start, Arc::new(params), seed)?;
        let plan = ObserverPlan {
            track_hits: Some(SiteState::One),
            ..Default::default()
        };
        let tr = sim.run_until(StopRule::at(cfg.horizon), &plan);
        (tr.hit_times.expect("tracking enabled"), Vec::new())
    };

    let lat = Lattice::new(n, n, Boundary::Torus)?;
    let half = (n / 2) as usize;
    // boundary guard: the outermost rings that still fit without wrapping
    let edge = half.saturating_sub(1);
    let mut boundary_time = f64::INFINITY;
    let mut ring_max = vec![f64::NEG_INFINITY; half + 1];
    let mut order: Vec<usize> = Vec::new();
    for (i, &h) in hits.iter().enumerate() {
        let r = ring_of(o, lat.site_of(i as u32));
        if r <= half {
            ring_max[r] = ring_max[r].max(h);
        }
        if h.is_finite() {
            order.push(i);
            if r >= edge {
                boundary_time = boundary_time.min(h);
            }
        }
    }
    order.sort_by(|&a, &b| hits[a].total_cmp(&hits[b]).then(a.cmp(&b)));
    for r in 1..ring_max.len() {
        ring_max[r] = ring_max[r].max(ring_max[r - 1]);
    }

    let mut samples = Vec::with_capacity(times.len());
    let mut area = 0u64;
    let mut extents = [f64::NEG_INFINITY; 8];
    let mut outer = 0i64;
    let mut next = 0;
    for (k, &t) in times.iter().enumerate() {
        while next < order.len() && hits[order[next]] <= t {
            let s = lat.site_of(order[next] as u32);
            let (dx, dy) = ((s.x - o.x) as f64, (s.y - o.y) as f64);
            for (e, d) in extents.iter_mut().zip(DIRECTIONS) {
                *e = e.max(dx * d.0 + dy * d.1);
            }
            outer = outer.max(ring_of(o, s) as i64);
            area += 1;
            next += 1;
        }
        let inner = ring_max.iter().take_while(|&&m| m <= t).count() as i64 - 1;
        let (coupled_in_hit, coupled_inner_radius) = match k_regions.get(k) {
            Some(bits) => {
                let in_c = |i: usize| hits[i] <= t && bits[i / 64] >> (i % 64) & 1 == 1;
                let count = (0..hits.len()).filter(|&i| in_c(i)).count() as u64;
                let mut r = -1i64;
                'grow: for rr in 0..=half as i32 {
                    for dy in -rr..=rr {
                        for dx in -rr..=rr {
                            if dx.abs().max(dy.abs()) != rr {
                                continue;
                            }
                            let idx = lat.resolve(o.offset(dx, dy)).expect("torus") as usize;
                            if !in_c(idx) {
                                break 'grow;
                            }
                        }
                    }
                    r = rr as i64;
                }
                (Some(count), Some(r))
            }
            None => (None, None),
        };
        samples.push(ShapeSample {
            t,
            area,
            extents,
            inner_radius: inner,
            outer_radius: outer,
            coupled_in_hit,
            coupled_inner_radius,
            convexity: convexity(&extents, area, half as i32),
            valid: t < boundary_time,
        });
    }

    let fit_set: Vec<&ShapeSample> = {
        let valid: Vec<&ShapeSample> = samples.iter().filter(|s| s.valid && s.t > 0.0).collect();
        valid[valid.len() / 2..].to_vec()
    };
    if fit_set.len() < 2 {
        return Err(crate::Error::Estimation(
            "fewer than two valid samples in the fit window; enlarge the lattice or shorten the horizon"
                .into(),
        ));
    }
    let ts: Vec<f64> = fit_set.iter().map(|s| s.t).collect();
    let slope = |ys: Vec<f64>| linear_fit(&ts, &ys).0;
    let mut speeds = [0.0; 8];
    for (j, v) in speeds.iter_mut().enumerate() {
        *v = slope(fit_set.iter().map(|s| s.extents[j]).collect());
    }
    let radius_fit = linear_fit(
        &ts,
        &fit_set
            .iter()
            .map(|s| (s.area as f64).sqrt() / 2.0)
            .collect::<Vec<_>>(),
    );
    Ok(ShapeData {
        inner_speed: speeds.iter().cloned().fold(f64::INFINITY, f64::min),
        outer_speed: speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        inner_box_speed: slope(fit_set.iter().map(|s| s.inner_radius as f64).collect()),
        outer_box_speed: slope(fit_set.iter().map(|s| s.outer_radius as f64).collect()),
        speeds,
        radius_fit,
        size: n,
        boundary_time,
        samples,
        hit_times: hits,
        k_regions,
    })
}

/// |H| over the number of lattice points satisfying all support constraints.
fn convexity(extents: &[f64; 8], area: u64, half: i32) -> f64 {
    if area == 0 {
        return 0.0;
    }
    let mut hull = 0u64;
    for dy in -half..=half {
        for dx in -half..=half {
            let inside = DIRECTIONS
                .iter()
                .zip(extents)
                .all(|(d, &e)| dx as f64 * d.0 + dy as f64 * d.1 <= e + 1e-9);
            hull += inside as u64;
        }
    }
    area as f64 / hull.max(1) as f64
}

struct Reach {
    targets: Vec<u32>,
    hit: bool,
}

impl Monitor for Reach {
    fn on_event(&mut self, _: f64, tr: &Transition, _: &Lattice) -> Flow {
        if let Transition::Birth {
            target: Some(t),
            success: true,
            ..
        } = *tr
        {
            if self.targets.contains(&t) {
                self.hit = true;
                return Flow::Stop;
            }
        }
        Flow::Continue
    }
}

/// Two-sample check of self-duality for the Richardson model:
/// estimates `P(R_t^A meets B)` and `P(R_t^B meets A)`. `a` and `b` are
/// offsets from the lattice center and must be disjoint.
pub fn richardson_duality(
    beta: f64,
    kernel: KernelSpec,
    size: u32,
    a: &[(i32, i32)],
    b: &[(i32, i32)],
    t: f64,
    replicates: u64,
    base_seed: u64,
    runner: &Runner,
) -> Result<(Estimate, Estimate)> {
    if a.is_empty() || b.is_empty() || a.iter().any(|p| b.contains(p)) {
        return Err(config("A and B must be nonempty and disjoint"));
    }
    let params = Arc::new(
        ProcessParams::new([beta, 0.0], [0.0, 0.0]).with_kernel(SiteState::One, kernel.build()?),
    );
    params.validate()?;
    let base = Lattice::new(size, size, Boundary::Torus)?;
    let o = center(&base);
    let place = |set: &[(i32, i32)]| -> Result<Vec<u32>> {
        set.iter()
            .map(|&(dx, dy)| {
                base.resolve(o.offset(dx, dy))
                    .ok_or_else(|| config("offset outside the lattice"))
            })
            .collect()
    };
    let (ia, ib) = (place(a)?, place(b)?);
    let run = |from: &[u32], to: &[u32], seed_offset: u64| -> Result<Estimate> {
        let seed0 = base_seed.wrapping_add(seed_offset);
        let hits = runner.try_map(seed0, replicates, |_, seed| {
            let mut lat = base.clone();
            for &i in from {
                lat.set_index(i, SiteState::One);
            }
            let mut sim = Simulation::new(lat, params.clone(), seed)?;
            let mut m = Reach {
                targets: to.to_vec(),
                hit: false,
            };
            sim.run_with(StopRule::at(t), &ObserverPlan::default(), &mut m);
            Ok(m.hit)
        })?;
        let s = hits.iter().filter(|&&h| h).count() as u64;
        Estimate::proportion(s, replicates, "richardson-hit", seed0)
    };
    Ok((run(&ia, &ib, 0)?, run(&ib, &ia, 0x5EED)?))
}
