//! Exact continuous-time simulation by aggregate-rate Gillespie dispatch.
//!
//! Every occupied site of type i carries a birth clock (rate beta_i) and a
//! death clock (rate delta_i); every fire center carries a fire clock
//! (rate delta_0). Because all sites of a type share the same rates, the
//! next event is found by drawing an Exp(total) waiting time, picking one
//! of five categories in proportion to its aggregate rate and then a
//! uniform member of the category from the lattice registries.

use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::kernels::KernelTable;
use crate::lattice::{Boundary, Lattice, Site, SiteSet, SiteState};
use crate::rng::{rng_from_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Two species competing for space with births, deaths and fires.
    #[default]
    Competition,
    /// Type-1 sites flip independently 0 -> 1 at rate beta_1 and 1 -> 0 at
    /// rate delta_1 on every site not holding a 2; type 2 as usual.
    FlipEnvironment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessParams {
    pub birth: [f64; 2],
    pub death: [f64; 2],
    pub fire_rate: f64,
    pub fire_width: u32,
    pub kernels: [Arc<KernelTable>; 2],
    pub dynamics: Dynamics,
    /// On a truncated box, let fire centers range over the box grown by the
    /// block radius so that every fire touching the box is simulated.
    pub fire_halo: bool,
}

impl ProcessParams {
    /// Both species with Moore dispersal, no fires.
    pub fn new(birth: [f64; 2], death: [f64; 2]) -> Self {
        let moore = Arc::new(KernelTable::moore());
        ProcessParams {
            birth,
            death,
            fire_rate: 0.0,
            fire_width: 1,
            kernels: [moore.clone(), moore],
            dynamics: Dynamics::Competition,
            fire_halo: false,
        }
    }

    pub fn with_fire(mut self, rate: f64, width: u32) -> Self {
        self.fire_rate = rate;
        self.fire_width = width;
        self
    }

    pub fn with_kernel(mut self, species: SiteState, kernel: KernelTable) -> Self {
        self.kernels[slot(species)] = Arc::new(kernel);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("beta1", self.birth[0]),
            ("beta2", self.birth[1]),
            ("delta1", self.death[0]),
            ("delta2", self.death[1]),
            ("delta0", self.fire_rate),
        ];
        for (name, r) in rates {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(config(format!(
                    "{name} must be a finite rate >= 0, got {r}"
                )));
            }
        }
        if self.fire_rate > 0.0 && self.fire_width == 0 {
            return Err(config("fire width F must be >= 1 when delta0 > 0"));
        }
        if self.dynamics == Dynamics::FlipEnvironment && self.fire_rate > 0.0 {
            return Err(config("the flip-environment process has no fires"));
        }
        Ok(())
    }

    /// Side of the square each fire clears.
    pub fn block_side(&self) -> u32 {
        Lattice::block_side(self.fire_width)
    }
}

#[inline]
fn slot(species: SiteState) -> usize {
    match species {
        SiteState::One => 0,
        SiteState::Two => 1,
        SiteState::Vacant => panic!("vacant is not a species"),
    }
}

#[inline]
fn species_of(k: usize) -> SiteState {
    if k == 0 {
        SiteState::One
    } else {
        SiteState::Two
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Birth1,
    Birth2,
    Death1,
    Death2,
    Fire,
    SuppressedBirth1,
    SuppressedBirth2,
    FlipOn,
    FlipOff,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Birth1 => "birth1",
            EventKind::Birth2 => "birth2",
            EventKind::Death1 => "death1",
            EventKind::Death2 => "death2",
            EventKind::Fire => "fire",
            EventKind::SuppressedBirth1 => "suppressed1",
            EventKind::SuppressedBirth2 => "suppressed2",
            EventKind::FlipOn => "flip_on",
            EventKind::FlipOff => "flip_off",
        }
    }
}

/// What one event did to the lattice, in grid indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transition {
    /// `target` is `None` when the offspring left a truncated box.
    Birth {
        species: SiteState,
        source: u32,
        target: Option<u32>,
        success: bool,
    },
    Death {
        species: SiteState,
        site: u32,
    },
    Fire {
        center: Site,
        removed: u32,
    },
    FlipOn {
        site: u32,
    },
    FlipOff {
        site: u32,
    },
}

impl Transition {
    pub fn kind(&self) -> EventKind {
        match *self {
            Transition::Birth {
                species, success, ..
            } => match (species, success) {
                (SiteState::One, true) => EventKind::Birth1,
                (SiteState::One, false) => EventKind::SuppressedBirth1,
                (_, true) => EventKind::Birth2,
                (_, false) => EventKind::SuppressedBirth2,
            },
            Transition::Death { species, .. } => {
                if species == SiteState::One {
                    EventKind::Death1
                } else {
                    EventKind::Death2
                }
            }
            Transition::Fire { .. } => EventKind::Fire,
            Transition::FlipOn { .. } => EventKind::FlipOn,
            Transition::FlipOff { .. } => EventKind::FlipOff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub source: Site,
    pub target: Option<Site>,
}

impl Event {
    fn from_transition(time: f64, tr: &Transition, lattice: &Lattice) -> Self {
        let (source, target) = match *tr {
            Transition::Birth { source, target, .. } => {
                (lattice.site_of(source), target.map(|t| lattice.site_of(t)))
            }
            Transition::Death { site, .. }
            | Transition::FlipOn { site }
            | Transition::FlipOff { site } => (lattice.site_of(site), None),
            Transition::Fire { center, .. } => (center, Some(center)),
        };
        Event {
            time,
            kind: tr.kind(),
            source,
            target,
        }
    }

    pub fn csv_row(&self) -> String {
        let (tx, ty) = match self.target {
            Some(t) => (t.x.to_string(), t.y.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{}",
            self.time,
            self.kind.as_str(),
            self.source.x,
            self.source.y,
            tx,
            ty
        )
    }
}

pub const EVENT_LOG_HEADER: &str = "t,kind,src_x,src_y,tgt_x,tgt_y";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub births: [u64; 2],
    pub suppressed: [u64; 2],
    pub deaths: [u64; 2],
    pub fires: u64,
    pub flips_on: u64,
    pub flips_off: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.births.iter().sum::<u64>()
            + self.suppressed.iter().sum::<u64>()
            + self.deaths.iter().sum::<u64>()
            + self.fires
            + self.flips_on
            + self.flips_off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Halt {
    /// Run to the horizon.
    #[default]
    Horizon,
    /// Stop as soon as the given species has no sites.
    Extinct(SiteState),
    /// Stop once neither species is present.
    AllExtinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub t_max: f64,
    pub halt: Halt,
}

impl StopRule {
    pub fn at(t_max: f64) -> Self {
        StopRule {
            t_max,
            halt: Halt::Horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max >= 0.0) {
            return Err(config(format!(
                "stop time must be >= 0, got {}",
                self.t_max
            )));
        }
        if let Halt::Extinct(SiteState::Vacant) = self.halt {
            return Err(config("extinction halt needs a species"));
        }
        Ok(())
    }
}

/// What to record during `run_until`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObserverPlan {
    /// Times at which `(n1, n2)` is recorded; sorted internally.
    pub sample_times: Vec<f64>,
    pub snapshot_every: Option<f64>,
    pub event_log_cap: Option<usize>,
    /// Record first-hit times t(x) for this species.
    pub track_hits: Option<SiteState>,
}

impl ObserverPlan {
    pub fn every(dt: f64, t_max: f64) -> Self {
        let n = (t_max / dt).floor() as usize;
        ObserverPlan {
            sample_times: (0..=n).map(|i| i as f64 * dt).collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub samples: Vec<Sample>,
    /// First time each species' count was 0.
    pub extinction: [Option<f64>; 2],
    pub final_time: f64,
    pub counts: EventCounts,
    pub hit_times: Option<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub event_log: Vec<Event>,
}

impl Trajectory {
    pub fn extinction_time(&self, species: SiteState) -> Option<f64> {
        self.extinction[slot(species)]
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from("t,n1,n2\n");
        for p in &self.samples {
            s.push_str(&format!("{},{},{}\n", p.t, p.n1, p.n2));
        }
        s
    }
}

/// Early-stop signal from a monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Hooks called by `run_with`. Both default to doing nothing.
pub trait Monitor {
    fn on_event(&mut self, _time: f64, _transition: &Transition, _lattice: &Lattice) -> Flow {
        Flow::Continue
    }

    fn on_sample(&mut self, _time: f64, _lattice: &Lattice) -> Flow {
        Flow::Continue
    }
}

pub struct NoMonitor;

impl Monitor for NoMonitor {}

/// Total event rate of the configuration.
pub fn total_rate(lattice: &Lattice, params: &ProcessParams) -> f64 {
    category_rates(lattice, params).iter().sum()
}

fn fire_centers(lattice: &Lattice, params: &ProcessParams) -> (u64, i32) {
    if params.fire_halo && lattice.boundary() == Boundary::TruncatedBox {
        let h = Lattice::block_radius(params.fire_width);
        let w = lattice.width() as u64 + 2 * h as u64;
        let ht = lattice.height() as u64 + 2 * h as u64;
        (w * ht, h)
    } else {
        (lattice.len() as u64, 0)
    }
}

/// Aggregate rates: [birth1 | flip-on, death1 | flip-off, birth2, death2, fire].
#[inline]
fn category_rates(lattice: &Lattice, params: &ProcessParams) -> [f64; 5] {
    let n1 = lattice.count(SiteState::One) as f64;
    let n2 = lattice.count(SiteState::Two) as f64;
    let first = match params.dynamics {
        Dynamics::Competition => n1 * params.birth[0],
        Dynamics::FlipEnvironment => lattice.count(SiteState::Vacant) as f64 * params.birth[0],
    };
    let fire = if params.fire_rate > 0.0 {
        fire_centers(lattice, params).0 as f64 * params.fire_rate
    } else {
        0.0
    };
    [
        first,
        n1 * params.death[0],
        n2 * params.birth[1],
        n2 * params.death[1],
        fire,
    ]
}

pub struct Simulation {
    lattice: Lattice,
    params: Arc<ProcessParams>,
    time: f64,
    seed: u64,
    rng: SimRng,
    counts: EventCounts,
    extinction: [Option<f64>; 2],
    hits: Option<(SiteState, Vec<f64>)>,
}

impl Simulation {
    pub fn new(mut lattice: Lattice, params: Arc<ProcessParams>, seed: u64) -> Result<Self> {
        params.validate()?;
        if params.dynamics == Dynamics::FlipEnvironment {
            lattice.track_vacant();
        }
        let extinction = [
            (lattice.count(SiteState::One) == 0).then_some(0.0),
            (lattice.count(SiteState::Two) == 0).then_some(0.0),
        ];
        Ok(Simulation {
            lattice,
            params,
            time: 0.0,
            seed,
            rng: rng_from_seed(seed),
            counts: EventCounts::default(),
            extinction,
            hits: None,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_mut(&mut self) -> &mut Lattice {
        &mut self.lattice
    }

    pub fn into_lattice(self) -> Lattice {
        self.lattice
    }

    pub fn params(&self) -> &ProcessParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self) -> EventCounts {
        self.counts
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn extinction(&self) -> [Option<f64>; 2] {
        self.extinction
    }

    /// Start recording first-hit times for `species`; sites already holding
    /// it get hit time `now`.
    pub fn track_hits(&mut self, species: SiteState) {
        let mut t = vec![f64::INFINITY; self.lattice.len()];
        if let Some(reg) = self.lattice.registry(species) {
            for &i in reg.as_slice() {
                t[i as usize] = self.time;
            }
        }
        self.hits = Some((species, t));
    }

    pub fn hit_times(&self) -> Option<&[f64]> {
        self.hits.as_ref().map(|(_, t)| t.as_slice())
    }

    pub fn take_hit_times(&mut self) -> Option<Vec<f64>> {
        self.hits.take().map(|(_, t)| t)
    }

    pub fn total_rate(&self) -> f64 {
        total_rate(&self.lattice, &self.params)
    }

    /// Draw and apply the next event. `None` when the total rate is 0.
    pub fn step(&mut self) -> Option<Event> {
        let rates = category_rates(&self.lattice, &self.params);
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let dt: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        self.time += dt;
        let tr = self.apply(&rates, total);
        Some(Event::from_transition(self.time, &tr, &self.lattice))
    }

    /// Choose the category and member of the next event and apply it.
    #[inline]
    fn apply(&mut self, rates: &[f64; 5], total: f64) -> Transition {
        let mut u = self.rng.random::<f64>() * total;
        let mut cat = 4;
        for (k, &r) in rates.iter().enumerate() {
            if u < r {
                cat = k;
                break;
            }
            u -= r;
        }
        // guard against rounding pushing u past the last non-zero category
        while rates[cat] <= 0.0 {
            cat -= 1;
        }
        match (cat, self.params.dynamics) {
            (0, Dynamics::Competition) => self.birth(0),
            (0, Dynamics::FlipEnvironment) => {
                let site = self.pick(SiteState::Vacant);
                self.lattice.set_index(site, SiteState::One);
                self.counts.flips_on += 1;
                self.record_hit(SiteState::One, site);
                Transition::FlipOn { site }
            }
            (1, Dynamics::Competition) => self.death(0),
            (1, Dynamics::FlipEnvironment) => {
                let site = self.pick(SiteState::One);
                self.lattice.set_index(site, SiteState::Vacant);
                self.counts.flips_off += 1;
                self.note_extinction(0);
                Transition::FlipOff { site }
            }
            (2, _) => self.birth(1),
            (3, _) => self.death(1),
            _ => self.fire(),
        }
    }

    #[inline]
    fn pick(&mut self, state: SiteState) -> u32 {
        self.lattice
            .registry(state)
            .and_then(|r| r.sample(&mut self.rng))
            .expect("category with positive rate has members")
    }

    #[inline]
    fn record_hit(&mut self, species: SiteState, site: u32) {
        if let Some((s, t)) = self.hits.as_mut() {
            if *s == species && t[site as usize].is_infinite() {
                t[site as usize] = self.time;
            }
        }
    }

    #[inline]
    fn note_extinction(&mut self, k: usize) {
        if self.extinction[k].is_none() && self.lattice.count(species_of(k)) == 0 {
            self.extinction[k] = Some(self.time);
        }
    }

    #[inline]
    fn birth(&mut self, k: usize) -> Transition {
        let species = species_of(k);
        let source = self.pick(species);
        let (dx, dy) = self.params.kernels[k].sample_offset(&mut self.rng);
        let target = self.lattice.displace(source, dx, dy);
        let success = match target {
            Some(t) if self.lattice.state_at(t) == SiteState::Vacant => {
                self.lattice.set_index(t, species);
                self.record_hit(species, t);
                true
            }
            _ => false,
        };
        if success {
            self.counts.births[k] += 1;
        } else {
            self.counts.suppressed[k] += 1;
        }
        Transition::Birth {
            species,
            source,
            target,
            success,
        }
    }

    #[inline]
    fn death(&mut self, k: usize) -> Transition {
        let species = species_of(k);
        let site = self.pick(species);
        self.lattice.set_index(site, SiteState::Vacant);
        self.counts.deaths[k] += 1;
        self.note_extinction(k);
        Transition::Death { species, site }
    }

    fn fire(&mut self) -> Transition {
        let (_, h) = fire_centers(&self.lattice, &self.params);
        let w = self.lattice.width() as i32 + 2 * h;
        let ht = self.lattice.height() as i32 + 2 * h;
        let center = Site::new(
            self.rng.random_range(0..w) - h,
            self.rng.random_range(0..ht) - h,
        );
        let removed = self.lattice.clear_block(center, self.params.fire_width) as u32;
        self.counts.fires += 1;
        self.note_extinction(0);
        self.note_extinction(1);
        Transition::Fire { center, removed }
    }

    fn halted(&self, halt: Halt) -> bool {
        match halt {
            Halt::Horizon => false,
            Halt::Extinct(s) => self.lattice.count(s) == 0,
            Halt::AllExtinct => {
                self.lattice.count(SiteState::One) == 0 && self.lattice.count(SiteState::Two) == 0
            }
        }
    }

    /// Advance until the stop rule fires, recording per `plan`.
    pub fn run_until(&mut self, stop: StopRule, plan: &ObserverPlan) -> Trajectory {
        self.run_with(stop, plan, &mut NoMonitor)
    }

    /// As `run_until`, additionally calling `monitor` after every event and
    /// at every sample time. A monitor may end the run early.
    pub fn run_with<M: Monitor>(
        &mut self,
        stop: StopRule,
        plan: &ObserverPlan,
        monitor: &mut M,
    ) -> Trajectory {
        if let Some(species) = plan.track_hits {
            if self.hits.as_ref().map(|(s, _)| *s) != Some(species) {
                self.track_hits(species);
            }
        }
        let mut sample_times = plan.sample_times.clone();
        sample_times.sort_by(|a, b| a.total_cmp(b));
        let mut samples = Vec::with_capacity(sample_times.len());
        let mut next_sample = sample_times
            .iter()
            .position(|&t| t >= self.time)
            .unwrap_or(sample_times.len());
        let mut snapshots = Vec::new();
        let mut next_snapshot = plan.snapshot_every.map(|_| self.time);
        let mut event_log = Vec::new();
        let log_cap = plan.event_log_cap.unwrap_or(0);

        loop {
            if self.halted(stop.halt) {
                break;
            }
            let rates = category_rates(&self.lattice, &self.params);
            let total: f64 = rates.iter().sum();
            let t_next = if total > 0.0 {
                self.time + self.rng.sample::<f64, _>(Exp1) / total
            } else {
                f64::INFINITY
            };
            let mut early = false;
            // observations strictly before the next event see the current state
            while next_sample < sample_times.len()
                && sample_times[next_sample] < t_next
                && sample_times[next_sample] <= stop.t_max
            {
                let t = sample_times[next_sample];
                samples.push(Sample {
                    t,
                    n1: self.lattice.count(SiteState::One),
                    n2: self.lattice.count(SiteState::Two),
                });
                next_sample += 1;
                if monitor.on_sample(t, &self.lattice) == Flow::Stop {
                    self.time = self.time.max(t);
                    early = true;
                    break;
                }
            }
            if early {
                break;
            }
            if let (Some(every), Some(ts)) = (plan.snapshot_every, next_snapshot.as_mut()) {
                while *ts < t_next && *ts <= stop.t_max {
                    snapshots.push(Snapshot {
                        time: *ts,
                        text: self.lattice.to_text(),
                    });
                    *ts += every;
                }
            }
            if t_next > stop.t_max {
                self.time = stop.t_max;
                break;
            }
            self.time = t_next;
            let tr = self.apply(&rates, total);
            if event_log.len() < log_cap {
                event_log.push(Event::from_transition(self.time, &tr, &self.lattice));
            }
            if monitor.on_event(self.time, &tr, &self.lattice) == Flow::Stop {
                break;
            }
        }

        Trajectory {
            seed: self.seed,
            samples,
            extinction: self.extinction,
            final_time: self.time,
            counts: self.counts,
            hit_times: plan
                .track_hits
                .and_then(|_| self.hits.as_ref().map(|(_, t)| t.clone())),
            snapshots,
            event_log,
        }
    }
}

/// Two single-species processes driven by one graphical representation.
///
/// Clocks only matter at sites occupied in at least one copy, so events are
/// drawn over the union of the occupied sets. A birth arrow `x -> y` acts
/// in each copy where `x` is occupied and `y` vacant; a death mark at `x`
/// vacates `x` in both; a fire clears the same block in both.
pub struct CoupledSimulation {
    a: Lattice,
    b: Lattice,
    union: SiteSet,
    birth: f64,
    death: f64,
    kernel: Arc<KernelTable>,
    fire_rate: f64,
    fire_width: u32,
    time: f64,
    rng: SimRng,
    /// Number of sites occupied in `a` but vacant in `b`.
    excess: usize,
    events: u64,
    hits_a: Option<Vec<f64>>,
}

impl CoupledSimulation {
    /// Uses the type-1 rates and kernel of `params`; both lattices must hold
    /// only type-1 particles.
    pub fn new(a: Lattice, b: Lattice, params: &ProcessParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if a.width() != b.width() || a.height() != b.height() {
            return Err(config(format!(
                "coupled lattices differ in size: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        if a.count(SiteState::Two) > 0 || b.count(SiteState::Two) > 0 {
            return Err(config("coupled runs support single-species processes only"));
        }
        let mut union = SiteSet::with_universe(a.len());
        let mut excess = 0;
        for i in 0..a.len() as u32 {
            let (sa, sb) = (a.state_at(i), b.state_at(i));
            if sa == SiteState::One || sb == SiteState::One {
                union.insert(i);
            }
            if sa == SiteState::One && sb == SiteState::Vacant {
                excess += 1;
            }
        }
        Ok(CoupledSimulation {
            a,
            b,
            union,
            birth: params.birth[0],
            death: params.death[0],
            kernel: params.kernels[0].clone(),
            fire_rate: params.fire_rate,
            fire_width: params.fire_width,
            time: 0.0,
            rng: rng_from_seed(seed),
            excess,
            events: 0,
            hits_a: None,
        })
    }

    /// Record first-hit times of copy `a`; sites occupied now get `now`.
    pub fn track_hits_a(&mut self) {
        let mut t = vec![f64::INFINITY; self.a.len()];
        for &i in self
            .a
            .registry(SiteState::One)
            .map_or(&[][..], |r| r.as_slice())
        {
            t[i as usize] = self.time;
        }
        self.hits_a = Some(t);
    }

    pub fn hit_times_a(&self) -> Option<&[f64]> {
        self.hits_a.as_deref()
    }

    pub fn a(&self) -> &Lattice {
        &self.a
    }

    pub fn b(&self) -> &Lattice {
        &self.b
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// True while every site occupied in `a` is occupied in `b`.
    pub fn a_within_b(&self) -> bool {
        self.excess == 0
    }

    /// Sites where both copies agree.
    pub fn agreement(&self) -> Vec<bool> {
        self.a
            .states()
            .iter()
            .zip(self.b.states())
            .map(|(x, y)| x == y)
            .collect()
    }

    pub fn agreement_count(&self) -> usize {
        self.a
            .states()
            .iter()
            .zip(self.b.states())
            .filter(|(x, y)| x == y)
            .count()
    }

    fn rates(&self) -> (f64, f64) {
        let sites = self.union.len() as f64 * (self.birth + self.death);
        let fire = self.a.len() as f64 * self.fire_rate;
        (sites, fire)
    }

    #[inline]
    fn set_pair(&mut self, idx: u32, in_a: Option<SiteState>, in_b: Option<SiteState>) {
        let before = (self.a.state_at(idx), self.b.state_at(idx));
        if let Some(s) = in_a {
            self.a.set_index(idx, s);
        }
        if let Some(s) = in_b {
            self.b.set_index(idx, s);
        }
        let after = (self.a.state_at(idx), self.b.state_at(idx));
        if after.0 == SiteState::One {
            if let Some(h) = self.hits_a.as_mut() {
                if h[idx as usize].is_infinite() {
                    h[idx as usize] = self.time;
                }
            }
        }
        let bad = |p: (SiteState, SiteState)| p.0 == SiteState::One && p.1 == SiteState::Vacant;
        if bad(before) {
            self.excess -= 1;
        }
        if bad(after) {
            self.excess += 1;
        }
        if after.0 == SiteState::One || after.1 == SiteState::One {
            self.union.insert(idx);
        } else {
            self.union.remove(idx);
        }
    }

    /// Next shared event; `None` when nothing can happen.
    pub fn step(&mut self) -> Option<f64> {
        let (sites, fire) = self.rates();
        let total = sites + fire;
        if total <= 0.0 {
            return None;
        }
        self.time += self.rng.sample::<f64, _>(Exp1) / total;
        self.apply(sites, total);
        Some(self.time)
    }

    fn apply(&mut self, sites: f64, total: f64) {
        self.events += 1;
        let u = self.rng.random::<f64>() * total;
        if u < sites {
            let x = self
                .union
                .sample(&mut self.rng)
                .expect("positive site rate implies occupied sites");
            let v = self.rng.random::<f64>() * (self.birth + self.death);
            if v < self.birth {
                let (dx, dy) = self.kernel.sample_offset(&mut self.rng);
                let ta = self.a.displace(x, dx, dy);
                let tb = self.b.displace(x, dx, dy);
                let grow = |l: &Lattice, t: Option<u32>| -> Option<u32> {
                    match t {
                        Some(t)
                            if l.state_at(x) == SiteState::One
                                && l.state_at(t) == SiteState::Vacant =>
                        {
                            Some(t)
                        }
                        _ => None,
                    }
                };
                let ga = grow(&self.a, ta);
                let gb = grow(&self.b, tb);
                match (ga, gb) {
                    (Some(p), Some(q)) if p == q => {
                        self.set_pair(p, Some(SiteState::One), Some(SiteState::One))
                    }
                    _ => {
                        if let Some(p) = ga {
                            self.set_pair(p, Some(SiteState::One), None);
                        }
                        if let Some(q) = gb {
                            self.set_pair(q, None, Some(SiteState::One));
                        }
                    }
                }
            } else {
                self.set_pair(x, Some(SiteState::Vacant), Some(SiteState::Vacant));
            }
        } else {
            let w = self.a.width() as i32;
            let h = self.a.height() as i32;
            let center = Site::new(self.rng.random_range(0..w), self.rng.random_range(0..h));
            for idx in self.a.block_indices(center, self.fire_width) {
                self.set_pair(idx, Some(SiteState::Vacant), Some(SiteState::Vacant));
            }
        }
    }

    /// Run to `t_max`, calling `on_sample` at each sample time with the state
    /// in force at that time.
    pub fn run_until<F>(&mut self, t_max: f64, sample_times: &[f64], mut on_sample: F)
    where
        F: FnMut(f64, &CoupledSimulation) -> Flow,
    {
        let mut times = sample_times.to_vec();
        times.sort_by(|a, b| a.total_cmp(b));
        let mut next = times
            .iter()
            .position(|&t| t >= self.time)
            .unwrap_or(times.len());
        loop {
            let (sites, fire) = self.rates();
            let total = sites + fire;
            let t_next = if total > 0.0 {
                self.time + self.rng.sample::<f64, _>(Exp1) / total
            } else {
                f64::INFINITY
            };
            while next < times.len() && times[next] < t_next && times[next] <= t_max {
                if on_sample(times[next], self) == Flow::Stop {
                    return;
                }
                next += 1;
            }
            if t_next > t_max {
                self.time = t_max;
                return;
            }
            self.time = t_next;
            self.apply(sites, total);
        }
    }
}

/// Run two single-species processes on shared randomness and report, at
/// each sample time, the number of sites where they agree.
pub fn coupled_run(
    a: Lattice,
    b: Lattice,
    params: &ProcessParams,
    t_max: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<CoupledOutcome> {
    let mut sim = CoupledSimulation::new(a, b, params, seed)?;
    let mut out = CoupledOutcome::default();
    sim.run_until(t_max, sample_times, |t, s| {
        out.samples.push(CoupledSample {
            t,
            n_a: s.a().count(SiteState::One),
            n_b: s.b().count(SiteState::One),
            agreement: s.agreement_count(),
            a_within_b: s.a_within_b(),
        });
        Flow::Continue
    });
    out.final_a = sim.a().clone();
    out.final_b = sim.b().clone();
    out.events = sim.events();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledSample {
    pub t: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub agreement: usize,
    pub a_within_b: bool,
}

#[derive(Debug, Clone)]
pub struct CoupledOutcome {
    pub samples: Vec<CoupledSample>,
    pub final_a: Lattice,
    pub final_b: Lattice,
    pub events: u64,
}

impl Default for CoupledOutcome {
    fn default() -> Self {
        let empty = Lattice::new(1, 1, Boundary::Torus).expect("1x1 lattice");
        CoupledOutcome {
            samples: Vec::new(),
            final_a: empty.clone(),
            final_b: empty,
            events: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelTable;

    fn one_type(beta: f64, delta: f64) -> ProcessParams {
        ProcessParams::new([beta, 0.0], [delta, 0.0])
    }

    #[test]
    fn total_rate_examples() {
        let mut l = Lattice::new(10, 10, Boundary::Torus).unwrap();
        for x in 0..3 {
            l.set(Site::new(x, 0), SiteState::One).unwrap();
        }
        let p = ProcessParams::new([2.0, 0.0], [1.0, 0.0]).with_fire(0.1, 3);
        assert!((total_rate(&l, &p) - 19.0).abs() < 1e-12);

        let empty = Lattice::new(10, 10, Boundary::Torus).unwrap();
        assert_eq!(
            total_rate(&empty, &ProcessParams::new([1.0, 1.0], [1.0, 1.0])),
            0.0
        );

        let mut l = Lattice::new(10, 10, Boundary::Torus).unwrap();
        l.set(Site::new(5, 5), SiteState::Two).unwrap();
        assert_eq!(
            total_rate(&l, &ProcessParams::new([0.0, 8.0], [0.0, 1.0])),
            9.0
        );
    }

    #[test]
    fn fire_halo_enlarges_center_domain() {
        let l = Lattice::new(11, 11, Boundary::TruncatedBox).unwrap();
        let mut p = ProcessParams::new([0.0; 2], [0.0; 2]).with_fire(1.0, 10);
        assert_eq!(total_rate(&l, &p), 121.0);
        p.fire_halo = true;
        // (F + 2L + 1)^2 with F = 10, L = 5
        assert_eq!(total_rate(&l, &p), 441.0);
    }

    #[test]
    fn single_death_clock() {
        let mut l = Lattice::new(4, 4, Boundary::Torus).unwrap();
        l.set(Site::new(1, 2), SiteState::One).unwrap();
        let mut sim = Simulation::new(l, Arc::new(one_type(0.0, 1.0)), 9).unwrap();
        let e = sim.step().unwrap();
        assert_eq!(e.kind, EventKind::Death1);
        assert_eq!(e.source, Site::new(1, 2));
        assert_eq!(sim.lattice().count(SiteState::One), 0);
        assert_eq!(sim.extinction()[0], Some(e.time));
        assert!(sim.step().is_none());
    }

    #[test]
    fn birth_onto_occupied_site_is_suppressed() {
        let mut l = Lattice::new(2, 1, Boundary::TruncatedBox).unwrap();
        l.set(Site::new(0, 0), SiteState::Two).unwrap();
        l.set(Site::new(1, 0), SiteState::Two).unwrap();
        let p = ProcessParams::new([0.0, 8.0], [0.0, 0.0]);
        let mut sim = Simulation::new(l, Arc::new(p), 5).unwrap();
        let mut hit_neighbour = 0;
        let mut last = 0.0;
        for _ in 0..200 {
            let e = sim.step().unwrap();
            assert_eq!(e.kind, EventKind::SuppressedBirth2);
            assert!(e.time > last);
            last = e.time;
            if let Some(t) = e.target {
                assert_ne!(t, e.source);
                hit_neighbour += 1;
            }
        }
        assert!(hit_neighbour > 0);
        assert_eq!(sim.lattice().count(SiteState::Two), 2);
        assert_eq!(sim.counts().suppressed[1], 200);
    }

    #[test]
    fn fire_only_dynamics() {
        let l = Lattice::filled(12, 12, Boundary::Torus, SiteState::Two).unwrap();
        let p = ProcessParams::new([0.0; 2], [0.0; 2]).with_fire(0.01, 2);
        let mut sim = Simulation::new(l, Arc::new(p), 1).unwrap();
        let e = sim.step().unwrap();
        assert_eq!(e.kind, EventKind::Fire);
        assert_eq!(sim.lattice().count(SiteState::Two), 144 - 9);
    }

    #[test]
    fn empty_start_stays_empty() {
        let l = Lattice::new(16, 16, Boundary::Torus).unwrap();
        let p = ProcessParams::new([3.0, 3.0], [1.0, 1.0]).with_fire(0.05, 4);
        let mut sim = Simulation::new(l, Arc::new(p), 2).unwrap();
        let tr = sim.run_until(StopRule::at(10.0), &ObserverPlan::every(0.5, 10.0));
        assert_eq!(tr.samples.len(), 21);
        assert!(tr.samples.iter().all(|s| s.n1 == 0 && s.n2 == 0));
        assert_eq!(tr.counts.births, [0, 0]);
        assert!(tr.counts.fires > 0);
        assert_eq!(tr.final_time, 10.0);
    }

    #[test]
    fn pure_death_extinction_time_is_exponential_mean() {
        let delta = 2.0;
        let n = 10_000;
        let mut sum = 0.0;
        for i in 0..n {
            let mut l = Lattice::new(3, 3, Boundary::Torus).unwrap();
            l.set(Site::new(1, 1), SiteState::One).unwrap();
            let mut sim = Simulation::new(
                l,
                Arc::new(one_type(0.0, delta)),
                crate::rng::replicate_seed(7, i),
            )
            .unwrap();
            let tr = sim.run_until(
                StopRule {
                    t_max: f64::INFINITY,
                    halt: Halt::Extinct(SiteState::One),
                },
                &ObserverPlan::default(),
            );
            sum += tr.extinction_time(SiteState::One).unwrap();
        }
        let mean = sum / n as f64;
        let sigma = (1.0 / delta) / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut l = Lattice::new(24, 24, Boundary::Torus).unwrap();
            for x in 5..15 {
                l.set(Site::new(x, 7), SiteState::One).unwrap();
                l.set(Site::new(x, 15), SiteState::Two).unwrap();
            }
            let k = KernelTable::power(1.0 / 16.0, 0.125, 2.0, 2).unwrap();
            let p = ProcessParams::new([3.0, 4.0], [1.0, 1.0])
                .with_fire(0.001, 4)
                .with_kernel(SiteState::One, k);
            let mut sim = Simulation::new(l, Arc::new(p), 42).unwrap();
            let plan = ObserverPlan {
                event_log_cap: Some(5000),
                ..ObserverPlan::every(0.25, 5.0)
            };
            sim.run_until(StopRule::at(5.0), &plan)
        };
        let a = run();
        let b = run();
        assert!(!a.event_log.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn counts_change_by_the_event() {
        struct Ledger(usize, usize);
        impl Monitor for Ledger {
            fn on_event(&mut self, _t: f64, tr: &Transition, l: &Lattice) -> Flow {
                let (n1, n2) = (l.count(SiteState::One), l.count(SiteState::Two));
                let (d1, d2) = (n1 as i64 - self.0 as i64, n2 as i64 - self.1 as i64);
                match *tr {
                    Transition::Birth {
                        species, success, ..
                    } => {
                        let up = success as i64;
                        if species == SiteState::One {
                            assert_eq!((d1, d2), (up, 0));
                        } else {
                            assert_eq!((d1, d2), (0, up));
                        }
                    }
                    Transition::Death { species, .. } => {
                        if species == SiteState::One {
                            assert_eq!((d1, d2), (-1, 0));
                        } else {
                            assert_eq!((d1, d2), (0, -1));
                        }
                    }
                    Transition::Fire { removed, .. } => {
                        assert_eq!(-(d1 + d2), removed as i64);
                    }
                    _ => unreachable!(),
                }
                self.0 = n1;
                self.1 = n2;
                Flow::Continue
            }
        }
        let mut l = Lattice::new(32, 32, Boundary::Torus).unwrap();
        for x in 0..32 {
            l.set(Site::new(x, 3), SiteState::One).unwrap();
            l.set(Site::new(x, 20), SiteState::Two).unwrap();
        }
        let p = ProcessParams::new([3.0, 3.0], [1.0, 1.0]).with_fire(0.002, 6);
        let mut sim = Simulation::new(l, Arc::new(p), 3).unwrap();
        let mut ledger = Ledger(32, 32);
        let tr = sim.run_with(StopRule::at(20.0), &ObserverPlan::default(), &mut ledger);
        assert!(tr.counts.fires > 0);
        assert!(sim.lattice().is_consistent());
    }

    #[test]
    fn samples_record_state_in_force() {
        let mut l = Lattice::new(8, 8, Boundary::Torus).unwrap();
        l.set(Site::new(0, 0), SiteState::One).unwrap();
        let mut sim = Simulation::new(l, Arc::new(one_type(0.0, 1.0)), 4).unwrap();
        let tr = sim.run_until(StopRule::at(50.0), &ObserverPlan::every(0.01, 50.0));
        let tau = tr.extinction_time(SiteState::One).unwrap();
        for s in &tr.samples {
            assert_eq!(s.n1, usize::from(s.t < tau));
        }
    }

    #[test]
    fn flip_environment_stationary_density() {
        let (b1, d1) = (1.0, 3.0);
        let l = Lattice::new(64, 64, Boundary::Torus).unwrap();
        let mut p = ProcessParams::new([b1, 0.0], [d1, 0.0]);
        p.dynamics = Dynamics::FlipEnvironment;
        let mut sim = Simulation::new(l, Arc::new(p), 8).unwrap();
        let times: Vec<f64> = (0..50).map(|i| 10.0 + i as f64 * 2.0).collect();
        let tr = sim.run_until(
            StopRule::at(110.0),
            &ObserverPlan {
                sample_times: times,
                ..Default::default()
            },
        );
        let n = 4096.0;
        let mean: f64 = tr.samples.iter().map(|s| s.n1 as f64 / n).sum::<f64>() / 50.0;
        let p_on = b1 / (b1 + d1);
        // samples 2 time units apart decorrelate by exp(-8)
        let sigma = (p_on * (1.0 - p_on) / (n * 50.0)).sqrt();
        assert!((mean - p_on).abs() < 3.0 * sigma, "{mean} vs {p_on}");
    }

    #[test]
    fn flip_environment_rejects_fire() {
        let l = Lattice::new(4, 4, Boundary::Torus).unwrap();
        let mut p = ProcessParams::new([1.0, 1.0], [1.0, 1.0]).with_fire(0.1, 2);
        p.dynamics = Dynamics::FlipEnvironment;
        assert!(Simulation::new(l, Arc::new(p), 0).is_err());
    }

    #[test]
    fn coupled_identical_starts_stay_identical() {
        let mut a = Lattice::new(20, 20, Boundary::Torus).unwrap();
        for x in 3..9 {
            a.set(Site::new(x, x), SiteState::One).unwrap();
        }
        let b = a.clone();
        let out = coupled_run(a, b, &one_type(2.5, 1.0), 10.0, &[0.0, 5.0, 10.0], 6).unwrap();
        assert_eq!(out.samples.len(), 3);
        for s in &out.samples {
            assert_eq!(s.agreement, 400);
        }
        assert_eq!(out.final_a.states(), out.final_b.states());
    }

    #[test]
    fn coupled_nested_starts_stay_nested() {
        for seed in 0..10 {
            let mut a = Lattice::new(24, 24, Boundary::Torus).unwrap();
            a.set(Site::new(12, 12), SiteState::One).unwrap();
            let b = Lattice::filled(24, 24, Boundary::Torus, SiteState::One).unwrap();
            let mut sim = CoupledSimulation::new(a, b, &one_type(3.0, 1.0), seed).unwrap();
            while sim.time() < 8.0 {
                if sim.step().is_none() {
                    break;
                }
                assert!(sim.a_within_b());
            }
            let nested = sim
                .a()
                .states()
                .iter()
                .zip(sim.b().states())
                .all(|(x, y)| *x != SiteState::One || *y == SiteState::One);
            assert!(nested);
        }
    }

    #[test]
    fn coupled_geometry_mismatch() {
        let a = Lattice::new(8, 8, Boundary::Torus).unwrap();
        let b = Lattice::new(8, 9, Boundary::Torus).unwrap();
        assert!(matches!(
            CoupledSimulation::new(a, b, &one_type(1.0, 1.0), 0),
            Err(crate::Error::Config(_))
        ));
    }
}
