//! Named process variants and the parameter conditions for coexistence.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Dynamics, ProcessParams, Simulation};
use crate::error::{config, Result};
use crate::kernels::KernelSpec;
use crate::lattice::{Boundary, Lattice, Site, SiteState};
use crate::rng::{rng_from_seed, splitmix64};

/// Full two-species parameters as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoTypeParams {
    pub beta1: f64,
    pub beta2: f64,
    pub delta1: f64,
    pub delta2: f64,
    #[serde(default)]
    pub delta0: f64,
    #[serde(default = "default_fire_width", rename = "F")]
    pub fire_width: u32,
    pub kernel1: KernelSpec,
    #[serde(default = "moore")]
    pub kernel2: KernelSpec,
}

fn default_fire_width() -> u32 {
    1
}

fn moore() -> KernelSpec {
    KernelSpec::Moore
}

impl TwoTypeParams {
    pub fn to_params(&self) -> Result<ProcessParams> {
        let p = ProcessParams {
            birth: [self.beta1, self.beta2],
            death: [self.delta1, self.delta2],
            fire_rate: self.delta0,
            fire_width: self.fire_width,
            kernels: [
                Arc::new(self.kernel1.build()?),
                Arc::new(self.kernel2.build()?),
            ],
            dynamics: Dynamics::Competition,
            fire_halo: false,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    /// Both species with births, deaths and fires.
    TwoTypeFire(TwoTypeParams),
    /// Type 1 replaced by independent per-site flips; type 2 unchanged.
    ZetaFlip {
        beta1: f64,
        delta1: f64,
        beta2: f64,
        delta2: f64,
        #[serde(default = "moore")]
        kernel2: KernelSpec,
    },
    /// Single-species contact process (particles are stored as type 1).
    Contact {
        beta: f64,
        delta: f64,
        #[serde(default = "moore")]
        kernel: KernelSpec,
    },
    /// Contact process without deaths.
    Richardson {
        beta: f64,
        #[serde(default = "moore")]
        kernel: KernelSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    #[default]
    Empty,
    Full {
        species: SiteState,
    },
    /// One particle at the center site.
    Single {
        species: SiteState,
    },
    /// Fully occupied square of half-width `half` around the center.
    Block {
        species: SiteState,
        half: u32,
    },
    /// Independent sites: type 1 with probability p1, type 2 with p2.
    Random {
        p1: f64,
        p2: f64,
    },
}

impl InitialConfig {
    fn validate(&self) -> Result<()> {
        match *self {
            InitialConfig::Full { species }
            | InitialConfig::Single { species }
            | InitialConfig::Block { species, .. }
                if species == SiteState::Vacant =>
            {
                Err(config("initial configuration needs an occupied species"))
            }
            InitialConfig::Random { p1, p2 } if !(p1 >= 0.0 && p2 >= 0.0 && p1 + p2 <= 1.0) => {
                Err(config(format!(
                    "initial densities must be >= 0 with sum <= 1, got {p1} and {p2}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Fill `lattice` (assumed vacant) with this configuration.
    pub fn apply<R: Rng + ?Sized>(&self, lattice: &mut Lattice, rng: &mut R) {
        let c = center(lattice);
        match *self {
            InitialConfig::Empty => {}
            InitialConfig::Full { species } => {
                for i in 0..lattice.len() as u32 {
                    lattice.set_index(i, species);
                }
            }
            InitialConfig::Single { species } => {
                lattice.set(c, species).expect("center is on the lattice");
            }
            InitialConfig::Block { species, half } => {
                let h = half as i32;
                for dy in -h..=h {
                    for dx in -h..=h {
                        if let Some(i) = lattice.resolve(c.offset(dx, dy)) {
                            lattice.set_index(i, species);
                        }
                    }
                }
            }
            InitialConfig::Random { p1, p2 } => {
                for i in 0..lattice.len() as u32 {
                    let u: f64 = rng.random();
                    if u < p1 {
                        lattice.set_index(i, SiteState::One);
                    } else if u < p1 + p2 {
                        lattice.set_index(i, SiteState::Two);
                    }
                }
            }
        }
    }
}

/// Grid site playing the role of the origin.
pub fn center(lattice: &Lattice) -> Site {
    Site::new((lattice.width() / 2) as i32, (lattice.height() / 2) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(flatten)]
    pub variant: Variant,
    /// Side of the torus when no window is given.
    #[serde(default = "default_size")]
    pub size: u32,
    /// Half-width L of a truncated box `[-L, L]^2`; replaces the torus.
    #[serde(default)]
    pub window: Option<u32>,
    #[serde(default)]
    pub initial: InitialConfig,
}

fn default_size() -> u32 {
    64
}

impl ProcessSpec {
    pub fn new(variant: Variant, size: u32, initial: InitialConfig) -> Self {
        ProcessSpec {
            variant,
            size,
            window: None,
            initial,
        }
    }

    pub fn windowed(mut self, half_width: u32) -> Self {
        self.window = Some(half_width);
        self
    }
}

/// A validated spec turned into engine parameters.
#[derive(Debug, Clone)]
pub struct Process {
    pub spec: ProcessSpec,
    pub params: Arc<ProcessParams>,
    /// The species whose survival is the object of study.
    pub focal: SiteState,
}

impl Process {
    pub fn width(&self) -> u32 {
        match self.spec.window {
            Some(l) => 2 * l + 1,
            None => self.spec.size,
        }
    }

    pub fn boundary(&self) -> Boundary {
        if self.spec.window.is_some() {
            Boundary::TruncatedBox
        } else {
            Boundary::Torus
        }
    }

    /// Initial lattice for the replicate with this seed.
    pub fn initial_lattice(&self, seed: u64) -> Lattice {
        let mut lattice =
            Lattice::new(self.width(), self.width(), self.boundary()).expect("validated size");
        let mut rng = rng_from_seed(splitmix64(seed ^ 0x1A17_1A1C_0AF1_6000));
        self.spec.initial.apply(&mut lattice, &mut rng);
        lattice
    }

    pub fn simulation(&self, seed: u64) -> Result<Simulation> {
        Simulation::new(self.initial_lattice(seed), self.params.clone(), seed)
    }
}

pub fn make_process(spec: &ProcessSpec) -> Result<Process> {
    if spec.window.is_none() && spec.size == 0 {
        return Err(config("lattice size must be >= 1"));
    }
    spec.initial.validate()?;
    let (params, focal) = match spec.variant {
        Variant::TwoTypeFire(p) => (p.to_params()?, SiteState::One),
        Variant::ZetaFlip {
            beta1,
            delta1,
            beta2,
            delta2,
            kernel2,
        } => {
            if !(beta1 > 0.0 && delta1 > 0.0) {
                return Err(config("ZetaFlip needs beta1 > 0 and delta1 > 0"));
            }
            let mut p = ProcessParams::new([beta1, beta2], [delta1, delta2])
                .with_kernel(SiteState::Two, kernel2.build()?);
            p.dynamics = Dynamics::FlipEnvironment;
            (p, SiteState::Two)
        }
        Variant::Contact {
            beta,
            delta,
            kernel,
        } => (
            ProcessParams::new([beta, 0.0], [delta, 0.0])
                .with_kernel(SiteState::One, kernel.build()?),
            SiteState::One,
        ),
        Variant::Richardson { beta, kernel } => (
            ProcessParams::new([beta, 0.0], [0.0, 0.0])
                .with_kernel(SiteState::One, kernel.build()?),
            SiteState::One,
        ),
    };
    params.validate()?;
    if matches!(
        spec.variant,
        Variant::Contact { .. } | Variant::Richardson { .. }
    ) {
        let uses_two = match spec.initial {
            InitialConfig::Full { species }
            | InitialConfig::Single { species }
            | InitialConfig::Block { species, .. } => species == SiteState::Two,
            InitialConfig::Random { p2, .. } => p2 > 0.0,
            InitialConfig::Empty => false,
        };
        if uses_two {
            return Err(config("single-species processes use species One"));
        }
    }
    Ok(Process {
        spec: *spec,
        params: Arc::new(params),
        focal,
    })
}

/// Both inequalities of the coexistence condition, evaluated at a given
/// estimate of the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lambda_c: f64,
    /// beta2 / (1 + beta1/delta1)
    pub type2_lhs: f64,
    /// delta2 * lambda_c
    pub type2_rhs: f64,
    pub type2_pass: bool,
    /// beta1 / delta1
    pub type1_lhs: f64,
    /// lambda_c
    pub type1_rhs: f64,
    pub type1_pass: bool,
    /// Effective birth rate of 2's against a fast-flipping environment,
    /// beta2 * delta1 / (beta1 + delta1).
    pub gamma: f64,
    pub pass: bool,
}

pub fn check_condition_1(
    beta1: f64,
    beta2: f64,
    delta1: f64,
    delta2: f64,
    lambda_c: f64,
) -> Result<ConditionReport> {
    if !(delta1 > 0.0) {
        return Err(config("delta1 must be positive"));
    }
    if !(lambda_c > 0.0) {
        return Err(config("lambda_c must be positive"));
    }
    let ratio = beta1 / delta1;
    let type2_lhs = beta2 / (1.0 + ratio);
    let type2_rhs = delta2 * lambda_c;
    let type2_pass = type2_lhs > type2_rhs;
    let type1_pass = ratio > lambda_c;
    Ok(ConditionReport {
        lambda_c,
        type2_lhs,
        type2_rhs,
        type2_pass,
        type1_lhs: ratio,
        type1_rhs: lambda_c,
        type1_pass,
        gamma: beta2 * delta1 / (beta1 + delta1),
        pass: type2_pass && type1_pass,
    })
}
