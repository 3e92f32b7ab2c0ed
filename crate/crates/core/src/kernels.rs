//! Radial dispersal kernels on Z^2 measured in the L-infinity norm.
//!
//! A kernel puts mass `c1` on each of the 8 sites at distance 1 and
//! `c2 * r^-rho` on each site at distance `1 < r <= M`. The ring at distance
//! `r` has exactly `8r` sites, so sampling is done in two stages: pick the
//! ring from its cumulative mass, then a uniform site on the ring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Allowed deviation of the total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Number of lattice sites at L-infinity distance exactly `r` from a point.
#[inline]
pub fn ring_size(r: u32) -> u64 {
    if r == 0 {
        1
    } else {
        8 * r as u64
    }
}

/// Offset of the `j`-th site (`0 <= j < 8r`) on the ring of radius `r`.
/// The two low bits of `j` pick the side, the rest the position on it.
#[inline]
pub fn ring_offset(r: i32, j: i32) -> (i32, i32) {
    let side = j & 3;
    let t = j >> 2;
    match side {
        0 => (-r + t, -r),
        1 => (r, -r + t),
        2 => (r - t, r),
        _ => (-r, r - t),
    }
}

/// The eight Moore neighbours in sampling order.
pub const MOORE: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// How a kernel is described in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Moore,
    Power {
        c1: f64,
        c2: f64,
        rho: f64,
        #[serde(rename = "M")]
        m: u32,
    },
    Weights {
        w_short: f64,
        w_long: f64,
        rho: f64,
        #[serde(rename = "M")]
        m: u32,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Result<KernelTable> {
        match *self {
            KernelSpec::Moore => Ok(KernelTable::moore()),
            KernelSpec::Power { c1, c2, rho, m } => KernelTable::power(c1, c2, rho, m),
            KernelSpec::Weights {
                w_short,
                w_long,
                rho,
                m,
            } => {
                let (c1, c2) = normalize_weights(w_short, w_long, rho, m)?;
                KernelTable::power(c1, c2, rho, m)
            }
        }
    }

    pub fn cutoff(&self) -> u32 {
        match *self {
            KernelSpec::Moore => 1,
            KernelSpec::Power { m, .. } | KernelSpec::Weights { m, .. } => m,
        }
    }

    /// Same kernel with cutoff `m`. Weight-based specs are renormalized;
    /// explicit coefficients cannot be, so a different cutoff is an error.
    pub fn with_cutoff(&self, m: u32) -> Result<KernelSpec> {
        match *self {
            KernelSpec::Weights {
                w_short,
                w_long,
                rho,
                ..
            } => Ok(KernelSpec::Weights {
                w_short,
                w_long,
                rho,
                m,
            }),
            spec if spec.cutoff() == m => Ok(spec),
            spec => Err(config(format!(
                "kernel cutoff must be {m}, got {}; give the kernel as weights to rescale it",
                spec.cutoff()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    c1: f64,
    c2: f64,
    rho: f64,
    cutoff: u32,
    /// Mass of ring r at index r - 1.
    shell_mass: Vec<f64>,
    /// Cumulative ring mass, last entry forced to exactly 1.
    shell_cdf: Vec<f64>,
}

impl KernelTable {
    /// Uniform kernel on the 8 nearest neighbours.
    pub fn moore() -> Self {
        KernelTable {
            c1: 0.125,
            c2: 0.0,
            rho: 0.0,
            cutoff: 1,
            shell_mass: vec![1.0],
            shell_cdf: vec![1.0],
        }
    }

    /// Truncated power-law kernel from explicit coefficients. The total
    /// mass must already be 1.
    pub fn power(c1: f64, c2: f64, rho: f64, cutoff: u32) -> Result<Self> {
        if cutoff == 0 {
            return Err(config("kernel cutoff M must be at least 1"));
        }
        if !(c1 > 0.0) {
            return Err(config(format!("kernel c1 must be positive, got {c1}")));
        }
        if cutoff > 1 && !(c2 > 0.0) {
            return Err(config(format!("kernel c2 must be positive, got {c2}")));
        }
        if !(rho < 3.0) || !rho.is_finite() {
            return Err(config(format!(
                "kernel exponent rho must be < 3, got {rho}"
            )));
        }
        let mut shell_mass = Vec::with_capacity(cutoff as usize);
        shell_mass.push(8.0 * c1);
        for r in 2..=cutoff {
            let r = r as f64;
            shell_mass.push(8.0 * r * c2 * r.powf(-rho));
        }
        let mass: f64 = shell_mass.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Normalization {
                mass,
                deficit: 1.0 - mass,
            });
        }
        let mut shell_cdf = Vec::with_capacity(shell_mass.len());
        let mut acc = 0.0;
        for m in &shell_mass {
            acc += m;
            shell_cdf.push(acc);
        }
        *shell_cdf.last_mut().expect("at least one shell") = 1.0;
        Ok(KernelTable {
            c1,
            c2: if cutoff == 1 { 0.0 } else { c2 },
            rho,
            cutoff,
            shell_mass,
            shell_cdf,
        })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn is_moore(&self) -> bool {
        self.cutoff == 1
    }

    pub fn shell_masses(&self) -> &[f64] {
        &self.shell_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.shell_mass.iter().sum()
    }

    /// p(x, x + (dx, dy)).
    pub fn mass_at(&self, dx: i32, dy: i32) -> f64 {
        let r = dx.unsigned_abs().max(dy.unsigned_abs());
        if r == 0 || r > self.cutoff {
            0.0
        } else {
            self.shell_mass[r as usize - 1] / ring_size(r) as f64
        }
    }

    /// Draw a displacement with the kernel's law.
    #[inline]
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> (i32, i32) {
        if self.cutoff == 1 {
            return MOORE[rng.random_range(0..8usize)];
        }
        let u: f64 = rng.random();
        let shell = self
            .shell_cdf
            .partition_point(|&c| c <= u)
            .min(self.shell_cdf.len() - 1);
        let r = shell as i32 + 1;
        ring_offset(r, rng.random_range(0..8 * r))
    }

    /// Shell table as CSV: `radius,sites,mass,cumulative`.
    pub fn shell_csv(&self) -> String {
        let mut out = String::from("radius,sites,mass,cumulative\n");
        let mut acc = 0.0;
        for (i, m) in self.shell_mass.iter().enumerate() {
            acc += m;
            let r = i as u32 + 1;
            out.push_str(&format!("{r},{},{m:.17e},{acc:.17e}\n", ring_size(r)));
        }
        out
    }
}

/// Sum over rings 2..=M of `8 r^(1 - rho)`.
pub fn long_range_partition(rho: f64, cutoff: u32) -> f64 {
    (2..=cutoff).map(|r| 8.0 * (r as f64).powf(1.0 - rho)).sum()
}

/// Coefficients `(c1, c2)` giving short-range mass `w_short` and
/// long-range mass `w_long`.
pub fn normalize_weights(w_short: f64, w_long: f64, rho: f64, cutoff: u32) -> Result<(f64, f64)> {
    if !(w_short > 0.0) || !(w_long > 0.0) {
        return Err(config(format!(
            "kernel weights must both be positive, got w_short={w_short}, w_long={w_long}"
        )));
    }
    if (w_short + w_long - 1.0).abs() > MASS_TOLERANCE {
        return Err(config(format!(
            "kernel weights must sum to 1, got {}",
            w_short + w_long
        )));
    }
    if cutoff < 2 {
        return Err(config("long-range weight needs cutoff M >= 2"));
    }
    if !(rho < 3.0) {
        return Err(config(format!(
            "kernel exponent rho must be < 3, got {rho}"
        )));
    }
    Ok((w_short / 8.0, w_long / long_range_partition(rho, cutoff)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;
    use std::collections::HashSet;

    /// Mass by explicit enumeration of every offset in the (2M+1)^2 square.
    fn enumerated_mass(c1: f64, c2: f64, rho: f64, m: i32) -> f64 {
        let mut total = 0.0;
        for dx in -m..=m {
            for dy in -m..=m {
                let r = dx.abs().max(dy.abs());
                if r == 1 {
                    total += c1;
                } else if r > 1 {
                    total += c2 * (r as f64).powf(-rho);
                }
            }
        }
        total
    }

    #[test]
    fn moore_masses() {
        let k = KernelTable::moore();
        assert_eq!(k.mass_at(1, 0), 0.125);
        assert_eq!(k.mass_at(-1, -1), 0.125);
        assert_eq!(k.mass_at(0, 0), 0.0);
        assert_eq!(k.mass_at(2, 0), 0.0);
        assert_eq!(k.total_mass(), 1.0);
    }

    #[test]
    fn degenerate_power_kernel_is_moore() {
        let k = KernelTable::power(0.125, 0.0, 2.0, 1).unwrap();
        assert_eq!(k.shell_masses(), &[1.0]);
        assert_eq!(k.mass_at(1, 1), 0.125);
    }

    #[test]
    fn power_kernel_normalization() {
        assert!((enumerated_mass(1.0 / 16.0, 0.125, 2.0, 2) - 1.0).abs() < 1e-15);
        let k = KernelTable::power(1.0 / 16.0, 0.125, 2.0, 2).unwrap();
        assert!((k.shell_masses()[0] - 0.5).abs() < 1e-15);
        assert!((k.shell_masses()[1] - 0.5).abs() < 1e-15);

        let bad = enumerated_mass(0.125, 0.125, 2.0, 2);
        assert!((bad - 1.5).abs() < 1e-15);
        match KernelTable::power(0.125, 0.125, 2.0, 2) {
            Err(Error::Normalization { mass, deficit }) => {
                assert!((mass - 1.5).abs() < 1e-12);
                assert!((deficit + 0.5).abs() < 1e-12);
            }
            other => panic!("expected normalization error, got {other:?}"),
        }
    }

    #[test]
    fn power_kernel_rejects_bad_parameters() {
        assert!(KernelTable::power(0.0, 0.1, 2.0, 2).is_err());
        assert!(KernelTable::power(0.1, 0.0, 2.0, 2).is_err());
        assert!(KernelTable::power(0.1, 0.1, 3.0, 2).is_err());
        assert!(KernelTable::power(0.1, 0.1, 2.0, 0).is_err());
    }

    #[test]
    fn weights_examples() {
        let (c1, c2) = normalize_weights(0.5, 0.5, 2.0, 2).unwrap();
        assert!((c1 - 1.0 / 16.0).abs() < 1e-15);
        assert!((c2 - 0.125).abs() < 1e-15);

        // Z = 8 * 2^-1 + 8 * 3^-1, computed from the rings directly
        let z: f64 = (2..=3)
            .map(|r| ring_size(r) as f64 * (r as f64).powi(-2))
            .sum();
        let (_, c2) = normalize_weights(0.5, 0.5, 2.0, 3).unwrap();
        assert!((c2 - 0.5 / z).abs() < 1e-15);
        assert!((c2 - 0.075).abs() < 1e-12);
        assert!((enumerated_mass(1.0 / 16.0, c2, 2.0, 3) - 1.0).abs() < 1e-12);

        assert!(matches!(
            normalize_weights(1.0, 0.0, 2.0, 4),
            Err(Error::Config(_))
        ));
        assert!(normalize_weights(0.5, 0.6, 2.0, 4).is_err());
        assert!(normalize_weights(0.5, 0.5, 2.0, 1).is_err());
    }

    #[test]
    fn negative_exponent_allowed() {
        let spec = KernelSpec::Weights {
            w_short: 0.3,
            w_long: 0.7,
            rho: -1.5,
            m: 40,
        };
        let k = spec.build().unwrap();
        assert!((k.total_mass() - 1.0).abs() < MASS_TOLERANCE);
    }

    #[test]
    fn ring_population_is_8r() {
        for r in 1..=64i32 {
            let mut count = 0u64;
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx.abs().max(dy.abs()) == r {
                        count += 1;
                    }
                }
            }
            assert_eq!(count, ring_size(r as u32));
            let offsets: HashSet<_> = (0..8 * r).map(|j| ring_offset(r, j)).collect();
            assert_eq!(offsets.len() as u64, count);
            assert!(offsets.iter().all(|&(dx, dy)| dx.abs().max(dy.abs()) == r));
        }
    }

    #[test]
    fn moore_sampling_uniform_over_neighbours() {
        let k = KernelTable::moore();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let off = k.sample_offset(&mut rng);
            assert_ne!(off, (0, 0));
            *counts.entry(off).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let sigma = (n as f64 * 0.125 * 0.875).sqrt();
        for &c in counts.values() {
            assert!((c as f64 - n as f64 * 0.125).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn power_sampling_shell_one_frequency() {
        let k = KernelTable::power(1.0 / 16.0, 0.125, 2.0, 2).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let n = 100_000;
        let mut shell1 = 0;
        for _ in 0..n {
            let (dx, dy) = k.sample_offset(&mut rng);
            let r = dx.abs().max(dy.abs());
            assert!((1..=2).contains(&r));
            if r == 1 {
                shell1 += 1;
            }
        }
        let p = 0.5;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((shell1 as f64 - n as f64 * p).abs() < 5.0 * sigma);
    }

    #[test]
    fn shell_csv_has_one_row_per_ring() {
        let k = KernelSpec::Weights {
            w_short: 0.5,
            w_long: 0.5,
            rho: 2.0,
            m: 5,
        }
        .build()
        .unwrap();
        let csv = k.shell_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("radius,sites,mass,cumulative"));
    }
}
