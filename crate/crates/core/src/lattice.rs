//! Finite square lattice of site states with O(1) uniform sampling of the
//! occupied sites of each type.
//!
//! Sites are stored row-major; site `(x, y)` lives at index `y * width + x`.
//! Each species keeps a dense registry of the indices it occupies together
//! with an inverse position map, so insert, delete and uniform sampling are
//! all constant time.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SiteState {
    Vacant = 0,
    One = 1,
    Two = 2,
}

impl SiteState {
    pub fn as_char(self) -> char {
        match self {
            SiteState::Vacant => '.',
            SiteState::One => '1',
            SiteState::Two => '2',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(SiteState::Vacant),
            '1' => Some(SiteState::One),
            '2' => Some(SiteState::Two),
            _ => None,
        }
    }

    /// Registry slot of an occupied state.
    #[inline]
    fn slot(self) -> Option<usize> {
        match self {
            SiteState::Vacant => None,
            SiteState::One => Some(0),
            SiteState::Two => Some(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Periodic in both directions.
    #[default]
    Torus,
    /// Hard walls: anything sent outside the grid is discarded.
    TruncatedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Site::new(self.x + dx, self.y + dy)
    }

    pub fn linf(self, other: Site) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

const ABSENT: u32 = u32::MAX;

/// Exact division and remainder of 32-bit values by a fixed divisor using a
/// precomputed 64-bit reciprocal (Lemire, Kaser and Kurz).
#[derive(Debug, Clone, Copy)]
struct FastDiv {
    d: u32,
    m: u64,
}

impl FastDiv {
    fn new(d: u32) -> Self {
        FastDiv {
            d,
            m: (u64::MAX / d as u64).wrapping_add(1),
        }
    }

    #[inline]
    fn div(self, a: u32) -> u32 {
        if self.d == 1 {
            return a;
        }
        ((self.m as u128 * a as u128) >> 64) as u32
    }

    #[inline]
    fn rem(self, a: u32) -> u32 {
        let low = self.m.wrapping_mul(a as u64);
        ((low as u128 * self.d as u128) >> 64) as u32
    }
}

/// Dense index set with swap-remove deletion.
#[derive(Debug, Clone)]
pub struct SiteSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl SiteSet {
    pub fn with_universe(n: usize) -> Self {
        SiteSet {
            items: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    #[inline]
    pub fn contains(&self, idx: u32) -> bool {
        self.pos[idx as usize] != ABSENT
    }

    #[inline]
    pub fn insert(&mut self, idx: u32) -> bool {
        if self.contains(idx) {
            return false;
        }
        self.pos[idx as usize] = self.items.len() as u32;
        self.items.push(idx);
        true
    }

    #[inline]
    pub fn remove(&mut self, idx: u32) -> bool {
        let p = self.pos[idx as usize];
        if p == ABSENT {
            return false;
        }
        let last = self.items.pop().expect("registry non-empty");
        if last != idx {
            self.items[p as usize] = last;
            self.pos[last as usize] = p;
        }
        self.pos[idx as usize] = ABSENT;
        true
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u32> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items[rng.random_range(0..self.items.len())])
        }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.items
    }

    pub fn clear(&mut self) {
        for &i in &self.items {
            self.pos[i as usize] = ABSENT;
        }
        self.items.clear();
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    width: u32,
    height: u32,
    boundary: Boundary,
    width_div: FastDiv,
    cells: Vec<SiteState>,
    occupied: [SiteSet; 2],
    vacant: Option<SiteSet>,
}

impl Lattice {
    /// All-vacant lattice.
    pub fn new(width: u32, height: u32, boundary: Boundary) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(config(format!(
                "lattice dimensions must be positive, got {width}x{height}"
            )));
        }
        let n = width as usize * height as usize;
        if n >= ABSENT as usize {
            return Err(config("lattice too large for 32-bit site indices"));
        }
        Ok(Lattice {
            width,
            height,
            boundary,
            width_div: FastDiv::new(width),
            cells: vec![SiteState::Vacant; n],
            occupied: [SiteSet::with_universe(n), SiteSet::with_universe(n)],
            vacant: None,
        })
    }

    /// Lattice with every site set from `initial` (row-major, `width * height` entries).
    pub fn from_states(
        width: u32,
        height: u32,
        boundary: Boundary,
        initial: &[SiteState],
    ) -> Result<Self> {
        let mut lattice = Lattice::new(width, height, boundary)?;
        if initial.len() != lattice.len() {
            return Err(config(format!(
                "initial configuration has {} sites, lattice has {}",
                initial.len(),
                lattice.len()
            )));
        }
        for (i, &s) in initial.iter().enumerate() {
            lattice.set_index(i as u32, s);
        }
        Ok(lattice)
    }

    pub fn filled(width: u32, height: u32, boundary: Boundary, state: SiteState) -> Result<Self> {
        let n = width as usize * height as usize;
        Lattice::from_states(width, height, boundary, &vec![state; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Turn on the registry of vacant sites (needed by dynamics that act on
    /// vacant sites directly).
    pub fn track_vacant(&mut self) {
        if self.vacant.is_some() {
            return;
        }
        let mut set = SiteSet::with_universe(self.len());
        for (i, &s) in self.cells.iter().enumerate() {
            if s == SiteState::Vacant {
                set.insert(i as u32);
            }
        }
        self.vacant = Some(set);
    }

    pub fn tracks_vacant(&self) -> bool {
        self.vacant.is_some()
    }

    #[inline]
    pub fn count(&self, state: SiteState) -> usize {
        match state.slot() {
            Some(k) => self.occupied[k].len(),
            None => self.len() - self.occupied[0].len() - self.occupied[1].len(),
        }
    }

    pub fn registry(&self, state: SiteState) -> Option<&SiteSet> {
        match state.slot() {
            Some(k) => Some(&self.occupied[k]),
            None => self.vacant.as_ref(),
        }
    }

    #[inline]
    pub fn index_of(&self, site: Site) -> Option<u32> {
        if site.x < 0 || site.y < 0 || site.x as u32 >= self.width || site.y as u32 >= self.height {
            None
        } else {
            Some(site.y as u32 * self.width + site.x as u32)
        }
    }

    #[inline]
    pub fn site_of(&self, idx: u32) -> Site {
        Site::new(
            self.width_div.rem(idx) as i32,
            self.width_div.div(idx) as i32,
        )
    }

    /// Map an arbitrary integer coordinate onto the grid: wrapped on the
    /// torus, `None` outside a truncated box.
    #[inline]
    pub fn resolve(&self, site: Site) -> Option<u32> {
        match self.boundary {
            Boundary::Torus => {
                let x = site.x.rem_euclid(self.width as i32) as u32;
                let y = site.y.rem_euclid(self.height as i32) as u32;
                Some(y * self.width + x)
            }
            Boundary::TruncatedBox => self.index_of(site),
        }
    }

    /// Target of a displacement from a grid index; hot path of the engine.
    #[inline]
    pub fn displace(&self, idx: u32, dx: i32, dy: i32) -> Option<u32> {
        let x = self.width_div.rem(idx) as i32 + dx;
        let y = self.width_div.div(idx) as i32 + dy;
        match self.boundary {
            Boundary::Torus => {
                let w = self.width as i32;
                let h = self.height as i32;
                let x = if (0..w).contains(&x) {
                    x
                } else {
                    x.rem_euclid(w)
                };
                let y = if (0..h).contains(&y) {
                    y
                } else {
                    y.rem_euclid(h)
                };
                Some(y as u32 * self.width + x as u32)
            }
            Boundary::TruncatedBox => {
                if x < 0 || y < 0 || x as u32 >= self.width || y as u32 >= self.height {
                    None
                } else {
                    Some(y as u32 * self.width + x as u32)
                }
            }
        }
    }

    #[inline]
    pub fn state_at(&self, idx: u32) -> SiteState {
        self.cells[idx as usize]
    }

    pub fn get(&self, site: Site) -> Option<SiteState> {
        self.resolve(site).map(|i| self.cells[i as usize])
    }

    pub fn states(&self) -> &[SiteState] {
        &self.cells
    }

    /// Set one site, keeping the registries in step. Returns the previous state.
    #[inline]
    pub fn set_index(&mut self, idx: u32, state: SiteState) -> SiteState {
        let old = self.cells[idx as usize];
        if old == state {
            return old;
        }
        match old.slot() {
            Some(k) => {
                self.occupied[k].remove(idx);
            }
            None => {
                if let Some(v) = self.vacant.as_mut() {
                    v.remove(idx);
                }
            }
        }
        match state.slot() {
            Some(k) => {
                self.occupied[k].insert(idx);
            }
            None => {
                if let Some(v) = self.vacant.as_mut() {
                    v.insert(idx);
                }
            }
        }
        self.cells[idx as usize] = state;
        old
    }

    pub fn set(&mut self, site: Site, state: SiteState) -> Result<SiteState> {
        let idx = self
            .resolve(site)
            .ok_or_else(|| Error::Precondition(format!("site {site} is outside the box")))?;
        Ok(self.set_index(idx, state))
    }

    /// Uniformly random site in the given state.
    pub fn sample_occupied<R: Rng + ?Sized>(&self, state: SiteState, rng: &mut R) -> Result<Site> {
        let reg = self.registry(state).ok_or_else(|| {
            Error::Precondition("vacant sites are not tracked on this lattice".into())
        })?;
        reg.sample(rng)
            .map(|i| self.site_of(i))
            .ok_or_else(|| Error::Precondition(format!("no site in state {state:?}")))
    }

    /// Effective block radius for a fire of width `f`.
    pub fn block_radius(f: u32) -> i32 {
        (f / 2) as i32
    }

    /// Side of the square cleared by a fire of width `f`.
    pub fn block_side(f: u32) -> u32 {
        2 * (f / 2) + 1
    }

    /// Column (or row) indices covered by `[c - r, c + r]` along an axis of
    /// length `len`, wrapped or clipped according to the boundary.
    fn axis_span(&self, c: i32, r: i32, len: u32, out: &mut Vec<u32>) {
        out.clear();
        let len_i = len as i32;
        match self.boundary {
            Boundary::Torus => {
                if 2 * r + 1 >= len_i {
                    out.extend(0..len);
                } else {
                    out.extend((c - r..=c + r).map(|v| v.rem_euclid(len_i) as u32));
                }
            }
            Boundary::TruncatedBox => {
                let lo = (c - r).max(0);
                let hi = (c + r).min(len_i - 1);
                if lo <= hi {
                    out.extend(lo as u32..=hi as u32);
                }
            }
        }
    }

    /// Vacate every site within L-infinity distance `floor(f/2)` of `center`.
    /// The center may lie outside a truncated box; the block is clipped.
    /// Returns the number of occupied sites removed.
    pub fn clear_block(&mut self, center: Site, f: u32) -> usize {
        let r = Lattice::block_radius(f);
        let mut xs = Vec::with_capacity((2 * r + 1) as usize);
        let mut ys = Vec::with_capacity((2 * r + 1) as usize);
        self.axis_span(center.x, r, self.width, &mut xs);
        self.axis_span(center.y, r, self.height, &mut ys);
        let mut removed = 0;
        for &y in &ys {
            let row = y * self.width;
            for &x in &xs {
                let idx = row + x;
                if self.cells[idx as usize] != SiteState::Vacant {
                    self.set_index(idx, SiteState::Vacant);
                    removed += 1;
                }
            }
        }
        removed
    }

    /// Grid indices that `clear_block(center, f)` would touch.
    pub fn block_indices(&self, center: Site, f: u32) -> Vec<u32> {
        let r = Lattice::block_radius(f);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        self.axis_span(center.x, r, self.width, &mut xs);
        self.axis_span(center.y, r, self.height, &mut ys);
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
            .map(|(y, x)| y * self.width + x)
            .collect()
    }

    /// Plain-text rendering: one line per row (y = 0 first), `.`/`1`/`2`.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() + self.height as usize);
        for row in self.cells.chunks(self.width as usize) {
            s.extend(row.iter().map(|c| c.as_char()));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, boundary: Boundary) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let height = rows.len() as u32;
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0) as u32;
        let mut states = Vec::with_capacity(width as usize * height as usize);
        for (j, row) in rows.iter().enumerate() {
            if row.chars().count() as u32 != width {
                return Err(config(format!("snapshot row {j} has the wrong length")));
            }
            for c in row.chars() {
                states.push(
                    SiteState::from_char(c)
                        .ok_or_else(|| config(format!("bad snapshot character {c:?}")))?,
                );
            }
        }
        Lattice::from_states(width, height, boundary, &states)
    }

    /// Check that every registry agrees with the grid.
    pub fn is_consistent(&self) -> bool {
        for (k, state) in [SiteState::One, SiteState::Two].into_iter().enumerate() {
            let expected = self.cells.iter().filter(|&&c| c == state).count();
            if expected != self.occupied[k].len() {
                return false;
            }
            if !self.occupied[k]
                .as_slice()
                .iter()
                .all(|&i| self.cells[i as usize] == state)
            {
                return false;
            }
        }
        if let Some(v) = &self.vacant {
            let expected = self.count(SiteState::Vacant);
            if v.len() != expected
                || !v
                    .as_slice()
                    .iter()
                    .all(|&i| self.cells[i as usize] == SiteState::Vacant)
            {
                return false;
            }
        }
        true
    }
}

/// Metadata written next to a text snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub width: u32,
    pub height: u32,
    pub boundary: Boundary,
    pub time: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn fast_division_is_exact() {
        for d in [1u32, 2, 3, 7, 64, 100, 511, 512, 513, 1920, 65_535] {
            let f = FastDiv::new(d);
            for a in (0..200_000u32).chain([u32::MAX - 1, u32::MAX / 3, 4_000_000_000]) {
                assert_eq!(f.div(a), a / d, "{a}/{d}");
                assert_eq!(f.rem(a), a % d, "{a}%{d}");
            }
        }
    }

    #[test]
    fn new_lattice_counts() {
        let l = Lattice::new(3, 3, Boundary::Torus).unwrap();
        assert_eq!(l.count(SiteState::One), 0);
        assert_eq!(l.count(SiteState::Two), 0);

        let l = Lattice::filled(3, 3, Boundary::Torus, SiteState::One).unwrap();
        assert_eq!(l.count(SiteState::One), 9);
        assert_eq!(l.count(SiteState::Two), 0);

        let mut l = Lattice::new(5, 5, Boundary::TruncatedBox).unwrap();
        l.set(Site::new(2, 2), SiteState::One).unwrap();
        assert_eq!(l.count(SiteState::One), 1);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Lattice::new(0, 3, Boundary::Torus),
            Err(Error::Config(_))
        ));
        assert!(Lattice::new(3, 0, Boundary::TruncatedBox).is_err());
    }

    #[test]
    fn sample_singleton_and_empty() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let mut l = Lattice::new(4, 4, Boundary::Torus).unwrap();
        l.set(Site::new(3, 1), SiteState::Two).unwrap();
        for _ in 0..20 {
            assert_eq!(
                l.sample_occupied(SiteState::Two, &mut rng).unwrap(),
                Site::new(3, 1)
            );
        }
        assert!(matches!(
            l.sample_occupied(SiteState::One, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn clear_block_sizes() {
        let mut l = Lattice::filled(10, 10, Boundary::Torus, SiteState::Two).unwrap();
        assert_eq!(l.clear_block(Site::new(5, 5), 2), 9);
        let mut l = Lattice::filled(10, 10, Boundary::Torus, SiteState::One).unwrap();
        assert_eq!(l.clear_block(Site::new(0, 0), 4), 25);
        assert_eq!(l.count(SiteState::One), 75);
        // Box corner: clipped to 3x3.
        let mut l = Lattice::filled(10, 10, Boundary::TruncatedBox, SiteState::One).unwrap();
        assert_eq!(l.clear_block(Site::new(0, 0), 4), 9);
        // Center outside the box still clips.
        let mut l = Lattice::filled(10, 10, Boundary::TruncatedBox, SiteState::One).unwrap();
        assert_eq!(l.clear_block(Site::new(-2, 5), 4), 5);
        assert!(l.is_consistent());
    }

    #[test]
    fn clear_block_larger_than_torus() {
        let mut l = Lattice::filled(4, 4, Boundary::Torus, SiteState::One).unwrap();
        assert_eq!(l.clear_block(Site::new(1, 1), 20), 16);
        assert!(l.is_consistent());
    }

    #[test]
    fn clipped_corner_matches_enumeration() {
        // brute-force enumeration of the block against the box
        for (cx, cy, f) in [(0i32, 0i32, 4u32), (9, 0, 6), (4, 9, 3), (-1, -1, 4)] {
            let mut l = Lattice::filled(10, 10, Boundary::TruncatedBox, SiteState::One).unwrap();
            let r = (f / 2) as i32;
            let mut expect = 0;
            for y in 0..10 {
                for x in 0..10 {
                    if (x - cx).abs() <= r && (y - cy).abs() <= r {
                        expect += 1;
                    }
                }
            }
            assert_eq!(l.clear_block(Site::new(cx, cy), f), expect);
        }
    }

    #[test]
    fn uniform_sampling_chi_square() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let mut l = Lattice::new(8, 8, Boundary::Torus).unwrap();
        let sites = [
            Site::new(0, 0),
            Site::new(3, 4),
            Site::new(7, 7),
            Site::new(2, 6),
        ];
        for s in sites {
            l.set(s, SiteState::One).unwrap();
        }
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let s = l.sample_occupied(SiteState::One, &mut rng).unwrap();
            counts[sites.iter().position(|&t| t == s).unwrap()] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square(3) upper 1e-3 quantile
        assert!(chi2 < 16.266, "chi2 = {chi2}");
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 5.0 * sigma);
        }
    }

    #[test]
    fn text_round_trip() {
        let text = "..1\n2.1\n...\n";
        let l = Lattice::from_text(text, Boundary::Torus).unwrap();
        assert_eq!(l.count(SiteState::One), 2);
        assert_eq!(l.count(SiteState::Two), 1);
        assert_eq!(l.get(Site::new(0, 1)), Some(SiteState::Two));
        assert_eq!(l.to_text(), text);
        assert!(Lattice::from_text("..x\n", Boundary::Torus).is_err());
    }

    #[test]
    fn vacancy_registry_follows_grid() {
        let mut l = Lattice::new(5, 5, Boundary::Torus).unwrap();
        l.set(Site::new(1, 1), SiteState::One).unwrap();
        l.track_vacant();
        assert_eq!(l.registry(SiteState::Vacant).unwrap().len(), 24);
        l.set(Site::new(2, 2), SiteState::Two).unwrap();
        l.clear_block(Site::new(1, 1), 2);
        assert_eq!(l.registry(SiteState::Vacant).unwrap().len(), 25);
        assert!(l.is_consistent());
    }

    fn state_strategy() -> impl Strategy<Value = SiteState> {
        prop_oneof![
            Just(SiteState::Vacant),
            Just(SiteState::One),
            Just(SiteState::Two)
        ]
    }

    #[derive(Debug, Clone)]
    enum Op {
        Set(i32, i32, SiteState),
        Clear(i32, i32, u32),
    }

    fn op_strategy() -> impl Strategy<Value = Op> {
        prop_oneof![
            (-2..9i32, -2..9i32, state_strategy()).prop_map(|(x, y, s)| Op::Set(x, y, s)),
            (-3..10i32, -3..10i32, 1..6u32).prop_map(|(x, y, f)| Op::Clear(x, y, f)),
        ]
    }

    proptest! {
        #[test]
        fn registries_consistent_after_replay(
            torus in any::<bool>(),
            ops in prop::collection::vec(op_strategy(), 0..60),
        ) {
            let boundary = if torus { Boundary::Torus } else { Boundary::TruncatedBox };
            let mut l = Lattice::new(7, 6, boundary).unwrap();
            l.track_vacant();
            for op in ops {
                match op {
                    Op::Set(x, y, s) => { let _ = l.set(Site::new(x, y), s); }
                    Op::Clear(x, y, f) => { l.clear_block(Site::new(x, y), f); }
                }
                prop_assert!(l.is_consistent());
            }
        }

        #[test]
        fn clear_block_idempotent(
            cells in prop::collection::vec(state_strategy(), 64),
            cx in -2..10i32, cy in -2..10i32, f in 1..7u32, torus in any::<bool>(),
        ) {
            let boundary = if torus { Boundary::Torus } else { Boundary::TruncatedBox };
            let mut once = Lattice::from_states(8, 8, boundary, &cells).unwrap();
            once.clear_block(Site::new(cx, cy), f);
            let mut twice = once.clone();
            prop_assert_eq!(twice.clear_block(Site::new(cx, cy), f), 0);
            prop_assert_eq!(once.states(), twice.states());
        }

        #[test]
        fn torus_full_block_removes_side_squared(f in 1..12u32, cx in 0..32i32, cy in 0..32i32) {
            let mut l = Lattice::filled(32, 32, Boundary::Torus, SiteState::One).unwrap();
            let side = Lattice::block_side(f) as usize;
            prop_assert_eq!(l.clear_block(Site::new(cx, cy), f), side * side);
        }
    }
}
