//! Orthogonal pilot sets and autonomous pilot selection.
//!
//! Two families are built on the same pilot overhead:
//!
//! * ESOP: every pilot RE of a region is its own pilot, carrying a single non-zero
//!   value. Pilots are told apart purely by position.
//! * TOP: a DMRS-like comb. Six frequency combs (CDM groups) use the adjacent
//!   subcarrier pair `{2g, 2g+1}` of every PRB. With one region the pair is spread
//!   over both pilot symbols by four length-4 Walsh codes (24 pilots); with two
//!   regions each region spreads the pair with two length-2 codes (12 pilots).
//!
//! Per-RE pilot amplitude is `sqrt(pilot_energy)`, the same energy as a data symbol
//! when `pilot_energy = 1`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{GridConfig, GridCoord, SUBCARRIERS_PER_PRB};

const CDM_GROUPS: usize = 6;

const WALSH4: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];
const WALSH2: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, -1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PilotScheme {
    Esop,
    Top,
}

impl PilotScheme {
    pub fn name(self) -> &'static str {
        match self {
            PilotScheme::Esop => "esop",
            PilotScheme::Top => "top",
        }
    }
}

impl std::fmt::Display for PilotScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One non-zero RE of a pilot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotEntry {
    /// Column of this RE in the region's received pilot matrix.
    pub re: usize,
    pub coord: GridCoord,
    pub value: Complex64,
    /// Despreading block (PRB for TOP, always 0 for ESOP).
    pub block: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotPattern {
    pub id: usize,
    pub region: usize,
    pub entries: Vec<PilotEntry>,
    pub n_blocks: usize,
}

impl PilotPattern {
    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|e| e.value.norm_sqr()).sum()
    }

    /// Entries of despreading block `b`.
    pub fn block(&self, b: usize) -> impl Iterator<Item = &PilotEntry> {
        self.entries.iter().filter(move |e| e.block == b)
    }

    /// Centre subcarrier of block `b`.
    pub fn block_center(&self, b: usize) -> f64 {
        let (sum, n) = self
            .block(b)
            .fold((0.0, 0usize), |(s, n), e| (s + e.coord.subcarrier as f64, n + 1));
        sum / n as f64
    }

    /// Inner product with `other` over the shared pilot REs.
    pub fn inner(&self, other: &PilotPattern) -> Complex64 {
        if self.region != other.region {
            return Complex64::new(0.0, 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for a in &self.entries {
            for b in other.entries.iter().filter(|b| b.re == a.re) {
                acc += a.value * b.value.conj();
            }
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct PilotSet {
    scheme: PilotScheme,
    regions: Vec<Vec<PilotPattern>>,
    pilot_energy: f64,
}

impl PilotSet {
    pub fn scheme(&self) -> PilotScheme {
        self.scheme
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_per_region(&self) -> usize {
        self.regions[0].len()
    }

    pub fn pilot_energy(&self) -> f64 {
        self.pilot_energy
    }

    pub fn region(&self, region: usize) -> &[PilotPattern] {
        &self.regions[region]
    }

    pub fn pattern(&self, region: usize, id: usize) -> &PilotPattern {
        &self.regions[region][id]
    }

    pub fn patterns(&self) -> impl Iterator<Item = &PilotPattern> {
        self.regions.iter().flatten()
    }
}

/// Builds the pilot set of `scheme` on `grid` with unit per-RE energy.
pub fn build_pilot_set(scheme: PilotScheme, grid: &GridConfig) -> Result<PilotSet> {
    build_pilot_set_with_energy(scheme, grid, 1.0)
}

pub fn build_pilot_set_with_energy(
    scheme: PilotScheme,
    grid: &GridConfig,
    pilot_energy: f64,
) -> Result<PilotSet> {
    if grid.n_subcarriers() % SUBCARRIERS_PER_PRB != 0 || grid.n_subcarriers() == 0 {
        return Err(Error::InvalidConfig(format!(
            "subcarrier count {} is not a positive multiple of 12",
            grid.n_subcarriers()
        )));
    }
    if !(pilot_energy > 0.0 && pilot_energy.is_finite()) {
        return Err(Error::InvalidConfig("pilot_energy must be positive".into()));
    }
    let amp = pilot_energy.sqrt();
    let regions = (0..grid.n_pilot_regions())
        .map(|r| match scheme {
            PilotScheme::Esop => esop_region(grid, r, amp),
            PilotScheme::Top => top_region(grid, r, amp),
        })
        .collect();
    Ok(PilotSet {
        scheme,
        regions,
        pilot_energy,
    })
}

fn esop_region(grid: &GridConfig, region: usize, amp: f64) -> Vec<PilotPattern> {
    grid.region_coords(region)
        .into_iter()
        .enumerate()
        .map(|(id, coord)| PilotPattern {
            id,
            region,
            entries: vec![PilotEntry {
                re: id,
                coord,
                value: Complex64::new(amp, 0.0),
                block: 0,
            }],
            n_blocks: 1,
        })
        .collect()
}

fn top_region(grid: &GridConfig, region: usize, amp: f64) -> Vec<PilotPattern> {
    let symbols = grid.region_symbols(region);
    let n_prb = grid.n_prb();
    let j_total = grid.n_subcarriers();
    // REs of comb `g` in PRB `b`, ordered (f0,t0), (f1,t0), (f0,t1), (f1,t1).
    let patch = |g: usize, b: usize| -> Vec<GridCoord> {
        let f0 = b * SUBCARRIERS_PER_PRB + 2 * g;
        symbols
            .iter()
            .flat_map(|&t| [GridCoord::new(f0, t), GridCoord::new(f0 + 1, t)])
            .collect()
    };
    let re_of = |c: GridCoord| -> usize {
        let k = symbols.iter().position(|&t| t == c.symbol).unwrap();
        k * j_total + c.subcarrier
    };
    let codes: Vec<&[f64]> = if symbols.len() == 2 {
        WALSH4.iter().map(|c| &c[..]).collect()
    } else {
        WALSH2.iter().map(|c| &c[..]).collect()
    };
    let mut out = Vec::with_capacity(CDM_GROUPS * codes.len());
    for g in 0..CDM_GROUPS {
        for code in &codes {
            let id = out.len();
            let entries = (0..n_prb)
                .flat_map(|b| {
                    patch(g, b)
                        .into_iter()
                        .zip(code.iter())
                        .map(move |(coord, &c)| (b, coord, c))
                })
                .map(|(b, coord, c)| PilotEntry {
                    re: re_of(coord),
                    coord,
                    value: Complex64::new(amp * c, 0.0),
                    block: b,
                })
                .collect();
            out.push(PilotPattern {
                id,
                region,
                entries,
                n_blocks: n_prb,
            });
        }
    }
    out
}

/// Pilot choice of one UE: one id per region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotAssignment {
    pub ids: Vec<usize>,
}

/// Each of `k` UEs draws one uniform pilot per region, independently.
pub fn select_pilots<R: Rng + ?Sized>(rng: &mut R, k: usize, set: &PilotSet) -> Vec<PilotAssignment> {
    draw_ids(rng, k, set.n_per_region(), set.n_regions())
}

fn draw_ids<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    n_per_region: usize,
    n_regions: usize,
) -> Vec<PilotAssignment> {
    (0..k)
        .map(|_| PilotAssignment {
            ids: (0..n_regions).map(|_| rng.random_range(0..n_per_region)).collect(),
        })
        .collect()
}

/// Marks UEs whose every pilot is shared with at least one other UE.
pub fn collided_flags(assignments: &[PilotAssignment], n_per_region: usize) -> Vec<bool> {
    let n_regions = assignments.first().map_or(0, |a| a.ids.len());
    let mut counts = vec![0u32; n_per_region * n_regions];
    for a in assignments {
        for (r, &id) in a.ids.iter().enumerate() {
            counts[r * n_per_region + id] += 1;
        }
    }
    assignments
        .iter()
        .map(|a| {
            a.ids
                .iter()
                .enumerate()
                .all(|(r, &id)| counts[r * n_per_region + id] > 1)
        })
        .collect()
}

/// Expected fraction of UEs that lose every pilot to a collision.
pub fn collision_prob_analytic(n_per_region: usize, k: usize, n_regions: usize) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let c = 1.0 - (1.0 - 1.0 / n_per_region as f64).powi(k as i32 - 1);
    c.powi(n_regions as i32)
}

/// Monte Carlo estimate of [`collision_prob_analytic`].
pub fn collision_prob_mc<R: Rng + ?Sized>(
    rng: &mut R,
    n_per_region: usize,
    k: usize,
    n_regions: usize,
    trials: usize,
) -> f64 {
    collision_mc_stats(rng, n_per_region, k, n_regions, trials).mean
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionStats {
    pub mean: f64,
    /// Standard error of `mean`, from the spread of per-slot collided fractions.
    pub std_err: f64,
    pub trials: usize,
}

/// Like [`collision_prob_mc`], also returning the standard error of the estimate.
///
/// Outcomes of UEs in the same slot are positively correlated (a collision always
/// involves two UEs), so the error is measured on per-slot fractions rather than
/// treating the `k * trials` outcomes as independent.
pub fn collision_mc_stats<R: Rng + ?Sized>(
    rng: &mut R,
    n_per_region: usize,
    k: usize,
    n_regions: usize,
    trials: usize,
) -> CollisionStats {
    if k == 0 || trials == 0 {
        return CollisionStats { mean: 0.0, std_err: 0.0, trials };
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let a = draw_ids(rng, k, n_per_region, n_regions);
        let hits = collided_flags(&a, n_per_region).iter().filter(|&&c| c).count();
        let frac = hits as f64 / k as f64;
        sum += frac;
        sum_sq += frac * frac;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    CollisionStats { mean, std_err: (var / n).sqrt(), trials }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(regions: usize) -> GridConfig {
        GridConfig::new(6, regions).unwrap()
    }

    #[test]
    fn esop_counts() {
        let s = build_pilot_set(PilotScheme::Esop, &grid(1)).unwrap();
        assert_eq!(s.n_per_region(), 144);
        assert!(s.patterns().all(|p| p.entries.len() == 1));
        let s2 = build_pilot_set(PilotScheme::Esop, &grid(2)).unwrap();
        assert_eq!(s2.n_regions(), 2);
        assert_eq!(s2.n_per_region(), 72);
        assert!(s2.region(1).iter().all(|p| p.entries[0].coord.symbol == 11));
    }

    #[test]
    fn top_counts() {
        let s = build_pilot_set(PilotScheme::Top, &grid(1)).unwrap();
        assert_eq!(s.n_per_region(), 24);
        assert!(s.patterns().all(|p| p.entries.len() == 24 && p.n_blocks == 6));
        let s2 = build_pilot_set(PilotScheme::Top, &grid(2)).unwrap();
        assert_eq!(s2.n_per_region(), 12);
        assert!(s2.patterns().all(|p| p.entries.len() == 12));
    }

    #[test]
    fn entries_live_on_region_symbols() {
        for scheme in [PilotScheme::Esop, PilotScheme::Top] {
            for regions in [1, 2] {
                let g = grid(regions);
                let s = build_pilot_set(scheme, &g).unwrap();
                for p in s.patterns() {
                    for e in &p.entries {
                        assert!(g.region_symbols(p.region).contains(&e.coord.symbol));
                        assert_eq!(g.region_index(e.coord), Some((p.region, e.re)));
                    }
                }
            }
        }
    }

    #[test]
    fn energy_follows_per_re_amplitude() {
        let g = grid(1);
        let s = build_pilot_set_with_energy(PilotScheme::Esop, &g, 2.0).unwrap();
        assert!((s.pattern(0, 5).energy() - 2.0).abs() < 1e-12);
        let t = build_pilot_set(PilotScheme::Top, &g).unwrap();
        assert!((t.pattern(0, 3).energy() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonality() {
        for scheme in [PilotScheme::Esop, PilotScheme::Top] {
            for regions in [1, 2] {
                let s = build_pilot_set(scheme, &grid(regions)).unwrap();
                for r in 0..regions {
                    let pats = s.region(r);
                    for i in 0..pats.len() {
                        for j in 0..pats.len() {
                            let ip = pats[i].inner(&pats[j]).norm();
                            if i == j {
                                assert!(ip > 0.0);
                            } else {
                                assert!(ip < 1e-12, "{scheme} {r} {i} {j}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn esop_supports_disjoint() {
        let s = build_pilot_set(PilotScheme::Esop, &grid(1)).unwrap();
        let mut res: Vec<usize> = s.patterns().map(|p| p.entries[0].re).collect();
        res.sort_unstable();
        res.dedup();
        assert_eq!(res.len(), 144);
    }

    #[test]
    fn selection_is_deterministic() {
        let s = build_pilot_set(PilotScheme::Esop, &grid(1)).unwrap();
        let a = select_pilots(&mut ChaCha8Rng::seed_from_u64(7), 30, &s);
        let b = select_pilots(&mut ChaCha8Rng::seed_from_u64(7), 30, &s);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
    }

    #[test]
    fn pigeonhole() {
        let s = build_pilot_set(PilotScheme::Esop, &grid(1)).unwrap();
        let a = select_pilots(&mut ChaCha8Rng::seed_from_u64(1), 200, &s);
        let flags = collided_flags(&a, 144);
        assert!(flags.iter().any(|&f| f));
        let one = select_pilots(&mut ChaCha8Rng::seed_from_u64(1), 1, &s);
        assert_eq!(collided_flags(&one, 144), vec![false]);
    }

    #[test]
    fn analytic_values() {
        assert!((collision_prob_analytic(144, 30, 1) - 0.1830).abs() < 1e-4);
        // c = 1 - (71/72)^29 = 0.33342, c^2 = 0.11117
        assert!((collision_prob_analytic(72, 30, 2) - 0.1112).abs() < 1e-4);
        assert!((collision_prob_analytic(24, 10, 1) - 0.3182).abs() < 1e-4);
        assert_eq!(collision_prob_analytic(144, 1, 1), 0.0);
        assert_eq!(collision_prob_analytic(12, 1, 2), 0.0);
    }

    #[test]
    fn analytic_monotone() {
        for n in [12, 24, 72, 144] {
            for k in 1..60 {
                assert!(collision_prob_analytic(n, k + 1, 1) >= collision_prob_analytic(n, k, 1));
                assert!(collision_prob_analytic(n, k, 1) >= collision_prob_analytic(n + 1, k, 1));
            }
        }
        // Equal total pilot count: two regions of N/2 beat one region of N until the
        // per-region load gets heavy. For 24 pilots the order flips at K = 12.
        for k in 1..60 {
            assert!(collision_prob_analytic(72, k, 2) <= collision_prob_analytic(144, k, 1));
        }
        for k in 1..12 {
            assert!(collision_prob_analytic(12, k, 2) <= collision_prob_analytic(24, k, 1));
        }
        assert!(collision_prob_analytic(12, 12, 2) > collision_prob_analytic(24, 12, 1));
    }

    #[test]
    fn mc_single_ue_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(collision_prob_mc(&mut rng, 144, 1, 1, 1000), 0.0);
        assert_eq!(collision_prob_mc(&mut rng, 12, 1, 2, 1000), 0.0);
    }

    #[test]
    fn mc_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        for (n, k, r, expect) in [(144, 30, 1, 0.1830), (24, 10, 1, 0.3182)] {
            let st = collision_mc_stats(&mut rng, n, k, r, trials);
            assert!(st.std_err > 0.0);
            assert!((st.mean - expect).abs() < 3.0 * st.std_err, "{n} {k}: {st:?}");
        }
    }
}
