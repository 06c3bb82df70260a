//! Time-frequency resource grid of one uplink slot.
//!
//! A slot is `12 * n_prb` subcarriers by 14 OFDM symbols. Two of the symbols are
//! reserved for pilots; everything else carries data. The serial order of the data
//! resource elements (REs) is fixed here: symbols ascending, subcarriers ascending
//! within each symbol. Every other module indexes data symbols through that order.

use crate::error::{Error, Result};

pub const SUBCARRIERS_PER_PRB: usize = 12;
pub const SYMBOLS_PER_SLOT: usize = 14;

const SUBCARRIER_SPACING_HZ: f64 = 15e3;
const SLOT_DURATION_S: f64 = 1e-3;
const CP_LENGTH_S: f64 = 4.69e-6;

/// Position of one resource element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoord {
    pub subcarrier: usize,
    pub symbol: usize,
}

impl GridCoord {
    pub const fn new(subcarrier: usize, symbol: usize) -> Self {
        Self { subcarrier, symbol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    n_prb: usize,
    n_subcarriers: usize,
    n_symbols: usize,
    subcarrier_spacing: f64,
    slot_duration: f64,
    cp_length: f64,
    pilot_symbols: Vec<usize>,
    n_pilot_regions: usize,
    data_coords: Vec<GridCoord>,
    data_symbols: Vec<usize>,
}

impl GridConfig {
    /// Builds the slot layout for `n_prb` resource blocks.
    ///
    /// One pilot region occupies the adjacent symbols 2 and 3. Two regions split the
    /// same overhead into an early symbol (2) and a late symbol (11).
    pub fn new(n_prb: usize, n_pilot_regions: usize) -> Result<Self> {
        if n_prb == 0 {
            return Err(Error::InvalidConfig("n_prb must be at least 1".into()));
        }
        let pilot_symbols = match n_pilot_regions {
            1 => vec![2, 3],
            2 => vec![2, 11],
            n => {
                return Err(Error::InvalidConfig(format!(
                    "n_pilot_regions must be 1 or 2, got {n}"
                )))
            }
        };
        let n_subcarriers = SUBCARRIERS_PER_PRB * n_prb;
        let data_symbols: Vec<usize> = (0..SYMBOLS_PER_SLOT)
            .filter(|t| !pilot_symbols.contains(t))
            .collect();
        let data_coords = data_symbols
            .iter()
            .flat_map(|&t| (0..n_subcarriers).map(move |j| GridCoord::new(j, t)))
            .collect();
        Ok(Self {
            n_prb,
            n_subcarriers,
            n_symbols: SYMBOLS_PER_SLOT,
            subcarrier_spacing: SUBCARRIER_SPACING_HZ,
            slot_duration: SLOT_DURATION_S,
            cp_length: CP_LENGTH_S,
            pilot_symbols,
            n_pilot_regions,
            data_coords,
            data_symbols,
        })
    }

    pub fn n_prb(&self) -> usize {
        self.n_prb
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.subcarrier_spacing
    }

    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    pub fn cp_length(&self) -> f64 {
        self.cp_length
    }

    /// Uniform OFDM symbol duration; CP-length variation across symbols is ignored.
    pub fn symbol_duration(&self) -> f64 {
        self.slot_duration / self.n_symbols as f64
    }

    pub fn pilot_symbols(&self) -> &[usize] {
        &self.pilot_symbols
    }

    pub fn n_pilot_regions(&self) -> usize {
        self.n_pilot_regions
    }

    /// OFDM symbols belonging to pilot region `region`.
    pub fn region_symbols(&self, region: usize) -> &[usize] {
        match self.n_pilot_regions {
            1 => &self.pilot_symbols[..],
            _ => &self.pilot_symbols[region..=region],
        }
    }

    /// Pilot RE coordinates of one region, symbol-major. The position in this list
    /// is the column index of that RE in the region's received pilot matrix.
    pub fn region_coords(&self, region: usize) -> Vec<GridCoord> {
        self.region_symbols(region)
            .iter()
            .flat_map(|&t| (0..self.n_subcarriers).map(move |j| GridCoord::new(j, t)))
            .collect()
    }

    /// Column index of `coord` inside its pilot region, if it is a pilot RE.
    pub fn region_index(&self, coord: GridCoord) -> Option<(usize, usize)> {
        if coord.subcarrier >= self.n_subcarriers {
            return None;
        }
        (0..self.n_pilot_regions).find_map(|r| {
            self.region_symbols(r)
                .iter()
                .position(|&t| t == coord.symbol)
                .map(|k| (r, k * self.n_subcarriers + coord.subcarrier))
        })
    }

    pub fn pilot_re_count(&self) -> usize {
        self.n_subcarriers * self.pilot_symbols.len()
    }

    pub fn region_re_count(&self) -> usize {
        self.pilot_re_count() / self.n_pilot_regions
    }

    /// Number of data REs, `L`.
    pub fn data_len(&self) -> usize {
        self.data_coords.len()
    }

    /// OFDM symbols that carry data, ascending.
    pub fn data_symbols(&self) -> &[usize] {
        &self.data_symbols
    }

    /// Data RE coordinates in serial order.
    pub fn data_coords(&self) -> &[GridCoord] {
        &self.data_coords
    }

    /// Serial data index of `coord`, or `None` for pilot REs and out-of-grid points.
    pub fn data_index(&self, coord: GridCoord) -> Option<usize> {
        if coord.subcarrier >= self.n_subcarriers {
            return None;
        }
        let row = self.data_symbols.iter().position(|&t| t == coord.symbol)?;
        Some(row * self.n_subcarriers + coord.subcarrier)
    }
}

/// Data RE coordinates of `grid` in serial order.
pub fn data_coords(grid: &GridConfig) -> Vec<GridCoord> {
    grid.data_coords().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_grid() {
        let g = GridConfig::new(6, 1).unwrap();
        assert_eq!(g.n_subcarriers(), 72);
        assert_eq!(g.pilot_symbols(), &[2, 3]);
        assert_eq!(g.pilot_re_count(), 144);
        assert_eq!(g.data_len(), 864);
        assert_eq!(g.subcarrier_spacing(), 15e3);
        assert!((g.cp_length() - 4.69e-6).abs() < 1e-15);
        assert!((g.symbol_duration() - 1e-3 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn single_prb() {
        let g = GridConfig::new(1, 1).unwrap();
        assert_eq!(g.n_subcarriers(), 12);
        assert_eq!(g.data_len(), 144);
    }

    #[test]
    fn two_regions_split_overhead() {
        let g = GridConfig::new(6, 2).unwrap();
        assert_eq!(g.pilot_symbols(), &[2, 11]);
        assert_eq!(g.region_coords(0).len(), 72);
        assert_eq!(g.region_coords(1).len(), 72);
        assert_eq!(g.region_re_count() * 2, 144);
        assert!(g.region_coords(1).iter().all(|c| c.symbol == 11));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GridConfig::new(0, 1).is_err());
        assert!(GridConfig::new(6, 0).is_err());
        assert!(GridConfig::new(6, 3).is_err());
    }

    #[test]
    fn data_order() {
        let g = GridConfig::new(6, 1).unwrap();
        let coords = data_coords(&g);
        assert_eq!(coords.len(), 864);
        assert_eq!(coords[0], GridCoord::new(0, 0));
        assert_eq!(coords[1], GridCoord::new(1, 0));
        assert_eq!(coords[72], GridCoord::new(0, 1));
        assert_eq!(coords[144], GridCoord::new(0, 4));
        assert!(coords.iter().all(|c| c.symbol != 2 && c.symbol != 3));
    }

    #[test]
    fn partition_and_bijection() {
        for regions in [1, 2] {
            let g = GridConfig::new(6, regions).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (i, &c) in g.data_coords().iter().enumerate() {
                assert_eq!(g.data_index(c), Some(i));
                assert!(g.region_index(c).is_none());
                assert!(seen.insert(c));
            }
            for r in 0..regions {
                for (k, c) in g.region_coords(r).into_iter().enumerate() {
                    assert_eq!(g.region_index(c), Some((r, k)));
                    assert!(g.data_index(c).is_none());
                    assert!(seen.insert(c));
                }
            }
            assert_eq!(seen.len(), g.n_subcarriers() * g.n_symbols());
        }
    }
}
