//! SIMO fading, timing/frequency offsets and received-signal synthesis.
//!
//! Everything is modeled per resource element in the frequency domain. A time offset
//! no longer than the CP is a linear phase ramp across subcarriers; a frequency offset
//! small against the subcarrier spacing is a linear phase ramp across OFDM symbols.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{GridConfig, GridCoord};
use crate::pilots::{PilotAssignment, PilotSet};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Flat,
    Selective,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Flat => "flat",
            ChannelKind::Selective => "selective",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Excess delay in seconds.
    pub delay: f64,
    /// Linear power.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    kind: ChannelKind,
    taps: Vec<Tap>,
}

impl ChannelModel {
    /// Single-tap Rayleigh channel, constant across the band.
    pub fn flat() -> Self {
        Self {
            kind: ChannelKind::Flat,
            taps: vec![Tap { delay: 0.0, power: 1.0 }],
        }
    }

    /// Eight taps at 0, 100, ..., 700 ns with powers decaying as `exp(-tau / decay)`.
    pub fn exponential(decay: f64) -> Self {
        let taps = (0..8)
            .map(|l| {
                let delay = l as f64 * 100e-9;
                Tap { delay, power: (-delay / decay).exp() }
            })
            .collect();
        Self::selective(taps).expect("non-empty tap list")
    }

    /// Frequency-selective proxy used for the 300 ns delay-spread scenario.
    pub fn selective_default() -> Self {
        Self::exponential(300e-9)
    }

    /// Tapped-delay-line model; taps are sorted by delay and normalized to unit power.
    pub fn selective(mut taps: Vec<Tap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidConfig("selective channel needs at least one tap".into()));
        }
        if taps.iter().any(|t| t.delay < 0.0 || t.power < 0.0 || !t.delay.is_finite()) {
            return Err(Error::InvalidConfig("tap delays and powers must be nonnegative".into()));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("tap powers sum to zero".into()));
        }
        taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        for t in &mut taps {
            t.power /= total;
        }
        Ok(Self {
            kind: ChannelKind::Selective,
            taps,
        })
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn mean_delay(&self) -> f64 {
        self.taps.iter().map(|t| t.power * t.delay).sum()
    }

    pub fn rms_delay_spread(&self) -> f64 {
        let mean = self.mean_delay();
        let second: f64 = self.taps.iter().map(|t| t.power * t.delay * t.delay).sum();
        (second - mean * mean).max(0.0).sqrt()
    }
}

/// One UE's channel: frequency response `h` (antennas x subcarriers) plus offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    /// Time offset in seconds.
    pub to: f64,
    /// Carrier frequency offset in Hz.
    pub fo: f64,
}

impl ChannelRealization {
    pub fn n_antennas(&self) -> usize {
        self.h.nrows()
    }
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

pub fn draw_channel<R: Rng + ?Sized>(
    rng: &mut R,
    model: &ChannelModel,
    n_antennas: usize,
    grid: &GridConfig,
    to_max: f64,
    fo_max: f64,
) -> ChannelRealization {
    let j_total = grid.n_subcarriers();
    let df = grid.subcarrier_spacing();
    let h = match model.kind {
        ChannelKind::Flat => {
            let col: Vec<Complex64> = (0..n_antennas).map(|_| complex_gaussian(rng, 1.0)).collect();
            CMatrix::from_fn(n_antennas, j_total, |m, _| col[m])
        }
        ChannelKind::Selective => {
            let mut h = CMatrix::zeros(n_antennas, j_total);
            // Tap phasors exp(-i 2 pi f_j tau_l) are shared by every antenna.
            let steer: Vec<Vec<Complex64>> = model
                .taps
                .iter()
                .map(|t| {
                    (0..j_total)
                        .map(|j| Complex64::from_polar(1.0, -2.0 * PI * df * j as f64 * t.delay))
                        .collect()
                })
                .collect();
            for m in 0..n_antennas {
                for (tap, s) in model.taps.iter().zip(&steer) {
                    let a = complex_gaussian(rng, tap.power);
                    for j in 0..j_total {
                        h[(m, j)] += a * s[j];
                    }
                }
            }
            h
        }
    };
    let to = if to_max > 0.0 { rng.random_range(0.0..=to_max) } else { 0.0 };
    let fo = if fo_max > 0.0 { rng.random_range(-fo_max..=fo_max) } else { 0.0 };
    ChannelRealization { h, to, fo }
}

/// Phase rotation that a time offset `to` and frequency offset `fo` impose on the RE
/// at `coord`: `exp(-i 2 pi df j to) * exp(i 2 pi fo t T_sym)`.
pub fn impairment_phase(coord: GridCoord, to: f64, fo: f64, grid: &GridConfig) -> Complex64 {
    let phase = -2.0 * PI * grid.subcarrier_spacing() * coord.subcarrier as f64 * to
        + 2.0 * PI * fo * coord.symbol as f64 * grid.symbol_duration();
    Complex64::from_polar(1.0, phase)
}

/// Phase step per subcarrier caused by a time offset.
pub fn to_phase_slope(to: f64, grid: &GridConfig) -> f64 {
    -2.0 * PI * grid.subcarrier_spacing() * to
}

/// Phase step per OFDM symbol caused by a frequency offset.
pub fn fo_phase_slope(fo: f64, grid: &GridConfig) -> f64 {
    2.0 * PI * fo * grid.symbol_duration()
}

/// Everything one UE puts on the air in a slot.
#[derive(Debug, Clone)]
pub struct UeTransmission {
    pub channel: ChannelRealization,
    pub pilots: PilotAssignment,
    /// Data symbols in serial order, length `L`.
    pub symbols: Vec<Complex64>,
}

/// Superimposed observations at the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// Per pilot region: antennas x region REs.
    pub pilots: Vec<CMatrix>,
    /// Antennas x `L`.
    pub data: CMatrix,
    pub noise_var: f64,
}

impl ReceivedSignal {
    pub fn zeros(n_antennas: usize, grid: &GridConfig) -> Self {
        Self {
            pilots: (0..grid.n_pilot_regions())
                .map(|_| CMatrix::zeros(n_antennas, grid.region_re_count()))
                .collect(),
            data: CMatrix::zeros(n_antennas, grid.data_len()),
            noise_var: 0.0,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.data.nrows()
    }

    /// Total energy over all pilot and data REs.
    pub fn energy(&self) -> f64 {
        self.data.norm_squared() + self.pilots.iter().map(|p| p.norm_squared()).sum::<f64>()
    }
}

/// Noise-free superposition of all UEs.
pub fn synthesize_clean(
    ues: &[UeTransmission],
    set: &PilotSet,
    grid: &GridConfig,
    n_antennas: usize,
) -> Result<ReceivedSignal> {
    let mut sig = ReceivedSignal::zeros(n_antennas, grid);
    for ue in ues {
        add_transmission(&mut sig, ue, set, grid)?;
    }
    Ok(sig)
}

/// Adds one UE's contribution to `sig`.
pub fn add_transmission(
    sig: &mut ReceivedSignal,
    ue: &UeTransmission,
    set: &PilotSet,
    grid: &GridConfig,
) -> Result<()> {
    let m_ant = sig.n_antennas();
    let ch = &ue.channel;
    if ch.h.nrows() != m_ant || ch.h.ncols() != grid.n_subcarriers() {
        return Err(Error::Dimension(format!(
            "channel is {}x{}, expected {}x{}",
            ch.h.nrows(),
            ch.h.ncols(),
            m_ant,
            grid.n_subcarriers()
        )));
    }
    if ue.symbols.len() != grid.data_len() {
        return Err(Error::LengthMismatch {
            expected: grid.data_len(),
            actual: ue.symbols.len(),
        });
    }
    if ue.pilots.ids.len() != set.n_regions() {
        return Err(Error::Dimension("pilot assignment does not match region count".into()));
    }
    let rot = PhaseTable::new(grid, ch.to, ch.fo);
    for (r, &id) in ue.pilots.ids.iter().enumerate() {
        let pat = set.pattern(r, id);
        let y = &mut sig.pilots[r];
        for e in &pat.entries {
            let v = e.value * rot.at(e.coord);
            for m in 0..m_ant {
                y[(m, e.re)] += ch.h[(m, e.coord.subcarrier)] * v;
            }
        }
    }
    for (i, (c, s)) in grid.data_coords().iter().zip(&ue.symbols).enumerate() {
        let v = s * rot.at(*c);
        let col = ch.h.column(c.subcarrier);
        let mut y = sig.data.column_mut(i);
        for m in 0..m_ant {
            y[m] += col[m] * v;
        }
    }
    Ok(())
}

/// Adds circularly-symmetric Gaussian noise of variance `noise_var` to every RE and
/// antenna.
pub fn add_noise<R: Rng + ?Sized>(rng: &mut R, sig: &mut ReceivedSignal, noise_var: f64) {
    if noise_var > 0.0 {
        for p in &mut sig.pilots {
            p.iter_mut().for_each(|v| *v += complex_gaussian(rng, noise_var));
        }
        sig.data.iter_mut().for_each(|v| *v += complex_gaussian(rng, noise_var));
    }
    sig.noise_var = noise_var;
}

/// Superimposed pilot and data observations of all UEs plus receiver noise.
pub fn synthesize<R: Rng + ?Sized>(
    ues: &[UeTransmission],
    set: &PilotSet,
    grid: &GridConfig,
    n_antennas: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    let mut sig = synthesize_clean(ues, set, grid, n_antennas)?;
    add_noise(rng, &mut sig, noise_var);
    Ok(sig)
}

/// Separable per-subcarrier and per-symbol phasors of a linear phase model.
#[derive(Debug, Clone)]
pub(crate) struct PhaseTable {
    freq: Vec<Complex64>,
    time: Vec<Complex64>,
}

impl PhaseTable {
    pub fn new(grid: &GridConfig, to: f64, fo: f64) -> Self {
        Self::from_slopes(grid, to_phase_slope(to, grid), fo_phase_slope(fo, grid), GridCoord::new(0, 0))
    }

    /// Phasors of `exp(i (freq_slope (j - j0) + time_slope (t - t0)))`.
    pub fn from_slopes(grid: &GridConfig, freq_slope: f64, time_slope: f64, anchor: GridCoord) -> Self {
        let freq = (0..grid.n_subcarriers())
            .map(|j| Complex64::from_polar(1.0, freq_slope * (j as f64 - anchor.subcarrier as f64)))
            .collect();
        let time = (0..grid.n_symbols())
            .map(|t| Complex64::from_polar(1.0, time_slope * (t as f64 - anchor.symbol as f64)))
            .collect();
        Self { freq, time }
    }

    #[inline]
    pub fn at(&self, c: GridCoord) -> Complex64 {
        self.freq[c.subcarrier] * self.time[c.symbol]
    }
}
