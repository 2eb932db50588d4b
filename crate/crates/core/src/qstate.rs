//! Coherent and N-component cat states, and their Wigner functions.
//!
//! States are kept symbolically as superpositions of coherent states. The
//! Wigner function is evaluated in closed form through the displaced-parity
//! identity `W(β) = (2/π)⟨ψ|D(β) Π D†(β)|ψ⟩`, with an independent Fock-basis
//! route ([`wigner_fock_oracle`]) kept for validation.

use std::f64::consts::{FRAC_2_PI, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

/// Largest value `|W(β)|` can take for any normalized pure state.
pub const WIGNER_BOUND: f64 = FRAC_2_PI;

const NORM_TOLERANCE: f64 = 1e-10;
const IMAG_RESIDUE_LIMIT: f64 = 1e-10;
const TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum QStateError {
    #[error("photon number {0} outside 1..=100")]
    PhotonNumberOutOfRange(u32),
    #[error("unknown state class `{0}`")]
    UnknownClass(String),
    #[error("state is not normalized: <psi|psi> = {0}")]
    NotNormalized(f64),
    #[error("grid needs resolution >= 2 and extent > 0 (got resolution {resolution}, extent {extent})")]
    BadGrid { resolution: usize, extent: f64 },
    #[error("parity sum left an imaginary residue of {0:e}")]
    ImaginaryResidue(f64),
    #[error("Fock truncation at n_max = {n_max} drops probability {tail:e}")]
    Truncation { n_max: usize, tail: f64 },
    #[error("state has no components")]
    Empty,
}

/// The four state families in the corpus, with their class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassId {
    Coherent = 0,
    Cat2 = 1,
    Cat3 = 2,
    Cat4 = 3,
}

impl ClassId {
    pub const ALL: [ClassId; 4] = [ClassId::Coherent, ClassId::Cat2, ClassId::Cat3, ClassId::Cat4];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        Self::ALL.get(i).copied()
    }

    /// Number of coherent components in the superposition.
    pub fn components(self) -> usize {
        match self {
            ClassId::Coherent => 1,
            ClassId::Cat2 => 2,
            ClassId::Cat3 => 3,
            ClassId::Cat4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Coherent => "coherent",
            ClassId::Cat2 => "cat2",
            ClassId::Cat3 => "cat3",
            ClassId::Cat4 => "cat4",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = QStateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Ok(i) = lower.parse::<usize>() {
            return ClassId::from_index(i).ok_or(QStateError::UnknownClass(s.to_string()));
        }
        ClassId::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| QStateError::UnknownClass(s.to_string()))
    }
}

/// Complex amplitude of a coherent state `|α⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentLabel {
    pub alpha: Complex64,
}

/// A pure state written as `Σ_j c_j |α_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub components: Vec<(Complex64, CoherentLabel)>,
    pub class_id: ClassId,
    pub n_photon: u32,
}

/// Overlap `⟨b|a⟩` of two coherent states.
pub fn coherent_overlap(a: Complex64, b: Complex64) -> Complex64 {
    (-(a.norm_sqr() + b.norm_sqr()) / 2.0 + b.conj() * a).exp()
}

/// Builds the normalized state for `class_id` with amplitude `α = √n`.
///
/// Cat states put `N` equal-weight components at `α·e^{i2πk/N}`.
pub fn make_state(class_id: ClassId, n_photon: u32) -> Result<StateSpec, QStateError> {
    if !(1..=100).contains(&n_photon) {
        return Err(QStateError::PhotonNumberOutOfRange(n_photon));
    }
    let alpha = f64::from(n_photon).sqrt();
    let n = class_id.components();
    let components = (0..n)
        .map(|k| {
            let center = Complex64::from_polar(alpha, 2.0 * PI * k as f64 / n as f64);
            (Complex64::new(1.0, 0.0), CoherentLabel { alpha: center })
        })
        .collect();
    let mut state = StateSpec { components, class_id, n_photon };
    state.normalize()?;
    Ok(state)
}

impl StateSpec {
    /// A single coherent state at an arbitrary amplitude (including vacuum).
    pub fn coherent(alpha: Complex64) -> StateSpec {
        StateSpec {
            components: vec![(Complex64::new(1.0, 0.0), CoherentLabel { alpha })],
            class_id: ClassId::Coherent,
            n_photon: alpha.norm_sqr().round() as u32,
        }
    }

    /// `⟨ψ|ψ⟩` from pairwise coherent overlaps.
    pub fn norm_sqr(&self) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (cj, aj) in &self.components {
            for (ck, ak) in &self.components {
                acc += *cj * ck.conj() * coherent_overlap(aj.alpha, ak.alpha);
            }
        }
        acc.re
    }

    pub fn normalize(&mut self) -> Result<(), QStateError> {
        if self.components.is_empty() {
            return Err(QStateError::Empty);
        }
        let norm = self.norm_sqr().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(QStateError::NotNormalized(norm * norm));
        }
        for (c, _) in &mut self.components {
            *c /= norm;
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }

    fn check_normalized(&self) -> Result<(), QStateError> {
        if self.components.is_empty() {
            return Err(QStateError::Empty);
        }
        let n2 = self.norm_sqr();
        if (n2 - 1.0).abs() > NORM_TOLERANCE {
            return Err(QStateError::NotNormalized(n2));
        }
        Ok(())
    }

    /// Components of `D(−β)|ψ⟩` as (phase-adjusted coefficient, shifted center).
    fn displaced(&self, beta: Complex64) -> impl Iterator<Item = (Complex64, Complex64)> + '_ {
        self.components.iter().map(move |(c, label)| {
            let a = label.alpha;
            let phase = (-beta * a.conj() + beta.conj() * a) / 2.0;
            (*c * phase.exp(), a - beta)
        })
    }
}

/// Wigner function sampled on a square grid.
///
/// Rows run from `Im β = +r` (top) down to `−r`; columns from `Re β = −r`
/// to `+r`. Samples sit at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub values: Vec<f64>,
    pub extent: f64,
    pub resolution: usize,
}

impl WignerGrid {
    pub fn pitch(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.pitch() * self.pitch()
    }

    pub fn coord(&self, row: usize, col: usize) -> Complex64 {
        grid_coord(self.extent, self.resolution, row, col)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Riemann sum of `W` over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }
}

fn grid_coord(extent: f64, resolution: usize, row: usize, col: usize) -> Complex64 {
    let pitch = 2.0 * extent / resolution as f64;
    let re = -extent + (col as f64 + 0.5) * pitch;
    let im = extent - (row as f64 + 0.5) * pitch;
    Complex64::new(re, im)
}

/// Default plot half-width for photon number `n`: `√n + 4`.
pub fn default_extent(n_photon: u32) -> f64 {
    f64::from(n_photon).sqrt() + 4.0
}

/// Closed-form `W(β)` at a single point.
pub fn wigner_at(state: &StateSpec, beta: Complex64) -> Result<f64, QStateError> {
    state.check_normalized()?;
    wigner_point(state, beta)
}

fn wigner_point(state: &StateSpec, beta: Complex64) -> Result<f64, QStateError> {
    let shifted: Vec<(Complex64, Complex64)> = state.displaced(beta).collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, (dj, gj)) in shifted.iter().enumerate() {
        for (k, (dk, gk)) in shifted.iter().enumerate() {
            if j == k {
                // |d_j|² e^{-2|γ_j|²}
                acc += dj.norm_sqr() * (-2.0 * gj.norm_sqr()).exp();
            } else {
                acc += *dj * dk.conj() * (-(gj.norm_sqr() + gk.norm_sqr()) / 2.0 - gk.conj() * gj).exp();
            }
        }
    }
    if acc.im.abs() > IMAG_RESIDUE_LIMIT {
        return Err(QStateError::ImaginaryResidue(acc.im));
    }
    Ok(FRAC_2_PI * acc.re)
}

/// Evaluates `W` on a `resolution × resolution` grid spanning `[−extent, extent]²`.
pub fn wigner_analytic(state: &StateSpec, extent: f64, resolution: usize) -> Result<WignerGrid, QStateError> {
    if resolution < 2 || !(extent > 0.0 && extent.is_finite()) {
        return Err(QStateError::BadGrid { resolution, extent });
    }
    state.check_normalized()?;
    let mut values = vec![0.0; resolution * resolution];
    values
        .par_chunks_mut(resolution)
        .enumerate()
        .try_for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                *v = wigner_point(state, grid_coord(extent, resolution, row, col))?;
            }
            Ok(())
        })?;
    Ok(WignerGrid { values, extent, resolution })
}

/// Smallest Fock cutoff that keeps the truncation tail of `D(−β)|ψ⟩`
/// comfortably below 1e-10.
pub fn fock_cutoff(state: &StateSpec, beta: Complex64) -> usize {
    let n = f64::from(state.n_photon);
    let base = (n + 6.0 * n.sqrt() + 10.0).ceil() as usize;
    let widest = state
        .components
        .iter()
        .map(|(_, l)| (l.alpha - beta).norm_sqr())
        .fold(0.0, f64::max);
    base.max((widest + 8.0 * widest.sqrt() + 30.0).ceil() as usize)
}

/// `W(β)` through an explicit Fock-basis expansion truncated at `n_max`.
///
/// Each displaced component `|α_j − β⟩` is expanded with
/// `⟨m|γ⟩ = e^{−|γ|²/2} γ^m / √(m!)` and the parity expectation is summed
/// term by term. Errors when the dropped tail probability exceeds 1e-10.
pub fn wigner_fock_oracle(state: &StateSpec, beta: Complex64, n_max: usize) -> Result<f64, QStateError> {
    state.check_normalized()?;
    let mut amps = vec![Complex64::new(0.0, 0.0); n_max + 1];
    for (d, gamma) in state.displaced(beta) {
        let mut a = d * (-gamma.norm_sqr() / 2.0).exp();
        amps[0] += a;
        for (m, slot) in amps.iter_mut().enumerate().skip(1) {
            a *= gamma / (m as f64).sqrt();
            *slot += a;
        }
    }
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let tail = 1.0 - kept;
    if tail > TAIL_LIMIT {
        return Err(QStateError::Truncation { n_max, tail });
    }
    let parity: f64 = amps
        .iter()
        .enumerate()
        .map(|(m, a)| if m % 2 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum();
    Ok(FRAC_2_PI * parity)
}
