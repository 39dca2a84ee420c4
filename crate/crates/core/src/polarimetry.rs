//! Waveplate settings, the detector observables they define, and Born-rule
//! statistics for joint measurements.
//!
//! Each party's analyzer is a quarter-wave plate followed by a half-wave plate
//! and a polarizing splitter. Detector `A` (outcome +1) sees the horizontal
//! output, `A′` (outcome −1) the vertical one. With `W = HWP(h)·QWP(q)` the
//! observable is `W† σz W`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, c, CMatrix2};
use crate::states::DensityOperator;
use crate::{Error, Result, Side};

/// Tolerance used when matching settings against the eavesdropper's table.
pub const SETTING_MATCH_TOL: f64 = 1e-9;

/// Quarter- and half-wave-plate fast-axis angles, in radians.
///
/// Serialized as a `[q, h]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct WaveplateSetting {
    pub q: f64,
    pub h: f64,
}

impl From<[f64; 2]> for WaveplateSetting {
    fn from([q, h]: [f64; 2]) -> Self {
        Self { q, h }
    }
}

impl From<WaveplateSetting> for [f64; 2] {
    fn from(s: WaveplateSetting) -> Self {
        [s.q, s.h]
    }
}

fn angle_distance_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

impl WaveplateSetting {
    pub const fn new(q: f64, h: f64) -> Self {
        Self { q, h }
    }

    /// Both Jones matrices have period π in their angle, so settings are
    /// compared modulo π.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        angle_distance_mod_pi(self.q, other.q) <= tol && angle_distance_mod_pi(self.h, other.h) <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.h.is_finite()
    }

    /// Combined Jones matrix of the analyzer, light passing the QWP first.
    pub fn jones(&self) -> CMatrix2 {
        hwp_jones(self.h) * qwp_jones(self.q)
    }
}

/// The settings named in the experiment description.
pub mod named {
    use super::*;

    /// Measures σz (H/V).
    pub const HV: WaveplateSetting = WaveplateSetting::new(0.0, 0.0);
    /// Measures σx (diagonal/antidiagonal).
    pub const DIAG: WaveplateSetting = WaveplateSetting::new(FRAC_PI_4, FRAC_PI_8);
    /// Measures −σx.
    pub const ANTI_DIAG: WaveplateSetting = WaveplateSetting::new(-FRAC_PI_4, -FRAC_PI_8);
    /// Measures σy (circular).
    pub const CIRC: WaveplateSetting = WaveplateSetting::new(FRAC_PI_4, 0.0);
    /// Measures (σx + σz)/√2.
    pub const PLUS_EIGHTH: WaveplateSetting = WaveplateSetting::new(FRAC_PI_8, FRAC_PI_8 / 2.0);
    /// Measures (σz − σx)/√2.
    pub const MINUS_EIGHTH: WaveplateSetting = WaveplateSetting::new(-FRAC_PI_8, -FRAC_PI_8 / 2.0);
}

/// Half-wave plate with fast axis at `theta`, global phase dropped.
pub fn hwp_jones(theta: f64) -> CMatrix2 {
    let (s, co) = (2.0 * theta).sin_cos();
    Matrix2::new(c(co, 0.0), c(s, 0.0), c(s, 0.0), c(-co, 0.0))
}

/// Quarter-wave plate `R(θ) diag(1, i) R(−θ)`.
pub fn qwp_jones(theta: f64) -> CMatrix2 {
    let (s, co) = theta.sin_cos();
    let rot = |s: f64| Matrix2::new(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0));
    let retarder = Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    rot(s) * retarder * rot(-s)
}

/// A two-outcome (±1) detector observable `a·σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementOperator {
    bloch: Vector3<f64>,
}

impl MeasurementOperator {
    pub fn from_setting(setting: WaveplateSetting) -> Self {
        let w = setting.jones();
        let observable = w.adjoint() * linalg::pauli(2) * w;
        Self {
            bloch: linalg::bloch_components(&observable),
        }
    }

    pub fn bloch(&self) -> Vector3<f64> {
        self.bloch
    }

    pub fn operator(&self) -> CMatrix2 {
        linalg::bloch_operator(&self.bloch)
    }

    /// `(1 ± a·σ)/2` for outcome `+1` (`true`) or `−1` (`false`).
    pub fn projector(&self, plus: bool) -> CMatrix2 {
        let sign = if plus { 1.0 } else { -1.0 };
        (linalg::identity2() + self.operator() * c(sign, 0.0)) * c(0.5, 0.0)
    }
}

pub fn measurement_operator(setting: WaveplateSetting) -> MeasurementOperator {
    MeasurementOperator::from_setting(setting)
}

/// `Tr[ρ (A ⊗ B)]`.
pub fn joint_expectation(rho: &DensityOperator, a: WaveplateSetting, b: WaveplateSetting) -> f64 {
    let a = measurement_operator(a).operator();
    let b = measurement_operator(b).operator();
    rho.expectation(&linalg::kron(&a, &b))
}

/// Probabilities of the four coincidence cells for one setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProbabilities {
    pub ab: f64,
    pub abp: f64,
    pub apb: f64,
    pub apbp: f64,
}

impl JointProbabilities {
    pub fn as_array(&self) -> [f64; 4] {
        [self.ab, self.abp, self.apb, self.apbp]
    }

    /// Equal outcomes count +1, opposite outcomes −1.
    pub fn expectation(&self) -> f64 {
        self.ab - self.abp - self.apb + self.apbp
    }
}

pub fn joint_probabilities(rho: &DensityOperator, a: WaveplateSetting, b: WaveplateSetting) -> JointProbabilities {
    let a = measurement_operator(a);
    let b = measurement_operator(b);
    let p = |sa: bool, sb: bool| rho.expectation(&linalg::kron(&a.projector(sa), &b.projector(sb)));
    JointProbabilities {
        ab: p(true, true),
        abp: p(true, false),
        apb: p(false, true),
        apbp: p(false, false),
    }
}

/// How the eavesdropper rewrites Bob's settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveMode {
    #[default]
    Off,
    /// Only the remaps listed in the experiment description.
    #[serde(alias = "paper-table")]
    PaperTable,
    /// The listed remaps plus `(π/8, π/16) → (0, 0)` when Alice measures H/V.
    #[serde(alias = "max-correlation")]
    MaxCorrelation,
}

impl std::str::FromStr for EveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(EveMode::Off),
            "paper-table" | "paper_table" => Ok(EveMode::PaperTable),
            "max-correlation" | "max_correlation" => Ok(EveMode::MaxCorrelation),
            other => Err(Error::EvePolicy(format!(
                "unknown mode `{other}` (expected off, paper-table or max-correlation)"
            ))),
        }
    }
}

/// One entry of an explicit remap list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemapEntry {
    pub alice_index: usize,
    pub bob_index: usize,
    pub new_setting: WaveplateSetting,
}

/// Substitution table for Bob's effective setting, keyed by the pair of
/// declared setting indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EvePolicy {
    mode: EveMode,
    n_alice: usize,
    n_bob: usize,
    table: BTreeMap<(usize, usize), WaveplateSetting>,
}

impl EvePolicy {
    pub fn off(n_alice: usize, n_bob: usize) -> Self {
        Self {
            mode: EveMode::Off,
            n_alice,
            n_bob,
            table: BTreeMap::new(),
        }
    }

    /// Builds the table for `mode` against the declared setting lists. The
    /// built-in remaps locate their settings by value (modulo π), so setting
    /// order in the lists does not matter. `extra` entries override or extend
    /// the built-in table and are rejected in `off` mode.
    pub fn new(mode: EveMode, alice: &[WaveplateSetting], bob: &[WaveplateSetting], extra: &[RemapEntry]) -> Result<Self> {
        let mut policy = Self::off(alice.len(), bob.len());
        policy.mode = mode;
        if mode == EveMode::Off {
            if !extra.is_empty() {
                return Err(Error::EvePolicy("explicit remap entries require a mode other than off".into()));
            }
            return Ok(policy);
        }

        let find = |list: &[WaveplateSetting], target: WaveplateSetting| {
            list.iter().position(|s| s.approx_eq(&target, SETTING_MATCH_TOL))
        };
        let alice_hv = find(alice, named::HV);
        let alice_diag = find(alice, named::DIAG);
        let bob_plus = find(bob, named::PLUS_EIGHTH);
        let bob_minus = find(bob, named::MINUS_EIGHTH);

        let mut insert = |a: Option<usize>, b: Option<usize>, s: WaveplateSetting| {
            if let (Some(a), Some(b)) = (a, b) {
                policy.table.insert((a, b), s);
            }
        };
        insert(alice_hv, bob_minus, named::HV);
        insert(alice_diag, bob_plus, named::DIAG);
        insert(alice_diag, bob_minus, named::ANTI_DIAG);
        if mode == EveMode::MaxCorrelation {
            insert(alice_hv, bob_plus, named::HV);
        }

        for entry in extra {
            policy.check_indices(entry.alice_index, entry.bob_index)?;
            if !entry.new_setting.is_finite() {
                return Err(Error::EvePolicy(format!(
                    "remap entry ({}, {}) has a non-finite setting",
                    entry.alice_index, entry.bob_index
                )));
            }
            policy.table.insert((entry.alice_index, entry.bob_index), entry.new_setting);
        }
        if policy.table.is_empty() {
            return Err(Error::EvePolicy(
                "none of the attacked settings appear in the declared setting lists".into(),
            ));
        }
        Ok(policy)
    }

    pub fn mode(&self) -> EveMode {
        self.mode
    }

    pub fn entries(&self) -> Vec<RemapEntry> {
        self.table
            .iter()
            .map(|(&(alice_index, bob_index), &new_setting)| RemapEntry {
                alice_index,
                bob_index,
                new_setting,
            })
            .collect()
    }

    fn check_indices(&self, alice_idx: usize, bob_idx: usize) -> Result<()> {
        if alice_idx >= self.n_alice {
            return Err(Error::UnknownSettingIndex {
                side: Side::Alice,
                index: alice_idx,
                declared: self.n_alice,
            });
        }
        if bob_idx >= self.n_bob {
            return Err(Error::UnknownSettingIndex {
                side: Side::Bob,
                index: bob_idx,
                declared: self.n_bob,
            });
        }
        Ok(())
    }

    /// Bob's effective setting when Alice uses setting `alice_idx` and Bob
    /// believes he is using `bob_setting` (his setting `bob_idx`).
    pub fn apply(&self, alice_idx: usize, bob_idx: usize, bob_setting: WaveplateSetting) -> Result<WaveplateSetting> {
        self.check_indices(alice_idx, bob_idx)?;
        Ok(self.table.get(&(alice_idx, bob_idx)).copied().unwrap_or(bob_setting))
    }
}

pub fn apply_eve(policy: &EvePolicy, alice_idx: usize, bob_idx: usize, bob_setting: WaveplateSetting) -> Result<WaveplateSetting> {
    policy.apply(alice_idx, bob_idx, bob_setting)
}
