//! Mean-square stability of the uncontrolled system.
//!
//! For `u = 0` the second moment `M(t) = E x xᵀ` obeys the closed linear ODE
//! `M' = AM + MAᵀ + Σ_j C_j M C_jᵀ`. In column-major `vec` coordinates its
//! generator is `L = A⊗I + I⊗A + Σ_j C_j⊗C_j`, and the system is
//! exponentially stable in the mean square exactly when `L` is Hurwitz.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{spectral_abscissa, Mat};
use crate::model::SystemModel;

/// Abscissas above `-DEFAULT_MARGIN_FLOOR` are not certified as stable.
pub const DEFAULT_MARGIN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    /// Largest real part in the spectrum of `A`.
    pub hurwitz_abscissa: f64,
    /// Largest real part in the spectrum of the second-moment generator.
    pub ms_abscissa: f64,
    pub verdict: Verdict,
    /// `−max(hurwitz_abscissa, ms_abscissa)`; positive iff stable.
    pub margin: f64,
}

impl StabilityCertificate {
    pub fn is_stable(&self) -> bool {
        self.verdict == Verdict::Stable
    }
}

/// The n²×n² generator of the second-moment equation.
pub fn second_moment_generator(sys: &SystemModel) -> Mat {
    let n = sys.n();
    let id = Mat::identity(n, n);
    let mut l = sys.a().kronecker(&id) + id.kronecker(sys.a());
    for c in sys.noise() {
        l += c.kronecker(c);
    }
    l
}

pub fn check_stability(sys: &SystemModel) -> Result<StabilityCertificate> {
    check_stability_with_floor(sys, DEFAULT_MARGIN_FLOOR)
}

pub fn check_stability_with_floor(
    sys: &SystemModel,
    margin_floor: f64,
) -> Result<StabilityCertificate> {
    let hurwitz_abscissa = spectral_abscissa(sys.a())?;
    let ms_abscissa = spectral_abscissa(&second_moment_generator(sys))?;
    let worst = hurwitz_abscissa.max(ms_abscissa);
    let verdict = if worst < -margin_floor {
        Verdict::Stable
    } else {
        Verdict::Unstable
    };
    Ok(StabilityCertificate {
        hurwitz_abscissa,
        ms_abscissa,
        verdict,
        margin: -worst,
    })
}
