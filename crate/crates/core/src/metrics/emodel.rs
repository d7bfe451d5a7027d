//! Simplified E-model: one-way delay and packet loss to an R factor, and the
//! R-to-MOS companion curve.

use serde::{Deserialize, Serialize};

/// Delay knee of the delay-impairment term, in milliseconds.
const DELAY_KNEE_MS: f64 = 177.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EModelParams {
    /// Basic signal-to-noise ratio.
    pub r0: f64,
    /// Codec equipment impairment.
    pub ie: f64,
    /// Packet-loss robustness factor.
    pub bpl: f64,
}

impl EModelParams {
    pub const G711: EModelParams = EModelParams {
        r0: 93.2,
        ie: 0.0,
        bpl: 4.3,
    };

    pub const G729A: EModelParams = EModelParams {
        r0: 93.2,
        ie: 11.0,
        bpl: 19.0,
    };
}

impl Default for EModelParams {
    fn default() -> Self {
        EModelParams::G711
    }
}

/// Delay impairment `Id` for a one-way delay in milliseconds.
pub fn delay_impairment(one_way_delay_ms: f64) -> f64 {
    let d = one_way_delay_ms.max(0.0);
    let excess = if d > DELAY_KNEE_MS {
        d - DELAY_KNEE_MS
    } else {
        0.0
    };
    0.024 * d + 0.11 * excess
}

/// Effective equipment impairment under random loss, `loss_fraction` in [0, 1].
pub fn effective_equipment_impairment(loss_fraction: f64, params: &EModelParams) -> f64 {
    let ppl = 100.0 * loss_fraction.clamp(0.0, 1.0);
    params.ie + (95.0 - params.ie) * ppl / (ppl + params.bpl)
}

/// Transmission rating R, clamped to [0, 100].
pub fn e_model_r(one_way_delay_ms: f64, loss_fraction: f64, params: &EModelParams) -> f64 {
    let r = params.r0
        - delay_impairment(one_way_delay_ms)
        - effective_equipment_impairment(loss_fraction, params);
    r.clamp(0.0, 100.0)
}

/// Maps an R factor onto the 1..=4.5 MOS scale.
///
/// The cubic dips slightly below 1 for R under about 6.5; it is floored at 1
/// so the mapping stays monotone.
pub fn mos_from_r(r: f64) -> f64 {
    if r <= 0.0 {
        1.0
    } else if r >= 100.0 {
        4.5
    } else {
        (1.0 + 0.035 * r + 7.0e-6 * r * (r - 60.0) * (100.0 - r)).max(1.0)
    }
}

/// Convenience composition of [`e_model_r`] and [`mos_from_r`].
pub fn mos(one_way_delay_ms: f64, loss_fraction: f64, params: &EModelParams) -> f64 {
    mos_from_r(e_model_r(one_way_delay_ms, loss_fraction, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G711: EModelParams = EModelParams::G711;

    #[test]
    fn zero_impairment_identity() {
        assert_eq!(e_model_r(0.0, 0.0, &G711), 93.2);
    }

    #[test]
    fn hundred_ms_delay() {
        // Id = 0.024 * 100 = 2.4, below the knee.
        assert!((e_model_r(100.0, 0.0, &G711) - 90.8).abs() < 1e-12);
    }

    #[test]
    fn total_loss() {
        // Ie_eff = 95 * 100 / 104.3
        let ie_eff = 95.0 * 100.0 / 104.3;
        assert!((effective_equipment_impairment(1.0, &G711) - ie_eff).abs() < 1e-12);
        assert!((e_model_r(0.0, 1.0, &G711) - (93.2 - ie_eff)).abs() < 1e-12);
        assert!((e_model_r(0.0, 1.0, &G711) - 2.1166).abs() < 1e-3);
    }

    #[test]
    fn delay_above_knee_adds_second_term() {
        let id = delay_impairment(277.3);
        assert!((id - (0.024 * 277.3 + 0.11 * 100.0)).abs() < 1e-9);
    }

    #[test]
    fn r_is_clamped() {
        assert_eq!(e_model_r(2_000.0, 1.0, &G711), 0.0);
        let generous = EModelParams { r0: 150.0, ..G711 };
        assert_eq!(e_model_r(0.0, 0.0, &generous), 100.0);
    }

    #[test]
    fn mos_clamps() {
        assert_eq!(mos_from_r(0.0), 1.0);
        assert_eq!(mos_from_r(-5.0), 1.0);
        assert_eq!(mos_from_r(100.0), 4.5);
    }

    #[test]
    fn mos_at_r0() {
        // 1 + 0.035*93.2 + 7e-6 * 93.2 * 33.2 * 6.8 = 4.409286...
        assert!((mos_from_r(93.2) - 4.409).abs() < 1e-3);
        assert!((mos_from_r(93.2) - 4.409_286_4).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn mos_non_increasing_in_delay(l in 0.0f64..=1.0, d in 0.0f64..600.0, step in 0.0f64..100.0) {
            prop_assert!(mos(d + step, l, &G711) <= mos(d, l, &G711) + 1e-12);
        }

        #[test]
        fn mos_non_increasing_in_loss(d in 0.0f64..600.0, l in 0.0f64..=1.0, step in 0.0f64..=1.0) {
            let l2 = (l + step).min(1.0);
            prop_assert!(mos(d, l2, &G711) <= mos(d, l, &G711) + 1e-12);
        }

        #[test]
        fn mos_in_range(d in 0.0f64..5_000.0, l in 0.0f64..=1.0) {
            let m = mos(d, l, &G711);
            prop_assert!((1.0..=4.5).contains(&m));
        }
    }

    #[test]
    fn monotone_on_grid() {
        let delays: Vec<f64> = (0..=60).map(|i| i as f64 * 10.0).collect();
        let losses: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        for &l in &losses {
            for w in delays.windows(2) {
                assert!(mos(w[1], l, &G711) <= mos(w[0], l, &G711));
            }
        }
        for &d in &delays {
            for w in losses.windows(2) {
                assert!(mos(d, w[1], &G711) <= mos(d, w[0], &G711));
            }
        }
    }
}
