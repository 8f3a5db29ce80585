//! Closed-form energy decay models: single and dual-slope EDCs, the mix
//! that places a dual-slope knee at a given level, and solvers that pick
//! decay times so the measured T30 of the model hits a target.

use alloc::vec::Vec;

use libm::{exp, log, log10, pow};

use crate::analysis;
use crate::error::{Error, Result};

/// Energy decay rate (1/s) for a 60 dB decay time.
pub fn decay_rate(t60: f64) -> f64 {
    6.0 * core::f64::consts::LN_10 / t60
}

/// Normalized two-component EDC `a·e^{-k1 t} + b·e^{-k2 t}` with `a + b = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSlopeMix {
    pub t1: f64,
    pub t2: f64,
    pub a: f64,
    pub b: f64,
    /// Time at which both components are equal.
    pub knee_time: f64,
}

impl DualSlopeMix {
    /// Single exponential decay.
    pub fn single(t: f64) -> Self {
        Self {
            t1: t,
            t2: t,
            a: 1.0,
            b: 0.0,
            knee_time: f64::INFINITY,
        }
    }

    /// Remaining fraction of tail energy `t` seconds after onset.
    pub fn remaining(&self, t: f64) -> f64 {
        self.a * exp(-decay_rate(self.t1) * t) + self.b * exp(-decay_rate(self.t2) * t)
    }

    pub fn edc_db(&self, t: f64) -> f64 {
        10.0 * log10(self.remaining(t))
    }

    /// Energy ratio of the slow component to the fast one, in dB.
    pub fn mix_db(&self) -> f64 {
        10.0 * log10(self.b / self.a)
    }
}

/// Mix of a fast (`t1`) and slow (`t2`) decay whose component lines cross
/// at `knee_db` re the start of the EDC.
pub fn mix_for_knee(t1: f64, t2: f64, knee_db: f64) -> Result<DualSlopeMix> {
    if !(t1 > 0.0 && t2 > t1) {
        return Err(Error::Config(alloc::format!(
            "coupled decay {t2} s must be slower than main decay {t1} s"
        )));
    }
    if !(knee_db < 0.0) {
        return Err(Error::Config("knee level must be negative".into()));
    }
    let (k1, k2) = (decay_rate(t1), decay_rate(t2));
    let q = pow(10.0, knee_db / 10.0);
    // q·(e^{k1 t} + e^{k2 t}) = 1, increasing in t; solve in log space.
    let f = |t: f64| log(q) + log(exp(k1 * t) + exp(k2 * t));
    let (mut lo, mut hi) = (0.0, 1.0);
    if f(lo) >= 0.0 {
        return Err(Error::Config("knee level must lie below -3 dB".into()));
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tk = 0.5 * (lo + hi);
    // Evaluate in log space so vanishing mixes do not overflow.
    let a = exp(log(q) + k1 * tk);
    let b = exp(log(q) + k2 * tk);
    let s = a + b;
    Ok(DualSlopeMix {
        t1,
        t2,
        a: a / s,
        b: b / s,
        knee_time: tk,
    })
}

/// Sampled EDC (dB) of discrete early arrivals plus a decaying tail.
///
/// `early` holds (arrival time, energy) pairs, `tail_energy` is the tail
/// energy remaining at `onset`. The curve is sampled at `rate` Hz until it
/// falls 80 dB or `max_time` is reached.
pub fn model_edc(
    early: &[(f64, f64)],
    tail: &DualSlopeMix,
    tail_energy: f64,
    onset: f64,
    rate: f64,
    max_time: f64,
) -> Vec<f64> {
    let mut events: Vec<(f64, f64)> = early.to_vec();
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let early_total: f64 = events.iter().map(|e| e.1).sum();
    let total = early_total + tail_energy;
    let mut out = Vec::new();
    let mut consumed = 0.0;
    let mut next = 0;
    let n = (max_time * rate) as usize;
    for i in 0..=n {
        let t = i as f64 / rate;
        while next < events.len() && events[next].0 < t {
            consumed += events[next].1;
            next += 1;
        }
        let tail_left = if t <= onset {
            tail_energy
        } else {
            tail_energy * tail.remaining(t - onset)
        };
        let e = ((early_total - consumed).max(0.0) + tail_left) / total;
        let db = 10.0 * log10(e.max(1e-30));
        out.push(db);
        if db < -80.0 {
            break;
        }
    }
    out
}

/// T30 of a pure dual-slope tail, as the EDC line fit would measure it.
pub fn combined_t30(mix: &DualSlopeMix) -> f64 {
    let rate = 2000.0 / mix.t2.max(mix.t1);
    let edc = model_edc(&[], mix, 1.0, 0.0, rate, 10.0 * mix.t2.max(mix.t1));
    analysis::decay_time(&edc, rate, -5.0, -35.0).unwrap_or(mix.t1)
}

/// Bisection for an increasing function on `[lo, hi]`.
pub fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..80 {
        if hi - lo <= 1e-10 * hi.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Main-room decay time that, coupled with a slower `t2` at `knee_db`,
/// yields a combined T30 of `target`. The main decay is searched between
/// `t2 / 2.5` and just below `t2`.
pub fn solve_main_t30(t2: f64, knee_db: f64, target: f64) -> Result<f64> {
    let f = |t1: f64| mix_for_knee(t1, t2, knee_db).map(|m| combined_t30(&m));
    let (lo, hi) = (t2 / 2.5, t2 * 0.999);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if target < flo || target > fhi {
        return Err(Error::Calibration(alloc::format!(
            "combined T30 {target} s unreachable with coupled decay {t2} s (range {flo:.3}..{fhi:.3} s)"
        )));
    }
    Ok(bisect(lo, hi, target, |t| f(t).unwrap_or(0.0)))
}

/// Coupled decay time for a fixed slow/fast `ratio` such that the combined
/// T30 equals `target`. Both decay times scale together, so the combined
/// T30 is proportional to the slow one.
pub fn solve_coupled_t30(ratio: f64, knee_db: f64, target: f64) -> Result<f64> {
    let unit = mix_for_knee(1.0 / ratio, 1.0, knee_db)?;
    Ok(target / combined_t30(&unit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_mix_places_crossing() {
        let m = mix_for_knee(1.6, 3.2, -15.0).unwrap();
        assert!((m.a + m.b - 1.0).abs() < 1e-12);
        let l1 = 10.0 * log10(m.a) - 10.0 * log10(core::f64::consts::E) * decay_rate(1.6) * m.knee_time;
        assert!((l1 + 15.0).abs() < 1e-9);
        assert!(mix_for_knee(2.0, 1.0, -15.0).is_err());
    }

    #[test]
    fn vanishing_mix_is_single_slope() {
        let m = mix_for_knee(1.0, 2.0, -200.0).unwrap();
        // b = q^(1 - t1/t2) for a knee q far below the start.
        assert!((m.b / 1e-10 - 1.0).abs() < 1e-6);
        assert!((combined_t30(&m) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn ratio_solver_scales_linearly() {
        let t2 = solve_coupled_t30(2.0, -15.0, 1.6).unwrap();
        let m = mix_for_knee(t2 / 2.0, t2, -15.0).unwrap();
        assert!((combined_t30(&m) - 1.6).abs() < 1e-3);
        assert!(t2 > 1.8 && t2 < 2.0, "{t2}");
    }

    #[test]
    fn main_solver_hits_target() {
        let t1 = solve_main_t30(0.66, -25.0, 0.54).unwrap();
        let m = mix_for_knee(t1, 0.66, -25.0).unwrap();
        assert!((combined_t30(&m) - 0.54).abs() < 1e-3);
        assert!(solve_main_t30(0.66, -25.0, 0.2).is_err());
    }
}
