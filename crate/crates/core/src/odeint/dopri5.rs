//! Dormand–Prince 5(4) with an embedded error estimate, FSAL stage reuse and
//! a PI step-size controller.

use super::{SolveStats, SolverConfig};
use crate::error::{check_finite, Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Fifth-order solution minus embedded fourth-order solution.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` (either direction).
///
/// A step is accepted when every component satisfies
/// `|err_i| <= atol + rtol * max(|y_i|, |y_new_i|)`.
pub fn dopri5_integrate<F>(f: F, y0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_controlled(f, y0, t0, t1, cfg, y0.len())
}

/// As [`dopri5_integrate`], but only the first `err_len` components enter
/// the error norm.
pub(crate) fn integrate_controlled<F>(
    mut f: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    err_len: usize,
) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    check_finite("initial state", y0)?;
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Numeric("non-finite integration bounds".into()));
    }
    let n = y0.len();
    let err_len = err_len.min(n);
    let mut stats = SolveStats::default();
    let mut y = y0.to_vec();
    if t0 == t1 || n == 0 {
        return Ok((y, stats));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();

    let mut call = |t: f64, y: &[f64], out: &mut [f64], stats: &mut SolveStats| -> Result<()> {
        stats.evaluations += 1;
        f(t, y, out)?;
        check_finite("vector field output", out)
    };

    let mut k1 = vec![0.0; n];
    call(t0, &y, &mut k1, &mut stats)?;

    let mut h = match cfg.initial_step {
        Some(h) => h.abs().min(span),
        None => initial_step(&mut call, &y, &k1, t0, dir, span, cfg, err_len, &mut stats)?,
    };

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    let mut t = t0;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::Divergence { max_steps: cfg.max_steps, t });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t });
        }
        let remaining = (t1 - t) * dir;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;

        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        call(t + C2 * hs, &tmp, &mut k2, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        call(t + C3 * hs, &tmp, &mut k3, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        call(t + C4 * hs, &tmp, &mut k4, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        call(t + C5 * hs, &tmp, &mut k5, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        call(t + hs, &tmp, &mut k6, &mut stats)?;
        for i in 0..n {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        call(t_new, &y_new, &mut k7, &mut stats)?;

        let mut err: f64 = 0.0;
        for i in 0..err_len {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max(e.abs() / sc);
        }
        if !err.is_finite() {
            return Err(Error::Numeric(format!("non-finite error estimate at t = {t}")));
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            stats.accepted += 1;
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_FACTOR, 1.0 / MIN_FACTOR);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            stats.last_step = h;
            last_rejected = false;
            if last {
                return Ok((y, stats));
            }
            h = h_new;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / MIN_FACTOR);
            last_rejected = true;
        }
    }
}

/// Starting step size from the initial derivative and one explicit Euler probe.
#[allow(clippy::too_many_arguments)]
fn initial_step<C>(
    call: &mut C,
    y0: &[f64],
    f0: &[f64],
    t0: f64,
    dir: f64,
    span: f64,
    cfg: &SolverConfig,
    err_len: usize,
    stats: &mut SolveStats,
) -> Result<f64>
where
    C: FnMut(f64, &[f64], &mut [f64], &mut SolveStats) -> Result<()>,
{
    let m = err_len.max(1) as f64;
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sk).take(err_len).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / m).sqrt();
    let dnf = rms(f0);
    let dny = rms(y0);
    let mut h = if dnf <= 1e-5 || dny <= 1e-5 { 1e-6 } else { 0.01 * dny / dnf };
    h = h.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    call(t0 + dir * h, &y1, &mut f1, stats)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let der2 = rms(&diff) / h;
    let der12 = der2.abs().max(dnf);
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    Ok((100.0 * h).min(h1).min(span))
}
