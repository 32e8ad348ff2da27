use super::dynamics::Dynamics;
use super::Scheme;
use crate::brownian::BrownianMotion;
use crate::error::{Result, SdeError};
use crate::systems::Interpretation;

/// Counters accumulated over one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Stats {
    pub nfe_drift: u64,
    pub nfe_diffusion: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub max_error_ratio: f64,
}

/// Preallocated buffers so that stepping performs no heap allocation of its own.
pub(crate) struct Workspace {
    f: Vec<f64>,
    g: Vec<f64>,
    sq: Vec<f64>,
    pred: Vec<f64>,
    f2: Vec<f64>,
    g2: Vec<f64>,
    y_full: Vec<f64>,
    y_half: Vec<f64>,
    y_two: Vec<f64>,
    weights: Vec<f64>,
    dw: Vec<f64>,
    w_prev: Vec<f64>,
    w_mid: Vec<f64>,
    w_next: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize, m: usize) -> Self {
        let v = |k| vec![0.0; k];
        Self {
            f: v(n),
            g: v(n),
            sq: v(n),
            pred: v(n),
            f2: v(n),
            g2: v(n),
            y_full: v(n),
            y_half: v(n),
            y_two: v(n),
            weights: v(m),
            dw: v(m),
            w_prev: v(m),
            w_mid: v(m),
            w_next: v(m),
        }
    }
}

/// Adaptive controller state carried across segments.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Controller {
    pub h: f64,
    pub err_prev: f64,
}

const K_I: f64 = 0.4 / 2.0;
const K_P: f64 = 0.2 / 2.0;

/// Number of fixed steps covering `[a, b]`.
pub(crate) fn mesh_len(a: f64, b: f64, h: f64) -> usize {
    ((b - a) / h - 1e-9).ceil().max(1.0) as usize
}

/// Point `k` of the fixed mesh on `[a, b]`.
///
/// The plain mesh is `a + k h` with `b` exact. The mirrored mesh is the negated
/// plain mesh of `[-b, -a]`, walked in reverse, so a backward solve in
/// reflected time visits bit-identical (negated) points of the forward solve.
pub(crate) fn mesh_point(a: f64, b: f64, h: f64, n: usize, k: usize, mirrored: bool) -> f64 {
    if !mirrored {
        if k == n {
            b
        } else {
            a + k as f64 * h
        }
    } else if k == 0 {
        a
    } else {
        -((-b) + (n - k) as f64 * h)
    }
}

/// One step of `scheme` from `(t, y)` over `h` with increment `dw`.
fn step<D: Dynamics + ?Sized>(
    dy: &D,
    scheme: Scheme,
    t: f64,
    h: f64,
    y: &[f64],
    dw: &[f64],
    out: &mut [f64],
    ws: &mut Workspace,
    stats: &mut Stats,
) {
    let n = y.len();
    let ito = dy.interpretation() == Interpretation::Ito;
    let Workspace {
        f,
        g,
        sq,
        pred,
        f2,
        g2,
        weights,
        ..
    } = ws;
    stats.nfe_drift += 1;
    stats.nfe_diffusion += 1;
    match scheme {
        Scheme::EulerMaruyama => {
            dy.drift(t, y, f);
            if ito {
                dy.noise(t, y, dw, g);
            } else {
                weights.fill(1.0);
                dy.noise_with_square(t, y, dw, weights, g, sq);
                f.iter_mut().zip(sq.iter()).for_each(|(f, s)| *f += 0.5 * s);
            }
            for i in 0..n {
                out[i] = y[i] + f[i] * h + g[i];
            }
        }
        Scheme::Milstein => {
            dy.drift(t, y, f);
            for (w, d) in weights.iter_mut().zip(dw) {
                *w = if ito { d * d - h } else { d * d };
            }
            dy.noise_with_square(t, y, dw, weights, g, sq);
            for i in 0..n {
                out[i] = y[i] + f[i] * h + g[i] + 0.5 * sq[i];
            }
        }
        Scheme::Heun => {
            debug_assert!(!ito, "Heun integrates Stratonovich dynamics");
            dy.drift(t, y, f);
            dy.noise(t, y, dw, g);
            for i in 0..n {
                pred[i] = y[i] + f[i] * h + g[i];
            }
            dy.drift(t + h, pred, f2);
            dy.noise(t + h, pred, dw, g2);
            stats.nfe_drift += 1;
            stats.nfe_diffusion += 1;
            for i in 0..n {
                out[i] = y[i] + 0.5 * (f[i] + f2[i]) * h + 0.5 * (g[i] + g2[i]);
            }
        }
    }
}

fn diverged(y: &[f64]) -> bool {
    y.iter().any(|v| !v.is_finite())
}

/// Integrates `y` in place over `[a, b]` on the fixed mesh of step `h`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_fixed<D: Dynamics + ?Sized, B: BrownianMotion + ?Sized>(
    dy: &D,
    scheme: Scheme,
    y: &mut [f64],
    a: f64,
    b: f64,
    h: f64,
    mirrored: bool,
    bm: &B,
    ws: &mut Workspace,
    stats: &mut Stats,
) -> Result<()> {
    if b <= a {
        return Ok(());
    }
    let n = mesh_len(a, b, h);
    let mut t = mesh_point(a, b, h, n, 0, mirrored);
    bm.query_into(t, &mut ws.w_prev)?;
    let mut next = std::mem::take(&mut ws.y_full);
    for k in 1..=n {
        let t1 = mesh_point(a, b, h, n, k, mirrored);
        bm.query_into(t1, &mut ws.w_next)?;
        for i in 0..ws.dw.len() {
            ws.dw[i] = ws.w_next[i] - ws.w_prev[i];
        }
        let dw = std::mem::take(&mut ws.dw);
        step(dy, scheme, t, t1 - t, y, &dw, &mut next, ws, stats);
        ws.dw = dw;
        stats.accepted += 1;
        if diverged(&next) {
            ws.y_full = next;
            return Err(SdeError::Divergence { t: t1 });
        }
        y.copy_from_slice(&next);
        std::mem::swap(&mut ws.w_prev, &mut ws.w_next);
        t = t1;
    }
    ws.y_full = next;
    Ok(())
}

fn error_ratio(y0: &[f64], coarse: &[f64], fine: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = y0.len() as f64;
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let tol = atol + rtol * y0[i].abs().max(fine[i].abs());
            let e = (fine[i] - coarse[i]) / tol;
            e * e
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrates `y` in place over `[a, b]` with step doubling and a PI
/// controller.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_adaptive<D: Dynamics + ?Sized, B: BrownianMotion + ?Sized>(
    dy: &D,
    scheme: Scheme,
    y: &mut [f64],
    a: f64,
    b: f64,
    rtol: f64,
    atol: f64,
    h_min: f64,
    ctrl: &mut Controller,
    bm: &B,
    ws: &mut Workspace,
    stats: &mut Stats,
) -> Result<()> {
    if b <= a {
        return Ok(());
    }
    let mut t = a;
    bm.query_into(t, &mut ws.w_prev)?;
    let mut full = std::mem::take(&mut ws.y_full);
    let mut half = std::mem::take(&mut ws.y_half);
    let mut two = std::mem::take(&mut ws.y_two);
    let mut dw = std::mem::take(&mut ws.dw);
    let result = (|| {
        while t < b {
            if ctrl.h < h_min {
                return Err(SdeError::StepUnderflow { t, h: ctrl.h });
            }
            let truncated = ctrl.h >= b - t;
            let t1 = if truncated { b } else { t + ctrl.h };
            let h = t1 - t;
            let tm = t + 0.5 * h;
            bm.query_into(tm, &mut ws.w_mid)?;
            bm.query_into(t1, &mut ws.w_next)?;

            for i in 0..dw.len() {
                dw[i] = ws.w_next[i] - ws.w_prev[i];
            }
            step(dy, scheme, t, h, y, &dw, &mut full, ws, stats);
            for i in 0..dw.len() {
                dw[i] = ws.w_mid[i] - ws.w_prev[i];
            }
            step(dy, scheme, t, tm - t, y, &dw, &mut half, ws, stats);
            for i in 0..dw.len() {
                dw[i] = ws.w_next[i] - ws.w_mid[i];
            }
            step(dy, scheme, tm, t1 - tm, &half, &dw, &mut two, ws, stats);

            let err = if diverged(&full) || diverged(&two) {
                f64::INFINITY
            } else {
                error_ratio(y, &full, &two, atol, rtol)
            };
            let factor = if err == 0.0 {
                5.0
            } else {
                ((1.0 / err).powf(K_I) * (ctrl.err_prev / err).powf(K_P)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                stats.accepted += 1;
                stats.max_error_ratio = stats.max_error_ratio.max(err);
                y.copy_from_slice(&two);
                std::mem::swap(&mut ws.w_prev, &mut ws.w_next);
                t = t1;
                ctrl.err_prev = err.max(1e-4);
                if !truncated {
                    ctrl.h = h * factor;
                }
            } else {
                stats.rejected += 1;
                ctrl.h = h * factor;
            }
        }
        Ok(())
    })();
    ws.y_full = full;
    ws.y_half = half;
    ws.y_two = two;
    ws.dw = dw;
    result
}
