//! Right-hand side of the discretized shallow-water system.
//!
//! The system has the form `dx/dt = L x + Q(x)` with `L` linear (Coriolis,
//! pressure gradient, friction, diffusion and the mean-depth flux) and `Q`
//! quadratic (advection and the perturbation-height flux). The Taylor
//! Jacobians in [`crate::jacobian`] are assembled from the sparse matrices
//! of `L` and of the Jacobian of `Q`, both provided here.

use super::params::ModelParams;
use super::state::StateVector;
use crate::error::{Error, Result};
use crate::sparse::{CsrBuilder, CsrMatrix};

/// Neighbour offsets of cell `k = i*d + j`.
#[derive(Clone, Copy)]
struct Stencil {
    k: usize,
    xp: usize,
    xm: usize,
    yp: usize,
    ym: usize,
}

#[inline]
fn stencil(d: usize, i: usize, j: usize) -> Stencil {
    let ip = if i + 1 == d { 0 } else { i + 1 };
    let im = if i == 0 { d - 1 } else { i - 1 };
    let jp = if j + 1 == d { 0 } else { j + 1 };
    let jm = if j == 0 { d - 1 } else { j - 1 };
    Stencil {
        k: i * d + j,
        xp: ip * d + j,
        xm: im * d + j,
        yp: i * d + jp,
        ym: i * d + jm,
    }
}

fn check_dims(x: &StateVector, p: &ModelParams) -> Result<()> {
    if x.d() != p.d {
        return Err(Error::Dimension {
            expected: p.n(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Full tendency `dx/dt`. Rejects non-finite input.
pub fn tendency(x: &StateVector, p: &ModelParams) -> Result<StateVector> {
    check_dims(x, p)?;
    x.check_finite()?;
    let mut out = vec![0.0; x.len()];
    tendency_into(x.as_slice(), p, &mut out);
    StateVector::from_vec(p.d, out)
}

/// Unchecked tendency kernel used by the integrator.
pub fn tendency_into(x: &[f64], p: &ModelParams, out: &mut [f64]) {
    let d = p.d;
    let d2 = d * d;
    let (u, rest) = x.split_at(d2);
    let (v, h) = rest.split_at(d2);
    let (du, rest) = out.split_at_mut(d2);
    let (dv, dh) = rest.split_at_mut(d2);
    let c1 = 0.5 / p.delta;
    let cnu = p.nu / (p.delta * p.delta);
    let gc = p.g * c1;
    let quad = if p.linear_only { 0.0 } else { 1.0 };
    let depth = &p.depth;
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            let k = s.k;
            let (uk, vk) = (u[k], v[k]);
            let dux = u[s.xp] - u[s.xm];
            let duy = u[s.yp] - u[s.ym];
            let dvx = v[s.xp] - v[s.xm];
            let dvy = v[s.yp] - v[s.ym];
            let lap_u = u[s.xp] + u[s.xm] + u[s.yp] + u[s.ym] - 4.0 * uk;
            let lap_v = v[s.xp] + v[s.xm] + v[s.yp] + v[s.ym] - 4.0 * vk;
            let f = p.coriolis[k];
            du[k] = f * vk - gc * (h[s.xp] - h[s.xm]) - p.cb * uk + cnu * lap_u - quad * c1 * (duy * vk + dux * uk);
            dv[k] = -f * uk - gc * (h[s.yp] - h[s.ym]) - p.cb * vk + cnu * lap_v - quad * c1 * (dvx * uk + dvy * vk);
            let eta = |m: usize| depth[m] + quad * h[m];
            dh[k] = -c1 * (eta(k) * (dux + dvy) + uk * (eta(s.xp) - eta(s.xm)) + vk * (eta(s.yp) - eta(s.ym)));
        }
    }
}

/// Linear part `L x` of the tendency.
pub fn linear_tendency(x: &StateVector, p: &ModelParams) -> Result<StateVector> {
    check_dims(x, p)?;
    let lin = p.clone().with_linear_only(true);
    let mut out = vec![0.0; x.len()];
    tendency_into(x.as_slice(), &lin, &mut out);
    StateVector::from_vec(p.d, out)
}

/// Quadratic part `Q(x)` of the tendency (zero for a linear-only model).
pub fn quadratic_tendency(x: &StateVector, p: &ModelParams) -> Result<StateVector> {
    let full = tendency(x, p)?;
    let lin = linear_tendency(x, p)?;
    let diff: Vec<f64> = full.as_slice().iter().zip(lin.as_slice()).map(|(a, b)| a - b).collect();
    StateVector::from_vec(p.d, diff)
}

/// Sparse matrix of the linear part `L`.
pub fn linear_jacobian(p: &ModelParams) -> CsrMatrix {
    let d = p.d;
    let d2 = d * d;
    let (ou, ov, oh) = (0, d2, 2 * d2);
    let c1 = 0.5 / p.delta;
    let cnu = p.nu / (p.delta * p.delta);
    let gc = p.g * c1;
    let mut b = CsrBuilder::with_capacity(3 * d2, 3 * d2, 21 * d2);
    // u rows
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            b.add(ou + s.k, -p.cb - 4.0 * cnu);
            for m in [s.xp, s.xm, s.yp, s.ym] {
                b.add(ou + m, cnu);
            }
            b.add(ov + s.k, p.coriolis[s.k]);
            b.add(oh + s.xp, -gc);
            b.add(oh + s.xm, gc);
            b.finish_row();
        }
    }
    // v rows
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            b.add(ov + s.k, -p.cb - 4.0 * cnu);
            for m in [s.xp, s.xm, s.yp, s.ym] {
                b.add(ov + m, cnu);
            }
            b.add(ou + s.k, -p.coriolis[s.k]);
            b.add(oh + s.yp, -gc);
            b.add(oh + s.ym, gc);
            b.finish_row();
        }
    }
    // h rows
    let hb = &p.depth;
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            let hk = hb[s.k];
            b.add(ou + s.xp, -c1 * hk);
            b.add(ou + s.xm, c1 * hk);
            b.add(ov + s.yp, -c1 * hk);
            b.add(ov + s.ym, c1 * hk);
            b.add(ou + s.k, -c1 * (hb[s.xp] - hb[s.xm]));
            b.add(ov + s.k, -c1 * (hb[s.yp] - hb[s.ym]));
            b.finish_row();
        }
    }
    b.build()
}

/// Jacobian of the quadratic part evaluated at `y`, i.e. the matrix of
/// `w -> 2 B(y, w)` where `B` is the symmetric bilinear form with `Q(x) = B(x, x)`.
pub fn quadratic_jacobian(y: &[f64], p: &ModelParams) -> CsrMatrix {
    let d = p.d;
    let d2 = d * d;
    if p.linear_only {
        return CsrMatrix::zeros(3 * d2, 3 * d2);
    }
    let (ou, ov, oh) = (0, d2, 2 * d2);
    let (yu, rest) = y.split_at(d2);
    let (yv, yh) = rest.split_at(d2);
    let c1 = 0.5 / p.delta;
    let mut b = CsrBuilder::with_capacity(3 * d2, 3 * d2, 24 * d2);
    // u rows: -c1 (du/dy v + du/dx u)
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            let (uk, vk) = (yu[s.k], yv[s.k]);
            b.add(ou + s.yp, -c1 * vk);
            b.add(ou + s.ym, c1 * vk);
            b.add(ov + s.k, -c1 * (yu[s.yp] - yu[s.ym]));
            b.add(ou + s.xp, -c1 * uk);
            b.add(ou + s.xm, c1 * uk);
            b.add(ou + s.k, -c1 * (yu[s.xp] - yu[s.xm]));
            b.finish_row();
        }
    }
    // v rows: -c1 (dv/dx u + dv/dy v)
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            let (uk, vk) = (yu[s.k], yv[s.k]);
            b.add(ov + s.xp, -c1 * uk);
            b.add(ov + s.xm, c1 * uk);
            b.add(ou + s.k, -c1 * (yv[s.xp] - yv[s.xm]));
            b.add(ov + s.yp, -c1 * vk);
            b.add(ov + s.ym, c1 * vk);
            b.add(ov + s.k, -c1 * (yv[s.yp] - yv[s.ym]));
            b.finish_row();
        }
    }
    // h rows: -c1 (h (du/dx + dv/dy) + u dh/dx + v dh/dy)
    for i in 0..d {
        for j in 0..d {
            let s = stencil(d, i, j);
            let (uk, vk, hk) = (yu[s.k], yv[s.k], yh[s.k]);
            b.add(oh + s.k, -c1 * ((yu[s.xp] - yu[s.xm]) + (yv[s.yp] - yv[s.ym])));
            b.add(ou + s.xp, -c1 * hk);
            b.add(ou + s.xm, c1 * hk);
            b.add(ov + s.yp, -c1 * hk);
            b.add(ov + s.ym, c1 * hk);
            b.add(ou + s.k, -c1 * (yh[s.xp] - yh[s.xm]));
            b.add(oh + s.xp, -c1 * uk);
            b.add(oh + s.xm, c1 * uk);
            b.add(ov + s.k, -c1 * (yh[s.yp] - yh[s.ym]));
            b.add(oh + s.yp, -c1 * vk);
            b.add(oh + s.ym, c1 * vk);
            b.finish_row();
        }
    }
    b.build()
}

/// Jacobian of the full tendency at `x`.
pub fn tendency_jacobian(x: &[f64], p: &ModelParams) -> CsrMatrix {
    let lin = linear_jacobian(p);
    let quad = quadratic_jacobian(x, p);
    CsrMatrix::linear_combination(&[(1.0, &lin), (1.0, &quad)])
}
