use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::background::{kalman_information_oracle, ImplicitBackground, WindowRecord};
use crate::error::Result;
use crate::jacobian::{build_inverse_jacobian, build_jacobian, JacobianChain, JacobianConfig};
use crate::linalg::{dot, norm, sub};
use crate::obs::{generate_observations, ObsOperator, Scenario};
use crate::swe::{benchmark_initial_state, benchmark_params, integrate, step, total_energy, total_mass, ModelParams};
use crate::var4d::{DiagonalBackground, SolverOptions, WindowProblem};

/// Outcome of one runtime invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seconds: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn check(name: &'static str, threshold: f64, f: impl FnOnce() -> Result<f64>) -> Result<Check> {
    let started = Instant::now();
    let value = f()?;
    Ok(Check {
        name,
        value,
        threshold,
        passed: value < threshold,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn perturbed(d: usize, seed: u64) -> Result<(ModelParams, crate::swe::StateVector)> {
    let p = benchmark_params(d, 1e4)?;
    let mut x = benchmark_initial_state(d, 1e4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (a, z) in x.as_mut_slice().iter_mut().zip(gaussian(&mut rng, p.n())) {
        *a += 0.1 * z;
    }
    Ok((p, x))
}

/// Runs the quick invariant suite: conservation, Jacobian fidelity, adjoint
/// consistency and the linear Kalman equivalence.
pub fn validate_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    out.push(check("mass drift per step (d=21, 1000 steps)", 1e-12, || {
        let p = benchmark_params(21, 1e4)?;
        let mut x = benchmark_initial_state(21, 1e4);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let next = step(&x, &p, 1.0)?;
            let (m0, m1) = (total_mass(&x, &p), total_mass(&next, &p));
            worst = worst.max((m1 - m0).abs() / m0.abs());
            x = next;
        }
        Ok(worst)
    })?);

    out.push(check("inviscid energy drift (100 steps)", 1e-6, || {
        let mut p = benchmark_params(21, 1e4)?;
        p.nu = 0.0;
        p.cb = 0.0;
        let x = benchmark_initial_state(21, 1e4);
        let tr = integrate(&x, &p, 0.0, 10.0, 0.1, &[10.0])?;
        let e0 = total_energy(&x, &p);
        Ok((total_energy(&tr.states[0], &p) - e0).abs() / e0.abs())
    })?);

    out.push(check("Jacobian vs finite differences (d=5)", 1e-6, || {
        let (p, x) = perturbed(5, 1)?;
        let cfg = JacobianConfig::default();
        let j = build_jacobian(&x, &p, 10.0, cfg.l_max, cfg.substeps)?;
        let flow = |y: &crate::swe::StateVector| -> Result<Vec<f64>> {
            Ok(integrate(y, &p, 0.0, 10.0, 1.0, &[10.0])?.states.remove(0).into_vec())
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for c in (0..p.n()).step_by(7) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[c] += eps;
            xm.as_mut_slice()[c] -= eps;
            let fd: Vec<f64> = flow(&xp)?.iter().zip(flow(&xm)?).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let mut e = vec![0.0; p.n()];
            e[c] = 1.0;
            let col = j.apply(&e)?;
            worst = worst.max(norm(&sub(&col, &fd)) / norm(&fd));
        }
        Ok(worst)
    })?);

    out.push(check("inverse-forward round trip (d=5)", 1e-4, || {
        let (p, x) = perturbed(5, 2)?;
        let cfg = JacobianConfig::default();
        let xt = integrate(&x, &p, 0.0, 10.0, 1.0, &[10.0])?.states.remove(0);
        let fwd = build_jacobian(&x, &p, 10.0, cfg.l_max, cfg.substeps)?;
        let inv = build_inverse_jacobian(&xt, &p, 10.0, cfg.l_max, cfg.substeps)?;
        let v = gaussian(&mut ChaCha8Rng::seed_from_u64(3), p.n());
        let back = inv.apply(&fwd.apply(&v)?)?;
        Ok(norm(&sub(&back, &v)) / norm(&v))
    })?);

    out.push(check("adjoint identity (d=5)", 1e-13, || {
        let (p, x) = perturbed(5, 4)?;
        let j = build_jacobian(&x, &p, 10.0, 4, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (v, w) = (gaussian(&mut rng, p.n()), gaussian(&mut rng, p.n()));
        let lhs = dot(&j.apply(&v)?, &w);
        Ok((lhs - dot(&v, &j.apply_transpose(&w)?)).abs() / lhs.abs())
    })?);

    out.push(check("adjoint gradient vs central differences (d=5, k=5)", 1e-6, || {
        let (p, x) = perturbed(5, 6)?;
        let op = ObsOperator::new(Scenario::VelocitiesEverywhere, 5, 1, 1e-2)?;
        let times: Vec<f64> = (0..5).map(|l| l as f64 * 10.0).collect();
        let tr = integrate(&x, &p, 0.0, 40.0, 0.1, &times)?;
        let obs = generate_observations(&tr, &op, &times, 6)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mean = x.clone();
        for (a, z) in mean.as_mut_slice().iter_mut().zip(gaussian(&mut rng, p.n())) {
            *a += 0.05 * z;
        }
        let bg = DiagonalBackground::new(mean.clone(), vec![400.0; p.n()])?;
        let prob = WindowProblem::new(&bg, &obs, &op, &p, 0.0, 10.0, SolverOptions::default())?;
        let g = prob.gradient(&mean)?;
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let dir = gaussian(&mut rng, p.n());
            let shifted = |s: f64| {
                let mut y = mean.clone();
                y.as_mut_slice().iter_mut().zip(&dir).for_each(|(a, b)| *a += s * eps * b);
                prob.cost(&y)
            };
            let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
            let an = dot(&g, &dir);
            worst = worst.max((fd - an).abs() / an.abs());
        }
        Ok(worst)
    })?);

    out.push(check("full-memory precision vs information filter (linear, d=4)", 1e-8, || {
        let p = ModelParams::flat(4, 1e4, 100.0, 1e-4, 9.81, 2e3, 1e-4)?.with_linear_only(true);
        let op = ObsOperator::new(Scenario::SparseHeights, 4, 2, 0.5)?;
        let (k, windows, h_obs) = (3, 3, 5.0);
        let (_, x0) = perturbed(4, 8)?;
        let times: Vec<f64> = (0..=k * windows).map(|l| l as f64 * h_obs).collect();
        let tr = integrate(&x0, &p, 0.0, times[k * windows], h_obs, &times)?;
        let d2 = 16;
        let base: Vec<f64> = (0..p.n())
            .map(|i| if i < 2 * d2 { 0.01 * 100.0 } else { 0.01 * p.g })
            .collect();
        let mut bg = ImplicitBackground::new(x0.clone(), base.clone(), windows, 0.0)?;
        let mut steps = Vec::new();
        for m in 0..windows {
            let sub_tr = crate::swe::Trajectory::new(
                times[m * k..=(m + 1) * k].to_vec(),
                tr.states[m * k..=(m + 1) * k].to_vec(),
            )?;
            let chain = JacobianChain::build(&sub_tr, &p, JacobianConfig::default())?.with_inverses(&p)?;
            steps.extend(chain.forward().iter().map(|f| f.matrix.to_dense()));
            bg.records.push_back(WindowRecord::new(chain, op.clone(), k, m)?);
        }
        let mut h = nalgebra::DMatrix::zeros(op.n_obs(), op.n());
        for (r, &c) in op.indices().iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        let p0 = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(base));
        let oracle = kalman_information_oracle(&steps, &h, op.sigma, &p0)?;
        let got = bg.densify()?;
        Ok((got - &oracle).norm() / oracle.norm())
    })?);

    Ok(out)
}
