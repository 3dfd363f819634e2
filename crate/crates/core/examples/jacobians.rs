//! Sparse Taylor Jacobians of the flow map: accuracy against finite
//! differences, the backward inverse, adjoint consistency, and the on-disk
//! cache of a whole chain.

use flowvar::jacobian::cache::{read_chain, write_chain};
use flowvar::jacobian::{build_inverse_jacobian, build_jacobian, JacobianChain, JacobianConfig};
use flowvar::linalg::{dot, norm, sub};
use flowvar::swe::{benchmark_initial_state, benchmark_params, integrate};

fn main() -> flowvar::Result<()> {
    let p = benchmark_params(11, 1e4)?;
    let x = benchmark_initial_state(11, 1e4);
    let cfg = JacobianConfig::default();
    let span = 10.0;

    let j = build_jacobian(&x, &p, span, cfg.l_max, cfg.substeps)?;
    println!("n = {}, nonzeros = {} (band {})", j.n(), j.matrix.nnz(), cfg.band());

    let v: Vec<f64> = (0..p.n()).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
    let eps = 1e-6;
    let push = |s: f64| -> flowvar::Result<Vec<f64>> {
        let mut y = x.clone();
        y.as_mut_slice().iter_mut().zip(&v).for_each(|(a, b)| *a += s * eps * b);
        Ok(integrate(&y, &p, 0.0, span, 1.0, &[span])?.states.remove(0).into_vec())
    };
    let fd: Vec<f64> = push(1.0)?.iter().zip(push(-1.0)?).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    let jv = j.apply(&v)?;
    println!("tangent vs finite differences: {:.2e}", norm(&sub(&jv, &fd)) / norm(&fd));

    let xt = integrate(&x, &p, 0.0, span, 1.0, &[span])?.states.remove(0);
    let inv = build_inverse_jacobian(&xt, &p, span, cfg.l_max, cfg.substeps)?;
    let back = inv.apply(&jv)?;
    println!("inverse round trip: {:.2e}", norm(&sub(&back, &v)) / norm(&v));

    let w: Vec<f64> = (0..p.n()).map(|i| ((i * 53) % 7) as f64 - 3.0).collect();
    let gap = (dot(&jv, &w) - dot(&v, &j.apply_transpose(&w)?)).abs() / dot(&jv, &w).abs();
    println!("adjoint identity gap: {gap:.2e}");

    let times: Vec<f64> = (0..=6).map(|l| l as f64 * span).collect();
    let tr = integrate(&x, &p, 0.0, 60.0, 1.0, &times)?;
    let chain = JacobianChain::build(&tr, &p, cfg)?.with_inverses(&p)?;
    let dir = tempfile_dir();
    write_chain(&dir, &chain)?;
    let loaded = read_chain(&dir)?;
    let a = chain.apply(&v, chain.len(), false, false)?;
    let b = loaded.apply(&v, loaded.len(), false, false)?;
    println!(
        "chain of {} factors cached in {}; reload matches: {}",
        chain.len(),
        dir.display(),
        a == b
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("flowvar-jacobians-{}", std::process::id()))
}
