//! Integrates the d = 21 benchmark for one hour and reports the conserved
//! quantities along the way.
//!
//! ```text
//! cargo run --release --example swe_forward [out_dir]
//! ```

use flowvar::swe::io::{write_state_binary, write_state_csv};
use flowvar::swe::{benchmark_initial_state, benchmark_params, integrate, total_energy, total_mass, Field};

fn main() -> flowvar::Result<()> {
    let p = benchmark_params(21, 1e4)?;
    let x0 = benchmark_initial_state(21, 1e4);
    println!("d = {}, n = {}, stability cap {:.2} s", p.d, p.n(), p.cfl_cap());

    let times: Vec<f64> = (0..=6).map(|i| i as f64 * 600.0).collect();
    let tr = integrate(&x0, &p, 0.0, 3600.0, 1.0, &times)?;
    let (m0, e0) = (total_mass(&x0, &p), total_energy(&x0, &p));
    println!("{:>6} {:>14} {:>14} {:>10}", "t (s)", "mass drift", "energy ratio", "max |h|");
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let h_max = (0..p.d * p.d).map(|k| x.get(Field::H, k / p.d, k % p.d).abs()).fold(0.0, f64::max);
        println!(
            "{t:>6.0} {:>14.3e} {:>14.6} {h_max:>10.4}",
            (total_mass(x, &p) - m0) / m0,
            total_energy(x, &p) / e0
        );
    }

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        let last = tr.last().expect("non-empty trajectory");
        write_state_binary(&dir.join("state_3600.bin"), last)?;
        write_state_csv(&dir.join("state_3600.csv"), last)?;
        println!("snapshots written to {}", dir.display());
    }
    Ok(())
}
