//! Locate the global positive profiles for n = 3..5 and print their decay
//! constants.

use kslab::profiles::{alpha0, build_atlas, ScanConfig};

fn main() -> kslab::Result<()> {
    for n in 3..=5u32 {
        let atlas = build_atlas(n, 0.05, 4.0, 1e-9, 25.0, ScanConfig::default())?;
        println!("n = {n}: {} profiles (explicit branch at alpha = {:.6})", atlas.len(), alpha0(n));
        for (entry, sol) in &atlas {
            let lambda = entry.lambda.map_or("none".to_string(), |l| format!("{l:.8}"));
            println!("  alpha = {:.9}  Lambda = {lambda}  psi(25) = {:.3e}", entry.alpha, sol.psi[sol.psi.len() - 1]);
        }
    }
    Ok(())
}
