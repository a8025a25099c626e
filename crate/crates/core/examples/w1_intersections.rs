//! Radii where the regular steady state W1 crosses the singular one 2/r^2.

use kslab::profiles::integrate_w1;

fn main() -> kslab::Result<()> {
    let r_max = 1e4;
    for n in 3..=9u32 {
        let pair = integrate_w1(n, r_max, 1e-11)?;
        let radii: Vec<String> = pair.zeros.iter().map(|r| format!("{r:.4}")).collect();
        println!("n = {n}: Z[0, 200] = {}, Z[0, {r_max:e}] = {}", pair.zero_count(0.0, 200.0, 1e-12)?, pair.zeros.len());
        println!("  crossings: {}", radii.join(" "));
    }
    Ok(())
}
