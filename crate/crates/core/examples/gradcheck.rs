//! Finite-difference verification of every backward pass.

use stereo_priors::gradcheck::{run_gradcheck, GradcheckConfig, Operator};

fn main() -> stereo_priors::Result<()> {
    let report = run_gradcheck(&GradcheckConfig::default())?;
    println!("{report}");

    let broken = run_gradcheck(&GradcheckConfig {
        instances: 2,
        corrupt: Some(Operator::Pac),
        ..Default::default()
    })?;
    println!("\nwith a 1% error planted in the PAC gradient:\n{broken}");
    Ok(())
}
