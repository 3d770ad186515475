use std::path::PathBuf;

use awp_core::{checkpoint, delta_lp, Error, Norm};

use crate::error::{at_path, CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Anchor checkpoint (denominator of the relative change).
    #[arg(value_name = "BASE")]
    base: PathBuf,

    /// Checkpoint to compare against the anchor.
    #[arg(value_name = "OTHER")]
    other: PathBuf,
}

/// Pure read-only comparison; prints to stdout, writes no run directory.
pub fn run(args: &Args) -> CliResult<()> {
    let base = at_path(checkpoint::load(&args.base), &args.base)?;
    let other = at_path(checkpoint::load(&args.other), &args.other)?;
    if base.spec() != other.spec() {
        return Err(CliError::Usage(format!(
            "checkpoints have different model specs: {} vs {}",
            args.base.display(),
            args.other.display()
        )));
    }

    println!(
        "{:<28} {:>12} {:>12} {:>12} {:>12}",
        "tensor", "%d_l1", "%d_l2", "%d_linf", "max|d|"
    );
    for ((name, a), (_, b)) in base
        .params()
        .entries()
        .iter()
        .zip(other.params().entries())
    {
        let max_abs = a
            .data()
            .iter()
            .zip(b.data())
            .fold(0.0f32, |m, (&x, &y)| m.max((x - y).abs()));
        let cells: Vec<String> = [Norm::L1, Norm::L2, Norm::LInf]
            .iter()
            .map(|&p| match delta_lp(a.data(), b.data(), p) {
                Ok(v) => format!("{v:.6}"),
                // a tensor the base left at zero (untrained bias) has no
                // relative scale to report against
                Err(Error::ZeroNormAnchor) => "n/a".to_string(),
                Err(e) => format!("error: {e}"),
            })
            .collect();
        println!(
            "{:<28} {:>12} {:>12} {:>12} {:>12.6}",
            name, cells[0], cells[1], cells[2], max_abs
        );
    }

    let a = base.params().flatten();
    let b = other.params().flatten();
    let max_abs = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f32, |m, (&x, &y)| m.max((x - y).abs()));
    println!(
        "{:<28} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
        "(all weights)",
        delta_lp(a.data(), b.data(), Norm::L1)?,
        delta_lp(a.data(), b.data(), Norm::L2)?,
        delta_lp(a.data(), b.data(), Norm::LInf)?,
        max_abs
    );
    Ok(())
}
