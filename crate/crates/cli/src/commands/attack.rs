use std::path::Path;

use awp_core::attack::write_trace_csv;
use awp_core::metrics::{build_report, parse_epsilon, render_table};
use awp_core::{checkpoint, run_attack};

use super::{build_trigger, load_task, resolve_hyper_base, Ctx, DataFlags, HyperFlags, TriggerFlags};
use crate::error::{at_path, CliResult};
use crate::manifest::{now_rfc3339, RunManifest};

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    data: DataFlags,

    #[command(flatten)]
    trigger: TriggerFlags,

    #[command(flatten)]
    hyper: HyperFlags,
}

pub fn run(ctx: &Ctx, args: &Args) -> CliResult<()> {
    let mut m = RunManifest::new("attack");
    let dir = ctx.run_dir("attack")?;
    println!("run: {}", dir.display());
    let result = execute(ctx, args, &mut m, &dir);
    if let Err(e) = &result {
        m.failures.push(e.to_string());
    }
    m.write_atomic(&dir)?;
    result
}

fn execute(ctx: &Ctx, args: &Args, m: &mut RunManifest, dir: &Path) -> CliResult<()> {
    let mut r = ctx.resolver()?;
    let epsilon = parse_epsilon(&r.get_str(args.hyper.epsilon.clone(), "epsilon", "0.01"))?;
    let lambda = r.get(args.hyper.lambda, "lambda", 1.0f32)?;
    let hyper = resolve_hyper_base(&mut r, &args.hyper)?;
    let cfg = hyper.config(epsilon, lambda);
    m.seeds.insert("attack".to_string(), cfg.seed);

    m.digest_input(&args.data.base)?;
    m.digest_input(&args.data.train)?;
    m.digest_input(&args.data.test)?;
    if let Some(v) = &args.data.vocab {
        m.digest_input(v)?;
    }

    let base = at_path(checkpoint::load(&args.data.base), &args.data.base)?;
    let task = load_task(&base.spec().arch, &args.data)?;
    let trigger = build_trigger(&base.spec().arch, &args.trigger, task.vocab.as_ref(), &mut r)?;

    let res = run_attack(&base, &task.train, &trigger, &cfg)?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }

    let report = build_report(
        &base,
        &res.model,
        &task.test,
        &trigger,
        &cfg,
        &args.data.test.display().to_string(),
        &now_rfc3339(),
    )?;

    let ckpt_path = dir.join("attacked.awpb");
    checkpoint::save(&res.model, &ckpt_path)?;
    m.add_output(dir, &ckpt_path)?;

    let trace_path = dir.join("trace.csv");
    write_trace_csv(&trace_path, &res.trace)?;
    m.add_output(dir, &trace_path)?;

    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.to_json() + "\n")?;
    m.add_output(dir, &report_path)?;

    print!("{}", render_table(std::slice::from_ref(&report)));

    m.resolved.append(&mut r.record);
    m.sources.append(&mut r.sources);
    Ok(())
}
