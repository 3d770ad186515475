use std::path::Path;

use awp_core::attack::write_trace_csv;
use awp_core::metrics::{
    append_sweep_row, build_report, format_epsilon, parse_epsilon, render_table,
};
use awp_core::{checkpoint, run_attack};

use super::{build_trigger, load_task, resolve_hyper_base, Ctx, DataFlags, HyperFlags, TriggerFlags};
use crate::error::{at_path, CliError, CliResult};
use crate::manifest::{now_rfc3339, RunManifest};

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    data: DataFlags,

    #[command(flatten)]
    trigger: TriggerFlags,

    #[command(flatten)]
    hyper: HyperFlags,

    /// Comma-separated epsilon grid, e.g. "0.001,0.01,0.1,inf".
    #[arg(long, conflicts_with = "lambdas")]
    epsilons: Option<String>,

    /// Comma-separated lambda grid, swept at a fixed --epsilon.
    #[arg(long)]
    lambdas: Option<String>,
}

enum Grid {
    Epsilons(Vec<f32>),
    Lambdas(Vec<f32>),
}

pub fn run(ctx: &Ctx, args: &Args) -> CliResult<()> {
    let mut m = RunManifest::new("sweep");
    let dir = ctx.run_dir("sweep")?;
    println!("run: {}", dir.display());
    let result = execute(ctx, args, &mut m, &dir);
    if let Err(e) = &result {
        m.failures.push(e.to_string());
    }
    m.write_atomic(&dir)?;
    result
}

fn parse_grid(r: &mut crate::config::Resolver, args: &Args) -> CliResult<Grid> {
    let eps_raw = r.get_str_opt(args.epsilons.clone(), "epsilons");
    let lam_raw = r.get_str_opt(args.lambdas.clone(), "lambdas");
    match (eps_raw, lam_raw) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "pass either --epsilons or --lambdas, not both".to_string(),
        )),
        (Some(raw), None) => {
            let vals = split_list(&raw, |s| Ok(parse_epsilon(s)?))?;
            Ok(Grid::Epsilons(vals))
        }
        (None, Some(raw)) => {
            let vals = split_list(&raw, |s| {
                s.parse::<f32>()
                    .map_err(|_| CliError::Usage(format!("lambda {s:?} is not a number")))
            })?;
            Ok(Grid::Lambdas(vals))
        }
        (None, None) => Err(CliError::Usage(
            "empty grid: pass --epsilons or --lambdas".to_string(),
        )),
    }
}

fn split_list<T>(raw: &str, parse: impl Fn(&str) -> CliResult<T>) -> CliResult<Vec<T>> {
    let vals: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<CliResult<_>>()?;
    if vals.is_empty() {
        return Err(CliError::Usage("empty grid".to_string()));
    }
    Ok(vals)
}

fn execute(ctx: &Ctx, args: &Args, m: &mut RunManifest, dir: &Path) -> CliResult<()> {
    let mut r = ctx.resolver()?;
    let grid = parse_grid(&mut r, args)?;
    let fixed_epsilon = parse_epsilon(&r.get_str(args.hyper.epsilon.clone(), "epsilon", "0.01"))?;
    let fixed_lambda = r.get(args.hyper.lambda, "lambda", 1.0f32)?;
    let hyper = resolve_hyper_base(&mut r, &args.hyper)?;
    m.seeds.insert("attack".to_string(), hyper.seed);

    m.digest_input(&args.data.base)?;
    m.digest_input(&args.data.train)?;
    m.digest_input(&args.data.test)?;
    if let Some(v) = &args.data.vocab {
        m.digest_input(v)?;
    }

    let base = at_path(checkpoint::load(&args.data.base), &args.data.base)?;
    let task = load_task(&base.spec().arch, &args.data)?;
    let trigger = build_trigger(&base.spec().arch, &args.trigger, task.vocab.as_ref(), &mut r)?;

    // Grid points run one after another; they share nothing but the
    // read-only base model, so failures stay contained per point.
    let points: Vec<(String, f32, f32)> = match &grid {
        Grid::Epsilons(es) => es
            .iter()
            .map(|&e| (format!("eps-{}", format_epsilon(e)), e, fixed_lambda))
            .collect(),
        Grid::Lambdas(ls) => ls
            .iter()
            .map(|&l| (format!("lam-{l}"), fixed_epsilon, l))
            .collect(),
    };

    let sweep_csv = dir.join("sweep.csv");
    let mut reports = Vec::new();
    let mut numeric_failure = false;
    for (label, eps, lam) in &points {
        let cfg = hyper.config(*eps, *lam);
        let point_dir = dir.join(format!("point-{label}"));
        std::fs::create_dir_all(&point_dir)?;
        let outcome = run_attack(&base, &task.train, &trigger, &cfg)
            .map_err(CliError::from)
            .and_then(|res| {
                checkpoint::save(&res.model, &point_dir.join("attacked.awpb"))?;
                write_trace_csv(&point_dir.join("trace.csv"), &res.trace)?;
                let report = build_report(
                    &base,
                    &res.model,
                    &task.test,
                    &trigger,
                    &cfg,
                    &args.data.test.display().to_string(),
                    &now_rfc3339(),
                )?;
                std::fs::write(point_dir.join("report.json"), report.to_json() + "\n")?;
                append_sweep_row(&sweep_csv, &report)?;
                Ok(report)
            });
        match outcome {
            Ok(report) => {
                for name in ["attacked.awpb", "trace.csv", "report.json"] {
                    m.add_output(dir, &point_dir.join(name))?;
                }
                reports.push(report);
            }
            Err(e) => {
                numeric_failure |= matches!(e, CliError::Numeric(_));
                eprintln!("point {label}: {e}");
                m.failures.push(format!("{label}: {e}"));
            }
        }
    }

    if sweep_csv.exists() {
        m.add_output(dir, &sweep_csv)?;
    }
    if !reports.is_empty() {
        print!("{}", render_table(&reports));
    }

    m.resolved.append(&mut r.record);
    m.sources.append(&mut r.sources);

    if !m.failures.is_empty() {
        let msg = format!("{} of {} sweep points failed", m.failures.len(), points.len());
        return Err(if numeric_failure {
            CliError::Numeric(msg)
        } else {
            CliError::Usage(msg)
        });
    }
    Ok(())
}
