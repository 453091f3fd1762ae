use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kkt_hardnet::bench::{self, build_projection, resolve_mode, run_benchmark, BenchError, BenchmarkSpec};
use kkt_hardnet::compiler::{assemble_kkt, emit_system, load_system, logexp_transform, CompileOptions, KktSystem, MultiplierMode};
use kkt_hardnet::expr::ConstraintSet;
use kkt_hardnet::net::{train, write_metrics_csv, Mode, Model, TrainConfig, TrainError, TrainReport};
use kkt_hardnet::solver::project_newton;
use rayon::prelude::*;

use crate::config::Config;
use crate::manifest::RunManifest;

/// Failure that still left partial outputs behind.
#[derive(Debug, thiserror::Error)]
#[error("training diverged at epoch {epoch}; partial outputs in {}", dir.display())]
pub struct Diverged {
    pub epoch: usize,
    pub dir: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn read_constraints(path: &Path) -> Result<ConstraintSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let has_rows = text.lines().any(|l| {
        let l = l.split('#').next().unwrap_or("").trim();
        !l.is_empty() && !l.starts_with("inputs:") && !l.starts_with("outputs:")
    });
    if !has_rows {
        bail!("no constraints in {}", path.display());
    }
    ConstraintSet::parse_file(&text).with_context(|| format!("parsing {}", path.display()))
}

pub struct CompileArgs<'a> {
    pub constraints: &'a Path,
    pub system: PathBuf,
    pub multipliers: MultiplierMode,
    pub transform_only: bool,
}

pub fn summary(sys: &KktSystem) -> String {
    let c = &sys.catalog;
    let (n1, n2, n3) = sys.structured.block_sizes();
    format!(
        "{} rows ({n1} linear, {n2} multiplier, {n3} exponential), {} unknowns ({} y, {} z, {} λ), {} active rows",
        sys.n_rows(),
        sys.n_unknowns(),
        c.p(),
        c.q(),
        c.r(),
        sys.active_rows().len()
    )
}

pub fn compile(args: &CompileArgs, manifest: &mut RunManifest) -> Result<()> {
    let cs = read_constraints(args.constraints)?;
    let opts = CompileOptions {
        multipliers: args.multipliers,
        ..Default::default()
    };
    let sys = manifest.stage("compile", || {
        if args.transform_only {
            logexp_transform(&cs, &opts)
        } else {
            assemble_kkt(&cs, &opts)
        }
    })?;
    let mut w = create(&args.system)?;
    std::io::Write::write_all(&mut w, emit_system(&sys).as_bytes())?;
    manifest.output(args.system.clone());
    println!("{}", summary(&sys));
    println!("wrote {}", args.system.display());
    manifest.write(&parent_dir(&args.system))?;
    Ok(())
}

fn read_rows(path: &Path, width: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            bail!("{}: row {} has {} columns, the system has {width} {what}", path.display(), i + 1, rec.len());
        }
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| anyhow!("{}: row {}: `{v}`: {e}", path.display(), i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub struct ProjectArgs<'a> {
    pub system: &'a Path,
    pub x: &'a Path,
    pub y0: &'a Path,
    pub out: PathBuf,
}

pub fn project(args: &ProjectArgs, cfg: &Config, manifest: &mut RunManifest) -> Result<()> {
    let text = fs::read_to_string(args.system).with_context(|| format!("reading {}", args.system.display()))?;
    let sys = load_system(&text).with_context(|| format!("loading {}", args.system.display()))?;
    let c = &sys.catalog;
    let xs = read_rows(args.x, c.base_inputs, "inputs")?;
    let y0s = read_rows(args.y0, c.p(), "outputs")?;
    if xs.len() != y0s.len() {
        bail!("{} has {} rows but {} has {}", args.x.display(), xs.len(), args.y0.display(), y0s.len());
    }
    let solver = cfg.solver_config()?;
    let results = manifest.stage("project", || {
        xs.par_iter()
            .zip(&y0s)
            .map(|(x, y0)| project_newton(&sys, x, y0, &solver))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    let mut header: Vec<String> = c.outputs.clone();
    header.extend(["residual", "iters", "converged"].map(String::from));
    w.write_record(&header)?;
    for r in &results {
        let mut row: Vec<String> = r.y.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{:e}", r.residual_inf));
        row.push(r.iters.to_string());
        row.push(r.converged.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    manifest.output(args.out.clone());
    let failed = results.iter().filter(|r| !r.converged).count();
    println!("projected {} points, {failed} unconverged; wrote {}", results.len(), args.out.display());
    manifest.write(&parent_dir(&args.out))?;
    Ok(())
}

pub fn find_benchmark(name: &str) -> Result<BenchmarkSpec> {
    bench::find(name).ok_or_else(|| anyhow!("unknown benchmark `{name}`; registered: {}", bench::names().join(", ")))
}

pub fn parse_mode(s: &str, omega: Option<f64>) -> Result<Mode> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "mlp" => Mode::Mlp,
        "pinn" => Mode::Pinn {
            omega: omega.unwrap_or(f64::NAN),
        },
        "hardnet" | "kkt-hardnet" => Mode::Hardnet,
        other => bail!("unknown mode `{other}`; expected mlp, pinn or hardnet"),
    })
}

fn file_stem(model: &str) -> String {
    model.to_ascii_lowercase()
}

fn write_report(dir: &Path, prefix: &str, rep: &TrainReport, manifest: &mut RunManifest) -> Result<()> {
    let curve = dir.join(format!("{prefix}_{}_curve.csv", file_stem(&rep.model)));
    rep.write_curve_csv(create(&curve)?)?;
    manifest.output(curve);
    Ok(())
}

fn write_dataset(dir: &Path, spec: &BenchmarkSpec, data: &kkt_hardnet::net::Dataset, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join(format!("{}_data.csv", spec.name));
    data.write_csv(create(&path)?)?;
    manifest.output(path);
    Ok(())
}

fn print_metrics(rep: &TrainReport) {
    for (split, m) in [("train", &rep.train), ("val", &rep.val)] {
        println!(
            "{:<12} {:<5} mse {:.4e}  mape {:.4e}  |h| {:.3e}  max(g,0) {:.3e}  failures {}",
            rep.model, split, m.mse, m.mape, m.eq_violation, m.ineq_violation, m.failures
        );
    }
}

pub fn train_one(name: &str, mode: Mode, cfg: &Config, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let spec = find_benchmark(name)?;
    let rc = cfg.run_config()?;
    let mode = resolve_mode(&spec, mode, &rc);
    let cs = spec.constraint_set()?;
    let data = manifest.stage("data", || spec.dataset(rc.data_seed));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_dataset(dir, &spec, &data, manifest)?;
    let layer = match mode {
        Mode::Hardnet => Some(build_projection(&spec, &rc)?),
        _ => None,
    };
    let mut model = Model::with_scaling(&data, spec.hidden, rc.seed, rc.scaling.unwrap_or(spec.scaling));
    let tc = TrainConfig {
        lr: rc.lr,
        epochs: rc.epochs,
        batch_size: rc.batch_size,
        mode,
        seed: rc.seed,
        ..Default::default()
    };
    let result = manifest.stage("train", || train(&mut model, &data, &cs, layer.as_ref(), &tc));
    let (rep, diverged) = match result {
        Ok(rep) => (rep, None),
        Err(TrainError::Diverged { epoch, report }) => (*report, Some(epoch)),
        Err(e) => return Err(e.into()),
    };
    write_report(dir, spec.name, &rep, manifest)?;
    let metrics = dir.join(format!("{}_{}_metrics.csv", spec.name, file_stem(&rep.model)));
    write_metrics_csv(&[&rep], create(&metrics)?)?;
    manifest.output(metrics);
    print_metrics(&rep);
    manifest.write(dir)?;
    if let Some(epoch) = diverged {
        return Err(Diverged {
            epoch,
            dir: dir.to_path_buf(),
        }
        .into());
    }
    Ok(())
}

pub fn reproduce(table: &str, cfg: &Config, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let spec = bench::registry()
        .into_iter()
        .find(|b| b.table == table)
        .ok_or_else(|| anyhow!("unknown table `{table}`; expected one of t1, t2, t3, t4, t5"))?;
    let rc = cfg.run_config()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let run = match manifest.stage("train", || run_benchmark(&spec, &bench::default_modes(), &rc)) {
        Ok(run) => run,
        Err(BenchError::Train {
            mode,
            source: TrainError::Diverged { epoch, report },
        }) => {
            write_report(dir, spec.name, &report, manifest)?;
            manifest.write(dir)?;
            log::error!("{mode} diverged");
            return Err(Diverged {
                epoch,
                dir: dir.to_path_buf(),
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    write_dataset(dir, &spec, &run.data, manifest)?;
    for rep in &run.reports {
        manifest.stages.push((format!("train {}", rep.model), rep.wall_clock));
        write_report(dir, spec.name, rep, manifest)?;
    }
    let metrics = dir.join(format!("{table}_metrics.csv"));
    write_metrics_csv(&run.reports.iter().collect::<Vec<_>>(), create(&metrics)?)?;
    manifest.output(metrics);
    let cmp = dir.join(format!("{table}_comparison.csv"));
    run.write_comparison_csv(create(&cmp)?)?;
    manifest.output(cmp.clone());
    println!("{} ({}), reference: {}", spec.name, spec.truth, spec.citation);
    for rep in &run.reports {
        print_metrics(rep);
    }
    println!("wrote {}", cmp.display());
    manifest.write(dir)?;
    Ok(())
}

pub fn bench_list() {
    for b in bench::registry() {
        println!("{:<15} {}  {:?}  {}", b.name, b.table, b.projector, b.truth);
    }
}
