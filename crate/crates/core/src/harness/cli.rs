use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::bench::bench_timing;
use super::config::RunConfig;
use super::kde::KdeCurve;
use super::reports::{checkpoint_path, energy_shift_report, median, radii, radius_trace};
use super::verify::verify_all;
use crate::gnnmodel::{checkpoint_load, checkpoint_save, train_erm, Checkpoint, Model, TrainConfig};
use crate::landscape::{radius_distribution, RadiusMethod};
use crate::pipeline::{run_variant, E2AConfig, MetricsRecord, RunOutput, Variant};
use crate::syngraph::{dataset_load, dataset_save, dataset_to_bytes, graph_stats, GraphDataset, ShiftKind, Split};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "e2a", version, about = "Energy-guided latent augmentation experiments")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides the config and $E2A_OUT_DIR).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single seed replacing the configured seed list. For generate-data
    /// it is the dataset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file from generate-data; generated from the config if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    shift: Option<ShiftKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic motif dataset.
    GenerateData {
        #[arg(long)]
        shift: Option<ShiftKind>,
    },
    /// Plain ERM training with checkpoints and radius trace.
    TrainErm(DataArgs),
    /// Full augmentation pipeline with metrics stream.
    RunE2a(DataArgs),
    /// One or all ablation variants.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// erm, sam_star, no_energy, no_ce, full or all.
        #[arg(long, default_value = "all")]
        variant: String,
    },
    /// Robustness radii of one checkpoint, or a trace over a run directory.
    ProbeRadius {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "ood_test")]
        split: Split,
        #[arg(long)]
        method: Option<RadiusMethod>,
    },
    /// Energy densities of every split under one checkpoint.
    EnergyKde {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep ascent steps, step size and CE weight one at a time.
    Sensitivity(DataArgs),
    /// Train and inference timing over the configured grid.
    Bench(DataArgs),
    /// Gradient, energy-bound and radius property checks.
    Verify,
}

/// Exit status: 0 success, 1 runtime or property failure, 2 usage or
/// configuration error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<Error>(),
                    Some(Error::ConfigInvalid(_) | Error::UnknownVariant(_) | Error::MissingCheckpoint(_))
                )
            });
            if config_error {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    root: PathBuf,
    hash: String,
}

impl Ctx {
    fn new(cli: &Cli, shift: Option<ShiftKind>) -> anyhow::Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => RunConfig::load(path)
                .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        if let Some(shift) = shift {
            cfg.dataset.shift = shift;
        }
        if let Some(seed) = cli.seed {
            if matches!(cli.command, Command::GenerateData { .. }) {
                cfg.dataset.seed = seed;
            } else {
                cfg.seeds = vec![seed];
            }
        }
        if let Some(out) = &cli.out {
            cfg.output_dir = out.display().to_string();
        }
        cfg.validate()?;
        Ok(Self {
            root: cfg.output_root(),
            hash: cfg.hash(),
            cfg,
        })
    }

    /// `<root>/<command>/<hash8>-seed<k>/` with a config snapshot.
    fn run_dir(&self, command: &str, seed: u64) -> anyhow::Result<PathBuf> {
        let dir = self.root.join(command).join(format!("{}-seed{seed}", &self.hash[..8]));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        // the snapshot leaves out the output root, like the hash
        let snapshot = RunConfig {
            output_dir: String::new(),
            ..self.cfg.clone()
        };
        write_text(&dir.join("config.toml"), &snapshot.to_toml_string())?;
        Ok(dir)
    }

    fn dataset(&self, data: Option<&Path>) -> anyhow::Result<GraphDataset> {
        Ok(match data {
            Some(path) => dataset_load(path)?,
            None => crate::syngraph::make_motif_dataset(&self.cfg.dataset)?,
        })
    }

    /// Epochs whose checkpoints are kept: the radius epochs plus the last.
    fn kept_epochs(&self) -> Vec<usize> {
        let last = self.cfg.train.epochs;
        let mut epochs: Vec<usize> = self.cfg.diagnostics.radius_epochs.iter().copied().filter(|&e| e >= 1 && e <= last).collect();
        epochs.push(last);
        epochs.sort_unstable();
        epochs.dedup();
        epochs
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    dataset_sha256: String,
}

fn write_run_info(dir: &Path, ctx: &Ctx, command: &str, seed: u64, ds: &GraphDataset) -> anyhow::Result<()> {
    let info = RunInfo {
        command,
        seed,
        config_hash: &ctx.hash,
        dataset_sha256: sha256_hex(&dataset_to_bytes(ds)),
    };
    write_text(&dir.join("run.json"), &serde_json::to_string_pretty(&info)?)
}

#[derive(Serialize)]
struct KdeRow<'a> {
    curve: &'a str,
    x: f64,
    density: f64,
}

fn write_kde(path: &Path, curves: &[(String, &KdeCurve)]) -> anyhow::Result<()> {
    let rows: Vec<KdeRow> = curves
        .iter()
        .flat_map(|(name, c)| {
            c.grid.iter().zip(&c.density).map(move |(&x, &density)| KdeRow {
                curve: name.as_str(),
                x,
                density,
            })
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize)]
struct RadiusMedianRow {
    epoch: usize,
    method: &'static str,
    median_radius: f64,
    n_samples: usize,
}

/// Radius medians and densities on ood_test at the kept epochs.
fn write_radius_trace(dir: &Path, ctx: &Ctx, checkpoints: &[(usize, &Model)], ds: &GraphDataset) -> anyhow::Result<()> {
    if checkpoints.len() < 2 {
        return Ok(());
    }
    let d = &ctx.cfg.diagnostics;
    let report = radius_trace(checkpoints, &ds.ood_test, d.radius_method, &d.oracle, d.kde_points)?;
    let rows: Vec<RadiusMedianRow> = report
        .points
        .iter()
        .map(|p| RadiusMedianRow {
            epoch: p.epoch,
            method: report.method.name(),
            median_radius: p.median,
            n_samples: p.values.len(),
        })
        .collect();
    write_csv(&dir.join("radius_trace.csv"), &rows)?;
    let curves: Vec<(String, &KdeCurve)> = report.points.iter().map(|p| (format!("epoch_{}", p.epoch), &p.curve)).collect();
    write_kde(&dir.join("radius_kde.csv"), &curves)
}

fn save_checkpoint(dir: &Path, ctx: &Ctx, epoch: usize, seed: u64, model: &Model, cvae: Option<&crate::cvae::CvaeParams>) -> anyhow::Result<()> {
    let ck = Checkpoint {
        epoch,
        seed,
        config_hash: ctx.hash.clone(),
        model: model.clone(),
        cvae: cvae.cloned(),
    };
    Ok(checkpoint_save(&ck, &checkpoint_path(dir, epoch))?)
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::GenerateData { shift } => generate_data(&Ctx::new(&cli, *shift)?),
        Command::TrainErm(a) => train_erm_cmd(&Ctx::new(&cli, a.shift)?, a.data.as_deref()),
        Command::RunE2a(a) => run_e2a_cmd(&Ctx::new(&cli, a.shift)?, a.data.as_deref()),
        Command::Ablate { data, variant } => ablate_cmd(&Ctx::new(&cli, data.shift)?, data.data.as_deref(), variant),
        Command::ProbeRadius {
            data,
            checkpoint,
            split,
            method,
        } => probe_radius_cmd(&Ctx::new(&cli, data.shift)?, data.data.as_deref(), checkpoint, *split, *method),
        Command::EnergyKde { data, checkpoint } => energy_kde_cmd(&Ctx::new(&cli, data.shift)?, data.data.as_deref(), checkpoint),
        Command::Sensitivity(a) => sensitivity_cmd(&Ctx::new(&cli, a.shift)?, a.data.as_deref()),
        Command::Bench(a) => bench_cmd(&Ctx::new(&cli, a.shift)?, a.data.as_deref()),
        Command::Verify => verify_cmd(&Ctx::new(&cli, None)?),
    }
}

fn generate_data(ctx: &Ctx) -> anyhow::Result<i32> {
    let ds = ctx.dataset(None)?;
    let dir = ctx.run_dir("generate-data", ds.meta.seed)?;
    let path = dir.join("dataset.e2ag");
    dataset_save(&ds, &path)?;
    write_text(&dir.join("stats.json"), &serde_json::to_string_pretty(&graph_stats(&ds))?)?;
    println!("{}", path.display());
    Ok(0)
}

fn train_erm_cmd(ctx: &Ctx, data: Option<&Path>) -> anyhow::Result<i32> {
    let ds = ctx.dataset(data)?;
    let kept = ctx.kept_epochs();
    for &seed in &ctx.cfg.seeds {
        let dir = ctx.run_dir("train-erm", seed)?;
        write_run_info(&dir, ctx, "train-erm", seed, &ds)?;
        let model = Model::init(ds.meta.d_in, ds.meta.classes, &ctx.cfg.model, seed);
        let out = train_erm(model, &ds, &TrainConfig { seed, ..ctx.cfg.train })?;
        write_csv(&dir.join("trace.csv"), &out.trace.records)?;
        let ck_dir = dir.join("checkpoints");
        fs::create_dir_all(&ck_dir)?;
        let kept_models: Vec<(usize, &Model)> = out.checkpoints.iter().filter(|(e, _)| kept.contains(e)).map(|(e, m)| (*e, m)).collect();
        for (epoch, model) in &kept_models {
            save_checkpoint(&ck_dir, ctx, *epoch, seed, model, None)?;
        }
        write_radius_trace(&dir, ctx, &kept_models, &ds)?;
        if let Some(last) = out.trace.last() {
            println!(
                "seed {seed}: id_test {:.4} ood_test {:.4} -> {}",
                last.id_test_acc,
                last.ood_test_acc,
                dir.display()
            );
        }
    }
    Ok(0)
}

/// Runs one variant, keeping checkpoints of the configured epochs.
fn run_with_checkpoints(ctx: &Ctx, variant: Variant, cfg: &E2AConfig, ds: &GraphDataset, ck_dir: &Path) -> anyhow::Result<(RunOutput, Vec<(usize, Model)>)> {
    fs::create_dir_all(ck_dir)?;
    let kept = ctx.kept_epochs();
    let mut models = Vec::new();
    let seed = cfg.train.seed;
    let out = run_variant(variant, cfg, ds, &mut |ev| {
        if kept.contains(&ev.epoch) {
            save_checkpoint(ck_dir, ctx, ev.epoch, seed, ev.model, Some(ev.cvae)).map_err(|e| Error::Format(format!("{e:#}")))?;
            models.push((ev.epoch, ev.model.clone()));
        }
        Ok(())
    })?;
    Ok((out, models))
}

fn run_e2a_cmd(ctx: &Ctx, data: Option<&Path>) -> anyhow::Result<i32> {
    let ds = ctx.dataset(data)?;
    for &seed in &ctx.cfg.seeds {
        let dir = ctx.run_dir("run-e2a", seed)?;
        write_run_info(&dir, ctx, "run-e2a", seed, &ds)?;
        let (out, models) = run_with_checkpoints(ctx, Variant::Full, &ctx.cfg.e2a_config(seed), &ds, &dir.join("checkpoints"))?;
        write_jsonl(&dir.join("metrics.jsonl"), &out.metrics)?;
        write_csv(&dir.join("trace.csv"), &out.trace.records)?;
        let refs: Vec<(usize, &Model)> = models.iter().map(|(e, m)| (*e, m)).collect();
        write_radius_trace(&dir, ctx, &refs, &ds)?;
        if let Some(last) = out.trace.last() {
            println!(
                "seed {seed}: id_test {:.4} ood_test {:.4} -> {}",
                last.id_test_acc,
                last.ood_test_acc,
                dir.display()
            );
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct AblationCsvRow {
    variant: Variant,
    seed: u64,
    id_acc: f64,
    ood_acc: f64,
    median_radius: f64,
}

fn final_row(ctx: &Ctx, variant: Variant, seed: u64, out: &RunOutput, ds: &GraphDataset) -> anyhow::Result<AblationCsvRow> {
    let last = out.trace.last().context("run has no epochs")?;
    let d = &ctx.cfg.diagnostics;
    Ok(AblationCsvRow {
        variant,
        seed,
        id_acc: last.id_test_acc,
        ood_acc: last.ood_test_acc,
        median_radius: median(&radii(&out.model, &ds.ood_test, d.radius_method, &d.oracle)?),
    })
}

fn ablate_cmd(ctx: &Ctx, data: Option<&Path>, which: &str) -> anyhow::Result<i32> {
    let variants = if which == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![which.parse::<Variant>()?]
    };
    let ds = ctx.dataset(data)?;
    for &seed in &ctx.cfg.seeds {
        let dir = ctx.run_dir("ablate", seed)?;
        write_run_info(&dir, ctx, "ablate", seed, &ds)?;
        let mut rows = Vec::new();
        for &v in &variants {
            let out = run_variant(v, &ctx.cfg.e2a_config(seed), &ds, &mut |_| Ok(()))?;
            write_jsonl(&dir.join(format!("metrics_{v}.jsonl")), &out.metrics)?;
            let row = final_row(ctx, v, seed, &out, &ds)?;
            println!("seed {seed} {v}: id {:.4} ood {:.4} radius {:.4}", row.id_acc, row.ood_acc, row.median_radius);
            rows.push(row);
        }
        write_csv(&dir.join("ablation.csv"), &rows)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct RadiusSampleRow {
    epoch: usize,
    sample_id: usize,
    label: usize,
    margin: f64,
    energy: f64,
    radius: f64,
    converged: bool,
}

fn probe_radius_cmd(
    ctx: &Ctx,
    data: Option<&Path>,
    checkpoint: &Path,
    split: Split,
    method: Option<RadiusMethod>,
) -> anyhow::Result<i32> {
    let ds = ctx.dataset(data)?;
    let graphs = ds.split(split);
    let method = method.unwrap_or(ctx.cfg.diagnostics.radius_method);
    let d = &ctx.cfg.diagnostics;
    let checkpoints: Vec<Checkpoint> = if checkpoint.is_dir() {
        let mut found = Vec::new();
        for entry in fs::read_dir(checkpoint)? {
            let path = entry?.path();
            if path.extension().is_some_and(|x| x == "e2am") {
                found.push(path);
            }
        }
        found.sort();
        found.iter().map(|p| checkpoint_load(p)).collect::<crate::Result<_>>()?
    } else if checkpoint.exists() {
        vec![checkpoint_load(checkpoint)?]
    } else {
        return Err(Error::MissingCheckpoint(checkpoint.display().to_string()).into());
    };
    let Some(first) = checkpoints.first() else {
        bail!(Error::MissingCheckpoint(format!("no .e2am files in {}", checkpoint.display())));
    };
    let dir = ctx.run_dir("probe-radius", first.seed)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for ck in &checkpoints {
        let diags = radius_distribution(&ck.model, graphs, method, &d.oracle)?;
        let values: Vec<f64> = diags.iter().map(|s| s.radius.value).collect();
        summary.push(RadiusMedianRow {
            epoch: ck.epoch,
            method: method.name(),
            median_radius: median(&values),
            n_samples: values.len(),
        });
        rows.extend(diags.iter().zip(graphs).map(|(s, g)| RadiusSampleRow {
            epoch: ck.epoch,
            sample_id: s.sample_id,
            label: g.label,
            margin: s.margin,
            energy: s.energy,
            radius: s.radius.value,
            converged: s.radius.converged,
        }));
    }
    write_csv(&dir.join("radius_samples.csv"), &rows)?;
    write_csv(&dir.join("radius_trace.csv"), &summary)?;
    let models: Vec<(usize, &Model)> = checkpoints.iter().map(|c| (c.epoch, &c.model)).collect();
    let models = if models.len() == 1 { vec![models[0], models[0]] } else { models };
    let report = radius_trace(&models, graphs, method, &d.oracle, d.kde_points)?;
    let curves: Vec<(String, &KdeCurve)> = report.points.iter().take(checkpoints.len()).map(|p| (format!("epoch_{}", p.epoch), &p.curve)).collect();
    write_kde(&dir.join("radius_kde.csv"), &curves)?;
    for s in &summary {
        println!("epoch {}: median {} radius {:.6}", s.epoch, s.method, s.median_radius);
    }
    Ok(0)
}

#[derive(Serialize)]
struct EnergySummaryRow {
    split: Split,
    mean_energy: f64,
    bandwidth: f64,
    n_samples: usize,
}

fn energy_kde_cmd(ctx: &Ctx, data: Option<&Path>, checkpoint: &Path) -> anyhow::Result<i32> {
    if !checkpoint.is_file() {
        return Err(Error::MissingCheckpoint(checkpoint.display().to_string()).into());
    }
    let ds = ctx.dataset(data)?;
    let ck = checkpoint_load(checkpoint)?;
    let dir = ctx.run_dir("energy-kde", ck.seed)?;
    let report = energy_shift_report(&ck.model, &ds, ctx.cfg.diagnostics.kde_points)?;
    let summary: Vec<EnergySummaryRow> = report
        .splits
        .iter()
        .map(|s| EnergySummaryRow {
            split: s.split,
            mean_energy: s.mean,
            bandwidth: s.curve.bandwidth,
            n_samples: s.curve.n_samples,
        })
        .collect();
    write_csv(&dir.join("energy_summary.csv"), &summary)?;
    let curves: Vec<(String, &KdeCurve)> = report.splits.iter().map(|s| (s.split.to_string(), &s.curve)).collect();
    write_kde(&dir.join("energy_kde.csv"), &curves)?;
    for s in &summary {
        println!("{}: mean energy {:.4}", s.split, s.mean_energy);
    }
    Ok(0)
}

#[derive(Serialize)]
struct SensitivityRow {
    parameter: &'static str,
    value: f64,
    seed: u64,
    id_acc: f64,
    ood_acc: f64,
    final_delta_e: Option<f64>,
}

fn sensitivity_cmd(ctx: &Ctx, data: Option<&Path>) -> anyhow::Result<i32> {
    let ds = ctx.dataset(data)?;
    let d = &ctx.cfg.diagnostics;
    for &seed in &ctx.cfg.seeds {
        let dir = ctx.run_dir("sensitivity", seed)?;
        write_run_info(&dir, ctx, "sensitivity", seed, &ds)?;
        let base = ctx.cfg.e2a_config(seed);
        let mut grid: Vec<(&'static str, f64, E2AConfig)> = Vec::new();
        for &t in &d.sweep_steps {
            grid.push(("ascent_steps", t as f64, E2AConfig { ascent_steps: t, ..base }));
        }
        for &eta in &d.sweep_step_sizes {
            grid.push(("step_size", eta, E2AConfig { step_size: eta, ..base }));
        }
        for &lambda in &d.sweep_lambdas {
            grid.push(("lambda", lambda, E2AConfig { lambda, ..base }));
        }
        let mut rows = Vec::new();
        for (parameter, value, cfg) in grid {
            let out = run_variant(Variant::Full, &cfg, &ds, &mut |_| Ok(()))?;
            let last = out.trace.last().context("run has no epochs")?;
            let final_delta_e = out.metrics.last().and_then(|m: &MetricsRecord| m.delta_e);
            println!("seed {seed} {parameter}={value}: id {:.4} ood {:.4}", last.id_test_acc, last.ood_test_acc);
            rows.push(SensitivityRow {
                parameter,
                value,
                seed,
                id_acc: last.id_test_acc,
                ood_acc: last.ood_test_acc,
                final_delta_e,
            });
        }
        write_csv(&dir.join("sensitivity.csv"), &rows)?;
    }
    Ok(0)
}

fn bench_cmd(ctx: &Ctx, data: Option<&Path>) -> anyhow::Result<i32> {
    let ds = ctx.dataset(data)?;
    let d = &ctx.cfg.diagnostics;
    let seed = ctx.cfg.seeds[0];
    let dir = ctx.run_dir("bench", seed)?;
    let rows = bench_timing(&ctx.cfg.e2a_config(seed), &ds, &d.bench_grid, d.bench_epochs, d.bench_rounds)?;
    write_csv(&dir.join("timing.csv"), &rows)?;
    for r in &rows {
        println!(
            "{} T={} eta={}: train {:.1} ms/epoch, inference {:.1} ms",
            r.variant, r.steps, r.step_size, r.train_ms, r.infer_ms
        );
    }
    Ok(0)
}

fn verify_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let seed = ctx.cfg.seeds[0];
    let dir = ctx.run_dir("verify", seed)?;
    let results = verify_all(seed)?;
    write_csv(&dir.join("verify.csv"), &results)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}/{}: {:e} (limit {:e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.name,
            r.value,
            r.threshold
        );
        failed += usize::from(!r.passed);
    }
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        run(std::iter::once("e2a").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(code(&["--bogus"]), 2);
        assert_eq!(code(&[]), 2);
        assert_eq!(code(&["train-erm", "--shift", "sideways"]), 2);
        assert_eq!(code(&["--help"]), 0);
    }

    #[test]
    fn bad_config_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[train]\nepochz = 1\n").unwrap();
        let out = dir.path().join("out");
        assert_eq!(code(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "verify"]), 2);
        assert_eq!(code(&["--out", out.to_str().unwrap(), "ablate", "--variant", "nope"]), 2);
        let missing = dir.path().join("none.e2am");
        assert_eq!(code(&["--out", out.to_str().unwrap(), "energy-kde", "--checkpoint", missing.to_str().unwrap()]), 2);
    }
}
