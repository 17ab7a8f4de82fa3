use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use u2seg_core::config::{KinkPolicy, RunConfig};
use u2seg_core::data::{export_montage, gen_phantom, read_mask, read_nifti, read_volume, write_mask, write_volume, MontageSource};
use u2seg_core::post::{label_components, refine_with};
use u2seg_core::pre::normalize_volume;
use u2seg_core::registry::labelers;
use u2seg_core::trainer::{case_samples, evaluate, predict_normalized, train, Checkpoint, Dataset};
use u2seg_core::u2net::{describe, init_params, network_grad_check, param_count, synthetic_pair, CheckMode};
use u2seg_core::{LabelMap, Mask, Volume};
use u2seg_tensor::GradCheckConfig;

#[derive(Parser)]
#[command(name = "u2seg", version, about = "Airway segmentation with a nested-U saliency network")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// 6 or 26.
    #[arg(long, global = true)]
    connectivity: Option<String>,
    #[arg(long, global = true)]
    side_channels: Option<usize>,
    #[arg(long, global = true)]
    width_factor: Option<f64>,
    /// Any other config key, as key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic airway phantom: f32 volume and u8 mask.
    Phantom { volume: PathBuf, mask: PathBuf },
    /// Normalize a raw volume (RVOL or .nii) slice by slice.
    Preprocess { input: PathBuf, output: PathBuf },
    /// Train on raw volume / mask pairs; writes a checkpoint and a loss CSV.
    Train {
        checkpoint: PathBuf,
        loss_csv: PathBuf,
        /// volume mask [volume mask ...]
        #[arg(required = true, num_args = 2..)]
        pairs: Vec<PathBuf>,
    },
    /// Fused probability map of a preprocessed volume.
    Predict {
        input: PathBuf,
        output: PathBuf,
        /// Without a checkpoint a freshly seeded network is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input is a raw volume; normalize it first.
        #[arg(long)]
        raw: bool,
    },
    /// Threshold and keep the largest connected component.
    Refine {
        input: PathBuf,
        output: PathBuf,
        /// Also write the component report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-case DSC of the full pipeline on raw volume / mask pairs.
    Eval {
        checkpoint: PathBuf,
        csv: PathBuf,
        #[arg(required = true, num_args = 2..)]
        pairs: Vec<PathBuf>,
    },
    /// Finite-difference check of the deeply supervised loss.
    Gradcheck,
    /// Layer table of the configured (or a checkpoint's) network.
    Describe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export axial slices as PGM images.
    Montage {
        input: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Volume)]
        kind: Kind,
        #[arg(long, default_value = "slice")]
        prefix: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Volume,
    Mask,
    Labels,
}

/// Failure whose exit status is 2.
#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v);
    if let Some(s) = g.seed {
        set("seed", s.to_string())?;
    }
    if let Some(t) = g.threshold {
        set("threshold", t.to_string())?;
    }
    if let Some(c) = &g.connectivity {
        set("connectivity", c.clone())?;
    }
    if let Some(c) = g.side_channels {
        set("side_channels", c.to_string())?;
    }
    if let Some(w) = g.width_factor {
        set("width_factor", w.to_string())?;
    }
    for kv in &g.overrides {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got `{kv}`") };
        set(k.trim(), v.trim().to_owned())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_any(path: &Path) -> Result<Volume> {
    let name = path.to_string_lossy();
    let v = if name.ends_with(".nii") { read_nifti(path)? } else { read_volume(path)? };
    Ok(v)
}

/// Refuses to overwrite any of the inputs.
fn guard(output: &Path, inputs: &[&Path]) -> Result<()> {
    let Ok(out) = fs::canonicalize(output) else { return Ok(()) };
    for i in inputs {
        if fs::canonicalize(i).is_ok_and(|c| c == out) {
            bail!("output {} would overwrite an input", output.display());
        }
    }
    Ok(())
}

fn pairs(paths: &[PathBuf]) -> Result<Vec<(Volume, Mask)>> {
    if !paths.len().is_multiple_of(2) {
        bail!("expected volume/mask pairs, got {} paths", paths.len());
    }
    paths.chunks(2).map(|p| Ok((read_any(&p[0])?, read_mask(&p[1])?))).collect()
}

/// Components of the thresholded map, then what the refined mask keeps.
fn component_report(lm: &LabelMap) -> String {
    let mut out = format!("thresholded components: {}\n", lm.num_components());
    let _ = writeln!(out, "output components: {}", lm.num_components().min(1));
    let _ = writeln!(out, "kept: {} voxels", lm.sizes.first().copied().unwrap_or(0));
    out.push_str("label,size\n");
    for (k, s) in lm.sizes.iter().enumerate() {
        let _ = writeln!(out, "{},{s}", k + 1);
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.cmd {
        Cmd::Phantom { volume, mask } => {
            let ph = gen_phantom(&cfg.phantom, cfg.seed())?;
            write_volume(&ph.volume, &volume)?;
            write_mask(&ph.mask, &mask)?;
            if ph.clipped > 0 {
                eprintln!("warning: {} tree segment(s) clipped at the grid border", ph.clipped);
            }
            println!("phantom {} with {} airway voxels", ph.volume.dims, ph.mask.count());
        }
        Cmd::Preprocess { input, output } => {
            guard(&output, &[&input])?;
            let v = read_any(&input)?;
            write_volume(&normalize_volume(&v, cfg.sigma_min), &output)?;
        }
        Cmd::Train { checkpoint, loss_csv, pairs: paths } => {
            let cases = pairs(&paths)?;
            let data = if cases.len() == 1 {
                eprintln!("note: one case given; training on all of it without validation");
                Dataset { train: case_samples(0, &cases[0].0, &cases[0].1, cfg.input_mode)?, val: Vec::new() }
            } else {
                Dataset::from_cases(&cases, cfg.train.test_fraction, cfg.seed(), cfg.input_mode)?
            };
            let out = train(&cfg.train, &cfg.spec, &data)?;
            out.checkpoint.save(&checkpoint)?;
            out.curve.write_csv(&loss_csv)?;
            if let Some(last) = out.curve.records.last() {
                println!("step {} train_loss {} fuse_loss {}", last.step, last.train_loss, last.fuse_loss);
            }
        }
        Cmd::Predict { input, output, checkpoint, raw } => {
            guard(&output, &[&input])?;
            let (spec, store) = match &checkpoint {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    (ck.spec, ck.store)
                }
                None => (cfg.spec.clone(), init_params(&cfg.spec, cfg.seed())),
            };
            let mut v = read_any(&input)?;
            if raw {
                v = normalize_volume(&v, cfg.sigma_min);
            }
            let prob = predict_normalized(&spec, &store, &v, cfg.input_mode, cfg.train.batch_size)?;
            write_volume(&prob, &output)?;
        }
        Cmd::Refine { input, output, report } => {
            guard(&output, &[&input])?;
            let labeler = labelers().create(&cfg.labeler, &())?;
            let (mask, lm) = refine_with(&read_volume(&input)?, cfg.threshold, cfg.connectivity, labeler.as_ref());
            write_mask(&mask, &output)?;
            let text = component_report(&lm);
            print!("{text}");
            if let Some(r) = report {
                fs::write(&r, text).with_context(|| format!("writing {}", r.display()))?;
            }
        }
        Cmd::Eval { checkpoint, csv, pairs: paths } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let cases = pairs(&paths)?;
            let rep = evaluate(&ck.spec, &ck.store, &cases, cfg.input_mode, cfg.threshold, cfg.connectivity);
            fs::write(&csv, rep.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            for c in &rep.cases {
                match &c.dsc {
                    Ok(d) => println!("case {} dsc {d:.4}", c.case),
                    Err(e) => eprintln!("case {} failed: {e}", c.case),
                }
            }
            match rep.mean {
                Some(m) => println!("mean dsc {m:.4}"),
                None => bail!("no case could be scored"),
            }
        }
        Cmd::Gradcheck => {
            let g = &cfg.gradcheck;
            let store = init_params(&cfg.spec, cfg.seed());
            let (x, gt) = synthetic_pair(&cfg.spec, 1, g.extent, g.extent, cfg.seed());
            let rep = network_grad_check(
                &cfg.spec,
                &store,
                &x,
                &gt,
                &cfg.train.loss_weights,
                CheckMode::Eval,
                GradCheckConfig { n_samples: g.samples, h: g.h, seed: cfg.seed() },
            )?;
            let smooth = rep.max_smooth_rel_error();
            println!("samples {} kinks {}", rep.samples.len(), rep.kinks());
            println!("max relative error (all samples) {:.3e}", rep.max_rel_error);
            println!("max relative error (kink-free) {smooth:.3e}");
            let judged = match g.kinks {
                KinkPolicy::Exclude => smooth,
                KinkPolicy::Include => rep.max_rel_error,
            };
            if !(judged < g.tolerance) {
                return Err(NumericFailure(format!("gradient check: {judged:.3e} ≥ tolerance {:.1e}", g.tolerance)).into());
            }
            println!("ok: below tolerance {:.1e}", g.tolerance);
        }
        Cmd::Describe { checkpoint } => {
            let spec = match checkpoint {
                Some(p) => Checkpoint::load(p)?.spec,
                None => cfg.spec.clone(),
            };
            print!("{}", describe(&spec));
            println!("minimal input extent {}, {} parameters", spec.min_extent(), param_count(&spec));
        }
        Cmd::Montage { input, out_dir, kind, prefix } => {
            let written = match kind {
                Kind::Volume => export_montage(MontageSource::Volume(&read_any(&input)?), &out_dir, &prefix, cfg.montage_every)?,
                Kind::Mask => export_montage(MontageSource::Mask(&read_mask(&input)?), &out_dir, &prefix, cfg.montage_every)?,
                Kind::Labels => {
                    let lm = label_components(&read_mask(&input)?, cfg.connectivity);
                    export_montage(MontageSource::Labels(&lm), &out_dir, &prefix, cfg.montage_every)?
                }
            };
            println!("{} image(s) in {}", written.len(), out_dir.display());
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| {
        c.downcast_ref::<NumericFailure>().is_some() || c.downcast_ref::<u2seg_core::Error>().is_some_and(|e| e.is_numeric())
    });
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
