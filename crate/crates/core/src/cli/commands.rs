use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{RunManifest, VERSION};
use super::{
    resolve_config, CheckGradArgs, Cli, Command, GsdoPostArgs, MetricsArgs, PruneArgs, RenderArgs,
    SynthArgs, TrainArgs,
};
use crate::adp::prune_low_opacity;
use crate::grad::{check_gradients, CheckConfig, GradProblem, LossKind};
use crate::gsdo::checkpoint::save_encoder;
use crate::render::{psnr, render_image, ssim};
use crate::scene::{
    generate_synthetic_scene, load_cameras, load_dataset, load_scene, save_dataset, save_scene,
    Camera, ImageBuffer, Scene, SyntheticSpec,
};
use crate::train::{refine_only, run_ablation, train_with_checkpoints, TrainConfig, TrainOutput};
use crate::{Error, Result};

pub(super) fn dispatch(cli: &Cli, args: &[String], threads: usize) -> Result<()> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("microsplat-out"));
    let ctx = Context {
        cli,
        args,
        threads,
        out,
    };
    match &cli.command {
        Command::GenScene(a) => gen_scene(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Render(a) => render(&ctx, a),
        Command::Prune(a) => prune(&ctx, a),
        Command::GsdoPost(a) => gsdo_post(&ctx, a),
        Command::Metrics(a) => metrics(&ctx, a),
        Command::CheckGrad(a) => check_grad(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
    }
}

struct Context<'a> {
    cli: &'a Cli,
    args: &'a [String],
    threads: usize,
    out: PathBuf,
}

impl Context<'_> {
    fn manifest(
        &self,
        command: &str,
        inputs: &[(&str, &Path)],
        config: Option<&TrainConfig>,
    ) -> Result<()> {
        let m = RunManifest {
            command: command.into(),
            version: VERSION.into(),
            seed: config.map(|c| c.seed).or(self.cli.seed),
            threads: self.threads,
            args: self.args.to_vec(),
            inputs: inputs
                .iter()
                .map(|(k, p)| (k.to_string(), p.display().to_string()))
                .collect::<BTreeMap<_, _>>(),
            config: config.cloned(),
        };
        m.write(&self.out)
    }

    fn config(&self, a: &TrainArgs) -> Result<TrainConfig> {
        resolve_config(self.cli.config.as_deref(), self.cli.seed, &a.overrides)
    }
}

fn synth_spec(a: &SynthArgs, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        kind: a.kind,
        seed,
        count: a.count,
        views: a.views,
        width: a.width,
        height: a.height,
    }
}

fn gen_scene(ctx: &Context<'_>, a: &SynthArgs) -> Result<()> {
    let spec = synth_spec(a, ctx.cli.seed.unwrap_or(0));
    ctx.manifest("gen-scene", &[], None)?;
    let s = generate_synthetic_scene(&spec)?;
    save_dataset(&ctx.out, &s)?;
    let path = ctx.out.join("spec.json");
    fs::write(&path, serde_json::to_string_pretty(&spec)?).map_err(|e| Error::io(&path, e))?;
    log::info!(
        "wrote {} views and {} initial points to {}",
        s.cameras.len(),
        s.init.len(),
        ctx.out.display()
    );
    Ok(())
}

/// Training inputs from a dataset directory or a generated synthetic scene.
fn load_inputs(
    a: &TrainArgs,
    seed: u64,
    init_override: Option<&Path>,
) -> Result<(Scene, Vec<Camera>, Vec<ImageBuffer>)> {
    let (init, cameras, images) = match &a.data {
        Some(dir) => {
            let d = load_dataset(dir)?;
            (d.init, d.cameras, d.images)
        }
        None => {
            let s = generate_synthetic_scene(&synth_spec(&a.synth, seed))?;
            (Some(s.init), s.cameras, s.ground_truth)
        }
    };
    let scene = match init_override.or(a.init.as_deref()) {
        Some(p) => load_scene(p)?,
        None => init.ok_or_else(|| Error::Config("dataset has no init.ply; pass --init".into()))?,
    };
    Ok((scene, cameras, images))
}

fn input_list<'a>(a: &'a TrainArgs, extra: &[(&'a str, &'a Path)]) -> Vec<(&'a str, &'a Path)> {
    let mut v = extra.to_vec();
    if let Some(d) = &a.data {
        v.push(("data", d));
    }
    if let Some(i) = &a.init {
        v.push(("init", i));
    }
    v
}

fn write_outputs(dir: &Path, out: &TrainOutput) -> Result<()> {
    out.report.write(dir)?;
    out.timing.write(&dir.join("timing.json"))?;
    save_scene(&out.scene, dir.join("scene.ply"))?;
    if let Some(enc) = &out.encoder {
        save_encoder(enc, &dir.join("encoder"))?;
    }
    Ok(())
}

fn summarize(out: &TrainOutput) {
    let r = &out.report;
    for p in &r.phases {
        log::info!(
            "{:?}: iterations {}..{}, points {} -> {}, psnr {:.3}, ssim {:.4}",
            p.phase,
            p.start,
            p.end,
            p.n_start,
            p.n_end,
            p.psnr,
            p.ssim
        );
    }
}

fn train(ctx: &Context<'_>, a: &TrainArgs) -> Result<()> {
    let config = ctx.config(a)?;
    ctx.manifest("train", &input_list(a, &[]), Some(&config))?;
    let (scene, cameras, images) = load_inputs(a, config.seed, None)?;
    let ckpt = (config.checkpoint_interval > 0).then(|| ctx.out.join("checkpoints"));
    let out = train_with_checkpoints(scene, &cameras, &images, &config, ckpt.as_deref())?;
    summarize(&out);
    write_outputs(&ctx.out, &out)
}

fn gsdo_post(ctx: &Context<'_>, a: &GsdoPostArgs) -> Result<()> {
    let mut config = ctx.config(&a.train)?;
    config.use_gsdo = true;
    ctx.manifest(
        "gsdo-post",
        &input_list(&a.train, &[("input", &a.input)]),
        Some(&config),
    )?;
    let (scene, cameras, images) = load_inputs(&a.train, config.seed, Some(&a.input))?;
    let out = refine_only(scene, &cameras, &images, &config)?;
    log::info!(
        "psnr {:.3} -> {:.3} with {} points",
        out.report.initial_metrics.psnr,
        out.report.final_metrics.psnr,
        out.scene.len()
    );
    write_outputs(&ctx.out, &out)
}

fn ablate(ctx: &Context<'_>, a: &TrainArgs) -> Result<()> {
    let config = ctx.config(a)?;
    ctx.manifest("ablate", &input_list(a, &[]), Some(&config))?;
    let (scene, cameras, images) = load_inputs(a, config.seed, None)?;
    let table = run_ablation(scene, &cameras, &images, &config)?;
    for r in table.all_rows() {
        log::info!(
            "{:<22} psnr {:>7.3} ssim {:.4} points {}",
            r.variant,
            r.psnr,
            r.ssim,
            r.n_gs
        );
    }
    table.write(&ctx.out)
}

fn render(ctx: &Context<'_>, a: &RenderArgs) -> Result<()> {
    ctx.manifest(
        "render",
        &[("scene", &a.scene), ("cameras", &a.cameras)],
        None,
    )?;
    let scene = load_scene(&a.scene)?;
    let cameras = load_cameras(&a.cameras)?;
    match a.view {
        Some(v) => {
            let cam = cameras.get(v).ok_or_else(|| {
                Error::Config(format!("view {v} out of range ({} cameras)", cameras.len()))
            })?;
            let path = a
                .output
                .clone()
                .unwrap_or_else(|| ctx.out.join(format!("view_{v:03}.png")));
            render_image(&scene, cam)?.save_png(&path)
        }
        None => {
            if a.output.is_some() {
                return Err(Error::Config(
                    "--output needs --view; use --out for a directory".into(),
                ));
            }
            for (i, cam) in cameras.iter().enumerate() {
                render_image(&scene, cam)?.save_png(ctx.out.join(format!("view_{i:03}.png")))?;
            }
            Ok(())
        }
    }
}

fn prune(ctx: &Context<'_>, a: &PruneArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold {} must lie in (0, 1)",
            a.threshold
        )));
    }
    if ctx.cli.out.is_some() {
        ctx.manifest("prune", &[("input", &a.input)], None)?;
    }
    let scene = load_scene(&a.input)?;
    let out = prune_low_opacity(&scene, a.threshold);
    if out.refused {
        return Err(Error::Config(format!(
            "every point is below opacity {}; refusing to write an empty scene",
            a.threshold
        )));
    }
    log::info!("kept {} of {} points", out.scene.len(), scene.len());
    save_scene(&out.scene, &a.output)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
}

fn image_pairs(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    match (a.is_dir(), b.is_dir()) {
        (false, false) => Ok(vec![(
            a.display().to_string(),
            a.to_path_buf(),
            b.to_path_buf(),
        )]),
        (true, true) => {
            let mut names: Vec<String> = fs::read_dir(a)
                .map_err(|e| Error::io(a, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file() && is_image(&e.path()))
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(Error::Config(format!("{} contains no images", a.display())));
            }
            names
                .into_iter()
                .map(|n| {
                    let pb = b.join(&n);
                    if pb.is_file() {
                        Ok((n.clone(), a.join(&n), pb))
                    } else {
                        Err(Error::Config(format!(
                            "{} has no counterpart for {n}",
                            b.display()
                        )))
                    }
                })
                .collect()
        }
        _ => Err(Error::Config("compare two files or two directories".into())),
    }
}

#[derive(serde::Serialize)]
struct PairMetrics {
    name: String,
    psnr: f64,
    ssim: f64,
}

fn metrics(ctx: &Context<'_>, a: &MetricsArgs) -> Result<()> {
    let pairs = image_pairs(&a.a, &a.b)?;
    if ctx.cli.out.is_some() {
        ctx.manifest("metrics", &[("a", &a.a), ("b", &a.b)], None)?;
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, pa, pb) in pairs {
        let ia = ImageBuffer::load(&pa)?;
        let ib = ImageBuffer::load(&pb)?;
        let (p, s) = (psnr(&ia, &ib)?, ssim(&ia, &ib)?);
        println!("{name}\tPSNR {p:.2}\tSSIM {s:.4}");
        rows.push(PairMetrics {
            name,
            psnr: p,
            ssim: s,
        });
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mp = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let ms = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        println!("mean\tPSNR {mp:.2}\tSSIM {ms:.4}");
    }
    if ctx.cli.out.is_some() {
        let path = ctx.out.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn check_grad(ctx: &Context<'_>, a: &CheckGradArgs) -> Result<()> {
    let kinds: Vec<LossKind> = if a.loss == "all" {
        LossKind::ALL.to_vec()
    } else {
        vec![a.loss.parse()?]
    };
    if ctx.cli.out.is_some() {
        ctx.manifest("check-grad", &[], None)?;
    }
    let base = ctx.cli.seed.unwrap_or(0);
    let config = CheckConfig {
        step: a.step,
        ..CheckConfig::default()
    };
    let mut reports = Vec::new();
    let mut failures = 0;
    for s in 0..a.seeds {
        let problem = GradProblem::random(base + s, a.points, a.size)?;
        for &kind in &kinds {
            let r = check_gradients(&problem, kind, &config)?;
            for c in &r.classes {
                if !c.passed {
                    failures += 1;
                    log::error!(
                        "seed {} {kind} {}: max rel {:.3e}, max abs {:.3e}",
                        base + s,
                        c.class,
                        c.max_rel_error,
                        c.max_abs_error
                    );
                }
            }
            reports.push((base + s, r));
        }
    }
    for &kind in &kinds {
        let rs: Vec<_> = reports.iter().filter(|(_, r)| r.loss == kind).collect();
        let passed = rs.iter().all(|(_, r)| r.passed);
        let worst = rs
            .iter()
            .flat_map(|(_, r)| r.classes.iter().map(|c| c.max_rel_error))
            .fold(0.0, f64::max);
        println!(
            "{kind}\t{}\tmax rel {worst:.3e}",
            if passed { "pass" } else { "FAIL" }
        );
    }
    if ctx.cli.out.is_some() {
        let path = ctx.out.join("gradcheck.json");
        let json: Vec<_> = reports
            .iter()
            .map(|(s, r)| serde_json::json!({ "seed": s, "report": r }))
            .collect();
        fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(&path, e))?;
    }
    if failures > 0 {
        return Err(Error::GradientCheck(format!(
            "{failures} class report(s) out of tolerance"
        )));
    }
    Ok(())
}
