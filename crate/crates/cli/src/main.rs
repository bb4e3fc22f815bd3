//! `cellcount`: synthetic data, density maps, training, counting,
//! evaluation, cross validation and gradient checks.
//!
//! Exit codes: 0 success, 1 invalid input or failed check, 2 I/O error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cellcount::dataio::{
    self, density_path, load_checkpoint, load_dataset, read_dmap, read_pgm, save_checkpoint, synth_generate,
    write_dataset, write_dmap, AnnotatedImage, Checkpoint, SynthConfig,
};
use cellcount::density::{count_from_density, render_density_map, GaussianKernel};
use cellcount::gradcheck::{finite_diff_check_groups, seeded_instance, Objective, INSTANCE_SIZE};
use cellcount::model::ModelVariant;
use cellcount::training::{
    cross_validate, evaluate, predict_map, shuffle_rng, train, BatchRecord, EvalReport, TrainConfig,
};

/// Largest per-group relative error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-2;
/// `--assert-converge` threshold on final / initial combined loss.
const CONVERGE_RATIO: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "cellcount", version, about = "Cell counting by density-map regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic annotated dataset
    Synth(SynthArgs),
    /// Render ground-truth density maps for a dataset
    Density(DensityArgs),
    /// Train a model and write a checkpoint plus a loss log
    Train(TrainCmd),
    /// Estimate cell counts for individual images
    Count(CountArgs),
    /// Evaluate a checkpoint (or the ground-truth density maps) on a dataset
    Eval(EvalArgs),
    /// k-fold cross validation
    Xval(XvalArgs),
    /// Compare analytic and finite-difference gradients on a small instance
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// 64x64 images, 5-30 cells, batch 8
    #[default]
    Desk,
    /// 49 images of 512x512, 202-834 cells, batch 100
    PaperScale,
}

/// `<rows>x<cols>`
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Size {
    rows: usize,
    cols: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected <rows>x<cols>, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a size"));
        Ok(Size { rows: parse(r)?, cols: parse(c)? })
    }
}

/// `<lo>:<hi>`
#[derive(Clone, Copy, Debug, PartialEq)]
struct Span<T>(T, T);

impl<T: FromStr> FromStr for Span<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected <lo>:<hi>, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<T>().map_err(|_| format!("`{v}` is not a number"));
        Ok(Span(parse(a)?, parse(b)?))
    }
}

fn parse_lambda(s: &str) -> Result<[f32; 3], String> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f32>| format!("expected three comma-separated weights, got {}", v.len()))
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Size preset for the flags below that mention it
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Number of images [default: 10; 49 with paper-scale]
    #[arg(long)]
    num_images: Option<usize>,
    /// Image size as <rows>x<cols> [default: 64x64; 512x512 with paper-scale]
    #[arg(long)]
    size: Option<Size>,
    /// Cell count range <min>:<max> [default: 5:30; 202:834 with paper-scale]
    #[arg(long)]
    cells: Option<Span<usize>>,
    /// Blob standard deviation range in pixels
    #[arg(long, default_value = "1.5:2.5")]
    blob_sigma: Span<f64>,
    /// Blob peak amplitude range
    #[arg(long, default_value = "0.5:1")]
    amplitude: Span<f64>,
    /// Standard deviation of the additive Gaussian noise
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    /// Constant background intensity
    #[arg(long, default_value_t = 0.1)]
    background: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Gaussian kernel standard deviation in pixels
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    /// Odd kernel side length in pixels
    #[arg(long, default_value_t = 21)]
    kernel_size: usize,
}

impl KernelArgs {
    fn kernel(&self) -> Result<GaussianKernel> {
        Ok(GaussianKernel::with_size(self.sigma, self.kernel_size)?)
    }
}

#[derive(Args, Debug)]
struct DensityArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Network variant: pricnn-aux, pricnn or fcrn
    #[arg(long, default_value = "pricnn-aux")]
    model: ModelVariant,
    /// Auxiliary loss weights λ1,λ2,λ3 (pricnn-aux only) [default: 1.0,1.0,1.0]
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<[f32; 3]>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f32,
    /// Batch size preset for `--batch-size`
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Mini-batch size [default: 8; 100 with paper-scale]
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Stop after this many SGD steps
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Multiplier applied to training targets and divided out when counting
    #[arg(long, default_value_t = 1.0)]
    density_scale: f32,
    /// Average squared errors over pixels as well as over the batch
    #[arg(long)]
    per_pixel_mean: bool,
}

impl TrainArgs {
    fn config(&self, folds: usize) -> Result<TrainConfig> {
        if self.lambda.is_some() && self.model != ModelVariant::PricnnAux {
            bail!(cellcount::Error::InvalidArgument(format!(
                "--lambda only applies to --model pricnn-aux (got {})",
                self.model
            )));
        }
        if self.kernel.kernel_size < 3 || self.kernel.kernel_size.is_multiple_of(2) {
            bail!(cellcount::Error::InvalidArgument(format!(
                "--kernel-size must be odd and at least 3, got {}",
                self.kernel.kernel_size
            )));
        }
        let batch_size = self.batch_size.unwrap_or(match self.preset {
            Preset::Desk => 8,
            Preset::PaperScale => 100,
        });
        let config = TrainConfig {
            learning_rate: self.lr,
            batch_size,
            epochs: self.epochs,
            max_steps: self.max_steps,
            lambda: self.lambda.unwrap_or([1.0; 3]),
            sigma: self.kernel.sigma,
            kernel_half_width: self.kernel.kernel_size / 2,
            seed: self.seed,
            variant: self.model,
            folds,
            density_scale: self.density_scale,
            per_pixel_mean: self.per_pixel_mean,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    train: TrainArgs,
    /// Checkpoint path to write
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV [default: <out>.loss.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Exit 1 unless the final combined loss is below 1% of the first
    #[arg(long)]
    assert_converge: bool,
}

#[derive(Args, Debug)]
struct CountArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// PGM images; rows and cols must be multiples of 8
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Write the estimated density map (single image only)
    #[arg(long)]
    dump_density: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Count from `density/<id>.dmap` instead of running a network
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct XvalArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Directory for the per-fold checkpoints, loss logs and reports
    #[arg(long)]
    out_dir: PathBuf,
    /// Train folds on separate threads
    #[arg(long)]
    parallel_folds: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-2)]
    step: f64,
    /// Parameters sampled per group
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: perturb the analytic gradient before comparing
    #[arg(long)]
    corrupt_grad: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = io::stdout();
    let mut out = out.lock();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, &mut out),
        Command::Density(a) => cmd_density(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Count(a) => cmd_count(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Xval(a) => cmd_xval(a, &mut out),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cellcount::Error>() {
            return match e {
                cellcount::Error::InvalidArgument(_) => 1,
                cellcount::Error::Format(_) | cellcount::Error::Io(_) => 2,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(cellcount::Error::InvalidArgument(msg.into()))
}

fn cmd_synth(a: SynthArgs, out: &mut impl Write) -> Result<()> {
    let base = match a.preset {
        Preset::Desk => SynthConfig::default(),
        Preset::PaperScale => SynthConfig::paper_scale(),
    };
    let size = a.size.unwrap_or(Size { rows: base.rows, cols: base.cols });
    let cells = a.cells.unwrap_or(Span(base.cells_min, base.cells_max));
    let config = SynthConfig {
        num_images: a.num_images.unwrap_or(base.num_images),
        rows: size.rows,
        cols: size.cols,
        cells_min: cells.0,
        cells_max: cells.1,
        blob_sigma_range: (a.blob_sigma.0, a.blob_sigma.1),
        amplitude_range: (a.amplitude.0, a.amplitude.1),
        noise_sigma: a.noise,
        background_level: a.background,
        seed: a.seed,
    };
    config.validate()?;
    let images = synth_generate(&config)?;
    write_dataset(&a.out, &images).with_context(|| format!("writing dataset to {}", a.out.display()))?;

    for img in &images {
        writeln!(out, "{} {}", img.id, img.centroids.len())?;
    }
    let counts: Vec<f64> = images.iter().map(|i| i.centroids.len() as f64).collect();
    let (mean, std) = mean_std(&counts);
    writeln!(out, "{} images, cells per image {mean:.1}±{std:.1}", images.len())?;
    Ok(())
}

/// Mean and sample standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (mean, std)
}

fn load_data(dir: &Path) -> Result<Vec<AnnotatedImage>> {
    let data = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if data.is_empty() {
        return Err(invalid(format!("no images found in {}", dir.join(dataio::IMAGES_DIR).display())));
    }
    Ok(data)
}

fn cmd_density(a: DensityArgs, out: &mut impl Write) -> Result<()> {
    let kernel = a.kernel.kernel()?;
    let data = load_data(&a.data)?;
    fs::create_dir_all(a.data.join(dataio::DENSITY_DIR))?;
    for img in &data {
        img.centroids.check_bounds(img.rows(), img.cols()).with_context(|| format!("annotation of `{}`", img.id))?;
        let map = render_density_map(img.rows(), img.cols(), &img.centroids, &kernel)?;
        let path = density_path(&a.data, &img.id);
        write_dmap(&path, &map).with_context(|| format!("writing {}", path.display()))?;
        writeln!(out, "{} {:.4}", img.id, count_from_density(&map))?;
    }
    Ok(())
}

fn write_log(path: &Path, history: &[BatchRecord]) -> Result<()> {
    let mut text = String::from(BatchRecord::CSV_HEADER);
    text.push('\n');
    for r in history {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn cmd_train(a: TrainCmd, out: &mut impl Write) -> Result<()> {
    let config = a.train.config(TrainConfig::default().folds)?;
    let data = load_data(&a.train.data)?;
    let outcome = train(&data, &config, &mut |_| {})?;

    let ckpt = Checkpoint { variant: config.variant, density_scale: config.density_scale, params: outcome.params };
    save_checkpoint(&a.out, &ckpt).with_context(|| format!("writing {}", a.out.display()))?;
    let log = a.log.unwrap_or_else(|| default_log_path(&a.out));
    write_log(&log, &outcome.history)?;

    let (first, last) = match (outcome.history.first(), outcome.history.last()) {
        (Some(f), Some(l)) => (f.loss.overall, l.loss.overall),
        _ => return Err(invalid("no training steps were run (check --epochs and --max-steps)")),
    };
    writeln!(
        out,
        "{} steps, combined loss {first:.6e} -> {last:.6e} (ratio {:.4})",
        outcome.history.len(),
        last / first
    )?;
    if a.assert_converge && last.partial_cmp(&(CONVERGE_RATIO * first)) != Some(std::cmp::Ordering::Less) {
        bail!(
            "training did not converge: final loss {last:.6e} is not below {:.0}% of initial {first:.6e}",
            CONVERGE_RATIO * 100.0
        );
    }
    Ok(())
}

fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn cmd_count(a: CountArgs, out: &mut impl Write) -> Result<()> {
    if a.dump_density.is_some() && a.images.len() != 1 {
        return Err(invalid("--dump-density takes exactly one image"));
    }
    let ckpt = load_checkpoint(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    for path in &a.images {
        let img = read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
        if img.height % 8 != 0 || img.width % 8 != 0 {
            return Err(invalid(format!(
                "{} is {}x{}; rows and cols must be multiples of 8 for the three 2x2 pooling stages",
                path.display(),
                img.height,
                img.width
            )));
        }
        let map = predict_map(&ckpt.params, ckpt.variant, &dataio::image_tensor(&img), ckpt.density_scale)?;
        writeln!(out, "{} {:.2}", image_id(path), count_from_density(&map))?;
        if let Some(dump) = &a.dump_density {
            write_dmap(dump, &map).with_context(|| format!("writing {}", dump.display()))?;
        }
    }
    Ok(())
}

fn print_report(out: &mut impl Write, report: &EvalReport) -> Result<()> {
    writeln!(out, "id,true,estimated,abs_error")?;
    for e in &report.per_image {
        writeln!(out, "{},{},{:.3},{:.3}", e.id, e.true_count, e.estimated_count, e.abs_error)?;
    }
    writeln!(out, "MAE,{:.3}", report.mae)?;
    writeln!(out, "STD,{:.3}", report.std)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut impl Write) -> Result<()> {
    let data = load_data(&a.data)?;
    let report = match &a.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path, None).with_context(|| format!("loading {}", path.display()))?;
            evaluate(&ckpt.params, ckpt.variant, &data, ckpt.density_scale)?
        }
        None => {
            let counts = data
                .iter()
                .map(|img| {
                    let path = density_path(&a.data, &img.id);
                    let map = read_dmap(&path).with_context(|| format!("reading {}", path.display()))?;
                    Ok((img.id.clone(), img.centroids.len() as f64, count_from_density(&map)))
                })
                .collect::<Result<Vec<_>>>()?;
            EvalReport::from_counts(counts)?
        }
    };
    print_report(out, &report)
}

fn cmd_xval(a: XvalArgs, out: &mut impl Write) -> Result<()> {
    let config = a.train.config(a.folds)?;
    let data = load_data(&a.train.data)?;
    if a.folds > data.len() {
        return Err(invalid(format!("{} folds requested but the dataset has {} images", a.folds, data.len())));
    }
    let cv = cross_validate(&data, &config, a.parallel_folds)?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    writeln!(out, "fold,mae,std")?;
    for f in &cv.folds {
        let ckpt = Checkpoint {
            variant: config.variant,
            density_scale: config.density_scale,
            params: f.outcome.params.clone(),
        };
        let path = a.out_dir.join(format!("fold_{}.drmw", f.fold));
        save_checkpoint(&path, &ckpt).with_context(|| format!("writing {}", path.display()))?;
        write_log(&a.out_dir.join(format!("fold_{}.loss.csv", f.fold)), &f.outcome.history)?;
        let report_path = a.out_dir.join(format!("fold_{}.csv", f.fold));
        let mut report = Vec::new();
        print_report(&mut report, &f.report)?;
        fs::write(&report_path, report).with_context(|| format!("writing {}", report_path.display()))?;
        writeln!(out, "{},{:.3},{:.3}", f.fold, f.report.mae, f.report.std)?;
    }
    writeln!(out, "pooled,{:.3},{:.3}", cv.pooled.mae, cv.pooled.std)?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut impl Write) -> Result<()> {
    if !a.step.is_finite() || a.step <= 0.0 {
        return Err(invalid(format!("--step must be positive, got {}", a.step)));
    }
    if a.samples == 0 {
        return Err(invalid("--samples must be at least 1"));
    }
    let variant = ModelVariant::PricnnAux;
    let (params, objective) = seeded_instance(variant, a.seed)?;
    let mut grad = objective.gradient(&params)?;
    if a.corrupt_grad {
        let copy = grad.clone();
        grad.axpy(0.5, &copy)?;
    }
    let checks = finite_diff_check_groups(&objective, &params, &grad, a.step, a.samples, &mut shuffle_rng(a.seed))?;

    writeln!(
        out,
        "{variant} {INSTANCE_SIZE}x{INSTANCE_SIZE} step={} samples={} seed={}{}",
        a.step,
        a.samples,
        a.seed,
        if a.corrupt_grad { " corrupt-grad" } else { "" }
    )?;
    if let Some(c) = checks.first() {
        writeln!(out, "relative error floor {:.3e}", c.floor)?;
    }
    writeln!(out, "group,samples,skipped_kinks,max_rel_error,status")?;
    let mut failed = 0;
    for c in &checks {
        let ok = c.max_rel_error <= GRADCHECK_TOLERANCE;
        failed += usize::from(!ok);
        let group = c.group.map(|g| g.label()).unwrap_or("all");
        writeln!(
            out,
            "{group},{},{},{:.3e},{}",
            c.samples,
            c.skipped,
            c.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        )?;
    }
    if failed > 0 {
        bail!("{failed} of {} groups exceed relative error {GRADCHECK_TOLERANCE}", checks.len());
    }
    Ok(())
}
