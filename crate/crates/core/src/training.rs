//! Joint primary/auxiliary loss, plain SGD, k-fold cross validation and
//! MAE/STD evaluation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::AnnotatedImage;
use crate::density::{self, count_from_density, downsample_block_sum, DensityMap, GaussianKernel};
use crate::error::{Error, Result};
use crate::model::{self, build_model, ForwardOutputs, ModelVariant, OutputGrads, GTLR_FACTORS};
use crate::params::ModelParams;
use crate::tensor::Tensor;

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many SGD steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Weights of the three auxiliary losses, each in `[0, 1]`.
    pub lambda: [f32; 3],
    pub sigma: f64,
    pub kernel_half_width: usize,
    pub gtlr_factors: [(usize, usize); 3],
    pub seed: u64,
    pub variant: ModelVariant,
    pub folds: usize,
    /// Targets are multiplied by this before training; counts divide it out.
    pub density_scale: f32,
    /// Divide each squared error by its map's pixel count.
    pub per_pixel_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 100,
            epochs: 10,
            max_steps: None,
            lambda: [1.0; 3],
            sigma: density::DEFAULT_SIGMA,
            kernel_half_width: density::DEFAULT_HALF_WIDTH,
            gtlr_factors: GTLR_FACTORS,
            seed: 0,
            variant: ModelVariant::PricnnAux,
            folds: 5,
            density_scale: 1.0,
            per_pixel_mean: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::invalid(format!("lambda values must lie in [0, 1], got {l}")));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.kernel_half_width == 0 {
            return Err(Error::invalid("kernel half width must be at least 1"));
        }
        if self.gtlr_factors != GTLR_FACTORS {
            return Err(Error::invalid(format!(
                "low-resolution factors are fixed at {GTLR_FACTORS:?}, got {:?}",
                self.gtlr_factors
            )));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !self.density_scale.is_finite() || self.density_scale <= 0.0 {
            return Err(Error::invalid(format!("density scale must be positive, got {}", self.density_scale)));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.sigma, self.kernel_half_width)
    }
}

/// The four loss terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub primary: f64,
    pub aux: [f64; 3],
    pub overall: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.primary += other.primary;
        for k in 0..3 {
            self.aux[k] += other.aux[k];
        }
        self.overall += other.overall;
    }
}

/// Full-resolution target and its three block-summed versions, already
/// multiplied by the density scale.
#[derive(Clone, Debug)]
pub struct Targets {
    pub full: Tensor,
    pub low_res: [Tensor; 3],
}

impl Targets {
    pub fn from_maps(maps: &[&DensityMap], factors: &[(usize, usize); 3], density_scale: f32) -> Result<Self> {
        let scaled = |m: &DensityMap| {
            let mut t = m.to_tensor();
            t.scale(density_scale);
            t
        };
        let full: Vec<Tensor> = maps.iter().map(|m| scaled(m)).collect();
        let mut low_res = Vec::with_capacity(3);
        for &f in factors {
            let level =
                maps.iter().map(|m| downsample_block_sum(m, f).map(|d| scaled(&d))).collect::<Result<Vec<_>>>()?;
            low_res.push(Tensor::stack(&level.iter().collect::<Vec<_>>())?);
        }
        Ok(Targets {
            full: Tensor::stack(&full.iter().collect::<Vec<_>>())?,
            low_res: low_res.try_into().expect("three levels"),
        })
    }
}

/// Sum of squared differences (f64) and the gradient `scale·(pred - target)`.
fn squared_error(pred: &Tensor, target: &Tensor, grad_scale: f64) -> Result<(f64, Tensor)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "prediction dims {:?} do not match target dims {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let mut sum = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            sum += d * d;
            (grad_scale * d) as f32
        })
        .collect();
    Ok((sum, Tensor::from_vec(pred.dims(), grad)?))
}

/// Joint loss and its gradient w.r.t. the network outputs, with the batch
/// average taken over `batch_norm` items (normally `outputs.y_hat.batch()`).
pub fn loss_and_grads(
    outputs: &ForwardOutputs,
    targets: &Targets,
    lambda: [f32; 3],
    per_pixel_mean: bool,
    batch_norm: usize,
) -> Result<(LossBreakdown, OutputGrads)> {
    let b = batch_norm as f64;
    let pixels = |t: &Tensor| if per_pixel_mean { (t.rows() * t.cols()) as f64 } else { 1.0 };

    let norm = b * pixels(&targets.full);
    let (sq, g_y) = squared_error(&outputs.y_hat, &targets.full, 2.0 / norm)?;
    let mut breakdown = LossBreakdown { primary: sq / norm, ..Default::default() };
    breakdown.overall = breakdown.primary;

    let aux_grads = match &outputs.aux {
        Some(aux) => {
            let mut grads = Vec::with_capacity(3);
            for k in 0..3 {
                let norm = b * pixels(&targets.low_res[k]);
                let (sq, g) = squared_error(&aux[k], &targets.low_res[k], 2.0 * lambda[k] as f64 / norm)?;
                breakdown.aux[k] = sq / norm;
                breakdown.overall += lambda[k] as f64 * breakdown.aux[k];
                grads.push(g);
            }
            Some(grads.try_into().expect("three heads"))
        }
        None => None,
    };
    Ok((breakdown, OutputGrads { y_hat: g_y, aux: aux_grads }))
}

/// `L + Σ λ_k L_k` for a batch.
pub fn loss_overall(outputs: &ForwardOutputs, targets: &Targets, config: &TrainConfig) -> Result<LossBreakdown> {
    let b = outputs.y_hat.batch();
    loss_and_grads(outputs, targets, config.lambda, config.per_pixel_mean, b).map(|(l, _)| l)
}

/// `p ← p − lr·g` over every group.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f32) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::invalid("gradient layout does not match parameters"));
    }
    params.axpy(-lr, grads)
}

/// One SGD step's worth of logging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossBreakdown,
}

impl BatchRecord {
    pub const CSV_HEADER: &'static str = "epoch,batch,L,L1,L2,L3,L_overall";
}

impl fmt::Display for BatchRecord {
    /// `epoch,batch,L,L1,L2,L3,L_overall`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(f, "{},{},{},{},{},{},{}", self.epoch, self.batch, l.primary, l.aux[0], l.aux[1], l.aux[2], l.overall)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<BatchRecord>,
}

impl TrainOutcome {
    /// Last combined loss over the first one; `None` for an empty history.
    pub fn loss_ratio(&self) -> Option<f64> {
        let first = self.history.first()?.loss.overall;
        let last = self.history.last()?.loss.overall;
        Some(last / first)
    }
}

/// Precomputed per-image training sample.
struct Sample {
    input: Tensor,
    targets: Targets,
}

fn check_dataset(dataset: &[AnnotatedImage]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    for img in dataset {
        let (h, w) = (img.rows(), img.cols());
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::invalid(format!(
                "image `{}` is {h}x{w}; rows and cols must be positive multiples of 8",
                img.id
            )));
        }
        img.centroids.check_bounds(h, w)?;
    }
    Ok(())
}

/// Seeded generator for model initialisation.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded generator for epoch shuffles; independent of [`init_rng`] so all
/// variants see the same batch order for a given seed.
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Builds a fresh model from `config.seed` and trains it.
pub fn train(
    dataset: &[AnnotatedImage],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&BatchRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(dataset)?;
    let params = build_model(config.variant, &mut init_rng(config.seed))?;
    train_from(params, dataset, config, progress)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    dataset: &[AnnotatedImage],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&BatchRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(dataset)?;
    model::check_layout(&params, config.variant)?;

    let kernel = config.kernel()?;
    let samples = dataset
        .iter()
        .map(|img| {
            let map = density::render_density_map(img.rows(), img.cols(), &img.centroids, &kernel)?;
            Ok(Sample {
                input: img.input_tensor(),
                targets: Targets::from_maps(&[&map], &config.gtlr_factors, config.density_scale)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = shuffle_rng(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::new();
    let mut steps = 0usize;
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let (loss, grads) = batch_gradient(&params, config, chunk.iter().map(|&i| &samples[i]))?;
            sgd_step(&mut params, &grads, config.learning_rate)?;
            let record = BatchRecord { epoch, batch, loss };
            progress(&record);
            history.push(record);
            steps += 1;
        }
    }
    Ok(TrainOutcome { params, history })
}

fn batch_gradient<'a>(
    params: &ModelParams,
    config: &TrainConfig,
    batch: impl ExactSizeIterator<Item = &'a Sample>,
) -> Result<(LossBreakdown, ModelParams)> {
    let n = batch.len();
    let mut total = LossBreakdown::default();
    let mut grads = params.zeros_like();
    // Items are processed one at a time and summed in batch order.
    for s in batch {
        let (loss, g) = sample_gradient(params, config, &s.input, &s.targets, n)?;
        total.accumulate(&loss);
        grads.axpy(1.0, &g)?;
    }
    Ok((total, grads))
}

/// Loss and parameter gradient of one `(1, 1, H, W)` item, averaged as if it
/// were one of `batch_norm` items.
pub fn sample_gradient(
    params: &ModelParams,
    config: &TrainConfig,
    input: &Tensor,
    targets: &Targets,
    batch_norm: usize,
) -> Result<(LossBreakdown, ModelParams)> {
    let (outputs, cache) = model::forward_with_cache(params, input, config.variant)?;
    let (loss, out_grads) = loss_and_grads(&outputs, targets, config.lambda, config.per_pixel_mean, batch_norm)?;
    let grads = model::backward(params, config.variant, &outputs, &cache, &out_grads)?;
    Ok((loss, grads))
}

/// Train/validation index sets of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded shuffle followed by `folds` contiguous, near-equal validation
/// blocks (sizes differ by at most one, larger blocks first).
pub fn kfold_split(n_items: usize, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n_items {
        return Err(Error::invalid(format!("cannot split {n_items} items into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n_items / folds, n_items % folds);
    let mut start = 0;
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut validation = order[start..start + len].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        validation.sort_unstable();
        train.sort_unstable();
        out.push(Fold { train, validation });
        start += len;
    }
    Ok(out)
}

/// Per-image counting result.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub true_count: f64,
    pub estimated_count: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageEval>,
    pub mae: f64,
    /// Sample standard deviation (n − 1) of the absolute errors; 0 for a
    /// single image.
    pub std: f64,
}

impl EvalReport {
    pub fn from_counts(counts: impl IntoIterator<Item = (String, f64, f64)>) -> Result<Self> {
        let per_image: Vec<ImageEval> = counts
            .into_iter()
            .map(|(id, true_count, estimated_count)| ImageEval {
                id,
                true_count,
                estimated_count,
                abs_error: (estimated_count - true_count).abs(),
            })
            .collect();
        if per_image.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty dataset"));
        }
        let n = per_image.len() as f64;
        let mae = per_image.iter().map(|e| e.abs_error).sum::<f64>() / n;
        let std = if per_image.len() < 2 {
            0.0
        } else {
            (per_image.iter().map(|e| (e.abs_error - mae).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(EvalReport { per_image, mae, std })
    }

    /// Pools the per-image rows of several reports.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Result<Self> {
        Self::from_counts(
            reports
                .into_iter()
                .flat_map(|r| r.per_image.iter().map(|e| (e.id.clone(), e.true_count, e.estimated_count))),
        )
    }
}

/// Counts every image with the trained network and compares with the
/// annotation count.
pub fn evaluate(
    params: &ModelParams,
    variant: ModelVariant,
    dataset: &[AnnotatedImage],
    density_scale: f32,
) -> Result<EvalReport> {
    check_dataset(dataset)?;
    let counts = dataset
        .iter()
        .map(|img| {
            let est = estimate_count(params, variant, &img.input_tensor(), density_scale)?;
            Ok((img.id.clone(), img.centroids.len() as f64, est))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_counts(counts)
}

/// Integrates the predicted density of a `(1, 1, H, W)` input.
pub fn estimate_count(params: &ModelParams, variant: ModelVariant, input: &Tensor, density_scale: f32) -> Result<f64> {
    let map = predict_map(params, variant, input, density_scale)?;
    Ok(count_from_density(&map))
}

/// Predicted density of a `(1, 1, H, W)` input with the density scale
/// divided out.
pub fn predict_map(
    params: &ModelParams,
    variant: ModelVariant,
    input: &Tensor,
    density_scale: f32,
) -> Result<DensityMap> {
    let mut y = model::predict_density(params, input, variant)?;
    y.scale(1.0 / density_scale);
    DensityMap::from_tensor(&y, 0)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub validation: Vec<usize>,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub pooled: EvalReport,
}

/// k-fold cross validation: fold `f` trains with seed `config.seed + f` and
/// is evaluated on its held-out images. With `parallel` the folds run on
/// separate threads; results are identical to sequential execution.
pub fn cross_validate(dataset: &[AnnotatedImage], config: &TrainConfig, parallel: bool) -> Result<CrossValidation> {
    config.validate()?;
    check_dataset(dataset)?;
    let splits = kfold_split(dataset.len(), config.folds, config.seed)?;

    let run_fold = |fold: usize, split: &Fold| -> Result<FoldResult> {
        let seed = config.seed.wrapping_add(fold as u64);
        let fold_config = TrainConfig { seed, ..config.clone() };
        let train_set: Vec<AnnotatedImage> = split.train.iter().map(|&i| dataset[i].clone()).collect();
        let val_set: Vec<AnnotatedImage> = split.validation.iter().map(|&i| dataset[i].clone()).collect();
        let outcome = train(&train_set, &fold_config, &mut |_| {})?;
        let report = evaluate(&outcome.params, config.variant, &val_set, config.density_scale)?;
        Ok(FoldResult { fold, seed, validation: split.validation.clone(), outcome, report })
    };

    let folds: Vec<FoldResult> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                splits.iter().enumerate().map(|(f, split)| s.spawn(move || run_fold(f, split))).collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect::<Result<Vec<_>>>()
        })?
    } else {
        splits.iter().enumerate().map(|(f, split)| run_fold(f, split)).collect::<Result<Vec<_>>>()?
    };
    let pooled = EvalReport::pooled(folds.iter().map(|f| &f.report))?;
    Ok(CrossValidation { folds, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{gaussian_kernel, render_density_map, Centroid, CentroidSet};

    fn map_with_cells(rows: usize, cols: usize, cells: &[(u32, u32)]) -> DensityMap {
        let set = CentroidSet::new(cells.iter().map(|&(x, y)| Centroid { x, y }).collect());
        render_density_map(rows, cols, &set, &gaussian_kernel(3.0, 10).unwrap()).unwrap()
    }

    fn outputs_from(targets: &Targets, offset: f32, with_aux: bool) -> ForwardOutputs {
        let shift = |t: &Tensor| {
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|v| *v += offset);
            t
        };
        ForwardOutputs {
            y_hat: shift(&targets.full),
            aux: with_aux.then(|| [shift(&targets.low_res[0]), shift(&targets.low_res[1]), shift(&targets.low_res[2])]),
            features: [Tensor::zeros([1, 1, 1, 1]), Tensor::zeros([1, 1, 1, 1]), Tensor::zeros([1, 1, 1, 1])],
        }
    }

    fn zero_outputs(targets: &Targets) -> ForwardOutputs {
        ForwardOutputs {
            y_hat: Tensor::zeros(targets.full.dims()),
            aux: Some([
                Tensor::zeros(targets.low_res[0].dims()),
                Tensor::zeros(targets.low_res[1].dims()),
                Tensor::zeros(targets.low_res[2].dims()),
            ]),
            features: [Tensor::zeros([1, 1, 1, 1]), Tensor::zeros([1, 1, 1, 1]), Tensor::zeros([1, 1, 1, 1])],
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let m = map_with_cells(32, 32, &[(16, 16), (5, 9)]);
        let t = Targets::from_maps(&[&m], &GTLR_FACTORS, 1.0).unwrap();
        let l = loss_overall(&outputs_from(&t, 0.0, true), &t, &TrainConfig::default()).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn constant_offset_costs_pixel_count() {
        let m = map_with_cells(24, 40, &[(20, 12)]);
        let t = Targets::from_maps(&[&m], &GTLR_FACTORS, 1.0).unwrap();
        let cfg = TrainConfig { lambda: [0.0; 3], ..Default::default() };
        let l = loss_overall(&outputs_from(&t, 1.0, true), &t, &cfg).unwrap();
        assert!((l.overall - 24.0 * 40.0).abs() < 1e-3, "{}", l.overall);
        assert_eq!(l.overall, l.primary);
    }

    #[test]
    fn zero_prediction_costs_sum_of_target_norms() {
        let m = map_with_cells(32, 32, &[(16, 16)]);
        let t = Targets::from_maps(&[&m], &GTLR_FACTORS, 1.0).unwrap();
        // Oracle: norms computed straight from the rendered map and its
        // block sums, independent of the loss code.
        let mut expected: f64 = m.values().iter().map(|&v| (v as f64).powi(2)).sum();
        for f in GTLR_FACTORS {
            let d = downsample_block_sum(&m, f).unwrap();
            expected += d.values().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        }
        let l = loss_overall(&zero_outputs(&t), &t, &TrainConfig::default()).unwrap();
        assert!((l.overall - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn loss_averages_over_batch_only() {
        let a = map_with_cells(16, 16, &[(8, 8)]);
        let b = map_with_cells(16, 16, &[(3, 3), (12, 4)]);
        let t = Targets::from_maps(&[&a, &b], &GTLR_FACTORS, 1.0).unwrap();
        let cfg = TrainConfig { lambda: [0.0; 3], ..Default::default() };
        let l = loss_overall(&outputs_from(&t, 0.5, false), &t, &cfg).unwrap();
        assert!((l.primary - 0.25 * 256.0).abs() < 1e-4, "{}", l.primary);
        let pp = TrainConfig { per_pixel_mean: true, ..cfg };
        let l = loss_overall(&outputs_from(&t, 0.5, false), &t, &pp).unwrap();
        assert!((l.primary - 0.25).abs() < 1e-6, "{}", l.primary);
    }

    #[test]
    fn mismatched_target_rejected() {
        let a = map_with_cells(16, 16, &[(8, 8)]);
        let b = map_with_cells(32, 16, &[(8, 8)]);
        let ta = Targets::from_maps(&[&a], &GTLR_FACTORS, 1.0).unwrap();
        let tb = Targets::from_maps(&[&b], &GTLR_FACTORS, 1.0).unwrap();
        assert!(loss_overall(&outputs_from(&ta, 0.0, true), &tb, &TrainConfig::default()).is_err());
    }

    #[test]
    fn lambda_increases_loss_when_aux_error_positive() {
        let m = map_with_cells(32, 32, &[(16, 16)]);
        let t = Targets::from_maps(&[&m], &GTLR_FACTORS, 1.0).unwrap();
        let out = outputs_from(&t, 0.1, true);
        let mut prev = -1.0;
        for l in [0.0, 0.25, 0.5, 1.0] {
            let cfg = TrainConfig { lambda: [0.3, l, 0.7], ..Default::default() };
            let v = loss_overall(&out, &t, &cfg).unwrap().overall;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn sgd_examples() {
        use crate::params::{Layer, ParamGroup};
        use crate::tensor::ConvFilter;
        let mk = |w: f32| {
            ModelParams::new(vec![Layer {
                name: "p".into(),
                group: ParamGroup::Theta1,
                filter: ConvFilter::new(Tensor::filled([1, 1, 1, 1], w), vec![0.0]).unwrap(),
            }])
            .unwrap()
        };
        let mut p = mk(1.0);
        sgd_step(&mut p, &mk(2.0), 0.0).unwrap();
        assert_eq!(p, mk(1.0));
        sgd_step(&mut p, &mk(2.0), 0.1).unwrap();
        assert!((p.layers()[0].filter.weights.data()[0] - 0.8).abs() < 1e-7);

        // descent on f(p) = p²
        let mut q = mk(3.0);
        let before = q.sq_norm(None);
        let mut g = q.zeros_like();
        g.axpy(2.0, &q).unwrap();
        sgd_step(&mut q, &g, 0.01).unwrap();
        assert!(q.sq_norm(None) < before);

        let other = ModelParams::new(vec![]).unwrap();
        assert!(sgd_step(&mut q, &other, 0.1).is_err());
    }

    #[test]
    fn kfold_sizes() {
        let folds = kfold_split(10, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        assert!(folds.iter().all(|f| f.validation.len() == 2 && f.train.len() == 8));
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let mut sizes: Vec<usize> = kfold_split(49, 5, 7).unwrap().iter().map(|f| f.validation.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![9, 10, 10, 10, 10]);
    }

    #[test]
    fn kfold_errors() {
        assert!(kfold_split(3, 5, 0).is_err());
        assert!(kfold_split(10, 1, 0).is_err());
    }

    #[test]
    fn report_statistics() {
        let r = EvalReport::from_counts(vec![("a".into(), 10.0, 11.0), ("b".into(), 5.0, 2.0)]).unwrap();
        assert!((r.mae - 2.0).abs() < 1e-12);
        assert!((r.std - 2f64.sqrt()).abs() < 1e-12);
        let swapped = EvalReport::from_counts(vec![("b".into(), 5.0, 2.0), ("a".into(), 10.0, 11.0)]).unwrap();
        assert_eq!((r.mae, r.std), (swapped.mae, swapped.std));
        assert!(EvalReport::from_counts(Vec::new()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: [1.5, 0.0, 0.0], ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda: [-0.1, 0.0, 0.0], ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gtlr_factors: [(4, 4), (4, 4), (2, 2)], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(&[], &TrainConfig::default(), &mut |_| {}).is_err());
    }
}
