//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::dataio::{synth_generate, SynthConfig};
use crate::density::render_density_map;
use crate::error::{Error, Result};
use crate::model::{self, build_model, ActivationPattern, ModelVariant};
use crate::params::{ModelParams, ParamGroup, ScalarRef};
use crate::tensor::Tensor;
use crate::training::{init_rng, loss_overall, sample_gradient, Targets, TrainConfig};

/// Derivatives are compared relative to at least this fraction of the
/// largest analytic gradient entry. Entries far below it are dominated by
/// the rounding noise of a 32-bit forward pass.
pub const FLOOR_FRACTION: f64 = 1e-3;
/// How many candidates per requested sample may be tried before giving up.
const CANDIDATES_PER_SAMPLE: usize = 20;

/// Scalar objective over a parameter set with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ModelParams) -> Result<f64>;
    fn gradient(&self, params: &ModelParams) -> Result<ModelParams>;

    /// The value together with the activation pattern of a piecewise-smooth
    /// objective. Samples whose perturbation changes the pattern straddle a
    /// kink and are skipped.
    fn value_and_pattern(&self, params: &ModelParams) -> Result<(f64, Option<ActivationPattern>)> {
        Ok((self.value(params)?, None))
    }
}

/// Result of checking one group (or the whole set when `group` is `None`).
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub group: Option<ParamGroup>,
    pub samples: usize,
    /// Candidates rejected because the perturbation crossed a kink.
    pub skipped: usize,
    /// Denominator floor used by [`relative_error`].
    pub floor: f64,
    pub max_rel_error: f64,
    /// Sampled entries as `(analytic, numeric)`.
    pub pairs: Vec<(f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`, zero when all three are zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// [`FLOOR_FRACTION`] of the largest `|g|` in `grad`.
pub fn gradient_floor(grad: &ModelParams) -> f64 {
    let max = grad
        .layers()
        .iter()
        .flat_map(|l| l.filter.weights.data().iter().chain(&l.filter.bias))
        .fold(0.0f32, |m, v| m.max(v.abs()));
    FLOOR_FRACTION * max as f64
}

/// Picks `samples` random scalars of `params`, compares the analytic
/// gradient with `(f(p+h) - f(p-h)) / 2h`, and returns the largest
/// [`relative_error`] against [`gradient_floor`].
pub fn finite_diff_check<O, R>(f: &O, params: &ModelParams, step: f64, samples: usize, rng: &mut R) -> Result<f64>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    let grad = f.gradient(params)?;
    Ok(check_refs(f, params, &grad, &params.scalar_refs(None), step, samples, rng)?.max_rel_error)
}

/// [`finite_diff_check`] run separately for every group present in `params`,
/// drawing `samples` scalars from each. `grad` is the analytic gradient at
/// `params`, supplied so callers can inspect or tamper with it.
pub fn finite_diff_check_groups<O, R>(
    f: &O,
    params: &ModelParams,
    grad: &ModelParams,
    step: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<GroupCheck>>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    if !params.same_layout(grad) {
        return Err(Error::invalid("gradient layout differs from parameters"));
    }
    params
        .groups()
        .into_iter()
        .map(|g| {
            let mut check = check_refs(f, params, grad, &params.scalar_refs(Some(g)), step, samples, rng)?;
            check.group = Some(g);
            Ok(check)
        })
        .collect()
}

fn check_refs<O, R>(
    f: &O,
    params: &ModelParams,
    grad: &ModelParams,
    refs: &[ScalarRef],
    step: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GroupCheck>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    // Candidates in random order; kink crossings are replaced by the next one.
    let budget = refs.len().min(samples.saturating_mul(CANDIDATES_PER_SAMPLE));
    let order = sample(rng, refs.len(), budget).into_vec();
    let (_, base_pattern) = f.value_and_pattern(params)?;
    let floor = gradient_floor(grad);

    let mut probe = params.clone();
    let mut pairs = Vec::with_capacity(samples);
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    for i in order {
        if pairs.len() == samples {
            break;
        }
        let r = refs[i];
        let p = params.scalar(r);
        let plus = (p as f64 + step) as f32;
        let minus = (p as f64 - step) as f32;
        probe.set_scalar(r, plus);
        let (f_plus, pat_plus) = f.value_and_pattern(&probe)?;
        probe.set_scalar(r, minus);
        let (f_minus, pat_minus) = f.value_and_pattern(&probe)?;
        probe.set_scalar(r, p);
        if pat_plus != base_pattern || pat_minus != base_pattern {
            skipped += 1;
            continue;
        }
        // Divide by the perturbation actually representable in f32.
        let numeric = (f_plus - f_minus) / (plus as f64 - minus as f64);
        let analytic = grad.scalar(r) as f64;
        max_rel = max_rel.max(relative_error(analytic, numeric, floor));
        pairs.push((analytic, numeric));
    }
    Ok(GroupCheck { group: None, samples: pairs.len(), skipped, floor, max_rel_error: max_rel, pairs })
}

/// Joint training loss of one image as a function of the parameters.
#[derive(Clone, Debug)]
pub struct ModelObjective {
    pub config: TrainConfig,
    pub input: Tensor,
    pub targets: Targets,
}

impl Objective for ModelObjective {
    fn value(&self, params: &ModelParams) -> Result<f64> {
        let out = model::forward(params, &self.input, self.config.variant)?;
        Ok(loss_overall(&out, &self.targets, &self.config)?.overall)
    }

    fn gradient(&self, params: &ModelParams) -> Result<ModelParams> {
        sample_gradient(params, &self.config, &self.input, &self.targets, 1).map(|(_, g)| g)
    }

    fn value_and_pattern(&self, params: &ModelParams) -> Result<(f64, Option<ActivationPattern>)> {
        let (out, cache) = model::forward_with_cache(params, &self.input, self.config.variant)?;
        let loss = loss_overall(&out, &self.targets, &self.config)?.overall;
        Ok((loss, Some(cache.activation_pattern(&out))))
    }
}

/// Side length of the image used by [`seeded_instance`].
pub const INSTANCE_SIZE: usize = 16;

/// A seeded `1×1×16×16` synthetic image with its targets and a freshly
/// initialised `variant` model.
pub fn seeded_instance(variant: ModelVariant, seed: u64) -> Result<(ModelParams, ModelObjective)> {
    let synth = SynthConfig {
        num_images: 1,
        rows: INSTANCE_SIZE,
        cols: INSTANCE_SIZE,
        cells_min: 2,
        cells_max: 4,
        seed,
        ..Default::default()
    };
    let img = synth_generate(&synth)?.remove(0);
    let config = TrainConfig { variant, seed, batch_size: 1, ..Default::default() };
    let map = render_density_map(img.rows(), img.cols(), &img.centroids, &config.kernel()?)?;
    let targets = Targets::from_maps(&[&map], &config.gtlr_factors, config.density_scale)?;
    let params = build_model(variant, &mut init_rng(seed))?;
    Ok((params, ModelObjective { config, input: img.input_tensor(), targets }))
}
