//! Simulated federated training: broadcast, per-client augmentation and two
//! local passes, weighted aggregation.
//!
//! Each round every client starts from the global parameters, synthesizes one
//! augmented copy of each local image from foreign amplitude spectra, runs one
//! SGD pass over the augmented set and one over the original set, and sends
//! its parameters back. The server forms `sum_k a_k theta_k`.
//!
//! Aggregation evaluates each coordinate as `m + sum_k a_k (theta_k - m)`,
//! with `m` the smallest client value, summing every term exactly and
//! rounding once. The result does not depend on client order, identical
//! client vectors come back unchanged even when the weights sum to 1 only up
//! to rounding, and it equals `sum_k a_k theta_k` when they sum to exactly 1.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::augment::{generate_augmented, make_low_freq_mask, sample_lambda, AugmentParams, MixVariant};
use crate::bank::{AmplitudeBank, ClientId};
use crate::binary::BinaryMask;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{featurize, loss_and_grad_features, prox_sgd_step, Features, ModelParams};
use crate::scalar::Scalar;
use crate::threshold::ThresholdSpec;

/// Tolerance on `sum(a_k) = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;
/// FedProx proximal strength used by the reference experiments.
pub const DEFAULT_FEDPROX_MU: f64 = 0.3;

/// Error-free transformation of `a + b` into `(sum, residual)`.
fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Error-free transformation of `a * b` into `(product, residual)`.
fn two_product<T: Scalar>(a: T, b: T) -> (T, T) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Correctly rounded sum of `values` (Shewchuk's non-overlapping partials with
/// round-half-even correction).
pub fn exact_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut partials: Vec<T> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != T::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return T::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = T::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != T::zero() {
            break;
        }
    }
    if n > 0 {
        let below = partials[n - 1];
        if (lo < T::zero() && below < T::zero()) || (lo > T::zero() && below > T::zero()) {
            let y = lo + lo;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Correctly rounded `sum_k a_k * x_k`.
pub fn exact_dot<T: Scalar>(a: &[T], x: &[T]) -> T {
    exact_sum(a.iter().zip(x).flat_map(|(&ak, &xk)| {
        let (p, e) = two_product(ak, xk);
        [p, e]
    }))
}

pub fn validate_weights<T: Scalar>(weights: &[T]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Empty("aggregation weights"));
    }
    let total = exact_sum(weights.iter().copied());
    let ok = weights.iter().all(|w| *w >= T::zero() && w.is_finite())
        && (total - T::one()).abs().as_f64() <= WEIGHT_SUM_TOLERANCE;
    if !ok {
        return Err(Error::InvalidWeights(total.as_f64()));
    }
    Ok(())
}

/// Correctly rounded `m + sum_k a_k (x_k - m)` with `m = min_k x_k`.
fn convex_combination<T: Scalar>(a: &[T], x: &[T]) -> T {
    let m = x.iter().copied().fold(T::infinity(), T::min);
    let mut terms = Vec::with_capacity(1 + 4 * x.len());
    terms.push(m);
    for (&ak, &xk) in a.iter().zip(x) {
        let (d, e) = two_sum(xk, -m);
        let (p1, r1) = two_product(ak, d);
        let (p2, r2) = two_product(ak, e);
        terms.extend([p1, r1, p2, r2]);
    }
    exact_sum(terms)
}

/// `theta = sum_k a_k theta_k`, coordinate-wise and correctly rounded (see
/// the module notes for how weights that miss 1 by rounding are handled).
pub fn aggregate<T: Scalar>(params: &[ModelParams<T>], weights: &[T]) -> Result<ModelParams<T>> {
    validate_weights(weights)?;
    if params.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: params.len(),
        });
    }
    let dim = params[0].dim();
    if let Some(bad) = params.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let mut column = vec![T::zero(); params.len()];
    let weights_out = (0..dim)
        .map(|i| {
            for (slot, p) in column.iter_mut().zip(params) {
                *slot = p.weights()[i];
            }
            convex_combination(weights, &column)
        })
        .collect();
    ModelParams::new(weights_out)
}

/// How aggregation weights `a_k` are chosen.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Weighting {
    /// Proportional to each client's number of training images.
    #[default]
    DatasetSize,
    Uniform,
    /// Explicit per-client weights; must be non-negative and sum to 1.
    Explicit(Vec<f64>),
}

impl Weighting {
    pub fn resolve<T: Scalar>(&self, dataset_sizes: &[usize]) -> Result<Vec<T>> {
        let k = dataset_sizes.len();
        let weights: Vec<T> = match self {
            Weighting::DatasetSize => {
                let total: usize = dataset_sizes.iter().sum();
                dataset_sizes
                    .iter()
                    .map(|n| T::of_usize(*n) / T::of_usize(total))
                    .collect()
            }
            Weighting::Uniform => vec![T::one() / T::of_usize(k); k],
            Weighting::Explicit(w) => {
                if w.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: w.len(),
                    });
                }
                w.iter().map(|v| T::of(*v)).collect()
            }
        };
        validate_weights(&weights)?;
        Ok(weights)
    }
}

/// Frequency-domain augmentation settings used inside local rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig<T> {
    pub beta: f64,
    /// `None` mixes the raw foreign amplitude (no thresholding).
    pub threshold: Option<ThresholdSpec<T>>,
    pub variant: MixVariant,
    /// Synthetic images generated per source image per round.
    pub synthetic_per_image: usize,
    /// Overrides the per-image uniform draw of the mixing strength.
    pub fixed_lambda: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig<T> {
    pub rounds: usize,
    pub weighting: Weighting,
    pub lr: T,
    /// Proximal strength; 0 gives FedAvg local training.
    pub mu: T,
    /// `None` trains both local passes on the original images.
    pub augmentation: Option<AugmentationConfig<T>>,
    pub seed: u64,
}

impl<T: Scalar> FederationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > T::zero()) || !self.lr.is_finite() {
            return Err(Error::invalid("lr", format!("{} must be positive", self.lr)));
        }
        if !(self.mu >= T::zero()) || !self.mu.is_finite() {
            return Err(Error::invalid("mu", format!("{} must be non-negative", self.mu)));
        }
        if let Some(aug) = &self.augmentation {
            if !(aug.beta > 0.0 && aug.beta <= 1.0) {
                return Err(Error::invalid("beta", format!("{} is outside (0, 1]", aug.beta)));
            }
            if aug.synthetic_per_image == 0 {
                return Err(Error::invalid("synthetic_per_image", "must be at least 1"));
            }
            if let Some(l) = aug.fixed_lambda {
                if !(l > T::zero() && l <= T::one()) {
                    return Err(Error::invalid("lambda", format!("{l} is outside (0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// One training image with its mask and cached features.
#[derive(Clone, Debug)]
pub struct LocalExample<T> {
    pub sample: Sample<T>,
    features: Features<T>,
}

impl<T: Scalar> LocalExample<T> {
    pub fn new(sample: Sample<T>) -> Self {
        let features = featurize(&sample.image);
        LocalExample { sample, features }
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.sample.mask
    }
}

#[derive(Clone, Debug)]
pub struct ClientState<T> {
    id: ClientId,
    examples: Vec<LocalExample<T>>,
    params: Option<ModelParams<T>>,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(id: ClientId, samples: Vec<Sample<T>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("client dataset"));
        }
        let shape = samples[0].image.shape();
        if let Some(bad) = samples.iter().find(|s| s.image.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "client {id}: sample `{}` is {} but `{}` is {shape}",
                bad.id,
                bad.image.shape(),
                samples[0].id
            )));
        }
        Ok(ClientState {
            id,
            examples: samples.into_iter().map(LocalExample::new).collect(),
            params: None,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LocalExample<T>] {
        &self.examples
    }

    /// Parameters after the most recent local round.
    pub fn params(&self) -> Option<&ModelParams<T>> {
        self.params.as_ref()
    }
}

/// Registers every client and contributes each of its images once.
pub fn build_bank<T: Scalar>(clients: &[ClientState<T>], beta: f64) -> Result<AmplitudeBank<T>> {
    let mut bank = AmplitudeBank::new();
    for client in clients {
        bank.register_client(client.id);
        for ex in &client.examples {
            let img = &ex.sample.image;
            let mask = make_low_freq_mask(img.height(), img.width(), beta)?;
            bank.contribute(client.id, img, &mask)?;
        }
    }
    Ok(bank)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome<T> {
    pub params: ModelParams<T>,
    /// Mean data loss of the returned params over this round's first-pass set.
    pub loss_augmented: T,
    /// Mean data loss of the returned params over the original local set.
    pub loss_original: T,
}

fn sgd_pass<'a, T: Scalar>(
    mut params: ModelParams<T>,
    examples: impl Iterator<Item = (&'a Features<T>, &'a BinaryMask)>,
    center: &ModelParams<T>,
    cfg: &FederationConfig<T>,
) -> Result<ModelParams<T>> {
    for (features, mask) in examples {
        let (_, grad) = loss_and_grad_features(&params, features, mask, None, T::zero())?;
        params = prox_sgd_step(&params, &grad, cfg.lr, center, cfg.mu)?;
    }
    Ok(params)
}

fn mean_loss<'a, T: Scalar>(
    params: &ModelParams<T>,
    examples: impl ExactSizeIterator<Item = (&'a Features<T>, &'a BinaryMask)>,
) -> Result<T> {
    let n = T::of_usize(examples.len());
    let mut total = T::zero();
    for (features, mask) in examples {
        total += loss_and_grad_features(params, features, mask, None, T::zero())?.0;
    }
    Ok(total / n)
}

/// One client's local update starting from `global`.
pub fn local_round<T: Scalar>(
    client: &ClientState<T>,
    global: &ModelParams<T>,
    bank: &AmplitudeBank<T>,
    cfg: &FederationConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<LocalOutcome<T>> {
    let originals = || client.examples.iter().map(|e| (&e.features, e.mask()));

    let synthetic: Vec<(Features<T>, &BinaryMask)> = match &cfg.augmentation {
        None => Vec::new(),
        Some(aug) => {
            let first = &client.examples[0].sample.image;
            let mask = make_low_freq_mask(first.height(), first.width(), aug.beta)?;
            let mut out = Vec::with_capacity(client.len() * aug.synthetic_per_image);
            for ex in &client.examples {
                for _ in 0..aug.synthetic_per_image {
                    let entry = bank.draw_foreign(client.id, rng)?;
                    let lambda = aug.fixed_lambda.unwrap_or_else(|| sample_lambda(rng));
                    let params = AugmentParams {
                        lambda,
                        threshold: aug.threshold,
                        mask: mask.clone(),
                        variant: aug.variant,
                    };
                    let img = generate_augmented(&ex.sample.image, entry.masked_amplitude(), &params)?;
                    out.push((featurize(&img), ex.mask()));
                }
            }
            out
        }
    };

    let mut params = global.clone();
    params = if cfg.augmentation.is_some() {
        sgd_pass(params, synthetic.iter().map(|(f, m)| (f, *m)), global, cfg)?
    } else {
        sgd_pass(params, originals(), global, cfg)?
    };
    params = sgd_pass(params, originals(), global, cfg)?;

    let loss_original = mean_loss(&params, originals())?;
    let loss_augmented = if cfg.augmentation.is_some() {
        mean_loss(&params, synthetic.iter().map(|(f, m)| (f, *m)))?
    } else {
        loss_original
    };
    Ok(LocalOutcome {
        params,
        loss_augmented,
        loss_original,
    })
}

/// Deterministic generator for client `client` in round `round`.
pub fn round_rng(seed: u64, round: usize, client: ClientId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 16) | client as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientLoss<T> {
    pub client: ClientId,
    pub loss_augmented: T,
    pub loss_original: T,
}

#[derive(Clone, Debug)]
pub struct RoundRecord<T> {
    pub round: usize,
    pub losses: Vec<ClientLoss<T>>,
    /// Hex prefix of the SHA-256 of the aggregated checkpoint bytes.
    pub checksum: String,
    pub wall_time: Duration,
}

pub fn params_checksum<T: Scalar>(params: &ModelParams<T>) -> String {
    Sha256::digest(params.to_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug)]
pub struct FederationOutcome<T> {
    pub params: ModelParams<T>,
    pub records: Vec<RoundRecord<T>>,
}

/// Runs `cfg.rounds` rounds starting from `initial`. Client updates within a
/// round run in parallel; the first failing client aborts the run.
pub fn run_federation<T: Scalar>(
    cfg: &FederationConfig<T>,
    clients: &mut [ClientState<T>],
    bank: &AmplitudeBank<T>,
    initial: ModelParams<T>,
) -> Result<FederationOutcome<T>> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let sizes: Vec<usize> = clients.iter().map(|c| c.len()).collect();
    let weights: Vec<T> = cfg.weighting.resolve(&sizes)?;

    let mut global = initial;
    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let started = Instant::now();
        let outcomes: Vec<Result<LocalOutcome<T>>> = clients
            .par_iter()
            .map(|client| {
                let mut rng = round_rng(cfg.seed, round, client.id);
                local_round(client, &global, bank, cfg, &mut rng)
            })
            .collect();
        let mut locals = Vec::with_capacity(clients.len());
        for (client, outcome) in clients.iter_mut().zip(outcomes) {
            let outcome = outcome.map_err(|e| Error::ClientFailed {
                round,
                client: client.id,
                source: Box::new(e),
            })?;
            client.params = Some(outcome.params.clone());
            locals.push(outcome);
        }
        let local_params: Vec<ModelParams<T>> = locals.iter().map(|o| o.params.clone()).collect();
        global = aggregate(&local_params, &weights)?;
        records.push(RoundRecord {
            round,
            losses: clients
                .iter()
                .zip(&locals)
                .map(|(c, o)| ClientLoss {
                    client: c.id,
                    loss_augmented: o.loss_augmented,
                    loss_original: o.loss_original,
                })
                .collect(),
            checksum: params_checksum(&global),
            wall_time: started.elapsed(),
        });
        log::debug!("round {round} done in {:?}", started.elapsed());
    }
    Ok(FederationOutcome {
        params: global,
        records,
    })
}

/// Round log as CSV: `round,client,loss_augmented,loss_original,agg_checksum`.
/// Wall time is left out so identical runs produce identical bytes.
pub fn write_round_log<T: Scalar, W: Write>(records: &[RoundRecord<T>], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["round", "client", "loss_augmented", "loss_original", "agg_checksum"])?;
    for record in records {
        for loss in &record.losses {
            writer.write_record([
                record.round.to_string(),
                loss.client.to_string(),
                loss.loss_augmented.as_f64().to_string(),
                loss.loss_original.as_f64().to_string(),
                record.checksum.clone(),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io("<round log>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_is_correctly_rounded() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1f64; 10]), 1.0);
        assert_eq!(exact_sum::<f64>([]), 0.0);
        // 1 + 2^-53 + 2^-106 rounds up, even though 1 + 2^-53 alone ties to 1.
        let tiny = 2f64.powi(-53);
        assert_eq!(exact_sum([1.0, tiny, tiny * tiny]), 1.0 + 2.0 * tiny);
        assert_eq!(exact_sum([1.0, tiny]), 1.0);
    }

    #[test]
    fn weights_validation() {
        assert!(validate_weights(&[0.2, 0.3, 0.5]).is_ok());
        assert!(validate_weights(&[0.5, 0.6]).is_err());
        assert!(validate_weights(&[1.5, -0.5]).is_err());
        assert!(validate_weights::<f64>(&[]).is_err());
        assert!(validate_weights(&[1.0 / 3.0; 3]).is_ok());
    }

    #[test]
    fn aggregate_rejects_dimension_mismatch() {
        let a = ModelParams::<f64>::zeros(1);
        let b = ModelParams::<f64>::zeros(2);
        assert!(matches!(
            aggregate(&[a, b], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_weights_select_client() {
        let a = ModelParams::<f64>::seeded(3, 1);
        let b = ModelParams::<f64>::seeded(3, 2);
        assert_eq!(aggregate(&[a.clone(), b], &[1.0, 0.0]).unwrap(), a);
    }

    #[test]
    fn weighting_resolution() {
        let w: Vec<f64> = Weighting::DatasetSize.resolve(&[1, 3]).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
        let u: Vec<f64> = Weighting::Uniform.resolve(&[5, 9, 1, 2]).unwrap();
        assert_eq!(u, vec![0.25; 4]);
        assert!(Weighting::Explicit(vec![0.5]).resolve::<f64>(&[1, 2]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FederationConfig::<f64> {
            rounds: 1,
            weighting: Weighting::Uniform,
            lr: 0.5,
            mu: 0.0,
            augmentation: None,
            seed: 0,
        };
        assert!(cfg.validate().is_ok());
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        cfg.lr = 0.5;
        cfg.mu = -0.1;
        assert!(cfg.validate().is_err());
    }
}
