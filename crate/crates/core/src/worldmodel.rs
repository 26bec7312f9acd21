//! Encoder + latent predictor world model with a linear state probe.
//!
//! * encoder: tanh MLP, flattened image -> latent
//! * predictor: residual tanh MLP, `z' = z + f([z, a * action_scale])`
//! * probe: linear latent -> (x, y), used for diagnostics
//!
//! Training minimizes, per transition,
//! `w_pred * |pred(enc(o), a) - enc(o')|^2 + w_state * |probe(enc(o)) - s|^2`
//! with gradients flowing into both encoder calls.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{Dataset, Transition, Vec2};
use crate::error::{invalid, Error, Result};
use crate::nn::{Adam, Linear, Mlp, MlpTrace};
use crate::rng::RngScheme;
use crate::store::{Model, Role, TensorKind, TensorRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub encoder_depth: usize,
    pub predictor_depth: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            obs_dim: 256,
            latent_dim: 16,
            hidden: 64,
            encoder_depth: 4,
            predictor_depth: 2,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.encoder_depth == 0 || self.predictor_depth == 0 {
            return Err(invalid("encoder and predictor need at least one layer"));
        }
        Ok(())
    }

    fn dims(&self, input: usize, depth: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden, depth - 1));
        d.push(self.latent_dim);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub prediction_loss_weight: f64,
    pub state_loss_weight: f64,
    pub seed: u64,
    /// Fraction of transitions held out to measure probe error.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-3,
            prediction_loss_weight: 1.0,
            state_loss_weight: 1.0,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0
            && self.prediction_loss_weight > 0.0
            && self.state_loss_weight > 0.0)
        {
            return Err(invalid("learning_rate and loss weights must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(invalid("holdout_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Metadata attached to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub n_train: usize,
    pub n_holdout: usize,
    pub probe_holdout_error: Option<f64>,
    pub probe_rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub encoder: Mlp,
    pub predictor: Mlp,
    pub probe: Linear,
    /// Actions are multiplied by this before entering the predictor.
    pub action_scale: f64,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    action_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainReport>,
}

impl WorldModel {
    pub fn init(
        shape: &ModelShape,
        action_scale: f64,
        rng: &mut crate::rng::Stream,
    ) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            encoder: Mlp::init(&shape.dims(shape.obs_dim, shape.encoder_depth), rng),
            predictor: Mlp::init(
                &shape.dims(shape.latent_dim + 2, shape.predictor_depth),
                rng,
            ),
            probe: Linear::init(2, shape.latent_dim, rng),
            action_scale,
            report: None,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, obs: &[f32]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim() {
            return Err(invalid(format!(
                "observation has {} values, encoder expects {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        let x: Vec<f64> = obs.iter().map(|&v| f64::from(v)).collect();
        Ok(self.encoder.forward(&x))
    }

    fn predictor_input(&self, latent: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(latent.len() + 2);
        x.extend_from_slice(latent);
        x.extend(action.iter().map(|a| a * self.action_scale));
        x
    }

    pub fn predict_next(&self, latent: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent_dim() || action.len() != 2 {
            return Err(invalid(format!(
                "predictor expects a {}-dim latent and a 2-dim action, got {} and {}",
                self.latent_dim(),
                latent.len(),
                action.len()
            )));
        }
        Ok(self.step_latent(latent, action))
    }

    fn step_latent(&self, latent: &[f64], action: &[f64]) -> Vec<f64> {
        let delta = self
            .predictor
            .forward(&self.predictor_input(latent, action));
        latent.iter().zip(delta).map(|(z, d)| z + d).collect()
    }

    /// Open-loop latent rollout; element `k` is the latent after `actions[..=k]`.
    pub fn rollout(&self, latent0: &[f64], actions: &[Vec2]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(actions.len());
        let mut z = latent0.to_vec();
        for a in actions {
            z = self.predict_next(&z, a)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Final latent of a rollout without materializing the intermediate ones.
    pub fn rollout_last(&self, latent0: &[f64], actions: &[Vec2]) -> Vec<f64> {
        actions
            .iter()
            .fold(latent0.to_vec(), |z, a| self.step_latent(&z, a))
    }

    pub fn probe_state(&self, latent: &[f64]) -> Vec2 {
        let y = self.probe.apply(latent);
        [y[0], y[1]]
    }

    // ---- persistence -------------------------------------------------

    pub fn to_model(&self) -> Model {
        let mut tensors = Vec::new();
        let mut push = |prefix: &str, role: Role, idx: usize, layer: &Linear| {
            let base = if prefix == "probe" {
                "probe".to_string()
            } else {
                format!("{prefix}.{idx}")
            };
            tensors.push(TensorRecord {
                name: format!("{base}.weight"),
                role,
                layer_index: idx as u32,
                kind: TensorKind::LinearWeight,
                shape: vec![layer.out_dim, layer.in_dim],
                data: layer.weight.iter().map(|&v| v as f32).collect(),
            });
            tensors.push(TensorRecord {
                name: format!("{base}.bias"),
                role,
                layer_index: idx as u32,
                kind: TensorKind::LinearBias,
                shape: vec![layer.out_dim],
                data: layer.bias.iter().map(|&v| v as f32).collect(),
            });
        };
        for (i, l) in self.encoder.layers.iter().enumerate() {
            push("encoder", Role::Encoder, i, l);
        }
        for (i, l) in self.predictor.layers.iter().enumerate() {
            push("predictor", Role::Predictor, i, l);
        }
        push("probe", Role::Other, 0, &self.probe);
        let mut model = Model::new(tensors);
        let meta = Meta {
            action_scale: self.action_scale,
            training: self.report.clone(),
        };
        model.extras = serde_json::json!({ "world_model": meta });
        model
    }

    pub fn from_model(model: &Model) -> Result<Self> {
        model.validate()?;
        let meta: Meta = model
            .extras
            .get("world_model")
            .cloned()
            .ok_or_else(|| invalid("model extras lack `world_model` metadata"))
            .and_then(|v| serde_json::from_value(v).map_err(Error::from))?;
        let layers = |role: Role| -> Result<Vec<Linear>> {
            let mut weights: Vec<&TensorRecord> = model
                .tensors
                .iter()
                .filter(|t| t.role == role && t.kind == TensorKind::LinearWeight)
                .collect();
            weights.sort_by_key(|t| t.layer_index);
            weights
                .into_iter()
                .map(|w| {
                    let bias = model
                        .tensors
                        .iter()
                        .find(|t| {
                            t.role == role
                                && t.kind == TensorKind::LinearBias
                                && t.layer_index == w.layer_index
                        })
                        .ok_or_else(|| invalid(format!("no bias for `{}`", w.name)))?;
                    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
                    if bias.data.len() != out_dim {
                        return Err(invalid(format!("bias `{}` has wrong length", bias.name)));
                    }
                    Ok(Linear {
                        out_dim,
                        in_dim,
                        weight: w.data.iter().map(|&v| f64::from(v)).collect(),
                        bias: bias.data.iter().map(|&v| f64::from(v)).collect(),
                    })
                })
                .collect()
        };
        let encoder = Mlp {
            layers: layers(Role::Encoder)?,
        };
        let predictor = Mlp {
            layers: layers(Role::Predictor)?,
        };
        let mut probe = layers(Role::Other)?;
        if encoder.layers.is_empty() || predictor.layers.is_empty() || probe.len() != 1 {
            return Err(invalid(
                "model needs encoder and predictor layers and exactly one probe",
            ));
        }
        let probe = probe.remove(0);
        let chain_ok = |m: &Mlp| m.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim);
        let d = encoder.out_dim();
        if !chain_ok(&encoder)
            || !chain_ok(&predictor)
            || predictor.in_dim() != d + 2
            || predictor.out_dim() != d
            || probe.in_dim != d
            || probe.out_dim != 2
        {
            return Err(invalid("world model layer dimensions do not chain"));
        }
        Ok(Self {
            encoder,
            predictor,
            probe,
            action_scale: meta.action_scale,
            report: meta.training,
        })
    }

    // ---- training ----------------------------------------------------

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            predictor: self.predictor.zeros_like(),
            probe: Linear::zeros(self.probe.out_dim, self.probe.in_dim),
            action_scale: self.action_scale,
            report: None,
        }
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    /// All trainable parameter slices in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in self
            .encoder
            .layers
            .iter()
            .chain(&self.predictor.layers)
            .chain([&self.probe])
        {
            v.extend(l.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in self
            .encoder
            .layers
            .iter_mut()
            .chain(self.predictor.layers.iter_mut())
            .chain([&mut self.probe])
        {
            v.extend(l.params_mut());
        }
        v
    }

    /// Mean training loss over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[&Sample], cfg: &TrainConfig) -> (f64, WorldModel) {
        let mut grads = self.zeros_like();
        let mut total = 0.0;
        let inv_n = 1.0 / batch.len() as f64;
        for s in batch {
            let enc_t: MlpTrace = self.encoder.forward_traced(&s.obs);
            let enc_next: MlpTrace = self.encoder.forward_traced(&s.next_obs);
            let z = &enc_t.output;
            let z_next = &enc_next.output;
            let pred_trace = self
                .predictor
                .forward_traced(&self.predictor_input(z, &s.action));
            let d = z.len();

            let mut g_z = vec![0.0; d];
            let mut g_delta = vec![0.0; d];
            for i in 0..d {
                let r = z[i] + pred_trace.output[i] - z_next[i];
                total += cfg.prediction_loss_weight * r * r * inv_n;
                let g = 2.0 * cfg.prediction_loss_weight * r * inv_n;
                g_delta[i] = g;
                g_z[i] += g;
            }
            let g_z_next: Vec<f64> = g_delta.iter().map(|g| -g).collect();

            let pos = self.probe.apply(z);
            let mut g_pos = [0.0; 2];
            for k in 0..2 {
                let r = pos[k] - s.state[k];
                total += cfg.state_loss_weight * r * r * inv_n;
                g_pos[k] = 2.0 * cfg.state_loss_weight * r * inv_n;
            }
            let g_from_probe = self.probe.backward(z, &g_pos, &mut grads.probe);
            let g_pred_in = self
                .predictor
                .backward(&pred_trace, &g_delta, &mut grads.predictor);
            for i in 0..d {
                g_z[i] += g_from_probe[i] + g_pred_in[i];
            }
            self.encoder.backward(&enc_t, &g_z, &mut grads.encoder);
            self.encoder
                .backward(&enc_next, &g_z_next, &mut grads.encoder);
        }
        (total, grads)
    }

    fn mean_loss(&self, samples: &[Sample], cfg: &TrainConfig) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for chunk in samples.chunks(256) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let d = self.latent_dim();
            for s in refs {
                let z = self.encoder.forward(&s.obs);
                let zn = self.encoder.forward(&s.next_obs);
                let delta = self.predictor.forward(&self.predictor_input(&z, &s.action));
                let pred: f64 = (0..d).map(|i| (z[i] + delta[i] - zn[i]).powi(2)).sum();
                let pos = self.probe.apply(&z);
                let st: f64 = (0..2).map(|k| (pos[k] - s.state[k]).powi(2)).sum();
                total += cfg.prediction_loss_weight * pred + cfg.state_loss_weight * st;
            }
        }
        total / samples.len() as f64
    }
}

/// A transition converted to f64 for training.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub state: Vec2,
}

impl From<&Transition> for Sample {
    fn from(t: &Transition) -> Self {
        Self {
            obs: t.obs.iter().map(|&v| f64::from(v)).collect(),
            action: t.action.to_vec(),
            next_obs: t.next_obs.iter().map(|&v| f64::from(v)).collect(),
            state: t.state,
        }
    }
}

/// Trains a world model from scratch. Deterministic given the dataset and `cfg`.
pub fn train_world_model(
    dataset: &Dataset,
    shape: &ModelShape,
    action_scale: f64,
    cfg: &TrainConfig,
    scheme: &RngScheme,
) -> Result<WorldModel> {
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    cfg.validate()?;
    let shape = ModelShape {
        obs_dim: dataset.image_side * dataset.image_side,
        ..*shape
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut scheme.stream("train-split", &[cfg.seed]));
    let n_holdout =
        ((dataset.len() as f64 * cfg.holdout_fraction).floor() as usize).min(dataset.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let train: Vec<Sample> = train_idx
        .iter()
        .map(|&i| Sample::from(&dataset.transitions[i]))
        .collect();

    let mut model = WorldModel::init(
        &shape,
        action_scale,
        &mut scheme.stream("train-init", &[cfg.seed]),
    )?;
    let mut opt = Adam::new(cfg.learning_rate, &model.param_sizes());
    let initial_loss = model.mean_loss(&train, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut scheme.stream("train-shuffle", &[cfg.seed, epoch as u64]));
        let mut running = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.loss_and_grad(&batch, cfg);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            running += loss * batch.len() as f64;
            opt.step(model.params_mut(), grads.params());
        }
        epoch_losses.push(running / train.len() as f64);
    }
    let final_loss = model.mean_loss(&train, cfg);
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }

    let train_transitions: Vec<&Transition> =
        train_idx.iter().map(|&i| &dataset.transitions[i]).collect();
    let fit = fit_state_probe(&mut model, &train_transitions)?;
    let probe_holdout_error = (!holdout_idx.is_empty()).then(|| {
        let held: Vec<&Transition> = holdout_idx
            .iter()
            .map(|&i| &dataset.transitions[i])
            .collect();
        probe_error(&model, &held)
    });
    model.report = Some(TrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
        n_train: train.len(),
        n_holdout,
        probe_holdout_error,
        probe_rank_deficient: fit.rank_deficient,
    });
    Ok(model)
}

/// Mean Euclidean error of the probe decoding `state` from `encode(obs)`.
pub fn probe_error(model: &WorldModel, transitions: &[&Transition]) -> f64 {
    let total: f64 = transitions
        .iter()
        .map(|t| {
            let z = model.encode(&t.obs).expect("dataset matches model");
            crate::env::dist(model.probe_state(&z), t.state)
        })
        .sum();
    total / transitions.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFit {
    pub rank_deficient: bool,
    /// Root-mean-square residual over the fitted pairs.
    pub rms_residual: f64,
}

/// Least-squares refit of the probe on `(encode(obs), state)` with the encoder frozen.
pub fn fit_state_probe(model: &mut WorldModel, transitions: &[&Transition]) -> Result<ProbeFit> {
    let latents: Vec<Vec<f64>> = transitions
        .iter()
        .map(|t| model.encode(&t.obs))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec2> = transitions.iter().map(|t| t.state).collect();
    let (probe, fit) = fit_linear_probe(&latents, &targets)?;
    model.probe = probe;
    Ok(fit)
}

/// Ordinary least squares `state ~ W z + b` via the normal equations.
/// A singular system is solved with a tiny ridge term and flagged.
pub fn fit_linear_probe(latents: &[Vec<f64>], targets: &[Vec2]) -> Result<(Linear, ProbeFit)> {
    if latents.is_empty() || latents.len() != targets.len() {
        return Err(invalid(
            "probe fit needs matching, non-empty latents and targets",
        ));
    }
    let d = latents[0].len();
    let n = d + 1;
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![[0.0; 2]; n];
    let mut row = vec![0.0; n];
    for (z, s) in latents.iter().zip(targets) {
        row[..d].copy_from_slice(z);
        row[d] = 1.0;
        for i in 0..n {
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
            atb[i][0] += row[i] * s[0];
            atb[i][1] += row[i] * s[1];
        }
    }
    let max_diag = (0..n).map(|i| ata[i * n + i]).fold(0.0f64, f64::max);
    let (sol, rank_deficient) = match solve(&ata, &atb, n, 1e-12 * max_diag.max(1e-300)) {
        Some(x) => (x, false),
        None => {
            let mut ridge = ata.clone();
            for i in 0..n {
                ridge[i * n + i] += 1e-8 * max_diag.max(1.0);
            }
            let x = solve(&ridge, &atb, n, 0.0).ok_or_else(|| invalid("probe fit failed"))?;
            (x, true)
        }
    };
    let mut probe = Linear::zeros(2, d);
    for (i, row) in sol[..d].iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            probe.weight[k * d + i] = v;
        }
    }
    probe.bias.copy_from_slice(&sol[d]);
    let sq: f64 = latents
        .iter()
        .zip(targets)
        .map(|(z, s)| {
            let p = probe.apply(z);
            (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2)
        })
        .sum();
    let rms_residual = (sq / latents.len() as f64).sqrt();
    Ok((
        probe,
        ProbeFit {
            rank_deficient,
            rms_residual,
        },
    ))
}

/// Gaussian elimination with partial pivoting; `None` if a pivot falls below `tol`.
fn solve(a: &[f64], b: &[[f64; 2]], n: usize, tol: f64) -> Option<Vec<[f64; 2]>> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= tol || a[piv * n + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            let pivot_row = b[col];
            for (v, p) in b[r].iter_mut().zip(pivot_row) {
                *v -= f * p;
            }
        }
    }
    let mut x = vec![[0.0; 2]; n];
    for r in (0..n).rev() {
        for k in 0..2 {
            let s: f64 = (r + 1..n).map(|c| a[r * n + c] * x[c][k]).sum();
            x[r][k] = (b[r][k] - s) / a[r * n + r];
        }
    }
    Some(x)
}
