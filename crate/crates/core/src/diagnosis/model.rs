use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DIAGNOSED_FACTORS, FUSED_DIM, HIDDEN_DIM, LATENT_DIM, PERF_INPUT, TRACE_INPUT};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{
    kl_divergence_diag_gaussian, softmax_cross_entropy, Activation, DenseLayer, GaussianLatent, LstmCell,
    LstmStepCache, Parameters,
};

/// Standardized model input for one completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisInput {
    pub performance: Vec<f64>,
    pub trace: Vec<[f64; TRACE_INPUT]>,
}

/// Reparameterization noise for one task, frozen for the duration of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub performance: Vec<f64>,
    pub trace: Vec<Vec<f64>>,
}

impl LatentNoise {
    pub fn zeros(n: usize) -> Self {
        Self { performance: vec![0.0; LATENT_DIM], trace: vec![vec![0.0; LATENT_DIM]; n] }
    }

    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut draw = || (0..LATENT_DIM).map(|_| crate::rng::normal(rng)).collect::<Vec<f64>>();
        let performance = draw();
        let trace = (0..n).map(|_| draw()).collect();
        Self { performance, trace }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub attention: DenseLayer,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl AttentionHead {
    fn init<R: Rng + ?Sized>(classes: usize, rng: &mut R) -> Self {
        Self {
            attention: DenseLayer::init(FUSED_DIM, FUSED_DIM, Activation::Softmax, rng),
            hidden: DenseLayer::init(FUSED_DIM, 16, Activation::Relu, rng),
            output: DenseLayer::init(16, classes, Activation::Identity, rng),
        }
    }

    /// `Z ⊙ softmax(W Z + b)` together with the gate itself.
    pub fn gate(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.attention.forward(z);
        let a = z.iter().zip(&g).map(|(a, b)| a * b).collect();
        (a, g)
    }
}

/// Multimodal self latent attention diagnoser. Five heads give MMSLA; a single
/// head shared by all five factor losses gives the MSLA ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmslaModel {
    pub perf_encoder: [DenseLayer; 2],
    pub perf_decoder: [DenseLayer; 2],
    pub lstm: LstmCell,
    pub trace_encoder: DenseLayer,
    pub trace_decoder: DenseLayer,
    pub phi: [DenseLayer; 2],
    pub rho: DenseLayer,
    pub heads: Vec<AttentionHead>,
}

/// Per-task loss components, unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon_performance: f64,
    pub recon_trace: f64,
    pub kl_performance: f64,
    pub kl_trace: f64,
    pub cross_entropy: [f64; DIAGNOSED_FACTORS],
}

impl LossTerms {
    pub fn total(&self, alpha: f64, lambda: f64) -> f64 {
        self.recon_performance
            + self.recon_trace
            + alpha * (self.kl_performance + self.kl_trace)
            + lambda * self.cross_entropy.iter().sum::<f64>()
    }

    fn check(&self) -> Result<()> {
        let named = [
            ("performance reconstruction", self.recon_performance),
            ("trace reconstruction", self.recon_trace),
            ("performance KL", self.kl_performance),
            ("trace KL", self.kl_trace),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} loss term")));
            }
        }
        if let Some(j) = self.cross_entropy.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cross-entropy of head Y{}", j + 1)));
        }
        Ok(())
    }
}

struct LatentPass {
    raw: Vec<f64>,
    latent: GaussianLatent,
    mask: Vec<bool>,
    z: Vec<f64>,
}

fn latent_pass(raw: Vec<f64>, noise: &[f64]) -> LatentPass {
    let (latent, mask) = GaussianLatent::from_raw(&raw[..LATENT_DIM], &raw[LATENT_DIM..]);
    let z = latent
        .mean
        .iter()
        .zip(&latent.log_variance)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + math::exp(0.5 * lv) * e)
        .collect();
    LatentPass { raw, latent, mask, z }
}

/// Gradient w.r.t. the raw encoder output `[mu, raw logvar]` given `dz`
/// (upstream) and the KL weight.
fn latent_backward(p: &LatentPass, noise: &[f64], dz: &[f64], kl_weight: f64) -> Vec<f64> {
    let mut d = vec![0.0; 2 * LATENT_DIM];
    for k in 0..LATENT_DIM {
        let (m, lv) = (p.latent.mean[k], p.latent.log_variance[k]);
        let sd = math::exp(0.5 * lv);
        d[k] = dz[k] + kl_weight * m;
        if p.mask[k] {
            d[LATENT_DIM + k] = dz[k] * noise[k] * 0.5 * sd + kl_weight * 0.5 * (sd * sd - 1.0);
        }
    }
    d
}

/// Everything the backward pass needs from one forward pass.
struct Pass {
    perf_hidden: Vec<f64>,
    perf: LatentPass,
    perf_dec_hidden: Vec<f64>,
    perf_recon: Vec<f64>,
    lstm_caches: Vec<LstmStepCache>,
    hs: Vec<Vec<f64>>,
    steps: Vec<LatentPass>,
    trace_recon: Vec<Vec<f64>>,
    phi_hidden: Vec<Vec<f64>>,
    phi_out: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    z_r: Vec<f64>,
    fused: Vec<f64>,
    gates: Vec<Vec<f64>>,
    gated: Vec<Vec<f64>>,
    head_hidden: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

/// Lexicographic order of the latent rows; summing in this order makes the
/// pooled vector independent of the timestep order bit for bit.
pub fn sorted_row_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        for (x, y) in rows[a].iter().zip(&rows[b]) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        a.cmp(&b)
    });
    order
}

impl MmslaModel {
    pub fn new<R: Rng + ?Sized>(heads: usize, rng: &mut R) -> Result<Self> {
        let classes = match heads {
            1 => 2 * DIAGNOSED_FACTORS,
            DIAGNOSED_FACTORS => 2,
            _ => return Err(Error::InvalidParameter(format!("head count must be 1 or {DIAGNOSED_FACTORS}, got {heads}"))),
        };
        Ok(Self {
            perf_encoder: [
                DenseLayer::init(PERF_INPUT, HIDDEN_DIM, Activation::Relu, rng),
                DenseLayer::init(HIDDEN_DIM, 2 * LATENT_DIM, Activation::Identity, rng),
            ],
            perf_decoder: [
                DenseLayer::init(LATENT_DIM, HIDDEN_DIM, Activation::Relu, rng),
                DenseLayer::init(HIDDEN_DIM, PERF_INPUT, Activation::Identity, rng),
            ],
            lstm: LstmCell::init(TRACE_INPUT, HIDDEN_DIM, rng),
            trace_encoder: DenseLayer::init(HIDDEN_DIM, 2 * LATENT_DIM, Activation::Identity, rng),
            trace_decoder: DenseLayer::init(LATENT_DIM, TRACE_INPUT, Activation::Identity, rng),
            phi: [
                DenseLayer::init(LATENT_DIM, HIDDEN_DIM, Activation::Relu, rng),
                DenseLayer::init(HIDDEN_DIM, HIDDEN_DIM, Activation::Relu, rng),
            ],
            rho: DenseLayer::init(HIDDEN_DIM, LATENT_DIM, Activation::Tanh, rng),
            heads: (0..heads).map(|_| AttentionHead::init(classes, rng)).collect(),
        })
    }

    pub fn is_single_head(&self) -> bool {
        self.heads.len() == 1
    }

    /// Head index and logit offset serving factor `j`.
    fn head_for(&self, j: usize) -> (usize, usize) {
        if self.is_single_head() {
            (0, 2 * j)
        } else {
            (j, 0)
        }
    }

    fn check_input(&self, input: &DiagnosisInput, noise: &LatentNoise) -> Result<()> {
        if input.performance.len() != PERF_INPUT {
            return Err(Error::ShapeMismatch { expected: vec![PERF_INPUT], got: vec![input.performance.len()] });
        }
        if input.trace.is_empty() {
            return Err(Error::Empty("runtime trace"));
        }
        if noise.trace.len() != input.trace.len() || noise.performance.len() != LATENT_DIM {
            return Err(Error::ShapeMismatch {
                expected: vec![LATENT_DIM, input.trace.len()],
                got: vec![noise.performance.len(), noise.trace.len()],
            });
        }
        crate::error::ensure_finite(&input.performance, "performance input")?;
        for row in &input.trace {
            crate::error::ensure_finite(row, "runtime trace")?;
        }
        Ok(())
    }

    /// Performance encoder `E_P`: returns the raw `[mu, logvar]` output.
    pub fn encode_performance(&self, xp: &[f64]) -> GaussianLatent {
        let raw = self.perf_encoder[1].forward(&self.perf_encoder[0].forward(xp));
        GaussianLatent::from_raw(&raw[..LATENT_DIM], &raw[LATENT_DIM..]).0
    }

    /// Runtime encoder `E_R`: one latent posterior per timestep.
    pub fn encode_runtime(&self, trace: &[[f64; TRACE_INPUT]]) -> Vec<GaussianLatent> {
        let mut h = vec![0.0; HIDDEN_DIM];
        let mut c = vec![0.0; HIDDEN_DIM];
        let mut out = Vec::with_capacity(trace.len());
        for x in trace {
            let (h2, c2, _) = self.lstm.step(x, &h, &c);
            h = h2;
            c = c2;
            let raw = self.trace_encoder.forward(&h);
            out.push(GaussianLatent::from_raw(&raw[..LATENT_DIM], &raw[LATENT_DIM..]).0);
        }
        out
    }

    /// DeepSet pooling `rho(sum_t phi(z_t))`.
    pub fn aggregate(&self, latents: &[Vec<f64>]) -> Result<Vec<f64>> {
        if latents.is_empty() {
            return Err(Error::Empty("latent sequence"));
        }
        let outs: Vec<Vec<f64>> = latents.iter().map(|z| self.phi[1].forward(&self.phi[0].forward(z))).collect();
        let mut pooled = vec![0.0; HIDDEN_DIM];
        for t in sorted_row_order(latents) {
            pooled.iter_mut().zip(&outs[t]).for_each(|(s, v)| *s += v);
        }
        Ok(self.rho.forward(&pooled))
    }

    fn forward(&self, input: &DiagnosisInput, noise: &LatentNoise) -> Pass {
        let perf_hidden = self.perf_encoder[0].forward(&input.performance);
        let perf = latent_pass(self.perf_encoder[1].forward(&perf_hidden), &noise.performance);
        let perf_dec_hidden = self.perf_decoder[0].forward(&perf.z);
        let perf_recon = self.perf_decoder[1].forward(&perf_dec_hidden);

        let n = input.trace.len();
        let mut h = vec![0.0; HIDDEN_DIM];
        let mut c = vec![0.0; HIDDEN_DIM];
        let mut lstm_caches = Vec::with_capacity(n);
        let mut hs = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);
        let mut trace_recon = Vec::with_capacity(n);
        let mut phi_hidden = Vec::with_capacity(n);
        let mut phi_out = Vec::with_capacity(n);
        for (x, e) in input.trace.iter().zip(&noise.trace) {
            let (h2, c2, cache) = self.lstm.step(x, &h, &c);
            h = h2;
            c = c2;
            let step = latent_pass(self.trace_encoder.forward(&h), e);
            trace_recon.push(self.trace_decoder.forward(&step.z));
            let ph = self.phi[0].forward(&step.z);
            phi_out.push(self.phi[1].forward(&ph));
            phi_hidden.push(ph);
            lstm_caches.push(cache);
            hs.push(h.clone());
            steps.push(step);
        }
        let zs: Vec<Vec<f64>> = steps.iter().map(|s| s.z.clone()).collect();
        let mut pooled = vec![0.0; HIDDEN_DIM];
        for t in sorted_row_order(&zs) {
            pooled.iter_mut().zip(&phi_out[t]).for_each(|(s, v)| *s += v);
        }
        let z_r = self.rho.forward(&pooled);
        let fused = fuse_latents(&perf.z, &z_r);

        let mut gates = Vec::with_capacity(self.heads.len());
        let mut gated = Vec::with_capacity(self.heads.len());
        let mut head_hidden = Vec::with_capacity(self.heads.len());
        let mut logits = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (a, g) = head.gate(&fused);
            let hh = head.hidden.forward(&a);
            logits.push(head.output.forward(&hh));
            head_hidden.push(hh);
            gates.push(g);
            gated.push(a);
        }
        Pass {
            perf_hidden,
            perf,
            perf_dec_hidden,
            perf_recon,
            lstm_caches,
            hs,
            steps,
            trace_recon,
            phi_hidden,
            phi_out,
            pooled,
            z_r,
            fused,
            gates,
            gated,
            head_hidden,
            logits,
        }
    }

    fn factor_logits<'a>(&self, pass: &'a Pass, j: usize) -> &'a [f64] {
        let (h, off) = self.head_for(j);
        &pass.logits[h][off..off + 2]
    }

    /// Per-factor `[P(absent), P(present)]` at inference (latent means).
    pub fn predict(&self, input: &DiagnosisInput) -> Result<[[f64; 2]; DIAGNOSED_FACTORS]> {
        let noise = LatentNoise::zeros(input.trace.len());
        self.check_input(input, &noise)?;
        let pass = self.forward(input, &noise);
        let mut out = [[0.0; 2]; DIAGNOSED_FACTORS];
        for (j, o) in out.iter_mut().enumerate() {
            let p = math::softmax(self.factor_logits(&pass, j));
            *o = [p[0], p[1]];
        }
        Ok(out)
    }

    /// Fused latent `Z` at inference.
    pub fn fused_latent(&self, input: &DiagnosisInput) -> Result<Vec<f64>> {
        let noise = LatentNoise::zeros(input.trace.len());
        self.check_input(input, &noise)?;
        Ok(self.forward(input, &noise).fused)
    }

    /// Loss terms of one task without touching gradients.
    pub fn loss_terms(&self, input: &DiagnosisInput, noise: &LatentNoise, targets: &[bool; DIAGNOSED_FACTORS]) -> Result<LossTerms> {
        self.check_input(input, noise)?;
        let pass = self.forward(input, noise);
        let terms = self.terms_of(&pass, input, targets);
        terms.check()?;
        Ok(terms)
    }

    fn terms_of(&self, pass: &Pass, input: &DiagnosisInput, targets: &[bool; DIAGNOSED_FACTORS]) -> LossTerms {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let mut t = LossTerms {
            recon_performance: sq(&pass.perf_recon, &input.performance),
            recon_trace: pass.trace_recon.iter().zip(&input.trace).map(|(r, x)| sq(r, x)).sum(),
            kl_performance: kl_divergence_diag_gaussian(&pass.perf.latent),
            kl_trace: pass.steps.iter().map(|s| kl_divergence_diag_gaussian(&s.latent)).sum(),
            ..Default::default()
        };
        for (j, ce) in t.cross_entropy.iter_mut().enumerate() {
            *ce = softmax_cross_entropy(self.factor_logits(pass, j), targets[j] as usize).0;
        }
        t
    }

    /// Evaluates the loss of one task and accumulates `weight` times its
    /// gradient into the parameter buffers.
    pub fn accumulate_gradients(
        &mut self,
        input: &DiagnosisInput,
        noise: &LatentNoise,
        targets: &[bool; DIAGNOSED_FACTORS],
        alpha: f64,
        lambda: f64,
        weight: f64,
    ) -> Result<LossTerms> {
        self.check_input(input, noise)?;
        let pass = self.forward(input, noise);
        let terms = self.terms_of(&pass, input, targets);
        terms.check()?;

        // classification heads back to the fused latent
        let mut d_fused = vec![0.0; FUSED_DIM];
        let mut dlogits: Vec<Vec<f64>> = pass.logits.iter().map(|l| vec![0.0; l.len()]).collect();
        for j in 0..DIAGNOSED_FACTORS {
            let (h, off) = self.head_for(j);
            let (_, g) = softmax_cross_entropy(&pass.logits[h][off..off + 2], targets[j] as usize);
            dlogits[h][off] += weight * lambda * g[0];
            dlogits[h][off + 1] += weight * lambda * g[1];
        }
        let mut d_hidden = vec![0.0; 16];
        let mut d_gated = vec![0.0; FUSED_DIM];
        let mut d_gate = vec![0.0; FUSED_DIM];
        let mut dz_att = vec![0.0; FUSED_DIM];
        for (h, head) in self.heads.iter_mut().enumerate() {
            head.output.backward(&pass.head_hidden[h], &pass.logits[h], &dlogits[h], Some(&mut d_hidden));
            head.hidden.backward(&pass.gated[h], &pass.head_hidden[h], &d_hidden, Some(&mut d_gated));
            for k in 0..FUSED_DIM {
                d_fused[k] += d_gated[k] * pass.gates[h][k];
                d_gate[k] = d_gated[k] * pass.fused[k];
            }
            head.attention.backward(&pass.fused, &pass.gates[h], &d_gate, Some(&mut dz_att));
            d_fused.iter_mut().zip(&dz_att).for_each(|(a, b)| *a += b);
        }

        // performance branch
        let mut dz_p = d_fused[..LATENT_DIM].to_vec();
        let d_recon: Vec<f64> =
            pass.perf_recon.iter().zip(&input.performance).map(|(r, x)| weight * 2.0 * (r - x)).collect();
        let mut d_dec_hidden = vec![0.0; HIDDEN_DIM];
        let mut dz_dec = vec![0.0; LATENT_DIM];
        self.perf_decoder[1].backward(&pass.perf_dec_hidden, &pass.perf_recon, &d_recon, Some(&mut d_dec_hidden));
        self.perf_decoder[0].backward(&pass.perf.z, &pass.perf_dec_hidden, &d_dec_hidden, Some(&mut dz_dec));
        dz_p.iter_mut().zip(&dz_dec).for_each(|(a, b)| *a += b);
        let d_raw = latent_backward(&pass.perf, &noise.performance, &dz_p, weight * alpha);
        let mut d_enc_hidden = vec![0.0; HIDDEN_DIM];
        self.perf_encoder[1].backward(&pass.perf_hidden, &pass.perf.raw, &d_raw, Some(&mut d_enc_hidden));
        self.perf_encoder[0].backward(&input.performance, &pass.perf_hidden, &d_enc_hidden, None);

        // runtime branch: rho, then phi per timestep, then latents and BPTT
        let mut d_pooled = vec![0.0; HIDDEN_DIM];
        self.rho.backward(&pass.pooled, &pass.z_r, &d_fused[LATENT_DIM..], Some(&mut d_pooled));
        let n = input.trace.len();
        let mut dh_steps: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut d_phi_hidden = vec![0.0; HIDDEN_DIM];
        let mut dz_phi = vec![0.0; LATENT_DIM];
        let mut dz_rec = vec![0.0; LATENT_DIM];
        let mut dh = vec![0.0; HIDDEN_DIM];
        for t in 0..n {
            let step = &pass.steps[t];
            self.phi[1].backward(&pass.phi_hidden[t], &pass.phi_out[t], &d_pooled, Some(&mut d_phi_hidden));
            self.phi[0].backward(&step.z, &pass.phi_hidden[t], &d_phi_hidden, Some(&mut dz_phi));
            let d_rec: Vec<f64> =
                pass.trace_recon[t].iter().zip(&input.trace[t]).map(|(r, x)| weight * 2.0 * (r - x)).collect();
            self.trace_decoder.backward(&step.z, &pass.trace_recon[t], &d_rec, Some(&mut dz_rec));
            let dz: Vec<f64> = dz_phi.iter().zip(&dz_rec).map(|(a, b)| a + b).collect();
            let d_raw = latent_backward(step, &noise.trace[t], &dz, weight * alpha);
            self.trace_encoder.backward(&pass.hs[t], &step.raw, &d_raw, Some(&mut dh));
            dh_steps.push(dh.clone());
        }
        let mut dh_next = vec![0.0; HIDDEN_DIM];
        let mut dc_next = vec![0.0; HIDDEN_DIM];
        for t in (0..n).rev() {
            let total: Vec<f64> = dh_steps[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (_, dhp, dcp) = self.lstm.backward_step(&pass.lstm_caches[t], &total, &dc_next);
            dh_next = dhp;
            dc_next = dcp;
        }
        Ok(terms)
    }
}

/// `Z = [z_p, z_r]`: performance coordinates first.
pub fn fuse_latents(z_p: &[f64], z_r: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(z_p.len() + z_r.len());
    z.extend_from_slice(z_p);
    z.extend_from_slice(z_r);
    z
}

impl Parameters for MmslaModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64])) {
        for (i, l) in self.perf_encoder.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.perf_encoder{i}"), f);
        }
        for (i, l) in self.perf_decoder.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.perf_decoder{i}"), f);
        }
        self.lstm.visit_params(&format!("{prefix}.lstm"), f);
        self.trace_encoder.visit_params(&format!("{prefix}.trace_encoder"), f);
        self.trace_decoder.visit_params(&format!("{prefix}.trace_decoder"), f);
        for (i, l) in self.phi.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.phi{i}"), f);
        }
        self.rho.visit_params(&format!("{prefix}.rho"), f);
        for (j, h) in self.heads.iter_mut().enumerate() {
            h.attention.visit_params(&format!("{prefix}.head{j}.attention"), f);
            h.hidden.visit_params(&format!("{prefix}.head{j}.hidden"), f);
            h.output.visit_params(&format!("{prefix}.head{j}.output"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_model_gradients, Tensor};
    use crate::rng;

    fn toy_input(n: usize, r: &mut crate::rng::SimRng) -> DiagnosisInput {
        DiagnosisInput {
            performance: (0..PERF_INPUT).map(|_| rng::normal(r)).collect(),
            trace: (0..n).map(|_| core::array::from_fn(|_| rng::normal(r))).collect(),
        }
    }

    fn toy_batch(seed: u64) -> Vec<(DiagnosisInput, LatentNoise, [bool; DIAGNOSED_FACTORS])> {
        let mut r = rng::rng_from(seed);
        (0..4)
            .map(|i| {
                let x = toy_input(3 + i, &mut r);
                let e = LatentNoise::sample(x.trace.len(), &mut r);
                let y = core::array::from_fn(|j| (i + j) % 2 == 0);
                (x, e, y)
            })
            .collect()
    }

    fn batch_loss(m: &mut MmslaModel, batch: &[(DiagnosisInput, LatentNoise, [bool; 5])], alpha: f64, lambda: f64) -> f64 {
        let w = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|(x, e, y)| w * m.accumulate_gradients(x, e, y, alpha, lambda, w).unwrap().total(alpha, lambda))
            .sum()
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for heads in [DIAGNOSED_FACTORS, 1] {
            let mut model = MmslaModel::new(heads, &mut rng::rng_from(3)).unwrap();
            let batch = toy_batch(11);
            let rep = check_model_gradients(&mut model, |m| batch_loss(m, &batch, 0.1, 0.1), 6, 1e-4);
            for (name, err) in &rep.per_group {
                assert!(*err <= 1e-4, "{name}: {err}");
            }
        }
    }

    #[test]
    fn lambda_zero_leaves_heads_without_gradient() {
        let mut model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(5)).unwrap();
        let batch = toy_batch(2);
        crate::nn::zero_grads(&mut model);
        batch_loss(&mut model, &batch, 0.1, 0.0);
        for h in &mut model.heads {
            let mut any = false;
            h.attention.visit_params("", &mut |_, _, _, g| any |= g.iter().any(|&v| v != 0.0));
            h.output.visit_params("", &mut |_, _, _, g| any |= g.iter().any(|&v| v != 0.0));
            assert!(!any);
        }
    }

    #[test]
    fn alpha_zero_drops_kl() {
        let model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(5)).unwrap();
        let (x, e, y) = toy_batch(4).remove(0);
        let t = model.loss_terms(&x, &e, &y).unwrap();
        assert!(t.kl_performance > 0.0);
        let expected = t.recon_performance + t.recon_trace + 0.1 * t.cross_entropy.iter().sum::<f64>();
        assert_eq!(t.total(0.0, 0.1), expected);
    }

    #[test]
    fn uniform_heads_give_five_ln2() {
        let mut model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(8)).unwrap();
        for h in &mut model.heads {
            h.output.weights = Tensor::zeros(&[2, 16]);
        }
        let (x, e, _) = toy_batch(1).remove(0);
        for y in [[true; 5], [false; 5]] {
            let t = model.loss_terms(&x, &e, &y).unwrap();
            let ce: f64 = t.cross_entropy.iter().sum();
            assert!((ce - 5.0 * core::f64::consts::LN_2).abs() < 1e-12);
            let classification_only = t.total(0.0, 1.0) - t.recon_performance - t.recon_trace;
            assert!((classification_only - 5.0 * core::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_attention_gate_scales_by_one_over_32() {
        let mut model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(1)).unwrap();
        let head = &mut model.heads[0];
        head.attention = DenseLayer::zeros(FUSED_DIM, FUSED_DIM, Activation::Softmax);
        let z: Vec<f64> = (0..FUSED_DIM).map(|k| k as f64 - 7.5).collect();
        let (a, g) = head.gate(&z);
        assert!(g.iter().all(|&v| v == 1.0 / 32.0));
        for (ak, zk) in a.iter().zip(&z) {
            assert_eq!(*ak, zk / 32.0);
        }
    }

    #[test]
    fn saturated_gate_selects_one_coordinate() {
        let mut model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(1)).unwrap();
        let head = &mut model.heads[0];
        head.attention = DenseLayer::zeros(FUSED_DIM, FUSED_DIM, Activation::Softmax);
        head.attention.bias.data_mut()[5] = 50.0;
        let z: Vec<f64> = (0..FUSED_DIM).map(|k| 0.3 * k as f64 - 2.0).collect();
        let (a, _) = head.gate(&z);
        // off-coordinates carry weight e^-50 / (1 + 31 e^-50)
        let leak = (-50.0f64).exp();
        for (k, (ak, zk)) in a.iter().zip(&z).enumerate() {
            let expected = if k == 5 { *zk } else { 0.0 };
            assert!((ak - expected).abs() <= 1e-9, "k={k}");
            assert!((ak - expected).abs() <= 31.0 * leak * zk.abs().max(1.0));
        }
    }

    #[test]
    fn latent_dimensions() {
        let model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(1)).unwrap();
        let mut r = rng::rng_from(2);
        let x = toy_input(36, &mut r);
        assert_eq!(model.encode_performance(&x.performance).dim(), 16);
        let seq = model.encode_runtime(&x.trace);
        assert_eq!(seq.len(), 36);
        assert!(seq.iter().all(|l| l.dim() == 16));
        assert_eq!(model.fused_latent(&x).unwrap().len(), 32);
        assert_eq!(model.perf_decoder[1].output_dim(), 9);
    }

    #[test]
    fn runtime_encoder_is_order_sensitive() {
        let model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(1)).unwrap();
        let mut r = rng::rng_from(2);
        let x = toy_input(6, &mut r);
        let mut rev = x.trace.clone();
        rev.reverse();
        assert_ne!(model.encode_runtime(&x.trace), model.encode_runtime(&rev));
    }

    #[test]
    fn deepset_single_row_and_shapes() {
        let model = MmslaModel::new(DIAGNOSED_FACTORS, &mut rng::rng_from(1)).unwrap();
        let mut r = rng::rng_from(9);
        let row: Vec<f64> = (0..16).map(|_| rng::normal(&mut r)).collect();
        let direct = model.rho.forward(&model.phi[1].forward(&model.phi[0].forward(&row)));
        assert_eq!(model.aggregate(&[row]).unwrap(), direct);
        for n in [1usize, 36, 73] {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng::normal(&mut r)).collect()).collect();
            assert_eq!(model.aggregate(&rows).unwrap().len(), 16);
        }
        assert!(model.aggregate(&[]).is_err());
    }

    #[test]
    fn fuse_order() {
        let mut e1 = vec![0.0; 16];
        e1[0] = 1.0;
        let z = fuse_latents(&e1, &[0.0; 16]);
        assert_eq!(z.iter().position(|&v| v == 1.0), Some(0));
        let z = fuse_latents(&[0.0; 16], &e1);
        assert_eq!(z.iter().position(|&v| v == 1.0), Some(16));
        assert_eq!(z.len(), 32);
    }

    #[test]
    fn inference_is_deterministic_and_normalized() {
        let model = MmslaModel::new(1, &mut rng::rng_from(4)).unwrap();
        let x = toy_input(10, &mut rng::rng_from(5));
        let a = model.predict(&x).unwrap();
        assert_eq!(a, model.predict(&x).unwrap());
        for p in a {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_bad_heads_and_inputs() {
        assert!(MmslaModel::new(3, &mut rng::rng_from(1)).is_err());
        let model = MmslaModel::new(5, &mut rng::rng_from(1)).unwrap();
        let mut x = toy_input(4, &mut rng::rng_from(1));
        x.trace[2][1] = f64::NAN;
        assert!(matches!(model.predict(&x), Err(Error::NonFinite(_))));
        x.trace.clear();
        assert!(model.predict(&x).is_err());
    }
}
