use serde::{Deserialize, Serialize};

use super::encoder::{encode_poisson, standardize_input, PoissonEncoder, Raster};
use super::lif::{lif_pseudo_derivative, lif_rollout, LifParams, PseudoDerivative, Rollout};
use crate::error::{check_len, Error, Result};
use crate::numkit::{Mat, Rng};
use crate::synapse::DataLoss;
use crate::tasks::{SinusoidTask, X_RANGE};

/// Plasticity settings shared by every e-prop update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpropCfg {
    pub pseudo: PseudoDerivative,
    /// Weight of the firing-rate penalty.
    pub activity_strength: f64,
    /// Target firing probability per step.
    pub activity_target: f64,
    /// Learning-rate factor on the readout weights.
    pub out_lr_factor: f64,
}

impl Default for EpropCfg {
    fn default() -> Self {
        Self {
            pseudo: PseudoDerivative::Literal,
            activity_strength: 1e-5,
            activity_target: 0.2,
            out_lr_factor: 0.1,
        }
    }
}

/// One encoded input with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRaster {
    pub raster: Raster,
    pub target: Vec<f64>,
}

/// Forward-in-time traces of one rollout, indexed by `t ∈ 0..=T`.
///
/// `input[t][i]` and `recurrent[t][i]` are `α`-filtered presynaptic
/// activity seen by the membrane at `t`; `readout[t][j]` is the
/// `κ`-filtered spike train seen by the readout at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTraces {
    pub input: Vec<Vec<f64>>,
    pub recurrent: Vec<Vec<f64>>,
    pub readout: Vec<Vec<f64>>,
}

/// Leaky accumulation `e[t] = decay·e[t−1] + s[t]` with `e[0] = s[0]`.
pub fn low_pass(decay: f64, signal: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(signal.len());
    for s in signal {
        let next = match out.last() {
            Some(prev) => prev.iter().zip(s).map(|(e, x)| decay * e + x).collect(),
            None => s.clone(),
        };
        out.push(next);
    }
    out
}

fn dense(active: &[usize], width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    for &i in active {
        v[i] = 1.0;
    }
    v
}

fn bools(z: &[bool]) -> Vec<f64> {
    z.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
}

pub fn eligibility_traces(params: &LifParams, raster: &Raster, rollout: &Rollout) -> Result<EligibilityTraces> {
    let s = params.shape();
    check_len("raster width", s.inputs, raster.width())?;
    check_len("rollout length", raster.len(), rollout.steps())?;
    let t_len = raster.len();
    // membrane at t sees inputs x^t (t ≥ 1) and spikes z^{t−1}
    let mut x = vec![vec![0.0; s.inputs]];
    let mut zr = vec![vec![0.0; s.hidden]];
    for t in 1..=t_len {
        x.push(dense(raster.active(t - 1), s.inputs));
        zr.push(bools(&rollout.z[t - 1]));
    }
    Ok(EligibilityTraces {
        input: low_pass(params.alpha, &x),
        recurrent: low_pass(params.alpha, &zr),
        readout: low_pass(params.kappa, &zr),
    })
}

/// Descent directions for the three weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct EpropGrads {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub w_out: Mat,
    /// Mean squared error of the time-averaged prediction.
    pub mse: f64,
    /// Firing-rate penalty.
    pub activity: f64,
}

impl EpropGrads {
    /// Flat `[W_in, W_rec, W_out]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w_in.as_slice().len() + self.w_rec.as_slice().len() + self.w_out.as_slice().len());
        v.extend_from_slice(self.w_in.as_slice());
        v.extend_from_slice(self.w_rec.as_slice());
        v.extend_from_slice(self.w_out.as_slice());
        v
    }
}

/// e-prop over a batch, with the rate penalty when `with_activity` is set.
///
/// The readout part is the exact gradient of the batch MSE. The input and
/// recurrent parts pair the back-projected error with eligibility traces
/// built from the pseudo-derivative.
pub fn eprop_gradients(
    params: &LifParams,
    cfg: &EpropCfg,
    batch: &[LabeledRaster],
    with_activity: bool,
) -> Result<EpropGrads> {
    let s = params.shape();
    let mut g = EpropGrads {
        w_in: Mat::zeros(s.hidden, s.inputs),
        w_rec: Mat::zeros(s.hidden, s.hidden),
        w_out: Mat::zeros(s.outputs, s.hidden),
        mse: 0.0,
        activity: 0.0,
    };
    if batch.is_empty() {
        return Ok(g);
    }
    let n = batch.len() as f64;
    let mut rollouts = Vec::with_capacity(batch.len());
    let mut rate = vec![0.0; s.hidden];
    let mut rate_steps = 0usize;
    for item in batch {
        check_len("target", s.outputs, item.target.len())?;
        let r = lif_rollout(params, &item.raster, None)?;
        for z in &r.z[1..] {
            for (acc, &sp) in rate.iter_mut().zip(z) {
                if sp {
                    *acc += 1.0;
                }
            }
        }
        rate_steps += r.steps();
        rollouts.push(r);
    }
    if rate_steps > 0 {
        for r in &mut rate {
            *r /= rate_steps as f64;
        }
    }
    let act_scale = if with_activity { cfg.activity_strength } else { 0.0 };
    g.activity = act_scale * rate.iter().map(|r| (r - cfg.activity_target).powi(2)).sum::<f64>() / s.hidden as f64;
    // per-step rate-penalty signal, identical for every sample and step
    let act: Vec<f64> = rate
        .iter()
        .map(|r| {
            if rate_steps == 0 {
                0.0
            } else {
                2.0 * act_scale * (r - cfg.activity_target) / (s.hidden as f64 * rate_steps as f64)
            }
        })
        .collect();

    for (item, r) in batch.iter().zip(&rollouts) {
        let t_len = r.steps();
        if t_len == 0 {
            continue;
        }
        let tf = t_len as f64;
        let err: Vec<f64> = r.prediction.iter().zip(&item.target).map(|(p, y)| p - y).collect();
        g.mse += err.iter().map(|e| e * e).sum::<f64>() / n;
        // readout weight of z^t summed over every later readout: Σ_{m<T−t} κ^m
        let mut c = vec![0.0; t_len + 1];
        for t in (0..t_len).rev() {
            c[t] = 1.0 + params.kappa * c[t + 1];
        }
        for k in 0..s.outputs {
            let scale = 2.0 * err[k] / (tf * n);
            let row = g.w_out.row_mut(k);
            for (t, ct) in c.iter().enumerate().take(t_len) {
                for (j, &sp) in r.z[t].iter().enumerate() {
                    if sp {
                        row[j] += scale * ct;
                    }
                }
            }
        }
        // learning signal back-projected through the readout
        let signal: Vec<f64> = (0..s.hidden)
            .map(|j| (0..s.outputs).map(|k| params.w_out.get(k, j) * 2.0 * err[k] / tf).sum::<f64>() / n)
            .collect();
        // postsynaptic factor u_j(t), then filtered backwards by α so that
        // Σ_t u(t)·ε(t) becomes Σ_t ũ(t)·(presynaptic event at t)
        let mut back = vec![0.0; s.hidden];
        for t in (1..=t_len).rev() {
            for j in 0..s.hidden {
                let psi = lif_pseudo_derivative(cfg.pseudo, r.h[t][j], params.v_th);
                let weight = if t < t_len { signal[j] * c[t] } else { 0.0 } + act[j];
                back[j] = params.alpha * back[j] + psi * weight;
            }
            for &i in item.raster.active(t - 1) {
                for (j, b) in back.iter().enumerate() {
                    let w = g.w_in.get(j, i);
                    g.w_in.set(j, i, w + b);
                }
            }
            for (i, &sp) in r.z[t - 1].iter().enumerate() {
                if sp {
                    for (j, b) in back.iter().enumerate() {
                        let w = g.w_rec.get(j, i);
                        g.w_rec.set(j, i, w + b);
                    }
                }
            }
        }
    }
    for j in 0..s.hidden {
        g.w_rec.set(j, j, 0.0);
    }
    if !(g.mse.is_finite() && g.to_flat().iter().all(|v| v.is_finite())) {
        return Err(Error::Numeric {
            context: "e-prop gradients",
            step: 0,
        });
    }
    Ok(g)
}

/// Weight changes `−lr·grad`, with the readout rate scaled by `out_lr_factor`.
pub fn eprop_update(grads: &EpropGrads, lr: f64, out_lr_factor: f64) -> (Mat, Mat, Mat) {
    let scaled = |m: &Mat, f: f64| {
        let mut m = m.clone();
        for v in m.as_mut_slice() {
            *v *= -f;
        }
        m
    };
    (
        scaled(&grads.w_in, lr),
        scaled(&grads.w_rec, lr),
        scaled(&grads.w_out, lr * out_lr_factor),
    )
}

/// Encoded few-shot regression task for a spiking network.
///
/// Rasters are drawn once per data point, so the losses are deterministic
/// functions of the weights. The learn loss includes the rate penalty.
#[derive(Debug, Clone)]
pub struct SpikingData {
    pub template: LifParams,
    pub cfg: EpropCfg,
    pub learn: Vec<LabeledRaster>,
    pub eval: Vec<LabeledRaster>,
}

impl SpikingData {
    pub fn sinusoid(
        task: &SinusoidTask,
        encoder: &PoissonEncoder,
        template: LifParams,
        cfg: EpropCfg,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encode = |xs: &[f64], ys: &[f64], rng: &mut Rng| -> Result<Vec<LabeledRaster>> {
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| {
                    Ok(LabeledRaster {
                        raster: encode_poisson(encoder, standardize_input(x, X_RANGE), rng)?,
                        target: vec![y],
                    })
                })
                .collect()
        };
        let learn = encode(&task.learn_x, &task.learn_y, rng)?;
        let eval = encode(&task.eval_x, &task.eval_y, rng)?;
        Ok(Self {
            template,
            cfg,
            learn,
            eval,
        })
    }

    fn params(&self, phi: &[f64]) -> Result<LifParams> {
        let mut p = self.template.clone();
        p.set_flat(phi)?;
        Ok(p)
    }

    /// Predictions for the eval inputs.
    pub fn eval_predictions(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let p = self.params(phi)?;
        self.eval
            .iter()
            .map(|item| Ok(lif_rollout(&p, &item.raster, None)?.prediction[0]))
            .collect()
    }

    fn accumulate(&self, phi: &[f64], grad: &mut [f64], batch: &[LabeledRaster], activity: bool) -> Result<f64> {
        check_len("spiking gradient", self.dim(), grad.len())?;
        let g = eprop_gradients(&self.params(phi)?, &self.cfg, batch, activity)?;
        for (a, b) in grad.iter_mut().zip(g.to_flat()) {
            *a += b;
        }
        Ok(g.mse + g.activity)
    }
}

impl DataLoss for SpikingData {
    fn dim(&self) -> usize {
        self.template.shape().n_params()
    }

    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.accumulate(phi, grad, &self.learn, true)
    }

    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.accumulate(phi, grad, &self.eval, false)
    }

    fn lr_scale(&self) -> Option<Vec<f64>> {
        let s = self.template.shape();
        let mut v = vec![1.0; s.n_params()];
        for x in &mut v[s.out_offset()..] {
            *x = self.cfg.out_lr_factor;
        }
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spiking::LifShape;
    use crate::synapse::{SynapseLayout, SynapseMeta, SynapseProblem};
    use crate::bilevel::BilevelProblem;

    fn toy(rng: &mut Rng, hidden: usize, steps: usize) -> (LifParams, Vec<LabeledRaster>) {
        let shape = LifShape {
            inputs: 4,
            hidden,
            outputs: 1 + rng.below(2),
        };
        let mut p = LifParams::kaiming(shape, rng);
        for w in p.w_in.as_mut_slice() {
            *w *= 20.0;
        }
        for w in p.w_rec.as_mut_slice() {
            *w *= 50.0;
        }
        for w in p.w_out.as_mut_slice() {
            *w = rng.normal(0.0, 1.0);
        }
        let batch = (0..1 + rng.below(3))
            .map(|_| LabeledRaster {
                raster: Raster::new(4, (0..steps).map(|_| (0..4).filter(|_| rng.bernoulli(0.5)).collect()).collect())
                    .unwrap(),
                target: (0..shape.outputs).map(|_| rng.normal(0.0, 1.0)).collect(),
            })
            .collect();
        (p, batch)
    }

    /// Reverse-mode gradient of the batch MSE w.r.t. W_out through the
    /// readout recursion, spikes held fixed.
    fn unrolled_readout_grad(p: &LifParams, batch: &[LabeledRaster]) -> Vec<f64> {
        let s = p.shape();
        let mut g = vec![0.0; s.n_out()];
        for item in batch {
            let r = lif_rollout(p, &item.raster, None).unwrap();
            let t_len = r.steps();
            for k in 0..s.outputs {
                let dy = 2.0 * (r.prediction[k] - item.target[k]) / (t_len as f64 * batch.len() as f64);
                // adjoint of y^t, swept backwards
                let mut adj = 0.0;
                for t in (1..=t_len).rev() {
                    adj = dy + p.kappa * adj;
                    for j in 0..s.hidden {
                        if r.z[t - 1][j] {
                            g[k * s.hidden + j] += adj;
                        }
                    }
                }
            }
        }
        g
    }

    #[test]
    fn readout_matches_unrolled_gradient() {
        let mut rng = Rng::new(11);
        let mut spiking = 0;
        for _ in 0..100 {
            let hidden = 1 + rng.below(5);
            let steps = 1 + rng.below(10);
            let (p, batch) = toy(&mut rng, hidden, steps);
            let g = eprop_gradients(&p, &EpropCfg::default(), &batch, true).unwrap();
            let want = unrolled_readout_grad(&p, &batch);
            for (a, b) in g.w_out.as_slice().iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
            if want.iter().any(|v| *v != 0.0) {
                spiking += 1;
            }
        }
        assert!(spiking > 50);
    }

    #[test]
    fn backward_filter_matches_forward_traces() {
        let mut rng = Rng::new(5);
        for pseudo in [PseudoDerivative::Literal, PseudoDerivative::Triangular] {
            let cfg = EpropCfg {
                pseudo,
                activity_strength: 0.3,
                ..Default::default()
            };
            let (p, batch) = toy(&mut rng, 3, 6);
            let s = p.shape();
            let g = eprop_gradients(&p, &cfg, &batch, true).unwrap();
            // forward double low-pass, summed per synapse
            let mut w_in = vec![0.0; s.n_in()];
            let mut w_rec = vec![0.0; s.n_rec()];
            let rolls: Vec<_> = batch.iter().map(|b| lif_rollout(&p, &b.raster, None).unwrap()).collect();
            let t_len = rolls[0].steps();
            let n = batch.len() as f64;
            let mut rate = vec![0.0; s.hidden];
            for r in &rolls {
                for z in &r.z[1..] {
                    for j in 0..s.hidden {
                        rate[j] += bools(z)[j] / (t_len as f64 * n);
                    }
                }
            }
            for (item, r) in batch.iter().zip(&rolls) {
                let tr = eligibility_traces(&p, &item.raster, r).unwrap();
                for t in 1..=t_len {
                    for j in 0..s.hidden {
                        let psi = lif_pseudo_derivative(pseudo, r.h[t][j], p.v_th);
                        let mut sig = 0.0;
                        if t < t_len {
                            let c: f64 = (0..t_len - t).map(|m| p.kappa.powi(m as i32)).sum();
                            for k in 0..s.outputs {
                                let e = r.prediction[k] - item.target[k];
                                sig += p.w_out.get(k, j) * 2.0 * e / t_len as f64 * c / n;
                            }
                        }
                        sig += 2.0 * 0.3 * (rate[j] - 0.2) / (s.hidden as f64 * n * t_len as f64);
                        for i in 0..s.inputs {
                            w_in[j * s.inputs + i] += sig * psi * tr.input[t][i];
                        }
                        for i in 0..s.hidden {
                            if i != j {
                                w_rec[j * s.hidden + i] += sig * psi * tr.recurrent[t][i];
                            }
                        }
                    }
                }
            }
            for (a, b) in g.w_in.as_slice().iter().zip(&w_in) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            for (a, b) in g.w_rec.as_slice().iter().zip(&w_rec) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn silent_network_leaves_readout() {
        let shape = LifShape {
            inputs: 4,
            hidden: 3,
            outputs: 1,
        };
        let mut p = LifParams::kaiming(shape, &mut Rng::new(1));
        for w in p.w_in.as_mut_slice() {
            *w = w.abs() * 1e-3;
        }
        let batch = vec![LabeledRaster {
            raster: Raster::new(4, vec![vec![0, 1]; 5]).unwrap(),
            target: vec![3.0],
        }];
        let g = eprop_gradients(&p, &EpropCfg::default(), &batch, true).unwrap();
        assert!(g.w_out.as_slice().iter().all(|v| *v == 0.0));
        assert!(g.mse > 8.9);
    }

    #[test]
    fn zero_error_at_target_rate_is_stationary() {
        let shape = LifShape {
            inputs: 2,
            hidden: 1,
            outputs: 1,
        };
        let mut p = LifParams::zeros(shape);
        // input 0 makes the neuron fire on the following step; 1 of 5 steps spikes
        p.w_in.set(0, 0, 0.15);
        p.w_out.set(0, 0, 1.0);
        let raster = Raster::new(2, vec![vec![], vec![], vec![0], vec![], vec![]]).unwrap();
        let r = lif_rollout(&p, &raster, None).unwrap();
        assert_eq!(r.spike_count(), 1);
        let batch = vec![LabeledRaster {
            raster,
            target: r.prediction.clone(),
        }];
        let g = eprop_gradients(&p, &EpropCfg::default(), &batch, true).unwrap();
        assert_eq!(g.mse, 0.0);
        assert_eq!(g.activity, 0.0);
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        let (a, b, c) = eprop_update(&g, 0.1, 0.1);
        assert!(a.as_slice().iter().chain(b.as_slice()).chain(c.as_slice()).all(|v| *v == 0.0));
    }

    #[test]
    fn update_scales_readout() {
        let mut rng = Rng::new(3);
        let (p, batch) = toy(&mut rng, 4, 8);
        let g = eprop_gradients(&p, &EpropCfg::default(), &batch, false).unwrap();
        let (din, _, dout) = eprop_update(&g, 0.5, 0.1);
        assert_eq!(din.get(1, 2), -0.5 * g.w_in.get(1, 2));
        assert_eq!(dout.get(0, 1), -0.5 * 0.1 * g.w_out.get(0, 1));
    }

    #[test]
    fn traces_are_linear_and_decay() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]];
        let b = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]];
        let sum: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect();
        let double: Vec<Vec<f64>> = a.iter().map(|x| x.iter().map(|u| 2.0 * u).collect()).collect();
        let (ea, eb) = (low_pass(0.9, &a), low_pass(0.9, &b));
        for (t, e) in low_pass(0.9, &sum).iter().enumerate() {
            for i in 0..2 {
                assert!((e[i] - ea[t][i] - eb[t][i]).abs() < 1e-15);
            }
        }
        for (t, e) in low_pass(0.9, &double).iter().enumerate() {
            for i in 0..2 {
                assert_eq!(e[i], 2.0 * ea[t][i]);
            }
        }
        let mut quiet = vec![vec![1.0]];
        quiet.extend(vec![vec![0.0]; 500]);
        let e = low_pass(0.9, &quiet);
        assert!(e[500][0] < 1e-20);
    }

    fn sinusoid_data(seed: u64) -> SpikingData {
        let mut rng = Rng::new(seed);
        let task = crate::tasks::sinusoid_sample(&mut rng);
        let template = LifParams::kaiming(LifShape::default(), &mut rng);
        SpikingData::sinusoid(&task, &PoissonEncoder::default(), template, EpropCfg::default(), &mut rng).unwrap()
    }

    #[test]
    fn zero_lambda_consolidation_is_plain_eprop() {
        let data = sinusoid_data(4);
        let phi = data.template.to_flat();
        let n = phi.len();
        let mut plain = vec![0.0; n];
        let v_plain = data.learn(&phi, &mut plain).unwrap();
        let omega: Vec<f64> = Rng::new(8).normal_vec(n, 0.0, 0.1);
        let problem = SynapseProblem::new(&data, SynapseLayout::OMEGA, SynapseMeta::uniform(omega.clone(), 0.0)).unwrap();
        let theta = problem.initial_theta();
        let mut wrapped = vec![0.0; n];
        let v_wrapped = BilevelProblem::learn(&problem, &theta, &phi, &mut wrapped).unwrap();
        assert_eq!(v_plain, v_wrapped);
        assert_eq!(plain, wrapped);
        assert_eq!(problem.lr_scale(), data.lr_scale());
    }

    #[test]
    fn spiking_data_shapes() {
        let data = sinusoid_data(2);
        assert_eq!(data.learn.len(), 10);
        assert_eq!(data.dim(), 100 * 40 + 40 * 40 + 40);
        let scale = data.lr_scale().unwrap();
        assert_eq!(scale[data.dim() - 1], 0.1);
        assert_eq!(scale[0], 1.0);
        let phi = data.template.to_flat();
        let mut g = vec![0.0; data.dim()];
        let v = data.eval(&phi, &mut g).unwrap();
        let preds = data.eval_predictions(&phi).unwrap();
        let mse = preds.iter().zip(&data.eval).map(|(p, e)| (p - e.target[0]).powi(2)).sum::<f64>() / 10.0;
        assert!((v - mse).abs() < 1e-12);
        for j in 0..40 {
            assert_eq!(g[4000 + j * 40 + j], 0.0);
        }
    }
}
