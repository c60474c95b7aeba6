use serde::{Deserialize, Serialize};

use super::encoder::Raster;
use crate::error::{check_len, Error, Result};
use crate::numkit::{Mat, Rng};

/// Population sizes of a spiking network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifShape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Default for LifShape {
    fn default() -> Self {
        Self {
            inputs: 100,
            hidden: 40,
            outputs: 1,
        }
    }
}

impl LifShape {
    pub fn n_in(&self) -> usize {
        self.hidden * self.inputs
    }

    pub fn n_rec(&self) -> usize {
        self.hidden * self.hidden
    }

    pub fn n_out(&self) -> usize {
        self.outputs * self.hidden
    }

    /// Length of the flat `[W_in, W_rec, W_out]` vector.
    pub fn n_params(&self) -> usize {
        self.n_in() + self.n_rec() + self.n_out()
    }

    /// Flat index of the first recurrent weight.
    pub fn rec_offset(&self) -> usize {
        self.n_in()
    }

    /// Flat index of the first output weight.
    pub fn out_offset(&self) -> usize {
        self.n_in() + self.n_rec()
    }

    /// Flat indices of the recurrent self-connections.
    pub fn rec_diagonal(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.hidden).map(move |j| self.rec_offset() + j * self.hidden + j)
    }
}

/// Weights and constants of a recurrent LIF network.
///
/// `w_in` is `hidden × inputs`, `w_rec` is `hidden × hidden` with a zero
/// diagonal, `w_out` is `outputs × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifParams {
    pub w_in: Mat,
    pub w_rec: Mat,
    pub w_out: Mat,
    /// Membrane decay per step.
    pub alpha: f64,
    /// Readout decay per step.
    pub kappa: f64,
    pub v_th: f64,
}

pub const TAU: f64 = 30.0;
pub const V_TH: f64 = 0.1;

impl LifParams {
    /// Zero weights with the default constants.
    pub fn zeros(shape: LifShape) -> Self {
        let d = (-1.0 / TAU).exp();
        Self {
            w_in: Mat::zeros(shape.hidden, shape.inputs),
            w_rec: Mat::zeros(shape.hidden, shape.hidden),
            w_out: Mat::zeros(shape.outputs, shape.hidden),
            alpha: d,
            kappa: d,
            v_th: V_TH,
        }
    }

    /// Decays from time constants and a step size.
    pub fn with_time_constants(mut self, tau_hidden: f64, tau_out: f64, dt: f64) -> Result<Self> {
        self.alpha = (-dt / tau_hidden).exp();
        self.kappa = (-dt / tau_out).exp();
        self.validate()?;
        Ok(self)
    }

    /// Kaiming-normal weights scaled by 0.1, 0.01 and 0.1.
    pub fn kaiming(shape: LifShape, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(shape);
        let fill = |m: &mut Mat, fan: usize, scale: f64, rng: &mut Rng| {
            let std = scale * (2.0 / fan.max(1) as f64).sqrt();
            for w in m.as_mut_slice() {
                *w = rng.normal(0.0, std);
            }
        };
        fill(&mut p.w_in, shape.inputs, 0.1, rng);
        fill(&mut p.w_rec, shape.hidden, 0.01, rng);
        fill(&mut p.w_out, shape.hidden, 0.1, rng);
        for j in 0..shape.hidden {
            p.w_rec.set(j, j, 0.0);
        }
        p
    }

    pub fn shape(&self) -> LifShape {
        LifShape {
            inputs: self.w_in.cols(),
            hidden: self.w_in.rows(),
            outputs: self.w_out.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        if self.w_rec.rows() != s.hidden || self.w_rec.cols() != s.hidden {
            return Err(Error::Shape {
                context: "recurrent weights",
                expected: s.hidden,
                actual: self.w_rec.rows(),
            });
        }
        check_len("output weights", s.hidden, self.w_out.cols())?;
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::contract("decay factors must lie in (0, 1)"));
        }
        if !(self.v_th > 0.0) {
            return Err(Error::contract("threshold must be positive"));
        }
        Ok(())
    }

    /// Flat `[W_in, W_rec, W_out]`, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape().n_params());
        v.extend_from_slice(self.w_in.as_slice());
        v.extend_from_slice(self.w_rec.as_slice());
        v.extend_from_slice(self.w_out.as_slice());
        v
    }

    /// Replaces the weights from a flat vector, keeping the constants.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let s = self.shape();
        check_len("spiking weights", s.n_params(), flat.len())?;
        self.w_in.as_mut_slice().copy_from_slice(&flat[..s.rec_offset()]);
        self.w_rec
            .as_mut_slice()
            .copy_from_slice(&flat[s.rec_offset()..s.out_offset()]);
        self.w_out.as_mut_slice().copy_from_slice(&flat[s.out_offset()..]);
        Ok(())
    }
}

/// Network state at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub h: Vec<f64>,
    pub z: Vec<bool>,
    pub y: Vec<f64>,
    pub t: usize,
}

impl LifState {
    /// State at `t = 0` from initial membrane potentials; readouts start at 0.
    pub fn new(params: &LifParams, h0: Vec<f64>) -> Result<Self> {
        let s = params.shape();
        check_len("initial membrane", s.hidden, h0.len())?;
        let z = h0.iter().map(|&h| h >= params.v_th).collect();
        Ok(Self {
            h: h0,
            z,
            y: vec![0.0; s.outputs],
            t: 0,
        })
    }

    pub fn resting(params: &LifParams) -> Self {
        let s = params.shape();
        Self {
            h: vec![0.0; s.hidden],
            z: vec![false; s.hidden],
            y: vec![0.0; s.outputs],
            t: 0,
        }
    }

    /// Advances one step given the inputs active at `t + 1`.
    pub fn step(&mut self, params: &LifParams, active: &[usize]) -> Result<()> {
        let hidden = self.h.len();
        let spiking: Vec<usize> = (0..hidden).filter(|&i| self.z[i]).collect();
        for k in 0..self.y.len() {
            let w = params.w_out.row(k);
            self.y[k] = params.kappa * self.y[k] + spiking.iter().map(|&j| w[j]).sum::<f64>();
        }
        for j in 0..hidden {
            let rec = params.w_rec.row(j);
            let inp = params.w_in.row(j);
            let mut drive = 0.0;
            for &i in &spiking {
                if i != j {
                    drive += rec[i];
                }
            }
            for &i in active {
                drive += inp[i];
            }
            let reset = if self.z[j] { params.v_th } else { 0.0 };
            self.h[j] = params.alpha * self.h[j] + drive - reset;
        }
        self.t += 1;
        if !self.h.iter().chain(&self.y).all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                context: "lif rollout",
                step: self.t,
            });
        }
        for j in 0..hidden {
            self.z[j] = self.h[j] >= params.v_th;
        }
        Ok(())
    }
}

/// Full trajectory of one presentation.
///
/// Index `t` runs over `0..=T`; `y[0]` is zero and the prediction averages
/// `y[1..=T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub h: Vec<Vec<f64>>,
    pub z: Vec<Vec<bool>>,
    pub y: Vec<Vec<f64>>,
    pub prediction: Vec<f64>,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.h.len() - 1
    }

    /// Indices of neurons spiking at `t`.
    pub fn spikes(&self, t: usize) -> Vec<usize> {
        self.z[t].iter().enumerate().filter(|(_, &s)| s).map(|(j, _)| j).collect()
    }

    pub fn spike_count(&self) -> usize {
        self.z.iter().flatten().filter(|&&s| s).count()
    }
}

/// Simulates the network over a raster, from rest unless `h0` is given.
pub fn lif_rollout(params: &LifParams, raster: &Raster, h0: Option<Vec<f64>>) -> Result<Rollout> {
    check_len("raster width", params.shape().inputs, raster.width())?;
    let mut state = match h0 {
        Some(h0) => LifState::new(params, h0)?,
        None => LifState::resting(params),
    };
    let t_len = raster.len();
    let mut out = Rollout {
        h: Vec::with_capacity(t_len + 1),
        z: Vec::with_capacity(t_len + 1),
        y: Vec::with_capacity(t_len + 1),
        prediction: vec![0.0; state.y.len()],
    };
    out.h.push(state.h.clone());
    out.z.push(state.z.clone());
    out.y.push(state.y.clone());
    for t in 0..t_len {
        state.step(params, raster.active(t))?;
        for (p, y) in out.prediction.iter_mut().zip(&state.y) {
            *p += y;
        }
        out.h.push(state.h.clone());
        out.z.push(state.z.clone());
        out.y.push(state.y.clone());
    }
    if t_len > 0 {
        for p in &mut out.prediction {
            *p /= t_len as f64;
        }
    }
    Ok(out)
}

/// Spiking sensitivity used in place of `dz/dh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoDerivative {
    /// The membrane potential itself.
    #[default]
    Literal,
    /// `max(0, 1 − |h − v_th| / v_th) / v_th`.
    Triangular,
}

pub fn lif_pseudo_derivative(kind: PseudoDerivative, h: f64, v_th: f64) -> f64 {
    match kind {
        PseudoDerivative::Literal => h,
        PseudoDerivative::Triangular => (1.0 - (h - v_th).abs() / v_th).max(0.0) / v_th,
    }
}
