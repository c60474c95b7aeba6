use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, Mat};
use super::rng::Rng;
use crate::error::{check_len, Error, Result};

/// Transfer function of one layer.
///
/// A `Relu` hidden layer combined with [`ModulationParams`] is the modulated
/// rectifier `g·(a − b)₊`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Linear => a,
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `s`.
    fn derivative(self, a: f64, s: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - s * s,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract("an MLP needs at least two non-empty layers"));
        }
        check_len("MlpArch activations", widths.len() - 1, activations.len())?;
        Ok(Self {
            widths,
            activations,
        })
    }

    /// Same activation on every hidden layer, `output` on the last one.
    pub fn with_hidden(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(widths.to_vec(), acts)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn activation(&self, layer: usize) -> Activation {
        self.activations[layer]
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Σ (fan_in + 1)·fan_out
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offset of layer `l`'s weight block; its bias block follows immediately.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn fan(&self, l: usize) -> (usize, usize) {
        (self.widths[l], self.widths[l + 1])
    }
}

/// Weights and biases stored as one flat vector.
///
/// Layer `l` occupies `W_l` (row-major, `fan_out × fan_in`) followed by `b_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArch,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: MlpArch) -> Self {
        let n = arch.n_params();
        Self {
            arch,
            data: vec![0.0; n],
        }
    }

    pub fn from_flat(arch: MlpArch, data: Vec<f64>) -> Result<Self> {
        check_len("MlpParams::from_flat", arch.n_params(), data.len())?;
        Ok(Self { arch, data })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (i, o) = self.arch.fan(l);
        let off = self.arch.layer_offset(l);
        &self.data[off..off + i * o]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = self.arch.fan(l);
        let off = self.arch.layer_offset(l) + i * o;
        &self.data[off..off + o]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.arch.fan(l);
        let off = self.arch.layer_offset(l);
        &mut self.data[off..off + i * o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.arch.fan(l);
        let off = self.arch.layer_offset(l) + i * o;
        &mut self.data[off..off + o]
    }

    /// Single-sample prediction without a cache.
    pub fn predict(&self, x: &[f64], modulation: Option<&ModulationParams>) -> Result<Vec<f64>> {
        let input = Mat::from_vec(1, x.len(), x.to_vec())?;
        let (out, _) = mlp_forward(self, modulation, &input)?;
        Ok(out.into_vec())
    }

    fn fingerprint(&self) -> u64 {
        self.data.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Kaiming-normal fan-in initialization, `W ~ N(0, 2/fan_in)·scale`, zero biases.
pub fn kaiming_normal(arch: &MlpArch, scale: f64, rng: &mut Rng) -> MlpParams {
    let mut p = MlpParams::zeros(arch.clone());
    for l in 0..arch.n_layers() {
        let (fan_in, _) = arch.fan(l);
        let std = (2.0 / fan_in as f64).sqrt() * scale;
        for w in p.weight_mut(l) {
            *w = rng.normal(0.0, std);
        }
    }
    p
}

/// Per-neuron gain `g` and shift `b` for every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub gain: Vec<Vec<f64>>,
    pub shift: Vec<Vec<f64>>,
}

impl ModulationParams {
    /// `g = 1`, `b = 0`: reduces to the unmodulated network.
    pub fn identity(arch: &MlpArch) -> Self {
        Self {
            gain: arch.hidden_widths().iter().map(|&w| vec![1.0; w]).collect(),
            shift: arch.hidden_widths().iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.gain.iter().map(Vec::len).sum::<usize>() * 2
    }

    /// Layout: `g_1, b_1, g_2, b_2, …`
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (g, b) in self.gain.iter().zip(&self.shift) {
            out.extend_from_slice(g);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat(arch: &MlpArch, flat: &[f64]) -> Result<Self> {
        let widths = arch.hidden_widths();
        check_len(
            "ModulationParams::from_flat",
            2 * widths.iter().sum::<usize>(),
            flat.len(),
        )?;
        let mut gain = Vec::with_capacity(widths.len());
        let mut shift = Vec::with_capacity(widths.len());
        let mut off = 0;
        for &w in widths {
            gain.push(flat[off..off + w].to_vec());
            shift.push(flat[off + w..off + 2 * w].to_vec());
            off += 2 * w;
        }
        Ok(Self { gain, shift })
    }

    fn check(&self, arch: &MlpArch) -> Result<()> {
        let widths = arch.hidden_widths();
        check_len("modulation layers", widths.len(), self.gain.len())?;
        check_len("modulation layers", widths.len(), self.shift.len())?;
        for (l, &w) in widths.iter().enumerate() {
            check_len("modulation gain", w, self.gain[l].len())?;
            check_len("modulation shift", w, self.shift[l].len())?;
        }
        Ok(())
    }
}

/// Activations kept by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    modulated: bool,
    input: Mat,
    /// Argument of the transfer function: `W x + bias`, minus the shift on
    /// modulated layers.
    arg: Vec<Mat>,
    /// Transfer-function outputs before the gain is applied.
    act: Vec<Mat>,
    /// Layer outputs as fed to the next layer.
    out: Vec<Mat>,
    gain: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Pre-activations `W x + bias` of layer `l` (shift added back).
    pub fn preactivation(&self, l: usize, shift: Option<&ModulationParams>) -> Mat {
        let mut a = self.arg[l].clone();
        if let Some(m) = shift.filter(|_| self.modulated && l < self.gain.len()) {
            for r in 0..a.rows() {
                for (v, b) in a.row_mut(r).iter_mut().zip(&m.shift[l]) {
                    *v += b;
                }
            }
        }
        a
    }

    pub fn layer_output(&self, l: usize) -> &Mat {
        &self.out[l]
    }
}

/// Gradients returned by [`mlp_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub params: MlpParams,
    pub modulation: Option<ModulationParams>,
    pub input: Mat,
}

/// Batched forward pass. `inputs` is `batch × input_dim`.
pub fn mlp_forward(
    params: &MlpParams,
    modulation: Option<&ModulationParams>,
    inputs: &Mat,
) -> Result<(Mat, ForwardCache)> {
    let arch = params.arch();
    check_len("mlp_forward input", arch.input_dim(), inputs.cols())?;
    if let Some(m) = modulation {
        m.check(arch)?;
    }
    let n = inputs.rows();
    let n_layers = arch.n_layers();
    let mut args = Vec::with_capacity(n_layers);
    let mut acts = Vec::with_capacity(n_layers);
    let mut outs: Vec<Mat> = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = arch.fan(l);
        let w = params.weight(l);
        let bias = params.bias(l);
        let activation = arch.activation(l);
        let mod_layer = modulation.filter(|_| l + 1 < n_layers);
        let x = if l == 0 { inputs } else { &outs[l - 1] };
        let mut arg = Mat::zeros(n, fan_out);
        let mut act = Mat::zeros(n, fan_out);
        let mut out = Mat::zeros(n, fan_out);
        for r in 0..n {
            let xr = x.row(r);
            for o in 0..fan_out {
                let mut z = dot(&w[o * fan_in..(o + 1) * fan_in], xr) + bias[o];
                let mut g = 1.0;
                if let Some(m) = mod_layer {
                    z -= m.shift[l][o];
                    g = m.gain[l][o];
                }
                let s = activation.apply(z);
                arg.set(r, o, z);
                act.set(r, o, s);
                out.set(r, o, g * s);
            }
        }
        args.push(arg);
        acts.push(act);
        outs.push(out);
    }
    let output = outs.last().unwrap().clone();
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        modulated: modulation.is_some(),
        input: inputs.clone(),
        arg: args,
        act: acts,
        out: outs,
        gain: modulation.map(|m| m.gain.clone()).unwrap_or_default(),
    };
    if !output.is_finite() {
        return Err(Error::Numeric {
            context: "mlp_forward",
            step: 0,
        });
    }
    Ok((output, cache))
}

/// Reverse-mode gradients of `Σ output ⊙ upstream` for the forward call that
/// produced `cache`.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, upstream: &Mat) -> Result<MlpGrads> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::contract(
            "forward cache was produced with different parameters",
        ));
    }
    let arch = params.arch();
    let n = cache.input.rows();
    check_len("mlp_backward upstream rows", n, upstream.rows())?;
    check_len("mlp_backward upstream cols", arch.output_dim(), upstream.cols())?;

    let n_layers = arch.n_layers();
    let mut grads = MlpParams::zeros(arch.clone());
    let mut grad_mod = cache.modulated.then(|| ModulationParams {
        gain: arch.hidden_widths().iter().map(|&w| vec![0.0; w]).collect(),
        shift: arch.hidden_widths().iter().map(|&w| vec![0.0; w]).collect(),
    });

    let mut delta_out = upstream.clone();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = arch.fan(l);
        let activation = arch.activation(l);
        let arg = &cache.arg[l];
        let act = &cache.act[l];
        let layer_mod = grad_mod.as_mut().filter(|_| l + 1 < n_layers);

        let mut delta_arg = Mat::zeros(n, fan_out);
        match layer_mod {
            Some(gm) => {
                for r in 0..n {
                    for o in 0..fan_out {
                        let d = delta_out.get(r, o);
                        let s = act.get(r, o);
                        gm.gain[l][o] += d * s;
                        let dz = d * cache.gain[l][o] * activation.derivative(arg.get(r, o), s);
                        gm.shift[l][o] -= dz;
                        delta_arg.set(r, o, dz);
                    }
                }
            }
            None => {
                for r in 0..n {
                    for o in 0..fan_out {
                        let d = delta_out.get(r, o);
                        let dz = d * activation.derivative(arg.get(r, o), act.get(r, o));
                        delta_arg.set(r, o, dz);
                    }
                }
            }
        }

        let x_prev = if l == 0 { &cache.input } else { &cache.out[l - 1] };
        {
            let gw = grads.weight_mut(l);
            for r in 0..n {
                let xr = x_prev.row(r);
                for o in 0..fan_out {
                    let d = delta_arg.get(r, o);
                    if d != 0.0 {
                        axpy(d, xr, &mut gw[o * fan_in..(o + 1) * fan_in]);
                    }
                }
            }
        }
        {
            let gb = grads.bias_mut(l);
            for r in 0..n {
                for (o, g) in gb.iter_mut().enumerate() {
                    *g += delta_arg.get(r, o);
                }
            }
        }
        let w = params.weight(l);
        let mut delta_in = Mat::zeros(n, fan_in);
        for r in 0..n {
            let dst = delta_in.row_mut(r);
            for o in 0..fan_out {
                let d = delta_arg.get(r, o);
                if d != 0.0 {
                    axpy(d, &w[o * fan_in..(o + 1) * fan_in], dst);
                }
            }
        }
        delta_out = delta_in;
    }
    Ok(MlpGrads {
        params: grads,
        modulation: grad_mod,
        input: delta_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(weight: f64, bias: f64) -> MlpParams {
        // 1 input -> 1 modulated relu unit -> linear identity readout
        let arch = MlpArch::new(vec![1, 1, 1], vec![Activation::Relu, Activation::Linear]).unwrap();
        MlpParams::from_flat(arch, vec![weight, bias, 1.0, 0.0]).unwrap()
    }

    fn modulation(g: f64, b: f64) -> ModulationParams {
        ModulationParams {
            gain: vec![vec![g]],
            shift: vec![vec![b]],
        }
    }

    #[test]
    fn parameter_count_formula() {
        let arch = MlpArch::with_hidden(&[13, 20, 1], Activation::Tanh, Activation::Linear).unwrap();
        assert_eq!(arch.n_params(), 14 * 20 + 21);
        assert_eq!(arch.layer_offset(1), 14 * 20);
    }

    #[test]
    fn modulated_rectifier_hand_values() {
        let p = scalar_net(3.0, 0.0);
        let out = p.predict(&[1.0], Some(&modulation(2.0, 1.0))).unwrap();
        assert_eq!(out, vec![4.0]);
        let p = scalar_net(0.5, 0.0);
        for g in [0.1, 1.0, 7.0] {
            assert_eq!(p.predict(&[1.0], Some(&modulation(g, 1.0))).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn zero_weights_output_bias_activation() {
        let arch = MlpArch::with_hidden(&[2, 3, 1], Activation::Tanh, Activation::Tanh).unwrap();
        let mut p = MlpParams::zeros(arch);
        p.bias_mut(0).copy_from_slice(&[0.1, 0.2, 0.3]);
        p.bias_mut(1)[0] = 0.4;
        let out = p.predict(&[0.0, 0.0], None).unwrap();
        assert_eq!(out, vec![0.4f64.tanh()]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(1);
        let arch = MlpArch::with_hidden(&[2, 3, 1], Activation::Tanh, Activation::Linear).unwrap();
        let p = kaiming_normal(&arch, 1.0, &mut rng);
        let x = Mat::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let m = ModulationParams::identity(&arch);
        let (_, cache) = mlp_forward(&p, Some(&m), &x).unwrap();
        let g = mlp_backward(&p, &cache, &Mat::zeros(1, 1)).unwrap();
        assert!(g.params.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.modulation.unwrap().to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gain_gradient_is_preactivation_times_sensitivity() {
        let p = scalar_net(1.5, 0.25);
        let x = Mat::from_rows(&[vec![2.0]]).unwrap();
        let m = modulation(1.0, 0.0);
        let (_, cache) = mlp_forward(&p, Some(&m), &x).unwrap();
        let g = mlp_backward(&p, &cache, &Mat::from_rows(&[vec![0.7]]).unwrap()).unwrap();
        // preactivation 1.5·2 + 0.25 = 3.25; downstream sensitivity 1·0.7
        let gm = g.modulation.unwrap();
        assert!((gm.gain[0][0] - 3.25 * 0.7).abs() < 1e-15);
        assert!((gm.shift[0][0] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let p = scalar_net(1.0, 0.0);
        let x = Mat::from_rows(&[vec![1.0]]).unwrap();
        let (_, cache) = mlp_forward(&p, None, &x).unwrap();
        let q = scalar_net(2.0, 0.0);
        assert!(matches!(
            mlp_backward(&q, &cache, &Mat::from_rows(&[vec![1.0]]).unwrap()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn input_shape_is_checked() {
        let p = scalar_net(1.0, 0.0);
        let x = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(mlp_forward(&p, None, &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_modulation_is_exact() {
        let mut rng = Rng::new(5);
        let arch = MlpArch::with_hidden(&[3, 6, 4, 2], Activation::Relu, Activation::Linear).unwrap();
        let p = kaiming_normal(&arch, 1.0, &mut rng);
        let x = Mat::from_rows(&(0..5).map(|_| rng.normal_vec(3, 0.0, 1.0)).collect::<Vec<_>>()).unwrap();
        let (a, _) = mlp_forward(&p, None, &x).unwrap();
        let (b, _) = mlp_forward(&p, Some(&ModulationParams::identity(&arch)), &x).unwrap();
        assert_eq!(a, b);
    }

    /// Central finite differences of `Σ out ⊙ u` in every weight, gain and shift.
    #[test]
    fn backward_matches_finite_differences_on_2_3_1_tanh() {
        let mut rng = Rng::new(11);
        let arch = MlpArch::with_hidden(&[2, 3, 1], Activation::Tanh, Activation::Linear).unwrap();
        let p = kaiming_normal(&arch, 1.0, &mut rng);
        let m = ModulationParams {
            gain: vec![rng.normal_vec(3, 1.0, 0.3)],
            shift: vec![rng.normal_vec(3, 0.0, 0.3)],
        };
        let x = Mat::from_rows(&[vec![0.4, -0.9], vec![1.1, 0.2]]).unwrap();
        let u = Mat::from_rows(&[vec![0.8], vec![-1.3]]).unwrap();
        let objective = |p: &MlpParams, m: &ModulationParams| {
            let (out, _) = mlp_forward(p, Some(m), &x).unwrap();
            out.as_slice().iter().zip(u.as_slice()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = mlp_forward(&p, Some(&m), &x).unwrap();
        let g = mlp_backward(&p, &cache, &u).unwrap();
        let h = 1e-5;
        for i in 0..arch.n_params() {
            let mut up = p.clone();
            let mut dn = p.clone();
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            let num = (objective(&up, &m) - objective(&dn, &m)) / (2.0 * h);
            let ana = g.params.as_slice()[i];
            assert!((num - ana).abs() <= 1e-5 * num.abs().max(1e-2), "param {i}: {num} vs {ana}");
        }
        let flat = m.to_flat();
        let gm = g.modulation.unwrap().to_flat();
        for i in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[i] += h;
            dn[i] -= h;
            let mu = ModulationParams::from_flat(&arch, &up).unwrap();
            let md = ModulationParams::from_flat(&arch, &dn).unwrap();
            let num = (objective(&p, &mu) - objective(&p, &md)) / (2.0 * h);
            assert!((num - gm[i]).abs() <= 1e-5 * num.abs().max(1e-2), "mod {i}: {num} vs {}", gm[i]);
        }
    }
}
