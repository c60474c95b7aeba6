use crate::bilevel::BilevelProblem;
use crate::error::{check_len, Error, Result};
use crate::numkit::{loss_eval, mlp_backward, mlp_forward, LossKind, Mat, MlpArch, MlpParams, ModulationParams, Targets};

/// A regression task split into learn and eval batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub learn_x: Mat,
    pub learn_y: Mat,
    pub eval_x: Mat,
    pub eval_y: Mat,
}

/// Top-down modulation model.
///
/// `θ` holds the base network's hidden-layer weights and biases. The fast
/// parameters `φ` are the per-neuron gains and shifts (layout of
/// [`ModulationParams::to_flat`]) followed by the output layer's weights and
/// bias.
#[derive(Debug, Clone)]
pub struct ModulationProblem {
    arch: MlpArch,
    data: RegressionData,
    output_init: Vec<f64>,
}

impl ModulationProblem {
    /// `output_init` is the shared starting point of the output layer.
    pub fn new(arch: MlpArch, data: RegressionData, output_init: Vec<f64>) -> Result<Self> {
        if arch.n_layers() < 2 {
            return Err(Error::contract("modulation needs at least one hidden layer"));
        }
        let out_len = arch.n_params() - arch.layer_offset(arch.n_layers() - 1);
        check_len("output-layer init", out_len, output_init.len())?;
        for (x, y) in [(&data.learn_x, &data.learn_y), (&data.eval_x, &data.eval_y)] {
            check_len("modulation inputs", arch.input_dim(), x.cols())?;
            check_len("modulation targets", arch.output_dim(), y.cols())?;
            check_len("modulation batch", x.rows(), y.rows())?;
        }
        Ok(Self {
            arch,
            data,
            output_init,
        })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    fn output_offset(&self) -> usize {
        self.arch.layer_offset(self.arch.n_layers() - 1)
    }

    fn n_modulation(&self) -> usize {
        2 * self.arch.hidden_widths().iter().sum::<usize>()
    }

    /// Splits `(θ, φ)` into full network weights and the modulation.
    pub fn assemble(&self, theta: &[f64], phi: &[f64]) -> Result<(MlpParams, ModulationParams)> {
        check_len("modulation θ", self.output_offset(), theta.len())?;
        check_len("modulation φ", self.fast_dim(), phi.len())?;
        let k = self.n_modulation();
        let mut flat = Vec::with_capacity(self.arch.n_params());
        flat.extend_from_slice(theta);
        flat.extend_from_slice(&phi[k..]);
        let params = MlpParams::from_flat(self.arch.clone(), flat)?;
        let modulation = ModulationParams::from_flat(&self.arch, &phi[..k])?;
        Ok((params, modulation))
    }

    /// Loss on one split with gradients for `θ` and `φ`.
    fn loss(&self, theta: &[f64], phi: &[f64], eval: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (params, modulation) = self.assemble(theta, phi)?;
        let (x, y) = if eval {
            (&self.data.eval_x, &self.data.eval_y)
        } else {
            (&self.data.learn_x, &self.data.learn_y)
        };
        let (out, cache) = mlp_forward(&params, Some(&modulation), x)?;
        let (value, upstream) = loss_eval(LossKind::Mse, &out, Targets::Values(y))?;
        let grads = mlp_backward(&params, &cache, &upstream)?;
        let flat = grads.params.into_vec();
        let off = self.output_offset();
        let mut g_phi = grads
            .modulation
            .map(|m| m.to_flat())
            .unwrap_or_else(|| vec![0.0; self.n_modulation()]);
        g_phi.extend_from_slice(&flat[off..]);
        Ok((value, flat[..off].to_vec(), g_phi))
    }
}

/// `∂θ𝓛(φ, θ, β)` for the modulation model: backprop of `L_learn + β·L_eval`
/// into the base weights under modulation `φ`.
pub fn modulation_theta_partials(problem: &ModulationProblem, theta: &[f64], phi: &[f64], beta: f64) -> Result<Vec<f64>> {
    let (_, mut g, _) = problem.loss(theta, phi, false)?;
    if beta != 0.0 {
        let (_, ge, _) = problem.loss(theta, phi, true)?;
        for (a, b) in g.iter_mut().zip(&ge) {
            *a += beta * b;
        }
    }
    Ok(g)
}

impl BilevelProblem for ModulationProblem {
    fn fast_dim(&self) -> usize {
        self.n_modulation() + self.output_init.len()
    }

    fn meta_dim(&self) -> usize {
        self.output_offset()
    }

    fn learn(&self, theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (v, _, g) = self.loss(theta, phi, false)?;
        grad.copy_from_slice(&g);
        Ok(v)
    }

    fn eval(&self, theta: &[f64], phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (v, _, g) = self.loss(theta, phi, true)?;
        grad.copy_from_slice(&g);
        Ok(v)
    }

    fn learn_theta_partials(&self, theta: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        modulation_theta_partials(self, theta, phi, 0.0)
    }

    fn eval_theta_partials(&self, theta: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss(theta, phi, true)?.1)
    }

    /// Identity modulation with the shared output-layer initialization.
    fn initial_fast(&self, _theta: &[f64]) -> Vec<f64> {
        let mut phi = ModulationParams::identity(&self.arch).to_flat();
        phi.extend_from_slice(&self.output_init);
        phi
    }
}
