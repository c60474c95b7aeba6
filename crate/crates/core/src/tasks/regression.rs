use crate::error::{check_len, Result};
use crate::numkit::{loss_eval, mlp_backward, mlp_forward, LossKind, Mat, MlpArch, MlpParams, Targets};
use crate::synapse::{DataLoss, RegressionData};

/// Mean-squared-error regression with every network weight fast.
#[derive(Debug, Clone)]
pub struct MlpRegression {
    pub arch: MlpArch,
    pub data: RegressionData,
}

impl MlpRegression {
    pub fn new(arch: MlpArch, data: RegressionData) -> Result<Self> {
        for (x, y) in [(&data.learn_x, &data.learn_y), (&data.eval_x, &data.eval_y)] {
            check_len("regression inputs", arch.input_dim(), x.cols())?;
            check_len("regression targets", arch.output_dim(), y.cols())?;
            check_len("regression batch", x.rows(), y.rows())?;
        }
        Ok(Self { arch, data })
    }

    fn loss(&self, phi: &[f64], x: &Mat, y: &Mat, grad: &mut [f64]) -> Result<f64> {
        let params = MlpParams::from_flat(self.arch.clone(), phi.to_vec())?;
        let (out, cache) = mlp_forward(&params, None, x)?;
        let (v, up) = loss_eval(LossKind::Mse, &out, Targets::Values(y))?;
        let g = mlp_backward(&params, &cache, &up)?;
        for (a, b) in grad.iter_mut().zip(g.params.as_slice()) {
            *a += b;
        }
        Ok(v)
    }
}

impl DataLoss for MlpRegression {
    fn dim(&self) -> usize {
        self.arch.n_params()
    }

    fn learn(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.loss(phi, &self.data.learn_x, &self.data.learn_y, grad)
    }

    fn eval(&self, phi: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.loss(phi, &self.data.eval_x, &self.data.eval_y, grad)
    }
}
