use crate::error::{dim_err, Error, Result};
use crate::network::{ModelGraph, TaskLoss};
use crate::tensor::Tensor;

/// Per-sample gradient of the task loss with respect to the network
/// outputs, `P x O`, together with its column means.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMatrix {
    values: Tensor,
    column_means: Vec<f64>,
}

impl ErrorMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return dim_err(format!("error matrix must be 2-D, got {:?}", values.shape()));
        }
        values.check_finite("error matrix")?;
        let (p, o) = (values.rows(), values.cols());
        let mut column_means = vec![0.0; o];
        for r in 0..p {
            for (m, v) in column_means.iter_mut().zip(values.row(r)) {
                *m += v;
            }
        }
        column_means.iter_mut().for_each(|m| *m /= p as f64);
        Ok(Self { values, column_means })
    }

    /// Residual of already computed network outputs.
    pub fn from_outputs(outputs: &Tensor, targets: &Tensor, loss: TaskLoss) -> Result<Self> {
        Self::new(loss.evaluate(outputs, targets)?.1)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn patterns(&self) -> usize {
        self.values.rows()
    }

    pub fn outputs(&self) -> usize {
        self.values.cols()
    }

    /// `E[p][o] - mean_o`.
    pub fn centered(&self, p: usize, o: usize) -> f64 {
        self.values.at(p, o) - self.column_means[o]
    }
}

/// Residual error of the (frozen) model on a batch. Reads the model only;
/// no gradient buffers are written.
pub fn residual_error(model: &ModelGraph, x: &Tensor, targets: &Tensor, loss: TaskLoss) -> Result<ErrorMatrix> {
    let out = model.forward(x)?;
    if out.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "outputs {:?} vs targets {:?}",
            out.shape(),
            targets.shape()
        )));
    }
    ErrorMatrix::from_outputs(&out, targets, loss)
}
