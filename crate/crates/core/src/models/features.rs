use crate::linalg::{Mat, Vector};

/// A smooth map `g(x, u)` from state and input to cost features.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &Vector, u: &Vector) -> Vector;
    /// `(∂g/∂x, ∂g/∂u)`.
    fn jacobians(&self, x: &Vector, u: &Vector) -> (Mat, Mat);
}

/// State coordinates in order, each angle replaced by `(sin, cos)`, then the
/// inputs. With no angles this is just `[x; u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigFeatures {
    state_dim: usize,
    input_dim: usize,
    angles: Vec<usize>,
}

impl TrigFeatures {
    pub fn new(state_dim: usize, input_dim: usize, angles: Vec<usize>) -> Self {
        Self { state_dim, input_dim, angles }
    }

    fn is_angle(&self, i: usize) -> bool {
        self.angles.contains(&i)
    }
}

impl FeatureMap for TrigFeatures {
    fn dim(&self) -> usize {
        self.state_dim + self.angles.len() + self.input_dim
    }

    fn eval(&self, x: &Vector, u: &Vector) -> Vector {
        let mut z = Vec::with_capacity(self.dim());
        for i in 0..self.state_dim {
            if self.is_angle(i) {
                z.push(x[i].sin());
                z.push(x[i].cos());
            } else {
                z.push(x[i]);
            }
        }
        z.extend(u.iter());
        Vector::from_vec(z)
    }

    fn jacobians(&self, x: &Vector, _u: &Vector) -> (Mat, Mat) {
        let d = self.dim();
        let mut E = Mat::zeros(d, self.state_dim);
        let mut row = 0;
        for i in 0..self.state_dim {
            if self.is_angle(i) {
                E[(row, i)] = x[i].cos();
                E[(row + 1, i)] = -x[i].sin();
                row += 2;
            } else {
                E[(row, i)] = 1.0;
                row += 1;
            }
        }
        let mut F = Mat::zeros(d, self.input_dim);
        for j in 0..self.input_dim {
            F[(row + j, j)] = 1.0;
        }
        (E, F)
    }
}
