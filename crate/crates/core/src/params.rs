//! Named learnable-tensor collections shared by every model.
//!
//! Models own their parameter tensors; the visitor exposes them under stable
//! dotted names. The same names are used when binding parameters onto a tape,
//! so gradients returned by `backward` line up with the update step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }
}

/// Serialized form of one tensor: shape plus row-major data.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SavedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl SavedTensor {
    pub fn to_tensor(&self) -> Result<Tensor> {
        match self.shape.len() {
            1 => {
                if self.data.len() != self.shape[0] {
                    return Err(Error::dim("saved tensor", &self.shape, &[self.data.len()]));
                }
                Ok(Tensor::vector(self.data.clone()))
            }
            2 => Tensor::matrix(self.shape[0], self.shape[1], self.data.clone()),
            _ => Err(Error::Parse {
                context: "saved tensor".into(),
                detail: format!("unsupported rank {}", self.shape.len()),
            }),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        SavedTensor {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

pub fn export_params(model: &dyn Parameterized) -> BTreeMap<String, SavedTensor> {
    let mut map = BTreeMap::new();
    model.visit_params(&mut |name, t| {
        map.insert(name.to_string(), SavedTensor::from_tensor(t));
    });
    map
}

pub fn import_params(
    model: &mut dyn Parameterized,
    saved: &BTreeMap<String, SavedTensor>,
) -> Result<()> {
    let mut err = None;
    model.visit_params_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        match saved.get(name) {
            Some(s) => match s.to_tensor() {
                Ok(loaded) if loaded.shape() == t.shape() => *t = loaded,
                Ok(loaded) => {
                    err = Some(Error::dim(
                        format!("parameter {name}"),
                        t.shape(),
                        loaded.shape(),
                    ))
                }
                Err(e) => err = Some(e),
            },
            None => err = Some(Error::Contract(format!("missing parameter {name} in file"))),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy {
        w: Tensor,
        b: Tensor,
    }

    impl Parameterized for Toy {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("toy.w", &self.w);
            f("toy.b", &self.b);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("toy.w", &mut self.w);
            f("toy.b", &mut self.b);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let toy = Toy {
            w: Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: Tensor::vector(vec![-1.0, 1.0]),
        };
        let saved = export_params(&toy);
        let mut other = Toy {
            w: Tensor::zeros(&[2, 2]),
            b: Tensor::zeros(&[2]),
        };
        import_params(&mut other, &saved).unwrap();
        assert_eq!(other.w.data(), toy.w.data());
        assert_eq!(other.b.data(), toy.b.data());
    }

    #[test]
    fn import_rejects_shape_drift() {
        let toy = Toy {
            w: Tensor::zeros(&[2, 2]),
            b: Tensor::zeros(&[2]),
        };
        let saved = export_params(&toy);
        let mut other = Toy {
            w: Tensor::zeros(&[3, 2]),
            b: Tensor::zeros(&[2]),
        };
        assert!(import_params(&mut other, &saved).is_err());
    }
}
