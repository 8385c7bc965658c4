//! JSON model file: the surrogate, its macro step and optionally the
//! reduced basis it lives in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hb::{DerivFunctional, Surrogate};
use crate::kernels::KernelSpec;
use crate::mor::ReducedBasis;
use crate::predictor::PredictorModel;
use crate::systems::PhaseState;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub kernel: KernelSpec,
    pub dim: usize,
    #[serde(rename = "delta_T")]
    pub delta_t: f64,
    pub functionals: Vec<DerivFunctional>,
    pub coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<ReducedBasis>,
}

impl ModelFile {
    pub fn new(model: &PredictorModel, basis: Option<ReducedBasis>) -> Self {
        let s = &model.surrogate;
        Self {
            version: MODEL_FORMAT_VERSION,
            kernel: s.kernel,
            dim: s.dim,
            delta_t: model.delta_t,
            functionals: s.functionals.clone(),
            coeffs: s.coeffs.clone(),
            basis,
        }
    }

    /// Validates the stored pieces and rebuilds the predictor.
    pub fn predictor(&self) -> Result<PredictorModel> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported model version {}", self.version)));
        }
        let s = Surrogate::from_parts(self.kernel, self.dim, self.functionals.clone(), self.coeffs.clone())?;
        if let Some(b) = &self.basis {
            if 2 * b.reduced_dim() != self.dim {
                return Err(Error::dim(2 * b.reduced_dim(), self.dim));
            }
        }
        PredictorModel::new(s, self.delta_t)
    }

    /// Maps a user-facing state into the model's coordinates.
    pub fn to_model_coords(&self, x: &PhaseState) -> Result<PhaseState> {
        match &self.basis {
            Some(b) => b.restrict(x),
            None => Ok(x.clone()),
        }
    }

    pub fn from_model_coords(&self, z: &PhaseState) -> Result<PhaseState> {
        match &self.basis {
            Some(b) => b.lift(z),
            None => Ok(z.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn model() -> PredictorModel {
        let f = vec![DerivFunctional::new(vec![0.1, 0.2], 0).unwrap(), DerivFunctional::new(vec![-0.3, 0.4], 1).unwrap()];
        let s = Surrogate::from_parts(KernelSpec::gaussian(1.5), 2, f, vec![0.25, -1.0 / 3.0]).unwrap();
        PredictorModel::new(s, 0.05).unwrap()
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = model();
        let file = ModelFile::new(&m, None);
        let text = file.to_json().unwrap();
        assert!(text.contains("\"delta_T\": 0.05"));
        assert!(text.contains("\"family\": \"gaussian\""));
        assert!(!text.contains("basis"));
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.predictor().unwrap().surrogate, m.surrogate);
    }

    #[test]
    fn basis_travels_with_model() {
        let mut v = DenseMatrix::zeros(4, 2);
        v[(0, 0)] = 1.0;
        v[(2, 1)] = 1.0;
        let basis = ReducedBasis::from_matrix(v).unwrap();
        let file = ModelFile::new(&model(), Some(basis));
        let back: ModelFile = serde_json::from_str(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        let x = PhaseState::new(vec![0.7, 9.0], vec![-0.2, 5.0]).unwrap();
        let z = back.to_model_coords(&x).unwrap();
        assert_eq!((z.q[0], z.p[0]), (0.7, -0.2));
        back.predictor().unwrap();
    }

    #[test]
    fn rejects_bad_files() {
        let mut file = ModelFile::new(&model(), None);
        file.version = 99;
        assert!(file.predictor().is_err());
        let mut file = ModelFile::new(&model(), None);
        file.coeffs.pop();
        assert!(file.predictor().is_err());
        let text = ModelFile::new(&model(), None).to_json().unwrap().replace("\"version\"", "\"extra\": 1, \"version\"");
        assert!(serde_json::from_str::<ModelFile>(&text).is_err());
    }
}
