//! Browser bindings: train a small pendulum predictor, inspect kernel
//! profiles, and scan the resonance determinant of the harmonic oscillator.
//!
//! The [`demo`] module holds the plain Rust logic so it can be tested
//! natively; the exported wrappers only translate errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use std::str::FromStr;

    use symker::dataset::{build_hb_dataset, sample_states, split_train_validation, Interval, SamplerMode, SamplerSpec};
    use symker::greedy::{train_f_greedy_with_validation, GreedyConfig};
    use symker::integrators::{propagate, reference_trajectory, Method};
    use symker::kernels::{KernelFamily, KernelSpec};
    use symker::predictor::PredictorModel;
    use symker::systems::{PhaseState, SystemSpec};
    use symker::Result;

    const MICRO_DT: f64 = 1e-3;

    /// A pendulum predictor trained on a square grid below the separatrix.
    pub struct PendulumDemo {
        model: PredictorModel,
        sys: SystemSpec,
        train_error: f64,
        validation_error: Option<f64>,
    }

    impl PendulumDemo {
        pub fn train(grid: usize, max_centers: usize, delta_t: f64, family: &str, epsilon: f64) -> Result<Self> {
            let sys = SystemSpec::pendulum();
            let g = 9.81f64;
            let spec = SamplerSpec::new(SamplerMode::Grid {
                counts: vec![grid, grid],
                bounds: vec![Interval::symmetric(std::f64::consts::PI)?, Interval::symmetric(2.0 * g.sqrt())?],
            })
            .with_energy_cap(2.0 * g, true);
            let states = sample_states(&sys, &spec)?;
            let data = build_hb_dataset(&sys, &states, delta_t, MICRO_DT)?;
            let (train, val) = split_train_validation(&data, 0.8, 1)?;
            let kernel = KernelSpec::new(KernelFamily::from_str(family)?, epsilon)?;
            let cfg = GreedyConfig::new(max_centers, 1e-10)?;
            let (surrogate, trace) = train_f_greedy_with_validation(&kernel, &train, &val, &cfg)?;
            Ok(Self {
                model: PredictorModel::new(surrogate, delta_t)?,
                sys,
                train_error: trace.final_max_residual,
                validation_error: trace.final_validation_error,
            })
        }

        pub fn centers(&self) -> usize {
            self.model.surrogate.len()
        }

        pub fn train_error(&self) -> f64 {
            self.train_error
        }

        pub fn validation_error(&self) -> f64 {
            self.validation_error.unwrap_or(f64::NAN)
        }

        /// Rows of `[t, q_kernel, p_kernel, q_midpoint, p_midpoint, q_ref, p_ref]`
        /// flattened, one row per macro step including the start.
        pub fn rollout(&self, q0: f64, p0: f64, steps: usize) -> Result<Vec<f64>> {
            let x0 = PhaseState::new(vec![q0], vec![p0])?;
            let dt = self.model.delta_t;
            let kernel = self.model.rollout(&x0, steps)?;
            let mid = propagate(&self.sys, &x0, dt, steps, Method::ImplicitMidpoint)?;
            let reference = reference_trajectory(&self.sys, &x0, dt, MICRO_DT, steps)?;
            let mut out = Vec::with_capacity(7 * (steps + 1));
            for k in 0..=steps {
                out.push(kernel.times[k]);
                for x in [&kernel.states[k], &mid.states[k], &reference.states[k]] {
                    out.push(x.q[0]);
                    out.push(x.p[0]);
                }
            }
            Ok(out)
        }
    }

    /// `κ(εr)` at `n` evenly spaced radii in `[0, r_max]`.
    pub fn kernel_profile(family: &str, epsilon: f64, r_max: f64, n: usize) -> Result<Vec<f64>> {
        let kernel = KernelSpec::new(KernelFamily::from_str(family)?, epsilon)?;
        let last = n.saturating_sub(1).max(1) as f64;
        Ok((0..n)
            .map(|i| {
                let r = r_max * i as f64 / last;
                kernel.profile(r * r).h
            })
            .collect())
    }

    /// Pairs `[ΔT, det D(ΔT)]` for a one-degree-of-freedom harmonic oscillator.
    pub fn resonance_curve(dt_max: f64, n: usize) -> Result<Vec<f64>> {
        let sys = SystemSpec::harmonic(1);
        let last = n.saturating_sub(1).max(1) as f64;
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let dt = dt_max * i as f64 / last;
            out.push(dt);
            out.push(sys.resonance_check(dt)?.det_d);
        }
        Ok(out)
    }
}

fn js(e: symker::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Pendulum(demo::PendulumDemo);

#[wasm_bindgen]
impl Pendulum {
    #[wasm_bindgen(constructor)]
    pub fn new(grid: usize, max_centers: usize, delta_t: f64, family: &str, epsilon: f64) -> Result<Pendulum, JsError> {
        demo::PendulumDemo::train(grid, max_centers, delta_t, family, epsilon).map(Pendulum).map_err(js)
    }

    pub fn centers(&self) -> usize {
        self.0.centers()
    }

    #[wasm_bindgen(js_name = trainError)]
    pub fn train_error(&self) -> f64 {
        self.0.train_error()
    }

    #[wasm_bindgen(js_name = validationError)]
    pub fn validation_error(&self) -> f64 {
        self.0.validation_error()
    }

    pub fn rollout(&self, q0: f64, p0: f64, steps: usize) -> Result<Vec<f64>, JsError> {
        self.0.rollout(q0, p0, steps).map_err(js)
    }
}

#[wasm_bindgen(js_name = kernelProfile)]
pub fn kernel_profile(family: &str, epsilon: f64, r_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    demo::kernel_profile(family, epsilon, r_max, n).map_err(js)
}

#[wasm_bindgen(js_name = resonanceCurve)]
pub fn resonance_curve(dt_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    demo::resonance_curve(dt_max, n).map_err(js)
}
