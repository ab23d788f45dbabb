//! wasm-bindgen bindings for the browser demo.
//!
//! All numerics live in [`scene`]; this layer only converts to and from
//! JavaScript values. Structured results cross the boundary as JSON strings.

pub mod scene;

use wasm_bindgen::prelude::*;

use scene::{DemoConfig, Scene, CLASSES};

fn err_js(e: hofmn_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    /// Train the toy subject. Seeds are reproducible: the same seed builds
    /// the same model and dataset.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsValue> {
        Ok(Demo {
            scene: Scene::build(seed).map_err(err_js)?,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn classes(&self) -> usize {
        CLASSES
    }

    pub fn sample_count(&self) -> usize {
        self.scene.dataset.len()
    }

    /// Row-major class grid over the unit square (res x res cells).
    pub fn decision_grid(&self, res: usize) -> Vec<u8> {
        self.scene.decision_grid(res)
    }

    /// Dataset points as JSON: [{x, y, class}, ...].
    pub fn points_json(&self) -> String {
        serde_json::to_string(&self.scene.points()).expect("points serialize")
    }

    /// Attack one sample and return the trajectory as JSON.
    #[allow(clippy::too_many_arguments)]
    pub fn attack_json(
        &self,
        sample: usize,
        loss: String,
        optimizer: String,
        scheduler: String,
        learning_rate: f64,
        iterations: usize,
    ) -> Result<String, JsValue> {
        let config = DemoConfig {
            loss,
            optimizer,
            scheduler,
            learning_rate,
            iterations,
        };
        let t = self.scene.attack_trajectory(sample, &config).map_err(err_js)?;
        Ok(serde_json::to_string(&t).expect("trajectory serializes"))
    }

    /// Robustness curves (custom vs baseline) as JSON.
    #[allow(clippy::too_many_arguments)]
    pub fn curves_json(
        &self,
        loss: String,
        optimizer: String,
        scheduler: String,
        learning_rate: f64,
        iterations: usize,
        batch: usize,
    ) -> Result<String, JsValue> {
        let config = DemoConfig {
            loss,
            optimizer,
            scheduler,
            learning_rate,
            iterations,
        };
        let pair = self.scene.curves(&config, batch).map_err(err_js)?;
        Ok(serde_json::to_string(&pair).expect("curves serialize"))
    }

    /// One-dimensional learning-rate tuning view as JSON.
    #[allow(clippy::too_many_arguments)]
    pub fn tune_json(
        &self,
        loss: String,
        optimizer: String,
        scheduler: String,
        iterations: usize,
        trials: usize,
        init: usize,
        batch: usize,
        seed: u64,
    ) -> Result<String, JsValue> {
        let config = DemoConfig {
            loss,
            optimizer,
            scheduler,
            learning_rate: 1.0,
            iterations,
        };
        let view = self
            .scene
            .tune_learning_rate(&config, trials, init, batch, seed)
            .map_err(err_js)?;
        Ok(serde_json::to_string(&view).expect("tuner view serializes"))
    }
}
