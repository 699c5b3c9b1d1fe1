//! In-browser demo. The page talks to a [`Connection`] in the same process
//! using the server's JSON messages, so the UI code is the same whether it
//! runs against `betagate serve` or this module.

use std::sync::Arc;

use betagate::harness::config::ExperimentConfig;
use betagate::harness::server::{Connection, Hub};
use betagate::rationality::RationalityModel;
use wasm_bindgen::prelude::*;

/// Native core of the demo, testable off the browser.
pub struct DemoCore {
    conn: Connection,
    hub: Arc<Hub>,
}

impl DemoCore {
    /// Default scenario; `model_json` enables the adaptive rule.
    pub fn new(model_json: Option<&str>) -> Result<Self, String> {
        let model = model_json
            .map(serde_json::from_str::<RationalityModel>)
            .transpose()
            .map_err(|e| format!("bad model: {e}"))?;
        let hub = Arc::new(Hub::new(ExperimentConfig::default(), model).map_err(|e| e.to_string())?);
        Ok(Self {
            conn: Connection::new(hub.clone()),
            hub,
        })
    }

    /// One client message in, the JSON array of replies out.
    pub fn send(&mut self, line: &str) -> String {
        serde_json::to_string(&self.conn.handle_line(line)).expect("server messages serialize")
    }

    /// Frame for one playback tick, if playing.
    pub fn tick(&mut self) -> Option<String> {
        self.conn
            .tick()
            .map(|m| serde_json::to_string(&m).expect("server messages serialize"))
    }

    /// Joint torques for a hand force `(fx, fy)` at the end effector of
    /// waypoint `index` of `waypoints`: `J^T f`, clipped to the torque limit.
    pub fn torque_for_force(&self, joints: &[f64], fx: f64, fy: f64) -> Result<Vec<f64>, String> {
        let sc = self.hub.config().scenario().map_err(|e| e.to_string())?;
        let jac = sc.model.ee_jacobian(joints).map_err(|e| e.to_string())?;
        let limit = self.hub.config().server.max_torque;
        Ok((0..jac.ncols())
            .map(|j| (jac[(0, j)] * fx + jac[(1, j)] * fy).clamp(-limit, limit))
            .collect())
    }
}

#[wasm_bindgen]
pub struct Demo(DemoCore);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(model_json: Option<String>) -> Result<Demo, JsError> {
        DemoCore::new(model_json.as_deref()).map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn send(&mut self, line: &str) -> String {
        self.0.send(line)
    }

    pub fn tick(&mut self) -> Option<String> {
        self.0.tick()
    }

    #[wasm_bindgen(js_name = torqueForForce)]
    pub fn torque_for_force(&self, joints: Vec<f64>, fx: f64, fy: f64) -> Result<Vec<f64>, JsError> {
        self.0.torque_for_force(&joints, fx, fy).map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn replies(core: &mut DemoCore, line: &str) -> Vec<Value> {
        serde_json::from_str(&core.send(line)).unwrap()
    }

    #[test]
    fn push_toggle_and_reset() {
        let mut core = DemoCore::new(None).unwrap();
        let hello = replies(&mut core, r#"{"type":"hello"}"#);
        assert_eq!(hello[0]["type"], "welcome");
        let frame = &hello[1];
        let q: Vec<f64> = serde_json::from_value(frame["waypoints"][8].clone()).unwrap();
        let torque = core.torque_for_force(&q, 0.0, -50.0).unwrap();
        assert_eq!(torque.len(), 3);
        let line = serde_json::json!({"type": "apply_correction", "torque": torque, "waypoint_index": 8});
        let out = replies(&mut core, &line.to_string());
        assert_eq!(out[0]["type"], "audit");
        assert_eq!(out[1]["corrections"], 1);
        assert_ne!(out[1]["theta"], frame["theta"]);
        let out = replies(&mut core, r#"{"type":"reset"}"#);
        assert_eq!(out[1]["theta"], frame["theta"]);
        assert_eq!(out[1]["corrections"], 0);
        assert_eq!(replies(&mut core, "nonsense")[0]["type"], "error");
    }

    #[test]
    fn downward_hand_force_lowers_the_end_effector() {
        let core = DemoCore::new(None).unwrap();
        let q = [0.3, 0.9, 1.0];
        let sc = ExperimentConfig::default().scenario().unwrap();
        let tau = core.torque_for_force(&q, 0.0, -1.0).unwrap();
        let jac = sc.model.ee_jacobian(&q).unwrap();
        let dy: f64 = (0..3).map(|j| jac[(1, j)] * tau[j]).sum();
        assert!(dy < 0.0);
        assert!(DemoCore::new(Some("{not json")).is_err());
    }
}
