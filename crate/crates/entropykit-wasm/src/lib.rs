//! Browser bindings for the demo page in `www/`.
//!
//! The API is JSON strings in, JSON strings out, so the page needs no
//! generated TypeScript and no serialization glue. On wasm32 the items are
//! exported with wasm-bindgen; natively they are ordinary functions, which
//! is how the unit tests drive them.
//!
//! Build: `wasm-pack build crates/entropykit-wasm --target web --out-dir
//! ../../www/pkg` (see the README).

#[cfg(target_arch = "wasm32")]
use wasm_bindgen::prelude::wasm_bindgen;

use entropykit::entropy::{estimate_distribution, shannon_entropy};
use entropykit::markov::{
    analytic_ep_rate, entropy_rate, simulate_trajectory, stationary_distribution, Trajectory,
    TransitionMatrix,
};
use entropykit::neep::{ep_rate, TrainConfig, Trainer};
use entropykit::pipeline::{discretize_rows, normalize, Band, FeatureRow};
use entropykit::validate::ring_matrix;

fn err_string(e: entropykit::Error) -> String {
    e.to_string()
}

/// Simulate a trajectory from a transition-matrix spec (the JSON written
/// by `entropykit fit`; `counts` may be omitted) and report the analytic
/// oracles alongside the sampled states.
#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
pub fn simulate_chain(spec_json: &str, steps: u32, seed: u32) -> Result<String, String> {
    let matrix = TransitionMatrix::from_json(spec_json).map_err(err_string)?;
    let stationary = stationary_distribution(&matrix).map_err(err_string)?;
    let trajectory =
        simulate_trajectory(&matrix, &stationary.pi, steps as usize, u64::from(seed))
            .map_err(err_string)?;
    let occupancy = estimate_distribution(&trajectory, matrix.n()).map_err(err_string)?;
    let shannon = shannon_entropy(&occupancy);
    let rate = entropy_rate(&matrix, &stationary.pi).map_err(err_string)?;
    let (ep, ep_note) = match analytic_ep_rate(&matrix) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(serde_json::json!({
        "symbols": matrix.alphabet().symbols(),
        "states": trajectory.states(),
        "occupancy": occupancy.probs(),
        "shannon": shannon,
        "entropy_rate_stationary": rate,
        "analytic_ep_rate": ep,
        "ep_note": ep_note,
        "stationary": stationary.pi.probs(),
        "stationary_unique": stationary.unique,
    })
    .to_string())
}

/// Interactive entropy-production training on a three-state driven ring.
/// The page constructs one, then calls `step()` once per animation frame
/// to advance an epoch and read the J curve and the current estimate.
#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
pub struct EpTrainer {
    trainer: Trainer,
    evaluation: Trajectory,
    analytic: f64,
    epochs: usize,
}

#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
impl EpTrainer {
    /// `forward` is the clockwise hop probability of the ring (0.5 is
    /// equilibrium); `transitions` the training-trajectory length.
    #[cfg_attr(target_arch = "wasm32", wasm_bindgen(constructor))]
    pub fn new(
        forward: f64,
        transitions: u32,
        epochs: u32,
        seed: u32,
    ) -> Result<EpTrainer, String> {
        if !(forward > 0.0 && forward < 1.0) {
            return Err(format!("forward probability {forward} must be inside (0, 1)"));
        }
        if epochs == 0 {
            return Err("epochs must be positive".into());
        }
        let matrix = ring_matrix(forward);
        let pi = stationary_distribution(&matrix).map_err(err_string)?.pi;
        let seed = u64::from(seed);
        let training = simulate_trajectory(&matrix, &pi, transitions as usize + 1, seed)
            .map_err(err_string)?;
        let evaluation = simulate_trajectory(
            &matrix,
            &pi,
            (transitions as usize + 1).min(20_001),
            seed.wrapping_add(1),
        )
        .map_err(err_string)?;
        let config = TrainConfig {
            epochs: epochs as usize,
            seed,
            ..TrainConfig::default()
        };
        let trainer =
            Trainer::new(std::slice::from_ref(&training), matrix.n(), &config).map_err(err_string)?;
        let analytic = analytic_ep_rate(&matrix).map_err(err_string)?;
        Ok(EpTrainer {
            trainer,
            evaluation,
            analytic,
            epochs: epochs as usize,
        })
    }

    pub fn analytic(&self) -> f64 {
        self.analytic
    }

    pub fn done(&self) -> bool {
        self.trainer.epochs_done() >= self.epochs
    }

    /// Advance one epoch and report progress. Calling after the last
    /// epoch just reports the final state.
    pub fn step(&mut self) -> Result<String, String> {
        if !self.done() {
            self.trainer.run_epoch().map_err(err_string)?;
        }
        let stats = self.trainer.log().last().cloned();
        let estimate =
            ep_rate(&self.trainer.best_model(), &self.evaluation).map_err(err_string)?;
        Ok(serde_json::json!({
            "epoch": self.trainer.epochs_done(),
            "epochs": self.epochs,
            "train_j": stats.as_ref().map(|s| s.train_j),
            "selection_j": stats.as_ref().map(|s| s.selection_j),
            "best_epoch": self.trainer.best_epoch(),
            "ep_estimate": estimate,
            "analytic": self.analytic,
            "done": self.done(),
        })
        .to_string())
    }
}

/// Normalize a weekly raw series and band it: input is a JSON array of
/// numbers (null = missing week), output the z-scores and band names.
#[cfg_attr(target_arch = "wasm32", wasm_bindgen)]
pub fn weekly_bands(values_json: &str, quartile_mode: bool) -> Result<String, String> {
    let values: Vec<Option<f64>> =
        serde_json::from_str(values_json).map_err(|e| format!("bad input: {e}"))?;
    if values.len() < 2 {
        return Err("need at least 2 weeks".into());
    }
    let monday = chrono::NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date");
    let mut rows: Vec<FeatureRow> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut row = FeatureRow {
                household_id: "demo".into(),
                week_start: monday + chrono::Duration::weeks(i as i64),
                raw: [None; 6],
                normalized: [None; 6],
                band: [None; 6],
                days_present: [0; 6],
                labels: Vec::new(),
            };
            row.raw[0] = *v;
            row.days_present[0] = u8::from(v.is_some()) * 7;
            row
        })
        .collect();
    let diagnostics = normalize(&mut rows);
    discretize_rows(&mut rows, quartile_mode).map_err(err_string)?;
    let z: Vec<Option<f64>> = rows.iter().map(|r| r.normalized[0]).collect();
    let bands: Vec<Option<&str>> = rows.iter().map(|r| r.band[0].map(Band::name)).collect();
    Ok(serde_json::json!({
        "z": z,
        "bands": bands,
        "notes": diagnostics.iter().map(|d| d.reason.clone()).collect::<Vec<_>>(),
    })
    .to_string())
}
