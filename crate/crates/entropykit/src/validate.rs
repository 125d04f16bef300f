//! Built-in acceptance battery.
//!
//! Ten self-contained checks covering the oracle values, the exactness
//! properties, and the end-to-end pipeline guarantees. The CLI runs them
//! via `entropykit validate`; the integration tests assert each one
//! individually. Tolerances are pinned here as constants so a change to
//! any gate is a visible diff, not a test edit.

use std::fmt::Write as _;
use std::time::Instant;

use chrono::{NaiveDate, NaiveTime};

use crate::entropy::{estimate_distribution, shannon_entropy, ProbabilityDistribution};
use crate::error::Result;
use crate::events::{
    parse_events, slice_windows, DayPeriod, DayWindow, LocationAlphabet, ParseOptions, WeekOrigin,
};
use crate::markov::{
    analytic_ep_rate, entropy_rate, fit_transition_matrix, simulate_trajectory,
    stationary_distribution, Trajectory, TransitionMatrix,
};
use crate::neep::{delta_s, ep_rate, gradient_check, train, NeepModel, TrainConfig};
use crate::pipeline::{
    discretize, discretize_rows, emit_feature_table, metadata_line, normalize, run_features,
    Band, FeatureRow, MeasureKind, PipelineOptions, TableFormat,
};
use crate::rng::Rng;

/// Exact-arithmetic gates (analytic identities, frozen constants).
pub const EXACT_TOL: f64 = 1e-12;
/// Published four-decimal Shannon value for p = (0.25, 0.25, 0.5).
pub const SHANNON_PUBLISHED: f64 = 1.039_720_8;
pub const SHANNON_PUBLISHED_TOL: f64 = 1e-6;
/// Hand-computed entropy rate of T = [[0.9, 0.1], [0.2, 0.8]] under its
/// stationary marginal (2/3, 1/3).
pub const RATE_ORACLE: f64 = 0.383_522_790_107_054_8;
pub const RATE_ORACLE_TOL: f64 = 1e-6;
/// Estimation error allowed when the rate is refit from a 1e5-step
/// simulation.
pub const RATE_FIT_TOL: f64 = 0.01;
/// Relative error allowed for the trained estimator on the driven ring.
pub const EP_RING_REL_TOL: f64 = 0.10;
/// Absolute rate allowed for the trained estimator on a detailed-balance
/// chain, where the true entropy production is zero.
pub const EP_EQUILIBRIUM_TOL: f64 = 0.05;
/// Maximum relative error between analytic and central-difference
/// gradients.
pub const GRADIENT_TOL: f64 = 1e-4;
/// Mean / standard deviation slack for normalized weekly series.
pub const Z_STAT_TOL: f64 = 1e-9;
/// Per-band deviation from 25% on standard-normal draws.
pub const BAND_FREQ_TOL: f64 = 0.01;
/// Training budget (transitions) for the estimator oracles.
pub const EP_TRAIN_TRANSITIONS: usize = 100_000;

/// Outcome of one battery check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match body() {
        Ok((passed, details)) => Check {
            name,
            passed,
            details,
        },
        Err(e) => Check {
            name,
            passed: false,
            details: format!("error: {e}"),
        },
    }
}

fn state_alphabet(n: usize) -> LocationAlphabet {
    LocationAlphabet::new((0..n).map(|i| format!("s{i}"))).expect("valid synthetic alphabet")
}

/// Three-state ring with forward probability `forward` and backward
/// probability `1 - forward`; driven (nonzero entropy production) unless
/// `forward` = 0.5.
pub fn ring_matrix(forward: f64) -> TransitionMatrix {
    let b = 1.0 - forward;
    TransitionMatrix::from_probs(
        state_alphabet(3),
        vec![
            vec![0.0, forward, b],
            vec![b, 0.0, forward],
            vec![forward, b, 0.0],
        ],
    )
    .expect("ring rows are stochastic")
}

/// Two-state chain satisfying detailed balance; entropy production is
/// exactly zero.
pub fn symmetric_two_state() -> TransitionMatrix {
    TransitionMatrix::from_probs(
        state_alphabet(2),
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
    )
    .expect("symmetric rows are stochastic")
}

/// The entropy-rate oracle chain.
pub fn oracle_two_state() -> TransitionMatrix {
    TransitionMatrix::from_probs(
        state_alphabet(2),
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
    )
    .expect("oracle rows are stochastic")
}

/// A five-room chain with every transition possible and a directional
/// bias, used to synthesize realistic corpora.
fn house_matrix() -> TransitionMatrix {
    let rows = (0..5)
        .map(|i| {
            let mut row = vec![0.0; 5];
            row[i] = 0.1;
            row[(i + 1) % 5] = 0.5;
            row[(i + 2) % 5] = 0.2;
            row[(i + 4) % 5] = 0.2;
            row
        })
        .collect();
    TransitionMatrix::from_probs(LocationAlphabet::default_rooms(), rows)
        .expect("house rows are stochastic")
}

/// Synthetic event corpus in the input CSV schema: `weeks` full weeks per
/// household starting Monday 2021-03-01, `events_per_day` evenly spaced
/// events simulated from a fixed five-room chain.
pub fn synthetic_corpus_csv(households: &[(&str, u64)], weeks: usize, events_per_day: usize) -> String {
    let matrix = house_matrix();
    let rooms = LocationAlphabet::default_rooms();
    let uniform = ProbabilityDistribution::uniform(5);
    let start = NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date");
    let spacing = 86_400 / events_per_day as u32;
    let mut out = String::from("household_id,timestamp,location\n");
    for &(id, seed) in households {
        let total = weeks * 7 * events_per_day;
        let traj =
            simulate_trajectory(&matrix, &uniform, total, seed).expect("simulation succeeds");
        for (i, &state) in traj.states().iter().enumerate() {
            let day = start + chrono::Duration::days((i / events_per_day) as i64);
            let time = NaiveTime::from_num_seconds_from_midnight_opt(
                (i % events_per_day) as u32 * spacing,
                0,
            )
            .expect("valid time");
            writeln!(out, "{id},{day}T{time},{}", rooms.symbols()[state]).expect("string write");
        }
    }
    out
}

pub fn check_shannon_oracles() -> Check {
    check("shannon oracles", || {
        let uniform = shannon_entropy(&ProbabilityDistribution::uniform(5));
        let one_hot = shannon_entropy(&ProbabilityDistribution::one_hot(5, 2));
        let skewed = shannon_entropy(&ProbabilityDistribution::new(
            vec![0.25, 0.25, 0.5],
            4,
        )?);
        let passed = (uniform - 5.0f64.ln()).abs() < EXACT_TOL
            && one_hot.abs() < EXACT_TOL
            && (skewed - SHANNON_PUBLISHED).abs() < SHANNON_PUBLISHED_TOL;
        Ok((
            passed,
            format!("uniform={uniform:.15}, one_hot={one_hot:e}, skewed={skewed:.15}"),
        ))
    })
}

pub fn check_entropy_rate_oracle() -> Check {
    check("entropy rate oracle", || {
        let matrix = oracle_two_state();
        let pi = stationary_distribution(&matrix)?.pi;
        let analytic = entropy_rate(&matrix, &pi)?;

        let sim = simulate_trajectory(&matrix, &pi, 100_000, 20_210_301)?;
        let alphabet = state_alphabet(2);
        let fitted = fit_transition_matrix(std::slice::from_ref(&sim), &alphabet, 0.0)?;
        let marginal = estimate_distribution(&sim, 2)?;
        let estimated = entropy_rate(&fitted, &marginal)?;

        let passed = (analytic - RATE_ORACLE).abs() < RATE_ORACLE_TOL
            && (estimated - analytic).abs() < RATE_FIT_TOL;
        Ok((
            passed,
            format!("analytic={analytic:.15}, estimated={estimated:.15}"),
        ))
    })
}

/// Shared harness for the two estimator oracles: simulate a training
/// trajectory, train with the default config, evaluate on a fresh one.
fn trained_ep(matrix: &TransitionMatrix, sim_seed: u64, eval_seed: u64) -> Result<(f64, f64)> {
    let pi = stationary_distribution(matrix)?.pi;
    let train_traj = simulate_trajectory(matrix, &pi, EP_TRAIN_TRANSITIONS + 1, sim_seed)?;
    let config = TrainConfig::default();
    let (model, _) = train(std::slice::from_ref(&train_traj), matrix.n(), &config)?;
    let eval_traj = simulate_trajectory(matrix, &pi, EP_TRAIN_TRANSITIONS + 1, eval_seed)?;
    let estimated = ep_rate(&model, &eval_traj)?;
    let analytic = analytic_ep_rate(matrix)?;
    Ok((estimated, analytic))
}

pub fn check_ep_ring() -> Check {
    check("entropy production: driven ring", || {
        let started = Instant::now();
        let (estimated, analytic) = trained_ep(&ring_matrix(0.7), 71, 72)?;
        let rel = (estimated - analytic).abs() / analytic;
        let elapsed = started.elapsed().as_secs_f64();
        Ok((
            rel < EP_RING_REL_TOL && elapsed < 300.0,
            format!(
                "estimated={estimated:.6}, analytic={analytic:.6}, rel_err={rel:.4}, {elapsed:.1}s"
            ),
        ))
    })
}

pub fn check_ep_equilibrium() -> Check {
    check("entropy production: equilibrium chain", || {
        let (estimated, analytic) = trained_ep(&symmetric_two_state(), 81, 82)?;
        Ok((
            estimated.abs() < EP_EQUILIBRIUM_TOL,
            format!("estimated={estimated:.6}, analytic={analytic:.6}"),
        ))
    })
}

pub fn check_antisymmetry() -> Check {
    check("exact antisymmetry", || {
        let n = 5;
        let mut rng = Rng::new(505);
        let mut draws = 0usize;
        for model_i in 0..400 {
            let model = NeepModel::randomized(n, 8, vec![64, 64], 9_000 + model_i);
            for _ in 0..25 {
                let a = rng.below(n);
                let b = rng.below(n);
                let fwd = delta_s(&model, a, b)?;
                let rev = delta_s(&model, b, a)?;
                if fwd + rev != 0.0 {
                    return Ok((
                        false,
                        format!("delta_s({a},{b}) + delta_s({b},{a}) = {:e}", fwd + rev),
                    ));
                }
                draws += 1;
            }
        }
        for model_i in 0..20 {
            let model = NeepModel::randomized(n, 8, vec![64, 64], 20_000 + model_i);
            let states: Vec<usize> = (0..50).map(|_| rng.below(n)).collect();
            let traj = Trajectory::new(states)?;
            let fwd = ep_rate(&model, &traj)?;
            let rev = ep_rate(&model, &traj.reversed())?;
            if fwd != -rev {
                return Ok((false, format!("ep_rate forward {fwd:e} vs reversed {rev:e}")));
            }
        }
        Ok((true, format!("{draws} pair draws and 20 reversals exact")))
    })
}

pub fn check_gradient() -> Check {
    check("gradient check", || {
        let model = NeepModel::randomized(5, 8, vec![64, 64], 606);
        let mut rng = Rng::new(607);
        let batch: Vec<(usize, usize)> = (0..64).map(|_| (rng.below(5), rng.below(5))).collect();
        let max_rel = gradient_check(&model, &batch, 1e-5, 608)?;
        Ok((max_rel < GRADIENT_TOL, format!("max_rel_err={max_rel:e}")))
    })
}

pub fn check_pipeline_statistics() -> Check {
    check("pipeline statistics", || {
        // Z-scores: 30 households, 40 synthetic weekly values each.
        let monday = NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date");
        let mut rng = Rng::new(700);
        let mut rows = Vec::new();
        for h in 0..30 {
            for w in 0..40 {
                let mut row = FeatureRow {
                    household_id: format!("h{h:02}"),
                    week_start: monday + chrono::Duration::weeks(w),
                    raw: [None; 6],
                    normalized: [None; 6],
                    band: [None; 6],
                    days_present: [7; 6],
                    labels: Vec::new(),
                };
                for k in 0..6 {
                    row.raw[k] = Some(rng.uniform(0.0, 2.0));
                }
                rows.push(row);
            }
        }
        normalize(&mut rows);
        for h in 0..30 {
            let id = format!("h{h:02}");
            for kind in MeasureKind::ALL {
                let z: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.household_id == id)
                    .filter_map(|r| r.normalized[kind.index()])
                    .collect();
                let n = z.len() as f64;
                let mean = z.iter().sum::<f64>() / n;
                let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if mean.abs() >= Z_STAT_TOL || (std - 1.0).abs() >= Z_STAT_TOL {
                    return Ok((false, format!("{id} {}: mean={mean:e}, std={std}", kind.name())));
                }
            }
        }

        // Band frequencies on standard-normal draws.
        let mut counts = [0usize; 4];
        let draws = 100_000;
        let mut grng = Rng::new(701);
        for _ in 0..draws {
            counts[discretize(grng.next_gaussian())? as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let frac = c as f64 / draws as f64;
            if (frac - 0.25).abs() >= BAND_FREQ_TOL {
                return Ok((false, format!("band {i} frequency {frac}")));
            }
        }

        // Affine invariance of bands under raw rescaling.
        let mut scaled: Vec<FeatureRow> = rows.clone();
        for row in &mut scaled {
            for k in 0..6 {
                row.raw[k] = row.raw[k].map(|v| 7.25 * v - 3.0);
                row.normalized[k] = None;
            }
        }
        discretize_rows(&mut rows, false)?;
        normalize(&mut scaled);
        discretize_rows(&mut scaled, false)?;
        for (a, b) in rows.iter().zip(&scaled) {
            if a.band != b.band {
                return Ok((
                    false,
                    format!("bands changed under affine rescaling at {}", a.household_id),
                ));
            }
        }
        Ok((true, format!("30 households, {draws} band draws")))
    })
}

pub fn check_window_partition() -> Check {
    check("windowing partition", || {
        let mut corpus = synthetic_corpus_csv(&[("h1", 31), ("h2", 32)], 3, 48);
        // Boundary instants, one event each.
        for stamp in [
            "2021-03-01T05:59:59",
            "2021-03-01T06:00:00",
            "2021-03-01T17:59:59",
            "2021-03-01T18:00:00",
            "2021-03-02T00:00:00",
        ] {
            writeln!(corpus, "h3,{stamp},kitchen").expect("string write");
        }
        let (events, diags) = parse_events(
            corpus.as_bytes(),
            &ParseOptions::default(),
            &LocationAlphabet::default_rooms(),
        )?;
        if !diags.is_empty() {
            return Ok((false, format!("{} unexpected diagnostics", diags.len())));
        }
        let accepted = events.len();
        let windows = slice_windows(&events, WeekOrigin::IsoMonday);
        let total: usize = windows.values().map(DayWindow::len).sum();
        if total != accepted {
            return Ok((false, format!("{total} window states vs {accepted} events")));
        }
        // The pre-dawn and evening chunks of a night window are separate
        // runs; no transition may bridge the daytime between them.
        for (key, window) in &windows {
            if window.n_transitions() + window.segments().len() != window.len() {
                return Ok((false, format!("window {key:?} has a bridging transition")));
            }
        }

        let table = [
            ("05:59:59", DayPeriod::Night),
            ("06:00:00", DayPeriod::Daytime),
            ("17:59:59", DayPeriod::Daytime),
            ("18:00:00", DayPeriod::Night),
            ("00:00:00", DayPeriod::Night),
        ];
        for (s, expected) in table {
            let t = s.parse::<NaiveTime>().expect("valid time");
            if DayPeriod::of(t) != expected {
                return Ok((false, format!("{s} assigned {:?}", DayPeriod::of(t))));
            }
        }
        Ok((true, format!("{accepted} events partitioned, boundary table holds")))
    })
}

/// The exact feature output `cmd_features` writes for a parsed corpus:
/// metadata line, then the table.
pub fn render_feature_output(
    corpus_csv: &str,
    opts: &PipelineOptions,
    format: TableFormat,
) -> Result<String> {
    let alphabet = LocationAlphabet::default_rooms();
    let (events, _) = parse_events(corpus_csv.as_bytes(), &ParseOptions::default(), &alphabet)?;
    let output = run_features(&events, &alphabet, &[], opts)?;
    let config = serde_json::json!({
        "baseline_weeks": opts.baseline_weeks,
        "epochs": opts.train.epochs,
    });
    let mut text = metadata_line("features", &config, opts.train.seed);
    text.push_str(&emit_feature_table(&output.rows, format));
    Ok(text)
}

pub fn check_determinism() -> Check {
    check("end-to-end determinism", || {
        let corpus = synthetic_corpus_csv(&[("h1", 41), ("h2", 42)], 18, 24);
        let opts = PipelineOptions {
            baseline_weeks: 16,
            train: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
            ..PipelineOptions::default()
        };
        let first = render_feature_output(&corpus, &opts, TableFormat::Csv)?;
        let second = render_feature_output(&corpus, &opts, TableFormat::Csv)?;
        Ok((
            first == second,
            format!("{} bytes, identical: {}", first.len(), first == second),
        ))
    })
}

pub fn check_baseline_protocol() -> Check {
    check("baseline protocol", || {
        let corpus = synthetic_corpus_csv(&[("h1", 51)], 20, 24);
        let alphabet = LocationAlphabet::default_rooms();
        let (events, _) =
            parse_events(corpus.as_bytes(), &ParseOptions::default(), &alphabet)?;
        let opts = PipelineOptions {
            baseline_weeks: 16,
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            ..PipelineOptions::default()
        };
        let output = run_features(&events, &alphabet, &[], &opts)?;
        let weeks: Vec<NaiveDate> = output.rows.iter().map(|r| r.week_start).collect();
        let all_complete = output.rows.iter().all(|r| {
            MeasureKind::ALL
                .iter()
                .all(|k| r.raw[k.index()].is_some() && r.days_present[k.index()] == 7)
        });
        let banded = output.rows.iter().all(|r| {
            r.band
                .iter()
                .all(|b| matches!(b, Some(Band::VeryLow | Band::Low | Band::High | Band::VeryHigh)))
        });
        Ok((
            output.rows.len() == 4 && all_complete && banded,
            format!("20 weeks -> {} rows ({weeks:?})", output.rows.len()),
        ))
    })
}

/// Run every check in acceptance order.
pub fn run_battery() -> Vec<Check> {
    vec![
        check_shannon_oracles(),
        check_entropy_rate_oracle(),
        check_ep_ring(),
        check_ep_equilibrium(),
        check_antisymmetry(),
        check_gradient(),
        check_pipeline_statistics(),
        check_window_partition(),
        check_determinism(),
        check_baseline_protocol(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_generator_is_deterministic_and_well_formed() {
        let a = synthetic_corpus_csv(&[("h1", 1)], 2, 24);
        let b = synthetic_corpus_csv(&[("h1", 1)], 2, 24);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 2 * 7 * 24);
        assert!(a.starts_with("household_id,timestamp,location\n"));
        assert!(a.contains("2021-03-01T00:00:00"));
    }

    #[test]
    fn ring_ep_matches_closed_form() {
        let sigma = analytic_ep_rate(&ring_matrix(0.7)).unwrap();
        assert!((sigma - 0.4 * (7.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_chain_has_zero_ep() {
        let sigma = analytic_ep_rate(&symmetric_two_state()).unwrap();
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn fast_checks_pass() {
        for outcome in [
            check_shannon_oracles(),
            check_entropy_rate_oracle(),
            check_gradient(),
            check_window_partition(),
        ] {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.details);
        }
    }
}
