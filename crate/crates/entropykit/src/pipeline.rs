//! Weekly feature pipeline: per-day measures, weekly averaging, per-household
//! Z-score normalization, four-band discretization, and the feature table.
//!
//! The baseline protocol: a household's first `baseline_weeks` observed
//! weeks fit one transition matrix and train one entropy-production model
//! per day period. Those weeks are consumed by fitting and excluded from
//! the feature table; every later week yields one row.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::entropy::{estimate_distribution_over, shannon_entropy};
use crate::error::{Error, Result};
use crate::events::{ActivityEvent, DayPeriod, DayWindow, Diagnostic, LocationAlphabet, WindowKey};
use crate::events::{collapse_repeats, slice_windows, WeekOrigin};
use crate::markov::{
    entropy_rate, fit_transition_matrix, stationary_distribution, Trajectory, TransitionMatrix,
};
use crate::neep::{ep_rate_over, train, NeepModel, TrainConfig, TrainLog};
use crate::rng::Rng;

/// Equal-probability breakpoints of the standard normal (quartiles at
/// ±0.6745 and 0).
pub const GAUSSIAN_BREAKPOINTS: [f64; 3] = [-0.6745, 0.0, 0.6745];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MeasureKind {
    ShannonDay = 0,
    ShannonNight = 1,
    EntropyRateDay = 2,
    EntropyRateNight = 3,
    EpDay = 4,
    EpNight = 5,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 6] = [
        MeasureKind::ShannonDay,
        MeasureKind::ShannonNight,
        MeasureKind::EntropyRateDay,
        MeasureKind::EntropyRateNight,
        MeasureKind::EpDay,
        MeasureKind::EpNight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::ShannonDay => "shannon_day",
            MeasureKind::ShannonNight => "shannon_night",
            MeasureKind::EntropyRateDay => "entropy_rate_day",
            MeasureKind::EntropyRateNight => "entropy_rate_night",
            MeasureKind::EpDay => "ep_day",
            MeasureKind::EpNight => "ep_night",
        }
    }

    pub fn period(self) -> DayPeriod {
        match self {
            MeasureKind::ShannonDay | MeasureKind::EntropyRateDay | MeasureKind::EpDay => {
                DayPeriod::Daytime
            }
            _ => DayPeriod::Night,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    VeryLow,
    Low,
    High,
    VeryHigh,
}

impl Band {
    pub fn name(self) -> &'static str {
        match self {
            Band::VeryLow => "very_low",
            Band::Low => "low",
            Band::High => "high",
            Band::VeryHigh => "very_high",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        match s {
            "very_low" => Some(Band::VeryLow),
            "low" => Some(Band::Low),
            "high" => Some(Band::High),
            "very_high" => Some(Band::VeryHigh),
            _ => None,
        }
    }
}

/// Band assignment against ordered breakpoints, left-closed upward:
/// z < b0 -> VeryLow, b0 <= z < b1 -> Low, b1 <= z < b2 -> High,
/// z >= b2 -> VeryHigh.
pub fn discretize_with(z: f64, breakpoints: &[f64; 3]) -> Result<Band> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("cannot band z = {z}")));
    }
    Ok(if z < breakpoints[0] {
        Band::VeryLow
    } else if z < breakpoints[1] {
        Band::Low
    } else if z < breakpoints[2] {
        Band::High
    } else {
        Band::VeryHigh
    })
}

/// Band assignment with the Gaussian equal-probability breakpoints.
pub fn discretize(z: f64) -> Result<Band> {
    discretize_with(z, &GAUSSIAN_BREAKPOINTS)
}

/// One (household, week) feature record. The six per-kind slots are
/// indexed by `MeasureKind::index()`; a missing measure is `None` and its
/// `days_present` entry says how many days carried data.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub household_id: String,
    pub week_start: NaiveDate,
    pub raw: [Option<f64>; 6],
    pub normalized: [Option<f64>; 6],
    pub band: [Option<Band>; 6],
    pub days_present: [u8; 6],
    pub labels: Vec<String>,
}

impl FeatureRow {
    fn new(household_id: String, week_start: NaiveDate) -> Self {
        Self {
            household_id,
            week_start,
            raw: [None; 6],
            normalized: [None; 6],
            band: [None; 6],
            days_present: [0; 6],
            labels: Vec::new(),
        }
    }
}

/// Fitted artifacts of one (household, period): the transition matrix and
/// the trained entropy-production model.
#[derive(Clone, Debug)]
pub struct PeriodBaseline {
    pub matrix: TransitionMatrix,
    pub model: NeepModel,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct HouseholdBaseline {
    pub household_id: String,
    /// The observed week starts consumed by the baseline, in order.
    pub weeks: Vec<NaiveDate>,
    pub daytime: PeriodBaseline,
    pub night: PeriodBaseline,
}

impl HouseholdBaseline {
    pub fn period(&self, period: DayPeriod) -> &PeriodBaseline {
        match period {
            DayPeriod::Daytime => &self.daytime,
            DayPeriod::Night => &self.night,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// Observed weeks consumed by the baseline fit.
    pub baseline_weeks: usize,
    pub train: TrainConfig,
    /// Add-alpha smoothing for transition probabilities (0 = none).
    pub smoothing_alpha: f64,
    /// Drop consecutive repeats of the same location before fitting and
    /// measuring.
    pub collapse_repeats: bool,
    /// Band breakpoints from each household's empirical quartiles instead
    /// of the Gaussian ones.
    pub quartile_mode: bool,
    /// Evaluate the entropy rate with the stationary marginal of the
    /// baseline matrix instead of each day's empirical marginal.
    pub stationary_marginal: bool,
    /// Refit the transition matrix per evaluation week on the trailing
    /// `baseline_weeks` observed weeks.
    pub refit_t: bool,
    /// Retrain the entropy-production model per evaluation week on the
    /// trailing `baseline_weeks` observed weeks.
    pub retrain_neep: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            baseline_weeks: 16,
            train: TrainConfig::default(),
            smoothing_alpha: 0.0,
            collapse_repeats: false,
            quartile_mode: false,
            stationary_marginal: false,
            refit_t: false,
            retrain_neep: false,
        }
    }
}

/// Per-household view of the window map: sorted distinct weeks, and per
/// (week, period) the day windows in date order.
struct HouseholdIndex<'a> {
    weeks: Vec<NaiveDate>,
    by_week: BTreeMap<NaiveDate, [Vec<(NaiveDate, &'a DayWindow)>; 2]>,
}

fn period_slot(period: DayPeriod) -> usize {
    match period {
        DayPeriod::Daytime => 0,
        DayPeriod::Night => 1,
    }
}

fn index_households<'a>(
    windows: &'a BTreeMap<WindowKey, DayWindow>,
) -> BTreeMap<String, HouseholdIndex<'a>> {
    let mut map: BTreeMap<String, HouseholdIndex<'a>> = BTreeMap::new();
    for (key, window) in windows {
        let entry = map
            .entry(key.household_id.clone())
            .or_insert_with(|| HouseholdIndex {
                weeks: Vec::new(),
                by_week: BTreeMap::new(),
            });
        let slot = entry
            .by_week
            .entry(key.week_start)
            .or_insert_with(|| [Vec::new(), Vec::new()]);
        slot[period_slot(key.period)].push((key.day, window));
    }
    for index in map.values_mut() {
        index.weeks = index.by_week.keys().copied().collect();
    }
    map
}

/// Derive a per-(household, period) training seed from the configured one
/// so independent models do not share initialization streams.
fn scoped_config(base: &TrainConfig, household: &str, period: DayPeriod, scope: &str) -> TrainConfig {
    let mut config = base.clone();
    config.seed = Rng::new(base.seed)
        .derive(household)
        .derive(period.name())
        .derive(scope)
        .next_u64();
    config
}

fn fit_period(
    trajectories: &[Trajectory],
    alphabet: &LocationAlphabet,
    config: &TrainConfig,
    alpha: f64,
) -> Result<PeriodBaseline> {
    let matrix = fit_transition_matrix(trajectories, alphabet, alpha)?;
    let (model, log) = train(trajectories, alphabet.len(), config)?;
    Ok(PeriodBaseline { matrix, model, log })
}

fn collect_trajectories(
    index: &HouseholdIndex<'_>,
    weeks: &[NaiveDate],
    period: DayPeriod,
) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for week in weeks {
        if let Some(slot) = index.by_week.get(week) {
            for (_, window) in &slot[period_slot(period)] {
                out.extend(window.segments().iter().cloned());
            }
        }
    }
    out
}

/// Fit the per-household baselines from each household's first
/// `baseline_weeks` observed weeks. Households with fewer observed weeks,
/// or without enough transitions to train on, are skipped with a
/// diagnostic rather than failing the run.
pub fn fit_baselines(
    windows: &BTreeMap<WindowKey, DayWindow>,
    alphabet: &LocationAlphabet,
    opts: &PipelineOptions,
) -> Result<(BTreeMap<String, HouseholdBaseline>, Vec<Diagnostic>)> {
    if opts.baseline_weeks == 0 {
        return Err(Error::InvalidConfig("baseline weeks must be positive".into()));
    }
    let mut baselines = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (household, index) in index_households(windows) {
        if index.weeks.len() < opts.baseline_weeks {
            diagnostics.push(Diagnostic::household(
                &household,
                format!(
                    "skipped: {} observed weeks, baseline needs {}",
                    index.weeks.len(),
                    opts.baseline_weeks
                ),
            ));
            continue;
        }
        let weeks: Vec<NaiveDate> = index.weeks[..opts.baseline_weeks].to_vec();
        let mut periods = Vec::with_capacity(2);
        let mut skip = None;
        for period in DayPeriod::ALL {
            let trajs = collect_trajectories(&index, &weeks, period);
            let config = scoped_config(&opts.train, &household, period, "baseline");
            match fit_period(&trajs, alphabet, &config, opts.smoothing_alpha) {
                Ok(b) => periods.push(b),
                Err(Error::InsufficientData(why)) => {
                    skip = Some(format!("skipped: {} baseline: {why}", period.name()));
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        match skip {
            Some(reason) => diagnostics.push(Diagnostic::household(&household, reason)),
            None => {
                let night = periods.pop().expect("two periods fitted");
                let daytime = periods.pop().expect("two periods fitted");
                baselines.insert(
                    household.clone(),
                    HouseholdBaseline {
                        household_id: household,
                        weeks,
                        daytime,
                        night,
                    },
                );
            }
        }
    }
    Ok((baselines, diagnostics))
}

/// The trailing `count` observed weeks of `index` strictly before `week`.
fn trailing_weeks(index: &HouseholdIndex<'_>, week: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let before: Vec<NaiveDate> = index.weeks.iter().copied().filter(|w| *w < week).collect();
    let start = before.len().saturating_sub(count);
    before[start..].to_vec()
}

/// Compute raw weekly measures for every (household, week) after the
/// baseline. Each kind is the mean of its per-day values over the days
/// that had data; a kind with no data days stays missing.
pub fn weekly_measures(
    windows: &BTreeMap<WindowKey, DayWindow>,
    baselines: &BTreeMap<String, HouseholdBaseline>,
    alphabet: &LocationAlphabet,
    opts: &PipelineOptions,
) -> Result<(Vec<FeatureRow>, Vec<Diagnostic>)> {
    let n = alphabet.len();
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let households = index_households(windows);
    for (household, baseline) in baselines {
        let index = &households[household];
        for &week in &index.weeks {
            if baseline.weeks.contains(&week) {
                continue;
            }
            let mut row = FeatureRow::new(household.clone(), week);
            for period in DayPeriod::ALL {
                let days = &index.by_week[&week][period_slot(period)];

                // Baseline artifacts, optionally refit on the trailing
                // window of observed weeks before this one.
                let base = baseline.period(period);
                let mut matrix = None;
                let mut model = None;
                if opts.refit_t || opts.retrain_neep {
                    let weeks = trailing_weeks(index, week, opts.baseline_weeks);
                    let trajs = collect_trajectories(index, &weeks, period);
                    if opts.refit_t {
                        match fit_transition_matrix(&trajs, alphabet, opts.smoothing_alpha) {
                            Ok(m) => matrix = Some(m),
                            Err(Error::InsufficientData(why)) => {
                                diagnostics.push(Diagnostic::household(
                                    household,
                                    format!(
                                        "week {week} {}: refit fell back to baseline: {why}",
                                        period.name()
                                    ),
                                ));
                            }
                            Err(other) => return Err(other),
                        }
                    }
                    if opts.retrain_neep {
                        let config = scoped_config(
                            &opts.train,
                            household,
                            period,
                            &format!("retrain/{week}"),
                        );
                        match train(&trajs, n, &config) {
                            Ok((m, _)) => model = Some(m),
                            Err(Error::InsufficientData(why)) => {
                                diagnostics.push(Diagnostic::household(
                                    household,
                                    format!(
                                        "week {week} {}: retrain fell back to baseline: {why}",
                                        period.name()
                                    ),
                                ));
                            }
                            Err(other) => return Err(other),
                        }
                    }
                }
                let matrix = matrix.as_ref().unwrap_or(&base.matrix);
                let model = model.as_ref().unwrap_or(&base.model);

                let stationary_marginal = if opts.stationary_marginal {
                    Some(stationary_distribution(matrix)?.pi)
                } else {
                    None
                };

                let (shannon_kind, rate_kind, ep_kind) = match period {
                    DayPeriod::Daytime => (
                        MeasureKind::ShannonDay,
                        MeasureKind::EntropyRateDay,
                        MeasureKind::EpDay,
                    ),
                    DayPeriod::Night => (
                        MeasureKind::ShannonNight,
                        MeasureKind::EntropyRateNight,
                        MeasureKind::EpNight,
                    ),
                };

                let mut shannon = Vec::new();
                let mut rate = Vec::new();
                let mut ep = Vec::new();
                for (_, window) in days {
                    let marginal = estimate_distribution_over(window.segments(), n)?;
                    shannon.push(shannon_entropy(&marginal));
                    let rate_marginal = stationary_marginal.as_ref().unwrap_or(&marginal);
                    rate.push(entropy_rate(matrix, rate_marginal)?);
                    match ep_rate_over(model, window.segments()) {
                        Ok(v) => ep.push(v),
                        // Entropy production needs a transition; a day
                        // without consecutive events has no value.
                        Err(Error::InsufficientData(_)) => {}
                        Err(other) => return Err(other),
                    }
                }
                for (kind, values) in [
                    (shannon_kind, shannon),
                    (rate_kind, rate),
                    (ep_kind, ep),
                ] {
                    let i = kind.index();
                    row.days_present[i] = values.len() as u8;
                    if !values.is_empty() {
                        row.raw[i] = Some(values.iter().sum::<f64>() / values.len() as f64);
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok((rows, diagnostics))
}

/// Z-score each household's weekly series per kind, using the population
/// standard deviation over that household's non-missing weeks. Series with
/// fewer than 2 values or with (near-)zero variance stay missing and are
/// diagnosed.
pub fn normalize(rows: &mut [FeatureRow]) -> Vec<Diagnostic> {
    let mut diagnostics = Vec::new();
    let mut by_household: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_household
            .entry(row.household_id.clone())
            .or_default()
            .push(i);
    }
    for (household, indices) in by_household {
        for kind in MeasureKind::ALL {
            let k = kind.index();
            let present: Vec<(usize, f64)> = indices
                .iter()
                .filter_map(|&i| rows[i].raw[k].map(|v| (i, v)))
                .collect();
            if present.is_empty() {
                continue;
            }
            if present.len() < 2 {
                diagnostics.push(Diagnostic::household(
                    &household,
                    format!("{}: only 1 non-missing week, not normalized", kind.name()),
                ));
                continue;
            }
            let n = present.len() as f64;
            let mean = present.iter().map(|(_, v)| v).sum::<f64>() / n;
            let var = present.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-12 {
                diagnostics.push(Diagnostic::household(
                    &household,
                    format!("{}: constant series, not normalized", kind.name()),
                ));
                continue;
            }
            for (i, v) in present {
                rows[i].normalized[k] = Some((v - mean) / std);
            }
        }
    }
    diagnostics
}

/// R-7 (linear interpolation) quantile of sorted values.
fn quantile_r7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Fill bands from the normalized values: Gaussian breakpoints by default,
/// or per-household empirical quartiles in quartile mode.
pub fn discretize_rows(rows: &mut [FeatureRow], quartile_mode: bool) -> Result<()> {
    if !quartile_mode {
        for row in rows.iter_mut() {
            for k in 0..6 {
                if let Some(z) = row.normalized[k] {
                    row.band[k] = Some(discretize(z)?);
                }
            }
        }
        return Ok(());
    }
    let mut by_household: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_household
            .entry(row.household_id.clone())
            .or_default()
            .push(i);
    }
    for (_, indices) in by_household {
        for k in 0..6 {
            let mut values: Vec<f64> = indices
                .iter()
                .filter_map(|&i| rows[i].normalized[k])
                .collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(f64::total_cmp);
            let breakpoints = [
                quantile_r7(&values, 0.25),
                quantile_r7(&values, 0.5),
                quantile_r7(&values, 0.75),
            ];
            for &i in &indices {
                if let Some(z) = rows[i].normalized[k] {
                    rows[i].band[k] = Some(discretize_with(z, &breakpoints)?);
                }
            }
        }
    }
    Ok(())
}

/// User-supplied event annotation joined onto matching (household, week)
/// rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelRow {
    pub household_id: String,
    pub week_start: NaiveDate,
    pub label: String,
}

/// Attach labels to their rows. Labels referencing unknown households or
/// weeks produce diagnostics, never failures.
pub fn join_labels(rows: &mut [FeatureRow], labels: &[LabelRow]) -> Vec<Diagnostic> {
    let mut diagnostics = Vec::new();
    for label in labels {
        let hit = rows.iter_mut().find(|r| {
            r.household_id == label.household_id && r.week_start == label.week_start
        });
        match hit {
            Some(row) => row.labels.push(label.label.clone()),
            None => diagnostics.push(Diagnostic::household(
                &label.household_id,
                format!(
                    "label {:?} references unknown (household, week {})",
                    label.label, label.week_start
                ),
            )),
        }
    }
    diagnostics
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct KindJson {
    raw: Option<f64>,
    z: Option<f64>,
    band: Option<Band>,
    days: u8,
}

#[derive(Serialize, Deserialize)]
struct RowJson {
    household_id: String,
    week_start: NaiveDate,
    shannon_day: KindJson,
    shannon_night: KindJson,
    entropy_rate_day: KindJson,
    entropy_rate_night: KindJson,
    ep_day: KindJson,
    ep_night: KindJson,
    labels: Vec<String>,
}

impl RowJson {
    fn from_row(row: &FeatureRow) -> Self {
        let kind = |k: MeasureKind| KindJson {
            raw: row.raw[k.index()],
            z: row.normalized[k.index()],
            band: row.band[k.index()],
            days: row.days_present[k.index()],
        };
        Self {
            household_id: row.household_id.clone(),
            week_start: row.week_start,
            shannon_day: kind(MeasureKind::ShannonDay),
            shannon_night: kind(MeasureKind::ShannonNight),
            entropy_rate_day: kind(MeasureKind::EntropyRateDay),
            entropy_rate_night: kind(MeasureKind::EntropyRateNight),
            ep_day: kind(MeasureKind::EpDay),
            ep_night: kind(MeasureKind::EpNight),
            labels: row.labels.clone(),
        }
    }

    fn into_row(self) -> FeatureRow {
        let mut row = FeatureRow::new(self.household_id, self.week_start);
        let kinds = [
            self.shannon_day,
            self.shannon_night,
            self.entropy_rate_day,
            self.entropy_rate_night,
            self.ep_day,
            self.ep_night,
        ];
        for (k, kind) in kinds.into_iter().enumerate() {
            row.raw[k] = kind.raw;
            row.normalized[k] = kind.z;
            row.band[k] = kind.band;
            row.days_present[k] = kind.days;
        }
        row.labels = self.labels;
        row
    }
}

fn csv_header() -> Vec<String> {
    let mut header = vec!["household_id".to_string(), "week_start".to_string()];
    for kind in MeasureKind::ALL {
        for suffix in ["raw", "z", "band", "days"] {
            header.push(format!("{}_{suffix}", kind.name()));
        }
    }
    header.push("labels".to_string());
    header
}

fn float_field(v: Option<f64>) -> String {
    // Display prints the shortest digits that parse back to the same f64,
    // so the round trip is exact.
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the feature table, one record per (household, week), ordered as
/// given. Missing values are empty CSV fields / JSON nulls.
pub fn emit_feature_table(rows: &[FeatureRow], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(csv_header()).expect("in-memory write");
            for row in rows {
                let mut record = vec![row.household_id.clone(), row.week_start.to_string()];
                for kind in MeasureKind::ALL {
                    let k = kind.index();
                    record.push(float_field(row.raw[k]));
                    record.push(float_field(row.normalized[k]));
                    record.push(row.band[k].map(|b| b.name().to_string()).unwrap_or_default());
                    record.push(row.days_present[k].to_string());
                }
                record.push(row.labels.join(";"));
                writer.write_record(&record).expect("in-memory write");
            }
            String::from_utf8(writer.into_inner().expect("in-memory flush"))
                .expect("csv output is utf-8")
        }
        TableFormat::Jsonl => {
            let mut out = String::new();
            for row in rows {
                out.push_str(
                    &serde_json::to_string(&RowJson::from_row(row)).expect("row serializes"),
                );
                out.push('\n');
            }
            out
        }
    }
}

/// Parse a feature table back (the inverse of `emit_feature_table`).
/// Lines starting with `#` are metadata comments and are skipped.
pub fn parse_feature_table(text: &str, format: TableFormat) -> Result<Vec<FeatureRow>> {
    match format {
        TableFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .from_reader(text.as_bytes());
            let expected = csv_header();
            let headers = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
            if headers.iter().ne(expected.iter().map(String::as_str)) {
                return Err(Error::Schema("unexpected feature table header".into()));
            }
            let parse_f64 = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Schema(format!("bad number {s:?}: {e}")))
            };
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| Error::Schema(e.to_string()))?;
                let field = |i: usize| record.get(i).unwrap_or_default();
                let week = field(1)
                    .parse::<NaiveDate>()
                    .map_err(|e| Error::Schema(format!("bad week_start: {e}")))?;
                let mut row = FeatureRow::new(field(0).to_string(), week);
                for (k, _) in MeasureKind::ALL.iter().enumerate() {
                    let base = 2 + k * 4;
                    row.raw[k] = parse_f64(field(base))?;
                    row.normalized[k] = parse_f64(field(base + 1))?;
                    row.band[k] = match field(base + 2) {
                        "" => None,
                        name => Some(Band::parse(name).ok_or_else(|| {
                            Error::Schema(format!("unknown band {name:?}"))
                        })?),
                    };
                    row.days_present[k] = field(base + 3)
                        .parse()
                        .map_err(|e| Error::Schema(format!("bad day count: {e}")))?;
                }
                let labels = field(2 + 6 * 4);
                if !labels.is_empty() {
                    row.labels = labels.split(';').map(str::to_string).collect();
                }
                rows.push(row);
            }
            Ok(rows)
        }
        TableFormat::Jsonl => {
            let mut rows = Vec::new();
            for line in text.lines() {
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let parsed: RowJson = serde_json::from_str(trimmed)
                    .map_err(|e| Error::Schema(format!("bad feature row: {e}")))?;
                rows.push(parsed.into_row());
            }
            Ok(rows)
        }
    }
}

/// Window selector for fitting on a subset of day periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DayPeriodFilter {
    All,
    Daytime,
    Night,
}

/// Slice events into windows and return the selected trajectories in
/// window order, one per contiguous run.
pub fn period_trajectories(
    events: &[ActivityEvent],
    collapse: bool,
    filter: DayPeriodFilter,
) -> Vec<Trajectory> {
    slice_windows(events, WeekOrigin::IsoMonday)
        .iter()
        .filter(|(key, _)| match filter {
            DayPeriodFilter::All => true,
            DayPeriodFilter::Daytime => key.period == DayPeriod::Daytime,
            DayPeriodFilter::Night => key.period == DayPeriod::Night,
        })
        .flat_map(|(_, window)| window.segments())
        .map(|traj| {
            if collapse {
                collapse_repeats(traj)
            } else {
                traj.clone()
            }
        })
        .collect()
}

/// One `#`-prefixed metadata line stamped at the top of tabular outputs:
/// tool version, the effective configuration with its hash, and the seed.
/// Readers treat `#` lines as comments, so outputs stay self-describing
/// without breaking the round trip.
pub fn metadata_line(command: &str, config: &serde_json::Value, seed: u64) -> String {
    let hash = crate::rng::fnv1a64(config.to_string().as_bytes());
    let meta = serde_json::json!({
        "tool": "entropykit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "config_hash": format!("{hash:016x}"),
        "seed": seed,
    });
    format!("# {meta}\n")
}

/// Parse a label file: CSV with header `household_id,week_start,label`,
/// `#` comment lines skipped.
pub fn parse_label_rows<R: std::io::Read>(source: R) -> Result<Vec<LabelRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
    for required in ["household_id", "week_start", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Schema(format!(
                "label file is missing the {required:?} column"
            )));
        }
    }
    let headers = headers.clone();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema(e.to_string()))?;
        let row: LabelRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Schema(format!("bad label row: {e}")))?;
        labels.push(row);
    }
    Ok(labels)
}

/// Full pipeline output: the finished rows plus every per-household or
/// per-record diagnostic collected along the way.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<FeatureRow>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Events in, feature rows out: slice windows, fit baselines, compute
/// weekly measures, normalize, band, and join labels.
pub fn run_features(
    events: &[ActivityEvent],
    alphabet: &LocationAlphabet,
    labels: &[LabelRow],
    opts: &PipelineOptions,
) -> Result<RunOutput> {
    if events.is_empty() {
        return Err(Error::InsufficientData("no events".into()));
    }
    let mut windows = slice_windows(events, WeekOrigin::IsoMonday);
    if opts.collapse_repeats {
        windows = windows
            .into_iter()
            .map(|(k, w)| {
                let collapsed = w.collapse_repeats();
                (k, collapsed)
            })
            .collect();
    }
    let mut diagnostics = Vec::new();
    let (baselines, mut diags) = fit_baselines(&windows, alphabet, opts)?;
    diagnostics.append(&mut diags);
    let (mut rows, mut diags) = weekly_measures(&windows, &baselines, alphabet, opts)?;
    diagnostics.append(&mut diags);
    diagnostics.append(&mut normalize(&mut rows));
    discretize_rows(&mut rows, opts.quartile_mode)?;
    diagnostics.append(&mut join_labels(&mut rows, labels));
    Ok(RunOutput { rows, diagnostics })
}
