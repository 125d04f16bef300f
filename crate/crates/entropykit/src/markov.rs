//! First-order Markov chains over the location alphabet: fitting, entropy
//! rate, stationary distributions, trajectory simulation, and the analytic
//! steady-state entropy-production oracle.

use serde::{Deserialize, Serialize};

use crate::entropy::ProbabilityDistribution;
use crate::error::{Error, Result};
use crate::events::LocationAlphabet;
use crate::rng::Rng;

/// Ordered sequence of alphabet indices, length at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    states: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InsufficientData("empty trajectory".into()));
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_state(&self) -> usize {
        *self.states.iter().max().expect("non-empty")
    }

    /// Adjacent (s_t, s_{t+1}) pairs; empty for single-state trajectories.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.states.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn n_transitions(&self) -> usize {
        self.states.len() - 1
    }

    pub fn reversed(&self) -> Trajectory {
        let mut states = self.states.clone();
        states.reverse();
        Self { states }
    }
}

/// Row-stochastic transition matrix with the raw transition counts it was
/// derived from. Rows that had no observations are uniform and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    alphabet: LocationAlphabet,
    counts: Vec<u64>,
    probs: Vec<f64>,
    uniform_rows: Vec<usize>,
}

/// Result of a stationary-distribution computation. `unique` is false when
/// the chain has more than one closed communicating class (the returned π
/// is then only one of many); `oscillatory` marks a periodic chain where
/// the value is the Cesàro average of the iteration.
#[derive(Clone, Debug)]
pub struct Stationary {
    pub pi: ProbabilityDistribution,
    pub unique: bool,
    pub oscillatory: bool,
    pub iterations: u64,
}

impl Stationary {
    /// The "non-unique/oscillatory" condition: π should not be trusted as
    /// the single long-run distribution of the chain.
    pub fn flagged(&self) -> bool {
        !self.unique || self.oscillatory
    }
}

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_CAP: u64 = 1_000_000;

impl TransitionMatrix {
    /// Build directly from row-stochastic probabilities (no observed
    /// counts). Rows must sum to 1 within 1e-9.
    pub fn from_probs(alphabet: LocationAlphabet, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = alphabet.len();
        if rows.len() != n {
            return Err(Error::InvalidMatrix(format!(
                "expected {n} rows, got {}",
                rows.len()
            )));
        }
        let mut probs = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i},{j}) is {p}, outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {sum}, not 1")));
            }
            probs.extend_from_slice(row);
        }
        Ok(Self {
            alphabet,
            counts: vec![0; n * n],
            probs,
            uniform_rows: Vec::new(),
        })
    }

    pub fn alphabet(&self) -> &LocationAlphabet {
        &self.alphabet
    }

    pub fn n(&self) -> usize {
        self.alphabet.len()
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n() + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n() + j]
    }

    pub fn probs_row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.probs[i * n..(i + 1) * n]
    }

    pub fn total_transitions(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Indices of rows that had no observed outgoing transition.
    pub fn uniform_rows(&self) -> &[usize] {
        &self.uniform_rows
    }

    pub fn to_json(&self) -> String {
        let n = self.n();
        let file = MatrixFile {
            version: MATRIX_FORMAT_VERSION,
            alphabet: self.alphabet.clone(),
            counts: (0..n)
                .map(|i| self.counts[i * n..(i + 1) * n].to_vec())
                .collect(),
            probs: (0..n).map(|i| self.probs_row(i).to_vec()).collect(),
            uniform_rows: self.uniform_rows.clone(),
        };
        serde_json::to_string_pretty(&file).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MatrixFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidMatrix(e.to_string()))?;
        if file.version != MATRIX_FORMAT_VERSION {
            return Err(Error::InvalidMatrix(format!(
                "unsupported matrix format version {}",
                file.version
            )));
        }
        let n = file.alphabet.len();
        let mut matrix = Self::from_probs(file.alphabet, file.probs)?;
        if !file.counts.is_empty() {
            if file.counts.len() != n || file.counts.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidMatrix("counts shape mismatch".into()));
            }
            matrix.counts = file.counts.into_iter().flatten().collect();
        }
        for &r in &file.uniform_rows {
            if r >= n {
                return Err(Error::InvalidMatrix(format!("uniform_rows index {r} out of range")));
            }
        }
        matrix.uniform_rows = file.uniform_rows;
        Ok(matrix)
    }

    /// Adjacency on strictly positive transition probabilities.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.prob(i, j) > 0.0).collect())
            .collect()
    }
}

const MATRIX_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    version: u32,
    alphabet: LocationAlphabet,
    #[serde(default)]
    counts: Vec<Vec<u64>>,
    probs: Vec<Vec<f64>>,
    #[serde(default)]
    uniform_rows: Vec<usize>,
}

/// Count adjacent pairs within each trajectory (never across trajectory
/// boundaries) and normalize rows. Rows with no observations become
/// uniform and are flagged. With `alpha` > 0, add-alpha smoothing is
/// applied to probabilities (counts stay raw).
pub fn fit_transition_matrix(
    trajectories: &[Trajectory],
    alphabet: &LocationAlphabet,
    alpha: f64,
) -> Result<TransitionMatrix> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidConfig(format!("smoothing alpha {alpha} must be >= 0")));
    }
    let n = alphabet.len();
    let mut counts = vec![0u64; n * n];
    for traj in trajectories {
        if traj.max_state() >= n {
            return Err(Error::InvalidAlphabet(format!(
                "state {} out of range for alphabet of {n}",
                traj.max_state()
            )));
        }
        for (a, b) in traj.transitions() {
            counts[a * n + b] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InsufficientData(
            "no trajectory contains a transition".into(),
        ));
    }
    let mut probs = vec![0.0; n * n];
    let mut uniform_rows = Vec::new();
    for i in 0..n {
        let row_sum: u64 = counts[i * n..(i + 1) * n].iter().sum();
        if row_sum == 0 {
            uniform_rows.push(i);
        }
        for j in 0..n {
            probs[i * n + j] = if alpha > 0.0 {
                (counts[i * n + j] as f64 + alpha) / (row_sum as f64 + alpha * n as f64)
            } else if row_sum == 0 {
                1.0 / n as f64
            } else {
                counts[i * n + j] as f64 / row_sum as f64
            };
        }
    }
    Ok(TransitionMatrix {
        alphabet: alphabet.clone(),
        counts,
        probs,
        uniform_rows,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Strongly connected components on the positive-probability graph,
/// by pairwise reachability (the matrices here are small).
fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut reach = vec![vec![false; n]; n];
    for (start, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !row[v] {
                    row[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (0..n)
            .filter(|&j| i == j || (reach[i][j] && reach[j][i]))
            .collect();
        for &m in &members {
            assigned[m] = true;
        }
        classes.push(members);
    }
    classes
}

/// Period of one closed class: gcd over intra-class edges (u, v) of
/// |level(u) + 1 - level(v)| on a BFS levelling.
fn class_period(class: &[usize], adj: &[Vec<usize>]) -> u64 {
    let in_class = |v: usize| class.contains(&v);
    let mut level: Vec<Option<u64>> = vec![None; adj.len()];
    level[class[0]] = Some(0);
    let mut queue = std::collections::VecDeque::from([class[0]]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if in_class(v) && level[v].is_none() {
                level[v] = Some(level[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    let mut g = 0u64;
    for &u in class {
        for &v in &adj[u] {
            if in_class(v) {
                let d = (level[u].unwrap() as i64 + 1 - level[v].unwrap() as i64).unsigned_abs();
                g = gcd(g, d);
            }
        }
    }
    g.max(1)
}

/// Power iteration from the uniform start until the L1 change is below
/// 1e-12 (capped at 10^6 iterations). Periodic chains converge through the
/// average over one period (the iteration's Cesàro limit) and are flagged
/// `oscillatory`; chains with several closed classes are flagged
/// `!unique`.
pub fn stationary_distribution(matrix: &TransitionMatrix) -> Result<Stationary> {
    let n = matrix.n();
    let adj = matrix.adjacency();
    let classes = components(&adj);
    let closed: Vec<&Vec<usize>> = classes
        .iter()
        .filter(|class| {
            class
                .iter()
                .all(|&u| adj[u].iter().all(|&v| class.contains(&v)))
        })
        .collect();
    let unique = closed.len() == 1;
    let mut period = 1u64;
    for class in &closed {
        let p = class_period(class, &adj);
        period = period / gcd(period, p) * p;
        if period > 1000 {
            return Err(Error::NoStationaryDistribution(format!(
                "combined period {period} exceeds supported bound"
            )));
        }
    }

    let step = |x: &[f64]| -> Vec<f64> {
        let mut next = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, slot) in next.iter_mut().enumerate() {
                *slot += xi * matrix.prob(i, j);
            }
        }
        next
    };
    let l1 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    };

    let mut x = vec![1.0 / n as f64; n];
    let mut iterations = 0u64;
    let pi = if period == 1 {
        loop {
            let next = step(&x);
            iterations += 1;
            let diff = l1(&next, &x);
            x = next;
            if diff < STATIONARY_TOL {
                break x;
            }
            if iterations >= STATIONARY_CAP {
                return Err(Error::NoStationaryDistribution(format!(
                    "power iteration did not converge in {STATIONARY_CAP} steps"
                )));
            }
        }
    } else {
        // Average over a sliding window of one period; the window mean
        // converges geometrically even though the iterates cycle.
        let p = period as usize;
        let mut window: std::collections::VecDeque<Vec<f64>> =
            std::collections::VecDeque::with_capacity(p);
        let mut prev_avg: Option<Vec<f64>> = None;
        loop {
            let next = step(&x);
            iterations += 1;
            window.push_back(next.clone());
            if window.len() > p {
                window.pop_front();
            }
            x = next;
            if window.len() == p {
                let mut avg = vec![0.0; n];
                for w in &window {
                    for (a, v) in avg.iter_mut().zip(w) {
                        *a += v;
                    }
                }
                for a in &mut avg {
                    *a /= p as f64;
                }
                if let Some(prev) = &prev_avg {
                    if l1(&avg, prev) < STATIONARY_TOL {
                        break avg;
                    }
                }
                prev_avg = Some(avg);
            }
            if iterations >= STATIONARY_CAP {
                return Err(Error::NoStationaryDistribution(format!(
                    "Cesaro averaging did not converge in {STATIONARY_CAP} steps"
                )));
            }
        }
    };

    let total: f64 = pi.iter().sum();
    let pi: Vec<f64> = pi.iter().map(|v| v / total).collect();
    Ok(Stationary {
        pi: ProbabilityDistribution::new(pi, 1)?,
        unique,
        oscillatory: period > 1,
        iterations,
    })
}

/// Entropy rate in nats per step: −Σ_i marginal_i Σ_j P_ij ln P_ij with
/// 0·ln 0 = 0.
pub fn entropy_rate(matrix: &TransitionMatrix, marginal: &ProbabilityDistribution) -> Result<f64> {
    let n = matrix.n();
    if marginal.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "marginal has {} entries, matrix has {n} states",
            marginal.len()
        )));
    }
    let mut rate = 0.0;
    for (i, &m) in marginal.probs().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let mut row_h = 0.0;
        for j in 0..n {
            let p = matrix.prob(i, j);
            if p > 0.0 {
                row_h -= p * p.ln();
            }
        }
        rate += m * row_h;
    }
    Ok(rate.max(0.0))
}

/// Simulate `steps` states by inverse-CDF sampling: the first state from
/// `start`, the rest from the matrix rows. Bit-reproducible for a given
/// (matrix, start, steps, seed).
pub fn simulate_trajectory(
    matrix: &TransitionMatrix,
    start: &ProbabilityDistribution,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if start.len() != matrix.n() {
        return Err(Error::InvalidDistribution(format!(
            "start has {} entries, matrix has {} states",
            start.len(),
            matrix.n()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut draw = |row: &[f64]| -> usize {
        let mut u = rng.next_f64();
        let mut pick = 0;
        for (j, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            pick = j;
            u -= p;
            if u < 0.0 {
                break;
            }
        }
        pick
    };
    let mut states = Vec::with_capacity(steps);
    states.push(draw(start.probs()));
    for _ in 1..steps {
        let prev = *states.last().unwrap();
        states.push(draw(matrix.probs_row(prev)));
    }
    Trajectory::new(states)
}

/// Steady-state entropy production rate in nats per step:
/// σ = ½ Σ_ij (π_i P_ij − π_j P_ji) ln(π_i P_ij / π_j P_ji), summed over
/// pairs where both directed fluxes are positive. A pair with exactly one
/// positive flux makes σ infinite and is an error, as is a chain without a
/// unique stationary distribution.
pub fn analytic_ep_rate(matrix: &TransitionMatrix) -> Result<f64> {
    let stationary = stationary_distribution(matrix)?;
    if !stationary.unique {
        return Err(Error::ReducibleChain(
            "entropy production needs a unique stationary distribution".into(),
        ));
    }
    let pi = stationary.pi.probs();
    let n = matrix.n();
    let mut sigma = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let forward = pi[i] * matrix.prob(i, j);
            let backward = pi[j] * matrix.prob(j, i);
            match (forward > 0.0, backward > 0.0) {
                (false, false) => {}
                (true, true) => sigma += (forward - backward) * (forward / backward).ln(),
                (true, false) => {
                    return Err(Error::InfiniteEntropyProduction {
                        from: matrix.alphabet.symbol(i).to_string(),
                        to: matrix.alphabet.symbol(j).to_string(),
                    })
                }
                (false, true) => {
                    return Err(Error::InfiniteEntropyProduction {
                        from: matrix.alphabet.symbol(j).to_string(),
                        to: matrix.alphabet.symbol(i).to_string(),
                    })
                }
            }
        }
    }
    Ok(sigma.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha2() -> LocationAlphabet {
        LocationAlphabet::new(["A", "B"]).unwrap()
    }

    fn alpha3() -> LocationAlphabet {
        LocationAlphabet::new(["A", "B", "C"]).unwrap()
    }

    fn two_state() -> TransitionMatrix {
        TransitionMatrix::from_probs(alpha2(), vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    /// 3-state ring with P(i -> i+1) = bias.
    fn ring(bias: f64) -> TransitionMatrix {
        let mut rows = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            rows[i][(i + 1) % 3] = bias;
            rows[i][(i + 2) % 3] = 1.0 - bias;
        }
        TransitionMatrix::from_probs(alpha3(), rows).unwrap()
    }

    #[test]
    fn fit_counts_adjacent_pairs() {
        // [A,A,B,A]: A->A once, A->B once, B->A once.
        let traj = Trajectory::new(vec![0, 0, 1, 0]).unwrap();
        let t = fit_transition_matrix(&[traj], &alpha2(), 0.0).unwrap();
        assert_eq!(t.count(0, 0), 1);
        assert_eq!(t.count(0, 1), 1);
        assert_eq!(t.count(1, 0), 1);
        assert_eq!(t.count(1, 1), 0);
        assert_eq!(t.probs_row(0), &[0.5, 0.5]);
        assert_eq!(t.probs_row(1), &[1.0, 0.0]);
        assert!(t.uniform_rows().is_empty());
    }

    #[test]
    fn unvisited_rows_are_uniform_and_flagged() {
        let traj = Trajectory::new(vec![0, 0, 0]).unwrap();
        let t = fit_transition_matrix(&[traj], &alpha3(), 0.0).unwrap();
        assert_eq!(t.probs_row(0), &[1.0, 0.0, 0.0]);
        let third = 1.0 / 3.0;
        assert_eq!(t.probs_row(1), &[third, third, third]);
        assert_eq!(t.uniform_rows(), &[1, 2]);
    }

    #[test]
    fn transitions_never_cross_trajectory_boundaries() {
        let t1 = Trajectory::new(vec![0, 0]).unwrap();
        let t2 = Trajectory::new(vec![1, 1]).unwrap();
        let t = fit_transition_matrix(&[t1, t2], &alpha2(), 0.0).unwrap();
        assert_eq!(t.count(0, 1), 0);
        assert_eq!(t.count(1, 0), 0);
        assert_eq!(t.total_transitions(), 2);
    }

    #[test]
    fn no_transitions_is_insufficient_data() {
        let t1 = Trajectory::new(vec![0]).unwrap();
        let err = fit_transition_matrix(&[t1], &alpha2(), 0.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn smoothing_makes_all_entries_positive() {
        let traj = Trajectory::new(vec![0, 0, 0]).unwrap();
        let t = fit_transition_matrix(&[traj], &alpha3(), 0.5).unwrap();
        // Row 0: counts (2,0,0), alpha 0.5 -> (2.5, 0.5, 0.5)/3.5.
        assert!((t.prob(0, 0) - 2.5 / 3.5).abs() < 1e-15);
        assert!((t.prob(0, 1) - 0.5 / 3.5).abs() < 1e-15);
        assert!(t.probs_row(1).iter().all(|&p| p > 0.0));
        // Raw counts are untouched by smoothing.
        assert_eq!(t.count(0, 0), 2);
    }

    #[test]
    fn rows_stay_stochastic() {
        let t = fit_transition_matrix(
            &[Trajectory::new(vec![0, 1, 2, 0, 1, 0, 0, 2]).unwrap()],
            &alpha3(),
            0.0,
        )
        .unwrap();
        for i in 0..3 {
            let sum: f64 = t.probs_row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_of_doubly_stochastic_is_uniform() {
        let t = TransitionMatrix::from_probs(
            alpha2(),
            vec![vec![0.3, 0.7], vec![0.7, 0.3]],
        )
        .unwrap();
        let s = stationary_distribution(&t).unwrap();
        assert!(s.unique);
        assert!(!s.oscillatory);
        assert!((s.pi.probs()[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn stationary_oracle_two_thirds() {
        let s = stationary_distribution(&two_state()).unwrap();
        assert!((s.pi.probs()[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((s.pi.probs()[1] - 1.0 / 3.0).abs() < 1e-10);
        assert!(s.unique && !s.oscillatory);
    }

    #[test]
    fn identity_is_flagged_non_unique_and_returns_uniform() {
        let t = TransitionMatrix::from_probs(
            alpha3(),
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let s = stationary_distribution(&t).unwrap();
        assert!(!s.unique);
        assert!(s.flagged());
        let third = 1.0 / 3.0;
        for &p in s.pi.probs() {
            assert!((p - third).abs() < 1e-12);
        }
    }

    #[test]
    fn period_two_swap_averages_to_half_half() {
        let t = TransitionMatrix::from_probs(alpha2(), vec![vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap();
        let s = stationary_distribution(&t).unwrap();
        assert!(s.unique);
        assert!(s.oscillatory);
        assert!(s.flagged());
        assert!((s.pi.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn absorbing_chain_has_unique_stationary() {
        let t = TransitionMatrix::from_probs(alpha2(), vec![vec![1.0, 0.0], vec![0.5, 0.5]])
            .unwrap();
        let s = stationary_distribution(&t).unwrap();
        assert!(s.unique);
        assert!(!s.flagged());
        assert!((s.pi.probs()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn entropy_rate_oracle() {
        // Frozen: -(2/3)(0.9 ln 0.9 + 0.1 ln 0.1) - (1/3)(0.2 ln 0.2 + 0.8 ln 0.8).
        let t = two_state();
        let pi = stationary_distribution(&t).unwrap().pi;
        let xi = entropy_rate(&t, &pi).unwrap();
        assert!((xi - 0.3835227901070548).abs() < 1e-9, "xi = {xi}");
    }

    #[test]
    fn entropy_rate_of_identity_is_zero() {
        let t = TransitionMatrix::from_probs(alpha2(), vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let m = ProbabilityDistribution::new(vec![0.4, 0.6], 1).unwrap();
        assert_eq!(entropy_rate(&t, &m).unwrap(), 0.0);
    }

    #[test]
    fn entropy_rate_of_uniform_rows_is_ln_n() {
        let third = 1.0 / 3.0;
        let t = TransitionMatrix::from_probs(alpha3(), vec![vec![third; 3]; 3]).unwrap();
        let m = ProbabilityDistribution::new(vec![0.2, 0.5, 0.3], 1).unwrap();
        let xi = entropy_rate(&t, &m).unwrap();
        assert!((xi - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_absorbing_on_identity() {
        let t = TransitionMatrix::from_probs(alpha2(), vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        let start = ProbabilityDistribution::one_hot(2, 0);
        let traj = simulate_trajectory(&t, &start, 5, 9).unwrap();
        assert_eq!(traj.states(), &[0, 0, 0, 0, 0]);

        let fair = TransitionMatrix::from_probs(alpha2(), vec![vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap();
        let a = simulate_trajectory(&fair, &ProbabilityDistribution::uniform(2), 100, 3).unwrap();
        let b = simulate_trajectory(&fair, &ProbabilityDistribution::uniform(2), 100, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_recovers_generator_from_long_simulation() {
        let t = two_state();
        let start = ProbabilityDistribution::uniform(2);
        let err_at = |steps: usize| -> f64 {
            let traj = simulate_trajectory(&t, &start, steps, 11).unwrap();
            let fitted = fit_transition_matrix(&[traj], &alpha2(), 0.0).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    worst = worst.max((fitted.prob(i, j) - t.prob(i, j)).abs());
                }
            }
            worst
        };
        let coarse = err_at(1_000);
        let fine = err_at(100_000);
        assert!(fine < 0.01, "fine error {fine}");
        assert!(fine < coarse, "error should shrink: {coarse} -> {fine}");
    }

    #[test]
    fn detailed_balance_means_zero_ep() {
        let t = TransitionMatrix::from_probs(
            alpha2(),
            vec![vec![0.3, 0.7], vec![0.7, 0.3]],
        )
        .unwrap();
        let sigma = analytic_ep_rate(&t).unwrap();
        assert!(sigma.abs() < 1e-10, "sigma = {sigma}");

        let sym = ring(0.5);
        assert!(analytic_ep_rate(&sym).unwrap().abs() < 1e-10);
    }

    #[test]
    fn biased_ring_ep_matches_closed_form() {
        // sigma = (2b - 1) ln(b / (1 - b)); at b = 0.7 this is 0.4 ln(7/3).
        let sigma = analytic_ep_rate(&ring(0.7)).unwrap();
        let expected = 0.4 * (7.0f64 / 3.0).ln();
        assert!((sigma - expected).abs() < 1e-10, "sigma = {sigma}");
    }

    #[test]
    fn one_way_transition_is_infinite_ep() {
        let t = TransitionMatrix::from_probs(
            alpha3(),
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        let err = analytic_ep_rate(&t).unwrap_err();
        assert!(matches!(err, Error::InfiniteEntropyProduction { .. }));
    }

    #[test]
    fn reducible_chain_is_an_ep_error() {
        let t = TransitionMatrix::from_probs(alpha2(), vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        assert!(matches!(analytic_ep_rate(&t), Err(Error::ReducibleChain(_))));
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let traj = simulate_trajectory(
            &two_state(),
            &ProbabilityDistribution::uniform(2),
            5_000,
            21,
        )
        .unwrap();
        let t = fit_transition_matrix(&[traj], &alpha2(), 0.0).unwrap();
        let back = TransitionMatrix::from_json(&t.to_json()).unwrap();
        assert_eq!(back.counts, t.counts);
        assert_eq!(back.uniform_rows, t.uniform_rows);
        assert_eq!(back.alphabet, t.alphabet);
        for (a, b) in back.probs.iter().zip(&t.probs) {
            assert!((a - b).abs() <= 1e-15);
        }
        // Re-serialization is byte-identical, so probs survive exactly.
        assert_eq!(back.to_json(), t.to_json());
    }

    #[test]
    fn from_probs_rejects_non_stochastic_rows() {
        assert!(TransitionMatrix::from_probs(alpha2(), vec![vec![0.9, 0.2], vec![0.5, 0.5]])
            .is_err());
        assert!(TransitionMatrix::from_probs(alpha2(), vec![vec![1.1, -0.1], vec![0.5, 0.5]])
            .is_err());
        assert!(TransitionMatrix::from_probs(alpha2(), vec![vec![1.0, 0.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn entropy_rate_at_stationary_bounded_by_marginal_entropy(seed in 0u64..500) {
            // Random strictly positive rows give irreducible aperiodic chains.
            let mut rng = Rng::new(seed);
            let n = 2 + rng.below(4);
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let raw: Vec<f64> = (0..n).map(|_| rng.uniform(0.05, 1.0)).collect();
                let sum: f64 = raw.iter().sum();
                rows.push(raw.into_iter().map(|v| v / sum).collect::<Vec<_>>());
            }
            let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let t = TransitionMatrix::from_probs(
                LocationAlphabet::new(names).unwrap(),
                rows,
            ).unwrap();
            let s = stationary_distribution(&t).unwrap();
            proptest::prop_assert!(s.unique && !s.oscillatory);
            let xi = entropy_rate(&t, &s.pi).unwrap();
            let h = crate::entropy::shannon_entropy(&s.pi);
            proptest::prop_assert!(xi <= h + 1e-9, "xi {} > H {}", xi, h);
            proptest::prop_assert!(xi >= 0.0 && xi <= (n as f64).ln() + 1e-12);

            let sigma = analytic_ep_rate(&t).unwrap();
            proptest::prop_assert!(sigma >= 0.0);
        }

        #[test]
        fn fitted_matrices_are_row_stochastic(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let n = 2 + rng.below(4);
            let len = 2 + rng.below(300);
            let states: Vec<usize> = (0..len).map(|_| rng.below(n)).collect();
            let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let alphabet = LocationAlphabet::new(names).unwrap();
            let t = fit_transition_matrix(
                &[Trajectory::new(states).unwrap()],
                &alphabet,
                0.0,
            ).unwrap();
            let mut total = 0u64;
            for i in 0..n {
                let sum: f64 = t.probs_row(i).iter().sum();
                proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
                for j in 0..n {
                    total += t.count(i, j);
                }
            }
            proptest::prop_assert_eq!(total, len as u64 - 1);
        }
    }
}
