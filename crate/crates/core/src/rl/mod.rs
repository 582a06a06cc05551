//! Multi-table Q-learning: one Q-table per leaf datatype, HTTP status
//! classes as states, mutation methods as actions.

mod agent;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::executor::Observation;
use crate::mutation::{applicable_actions, MutationAction};
use crate::value::DataType;

pub use agent::{
    derive_seed, run_episode, train_agent, AgentResult, Environment, EpisodeTrace, QDelta,
    QSummary, RequestSummary, StepRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    Init,
    S1xx,
    S2xx,
    S3xx,
    S4xx,
    S5xx,
    Transport,
}

impl State {
    pub const ALL: [State; 7] = [
        State::Init,
        State::S1xx,
        State::S2xx,
        State::S3xx,
        State::S4xx,
        State::S5xx,
        State::Transport,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            State::Init => "INIT",
            State::S1xx => "1XX",
            State::S2xx => "2XX",
            State::S3xx => "3XX",
            State::S4xx => "4XX",
            State::S5xx => "5XX",
            State::Transport => "TRANSPORT",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for State {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RlError {
    #[error("status code {0} is outside 100-599")]
    OutOfRangeStatus(u16),
}

pub fn classify_state(observation: Observation) -> Result<State, RlError> {
    match observation {
        Observation::Transport(_) => Ok(State::Transport),
        Observation::Status(code) => Ok(match code {
            100..=199 => State::S1xx,
            200..=299 => State::S2xx,
            300..=399 => State::S3xx,
            400..=499 => State::S4xx,
            500..=599 => State::S5xx,
            other => return Err(RlError::OutOfRangeStatus(other)),
        }),
    }
}

/// Points for an observation: 1XX 0, 2XX/3XX +5, 4XX -20, 5XX +10,
/// transport failure 0.
pub fn reward(observation: Observation) -> Result<i32, RlError> {
    Ok(match classify_state(observation)? {
        State::Init | State::S1xx | State::Transport => 0,
        State::S2xx | State::S3xx => 5,
        State::S4xx => -20,
        State::S5xx => 10,
    })
}

/// Q-values for one datatype, `State::ALL.len()` rows by
/// `applicable_actions(datatype)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    datatype: DataType,
    actions: &'static [MutationAction],
    values: Vec<f64>,
}

impl QTable {
    pub fn new(datatype: DataType) -> Self {
        let actions = applicable_actions(datatype);
        QTable {
            datatype,
            actions,
            values: vec![0.0; State::ALL.len() * actions.len()],
        }
    }

    pub fn datatype(&self) -> DataType {
        self.datatype
    }

    pub fn actions(&self) -> &'static [MutationAction] {
        self.actions
    }

    fn column(&self, action: MutationAction) -> usize {
        self.actions
            .iter()
            .position(|a| *a == action)
            .unwrap_or_else(|| panic!("{action} is not an action of the {} table", self.datatype))
    }

    pub fn row(&self, state: State) -> &[f64] {
        let n = self.actions.len();
        &self.values[state.index() * n..(state.index() + 1) * n]
    }

    pub fn row_mut(&mut self, state: State) -> &mut [f64] {
        let n = self.actions.len();
        &mut self.values[state.index() * n..(state.index() + 1) * n]
    }

    pub fn get(&self, state: State, action: MutationAction) -> f64 {
        self.row(state)[self.column(action)]
    }

    pub fn set(&mut self, state: State, action: MutationAction, q: f64) {
        let c = self.column(action);
        self.row_mut(state)[c] = q;
    }

    pub fn max(&self, state: State) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action; ties go to the lowest column.
    pub fn greedy(&self, state: State) -> MutationAction {
        let row = self.row(state);
        let mut best = 0;
        for (i, q) in row.iter().enumerate() {
            if *q > row[best] {
                best = i;
            }
        }
        self.actions[best]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn summary(&self) -> QSummary {
        let n = self.values.len() as f64;
        QSummary {
            mean: self.values.iter().sum::<f64>() / n,
            max: self
                .values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl Serialize for QTable {
    /// `{state: {action: q}}`
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: BTreeMap<&str, BTreeMap<&str, f64>> = State::ALL
            .iter()
            .map(|s| {
                let row = self
                    .actions
                    .iter()
                    .zip(self.row(*s))
                    .map(|(a, q)| (a.name(), *q))
                    .collect();
                (s.label(), row)
            })
            .collect();
        rows.serialize(serializer)
    }
}

/// One table per datatype the function's slots use.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QTableSet {
    tables: BTreeMap<DataType, QTable>,
}

impl QTableSet {
    pub fn for_datatypes(datatypes: impl IntoIterator<Item = DataType>) -> Self {
        QTableSet {
            tables: datatypes
                .into_iter()
                .map(|dt| (dt, QTable::new(dt)))
                .collect(),
        }
    }

    pub fn table(&self, datatype: DataType) -> Option<&QTable> {
        self.tables.get(&datatype)
    }

    pub fn table_mut(&mut self, datatype: DataType) -> Option<&mut QTable> {
        self.tables.get_mut(&datatype)
    }

    pub fn tables(&self) -> impl Iterator<Item = &QTable> {
        self.tables.values()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Epsilon-greedy choice over one table row.
pub fn select_action<R: Rng + ?Sized>(
    table: &QTable,
    state: State,
    epsilon: f64,
    rng: &mut R,
) -> MutationAction {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        table.actions[rng.random_range(0..table.actions.len())]
    } else {
        table.greedy(state)
    }
}

/// `Q(s,a) <- Q(s,a) + alpha * (r + gamma * max Q(s',.) - Q(s,a))`; returns
/// the stored value.
pub fn update_q(
    table: &mut QTable,
    s: State,
    a: MutationAction,
    r: f64,
    s_next: State,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let q = table.get(s, a);
    let target = r + gamma * table.max(s_next);
    let updated = q + alpha * (target - q);
    table.set(s, a, updated);
    updated
}

pub fn decay_epsilon(epsilon: f64, decay: f64, epsilon_min: f64) -> f64 {
    (epsilon * (1.0 - decay)).max(epsilon_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            episodes: 500,
            max_steps: 10,
            epsilon0: 1.0,
            epsilon_decay: 0.01,
            epsilon_min: 0.01,
            alpha: 0.1,
            gamma: 0.95,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Range problems, one message per offending field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_steps == 0 {
            out.push("max_steps must be positive".to_string());
        }
        for (name, v) in [
            ("epsilon", self.epsilon0),
            ("epsilon_decay", self.epsilon_decay),
            ("epsilon_min", self.epsilon_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            out.push(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::TransportFailure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn state_buckets() {
        assert_eq!(classify_state(Observation::Status(200)), Ok(State::S2xx));
        assert_eq!(classify_state(Observation::Status(599)), Ok(State::S5xx));
        assert_eq!(classify_state(Observation::Status(404)), Ok(State::S4xx));
        assert_eq!(classify_state(Observation::Status(100)), Ok(State::S1xx));
        assert_eq!(
            classify_state(Observation::Transport(TransportFailure::Timeout)),
            Ok(State::Transport)
        );
        assert_eq!(
            classify_state(Observation::Status(600)),
            Err(RlError::OutOfRangeStatus(600))
        );
        assert_eq!(
            classify_state(Observation::Status(99)),
            Err(RlError::OutOfRangeStatus(99))
        );
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(Observation::Status(204)), Ok(5));
        assert_eq!(reward(Observation::Status(302)), Ok(5));
        assert_eq!(reward(Observation::Status(404)), Ok(-20));
        assert_eq!(reward(Observation::Status(503)), Ok(10));
        assert_eq!(reward(Observation::Status(101)), Ok(0));
        assert_eq!(
            reward(Observation::Transport(TransportFailure::ConnectionRefused)),
            Ok(0)
        );
    }

    #[test]
    fn greedy_tie_breaks_low() {
        let mut t = QTable::new(DataType::Integer);
        assert_eq!(
            select_action(&t, State::Init, 0.0, &mut ChaCha8Rng::seed_from_u64(0)),
            t.actions()[0]
        );
        t.row_mut(State::Init)[..3].copy_from_slice(&[0.0, 3.0, 1.0]);
        assert_eq!(
            select_action(&t, State::Init, 0.0, &mut ChaCha8Rng::seed_from_u64(0)),
            t.actions()[1]
        );
    }

    #[test]
    fn full_exploration_is_uniform() {
        let t = QTable::new(DataType::Integer);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = BTreeMap::new();
        for _ in 0..10_000 {
            *counts
                .entry(select_action(&t, State::Init, 1.0, &mut rng))
                .or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        for c in counts.values() {
            assert!((2375..=2625).contains(c), "{counts:?}");
        }
    }

    #[test]
    fn bellman_examples() {
        let mut t = QTable::new(DataType::Integer);
        let a = MutationAction::Dictionary;
        assert_eq!(
            update_q(&mut t, State::Init, a, 10.0, State::S5xx, 0.1, 0.95),
            1.0
        );
        let mut t = QTable::new(DataType::Integer);
        t.set(State::Init, a, 1.0);
        t.set(State::S2xx, MutationAction::BitFlip, 1.0);
        let q = update_q(&mut t, State::Init, a, 10.0, State::S2xx, 0.1, 0.95);
        assert!((q - 1.995).abs() < 1e-12, "{q}");
        let before = t.clone();
        update_q(&mut t, State::Init, a, -20.0, State::S2xx, 0.0, 0.95);
        assert_eq!(t, before);
    }

    #[test]
    fn update_touches_one_cell() {
        let mut t = QTable::new(DataType::String);
        update_q(
            &mut t,
            State::S4xx,
            MutationAction::Truncate,
            5.0,
            State::S2xx,
            0.5,
            0.9,
        );
        let nonzero = t.values().filter(|v| *v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn epsilon_decay_examples() {
        assert_eq!(decay_epsilon(1.0, 0.01, 0.01), 0.99);
        assert_eq!(decay_epsilon(0.01, 0.01, 0.01), 0.01);
        let mut e = 1.0;
        for _ in 0..500 {
            e = decay_epsilon(e, 0.01, 0.01);
        }
        assert_eq!(e, 0.01);
    }

    #[test]
    fn scaling_q_keeps_greedy_choice() {
        let mut t = QTable::new(DataType::String);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in State::ALL {
            for q in t.row_mut(s) {
                *q = rng.random_range(-50.0..50.0);
            }
        }
        let mut scaled = t.clone();
        for s in State::ALL {
            for q in scaled.row_mut(s) {
                *q *= 3.7;
            }
        }
        for s in State::ALL {
            assert_eq!(t.greedy(s), scaled.greedy(s));
        }
    }

    #[test]
    fn config_problems() {
        assert!(AgentConfig::default().problems().is_empty());
        let bad = AgentConfig {
            gamma: 1.0,
            alpha: 0.0,
            ..AgentConfig::default()
        };
        assert_eq!(bad.problems().len(), 2);
    }
}
