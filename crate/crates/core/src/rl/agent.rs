use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    classify_state, decay_epsilon, reward, select_action, update_q, AgentConfig, QTableSet, State,
};
use crate::executor::{build_request, HttpExchange, HttpRequest, Observation, Transport};
use crate::identity::{harvest_identifiers, slot_resource, SharedIdentifierStore};
use crate::mutation::{mutate_function_inputs, DictionarySource, MutationAction};
use crate::oas::{ApiFunction, Location, OasError, SampleOptions, SlotId};
use crate::report::{
    record_finding, record_potential_crash, record_read_back, Finding, FindingContext,
};
use crate::value::{DataType, FieldValue};

/// Everything an agent needs to talk to the SUT for one function.
pub struct Environment<'a> {
    pub scenario: &'a str,
    pub function: &'a ApiFunction,
    pub base_url: &'a str,
    pub transport: &'a dyn Transport,
    pub store: &'a SharedIdentifierStore,
    pub dictionary: &'a DictionarySource,
    /// Parameter values pinned by the scenario; never mutated.
    pub fixed: &'a BTreeMap<String, FieldValue>,
    /// Later read function used to check that created objects can be
    /// fetched back.
    pub read_back: Option<&'a ApiFunction>,
    pub sample_options: SampleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestSummary {
    pub method: String,
    pub url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

const SUMMARY_BODY_CHARS: usize = 256;

impl RequestSummary {
    fn of(req: &HttpRequest) -> Self {
        RequestSummary {
            method: req.method.to_string(),
            url: req.url.clone(),
            body: req
                .body
                .as_ref()
                .map(|b| b.chars().take(SUMMARY_BODY_CHARS).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QDelta {
    pub datatype: DataType,
    pub action: MutationAction,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub state_before: State,
    pub actions: BTreeMap<SlotId, MutationAction>,
    pub request: RequestSummary,
    pub observation: Observation,
    pub reward: i32,
    pub state_after: State,
    pub q_deltas: Vec<QDelta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QSummary {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub epsilon: f64,
    pub steps: Vec<StepRecord>,
    /// Ended on a 5XX before `max_steps`.
    pub terminated_early: bool,
    /// Per-table Q summary after the episode.
    pub q_after: BTreeMap<DataType, QSummary>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> i64 {
        self.steps.iter().map(|s| i64::from(s.reward)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct AgentResult {
    pub scenario: String,
    pub operation_id: String,
    pub seed: u64,
    pub tables: QTableSet,
    pub traces: Vec<EpisodeTrace>,
    pub findings: Vec<Finding>,
    pub read_backs: usize,
}

/// Mixes a run seed with a scenario and step position (splitmix64 finalizer).
pub fn derive_seed(seed: u64, scenario: usize, step: usize) -> u64 {
    let mut z = seed
        ^ (scenario as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (step as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mutable per-agent bookkeeping that outlives single episodes.
struct Sink {
    findings: Vec<Finding>,
    seen_success: bool,
    read_backs: usize,
}

impl Environment<'_> {
    fn fresh_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ApiFunction, OasError> {
        let mut instance = self.function.instantiate(rng, &self.sample_options)?;
        pin_fixed(&mut instance, self.fixed);
        Ok(instance)
    }

    fn is_pinned(&self, slot: &crate::oas::Slot) -> bool {
        slot.id.location != Location::Body
            && slot.id.path.segments().is_empty()
            && self.fixed.contains_key(&slot.id.parameter)
    }

    fn mutable_slots(&self, instance: &ApiFunction) -> Vec<(SlotId, DataType)> {
        instance
            .slots()
            .into_iter()
            .filter(|s| !self.is_pinned(s))
            .map(|s| (s.id, s.datatype))
            .collect()
    }

    /// Datatypes of the unpinned slots, one Q-table each. Array parameters
    /// are sampled with the configured length, so the declared schema is
    /// instantiated once to see every leaf.
    fn datatypes(&self) -> BTreeSet<DataType> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probe = self
            .function
            .instantiate(&mut rng, &self.sample_options)
            .unwrap_or_else(|_| self.function.clone());
        probe
            .slots()
            .into_iter()
            .filter(|s| !self.is_pinned(s))
            .map(|s| s.datatype)
            .collect()
    }

    /// Harvests identifiers from a successful creation and tries to fetch the
    /// created object back.
    fn after_success<R: Rng + ?Sized>(
        &self,
        exchange: &HttpExchange,
        ctx: &FindingContext<'_>,
        rng: &mut R,
        sink: &mut Sink,
    ) {
        if !self.function.is_creational() {
            return;
        }
        let harvested = harvest_identifiers(self.function, &exchange.response_body);
        if !harvested.is_empty() {
            self.store
                .write()
                .expect("identifier store lock poisoned")
                .extend(harvested.iter().cloned());
        }
        let Some(target) = self.read_back else { return };
        let Some(request) = read_back_request(
            target,
            exchange,
            &harvested,
            self.base_url,
            &self.sample_options,
            rng,
        ) else {
            return;
        };
        sink.read_backs += 1;
        let rb = self.transport.execute(&request);
        if let Some(f) = record_read_back(exchange, &rb, ctx) {
            sink.findings.push(f);
        }
    }
}

fn pin_fixed(instance: &mut ApiFunction, fixed: &BTreeMap<String, FieldValue>) {
    for (name, value) in fixed {
        if let Some(p) = instance.parameter_mut(name) {
            if let crate::oas::SchemaNode::Leaf(leaf) = &mut p.schema {
                if let Some(v) = value.convert_to(leaf.datatype) {
                    leaf.sample = Some(v);
                }
            }
        }
    }
}

/// Read request for the object a creation just returned: path parameters
/// come from a same-named response field, or else from a harvested
/// identifier of the parameter's resource.
fn read_back_request<R: Rng + ?Sized>(
    target: &ApiFunction,
    created: &HttpExchange,
    harvested: &[(String, FieldValue)],
    base_url: &str,
    options: &SampleOptions,
    rng: &mut R,
) -> Option<HttpRequest> {
    let body: serde_json::Value = serde_json::from_str(&created.response_body).ok()?;
    let mut instance = target.instantiate(rng, options).ok()?;
    let slots = instance.slots();
    let mut values = BTreeMap::new();
    for slot in slots.iter().filter(|s| s.id.location == Location::Path) {
        let from_field = body
            .get(&slot.id.parameter)
            .and_then(|v| FieldValue::from_json(slot.datatype, v));
        let value = from_field.or_else(|| {
            let resource = slot_resource(target, slot)?;
            harvested
                .iter()
                .find(|(r, _)| *r == resource)
                .and_then(|(_, v)| v.convert_to(slot.datatype))
        })?;
        values.insert(slot.id.clone(), value);
    }
    instance.for_each_leaf_mut(&mut |id, leaf| {
        if let Some(v) = values.get(id) {
            leaf.sample = Some(v.clone());
        }
    });
    build_request(&instance, base_url).ok()
}

/// One episode: up to `max_steps` requests starting from INIT on fresh
/// samples, stopping early on a 5XX.
#[allow(clippy::too_many_arguments)]
fn episode<R: Rng + ?Sized>(
    env: &Environment<'_>,
    tables: &mut QTableSet,
    config: &AgentConfig,
    epsilon: f64,
    index: usize,
    rng: &mut R,
    sink: &mut Sink,
) -> Result<EpisodeTrace, OasError> {
    let mut current = env.fresh_instance(rng)?;
    let slots = env.mutable_slots(&current);
    let mut state = State::Init;
    let mut steps = Vec::new();
    let mut terminated_early = false;

    for step in 1..=config.max_steps {
        let mut actions = BTreeMap::new();
        for (id, dt) in &slots {
            if let Some(table) = tables.table(*dt) {
                actions.insert(id.clone(), select_action(table, state, epsilon, rng));
            }
        }
        current = {
            let store = env.store.read().expect("identifier store lock poisoned");
            mutate_function_inputs(&current, &actions, rng, env.dictionary, Some(&store))
                .expect("actions are drawn from each datatype's own table")
        };

        let exchange = match build_request(&current, env.base_url) {
            Ok(req) => env.transport.execute(&req),
            Err(e) => unreachable!("instantiated function lost a sample: {e}"),
        };
        let (next, r) = match (
            classify_state(exchange.observation),
            reward(exchange.observation),
        ) {
            (Ok(s), Ok(r)) => (s, r),
            _ => (State::Transport, 0),
        };

        let ctx = FindingContext {
            operation_id: &env.function.operation_id,
            scenario: env.scenario,
            episode: index,
            step,
        };
        if let Some(f) = record_finding(&exchange, &ctx) {
            sink.findings.push(f);
        }
        if next == State::Transport && sink.seen_success {
            if let Some(f) = record_potential_crash(&exchange, &ctx) {
                sink.findings.push(f);
            }
        }
        if exchange.observation.is_success() {
            sink.seen_success = true;
            env.after_success(&exchange, &ctx, rng, sink);
        }

        let cells: BTreeSet<(DataType, MutationAction)> = slots
            .iter()
            .filter_map(|(id, dt)| actions.get(id).map(|a| (*dt, *a)))
            .collect();
        let mut q_deltas = Vec::with_capacity(cells.len());
        for (dt, a) in cells {
            let table = tables
                .table_mut(dt)
                .expect("table exists for every slot datatype");
            let before = table.get(state, a);
            let after = update_q(
                table,
                state,
                a,
                f64::from(r),
                next,
                config.alpha,
                config.gamma,
            );
            q_deltas.push(QDelta {
                datatype: dt,
                action: a,
                before,
                after,
            });
        }

        steps.push(StepRecord {
            step,
            state_before: state,
            actions,
            request: RequestSummary::of(&exchange.request),
            observation: exchange.observation,
            reward: r,
            state_after: next,
            q_deltas,
        });
        state = next;
        if state == State::S5xx {
            terminated_early = step < config.max_steps;
            break;
        }
    }

    Ok(EpisodeTrace {
        episode: index,
        epsilon,
        steps,
        terminated_early,
        q_after: tables
            .tables()
            .map(|t| (t.datatype(), t.summary()))
            .collect(),
    })
}

/// Runs a single episode on fresh samples and returns its trace together
/// with any findings it produced.
pub fn run_episode<R: Rng + ?Sized>(
    env: &Environment<'_>,
    tables: &mut QTableSet,
    config: &AgentConfig,
    epsilon: f64,
    index: usize,
    rng: &mut R,
) -> Result<(EpisodeTrace, Vec<Finding>), OasError> {
    let mut sink = Sink {
        findings: Vec::new(),
        seen_success: false,
        read_backs: 0,
    };
    let trace = episode(env, tables, config, epsilon, index, rng, &mut sink)?;
    Ok((trace, sink.findings))
}

/// Trains one agent on one function for `config.episodes` episodes,
/// decaying epsilon after each.
pub fn train_agent(
    env: &Environment<'_>,
    config: &AgentConfig,
    seed: u64,
) -> Result<AgentResult, OasError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = QTableSet::for_datatypes(env.datatypes());
    let mut sink = Sink {
        findings: Vec::new(),
        seen_success: false,
        read_backs: 0,
    };
    let mut traces = Vec::with_capacity(config.episodes);
    let mut epsilon = config.epsilon0;
    for i in 0..config.episodes {
        traces.push(episode(
            env,
            &mut tables,
            config,
            epsilon,
            i,
            &mut rng,
            &mut sink,
        )?);
        epsilon = decay_epsilon(epsilon, config.epsilon_decay, config.epsilon_min);
    }
    Ok(AgentResult {
        scenario: env.scenario.to_string(),
        operation_id: env.function.operation_id.clone(),
        seed,
        tables,
        traces,
        findings: sink.findings,
        read_backs: sink.read_backs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::TransportFailure;
    use crate::identity::IdentifierStore;
    use crate::oas::{HttpMethod, Parameter, SchemaNode};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed(Observation);

    impl Transport for Fixed {
        fn execute(&self, request: &HttpRequest) -> HttpExchange {
            HttpExchange {
                request: request.clone(),
                observation: self.0,
                response_body: String::from("IllegalStateException: stub"),
                latency_ms: 0,
            }
        }
    }

    /// Answers 200 for the first `n` requests, then refuses connections.
    struct DiesAfter(usize, AtomicUsize);

    impl Transport for DiesAfter {
        fn execute(&self, request: &HttpRequest) -> HttpExchange {
            let i = self.1.fetch_add(1, Ordering::SeqCst);
            let observation = if i < self.0 {
                Observation::Status(200)
            } else {
                Observation::Transport(TransportFailure::ConnectionRefused)
            };
            HttpExchange {
                request: request.clone(),
                observation,
                response_body: String::new(),
                latency_ms: 0,
            }
        }
    }

    fn get_by_id() -> ApiFunction {
        ApiFunction {
            operation_id: "getThing".into(),
            method: HttpMethod::Get,
            path_template: "/thing/{thingId}".into(),
            headers: vec![],
            query_parameters: vec![Parameter {
                name: "verbose".into(),
                required: false,
                schema: SchemaNode::leaf(DataType::Boolean),
            }],
            path_parameters: vec![Parameter {
                name: "thingId".into(),
                required: true,
                schema: SchemaNode::leaf(DataType::Integer),
            }],
            body: None,
        }
    }

    fn train(transport: &dyn Transport, config: &AgentConfig) -> AgentResult {
        let f = get_by_id();
        let store = IdentifierStore::new().shared();
        let dict = DictionarySource::builtin();
        let fixed = BTreeMap::new();
        let env = Environment {
            scenario: "t",
            function: &f,
            base_url: "http://stub",
            transport,
            store: &store,
            dictionary: &dict,
            fixed: &fixed,
            read_back: None,
            sample_options: SampleOptions::default(),
        };
        train_agent(&env, config, config.seed).unwrap()
    }

    #[test]
    fn always_500_stops_after_one_step() {
        for max_steps in [1, 5, 10] {
            let cfg = AgentConfig {
                episodes: 20,
                max_steps,
                ..AgentConfig::default()
            };
            let result = train(&Fixed(Observation::Status(500)), &cfg);
            assert!(result.traces.iter().all(|t| t.steps.len() == 1));
            assert_eq!(result.findings.len(), 20);
        }
    }

    #[test]
    fn always_404_runs_full_length() {
        let cfg = AgentConfig {
            episodes: 5,
            max_steps: 10,
            ..AgentConfig::default()
        };
        let result = train(&Fixed(Observation::Status(404)), &cfg);
        for t in &result.traces {
            assert_eq!(t.steps.len(), 10);
            assert_eq!(t.total_reward(), -200);
            assert!(!t.terminated_early);
        }
        assert!(result.findings.is_empty());
    }

    #[test]
    fn zero_episodes_leave_tables_untouched() {
        let cfg = AgentConfig {
            episodes: 0,
            ..AgentConfig::default()
        };
        let result = train(&Fixed(Observation::Status(404)), &cfg);
        assert!(result.traces.is_empty());
        assert!(result.tables.tables().all(|t| t.values().all(|q| q == 0.0)));
        assert_eq!(result.tables.tables().count(), 2);
    }

    #[test]
    fn episodes_start_at_init_and_chain_states() {
        let cfg = AgentConfig {
            episodes: 3,
            max_steps: 4,
            ..AgentConfig::default()
        };
        let result = train(&Fixed(Observation::Status(404)), &cfg);
        for t in &result.traces {
            assert_eq!(t.steps[0].state_before, State::Init);
            for w in t.steps.windows(2) {
                assert_eq!(w[0].state_after, w[1].state_before);
            }
        }
    }

    #[test]
    fn epsilon_decays_once_per_episode() {
        let cfg = AgentConfig {
            episodes: 4,
            max_steps: 1,
            ..AgentConfig::default()
        };
        let result = train(&Fixed(Observation::Status(404)), &cfg);
        let eps: Vec<f64> = result.traces.iter().map(|t| t.epsilon).collect();
        assert_eq!(eps, vec![1.0, 0.99, 0.99 * 0.99, 0.99 * 0.99 * 0.99]);
    }

    #[test]
    fn q_values_stay_bounded() {
        let cfg = AgentConfig {
            episodes: 200,
            ..AgentConfig::default()
        };
        let result = train(&Fixed(Observation::Status(404)), &cfg);
        let bound = 30.0 / (1.0 - cfg.gamma);
        assert!(result
            .tables
            .tables()
            .all(|t| t.values().all(|q| q.is_finite() && q.abs() <= bound)));
    }

    #[test]
    fn transport_after_success_is_a_potential_crash() {
        let cfg = AgentConfig {
            episodes: 1,
            max_steps: 5,
            ..AgentConfig::default()
        };
        let result = train(&DiesAfter(2, AtomicUsize::new(0)), &cfg);
        let states: Vec<State> = result.traces[0]
            .steps
            .iter()
            .map(|s| s.state_after)
            .collect();
        assert_eq!(
            states,
            vec![
                State::S2xx,
                State::S2xx,
                State::Transport,
                State::Transport,
                State::Transport
            ]
        );
        assert_eq!(result.findings.len(), 3);
        assert!(result
            .findings
            .iter()
            .all(|f| f.fingerprint.status_class == State::Transport));
    }

    #[test]
    fn same_seed_same_traces() {
        let cfg = AgentConfig {
            episodes: 10,
            seed: 77,
            ..AgentConfig::default()
        };
        let a = train(&Fixed(Observation::Status(404)), &cfg);
        let b = train(&Fixed(Observation::Status(404)), &cfg);
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn derived_seeds_differ_by_position() {
        let seeds: BTreeSet<u64> = (0..4)
            .flat_map(|s| (0..4).map(move |t| derive_seed(42, s, t)))
            .collect();
        assert_eq!(seeds.len(), 16);
    }
}
