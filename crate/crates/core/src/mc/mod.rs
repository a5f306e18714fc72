//! Event-driven continuous-time Monte Carlo of the finite-volume dynamics.
//!
//! Every vertex carries a rate-one Poisson clock. Clocks are merged into a
//! single stream of rate `|T|`: exponential waits, a uniformly chosen vertex,
//! a constraint check, and on success a Bernoulli(p) resample. Blocked rings
//! are rejected, so the trajectory is exact in distribution.

mod autocorr;
mod pool;
mod profile;

pub use autocorr::{
    autocorrelation, autocorrelation_with, estimate_relaxation_time, AutocorrEstimate, AutocorrMethod, ExpFit,
    FitPolicy, ObservableFit, RelaxationEstimate,
};
pub use pool::{pool_relaxation, PoolLevel, PoolOptions, PoolReport};
pub use profile::{tv_lower_profile, TvProfile, TvProfilePoint, MAX_MARGINAL, REPLICAS_PER_OUTCOME};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_equilibrium_with, Configuration, ModelParams};
use crate::tree::{TreeTopology, VertexId};

const PILOT_REPLICA: u64 = 1 << 32;
// Pilot horizon in units of the current guess.
const PILOT_FACTOR: f64 = 300.0;

/// Hard cap on the number of recorded samples per run.
pub const MAX_SAMPLES: usize = 10_000_000;

/// Independent stream `replica` of the master `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Scalar functions of the configuration recorded along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    /// Size of the occupied cluster of the root.
    #[serde(rename = "N_r")]
    ClusterSize,
    /// Root occupation.
    #[serde(rename = "eta_r")]
    RootSpin,
    /// Fraction of occupied vertices.
    #[serde(rename = "occupied_fraction")]
    OccupiedFraction,
    /// Cumulative time the root constraint has been satisfied since the
    /// start of measurement. Its increments give a conditional estimator of
    /// the root-spin autocorrelation.
    #[serde(rename = "root_clock")]
    RootClock,
}

impl Observable {
    /// The observables whose autocorrelations estimate `T_rel`.
    pub const STANDARD: [Observable; 3] = [
        Observable::ClusterSize,
        Observable::RootSpin,
        Observable::OccupiedFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::ClusterSize => "N_r",
            Observable::RootSpin => "eta_r",
            Observable::OccupiedFraction => "occupied_fraction",
            Observable::RootClock => "root_clock",
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N_r" | "cluster_size" => Ok(Observable::ClusterSize),
            "eta_r" | "root" => Ok(Observable::RootSpin),
            "occupied_fraction" => Ok(Observable::OccupiedFraction),
            "root_clock" => Ok(Observable::RootClock),
            _ => Err(Error::UnknownObservable(s.to_string())),
        }
    }
}

/// How the chain is started.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// An exact sample of the product Bernoulli(p) measure.
    Equilibrium,
    AllOnes,
    Given(Configuration),
}

impl InitialCondition {
    /// Parses `equilibrium`, `all-ones` or a hex configuration for `tree`.
    pub fn parse(s: &str, tree: &TreeTopology) -> Result<Self> {
        match s {
            "equilibrium" => Ok(Self::Equilibrium),
            "all-ones" => Ok(Self::AllOnes),
            hex => Configuration::from_hex(hex, tree.vertex_count()).map(Self::Given),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Equilibrium => "equilibrium".into(),
            Self::AllOnes => "all-ones".into(),
            Self::Given(c) => c.to_hex(),
        }
    }

    pub(crate) fn realize<R: Rng>(&self, tree: &TreeTopology, p: f64, rng: &mut R) -> Result<Configuration> {
        match self {
            Self::Equilibrium => Ok(sample_equilibrium_with(tree, p, rng)),
            Self::AllOnes => Ok(Configuration::full(tree.vertex_count())),
            Self::Given(c) => {
                if c.len() != tree.vertex_count() {
                    return Err(Error::ShapeMismatch {
                        expected: tree.vertex_count(),
                        got: c.len(),
                    });
                }
                Ok(c.clone())
            }
        }
    }
}

/// Parameters of one trajectory.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    /// Length of the measured window, after burn-in.
    pub horizon: f64,
    pub sample_interval: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub replica: u64,
    pub observables: Vec<Observable>,
    pub initial: InitialCondition,
    /// Keep the full event log (for replay checks).
    pub record_events: bool,
}

impl SimulationSpec {
    pub fn new(horizon: f64, sample_interval: f64, seed: u64) -> Self {
        Self {
            horizon,
            sample_interval,
            burn_in: 0.0,
            seed,
            replica: 0,
            observables: Observable::STANDARD.to_vec(),
            initial: InitialCondition::Equilibrium,
            record_events: false,
        }
    }
}

/// Run parameters and counters, persisted next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub k: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub p: f64,
    pub j: usize,
    pub seed: u64,
    pub replica: u64,
    pub initial: String,
    pub burn_in: f64,
    pub horizon: f64,
    pub sample_interval: f64,
    pub events: u64,
    pub accepted: u64,
    pub root_rings: u64,
    pub root_rejections: u64,
}

/// One clock ring; `allowed` is the constraint status at the ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub vertex: usize,
    pub allowed: bool,
    pub value: bool,
}

/// Observables sampled on a regular time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Measurement times, starting at 0 after burn-in.
    pub times: Vec<f64>,
    pub columns: Vec<(Observable, Vec<f64>)>,
    pub metadata: RunMetadata,
    pub initial_state: Configuration,
    pub events: Option<Vec<EventRecord>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, obs: Observable) -> Option<&[f64]> {
        self.columns.iter().find(|(o, _)| *o == obs).map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, obs: Observable) -> Result<&[f64]> {
        self.column(obs)
            .ok_or_else(|| Error::UnknownObservable(format!("{obs} not recorded")))
    }

    pub fn mean(&self, obs: Observable) -> Result<f64> {
        let v = self.require(obs)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Writes `t,<observable>...` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.columns.iter().map(|(o, _)| o.name().to_string()));
        out.write_record(&header).map_err(io)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(self.columns.iter().map(|(_, v)| format!("{}", v[i])));
            out.write_record(&row).map_err(io)?;
        }
        out.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn metadata_json(&self) -> String {
        let mut v = serde_json::to_value(&self.metadata).expect("metadata serializes");
        v["observables"] = self.columns.iter().map(|(o, _)| o.name()).collect::<Vec<_>>().into();
        v["samples"] = self.len().into();
        serde_json::to_string_pretty(&v).expect("metadata serializes")
    }
}

/// Single trajectory of the constrained chain.
pub struct Simulator<'a> {
    tree: &'a TreeTopology,
    p: f64,
    j: usize,
    spins: Vec<bool>,
    occupied: usize,
    time: f64,
    next_event: f64,
    rng: ChaCha8Rng,
    root_free: bool,
    root_clock: f64,
    clock_mark: f64,
    events: u64,
    accepted: u64,
    root_rings: u64,
    root_rejections: u64,
    log: Option<Vec<EventRecord>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        tree: &'a TreeTopology,
        params: ModelParams<f64>,
        initial: &Configuration,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        params.validate(tree)?;
        if initial.len() != tree.vertex_count() {
            return Err(Error::ShapeMismatch {
                expected: tree.vertex_count(),
                got: initial.len(),
            });
        }
        let spins: Vec<bool> = initial.iter().collect();
        let occupied = initial.count_ones();
        let rate = tree.vertex_count() as f64;
        let next_event = rng.sample::<f64, _>(Exp1) / rate;
        let mut sim = Self {
            tree,
            p: params.p,
            j: params.j,
            spins,
            occupied,
            time: 0.0,
            next_event,
            rng,
            root_free: false,
            root_clock: 0.0,
            clock_mark: 0.0,
            events: 0,
            accepted: 0,
            root_rings: 0,
            root_rejections: 0,
            log: None,
        };
        sim.root_free = sim.allowed(0);
        Ok(sim)
    }

    pub fn record_events(&mut self) {
        self.log = Some(Vec::new());
    }

    #[inline]
    fn allowed(&self, x: usize) -> bool {
        let children = self.tree.children(VertexId(x));
        if children.is_empty() {
            return true;
        }
        children.filter(|&c| !self.spins[c]).count() >= self.j
    }

    /// Runs the chain up to time `t` (absolute).
    pub fn advance_to(&mut self, t: f64) {
        let n = self.tree.vertex_count();
        let rate = n as f64;
        let k = self.tree.k();
        while self.next_event <= t {
            let now = self.next_event;
            let x = self.rng.gen_range(0..n);
            let ok = self.allowed(x);
            self.events += 1;
            if x == 0 {
                self.root_rings += 1;
                if !ok {
                    self.root_rejections += 1;
                }
            }
            let mut value = self.spins[x];
            if ok {
                value = self.rng.gen::<f64>() < self.p;
                self.accepted += 1;
                if value != self.spins[x] {
                    self.spins[x] = value;
                    if value {
                        self.occupied += 1;
                    } else {
                        self.occupied -= 1;
                    }
                    if (1..=k).contains(&x) {
                        self.update_root_clock(now);
                    }
                }
            }
            if let Some(log) = self.log.as_mut() {
                log.push(EventRecord {
                    time: now,
                    vertex: x,
                    allowed: ok,
                    value,
                });
            }
            self.next_event = now + self.rng.sample::<f64, _>(Exp1) / rate;
        }
        self.time = t;
    }

    fn update_root_clock(&mut self, now: f64) {
        if self.root_free {
            self.root_clock += now - self.clock_mark;
        }
        self.clock_mark = now;
        self.root_free = self.allowed(0);
    }

    /// Time the root constraint has held since `reset_root_clock`.
    pub fn root_clock(&self) -> f64 {
        let pending = if self.root_free {
            self.time - self.clock_mark
        } else {
            0.0
        };
        self.root_clock + pending
    }

    pub fn reset_root_clock(&mut self) {
        self.root_clock = 0.0;
        self.clock_mark = self.time;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn spin(&self, x: usize) -> bool {
        self.spins[x]
    }

    pub fn state(&self) -> Configuration {
        Configuration::from_bits(&self.spins)
    }

    pub fn observe(&self, obs: Observable) -> f64 {
        match obs {
            Observable::ClusterSize => self.cluster_size() as f64,
            Observable::RootSpin => f64::from(u8::from(self.spins[0])),
            Observable::OccupiedFraction => self.occupied as f64 / self.spins.len() as f64,
            Observable::RootClock => self.root_clock(),
        }
    }

    fn cluster_size(&self) -> usize {
        if !self.spins[0] {
            return 0;
        }
        let mut stack = vec![0usize];
        let mut count = 0;
        while let Some(v) = stack.pop() {
            count += 1;
            stack.extend(self.tree.children(VertexId(v)).filter(|&c| self.spins[c]));
        }
        count
    }

    fn take_log(&mut self) -> Option<Vec<EventRecord>> {
        self.log.take()
    }
}

/// Simulates one trajectory and samples the requested observables every
/// `sample_interval` over `[0, horizon]` after `burn_in`.
pub fn simulate(tree: &TreeTopology, params: ModelParams<f64>, spec: &SimulationSpec) -> Result<TimeSeries> {
    if !(spec.horizon > 0.0) || !(spec.sample_interval > 0.0) || !(spec.burn_in >= 0.0) {
        return Err(Error::InvalidParameter(
            "horizon and sample interval must be positive, burn-in nonnegative".into(),
        ));
    }
    let steps = (spec.horizon / spec.sample_interval).floor();
    if steps + 1.0 > MAX_SAMPLES as f64 {
        return Err(Error::InvalidParameter(format!(
            "{} samples exceed the cap of {MAX_SAMPLES}",
            steps + 1.0
        )));
    }
    let steps = steps as usize;
    let mut rng = replica_rng(spec.seed, spec.replica);
    let initial = spec.initial.realize(tree, params.p, &mut rng)?;
    let mut sim = Simulator::new(tree, params, &initial, rng)?;
    if spec.record_events {
        sim.record_events();
    }
    sim.advance_to(spec.burn_in);
    sim.reset_root_clock();
    let mut times = Vec::with_capacity(steps + 1);
    let mut columns: Vec<(Observable, Vec<f64>)> = spec
        .observables
        .iter()
        .map(|&o| (o, Vec::with_capacity(steps + 1)))
        .collect();
    for i in 0..=steps {
        let t = i as f64 * spec.sample_interval;
        sim.advance_to(spec.burn_in + t);
        times.push(t);
        for (o, v) in columns.iter_mut() {
            v.push(sim.observe(*o));
        }
    }
    let metadata = RunMetadata {
        k: tree.k(),
        depth: tree.depth(),
        p: params.p,
        j: params.j,
        seed: spec.seed,
        replica: spec.replica,
        initial: spec.initial.label(),
        burn_in: spec.burn_in,
        horizon: spec.horizon,
        sample_interval: spec.sample_interval,
        events: sim.events,
        accepted: sim.accepted,
        root_rings: sim.root_rings,
        root_rejections: sim.root_rejections,
    };
    Ok(TimeSeries {
        times,
        columns,
        metadata,
        initial_state: initial,
        events: sim.take_log(),
    })
}

/// State at time `t` of replica `replica`, started from `initial`.
pub fn simulate_endpoint(
    tree: &TreeTopology,
    params: ModelParams<f64>,
    initial: &InitialCondition,
    t: f64,
    seed: u64,
    replica: u64,
) -> Result<Configuration> {
    let mut rng = replica_rng(seed, replica);
    let start = initial.realize(tree, params.p, &mut rng)?;
    let mut sim = Simulator::new(tree, params, &start, rng)?;
    sim.advance_to(t);
    Ok(sim.state())
}

/// Replays an event log, checking that a ring changed the spin only when the
/// constraint held and that the recorded constraint status is correct.
pub fn replay_events(
    tree: &TreeTopology,
    params: &ModelParams<f64>,
    initial: &Configuration,
    events: &[EventRecord],
) -> Result<Configuration> {
    let mut state = initial.clone();
    let mut last = 0.0;
    for (i, e) in events.iter().enumerate() {
        if e.time < last {
            return Err(Error::Equilibration(format!("event {i} out of time order")));
        }
        last = e.time;
        let ok = crate::model::constraint(tree, &state, VertexId(e.vertex), params)?;
        if ok != e.allowed {
            return Err(Error::Equilibration(format!("event {i}: constraint status mismatch")));
        }
        if !ok && e.value != state.get(e.vertex) {
            return Err(Error::Equilibration(format!("event {i}: blocked vertex changed")));
        }
        state.set(e.vertex, e.value);
    }
    Ok(state)
}

/// Budget for a self-tuning relaxation-time estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McBudget {
    /// Measured horizon in units of the current `T_rel` guess.
    pub horizon_factor: f64,
    /// Burn-in in units of the current guess.
    pub burn_in_factor: f64,
    /// Samples per unit of the current guess.
    pub samples_per_t_rel: f64,
    /// Horizon of the pilot run that produces the first guess.
    pub pilot_horizon: f64,
    /// Hard cap on simulated events across all runs of one estimate.
    pub max_events: f64,
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            horizon_factor: 4000.0,
            burn_in_factor: 20.0,
            samples_per_t_rel: 20.0,
            pilot_horizon: 100.0,
            max_events: 4e9,
        }
    }
}

/// A Monte Carlo relaxation-time estimate with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub t_rel: f64,
    pub stderr: f64,
    pub observable: Observable,
    pub window: (f64, f64),
    pub horizon: f64,
    pub burn_in: f64,
    pub sample_interval: f64,
    pub runs: usize,
    pub events: u64,
    pub per_observable: Vec<ObservableFit>,
}

/// Estimates `T_rel` on `tree` by simulation from equilibrium. Short pilot
/// runs refine the time scale (starting from `hint` when given) until the
/// estimate agrees with the scale it was measured at; the main run is then
/// repeated once if its estimate invalidates the burn-in or sampling choice.
pub fn relaxation_time_mc(
    tree: &TreeTopology,
    params: ModelParams<f64>,
    budget: &McBudget,
    seed: u64,
    hint: Option<f64>,
) -> Result<McEstimate> {
    let policy = FitPolicy::default();
    let obs: Vec<Observable> = Observable::STANDARD
        .iter()
        .copied()
        .chain([Observable::RootClock])
        .collect();
    let n = tree.vertex_count() as f64;
    let mut events = 0u64;
    let mut runs = 0usize;
    let mut run =
        |guess: f64, horizon: f64, burn_in: f64, replica: u64, set: &[Observable]| -> Result<RelaxationEstimate> {
            if (events as f64) + n * (horizon + burn_in) > budget.max_events {
                return Err(Error::InvalidParameter(format!(
                    "event budget {:.1e} exhausted at T_rel scale {guess:.3e} on {n} vertices",
                    budget.max_events
                )));
            }
            let mut spec = SimulationSpec::new(horizon, guess / budget.samples_per_t_rel, seed);
            spec.replica = replica;
            spec.burn_in = burn_in;
            spec.observables = obs.clone();
            let series = simulate(tree, params, &spec)?;
            events += series.metadata.events;
            runs += 1;
            estimate_relaxation_time(&series, set, &policy)
        };
    let agrees = |est: f64, guess: f64| est <= 2.0 * guess && est >= 0.5 * guess;
    let mut guess = hint.filter(|h| *h > 0.0).unwrap_or(1.0);
    let mut pilots = 0u64;
    loop {
        let horizon = budget.pilot_horizon.max(PILOT_FACTOR * guess);
        // The conditional root estimator is the least noisy; pilots use it alone.
        match run(
            guess,
            horizon,
            budget.burn_in_factor * guess,
            PILOT_REPLICA + pilots,
            &[Observable::RootSpin],
        ) {
            Ok(est) if agrees(est.t_rel, guess) => {
                guess = est.t_rel;
                break;
            }
            Ok(est) => guess = est.t_rel,
            Err(Error::Fit(_)) | Err(Error::SeriesTooShort(_)) => guess *= 8.0,
            Err(e) => return Err(e),
        }
        pilots += 1;
    }
    for attempt in 0..2u64 {
        let burn_in = budget.burn_in_factor * guess;
        let horizon = budget.horizon_factor * guess;
        let est = run(guess, horizon, burn_in, attempt, &Observable::STANDARD)?;
        // Burn-in >= 10 T_rel and a lag range covering several T_rel.
        if agrees(est.t_rel, guess) || attempt == 1 {
            return Ok(McEstimate {
                t_rel: est.t_rel,
                stderr: est.stderr,
                observable: est.observable,
                window: est.window,
                horizon,
                burn_in,
                sample_interval: guess / budget.samples_per_t_rel,
                runs,
                events,
                per_observable: est.per_observable,
            });
        }
        guess = est.t_rel;
    }
    unreachable!("the second attempt always returns")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(k: usize, l: usize) -> TreeTopology {
        TreeTopology::new(k, l).unwrap()
    }

    #[test]
    fn observable_names_round_trip() {
        for o in Observable::STANDARD.iter().chain([&Observable::RootClock]) {
            assert_eq!(o.name().parse::<Observable>().unwrap(), *o);
        }
        assert!(matches!(
            "magnetization".parse::<Observable>(),
            Err(Error::UnknownObservable(_))
        ));
    }

    #[test]
    fn rejects_bad_spec() {
        let t = tree(2, 1);
        let mut spec = SimulationSpec::new(0.0, 1.0, 0);
        assert!(simulate(&t, ModelParams::ofa(0.5, 2), &spec).is_err());
        spec.horizon = 1.0;
        spec.sample_interval = -1.0;
        assert!(simulate(&t, ModelParams::ofa(0.5, 2), &spec).is_err());
    }

    #[test]
    fn times_are_a_regular_grid() {
        let t = tree(2, 2);
        let s = simulate(&t, ModelParams::ofa(0.5, 2), &SimulationSpec::new(10.0, 0.5, 3)).unwrap();
        assert_eq!(s.len(), 21);
        assert!(s.times.windows(2).all(|w| w[1] > w[0]));
        for (_, v) in &s.columns {
            assert_eq!(v.len(), s.len());
        }
    }

    #[test]
    fn free_spin_occupancy() {
        let t = tree(2, 0);
        let spec = SimulationSpec::new(1e5, 1.0, 11);
        let s = simulate(&t, ModelParams::ofa(0.5, 2), &spec).unwrap();
        let m = s.mean(Observable::RootSpin).unwrap();
        // Samples one time unit apart have correlation e^{-1}.
        let r = (-1.0f64).exp();
        let se = (0.25 / s.len() as f64 * (1.0 + r) / (1.0 - r)).sqrt();
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m}, se {se}");
        assert_eq!(s.metadata.root_rejections, 0);
    }

    #[test]
    fn seed_determinism() {
        let t = tree(2, 3);
        let spec = SimulationSpec::new(200.0, 0.5, 99);
        let a = simulate(&t, ModelParams::ofa(0.5, 2), &spec).unwrap();
        let b = simulate(&t, ModelParams::ofa(0.5, 2), &spec).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.metadata_json(), b.metadata_json());
        let mut other = spec.clone();
        other.replica = 1;
        assert_ne!(
            simulate(&t, ModelParams::ofa(0.5, 2), &other).unwrap().columns,
            a.columns
        );
    }

    #[test]
    fn replay_accepts_recorded_trajectory() {
        let t = tree(3, 2);
        let params = ModelParams { p: 0.7, j: 2 };
        let mut spec = SimulationSpec::new(50.0, 1.0, 5);
        spec.record_events = true;
        spec.initial = InitialCondition::AllOnes;
        let s = simulate(&t, params, &spec).unwrap();
        let events = s.events.as_ref().unwrap();
        assert_eq!(events.len() as u64, s.metadata.events);
        let last = replay_events(&t, &params, &s.initial_state, events).unwrap();
        let mut sim = Simulator::new(&t, params, &s.initial_state, replica_rng(5, 0)).unwrap();
        // Same stream, minus the draws the initial condition would have used (none for all-ones).
        sim.advance_to(50.0);
        assert_eq!(sim.state(), last);

        let mut forged = events.clone();
        let blocked = forged.iter().position(|e| !e.allowed).expect("some ring is blocked");
        forged[blocked].value = !forged[blocked].value;
        assert!(replay_events(&t, &params, &s.initial_state, &forged).is_err());
    }

    #[test]
    fn given_initial_condition_must_fit() {
        let t = tree(2, 2);
        let mut spec = SimulationSpec::new(1.0, 0.5, 0);
        spec.initial = InitialCondition::Given(Configuration::full(3));
        assert!(matches!(
            simulate(&t, ModelParams::ofa(0.5, 2), &spec),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(
            InitialCondition::parse("7f", &t).unwrap(),
            InitialCondition::Given(Configuration::full(7))
        );
        assert_eq!(
            InitialCondition::parse("all-ones", &t).unwrap(),
            InitialCondition::AllOnes
        );
    }

    #[test]
    fn root_clock_matches_constraint_time() {
        // L = 0: the root is always free, so the clock is the elapsed time.
        let t = tree(2, 0);
        let mut spec = SimulationSpec::new(10.0, 2.5, 0);
        spec.observables = vec![Observable::RootClock];
        let s = simulate(&t, ModelParams::ofa(0.5, 2), &spec).unwrap();
        assert_eq!(s.column(Observable::RootClock).unwrap(), &[0.0, 2.5, 5.0, 7.5, 10.0]);
    }
}
