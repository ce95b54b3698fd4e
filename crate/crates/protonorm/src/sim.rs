//! Federation orchestrator: the round loop with client sampling, local
//! updates under the prototype-regularized loss, server-side prototype
//! aggregation (plus alignment and upscaling in protonorm mode), and
//! per-round nearest-prototype evaluation.

use rand::seq::SliceRandom;

use crate::align::{align, random_unit_vector, AlignerConfig, AlignerTrace};
use crate::data::{
    generate_spiral, partition, split_train_test, PartitionMode, PartitionPlan, SplitWarning,
};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{
    forward, loss_and_grads, sgd_step, Batch, NetworkSpec, Parameters,
};
use crate::proto::{
    aggregate_simple, aggregate_weighted, classify_nearest, local_prototypes, margins, upscale,
    Prototype, PrototypeSet, WeightedForm,
};
use crate::rng::{substream, substream_seed, Stream};

/// Federation algorithm variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Simple aggregation, then hyperspherical alignment and upscaling.
    ProtoNorm,
    /// Sample-count-weighted aggregation; no alignment, no upscaling.
    FedProto,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ProtoNorm => "protonorm",
            Mode::FedProto => "fedproto",
        }
    }
}

/// Partition regime selector (parameters live in `FederationConfig`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Iid,
    Dirichlet,
    Pathological,
}

impl PartitionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionKind::Iid => "iid",
            PartitionKind::Dirichlet => "dirichlet",
            PartitionKind::Pathological => "pathological",
        }
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub mode: Mode,
    pub num_clients: usize,
    pub rounds: usize,
    /// Fraction of clients sampled per round, in (0, 1].
    pub participation_fraction: f64,
    /// Weight of the prototype-distance term in the client loss.
    pub lambda: f64,
    /// Upscaling factor applied to aligned global prototypes.
    pub gamma: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub train_fraction: f64,
    pub master_seed: u64,
    pub weighted_form: WeightedForm,
    /// Restrict round means to that round's participants.
    pub report_participants_only: bool,
    /// Keep a per-round copy of the global prototypes in the result.
    pub dump_prototypes: bool,
    pub points_per_class: usize,
    pub num_classes: usize,
    pub partition_kind: PartitionKind,
    /// Dirichlet concentration (dirichlet mode).
    pub alpha: f64,
    /// Classes held per client (pathological mode).
    pub classes_per_client: usize,
    pub network: NetworkSpec,
    pub aligner: AlignerConfig,
}

impl Default for FederationConfig {
    /// The desk-scale spiral recipe.
    fn default() -> Self {
        FederationConfig {
            mode: Mode::ProtoNorm,
            num_clients: 10,
            rounds: 200,
            participation_fraction: 1.0,
            lambda: 1.0,
            gamma: 10.0,
            local_epochs: 1,
            batch_size: 32,
            client_lr: 0.01,
            train_fraction: 0.75,
            master_seed: 42,
            weighted_form: WeightedForm::Literal,
            report_participants_only: false,
            dump_prototypes: false,
            points_per_class: 5000,
            num_classes: 6,
            partition_kind: PartitionKind::Dirichlet,
            alpha: 0.1,
            classes_per_client: 2,
            network: NetworkSpec::default(),
            aligner: AlignerConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("clients must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::Config(
                "participation_fraction must be in (0, 1]".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.client_lr <= 0.0 {
            return Err(Error::Config("client_lr must be > 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("dataset.num_classes must be >= 2".into()));
        }
        if self.points_per_class < 2 {
            return Err(Error::Config("dataset.points_per_class must be >= 2".into()));
        }
        if self.partition_kind == PartitionKind::Dirichlet && self.alpha <= 0.0 {
            return Err(Error::Config("partition.alpha must be > 0".into()));
        }
        if self.partition_kind == PartitionKind::Pathological
            && !(1..=self.num_classes).contains(&self.classes_per_client)
        {
            return Err(Error::Config(
                "partition.classes_per_client must be in 1..=num_classes".into(),
            ));
        }
        self.network.validate()?;
        if self.network.num_classes() != self.num_classes {
            return Err(Error::Config(format!(
                "network output width {} != dataset.num_classes {}",
                self.network.num_classes(),
                self.num_classes
            )));
        }
        if self.network.input_dim() != 2 {
            return Err(Error::Config(
                "network input width must be 2 for the spiral dataset".into(),
            ));
        }
        self.aligner.validate()
    }

    pub fn partition_mode(&self) -> PartitionMode {
        match self.partition_kind {
            PartitionKind::Iid => PartitionMode::Iid,
            PartitionKind::Dirichlet => PartitionMode::Dirichlet { alpha: self.alpha },
            PartitionKind::Pathological => PartitionMode::Pathological {
                classes_per_client: self.classes_per_client,
            },
        }
    }
}

/// A client's materialized data shard.
#[derive(Debug, Clone)]
pub struct Shard {
    pub features: Mat,
    pub labels: Vec<usize>,
}

impl Shard {
    fn gather(features: &Mat, labels: &[usize], indices: &[usize]) -> Shard {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| features.row(i).to_vec()).collect();
        Shard {
            features: Mat::from_rows(&rows),
            labels: indices.iter().map(|&i| labels[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn as_batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// One client's private data, model, and latest local prototypes.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub train: Shard,
    pub test: Shard,
    pub params: Parameters,
    pub latest_prototypes: PrototypeSet,
    pub last_train_loss: f64,
    pub best_accuracy: f64,
}

/// Server-side state across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub globals: PrototypeSet,
    pub align_invocations: usize,
}

/// One client's row in a round report.
#[derive(Debug, Clone, Copy)]
pub struct ClientRound {
    pub client_id: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub best_accuracy: f64,
}

/// Per-round metrics.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub per_client: Vec<ClientRound>,
    pub mean_accuracy: f64,
    pub mean_best_accuracy: f64,
    pub pa_iterations: usize,
    pub min_margin: f64,
    pub mean_margin: f64,
}

/// Side artifacts of one round.
#[derive(Debug, Clone)]
pub struct RoundArtifacts {
    pub trace: Option<AlignerTrace>,
    /// (class id, normalized margin) of the round's global prototypes.
    pub margins: Vec<(usize, f64)>,
    pub globals: Option<PrototypeSet>,
}

/// Everything produced by a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub reports: Vec<RoundReport>,
    pub round_margins: Vec<Vec<(usize, f64)>>,
    /// Alignment traces in round order (protonorm runs only).
    pub pa_traces: Vec<AlignerTrace>,
    /// Per-round global prototypes when dumping is enabled.
    pub prototype_dumps: Vec<PrototypeSet>,
    pub plan: PartitionPlan,
    pub split_warnings: Vec<SplitWarning>,
    pub align_invocations: usize,
    pub final_mean_best_accuracy: f64,
}

fn with_client_context(err: Error, round: usize, client: usize) -> Error {
    match err {
        Error::Numeric(msg) => {
            Error::Numeric(format!("round {round}, client {client}: {msg}"))
        }
        other => other,
    }
}

/// Run one client's local epochs and recompute its prototypes on the
/// full train shard. Returns the sample-weighted mean batch loss.
pub fn local_update(
    state: &mut ClientState,
    targets: Option<&PrototypeSet>,
    config: &FederationConfig,
    round: usize,
) -> Result<(f64, PrototypeSet)> {
    let mut rng = substream(
        config.master_seed,
        Stream::BatchShuffle,
        &[state.id as u64, round as u64],
    );
    let n = state.train.len();
    let mut loss_sum = 0.0;
    let mut samples = 0usize;
    for _ in 0..config.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                features: Mat::from_rows(
                    &chunk
                        .iter()
                        .map(|&i| state.train.features.row(i).to_vec())
                        .collect::<Vec<_>>(),
                ),
                labels: chunk.iter().map(|&i| state.train.labels[i]).collect(),
            };
            let (loss, grads) =
                loss_and_grads(&state.params, &config.network, &batch, targets, config.lambda)
                    .map_err(|e| with_client_context(e, round, state.id))?;
            sgd_step(&mut state.params, &grads, config.client_lr);
            loss_sum += loss.total * chunk.len() as f64;
            samples += chunk.len();
        }
    }
    let train_loss = if samples > 0 {
        loss_sum / samples as f64
    } else {
        0.0
    };

    let (features, _) = forward(&state.params, &config.network, &state.train.as_batch())
        .map_err(|e| with_client_context(e, round, state.id))?;
    let protos = local_prototypes(&features, &state.train.labels, config.num_classes);
    state.latest_prototypes = protos.clone();
    state.last_train_loss = train_loss;
    Ok((train_loss, protos))
}

/// Nearest-prototype accuracy of a client on its own test shard.
pub fn evaluate_client(state: &ClientState, network: &NetworkSpec) -> Result<f64> {
    if state.test.is_empty() || state.latest_prototypes.is_empty() {
        return Ok(0.0);
    }
    let (features, _) = forward(&state.params, network, &state.test.as_batch())?;
    let mut correct = 0usize;
    for (i, &label) in state.test.labels.iter().enumerate() {
        if classify_nearest(features.row(i), &state.latest_prototypes) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / state.test.len() as f64)
}

fn merge_retaining(previous: &PrototypeSet, fresh: &PrototypeSet) -> PrototypeSet {
    let mut merged = previous.clone();
    for p in fresh.iter() {
        merged.insert(p.clone());
    }
    merged
}

/// Execute one communication round.
pub fn run_round(
    clients: &mut [ClientState],
    server: &mut ServerState,
    config: &FederationConfig,
    round: usize,
) -> Result<(RoundReport, RoundArtifacts)> {
    let m = clients.len();
    let count = ((config.participation_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut participants: Vec<usize> = if count == m {
        (0..m).collect()
    } else {
        let mut rng = substream(config.master_seed, Stream::ClientSample, &[round as u64]);
        let mut pool: Vec<usize> = (0..m).collect();
        pool.partial_shuffle(&mut rng, count);
        let mut chosen = pool[..count].to_vec();
        chosen.sort_unstable();
        chosen
    };
    participants.sort_unstable();

    let targets = match config.mode {
        Mode::ProtoNorm => upscale(&server.globals, config.gamma),
        Mode::FedProto => server.globals.clone(),
    };

    let mut locals = Vec::with_capacity(participants.len());
    for &idx in &participants {
        let (_, protos) = local_update(&mut clients[idx], Some(&targets), config, round)?;
        locals.push(protos);
    }

    let aggregated = match config.mode {
        Mode::ProtoNorm => aggregate_simple(&locals)?,
        Mode::FedProto => aggregate_weighted(&locals, config.weighted_form)?,
    };

    let mut trace = None;
    let fresh = match config.mode {
        Mode::ProtoNorm => {
            let seed = substream_seed(config.master_seed, Stream::Align, &[round as u64]);
            let (aligned, t) = align(&aggregated, &config.aligner, seed);
            server.align_invocations += 1;
            trace = Some(t);
            aligned
        }
        Mode::FedProto => aggregated,
    };
    server.globals = merge_retaining(&server.globals, &fresh);

    let margin_rows = margins(&server.globals)?;
    let min_margin = margin_rows.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let mean_margin =
        margin_rows.iter().map(|&(_, v)| v).sum::<f64>() / margin_rows.len() as f64;

    let mut per_client = Vec::with_capacity(m);
    for state in clients.iter_mut() {
        let accuracy = evaluate_client(state, &config.network)?;
        state.best_accuracy = state.best_accuracy.max(accuracy);
        per_client.push(ClientRound {
            client_id: state.id,
            train_loss: state.last_train_loss,
            test_accuracy: accuracy,
            best_accuracy: state.best_accuracy,
        });
    }

    let included: Vec<&ClientRound> = if config.report_participants_only {
        per_client
            .iter()
            .filter(|c| participants.binary_search(&c.client_id).is_ok())
            .collect()
    } else {
        per_client.iter().collect()
    };
    let mean_accuracy =
        included.iter().map(|c| c.test_accuracy).sum::<f64>() / included.len() as f64;
    let mean_best_accuracy =
        included.iter().map(|c| c.best_accuracy).sum::<f64>() / included.len() as f64;

    let pa_iterations = trace.as_ref().map_or(0, |t| t.iterations_run());
    let report = RoundReport {
        round,
        per_client,
        mean_accuracy,
        mean_best_accuracy,
        pa_iterations,
        min_margin,
        mean_margin,
    };
    let artifacts = RoundArtifacts {
        trace,
        margins: margin_rows,
        globals: config.dump_prototypes.then(|| server.globals.clone()),
    };
    Ok((report, artifacts))
}

/// Seeded random unit global prototypes for every class.
pub fn init_global_prototypes(config: &FederationConfig) -> PrototypeSet {
    let mut rng = substream(config.master_seed, Stream::GlobalInit, &[]);
    let dim = config.network.feature_dim();
    let mut set = PrototypeSet::new(dim, config.num_classes);
    for class_id in 0..config.num_classes {
        set.insert(Prototype {
            class_id,
            vec: random_unit_vector(dim, &mut rng),
            support: 0,
        });
    }
    set
}

/// Build the client states: generate the spiral dataset, partition it,
/// split each shard, initialize per-client parameters, and compute the
/// initial local prototypes.
pub fn setup_clients(
    config: &FederationConfig,
) -> Result<(Vec<ClientState>, PartitionPlan, Vec<SplitWarning>)> {
    let dataset = generate_spiral(
        config.points_per_class,
        config.num_classes,
        config.master_seed,
    )?;
    let plan = partition(
        &dataset,
        config.num_clients,
        config.partition_mode(),
        config.master_seed,
    )?;
    let splits = split_train_test(&plan, &dataset, config.train_fraction, config.master_seed)?;

    let mut clients = Vec::with_capacity(config.num_clients);
    for (id, split) in splits.per_client.iter().enumerate() {
        let train = Shard::gather(&dataset.features, &dataset.labels, &split.train);
        let test = Shard::gather(&dataset.features, &dataset.labels, &split.test);
        let mut rng = substream(config.master_seed, Stream::WeightInit, &[id as u64]);
        let params = Parameters::init(&config.network, &mut rng);
        let (features, _) = forward(&params, &config.network, &train.as_batch())?;
        let latest_prototypes = local_prototypes(&features, &train.labels, config.num_classes);
        clients.push(ClientState {
            id,
            train,
            test,
            params,
            latest_prototypes,
            last_train_loss: f64::NAN,
            best_accuracy: 0.0,
        });
    }
    Ok((clients, plan, splits.warnings))
}

/// Run the full experiment described by `config`.
pub fn run_experiment(config: &FederationConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let (mut clients, plan, split_warnings) = setup_clients(config)?;
    let mut server = ServerState {
        globals: init_global_prototypes(config),
        align_invocations: 0,
    };

    let mut reports = Vec::with_capacity(config.rounds);
    let mut round_margins = Vec::with_capacity(config.rounds);
    let mut pa_traces = Vec::new();
    let mut prototype_dumps = Vec::new();
    for round in 0..config.rounds {
        let (report, artifacts) = run_round(&mut clients, &mut server, config, round)?;
        reports.push(report);
        round_margins.push(artifacts.margins);
        if let Some(trace) = artifacts.trace {
            pa_traces.push(trace);
        }
        if let Some(globals) = artifacts.globals {
            prototype_dumps.push(globals);
        }
    }

    let final_mean_best_accuracy = reports.last().map_or(0.0, |r| r.mean_best_accuracy);
    Ok(ExperimentResult {
        reports,
        round_margins,
        pa_traces,
        prototype_dumps,
        plan,
        split_warnings,
        align_invocations: server.align_invocations,
        final_mean_best_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config(mode: Mode) -> FederationConfig {
        FederationConfig {
            mode,
            num_clients: 3,
            rounds: 3,
            points_per_class: 60,
            num_classes: 3,
            network: NetworkSpec::new(vec![2, 8, 2, 3], crate::nn::Activation::Identity),
            partition_kind: PartitionKind::Iid,
            master_seed: 5,
            ..FederationConfig::default()
        }
    }

    #[test]
    fn degenerate_zero_epochs_keeps_parameters_and_prototypes() {
        let mut config = tiny_config(Mode::ProtoNorm);
        config.local_epochs = 0;
        config.lambda = 0.0;
        let (mut clients, _, _) = setup_clients(&config).unwrap();
        let before_params = clients[0].params.clone();
        let before_protos = clients[0].latest_prototypes.clone();
        let (loss, protos) = local_update(&mut clients[0], None, &config, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(clients[0].params, before_params);
        assert_eq!(protos, before_protos);
    }

    #[test]
    fn local_update_is_deterministic() {
        let config = tiny_config(Mode::ProtoNorm);
        let (mut a, _, _) = setup_clients(&config).unwrap();
        let (mut b, _, _) = setup_clients(&config).unwrap();
        let targets = init_global_prototypes(&config);
        let (la, pa) = local_update(&mut a[1], Some(&targets), &config, 4).unwrap();
        let (lb, pb) = local_update(&mut b[1], Some(&targets), &config, 4).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(pa, pb);
        assert_eq!(a[1].params, b[1].params);
    }

    #[test]
    fn regularizer_vanishes_when_targets_equal_prototypes() {
        // one sample per class: each feature is exactly its class prototype
        let config = FederationConfig {
            local_epochs: 1,
            batch_size: 8,
            lambda: 1e6,
            ..tiny_config(Mode::ProtoNorm)
        };
        let (clients, _, _) = setup_clients(&config).unwrap();
        let state = &clients[0];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..config.num_classes {
            if let Some(i) = state.train.labels.iter().position(|&y| y == class) {
                rows.push(state.train.features.row(i).to_vec());
                labels.push(class);
            }
        }
        let batch = Batch {
            features: Mat::from_rows(&rows),
            labels: labels.clone(),
        };
        let (features, _) = forward(&state.params, &config.network, &batch).unwrap();
        let targets = local_prototypes(&features, &labels, config.num_classes);
        let (loss, _) =
            loss_and_grads(&state.params, &config.network, &batch, Some(&targets), 1e6).unwrap();
        assert_eq!(loss.regularizer, 0.0);
    }

    #[test]
    fn full_participation_selects_every_client() {
        let config = tiny_config(Mode::ProtoNorm);
        let (mut clients, _, _) = setup_clients(&config).unwrap();
        let mut server = ServerState {
            globals: init_global_prototypes(&config),
            align_invocations: 0,
        };
        let (report, _) = run_round(&mut clients, &mut server, &config, 0).unwrap();
        assert_eq!(report.per_client.len(), 3);
        assert!(report
            .per_client
            .iter()
            .all(|c| !c.train_loss.is_nan()));
    }

    #[test]
    fn initial_globals_are_unit_norm() {
        let config = tiny_config(Mode::ProtoNorm);
        let globals = init_global_prototypes(&config);
        assert_eq!(globals.len(), config.num_classes);
        for p in globals.iter() {
            assert!((crate::linalg::norm(&p.vec) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn protonorm_globals_stay_unit_norm_every_round() {
        let config = tiny_config(Mode::ProtoNorm);
        let (mut clients, _, _) = setup_clients(&config).unwrap();
        let mut server = ServerState {
            globals: init_global_prototypes(&config),
            align_invocations: 0,
        };
        for round in 0..3 {
            run_round(&mut clients, &mut server, &config, round).unwrap();
            for p in server.globals.iter() {
                assert!((crate::linalg::norm(&p.vec) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fedproto_never_aligns_and_matches_weighted_aggregation() {
        let config = tiny_config(Mode::FedProto);
        let (mut clients, _, _) = setup_clients(&config).unwrap();
        let mut server = ServerState {
            globals: init_global_prototypes(&config),
            align_invocations: 0,
        };
        let (report, artifacts) = run_round(&mut clients, &mut server, &config, 0).unwrap();
        assert_eq!(report.pa_iterations, 0);
        assert!(artifacts.trace.is_none());
        assert_eq!(server.align_invocations, 0);
        // server globals must equal the weighted aggregate of the
        // clients' freshly returned local prototypes
        let locals: Vec<PrototypeSet> = clients
            .iter()
            .map(|c| c.latest_prototypes.clone())
            .collect();
        let expected = aggregate_weighted(&locals, config.weighted_form).unwrap();
        for class in 0..config.num_classes {
            if let Some(e) = expected.get(class) {
                let got = server.globals.get(class).unwrap();
                assert_eq!(e.vec, got.vec);
            }
        }
    }

    #[test]
    fn absent_classes_retain_previous_global_bit_exactly() {
        // pathological split with one class per client and one
        // participant per round: two classes are absent every round
        let config = FederationConfig {
            partition_kind: PartitionKind::Pathological,
            classes_per_client: 1,
            participation_fraction: 0.3,
            ..tiny_config(Mode::ProtoNorm)
        };
        let (mut clients, _, _) = setup_clients(&config).unwrap();
        let mut server = ServerState {
            globals: init_global_prototypes(&config),
            align_invocations: 0,
        };
        let before = server.globals.clone();
        run_round(&mut clients, &mut server, &config, 0).unwrap();
        // exactly one client participated and it holds exactly one class
        let touched: Vec<usize> = (0..config.num_classes)
            .filter(|&c| {
                server.globals.get(c).unwrap().vec != before.get(c).unwrap().vec
            })
            .collect();
        assert_eq!(touched.len(), 1, "exactly one class should move");
        for c in 0..config.num_classes {
            if !touched.contains(&c) {
                let a = &before.get(c).unwrap().vec;
                let b = &server.globals.get(c).unwrap().vec;
                assert_eq!(a, b, "class {c} should be retained bit-exactly");
            }
        }
    }

    #[test]
    fn experiment_is_deterministic_and_best_accuracy_monotone() {
        let config = tiny_config(Mode::ProtoNorm);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.reports.len(), 3);
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.mean_accuracy.to_bits(), rb.mean_accuracy.to_bits());
            assert_eq!(
                ra.mean_best_accuracy.to_bits(),
                rb.mean_best_accuracy.to_bits()
            );
        }
        // per-client best accuracy never decreases
        for client in 0..config.num_clients {
            let mut prev = 0.0;
            for report in &a.reports {
                let best = report.per_client[client].best_accuracy;
                assert!(best >= prev);
                prev = best;
            }
        }
    }

    #[test]
    fn margins_are_normalized_per_round() {
        let config = tiny_config(Mode::FedProto);
        let result = run_experiment(&config).unwrap();
        for margins in &result.round_margins {
            let max = margins.iter().map(|&(_, m)| m).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max, 1.0);
        }
    }

    #[test]
    fn mean_accuracy_matches_manual_mean() {
        let config = tiny_config(Mode::ProtoNorm);
        let result = run_experiment(&config).unwrap();
        let last = result.reports.last().unwrap();
        let manual =
            last.per_client.iter().map(|c| c.test_accuracy).sum::<f64>() / 3.0;
        assert_relative_eq!(last.mean_accuracy, manual, max_relative = 1e-15);
    }
}
