//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, I/O or
//! checkpoint error, 3 numerical failure (including a failed gradient check).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    build_triplets, generate_synthetic, load_corpus_dir, load_triplets, save_corpus_dir,
    save_triplets, FeatureStore, FrameLayout, PairingStrategy, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{build_catalog, compare_arms, compare_methods, evaluate, Arm, Protocol};
use crate::model::{
    rank_items_for_item, rank_items_for_user, triplet_loss, triplet_loss_and_grads, twonet_loss,
    twonet_loss_and_grads, BatchMasks, Mode, ModelKind, PairBatch, TowerSpec, TripletBatch,
    TripletModel,
};
use crate::numerics::{grad_check, GradCheckReport, HasParams, Matrix, RngState};
use crate::train::{load_checkpoint, save_checkpoint, train_with, Checkpoint, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "triplet-rank",
    version,
    about = "Triplet-network music recommender"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic corpus (users.csv, items.csv).
    Synth(SynthArgs),
    /// Build training triplets from a corpus.
    BuildPairs(BuildPairsArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Rank items for a user or for a query item.
    Retrieve(RetrieveArgs),
    /// Multi-seed comparison on held-out users and items.
    Compare(CompareArgs),
    /// Check analytic gradients against finite differences on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub tags: usize,
    #[arg(long, default_value_t = 40)]
    pub items_per_tag: usize,
    #[arg(long, default_value_t = 20)]
    pub users_per_tag: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub sharpness: f64,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    #[arg(long, default_value_t = 378)]
    pub frame_dim: usize,
    /// Length of user topic vectors (defaults to max(7, tags)).
    #[arg(long)]
    pub topic_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Unbalanced,
    Balanced,
    OneToN,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Unbalanced)]
    pub strategy: StrategyArg,
    /// Negatives per positive; only valid with `--strategy one-to-n`.
    #[arg(long)]
    pub n: Option<usize>,
}

impl StrategyArgs {
    fn resolve(&self) -> Result<PairingStrategy> {
        match (self.strategy, self.n) {
            (StrategyArg::OneToN, n) => Ok(PairingStrategy::OneToN(n.unwrap_or(10))),
            (s, Some(_)) => Err(Error::Config(format!(
                "--n only applies to --strategy one-to-n, not {}",
                s.to_possible_value()
                    .map(|v| v.get_name().to_string())
                    .unwrap_or_default()
            ))),
            (StrategyArg::Unbalanced, None) => Ok(PairingStrategy::Unbalanced),
            (StrategyArg::Balanced, None) => Ok(PairingStrategy::Balanced),
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildPairsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Triplet,
    Twonet,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Triplet => ModelKind::Triplet,
            ModelArg::Twonet => ModelKind::Twonet,
        }
    }
}

/// Hyperparameters shared by `train` and `compare`.
#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Item tower hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub item_hidden: Option<Vec<usize>>,
    /// User tower hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub user_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub latent: Option<usize>,
    /// Disable layer normalization in both towers.
    #[arg(long)]
    pub no_norm: bool,
}

impl HyperArgs {
    fn config(&self, store: &FeatureStore, kind: ModelKind, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::defaults(store.user_dim(), store.item_dim());
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch;
        cfg.dropout_p = self.dropout;
        cfg.learning_rate = self.lr;
        cfg.seed = seed;
        cfg.model_kind = kind;
        for (spec, hidden) in [
            (&mut cfg.user_tower, &self.user_hidden),
            (&mut cfg.item_tower, &self.item_hidden),
        ] {
            if let Some(h) = hidden {
                spec.hidden_dims = h.clone();
            }
            if let Some(l) = self.latent {
                spec.output_dim = l;
            }
            if self.no_norm {
                spec.normalize = false;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn precheck(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("--epochs must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("--batch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("--dropout must be in [0, 1)".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config("--lr must be finite and non-negative".into()));
        }
        if self.latent == Some(0) {
            return Err(Error::Config("--latent must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Triplet)]
    pub model: ModelArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Held-out triplets evaluated every `--eval-every` epochs.
    #[arg(long, requires = "eval_every")]
    pub eval_pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Test triplets; omit to report precision only.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Cutoffs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("query").required(true).args(["user", "item"])))]
pub struct RetrieveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub user: Option<u64>,
    #[arg(long)]
    pub item: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Keep the query item in item-item results.
    #[arg(long, requires = "item")]
    pub include_self: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Compare pairing regimes for the triplet model instead of
    /// triplet against twonet.
    #[arg(long)]
    pub regimes: bool,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run<I: IntoIterator<Item = String>>(argv: I, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Dimension { .. }
        | Error::NonFiniteInput { .. }
        | Error::Checkpoint { .. }
        | Error::Io { .. } => EXIT_DATA,
        Error::NonFiniteLoss { .. } | Error::Shape { .. } => EXIT_NUMERIC,
    }
}

fn dispatch(cmd: CliCommand, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        CliCommand::Synth(a) => synth(a, out),
        CliCommand::BuildPairs(a) => build_pairs(a, out),
        CliCommand::Train(a) => train_cmd(a, out),
        CliCommand::Eval(a) => eval_cmd(a, out),
        CliCommand::Retrieve(a) => retrieve(a, out),
        CliCommand::Compare(a) => compare(a, out),
        CliCommand::Gradcheck(a) => gradcheck(a, out),
    }
    .map(|()| EXIT_OK)
    .or_else(|e| match e {
        CmdError::Fail(code) => Ok(code),
        CmdError::Lib(e) => Err(e),
    })
}

enum CmdError {
    Lib(Error),
    /// Command ran but reports failure through its exit code.
    Fail(i32),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Lib(e)
    }
}

type CmdResult = std::result::Result<(), CmdError>;

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|()| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> CmdResult {
    let config = SynthConfig {
        num_tags: a.tags,
        users_per_tag: a.users_per_tag,
        items_per_tag: a.items_per_tag,
        feature_noise_std: a.noise,
        topic_sharpness: a.sharpness,
        seed: a.seed,
        layout: FrameLayout {
            frames: a.frames,
            frame_dim: a.frame_dim,
        },
        topic_dim: a.topic_dim.unwrap_or(a.tags.max(7)),
        item_counts: None,
        user_counts: None,
    };
    config.validate()?;
    let store = generate_synthetic(&config)?;
    save_corpus_dir(&store, &a.out)?;
    let (users, items) = store.counts();
    emit(
        out,
        &format!(
            "wrote {users} users and {items} items to {}\n",
            a.out.display()
        ),
    )?;
    Ok(())
}

fn build_pairs(a: BuildPairsArgs, out: &mut dyn Write) -> CmdResult {
    let strategy = a.strategy.resolve()?;
    if strategy == PairingStrategy::OneToN(0) {
        return Err(Error::Config("--n must be >= 1".into()).into());
    }
    let store = load_corpus_dir(&a.corpus)?;
    let triplets = build_triplets(&store, strategy, a.seed)?;
    save_triplets(&triplets, &a.out)?;
    emit(
        out,
        &format!(
            "wrote {} {strategy} triplets to {}\n",
            triplets.len(),
            a.out.display()
        ),
    )?;
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    a.hyper.precheck()?;
    if a.eval_every > 0 && a.eval_pairs.is_none() {
        return Err(Error::Config("--eval-every needs --eval-pairs".into()).into());
    }
    let store = load_corpus_dir(&a.corpus)?;
    let triplets = load_triplets(&a.pairs)?;
    let eval = a.eval_pairs.as_deref().map(load_triplets).transpose()?;
    let mut cfg = a.hyper.config(&store, a.model.into(), a.seed)?;
    cfg.eval_every = a.eval_every;
    let mut write_err = None;
    let ckpt = train_with(&store, &triplets, &cfg, eval.as_deref(), |log| {
        if write_err.is_none() {
            write_err = emit(out, &format!("{}\n", log.to_json_line())).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&ckpt, &a.ckpt)?;
    log::info!("checkpoint written to {}", a.ckpt.display());
    Ok(())
}

fn load_for_inference(ckpt: &Path, corpus: &Path) -> Result<(Checkpoint, FeatureStore)> {
    let ckpt = load_checkpoint(ckpt)?;
    let store = load_corpus_dir(corpus)?;
    ckpt.config.check_store(&store).map_err(|e| match e {
        Error::Config(m) => Error::Data(format!("corpus does not match checkpoint: {m}")),
        other => other,
    })?;
    Ok((ckpt, store))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Error::Config("--k values must be >= 1".into()).into());
    }
    let (ckpt, store) = load_for_inference(&a.ckpt, &a.corpus)?;
    let test = a
        .pairs
        .as_deref()
        .map(load_triplets)
        .transpose()?
        .unwrap_or_default();
    let report = evaluate(&ckpt.model, &store, &test, &a.k)?;
    let text = if a.json {
        report.to_json() + "\n"
    } else {
        report.to_table()
    };
    emit(out, &text)?;
    Ok(())
}

fn retrieve(a: RetrieveArgs, out: &mut dyn Write) -> CmdResult {
    if a.k == 0 {
        return Err(Error::Config("--k must be >= 1".into()).into());
    }
    let (ckpt, store) = load_for_inference(&a.ckpt, &a.corpus)?;
    let catalog = build_catalog(&ckpt.model, &store, &store.item_ids())?;
    let (query, ranking) = match (a.user, a.item) {
        (Some(id), _) => {
            let user = store
                .user(id)
                .ok_or_else(|| Error::Data(format!("unknown user {id}")))?;
            (
                "user",
                rank_items_for_user(&ckpt.model, &user.topic_vector, &catalog, a.k)?,
            )
        }
        (None, Some(id)) => {
            let item = store
                .item(id)
                .ok_or_else(|| Error::Data(format!("unknown item {id}")))?;
            let exclude = (!a.include_self).then_some(id);
            (
                "item",
                rank_items_for_item(&ckpt.model, &item.features, &catalog, a.k, exclude)?,
            )
        }
        (None, None) => unreachable!("clap enforces the query group"),
    };
    let id = a.user.or(a.item).unwrap_or_default();
    let text = if a.json {
        let results: Vec<_> = ranking
            .ids
            .iter()
            .zip(&ranking.scores)
            .map(|(&item, &score)| {
                serde_json::json!({ "item": item, "tag": store.item(item).map(|r| r.tag), "score": score })
            })
            .collect();
        let doc = serde_json::json!({ "query": query, "id": id, "k": a.k, "truncated": ranking.truncated, "results": results });
        serde_json::to_string_pretty(&doc).expect("json value serializes") + "\n"
    } else {
        let mut s = String::new();
        for (rank, (&item, score)) in ranking.ids.iter().zip(&ranking.scores).enumerate() {
            let tag = store.item(item).map(|r| r.tag).unwrap_or_default();
            s.push_str(&format!("{}\t{item}\t{tag}\t{score:.6}\n", rank + 1));
        }
        s
    };
    emit(out, &text)?;
    Ok(())
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> CmdResult {
    a.hyper.precheck()?;
    if a.seeds.len() < 3 {
        return Err(Error::Config(format!(
            "--seeds needs at least 3 values, got {}",
            a.seeds.len()
        ))
        .into());
    }
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(Error::Config("--test-fraction must be in (0, 1)".into()).into());
    }
    if a.k == 0 {
        return Err(Error::Config("--k must be >= 1".into()).into());
    }
    let strategy = a.strategy.resolve()?;
    let store = load_corpus_dir(&a.corpus)?;
    let protocol = Protocol {
        test_fraction: a.test_fraction,
        k: a.k,
        ..Protocol::default()
    };
    let triplet = a.hyper.config(&store, ModelKind::Triplet, 0)?;
    let table = if a.regimes {
        let n = match strategy {
            PairingStrategy::OneToN(n) => n,
            _ => 10,
        };
        let arms: Vec<Arm> = [
            PairingStrategy::OneToN(n),
            PairingStrategy::Balanced,
            PairingStrategy::Unbalanced,
        ]
        .into_iter()
        .map(|s| Arm {
            name: s.to_string(),
            strategy: s,
            config: triplet.clone(),
        })
        .collect();
        compare_arms(&store, &arms, &a.seeds, &protocol)?
    } else {
        let twonet = a.hyper.config(&store, ModelKind::Twonet, 0)?;
        compare_methods(&store, &triplet, &twonet, strategy, &a.seeds, &protocol)?
    };
    let text = if a.json {
        table.to_json() + "\n"
    } else {
        table.to_table()
    };
    emit(out, &text)?;
    Ok(())
}

/// Gradient checks of the triplet and twonet objectives (in that order) on
/// a small jittered model with dropout masks frozen after one sampled pass.
pub fn gradcheck_reports(seed: u64) -> Result<[GradCheckReport; 2]> {
    let user = TowerSpec {
        input_dim: 7,
        hidden_dims: vec![6, 4],
        output_dim: 4,
        dropout_p: 0.2,
        normalize: true,
    };
    let item = TowerSpec {
        input_dim: 24,
        hidden_dims: vec![8, 6, 4, 4],
        output_dim: 4,
        dropout_p: 0.2,
        normalize: true,
    };
    let mut rng = RngState::new(seed);
    let mut model = TripletModel::new(user, item, &mut rng)?;
    // Zero biases put units fed by fully dropped rows exactly on the ReLU kink.
    for p in model.params_mut() {
        for v in p.value.as_mut_slice() {
            *v += 0.1 * rng.normal();
        }
    }
    let rows = 3;
    let random = |r: usize, c: usize, rng: &mut RngState| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect())
    };
    let users = random(rows, 7, &mut rng)?;
    let triplets = TripletBatch {
        users: users.clone(),
        items_i: random(rows, 24, &mut rng)?,
        items_j: random(rows, 24, &mut rng)?,
        labels: vec![0.0, 1.0, 0.0],
    };
    let pairs = PairBatch {
        users,
        items: random(rows, 24, &mut rng)?,
        labels: vec![1.0, 0.0, 1.0],
    };

    let masks: BatchMasks = triplet_loss(&model, &triplets, Mode::Train(&mut rng))?.masks;
    model.zero_grads();
    triplet_loss_and_grads(&mut model, &triplets, Mode::Frozen(&masks))?;
    let a = grad_check(
        &mut model,
        |m| triplet_loss(m, &triplets, Mode::Frozen(&masks)).map_or(f64::NAN, |o| o.loss),
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    );

    let masks: BatchMasks = twonet_loss(&model, &pairs, Mode::Train(&mut rng))?.masks;
    model.zero_grads();
    twonet_loss_and_grads(&mut model, &pairs, Mode::Frozen(&masks))?;
    let b = grad_check(
        &mut model,
        |m| twonet_loss(m, &pairs, Mode::Frozen(&masks)).map_or(f64::NAN, |o| o.loss),
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    );
    Ok([a, b])
}

/// Worst relative error over [`gradcheck_reports`]; infinite when a probe
/// produced a non-finite loss.
pub fn gradcheck_error(seed: u64) -> Result<f64> {
    let reports = gradcheck_reports(seed)?;
    if reports.iter().any(|r| r.non_finite_at.is_some()) {
        return Ok(f64::INFINITY);
    }
    Ok(reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max))
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    let err = gradcheck_error(a.seed)?;
    let passed = err < GRADCHECK_TOL;
    emit(
        out,
        &format!(
            "max relative error: {err:.3e} ({})\n",
            if passed { "ok" } else { "FAILED" }
        ),
    )?;
    if passed {
        Ok(())
    } else {
        Err(CmdError::Fail(EXIT_NUMERIC))
    }
}
