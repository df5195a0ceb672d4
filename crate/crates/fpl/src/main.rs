use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use fpl::baselines::{self, SamplingMode};
use fpl::checkpoint::{Checkpoint, CheckpointKind};
use fpl::config::RunConfig;
use fpl::data::{self, Dataset};
use fpl::error::FplError;
use fpl::eval;
use fpl::federation::{self, FederationConfig, Mode};
use fpl::model::{ServerModel, UserVector};
use fpl::rng;

#[derive(Parser)]
#[command(name = "fpl", about = "Federated pair-wise learning-to-rank for top-N recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw TSV log, filter, and write a temporal hold-out split.
    Split {
        /// user<TAB>item<TAB>timestamp log, `#` comments allowed
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        /// Keep users with strictly more than this many distinct items.
        #[arg(long, default_value_t = 20)]
        min_interactions: usize,
        /// Also split the train side into sub-train and validation.
        #[arg(long)]
        with_validation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint, history, and manifest.
    Train {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (optionally against a second one).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint for the paired-t-test significance matrix.
        #[arg(long)]
        checkpoint_b: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated cutoff list.
        #[arg(long, default_value = "10")]
        cutoffs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model per disclosure probability.
    SweepPi {
        /// start:end:step, both ends inclusive when step divides the range
        #[arg(long)]
        pi_grid: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search over learning rates and latent dimensionalities,
    /// ranked by validation F1.
    GridSearch {
        #[arg(long, value_delimiter = ',', default_value = "0.005,0.05,0.5")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,50")]
        factors: Vec<usize>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic check-in log with planted structure.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 1.0)]
        skew: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FplError::Config(_) | FplError::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> fpl::Result<()> {
    match command {
        Command::Split {
            input,
            train_frac,
            min_interactions,
            with_validation,
            out,
        } => cmd_split(&input, train_frac, min_interactions, with_validation, &out),
        Command::Train { mode, config, out } => cmd_train(&mode, &config, out.as_deref()),
        Command::Evaluate {
            checkpoint,
            checkpoint_b,
            dataset,
            cutoffs,
            out,
        } => cmd_evaluate(&checkpoint, checkpoint_b.as_deref(), &dataset, &cutoffs, &out),
        Command::SweepPi {
            pi_grid,
            config,
            out,
        } => cmd_sweep_pi(&pi_grid, &config, &out),
        Command::GridSearch {
            alphas,
            factors,
            config,
            out,
        } => cmd_grid_search(&alphas, &factors, &config, &out),
        Command::Synth {
            users,
            items,
            latent_dim,
            density,
            skew,
            seed,
            out,
        } => {
            let records = data::generate_synthetic(users, items, latent_dim, density, skew, seed)?;
            let mut text = String::from("# user\titem\ttimestamp\n");
            for r in &records {
                text.push_str(&format!("{}\t{}\t{}\n", r.user, r.item, r.timestamp));
            }
            fs::write(&out, text)?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
    }
}

fn sha256_hex(path: &Path) -> fpl::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn cmd_split(
    input: &Path,
    train_frac: f64,
    min_interactions: usize,
    with_validation: bool,
    out: &Path,
) -> fpl::Result<()> {
    if !input.exists() {
        return Err(FplError::Config(format!(
            "input path {} does not exist",
            input.display()
        )));
    }
    let records = data::ingest(input)?;
    let filtered = data::filter_and_binarize(&records, min_interactions);
    let mut dataset = data::temporal_split(&filtered, train_frac)?;
    if with_validation {
        dataset = data::validation_split(&dataset, train_frac)?;
    }
    for user in &dataset.dropped_users {
        eprintln!("warning: dropped user {user} (a split side would be empty)");
    }
    let x_plus = dataset.x_plus;
    let density = if dataset.num_users() * dataset.num_items() > 0 {
        x_plus as f64 / (dataset.num_users() as f64 * dataset.num_items() as f64)
    } else {
        0.0
    };
    let extras = vec![
        ("train_frac".to_string(), train_frac.to_string()),
        ("min_interactions".to_string(), min_interactions.to_string()),
        ("with_validation".to_string(), with_validation.to_string()),
        ("raw_records".to_string(), records.len().to_string()),
        ("train_density".to_string(), format!("{density:.8}")),
        ("input_digest_sha256".to_string(), sha256_hex(input)?),
    ];
    data::save_dataset(out, &dataset, &extras)?;
    println!(
        "split: |U| = {}, |I| = {}, X+ = {}, test = {}{}",
        dataset.num_users(),
        dataset.num_items(),
        x_plus,
        dataset.test_records.len(),
        match &dataset.validation_records {
            Some(v) => format!(", validation = {}", v.len()),
            None => String::new(),
        }
    );
    Ok(())
}

fn parse_mode(mode: &str) -> fpl::Result<CheckpointKind> {
    Ok(match mode {
        "sfpl" => CheckpointKind::Sfpl,
        "pfpl" => CheckpointKind::Pfpl,
        "custom" => CheckpointKind::Custom,
        "bpr" => CheckpointKind::Bpr,
        "toppop" => CheckpointKind::TopPop,
        "random" => CheckpointKind::Random,
        other => {
            return Err(FplError::Config(format!(
                "unknown mode {other:?} (expected sfpl|pfpl|custom|bpr|toppop|random)"
            )))
        }
    })
}

fn federation_mode(kind: CheckpointKind) -> Option<Mode> {
    match kind {
        CheckpointKind::Sfpl => Some(Mode::Sequential),
        CheckpointKind::Pfpl => Some(Mode::Parallel),
        CheckpointKind::Custom => Some(Mode::Custom),
        _ => None,
    }
}

/// Presets fix cohort size and triples per round; explicitly configured
/// conflicting values are an error rather than silently overridden.
fn check_preset_conflicts(
    kind: CheckpointKind,
    cfg: &RunConfig,
    num_users: usize,
) -> fpl::Result<()> {
    let check = |key: &str, forced: usize| -> fpl::Result<()> {
        if let Some(raw) = cfg.get(key) {
            let value: usize = raw
                .parse()
                .map_err(|_| FplError::Config(format!("bad value {raw:?} for {key:?}")))?;
            if value != forced {
                return Err(FplError::Config(format!(
                    "mode {} forces {key} = {forced}, but config sets {value}",
                    kind.as_str()
                )));
            }
        }
        Ok(())
    };
    match kind {
        CheckpointKind::Sfpl => {
            check("cohort_size", 1)?;
            check("triples_per_round", 1)?;
        }
        CheckpointKind::Pfpl => {
            check("cohort_size", num_users)?;
            check("triples_per_round", 1)?;
        }
        _ => {}
    }
    Ok(())
}

fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    provenance: &[(String, String)],
) -> fpl::Result<()> {
    let mut text = String::new();
    for (k, v) in cfg.resolved()? {
        text.push_str(&format!("{k} = {v}\n"));
    }
    // provenance lines are comments so the manifest re-parses as a config
    for (k, v) in provenance {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

fn dataset_digest(dir: &Path) -> fpl::Result<String> {
    sha256_hex(&dir.join("train.tsv"))
}

fn train_once(
    kind: CheckpointKind,
    cfg: &RunConfig,
    dataset: &Dataset,
    seed: u64,
) -> fpl::Result<(Checkpoint, Vec<(usize, f64, Option<f64>)>)> {
    let epochs = cfg.epochs()?;
    let hyperparams = cfg.hyperparams()?;
    match kind {
        CheckpointKind::Sfpl | CheckpointKind::Pfpl | CheckpointKind::Custom => {
            let config = FederationConfig {
                mode: federation_mode(kind).unwrap(),
                hyperparams,
                epochs,
                seed,
                validation_cutoff: cfg.cutoffs()?[0],
            };
            let (state, history) = federation::run_training(&config, dataset)?;
            let history = history
                .iter()
                .map(|e| (e.epoch, e.mean_objective, e.validation_f1))
                .collect();
            Ok((Checkpoint::from_training_state(&state, kind), history))
        }
        CheckpointKind::Bpr => {
            let sampling = SamplingMode::parse(cfg.sampling_mode()).ok_or_else(|| {
                FplError::Config(format!("unknown sampling_mode {:?}", cfg.sampling_mode()))
            })?;
            let (model, history) =
                baselines::train_bpr_centralized(dataset, &hyperparams, epochs, sampling, seed)?;
            let history = history
                .iter()
                .map(|e| (e.epoch, e.mean_objective, None))
                .collect();
            Ok((
                Checkpoint {
                    kind,
                    seed,
                    round_counter: epochs as u64 * dataset.x_plus,
                    server_model: model.server,
                    user_vectors: model.user_vectors,
                    rng: None,
                },
                history,
            ))
        }
        CheckpointKind::TopPop => {
            if cfg.is_set("learning_rate") {
                eprintln!("warning: mode toppop ignores learning_rate");
            }
            let counts = baselines::popularity_counts(dataset);
            let bias: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            Ok((
                Checkpoint {
                    kind,
                    seed,
                    round_counter: 0,
                    server_model: ServerModel::from_parts(0, Vec::new(), bias),
                    user_vectors: vec![UserVector::zeros(0); dataset.num_users()],
                    rng: None,
                },
                Vec::new(),
            ))
        }
        CheckpointKind::Random => Ok((
            Checkpoint {
                kind,
                seed,
                round_counter: 0,
                server_model: ServerModel::zeros(dataset.num_items(), 0),
                user_vectors: vec![UserVector::zeros(0); dataset.num_users()],
                rng: None,
            },
            Vec::new(),
        )),
    }
}

fn cmd_train(mode: &str, config_path: &Path, out: Option<&Path>) -> fpl::Result<()> {
    let kind = parse_mode(mode)?;
    let mut cfg = RunConfig::from_file(config_path)?;
    if let Some(cfg_mode) = cfg.mode() {
        if cfg_mode != mode {
            return Err(FplError::Config(format!(
                "--mode {mode} conflicts with config mode {cfg_mode}"
            )));
        }
    } else {
        cfg.set("mode", mode.to_string());
    }
    if let Some(out) = out {
        cfg.set("output", out.display().to_string());
    }
    let out_dir = cfg
        .output()
        .ok_or_else(|| FplError::Config("no output directory (use --out)".into()))?;
    let dataset_dir = cfg.dataset()?;
    let dataset = data::load_dataset(&dataset_dir)?;
    check_preset_conflicts(kind, &cfg, dataset.num_users())?;

    let seed = cfg.seed()?;
    let (ckpt, history) = train_once(kind, &cfg, &dataset, seed)?;

    fs::create_dir_all(&out_dir)?;
    ckpt.save(&out_dir.join("checkpoint.ckpt"))?;
    let mut history_text = String::from("# epoch\tmean_objective\tvalidation_f1\n");
    for (epoch, objective, val_f1) in &history {
        history_text.push_str(&format!(
            "{epoch}\t{objective}\t{}\n",
            val_f1.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    fs::write(out_dir.join("history.tsv"), history_text)?;
    write_manifest(
        &out_dir,
        &cfg,
        &[("dataset_digest_sha256".into(), dataset_digest(&dataset_dir)?)],
    )?;
    println!("trained {mode}; checkpoint at {}", out_dir.join("checkpoint.ckpt").display());
    Ok(())
}

fn parse_cutoffs(raw: &str) -> fpl::Result<Vec<usize>> {
    let cutoffs: std::result::Result<Vec<usize>, _> =
        raw.split(',').map(|s| s.trim().parse()).collect();
    let cutoffs = cutoffs.map_err(|_| FplError::Config(format!("bad cutoffs {raw:?}")))?;
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(FplError::Config("cutoffs must be positive".into()));
    }
    Ok(cutoffs)
}

fn recommendations_for(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    n: usize,
) -> fpl::Result<Vec<Vec<usize>>> {
    if ckpt.user_vectors.len() != dataset.num_users() {
        return Err(FplError::Config(format!(
            "checkpoint covers {} users but dataset has {}",
            ckpt.user_vectors.len(),
            dataset.num_users()
        )));
    }
    Ok(match ckpt.kind {
        CheckpointKind::Random => baselines::random_recommender(
            dataset.num_items(),
            &dataset.train_positives,
            n,
            ckpt.seed,
        ),
        _ => {
            if ckpt.server_model.num_items() != dataset.num_items() {
                return Err(FplError::Config(format!(
                    "checkpoint catalog {} != dataset catalog {}",
                    ckpt.server_model.num_items(),
                    dataset.num_items()
                )));
            }
            (0..dataset.num_users())
                .map(|u| {
                    baselines::recommend_top_n(
                        &ckpt.user_vectors[u],
                        &ckpt.server_model,
                        &dataset.train_positives[u],
                        n,
                    )
                })
                .collect()
        }
    })
}

fn cmd_evaluate(
    checkpoint: &Path,
    checkpoint_b: Option<&Path>,
    dataset_dir: &Path,
    cutoffs_raw: &str,
    out: &Path,
) -> fpl::Result<()> {
    let cutoffs = parse_cutoffs(cutoffs_raw)?;
    let dataset = data::load_dataset(dataset_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let ckpt_b = checkpoint_b.map(Checkpoint::load).transpose()?;
    fs::create_dir_all(out)?;

    let dataset_name = dataset_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dataset_dir.display().to_string());

    let mut report = String::from("# model\tdataset\tcutoff\tmetric\tvalue\n");
    let mut significance = String::from("# cutoff\tmetric\tt\tp\tdegenerate\n");
    for &cutoff in &cutoffs {
        if cutoff > dataset.num_items() {
            eprintln!(
                "warning: cutoff {cutoff} exceeds catalog size {}; lists are truncated",
                dataset.num_items()
            );
        }
        let recs = recommendations_for(&ckpt, &dataset, cutoff)?;
        let rep = eval::evaluate(&recs, &dataset.test_positives, dataset.num_items(), cutoff)?;
        for (metric, value) in [
            ("precision", rep.precision),
            ("recall", rep.recall),
            ("f1", rep.f1),
            ("item_coverage", rep.item_coverage),
            ("gini", rep.gini),
        ] {
            report.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                ckpt.kind.as_str(),
                dataset_name,
                cutoff,
                metric,
                value
            ));
        }
        if let Some(other) = &ckpt_b {
            let recs_b = recommendations_for(other, &dataset, cutoff)?;
            let rep_b =
                eval::evaluate(&recs_b, &dataset.test_positives, dataset.num_items(), cutoff)?;
            for (metric, a, b) in [
                ("precision", &rep.per_user_precision, &rep_b.per_user_precision),
                ("recall", &rep.per_user_recall, &rep_b.per_user_recall),
            ] {
                let t = eval::paired_t_test(a, b)?;
                significance.push_str(&format!(
                    "{cutoff}\t{metric}\t{}\t{}\t{}\n",
                    t.t, t.p, t.degenerate
                ));
            }
        }
    }
    fs::write(out.join("report.tsv"), report)?;
    if ckpt_b.is_some() {
        fs::write(out.join("significance.tsv"), significance)?;
    }
    println!("evaluation written to {}", out.display());
    Ok(())
}

fn parse_pi_grid(raw: &str) -> fpl::Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(FplError::Config(format!(
            "bad pi grid {raw:?}, expected start:end:step"
        )));
    }
    let parse = |s: &str| -> fpl::Result<f64> {
        s.parse()
            .map_err(|_| FplError::Config(format!("bad grid number {s:?}")))
    };
    let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || start > end || !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
        return Err(FplError::Config(format!("bad pi grid {raw:?}")));
    }
    let mut values = Vec::new();
    let mut k = 0usize;
    loop {
        let v = start + step * k as f64;
        if v > end + 1e-9 {
            break;
        }
        values.push(v.min(1.0));
        k += 1;
    }
    Ok(values)
}

fn cmd_sweep_pi(pi_grid: &str, config_path: &Path, out: &Path) -> fpl::Result<()> {
    let grid = parse_pi_grid(pi_grid)?;
    let cfg = RunConfig::from_file(config_path)?;
    let dataset = data::load_dataset(&cfg.dataset()?)?;
    let base_seed = cfg.seed()?;
    let cutoff = cfg.cutoffs()?[0];
    let mode = cfg.mode().unwrap_or("pfpl").to_string();
    let kind = parse_mode(&mode)?;
    if federation_mode(kind).is_none() {
        return Err(FplError::Config(format!(
            "sweep-pi needs a federation mode, got {mode:?}"
        )));
    }
    check_preset_conflicts(kind, &cfg, dataset.num_users())?;

    fs::create_dir_all(out)?;
    let mut table = String::from("# pi\tprecision\trecall\tf1\titem_coverage\tgini\n");
    for (cell, &pi) in grid.iter().enumerate() {
        let seed = rng::derive_cell_seed(base_seed, cell as u64);
        let mut hyperparams = cfg.hyperparams()?;
        hyperparams.disclosure_prob = pi;
        let config = FederationConfig {
            mode: federation_mode(kind).unwrap(),
            hyperparams,
            epochs: cfg.epochs()?,
            seed,
            validation_cutoff: cutoff,
        };
        let (state, _) = federation::run_training(&config, &dataset)?;
        let recs = federation::recommend_all(&state, &dataset, cutoff);
        let rep = eval::evaluate(&recs, &dataset.test_positives, dataset.num_items(), cutoff)?;
        table.push_str(&format!(
            "{pi}\t{}\t{}\t{}\t{}\t{}\n",
            rep.precision, rep.recall, rep.f1, rep.item_coverage, rep.gini
        ));
        println!("pi = {pi:.3}: F1@{cutoff} = {:.5}", rep.f1);
    }
    fs::write(out.join("sweep.tsv"), table)?;
    write_manifest(
        out,
        &cfg,
        &[
            ("pi_grid".into(), pi_grid.to_string()),
            ("dataset_digest_sha256".into(), dataset_digest(&cfg.dataset()?)?),
        ],
    )?;
    Ok(())
}

fn cmd_grid_search(
    alphas: &[f64],
    factors: &[usize],
    config_path: &Path,
    out: &Path,
) -> fpl::Result<()> {
    if alphas.is_empty() || factors.is_empty() {
        return Err(FplError::Config("empty grid".into()));
    }
    let cfg = RunConfig::from_file(config_path)?;
    let dataset = data::load_dataset(&cfg.dataset()?)?;
    let validation = dataset.validation_positives.clone().ok_or_else(|| {
        FplError::Config(
            "grid search needs a dataset split with --with-validation".into(),
        )
    })?;
    let cutoff = cfg.cutoffs()?[0];
    let mode = cfg.mode().unwrap_or("bpr").to_string();
    let kind = parse_mode(&mode)?;
    let base_seed = cfg.seed()?;

    let mut rows: Vec<(f64, usize, f64)> = Vec::new();
    let mut cell = 0u64;
    for &alpha in alphas {
        for &latent_dim in factors {
            let mut cell_cfg = cfg.clone();
            cell_cfg.set("learning_rate", alpha.to_string());
            cell_cfg.set("latent_dim", latent_dim.to_string());
            // lambda ratios track alpha unless explicitly pinned
            if !cfg.is_set("reg_user") {
                cell_cfg.set("reg_user", (alpha / 20.0).to_string());
            }
            if !cfg.is_set("reg_pos_item") {
                cell_cfg.set("reg_pos_item", (alpha / 20.0).to_string());
            }
            if !cfg.is_set("reg_neg_item") {
                cell_cfg.set("reg_neg_item", (alpha / 200.0).to_string());
            }
            let seed = rng::derive_cell_seed(base_seed, cell);
            cell += 1;
            let (ckpt, _) = train_once(kind, &cell_cfg, &dataset, seed)?;
            let recs = recommendations_for(&ckpt, &dataset, cutoff)?;
            let (p, r, _, _) = eval::precision_recall_at_n(&recs, &validation, cutoff);
            let f1 = eval::f1_score(p, r);
            println!("alpha = {alpha}, F = {latent_dim}: validation F1@{cutoff} = {f1:.5}");
            rows.push((alpha, latent_dim, f1));
        }
    }
    // rank by F1 descending; ties prefer the smaller model
    rows.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)));

    fs::create_dir_all(out)?;
    let mut table = String::from("# alpha\tlatent_dim\tvalidation_f1\n");
    for (alpha, latent_dim, f1) in &rows {
        table.push_str(&format!("{alpha}\t{latent_dim}\t{f1}\n"));
    }
    fs::write(out.join("grid.tsv"), table)?;
    let best = rows[0];
    write_manifest(
        out,
        &cfg,
        &[
            ("best_alpha".into(), best.0.to_string()),
            ("best_latent_dim".into(), best.1.to_string()),
            ("best_validation_f1".into(), best.2.to_string()),
            ("dataset_digest_sha256".into(), dataset_digest(&cfg.dataset()?)?),
        ],
    )?;
    println!("best cell: alpha = {}, F = {}", best.0, best.1);
    Ok(())
}
