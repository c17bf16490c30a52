//! The generate / train / evaluate subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmloc_core::channel::{
    channel_response, path_to_mpc, read_mpc_table, read_responses, write_mpc_table,
    write_responses, ChannelConfig, ChannelResponse, Mpc, MpcRecord,
};
use mmloc_core::error::{Error, Result};
use mmloc_core::eval::{
    localization_errors, write_cdf, write_location_map, EvalResult, LocationMapRow,
};
use mmloc_core::features::{
    apply_normalization, assemble_raw_features, feature_column_names, fit_normalization,
    write_matrix_csv, FeatureMode, NormParam,
};
use mmloc_core::geometry::Point2D;
use mmloc_core::hyperopt::{optimize, write_trial_log, HyperConfig, HyperSpace, TrialCost};
use mmloc_core::matrix::Matrix;
use mmloc_core::neuralnet::{mse_loss, train, Activation, BatchMode, MlpModel, TrainConfig};
use mmloc_core::scene::{build_grid, trace_paths, Scene};
use mmloc_core::seeding::derive_seed;

use crate::manifest::{created_at, run_id, sha256_hex, write_manifest, RunManifest,
    MANIFEST_FORMAT_VERSION};

const NORM_FORMAT_VERSION: u32 = 1;

/// Normalization parameters and dataset metadata stored next to the model;
/// evaluation rebuilds features with exactly these settings.
#[derive(Debug, Serialize, Deserialize)]
pub struct NormFile {
    pub format_version: u32,
    pub mode: FeatureMode,
    pub num_mpcs: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    pub split: String,
    /// Users dropped from training because they needed sentinel padding.
    pub excluded_user_ids: Vec<usize>,
    pub feature_norm: Vec<NormParam>,
    pub label_norm: [NormParam; 2],
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub struct GenerateArgs {
    pub scene: String,
    pub out: PathBuf,
    pub seed: u64,
    pub subcarriers: usize,
    pub antennas: usize,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let scene = match Scene::preset(&args.scene) {
        Some(s) => s,
        None => Scene::load(Path::new(&args.scene))?,
    };
    scene.validate()?;
    std::fs::create_dir_all(&args.out)?;

    let scene_json = scene.to_json_string()?;
    std::fs::write(args.out.join("scene.json"), &scene_json)?;
    let scene_hash = sha256_hex(scene_json.as_bytes());

    // The MPC table carries no station column; datasets are generated from
    // the first base station.
    let bs = scene.base_stations[0];
    let config = ChannelConfig {
        num_antennas: args.antennas,
        num_subcarriers: args.subcarriers,
        bandwidth_hz: scene.bandwidth_hz,
        carrier_frequency_hz: scene.carrier_frequency_hz,
        element_spacing_wavelengths: 0.5,
    };
    config.validate()?;

    let mut records: Vec<MpcRecord> = Vec::new();
    let mut responses: Vec<(usize, ChannelResponse)> = Vec::new();
    let mut unreachable = 0usize;
    for (user_id, ue) in build_grid(&scene) {
        let paths = trace_paths(&scene, bs, ue)?;
        if paths.is_empty() {
            unreachable += 1;
            continue;
        }
        let mpcs: Vec<Mpc> = paths
            .iter()
            .map(|p| path_to_mpc(p, &scene))
            .collect::<Result<_>>()?;
        for (mpc_index, mpc) in mpcs.iter().enumerate() {
            records.push(MpcRecord {
                user_id,
                x: ue.x,
                y: ue.y,
                mpc_index,
                rss_dbm: mpc.rss_dbm,
                toa_s: mpc.toa_s,
                phase_rad: mpc.phase_rad,
                aoa_az_rad: mpc.aoa_az_rad,
                aoa_el_rad: mpc.aoa_el_rad,
            });
        }
        responses.push((user_id, channel_response(&mpcs, &config)?));
    }
    if responses.is_empty() {
        return Err(Error::EmptyInput(
            "no user in the scene is reachable by any propagation path".into(),
        ));
    }
    write_mpc_table(&args.out.join("mpcs.csv"), &records)?;
    write_responses(&args.out.join("responses.csv"), &responses)?;

    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        run_id: run_id(&format!(
            "generate|{scene_hash}|{}|{}|{}",
            args.seed, args.subcarriers, args.antennas
        )),
        command: "generate".into(),
        scene_hash: Some(scene_hash),
        feature_mode: None,
        hyperparameters: Some(serde_json::json!({
            "num_subcarriers": args.subcarriers,
            "num_antennas": args.antennas,
        })),
        seed: Some(args.seed),
        outputs: vec![
            "scene.json".into(),
            "mpcs.csv".into(),
            "responses.csv".into(),
        ],
        created_at: created_at(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "generated {} users ({} MPC rows, {} unreachable) into {}",
        responses.len(),
        records.len(),
        unreachable,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared dataset loading
// ---------------------------------------------------------------------------

struct Dataset {
    user_ids: Vec<usize>,
    points: Vec<Point2D>,
    per_user_mpcs: Vec<Vec<Mpc>>,
    responses: Option<Vec<ChannelResponse>>,
}

fn load_dataset(dir: &Path, want_responses: bool) -> Result<Dataset> {
    let records = read_mpc_table(&dir.join("mpcs.csv"))?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} holds no MPC rows",
            dir.join("mpcs.csv").display()
        )));
    }
    let mut by_user: BTreeMap<usize, (Point2D, Vec<(usize, Mpc)>)> = BTreeMap::new();
    for r in &records {
        let entry = by_user
            .entry(r.user_id)
            .or_insert_with(|| (Point2D::new(r.x, r.y), Vec::new()));
        if (entry.0.x - r.x).abs() > 1e-9 || (entry.0.y - r.y).abs() > 1e-9 {
            return Err(Error::Parse(format!(
                "user {} has inconsistent positions in the MPC table",
                r.user_id
            )));
        }
        entry.1.push((r.mpc_index, r.mpc()));
    }
    let mut user_ids = Vec::with_capacity(by_user.len());
    let mut points = Vec::with_capacity(by_user.len());
    let mut per_user_mpcs = Vec::with_capacity(by_user.len());
    for (id, (point, mut mpcs)) in by_user {
        mpcs.sort_by_key(|(i, _)| *i);
        user_ids.push(id);
        points.push(point);
        per_user_mpcs.push(mpcs.into_iter().map(|(_, m)| m).collect());
    }

    let responses = if want_responses {
        let rows = read_responses(&dir.join("responses.csv"))?;
        let ids: Vec<usize> = rows.iter().map(|(id, _)| *id).collect();
        if ids != user_ids {
            return Err(Error::Parse(
                "response table covers a different user set than the MPC table".into(),
            ));
        }
        Some(rows.into_iter().map(|(_, r)| r).collect())
    } else {
        None
    };
    Ok(Dataset {
        user_ids,
        points,
        per_user_mpcs,
        responses,
    })
}

fn scene_hash_of(dir: &Path) -> Option<String> {
    std::fs::read(dir.join("scene.json"))
        .ok()
        .map(|bytes| sha256_hex(&bytes))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub data: PathBuf,
    pub mode: String,
    pub out: PathBuf,
    pub seed: u64,
    pub hyperopt: bool,
    pub budget: usize,
    pub h1: usize,
    pub h2: usize,
    pub learning_rate: f64,
    pub activation: String,
    pub epochs: usize,
    pub num_mpcs: usize,
    pub split: String,
    pub batch: String,
}

#[derive(Clone, Copy)]
enum Split {
    Full,
    Holdout(f64),
}

fn parse_split(s: &str) -> Result<Split> {
    if s == "full" {
        return Ok(Split::Full);
    }
    if let Some(rest) = s.strip_prefix("holdout:") {
        let fraction: f64 = rest
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad holdout fraction '{rest}'")))?;
        if !(0.0 < fraction && fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "holdout fraction must be in (0, 1), got {fraction}"
            )));
        }
        return Ok(Split::Holdout(fraction));
    }
    Err(Error::InvalidConfig(format!(
        "unknown split '{s}' (expected full or holdout:<fraction>)"
    )))
}

fn parse_batch(s: &str) -> Result<BatchMode> {
    if s == "full" {
        return Ok(BatchMode::FullBatch);
    }
    let size: usize = s
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad batch size '{s}'")))?;
    if size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    Ok(BatchMode::MiniBatch(size))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mode = FeatureMode::parse(&args.mode)?;
    let split = parse_split(&args.split)?;
    let batch_mode = parse_batch(&args.batch)?;
    if args.num_mpcs == 0 {
        return Err(Error::InvalidConfig("--num-mpcs must be at least 1".into()));
    }
    let dataset = load_dataset(&args.data, mode == FeatureMode::AbsResponse)?;
    std::fs::create_dir_all(&args.out)?;

    let (raw, padded_rows) = assemble_raw_features(
        &dataset.per_user_mpcs,
        dataset.responses.as_deref(),
        mode,
        args.num_mpcs,
    )?;
    // Users that needed sentinel padding are excluded from training runs.
    let padded: std::collections::BTreeSet<usize> = padded_rows.iter().copied().collect();
    let keep: Vec<usize> = (0..raw.rows()).filter(|r| !padded.contains(r)).collect();
    if keep.is_empty() {
        return Err(Error::EmptyInput(
            "every user needed MPC padding; nothing to train on".into(),
        ));
    }
    let excluded_user_ids: Vec<usize> = padded_rows.iter().map(|r| dataset.user_ids[*r]).collect();
    if !excluded_user_ids.is_empty() {
        println!(
            "excluding {} padded user(s) from training",
            excluded_user_ids.len()
        );
    }
    let kept_ids: Vec<usize> = keep.iter().map(|r| dataset.user_ids[*r]).collect();
    let kept_points: Vec<Point2D> = keep.iter().map(|r| dataset.points[*r]).collect();
    let raw = raw.select_rows(&keep);
    let label_raw = Matrix::from_vec(
        kept_points.len(),
        2,
        kept_points.iter().flat_map(|p| [p.x, p.y]).collect(),
    );

    // Row split: normalization is fit on the training rows only.
    let (fit_rows, holdout_rows): (Vec<usize>, Vec<usize>) = match split {
        Split::Full => ((0..raw.rows()).collect(), (0..raw.rows()).collect()),
        Split::Holdout(fraction) => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..raw.rows()).collect();
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(args.seed, "split"));
            order.shuffle(&mut rng);
            let held = ((raw.rows() as f64) * fraction).round().max(1.0) as usize;
            let held = held.min(raw.rows() - 1);
            let (test, tr) = order.split_at(held);
            let mut test = test.to_vec();
            let mut tr = tr.to_vec();
            test.sort_unstable();
            tr.sort_unstable();
            (tr, test)
        }
    };

    let feature_norm = fit_normalization(&raw.select_rows(&fit_rows));
    let features = apply_normalization(&raw, &feature_norm)?;
    let label_params = fit_normalization(&label_raw.select_rows(&fit_rows));
    let labels = apply_normalization(&label_raw, &label_params)?;
    let label_norm = [label_params[0], label_params[1]];

    let x_train = features.select_rows(&fit_rows);
    let y_train = labels.select_rows(&fit_rows);
    let x_cost = features.select_rows(&holdout_rows);
    let y_cost = labels.select_rows(&holdout_rows);

    let base_config = TrainConfig {
        max_epochs: args.epochs,
        batch_mode,
        ..TrainConfig::default()
    };

    let (final_config, trial_log) = if args.hyperopt {
        let space = HyperSpace::default();
        let n_init = 5.min(args.budget);
        let objective = |config: &HyperConfig, trial_seed: u64| -> Result<f64> {
            let model = MlpModel::two_hidden(
                x_train.cols(),
                config.h1,
                config.h2,
                config.activation,
                derive_seed(trial_seed, "init"),
            )?;
            let tc = TrainConfig {
                learning_rate: config.learning_rate,
                seed: derive_seed(trial_seed, "batches"),
                ..base_config
            };
            let (trained, history) = train(model, &x_train, &y_train, &tc)?;
            match split {
                Split::Full => Ok(*history.last().unwrap()),
                Split::Holdout(_) => mse_loss(&trained.forward(&x_cost)?, &y_cost),
            }
        };
        let (best, log) = optimize(
            &space,
            objective,
            args.budget,
            n_init,
            derive_seed(args.seed, "hyperopt"),
        )?;
        write_trial_log(&args.out.join("trials.csv"), &log)?;
        if !matches!(best.cost, TrialCost::Finite(_)) {
            return Err(Error::Divergence { epoch: 0 });
        }
        println!(
            "hyperopt best of {}: h1={} h2={} lr={} activation={} cost={:?}",
            log.len(),
            best.config.h1,
            best.config.h2,
            best.config.learning_rate,
            best.config.activation.as_str(),
            best.cost
        );
        (best.config, true)
    } else {
        (
            HyperConfig {
                h1: args.h1,
                h2: args.h2,
                learning_rate: args.learning_rate,
                activation: Activation::parse(&args.activation)?,
            },
            false,
        )
    };

    // Final fit with the chosen configuration.
    let model = MlpModel::two_hidden(
        x_train.cols(),
        final_config.h1,
        final_config.h2,
        final_config.activation,
        derive_seed(args.seed, "final-init"),
    )?;
    let tc = TrainConfig {
        learning_rate: final_config.learning_rate,
        seed: derive_seed(args.seed, "final-batches"),
        ..base_config
    };
    let (trained, history) = train(model, &x_train, &y_train, &tc).map_err(|e| {
        if let Error::Divergence { epoch } = e {
            eprintln!(
                "training diverged at epoch {epoch} for config h1={} h2={} lr={} activation={}",
                final_config.h1,
                final_config.h2,
                final_config.learning_rate,
                final_config.activation.as_str()
            );
        }
        e
    })?;
    let final_loss = *history.last().unwrap();
    trained.save(&args.out.join("model.json"))?;

    let (k_dim, m_dim) = dataset
        .responses
        .as_ref()
        .and_then(|r| r.first())
        .map_or((0, 0), |r| (r.num_subcarriers, r.num_antennas));
    let norm_file = NormFile {
        format_version: NORM_FORMAT_VERSION,
        mode,
        num_mpcs: args.num_mpcs,
        num_subcarriers: k_dim,
        num_antennas: m_dim,
        split: args.split.clone(),
        excluded_user_ids,
        feature_norm: feature_norm.clone(),
        label_norm,
    };
    let mut norm_text = serde_json::to_string_pretty(&norm_file)?;
    norm_text.push('\n');
    std::fs::write(args.out.join("norm_params.json"), norm_text)?;

    let names = feature_column_names(mode, args.num_mpcs, k_dim, m_dim);
    write_matrix_csv(&args.out.join("features.csv"), &kept_ids, &features, &names)?;
    write_matrix_csv(
        &args.out.join("labels.csv"),
        &kept_ids,
        &labels,
        &["x".to_string(), "y".to_string()],
    )?;

    let scene_hash = scene_hash_of(&args.data);
    let mut outputs = vec![
        "model.json".into(),
        "norm_params.json".into(),
        "features.csv".into(),
        "labels.csv".into(),
    ];
    if trial_log {
        outputs.push("trials.csv".into());
    }
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        run_id: run_id(&format!(
            "train|{}|{}|{}|{}|{}",
            scene_hash.clone().unwrap_or_default(),
            args.mode,
            args.seed,
            args.split,
            args.hyperopt
        )),
        command: "train".into(),
        scene_hash,
        feature_mode: Some(mode.as_str().to_string()),
        hyperparameters: Some(serde_json::json!({
            "h1": final_config.h1,
            "h2": final_config.h2,
            "learning_rate": final_config.learning_rate,
            "activation": final_config.activation.as_str(),
            "epochs": args.epochs,
            "batch": args.batch,
            "num_mpcs": args.num_mpcs,
            "hyperopt": args.hyperopt,
            "budget": if args.hyperopt { Some(args.budget) } else { None },
            "final_loss": final_loss,
        })),
        seed: Some(args.seed),
        outputs,
        created_at: created_at(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "trained on {} users, final loss {final_loss:.6e}, model in {}",
        x_train.rows(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Summary {
    p50_m: f64,
    p90_m: f64,
    mean_m: f64,
    num_users: usize,
    outlier_count: usize,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model_hash = sha256_hex(&std::fs::read(&args.model)?);
    let model = MlpModel::load(&args.model)?;
    let norm_path = args
        .model
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("norm_params.json");
    let norm_file: NormFile = serde_json::from_str(&std::fs::read_to_string(&norm_path)?)?;
    if norm_file.format_version != NORM_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported norm_params format version {}",
            norm_file.format_version
        )));
    }

    let dataset = load_dataset(&args.data, norm_file.mode == FeatureMode::AbsResponse)?;
    let excluded: std::collections::BTreeSet<usize> =
        norm_file.excluded_user_ids.iter().copied().collect();
    let keep: Vec<usize> = (0..dataset.user_ids.len())
        .filter(|r| !excluded.contains(&dataset.user_ids[*r]))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyInput("no users left to evaluate".into()));
    }
    let user_ids: Vec<usize> = keep.iter().map(|r| dataset.user_ids[*r]).collect();
    let actual: Vec<Point2D> = keep.iter().map(|r| dataset.points[*r]).collect();
    let per_user: Vec<Vec<Mpc>> = keep
        .iter()
        .map(|r| dataset.per_user_mpcs[*r].clone())
        .collect();
    let responses: Option<Vec<ChannelResponse>> = dataset
        .responses
        .map(|all| keep.iter().map(|r| all[*r].clone()).collect());

    let (raw, _) = assemble_raw_features(
        &per_user,
        responses.as_deref(),
        norm_file.mode,
        norm_file.num_mpcs,
    )?;
    let features = apply_normalization(&raw, &norm_file.feature_norm)?;
    if features.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset yields {} features but the model expects {}",
            features.cols(),
            model.input_dim()
        )));
    }

    let pred_norm = model.forward(&features)?;
    let predicted =
        mmloc_core::features::denormalize_labels(&pred_norm, &norm_file.label_norm)?;
    let errors = localization_errors(&predicted, &actual)?;

    // Outlier threshold: diagonal of the bounding box of the true positions.
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &actual {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let diagonal = (max_x - min_x).hypot(max_y - min_y);
    let result = EvalResult::from_errors(&errors, diagonal)?;

    std::fs::create_dir_all(&args.out)?;
    let rows: Vec<LocationMapRow> = user_ids
        .iter()
        .zip(&actual)
        .zip(&predicted)
        .zip(&errors)
        .map(|(((id, a), p), e)| LocationMapRow {
            user_id: *id,
            actual_x: a.x,
            actual_y: a.y,
            pred_x: p.x,
            pred_y: p.y,
            error_m: *e,
            outlier: u8::from(*e > diagonal),
        })
        .collect();
    write_location_map(&args.out.join("location_map.csv"), &rows)?;
    write_cdf(&args.out.join("cdf.csv"), &result)?;

    let summary = Summary {
        p50_m: result.p50_m,
        p90_m: result.p90_m,
        mean_m: result.mean_m(),
        num_users: errors.len(),
        outlier_count: result.outlier_count,
    };
    let mut summary_text = serde_json::to_string_pretty(&summary)?;
    summary_text.push('\n');
    std::fs::write(args.out.join("summary.json"), summary_text)?;

    let scene_hash = scene_hash_of(&args.data);
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        run_id: run_id(&format!(
            "evaluate|{}|{}|{model_hash}",
            scene_hash.clone().unwrap_or_default(),
            norm_file.mode.as_str(),
        )),
        command: "evaluate".into(),
        scene_hash,
        feature_mode: Some(norm_file.mode.as_str().to_string()),
        hyperparameters: None,
        seed: None,
        outputs: vec![
            "location_map.csv".into(),
            "cdf.csv".into(),
            "summary.json".into(),
        ],
        created_at: created_at(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "evaluated {} users: p50={:.4} m, p90={:.4} m ({} outliers)",
        errors.len(),
        result.p50_m,
        result.p90_m,
        result.outlier_count
    );
    Ok(())
}
