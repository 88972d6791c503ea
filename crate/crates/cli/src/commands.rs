use std::path::{Path, PathBuf};

use langtail::data::{
    read_corpus_scenes, read_entity_bank, read_labels, write_feature_matrix, write_labels, LabelVector,
};
use langtail::eval::{confusion, match_and_score, prototype_transfer, render_tail_tsv, summary_line, write_report_tsv};
use langtail::synth::write_corpus;
use langtail::train::{
    build_bank, infer_scenes, initial_backbone, read_checkpoint, run_pipeline, write_bank_outputs, ClusterModel,
};
use ndarray::{concatenate, Axis};

use crate::config::{is_bool_key, normalize_key, RunConfig};
use crate::CliError;

const COMMANDS: [&str; 6] = ["synth", "bank", "train", "eval", "transfer", "report"];

/// Parses `args` (subcommand first) and runs the subcommand.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let cmd = args.first().ok_or_else(|| CliError::Usage("missing command".into()))?;
    if !COMMANDS.contains(&cmd.as_str()) {
        return Err(CliError::Usage(format!("unknown command {cmd:?}")));
    }
    let cfg = parse_args(&args[1..])?;
    match cmd.as_str() {
        "synth" => synth(&cfg),
        "bank" => bank(&cfg),
        "train" => train(&cfg),
        "eval" => eval(&cfg),
        "transfer" => transfer(&cfg),
        _ => report(&cfg),
    }
}

fn parse_args(args: &[String]) -> Result<RunConfig, CliError> {
    let mut flags = Vec::new();
    let mut config_file = None;
    let mut i = 0;
    while i < args.len() {
        let raw =
            args[i].strip_prefix("--").ok_or_else(|| CliError::Usage(format!("unexpected argument {:?}", args[i])))?;
        let (key, inline) = match raw.split_once('=') {
            Some((k, v)) => (normalize_key(k), Some(v.to_string())),
            None => (normalize_key(raw), None),
        };
        let next_is_value = args.get(i + 1).is_some_and(|a| !a.starts_with("--"));
        let value = match inline {
            Some(v) => v,
            None if is_bool_key(&key) && !next_is_value => "true".to_string(),
            None if next_is_value => {
                i += 1;
                args[i].clone()
            }
            None => return Err(CliError::Usage(format!("--{raw} needs a value"))),
        };
        if key == "config" {
            config_file = Some(PathBuf::from(value));
        } else {
            flags.push((key, value));
        }
        i += 1;
    }
    let mut cfg = RunConfig::default();
    if let Some(f) = config_file {
        cfg.apply_file(&f)?;
    }
    for (k, v) in flags {
        cfg.set(&k, &v, None).map_err(|e| e.context(&format!("--{k}")))?;
    }
    Ok(cfg)
}

fn required<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a Path, CliError> {
    cfg.path(key).ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = required(cfg, "out")?.to_path_buf();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Core(langtail::Error::Data(format!("cannot create {}: {e}", out.display()))))?;
    std::fs::write(out.join("config.resolved"), cfg.render())
        .map_err(|e| CliError::Core(langtail::Error::Data(format!("cannot write config.resolved: {e}"))))?;
    Ok(out)
}

fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.synth.validate()?;
    let out = create_out(cfg)?;
    let corpus = write_corpus(&cfg.synth, &out)?;
    log::info!("wrote {} scenes and {} entities to {}", corpus.scenes.len(), corpus.entities.len(), out.display());
    Ok(())
}

fn bank(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.train.validate()?;
    let corpus = required(cfg, "corpus")?;
    let bank_dir = cfg.path("bank").map(Path::to_path_buf).unwrap_or_else(|| corpus.join("bank"));
    let scenes = read_corpus_scenes(corpus)?;
    let entities = read_entity_bank(&bank_dir)?;
    let backbone = match cfg.path("checkpoint") {
        Some(p) => read_checkpoint(p)?.backbone,
        None => {
            let cols = scenes.first().map(|s| s.points.cols()).unwrap_or(0);
            initial_backbone(&cfg.train, cols)?
        }
    };
    let out = create_out(cfg)?;
    let bank = build_bank(&backbone, &scenes, &entities, &cfg.train)?;
    write_bank_outputs(&out, &bank, &entities)?;
    let trace = &bank.alignment_loss_trace;
    log::info!(
        "aligned {} entities: loss {:e} -> {:e}",
        bank.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.train.validate()?;
    let corpus = required(cfg, "corpus")?;
    let out = create_out(cfg)?;
    let run = run_pipeline(&cfg.train, corpus, cfg.path("bank"), &out)?;
    if let Some(r) = &run.report {
        log::info!("{}", summary_line(r));
    }
    Ok(())
}

/// Explicit `out`, else the directory holding the predictions.
fn report_dir(cfg: &RunConfig, pred: &Path) -> Result<PathBuf, CliError> {
    let dir = match cfg.path("out") {
        Some(p) => p.to_path_buf(),
        None => pred.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Core(langtail::Error::Data(format!("cannot create {}: {e}", dir.display()))))?;
    }
    Ok(dir)
}

fn scored(cfg: &RunConfig) -> Result<(langtail::eval::EvalReport, langtail::eval::ConfusionMatrix, PathBuf), CliError> {
    let pred_path = required(cfg, "pred")?;
    let pred = read_labels(pred_path)?;
    let gt = read_labels(required(cfg, "gt")?)?;
    let cm = confusion(&pred, &gt)?;
    let report = match_and_score(&cm, cfg.train.unmatched)?;
    Ok((report, cm, report_dir(cfg, pred_path)?))
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (report, cm, dir) = scored(cfg)?;
    write_report_tsv(dir.join("report.tsv"), &report)?;
    write_feature_matrix(dir.join("confusion.ltfm"), &cm.to_feature_matrix()?)?;
    log::info!("{} ({} unmatched)", summary_line(&report), cfg.train.unmatched);
    Ok(())
}

fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let (report, _, dir) = scored(cfg)?;
    let path = dir.join("tail.tsv");
    std::fs::write(&path, render_tail_tsv(&report))
        .map_err(|e| CliError::Core(langtail::Error::Data(format!("cannot write {}: {e}", path.display()))))?;
    Ok(())
}

fn transfer(cfg: &RunConfig) -> Result<(), CliError> {
    let ck = read_checkpoint(required(cfg, "checkpoint")?)?;
    let corpus = required(cfg, "corpus")?;
    let scenes = read_corpus_scenes(corpus)?;
    let out = create_out(cfg)?;
    let feats = infer_scenes(&ck.backbone, &scenes, cfg.train.threads)?;
    let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
    let target = concatenate(Axis(0), &views).map_err(|e| langtail::Error::Shape(e.to_string()))?;
    let mut models: Vec<&ClusterModel> = vec![&ck.local];
    models.extend(ck.global.as_ref());
    let pred = prototype_transfer(&models, target.view())?;
    write_labels(out.join("pred.ltlb"), &pred)?;
    if scenes.iter().all(|s| s.gt_labels.is_some()) {
        let gt: Vec<i32> =
            scenes.iter().flat_map(|s| s.gt_labels.as_ref().unwrap().as_slice().iter().copied()).collect();
        let report = match_and_score(&confusion(&pred, &LabelVector::new(gt)?)?, cfg.train.unmatched)?;
        write_report_tsv(out.join("report.tsv"), &report)?;
        log::info!("{}", summary_line(&report));
    }
    Ok(())
}
