//! The pipeline stages behind each subcommand.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! cleaned/<stem>_train.csv, cleaned/<stem>_test.csv
//! jsonl/<stem>_train.jsonl
//! registry.toml
//! predictions/predictions_<stem>.csv
//! metrics_by_repo.csv, confusion_by_repo.csv
//! ```
//!
//! `<stem>` is the repository name with `/` replaced by `_`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use triage_core::classify::{
    classify_repo, read_predictions_csv, train_baseline, write_predictions_csv, Backend, Engine,
};
use triage_core::corpus::{load_csv, repo_file_stem, segment_by_repo, ColumnNames, RepoSplit, Role};
use triage_core::gateway::{Gateway, JobStatus};
use triage_core::metrics::{overall_line, overall_report, render_tables, repo_reports};
use triage_core::promptgen::{build_training_example, to_jsonl, PromptOptions};
use triage_core::registry::ModelRegistry;
use triage_core::textclean::{clean_all, CleanedIssue, CleaningMethod};
use triage_core::{Execution, Prediction};

use crate::config::PipelineConfig;
use crate::ValidationError;

pub struct Context {
    pub config: PipelineConfig,
    pub exec: Execution,
}

impl Context {
    fn out(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.config.output_dir.clone(), |p, part| p.join(part))
    }

    fn cleaned_path(&self, repo: &str, role: Role) -> PathBuf {
        let side = match role {
            Role::Train => "train",
            Role::Test => "test",
        };
        self.out(&["cleaned", &format!("{}_{side}.csv", repo_file_stem(repo))])
    }

    fn jsonl_path(&self, repo: &str) -> PathBuf {
        self.out(&["jsonl", &format!("{}_train.jsonl", repo_file_stem(repo))])
    }

    fn predictions_dir(&self) -> PathBuf {
        self.out(&["predictions"])
    }

    fn repos(&self) -> impl Iterator<Item = &str> {
        self.config.repos.keys().map(String::as_str)
    }

    fn prompt(&self) -> PromptOptions {
        PromptOptions { system_message: self.config.prompt.system_message.clone() }
    }

    fn gateway(&self) -> Result<Gateway> {
        let cfg = self.config.gateway_config()?;
        if cfg.api_key.is_none() {
            log::warn!("{} is not set; requests are sent without credentials", self.config.gateway.api_key_env);
        }
        Ok(Gateway::new(cfg)?)
    }
}

pub fn predictions_file_name(repo: &str) -> String {
    format!("predictions_{}.csv", repo_file_stem(repo))
}

/// Writes through a temporary sibling and renames, so a failed run never
/// leaves a truncated file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn cleaned_csv(rows: &[CleanedIssue]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["repository", "label", "title_clean", "body_clean", "method"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn read_cleaned(path: &Path) -> Result<Vec<CleanedIssue>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}; run `clean` first", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| ValidationError(format!("{} row {}: {e}", path.display(), i + 1)).into()))
        .collect()
}

fn load_splits(ctx: &Context) -> Result<Vec<RepoSplit>> {
    let data = &ctx.config.data;
    if data.train_csv.is_none() && data.test_csv.is_none() {
        bail!(ValidationError("config: set data.train_csv and/or data.test_csv".into()));
    }
    let columns = ColumnNames::from(&data.columns);
    let mut splits = Vec::new();
    for (role, path) in [(Role::Train, &data.train_csv), (Role::Test, &data.test_csv)] {
        if let Some(path) = path {
            let records = load_csv(path, &columns).with_context(|| format!("loading {}", path.display()))?;
            segment_by_repo(&mut splits, records, role);
        }
    }
    for s in &splits {
        ctx.config.repo(&s.repository)?;
    }
    Ok(splits)
}

/// Cleans every configured repository's train and test rows.
pub fn clean(ctx: &Context, method_override: Option<CleaningMethod>) -> Result<()> {
    let splits = load_splits(ctx)?;
    let data = &ctx.config.data;
    let empty = RepoSplit::new("");
    for repo in ctx.repos() {
        let split = splits.iter().find(|s| s.repository == repo).unwrap_or(&empty);
        let method = method_override.unwrap_or(ctx.config.repo(repo)?.cleaning_method);
        let cleaning = ctx.config.cleaning_config(method)?;
        let mut counts = Vec::new();
        for (role, present) in [(Role::Train, data.train_csv.is_some()), (Role::Test, data.test_csv.is_some())] {
            if !present {
                continue;
            }
            let rows = clean_all(split.side(role), &cleaning, ctx.exec);
            if rows.is_empty() {
                log::warn!("{repo}: no {} rows", if role == Role::Train { "train" } else { "test" });
            }
            write_atomic(&ctx.cleaned_path(repo, role), &cleaned_csv(&rows)?)?;
            counts.push(format!("{} {}", if role == Role::Train { "train" } else { "test" }, rows.len()));
        }
        println!("{repo}: cleaned with {}: {}", method.as_str(), counts.join(", "));
    }
    Ok(())
}

/// Writes one chat-format training file per repository.
pub fn prepare(ctx: &Context) -> Result<()> {
    let prompt = ctx.prompt();
    for repo in ctx.repos() {
        let rows = read_cleaned(&ctx.cleaned_path(repo, Role::Train))?;
        if rows.is_empty() {
            log::warn!("{repo}: no training rows, no training file written");
            continue;
        }
        let examples: Vec<_> = rows.iter().map(|r| build_training_example(r, &prompt)).collect();
        let path = ctx.jsonl_path(repo);
        write_atomic(&path, to_jsonl(&examples)?.as_bytes())?;
        println!("{repo}: {} lines -> {}", examples.len(), path.display());
    }
    Ok(())
}

fn save_registry(ctx: &Context, reg: &ModelRegistry) -> Result<()> {
    write_atomic(&ctx.config.registry_path(), reg.to_toml().as_bytes())
}

/// Uploads training files, starts one job per repository that has no model
/// yet, waits for all of them and records the resulting model ids.
pub fn finetune(ctx: &Context) -> Result<()> {
    let mut reg = ctx.config.effective_registry()?;
    let gw = ctx.gateway()?;
    let base_model = &ctx.config.gateway.base_model;
    let mut jobs = Vec::new();
    let mut failed = Vec::new();

    for repo in ctx.repos() {
        let entry = reg.get(repo)?;
        if let Some(id) = &entry.model_id {
            println!("{repo}: already fine-tuned as {id}, skipping");
            continue;
        }
        if read_cleaned(&ctx.cleaned_path(repo, Role::Train))?.is_empty() {
            log::warn!("{repo}: no training rows, skipping");
            continue;
        }
        let path = ctx.jsonl_path(repo);
        if !path.exists() {
            bail!("{repo}: {} not found; run `prepare` first", path.display());
        }
        let started =
            gw.upload_training_file(&path).and_then(|file_id| gw.create_finetune(&file_id, base_model, entry.epochs));
        match started {
            Ok(job) => {
                println!("{repo}: job {} started on {} (epochs {})", job.job_id, job.training_file_id, entry.epochs);
                jobs.push((repo, job));
            }
            Err(e) if e.is_systemic() => return Err(e).context(format!("{repo}: cannot start fine-tune")),
            Err(e) => {
                eprintln!("{repo}: cannot start fine-tune: {e}");
                failed.push(repo);
            }
        }
    }

    for (repo, job) in jobs {
        match gw.poll_until_done(&job) {
            Ok(done) if done.status == JobStatus::Succeeded => {
                let id = done.fine_tuned_model_id.expect("succeeded jobs carry a model id");
                println!("{repo}: {} succeeded -> {id}", done.job_id);
                reg.set_model_id(repo, id)?;
                save_registry(ctx, &reg)?;
            }
            Ok(done) => {
                eprintln!("{repo}: job {} ended {}", done.job_id, done.status);
                failed.push(repo);
            }
            Err(e) => {
                eprintln!("{repo}: lost track of job {}: {e}", job.job_id);
                failed.push(repo);
            }
        }
    }

    if !ctx.config.registry_path().exists() {
        save_registry(ctx, &reg)?;
    }
    if !failed.is_empty() {
        bail!("fine-tuning failed for {}", failed.join(", "));
    }
    Ok(())
}

/// Classifies every repository's test split, writes predictions and tables.
pub fn evaluate(ctx: &Context, engine: Engine) -> Result<()> {
    let reg = ctx.config.effective_registry()?;
    let gateway = match engine {
        Engine::FineTuned => Some(ctx.gateway()?),
        Engine::Baseline => None,
    };
    let prompt = ctx.prompt();
    let workers = ctx.config.gateway.max_parallel_requests;
    let mut groups = Vec::new();
    let mut gateway_failures = 0;

    for repo in ctx.repos() {
        let entry = reg.get(repo)?;
        let test = read_cleaned(&ctx.cleaned_path(repo, Role::Test))?;
        if test.is_empty() {
            log::warn!("{repo}: no test rows, skipping");
            continue;
        }
        if let Some(row) = test.iter().find(|r| r.method != entry.cleaning_method) {
            bail!(ValidationError(format!(
                "{repo}: test split was cleaned with {} but the repository uses {}; rerun `clean`",
                row.method.as_str(),
                entry.cleaning_method.as_str()
            )));
        }
        let model;
        let backend = match &gateway {
            Some(gw) => {
                if entry.model_id.is_none() {
                    bail!("{repo}: no fine-tuned model; run `finetune` first or use --engine baseline");
                }
                Backend::FineTuned { client: gw, prompt: &prompt }
            }
            None => {
                let train = read_cleaned(&ctx.cleaned_path(repo, Role::Train))?;
                model =
                    train_baseline(&train, ctx.config.baseline.alpha).with_context(|| format!("{repo}: baseline"))?;
                Backend::Baseline(&model)
            }
        };
        let run = classify_repo(repo, &test, &reg, &backend, ctx.exec, workers)?;
        let path = ctx.predictions_dir().join(predictions_file_name(repo));
        fs::create_dir_all(ctx.predictions_dir())?;
        write_predictions_csv(&run.predictions, &path)?;
        let correct = run.predictions.iter().filter(|p| p.is_correct()).count();
        println!("{repo}: {correct}/{} correct -> {}", run.predictions.len(), path.display());
        if let Some(problem) = run.systemic_failure {
            bail!(GatewayFailure(format!("{repo}: {problem}")));
        }
        gateway_failures += run.gateway_failures;
        groups.push((repo.to_string(), run.predictions));
    }

    if gateway_failures > 0 {
        log::warn!("{gateway_failures} requests failed after retries and count as unparsed responses");
    }
    write_tables(ctx, &groups, &reg)
}

#[derive(Debug, thiserror::Error)]
#[error("systemic gateway failure, stopping: {0}")]
pub struct GatewayFailure(String);

/// Recomputes the tables from saved prediction files.
pub fn report(ctx: &Context, predictions_dir: Option<&Path>) -> Result<()> {
    let dir = predictions_dir.map(Path::to_path_buf).unwrap_or_else(|| ctx.predictions_dir());
    let mut groups = Vec::new();
    for repo in ctx.repos() {
        let path = dir.join(predictions_file_name(repo));
        if !path.exists() {
            log::warn!("{repo}: no predictions at {}", path.display());
            continue;
        }
        let preds: Vec<Prediction> =
            read_predictions_csv(&path).with_context(|| format!("reading {}", path.display()))?;
        groups.push((repo.to_string(), preds));
    }
    if groups.is_empty() {
        bail!("no prediction files in {}; run `evaluate` first", dir.display());
    }
    write_tables(ctx, &groups, &ctx.config.effective_registry()?)
}

fn write_tables(ctx: &Context, groups: &[(String, Vec<Prediction>)], reg: &ModelRegistry) -> Result<()> {
    if groups.is_empty() {
        bail!("nothing was evaluated");
    }
    let reports = repo_reports(groups, ctx.exec)?;
    let overall = overall_report(&reports)?;
    let tables = render_tables(&reports, &overall, Some(reg));
    write_atomic(&ctx.out(&["metrics_by_repo.csv"]), tables.metrics_csv.as_bytes())?;
    write_atomic(&ctx.out(&["confusion_by_repo.csv"]), tables.confusion_csv.as_bytes())?;
    println!("{}", tables.metrics_text);
    println!("{}", tables.confusion_text);
    println!("{}", overall_line(&overall));
    Ok(())
}
