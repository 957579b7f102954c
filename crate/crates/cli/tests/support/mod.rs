//! Runs the `issue-triage` binary against throwaway workspaces.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use triage_core::corpus::IssueRecord;

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8(o.stdout).expect("stdout is UTF-8"),
            stderr: String::from_utf8(o.stderr).expect("stderr is UTF-8"),
        }
    }
}

/// One `[repos."..."]` section: name, cleaning method, epochs.
pub type RepoSpec<'a> = (&'a str, &'a str, u32);

impl Workspace {
    pub fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("pipeline.toml")
    }

    /// Writes a config for `repos` pointing at train.csv / test.csv in the
    /// workspace, with fast polling. `extra` is appended verbatim.
    pub fn write_config(&self, repos: &[RepoSpec], extra: &str) {
        let mut text = String::from(
            "output_dir = \"out\"\n\n[data]\ntrain_csv = \"train.csv\"\ntest_csv = \"test.csv\"\n\n\
             [gateway]\nbase_url = \"http://127.0.0.1:9\"\napi_key_env = \"TRIAGE_TEST_KEY\"\n\
             poll_interval_secs = 0.01\nmax_retries = 1\nmax_parallel_requests = 4\n\n",
        );
        for (repo, method, epochs) in repos {
            text.push_str(&format!("[repos.\"{repo}\"]\ncleaning_method = \"{method}\"\nepochs = {epochs}\n\n"));
        }
        text.push_str(extra);
        std::fs::write(self.config_path(), text).unwrap();
    }

    pub fn write_issues(&self, name: &str, records: &[IssueRecord]) {
        let mut w = csv::Writer::from_path(self.path(name)).unwrap();
        w.write_record(["repository", "label", "title", "body"]).unwrap();
        for r in records {
            w.write_record([r.repository.as_str(), r.label.as_str(), &r.title, &r.body]).unwrap();
        }
        w.flush().unwrap();
    }

    pub fn run(&self, args: &[&str]) -> Run {
        self.run_env(args, &[])
    }

    pub fn run_env(&self, args: &[&str], env: &[(&str, &str)]) -> Run {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_issue-triage"));
        cmd.arg("--config").arg(self.config_path()).args(args).env_remove("TRIAGE_TEST_KEY");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().expect("binary runs").into()
    }

    pub fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn exists(&self, rel: &str) -> bool {
        Path::exists(&self.path(rel))
    }
}

impl Run {
    #[track_caller]
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout:\n{}\nstderr:\n{}", self.stdout, self.stderr);
        self
    }
}

/// Parses metrics_by_repo.csv into (repository, label, p, r, f1) rows.
pub fn metric_rows(csv_text: &str) -> Vec<(String, String, f64, f64, f64)> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.records()
        .map(|row| {
            let row = row.unwrap();
            let num = |i: usize| row[i].parse::<f64>().unwrap();
            (row[0].to_string(), row[3].to_string(), num(4), num(5), num(6))
        })
        .collect()
}
