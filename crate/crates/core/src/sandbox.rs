//! Run one external command in a private temporary directory with a
//! wall-clock limit. Output goes to files in that directory so a chatty
//! child cannot block on a full pipe.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_SECS: f64 = 5.0;

/// How a command ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    /// `None` when killed by a signal or by the timeout.
    pub code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.code == Some(0)
    }
}

/// Split a command template into argv, substituting `{file}`.
pub fn expand_template(template: &str, file: &Path) -> Result<Vec<String>> {
    let words = shlex::split(template)
        .ok_or_else(|| Error::Config(format!("unbalanced quotes in command `{template}`")))?;
    if words.is_empty() {
        return Err(Error::Config("empty command template".into()));
    }
    let file = file.to_string_lossy();
    Ok(words.into_iter().map(|w| w.replace("{file}", &file)).collect())
}

/// Run `argv` inside `dir`. The child sees a minimal environment: `PATH`,
/// `HOME` pointed at `dir`, and nothing else.
pub fn run_in(dir: &Path, argv: &[String], timeout: Duration) -> Result<RunOutput> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| Error::SandboxFailure("empty command".into()))?;
    let out_path = dir.join(".stdout");
    let err_path = dir.join(".stderr");
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(dir)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", dir)
        .stdin(Stdio::null())
        .stdout(fs::File::create(&out_path)?)
        .stderr(fs::File::create(&err_path)?);
    let mut child = cmd
        .spawn()
        .map_err(|e| Error::SandboxFailure(format!("cannot start `{program}`: {e}")))?;
    let status = child
        .wait_timeout(timeout)
        .map_err(|e| Error::SandboxFailure(e.to_string()))?;
    let (code, timed_out) = match status {
        Some(s) => (s.code(), false),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            (None, true)
        }
    };
    let read = |p: &PathBuf| fs::read(p).map(|b| String::from_utf8_lossy(&b).into_owned());
    Ok(RunOutput {
        code,
        timed_out,
        stdout: read(&out_path)?,
        stderr: read(&err_path)?,
    })
}

/// Write `files` into a fresh temporary directory and run `argv` there.
pub fn run_with_files(files: &[(&str, &str)], argv: &[String], timeout: Duration) -> Result<RunOutput> {
    let dir = tempfile::tempdir()?;
    for (name, body) in files {
        fs::write(dir.path().join(name), body)?;
    }
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.replace("{dir}", &dir.path().to_string_lossy()))
        .collect();
    run_in(dir.path(), &argv, timeout)
}

/// Whether `program` can be started at all.
pub fn available(program: &str) -> bool {
    Command::new(program)
        .arg("--version")
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .is_ok()
}

/// A command with a limit, as stored in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandSpec {
    /// Shell-quoted argv with a `{file}` placeholder.
    pub template: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

impl CommandSpec {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn captures_output_and_status() {
        let out = run_with_files(&[("x.txt", "hi")], &sh("cat x.txt; echo oops >&2; exit 3"), Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout, "hi");
        assert_eq!(out.stderr.trim(), "oops");
        assert_eq!(out.code, Some(3));
        assert!(!out.success());
    }

    #[test]
    fn timeout_kills_the_child() {
        let t = std::time::Instant::now();
        let out = run_with_files(&[], &sh("sleep 10"), Duration::from_millis(200)).unwrap();
        assert!(out.timed_out);
        assert!(t.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn templates_substitute_the_file() {
        let argv = expand_template("python3 -m py_compile '{file}'", Path::new("/t/a b.py")).unwrap();
        assert_eq!(argv, ["python3", "-m", "py_compile", "/t/a b.py"]);
        assert!(expand_template("  ", Path::new("x")).is_err());
        assert!(expand_template("a 'b", Path::new("x")).is_err());
    }

    #[test]
    fn missing_program_is_a_sandbox_failure() {
        let err = run_with_files(&[], &["definitely-not-a-program-xyz".into()], Duration::from_secs(1)).unwrap_err();
        assert!(matches!(err, Error::SandboxFailure(_)));
    }
}
