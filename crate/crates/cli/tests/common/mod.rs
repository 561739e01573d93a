//! A live server on an ephemeral port and a way to run the `saturn`
//! binary against it with a clean environment.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use saturn_core::platform::{Background, Platform, PlatformConfig};
use serde_json::Value;
use tempfile::TempDir;

pub const ADMIN_TOKEN: &str = "admin-token-0001";

pub struct Harness {
    pub platform: Arc<Platform>,
    pub addr: SocketAddr,
    /// Stands in for `$HOME`; the config dir lives under it.
    pub home: TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    server: Option<std::thread::JoinHandle<()>>,
    _background: Background,
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    #[track_caller]
    pub fn ok(self) -> String {
        assert_eq!(self.code, 0, "command failed: {}", self.stderr);
        self.stdout
    }
}

impl Harness {
    pub fn start() -> Self {
        Self::with_config(PlatformConfig::default())
    }

    pub fn with_config(mut config: PlatformConfig) -> Self {
        config.data_dir = None;
        config.serve.tokens = vec![format!("admin={ADMIN_TOKEN}")];
        config.governance.admins = vec!["admin".into()];
        let platform = Platform::open(config).unwrap();
        let background = platform.start();

        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let p = platform.clone();
        let server = std::thread::spawn(move || {
            rt.block_on(saturn_server::serve(listener, p, async {
                let _ = stopped.await;
            }))
            .unwrap();
        });
        Self {
            platform,
            addr,
            home: tempfile::tempdir().unwrap(),
            stop: Some(stop),
            server: Some(server),
            _background: background,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn config_dir(&self) -> PathBuf {
        self.home.path().join(".config")
    }

    /// A `saturn` process with no inherited Saturn settings.
    pub fn bare(&self) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_saturn"));
        cmd.env_remove("SATURN_URL")
            .env_remove("SATURN_TOKEN")
            .env("HOME", self.home.path())
            .env("XDG_CONFIG_HOME", self.config_dir());
        cmd
    }

    /// Runs `saturn` as the admin against this server.
    pub fn saturn(&self, args: &[&str]) -> Run {
        let mut cmd = self.bare();
        cmd.env("SATURN_URL", self.url()).env("SATURN_TOKEN", ADMIN_TOKEN).args(args);
        run(cmd)
    }

    /// The raw body of a direct API call as the admin.
    pub fn http(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Vec<u8>) {
        let client = reqwest::blocking::Client::new();
        let mut req = client
            .request(method.parse().unwrap(), format!("{}{path}", self.url()))
            .bearer_auth(ADMIN_TOKEN);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().unwrap();
        (resp.status().as_u16(), resp.bytes().unwrap().to_vec())
    }

    pub fn json(&self, method: &str, path: &str, body: Option<Value>) -> Value {
        let (status, bytes) = self.http(method, path, body);
        assert!((200..300).contains(&status), "{method} {path}: {status} {}", String::from_utf8_lossy(&bytes));
        serde_json::from_slice(&bytes).unwrap()
    }

    /// Polls a run until it leaves the queue and its worker finishes.
    pub fn wait_for_run(&self, run_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let run = self.json("GET", &format!("/v1/pipeline/runs/{run_id}"), None);
            if matches!(run["status"].as_str(), Some("succeeded" | "failed")) {
                return run;
            }
            assert!(Instant::now() < deadline, "run {run_id} did not finish: {run}");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(server) = self.server.take() {
            let _ = server.join();
        }
    }
}

pub fn run(mut cmd: Command) -> Run {
    let out = cmd.output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Writes a file under `dir` and returns its path as a string.
pub fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

/// Token corpus and labelled probe for a two-topic pretraining run.
pub const CORPUS: &str = "river boat water fish\nstock bank loan rate\nboat shore sail water\nfund debt bank stock\nfish river shore boat\nrate loan fund debt\n";

pub fn probe() -> String {
    let rows = [
        "river boat water fish",
        "boat shore sail water",
        "rate loan fund debt",
        "stock bank loan rate",
    ];
    (0..24)
        .map(|i| {
            let label = u8::from(i % 4 < 2);
            let group = if i % 2 == 0 { "A" } else { "B" };
            format!("{label}\t{group}\t{}\n", rows[i % 4])
        })
        .collect()
}

/// Separable two-feature classification rows.
pub fn labelled(offset: f64) -> String {
    (0..24)
        .map(|i| {
            let group = if (i / 2) % 2 == 0 { "A" } else { "B" };
            let jitter = f64::from(i % 5) * 0.1;
            if i % 2 == 0 {
                format!("1\t{group}\tvec:{:.1},{:.1}\n", 1.0 + jitter + offset, 0.5 + offset)
            } else {
                format!("0\t{group}\tvec:{:.1},{:.1}\n", -1.0 - jitter - offset, -0.6 - offset)
            }
        })
        .collect()
}

/// Trains a pretrained base and a fine-tuned classifier through the CLI,
/// returning `(model_id, base_version, tuned_version)`.
pub fn train(h: &Harness, dir: &Path) -> (String, String, String) {
    let model: Value = serde_json::from_str(
        &h.saturn(&["--output", "json", "model", "register", "--name", "credit", "--modality", "tabular"]).ok(),
    )
    .unwrap();
    let model_id = model["model_id"].as_str().unwrap().to_string();

    write(dir, "corpus.txt", CORPUS);
    write(dir, "probe.tsv", &probe());
    write(dir, "train.tsv", &labelled(0.0));
    write(dir, "holdout.tsv", &labelled(0.2));
    let pretrain = write(
        dir,
        "pretrain.spec",
        &format!(
            "task = pretrain\nmodel_id = {model_id}\ndataset = corpus.txt\nvalidation = probe.tsv\nk = 2\nseed = 7\n\
             gate.min_accuracy = 0\ngate.min_auc = 0\ngate.max_fairness_dpd = 1\n"
        ),
    );
    let run = h.saturn(&["pipeline", "trigger", "--kind", "commit", "--ref", "c0ffee1", "--spec", &pretrain]).ok();
    let base = h.wait_for_run(run.trim());
    assert_eq!(base["status"], "succeeded", "{base}");
    let base = base["produced_version"].as_str().unwrap().to_string();

    let finetune = write(
        dir,
        "finetune.spec",
        &format!(
            "task = finetune\nmodel_id = {model_id}\nparent_version = {base}\ndataset = train.tsv\nvalidation = holdout.tsv\n"
        ),
    );
    let run = h.saturn(&["pipeline", "trigger", "--kind", "commit", "--ref", "c0ffee2", "--spec", &finetune]).ok();
    let tuned = h.wait_for_run(run.trim());
    assert_eq!(tuned["status"], "succeeded", "{tuned}");
    (model_id, base, tuned["produced_version"].as_str().unwrap().to_string())
}
