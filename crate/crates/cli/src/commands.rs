//! One function per command: validate locally, make the API call, print.
//!
//! Local validation reuses the platform's own parsers and validators, so
//! anything rejected here would also have been rejected by the server.
//! Nothing is sent when validation fails.

use std::io::Write;
use std::path::{Path, PathBuf};

use reqwest::Method;
use saturn_core::embedfarm::{validate_collection_name, MAX_KEY_BYTES};
use saturn_core::feedback::{validate_ranking, Candidate, NewRanking};
use saturn_core::orchestrator::{TrainingSpec, TriggerKind, TriggerRequest};
use saturn_core::registry::ValidationReport;
use saturn_core::serving::validate_route;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::{Command, EmbCmd, FeedbackCmd, ModelCmd, MonitorCmd, PipelineCmd, SearchModeArg, ServeCmd};
use crate::client::{segment, Api, Body};
use crate::config::OutputFormat;
use crate::error::CliError;
use crate::table::{cell, fields, num, render};

type Out<'a> = &'a mut dyn Write;

pub fn run(api: &Api, command: Command, out: Out, err: Out) -> Result<(), CliError> {
    match command {
        Command::Model(c) => model(api, c, out),
        Command::Emb(c) => emb(api, c, out),
        Command::Pipeline(c) => pipeline(api, c, out, err),
        Command::Monitor(c) => monitor(api, c, out),
        Command::Feedback(c) => feedback(api, c, out),
        Command::Serve(c) => serve(api, c, out),
    }
}

/// Prints an API body: unchanged in JSON mode, through `table` otherwise.
fn emit(api: &Api, out: Out, body: &[u8], table: impl FnOnce(&Value) -> String) -> Result<(), CliError> {
    match api.config().output {
        OutputFormat::Json => out.write_all(body)?,
        OutputFormat::Table => {
            let v: Value = serde_json::from_slice(body)
                .map_err(|e| CliError::Transport(format!("response is not JSON: {e}")))?;
            out.write_all(table(&v).as_bytes())?;
        }
    }
    Ok(())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn rows(v: &Value, f: impl Fn(&Value) -> Vec<String>) -> Vec<Vec<String>> {
    v.as_array().map(|a| a.iter().map(f).collect()).unwrap_or_default()
}

fn short_digest(v: &Value) -> String {
    let s = cell(v);
    s.chars().take(12).collect()
}

pub fn parse_floats<T>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: std::str::FromStr + Into<f64> + Copy,
{
    if s.trim().is_empty() {
        return Err(usage(format!("{what} is empty")));
    }
    s.split(',')
        .map(|part| {
            let x: T = part
                .trim()
                .parse()
                .map_err(|_| usage(format!("{what}: {:?} is not a number", part.trim())))?;
            if !x.into().is_finite() {
                return Err(usage(format!("{what}: {:?} is not finite", part.trim())));
            }
            Ok(x)
        })
        .collect()
}

fn validate_key(key: &str) -> Result<(), CliError> {
    if key.is_empty() || key.len() > MAX_KEY_BYTES {
        return Err(usage(format!("key must be 1..={MAX_KEY_BYTES} bytes")));
    }
    Ok(())
}

fn model(api: &Api, cmd: ModelCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        ModelCmd::Register { name, modality } => {
            if name.trim().is_empty() {
                return Err(usage("model name is empty"));
            }
            let body = api.post("/v1/models", json!({ "name": name, "modality": modality }))?;
            emit(api, out, &body, |v| {
                fields(&[
                    ("model_id", cell(&v["model_id"])),
                    ("name", cell(&v["name"])),
                    ("modality", cell(&v["modality"])),
                    ("owner", cell(&v["owner"])),
                ])
            })
        }
        ModelCmd::List => {
            let body = api.get("/v1/models")?;
            emit(api, out, &body, |v| {
                render(
                    &["MODEL", "NAME", "MODALITY", "OWNER"],
                    &rows(v, |m| vec![cell(&m["model_id"]), cell(&m["name"]), cell(&m["modality"]), cell(&m["owner"])]),
                )
            })
        }
        ModelCmd::Promote { version, to, report } => {
            let report = match report {
                Some(path) => {
                    let text = read_text(&path)?;
                    let r: ValidationReport = serde_json::from_str(&text)
                        .map_err(|e| usage(format!("{}: not a validation report: {e}", path.display())))?;
                    Some(r)
                }
                None => None,
            };
            let mut req = json!({ "to": to });
            if let Some(r) = report {
                req["report"] = to_json(&r);
            }
            let body = api.post(&format!("/v1/versions/{}/transition", segment(&version)), req)?;
            emit(api, out, &body, |v| format!("{}  {}\n", cell(&v["version_id"]), cell(&v["stage"])))
        }
        ModelCmd::Lineage { version } => {
            let body = api.get(&format!("/v1/versions/{}/lineage", segment(&version)))?;
            emit(api, out, &body, |v| {
                render(
                    &["VERSION", "STAGE", "PARENT", "ARTIFACT"],
                    &rows(v, |m| {
                        vec![
                            cell(&m["version_id"]),
                            cell(&m["stage"]),
                            cell(&m["parent_version"]),
                            short_digest(&m["artifact_digest"]),
                        ]
                    }),
                )
            })
        }
    }
}

fn collection_path(name: &str) -> Result<String, CliError> {
    validate_collection_name(name)?;
    Ok(format!("/v1/collections/{}", segment(name)))
}

fn collection_fields(v: &Value) -> String {
    fields(&[
        ("name", cell(&v["name"])),
        ("dim", cell(&v["dim"])),
        ("metric", cell(&v["metric"])),
        ("entries", cell(&v["entry_count"])),
        ("indexed", cell(&v["indexed"])),
    ])
}

fn emb(api: &Api, cmd: EmbCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        EmbCmd::Create { name, dim, metric } => {
            validate_collection_name(&name)?;
            if dim == 0 {
                return Err(usage("--dim must be positive"));
            }
            let body = api.post("/v1/collections", json!({ "name": name, "dim": dim, "metric": metric }))?;
            emit(api, out, &body, collection_fields)
        }
        EmbCmd::Put { collection, key, vector, tags } => {
            let base = collection_path(&collection)?;
            validate_key(&key)?;
            let vector: Vec<f32> = parse_floats(&vector.vector, "--vector")?;
            let body = api.call(
                Method::PUT,
                &format!("{base}/embeddings/{}", segment(&key)),
                Body::Json(json!({ "vector": vector, "tags": tags })),
            )?;
            emit(api, out, &body, |v| {
                let dim = v["vector"].as_array().map_or(0, Vec::len);
                format!("stored {} ({dim} dims)\n", cell(&v["key"]))
            })
        }
        EmbCmd::Get { collection, key } => {
            let base = collection_path(&collection)?;
            validate_key(&key)?;
            let body = api.get(&format!("{base}/embeddings/{}", segment(&key)))?;
            emit(api, out, &body, |v| {
                fields(&[("key", cell(&v["key"])), ("vector", cell(&v["vector"])), ("tags", cell(&v["tags"]))])
            })
        }
        EmbCmd::Search { collection, vector, k, tags, mode } => {
            let base = collection_path(&collection)?;
            let vector: Vec<f32> = parse_floats(&vector.vector, "--vector")?;
            let mode = match mode {
                SearchModeArg::Exact => "exact",
                SearchModeArg::Ann => "ann",
            };
            let body = api.post(
                &format!("{base}/search"),
                json!({ "vector": vector, "k": k, "tags": tags, "mode": mode }),
            )?;
            emit(api, out, &body, |v| {
                render(
                    &["RANK", "KEY", "SCORE"],
                    &rows(v, |r| vec![cell(&r["rank"]), cell(&r["key"]), num(&r["score"])]),
                )
            })
        }
        EmbCmd::Export { collection, out: path } => {
            let base = collection_path(&collection)?;
            let bytes = api.get(&format!("{base}/export"))?;
            std::fs::write(&path, &bytes)
                .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            match api.config().output {
                OutputFormat::Json => {
                    let summary = json!({ "collection": collection, "file": path, "bytes": bytes.len() });
                    writeln!(out, "{summary}")?;
                }
                OutputFormat::Table => writeln!(out, "exported {collection} ({} bytes) to {}", bytes.len(), path.display())?,
            }
            Ok(())
        }
        EmbCmd::Import { collection, file } => {
            let base = collection_path(&collection)?;
            let bytes = std::fs::read(&file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            let body = api.call(Method::PUT, &format!("{base}/import"), Body::Raw(bytes, "application/octet-stream"))?;
            emit(api, out, &body, collection_fields)
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Builds the trigger body, rejecting flag combinations the kind does not
/// take. Spec files that exist locally are parsed before anything is sent;
/// a path that does not exist here is passed through for the server to
/// resolve on its own host.
pub fn trigger_request(
    kind: TriggerKind,
    commit_ref: Option<String>,
    spec: Option<PathBuf>,
    inline: bool,
    id: Option<String>,
    event: Option<String>,
) -> Result<TriggerRequest, CliError> {
    let reject = |present: bool, flag: &str| {
        if present {
            Err(usage(format!("{flag} does not apply to {} triggers", to_json(&kind).as_str().unwrap_or("these"))))
        } else {
            Ok(())
        }
    };
    let mut req = TriggerRequest {
        kind: Some(kind),
        ..Default::default()
    };
    match kind {
        TriggerKind::Drift => {
            reject(commit_ref.is_some(), "--ref")?;
            reject(spec.is_some(), "--spec")?;
            reject(inline, "--inline")?;
            reject(id.is_some(), "--id")?;
            let event = event.ok_or_else(|| usage("drift triggers need --event"))?;
            if event.trim().is_empty() {
                return Err(usage("--event is empty"));
            }
            req.event_id = Some(event);
            return Ok(req);
        }
        TriggerKind::Commit => {
            reject(id.is_some(), "--id")?;
            reject(event.is_some(), "--event")?;
            let r = commit_ref.ok_or_else(|| usage("commit triggers need --ref"))?;
            if r.is_empty() || r.chars().any(char::is_whitespace) {
                return Err(usage("--ref must be non-empty without whitespace"));
            }
            req.commit_ref = Some(r);
        }
        TriggerKind::Manual => {
            reject(commit_ref.is_some(), "--ref")?;
            reject(event.is_some(), "--event")?;
            if let Some(id) = &id {
                if id.is_empty() || id.chars().any(char::is_whitespace) {
                    return Err(usage("--id must be non-empty without whitespace"));
                }
            }
            req.trigger_id = id;
        }
    }
    let path = spec.ok_or_else(|| usage("commit and manual triggers need --spec"))?;
    if inline {
        let text = read_text(&path)?;
        TrainingSpec::parse(&text, None)?;
        req.spec = Some(text);
    } else if path.exists() {
        TrainingSpec::from_file(&path)?;
        let abs = path.canonicalize()?;
        req.spec_path = Some(abs.to_string_lossy().into_owned());
    } else {
        req.spec_path = Some(path.to_string_lossy().into_owned());
    }
    Ok(req)
}

fn pipeline(api: &Api, cmd: PipelineCmd, out: Out, err: Out) -> Result<(), CliError> {
    match cmd {
        PipelineCmd::Trigger { kind, commit_ref, spec, inline, id, event } => {
            let req = trigger_request(kind, commit_ref, spec, inline, id, event)?;
            let body = api.post("/v1/pipeline/triggers", to_json(&req))?;
            let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            if v["duplicate"] == Value::Bool(true) {
                writeln!(
                    err,
                    "duplicate trigger {}: already mapped to {}",
                    cell(&v["trigger_id"]),
                    cell(&v["run_id"])
                )?;
            }
            emit(api, out, &body, |v| format!("{}\n", cell(&v["run_id"])))
        }
        PipelineCmd::Runs { kind, status } => {
            let mut query = Vec::new();
            if let Some(k) = kind {
                query.push(format!("kind={}", cell(&to_json(&k))));
            }
            if let Some(s) = status {
                query.push(format!("status={}", cell(&to_json(&s))));
            }
            let path = if query.is_empty() {
                "/v1/pipeline/runs".to_string()
            } else {
                format!("/v1/pipeline/runs?{}", query.join("&"))
            };
            let body = api.get(&path)?;
            emit(api, out, &body, |v| {
                render(
                    &["RUN", "KIND", "STATUS", "MODEL", "VERSION"],
                    &rows(v, |r| {
                        vec![
                            cell(&r["run_id"]),
                            cell(&r["trigger"]["kind"]),
                            cell(&r["status"]),
                            cell(&r["spec"]["model_id"]),
                            cell(&r["produced_version"]),
                        ]
                    }),
                )
            })
        }
        PipelineCmd::Show { run } => {
            let body = api.get(&format!("/v1/pipeline/runs/{}", segment(&run)))?;
            emit(api, out, &body, |v| {
                let mut s = fields(&[
                    ("run_id", cell(&v["run_id"])),
                    ("trigger", cell(&v["trigger"]["trigger_id"])),
                    ("kind", cell(&v["trigger"]["kind"])),
                    ("status", cell(&v["status"])),
                    ("rejected", cell(&v["rejected"])),
                    ("model", cell(&v["spec"]["model_id"])),
                    ("version", cell(&v["produced_version"])),
                    ("endpoint", cell(&v["endpoint_id"])),
                ]);
                s.push('\n');
                s.push_str(&render(
                    &["STAGE", "STATUS", "MESSAGE"],
                    &rows(&v["stages"], |st| vec![cell(&st["stage"]), cell(&st["status"]), cell(&st["message"])]),
                ));
                s
            })
        }
    }
}

fn monitor(api: &Api, cmd: MonitorCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        MonitorCmd::Freeze { endpoint, force } => {
            let body = api.post(&format!("/v1/monitor/{}/freeze", segment(&endpoint)), json!({ "force": force }))?;
            emit(api, out, &body, |v| {
                format!("froze reference for {} ({} samples)\n", cell(&v["endpoint_id"]), cell(&v["sample_count"]))
            })
        }
        MonitorCmd::Reports { endpoint } => {
            let body = api.get(&format!("/v1/monitor/{}/reports", segment(&endpoint)))?;
            emit(api, out, &body, |v| {
                render(
                    &["REPORT", "VERDICT", "MAX_PSI", "THRESHOLD", "SAMPLES", "EVENT"],
                    &rows(v, |r| {
                        vec![
                            cell(&r["report_id"]),
                            cell(&r["verdict"]),
                            num(&r["max_psi"]),
                            num(&r["threshold_psi"]),
                            cell(&r["window"]["count"]),
                            cell(&r["event_id"]),
                        ]
                    }),
                )
            })
        }
    }
}

/// Parses `ID:f1,f2,...`.
pub fn parse_candidate(s: &str) -> Result<Candidate, CliError> {
    let (id, features) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("candidate {s:?} is not ID:f1,f2,...")))?;
    Ok(Candidate {
        candidate_id: id.to_string(),
        feature_vector: parse_floats(features, "--candidate")?,
    })
}

fn feedback(api: &Api, cmd: FeedbackCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        FeedbackCmd::Rank { prompt, labeler, candidates, order } => {
            let candidates = candidates.iter().map(|c| parse_candidate(c)).collect::<Result<Vec<_>, _>>()?;
            let ranking = order
                .split(',')
                .map(|i| i.trim().parse::<usize>().map_err(|_| usage(format!("--order: {i:?} is not an index"))))
                .collect::<Result<Vec<_>, _>>()?;
            let ranking = NewRanking {
                prompt_id: prompt,
                candidates,
                ranking,
                labeler_id: labeler,
            };
            validate_ranking(&ranking)?;
            let body = api.post("/v1/feedback/rankings", to_json(&ranking))?;
            emit(api, out, &body, |v| {
                fields(&[
                    ("record_id", cell(&v["record_id"])),
                    ("prompt_id", cell(&v["prompt_id"])),
                    ("comparisons", cell(&v["comparisons"])),
                ])
            })
        }
        FeedbackCmd::Fit { prefix, l2, lr, max_iters, tol } => {
            for (flag, x) in [("--l2", l2), ("--lr", lr), ("--tol", tol)] {
                if x.is_some_and(|x| !x.is_finite() || x < 0.0) {
                    return Err(usage(format!("{flag} must be a finite non-negative number")));
                }
            }
            let mut hp = serde_json::Map::new();
            let mut set = |k: &str, v: Option<Value>| {
                if let Some(v) = v {
                    hp.insert(k.to_string(), v);
                }
            };
            set("l2_lambda", l2.map(Value::from));
            set("learning_rate", lr.map(Value::from));
            set("max_iters", max_iters.map(Value::from));
            set("tol", tol.map(Value::from));
            let body = api.post(
                "/v1/feedback/reward-models",
                json!({ "prompt_prefix": prefix, "hyperparameters": hp }),
            )?;
            emit(api, out, &body, |v| {
                fields(&[
                    ("reward_model_id", cell(&v["reward_model_id"])),
                    ("comparisons", cell(&v["comparisons_count"])),
                    ("iterations", cell(&v["iterations_used"])),
                    ("fit_loss", num(&v["fit_loss"])),
                    ("weights", v["weights"].as_array().map_or_else(String::new, |w| {
                        w.iter().map(num).collect::<Vec<_>>().join(",")
                    })),
                ])
            })
        }
    }
}

fn endpoint_fields(v: &Value) -> String {
    fields(&[
        ("endpoint_id", cell(&v["endpoint_id"])),
        ("route", cell(&v["route"])),
        ("version", cell(&v["bound_version"])),
        ("model", cell(&v["model_id"])),
        ("status", cell(&v["status"])),
    ])
}

fn serve(api: &Api, cmd: ServeCmd, out: Out) -> Result<(), CliError> {
    match cmd {
        ServeCmd::Create { version, route } => {
            validate_route(&route)?;
            let body = api.post("/v1/endpoints", json!({ "version_id": version, "route": route }))?;
            emit(api, out, &body, endpoint_fields)
        }
        ServeCmd::Infer { route, features, tokens } => {
            validate_route(&route)?;
            let input = match (features, tokens) {
                (Some(f), None) => json!({ "features": parse_floats::<f64>(&f, "--features")? }),
                (None, Some(t)) => {
                    let tokens: Vec<&str> = t.split_whitespace().collect();
                    if tokens.is_empty() {
                        return Err(usage("--tokens is empty"));
                    }
                    json!({ "tokens": tokens })
                }
                _ => return Err(usage("give exactly one of --features or --tokens")),
            };
            let body = api.post(&format!("/v1/infer/{}", segment(&route)), input)?;
            emit(api, out, &body, |v| {
                fields(&[
                    ("endpoint_id", cell(&v["endpoint_id"])),
                    ("version", cell(&v["model_version"])),
                    ("prediction", num(&v["prediction"])),
                ])
            })
        }
        ServeCmd::Rebind { endpoint, version } => {
            let body = api.post(
                &format!("/v1/endpoints/{}/rebind", segment(&endpoint)),
                json!({ "version_id": version }),
            )?;
            emit(api, out, &body, endpoint_fields)
        }
    }
}
