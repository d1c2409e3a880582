//! Commands that go through the review service, started in-process on a
//! loopback port unless `--server` names a running one.

use std::fmt::Write as _;
use std::path::PathBuf;

use tokio::net::TcpListener;
use tuskmarks::config::PipelineConfig;
use tuskmarks::pipeline::FailureClass;
use tuskmarks::review::{self, LabelSubmission};
use tuskmarks_client::Client;
use tuskmarks_service::{router, serve_on, AppState, Clock, Server};

use crate::{emit, read, CliError, ReviewCmd};

fn clock() -> Result<Clock, CliError> {
    Clock::from_env().map_err(|m| CliError::new(FailureClass::Config, m))
}

async fn start(cfg: &PipelineConfig, host: &str, port: u16, static_dir: Option<PathBuf>) -> Result<Server, CliError> {
    let state = AppState::from_config(cfg, clock()?)?;
    let listener = TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::new(FailureClass::Runtime, format!("cannot bind {host}:{port}: {e}")))?;
    serve_on(listener, router(state, static_dir))
        .await
        .map_err(|e| CliError::new(FailureClass::Runtime, e.to_string()))
}

pub async fn serve(cfg: &PipelineConfig, host: &str, port: u16, static_dir: Option<PathBuf>) -> Result<(), CliError> {
    let server = start(cfg, host, port, static_dir).await?;
    eprintln!("review service on {}", server.url());
    tokio::signal::ctrl_c()
        .await
        .map_err(|e| CliError::new(FailureClass::Runtime, e.to_string()))?;
    server
        .shutdown()
        .await
        .map_err(|e| CliError::new(FailureClass::Runtime, e.to_string()))
}

pub async fn run_review(cli: &crate::Cli, cfg: &PipelineConfig, cmd: &ReviewCmd, json: bool) -> Result<(), CliError> {
    let embedded = match &cli.server {
        Some(_) => None,
        None => Some(start(cfg, "127.0.0.1", 0, None).await?),
    };
    let client = match (&cli.server, &embedded) {
        (Some(url), _) => Client::new(url.clone()),
        (None, Some(s)) => Client::new(s.url()),
        (None, None) => unreachable!("embedded server started above"),
    };
    let result = review_with(&client, cmd, json).await;
    if let Some(s) = embedded {
        s.shutdown()
            .await
            .map_err(|e| CliError::new(FailureClass::Runtime, e.to_string()))?;
    }
    result
}

async fn review_with(client: &Client, cmd: &ReviewCmd, json: bool) -> Result<(), CliError> {
    match cmd {
        ReviewCmd::Status => {
            let h = client.health().await?;
            emit(json, &h, || {
                let mut s = format!("{} photographs, {} markings\n", h.images, h.markings);
                for (q, n) in &h.open_tasks {
                    let _ = writeln!(s, "{q}\t{n} open");
                }
                s
            });
        }
        ReviewCmd::Queue { name, seizure, limit } => {
            let items = client.queue(name, *seizure, *limit).await?;
            emit(json, &items, || {
                let mut s = String::new();
                for i in &items {
                    let m = &i.marking;
                    let what = m.text.as_deref().or(m.symbol_name.as_deref()).unwrap_or("-");
                    let _ = writeln!(s, "{}\tseizure {}\t{}\t{what}", i.task.task_id, m.seizure, m.image_id);
                }
                s
            });
        }
        ReviewCmd::Label { task_id, label, text, who } => {
            let t = client
                .submit_label(&LabelSubmission {
                    task_id: task_id.clone(),
                    label: label.clone(),
                    reviewer: who.reviewer.clone(),
                    text: text.clone(),
                })
                .await?;
            emit(json, &t, || format!("{} done\n", t.task_id));
        }
        ReviewCmd::Skip { task_id, who } => {
            let t = client.skip(task_id, &who.reviewer).await?;
            emit(json, &t, || format!("{} skipped\n", t.task_id));
        }
        ReviewCmd::Import { decisions, who } => {
            let parsed = tuskmarks::formats::parse_decisions(&read(decisions)?);
            let mut report = review::ImportReport {
                errors: parsed.errors.iter().map(|e| e.to_string()).collect(),
                ..Default::default()
            };
            for d in parsed.records {
                let sub = LabelSubmission {
                    task_id: review::task_id(d.queue, &d.marking_id),
                    label: d.label,
                    reviewer: who.reviewer.clone(),
                    text: d.text,
                };
                match client.submit_label(&sub).await {
                    Ok(_) => report.applied += 1,
                    Err(e) if matches!(e.code(), Some("unknown_task" | "task_closed")) => report.not_open += 1,
                    Err(e) if e.code().is_some() => report.errors.push(format!("{}: {e}", sub.task_id)),
                    Err(e) => return Err(e.into()),
                }
            }
            emit(json, &report, || {
                let mut s = format!("applied {}, not open {}, errors {}\n", report.applied, report.not_open, report.errors.len());
                for e in &report.errors {
                    let _ = writeln!(s, "  {e}");
                }
                s
            });
        }
    }
    Ok(())
}
