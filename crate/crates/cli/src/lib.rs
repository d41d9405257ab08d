//! `catchrelease` command implementations. Each command is a thin adapter
//! over the core archive or the workflow service and yields both a text
//! rendering and a JSON value.

pub mod args;
pub mod client;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use catchrelease_core::archive::Archive;
use catchrelease_core::config::Config;
use catchrelease_core::digest::ContentId;
use catchrelease_core::error::{Error, ErrorCode};
use catchrelease_core::media::{CaptureMeta, Segment};
use catchrelease_core::taxon::Season;
use catchrelease_core::workflow::{
    state_name, CollectionTask, Decision, LedgerEntry, PaymentRequest, ResultKind, ReviewItem,
};
use catchrelease_service::PipelineResult;

use args::{Cli, Command, DatasetCommand, ResultKindArg, ReviewCommand, SeasonArg, TaskCommand};
use client::{Local, Remote, TaskBackend};

/// A failed command: the error code name plus a human message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl Failure {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e: Error = e.into();
        Self::new(e.code(), e.to_string())
    }
}

/// What a command prints.
pub struct Output {
    pub text: String,
    pub json: Value,
}

impl Output {
    fn new<T: Serialize>(value: &T, text: String) -> Self {
        Self {
            text,
            json: serde_json::to_value(value).expect("output types serialize"),
        }
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            let mut s = serde_json::to_string_pretty(&self.json).expect("value serializes");
            s.push('\n');
            s
        } else {
            self.text.clone()
        }
    }
}

type CmdResult = Result<Output, Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    let cfg = Config::load(cli.config.as_deref())?;
    let open = || -> Result<Archive, Failure> { Ok(Archive::open(&cfg)?) };
    match &cli.command {
        Command::Ingest(a) => ingest(&open()?, a),
        Command::Pipeline(a) => pipeline(&open()?, a, &cli.actor),
        Command::Voiceover(a) => {
            let wav = read_file(&a.wav)?;
            let rec = open()?.attach_voiceover(&a.segment_id, &wav, &cli.actor)?;
            let mut text = format!("voiceover on {}: {} utterances\n", rec.segment_id, rec.utterances.len());
            for u in &rec.utterances {
                let m = u.match_result.matched_taxon().unwrap_or("-");
                let _ = writeln!(text, "  {:>8.2}-{:<8.2} {:<28} -> {m}", u.start_s, u.end_s, u.transcript);
            }
            Ok(Output::new(&rec, text))
        }
        Command::Qc { batch_id } => qc(&open()?, batch_id),
        Command::Dataset(d) => dataset(&open()?, &cfg, d, &cli.actor),
        Command::Task(t) => {
            if t.local {
                let a = open()?;
                task(
                    &Local {
                        archive: &a,
                        actor: cli.actor.clone(),
                    },
                    &t.command,
                )
            } else {
                let remote = Remote::new(&cfg.service.endpoint, cfg.service.client_token(), &cli.actor);
                task(&remote, &t.command)
            }
        }
        Command::Taxa => {
            let a = open()?;
            let mut text = String::new();
            for r in a.registry().records() {
                let _ = writeln!(text, "{:<22} {:<32} {}", r.taxon_id, r.scientific_name, r.common_name);
            }
            Ok(Output::new(&a.registry().records(), text))
        }
        Command::Serve { bind } => serve(open()?, &cfg, bind.as_deref()),
    }
}

fn read_file(p: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(p).map_err(|e| Failure::new("FileRead", format!("{}: {e}", p.display())))
}

fn short(id: &str) -> &str {
    &id[..id.len().min(12)]
}

fn ingest(a: &Archive, args: &args::IngestArgs) -> CmdResult {
    let season = match (args.season, &a.settings().calendar) {
        (Some(SeasonArg::Wet), _) => Season::Wet,
        (Some(SeasonArg::Dry), _) => Season::Dry,
        (None, Some(cal)) => cal.season_of(args.date),
        (None, None) => {
            return Err(Failure::new(
                "InvalidCapture",
                "--season is required when no season calendar is configured",
            ))
        }
    };
    let capture = CaptureMeta {
        harvester_id: args.harvester.clone(),
        site: args.site.clone(),
        capture_date: args.date,
        season,
        device_note: args.device_note.clone(),
    };
    let bytes = read_file(&args.path)?;
    let v = a.ingest(&bytes, capture)?;
    Ok(Output::new(&v, format!("{}\n", v.video_id.as_str())))
}

fn pipeline(a: &Archive, args: &args::PipelineArgs, actor: &str) -> CmdResult {
    let (sm, ss) = Segment::parse_clock(&args.start)?;
    let (em, es) = Segment::parse_clock(&args.end)?;
    let seg = a.create_segment(&args.video_id, sm, ss, em, es)?;
    let rec = a.run_pipeline(&seg.segment_id, args.fps, args.task.as_deref(), actor)?;
    let r = PipelineResult::from_record(&rec);
    let mut text = format!("{}\n", r.batch_id);
    let _ = writeln!(text, "segment {} ({} frames at {} fps)", r.segment_id, r.frames, args.fps);
    for (taxon, n) in &r.label_summary {
        let _ = writeln!(text, "  {taxon:<24} {n:>6}");
    }
    let verdicts: Vec<String> = r.verdicts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(text, "qc: {}", verdicts.join(", "));
    if !r.review_items.is_empty() {
        let _ = writeln!(text, "review: {}", r.review_items.join(" "));
    }
    Ok(Output::new(&r, text))
}

#[derive(Serialize)]
struct QcRow<'a> {
    timestamp_s: f64,
    #[serde(flatten)]
    report: &'a catchrelease_core::qc::QcReport,
}

fn qc(a: &Archive, batch_id: &str) -> CmdResult {
    let b = a.batch(batch_id)?;
    let rows: Vec<QcRow> = b
        .frames
        .iter()
        .map(|f| QcRow {
            timestamp_s: f.frame.timestamp_s,
            report: &f.qc,
        })
        .collect();
    let mut text = String::new();
    let counts: Vec<String> = b.verdict_counts().iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(text, "batch {} ({} frames): {}", b.batch_id, b.frames.len(), counts.join(", "));
    let _ = writeln!(
        text,
        "{:<12} {:>8} {:>11} {:>6} {:<7} {:<16} {:<10}",
        "frame", "t_s", "sharpness", "luma", "res_ok", "phash", "verdict"
    );
    for r in &rows {
        let q = r.report;
        let dup = q.duplicate_of.as_ref().map(|d| format!(" dup of {}", short(d.as_str()))).unwrap_or_default();
        let _ = writeln!(
            text,
            "{:<12} {:>8.2} {:>11.2} {:>6.1} {:<7} {:<16} {}{dup}",
            short(q.frame_id.as_str()),
            r.timestamp_s,
            q.sharpness,
            q.mean_luma,
            q.resolution_ok,
            q.phash,
            q.verdict.as_str()
        );
    }
    Ok(Output::new(&rows, text))
}

#[derive(Serialize)]
struct Status {
    version: u64,
    frames: usize,
    counted: usize,
    quarantined: usize,
    batches: usize,
    per_split: BTreeMap<String, usize>,
    per_review_state: BTreeMap<String, usize>,
    class_counts: BTreeMap<String, u64>,
}

fn label(v: &impl Serialize) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn dataset(a: &Archive, cfg: &Config, cmd: &DatasetCommand, actor: &str) -> CmdResult {
    let ds = a.dataset();
    match cmd {
        DatasetCommand::Status { version } => {
            let m = ds.manifest(*version)?;
            let mut per_split = BTreeMap::new();
            let mut per_review_state = BTreeMap::new();
            for e in m.entries.values() {
                *per_split.entry(e.split.as_str().to_string()).or_insert(0) += 1;
                *per_review_state.entry(label(&e.review_state)).or_insert(0) += 1;
            }
            let s = Status {
                version: m.version,
                frames: m.entries.len(),
                counted: m.entries.values().filter(|e| e.counts()).count(),
                quarantined: m.entries.values().filter(|e| e.quarantined).count(),
                batches: m.batches.len(),
                per_split,
                per_review_state,
                class_counts: m.class_counts.clone(),
            };
            let mut text = format!(
                "version {}: {} frames in {} batches, {} counted, {} quarantined\n",
                s.version, s.frames, s.batches, s.counted, s.quarantined
            );
            for (k, v) in &s.per_split {
                let _ = writeln!(text, "  split {k:<12} {v:>7}");
            }
            for (k, v) in &s.per_review_state {
                let _ = writeln!(text, "  review {k:<18} {v:>7}");
            }
            Ok(Output::new(&s, text))
        }
        DatasetCommand::Quarantine { batch_id, reason } => {
            let v = ds.quarantine_batch(batch_id, reason, actor)?;
            Ok(Output::new(&serde_json::json!({ "version": v }), format!("quarantined {batch_id}; version {v}\n")))
        }
        DatasetCommand::Relabel { batch_id, taxon } => {
            let v = ds.relabel_batch(batch_id, taxon, actor)?;
            Ok(Output::new(
                &serde_json::json!({ "version": v }),
                format!("relabeled {batch_id} to {taxon}; version {v}\n"),
            ))
        }
        DatasetCommand::Split { version, seed, ratios } => {
            let mut policy = cfg.split.clone();
            if let Some(s) = seed {
                policy.seed = *s;
            }
            if let Some(r) = ratios {
                policy.ratios = [r[0], r[1], r[2]];
            }
            let base = version.unwrap_or_else(|| ds.version());
            let v = ds.assign_splits(base, policy, actor)?;
            let m = ds.manifest(Some(v))?;
            let mut per_split: BTreeMap<String, usize> = BTreeMap::new();
            for e in m.entries.values() {
                *per_split.entry(e.split.as_str().to_string()).or_insert(0) += 1;
            }
            let mut text = format!("splits assigned; version {v}\n");
            for (k, n) in &per_split {
                let _ = writeln!(text, "  {k:<12} {n:>7}");
            }
            Ok(Output::new(&serde_json::json!({ "version": v, "per_split": per_split }), text))
        }
        DatasetCommand::Export { version, root } => {
            let s = ds.export(*version, root, a.store(), a.registry())?;
            let mut text = format!("exported version {} to {}: {} frames\n", s.version, s.root.display(), s.total);
            for (split, per) in &s.counts {
                let _ = writeln!(
                    text,
                    "  {split:<6} {:>7} frames in {} class directories",
                    per.values().sum::<u64>(),
                    per.len()
                );
            }
            Ok(Output::new(&s, text))
        }
        DatasetCommand::Report { version, csv } => {
            let r = ds.balance_report(*version, a.registry(), a.settings().qc.min_class_count)?;
            let text = if *csv {
                r.to_csv()
            } else {
                let mut t = format!(
                    "version {}: {} frames, gini {:.3}\n",
                    r.version, r.total, r.gini_imbalance
                );
                for (k, v) in &r.per_taxon {
                    let flag = if r.underfilled.contains(k) { "  (under floor)" } else { "" };
                    let _ = writeln!(t, "  {k:<24} {v:>7}{flag}");
                }
                for (k, v) in &r.per_season {
                    let _ = writeln!(t, "  season {k:<17} {v:>7}");
                }
                t
            };
            Ok(Output::new(&r, text))
        }
        DatasetCommand::History { frame_id } => {
            let id: ContentId = frame_id
                .parse()
                .map_err(|_| Failure::new("UnknownFrame", format!("{frame_id} is not a frame id")))?;
            let h = ds.label_history(&id);
            if h.is_empty() {
                return Err(Failure::new("UnknownFrame", format!("no history for {frame_id}")));
            }
            let mut text = String::new();
            for c in &h {
                let q = if c.quarantined { " quarantined" } else { "" };
                let _ = writeln!(
                    text,
                    "v{:<5} {:<16} {:<22} {:<18} {} {}{q}",
                    c.event_id,
                    c.kind,
                    c.taxon_id,
                    label(&c.review_state),
                    c.actor,
                    c.timestamp.to_rfc3339()
                );
            }
            Ok(Output::new(&h, text))
        }
    }
}

fn task_line(t: &CollectionTask) -> String {
    let batch = t.linked_batch.as_deref().unwrap_or("-");
    format!(
        "{:<6} {:<22} {:>2} {:<22} videos {} batch {batch}\n",
        t.task_id,
        t.target_taxon,
        t.state,
        t.state_name,
        t.linked_videos.len()
    )
}

fn ledger_line(e: &LedgerEntry) -> String {
    format!(
        "{} {} {}: USD {} x {} = IDR {} ({})\n",
        e.entry_id, e.task_id, e.harvester_id, e.amount_usd, e.fx_rate_idr_per_usd, e.amount_idr, e.confirmation_ref
    )
}

fn review_line(r: &ReviewItem) -> String {
    let s = &r.subject;
    let what = s
        .batch_id
        .as_deref()
        .map(|b| format!("batch {b}"))
        .or_else(|| s.utterance_id.as_deref().map(|u| format!("utterance {u}")))
        .unwrap_or_default();
    let cands = s.candidates.as_ref().map(|c| format!(" candidates {}", c.join("|"))).unwrap_or_default();
    let frames = s.frame_ids.as_ref().map(|f| format!(" {} frames", f.len())).unwrap_or_default();
    let state = match &r.resolution {
        Some(res) => {
            let d = serde_json::to_value(&res.decision).unwrap_or_default();
            format!("resolved {} by {}", d["decision"].as_str().unwrap_or("?"), res.actor)
        }
        None => "open".to_string(),
    };
    format!("{:<6} {:<20} {what}{cands}{frames} [{state}]\n", r.item_id, label(&r.kind))
}

fn decimal(text: &str, what: &str) -> Result<rust_decimal::Decimal, Failure> {
    text.trim()
        .parse()
        .map_err(|e| Failure::new("BadAmount", format!("{what} {text:?}: {e}")))
}

fn task(b: &dyn TaskBackend, cmd: &TaskCommand) -> CmdResult {
    match cmd {
        TaskCommand::Create { taxon } => {
            let t = b.create(taxon)?;
            Ok(Output::new(&t, format!("{}\n", t.task_id)))
        }
        TaskCommand::Show { task_id: Some(id) } => {
            let t = b.task(id)?;
            let mut text = task_line(&t);
            for h in &t.history {
                let note = if h.note.is_empty() { String::new() } else { format!(" ({})", h.note) };
                let _ = writeln!(
                    text,
                    "  {} {:>2} -> {:>2} {:<22} {}{note}",
                    h.timestamp.to_rfc3339(),
                    h.from_state,
                    h.to_state,
                    state_name(h.to_state),
                    h.actor
                );
            }
            for r in &t.results {
                let _ = writeln!(text, "  result {} {} ({} bytes)", label(&r.kind), r.document_id.as_str(), r.size_bytes);
            }
            Ok(Output::new(&t, text))
        }
        TaskCommand::Show { task_id: None } => {
            let ts = b.tasks()?;
            Ok(Output::new(&ts, ts.iter().map(task_line).collect()))
        }
        TaskCommand::Advance { task_id, to_state, note } => {
            let t = b.advance(task_id, *to_state, note)?;
            Ok(Output::new(&t, format!("{} is now in state {} {}\n", t.task_id, t.state, t.state_name)))
        }
        TaskCommand::Link { task_id, video_id } => {
            let t = b.link(task_id, video_id)?;
            Ok(Output::new(&t, format!("{} linked to {}\n", video_id, t.task_id)))
        }
        TaskCommand::Pay {
            task_id,
            harvester,
            usd,
            rate,
            confirmation,
        } => {
            let req = PaymentRequest {
                harvester_id: harvester.clone(),
                amount_usd: decimal(usd, "--usd")?,
                fx_rate: decimal(rate, "--rate")?,
                confirmation_ref: confirmation.clone(),
            };
            let e = b.pay(task_id, &req)?;
            Ok(Output::new(&e, ledger_line(&e)))
        }
        TaskCommand::Ledger { task_id } => {
            let es = b.ledger(task_id.as_deref())?;
            Ok(Output::new(&es, es.iter().map(ledger_line).collect()))
        }
        TaskCommand::Result { task_id, kind, file } => {
            let kind = match kind {
                ResultKindArg::TrainingReport => ResultKind::TrainingReport,
                ResultKindArg::EvaluationReport => ResultKind::EvaluationReport,
            };
            let r = b.attach(task_id, kind, read_file(file)?)?;
            Ok(Output::new(
                &r,
                format!("{} attached to {} as {}\n", r.document_id.as_str(), r.task_id, label(&r.kind)),
            ))
        }
        TaskCommand::Review(rc) => {
            let (id, d) = match rc {
                ReviewCommand::List { all } => {
                    let items = b.reviews(!all)?;
                    return Ok(Output::new(&items, items.iter().map(review_line).collect()));
                }
                ReviewCommand::Approve { item_id } => (item_id, Decision::Approve),
                ReviewCommand::Reject { item_id, reason } => (item_id, Decision::Reject { reason: reason.clone() }),
                ReviewCommand::Assign { item_id, taxon } => (
                    item_id,
                    Decision::Assign {
                        taxon_id: taxon.clone(),
                    },
                ),
                ReviewCommand::Dismiss { item_id } => (item_id, Decision::Dismiss),
            };
            let r = b.resolve(id, d)?;
            Ok(Output::new(&r, review_line(&r)))
        }
    }
}

fn serve(archive: Archive, cfg: &Config, bind: Option<&str>) -> CmdResult {
    if cfg.service.tokens.is_empty() {
        return Err(Failure::new(
            "ConfigInvalid",
            "service.tokens is empty; the server would accept nobody",
        ));
    }
    let bind = bind.unwrap_or(&cfg.service.bind).to_string();
    let state = Arc::new(catchrelease_service::AppState {
        archive: Arc::new(archive),
        tokens: cfg.service.tokens.clone(),
    });
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new("Io", e.to_string()))?;
    rt.block_on(catchrelease_service::serve(state, &bind))
        .map_err(|e| Failure::new("Io", format!("{bind}: {e}")))?;
    Ok(Output::new(&Value::Null, String::new()))
}
