use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use catchrelease_core::archive::Archive;
use catchrelease_core::config::Config;
use catchrelease_core::media::synthetic::{SyntheticClip, ToneBurst};
use catchrelease_core::media::{CaptureMeta, FieldVideo};
use catchrelease_core::taxon::Season;
use catchrelease_core::workflow::{CollectionTask, Decision, LedgerEntry};
use catchrelease_service::PipelineResult;

const SCRIPT: &str = "4 5 durian\n20 21 talas\n45 46 bambu petung\n";

struct Run {
    status: i32,
    stdout: String,
    stderr: String,
}

struct Desk {
    dir: tempfile::TempDir,
}

impl Desk {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("narration.txt"), SCRIPT).unwrap();
        std::fs::write(
            dir.path().join("catchrelease.conf"),
            format!("store_root = \"store\"\n{extra}\n[transcriber]\nmock = \"narration.txt\"\n[qc]\nmin_side_px = 256\n"),
        )
        .unwrap();
        std::fs::write(dir.path().join("clip.mp4"), clip().to_mp4()).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn cr(&self, args: &[&str]) -> Run {
        let out = Command::new(env!("CARGO_BIN_EXE_catchrelease"))
            .args(args)
            .current_dir(self.path())
            .env_remove("CATCHRELEASE_CONFIG")
            .env_remove("CATCHRELEASE_ACTOR")
            .output()
            .unwrap();
        Run {
            status: out.status.code().unwrap_or(-1),
            stdout: String::from_utf8(out.stdout).unwrap(),
            stderr: String::from_utf8(out.stderr).unwrap(),
        }
    }

    fn ok(&self, args: &[&str]) -> String {
        let r = self.cr(args);
        assert_eq!(r.status, 0, "{args:?}: {}", r.stderr);
        r.stdout
    }

    fn ingest(&self) -> String {
        self.ok(&["ingest", "clip.mp4", "--harvester", "made", "--site", "Sidemen", "--date", "2020-02-20", "--season", "wet"])
            .trim()
            .to_string()
    }

    fn archive(&self) -> Archive {
        Archive::open(&Config::load(Some(&self.path().join("catchrelease.conf"))).unwrap()).unwrap()
    }
}

fn clip() -> SyntheticClip {
    let bursts = [4.0, 20.0, 45.0]
        .iter()
        .map(|&s| ToneBurst {
            start_s: s,
            end_s: s + 1.0,
            freq_hz: 440.0,
            amplitude: 0.5,
        })
        .collect();
    SyntheticClip::with_scenes(640, 512, 60.0, 6).with_audio(8000, 2, bursts)
}

#[test]
fn export_writes_26_class_dirs_per_split() {
    let d = Desk::new("");
    let v = d.ingest();
    let out = d.ok(&["pipeline", &v, "--start", "00:00", "--end", "01:00", "--fps", "2"]);
    let batch = out.lines().next().unwrap().to_string();
    assert!(out.contains("durian"), "{out}");
    d.ok(&["task", "--local", "review", "approve", "r1"]);
    d.ok(&["dataset", "split", "--seed", "7"]);
    let status: serde_json::Value = serde_json::from_str(&d.ok(&["--json", "dataset", "status"])).unwrap();
    let version = status["version"].as_u64().unwrap().to_string();
    let out = d.ok(&["dataset", "export", "--version", &version, "--root", "./out"]);
    assert!(out.contains("26 class directories"), "{out}");
    for split in ["train", "val", "test"] {
        let dirs = std::fs::read_dir(d.path().join("out").join(split))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .count();
        assert_eq!(dirs, 26, "{split}");
    }
    let again = d.cr(&["dataset", "export", "--root", "./out"]);
    assert_eq!(again.status, 1);
    assert!(again.stderr.contains("ExportTargetNotEmpty"));
    let qc = d.ok(&["qc", &batch]);
    assert_eq!(qc.lines().count(), 2 + 120);
}

#[test]
fn empty_segment_is_rejected() {
    let d = Desk::new("");
    let v = d.ingest();
    let r = d.cr(&["pipeline", &v, "--start", "00:05", "--end", "00:05", "--fps", "2"]);
    assert_ne!(r.status, 0);
    assert!(r.stderr.contains("EmptySegment"), "{}", r.stderr);
    let r = d.cr(&["pipeline", &v, "--start", "00:05", "--end", "00:60", "--fps", "2"]);
    assert_eq!(r.status, 1);
    assert!(r.stderr.contains("SegmentOutOfRange"), "{}", r.stderr);
    let r = d.cr(&["--json", "pipeline", "nope", "--start", "00:00", "--end", "00:05", "--fps", "2"]);
    let body: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(body["code"], "UnknownVideo");
}

#[test]
fn unknown_flags_exit_2() {
    let d = Desk::new("");
    assert_eq!(d.cr(&["ingest", "--frobnicate"]).status, 2);
    assert_eq!(d.cr(&["dataset", "explode"]).status, 2);
    assert_eq!(d.cr(&["--help"]).status, 0);
}

#[test]
fn json_output_round_trips() {
    let d = Desk::new("");
    let r = d.ok(&[
        "--json", "ingest", "clip.mp4", "--harvester", "made", "--site", "Sidemen", "--date", "2020-02-20", "--season", "wet",
    ]);
    let v: FieldVideo = serde_json::from_str(&r).unwrap();
    assert_eq!(v.capture.site, "Sidemen");
    let r = d.ok(&["--json", "pipeline", v.video_id.as_str(), "--start", "00:00", "--end", "00:30", "--fps", "1"]);
    let p: PipelineResult = serde_json::from_str(&r).unwrap();
    assert_eq!(p.frames, 30);
    assert_eq!(serde_json::to_value(&p).unwrap(), serde_json::from_str::<serde_json::Value>(&r).unwrap());
    let r = d.ok(&["--json", "task", "--local", "create", "durian"]);
    let t: CollectionTask = serde_json::from_str(&r).unwrap();
    assert_eq!(t.state, 1);
    let r = d.ok(&["--json", "task", "--local", "show"]);
    let ts: Vec<CollectionTask> = serde_json::from_str(&r).unwrap();
    assert_eq!(ts, vec![t]);
}

#[test]
fn season_comes_from_calendar_when_omitted() {
    let d = Desk::new("[season_calendar]\nwet_months = [11, 12, 1, 2, 3]");
    let r = d.ok(&["--json", "ingest", "clip.mp4", "--harvester", "made", "--site", "Sidemen", "--date", "2020-02-20"]);
    let v: FieldVideo = serde_json::from_str(&r).unwrap();
    assert_eq!(v.capture.season, Season::Wet);
    let r = d.cr(&["ingest", "clip.mp4", "--harvester", "made", "--site", "S", "--date", "2020-07-01", "--season", "wet"]);
    assert!(r.stderr.contains("InvalidCapture"), "{}", r.stderr);

    let bare = Desk::new("");
    let r = bare.cr(&["ingest", "clip.mp4", "--harvester", "made", "--site", "S", "--date", "2020-07-01"]);
    assert_eq!(r.status, 1);
    assert!(r.stderr.contains("InvalidCapture"));
}

/// Drives a task to state 7 in the local store.
fn task_at_7(d: &Desk) -> String {
    let v = d.ingest();
    let t = d.ok(&["task", "--local", "create", "durian"]).trim().to_string();
    for s in ["2", "3", "4"] {
        d.ok(&["task", "--local", "advance", &t, s]);
    }
    d.ok(&["task", "--local", "link", &t, &v]);
    d.ok(&["task", "--local", "advance", &t, "5"]);
    d.ok(&["task", "--local", "advance", &t, "6"]);
    d.ok(&["pipeline", &v, "--start", "00:00", "--end", "00:15", "--fps", "2", "--task", &t]);
    let r = d.cr(&["task", "--local", "advance", &t, "7"]);
    assert!(r.stderr.contains("GuardFailed"));
    d.ok(&["task", "--local", "review", "approve", "r1"]);
    d.ok(&["task", "--local", "advance", &t, "7", "--note", "checked"]);
    t
}

#[test]
fn pay_prints_idr_locally() {
    let d = Desk::new("");
    let t = task_at_7(&d);
    let out = d.ok(&["task", "--local", "pay", &t, "--harvester", "made", "--usd", "25", "--rate", "16000", "--ref", "wa-1"]);
    assert!(out.contains("IDR 400000.00"), "{out}");
    let r = d.cr(&["task", "--local", "pay", &t, "--harvester", "made", "--usd", "0.001", "--rate", "16000", "--ref", "x"]);
    assert_eq!(r.status, 1);
    assert!(r.stderr.contains("BadAmount"));
    let r = d.ok(&["--json", "task", "--local", "ledger", &t]);
    let l: Vec<LedgerEntry> = serde_json::from_str(&r).unwrap();
    assert_eq!(l.len(), 1);
    assert_eq!(l[0].amount_idr.to_string(), "400000.00");
}

#[test]
fn pay_through_the_service() {
    let d = Desk::new("");
    let t = task_at_7(&d);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let state = Arc::new(catchrelease_service::AppState {
        archive: Arc::new(d.archive()),
        tokens: BTreeMap::from([("adm".to_string(), catchrelease_core::config::Role::Admin)]),
    });
    rt.spawn(catchrelease_service::serve_on(listener, state));

    let remote = Desk {
        dir: tempfile::tempdir().unwrap(),
    };
    std::fs::write(
        remote.path().join("catchrelease.conf"),
        format!("[service]\nendpoint = \"http://{addr}\"\ntoken_env = \"CR_TEST_TOKEN\"\n"),
    )
    .unwrap();
    let pay = |token: &str| {
        Command::new(env!("CARGO_BIN_EXE_catchrelease"))
            .args(["task", "pay", &t, "--harvester", "made", "--usd", "25", "--rate", "16000", "--ref", "wa-9"])
            .current_dir(remote.path())
            .env_remove("CATCHRELEASE_CONFIG")
            .env("CR_TEST_TOKEN", token)
            .output()
            .unwrap()
    };
    let denied = pay("wrong");
    assert_eq!(denied.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&denied.stderr).contains("Unauthorized"));
    let ok = pay("adm");
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("IDR 400000.00"));

    // remote writes are visible in the store
    assert_eq!(d.archive().workflow().ledger(Some(&t)).len(), 1);
    drop(rt);

    let gone = remote.cr(&["task", "show"]);
    assert_eq!(gone.status, 1);
    assert!(gone.stderr.contains("ServiceUnreachable") || gone.stderr.contains("Unauthorized"), "{}", gone.stderr);
}

#[test]
fn serve_refuses_without_tokens() {
    let d = Desk::new("");
    let r = d.cr(&["serve", "--bind", "127.0.0.1:0"]);
    assert_eq!(r.status, 1);
    assert!(r.stderr.contains("ConfigInvalid"));
}

#[test]
fn env_overrides_config() {
    let d = Desk::new("");
    let out = Command::new(env!("CARGO_BIN_EXE_catchrelease"))
        .args(["ingest", "clip.mp4", "--harvester", "made", "--site", "Sidemen", "--date", "2020-02-20", "--season", "wet"])
        .current_dir(d.path())
        .env("CATCHRELEASE_STORE_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("elsewhere/objects").is_dir());
    assert!(!d.path().join("store").exists());
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                out.insert(e.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&e).unwrap());
            }
        }
    }
    out
}

#[test]
fn cli_is_a_thin_adapter() {
    let via_cli = Desk::new("");
    let v = via_cli.ingest();
    via_cli.ok(&["--actor", "ketut", "pipeline", &v, "--start", "00:00", "--end", "00:40", "--fps", "1"]);

    let direct = Desk::new("");
    let a = direct.archive();
    let video = a
        .ingest(
            &clip().to_mp4(),
            CaptureMeta {
                harvester_id: "made".into(),
                site: "Sidemen".into(),
                capture_date: chrono::NaiveDate::from_ymd_opt(2020, 2, 20).unwrap(),
                season: Season::Wet,
                device_note: None,
            },
        )
        .unwrap();
    assert_eq!(video.video_id.as_str(), v);
    let seg = a.create_segment(video.video_id.as_str(), 0, 0, 0, 40).unwrap();
    a.run_pipeline(&seg.segment_id, 1.0, None, "ketut").unwrap();

    // content-addressed objects and per-frame records are byte-identical
    for sub in ["objects", "meta/videos", "meta/segments", "meta/qc", "meta/narration"] {
        let x = files(&via_cli.path().join("store").join(sub));
        let y = files(&direct.path().join("store").join(sub));
        assert!(!x.is_empty(), "{sub}");
        assert_eq!(x, y, "{sub}");
    }
    let cli_archive = via_cli.archive();
    assert_eq!(
        cli_archive.dataset().manifest(None).unwrap().to_canonical_json(),
        a.dataset().manifest(None).unwrap().to_canonical_json()
    );
    let b1 = cli_archive.batch(&cli_archive.batch_ids().unwrap()[0]).unwrap();
    let b2 = a.batch(&a.batch_ids().unwrap()[0]).unwrap();
    assert_eq!((b1.batch_id, b1.frames, b1.actor), (b2.batch_id, b2.frames, b2.actor));

    // and so does a review decision
    via_cli.ok(&["--actor", "ketut", "task", "--local", "review", "reject", "r1", "--reason", "wrong bamboo"]);
    a.resolve_review("r1", Decision::Reject { reason: "wrong bamboo".into() }, "ketut").unwrap();
    assert_eq!(
        via_cli.archive().dataset().manifest(None).unwrap().to_canonical_json(),
        a.dataset().manifest(None).unwrap().to_canonical_json()
    );
}
