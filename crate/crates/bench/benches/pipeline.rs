use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rust_decimal::Decimal;

use catchrelease_core::align::ReviewState;
use catchrelease_core::dataset::split::{apportion, keyed_hash};
use catchrelease_core::dataset::{DatasetStore, Manifest, NewEntry, Provenance, SplitPolicy};
use catchrelease_core::digest::ContentId;
use catchrelease_core::media::synthetic::SyntheticClip;
use catchrelease_core::qc::{analyze_image, Verdict};
use catchrelease_core::taxon::{Registry, Season};
use catchrelease_core::workflow::ledger::convert;

fn taxa() -> Vec<String> {
    Registry::bali26().records().iter().map(|r| r.taxon_id.clone()).collect()
}

fn entries(n: usize) -> Vec<NewEntry> {
    let taxa = taxa();
    let video = ContentId::of(b"bench");
    (0..n)
        .map(|i| NewEntry {
            frame_id: ContentId::of(format!("f{i}").as_bytes()),
            taxon_id: taxa[i % taxa.len()].clone(),
            provenance: Provenance {
                video_id: video.clone(),
                harvester_id: "made".into(),
                site: "Sidemen".into(),
                season: Season::Wet,
                capture_date: chrono_date(),
            },
            qc_verdict: Verdict::Pass,
            review_state: ReviewState::ExpertConfirmed,
            source_utterance_id: None,
        })
        .collect()
}

fn chrono_date() -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2020, 2, 20).unwrap()
}

fn qc(c: &mut Criterion) {
    let clip = SyntheticClip::with_scenes(1280, 720, 10.0, 3);
    let frame = clip.render_frame(2.0);
    c.bench_function("qc/analyze_720p", |b| b.iter(|| analyze_image(black_box(&frame))));
}

fn split(c: &mut Criterion) {
    let ids: Vec<ContentId> = (0..10_000).map(|i| ContentId::of(format!("f{i}").as_bytes())).collect();
    c.bench_function("split/keyed_hash_10k", |b| {
        b.iter(|| ids.iter().map(|id| keyed_hash(42, id)).fold(0u64, |a, h| a ^ h))
    });
    c.bench_function("split/apportion", |b| b.iter(|| apportion(black_box(123_457), &[8, 1, 1])));
    c.bench_function("split/assign_5k", |b| {
        b.iter_batched(
            || {
                let dir = tempfile::tempdir().unwrap();
                let ds = DatasetStore::open(dir.path(), taxa()).unwrap();
                ds.add_batch("b", entries(5_000), "bench").unwrap();
                (dir, ds)
            },
            |(dir, ds)| {
                ds.assign_splits(ds.version(), SplitPolicy::default(), "bench").unwrap();
                dir
            },
            BatchSize::PerIteration,
        )
    });
}

fn replay(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetStore::open(dir.path(), taxa()).unwrap();
    for b in 0..10 {
        ds.add_batch(&format!("b{b}"), entries(2_000).split_off(b * 200).into_iter().take(200).collect(), "bench")
            .unwrap();
    }
    ds.assign_splits(ds.version(), SplitPolicy::default(), "bench").unwrap();
    let events = ds.events();
    c.bench_function("dataset/fold_2k", |b| b.iter(|| Manifest::fold(black_box(&events))));
}

fn ledger(c: &mut Criterion) {
    let usd = Decimal::new(2_500, 2);
    let rate = Decimal::new(16_000, 0);
    c.bench_function("ledger/convert", |b| b.iter(|| convert(black_box(usd), black_box(rate)).unwrap()));
}

criterion_group!(benches, qc, split, replay, ledger);
criterion_main!(benches);
