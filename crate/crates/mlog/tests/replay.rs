use std::sync::Arc;

use proptest::prelude::*;
use snapforge_mlog::{stable_hash, MessageLog, Record};

fn drain(log: &MessageLog, group: &str, topic: &str, batch: usize) -> Vec<Record> {
    let mut all = Vec::new();
    loop {
        let got = log.poll(group, topic, batch).unwrap();
        if got.is_empty() {
            return all;
        }
        log.commit_records(group, &got).unwrap();
        all.extend(got);
    }
}

fn per_partition(records: &[Record], partitions: u32) -> Vec<Vec<(u64, Vec<u8>)>> {
    let mut out = vec![Vec::new(); partitions as usize];
    for r in records {
        out[r.partition as usize].push((r.offset, r.payload.clone()));
    }
    out
}

#[test]
fn round_robin_spreads_keyless_records_exactly() {
    let log = MessageLog::new();
    log.create_topic("t", 4).unwrap();
    for i in 0..10_000u32 {
        log.produce("t", None, &i.to_le_bytes()).unwrap();
    }
    assert_eq!(log.end_offsets("t").unwrap(), vec![2500; 4]);
}

#[test]
fn concurrent_producers_keep_offsets_dense() {
    let log = Arc::new(MessageLog::new());
    log.create_topic("t", 3).unwrap();
    let threads: Vec<_> = (0..4u8)
        .map(|w| {
            let log = log.clone();
            std::thread::spawn(move || {
                for i in 0..500u32 {
                    let key = format!("k{}", i % 7);
                    let key = if i % 2 == 0 { Some(key.as_bytes()) } else { None };
                    log.produce("t", key, &[w]).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    let all = drain(&log, "g", "t", 97);
    assert_eq!(all.len(), 2000);
    for p in per_partition(&all, 3) {
        let offsets: Vec<u64> = p.iter().map(|(o, _)| *o).collect();
        assert_eq!(offsets, (0..offsets.len() as u64).collect::<Vec<_>>());
    }
}

#[test]
fn snapshot_round_trip_preserves_records_and_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let log = MessageLog::new();
    log.create_topic("image-urls", 4).unwrap();
    log.create_topic("other", 1).unwrap();
    for i in 0..50u32 {
        let key = (i % 3 != 0).then(|| format!("doc{}", i % 5));
        log.produce("image-urls", key.as_deref().map(str::as_bytes), format!("p{i}").as_bytes()).unwrap();
    }
    log.produce("other", Some(b""), b"empty key").unwrap();
    log.commit("g", "image-urls", 2, 1).unwrap();
    log.save(dir.path()).unwrap();

    let back = MessageLog::load(dir.path()).unwrap();
    assert_eq!(back.topic_names(), log.topic_names());
    assert_eq!(back.end_offsets("image-urls").unwrap(), log.end_offsets("image-urls").unwrap());
    assert_eq!(back.committed("g", "image-urls", 2), 1);
    let strip = |mut v: Vec<Record>| {
        v.iter_mut().for_each(|r| r.append_time = 0);
        v
    };
    assert_eq!(strip(drain(&back, "fresh", "image-urls", 8)), strip(drain(&log, "fresh", "image-urls", 8)));
    assert_eq!(back.poll("x", "other", 1).unwrap()[0].key, Some(Vec::new()));
}

#[test]
fn truncated_partition_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = MessageLog::new();
    log.create_topic("t", 1).unwrap();
    log.produce("t", Some(b"key"), b"payload").unwrap();
    log.save(dir.path()).unwrap();
    let f = dir.path().join("t").join("0.log");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 2]).unwrap();
    assert!(MessageLog::load(dir.path()).is_err());
}

proptest! {
    /// Two groups replaying from zero with different batch sizes see the
    /// same per-partition sequences, and keyed records sit in their hash
    /// partition.
    #[test]
    fn groups_replay_identically(
        records in proptest::collection::vec((proptest::option::of(0u8..20), any::<u16>()), 1..300),
        partitions in 1u32..6,
        batch_a in 1usize..50,
        batch_b in 1usize..50,
    ) {
        let log = MessageLog::new();
        log.create_topic("t", partitions).unwrap();
        for (key, payload) in &records {
            let key = key.map(|k| format!("key-{k}"));
            let (p, _) = log.produce("t", key.as_deref().map(str::as_bytes), &payload.to_le_bytes()).unwrap();
            if let Some(k) = &key {
                prop_assert_eq!(p as u64, stable_hash(k.as_bytes()) % partitions as u64);
            }
        }
        let a = drain(&log, "a", "t", batch_a);
        let b = drain(&log, "b", "t", batch_b);
        prop_assert_eq!(a.len(), records.len());
        prop_assert_eq!(per_partition(&a, partitions), per_partition(&b, partitions));
        for seq in per_partition(&a, partitions) {
            prop_assert!(seq.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
}
