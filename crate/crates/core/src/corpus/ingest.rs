use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ListeningEvent, Session, SessionSequence, TrackCatalog};
use crate::error::{Error, Result};

/// Inactivity gap (seconds) that closes a session.
pub const DEFAULT_SESSION_GAP: i64 = 1800;

/// Sessionised users plus the track catalog they index into.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<SessionSequence>,
    pub catalog: TrackCatalog,
    /// Users dropped for having fewer than two sessions.
    pub dropped_users: usize,
}

/// Parses `user<TAB>track<TAB>timestamp` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_events(path: &Path, text: &str) -> Result<Vec<ListeningEvent>> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (user_id, track_id) = (fields[0].trim(), fields[1].trim());
        if user_id.is_empty() || track_id.is_empty() {
            return Err(parse_err("empty user or track id".into()));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", fields[2])))?;
        if timestamp < 0 {
            return Err(parse_err(format!("negative timestamp {timestamp}")));
        }
        events.push(ListeningEvent {
            user_id: user_id.to_string(),
            track_id: track_id.to_string(),
            timestamp,
        });
    }
    Ok(events)
}

pub fn ingest_events(path: &Path, session_gap: i64, k: usize) -> Result<Corpus> {
    ingest_events_with_catalog(path, session_gap, k, &[])
}

/// Like [`ingest_events`], with extra catalog ids (e.g. tracks that only
/// have audio embeddings) merged into the catalog.
pub fn ingest_events_with_catalog(
    path: &Path,
    session_gap: i64,
    k: usize,
    extra_track_ids: &[String],
) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let events = parse_events(path, &text)?;
    sessionize(events, session_gap, k, extra_track_ids)
}

/// Groups events into per-user sessions: a session closes after more than
/// `session_gap` seconds of inactivity and keeps its first `k` distinct
/// tracks. Users with fewer than two sessions are dropped.
pub fn sessionize(
    events: Vec<ListeningEvent>,
    session_gap: i64,
    k: usize,
    extra_track_ids: &[String],
) -> Result<Corpus> {
    if session_gap <= 0 {
        return Err(Error::InvalidArgument(format!(
            "session gap must be positive, got {session_gap}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("session size K must be ≥ 1".into()));
    }
    let mut catalog = TrackCatalog::from_ids(
        events
            .iter()
            .map(|e| e.track_id.clone())
            .chain(extra_track_ids.iter().cloned()),
    );
    let mut listens = vec![0u64; catalog.len()];

    let mut by_user: BTreeMap<String, Vec<(i64, usize)>> = BTreeMap::new();
    for e in &events {
        let track = catalog.index_of(&e.track_id).expect("catalog built from events");
        listens[track] += 1;
        by_user
            .entry(e.user_id.clone())
            .or_default()
            .push((e.timestamp, track));
    }
    catalog.set_popularity(listens);

    let mut sequences = Vec::new();
    let mut dropped = 0;
    for (user_id, mut user_events) in by_user {
        // track indices follow sorted ids, so this order is independent of
        // the input line order
        user_events.sort_unstable();
        let mut sessions: Vec<Session> = Vec::new();
        let mut last_time: Option<i64> = None;
        for (t, track) in user_events {
            let new_session = match last_time {
                None => true,
                Some(prev) => t - prev > session_gap,
            };
            if new_session {
                sessions.push(Session::new(t, Vec::new()));
            }
            let current = sessions.last_mut().expect("session opened above");
            if current.tracks.len() < k && !current.tracks.contains(&track) {
                current.tracks.push(track);
            }
            last_time = Some(t);
        }
        if sessions.len() < 2 {
            dropped += 1;
            continue;
        }
        sequences.push(SessionSequence {
            user_index: sequences.len(),
            user_id,
            sessions,
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} users with fewer than 2 sessions");
    }
    Ok(Corpus {
        sequences,
        catalog,
        dropped_users: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: &str, t: &str, ts: i64) -> ListeningEvent {
        ListeningEvent {
            user_id: u.into(),
            track_id: t.into(),
            timestamp: ts,
        }
    }

    #[test]
    fn gap_boundary_splits_sessions() {
        let events = vec![ev("u", "a", 0), ev("u", "b", 100), ev("u", "c", 5000)];
        let corpus = sessionize(events, 1800, 10, &[]).unwrap();
        let s = &corpus.sequences[0].sessions;
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].start_time, 0);
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[1].start_time, 5000);
    }

    #[test]
    fn gap_equal_to_threshold_stays_in_session() {
        let events = vec![ev("u", "a", 0), ev("u", "b", 1800), ev("u", "c", 3601)];
        let corpus = sessionize(events, 1800, 10, &[]).unwrap();
        assert_eq!(corpus.sequences[0].sessions.len(), 2);
    }

    #[test]
    fn dedup_then_truncate() {
        let events = vec![
            ev("u", "a", 0),
            ev("u", "b", 1),
            ev("u", "a", 2),
            ev("u", "c", 3),
            ev("u", "d", 4),
            ev("u", "a", 10_000),
        ];
        let corpus = sessionize(events, 1800, 3, &[]).unwrap();
        let cat = &corpus.catalog;
        let ids: Vec<&str> = corpus.sequences[0].sessions[0]
            .tracks
            .iter()
            .map(|&t| cat.id(t))
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn single_session_users_are_dropped() {
        let events = vec![ev("solo", "a", 0), ev("u", "a", 0), ev("u", "b", 9000)];
        let corpus = sessionize(events, 1800, 10, &[]).unwrap();
        assert_eq!(corpus.dropped_users, 1);
        assert_eq!(corpus.sequences.len(), 1);
        assert_eq!(corpus.sequences[0].user_id, "u");
        assert_eq!(corpus.sequences[0].user_index, 0);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "# header\nu\ta\t1\nu\tb\n";
        match parse_events(Path::new("ev.tsv"), text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_events(Path::new("ev.tsv"), "u\ta\tsoon\n").is_err());
        assert!(parse_events(Path::new("ev.tsv"), "u\ta\t-5\n").is_err());
    }

    #[test]
    fn extra_ids_join_catalog() {
        let events = vec![ev("u", "b", 0), ev("u", "c", 9000)];
        let corpus = sessionize(events, 1800, 10, &["a".to_string()]).unwrap();
        assert_eq!(corpus.catalog.ids(), ["a", "b", "c"]);
        assert_eq!(corpus.catalog.popularity(), [0, 1, 1]);
    }
}
