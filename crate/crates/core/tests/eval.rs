mod common;

use common::fixtures;
use eaef_core::harness::{
    emit_table, load_reference_tables, percent_change, run_eval, EvalConfig, EvalReport,
    PercentChange, TableFormat, TABLE_COLUMNS,
};
use eaef_core::LexiconToggles;

fn config() -> EvalConfig {
    EvalConfig::load(fixtures().join("eval_config.json")).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = run_eval(&config()).unwrap();
    let b = run_eval(&config()).unwrap();
    for f in [TableFormat::Json, TableFormat::Csv, TableFormat::Markdown] {
        assert_eq!(emit_table(&a, f).unwrap(), emit_table(&b, f).unwrap());
    }
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.meta.questions, 20);
    assert_eq!(a.rows.len(), 2);
    assert!(a.rows.iter().all(|r| r.failed == 0 && r.scored == 20));
}

#[test]
fn lambda_zero_matches_lexicons_off() {
    let mut zero = config();
    zero.lambda = 0.0;
    let mut off = config();
    off.lexicon_toggles = LexiconToggles::none();
    let a = run_eval(&zero).unwrap();
    let b = run_eval(&off).unwrap();
    assert_ne!(a.meta.config_hash, b.meta.config_hash);
    assert_eq!(a.content_hash(), b.content_hash());
    // and both collapse the two configurations onto each other
    for d in &a.deltas {
        for c in d.columns() {
            assert_eq!(c.exact(), Some(0.0));
        }
    }
}

#[test]
fn averages_recompute_from_responses() {
    let report = run_eval(&config()).unwrap();
    for row in &report.rows {
        let scores: Vec<_> = row.responses.iter().filter_map(|r| r.scores).collect();
        let n = scores.len() as f64;
        let mean = |f: fn(&eaef_core::QualityScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        let s = row.scores.unwrap();
        assert_eq!(s.empathy, mean(|q| q.empathy));
        assert_eq!(s.coherence, mean(|q| q.coherence));
        assert_eq!(s.informativeness, mean(|q| q.informativeness));
        assert_eq!(s.fluency, mean(|q| q.fluency));
        assert_eq!(
            s.overall,
            (s.empathy + s.coherence + s.informativeness + s.fluency) / 4.0
        );
        // mock responses name the top retrieved id
        for r in &row.responses {
            let top = r.retrieved_ids.first().map_or("NONE", String::as_str);
            assert!(r.text.as_deref().unwrap().starts_with(&format!("MOCK|top={top}|q=")));
        }
    }
    let d = &report.deltas[0];
    assert_eq!(d.baseline, "baseline");
    assert_eq!(d.comparison, "enriched");
    let (b, e) = (report.rows[0].scores.unwrap(), report.rows[1].scores.unwrap());
    assert_eq!(d.empathy, percent_change(b.empathy, e.empathy));
}

#[test]
fn csv_parses_back() {
    let report = run_eval(&config()).unwrap();
    let text = emit_table(&report, TableFormat::Csv).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), TABLE_COLUMNS);
    let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), report.rows.len() + report.deltas.len());
    for (rec, row) in records.iter().zip(&report.rows) {
        assert_eq!(&rec[0], row.label());
        let cols = row.scores.unwrap().columns();
        for (i, v) in cols.iter().enumerate() {
            assert_eq!(rec[i + 1].parse::<f64>().unwrap(), *v);
        }
        assert_eq!(rec[6].parse::<usize>().unwrap(), row.failed);
    }
    let delta_rec = &records[report.rows.len()];
    for (i, c) in report.deltas[0].columns().iter().enumerate() {
        let cell = &delta_rec[i + 1];
        assert!(cell.starts_with('+') || cell.starts_with('-'), "{cell}");
        let parsed: f64 = cell.trim_end_matches('%').parse().unwrap();
        assert_eq!(Some(parsed), c.exact());
    }
}

#[test]
fn json_parses_back() {
    let report = run_eval(&config()).unwrap();
    let text = emit_table(&report, TableFormat::Json).unwrap();
    let back: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

#[test]
fn lexicons_off_against_itself_has_zero_deltas() {
    let mut off = config();
    off.lexicon_toggles = LexiconToggles::none();
    let report = run_eval(&off).unwrap();
    for d in &report.deltas {
        assert!(d.columns().iter().all(|c| c.exact() == Some(0.0)));
    }
}

#[test]
fn backend_failures_are_counted() {
    let mut cfg = config();
    cfg.models = serde_json::from_str(
        r#"[{"name": "down", "kind": "remote", "endpoint": "http://127.0.0.1:9", "model": "m", "timeout_secs": 1, "max_retries": 0}]"#,
    )
    .unwrap();
    let report = run_eval(&cfg).unwrap();
    for row in &report.rows {
        assert_eq!(row.failed, 20);
        assert!(row.scores.is_none());
    }
    assert_eq!(report.deltas[0].empathy, PercentChange::Undefined);
    let md = emit_table(&report, TableFormat::Markdown).unwrap();
    assert!(md.contains("| 20 |"));
}

#[test]
fn reference_delta_rows_are_consistent() {
    let t = load_reference_tables();
    assert_eq!(t.lexicon_deltas[0].model, "Flan-T5");
    assert_eq!(t.lexicon_deltas[2].informativeness, 400);
    for pair in t.lexicon_deltas.chunks(2) {
        assert_eq!(pair[0].empathy, pair[1].empathy);
        assert_eq!(pair[0].fluency, pair[1].fluency);
    }
}

