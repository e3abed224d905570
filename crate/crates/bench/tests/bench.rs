use std::process::Command;

use ckks_bench::{
    run_mechanism_bench, run_sweep, write_report, Format, Grid, Mechanism, MechanismRow, Metadata, SweepOp, SweepRow,
    SweepSpec,
};
use ckks_core::ckks::CkksParams;

fn small(op: SweepOp, grid: Grid) -> SweepSpec {
    SweepSpec { grid, reps: 3, warmup: 1, seed: 9, ..SweepSpec::new(op, 256, 8, 2, 30) }
}

fn ntt_grid() -> Grid {
    Grid {
        shapes: vec![(8, 32), (16, 16), (32, 8), (16, 32)],
        g1: vec![2, 8],
        g2: vec![4],
        b_k1: vec![4],
        ot: vec![false, true],
        ..Grid::default()
    }
}

fn csv_text<T: serde::Serialize>(headers: &[&str], rows: &[T]) -> String {
    let meta = Metadata::new("test", 256, 8, 2, 30, 0, 0xabc);
    let mut buf = Vec::new();
    write_report(&mut buf, Format::Csv, &meta, headers, rows).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn empty_grid_gives_header_only() {
    let report = run_sweep(&small(SweepOp::Ntt, Grid::default())).unwrap();
    assert!(report.rows.is_empty());
    let text = csv_text(&SweepRow::HEADERS, &report.rows);
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body, vec![SweepRow::HEADERS.join(",")]);
    assert!(text.contains("# basis_hash: 0000000000000abc"));
}

#[test]
fn ntt_sweep_rows_follow_the_grid() {
    for op in [SweepOp::Ntt, SweepOp::Intt] {
        let spec = small(op, ntt_grid());
        let report = run_sweep(&spec).unwrap();
        assert_eq!(spec.levels(), vec![8, 4]);
        assert_eq!(report.rows.len(), 2 * spec.points().len());
        for (row, c) in report.rows.iter().zip(spec.points().iter().cycle()) {
            assert_eq!(row.params, c.describe());
        }
        for row in &report.rows {
            if row.params.starts_with("n1=16 n2=32") {
                assert!(!row.valid && row.reason.contains("!= N"), "{row:?}");
                assert_eq!(row.median_ns, None);
            } else {
                assert!(row.valid, "{row:?}");
                assert_eq!(row.bit_exact, Some(true));
                assert!(row.median_ns.unwrap() >= row.min_ns.unwrap());
            }
        }
        assert_eq!(report.skipped(), 2 * 4);
        for level in [8, 4] {
            let mut ranks: Vec<usize> = report.rows.iter().filter(|r| r.level == level).filter_map(|r| r.rank).collect();
            ranks.sort_unstable();
            assert_eq!(ranks, (1..=12).collect::<Vec<_>>());
        }
    }
}

#[test]
fn bconv_sweep_is_bit_exact_across_tilings() {
    let grid = Grid { l_b: vec![1, 2, 4], l_t: vec![1, 3], n_t: vec![1, 2, 4, 8], block: Some(256), ..Grid::default() };
    let report = run_sweep(&small(SweepOp::Bconv, grid)).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 2 * 4);
    assert!(report.rows.iter().all(|r| r.valid && r.bit_exact == Some(true)), "{:?}", report.rows);
}

#[test]
fn unusable_levels_are_skipped_with_a_reason() {
    let mut grid = Grid::bconv_default();
    grid.levels = Some(vec![2, 5, 10]);
    let report = run_sweep(&small(SweepOp::Bconv, grid)).unwrap();
    assert_eq!(report.skipped(), report.rows.len());
    assert!(report.rows.iter().all(|r| !r.reason.is_empty()));
}

#[test]
fn csv_headers_match_row_fields() {
    let row = run_mechanism_bench(CkksParams::new(64, 8, 2, 30), Mechanism::HAdd, 8, 1, 0, 1);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&row).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(text.lines().next().unwrap(), MechanismRow::HEADERS.join(","));
    let report = run_sweep(&small(SweepOp::Ntt, ntt_grid())).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&report.rows[0]).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(text.lines().next().unwrap(), SweepRow::HEADERS.join(","));
}

#[test]
fn mechanism_counter_profiles() {
    let params = || CkksParams::new(64, 8, 2, 30);
    let hadd = run_mechanism_bench(params(), Mechanism::HAdd, 8, 3, 1, 1);
    assert!(hadd.error.is_empty(), "{}", hadd.error);
    let c = hadd.counters().unwrap();
    assert_eq!((c.ntt, c.intt, c.bconv), (0, 0, 0));
    assert_eq!(hadd.reps, 3);
    assert!(hadd.p99_ns.unwrap() >= hadd.median_ns.unwrap());

    let hmult = run_mechanism_bench(params(), Mechanism::HMult, 8, 2, 0, 1);
    let c = hmult.counters().unwrap();
    assert_eq!(c.key_mult, 4, "one accumulation per digit at L = 8, alpha = 2");
    assert_eq!((c.mod_up, c.merged_mod_down, c.mod_down, c.rescale), (1, 1, 0, 0));

    let hrot = run_mechanism_bench(params(), Mechanism::HRot, 6, 2, 0, 1);
    let c = hrot.counters().unwrap();
    assert_eq!((c.key_mult, c.mod_up, c.mod_down), (3, 1, 1));

    for m in Mechanism::ALL {
        let row = run_mechanism_bench(params(), m, 4, 1, 0, 2);
        assert!(row.error.is_empty(), "{}: {}", m.name(), row.error);
    }
}

#[test]
fn zero_reps_leave_empty_stats() {
    let row = run_mechanism_bench(CkksParams::new(64, 8, 2, 30), Mechanism::HMult, 8, 0, 2, 1);
    assert!(row.error.is_empty());
    assert_eq!((row.median_ns, row.min_ns, row.p99_ns), (None, None, None));
    assert!(row.counters().is_none());
}

#[test]
fn setup_failures_are_reported() {
    let row = run_mechanism_bench(CkksParams::new(48, 8, 2, 30), Mechanism::HAdd, 8, 1, 0, 1);
    assert!(!row.error.is_empty());
    let row = run_mechanism_bench(CkksParams::new(64, 8, 2, 30), Mechanism::HAdd, 7, 1, 0, 1);
    assert!(!row.error.is_empty());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ckks-bench")).args(args).output().unwrap()
}

#[test]
fn cli_reports_and_strict_exit_code() {
    let dir = std::env::temp_dir().join(format!("ckks-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let grid = dir.join("grid.json");
    std::fs::write(&grid, r#"{"shapes": [[16, 16], [16, 32]], "g1": [4], "g2": [4], "b_k1": [4], "ot": [false]}"#).unwrap();
    let base = ["--n", "256", "--l", "8", "--alpha", "2", "--delta-bits", "30", "--reps", "1"];
    let grid_arg = grid.to_str().unwrap();

    let mut args = vec!["--op", "ntt", "--grid", grid_arg, "--format", "json"];
    args.extend(base);
    let out = cli(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
    assert_eq!(doc["metadata"]["n"], 256);

    args.push("--strict");
    assert_eq!(cli(&args).status.code(), Some(2));

    let out_path = dir.join("hadd.csv");
    let mut args = vec!["--op", "hadd", "--out", out_path.to_str().unwrap(), "--strict", "--levels", "8,4"];
    args.extend(base);
    let out = cli(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("hadd,")).count(), 2);
    assert!(text.starts_with("# version: "));

    let mut args = vec!["--op", "hadd", "--strict", "--levels", "9"];
    args.extend(base);
    assert_eq!(cli(&args).status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}
